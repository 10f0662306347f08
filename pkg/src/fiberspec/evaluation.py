"""Pixel- and object-level scoring, reports and static SVG figures."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .exceptions import (EmptyObject, LabelOutOfRange, LengthMismatch, UnknownObject,
                         ValidationError)

NON_TARGET = "non-target"


@dataclass
class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class."""

    counts: np.ndarray
    labels: tuple

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def defined(self) -> bool:
        return self.total > 0

    @property
    def accuracy(self) -> float:
        """Trace over total; NaN for an empty matrix (check :attr:`defined`)."""
        if not self.defined:
            return float("nan")
        return float(np.trace(self.counts) / self.total)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["true\\pred", *self.labels])
        for label, row in zip(self.labels, self.counts):
            writer.writerow([label, *row.tolist()])
        return buf.getvalue()

    def to_svg(self, title: str = "") -> str:
        return _confusion_svg(self, title)


def confusion(y_true, y_pred, n_classes: int, labels=None) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.int64).ravel()
    if y_true.size != y_pred.size:
        raise LengthMismatch(f"{y_true.size} true labels vs {y_pred.size} predictions")
    for arr in (y_true, y_pred):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise LabelOutOfRange(f"labels must lie in [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    labels = tuple(labels) if labels is not None else tuple(str(i) for i in range(n_classes))
    return ConfusionMatrix(counts, labels)


@dataclass
class ObjectPrediction:
    object_id: object
    pixel_labels: np.ndarray
    summed_probs: np.ndarray | None
    final_label: int
    margin: int


def majority_vote(pixel_labels, probs=None, n_classes: int | None = None,
                  object_id=None) -> ObjectPrediction:
    """Modal pixel label of one object.

    Ties are broken by the larger summed probability among the tied labels,
    then by the lower class index. ``margin`` is the vote lead over the
    runner-up (0 for a tie).
    """
    labels = np.asarray(pixel_labels, dtype=np.int64).ravel()
    if labels.size == 0:
        raise EmptyObject(f"object {object_id!r} has no pixels")
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if probs is None else np.asarray(probs).shape[1]
    votes = np.bincount(labels, minlength=n_classes)
    summed = None if probs is None else np.asarray(probs, dtype=np.float64).sum(axis=0)
    top = votes.max()
    tied = np.flatnonzero(votes == top)
    if tied.size > 1 and summed is not None:
        best = summed[tied].max()
        tied = tied[summed[tied] == best]
    final = int(tied[0])
    runner_up = np.sort(votes)[-2] if votes.size > 1 else 0
    return ObjectPrediction(object_id, labels, summed, final, int(top - runner_up))


def group_indices(object_ids) -> dict:
    groups: dict = {}
    for i, oid in enumerate(object_ids):
        groups.setdefault(oid, []).append(i)
    return groups


@dataclass
class ClassRow:
    label: str
    n_pixels: int
    n_objects: int
    pixel_accuracy: float
    object_accuracy: float


@dataclass
class Histogram:
    edges: np.ndarray
    counts: dict
    threshold: float | None = None

    @property
    def total(self) -> int:
        return int(sum(c.sum() for c in self.counts.values()))

    def occupied(self, group) -> np.ndarray:
        return np.flatnonzero(self.counts[group])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        groups = list(self.counts)
        writer.writerow(["bin_lo", "bin_hi", *groups])
        for i in range(len(self.edges) - 1):
            writer.writerow([repr(float(self.edges[i])), repr(float(self.edges[i + 1])),
                             *(int(self.counts[g][i]) for g in groups)])
        return buf.getvalue()

    def to_svg(self, title: str = "Reconstruction error") -> str:
        return _histogram_svg(self, title)


def re_histogram(groups: dict, threshold: float | None = None, bins: int = 50) -> Histogram:
    """Fixed-width bins over ``[0, 1.05 * max]`` shared by all groups."""
    if bins < 1:
        raise ValidationError("bins must be >= 1")
    arrays = {}
    for name, values in groups.items():
        v = np.asarray(values, dtype=np.float64).ravel()
        if v.size == 0:
            raise ValidationError(f"group {name!r} is empty")
        arrays[name] = v
    peak = max(float(v.max()) for v in arrays.values())
    if threshold is not None:
        peak = max(peak, float(threshold))
    upper = 1.05 * peak if peak > 0 else 1.0
    edges = np.linspace(0.0, upper, bins + 1)
    counts = {name: np.histogram(v, bins=edges)[0].astype(np.int64) for name, v in arrays.items()}
    return Histogram(edges, counts, threshold)


@dataclass
class EvaluationReport:
    kind: str
    labels: tuple
    pixel_accuracy: float
    object_accuracy: float
    rows: list[ClassRow]
    n_pixels: int
    n_objects: int
    pixel_matrix: ConfusionMatrix | None = None
    object_matrix: ConfusionMatrix | None = None
    objects: list[ObjectPrediction] = field(default_factory=list)
    threshold: float | None = None
    target_label: str | None = None
    histogram: Histogram | None = None

    def row(self, label) -> ClassRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def table_text(self) -> str:
        """Per-class accuracies in percent: a header row, then px and obj rows."""
        width = max([6] + [len(r.label) for r in self.rows]) + 2
        head = "    " + "".join(r.label.rjust(width) for r in self.rows)
        px = "px  " + "".join(f"{100 * r.pixel_accuracy:.2f}".rjust(width) for r in self.rows)
        obj = "obj " + "".join(f"{100 * r.object_accuracy:.2f}".rjust(width) for r in self.rows)
        return "\n".join([head, px, obj]) + "\n"

    def table_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["label", "n_pixels", "n_objects", "pixel_accuracy", "object_accuracy"])
        for r in self.rows:
            writer.writerow([r.label, r.n_pixels, r.n_objects, repr(r.pixel_accuracy),
                             repr(r.object_accuracy)])
        return buf.getvalue()

    def summary_text(self) -> str:
        lines = [f"report: {self.kind}",
                 f"pixels: {self.n_pixels}",
                 f"objects: {self.n_objects}",
                 f"pixel accuracy: {100 * self.pixel_accuracy:.2f}%",
                 f"object accuracy: {100 * self.object_accuracy:.2f}%"]
        if self.kind == "detection":
            lines.insert(1, f"target: {self.target_label}")
            lines.insert(2, f"threshold: {self.threshold!r}")
        return "\n".join(lines) + "\n\n" + self.table_text()

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {"summary.txt": self.summary_text(), "per_class.csv": self.table_csv()}
        if self.pixel_matrix is not None:
            files["confusion_pixel.csv"] = self.pixel_matrix.to_csv()
            files["confusion_object.csv"] = self.object_matrix.to_csv()
            files["confusion_pixel.svg"] = self.pixel_matrix.to_svg("Pixel-based")
            files["confusion_object.svg"] = self.object_matrix.to_svg("Object-based")
        if self.histogram is not None:
            files["re_histogram.csv"] = self.histogram.to_csv()
            files["re_histogram.svg"] = self.histogram.to_svg()
        written = []
        for name, text in files.items():
            path = out / name
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            written.append(path)
        return written


def _ordered_labels(true_labels, labels):
    if labels is None:
        return tuple(sorted(set(true_labels)))
    return tuple(labels)


def accuracy_report(object_ids, true_labels, pred_labels, probs=None, labels=None,
                    known_objects=None) -> EvaluationReport:
    """Pixel and majority-vote object accuracies with confusion matrices.

    ``true_labels``/``pred_labels`` are label names; ``labels`` fixes their
    order (and the meaning of the ``probs`` columns). Every object must carry
    a single true label.
    """
    object_ids, true_labels, pred_labels = list(object_ids), list(true_labels), list(pred_labels)
    if not len(object_ids) == len(true_labels) == len(pred_labels):
        raise LengthMismatch("object ids, true and predicted labels differ in length")
    labels = _ordered_labels(list(true_labels) + list(pred_labels), labels)
    index = {lab: i for i, lab in enumerate(labels)}
    try:
        t = np.array([index[v] for v in true_labels], dtype=np.int64)
        p = np.array([index[v] for v in pred_labels], dtype=np.int64)
    except KeyError as exc:
        raise LabelOutOfRange(f"label {exc.args[0]!r} not in label set") from None
    if probs is not None:
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape != (len(t), len(labels)):
            raise LengthMismatch(f"probability table has shape {probs.shape}")
    n = len(labels)
    groups = group_indices(object_ids)
    if known_objects is not None:
        unknown = [oid for oid in groups if oid not in known_objects]
        if unknown:
            raise UnknownObject(f"objects not in manifest: {unknown[:5]}")
    objects, obj_true = [], []
    for oid, idx in groups.items():
        truth = set(t[idx].tolist())
        if len(truth) != 1:
            raise ValidationError(f"object {oid!r} mixes true labels")
        objects.append(majority_vote(p[idx], None if probs is None else probs[idx], n, oid))
        obj_true.append(truth.pop())
    obj_true = np.array(obj_true, dtype=np.int64)
    obj_pred = np.array([o.final_label for o in objects], dtype=np.int64)
    pix = confusion(t, p, n, labels)
    objm = confusion(obj_true, obj_pred, n, labels)
    rows = []
    for k, lab in enumerate(labels):
        pm, om = t == k, obj_true == k
        if not pm.any():
            continue
        rows.append(ClassRow(lab, int(pm.sum()), int(om.sum()),
                             float(np.mean(p[pm] == k)), float(np.mean(obj_pred[om] == k))))
    return EvaluationReport("classification", labels, pix.accuracy, objm.accuracy, rows,
                            len(t), len(objects), pix, objm, objects)


def detection_report(object_ids, true_labels, errors=None, threshold: float | None = None,
                     target_label: str = "C1", target_labels=None, pixel_target=None,
                     labels=None, bins: int = 50, groups=None) -> EvaluationReport:
    """Per-class accuracies of a one-class detector.

    A pixel is predicted target when ``error <= threshold`` (or from
    ``pixel_target`` if given); an object is target when a strict majority
    of its pixels is. It is correct when that matches whether its label is in
    ``target_labels`` (default: just ``target_label``). Rows of the report
    are the distinct ``groups`` (default: the true labels), e.g. to separate
    the same textile measured in different data sets.
    """
    object_ids, true_labels = list(object_ids), list(true_labels)
    if pixel_target is None:
        if errors is None or threshold is None:
            raise ValidationError("need errors and a threshold, or pixel decisions")
        pixel_target = np.asarray(errors, dtype=np.float64) <= threshold
    pixel_target = np.asarray(pixel_target, dtype=bool)
    if not len(object_ids) == len(true_labels) == pixel_target.size:
        raise LengthMismatch("object ids, labels and decisions differ in length")
    targets = {target_label} if target_labels is None else set(target_labels)
    truth = np.array([lab in targets for lab in true_labels], dtype=bool)
    px_ok = pixel_target == truth
    groups = list(true_labels) if groups is None else list(groups)
    if len(groups) != len(true_labels):
        raise LengthMismatch("one group name per pixel is required")
    obj_label, obj_ok = {}, {}
    members = group_indices(object_ids)
    for oid, idx in members.items():
        if len({true_labels[i] for i in idx}) != 1 or len({groups[i] for i in idx}) != 1:
            raise ValidationError(f"object {oid!r} mixes true labels")
        decision = int(pixel_target[idx].sum()) * 2 > len(idx)
        obj_label[oid] = groups[idx[0]]
        obj_ok[oid] = decision == truth[idx[0]]
    order = _ordered_labels(groups, labels)
    lab_arr = np.array(groups, dtype=object)
    rows = []
    for lab in order:
        pm = lab_arr == lab
        if not pm.any():
            continue
        objs = [oid for oid, l in obj_label.items() if l == lab]
        rows.append(ClassRow(lab, int(pm.sum()), len(objs), float(px_ok[pm].mean()),
                             float(np.mean([obj_ok[o] for o in objs]))))
    hist = None
    if errors is not None:
        errors = np.asarray(errors, dtype=np.float64)
        hist = re_histogram({lab: errors[lab_arr == lab] for lab in order if (lab_arr == lab).any()},
                            threshold, bins)
    return EvaluationReport(
        "detection", order, float(px_ok.mean()) if px_ok.size else float("nan"),
        float(np.mean(list(obj_ok.values()))) if obj_ok else float("nan"), rows,
        int(px_ok.size), len(members), threshold=threshold, target_label=target_label,
        histogram=hist)


# ---------------------------------------------------------------------------
# SVG rendering
# ---------------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
            "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939")


def _svg(width: int, height: int, body: list[str]) -> str:
    return (f'<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">\n'
            + "\n".join(body) + "\n</svg>\n")


def _confusion_svg(cm: ConfusionMatrix, title: str) -> str:
    n = cm.n_classes
    cell, left, top = 36, 90, 40
    width, height = left + n * cell + 20, top + n * cell + 90
    body = [f'<rect width="{width}" height="{height}" fill="white"/>',
            f'<text x="{left}" y="20" font-size="14">{escape(title)}</text>']
    row_sums = cm.counts.sum(axis=1)
    for i in range(n):
        for j in range(n):
            frac = cm.counts[i, j] / row_sums[i] if row_sums[i] else 0.0
            shade = int(round(255 * (1 - frac)))
            x, y = left + j * cell, top + i * cell
            body.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                        f'fill="rgb({shade},{shade},255)" stroke="#999"/>')
            colour = "white" if frac > 0.5 else "black"
            body.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" text-anchor="middle" '
                        f'fill="{colour}">{cm.counts[i, j]}</text>')
        body.append(f'<text x="{left - 6}" y="{top + i * cell + cell / 2 + 4}" '
                    f'text-anchor="end">{escape(str(cm.labels[i]))}</text>')
    for j in range(n):
        x, y = left + j * cell + cell / 2, top + n * cell + 10
        body.append(f'<text x="{x}" y="{y}" text-anchor="end" '
                    f'transform="rotate(-60 {x} {y})">{escape(str(cm.labels[j]))}</text>')
    body.append(f'<text x="{left + n * cell / 2}" y="{height - 6}" text-anchor="middle">predicted</text>')
    return _svg(width, height, body)


def _histogram_svg(hist: Histogram, title: str) -> str:
    width, height = 640, 360
    left, right, top, bottom = 60, 150, 30, 40
    pw, ph = width - left - right, height - top - bottom
    edges = hist.edges
    span = edges[-1] - edges[0]
    peak = max(int(c.max()) for c in hist.counts.values()) or 1
    body = [f'<rect width="{width}" height="{height}" fill="white"/>',
            f'<text x="{left}" y="18" font-size="14">{escape(title)}</text>',
            f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
            f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for k, (name, counts) in enumerate(hist.counts.items()):
        colour = _PALETTE[k % len(_PALETTE)]
        for i, c in enumerate(counts):
            if not c:
                continue
            x0 = left + pw * (edges[i] - edges[0]) / span
            x1 = left + pw * (edges[i + 1] - edges[0]) / span
            h = ph * c / peak
            body.append(f'<rect x="{x0:.2f}" y="{top + ph - h:.2f}" width="{x1 - x0:.2f}" '
                        f'height="{h:.2f}" fill="{colour}" fill-opacity="0.5"/>')
        ly = top + 14 * k + 10
        body.append(f'<rect x="{width - right + 10}" y="{ly - 8}" width="10" height="10" '
                    f'fill="{colour}" fill-opacity="0.5"/>')
        body.append(f'<text x="{width - right + 25}" y="{ly + 1}">{escape(str(name))}</text>')
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        x = left + pw * frac
        value = edges[0] + span * frac
        body.append(f'<text x="{x:.2f}" y="{top + ph + 16}" text-anchor="middle">{value:.3g}</text>')
    body.append(f'<text x="{left - 6}" y="{top + 4}" text-anchor="end">{peak}</text>')
    body.append(f'<text x="{left + pw / 2}" y="{height - 6}" text-anchor="middle">RE</text>')
    if hist.threshold is not None:
        x = left + pw * (hist.threshold - edges[0]) / span
        body.append(f'<line x1="{x:.2f}" y1="{top}" x2="{x:.2f}" y2="{top + ph}" '
                    f'stroke="black" stroke-dasharray="4,3"/>')
        body.append(f'<text x="{x + 3:.2f}" y="{top + 10}">threshold</text>')
    return _svg(width, height, body)
