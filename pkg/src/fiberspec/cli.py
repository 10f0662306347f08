"""Command-line interface.

Subcommands: ``synth``, ``preprocess``, ``split``, ``train-classifier``,
``train-autoencoder``, ``classify``, ``detect`` and ``evaluate``. Exit
status is 0 on success, 1 on usage or validation errors and 2 on I/O errors.
"""

from __future__ import annotations

import argparse
import errno
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import nn
from .config import RunConfig, load_config
from .evaluation import NON_TARGET, accuracy_report, detection_report
from .exceptions import (BadUtf8, ChecksumMismatch, FiberSpecError, HeaderMismatch,
                         TruncatedPayload, UnknownObject, ValidationError)
from .io import (DatasetManifest, ManifestEntry, PredictionTable, ensure_dir,
                 load_manifest_spectra, pixel_indices, read_cube, read_kv, read_manifest,
                 read_predictions, read_spectra_csv, write_kv, write_manifest,
                 write_predictions, write_spectra_csv)
from .models import (TEXTILE_LABELS, fit_threshold, predict_pixels, reconstruction_error,
                     train_autoencoder, train_classifier)
from .spectra import Stage, calibrate_reflectance, dark_mask, pipeline_apply, preprocess_spectra
from .synth import (SyntheticSpec, apply_split, make_benchmark, signature_separation,
                    spec_from_kv, stratified_split)

logger = logging.getLogger("fiberspec")

IO_FORMAT_ERRORS = (HeaderMismatch, TruncatedPayload, BadUtf8, ChecksumMismatch)
EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _require(*paths) -> None:
    """Fail fast, before any work, when an input path is missing."""
    for path in paths:
        if path is not None and not Path(path).exists():
            raise FileNotFoundError(errno.ENOENT, "no such file", str(path))


def _rebase(entries, from_dir: Path, to_dir: Path) -> list[ManifestEntry]:
    """Rewrite manifest sources so they resolve from ``to_dir``."""
    out = []
    for e in entries:
        src = os.path.relpath(Path(from_dir) / e.source, to_dir)
        out.append(ManifestEntry(e.object_id, e.label, e.fiber, e.structure, e.color,
                                 e.split, Path(src).as_posix(), e.row_offset))
    return out


def _label_order(labels) -> list[str]:
    present = set(labels)
    if present <= set(TEXTILE_LABELS):
        return [lab for lab in TEXTILE_LABELS if lab in present]
    return sorted(present)


def _group_order(groups) -> list[str]:
    """Label order, then data-set order for ``"label [split]"`` names."""
    rank = {lab: i for i, lab in enumerate(TEXTILE_LABELS)}

    def key(name):
        label, _, split = name.partition(" [")
        return (rank.get(label, len(rank)), label, split)
    return sorted(set(groups), key=key)


def _load_rows(manifest_path, splits=None, labels=None):
    """Manifest rows (optionally filtered) and their spectra."""
    manifest = read_manifest(manifest_path)
    sub = manifest.select(splits, labels)
    base = Path(manifest_path).parent
    X = load_manifest_spectra(sub, base)
    return sub, X


def _write_run_config(out: Path, command: str, cfg: RunConfig, extra: dict) -> None:
    values = {"command": command, **extra, **cfg.to_kv()}
    write_kv(out / "run_config.txt", values)


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig, out: Path) -> None:
    spec = spec_from_kv(read_kv(args.spec)) if args.spec else SyntheticSpec()
    data = make_benchmark(spec, seed=cfg.seed, source="spectra.csv")
    write_spectra_csv(out / "spectra.csv", data.object_ids, data.labels, data.X)
    write_manifest(out / "manifest.csv", data.manifest)
    sep = signature_separation(spec)
    off = sep[~np.eye(len(sep), dtype=bool)]
    lines = [f"spectra: {len(data)}",
             f"objects: {len(set(data.object_ids))}",
             f"clipped values: {data.clipped}",
             f"min signature cosine distance: {off.min():.6f}"]
    _write_text(out / "synth_report.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))


def _exclusion_rows(entries, X, cfg: RunConfig, keep):
    dark = ~dark_mask(X, cfg.dark_threshold)
    rows = []
    for i in np.flatnonzero(~keep):
        reason = "dark" if dark[i] else "zero_variance"
        e = entries[i]
        rows.append(f"{e.object_id},{e.label},{e.split},{e.row_offset},{reason},"
                    f"{float(X[i].mean())!r}")
    return rows


def cmd_preprocess(args, cfg: RunConfig, out: Path) -> None:
    pcfg = cfg.pipeline()
    if args.manifest:
        manifest, X = _load_rows(args.manifest)
        entries = manifest.entries
    elif args.input and Path(args.input).suffix.lower() == ".hdr":
        _cube_preprocess(args, cfg, out)
        return
    elif args.input:
        table = read_spectra_csv(args.input)
        X = table.X
        entries = [ManifestEntry(oid, lab, source=Path(args.input).name, row_offset=i)
                   for i, (oid, lab) in enumerate(zip(table.object_ids, table.labels))]
    else:
        raise UsageError("preprocess needs --manifest or --input")
    Z, keep = preprocess_spectra(X, pcfg)
    kept = [e for e, k in zip(entries, keep) if k]
    new_entries = [ManifestEntry(e.object_id, e.label, e.fiber, e.structure, e.color, e.split,
                                 "spectra.csv", i) for i, e in enumerate(kept)]
    write_spectra_csv(out / "spectra.csv", [e.object_id for e in kept],
                      [e.label for e in kept], Z)
    write_manifest(out / "manifest.csv", DatasetManifest(new_entries))
    excluded = _exclusion_rows(entries, X, cfg, keep)
    _write_text(out / "excluded.csv",
                "object_id,label,split,row_offset,reason,mean_reflectance\n"
                + "".join(r + "\n" for r in excluded))
    fully = sorted({e.object_id for e, k in zip(entries, keep) if not k}
                   - {e.object_id for e in kept})
    print(f"kept {len(kept)} of {len(entries)} spectra; excluded {len(excluded)}")
    for oid in fully:
        print(f"excluded object {oid}")


def _cube_preprocess(args, cfg: RunConfig, out: Path) -> None:
    _require(args.dark, args.white)
    if bool(args.dark) != bool(args.white):
        raise UsageError("--dark and --white must be given together")
    if args.dark:
        raw = read_cube(args.input, Stage.RAW)
        cube = calibrate_reflectance(raw, read_cube(args.dark).data, read_cube(args.white).data)
    else:
        cube = read_cube(args.input, Stage.REFLECTANCE)
    result = pipeline_apply(cube, cfg.pipeline())
    oid = args.object_id or Path(args.input).stem
    label = args.label or ""
    write_spectra_csv(out / "spectra.csv", [oid] * len(result), [label] * len(result),
                      result.spectra)
    entries = [ManifestEntry(oid, label, source="spectra.csv", row_offset=i)
               for i in range(len(result))]
    write_manifest(out / "manifest.csv", DatasetManifest(entries))
    lines = [f"tiles: {result.n_tiles}", f"kept: {len(result)}",
             f"dropped dark tiles: {result.dropped_dark}",
             f"dropped zero-variance tiles: {result.dropped_zero_variance}",
             f"dark pixels: {result.dark_pixels}"]
    _write_text(out / "preprocess_report.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    if len(result) == 0 and result.dropped_dark:
        print(f"excluded object {oid}")


def cmd_split(args, cfg: RunConfig, out: Path) -> None:
    manifest = read_manifest(args.manifest)
    split = apply_split(manifest, cfg.seed, cfg.split_ratios, args.source_split)
    entries = _rebase(split.entries, Path(args.manifest).parent, out)
    write_manifest(out / "manifest.csv", DatasetManifest(entries))
    counts: dict = {}
    for e in split.entries:
        if e.split in ("train", "val", "test"):
            counts.setdefault(e.label, {"train": 0, "val": 0, "test": 0})[e.split] += 1
    for label in _label_order(counts):
        c = counts[label]
        print(f"{label}: train {c['train']} val {c['val']} test {c['test']}")


def cmd_train_classifier(args, cfg: RunConfig, out: Path) -> None:
    manifest, X = _load_rows(args.manifest, ("train", "val"))
    labels = manifest.label_list()
    split = np.array([e.split for e in manifest.entries])
    if not (split == "train").any() or not (split == "val").any():
        raise ValidationError("manifest has no train/val rows; run `split` first")
    classes = _label_order(labels)
    code = {c: i for i, c in enumerate(classes)}
    y = np.array([code[lab] for lab in labels], dtype=np.int64)
    tr, va = split == "train", split == "val"
    spec = cfg.classifier_spec(X.shape[1], len(classes))
    net, history = train_classifier((X[tr], y[tr]), (X[va], y[va]),
                                    cfg.train_config("classifier"), spec)
    nn.save(out / "classifier.ckpt", net, {"model": "classifier", "label_kind": "str",
                                           "classes": "|".join(classes)})
    _write_text(out / "history.csv", history.to_csv())
    print(f"trained {len(history)} epochs, best epoch {history.best_epoch}, "
          f"val loss {history.val_losses[history.best_epoch]!r}")


def cmd_train_autoencoder(args, cfg: RunConfig, out: Path) -> None:
    manifest = read_manifest(args.manifest)
    base = Path(args.manifest).parent
    target = manifest.select(cfg.detect_split, [cfg.target])
    if len(target) == 0:
        raise ValidationError(f"no {cfg.target!r} rows in split {cfg.detect_split}")
    X = load_manifest_spectra(target, base)
    part = stratified_split(target.label_list(), cfg.split_ratios, cfg.seed)
    net, history = train_autoencoder(X[part.train], X[part.val],
                                     cfg.train_config("autoencoder"),
                                     cfg.autoencoder_spec(X.shape[1]))
    errors = reconstruction_error(net, X[part.train])
    threshold = fit_threshold(errors, cfg.quantile)
    nn.save(out / "autoencoder.ckpt", net, {"model": "autoencoder", "threshold": threshold,
                                            "quantile": cfg.quantile,
                                            "target_label": cfg.target})
    write_kv(out / "threshold.txt", {"threshold": repr(threshold), "quantile": cfg.quantile,
                                     "target": cfg.target, "n_train": len(part.train)})
    _write_text(out / "history.csv", history.to_csv())
    # rows the detector never saw: held-out target rows plus every other detection set
    held = [target.entries[i] for i in part.test]
    others = [e for e in manifest.entries
              if e.split in ("D5", "D6") or (e.split == cfg.detect_split and e.label != cfg.target)]
    write_manifest(out / "eval_manifest.csv", DatasetManifest(_rebase(held + others, base, out)))
    print(f"trained {len(history)} epochs on {len(part.train)} spectra; threshold {threshold!r}")


def _prediction_rows(args):
    """Spectra to score, from a manifest (optionally by split) or a CSV."""
    if args.manifest:
        manifest, X = _load_rows(args.manifest, args.split or None)
        return manifest.object_ids(), manifest.label_list(), X
    if args.input:
        table = read_spectra_csv(args.input)
        return table.object_ids, table.labels, table.X
    raise UsageError("need --manifest or --input")


def cmd_classify(args, cfg: RunConfig, out: Path) -> None:
    net, meta = nn.load(args.model)
    if meta.get("model") != "classifier":
        raise ValidationError(f"{args.model} does not hold a classifier")
    if args.manifest and not args.split:
        args.split = ["test"]
    oids, labels, X = _prediction_rows(args)
    classes = str(meta["classes"]).split("|")
    idx, probs = predict_pixels(net, X)
    table = PredictionTable(oids, pixel_indices(oids), labels, [classes[i] for i in idx],
                            probs=probs)
    write_predictions(out / "predictions.csv", table)
    _write_text(out / "labels.txt", "".join(c + "\n" for c in classes))
    print(f"classified {len(oids)} spectra from {len(set(oids))} objects")


def cmd_detect(args, cfg: RunConfig, out: Path) -> None:
    net, meta = nn.load(args.model)
    if meta.get("model") != "autoencoder":
        raise ValidationError(f"{args.model} does not hold an autoencoder")
    threshold, target = float(meta["threshold"]), str(meta["target_label"])
    oids, labels, X = _prediction_rows(args)
    errors = reconstruction_error(net, X)
    pred = [target if e <= threshold else NON_TARGET for e in errors]
    write_predictions(out / "predictions.csv",
                      PredictionTable(oids, pixel_indices(oids), labels, pred, errors=errors))
    write_kv(out / "threshold.txt", {"threshold": repr(threshold), "quantile": meta["quantile"],
                                     "target": target})
    print(f"scored {len(oids)} spectra; {sum(p == target for p in pred)} below threshold")


def cmd_evaluate(args, cfg: RunConfig, out: Path) -> None:
    table = read_predictions(args.predictions)
    pred_dir = Path(args.predictions).parent
    known = None
    if args.manifest:
        known = {e.object_id: e.split for e in read_manifest(args.manifest).entries}
    if table.kind == "detection":
        thr_path = Path(args.threshold) if args.threshold else pred_dir / "threshold.txt"
        info = read_kv(thr_path) if thr_path.exists() else {}
        target = args.target or info.get("target", cfg.target)
        threshold = float(info["threshold"]) if "threshold" in info else None
        groups = None
        if known is not None:
            _check_known(table.object_ids, known)
            groups = [f"{lab} [{known[oid]}]" for oid, lab in zip(table.object_ids,
                                                                  table.true_labels)]
        report = detection_report(table.object_ids, table.true_labels, table.errors, threshold,
                                  target, pixel_target=[p == target for p in table.pred_labels],
                                  labels=_group_order(groups or table.true_labels),
                                  bins=cfg.bins, groups=groups)
    else:
        labels_path = Path(args.labels) if args.labels else pred_dir / "labels.txt"
        if labels_path.exists():
            with open(labels_path, encoding="utf-8") as fh:
                labels = [line.rstrip("\n") for line in fh if line.strip()]
        else:
            labels = _label_order(table.true_labels + table.pred_labels)
        report = accuracy_report(table.object_ids, table.true_labels, table.pred_labels,
                                 table.probs, labels, known)
    report.write(out)
    print(report.summary_text(), end="")


def _check_known(object_ids, known) -> None:
    unknown = sorted(set(object_ids) - set(known))
    if unknown:
        raise UnknownObject(f"objects not in manifest: {unknown[:5]}")


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "split": cmd_split,
    "train-classifier": cmd_train_classifier,
    "train-autoencoder": cmd_train_autoencoder,
    "classify": cmd_classify,
    "detect": cmd_detect,
    "evaluate": cmd_evaluate,
}


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value run configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--quantile", type=float)
    common.add_argument("--target", help="target textile label for detection")
    common.add_argument("--block", type=int, help="mean-smoothing block size")
    common.add_argument("--sg-window", type=int)
    common.add_argument("--sg-order", type=int)
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="fiberspec", description="NIR textile spectra toolkit")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate the synthetic benchmark")
    p.add_argument("--spec", help="synthetic spec file (key = value)")

    p = sub.add_parser("preprocess", parents=[common], help="SNV, smoothing and derivative")
    p.add_argument("--manifest")
    p.add_argument("--input", help="spectra CSV or ENVI .hdr cube")
    p.add_argument("--dark", help="dark reference cube (.hdr)")
    p.add_argument("--white", help="white reference cube (.hdr)")
    p.add_argument("--object-id")
    p.add_argument("--label")

    p = sub.add_parser("split", parents=[common], help="stratified train/val/test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--source-split", default="D1")

    p = sub.add_parser("train-classifier", parents=[common], help="train the 1D-CNN")
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("train-autoencoder", parents=[common], help="train the target detector")
    p.add_argument("--manifest", required=True)

    for name in ("classify", "detect"):
        p = sub.add_parser(name, parents=[common], help=f"{name} spectra with a checkpoint")
        p.add_argument("--model", required=True)
        p.add_argument("--manifest")
        p.add_argument("--input")
        p.add_argument("--split", action="append", help="manifest split(s) to score")

    p = sub.add_parser("evaluate", parents=[common], help="report from a predictions file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--manifest")
    p.add_argument("--threshold", help="threshold file (detection)")
    p.add_argument("--labels", help="label order file (classification)")
    return parser


_INPUT_ARGS = ("config", "spec", "manifest", "input", "dark", "white", "model",
               "predictions", "threshold", "labels")


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("a subcommand is required")
    except UsageError as exc:
        print(f"fiberspec: error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _require(*(getattr(args, k, None) for k in _INPUT_ARGS))
        overrides = {"seed": args.seed, "quantile": args.quantile, "target": args.target,
                     "block": args.block, "sg_window": args.sg_window,
                     "sg_order": args.sg_order}
        cfg = load_config(args.config, overrides)
        threads = os.environ.get("FIBERSPEC_THREADS")
        limit = None
        if threads:
            try:
                limit = int(threads)
            except ValueError:
                raise ValidationError(f"FIBERSPEC_THREADS must be an integer, got {threads!r}")
            if limit < 1:
                raise ValidationError("FIBERSPEC_THREADS must be >= 1")
        out = ensure_dir(args.out)
        print(f"fiberspec {args.command} seed={cfg.seed}")
        for line in cfg.dumps().splitlines():
            print(f"  {line}")
        _write_run_config(out, args.command, cfg, {})
        with threadpool_limits(limits=limit):
            COMMANDS[args.command](args, cfg, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"fiberspec: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        where = exc.filename if exc.filename is not None else ""
        detail = exc.strerror or str(exc)
        print(f"fiberspec: I/O error: {where}: {detail}" if where else
              f"fiberspec: I/O error: {detail}", file=sys.stderr)
        return EXIT_IO
    except IO_FORMAT_ERRORS as exc:
        print(f"fiberspec: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FiberSpecError, ValueError) as exc:
        print(f"fiberspec: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
