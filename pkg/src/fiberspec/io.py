"""File formats: ENVI cubes, spectra/manifest/prediction CSVs, key=value files."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import BadUtf8, HeaderMismatch, ShapeMismatch, TruncatedPayload, ValidationError
from .spectra import DEFAULT_GRID, HyperCube, Stage, WavelengthGrid

SPLIT_TAGS = ("D1", "train", "val", "test", "D2", "D3", "D4", "D5", "D6")
MANIFEST_COLUMNS = ("object_id", "label", "fiber", "structure", "color", "split",
                    "source", "row_offset")
_DATA_SUFFIXES = ("", ".raw", ".img", ".dat", ".bil")


def _read_text(path) -> str:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise BadUtf8(f"{path}: invalid UTF-8 at byte {exc.start}") from None


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# ENVI cubes
# ---------------------------------------------------------------------------

def parse_envi_header(text: str) -> dict[str, str]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ENVI":
        raise HeaderMismatch("header does not start with 'ENVI'")
    fields, key, buf = {}, None, []
    for line in lines[1:]:
        if key is not None:
            buf.append(line)
            if "}" in line:
                fields[key] = " ".join(buf).strip()
                key = None
            continue
        if "=" not in line:
            continue
        k, v = (part.strip() for part in line.split("=", 1))
        k = k.lower()
        if v.startswith("{") and "}" not in v:
            key, buf = k, [v]
        else:
            fields[k] = v
    if key is not None:
        raise HeaderMismatch(f"unterminated brace list for {key!r}")
    return fields


def _brace_list(value: str) -> list[str]:
    return [v.strip() for v in value.strip().lstrip("{").rstrip("}").split(",") if v.strip()]


def envi_data_path(header_path) -> Path:
    header_path = Path(header_path)
    stem = header_path.with_suffix("")
    for suffix in _DATA_SUFFIXES:
        candidate = stem.with_name(stem.name + suffix)
        if candidate.exists() and candidate != header_path:
            return candidate
    raise FileNotFoundError(f"no data file found next to {header_path}")


def read_cube(header_path, stage: Stage = Stage.RAW) -> HyperCube:
    """Read a band-interleaved-by-line float32 ENVI cube."""
    fields = parse_envi_header(_read_text(header_path))
    try:
        samples, lines, bands = (int(fields[k]) for k in ("samples", "lines", "bands"))
    except KeyError as exc:
        raise HeaderMismatch(f"header lacks {exc.args[0]!r}") from None
    if int(fields.get("data type", "4")) != 4:
        raise HeaderMismatch("only data type 4 (float32) is supported")
    if fields.get("interleave", "bil").lower() != "bil":
        raise HeaderMismatch("only BIL interleave is supported")
    if int(fields.get("byte order", "0")) != 0:
        raise HeaderMismatch("only little-endian payloads are supported")
    offset = int(fields.get("header offset", "0"))
    with open(envi_data_path(header_path), "rb") as fh:
        payload = fh.read()[offset:]
    expected = samples * lines * bands * 4
    if len(payload) < expected:
        raise TruncatedPayload(f"payload has {len(payload)} bytes, header implies {expected}")
    if len(payload) > expected:
        raise HeaderMismatch(f"payload has {len(payload)} bytes, header implies {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(lines, bands, samples)
    if "wavelength" in fields:
        waves = [float(v) for v in _brace_list(fields["wavelength"])]
        if len(waves) != bands:
            raise HeaderMismatch(f"{len(waves)} wavelengths for {bands} bands")
        grid = WavelengthGrid.from_centers(waves)
    elif bands == DEFAULT_GRID.n_bands:
        grid = DEFAULT_GRID
    else:
        grid = WavelengthGrid(DEFAULT_GRID.start_nm, DEFAULT_GRID.end_nm, bands)
    return HyperCube(data.transpose(0, 2, 1).astype(np.float64), grid, stage)


def write_cube(header_path, cube: HyperCube) -> Path:
    """Write ``cube`` as ``<stem>.hdr`` + ``<stem>.raw``; returns the data path."""
    header_path = Path(header_path)
    data_path = header_path.with_suffix(".raw")
    waves = ", ".join(repr(float(w)) for w in cube.grid.centers)
    header = (
        "ENVI\n"
        f"samples = {cube.samples}\n"
        f"lines = {cube.lines}\n"
        f"bands = {cube.bands}\n"
        "header offset = 0\n"
        "file type = ENVI Standard\n"
        "data type = 4\n"
        "interleave = bil\n"
        "byte order = 0\n"
        "wavelength units = Nanometers\n"
        f"wavelength = {{{waves}}}\n"
    )
    _write_text(header_path, header)
    bil = np.ascontiguousarray(cube.data.transpose(0, 2, 1), dtype="<f4")
    with open(data_path, "wb") as fh:
        fh.write(bil.tobytes())
    return data_path


# ---------------------------------------------------------------------------
# flat spectra CSV
# ---------------------------------------------------------------------------

@dataclass
class SpectraTable:
    object_ids: list[str]
    labels: list[str]
    X: np.ndarray

    def __len__(self):
        return len(self.object_ids)


def write_spectra_csv(path, object_ids, labels, X) -> None:
    X = np.asarray(X, dtype=np.float64)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["object_id", "label"] + [f"c{i}" for i in range(X.shape[1])])
    for oid, lab, row in zip(object_ids, labels, X):
        writer.writerow([oid, lab] + [repr(float(v)) for v in row])
    _write_text(path, buf.getvalue())


def read_spectra_csv(path, n_bands: int | None = None) -> SpectraTable:
    reader = csv.reader(io.StringIO(_read_text(path)))
    try:
        header = next(reader)
    except StopIteration:
        raise HeaderMismatch(f"{path}: empty file") from None
    if header[:2] != ["object_id", "label"]:
        raise HeaderMismatch(f"{path}: header must start with object_id,label")
    width = len(header) - 2
    if header[2:] != [f"c{i}" for i in range(width)]:
        raise HeaderMismatch(f"{path}: channel columns must be c0..c{width - 1}")
    if n_bands is not None and width != n_bands:
        raise ShapeMismatch(f"{path}: {width} channels, expected {n_bands}")
    ids, labels, rows = [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) - 2 != width:
            raise ShapeMismatch(f"{path}: line {lineno} has {len(row) - 2} channels, expected {width}")
        ids.append(row[0])
        labels.append(row[1])
        try:
            rows.append([float(v) for v in row[2:]])
        except ValueError:
            raise ShapeMismatch(f"{path}: line {lineno} holds a non-numeric value") from None
    X = np.array(rows, dtype=np.float64).reshape(len(rows), width)
    return SpectraTable(ids, labels, X)


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    object_id: str
    label: str
    fiber: str = ""
    structure: str = ""
    color: str = ""
    split: str = "D1"
    source: str = ""
    row_offset: int = 0


@dataclass
class DatasetManifest:
    """One entry per spectrum, pointing at a row of a spectra CSV.

    Entries of the same object must agree on label, fiber, structure and
    color; ``(source, row_offset)`` pairs are unique.
    """

    entries: list[ManifestEntry] = field(default_factory=list)
    labels: tuple | None = None

    def __len__(self):
        return len(self.entries)

    def validate(self) -> None:
        seen, objects = set(), {}
        for e in self.entries:
            if e.split not in SPLIT_TAGS:
                raise ValidationError(f"unknown split tag {e.split!r} for object {e.object_id}")
            if self.labels is not None and e.label not in self.labels:
                raise ValidationError(f"label {e.label!r} not in the declared label set")
            key = (e.source, e.row_offset)
            if key in seen:
                raise ValidationError(f"duplicate manifest row {key}")
            seen.add(key)
            props = (e.label, e.fiber, e.structure, e.color)
            if objects.setdefault(e.object_id, props) != props:
                raise ValidationError(f"object {e.object_id} has inconsistent properties")

    def select(self, splits=None, labels=None) -> "DatasetManifest":
        splits = None if splits is None else set([splits] if isinstance(splits, str) else splits)
        labels = None if labels is None else set(labels)
        keep = [e for e in self.entries
                if (splits is None or e.split in splits) and (labels is None or e.label in labels)]
        return DatasetManifest(keep, self.labels)

    def object_ids(self) -> list[str]:
        return [e.object_id for e in self.entries]

    def label_list(self) -> list[str]:
        return [e.label for e in self.entries]


def write_manifest(path, manifest: DatasetManifest) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    for e in manifest.entries:
        writer.writerow([e.object_id, e.label, e.fiber, e.structure, e.color, e.split,
                         e.source, e.row_offset])
    _write_text(path, buf.getvalue())


def read_manifest(path) -> DatasetManifest:
    reader = csv.reader(io.StringIO(_read_text(path)))
    header = next(reader, None)
    if header is None or tuple(header) != MANIFEST_COLUMNS:
        raise HeaderMismatch(f"{path}: manifest header must be {','.join(MANIFEST_COLUMNS)}")
    entries = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(MANIFEST_COLUMNS):
            raise ShapeMismatch(f"{path}: line {lineno} has {len(row)} fields")
        try:
            offset = int(row[7])
        except ValueError:
            raise ValidationError(f"{path}: line {lineno} has a non-integer row_offset") from None
        entries.append(ManifestEntry(*row[:7], offset))
    manifest = DatasetManifest(entries)
    manifest.validate()
    return manifest


def load_manifest_spectra(manifest: DatasetManifest, base_dir=".") -> np.ndarray:
    """Fetch the spectra rows referenced by ``manifest`` (in entry order)."""
    cache: dict[str, SpectraTable] = {}
    rows = []
    for e in manifest.entries:
        if e.source not in cache:
            cache[e.source] = read_spectra_csv(Path(base_dir) / e.source)
        table = cache[e.source]
        if not 0 <= e.row_offset < len(table):
            raise ValidationError(f"row_offset {e.row_offset} outside {e.source}")
        if table.object_ids[e.row_offset] != e.object_id:
            raise ValidationError(
                f"{e.source} row {e.row_offset} belongs to {table.object_ids[e.row_offset]}, "
                f"manifest says {e.object_id}")
        rows.append(table.X[e.row_offset])
    width = next(iter(cache.values())).X.shape[1] if cache else 0
    return np.array(rows, dtype=np.float64).reshape(len(rows), width)


# ---------------------------------------------------------------------------
# predictions
# ---------------------------------------------------------------------------

@dataclass
class PredictionTable:
    object_ids: list[str]
    pixel_index: list[int]
    true_labels: list[str]
    pred_labels: list[str]
    probs: np.ndarray | None = None
    errors: np.ndarray | None = None

    @property
    def kind(self) -> str:
        return "detection" if self.errors is not None else "classification"

    def __len__(self):
        return len(self.object_ids)


def pixel_indices(object_ids) -> list[int]:
    """Running index of each spectrum within its object."""
    counter: dict = {}
    out = []
    for oid in object_ids:
        out.append(counter.get(oid, 0))
        counter[oid] = out[-1] + 1
    return out


def write_predictions(path, table: PredictionTable) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    head = ["object_id", "pixel_index", "true_label", "pred_label"]
    if table.errors is not None:
        writer.writerow(head + ["re"])
        extra = [[repr(float(v))] for v in table.errors]
    else:
        probs = np.asarray(table.probs, dtype=np.float64)
        writer.writerow(head + [f"p{i}" for i in range(probs.shape[1])])
        extra = [[repr(float(v)) for v in row] for row in probs]
    for oid, idx, t, p, x in zip(table.object_ids, table.pixel_index, table.true_labels,
                                 table.pred_labels, extra):
        writer.writerow([oid, idx, t, p] + x)
    _write_text(path, buf.getvalue())


def read_predictions(path) -> PredictionTable:
    reader = csv.reader(io.StringIO(_read_text(path)))
    header = next(reader, None)
    if header is None or header[:4] != ["object_id", "pixel_index", "true_label", "pred_label"]:
        raise HeaderMismatch(f"{path}: not a predictions file")
    rows = [r for r in reader if r]
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise ShapeMismatch(f"{path}: line {lineno} has {len(r)} fields, expected {len(header)}")
    ids = [r[0] for r in rows]
    idx = [int(r[1]) for r in rows]
    true = [r[2] for r in rows]
    pred = [r[3] for r in rows]
    if header[4:] == ["re"]:
        return PredictionTable(ids, idx, true, pred,
                               errors=np.array([float(r[4]) for r in rows], dtype=np.float64))
    n = len(header) - 4
    if header[4:] != [f"p{i}" for i in range(n)]:
        raise HeaderMismatch(f"{path}: probability columns must be p0..p{n - 1}")
    probs = np.array([[float(v) for v in r[4:]] for r in rows], dtype=np.float64).reshape(len(rows), n)
    return PredictionTable(ids, idx, true, pred, probs=probs)


# ---------------------------------------------------------------------------
# key=value text
# ---------------------------------------------------------------------------

def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def read_kv(path) -> dict[str, str]:
    return parse_kv(_read_text(path))


def write_kv(path, values: dict) -> None:
    _write_text(path, "".join(f"{k} = {v}\n" for k, v in values.items()))


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
