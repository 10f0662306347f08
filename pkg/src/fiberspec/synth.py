"""Synthetic textile spectra and dataset splitting.

Each pure fiber gets a reflectance signature built from Gaussian absorption
bumps on the wavelength grid; textile types are convex blends of fibers.
A sample is ``gain * blend + offset + noise`` with one gain/offset draw per
object (standing in for dye colour), and structure variants warp the bump
widths per object. The benchmark mirrors the six data sets of the textile
study: D1 (train/val/test), D2 (unseen colours), D3 (unseen structures),
D4 (target fiber only), D5 (non-target textiles), D6 (target, new
structures).
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .exceptions import SpecInvalid, TooFewSamples
from .io import DatasetManifest, ManifestEntry
from .models import TEXTILE_LABELS
from .spectra import WavelengthGrid

FIBERS = ("cotton", "polyester", "silk", "linen", "nylon", "wool", "viscose", "elastane")

DEFAULT_BLENDS = {
    "C1": {"cotton": 1.0},
    "P1": {"polyester": 1.0},
    "S1": {"silk": 1.0},
    "L1": {"linen": 1.0},
    "N1": {"nylon": 1.0},
    "W1": {"wool": 1.0},
    "V1": {"viscose": 1.0},
    "VLP1": {"viscose": 0.4, "linen": 0.3, "polyester": 0.3},
    "CP1 9:1": {"cotton": 0.9, "polyester": 0.1},
    "CP1 8:2": {"cotton": 0.8, "polyester": 0.2},
    "CP1 7:3": {"cotton": 0.7, "polyester": 0.3},
    "CE1": {"cotton": 0.95, "elastane": 0.05},
}

MIN_COSINE_DISTANCE = 0.05
MIN_SIGNATURE_REFLECTANCE = 0.2
REFLECTANCE_CLIP = (0.0, 1.5)


@dataclass
class SyntheticSpec:
    labels: tuple = TEXTILE_LABELS
    blends: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_BLENDS.items()})
    start_nm: float = 990.0
    end_nm: float = 1700.0
    n_bands: int = 400
    n_bumps: int = 12
    signature_seed: int = 2024
    baseline_range: tuple = (0.55, 0.8)
    amplitude_range: tuple = (0.08, 0.3)
    width_range: tuple = (4.0, 15.0)
    gain_range: tuple = (0.7, 1.3)
    offset_range: tuple = (-0.1, 0.1)
    unseen_gain_range: tuple = (1.3, 1.45)
    unseen_offset_range: tuple = (0.1, 0.15)
    noise_sd: float = 0.01
    structure_sd: float = 0.05
    spectra_per_object: int = 25
    target_label: str = "C1"
    n_per_class: int = 100
    n_d2_per_class: int = 50
    n_d3_per_class: int = 50
    n_d4: int = 100
    n_d5_per_class: int = 50
    n_d6: int = 100
    dark_objects: int = 1

    def __post_init__(self):
        self.labels = tuple(self.labels)
        for name in ("baseline_range", "amplitude_range", "width_range", "gain_range",
                     "offset_range", "unseen_gain_range", "unseen_offset_range"):
            lo, hi = (float(v) for v in getattr(self, name))
            if lo > hi:
                raise SpecInvalid(f"{name} is empty")
            setattr(self, name, (lo, hi))
        if len(set(self.labels)) != len(self.labels) or len(self.labels) < 2:
            raise SpecInvalid("need at least two distinct labels")
        for label in self.labels:
            blend = self.blends.get(label)
            if not blend:
                raise SpecInvalid(f"no blend defined for {label!r}")
            w = np.array(list(blend.values()), dtype=float)
            if np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
                raise SpecInvalid(f"blend weights of {label!r} must be convex")
            unknown = set(blend) - set(FIBERS)
            if unknown:
                raise SpecInvalid(f"unknown fibers {sorted(unknown)} in {label!r}")
        if self.target_label not in self.labels:
            raise SpecInvalid(f"target {self.target_label!r} is not a label")
        if self.noise_sd < 0 or self.structure_sd < 0 or self.spectra_per_object < 1:
            raise SpecInvalid("noise_sd, structure_sd must be >= 0, spectra_per_object >= 1")
        if self.n_bumps < 1:
            raise SpecInvalid("n_bumps must be >= 1")

    @property
    def grid(self) -> WavelengthGrid:
        return WavelengthGrid(self.start_nm, self.end_nm, self.n_bands)

    @property
    def n_classes(self) -> int:
        return len(self.labels)


def _parse_blend(text: str) -> dict:
    blend = {}
    for part in text.split(","):
        name, weight = part.split()
        blend[name] = float(weight)
    return blend


def spec_from_kv(values: dict) -> SyntheticSpec:
    """Build a spec from ``key = value`` pairs; unknown keys are rejected.

    Tuples are comma separated; blends are given as
    ``blend.<label> = fiber weight, fiber weight``.
    """
    known = {f.name: f for f in fields(SyntheticSpec)}
    kwargs, blends = {}, {k: dict(v) for k, v in DEFAULT_BLENDS.items()}
    for key, raw in values.items():
        if key.startswith("blend."):
            blends[key[len("blend."):]] = _parse_blend(raw)
            continue
        if key not in known or key == "blends":
            raise SpecInvalid(f"unknown synthetic spec key {key!r}")
        default = getattr(SyntheticSpec(), key)
        if key == "labels":
            kwargs[key] = tuple(v.strip() for v in raw.split(","))
        elif isinstance(default, tuple):
            kwargs[key] = tuple(float(v) for v in raw.split(","))
        elif isinstance(default, int):
            kwargs[key] = int(raw)
        elif isinstance(default, float):
            kwargs[key] = float(raw)
        else:
            kwargs[key] = raw
    return SyntheticSpec(blends=blends, **kwargs)


def spec_to_kv(spec: SyntheticSpec) -> dict:
    out = {}
    for f in fields(spec):
        value = getattr(spec, f.name)
        if f.name == "blends":
            continue
        if isinstance(value, tuple):
            out[f.name] = ", ".join(str(v) for v in value)
        else:
            out[f.name] = value
    for label in spec.labels:
        out[f"blend.{label}"] = ", ".join(f"{k} {v}" for k, v in spec.blends[label].items())
    return out


def _bumps(spec: SyntheticSpec) -> dict:
    """Per-fiber baseline and bump parameters, drawn from ``signature_seed``."""
    rng = np.random.default_rng(spec.signature_seed)
    wl = spec.grid.centers
    out = {}
    for fiber in FIBERS:
        params = dict(
            baseline=rng.uniform(*spec.baseline_range),
            centers=rng.uniform(spec.start_nm, spec.end_nm, spec.n_bumps),
            widths=rng.uniform(*spec.width_range, spec.n_bumps),
            amplitudes=rng.uniform(*spec.amplitude_range, spec.n_bumps),
        )
        # overlapping bumps must not push reflectance towards zero
        depth = params["baseline"] - fiber_signature(params, wl).min()
        room = params["baseline"] - MIN_SIGNATURE_REFLECTANCE
        if depth > room:
            params["amplitudes"] = params["amplitudes"] * (room / depth)
        out[fiber] = params
    return out


def fiber_signature(params: dict, wavelengths: np.ndarray, width_scale=None) -> np.ndarray:
    widths = params["widths"] if width_scale is None else params["widths"] * width_scale
    z = (wavelengths[:, None] - params["centers"]) / widths
    return params["baseline"] - (params["amplitudes"] * np.exp(-0.5 * z ** 2)).sum(axis=1)


def class_signature(spec: SyntheticSpec, label: str, width_scales: dict | None = None) -> np.ndarray:
    """Noise-free reflectance of a textile type at gain 1, offset 0."""
    bumps = _bumps(spec)
    wl = spec.grid.centers
    sig = np.zeros(spec.n_bands)
    for fiber, weight in spec.blends[label].items():
        scale = None if width_scales is None else width_scales[fiber]
        sig += weight * fiber_signature(bumps[fiber], wl, scale)
    return sig


def signature_separation(spec: SyntheticSpec, names=FIBERS) -> np.ndarray:
    """Pairwise cosine distances between SNV-transformed fiber signatures."""
    bumps = _bumps(spec)
    wl = spec.grid.centers
    sigs = np.array([fiber_signature(bumps[f], wl) for f in names])
    z = sigs - sigs.mean(axis=1, keepdims=True)
    norm = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norm < 1e-12):
        raise SpecInvalid("a fiber signature is flat and cannot be separated")
    return 1.0 - (z / norm) @ (z / norm).T


def check_spec(spec: SyntheticSpec) -> None:
    dist = signature_separation(spec)
    off = dist[~np.eye(len(dist), dtype=bool)]
    if off.min() <= MIN_COSINE_DISTANCE:
        raise SpecInvalid(f"fiber signatures too similar (cosine distance {off.min():.4f})")


@dataclass
class SyntheticData:
    X: np.ndarray
    labels: list[str]
    object_ids: list[str]
    entries: list[ManifestEntry]
    clipped: int = 0

    def __len__(self):
        return len(self.labels)

    @property
    def manifest(self) -> DatasetManifest:
        return DatasetManifest(list(self.entries))

    def subset(self, mask) -> "SyntheticData":
        idx = np.flatnonzero(mask)
        return SyntheticData(self.X[idx], [self.labels[i] for i in idx],
                             [self.object_ids[i] for i in idx],
                             [self.entries[i] for i in idx], self.clipped)


def _stream(seed: int, *keys) -> np.random.Generator:
    """Generator for one (data set, class, object) cell, independent of
    generation order."""
    words = [seed] + [zlib.crc32(str(k).encode()) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(words))


def _fiber_name(blend: dict) -> str:
    return "/".join(f"{k} {round(100 * v)}" for k, v in blend.items())


def gen_dataset(spec: SyntheticSpec, n_per_class: int, seed: int, *, labels=None,
                split: str = "D1", gain_range=None, offset_range=None,
                structure: bool = False, source: str = "", row_start: int = 0) -> SyntheticData:
    """Generate ``n_per_class`` spectra for each label.

    Spectra come in objects of ``spec.spectra_per_object`` sharing one
    gain/offset draw (and, with ``structure``, one bump-width warp).
    Generated reflectance is clipped to [0, 1.5]; the number of clipped
    values is reported in ``clipped``.
    """
    check_spec(spec)
    labels = spec.labels if labels is None else tuple(labels)
    gain_range = spec.gain_range if gain_range is None else gain_range
    offset_range = spec.offset_range if offset_range is None else offset_range
    bumps = _bumps(spec)
    wl = spec.grid.centers
    per_obj = spec.spectra_per_object
    X, labs, oids, entries = [], [], [], []
    clipped = 0
    for label in labels:
        blend = spec.blends[label]
        n_objects = -(-n_per_class // per_obj)
        for k in range(n_objects):
            rng = _stream(seed, split, label, k)
            count = min(per_obj, n_per_class - k * per_obj)
            gain = rng.uniform(*gain_range)
            offset = rng.uniform(*offset_range)
            sig = np.zeros(spec.n_bands)
            for fiber, weight in blend.items():
                scale = None
                if structure:
                    scale = np.clip(1.0 + spec.structure_sd * rng.standard_normal(spec.n_bumps), 0.2, None)
                sig += weight * fiber_signature(bumps[fiber], wl, scale)
            samples = gain * sig + offset + spec.noise_sd * rng.standard_normal((count, spec.n_bands))
            lo, hi = REFLECTANCE_CLIP
            clipped += int(np.count_nonzero((samples < lo) | (samples > hi)))
            samples = np.clip(samples, lo, hi)
            oid = f"{split}-{label.replace(' ', '_').replace(':', '-')}-{k:03d}"
            structure_tag = "warped" if structure else "base"
            color = f"g{gain:.3f}o{offset:+.3f}"
            for j in range(count):
                entries.append(ManifestEntry(oid, label, _fiber_name(blend), structure_tag, color,
                                             split, source, row_start + len(X)))
                X.append(samples[j])
                labs.append(label)
                oids.append(oid)
    X = np.array(X).reshape(len(X), spec.n_bands)
    return SyntheticData(X, labs, oids, entries, clipped)


def dark_dataset(spec: SyntheticSpec, n_objects: int, *, split: str = "D1", source: str = "",
                 row_start: int = 0) -> SyntheticData:
    """All-zero reflectance objects of the target label (total absorption)."""
    per_obj = spec.spectra_per_object
    label = spec.target_label
    X = np.zeros((n_objects * per_obj, spec.n_bands))
    labs, oids, entries = [], [], []
    for k in range(n_objects):
        oid = f"{split}-dark-{k:03d}"
        for j in range(per_obj):
            entries.append(ManifestEntry(oid, label, _fiber_name(spec.blends[label]), "dark",
                                         "black", split, source, row_start + len(labs)))
            labs.append(label)
            oids.append(oid)
    return SyntheticData(X, labs, oids, entries)


def _concat(parts: list[SyntheticData]) -> SyntheticData:
    return SyntheticData(
        np.concatenate([p.X for p in parts]),
        [v for p in parts for v in p.labels],
        [v for p in parts for v in p.object_ids],
        [v for p in parts for v in p.entries],
        sum(p.clipped for p in parts),
    )


def make_benchmark(spec: SyntheticSpec, seed: int = 0, source: str = "spectra.csv") -> SyntheticData:
    """All six data sets (plus dark objects) in one table with split tags."""
    target = spec.target_label
    others = tuple(label for label in spec.labels if label != target)
    plan = [
        dict(n_per_class=spec.n_per_class, split="D1"),
        dict(n_per_class=spec.n_d2_per_class, split="D2", gain_range=spec.unseen_gain_range,
             offset_range=spec.unseen_offset_range),
        dict(n_per_class=spec.n_d3_per_class, split="D3", structure=True),
        dict(n_per_class=spec.n_d4, split="D4", labels=(target,)),
        dict(n_per_class=spec.n_d5_per_class, split="D5", labels=others),
        dict(n_per_class=spec.n_d6, split="D6", labels=(target,), structure=True),
    ]
    parts, row = [], 0
    for kwargs in plan:
        if kwargs["n_per_class"] <= 0:
            continue
        part = gen_dataset(spec, seed=seed, source=source, row_start=row, **kwargs)
        parts.append(part)
        row += len(part)
    if spec.dark_objects:
        parts.append(dark_dataset(spec, spec.dark_objects, source=source, row_start=row))
    return _concat(parts)


@dataclass
class DatasetSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int

    def assignment(self, n: int) -> list[str]:
        tags = [""] * n
        for name in ("train", "val", "test"):
            for i in getattr(self, name):
                tags[i] = name
        return tags


def stratified_split(labels, ratios=(0.6, 0.2, 0.2), seed: int = 0) -> DatasetSplit:
    """Per-class shuffled split. Validation and test sizes are
    ``floor(ratio * n_class)``; the remainder goes to training."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1) > 1e-9:
        raise SpecInvalid("ratios must be three positive numbers summing to 1")
    labels = np.asarray(labels)
    train, val, test = [], [], []
    for k, cls in enumerate(np.unique(labels)):
        idx = np.flatnonzero(labels == cls)
        if idx.size < 3:
            raise TooFewSamples(f"class {cls!r} has {idx.size} samples, need >= 3")
        idx = _stream(seed, "split", cls).permutation(idx)
        n_val = int(np.floor(ratios[1] * idx.size))
        n_test = int(np.floor(ratios[2] * idx.size))
        n_train = idx.size - n_val - n_test
        train.extend(idx[:n_train])
        val.extend(idx[n_train:n_train + n_val])
        test.extend(idx[n_train + n_val:])
    as_arr = lambda v: np.sort(np.array(v, dtype=np.int64))  # noqa: E731
    return DatasetSplit(as_arr(train), as_arr(val), as_arr(test), seed)


def apply_split(manifest: DatasetManifest, seed: int = 0, ratios=(0.6, 0.2, 0.2),
                source_split: str = "D1") -> DatasetManifest:
    """Re-tag the ``source_split`` rows of a manifest as train/val/test."""
    rows = [i for i, e in enumerate(manifest.entries) if e.split == source_split]
    split = stratified_split([manifest.entries[i].label for i in rows], ratios, seed)
    tags = split.assignment(len(rows))
    entries = list(manifest.entries)
    for i, tag in zip(rows, tags):
        entries[i] = replace(entries[i], split=tag)
    return DatasetManifest(entries, manifest.labels)
