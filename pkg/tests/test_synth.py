import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fiberspec.exceptions import SpecInvalid, TooFewSamples
from fiberspec.io import parse_kv
from fiberspec.spectra import snv
from fiberspec.synth import (FIBERS, MIN_COSINE_DISTANCE, SyntheticSpec, apply_split,
                             class_signature, dark_dataset, gen_dataset, make_benchmark,
                             signature_separation, spec_from_kv, spec_to_kv, stratified_split)

CLEAN = dict(noise_sd=0.0, gain_range=(1.0, 1.0), offset_range=(0.0, 0.0))


def test_split_counts():
    s = stratified_split(np.repeat(["a", "b"], 1300), seed=0)
    assert (len(s.train), len(s.val), len(s.test)) == (1560, 520, 520)
    s = stratified_split(["x"] * 10, seed=0)
    assert (len(s.train), len(s.val), len(s.test)) == (6, 2, 2)


def test_split_deterministic():
    labels = np.repeat(list("abc"), 17)
    a, b = stratified_split(labels, seed=5), stratified_split(labels, seed=5)
    assert all(np.array_equal(getattr(a, k), getattr(b, k)) for k in ("train", "val", "test"))
    assert not np.array_equal(a.train, stratified_split(labels, seed=6).train)


@given(st.lists(st.integers(3, 40), min_size=1, max_size=5), st.integers(0, 10_000))
def test_split_disjoint_complete_within_one(sizes, seed):
    labels = np.repeat(np.arange(len(sizes)), sizes)
    s = stratified_split(labels, (0.6, 0.2, 0.2), seed)
    allidx = np.concatenate([s.train, s.val, s.test])
    assert sorted(allidx.tolist()) == list(range(labels.size))
    for k, n in enumerate(sizes):
        for part, r in ((s.val, 0.2), (s.test, 0.2)):
            assert abs(np.sum(labels[part] == k) - r * n) < 1
        assert abs(np.sum(labels[s.train] == k) - 0.6 * n) < 2


def test_split_errors():
    with pytest.raises(TooFewSamples):
        stratified_split(["a", "a", "b", "b", "b"])
    with pytest.raises(SpecInvalid):
        stratified_split(["a"] * 5, (0.5, 0.2, 0.2))


def test_pure_blend_is_pure_signature():
    spec = SyntheticSpec(**CLEAN)
    d = gen_dataset(spec, 3, seed=0, labels=("P1",))
    np.testing.assert_allclose(d.X, np.broadcast_to(class_signature(spec, "P1"), (3, 400)),
                               atol=1e-15)


def test_half_blend_is_midpoint():
    blends = dict(SyntheticSpec().blends)
    blends["MIX"] = {"cotton": 0.5, "silk": 0.5}
    spec = SyntheticSpec(labels=SyntheticSpec().labels + ("MIX",), blends=blends, **CLEAN)
    mid = gen_dataset(spec, 1, 0, labels=("MIX",)).X[0]
    a = gen_dataset(spec, 1, 0, labels=("C1",)).X[0]
    b = gen_dataset(spec, 1, 0, labels=("S1",)).X[0]
    np.testing.assert_allclose(mid, (a + b) / 2, atol=1e-12)


def test_gain_offset_removed_by_snv():
    base = SyntheticSpec(noise_sd=0.0)
    d = gen_dataset(base, 50, 0, labels=("W1",))
    objects = sorted(set(d.object_ids))
    first = [d.X[d.object_ids.index(o)] for o in objects]
    assert not np.allclose(first[0], first[1])
    np.testing.assert_allclose(snv(first[0]), snv(first[1]), atol=1e-9)


def test_generator_structure():
    spec = SyntheticSpec()
    d = gen_dataset(spec, 60, seed=3, labels=("C1", "P1"))
    assert len(d) == 120 and d.clipped == 0
    counts = {o: d.object_ids.count(o) for o in set(d.object_ids)}
    assert sorted(counts.values()) == [10, 10, 25, 25, 25, 25]
    assert all(0 <= v <= 1.5 for v in (d.X.min(), d.X.max()))
    again = gen_dataset(spec, 60, seed=3, labels=("C1", "P1"))
    assert np.array_equal(d.X, again.X)
    # per-cell streams: generating one class alone gives the same rows
    alone = gen_dataset(spec, 60, seed=3, labels=("P1",))
    assert np.array_equal(alone.X, d.X[60:])


def test_generator_flags_clipping():
    spec = SyntheticSpec(offset_range=(1.0, 1.0))
    assert gen_dataset(spec, 5, 0, labels=("C1",)).clipped > 0


def test_unseen_colour_range_and_structure_warp():
    spec = SyntheticSpec(noise_sd=0.0)
    d2 = gen_dataset(spec, 25, 0, labels=("C1",), split="D2", gain_range=spec.unseen_gain_range,
                     offset_range=spec.unseen_offset_range)
    gain = float(d2.entries[0].color[1:6])
    assert spec.unseen_gain_range[0] <= gain <= spec.unseen_gain_range[1]
    d3 = gen_dataset(spec, 25, 0, labels=("C1",), split="D3", structure=True)
    assert d3.entries[0].structure == "warped"
    base = class_signature(spec, "C1")
    assert not np.allclose(snv(d3.X[0]), snv(base), atol=1e-6)


def test_fiber_signatures_separated():
    dist = signature_separation(SyntheticSpec())
    assert dist.shape == (len(FIBERS),) * 2
    assert dist[~np.eye(len(FIBERS), dtype=bool)].min() > MIN_COSINE_DISTANCE


def test_degenerate_spec_rejected():
    spec = SyntheticSpec(width_range=(1000.0, 1000.0), amplitude_range=(0.0, 0.0))
    with pytest.raises(SpecInvalid):
        gen_dataset(spec, 5, 0)


@pytest.mark.parametrize("kw", [dict(blends={"C1": {"cotton": 0.5}}, labels=("C1", "P1")),
                                dict(target_label="ZZ"), dict(noise_sd=-1.0),
                                dict(gain_range=(2.0, 1.0))])
def test_spec_invariants(kw):
    with pytest.raises(SpecInvalid):
        SyntheticSpec(**kw)


def test_spec_kv_round_trip():
    text = "".join(f"{k} = {v}\n" for k, v in spec_to_kv(SyntheticSpec()).items())
    assert spec_from_kv(parse_kv(text)) == SyntheticSpec()
    with pytest.raises(SpecInvalid):
        spec_from_kv({"bogus": "1"})


def test_checked_in_spec_is_default():
    from pathlib import Path
    path = Path(__file__).resolve().parents[1] / "configs" / "desk_synth.txt"
    assert spec_from_kv(parse_kv(path.read_text())) == SyntheticSpec()


def test_dark_dataset():
    d = dark_dataset(SyntheticSpec(), 2)
    assert d.X.shape == (50, 400) and not d.X.any()
    assert set(d.labels) == {"C1"} and d.entries[0].structure == "dark"


def test_benchmark_layout():
    d = make_benchmark(SyntheticSpec(), seed=0)
    splits = [e.split for e in d.entries]
    assert splits.count("D1") == 12 * 100 + 25
    assert splits.count("D4") == 100 and splits.count("D6") == 100
    assert {lab for lab, s in zip(d.labels, splits) if s == "D5"} == set(SyntheticSpec().labels) - {"C1"}
    d.manifest.validate()
    tagged = apply_split(d.manifest, seed=0)
    assert {e.split for e in tagged.entries} == {"train", "val", "test", "D2", "D3", "D4", "D5", "D6"}
