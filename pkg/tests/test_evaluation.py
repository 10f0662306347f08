import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fiberspec.evaluation import (accuracy_report, confusion, detection_report, majority_vote,
                                  re_histogram)
from fiberspec.exceptions import (EmptyObject, LabelOutOfRange, LengthMismatch, UnknownObject,
                                  ValidationError)

A, B = 0, 1


# --- confusion --------------------------------------------------------------

def test_confusion_perfect():
    cm = confusion([0, 1, 2, 2], [0, 1, 2, 2], 3)
    assert np.array_equal(cm.counts, np.diag([1, 1, 2]))
    assert cm.accuracy == 1.0


def test_confusion_hand_count():
    cm = confusion([0, 0, 1], [0, 1, 1], 2)
    assert cm.counts[0, 0] == 1 and cm.counts[0, 1] == 1 and cm.counts[1, 1] == 1
    assert cm.counts[1, 0] == 0
    assert cm.accuracy == 2 / 3


def test_confusion_empty():
    cm = confusion([], [], 4)
    assert cm.counts.shape == (4, 4) and cm.total == 0
    assert not cm.defined and np.isnan(cm.accuracy)


def test_confusion_errors():
    with pytest.raises(LengthMismatch):
        confusion([0, 1], [0], 2)
    with pytest.raises(LabelOutOfRange):
        confusion([0, 2], [0, 1], 2)
    with pytest.raises(LabelOutOfRange):
        confusion([0, 1], [0, -1], 2)


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), max_size=60))
def test_confusion_invariants(pairs):
    t = [p[0] for p in pairs]
    p = [p[1] for p in pairs]
    cm = confusion(t, p, 5)
    assert cm.total == len(pairs)
    assert cm.counts.sum(axis=1).tolist() == np.bincount(t, minlength=5).tolist()
    if pairs:
        assert cm.accuracy == np.mean(np.array(t) == np.array(p))


# --- majority vote ----------------------------------------------------------

def test_majority_strict():
    v = majority_vote([A, A, B], n_classes=2)
    assert v.final_label == A and v.margin == 1


def test_majority_tie_by_probability():
    probs = np.array([[0.9, 0.1], [0.4, 0.6]])  # sums A: 1.3, B: 0.7
    v = majority_vote([A, B], probs)
    assert v.final_label == A and v.margin == 0
    np.testing.assert_allclose(v.summed_probs, [1.3, 0.7])
    probs = np.array([[0.3, 0.7], [0.4, 0.6]])  # sums A: 0.7, B: 1.3
    assert majority_vote([A, B], probs).final_label == B


def test_majority_tie_lowest_index():
    probs = np.array([[0.5, 0.5], [0.5, 0.5]])
    assert majority_vote([B, A], probs).final_label == A
    assert majority_vote([2, 1], n_classes=3).final_label == 1


def test_majority_empty():
    with pytest.raises(EmptyObject):
        majority_vote([], n_classes=2)


@given(st.lists(st.integers(0, 3), min_size=1, max_size=25), st.randoms())
def test_majority_final_label_is_a_mode(labels, rnd):
    v = majority_vote(labels, n_classes=4)
    counts = np.bincount(labels, minlength=4)
    assert counts[v.final_label] == counts.max()
    shuffled = list(labels)
    rnd.shuffle(shuffled)
    assert majority_vote(shuffled, n_classes=4).final_label == v.final_label


# --- accuracy report --------------------------------------------------------

def test_report_all_correct():
    r = accuracy_report(["o1"] * 3 + ["o2"] * 2, list("aaabb"), list("aaabb"))
    assert r.pixel_accuracy == 1.0 and r.object_accuracy == 1.0


def test_report_hand_count():
    r = accuracy_report(["o"] * 3, ["a"] * 3, ["a", "a", "b"], labels=["a", "b"])
    assert r.pixel_accuracy == 2 / 3
    assert r.object_accuracy == 1.0


def test_report_trace_equals_pixel_accuracy():
    rng = np.random.default_rng(0)
    labels = [f"L{i}" for i in range(4)]
    true = rng.integers(0, 4, 200)
    pred = np.where(rng.random(200) < 0.7, true, rng.integers(0, 4, 200))
    oids = [f"obj{t}-{i // 10}" for i, t in enumerate(true)]
    r = accuracy_report(oids, [labels[i] for i in true], [labels[i] for i in pred], labels=labels)
    assert r.pixel_matrix.accuracy == r.pixel_accuracy
    assert r.pixel_matrix.accuracy == np.mean(true == pred)


def test_report_object_accuracy_invariant_to_pixel_order():
    rng = np.random.default_rng(1)
    oids = np.repeat(["a", "b", "c", "d"], 5)
    true = np.repeat(["x", "y", "x", "y"], 5)
    pred = rng.choice(["x", "y"], 20)
    probs = rng.dirichlet([1, 1], 20)
    base = accuracy_report(oids, true, pred, probs, ["x", "y"])
    perm = rng.permutation(20)
    shuffled = accuracy_report(oids[perm], true[perm], pred[perm], probs[perm], ["x", "y"])
    assert base.object_accuracy == shuffled.object_accuracy
    assert np.array_equal(base.object_matrix.counts, shuffled.object_matrix.counts)


def test_report_per_class_rows_and_table():
    r = accuracy_report(["a", "a", "b", "b"], ["C2", "C2", "CE2", "CE2"],
                        ["C2", "CE2", "CE2", "CE2"], labels=["C2", "CE2"])
    assert [row.label for row in r.rows] == ["C2", "CE2"]
    assert r.row("C2").pixel_accuracy == 0.5 and r.row("CE2").object_accuracy == 1.0
    text = r.table_text()
    lines = text.splitlines()
    assert lines[0].split() == ["C2", "CE2"]
    assert lines[1].split() == ["px", "50.00", "100.00"]
    assert lines[2].split()[0] == "obj"


def test_report_unknown_object_and_mixed_labels():
    with pytest.raises(UnknownObject):
        accuracy_report(["a", "z"], ["x", "x"], ["x", "x"], known_objects={"a"})
    with pytest.raises(ValidationError):
        accuracy_report(["a", "a"], ["x", "y"], ["x", "y"])
    with pytest.raises(LabelOutOfRange):
        accuracy_report(["a"], ["x"], ["q"], labels=["x"])


def test_report_write(tmp_path):
    r = accuracy_report(["a", "a", "b"], ["x", "x", "y"], ["x", "y", "y"], labels=["x", "y"])
    files = {p.name for p in r.write(tmp_path)}
    assert {"summary.txt", "per_class.csv", "confusion_pixel.csv", "confusion_object.svg"} <= files
    assert "pixel accuracy: 66.67%" in (tmp_path / "summary.txt").read_text()
    ET.fromstring((tmp_path / "confusion_pixel.svg").read_text().encode())
    assert "<script" not in (tmp_path / "confusion_pixel.svg").read_text()
    assert (tmp_path / "confusion_pixel.csv").read_text().splitlines()[1] == "x,1,1"


def test_detection_report_schema():
    oids = ["t1"] * 3 + ["n1"] * 2 + ["n2"] * 2
    labels = ["C1"] * 3 + ["P1"] * 2 + ["P1"] * 2
    errors = [0.1, 0.2, 0.9, 0.9, 0.8, 0.1, 0.9]
    r = detection_report(oids, labels, errors, 0.5, "C1")
    assert r.row("C1").pixel_accuracy == 2 / 3 and r.row("C1").object_accuracy == 1.0
    assert r.row("P1").pixel_accuracy == 3 / 4 and r.row("P1").object_accuracy == 1.0
    assert r.histogram.total == 7
    by_decision = detection_report(oids, labels, pixel_target=[e <= 0.5 for e in errors],
                                   target_label="C1")
    assert by_decision.pixel_accuracy == r.pixel_accuracy


def test_detection_report_groups():
    r = detection_report(["a", "b"], ["C1", "C1"], [0.1, 0.9], 0.5, "C1",
                         groups=["C1 [D4]", "C1 [D6]"])
    assert [row.label for row in r.rows] == ["C1 [D4]", "C1 [D6]"]
    assert r.row("C1 [D6]").object_accuracy == 0.0


# --- histogram --------------------------------------------------------------

def test_histogram_single_value_group():
    h = re_histogram({"g": [0.3] * 10})
    assert len(h.occupied("g")) == 1
    assert h.edges[-1] == pytest.approx(1.05 * 0.3)


@given(st.lists(st.floats(0, 100), min_size=1, max_size=200), st.integers(1, 80))
def test_histogram_conserves_mass(values, bins):
    h = re_histogram({"a": values, "b": values[:1]}, bins=bins)
    assert h.total == len(values) + 1
    assert len(h.edges) == bins + 1


def test_histogram_separated_groups():
    h = re_histogram({"lo": np.linspace(0.0, 1.0, 50), "hi": np.linspace(5.0, 6.0, 50)},
                     threshold=2.0)
    assert h.occupied("lo").max() < h.occupied("hi").min()
    svg = h.to_svg()
    root = ET.fromstring(svg.encode())
    assert root.tag.endswith("svg") and "stroke-dasharray" in svg
    assert svg == re_histogram({"lo": np.linspace(0.0, 1.0, 50),
                                "hi": np.linspace(5.0, 6.0, 50)}, threshold=2.0).to_svg()


def test_histogram_rejects_empty_group():
    with pytest.raises(ValidationError):
        re_histogram({"a": []})
