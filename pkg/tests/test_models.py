import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone

from fiberspec import nn
from fiberspec.exceptions import EmptyObject, ShapeMismatch, SpecInvalid, TooFewSamples, ValidationError
from fiberspec.models import (AutoencoderDetector, AutoencoderSpec, ClassifierSpec,
                              SpectralCNNClassifier, build_autoencoder, build_classifier,
                              detect_errors, encode, fit_threshold, object_decision,
                              predict_pixels, reconstruction_error, train_autoencoder,
                              train_classifier)
from fiberspec.nn import Dense, TrainConfig


# --- architecture arithmetic ------------------------------------------------

def test_classifier_trace_and_parameter_count():
    net = build_classifier()
    assert net.shapes[1] == (20, 396) and net.shapes[3] == (32, 392)
    assert net.shapes[5] == (392 * 32,) == (12544,)
    per_layer = [layer.n_params for layer in net.layers if layer.n_params]
    assert per_layer == [120, 3232, 1_605_760, 256, 1548]
    assert net.n_params == 1_610_916
    kinds = [layer.kind for layer in net.layers]
    assert kinds == ["conv1d", "relu", "conv1d", "relu", "flatten", "dense", "batchnorm1d",
                     "dropout", "relu", "dense", "softmax"]


def test_two_class_output_layer():
    net = build_classifier(ClassifierSpec(n_classes=2))
    assert net.layers[-2].n_params == 128 * 2 + 2


def test_autoencoder_parameter_count_and_latent():
    net = build_autoencoder()
    assert [layer.n_params for layer in net.layers if layer.n_params] == \
        [40100, 10100, 2020, 2100, 10100, 40400]
    assert net.n_params == 104_820
    x = np.random.default_rng(0).normal(size=(3, 400))
    assert encode(net, x).shape == (3, 20)
    assert net.layers[-1].kind == "dense"  # linear output


def test_zero_weight_autoencoder_outputs_final_bias():
    net = build_autoencoder(AutoencoderSpec(input_len=8, hidden=(4,), latent=2))
    for layer in net.layers:
        for p in layer.params.values():
            p[:] = 0.0
    bias = np.linspace(-1, 1, 8).astype(np.float32)
    net.layers[-1].params["bias"][:] = bias
    x = np.random.default_rng(1).normal(size=(5, 8))
    np.testing.assert_array_equal(net.predict(x), np.broadcast_to(bias, (5, 8)))
    re = reconstruction_error(net, x)
    assert re.dtype == np.float64
    np.testing.assert_allclose(re, np.mean((x.astype(np.float32) - bias) ** 2, axis=1), rtol=1e-6)


@pytest.mark.parametrize("kw", [dict(n_classes=1), dict(kernel_size=0), dict(dropout=1.0),
                                dict(input_len=8, kernel_size=5)])
def test_classifier_spec_invalid(kw):
    with pytest.raises(SpecInvalid):
        ClassifierSpec(**kw)


def test_autoencoder_spec_invalid():
    with pytest.raises(SpecInvalid):
        AutoencoderSpec(latent=0)


# --- training ---------------------------------------------------------------

SMALL = ClassifierSpec(input_len=30, conv_filters=(3, 4), kernel_size=3, dense_units=8,
                       n_classes=3)


def _toy_classes(rng, n=30, length=30):
    centers = rng.normal(size=(3, length))
    y = np.repeat(np.arange(3), n)
    X = centers[y] + 0.1 * rng.normal(size=(3 * n, length))
    return X, y


def test_train_classifier_single_class_rejected(rng):
    X = rng.normal(size=(10, 30))
    with pytest.raises(ValidationError):
        train_classifier((X, np.zeros(10, int)), (X, np.zeros(10, int)))


def test_train_classifier_deterministic(rng):
    X, y = _toy_classes(rng)
    cfg = TrainConfig(max_epochs=5, batch_size=16, seed=4)
    n1, h1 = train_classifier((X, y), (X, y), cfg, SMALL)
    n2, h2 = train_classifier((X, y), (X, y), cfg, SMALL)
    assert h1.to_csv() == h2.to_csv()
    assert nn.checkpoint.dumps(n1) == nn.checkpoint.dumps(n2)


def test_train_classifier_learns_toy(rng):
    X, y = _toy_classes(rng)
    net, _ = train_classifier((X, y), (X, y), TrainConfig(batch_size=16, seed=0), SMALL)
    assert np.mean(predict_pixels(net, X)[0] == y) >= 0.99


def test_train_autoencoder_deterministic(rng):
    X = rng.normal(size=(40, 12))
    spec = AutoencoderSpec(input_len=12, hidden=(8,), latent=3)
    cfg = TrainConfig(max_epochs=4, batch_size=16, lr_factor=0.5)
    _, h1 = train_autoencoder(X, X, cfg, spec)
    _, h2 = train_autoencoder(X, X, cfg, spec)
    assert h1.to_csv() == h2.to_csv()
    assert min(h1.val_losses) >= 0.0


@pytest.mark.slow
def test_autoencoder_reconstructs_low_dimensional_subspace():
    rng = np.random.default_rng(0)
    i = np.linspace(0, 1, 400)
    basis = np.stack([np.sin(2 * np.pi * i), np.cos(3 * np.pi * i), i - 0.5])
    X = rng.normal(size=(800, 3)) @ basis
    _, hist = train_autoencoder(X[:600], X[600:])
    assert hist.val_losses[hist.best_epoch] < 1e-3


# --- inference --------------------------------------------------------------

def _engineered_net():
    net = build_classifier(ClassifierSpec(input_len=30, conv_filters=(2,), kernel_size=3,
                                          dense_units=4, n_classes=12))
    net.layers[-2].params["weight"][:] = 0.0
    net.layers[-2].params["bias"][:] = 0.0
    net.layers[-2].params["bias"][[3, 7]] = 2.0
    return net


def test_predict_pixels_tie_goes_to_lowest_index(rng):
    idx, probs = predict_pixels(_engineered_net(), rng.normal(size=(4, 30)))
    assert idx.tolist() == [3, 3, 3, 3]
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_predict_pixels_totality_and_shift_invariance(rng):
    net = build_classifier(ClassifierSpec(input_len=30, conv_filters=(2,), kernel_size=3,
                                          dense_units=4))
    x = rng.normal(size=(6, 30))
    idx, probs = predict_pixels(net, x)
    assert idx.shape == (6,) and np.all((0 <= idx) & (idx < 12))
    net.layers[-2].params["bias"] += np.float32(5.0)
    idx2, probs2 = predict_pixels(net, x)
    assert np.array_equal(idx, idx2)
    np.testing.assert_allclose(probs, probs2, atol=1e-6)


def test_predict_pixels_shape_mismatch(rng):
    with pytest.raises(ShapeMismatch):
        predict_pixels(_engineered_net(), rng.normal(size=(2, 31)))


def test_reconstruction_error_identity_network():
    net = nn.Sequential([Dense(4, 4)], (4,))
    net.layers[0].params["weight"][:] = np.eye(4)
    net.layers[0].params["bias"][:] = 0.0
    x = np.array([[0.5, 1.0, -2.0, 0.25]])
    assert reconstruction_error(net, x).tolist() == [0.0]


# --- threshold --------------------------------------------------------------

def test_fit_threshold_examples():
    assert fit_threshold(np.arange(1, 21)) == 19.05
    assert fit_threshold(np.full(25, 0.37)) == 0.37
    with pytest.raises(TooFewSamples):
        fit_threshold(np.arange(19))
    with pytest.raises(ValidationError):
        fit_threshold(np.arange(30), 1.0)


def test_fit_threshold_matches_numpy_linear():
    x = np.random.default_rng(3).exponential(size=137)
    for q in (0.5, 0.9, 0.95, 0.99):
        assert fit_threshold(x, q) == pytest.approx(np.quantile(x, q, method="linear"), rel=1e-12)


@given(arrays(np.float64, st.integers(20, 300), elements=st.floats(0, 1e3)),
       st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_fit_threshold_properties(x, q1, q2):
    lo, hi = sorted((q1, q2))
    assert fit_threshold(x, lo) <= fit_threshold(x, hi)
    t = fit_threshold(x, hi)
    assert np.mean(x > t) <= (1 - hi) + 1 / x.size
    assert fit_threshold(2.5 * x, hi) == pytest.approx(2.5 * t, rel=1e-9, abs=1e-12)


# --- detection --------------------------------------------------------------

def test_detection_rules():
    res = detect_errors([0.1, 0.2, 0.3], 0.5, ["a", "a", "a"])
    assert res.object_target == {"a": True}
    res = detect_errors([0.1, 0.9], 0.5, ["b", "b"])
    assert res.object_target == {"b": False}  # tie -> non-target
    assert detect_errors([0.5], 0.5, ["c"]).pixel_target.tolist() == [True]  # boundary is target
    with pytest.raises(EmptyObject):
        object_decision([])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.randoms())
def test_detection_invariant_under_pixel_order(errors, rnd):
    perm = list(range(len(errors)))
    rnd.shuffle(perm)
    a = detect_errors(errors, 0.5, ["o"] * len(errors))
    b = detect_errors([errors[i] for i in perm], 0.5, ["o"] * len(errors))
    assert a.object_target == b.object_target


# --- estimators -------------------------------------------------------------

def test_cnn_estimator_round_trip(tmp_path, rng):
    X, y = _toy_classes(rng)
    labels = np.array(["x", "y", "z"])[y]
    est = SpectralCNNClassifier(conv_filters=(3, 4), kernel_size=3, dense_units=8,
                                batch_size=16, max_epochs=30, random_state=0)
    assert clone(est).get_params() == est.get_params()
    est.fit(X, labels)
    assert est.score(X, labels) >= 0.95
    est.save(tmp_path / "c.ckpt")
    back = SpectralCNNClassifier.load(tmp_path / "c.ckpt")
    assert np.array_equal(back.predict_proba(X), est.predict_proba(X))
    assert list(back.classes_) == ["x", "y", "z"]
    assert back.dense_units == 8 and back.conv_filters == (3, 4)


def test_autoencoder_detector_round_trip(tmp_path, rng):
    X = rng.normal(size=(80, 16)) * 0.1 + np.linspace(0, 1, 16)
    det = AutoencoderDetector(hidden=(8,), latent=4, max_epochs=20, random_state=0).fit(X)
    assert det.threshold_ > 0
    assert np.mean(det.training_errors_ > det.threshold_) <= 0.05 + 1 / len(det.training_errors_)
    far = X + 5.0
    assert np.all(det.predict(far) == -1)
    det.save(tmp_path / "a.ckpt")
    back = AutoencoderDetector.load(tmp_path / "a.ckpt")
    assert back.threshold_ == det.threshold_ and back.target_label == "C1"
    assert np.array_equal(back.reconstruction_error(X), det.reconstruction_error(X))
    assert back.hidden == (8,) and back.latent == 4
