"""The 1D-CNN textile classifier and the autoencoder target detector.

Both are assembled from :mod:`fiberspec.nn` parts. Functional builders and
trainers are exposed alongside scikit-learn compatible estimators
(:class:`SpectralCNNClassifier`, :class:`AutoencoderDetector`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, OutlierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import nn
from .exceptions import (EmptyObject, LengthMismatch, ShapeMismatch, SpecInvalid,
                         TooFewSamples, ValidationError)
from .nn import (BatchNorm1d, Conv1d, Dense, Dropout, Flatten, ReLU, Sequential,
                 Softmax, TrainConfig)

# class order used throughout reports
TEXTILE_LABELS = ("C1", "P1", "S1", "L1", "N1", "W1", "V1", "VLP1",
                  "CP1 9:1", "CP1 8:2", "CP1 7:3", "CE1")

CLASSIFIER_TRAIN_DEFAULTS = dict(initial_lr=1e-3, batch_size=128, lr_factor=0.2,
                                 lr_patience=5, early_stop_patience=7)
AUTOENCODER_TRAIN_DEFAULTS = dict(initial_lr=1e-3, batch_size=16, lr_factor=0.5,
                                  lr_patience=5, early_stop_patience=7)


@dataclass
class ClassifierSpec:
    input_len: int = 400
    conv_filters: tuple = (20, 32)
    kernel_size: int = 5
    dense_units: int = 128
    dropout: float = 0.5
    n_classes: int = 12

    def __post_init__(self):
        self.conv_filters = tuple(int(f) for f in self.conv_filters)
        if self.n_classes < 2:
            raise SpecInvalid("a classifier needs at least two classes")
        if not self.conv_filters or min(self.conv_filters) < 1:
            raise SpecInvalid("conv_filters must be positive")
        if self.kernel_size < 1 or self.dense_units < 1:
            raise SpecInvalid("kernel_size and dense_units must be positive")
        if not 0 <= self.dropout < 1:
            raise SpecInvalid("dropout must lie in [0, 1)")
        if self.input_len - len(self.conv_filters) * (self.kernel_size - 1) < 1:
            raise SpecInvalid("input too short for the convolution stack")


@dataclass
class AutoencoderSpec:
    input_len: int = 400
    hidden: tuple = (100, 100)
    latent: int = 20

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.input_len < 1 or self.latent < 1 or any(h < 1 for h in self.hidden):
            raise SpecInvalid("layer widths must be positive")


def build_classifier(spec: ClassifierSpec | None = None, seed: int = 0) -> Sequential:
    """conv-relu blocks, flatten, dense, batchnorm, dropout, relu, dense, softmax."""
    spec = spec or ClassifierSpec()
    layers, channels, length = [], 1, spec.input_len
    for filters in spec.conv_filters:
        layers += [Conv1d(channels, filters, spec.kernel_size), ReLU()]
        channels, length = filters, length - spec.kernel_size + 1
    layers += [
        Flatten(),
        Dense(channels * length, spec.dense_units),
        BatchNorm1d(spec.dense_units),
        Dropout(spec.dropout),
        ReLU(),
        Dense(spec.dense_units, spec.n_classes),
        Softmax(),
    ]
    return Sequential(layers, (spec.input_len,), seed=seed)


def build_autoencoder(spec: AutoencoderSpec | None = None, seed: int = 0) -> Sequential:
    """Mirrored dense stack with ReLU on every hidden layer and a linear output."""
    spec = spec or AutoencoderSpec()
    widths = [spec.input_len, *spec.hidden, spec.latent, *reversed(spec.hidden)]
    layers = []
    for a, b in zip(widths[:-1], widths[1:]):
        layers += [Dense(a, b), ReLU()]
    layers.append(Dense(widths[-1], spec.input_len))
    return Sequential(layers, (spec.input_len,), seed=seed)


def latent_index(network: Sequential) -> int:
    """Index just past the narrowest hidden activation of an autoencoder."""
    dense = [i for i, layer in enumerate(network.layers) if isinstance(layer, Dense)]
    narrowest = min(dense[:-1], key=lambda i: network.layers[i].out_features)
    return narrowest + 2


def encode(network: Sequential, X) -> np.ndarray:
    return network.forward(np.asarray(X), stop=latent_index(network))


def _train_config(defaults: dict, cfg: TrainConfig | None) -> TrainConfig:
    return cfg if cfg is not None else TrainConfig(**defaults)


def train_classifier(train, val, cfg: TrainConfig | None = None,
                     spec: ClassifierSpec | None = None):
    """Fit a fresh classifier. ``train``/``val`` are ``(X, class_index)``
    pairs. Returns ``(network, history)``."""
    X, y = np.asarray(train[0]), np.asarray(train[1])
    if len(np.unique(y)) < 2:
        raise ValidationError("classifier training needs at least two classes")
    spec = spec or ClassifierSpec(input_len=X.shape[1], n_classes=int(max(y.max(), np.max(val[1])) + 1))
    if X.shape[1] != spec.input_len:
        raise ShapeMismatch(f"spectra have {X.shape[1]} channels, model expects {spec.input_len}")
    if y.min() < 0 or y.max() >= spec.n_classes:
        raise ValidationError(f"labels must lie in [0, {spec.n_classes})")
    cfg = _train_config(CLASSIFIER_TRAIN_DEFAULTS, cfg)
    net = build_classifier(spec, seed=cfg.seed)
    history = nn.fit(net, (X, y), val, cfg, loss="cross_entropy")
    return net, history


def train_autoencoder(train, val, cfg: TrainConfig | None = None,
                      spec: AutoencoderSpec | None = None):
    """Fit a fresh autoencoder on target spectra. ``train``/``val`` are
    arrays of spectra. Returns ``(network, history)``."""
    X, Xv = np.asarray(train), np.asarray(val)
    spec = spec or AutoencoderSpec(input_len=X.shape[1])
    if X.shape[1] != spec.input_len:
        raise ShapeMismatch(f"spectra have {X.shape[1]} channels, model expects {spec.input_len}")
    cfg = _train_config(AUTOENCODER_TRAIN_DEFAULTS, cfg)
    net = build_autoencoder(spec, seed=cfg.seed)
    history = nn.fit(net, (X, X), (Xv, Xv), cfg, loss="mse")
    return net, history


def predict_pixels(network: Sequential, X) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode class indices and probabilities; ties go to the lowest index."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1:] != network.input_shape:
        raise ShapeMismatch(f"expected (n, {network.input_shape[0]}) spectra, got {X.shape}")
    logits = np.concatenate([network.logits(X[i:i + 512]) for i in range(0, len(X), 512)]) \
        if len(X) else np.empty((0, network.shapes[-1][0]), dtype=network.dtype)
    probs = nn.softmax(logits.astype(np.float64)) if len(X) else logits.astype(np.float64)
    return np.argmax(logits, axis=1), probs


def reconstruction_error(network: Sequential, X) -> np.ndarray:
    """Per-spectrum mean squared reconstruction error, in float64."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1:] != network.input_shape:
        raise ShapeMismatch(f"expected (n, {network.input_shape[0]}) spectra, got {X.shape}")
    recon = network.predict(X).astype(np.float64)
    target = X.astype(network.dtype).astype(np.float64)
    return np.mean((recon - target) ** 2, axis=1)


def fit_threshold(errors, quantile: float = 0.95) -> float:
    """Empirical quantile with linear interpolation between order statistics.

    With ``h = (n - 1) * q`` on 0-based sorted values ``x``, the threshold is
    ``x[floor(h)] + (h - floor(h)) * (x[ceil(h)] - x[floor(h)])``.
    """
    x = np.sort(np.asarray(errors, dtype=np.float64).ravel())
    if x.size < 20:
        raise TooFewSamples(f"need at least 20 values, got {x.size}")
    if not 0 < quantile < 1:
        raise ValidationError("quantile must lie in (0, 1)")
    h = (x.size - 1) * quantile
    lo = int(np.floor(h))
    hi = min(lo + 1, x.size - 1)
    frac = h - lo
    if frac == 0:
        return float(x[lo])
    return float(x[lo] + frac * (x[hi] - x[lo]))


@dataclass
class DetectionResult:
    errors: np.ndarray
    pixel_target: np.ndarray
    object_ids: list
    object_target: dict = field(default_factory=dict)
    object_counts: dict = field(default_factory=dict)


def object_decision(pixel_target) -> bool:
    """Majority vote of pixel decisions; a tie counts as non-target."""
    pixel_target = np.asarray(pixel_target, dtype=bool)
    if pixel_target.size == 0:
        raise EmptyObject("object has no pixels")
    return int(pixel_target.sum()) * 2 > pixel_target.size


def detect_errors(errors, threshold: float, object_ids) -> DetectionResult:
    """Threshold precomputed reconstruction errors; group by object."""
    errors = np.asarray(errors, dtype=np.float64)
    object_ids = list(object_ids)
    if len(object_ids) != errors.size:
        raise LengthMismatch("one object id per spectrum is required")
    pixel_target = errors <= threshold
    groups: dict = {}
    for i, oid in enumerate(object_ids):
        groups.setdefault(oid, []).append(i)
    result = DetectionResult(errors, pixel_target, object_ids)
    for oid, idx in groups.items():
        result.object_target[oid] = object_decision(pixel_target[idx])
        result.object_counts[oid] = (int(pixel_target[idx].sum()), len(idx))
    return result


def detect(detector: "AutoencoderDetector", X, object_ids) -> DetectionResult:
    """Pixel decision ``RE <= threshold`` and per-object majority vote."""
    check_is_fitted(detector, "threshold_")
    return detect_errors(detector.reconstruction_error(X), detector.threshold_, object_ids)


def _stratified_holdout(y, fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    train, val = [], []
    for cls in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == cls))
        n_val = max(1, int(np.floor(fraction * idx.size))) if idx.size > 1 else 0
        val.extend(idx[:n_val])
        train.extend(idx[n_val:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(val, dtype=int))


class SpectralCNNClassifier(ClassifierMixin, BaseEstimator):
    """1D-CNN classifier over preprocessed (derivative) spectra.

    Parameters
    ----------
    conv_filters, kernel_size, dense_units, dropout
        Architecture knobs; defaults give the 400 -> 396x20 -> 392x32 stack.
    learning_rate, batch_size, lr_factor, lr_patience, early_stop_patience,
    max_epochs, min_lr
        Training schedule. Defaults follow the published setup.
    classes : sequence, optional
        Explicit label order for the output units. Defaults to the sorted
        unique training labels.
    validation_fraction : float
        Per-class share held out for validation when ``fit`` is not given
        explicit validation data.
    random_state : int
        Seeds weight initialization, shuffling and dropout.
    """

    def __init__(self, conv_filters=(20, 32), kernel_size=5, dense_units=128, dropout=0.5,
                 learning_rate=1e-3, batch_size=128, lr_factor=0.2, lr_patience=5,
                 early_stop_patience=7, max_epochs=200, min_lr=1e-6, classes=None,
                 validation_fraction=0.2, random_state=0):
        self.conv_filters = conv_filters
        self.kernel_size = kernel_size
        self.dense_units = dense_units
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.lr_factor = lr_factor
        self.lr_patience = lr_patience
        self.early_stop_patience = early_stop_patience
        self.max_epochs = max_epochs
        self.min_lr = min_lr
        self.classes = classes
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(initial_lr=self.learning_rate, batch_size=self.batch_size,
                           lr_factor=self.lr_factor, lr_patience=self.lr_patience,
                           early_stop_patience=self.early_stop_patience,
                           max_epochs=self.max_epochs, min_lr=self.min_lr,
                           seed=self.random_state)

    def _encode(self, y):
        lookup = {c: i for i, c in enumerate(self.classes_)}
        try:
            return np.array([lookup[v] for v in y], dtype=np.int64)
        except KeyError as exc:
            raise ValidationError(f"label {exc.args[0]!r} not among classes") from None

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        if self.classes is not None:
            self.classes_ = np.asarray(list(self.classes))
        else:
            self.classes_ = np.unique(y)
        if len(np.unique(y)) < 2 or len(self.classes_) < 2:
            raise ValidationError("classifier training needs at least two classes")
        codes = self._encode(y)
        if X_val is None:
            tr, va = _stratified_holdout(codes, self.validation_fraction, self.random_state)
            X, X_val, codes, val_codes = X[tr], X[va], codes[tr], codes[va]
        else:
            X_val, y_val = check_X_y(X_val, y_val, dtype=np.float64)
            val_codes = self._encode(y_val)
        self.n_features_in_ = X.shape[1]
        spec = ClassifierSpec(input_len=X.shape[1], conv_filters=self.conv_filters,
                              kernel_size=self.kernel_size, dense_units=self.dense_units,
                              dropout=self.dropout, n_classes=len(self.classes_))
        self.network_, self.history_ = train_classifier(
            (X, codes), (X_val, val_codes), self._train_config(), spec)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        return predict_pixels(self.network_, X)[1]

    def predict(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        return self.classes_[predict_pixels(self.network_, X)[0]]

    def save(self, path):
        check_is_fitted(self, "network_")
        kind = "int" if np.issubdtype(self.classes_.dtype, np.integer) else "str"
        nn.save(path, self.network_, {"model": "classifier", "label_kind": kind,
                                      "classes": "|".join(map(str, self.classes_))})

    @classmethod
    def load(cls, path) -> "SpectralCNNClassifier":
        network, meta = nn.load(path)
        if meta.get("model") != "classifier":
            raise ValidationError(f"{path} does not hold a classifier")
        dense = [layer for layer in network.layers if isinstance(layer, Dense)]
        convs = [layer for layer in network.layers if isinstance(layer, Conv1d)]
        drop = [layer for layer in network.layers if isinstance(layer, Dropout)]
        est = cls(conv_filters=tuple(c.out_channels for c in convs),
                  kernel_size=convs[0].kernel_size if convs else 5,
                  dense_units=dense[0].out_features,
                  dropout=drop[0].rate if drop else 0.0,
                  random_state=int(meta.get("seed", 0)))
        classes = str(meta["classes"]).split("|")
        if meta.get("label_kind") == "int":
            classes = [int(c) for c in classes]
        est.classes_ = np.asarray(classes)
        est.network_ = network
        est.n_features_in_ = network.input_shape[0]
        return est


class AutoencoderDetector(OutlierMixin, BaseEstimator):
    """One-class detector: an autoencoder trained on the target textile only.

    Spectra whose reconstruction error is at most ``threshold_`` (the
    ``quantile`` of training errors) are predicted as target (+1), all others
    as non-target (-1), following the scikit-learn outlier convention.
    """

    def __init__(self, hidden=(100, 100), latent=20, learning_rate=1e-3, batch_size=16,
                 lr_factor=0.5, lr_patience=5, early_stop_patience=7, max_epochs=200,
                 min_lr=1e-6, quantile=0.95, target_label="C1", validation_fraction=0.25,
                 random_state=0):
        self.hidden = hidden
        self.latent = latent
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.lr_factor = lr_factor
        self.lr_patience = lr_patience
        self.early_stop_patience = early_stop_patience
        self.max_epochs = max_epochs
        self.min_lr = min_lr
        self.quantile = quantile
        self.target_label = target_label
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def fit(self, X, y=None, X_val=None):
        X = check_array(X, dtype=np.float64)
        if X_val is None:
            tr, va = _stratified_holdout(np.zeros(len(X)), self.validation_fraction,
                                         self.random_state)
            X, X_val = X[tr], X[va]
        else:
            X_val = check_array(X_val, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        cfg = TrainConfig(initial_lr=self.learning_rate, batch_size=self.batch_size,
                          lr_factor=self.lr_factor, lr_patience=self.lr_patience,
                          early_stop_patience=self.early_stop_patience,
                          max_epochs=self.max_epochs, min_lr=self.min_lr,
                          seed=self.random_state)
        spec = AutoencoderSpec(input_len=X.shape[1], hidden=self.hidden, latent=self.latent)
        self.network_, self.history_ = train_autoencoder(X, X_val, cfg, spec)
        self.training_errors_ = reconstruction_error(self.network_, X)
        self.threshold_ = fit_threshold(self.training_errors_, self.quantile)
        return self

    def reconstruction_error(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        return reconstruction_error(self.network_, X)

    def score_samples(self, X):
        return -self.reconstruction_error(X)

    def decision_function(self, X):
        check_is_fitted(self, "threshold_")
        return self.threshold_ - self.reconstruction_error(X)

    def predict(self, X):
        return np.where(self.decision_function(X) >= 0, 1, -1)

    def save(self, path):
        check_is_fitted(self, "threshold_")
        nn.save(path, self.network_, {"model": "autoencoder", "threshold": float(self.threshold_),
                                      "quantile": float(self.quantile),
                                      "target_label": self.target_label})

    @classmethod
    def load(cls, path) -> "AutoencoderDetector":
        network, meta = nn.load(path)
        if meta.get("model") != "autoencoder":
            raise ValidationError(f"{path} does not hold an autoencoder")
        dense = [layer for layer in network.layers if isinstance(layer, Dense)]
        widths = [d.out_features for d in dense[:-1]]
        k = int(np.argmin(widths))
        est = cls(hidden=tuple(widths[:k]), latent=widths[k], quantile=float(meta["quantile"]),
                  target_label=str(meta["target_label"]), random_state=int(meta.get("seed", 0)))
        est.network_ = network
        est.threshold_ = float(meta["threshold"])
        est.n_features_in_ = network.input_shape[0]
        return est
