"""Sequential container, training loop and finite-difference gradient check."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import Diverged, NonFinite, ShapeMismatch, ValidationError
from .layers import Layer, ReLU, Softmax, _check_finite
from .losses import LOSSES
from .optim import Adam, PlateauMonitor, TrainConfig

logger = logging.getLogger(__name__)

INIT_SCHEME = "kaiming_uniform"


class Sequential:
    """An ordered stack of layers sharing one floating-point dtype."""

    def __init__(self, layers: list[Layer], input_shape: tuple, *, seed: int = 0,
                 dtype=np.float32, init: bool = True):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        self.seed = seed
        shape = self.input_shape
        self.shapes = [shape]
        for layer in self.layers:
            shape = layer.output_shape(shape)
            self.shapes.append(shape)
        if init:
            rng = np.random.default_rng(seed)
            for layer in self.layers:
                layer.init_params(rng, self.dtype)

    # ---- parameters -----------------------------------------------------
    def named_params(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers)
                for k, v in layer.params.items()}

    def named_grads(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers)
                for k, v in layer.grads.items()}

    def named_buffers(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers)
                for k, v in layer.buffers.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: v.copy() for k, v in self.named_params().items()}
        state.update({k: v.copy() for k, v in self.named_buffers().items()})
        return state

    def load_state_dict(self, state: dict) -> None:
        for key, value in state.items():
            idx, name = key.split(".", 1)
            layer = self.layers[int(idx)]
            store = layer.params if name in layer.params else layer.buffers
            if name not in store:
                raise ShapeMismatch(f"unknown tensor {key}")
            if store[name].shape != value.shape:
                raise ShapeMismatch(f"{key}: expected {store[name].shape}, got {value.shape}")
            store[name] = np.array(value, dtype=self.dtype)

    @property
    def n_params(self) -> int:
        """Number of learnable parameters (buffers excluded)."""
        return sum(layer.n_params for layer in self.layers)

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def astype(self, dtype) -> "Sequential":
        """Deep copy with every parameter and buffer cast to ``dtype``."""
        net = copy.deepcopy(self)
        net.dtype = np.dtype(dtype)
        for layer in net.layers:
            layer.astype(net.dtype)
        return net

    # ---- passes ---------------------------------------------------------
    @property
    def has_softmax_head(self) -> bool:
        return bool(self.layers) and isinstance(self.layers[-1], Softmax)

    def forward(self, x, training=False, rng=None, stop=None):
        """Run layers ``[0, stop)`` (all by default)."""
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ShapeMismatch(f"network expects {self.input_shape}, got {x.shape[1:]}")
        for layer in self.layers[:stop]:
            x = _check_finite(layer.forward(x, training=training, rng=rng), layer.kind)
        return x

    def backward(self, grad, stop=None):
        for layer in reversed(self.layers[:stop]):
            grad = layer.backward(grad)
        return grad

    def logits(self, x, training=False, rng=None):
        """Forward pass without a trailing softmax."""
        return self.forward(x, training, rng, stop=-1 if self.has_softmax_head else None)

    def predict(self, x, batch_size: int = 512):
        """Eval-mode forward in batches."""
        x = np.asarray(x, dtype=self.dtype)
        outs = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        if not outs:
            return np.empty((0,) + self.shapes[-1], dtype=self.dtype)
        return np.concatenate(outs)

    def loss_and_backward(self, x, target, loss: str, training=True, rng=None):
        """One forward/backward pass; gradients are accumulated into the layers.

        With ``cross_entropy`` a trailing softmax layer is fused into the loss,
        which then receives the pre-softmax logits.
        """
        loss_fn = LOSSES[loss]
        stop = -1 if loss == "cross_entropy" and self.has_softmax_head else None
        out = self.forward(x, training, rng, stop=stop)
        value, grad = loss_fn(out, target)
        self.backward(grad, stop=stop)
        return value

    def batch_loss(self, x, target, loss: str, batch_size: int = 512) -> float:
        loss_fn = LOSSES[loss]
        stop = -1 if loss == "cross_entropy" and self.has_softmax_head else None
        total = 0.0
        for i in range(0, len(x), batch_size):
            out = self.forward(x[i:i + batch_size], stop=stop)
            value, _ = loss_fn(out, target[i:i + batch_size])
            total += value * len(out)
        return total / len(x)

    def __repr__(self):
        inner = "\n".join(f"  ({i}) {layer!r} -> {shape}"
                          for i, (layer, shape) in enumerate(zip(self.layers, self.shapes[1:])))
        return f"Sequential(input={self.input_shape}\n{inner}\n)"


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    @property
    def val_losses(self) -> list[float]:
        return [r.val_loss for r in self.records]

    @property
    def train_losses(self) -> list[float]:
        return [r.train_loss for r in self.records]

    def __len__(self):
        return len(self.records)

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,lr"]
        lines += [f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.lr!r}" for r in self.records]
        return "\n".join(lines) + "\n"


def _targets(y, loss: str, dtype):
    if loss == "cross_entropy":
        return np.asarray(y, dtype=np.int64)
    return np.asarray(y, dtype=dtype)


def fit(network: Sequential, train, val, cfg: TrainConfig, loss: str = "cross_entropy",
        progress=None) -> History:
    """Train ``network`` in place with Adam, plateau LR decay and early stopping.

    ``train`` and ``val`` are ``(X, y)`` pairs; for ``mse`` the target ``y``
    is an array shaped like the network output. On return the network holds
    the weights of the best validation epoch.
    """
    if loss not in LOSSES:
        raise ValidationError(f"unknown loss {loss!r}")
    X, y = np.asarray(train[0], dtype=network.dtype), _targets(train[1], loss, network.dtype)
    Xv, yv = np.asarray(val[0], dtype=network.dtype), _targets(val[1], loss, network.dtype)
    if len(X) == 0 or len(Xv) == 0:
        raise ValidationError("training and validation sets must be non-empty")
    if len(X) != len(y) or len(Xv) != len(yv):
        raise ShapeMismatch("inputs and targets differ in length")

    shuffle_seq, dropout_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)
    opt = Adam(lr=cfg.initial_lr)
    monitor = PlateauMonitor.from_config(cfg)
    history = History()
    best_state = network.state_dict()
    lr = cfg.initial_lr
    params = network.named_params()

    for epoch in range(cfg.max_epochs):
        order = shuffle_rng.permutation(len(X))
        total = 0.0
        for start in range(0, len(X), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            network.zero_grad()
            try:
                value = network.loss_and_backward(X[idx], y[idx], loss, True, dropout_rng)
                if not np.isfinite(value):
                    raise Diverged(f"training loss became non-finite at epoch {epoch}")
                opt.lr = lr
                opt.step(params, network.named_grads())
            except NonFinite as exc:
                raise Diverged(f"epoch {epoch}: {exc}") from exc
            total += value * len(idx)
        train_loss = total / len(X)
        val_loss = network.batch_loss(Xv, yv, loss)
        if not np.isfinite(val_loss):
            raise Diverged(f"validation loss became non-finite at epoch {epoch}")
        history.records.append(EpochRecord(epoch, train_loss, val_loss, lr))
        new_lr, improved, stop = monitor.update(val_loss, lr)
        if improved:
            best_state = network.state_dict()
        if new_lr != lr:
            logger.info("epoch %d: reducing learning rate to %.3g", epoch, new_lr)
        lr = new_lr
        if progress is not None:
            progress(history.records[-1])
        if stop:
            history.stopped_early = True
            break

    network.load_state_dict(best_state)
    history.best_epoch = monitor.best_epoch
    return history


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    n_kinks: int
    norm_rel_error: float = 0.0

    def __float__(self):
        return self.max_rel_error


def gradient_check(network: Sequential, loss: str, x, target, step: float = 1e-3,
                   seed: int = 0, max_params: int | None = 2000,
                   details: bool = False):
    """Compare backprop gradients against central finite differences.

    Runs on a float64 copy in training mode; dropout masks are reproduced by
    re-seeding the generator for every evaluation. When the network has more
    than ``max_params`` parameters a random subset of that size is checked.
    Coordinates whose +/- perturbation flips a ReLU activation pattern sit
    on a kink where finite differences are meaningless; they are skipped and
    counted. Returns ``max |a - n| / max(1e-8, |a| + |n|)``, or a
    :class:`GradCheckResult` when ``details`` is set; it also carries the
    vector-norm version of the same ratio, which is not dominated by
    coordinates whose gradient is tiny.
    """
    net = network.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    target = _targets(target, loss, np.float64)
    loss_fn = LOSSES[loss]
    stop = -1 if loss == "cross_entropy" and net.has_softmax_head else None
    relus = [layer for layer in net.layers[:stop] if isinstance(layer, ReLU)]

    def pattern():
        return b"".join(np.packbits(layer._mask).tobytes() for layer in relus)

    def evaluate():
        out = net.forward(x, True, np.random.default_rng(seed), stop=stop)
        return loss_fn(out, target)[0], pattern()

    net.zero_grad()
    net.loss_and_backward(x, target, loss, True, np.random.default_rng(seed))
    base = pattern()
    grads = {k: v.copy() for k, v in net.named_grads().items()}
    params = net.named_params()

    index = [(name, i) for name, p in params.items() for i in range(p.size)]
    if max_params is not None and len(index) > max_params:
        pick = np.random.default_rng(seed + 1).choice(len(index), max_params, replace=False)
        index = [index[i] for i in np.sort(pick)]

    worst, kinks = 0.0, 0
    analytic_all, numeric_all = [], []
    for name, i in index:
        flat = params[name].reshape(-1)
        orig = flat[i]
        flat[i] = orig + step
        up, p_up = evaluate()
        flat[i] = orig - step
        down, p_down = evaluate()
        flat[i] = orig
        if p_up != base or p_down != base:
            kinks += 1
            continue
        numeric = (up - down) / (2 * step)
        analytic = grads[name].reshape(-1)[i]
        err = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
        worst = max(worst, err)
        analytic_all.append(analytic)
        numeric_all.append(numeric)
    if details:
        a, n = np.array(analytic_all), np.array(numeric_all)
        norm_err = float(np.linalg.norm(a - n) / max(1e-8, np.linalg.norm(a) + np.linalg.norm(n)))
        return GradCheckResult(worst, len(index) - kinks, kinks, norm_err)
    return worst
