"""Loss functions returning ``(loss, grad)`` pairs."""

import numpy as np

from ..exceptions import IndexOutOfRange, ShapeMismatch


def cross_entropy(logits, targets):
    """Mean categorical cross-entropy on raw logits.

    Returns the scalar loss and its gradient with respect to ``logits``,
    ``(softmax(logits) - onehot(targets)) / batch``.
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ShapeMismatch(f"logits must be (batch, C>=2), got {logits.shape}")
    n, n_classes = logits.shape
    if targets.shape != (n,):
        raise ShapeMismatch(f"expected {n} targets, got shape {targets.shape}")
    if not np.issubdtype(targets.dtype, np.integer):
        raise IndexOutOfRange("targets must be integer class indices")
    if targets.size and (targets.min() < 0 or targets.max() >= n_classes):
        raise IndexOutOfRange(f"targets must lie in [0, {n_classes})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_norm
    rows = np.arange(n)
    loss = -float(np.mean(log_p[rows, targets], dtype=np.float64))
    grad = np.exp(log_p)
    grad[rows, targets] -= 1
    return loss, (grad / n).astype(logits.dtype, copy=False)


def mse(output, target):
    """Mean squared error over all elements and its gradient."""
    output = np.asarray(output)
    target = np.asarray(target)
    if output.shape != target.shape:
        raise ShapeMismatch(f"output {output.shape} vs target {target.shape}")
    diff = output - target
    loss = float(np.mean(np.square(diff, dtype=np.float64)))
    return loss, (2.0 * diff / diff.size).astype(output.dtype, copy=False)


LOSSES = {"cross_entropy": cross_entropy, "mse": mse}
