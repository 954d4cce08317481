"""Reverse-mode gradients through a model's layer stack.

The forward pass records a tape of ``(layer, cache)`` pairs; the backward
pass walks it in reverse calling each layer's ``backward``. Inversion only
tapes the layers needed for the requested embedding.
"""

from __future__ import annotations

import numpy as np

from .layers import Model


class Tape:
    def __init__(self):
        self.entries = []

    def run(self, layers, x):
        for layer in layers:
            x, cache = layer.forward(x)
            self.entries.append((layer, cache))
        return x

    def backward(self, dy):
        """Push ``dy`` back to the tape input; returns (dx, param grads in layer order)."""
        grads: list[np.ndarray] = []
        for layer, cache in reversed(self.entries):
            dy, g = layer.backward(dy, cache)
            grads = g + grads
        return dy, grads


def l1_objective_and_gradient(model: Model, l: int, a_n: np.ndarray, y_hat: np.ndarray):
    """Return ``(sum|y - y_hat|, y, d/da_n)`` for ``y = O_l(a_n)``.

    ``sign(0) = 0``, so an exact preimage is a stationary point.
    """
    a_n = model.check_input(a_n)
    shape = model.embedding_shape(l)
    if np.shape(y_hat) != shape:
        raise ValueError(f"target embedding shape {np.shape(y_hat)} != layer {l} shape {shape}")
    tape = Tape()
    y = tape.run(model.layers[:model.depth_of(l)], a_n[None])[0]
    diff = y - np.asarray(y_hat, dtype=y.dtype)
    g, _ = tape.backward(np.sign(diff)[None])
    return float(np.abs(diff).sum(dtype=np.float64)), y, g[0]


def input_gradient(model: Model, l: int, a_n: np.ndarray, y_hat: np.ndarray) -> np.ndarray:
    return l1_objective_and_gradient(model, l, a_n, y_hat)[2]


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1
    return float(loss), dlogits / n


def loss_and_param_gradients(model: Model, batch_inputs, batch_labels):
    """``(mean loss, logits, grads)`` with grads aligned to ``model.params()``."""
    x = np.asarray(batch_inputs, dtype=model.dtype)
    labels = np.asarray(batch_labels, dtype=np.int64)
    if x.shape[1:] != model.input_shape:
        raise ValueError(f"batch item shape {x.shape[1:]} != model input {model.input_shape}")
    if len(model.output_shape) != 1:
        raise ValueError("model must end in a dense logit layer")
    n_classes = model.output_shape[0]
    if labels.shape != (x.shape[0],):
        raise ValueError("one label per batch item required")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    tape = Tape()
    logits = tape.run(model.layers, x)
    loss, dlogits = softmax_cross_entropy(logits, labels)
    _, grads = tape.backward(dlogits.astype(logits.dtype))
    return loss, logits, grads


def param_gradients(model: Model, batch_inputs, batch_labels) -> list[np.ndarray]:
    return loss_and_param_gradients(model, batch_inputs, batch_labels)[2]
