"""Central finite-difference checks shared by the autodiff and acceptance tests.

A coordinate counts as kink-adjacent when the objective is not linear over
[-h, h] around it, detected by a second difference well above rounding.
"""

import numpy as np

from reprinv.autodiff import input_gradient, loss_and_param_gradients
from reprinv.layers import (AvgPool, Conv2d, Dense, Flatten, MaxPool, Model, ReLU, ResidualBlock,
                            forward_to_layer, initialize)
from reprinv.tensor import SeededRng

H = 1e-5


def _rel(fd, g):
    scale = max(abs(fd), abs(g))
    return 0.0 if scale < 1e-10 else abs(fd - g) / scale


def _second_difference_ok(f0, fp, fm, tol):
    return abs(fp - 2 * f0 + fm) <= tol * (1 + abs(f0))


def input_gradient_errors(model, l, a, y_hat, count=50, seed=0, tol=1e-9):
    """Relative errors on ``count`` random non-kink input coordinates.

    Differences are taken per output element before summing, which keeps
    rounding in the central difference near machine precision.
    """
    def terms(x):
        return np.abs(forward_to_layer(model, x, l) - y_hat)

    g = input_gradient(model, l, a, y_hat)
    order = SeededRng(seed).permutation(a.size)
    t0 = terms(a)
    errors = []
    for idx in order:
        e = np.zeros(a.size)
        e[idx] = H
        e = e.reshape(a.shape)
        tp, tm = terms(a + e), terms(a - e)
        if abs(float(np.sum((tp - t0) - (t0 - tm)))) > tol * (1 + float(t0.sum())):
            continue
        fd = float(np.sum(tp - tm)) / (2 * H)
        errors.append(_rel(fd, float(g.reshape(-1)[idx])))
        if len(errors) == count:
            break
    return errors


def param_gradient_errors(model, x, labels, count=50, seed=0, tol=1e-7):
    """Relative errors on ``count`` random non-kink parameter coordinates."""
    def f():
        return loss_and_param_gradients(model, x, labels)[0]

    _, _, grads = loss_and_param_gradients(model, x, labels)
    params = model.params()
    sizes = [p.size for p in params]
    total = sum(sizes)
    offsets = np.cumsum([0] + sizes)
    f0 = f()
    errors = []
    for flat in SeededRng(seed).permutation(total):
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        p, g = params[k].reshape(-1), grads[k].reshape(-1)
        i = flat - offsets[k]
        old = p[i]
        p[i] = old + H
        fp = f()
        p[i] = old - H
        fm = f()
        p[i] = old
        if not _second_difference_ok(f0, fp, fm, tol):
            continue
        errors.append(_rel((fp - fm) / (2 * H), float(g[i])))
        if len(errors) == count:
            break
    return errors


def _conv(cin, cout, k=3, stride=1, pad=1):
    return Conv2d(np.zeros((cout, cin, k, k)), np.zeros(cout), stride, pad)


def kind_models(seed=0):
    """One small 64-bit model per layer kind: ``{kind: (layers, input_shape)}``."""
    cases = {
        "dense": ([Dense(np.zeros((40, 60)), np.zeros(40))], (60,)),
        "conv": ([_conv(3, 4, 3, 2, 1)], (3, 7, 7)),
        "maxpool": ([_conv(3, 3), MaxPool(2)], (3, 6, 6)),
        "avgpool": ([AvgPool(3, 2)], (3, 7, 7)),
        "relu": ([Dense(np.zeros((40, 60)), np.zeros(40)), ReLU()], (60,)),
        "residual": ([ResidualBlock([_conv(3, 3), ReLU(), _conv(3, 3)])], (3, 6, 6)),
    }
    out = {}
    for i, (kind, (layers, shape)) in enumerate(cases.items()):
        initialize(layers, seed + i)
        rng = SeededRng(seed + 100 + i)
        # nonzero biases so ReLU and residual paths see both signs
        for layer in layers:
            for inner in getattr(layer, "inner", [layer]):
                b = getattr(inner, "bias", None)
                if b is not None:
                    b[...] = rng.uniform(b.shape, -0.3, 0.3)
        out[kind] = (layers, shape)
    return out


def input_case(kind, seed=0):
    layers, shape = kind_models(seed)[kind]
    model = Model(layers, shape, 64)
    rng = SeededRng(seed + 7)
    a = rng.uniform(shape, -1, 1)
    y_hat = forward_to_layer(model, rng.uniform(shape, -1, 1), 1)
    return model, a, y_hat


def param_case(kind, seed=0, classes=4, batch=5):
    layers, shape = kind_models(seed)[kind]
    probe = Model(list(layers), shape, 64)
    n = int(np.prod(probe.output_shape))
    head = [Flatten(), Dense(np.zeros((classes, n)), np.zeros(classes))]
    initialize(head, seed + 50)
    model = Model(list(layers) + head, shape, 64)
    rng = SeededRng(seed + 9)
    x = rng.uniform((batch,) + shape, -1, 1)
    labels = rng.integers(batch, classes)
    return model, x, labels
