"""Exact inversion of square linear models, conditioning probe, ReLU capacity."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from . import gates
from .inversion import SHIFT_STREAM, shifted_input
from .layers import Model, LinearModel, ReLU, ResidualBlock
from .tensor import SeededRng, derive_seed, gaussian_draw, l2_norm

# |pivot| / max|W| below this counts as singular
PIVOT_RTOL = {64: 1e-12, 32: 1e-6}
OUTPUT_NOISE_STREAM = 2


class SingularLayerError(ValueError):
    def __init__(self, layer: int, pivot: float):
        super().__init__(f"layer {layer} is singular at working precision (relative pivot {pivot:.3g})")
        self.layer = layer


class PrecisionWarning(UserWarning):
    """Exact inversion at 32-bit is not expected to round-trip accurately."""


def invert_linear(model: LinearModel, o: np.ndarray) -> np.ndarray:
    """Solve ``forward(x) = o`` by undoing ``x -> W x + b`` from the last layer back.

    Each layer is LU-factorized with partial pivoting; a relative pivot below
    ``PIVOT_RTOL`` raises :class:`SingularLayerError` naming the (1-based) layer.
    """
    prec = model.precision
    dt = model.weights[0].dtype
    x = np.asarray(o, dtype=dt).reshape(-1)
    if x.size != model.width:
        raise ValueError(f"expected {model.width} output elements, got {x.size}")
    if prec == 32:
        warnings.warn("exact inversion at 32-bit precision; expect large round-trip error",
                      PrecisionWarning, stacklevel=2)
    for idx in range(len(model.weights), 0, -1):
        w, b = model.weights[idx - 1], model.biases[idx - 1]
        with warnings.catch_warnings():
            # singularity is reported below with the layer index
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(w, check_finite=True)
        scale = float(np.abs(w).max()) or 1.0
        rel = float(np.abs(np.diag(lu)).min()) / scale
        if rel < PIVOT_RTOL[prec]:
            raise SingularLayerError(idx, rel)
        x = scipy.linalg.lu_solve((lu, piv), x - b).astype(dt)
    return x


@dataclass
class ProbeResult:
    rows: list[tuple[int, float, float, float]]  # seed, |a - a''|, |a - a'|, ratio

    @property
    def ratios(self) -> np.ndarray:
        return np.array([r[3] for r in self.rows])

    @property
    def median(self) -> float:
        return float(np.median(self.ratios))

    def to_csv(self, comment: str | None = None) -> str:
        buf = io.StringIO()
        if comment:
            buf.write(f"# {comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "dist_a_app", "dist_a_ap", "ratio"])
        for seed, dpp, dp, r in self.rows:
            w.writerow([seed, repr(dpp), repr(dp), repr(r)])
        return buf.getvalue()


def conditioning_probe(model: LinearModel, a: np.ndarray, sigma_out: float = gates.PROBE_SIGMA_OUT,
                       sigma_in: float = gates.SHIFT_SIGMA, seeds: Iterable[int] = range(10)) -> ProbeResult:
    """Compare the input shift from inverting a noisy output with a plain input shift.

    Per seed: ``a'' = invert(forward(a) + N(0, sigma_out))`` and
    ``a' = a + N(0, sigma_in)``; the ratio is ``|a - a''| / |a - a'|``.
    """
    if not (sigma_out > 0 and sigma_in > 0):
        raise ValueError("both noise widths must be positive")
    a = np.asarray(a, dtype=model.weights[0].dtype).reshape(-1)
    o = model.forward(a)
    rows = []
    for seed in seeds:
        noise = gaussian_draw(SeededRng(derive_seed(seed, OUTPUT_NOISE_STREAM)), o.shape, 0.0, sigma_out,
                              model.precision)
        a_pp = invert_linear(model, o + noise)
        a_p = shifted_input(a, sigma_in, derive_seed(seed, SHIFT_STREAM))
        dpp, dp = l2_norm(a - a_pp), l2_norm(a - a_p)
        rows.append((int(seed), dpp, dp, dpp / dp))
    return ProbeResult(rows)


@dataclass(frozen=True)
class CapacityQuery:
    m: int
    p: float
    n: int

    def __post_init__(self):
        if self.m < 1 or self.n < 0:
            raise ValueError("need m >= 1 and n >= 0")
        if not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")


def relu_capacity(q: CapacityQuery) -> int:
    """Width ``ceil(m * (1/p)**n)`` a layer at depth n needs to keep all input information.

    ``p`` is read through its decimal representation, so 0.1 means exactly 1/10.
    """
    p = Fraction(repr(float(q.p)))
    return math.ceil(q.m * (1 / p) ** q.n)


def _relu_preactivations(layers: Sequence, x: np.ndarray, out: list) -> np.ndarray:
    for layer in layers:
        if isinstance(layer, ReLU):
            out.append(x)
        if isinstance(layer, ResidualBlock):
            x = x + _relu_preactivations(layer.inner, x, out)
        else:
            x, _ = layer.forward(x)
    return x


def estimate_zero_fraction(model: Model, inputs) -> list[float]:
    """Fraction of pre-activations ``<= 0`` at each ReLU, in forward order.

    Returns an empty list for models without ReLU layers.
    """
    x = np.stack([model.check_input(t) for t in inputs])
    pre: list[np.ndarray] = []
    _relu_preactivations(model.layers, x, pre)
    return [float(np.count_nonzero(p <= 0) / p.size) for p in pre]
