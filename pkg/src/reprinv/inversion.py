"""Input reconstruction from a layer embedding by gradient descent.

Starting from a random input, each step moves against the gradient of the
L1 distance between the current embedding and the target embedding,
optionally followed by a 3x3 Gaussian blur whose width shrinks linearly
over the run.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import gates
from .autodiff import l1_objective_and_gradient
from .layers import Model, forward_to_layer
from .tensor import SeededRng, blur, derive_seed, gaussian_draw, l2_norm

TRACE_HEADER = ("n", "l1_objective", "m_g", "m_i")

# sub-seed keys split off the run seed
INIT_STREAM = 0
SHIFT_STREAM = 1


class InversionDiverged(RuntimeError):
    def __init__(self, iteration: int, value: float):
        super().__init__(f"objective became non-finite ({value}) at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class EpsilonSchedule:
    """Step size: ``constant`` keeps ``c``; ``decay`` uses ``c * (1 - n / f)``."""

    c: float
    kind: str = "decay"

    def __post_init__(self):
        if self.kind not in ("constant", "decay"):
            raise ValueError(f"unknown epsilon schedule {self.kind!r}")
        if not self.c > 0:
            raise ValueError("epsilon constant must be positive")

    def at(self, n: int, f: int) -> float:
        return self.c if self.kind == "constant" else self.c * (1.0 - n / f)

    def __str__(self):
        return f"{self.c!r}" if self.kind == "constant" else f"decay:{self.c!r}"

    @classmethod
    def parse(cls, text: str) -> "EpsilonSchedule":
        text = text.strip()
        if text.startswith("decay:"):
            return cls(float(text[6:]), "decay")
        return cls(float(text), "constant")


@dataclass(frozen=True)
class BlurSchedule:
    """Blur width falling linearly from ``start`` (first step) to ``end`` (last step)."""

    start: float = 2.4
    end: float = 0.4

    def __post_init__(self):
        if not self.start >= self.end > 0:
            raise ValueError("blur schedule needs start >= end > 0")

    def at(self, n: int, f: int) -> float:
        if f == 1:
            return self.start
        return self.start + (self.end - self.start) * n / (f - 1)

    def __str__(self):
        return f"{self.start!r}:{self.end!r}"

    @classmethod
    def parse(cls, text: str) -> "BlurSchedule | None":
        text = text.strip()
        if text == "off":
            return None
        start, end = text.split(":")
        return cls(float(start), float(end))


@dataclass(frozen=True)
class InversionConfig:
    layer: int
    iterations: int
    epsilon: EpsilonSchedule
    blur: BlurSchedule | None = None
    init_mu: float = 0.7
    init_sigma: float = 0.05
    seed: int = 0
    clamp_input: bool = False
    precision: int = 32

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")


@dataclass
class InversionTrace:
    rows: list[tuple[int, float, float, float]] = field(default_factory=list)
    a_g: np.ndarray | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([r[TRACE_HEADER.index(name)] for r in self.rows])

    @property
    def m_g(self) -> np.ndarray:
        return self.column("m_g")

    @property
    def m_i(self) -> np.ndarray:
        return self.column("m_i")

    def to_csv(self, comment: str | None = None) -> str:
        buf = io.StringIO()
        if comment:
            buf.write(f"# {comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for n, obj, mg, mi in self.rows:
            w.writerow([n, repr(obj), repr(mg), repr(mi)])
        return buf.getvalue()


@dataclass(frozen=True)
class MetricsRecord:
    m_g: float
    m_s: float
    m_i: float
    seed: int
    layer: int

    @property
    def good(self) -> bool:
        return self.m_g < self.m_s


def initial_input(shape, cfg: InversionConfig) -> np.ndarray:
    rng = SeededRng(derive_seed(cfg.seed, INIT_STREAM))
    return gaussian_draw(rng, shape, cfg.init_mu, cfg.init_sigma, cfg.precision)


def invert(model: Model, target_a: np.ndarray, cfg: InversionConfig):
    """Run ``cfg.iterations`` updates and return ``(a_g, trace)``.

    The trace has one row per iterate ``a_0 .. a_f`` holding the L1
    objective, the embedding distance m_g and the input distance m_i.
    """
    model = model.with_precision(cfg.precision)
    target_a = model.check_input(target_a)
    if cfg.blur is not None and target_a.ndim != 3:
        raise ValueError("blur needs a [C, H, W] model input")
    y_hat = forward_to_layer(model, target_a, cfg.layer)
    a = initial_input(model.input_shape, cfg)
    f = cfg.iterations
    trace = InversionTrace()
    # overflow is reported as InversionDiverged, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(f + 1):
            obj, y, g = l1_objective_and_gradient(model, cfg.layer, a, y_hat)
            if not math.isfinite(obj) or not np.all(np.isfinite(a)):
                raise InversionDiverged(n, obj)
            trace.rows.append((n, obj, l2_norm(y - y_hat), l2_norm(a - target_a)))
            if n == f:
                break
            a = a - model.dtype(cfg.epsilon.at(n, f)) * g
            if cfg.blur is not None:
                a = blur(a, cfg.blur.at(n, f))
            if cfg.clamp_input:
                a = np.clip(a, 0, 1)
    trace.a_g = a
    return a, trace


def shifted_input(a: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """``a + N(0, sigma)`` elementwise."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    noise = gaussian_draw(SeededRng(seed), a.shape, 0.0, sigma, 64)
    return (a + noise).astype(a.dtype)


def compute_metrics(model: Model, l: int, a: np.ndarray, a_g: np.ndarray,
                    sigma_ref: float = gates.SHIFT_SIGMA, seed: int = 0) -> MetricsRecord:
    a = model.check_input(a)
    a_g = model.check_input(a_g)
    ref = forward_to_layer(model, a, l)
    a_shift = shifted_input(a, sigma_ref, derive_seed(seed, SHIFT_STREAM))
    return MetricsRecord(
        m_g=l2_norm(forward_to_layer(model, a_g, l) - ref),
        m_s=l2_norm(forward_to_layer(model, a_shift, l) - ref),
        m_i=l2_norm(a - a_g),
        seed=seed,
        layer=l,
    )


@dataclass
class LineSearchResult:
    best: float
    tried: list[tuple[float, float]]  # (c, final m_g); inf marks divergence


def line_search(model: Model, target_a: np.ndarray, cfg_template: InversionConfig,
                candidates: int, seed: int, f_search: int | None = None,
                lo: float = gates.EPS_SEARCH_LO, hi: float = gates.EPS_SEARCH_HI) -> LineSearchResult:
    """Try log-uniform step constants on short runs; keep the lowest final m_g."""
    if candidates < 1:
        raise ValueError("candidates must be >= 1")
    rng = SeededRng(seed)
    cs = np.exp(np.log(lo) + (np.log(hi) - np.log(lo)) * rng.uniform01(candidates))
    iters = f_search or cfg_template.iterations
    tried = []
    for c in cs:
        cfg = replace(cfg_template, iterations=iters, epsilon=EpsilonSchedule(float(c), cfg_template.epsilon.kind))
        try:
            _, trace = invert(model, target_a, cfg)
            final = trace.rows[-1][2]
        except InversionDiverged:
            final = math.inf
        tried.append((float(c), final if math.isfinite(final) else math.inf))
    finite = [t for t in tried if math.isfinite(t[1])]
    if not finite:
        raise RuntimeError("every epsilon candidate diverged: "
                           + ", ".join(f"{c:.3g}" for c, _ in tried))
    best = min(finite, key=lambda t: (t[1], t[0]))
    return LineSearchResult(best[0], tried)


def epsilon_line_search(model: Model, target_a: np.ndarray, cfg_template: InversionConfig,
                        candidates: int, seed: int, f_search: int | None = None) -> float:
    return line_search(model, target_a, cfg_template, candidates, seed, f_search).best


def delta_correlation(m_g: np.ndarray, m_i: np.ndarray, warmup: int = gates.WARMUP) -> float:
    """Pearson correlation of the changes in m_g and m_i measured from iteration ``warmup``.

    Each series is taken relative to its value at ``warmup``, so a negative
    result means m_i moves up while m_g moves down. Returns 0 when either
    series is constant after the warmup.
    """
    g = np.asarray(m_g, dtype=np.float64)
    i = np.asarray(m_i, dtype=np.float64)
    if g.shape != i.shape or g.ndim != 1:
        raise ValueError("m_g and m_i must be equal-length 1-d series")
    if g.size - warmup < 3:
        raise ValueError(f"need at least 3 points after warmup {warmup}")
    dg = g[warmup:] - g[warmup]
    di = i[warmup:] - i[warmup]
    if dg.std() == 0 or di.std() == 0:
        return 0.0
    return float(np.corrcoef(dg, di)[0, 1])
