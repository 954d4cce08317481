"""Experiment pipelines shared by the command line and the acceptance suite."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import gates
from .inversion import (BlurSchedule, EpsilonSchedule, InversionConfig, InversionDiverged,
                        MetricsRecord, compute_metrics, invert, line_search)
from .layers import Model, build_mlp, build_small_convnet
from .trainer import Dataset, make_noise_dataset, make_structured_dataset, train

SWEEP_KINDS = ("width", "depth", "iterations")
SWEEP_HEADER = ("kind", "value", "layer", "iters", "eps", "m_g", "m_s", "m_i", "status")


@dataclass
class RunResult:
    eps: float
    a_g: np.ndarray
    trace: object
    metrics: MetricsRecord


def search_and_invert(model: Model, target: np.ndarray, layer: int, iters: int, seed: int = 0,
                      eps: EpsilonSchedule | None = None, blur: BlurSchedule | None = None,
                      clamp: bool = False, precision: int = 32,
                      candidates: int = gates.SEARCH_CANDIDATES,
                      search_iters: int = gates.SEARCH_ITERS) -> RunResult:
    """Invert ``target`` at ``layer``; a missing ``eps`` is picked by random line search.

    Searched constants use the linearly decaying schedule.
    """
    cfg = InversionConfig(layer, iters, eps or EpsilonSchedule(1.0), blur, seed=seed,
                          clamp_input=clamp, precision=precision)
    if eps is None:
        best = line_search(model, target, cfg, candidates, seed, f_search=min(search_iters, iters)).best
        cfg = replace(cfg, epsilon=EpsilonSchedule(best, "decay"))
    a_g, trace = invert(model, target, cfg)
    return RunResult(cfg.epsilon.c, a_g, trace, compute_metrics(model, layer, target, a_g, seed=seed))


def sweep_points(kind: str, grid, input_shape, base_width: int | None = None, depth: int = 3,
                 relu: bool = False, iters: int = gates.SWEEP_ITERS, seed: int = 0):
    """``(value, model, layer, iters)`` for every grid value.

    width varies the first hidden layer of a ``depth``-layer MLP, depth
    stacks equal ``base_width`` layers, iterations reruns one fixed MLP with
    different budgets. Hidden widths default to the input element count.
    """
    if kind not in SWEEP_KINDS:
        raise ValueError(f"sweep kind must be one of {SWEEP_KINDS}")
    grid = [int(v) for v in grid]
    if not grid or min(grid) < 1:
        raise ValueError("sweep grid values must be positive integers")
    base = base_width or int(np.prod(input_shape))
    points = []
    for v in grid:
        if kind == "width":
            widths, f = [v] + [base] * (depth - 1), iters
        elif kind == "depth":
            widths, f = [base] * v, iters
        else:
            widths, f = [base] * depth, v
        model = build_mlp(input_shape, widths, use_relu=relu, seed=seed)
        points.append((v, model, len(model), f))
    return points


def run_sweep(kind: str, grid, input_shape, target: np.ndarray, base_width: int | None = None,
              depth: int = 3, relu: bool = False, iters: int = gates.SWEEP_ITERS, seed: int = 0,
              eps: EpsilonSchedule | None = None, precision: int = 32, jobs: int = 1,
              candidates: int = gates.SEARCH_CANDIDATES, search_iters: int = gates.SEARCH_ITERS):
    """One row per grid point, in grid order whatever ``jobs`` is."""
    points = sweep_points(kind, grid, input_shape, base_width, depth, relu, iters, seed)

    def one(point):
        value, model, layer, f = point
        try:
            r = search_and_invert(model, target, layer, f, seed, eps, precision=precision,
                                  candidates=candidates, search_iters=search_iters)
        except (InversionDiverged, RuntimeError) as exc:
            return (kind, value, layer, f, "", "", "", "", f"failed: {exc}")
        m = r.metrics
        return (kind, value, layer, f, r.eps, m.m_g, m.m_s, m.m_i, "ok")

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(one, points))


@dataclass
class NoisePipeline:
    dataset: Dataset
    mlp: Model
    mlp_history: object
    convnet: Model
    convnet_history: object


def noise_pipeline(seed: int = 0, count: int = 200, classes: int = 10, shape=(3, 16, 16)) -> NoisePipeline:
    """Train a small MLP and a residual convnet on the same random-label noise."""
    data = make_noise_dataset(count, classes, shape=shape, seed=seed)
    mlp = build_mlp(shape, [gates.MEMORIZE_HIDDEN], use_relu=True, seed=seed, num_classes=classes)
    mlp, mlp_hist = train(mlp, data, gates.MEMORIZE_EPOCHS, gates.MEMORIZE_LR, gates.MEMORIZE_BATCH, seed)
    channels = list(gates.CONVNET_CHANNELS)
    net = build_small_convnet(shape, len(channels), channels, with_residual=True, seed=seed,
                              num_classes=classes)
    net, net_hist = train(net, data, gates.CONVNET_EPOCHS, gates.CONVNET_LR, gates.MEMORIZE_BATCH, seed)
    return NoisePipeline(data, mlp, mlp_hist, net, net_hist)


def noise_compare(target: np.ndarray | None = None, seed: int = 0, count: int = 200, classes: int = 4,
                  shape=(3, 16, 16), channels=gates.CONVNET_CHANNELS, epochs: int = gates.CONVNET_EPOCHS,
                  lr: float = gates.CONVNET_LR, batch: int = gates.MEMORIZE_BATCH, layer: int | None = None,
                  iters: int = 1000, eps: EpsilonSchedule | None = None, precision: int = 32,
                  blur: BlurSchedule | None = None):
    """Invert one target through untrained, structured-trained and noise-trained copies.

    All three share architecture and initial weights. The default target is
    a fresh structured item the structured model never saw. Returns
    ``{name: (RunResult, train accuracy)}`` keyed untrained/structured/noise.
    """
    channels = list(channels)
    base = build_small_convnet(shape, len(channels), channels, with_residual=True, seed=seed,
                               num_classes=classes)
    structured = make_structured_dataset(count, classes, shape, seed=seed)
    noise = make_noise_dataset(count, classes, shape=shape, seed=seed)
    s_model, s_hist = train(base, structured, epochs, lr, batch, seed)
    n_model, n_hist = train(base, noise, epochs, lr, batch, seed)
    if target is None:
        target = make_structured_dataset(classes, classes, shape, seed=seed + 1).inputs[0]
    layer = layer or len(channels)
    out = {}
    for name, model, acc in (("untrained", base, None),
                             ("structured", s_model, s_hist.final_accuracy),
                             ("noise", n_model, n_hist.final_accuracy)):
        out[name] = (search_and_invert(model, target, layer, iters, seed, eps, blur, precision=precision), acc)
    return out
