"""Command-line harness: ``reprinv <command> [options]``.

Every command writes its files under ``--out`` and every CSV starts with
one comment line giving the tool version, the command line, the seed and
the effective configuration. Option values resolve as command-line flag,
then ``--config`` file (``key = value`` lines), then built-in default.

Exit codes: 0 success, 1 runtime failure, 2 bad arguments or unreadable
inputs, 3 inversion or training divergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import shlex
import sys
from pathlib import Path

import numpy as np

from . import __version__, gates
from .analytic import (CapacityQuery, SingularLayerError, conditioning_probe, estimate_zero_fraction,
                       invert_linear, relu_capacity)
from .experiments import SWEEP_HEADER, noise_compare, run_sweep, search_and_invert
from .fixtures import default_target, flat_reference
from .inversion import BlurSchedule, EpsilonSchedule, InversionDiverged, line_search, InversionConfig
from .layers import LinearModel, build_mlp, build_small_convnet, load_model, random_linear_model, save_model
from .ppm import PNMError, read_pnm, write_pnm
from .tensor import SeededRng, bilinear_downsample, gaussian_draw, l2_norm
from .trainer import (TrainingDiverged, filter_grid, first_layer_filters, make_noise_dataset,
                      make_structured_dataset, train)

log = logging.getLogger("reprinv")


class UsageError(Exception):
    """Bad arguments or unreadable inputs (exit code 2)."""


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text) -> tuple[int, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(int(t) for t in text)
    return tuple(int(t) for t in str(text).replace("x", ",").split(",") if t.strip())


def _precision(text) -> int:
    p = int(text)
    if p not in (32, 64):
        raise ValueError("precision must be 32 or 64")
    return p


def _eps(text):
    return None if str(text).strip() == "search" else EpsilonSchedule.parse(str(text))


# name -> (type, default, help); flags with type _bool become store_true switches
COMMON = {
    "seed": (int, 0, "run seed"),
    "out": (str, ".", "output directory"),
    "precision": (_precision, 32, "working precision, 32 or 64"),
}
INVERT_OPTS = {
    "model": (str, None, "model manifest"),
    "params": (str, None, "parameter blob for the manifest (default: re-draw from seed)"),
    "target": (str, None, "target image (P2/P3/P5/P6); default is the built-in reference picture"),
    "layer": (int, None, "embedding index (default: last)"),
    "iters": (int, 1000, "iterations f"),
    "eps": (_eps, "search", "step constant: c, decay:c, or search"),
    "blur": (BlurSchedule.parse, "off", "blur schedule start:end or off"),
    "clamp": (_bool, False, "clip the input to [0, 1] after each step"),
    "candidates": (int, gates.SEARCH_CANDIDATES, "line-search candidates"),
    "search_iters": (int, gates.SEARCH_ITERS, "iterations per line-search candidate"),
}
COMMANDS = {
    "invert": ({**INVERT_OPTS}, "invert one target and write trace, metrics and image"),
    "epsilon-search": ({**INVERT_OPTS, "iters": (int, gates.SEARCH_ITERS, "iterations per candidate")},
                       "random line search for the step constant"),
    "sweep": ({
        "kind": (str, None, "width, depth or iterations"),
        "grid": (_ints, None, "comma-separated grid values"),
        "input": (_ints, (3, 8, 8), "model input shape, e.g. 3,8,8"),
        "base_width": (int, None, "width of the fixed hidden layers (default: input elements)"),
        "depth": (int, 3, "hidden layers for width/iterations sweeps"),
        "relu": (_bool, False, "insert ReLU after every hidden layer"),
        "target": (str, None, "target image; default is the built-in reference picture"),
        "iters": (int, gates.SWEEP_ITERS, "iterations for width/depth sweeps"),
        "eps": (_eps, "search", "step constant: c, decay:c, or search per grid point"),
        "candidates": (int, gates.SEARCH_CANDIDATES, "line-search candidates"),
        "search_iters": (int, gates.SEARCH_ITERS, "iterations per line-search candidate"),
        "jobs": (int, 1, "grid points run concurrently"),
    }, "width, depth or iteration sweep over MLPs"),
    "analytic": ({
        "model": (str, None, "manifest of a square linear model (default: random)"),
        "params": (str, None, "parameter blob for the manifest"),
        "width": (int, 192, "width of the random model"),
        "depth": (int, 3, "layers of the random model"),
        "probe_seeds": (int, 10, "noise seeds for the conditioning probe"),
        "sigma_out": (float, gates.PROBE_SIGMA_OUT, "output noise width"),
        "sigma_in": (float, gates.SHIFT_SIGMA, "input shift width"),
        "precision": (_precision, 64, "working precision, 32 or 64"),
    }, "exact round trip and conditioning probe of a linear model"),
    "capacity": ({
        "m": (int, None, "input element count"),
        "p": (float, None, "probability a unit is zeroed"),
        "n": (int, None, "layer depth"),
        "model": (str, None, "optional manifest: also estimate p per ReLU layer"),
        "params": (str, None, "parameter blob for the manifest"),
        "samples": (int, 64, "random inputs for the p estimate"),
    }, "ReLU capacity m(1/p)^n and optional zero-fraction estimate"),
    "train": ({
        "data": (str, "noise", "noise or structured"),
        "count": (int, 200, "dataset items"),
        "classes": (int, 10, "classes"),
        "shape": (_ints, (3, 16, 16), "item shape"),
        "arch": (str, "mlp", "mlp or convnet"),
        "hidden": (_ints, (gates.MEMORIZE_HIDDEN,), "MLP hidden widths"),
        "channels": (_ints, gates.CONVNET_CHANNELS, "convnet channels per block"),
        "residual": (_bool, False, "add a residual block to each convnet group"),
        "model": (str, None, "train this manifest instead of building --arch"),
        "params": (str, None, "parameter blob for the manifest"),
        "epochs": (int, gates.MEMORIZE_EPOCHS, "epochs"),
        "lr": (float, gates.MEMORIZE_LR, "learning rate"),
        "batch": (int, gates.MEMORIZE_BATCH, "batch size"),
        "precision": (_precision, 64, "working precision, 32 or 64"),
    }, "SGD training on a toy dataset"),
    "noise-compare": ({
        "target": (str, None, "target image; default is a held-out structured item"),
        "count": (int, 200, "items per training set"),
        "classes": (int, 4, "classes (at most 8)"),
        "shape": (_ints, (3, 16, 16), "item shape"),
        "channels": (_ints, gates.CONVNET_CHANNELS, "convnet channels per block"),
        "epochs": (int, gates.CONVNET_EPOCHS, "training epochs"),
        "lr": (float, gates.CONVNET_LR, "learning rate"),
        "batch": (int, gates.MEMORIZE_BATCH, "batch size"),
        "layer": (int, None, "embedding index (default: last conv block)"),
        "iters": (int, 1000, "inversion iterations"),
        "eps": (_eps, "search", "step constant: c, decay:c, or search"),
        "blur": (BlurSchedule.parse, "off", "blur schedule start:end or off"),
    }, "invert one target through untrained, structured- and noise-trained convnets"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reprinv", description="Input reconstruction from layer embeddings.")
    parser.add_argument("--version", action="version", version=f"reprinv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (opts, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="file of 'key = value' lines")
        for key, (typ, default, text) in {**COMMON, **opts}.items():
            flag = "--" + key.replace("_", "-")
            if typ is _bool:
                p.add_argument(flag, dest=key, action="store_const", const=True, default=None, help=text)
            else:
                p.add_argument(flag, dest=key, default=None, help=f"{text} (default: {default})")
    return parser


def read_config(path) -> dict[str, str]:
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def resolve(args: argparse.Namespace) -> tuple[dict, dict]:
    """Apply flag > config > default; returns ``(typed values, raw text values)``."""
    opts = {**COMMON, **COMMANDS[args.command][0]}
    config = read_config(args.config) if args.config else {}
    unknown = sorted(set(config) - set(opts))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    typed, raw = {}, {}
    for key, (typ, default, _) in opts.items():
        given = getattr(args, key)
        text = given if given is not None else config.get(key, default)
        try:
            typed[key] = typ(text) if text is not None else None
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for {key}: {text!r} ({exc})") from None
        raw[key] = text
    return typed, raw


class Output:
    """Writes files under one directory with a shared provenance header."""

    def __init__(self, directory, argv, seed, raw_config):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        shown = {k: _show(v) for k, v in raw_config.items() if v is not None}
        config = " ".join(f"{k}={v}" for k, v in sorted(shown.items()))
        self.header = (f"reprinv {__version__} | command: {shlex.join(['reprinv', *argv])} | "
                       f"seed: {seed} | config: {config}")
        self.written: list[Path] = []

    def csv(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        buf.write(f"# {self.header}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
        return self.text(name, buf.getvalue())

    def text(self, name: str, content: str) -> Path:
        path = self.dir / name
        path.write_text(content)
        self.written.append(path)
        return path

    def image(self, name: str, image: np.ndarray) -> Path | None:
        if image.ndim != 3 or image.shape[0] not in (1, 3):
            return None
        path = self.dir / name
        write_pnm(path, image, comment=self.header)
        self.written.append(path)
        return path


def _show(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def _load(opts):
    path = opts["model"]
    if path is None:
        raise UsageError("--model is required")
    for p in (path, opts.get("params")):
        if p is not None and not Path(p).is_file():
            raise UsageError(f"model file not found: {p}")
    try:
        model = load_model(path, opts.get("params"))
    except ValueError as exc:
        raise UsageError(f"cannot load model {path}: {exc}") from None
    return model.with_precision(opts["precision"])


def _target(opts, input_shape) -> np.ndarray:
    path = opts.get("target")
    if path is None:
        return default_target(input_shape)
    if not Path(path).is_file():
        raise UsageError(f"target file not found: {path}")
    try:
        img = read_pnm(path)
    except PNMError as exc:
        raise UsageError(f"cannot read target {path}: {exc}") from None
    return conform_target(img, tuple(input_shape))


def conform_target(img: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Fit a [C, H, W] image to a model input, resampling with a warning if needed."""
    if len(shape) != 3:
        if img.size != int(np.prod(shape)):
            raise UsageError(f"target has {img.size} values but the model takes {int(np.prod(shape))}")
        return img.reshape(shape)
    c = shape[0]
    if img.shape[0] != c:
        if img.shape[0] == 1:
            img = np.repeat(img, c, axis=0)
        elif c == 1:
            img = img.mean(axis=0, keepdims=True)
        else:
            raise UsageError(f"target has {img.shape[0]} channels, model expects {c}")
    if img.shape[1:] != shape[1:]:
        log.warning("target %dx%d resampled to model input %dx%d", img.shape[1], img.shape[2], *shape[1:])
        img = bilinear_downsample(img, shape[1:])
    return img


def _layer(opts, model) -> int:
    layer = opts.get("layer") or len(model)
    if not 1 <= layer <= len(model):
        raise UsageError(f"--layer must be in [1, {len(model)}]")
    return layer


def cmd_invert(opts, out: Output) -> int:
    model = _load(opts)
    target = _target(opts, model.input_shape)
    layer = _layer(opts, model)
    r = search_and_invert(model, target, layer, opts["iters"], opts["seed"], opts["eps"], opts["blur"],
                          opts["clamp"], opts["precision"], opts["candidates"], opts["search_iters"])
    out.csv("trace.csv", ("n", "l1_objective", "m_g", "m_i"), r.trace.rows)
    m = r.metrics
    out.csv("metrics.csv", ("layer", "seed", "eps", "m_g", "m_s", "m_i", "good"),
            [(m.layer, m.seed, r.eps, m.m_g, m.m_s, m.m_i, int(m.good))])
    out.image("a_g.ppm", r.a_g)
    print(f"m_g={m.m_g:.6g} m_s={m.m_s:.6g} m_i={m.m_i:.6g} eps={r.eps:.6g}")
    return 0


def cmd_epsilon_search(opts, out: Output) -> int:
    model = _load(opts)
    target = _target(opts, model.input_shape)
    layer = _layer(opts, model)
    template = InversionConfig(layer, opts["iters"], opts["eps"] or EpsilonSchedule(1.0), opts["blur"],
                               seed=opts["seed"], clamp_input=opts["clamp"], precision=opts["precision"])
    res = line_search(model, target, template, opts["candidates"], opts["seed"])
    out.csv("search.csv", ("c", "final_m_g", "best"), [(c, mg, int(c == res.best)) for c, mg in res.tried])
    print(f"best c={res.best!r}")
    return 0


def cmd_sweep(opts, out: Output) -> int:
    if opts["kind"] is None or opts["grid"] is None:
        raise UsageError("sweep needs --kind and --grid")
    shape = opts["input"]
    target = _target(opts, shape)
    try:
        rows = run_sweep(opts["kind"], opts["grid"], shape, target, opts["base_width"], opts["depth"],
                         opts["relu"], opts["iters"], opts["seed"], opts["eps"], opts["precision"],
                         opts["jobs"], opts["candidates"], opts["search_iters"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out.csv(f"sweep_{opts['kind']}.csv", SWEEP_HEADER, rows)
    for row in rows:
        print(" ".join(_show(v) for v in row))
    if all(row[-1] != "ok" for row in rows):
        log.error("every grid point failed")
        return 3
    return 0


def cmd_analytic(opts, out: Output) -> int:
    prec = opts["precision"]
    if opts["model"] is not None:
        try:
            linear = LinearModel.from_model(_load({**opts, "precision": 64}))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    else:
        linear = random_linear_model(opts["width"], opts["depth"], opts["seed"])
    linear = linear.astype(prec)
    a = flat_reference(linear.width)
    back = invert_linear(linear, linear.forward(a.astype(linear.weights[0].dtype)))
    rel = l2_norm(a - back) / l2_norm(a)
    out.csv("roundtrip.csv", ("width", "depth", "precision", "rel_error"),
            [(linear.width, len(linear.weights), prec, rel)])
    probe = conditioning_probe(linear, a, opts["sigma_out"], opts["sigma_in"], range(opts["probe_seeds"]))
    out.csv("probe.csv", ("seed", "dist_a_app", "dist_a_ap", "ratio"), probe.rows)
    print(f"roundtrip relative error: {rel:.3e}")
    print(f"conditioning ratio median: {probe.median:.6g}")
    return 0


def cmd_capacity(opts, out: Output) -> int:
    if opts["m"] is None or opts["p"] is None or opts["n"] is None:
        raise UsageError("capacity needs --m, --p and --n")
    try:
        width = relu_capacity(CapacityQuery(opts["m"], opts["p"], opts["n"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = [("capacity", "", width)]
    print(width)
    if opts["model"] is not None:
        model = _load(opts)
        rng = SeededRng(opts["seed"])
        inputs = [gaussian_draw(rng, model.input_shape, 0.0, 1.0, model.precision)
                  for _ in range(opts["samples"])]
        for i, p in enumerate(estimate_zero_fraction(model, inputs), start=1):
            rows.append(("zero_fraction", i, p))
            print(f"relu {i}: p={p:.4f}")
    out.csv("capacity.csv", ("quantity", "relu", "value"), rows)
    return 0


def cmd_train(opts, out: Output) -> int:
    shape = opts["shape"]
    if opts["data"] == "noise":
        data = make_noise_dataset(opts["count"], opts["classes"], shape=shape, seed=opts["seed"],
                                  precision=opts["precision"])
    elif opts["data"] == "structured":
        data = make_structured_dataset(opts["count"], opts["classes"], shape, seed=opts["seed"],
                                       precision=opts["precision"])
    else:
        raise UsageError("--data must be noise or structured")
    if opts["model"] is not None:
        model = _load(opts)
    elif opts["arch"] == "mlp":
        model = build_mlp(shape, list(opts["hidden"]), use_relu=True, seed=opts["seed"],
                          precision=opts["precision"], num_classes=opts["classes"])
    elif opts["arch"] == "convnet":
        ch = list(opts["channels"])
        model = build_small_convnet(shape, len(ch), ch, with_residual=opts["residual"], seed=opts["seed"],
                                    precision=opts["precision"], num_classes=opts["classes"])
    else:
        raise UsageError("--arch must be mlp or convnet")
    trained, history = train(model, data, opts["epochs"], opts["lr"], opts["batch"], opts["seed"])
    out.csv("history.csv", ("epoch", "loss", "accuracy"), history.rows)
    save_model(trained, out.dir / "model.manifest", out.dir / "model.params")
    out.written += [out.dir / "model.manifest", out.dir / "model.params"]
    out.image("filters.ppm", filter_grid(first_layer_filters(trained)))
    if history.rows:
        print(f"final loss={history.rows[-1][1]:.6g} accuracy={history.final_accuracy:.4f}")
    return 0


def cmd_noise_compare(opts, out: Output) -> int:
    shape = opts["shape"]
    target = _target(opts, shape) if opts["target"] else None
    try:
        res = noise_compare(target, opts["seed"], opts["count"], opts["classes"], shape, opts["channels"],
                            opts["epochs"], opts["lr"], opts["batch"], opts["layer"], opts["iters"],
                            opts["eps"], opts["precision"], opts["blur"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    names = ("untrained", "structured", "noise")
    rows = [(metric, *(getattr(res[n][0].metrics, metric) for n in names)) for metric in ("m_g", "m_s", "m_i")]
    rows.append(("eps", *(res[n][0].eps for n in names)))
    rows.append(("train_accuracy", *("" if res[n][1] is None else res[n][1] for n in names)))
    out.csv("compare.csv", ("metric", *names), rows)
    for n in names:
        out.image(f"a_g_{n}.ppm", res[n][0].a_g)
    for row in rows[:3]:
        print(" ".join(_show(v) for v in row))
    return 0


HANDLERS = {
    "invert": cmd_invert,
    "epsilon-search": cmd_epsilon_search,
    "sweep": cmd_sweep,
    "analytic": cmd_analytic,
    "capacity": cmd_capacity,
    "train": cmd_train,
    "noise-compare": cmd_noise_compare,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        opts, raw = resolve(args)
        out = Output(opts["out"], argv, opts["seed"], raw)
        return HANDLERS[args.command](opts, out)
    except UsageError as exc:
        log.error("%s", exc)
        return 2
    except (InversionDiverged, TrainingDiverged) as exc:
        log.error("diverged: %s", exc)
        return 3
    except (SingularLayerError, RuntimeError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
