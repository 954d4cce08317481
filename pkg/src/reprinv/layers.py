"""Layers, models and model builders.

Every layer works on batched arrays whose first axis is the sample axis and
implements a ``forward``/``backward`` pair; :mod:`reprinv.autodiff` chains
those pairs into reverse-mode gradients.

A :class:`Model` is a flat list of layers plus a list of *embedding
boundaries*. Embedding ``l`` (1-based) is the output after
``layers[:boundaries[l - 1]]``. MLPs put a boundary after every dense layer
(after its ReLU when present); conv nets put one after every
conv/ReLU/residual group.

Weight initialization is a pure function of the layer structure and a seed:
weights tagged ``kaiming`` are drawn, in layer order, from
``U(-sqrt(6 / fan_in), +sqrt(6 / fan_in))``; biases start at zero. That is
what lets a text manifest recreate a model exactly.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import SeededRng, dtype_for

MANIFEST_MAGIC = "reprinv-model 1"
INITS = ("kaiming", "zero", "identity")


class Layer:
    """Base class; subclasses override what they need."""

    kind = "layer"

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def params(self) -> list[np.ndarray]:
        return []

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy, cache):
        raise NotImplementedError

    def astype(self, dtype) -> None:
        pass


class Dense(Layer):
    """``y = W x + b`` on the flattened sample."""

    kind = "dense"

    def __init__(self, weights: np.ndarray, bias: np.ndarray | None = None, init: str = "kaiming"):
        weights = np.asarray(weights)
        if weights.ndim != 2:
            raise ValueError(f"dense weights must be 2-D, got {weights.shape}")
        if bias is not None and np.shape(bias) != (weights.shape[0],):
            raise ValueError(f"bias shape {np.shape(bias)} does not match weights {weights.shape}")
        self.weights = weights
        self.bias = None if bias is None else np.asarray(bias)
        self.init = init

    @property
    def in_features(self) -> int:
        return self.weights.shape[1]

    @property
    def out_features(self) -> int:
        return self.weights.shape[0]

    def out_shape(self, in_shape):
        if math.prod(in_shape) != self.in_features:
            raise ValueError(f"dense layer expects {self.in_features} inputs, got shape {in_shape}")
        return (self.out_features,)

    def params(self):
        return [self.weights] if self.bias is None else [self.weights, self.bias]

    def forward(self, x):
        flat = x.reshape(x.shape[0], -1)
        y = flat @ self.weights.T
        if self.bias is not None:
            y = y + self.bias
        return y, (flat, x.shape)

    def backward(self, dy, cache):
        flat, in_shape = cache
        dx = (dy @ self.weights).reshape(in_shape)
        grads = [dy.T @ flat]
        if self.bias is not None:
            grads.append(dy.sum(axis=0))
        return dx, grads

    def astype(self, dtype):
        self.weights = self.weights.astype(dtype)
        if self.bias is not None:
            self.bias = self.bias.astype(dtype)


class Conv2d(Layer):
    """2-D cross-correlation with symmetric zero padding (im2col)."""

    kind = "conv"

    def __init__(self, kernels: np.ndarray, bias: np.ndarray | None = None, stride: int = 1,
                 padding: int = 0, init: str = "kaiming"):
        kernels = np.asarray(kernels)
        if kernels.ndim != 4:
            raise ValueError(f"conv kernels must be [outC, inC, kH, kW], got {kernels.shape}")
        if bias is not None and np.shape(bias) != (kernels.shape[0],):
            raise ValueError("conv bias must have one entry per output channel")
        if stride < 1 or padding < 0:
            raise ValueError("stride must be >= 1 and padding >= 0")
        self.kernels = kernels
        self.bias = None if bias is None else np.asarray(bias)
        self.stride = int(stride)
        self.padding = int(padding)
        self.init = init

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.kernels.shape[1]:
            raise ValueError(f"conv expects [{self.kernels.shape[1]}, H, W], got {in_shape}")
        _, h, w = in_shape
        kh, kw = self.kernels.shape[2:]
        oh = (h + 2 * self.padding - kh) // self.stride + 1
        ow = (w + 2 * self.padding - kw) // self.stride + 1
        if oh <= 0 or ow <= 0:
            raise ValueError(f"conv output size is not positive for input {in_shape}")
        return (self.kernels.shape[0], oh, ow)

    def params(self):
        return [self.kernels] if self.bias is None else [self.kernels, self.bias]

    def _cols(self, x):
        p, s = self.padding, self.stride
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        kh, kw = self.kernels.shape[2:]
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
        n, c, oh, ow = win.shape[:4]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
        return cols, xp.shape, (n, oh, ow)

    def forward(self, x):
        cols, padded_shape, (n, oh, ow) = self._cols(x)
        k = self.kernels.reshape(self.kernels.shape[0], -1)
        y = cols @ k.T
        if self.bias is not None:
            y = y + self.bias
        y = y.reshape(n, oh, ow, -1).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(y), (cols, padded_shape, x.shape)

    def backward(self, dy, cache):
        cols, padded_shape, in_shape = cache
        n, oc, oh, ow = dy.shape
        kh, kw = self.kernels.shape[2:]
        c = self.kernels.shape[1]
        dy_flat = dy.transpose(0, 2, 3, 1).reshape(-1, oc)
        grads = [(dy_flat.T @ cols).reshape(self.kernels.shape)]
        if self.bias is not None:
            grads.append(dy_flat.sum(axis=0))
        dcols = (dy_flat @ self.kernels.reshape(oc, -1)).reshape(n, oh, ow, c, kh, kw)
        dxp = np.zeros(padded_shape, dtype=dy.dtype)
        s = self.stride
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        p = self.padding
        dx = dxp[:, :, p:p + in_shape[2], p:p + in_shape[3]] if p else dxp
        return np.ascontiguousarray(dx), grads

    def astype(self, dtype):
        self.kernels = self.kernels.astype(dtype)
        if self.bias is not None:
            self.bias = self.bias.astype(dtype)


class _Pool(Layer):
    def __init__(self, window: int, stride: int | None = None):
        self.window = int(window)
        self.stride = int(stride) if stride is not None else self.window
        if self.window < 1 or self.stride < 1:
            raise ValueError("pool window and stride must be >= 1")

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ValueError(f"pooling expects [C, H, W], got {in_shape}")
        c, h, w = in_shape
        oh = (h - self.window) // self.stride + 1
        ow = (w - self.window) // self.stride + 1
        if oh <= 0 or ow <= 0:
            raise ValueError(f"pool output size is not positive for input {in_shape}")
        return (c, oh, ow)

    def _windows(self, x):
        k, s = self.window, self.stride
        return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]

    def _scatter(self, dwin, in_shape, dtype):
        # dwin: [N, C, OH, OW, k, k] gradient per window element
        k, s = self.window, self.stride
        oh, ow = dwin.shape[2:4]
        dx = np.zeros(in_shape, dtype=dtype)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + s * oh:s, j:j + s * ow:s] += dwin[:, :, :, :, i, j]
        return dx


class MaxPool(_Pool):
    """Max pooling; ties route the gradient to the lowest flat index."""

    kind = "maxpool"

    def forward(self, x):
        win = self._windows(x)
        n, c, oh, ow, k, _ = win.shape
        flat = win.reshape(n, c, oh, ow, k * k)
        # argmax returns the first maximum in row-major window order,
        # which is the lowest flat index of the input
        idx = flat.argmax(axis=-1)
        y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        return y, (idx, x.shape)

    def backward(self, dy, cache):
        idx, in_shape = cache
        k = self.window
        onehot = np.zeros(dy.shape + (k * k,), dtype=dy.dtype)
        np.put_along_axis(onehot, idx[..., None], dy[..., None], axis=-1)
        dwin = onehot.reshape(dy.shape + (k, k))
        return self._scatter(dwin, in_shape, dy.dtype), []


class AvgPool(_Pool):
    kind = "avgpool"

    def forward(self, x):
        return self._windows(x).mean(axis=(-2, -1)).astype(x.dtype), x.shape

    def backward(self, dy, cache):
        k = self.window
        dwin = np.broadcast_to((dy / (k * k))[..., None, None], dy.shape + (k, k))
        return self._scatter(dwin, cache, dy.dtype), []


class ReLU(Layer):
    """``max(x, 0)``; inputs ``<= 0`` map to zero and pass no gradient."""

    kind = "relu"

    def forward(self, x):
        mask = x > 0
        return np.where(mask, x, 0).astype(x.dtype), mask

    def backward(self, dy, cache):
        return dy * cache, []


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, in_shape):
        return (math.prod(in_shape),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache):
        return dy.reshape(cache), []


class ResidualBlock(Layer):
    """``y = x + inner(x)``; ``inner`` must preserve the shape."""

    kind = "residual"

    def __init__(self, inner: Sequence[Layer]):
        self.inner = list(inner)

    def out_shape(self, in_shape):
        shape = in_shape
        for layer in self.inner:
            shape = layer.out_shape(shape)
        if shape != in_shape:
            raise ValueError(f"residual inner output {shape} differs from input {in_shape}")
        return in_shape

    def params(self):
        return [p for layer in self.inner for p in layer.params()]

    def forward(self, x):
        h = x
        caches = []
        for layer in self.inner:
            h, c = layer.forward(h)
            caches.append(c)
        return x + h, caches

    def backward(self, dy, cache):
        d = dy
        grads: list[np.ndarray] = []
        for layer, c in zip(reversed(self.inner), reversed(cache)):
            d, g = layer.backward(d, c)
            grads = g + grads
        return dy + d, grads

    def astype(self, dtype):
        for layer in self.inner:
            layer.astype(dtype)


def iter_layers(layers: Sequence[Layer]):
    """Depth-first walk, descending into residual blocks."""
    for layer in layers:
        yield layer
        if isinstance(layer, ResidualBlock):
            yield from iter_layers(layer.inner)


class Model:
    """Ordered layers with embedding boundaries and construction metadata."""

    def __init__(self, layers: Sequence[Layer], input_shape, precision: int = 64,
                 boundaries: Sequence[int] | None = None, seed: int | None = None):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in np.atleast_1d(input_shape))
        self.precision = int(precision)
        self.dtype = dtype_for(precision)
        self.seed = seed
        if boundaries is None:
            boundaries = range(1, len(self.layers) + 1)
        self.boundaries = [int(b) for b in boundaries]
        if not self.boundaries or sorted(set(self.boundaries)) != self.boundaries:
            raise ValueError("boundaries must be a non-empty strictly increasing list")
        if self.boundaries[0] < 1 or self.boundaries[-1] > len(self.layers):
            raise ValueError("boundaries must index into the layer list")
        for layer in self.layers:
            layer.astype(self.dtype)
        # shape after each layer; raises on mismatch
        self.layer_shapes = []
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.out_shape(shape)
            self.layer_shapes.append(shape)

    def __len__(self) -> int:
        return len(self.boundaries)

    @property
    def num_layers(self) -> int:
        return len(self.boundaries)

    def embedding_shape(self, l: int) -> tuple[int, ...]:
        self._check_index(l)
        return self.layer_shapes[self.boundaries[l - 1] - 1]

    @property
    def output_shape(self):
        return self.layer_shapes[-1]

    def element_counts(self) -> list[int]:
        """Element counts of the input followed by every embedding."""
        return [math.prod(self.input_shape)] + [math.prod(self.embedding_shape(l))
                                                for l in range(1, len(self) + 1)]

    @property
    def invertible(self) -> bool:
        """False when some embedding has fewer elements than the one before."""
        counts = self.element_counts()
        return all(b >= a for a, b in zip(counts, counts[1:]))

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def set_params(self, values: Sequence[np.ndarray]) -> None:
        targets = self.params()
        if len(values) != len(targets):
            raise ValueError("parameter count mismatch")
        for t, v in zip(targets, values):
            if t.shape != np.shape(v):
                raise ValueError(f"parameter shape mismatch {t.shape} vs {np.shape(v)}")
            t[...] = v

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def with_precision(self, precision: int) -> "Model":
        """This model if already at ``precision``, else a cast copy."""
        if int(precision) == self.precision:
            return self
        clone = self.copy()
        clone.precision = int(precision)
        clone.dtype = dtype_for(precision)
        for layer in clone.layers:
            layer.astype(clone.dtype)
        return clone

    def _check_index(self, l: int) -> None:
        if not isinstance(l, (int, np.integer)) or not 1 <= l <= len(self):
            raise IndexError(f"layer index must be in [1, {len(self)}], got {l!r}")

    def depth_of(self, l: int) -> int:
        """Number of raw layers evaluated to reach embedding ``l``."""
        self._check_index(l)
        return self.boundaries[l - 1]

    def check_input(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a)
        if a.shape != self.input_shape:
            raise ValueError(f"input shape {a.shape} does not match model input {self.input_shape}")
        return a.astype(self.dtype, copy=False)

    def run(self, x: np.ndarray, start: int = 0, stop: int | None = None) -> np.ndarray:
        """Apply ``layers[start:stop]`` to a batch ``x``."""
        for layer in self.layers[start:stop]:
            x, _ = layer.forward(x)
        return x

    def forward(self, a: np.ndarray) -> np.ndarray:
        a = self.check_input(a)
        return self.run(a[None])[0]

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        return self.run(np.asarray(x, dtype=self.dtype))


def forward_to_layer(model: Model, a: np.ndarray, l: int) -> np.ndarray:
    """Embedding ``O_l(a)`` of a single input; layers past ``l`` are not run."""
    stop = model.depth_of(l)
    a = model.check_input(a)
    return model.run(a[None], 0, stop)[0]


def count_layer_elements(model: Model, l: int) -> int:
    return math.prod(model.embedding_shape(l))


# -- initialization ----------------------------------------------------------

def kaiming_bound(fan_in: int) -> float:
    return math.sqrt(6.0 / fan_in)


def initialize(layers: Sequence[Layer], seed: int) -> None:
    """(Re)draw every parameter from its ``init`` tag, in layer order."""
    rng = SeededRng(seed)
    for layer in iter_layers(layers):
        if isinstance(layer, Dense):
            w = layer.weights
            if layer.init == "kaiming":
                b = kaiming_bound(w.shape[1])
                layer.weights = rng.uniform(w.shape, -b, b).astype(w.dtype)
            elif layer.init == "identity":
                if w.shape[0] != w.shape[1]:
                    raise ValueError("identity init needs a square dense layer")
                layer.weights = np.eye(w.shape[0], dtype=w.dtype)
            else:
                layer.weights = np.zeros_like(w)
            if layer.bias is not None:
                layer.bias = np.zeros_like(layer.bias)
        elif isinstance(layer, Conv2d):
            k = layer.kernels
            if layer.init == "kaiming":
                b = kaiming_bound(math.prod(k.shape[1:]))
                layer.kernels = rng.uniform(k.shape, -b, b).astype(k.dtype)
            elif layer.init == "identity":
                oc, ic, kh, kw = k.shape
                if oc != ic or kh % 2 == 0 or kw % 2 == 0:
                    raise ValueError("identity init needs equal channels and odd kernels")
                ident = np.zeros_like(k)
                for c in range(oc):
                    ident[c, c, kh // 2, kw // 2] = 1
                layer.kernels = ident
            else:
                layer.kernels = np.zeros_like(k)
            if layer.bias is not None:
                layer.bias = np.zeros_like(layer.bias)


def _check_init(init: str) -> str:
    if init not in INITS:
        raise ValueError(f"unknown init {init!r}; expected one of {INITS}")
    return init


def _dense(n_in: int, n_out: int, bias: bool, init: str = "kaiming") -> Dense:
    return Dense(np.zeros((n_out, n_in)), np.zeros(n_out) if bias else None, _check_init(init))


def _conv(c_in: int, c_out: int, k: int, stride: int, pad: int, bias: bool, init: str = "kaiming") -> Conv2d:
    return Conv2d(np.zeros((c_out, c_in, k, k)), np.zeros(c_out) if bias else None,
                  stride, pad, _check_init(init))


def build_mlp(input_elems, hidden_widths: Sequence[int], use_bias: bool = True,
              use_relu: bool = False, seed: int = 0, precision: int = 64,
              num_classes: int | None = None, init: str = "kaiming") -> Model:
    """Dense stack with one embedding per hidden layer.

    ``input_elems`` may be an int or a full input shape (e.g. ``(3, 8, 8)``);
    dense layers flatten their input. With ``num_classes`` a final
    logit layer (no ReLU) is appended as the last embedding.
    """
    input_shape = (input_elems,) if isinstance(input_elems, (int, np.integer)) else tuple(input_elems)
    if any(int(w) <= 0 for w in hidden_widths):
        raise ValueError("all widths must be positive")
    layers: list[Layer] = []
    boundaries = []
    n_in = math.prod(input_shape)
    for w in hidden_widths:
        layers.append(_dense(n_in, int(w), use_bias, init))
        if use_relu:
            layers.append(ReLU())
        boundaries.append(len(layers))
        n_in = int(w)
    if num_classes is not None:
        layers.append(_dense(n_in, int(num_classes), use_bias))
        boundaries.append(len(layers))
    initialize(layers, seed)
    return Model(layers, input_shape, precision, boundaries, seed)


def build_small_convnet(input_shape, blocks: int, channels: Sequence[int], with_residual: bool = False,
                        seed: int = 0, precision: int = 64, stride: int = 2, kernel: int = 3,
                        conv_init: str = "kaiming", residual_init: str = "kaiming",
                        num_classes: int | None = None) -> Model:
    """Groups of ``Conv2d(stride) -> ReLU -> [ResidualBlock]``.

    Convs use symmetric zero padding ``kernel // 2``. A residual block is
    ``conv -> ReLU -> conv`` at constant width, added back onto its input.
    One embedding per group; ``num_classes`` appends ``Flatten -> Dense``.
    """
    if blocks < 1 or len(channels) != blocks:
        raise ValueError("need blocks >= 1 and one channel count per block")
    input_shape = tuple(int(s) for s in input_shape)
    pad = kernel // 2
    layers: list[Layer] = []
    boundaries = []
    c_in = input_shape[0]
    for c_out in channels:
        layers.append(_conv(c_in, int(c_out), kernel, stride, pad, True, conv_init))
        layers.append(ReLU())
        if with_residual:
            layers.append(ResidualBlock([
                _conv(c_out, c_out, kernel, 1, pad, True, residual_init),
                ReLU(),
                _conv(c_out, c_out, kernel, 1, pad, True, residual_init),
            ]))
        boundaries.append(len(layers))
        c_in = int(c_out)
    if num_classes is not None:
        shape = input_shape
        for layer in layers:
            shape = layer.out_shape(shape)
        layers.append(Flatten())
        layers.append(_dense(math.prod(shape), int(num_classes), True))
        boundaries.append(len(layers))
    initialize(layers, seed)
    return Model(layers, input_shape, precision, boundaries, seed)


# -- linear models -----------------------------------------------------------

@dataclass
class LinearModel:
    """Stack of square affine maps ``x -> W x + b`` with no nonlinearity."""

    weights: list[np.ndarray]
    biases: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.weights:
            raise ValueError("a linear model needs at least one layer")
        n = self.weights[0].shape[0]
        if not self.biases:
            self.biases = [np.zeros(n, dtype=w.dtype) for w in self.weights]
        if len(self.biases) != len(self.weights):
            raise ValueError("one bias per layer required")
        for w, b in zip(self.weights, self.biases):
            if w.shape != (n, n) or b.shape != (n,):
                raise ValueError(f"every layer must be square with width {n}")

    @property
    def width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def precision(self) -> int:
        return 32 if self.weights[0].dtype == np.float32 else 64

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.weights[0].dtype).reshape(-1)
        if x.size != self.width:
            raise ValueError(f"expected {self.width} elements, got {x.size}")
        for w, b in zip(self.weights, self.biases):
            x = w @ x + b
        return x

    def astype(self, precision: int) -> "LinearModel":
        dt = dtype_for(precision)
        return LinearModel([w.astype(dt) for w in self.weights], [b.astype(dt) for b in self.biases])

    @classmethod
    def from_model(cls, model: Model) -> "LinearModel":
        ws, bs = [], []
        for layer in model.layers:
            if not isinstance(layer, Dense):
                raise ValueError(f"only dense layers allowed in a linear model, found {layer.kind}")
            ws.append(layer.weights.copy())
            bs.append(layer.bias.copy() if layer.bias is not None
                      else np.zeros(layer.out_features, dtype=layer.weights.dtype))
        return cls(ws, bs)


def random_linear_model(width: int, depth: int, seed: int, precision: int = 64,
                        bias: bool = True) -> LinearModel:
    """Kaiming-uniform square layers; biases ``U(-1/sqrt(width), 1/sqrt(width))``."""
    rng = SeededRng(seed)
    dt = dtype_for(precision)
    bound = kaiming_bound(width)
    ws, bs = [], []
    for _ in range(depth):
        ws.append(rng.uniform((width, width), -bound, bound).astype(dt))
        if bias:
            bs.append(rng.uniform(width, -1 / math.sqrt(width), 1 / math.sqrt(width)).astype(dt))
        else:
            bs.append(np.zeros(width, dtype=dt))
    return LinearModel(ws, bs)


# -- manifest and parameter blob ---------------------------------------------
#
# Grammar (one statement per line, '#' starts a comment, indentation ignored):
#
#   reprinv-model 1
#   input <d1> [<d2> ...]
#   precision 32|64
#   seed <u64>
#   dense <in> <out> bias|nobias init=<kaiming|zero|identity>
#   conv <inC> <outC> <k> stride=<s> pad=<p> bias|nobias init=<...>
#   maxpool <window> <stride>
#   avgpool <window> <stride>
#   relu
#   flatten
#   residual            (opens a block; layers until 'endresidual' are inner)
#   endresidual
#   embed               (embedding boundary after the preceding top-level layer)

def _layer_lines(layers: Sequence[Layer], indent: str = "") -> list[str]:
    lines = []
    for layer in layers:
        bias_tok = lambda b: "bias" if b is not None else "nobias"  # noqa: E731
        if isinstance(layer, Dense):
            lines.append(f"{indent}dense {layer.in_features} {layer.out_features} "
                         f"{bias_tok(layer.bias)} init={layer.init}")
        elif isinstance(layer, Conv2d):
            oc, ic, kh, kw = layer.kernels.shape
            if kh != kw:
                raise ValueError("manifest supports square conv kernels only")
            lines.append(f"{indent}conv {ic} {oc} {kh} stride={layer.stride} pad={layer.padding} "
                         f"{bias_tok(layer.bias)} init={layer.init}")
        elif isinstance(layer, (MaxPool, AvgPool)):
            lines.append(f"{indent}{layer.kind} {layer.window} {layer.stride}")
        elif isinstance(layer, ResidualBlock):
            lines.append(f"{indent}residual")
            lines.extend(_layer_lines(layer.inner, indent + "  "))
            lines.append(f"{indent}endresidual")
        else:
            lines.append(f"{indent}{layer.kind}")
    return lines


def to_manifest(model: Model) -> str:
    if model.seed is None:
        raise ValueError("model has no seed; build it with a builder or set model.seed")
    lines = [MANIFEST_MAGIC,
             "input " + " ".join(str(d) for d in model.input_shape),
             f"precision {model.precision}",
             f"seed {model.seed}"]
    bset = set(model.boundaries)
    for i, layer in enumerate(model.layers, start=1):
        lines.extend(_layer_lines([layer]))
        if i in bset:
            lines.append("embed")
    return "\n".join(lines) + "\n"


def _parse_opts(tokens):
    pos, opts = [], {}
    for t in tokens:
        if "=" in t:
            k, v = t.split("=", 1)
            opts[k] = v
        else:
            pos.append(t)
    return pos, opts


def from_manifest(text: str) -> Model:
    """Rebuild a model from manifest text; parameters are re-drawn from the seed."""
    header = {}
    stack: list[list[Layer]] = [[]]
    boundaries = []
    seen_magic = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not seen_magic:
            if line != MANIFEST_MAGIC:
                raise ValueError(f"line {lineno}: expected '{MANIFEST_MAGIC}'")
            seen_magic = True
            continue
        word, *rest = line.split()
        try:
            if word in ("input", "precision", "seed"):
                header[word] = [int(t) for t in rest]
            elif word == "dense":
                pos, opts = _parse_opts(rest)
                stack[-1].append(_dense(int(pos[0]), int(pos[1]), pos[2] == "bias",
                                        opts.get("init", "kaiming")))
            elif word == "conv":
                pos, opts = _parse_opts(rest)
                stack[-1].append(_conv(int(pos[0]), int(pos[1]), int(pos[2]), int(opts["stride"]),
                                       int(opts["pad"]), pos[3] == "bias", opts.get("init", "kaiming")))
            elif word in ("maxpool", "avgpool"):
                cls = MaxPool if word == "maxpool" else AvgPool
                stack[-1].append(cls(int(rest[0]), int(rest[1])))
            elif word == "relu":
                stack[-1].append(ReLU())
            elif word == "flatten":
                stack[-1].append(Flatten())
            elif word == "residual":
                stack.append([])
            elif word == "endresidual":
                if len(stack) < 2:
                    raise ValueError("'endresidual' without 'residual'")
                inner = stack.pop()
                stack[-1].append(ResidualBlock(inner))
            elif word == "embed":
                if len(stack) != 1:
                    raise ValueError("'embed' inside a residual block")
                boundaries.append(len(stack[0]))
            else:
                raise ValueError(f"unknown statement {word!r}")
        except (IndexError, KeyError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    if not seen_magic:
        raise ValueError("empty manifest")
    if len(stack) != 1:
        raise ValueError("unterminated residual block")
    for key in ("input", "precision", "seed"):
        if key not in header:
            raise ValueError(f"manifest is missing '{key}'")
    layers = stack[0]
    seed = header["seed"][0]
    initialize(layers, seed)
    return Model(layers, tuple(header["input"]), header["precision"][0],
                 boundaries or None, seed)


def params_to_bytes(model: Model) -> bytes:
    """Little-endian float64 values of every parameter, in layer order."""
    flat = np.concatenate([p.astype("<f8").ravel() for p in model.params()]) if model.params() else np.zeros(0)
    return flat.astype("<f8").tobytes()


def params_from_bytes(model: Model, blob: bytes) -> None:
    params = model.params()
    total = sum(p.size for p in params)
    if len(blob) != 8 * total:
        raise ValueError(f"parameter blob has {len(blob)} bytes, expected {8 * total}")
    flat = np.frombuffer(blob, dtype="<f8")
    offset = 0
    for p in params:
        p[...] = flat[offset:offset + p.size].reshape(p.shape)
        offset += p.size


def save_model(model: Model, manifest_path, blob_path=None) -> None:
    with open(manifest_path, "w") as f:
        f.write(to_manifest(model))
    if blob_path is not None:
        with open(blob_path, "wb") as f:
            f.write(params_to_bytes(model))


def load_model(manifest_path, blob_path=None) -> Model:
    with open(manifest_path) as f:
        model = from_manifest(f.read())
    if blob_path is not None:
        with open(blob_path, "rb") as f:
            params_from_bytes(model, f.read())
    return model

