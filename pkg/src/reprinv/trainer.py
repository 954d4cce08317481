"""Toy classification data and plain SGD training.

Two dataset generators are provided: i.i.d. Gaussian noise images with
random labels (for memorization runs) and class-dependent geometric
patterns (a stand-in for natural images). ``train`` runs minibatch SGD on
mean cross-entropy and never mutates the model it is given.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import loss_and_param_gradients, softmax_cross_entropy
from .layers import Conv2d, Dense, Model, iter_layers
from .tensor import SeededRng, derive_seed, gaussian_draw

HISTORY_HEADER = ("epoch", "loss", "accuracy")

# sub-seed keys for dataset generation
LABEL_STREAM = 0
PIXEL_STREAM = 1
JITTER_STREAM = 2


@dataclass
class Dataset:
    """Stacked inputs ``[N, *shape]`` with integer labels."""

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.inputs.shape[1:])


def _labels(count: int, classes: int, rng: SeededRng, stratified: bool) -> np.ndarray:
    if stratified:
        labels = np.arange(count) % classes
        return labels[rng.permutation(count)]
    return rng.integers(count, classes)


def make_noise_dataset(count: int, classes: int, mu: float = 0.5, sigma: float = 1 / 3,
                       shape=(3, 16, 16), seed: int = 0, precision: int = 64) -> Dataset:
    """Gaussian-noise images with uniformly random labels."""
    if classes < 1 or count < classes:
        raise ValueError("need classes >= 1 and count >= classes")
    shape = tuple(int(s) for s in shape)
    pixels = gaussian_draw(SeededRng(derive_seed(seed, PIXEL_STREAM)), (count,) + shape, mu, sigma, precision)
    labels = SeededRng(derive_seed(seed, LABEL_STREAM)).integers(count, classes)
    return Dataset(pixels, labels, classes)


# -- structured patterns ----------------------------------------------------
# Each family maps pixel grids (yy, xx in [0, 1)) and a phase in [0, 1) to a
# {0, 1} mask. Phases jitter positions so items of one class are not identical.

def _hbars(yy, xx, ph):
    return (np.floor(yy * 4 + ph) % 2 == 0)


def _vbars(yy, xx, ph):
    return (np.floor(xx * 4 + ph) % 2 == 0)


def _diagonal(yy, xx, ph):
    return (np.floor((xx + yy) * 3 + ph) % 2 == 0)


def _disk(yy, xx, ph):
    c = 0.4 + 0.2 * ph
    return (yy - c) ** 2 + (xx - c) ** 2 < 0.09


def _ring(yy, xx, ph):
    c = 0.4 + 0.2 * ph
    r2 = (yy - c) ** 2 + (xx - c) ** 2
    return (r2 > 0.06) & (r2 < 0.16)


def _checker(yy, xx, ph):
    return (np.floor(yy * 4) + np.floor(xx * 4)) % 2 == 0


def _checker_shifted(yy, xx, ph):
    return (np.floor(yy * 4) + np.floor(xx * 4)) % 2 == 1


def _corner(yy, xx, ph):
    return (yy < 0.5) & (xx < 0.5)


PATTERN_FAMILIES = (_hbars, _vbars, _disk, _checker, _diagonal, _ring, _checker_shifted, _corner)


def make_structured_dataset(count: int, classes: int, shape=(3, 16, 16), seed: int = 0,
                            stratified: bool = True, noise: float = 0.05, precision: int = 64) -> Dataset:
    """Class ``k`` draws pattern family ``k``: bars, disks, rings, checker phases.

    Foreground 0.8 and background 0.2 are scaled per channel by a gain in
    [0.8, 1.2], then Gaussian noise of width ``noise`` is added. With
    ``stratified`` labels cycle through the classes before shuffling, so
    ``count == classes`` yields one item per class.
    """
    if not 1 <= classes <= len(PATTERN_FAMILIES):
        raise ValueError(f"classes must be in [1, {len(PATTERN_FAMILIES)}] (one pattern family each)")
    if count < classes:
        raise ValueError("need count >= classes")
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3:
        raise ValueError("structured patterns need a [C, H, W] shape")
    c, h, w = shape
    labels = _labels(count, classes, SeededRng(derive_seed(seed, LABEL_STREAM)), stratified)
    jitter = SeededRng(derive_seed(seed, JITTER_STREAM))
    phases = jitter.uniform01(count)
    gains = jitter.uniform((count, c), 0.8, 1.2)
    yy, xx = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
    base = np.empty((count, c, h, w))
    for i, k in enumerate(labels):
        mask = PATTERN_FAMILIES[k](yy, xx, phases[i])
        img = np.where(mask, 0.8, 0.2)
        base[i] = img[None] * gains[i][:, None, None]
    pixels = base + gaussian_draw(SeededRng(derive_seed(seed, PIXEL_STREAM)), base.shape, 0.0, noise)
    return Dataset(pixels.astype(np.float32 if precision == 32 else np.float64), labels, classes)


# -- training -----------------------------------------------------------------

class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"loss became non-finite ({value}) at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainHistory:
    rows: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.rows[-1][2]

    def to_csv(self, comment: str | None = None) -> str:
        buf = io.StringIO()
        if comment:
            buf.write(f"# {comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for epoch, loss, acc in self.rows:
            w.writerow([epoch, repr(loss), repr(acc)])
        return buf.getvalue()


def evaluate(model: Model, dataset: Dataset, batch: int = 256) -> tuple[float, float]:
    """Mean cross-entropy and accuracy over the whole dataset."""
    total, correct = 0.0, 0
    for start in range(0, len(dataset), batch):
        x = dataset.inputs[start:start + batch]
        y = dataset.labels[start:start + batch]
        logits = model.forward_batch(x)
        loss, _ = softmax_cross_entropy(logits.astype(np.float64), y)
        total += loss * len(y)
        correct += int(np.count_nonzero(logits.argmax(axis=1) == y))
    return total / len(dataset), correct / len(dataset)


def train(model: Model, dataset: Dataset, epochs: int, lr: float, batch: int, seed: int = 0):
    """Minibatch SGD on mean cross-entropy; returns ``(trained_copy, history)``.

    Each epoch visits the items in a fresh permutation drawn from
    ``derive_seed(seed, epoch)``. History rows hold the whole-dataset loss
    and accuracy after each epoch.
    """
    if model.output_shape != (dataset.num_classes,):
        raise ValueError(f"model output {model.output_shape} does not match {dataset.num_classes} classes")
    if model.input_shape != dataset.shape:
        raise ValueError(f"model input {model.input_shape} does not match dataset items {dataset.shape}")
    if epochs < 0 or batch < 1 or lr < 0:
        raise ValueError("need epochs >= 0, batch >= 1 and lr >= 0")
    model = model.copy()
    params = model.params()
    step = model.dtype(lr)
    history = TrainHistory()
    # overflow surfaces as a non-finite loss, reported below
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, epochs + 1):
            order = SeededRng(derive_seed(seed, epoch)).permutation(len(dataset))
            for b, start in enumerate(range(0, len(dataset), batch)):
                idx = order[start:start + batch]
                loss, _, grads = loss_and_param_gradients(model, dataset.inputs[idx], dataset.labels[idx])
                if not math.isfinite(loss):
                    raise TrainingDiverged(epoch, b, loss)
                for p, g in zip(params, grads):
                    p -= step * g
            loss, acc = evaluate(model, dataset)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, -1, loss)
            history.rows.append((epoch, loss, acc))
    return model, history


def first_layer_filters(model: Model) -> np.ndarray:
    """Weights of the first Conv2d or Dense layer as ``[out, *filter_shape]``.

    Dense rows are reshaped to the model input shape so they read as images.
    """
    for layer in iter_layers(model.layers):
        if isinstance(layer, Conv2d):
            return layer.kernels.copy()
        if isinstance(layer, Dense):
            return layer.weights.reshape((layer.out_features,) + model.input_shape).copy()
    raise ValueError("model has no Conv2d or Dense layer")


def filter_grid(filters: np.ndarray, pad: int = 1) -> np.ndarray:
    """Tile ``[N, C, h, w]`` filters into one ``[C, H, W]`` image in [0, 1].

    Each filter is min-max normalized on its own; a flat filter maps to 0.5.
    """
    f = np.asarray(filters, dtype=np.float64)
    if f.ndim == 2:
        f = f[:, None, None, :]
    elif f.ndim == 3:
        f = f[:, None]
    if f.ndim != 4:
        raise ValueError("filters must be [N, C, h, w]")
    n, c, h, w = f.shape
    lo = f.reshape(n, -1).min(axis=1)[:, None, None, None]
    hi = f.reshape(n, -1).max(axis=1)[:, None, None, None]
    span = np.where(hi > lo, hi - lo, 1.0)
    f = np.where(hi > lo, (f - lo) / span, 0.5)
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    grid = np.zeros((c, rows * (h + pad) + pad, cols * (w + pad) + pad))
    for k in range(n):
        r, q = divmod(k, cols)
        y0, x0 = pad + r * (h + pad), pad + q * (w + pad)
        grid[:, y0:y0 + h, x0:x0 + w] = f[k]
    return grid
