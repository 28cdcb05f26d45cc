"""Miniature trainable encoder-decoder pixel classifier with MC dropout.

The network is a small U-shaped CNN: ``encoder_blocks`` stages of
[dropout -> 3x3 conv -> leaky ReLU -> 2x average pool], a mirrored decoder with
2x nearest-neighbor upsampling and skip connections, and two sibling 1x1
output heads (object and contour logits).  Dropout sits before every
encoder block and is resampled per stochastic pass, which is what makes
repeated forward passes behave like posterior samples.

All gradients are analytic; finite differences are only used by tests.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from segal.core import InvalidInputError, softmax_grid

CHECKPOINT_MAGIC = b"SEGAL1"


@dataclass(frozen=True)
class NetworkConfig:
    encoder_blocks: int = 3
    base_width: int = 8
    dropout_rate: float = 0.5
    classes: int = 2
    in_channels: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.encoder_blocks < 1:
            raise InvalidInputError("encoder_blocks must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidInputError("dropout_rate must be in [0, 1)")
        if self.classes < 2 or self.base_width < 1 or self.in_channels < 1:
            raise InvalidInputError("classes >= 2, base_width >= 1, in_channels >= 1 required")

    def block_widths(self) -> list[int]:
        return [self.base_width * (2**i) for i in range(self.encoder_blocks)]


@dataclass(frozen=True)
class LossConfig:
    weight_decay: float = 1e-4   # scales the 0.5*||weights||^2 regularizer
    aux_weight: float = 0.5      # weight of the contour-head loss term

    def __post_init__(self):
        if self.weight_decay < 0 or self.aux_weight < 0:
            raise InvalidInputError("loss weights must be non-negative")


def _layer_shapes(config: NetworkConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) pairs defining the parameter layout."""
    widths = config.block_widths()
    shapes = []
    cin = config.in_channels
    for i, w in enumerate(widths):
        shapes.append((f"enc{i}_w", (3, 3, cin, w)))
        shapes.append((f"enc{i}_b", (w,)))
        cin = w
    for i, w in enumerate(widths):
        below = widths[i + 1] if i + 1 < len(widths) else widths[-1]
        shapes.append((f"dec{i}_w", (3, 3, below + w, w)))
        shapes.append((f"dec{i}_b", (w,)))
    shapes.append(("head_main_w", (widths[0], config.classes)))
    shapes.append(("head_main_b", (config.classes,)))
    shapes.append(("head_aux_w", (widths[0], config.classes)))
    shapes.append(("head_aux_b", (config.classes,)))
    return shapes


def parameter_count(config: NetworkConfig) -> int:
    """Analytic flat parameter count for a configuration.

    Sum over encoder convs of 9*cin*w + w, over decoder convs of
    9*(below + w)*w + w, plus 2*(base_width*C + C) for the heads.
    """
    return sum(int(np.prod(shape)) for _, shape in _layer_shapes(config))


class Parameters:
    """Named weight grids and bias vectors with a flat view.

    Arrays are kept in a fixed insertion order so the flat vector layout
    is stable across the life of a model.
    """

    def __init__(self, config: NetworkConfig, arrays: dict[str, np.ndarray]):
        self.config = config
        self.arrays = arrays

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays.values()])

    def copy(self) -> "Parameters":
        return Parameters(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def add_scaled(self, other: "Parameters", scale: float) -> None:
        """In-place ``self += scale * other`` (the SGD update)."""
        for k in self.arrays:
            self.arrays[k] += scale * other.arrays[k]

    def weight_names(self) -> list[str]:
        return [k for k in self.arrays if k.endswith("_w")]

    @classmethod
    def from_flat(cls, config: NetworkConfig, flat: np.ndarray) -> "Parameters":
        arrays = {}
        offset = 0
        for name, shape in _layer_shapes(config):
            n = int(np.prod(shape))
            arrays[name] = flat[offset : offset + n].reshape(shape).copy()
            offset += n
        if offset != flat.size:
            raise InvalidInputError(
                f"flat vector has {flat.size} entries, layout needs {offset}"
            )
        return cls(config, arrays)


def init_parameters(config: NetworkConfig) -> Parameters:
    """Fan-in-scaled random weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(config.seed)
    arrays = {}
    for name, shape in _layer_shapes(config):
        if name.endswith("_b"):
            arrays[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            arrays[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return Parameters(config, arrays)


@dataclass
class DropoutMask:
    """Per-encoder-block {0,1} grids gating each block's input."""

    layers: list[np.ndarray]


def _activation_shapes(config: NetworkConfig, height: int, width: int):
    """Input shape of every encoder block for a given image size."""
    shapes = []
    cin = config.in_channels
    h, w = height, width
    for bw in config.block_widths():
        shapes.append((h, w, cin))
        cin = bw
        h, w = h // 2, w // 2
    return shapes


def sample_dropout_mask(
    config: NetworkConfig, height: int, width: int, rng: np.random.Generator
) -> DropoutMask:
    """Sample independent keep/drop bits for every gated unit.

    Each unit is kept with probability ``1 - dropout_rate``; the
    inverted-dropout rescale by 1/(1-p) happens where the mask is applied.
    """
    p = config.dropout_rate
    layers = [
        (rng.random(shape) >= p).astype(np.float64)
        for shape in _activation_shapes(config, height, width)
    ]
    return DropoutMask(layers)


# -- low-level layers ---------------------------------------------------

def _im2col(x):
    """Flatten every 3x3 neighborhood (zero padding) into a row."""
    h, wd, c = x.shape
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    windows = sliding_window_view(xp, (3, 3), axis=(0, 1))   # (H, W, C, 3, 3)
    return windows.transpose(0, 1, 3, 4, 2).reshape(h * wd, 9 * c)


def _conv3(x, w, b):
    """3x3 same conv (zero padding) on an (H, W, Cin) grid.

    Returns the output and the im2col matrix needed for the backward pass.
    """
    h, wd, cin = x.shape
    cout = w.shape[-1]
    cols = _im2col(x)
    out = cols @ w.reshape(9 * cin, cout) + b
    return out.reshape(h, wd, cout), cols


def _conv3_backward(cols, w, x_shape, dout):
    h, wd, cin = x_shape
    cout = w.shape[-1]
    dflat = dout.reshape(h * wd, cout)
    dw = (cols.T @ dflat).reshape(3, 3, cin, cout)
    db = dflat.sum(axis=0)
    # input gradient is the transposed conv: correlate dout with the
    # spatially flipped, channel-swapped kernel
    wflip = w[::-1, ::-1].transpose(0, 1, 3, 2).reshape(9 * cout, cin)
    dx = (_im2col(dout) @ wflip).reshape(h, wd, cin)
    return dw, db, dx


LEAK = 0.05


def _leaky_relu(z):
    return np.where(z > 0.0, z, LEAK * z)


def _leaky_relu_grad(z):
    return np.where(z > 0.0, 1.0, LEAK)


def _avgpool2(x):
    h, w, c = x.shape
    return x.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))


def _avgpool2_backward(dout, in_shape):
    return np.repeat(np.repeat(dout, 2, axis=0), 2, axis=1) / 4.0


def _upsample2(x):
    return np.repeat(np.repeat(x, 2, axis=0), 2, axis=1)


def _upsample2_backward(dout):
    h, w, c = dout.shape
    return dout.reshape(h // 2, 2, w // 2, 2, c).sum(axis=(1, 3))


def _forward_cached(params: Parameters, image: np.ndarray, mask: DropoutMask | None):
    cfg = params.config
    h, w, cin = image.shape
    div = 2**cfg.encoder_blocks
    if h % div or w % div:
        raise InvalidInputError(
            f"image size {h}x{w} not divisible by 2^{cfg.encoder_blocks}"
        )
    if cin != cfg.in_channels:
        raise InvalidInputError(f"expected {cfg.in_channels} channels, got {cin}")

    a = params.arrays
    keep = 1.0 - cfg.dropout_rate
    cache = {"enc": [], "dec": [], "drop": []}

    x = image
    skips = []
    for i in range(cfg.encoder_blocks):
        if mask is not None:
            factor = mask.layers[i] / keep
            x = x * factor
            cache["drop"].append(factor)
        else:
            cache["drop"].append(None)
        z, cols = _conv3(x, a[f"enc{i}_w"], a[f"enc{i}_b"])
        e = _leaky_relu(z)
        cache["enc"].append((cols, x.shape, z))
        skips.append(e)
        x = _avgpool2(e)

    y = x
    dec_order = list(reversed(range(cfg.encoder_blocks)))
    for i in dec_order:
        u = _upsample2(y)
        cat = np.concatenate([u, skips[i]], axis=2)
        z, cols = _conv3(cat, a[f"dec{i}_w"], a[f"dec{i}_b"])
        y = _leaky_relu(z)
        cache["dec"].append((i, cols, cat.shape, z, u.shape[2]))

    yflat = y.reshape(-1, y.shape[2])
    main = (yflat @ a["head_main_w"] + a["head_main_b"]).reshape(h, w, cfg.classes)
    aux = (yflat @ a["head_aux_w"] + a["head_aux_b"]).reshape(h, w, cfg.classes)
    cache["top"] = y
    return main, aux, cache


def forward(params: Parameters, image: np.ndarray, mask: DropoutMask | None = None):
    """Run the network; returns (main_logits, aux_logits), each (H, W, C).

    ``mask=None`` is the deterministic pass: no units dropped, no rescale.
    """
    main, aux, _ = _forward_cached(params, image, mask)
    return main, aux


@dataclass
class LossResult:
    total: float
    main_ce: float
    aux_ce: float
    regularizer: float
    labeled_pixels: int

    @property
    def data_free(self) -> bool:
        """True when no pixel carried a training label (regularizer only)."""
        return self.labeled_pixels == 0


def _masked_ce(logits, labels, train_mask):
    """Mean cross-entropy over train_mask=1 pixels; also the logit gradient.

    Returns (ce, dlogits_unscaled, n) where dlogits already includes the
    1/n averaging but not any outer loss weight.
    """
    n = int(train_mask.sum())
    if n == 0:
        return 0.0, np.zeros_like(logits), 0
    m = train_mask.astype(bool)
    lg = logits[m]                              # (n, C)
    lb = labels[m]
    shifted = lg - lg.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    z = e.sum(axis=1)
    rows = np.arange(n)
    ce = float((np.log(z) - shifted[rows, lb]).mean())
    probs = e / z[:, None]
    probs[rows, lb] -= 1.0
    dlogits = np.zeros_like(logits)
    dlogits[m] = probs / n
    return ce, dlogits, n


def _regularizer(params: Parameters) -> float:
    return 0.5 * sum(float((params.arrays[k] ** 2).sum()) for k in params.weight_names())


def loss(
    main_logits,
    aux_logits,
    labels,
    contour_labels,
    train_mask,
    params: Parameters,
    cfg: LossConfig,
) -> LossResult:
    """Total training loss: weight decay + weighted contour CE + object CE.

    Cross-entropies average over train_mask=1 pixels only; labels at
    masked-out pixels never influence the value.
    """
    train_mask = np.asarray(train_mask)
    if train_mask.shape != main_logits.shape[:2]:
        raise InvalidInputError("train_mask shape must match logits")
    main_ce, _, n = _masked_ce(main_logits, np.asarray(labels), train_mask)
    aux_ce, _, _ = _masked_ce(aux_logits, np.asarray(contour_labels), train_mask)
    reg = cfg.weight_decay * _regularizer(params)
    total = reg + cfg.aux_weight * aux_ce + main_ce
    return LossResult(total, main_ce, aux_ce, reg, n)


def gradient(
    params: Parameters,
    image,
    mask: DropoutMask | None,
    labels,
    contour_labels,
    train_mask,
    cfg: LossConfig,
):
    """Analytic gradient of the training loss for one image.

    Returns (LossResult, Parameters-shaped gradients).  The dropout mask
    is held fixed, so this is the exact gradient of the masked network.
    """
    net = params.config
    main, aux, cache = _forward_cached(params, image, mask)
    train_mask = np.asarray(train_mask)
    main_ce, dmain, n = _masked_ce(main, np.asarray(labels), train_mask)
    aux_ce, daux, _ = _masked_ce(aux, np.asarray(contour_labels), train_mask)
    reg = cfg.weight_decay * _regularizer(params)
    total = reg + cfg.aux_weight * aux_ce + main_ce
    result = LossResult(total, main_ce, aux_ce, reg, n)

    a = params.arrays
    grads = {k: np.zeros_like(v) for k, v in a.items()}

    # heads (1x1 convs)
    y = cache["top"]
    h, w, top_c = y.shape
    yflat = y.reshape(-1, top_c)
    dmain_flat = dmain.reshape(-1, net.classes)
    daux_flat = cfg.aux_weight * daux.reshape(-1, net.classes)
    grads["head_main_w"] += yflat.T @ dmain_flat
    grads["head_main_b"] += dmain_flat.sum(axis=0)
    grads["head_aux_w"] += yflat.T @ daux_flat
    grads["head_aux_b"] += daux_flat.sum(axis=0)
    dy = (dmain_flat @ a["head_main_w"].T + daux_flat @ a["head_aux_w"].T).reshape(y.shape)

    # decoder, top stage first (it was computed last)
    dskips = [None] * net.encoder_blocks
    for i, cols, cat_shape, z, up_c in reversed(cache["dec"]):
        dz = dy * _leaky_relu_grad(z)
        dw, db, dcat = _conv3_backward(cols, a[f"dec{i}_w"], cat_shape, dz)
        grads[f"dec{i}_w"] += dw
        grads[f"dec{i}_b"] += db
        dskips[i] = dcat[:, :, up_c:]
        dy = _upsample2_backward(dcat[:, :, :up_c])

    # encoder, deepest block first; dy currently sits at the pooled bottom
    for i in reversed(range(net.encoder_blocks)):
        cols, x_shape, z = cache["enc"][i]
        de = _avgpool2_backward(dy, z.shape) + dskips[i]
        dz = de * _leaky_relu_grad(z)
        dw, db, dx = _conv3_backward(cols, a[f"enc{i}_w"], x_shape, dz)
        grads[f"enc{i}_w"] += dw
        grads[f"enc{i}_b"] += db
        factor = cache["drop"][i]
        dy = dx if factor is None else dx * factor

    if cfg.weight_decay > 0.0:
        for k in params.weight_names():
            grads[k] += cfg.weight_decay * a[k]

    return result, Parameters(net, grads)


@dataclass
class TrainExample:
    """One labeled training image with its contour targets and loss mask."""

    image: np.ndarray
    labels: np.ndarray
    contour_labels: np.ndarray
    train_mask: np.ndarray


def train(
    params: Parameters,
    examples: list[TrainExample],
    epochs: int,
    learning_rate: float,
    cfg: LossConfig,
    rng: np.random.Generator,
):
    """Plain SGD, one image per step, a fresh dropout mask every step.

    Returns (trained parameters, per-step loss trace).  Deterministic for
    a fixed rng state; the input parameters are not modified.
    """
    if not examples or all(int(ex.train_mask.sum()) == 0 for ex in examples):
        raise InvalidInputError("training needs at least one labeled pixel")
    net = params.config
    theta = params.copy()
    trace = []
    for _ in range(epochs):
        order = rng.permutation(len(examples))
        for idx in order:
            ex = examples[idx]
            h, w, _ = ex.image.shape
            mask = sample_dropout_mask(net, h, w, rng)
            result, grads = gradient(
                theta, ex.image, mask, ex.labels, ex.contour_labels, ex.train_mask, cfg
            )
            theta.add_scaled(grads, -learning_rate)
            trace.append(result.total)
    return theta, trace


def mc_predict(
    params: Parameters, image, passes: int, rng: np.random.Generator
):
    """Average ``passes`` stochastic forward passes of the object head.

    Returns (mean map (H, W, C), stack (passes, H, W, C)).  Each pass
    draws an independent dropout mask; with dropout_rate 0 all passes
    coincide with the deterministic forward.
    """
    if passes < 1:
        raise InvalidInputError("passes must be >= 1")
    h, w, _ = image.shape
    maps = np.empty((passes, h, w, params.config.classes))
    for t in range(passes):
        mask = sample_dropout_mask(params.config, h, w, rng)
        main, _ = forward(params, image, mask)
        maps[t] = softmax_grid(main)
    return maps.mean(axis=0), maps


def evaluate_loss(
    params: Parameters, examples: list[TrainExample], cfg: LossConfig
) -> float:
    """Deterministic-pass data loss pooled over all labeled pixels.

    Used to rank restart candidates; the weight-decay term is excluded
    so the comparison reflects fit, not parameter norms.
    """
    total = 0.0
    pixels = 0
    for ex in examples:
        main, aux = forward(params, ex.image, None)
        main_ce, _, n = _masked_ce(main, ex.labels, ex.train_mask)
        aux_ce, _, _ = _masked_ce(aux, ex.contour_labels, ex.train_mask)
        total += n * (main_ce + cfg.aux_weight * aux_ce)
        pixels += n
    if pixels == 0:
        raise InvalidInputError("no labeled pixels to evaluate")
    return total / pixels


# -- checkpoint serialization -------------------------------------------

_HEADER = struct.Struct("<IIIIdqQ")  # blocks, width, classes, channels, p, seed, count


def save_checkpoint(params: Parameters, path) -> None:
    """Write a little-endian binary checkpoint (magic ``SEGAL1``)."""
    cfg = params.config
    flat = params.flat()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(
            _HEADER.pack(
                cfg.encoder_blocks,
                cfg.base_width,
                cfg.classes,
                cfg.in_channels,
                cfg.dropout_rate,
                cfg.seed,
                flat.size,
            )
        )
        fh.write(flat.astype("<f8").tobytes())


def load_checkpoint(path) -> Parameters:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise InvalidInputError(f"not a checkpoint file: bad magic {magic!r}")
        blocks, width, classes, channels, p, seed, count = _HEADER.unpack(
            fh.read(_HEADER.size)
        )
        cfg = NetworkConfig(
            encoder_blocks=blocks,
            base_width=width,
            dropout_rate=p,
            classes=classes,
            in_channels=channels,
            seed=seed,
        )
        flat = np.frombuffer(fh.read(count * 8), dtype="<f8").astype(np.float64)
    if flat.size != parameter_count(cfg):
        raise InvalidInputError("checkpoint payload does not match its config")
    return Parameters.from_flat(cfg, flat)
