"""Forward computation of convolutional feature layers.

A layer is ``pool(act(conv(x, W) + b))``; "convolution" here is valid
cross-correlation (no kernel flip, no padding), filters are stored as rows of
``W`` flattened in (row, col, channel) order to match
:func:`featlearn.imageio.extract_patches`.
"""

from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ._validation import check_feature_map
from .errors import ConfigError, ShapeError
from .imageio import normalize_patches

NONLINEARITIES = ("logistic", "identity", "rectifier")


@dataclass
class FilterBank:
    W: np.ndarray
    b: np.ndarray
    receptive_field: int

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W, dtype=np.float64))
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if self.W.shape[0] != self.b.shape[0]:
            raise ShapeError(f"{self.W.shape[0]} filters but {self.b.shape[0]} biases")
        r2 = self.receptive_field ** 2
        if self.W.shape[1] % r2:
            raise ShapeError(f"filter length {self.W.shape[1]} is not a multiple of r*r={r2}")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ShapeError("filter bank holds non-finite values")

    @property
    def n_outputs(self):
        return self.W.shape[0]

    @property
    def in_channels(self):
        return self.W.shape[1] // self.receptive_field ** 2


@dataclass
class LayerSpec:
    """One layer of an architecture.

    ``nonlinearity`` is the training activation; ``encoder`` is the activation
    used at feature-extraction time (``None`` means the natural encoding, i.e.
    the training activation).  ``pooling`` is the side of a non-overlapping
    max-pool window, 0 or 1 for no pooling.
    """

    n_outputs: int
    receptive_field: int
    stride: int = 1
    nonlinearity: str = "logistic"
    encoder: str = None
    pooling: int = 0
    polarity_split: bool = False

    def __post_init__(self):
        if self.n_outputs < 1 or self.receptive_field < 1 or self.stride < 1:
            raise ConfigError("n_outputs, receptive_field and stride must be positive")
        for kind in (self.nonlinearity, self.encoding):
            if kind not in NONLINEARITIES:
                raise ConfigError(f"unknown nonlinearity {kind!r}")
        if self.pooling not in (0, 1) and self.pooling < 2:
            raise ConfigError("pooling must be 0 (off) or a window side >= 2")

    @property
    def encoding(self):
        return self.encoder or self.nonlinearity

    @property
    def out_channels(self):
        return self.n_outputs * (2 if self.polarity_split else 1)


@dataclass
class ArchitectureSpec:
    """Ordered layers plus the input channel count.

    ``normalize_input`` applies per-window brightness/contrast normalization
    to the first layer's input both when sampling training patches and when
    encoding, so filters see the same statistics in both phases.
    """

    in_channels: int
    layers: list = field(default_factory=list)
    normalize_input: bool = True
    normalize_eps: float = 1e-2

    def __post_init__(self):
        self.layers = [l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in self.layers]
        if self.in_channels < 1:
            raise ConfigError("in_channels must be positive")
        if not self.layers:
            raise ConfigError("architecture needs at least one layer")
        for i, layer in enumerate(self.layers[:-1], start=1):
            if layer.polarity_split:
                raise ConfigError(f"layer {i}: polarity split is only allowed on the top layer")

    def layer_in_channels(self, index):
        return self.in_channels if index == 0 else self.layers[index - 1].out_channels

    def output_shape(self, rows, cols):
        """Trace (rows, cols, channels) through every layer; raises on a broken chain."""
        for i, layer in enumerate(self.layers, start=1):
            r = layer.receptive_field
            if rows < r or cols < r:
                raise ShapeError(
                    f"layer {i}: receptive field {r} exceeds input map {rows}x{cols}")
            rows = (rows - r) // layer.stride + 1
            cols = (cols - r) // layer.stride + 1
            if layer.pooling >= 2:
                rows = -(-rows // layer.pooling)
                cols = -(-cols // layer.pooling)
        return rows, cols, self.layers[-1].out_channels

    def to_dict(self):
        return {"in_channels": self.in_channels, "normalize_input": self.normalize_input,
                "normalize_eps": self.normalize_eps,
                "layers": [asdict(layer) for layer in self.layers]}


def window_matrix(fmap, r, stride=1):
    """All r×r windows of ``fmap`` as an (R', C', r*r*channels) array."""
    fmap = check_feature_map(fmap)
    if fmap.shape[0] < r or fmap.shape[1] < r:
        raise ShapeError(f"receptive field {r} exceeds input {fmap.shape[0]}x{fmap.shape[1]}")
    win = sliding_window_view(fmap, (r, r), axis=(0, 1))[::stride, ::stride]
    # (R', C', channels, r, r) -> (R', C', r, r, channels)
    win = win.transpose(0, 1, 3, 4, 2)
    return win.reshape(win.shape[0], win.shape[1], -1)


def convolve_valid(fmap, filters, stride=1, normalize_eps=None):
    """Valid multi-channel cross-correlation, pre-activation.

    If ``normalize_eps`` is given each window is brightness/contrast
    normalized before the dot product.
    """
    fmap = check_feature_map(fmap)
    if fmap.shape[2] != filters.in_channels:
        raise ShapeError(f"input has {fmap.shape[2]} channels, filters expect {filters.in_channels}")
    win = window_matrix(fmap, filters.receptive_field, stride)
    if normalize_eps is not None:
        win = normalize_patches(win, normalize_eps)
    return win @ filters.W.T + filters.b


def apply_nonlinearity(x, kind):
    x = np.asarray(x, dtype=np.float64)
    if kind == "logistic":
        return expit(x)
    if kind == "identity":
        return x.copy()
    if kind == "rectifier":
        return np.maximum(x, 0.0)
    raise ConfigError(f"unknown nonlinearity {kind!r}")


def nonlinearity_derivative(z, kind):
    """Derivative of the activation at pre-activation ``z`` (0 at the rectifier kink)."""
    if kind == "logistic":
        s = expit(z)
        return s * (1.0 - s)
    if kind == "identity":
        return np.ones_like(z)
    if kind == "rectifier":
        return (z > 0).astype(np.float64)
    raise ConfigError(f"unknown nonlinearity {kind!r}")


def max_pool(fmap, P):
    """Non-overlapping P×P max pooling; partial border windows are kept."""
    if P < 2:
        raise ConfigError("pool side must be >= 2")
    fmap = check_feature_map(fmap)
    R, C, K = fmap.shape
    Ro, Co = -(-R // P), -(-C // P)
    padded = np.full((Ro * P, Co * P, K), -np.inf)
    padded[:R, :C] = fmap
    return padded.reshape(Ro, P, Co, P, K).max(axis=(1, 3))


def quadrant_sum_pool(fmap):
    """Sum each channel over the four quadrants, ordered TL, TR, BL, BR.

    Rows split at floor(R/2) and columns at floor(C/2), so an odd trailing
    row/column goes to the bottom/right quadrants.
    """
    fmap = check_feature_map(fmap)
    R, C, _ = fmap.shape
    if R < 2 or C < 2:
        raise ShapeError(f"quadrant pooling needs at least 2x2, got {R}x{C}")
    h, w = R // 2, C // 2
    quads = (fmap[:h, :w], fmap[:h, w:], fmap[h:, :w], fmap[h:, w:])
    return np.concatenate([q.sum(axis=(0, 1)) for q in quads])


def _encode(fmap, filters, spec, normalize_eps, sign):
    bank = filters if sign > 0 else FilterBank(-filters.W, filters.b, filters.receptive_field)
    out = apply_nonlinearity(convolve_valid(fmap, bank, spec.stride, normalize_eps), spec.encoding)
    if spec.pooling >= 2:
        out = max_pool(out, spec.pooling)
    return out


def polarity_split(fmap, filters, spec, normalize_eps=None):
    """Concatenate responses to ``W`` and ``-W`` (same bias) along channels."""
    pos = _encode(fmap, filters, spec, normalize_eps, +1)
    neg = _encode(fmap, filters, spec, normalize_eps, -1)
    return np.concatenate([pos, neg], axis=2)


def forward_layer(fmap, filters, spec, normalize_eps=None):
    """conv -> encoder activation -> (polarity split) -> max pool."""
    if filters.receptive_field != spec.receptive_field or filters.n_outputs != spec.n_outputs:
        raise ShapeError("filter bank does not match the layer spec")
    if spec.polarity_split:
        return polarity_split(fmap, filters, spec, normalize_eps)
    return _encode(fmap, filters, spec, normalize_eps, +1)


def bilinear_upsample(fmap, rows, cols):
    """Bilinear resize with half-pixel centres (source coords clamped to the map)."""
    fmap = check_feature_map(fmap)
    R, C, _ = fmap.shape
    if rows < R or cols < C:
        raise ShapeError(f"target {rows}x{cols} is smaller than source {R}x{C}")

    def axis_weights(n_src, n_dst):
        src = (np.arange(n_dst) + 0.5) * n_src / n_dst - 0.5
        src = np.clip(src, 0, n_src - 1)
        i0 = np.floor(src).astype(np.intp)
        i1 = np.minimum(i0 + 1, n_src - 1)
        return i0, i1, src - i0

    r0, r1, wr = axis_weights(R, rows)
    c0, c1, wc = axis_weights(C, cols)
    wr = wr[:, None, None]
    tmp = fmap[r0] * (1 - wr) + fmap[r1] * wr
    wc = wc[None, :, None]
    return tmp[:, c0] * (1 - wc) + tmp[:, c1] * wc


def network_forward(image, arch, params):
    """Top feature map of the whole network."""
    if len(params) != len(arch.layers):
        raise ShapeError(f"{len(params)} filter banks for {len(arch.layers)} layers")
    out = check_feature_map(image)
    if out.shape[2] != arch.in_channels:
        raise ShapeError(f"image has {out.shape[2]} channels, architecture expects {arch.in_channels}")
    arch.output_shape(out.shape[0], out.shape[1])
    for i, (layer, bank) in enumerate(zip(arch.layers, params)):
        if bank.in_channels != out.shape[2]:
            raise ShapeError(f"layer {i + 1}: filters expect {bank.in_channels} channels, "
                             f"input has {out.shape[2]}")
        eps = arch.normalize_eps if (i == 0 and arch.normalize_input) else None
        out = forward_layer(out, bank, layer, eps)
    return out


def extract_features(image, arch, params, mode="pixel"):
    """Per-pixel feature map (``mode='pixel'``) or per-image vector (``mode='scene'``).

    Pixel mode resizes the top map back to the input resolution with
    :func:`bilinear_upsample`; scene mode sums the top map over its quadrants.
    """
    top = network_forward(image, arch, params)
    if mode == "scene":
        return quadrant_sum_pool(top)
    if mode == "pixel":
        R, C = np.shape(image)[:2]
        if top.shape[:2] == (R, C):
            return top
        return bilinear_upsample(top, R, C)
    raise ConfigError(f"unknown feature mode {mode!r}")
