"""Raster and label I/O, map rendering, patch sampling and synthetic scenes.

Rasters (``ERSF1``) are band-interleaved-by-pixel little-endian float32 with a
one-line ASCII header ``ERSF1 <rows> <cols> <bands>``.  Label rasters
(``ERSL1``) store little-endian uint16 with header ``ERSL1 <rows> <cols>``.
In memory a feature map is a float64 array of shape (rows, cols, channels);
vectorized patches are always flattened in (row, col, channel) order with the
channel index varying fastest.
"""

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_feature_map, check_label_map
from .errors import ConfigError, DataError, MalformedHeaderError, ShapeError, TruncatedPayloadError

RASTER_MAGIC = "ERSF1"
LABEL_MAGIC = "ERSL1"

#: Fixed 16-colour palette for rendered class maps; index 0 (background) is black.
PALETTE = np.array([
    (0, 0, 0),
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
    (250, 190, 190),
    (0, 128, 128),
    (230, 190, 255),
    (170, 110, 40),
    (255, 250, 200),
    (128, 0, 0),
], dtype=np.uint8)


def atomic_write(path, payload):
    """Write bytes to ``path`` through a temporary file and an atomic rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_header(path, magic, n_fields):
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such raster file: {path}")
    with open(path, "rb") as fh:
        data = fh.read()
    nl = data.find(b"\n")
    if nl < 0 or nl > 256:
        raise MalformedHeaderError(f"{path}: missing header line")
    try:
        parts = data[:nl].decode("ascii").split()
    except UnicodeDecodeError as exc:
        raise MalformedHeaderError(f"{path}: header is not ASCII") from exc
    if len(parts) != n_fields + 1 or parts[0] != magic:
        raise MalformedHeaderError(f"{path}: expected '{magic}' header with {n_fields} sizes")
    try:
        dims = tuple(int(p) for p in parts[1:])
    except ValueError as exc:
        raise MalformedHeaderError(f"{path}: non-integer size in header") from exc
    if min(dims) < 1:
        raise MalformedHeaderError(f"{path}: header sizes must be positive, got {dims}")
    return dims, data[nl + 1:]


def read_raster(path):
    """Read an ``ERSF1`` file into a float64 (rows, cols, bands) array."""
    (rows, cols, bands), payload = _read_header(path, RASTER_MAGIC, 3)
    expected = rows * cols * bands * 4
    if len(payload) != expected:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return values.reshape(rows, cols, bands)


def write_raster(fmap, path):
    """Write a feature map as ``ERSF1`` (values are quantized to float32)."""
    arr = np.asarray(fmap)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ShapeError(f"cannot write raster of shape {arr.shape}")
    arr = check_feature_map(arr)
    rows, cols, bands = arr.shape
    header = f"{RASTER_MAGIC} {rows} {cols} {bands}\n".encode("ascii")
    atomic_write(path, header + arr.astype("<f4").tobytes(order="C"))


def read_labels(path):
    (rows, cols), payload = _read_header(path, LABEL_MAGIC, 2)
    expected = rows * cols * 2
    if len(payload) != expected:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    return np.frombuffer(payload, dtype="<u2").astype(np.int64).reshape(rows, cols)


def write_labels(labels, path):
    arr = check_label_map(labels)
    if arr.max() > np.iinfo(np.uint16).max:
        raise DataError("labels exceed the uint16 range")
    rows, cols = arr.shape
    header = f"{LABEL_MAGIC} {rows} {cols}\n".encode("ascii")
    atomic_write(path, header + arr.astype("<u2").tobytes(order="C"))


def _ppm_bytes(rgb):
    rows, cols, _ = rgb.shape
    return f"P6\n{cols} {rows}\n255\n".encode("ascii") + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()


def render_map(labels, path):
    """Render a label map as a binary PPM using :data:`PALETTE`."""
    arr = check_label_map(labels)
    if arr.max() >= len(PALETTE):
        raise DataError(f"label {arr.max()} exceeds the {len(PALETTE)}-colour palette")
    atomic_write(path, _ppm_bytes(PALETTE[arr]))


def render_feature(values, path):
    """Render one real-valued 2-D feature as a grey-level PPM (min→black, max→white)."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ShapeError("feature rendering expects a 2-D array")
    lo, hi = v.min(), v.max()
    scaled = np.zeros_like(v) if hi == lo else (v - lo) / (hi - lo)
    grey = np.rint(scaled * 255).astype(np.uint8)
    atomic_write(path, _ppm_bytes(np.repeat(grey[:, :, None], 3, axis=2)))


def extract_patches(maps, r, n, seed):
    """Sample ``n`` r×r windows uniformly (with replacement) over all maps and positions.

    Returns an (n, r*r*channels) matrix of vectorized windows.
    """
    if isinstance(maps, np.ndarray) and maps.ndim in (2, 3):
        maps = [maps]
    maps = [check_feature_map(m) for m in maps]
    if not maps:
        raise DataError("no maps to sample patches from")
    if r < 1 or n < 1:
        raise ConfigError("receptive field and patch count must be positive")
    channels = {m.shape[2] for m in maps}
    if len(channels) != 1:
        raise ShapeError(f"maps have differing channel counts {sorted(channels)}")
    for i, m in enumerate(maps):
        if m.shape[0] < r or m.shape[1] < r:
            raise ShapeError(f"receptive field {r} exceeds map {i} of size {m.shape[0]}x{m.shape[1]}")

    n_pos = np.array([(m.shape[0] - r + 1) * (m.shape[1] - r + 1) for m in maps])
    rng = np.random.default_rng(seed)
    flat = rng.integers(0, n_pos.sum(), size=n)
    which = np.searchsorted(np.cumsum(n_pos), flat, side="right")
    offsets = flat - np.concatenate(([0], np.cumsum(n_pos)[:-1]))[which]

    out = np.empty((n, r * r * maps[0].shape[2]))
    for i, m in enumerate(maps):
        sel = np.flatnonzero(which == i)
        if sel.size == 0:
            continue
        ncols = m.shape[1] - r + 1
        ys, xs = np.divmod(offsets[sel], ncols)
        dy, dx = np.meshgrid(np.arange(r), np.arange(r), indexing="ij")
        win = m[ys[:, None, None] + dy, xs[:, None, None] + dx]  # (k, r, r, channels)
        out[sel] = win.reshape(sel.size, -1)
    return out


def normalize_patches(patches, eps=1e-2):
    """Per-row brightness/contrast normalization: ``(x - mean) / (std + eps)``.

    ``eps`` is on the scale of the data; 1e-2 suits unit-range imagery (the
    usual value of 10 for 0..255 data rescaled).  Constant rows map to zeros.
    """
    X = np.asarray(patches, dtype=np.float64)
    centred = X - X.mean(axis=-1, keepdims=True)
    denom = centred.std(axis=-1, keepdims=True) + eps
    with np.errstate(invalid="ignore", divide="ignore"):
        out = centred / denom
    out[~np.isfinite(out)] = 0.0
    return out


# ---------------------------------------------------------------------------
# synthetic scenes

TEXTURE_PATTERNS = ("hstripes", "vstripes", "checker")


@dataclass
class ClassSpec:
    """One synthetic class.

    ``kind="spectral"``: every pixel is ``signatures[0]`` plus noise.
    ``kind="texture"``: pixels alternate between ``signatures[0]`` and
    ``signatures[1]`` following ``pattern`` with a full period of ``period``
    pixels, so texture classes built on the same pair share per-pixel marginals.
    """

    kind: str = "spectral"
    signatures: tuple = (0,)
    pattern: str = "hstripes"
    period: int = 2


@dataclass
class SynthSpec:
    rows: int = 128
    cols: int = 128
    channels: int = 8
    noise: float = 0.1
    grid: tuple = (2, 2)
    classes: list = field(default_factory=list)
    layout: list = None  # class id (1..K) per grid cell, row-major; default cycles

    def validate(self):
        K = len(self.classes)
        if K == 0:
            raise ConfigError("synthetic spec needs at least one class")
        if K >= len(PALETTE):
            raise ConfigError(f"at most {len(PALETTE) - 1} classes are supported")
        gr, gc = self.grid
        if gr < 1 or gc < 1:
            raise ConfigError("region grid must be at least 1x1")
        if self.rows < gr or self.cols < gc:
            raise ConfigError(f"image {self.rows}x{self.cols} is smaller than region grid {gr}x{gc}")
        if self.channels < 1:
            raise ConfigError("channels must be positive")
        if self.noise < 0:
            raise ConfigError("noise must be non-negative")
        layout = self.cell_layout()
        if len(layout) != gr * gc:
            raise ConfigError(f"layout lists {len(layout)} cells for a {gr}x{gc} grid")
        if any(not 1 <= c <= K for c in layout):
            raise ConfigError("layout references an undefined class")
        n_sig = self.n_signatures()
        for k, cls in enumerate(self.classes, start=1):
            if cls.kind == "spectral":
                if len(cls.signatures) != 1:
                    raise ConfigError(f"class {k}: spectral classes take one signature")
            elif cls.kind == "texture":
                if len(cls.signatures) != 2:
                    raise ConfigError(f"class {k}: texture classes take two signatures")
                if cls.pattern not in TEXTURE_PATTERNS:
                    raise ConfigError(f"class {k}: unknown pattern {cls.pattern!r}")
                if cls.period < 2 or cls.period % 2:
                    raise ConfigError(f"class {k}: period must be an even integer >= 2")
                for (r0, r1), (c0, c1) in self._cells_of(k):
                    if (r1 - r0) % cls.period or (c1 - c0) % cls.period:
                        raise ConfigError(
                            f"class {k}: region {r1 - r0}x{c1 - c0} is not a multiple of period {cls.period}")
            else:
                raise ConfigError(f"class {k}: unknown kind {cls.kind!r}")
            if any(not 0 <= s < n_sig for s in cls.signatures):
                raise ConfigError(f"class {k}: bad signature index")
        return self

    def n_signatures(self):
        return 1 + max((max(c.signatures) for c in self.classes), default=-1)

    def cell_layout(self):
        gr, gc = self.grid
        if self.layout is not None:
            return list(self.layout)
        return [i % len(self.classes) + 1 for i in range(gr * gc)]

    def cell_bounds(self):
        """Row and column boundaries of the region grid (near-equal splits)."""
        gr, gc = self.grid
        rb = [self.rows * i // gr for i in range(gr + 1)]
        cb = [self.cols * j // gc for j in range(gc + 1)]
        return rb, cb

    def _cells_of(self, k):
        rb, cb = self.cell_bounds()
        gc = self.grid[1]
        for idx, c in enumerate(self.cell_layout()):
            if c == k:
                i, j = divmod(idx, gc)
                yield (rb[i], rb[i + 1]), (cb[j], cb[j + 1])

    def region_areas(self):
        """Expected pixel count per class id."""
        areas = {k: 0 for k in range(1, len(self.classes) + 1)}
        for k in areas:
            for (r0, r1), (c0, c1) in self._cells_of(k):
                areas[k] += (r1 - r0) * (c1 - c0)
        return areas

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["classes"] = [c if isinstance(c, ClassSpec) else ClassSpec(**{
            **c, "signatures": tuple(c.get("signatures", (0,)))}) for c in d.get("classes", [])]
        if "grid" in d:
            d["grid"] = tuple(d["grid"])
        return cls(**d)


def default_acceptance_spec():
    """128x128x8, two spectral and two texture classes on a 2x2 grid, noise 0.1."""
    return SynthSpec(
        rows=128, cols=128, channels=8, noise=0.1, grid=(2, 2),
        classes=[
            ClassSpec("spectral", (0,)),
            ClassSpec("spectral", (1,)),
            ClassSpec("texture", (2, 3), "hstripes", 2),
            ClassSpec("texture", (2, 3), "vstripes", 2),
        ],
    )


def texture_task_spec(noise=0.1, rows=128, cols=128, channels=8, period=2):
    """Two texture classes with identical per-pixel marginals (stripe orientation only)."""
    return SynthSpec(
        rows=rows, cols=cols, channels=channels, noise=noise, grid=(2, 2),
        classes=[
            ClassSpec("texture", (0, 1), "hstripes", period),
            ClassSpec("texture", (0, 1), "vstripes", period),
        ],
        layout=[1, 2, 2, 1],
    )


def _texture_mask(pattern, period, h, w):
    half = period // 2
    yy, xx = np.mgrid[0:h, 0:w]
    if pattern == "hstripes":
        return (yy // half) % 2 == 1
    if pattern == "vstripes":
        return (xx // half) % 2 == 1
    return ((yy // half) + (xx // half)) % 2 == 1


def synth_dataset(spec, seed):
    """Generate a (rows, cols, channels) image and its label map from ``spec``."""
    if isinstance(spec, dict):
        spec = SynthSpec.from_dict(spec)
    spec.validate()
    rng = np.random.default_rng(seed)
    signatures = rng.uniform(0.0, 1.0, size=(spec.n_signatures(), spec.channels))
    image = np.empty((spec.rows, spec.cols, spec.channels))
    labels = np.zeros((spec.rows, spec.cols), dtype=np.int64)
    for k, cls in enumerate(spec.classes, start=1):
        for (r0, r1), (c0, c1) in spec._cells_of(k):
            labels[r0:r1, c0:c1] = k
            if cls.kind == "spectral":
                image[r0:r1, c0:c1] = signatures[cls.signatures[0]]
            else:
                mask = _texture_mask(cls.pattern, cls.period, r1 - r0, c1 - c0)
                a, b = signatures[cls.signatures[0]], signatures[cls.signatures[1]]
                image[r0:r1, c0:c1] = np.where(mask[:, :, None], b, a)
    if spec.noise > 0:
        image += rng.normal(0.0, spec.noise, size=image.shape)
    return image, labels
