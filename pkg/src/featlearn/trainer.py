"""Greedy layer-wise pre-training of a convolutional architecture with EPLS."""

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .epls import Inhibitor, build_target, epls_loss, forward_batch, loss_gradient
from .errors import ConfigError, NumericError, ShapeError
from .imageio import extract_patches, normalize_patches
from .network import FilterBank, forward_layer

logger = logging.getLogger(__name__)


@dataclass
class TrainSchedule:
    """Per-layer training schedule.

    ``max_epochs=None`` means the layer's output count (never fewer than
    ``min_epochs``); ``batch_size=None`` means ``round(n_patches / n_outputs)``.
    """

    n_patches: int = 4096
    min_epochs: int = 20
    max_epochs: int = None
    tol: float = 1e-3
    batch_size: int = None
    lr: float = 1e-2
    rho: float = 0.95
    eps: float = 1e-8
    init_std: float = 1e-4
    shuffle: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_patches < 1:
            raise ConfigError("n_patches must be positive")
        if self.min_epochs < 1:
            raise ConfigError("min_epochs must be positive")
        if self.max_epochs is not None and self.max_epochs < self.min_epochs:
            raise ConfigError("max_epochs must be >= min_epochs")
        if self.batch_size is not None and not 1 <= self.batch_size <= self.n_patches:
            raise ConfigError("batch_size must lie in [1, n_patches]")
        if not 0 < self.rho < 1:
            raise ConfigError("rho must lie in (0, 1)")
        if self.lr <= 0 or self.tol <= 0 or self.init_std <= 0:
            raise ConfigError("lr, tol and init_std must be positive")

    def epoch_bounds(self, n_outputs):
        hi = n_outputs if self.max_epochs is None else self.max_epochs
        return self.min_epochs, max(hi, self.min_epochs)

    def initial_batch_size(self, n_outputs):
        if self.batch_size is not None:
            return self.batch_size
        return int(min(max(round(self.n_patches / n_outputs), 1), self.n_patches))


@dataclass
class EpochReport:
    epoch: int
    mean_error: float
    batch_size: int
    mean_lr: float
    max_lr: float
    selections: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def init_params(layer, input_dims, schedule, rng=None):
    """Gaussian initial weights and biases with standard deviation ``schedule.init_std``."""
    if input_dims < 1:
        raise ShapeError("input dimensionality must be positive")
    rng = np.random.default_rng(schedule.seed) if rng is None else rng
    W = rng.normal(0.0, schedule.init_std, size=(layer.n_outputs, input_dims))
    b = rng.normal(0.0, schedule.init_std, size=layer.n_outputs)
    return FilterBank(W, b, layer.receptive_field)


def init_sgd_state(params):
    return {name: (np.zeros_like(p), np.zeros_like(p))
            for name, p in (("W", params.W), ("b", params.b))}


def sgd_update(params, grads, state, schedule):
    """One adaptive-rate SGD step.

    Each parameter keeps running means of its gradient and squared gradient;
    its rate is ``lr * mean(g)^2 / (mean(g^2) + eps)`` clipped to ``[0, lr]``,
    so consistent directions take full steps and oscillating ones stall.
    Returns ``(params', state', rates)``.
    """
    rho, lr = schedule.rho, schedule.lr
    new_state, new_vals, rates = {}, {}, {}
    for name, value, g in (("W", params.W, grads[0]), ("b", params.b, grads[1])):
        gbar, vbar = state[name]
        gbar = rho * gbar + (1 - rho) * g
        vbar = rho * vbar + (1 - rho) * g * g
        rate = np.clip(lr * gbar * gbar / (vbar + schedule.eps), 0.0, lr)
        new_vals[name] = value - rate * g
        new_state[name] = (gbar, vbar)
        rates[name] = rate
    return FilterBank(new_vals["W"], new_vals["b"], params.receptive_field), new_state, rates


def pretrain_layer(patches, layer, schedule, params=None):
    """Train one layer on an (N, D) patch matrix; returns ``(FilterBank, [EpochReport])``."""
    X = np.asarray(patches, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("patch matrix must be 2-D")
    N, D = X.shape
    if N != schedule.n_patches:
        raise ShapeError(f"got {N} patches, schedule expects {schedule.n_patches}")
    if D % (layer.receptive_field ** 2):
        raise ShapeError(f"patch length {D} does not fit receptive field {layer.receptive_field}")
    n_out = layer.n_outputs
    kind = layer.nonlinearity

    rng = np.random.default_rng(schedule.seed)
    if params is None:
        params = init_params(layer, D, schedule, rng)
    elif params.W.shape != (n_out, D):
        raise ShapeError("initial parameters do not match the patch dimensionality")
    state = init_sgd_state(params)
    min_ep, max_ep = schedule.epoch_bounds(n_out)
    batch_size = schedule.initial_batch_size(n_out)

    reports = []
    prev = None
    for epoch in range(1, max_ep + 1):
        order = rng.permutation(N) if schedule.shuffle else np.arange(N)
        inhibitor = Inhibitor.zeros(n_out, N)
        total = 0.0
        rate_sum, rate_max, n_steps = 0.0, 0.0, 0
        for start in range(0, N, batch_size):
            rows = X[order[start:start + batch_size]]
            batch = forward_batch(rows, params.W, params.b, kind)
            T, inhibitor = build_target(batch.H, inhibitor, kind)
            total += epls_loss(batch.H, T)
            grads = loss_gradient(batch, T, kind)
            params, state, rates = sgd_update(params, grads, state, schedule)
            rate_sum += float(rates["W"].mean())
            rate_max = max(rate_max, float(rates["W"].max()))
            n_steps += 1
        err = total / N
        if not np.isfinite(err) or not np.all(np.isfinite(params.W)):
            raise NumericError(f"training diverged at epoch {epoch}")
        reports.append(EpochReport(epoch, err, batch_size, rate_sum / n_steps, rate_max,
                                   inhibitor.counts.tolist()))
        logger.debug("epoch %d error %.6g batch %d", epoch, err, batch_size)

        if prev is not None:
            if epoch >= min_ep and prev > 0 and (prev - err) / prev < schedule.tol:
                break
            if err > prev:
                batch_size = min(2 * batch_size, N)
        prev = err
    return params, reports


def pretrain_network(images, arch, schedules, return_reports=False):
    """Greedy layer-wise training of every layer of ``arch``.

    ``schedules`` is one :class:`TrainSchedule` or a list with one per layer.
    Returns one filter bank per layer, plus the per-layer epoch traces when
    ``return_reports`` is set.
    """
    if isinstance(images, np.ndarray) and images.ndim in (2, 3):
        images = [images]
    if isinstance(schedules, TrainSchedule):
        schedules = [replace(schedules, seed=schedules.seed + i) for i in range(len(arch.layers))]
    if len(schedules) != len(arch.layers):
        raise ConfigError(f"{len(schedules)} schedules for {len(arch.layers)} layers")
    maps = [np.asarray(im, dtype=np.float64) for im in images]
    for im in maps:
        if im.ndim != 3 or im.shape[2] != arch.in_channels:
            raise ShapeError(f"image of shape {im.shape} does not have {arch.in_channels} channels")
        arch.output_shape(im.shape[0], im.shape[1])

    params, reports = [], []
    for i, (layer, sched) in enumerate(zip(arch.layers, schedules), start=1):
        r = layer.receptive_field
        for m in maps:
            if m.shape[0] < r or m.shape[1] < r:
                raise ShapeError(f"layer {i}: receptive field {r} exceeds input map "
                                 f"{m.shape[0]}x{m.shape[1]}")
        patches = extract_patches(maps, r, sched.n_patches, sched.seed)
        eps = None
        if i == 1 and arch.normalize_input:
            eps = arch.normalize_eps
            patches = normalize_patches(patches, eps)
        bank, trace = pretrain_layer(patches, layer, sched)
        logger.info("layer %d: %d epochs, final error %.6g", i, len(trace), trace[-1].mean_error)
        params.append(bank)
        reports.append(trace)
        if i < len(arch.layers):
            maps = [forward_layer(m, bank, layer, eps) for m in maps]
    return (params, reports) if return_reports else params
