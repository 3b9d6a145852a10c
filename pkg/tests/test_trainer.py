import math

import numpy as np
import pytest

from featlearn.epls import Inhibitor, build_target, epls_loss, forward_batch, loss_gradient
from featlearn.errors import ConfigError, ShapeError
from featlearn.imageio import default_acceptance_spec, extract_patches, normalize_patches, synth_dataset
from featlearn.network import ArchitectureSpec, LayerSpec
from featlearn.trainer import (TrainSchedule, init_params, init_sgd_state, pretrain_layer,
                               pretrain_network, sgd_update)


@pytest.fixture(scope="module")
def cluster_patches():
    rng = np.random.default_rng(0)
    centres = 3.0 * np.eye(25)[:8]
    return centres[rng.integers(0, 8, 1024)]


def test_init_deterministic():
    s = TrainSchedule(seed=3)
    a, b = init_params(LayerSpec(4, 3), 27, s), init_params(LayerSpec(4, 3), 27, s)
    np.testing.assert_array_equal(a.W, b.W)
    np.testing.assert_array_equal(a.b, b.b)


def test_init_moments():
    f = init_params(LayerSpec(1000, 1), 1000, TrainSchedule(seed=0))
    w = f.W.ravel()
    assert abs(w.std() / 1e-4 - 1) < 0.01
    assert abs(w.mean()) < 5 * 1e-4 / math.sqrt(w.size)


def test_schedule_validation():
    with pytest.raises(ConfigError):
        TrainSchedule(min_epochs=5, max_epochs=3)
    with pytest.raises(ConfigError):
        TrainSchedule(n_patches=10, batch_size=11)
    s = TrainSchedule(n_patches=1000)
    assert s.initial_batch_size(8) == 125
    assert s.epoch_bounds(8) == (20, 20)
    assert s.epoch_bounds(64) == (20, 64)


def _run_sgd(stream, schedule):
    p = init_params(LayerSpec(1, 1), 1, schedule)
    state = init_sgd_state(p)
    for g in stream:
        p, state, rates = sgd_update(p, (np.array([[g]]), np.array([g])), state, schedule)
    return p, state, rates


def test_sgd_constant_gradient_full_rate():
    s = TrainSchedule(lr=0.01)
    _, _, rates = _run_sgd([0.5] * 500, s)
    assert abs(rates["W"][0, 0] - 0.01) < 1e-6


def test_sgd_zero_gradient():
    s = TrainSchedule()
    p0 = init_params(LayerSpec(1, 1), 1, s)
    state = {"W": (np.full((1, 1), 0.2), np.full((1, 1), 0.3)), "b": (np.full(1, 0.2), np.full(1, 0.3))}
    p1, st, _ = sgd_update(p0, (np.zeros((1, 1)), np.zeros(1)), state, s)
    np.testing.assert_array_equal(p1.W, p0.W)
    assert st["W"][0][0, 0] == pytest.approx(0.95 * 0.2)
    assert st["W"][1][0, 0] == pytest.approx(0.95 * 0.3)


def test_sgd_alternating_gradient_stalls():
    s = TrainSchedule(lr=0.01, rho=0.95)
    _, state, rates = _run_sgd([1.0, -1.0] * 300, s)
    # closed-form limit: mean -> +-(1-rho)/(1+rho), mean square -> 1
    gbar = state["W"][0][0, 0]
    assert abs(abs(gbar) - 0.05 / 1.95) < 1e-6
    assert rates["W"][0, 0] < 0.01 * (0.05 / 1.95) ** 2 * 1.01


def test_pretrain_layer_clusters_error_drops(cluster_patches):
    _, reps = pretrain_layer(cluster_patches, LayerSpec(8, 5, ), TrainSchedule(n_patches=1024, seed=1))
    assert reps[-1].mean_error < 0.1 * reps[0].mean_error


def test_pretrain_layer_fixed_epochs(cluster_patches):
    s = TrainSchedule(n_patches=1024, min_epochs=20, max_epochs=20, tol=10.0)
    _, reps = pretrain_layer(cluster_patches, LayerSpec(8, 5), s)
    assert len(reps) == 20


def test_pretrain_layer_bitwise_deterministic(cluster_patches):
    s = TrainSchedule(n_patches=1024, seed=5, min_epochs=3, max_epochs=5)
    a, ra = pretrain_layer(cluster_patches, LayerSpec(8, 5), s)
    b, rb = pretrain_layer(cluster_patches, LayerSpec(8, 5), s)
    assert a.W.tobytes() == b.W.tobytes() and a.b.tobytes() == b.b.tobytes()
    assert [r.mean_error for r in ra] == [r.mean_error for r in rb]


def test_pretrain_layer_errors(cluster_patches):
    with pytest.raises(ShapeError):
        pretrain_layer(cluster_patches, LayerSpec(8, 5), TrainSchedule(n_patches=1000))
    with pytest.raises(ShapeError):
        pretrain_layer(cluster_patches[:, :24], LayerSpec(8, 5), TrainSchedule(n_patches=1024))


@pytest.fixture(scope="module")
def acceptance_run():
    img, _ = synth_dataset(default_acceptance_spec(), 0)
    P = normalize_patches(extract_patches([img], 5, 2048, 0))
    return pretrain_layer(P, LayerSpec(16, 5), TrainSchedule(n_patches=2048, seed=0))


def test_trace_invariants(acceptance_run):
    _, reps = acceptance_run
    s = TrainSchedule(n_patches=2048)
    lo, hi = s.epoch_bounds(16)
    assert lo <= len(reps) <= hi
    assert reps[-1].mean_error <= reps[0].mean_error
    sizes = [r.batch_size for r in reps]
    assert sizes == sorted(sizes) and sizes[-1] <= 2048
    for r in reps:
        assert sum(r.selections) == 2048
        assert max(r.selections) <= math.ceil(2048 / 16) + 1
        assert r.mean_error >= 0


def test_one_step_decreases_batch_loss():
    img, _ = synth_dataset(default_acceptance_spec(), 1)
    X = normalize_patches(extract_patches([img], 5, 256, 1))
    layer = LayerSpec(16, 5)
    decreased = []
    for lr in (1e-2, 1e-3, 1e-4):
        s = TrainSchedule(n_patches=256, lr=lr, seed=2)
        p = init_params(layer, X.shape[1], s)
        batch = forward_batch(X, p.W, p.b)
        T, _ = build_target(batch.H, Inhibitor.zeros(16, 256))
        before = epls_loss(batch.H, T)
        p2, _, _ = sgd_update(p, loss_gradient(batch, T), init_sgd_state(p), s)
        decreased.append(epls_loss(forward_batch(X, p2.W, p2.b).H, T) < before)
    assert any(decreased)


def test_pretrain_network_single_layer_equivalence():
    img, _ = synth_dataset(default_acceptance_spec(), 2)
    arch = ArchitectureSpec(8, [LayerSpec(8, 3)])
    s = TrainSchedule(n_patches=512, seed=4, min_epochs=2, max_epochs=3)
    params = pretrain_network([img], arch, [s])
    P = normalize_patches(extract_patches([img], 3, 512, 4), arch.normalize_eps)
    direct, _ = pretrain_layer(P, arch.layers[0], s)
    np.testing.assert_array_equal(params[0].W, direct.W)


def test_pretrain_network_two_layer_dims():
    img, _ = synth_dataset(default_acceptance_spec(), 2)
    arch = ArchitectureSpec(8, [LayerSpec(6, 3, pooling=2), LayerSpec(5, 3)])
    s = TrainSchedule(n_patches=256, min_epochs=1, max_epochs=2)
    params, reports = pretrain_network([img], arch, s, return_reports=True)
    assert params[1].W.shape == (5, 3 * 3 * 6)
    assert len(reports) == 2
    again = pretrain_network([img], arch, s)
    for a, b in zip(params, again):
        assert a.W.tobytes() == b.W.tobytes()


def test_pretrain_network_shape_error():
    img = np.zeros((16, 16, 1))
    arch = ArchitectureSpec(1, [LayerSpec(4, 5, pooling=2), LayerSpec(4, 9)])
    with pytest.raises(ShapeError, match="layer 2"):
        pretrain_network([img], arch, TrainSchedule(n_patches=64, min_epochs=1, max_epochs=1))
