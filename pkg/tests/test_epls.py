import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from featlearn.epls import (BatchOutput, Inhibitor, build_target, epls_loss, forward_batch,
                            loss_gradient)
from featlearn.errors import ShapeError


def fd_gradient(X, W, b, T, kind, h=1e-6):
    def loss(W_, b_):
        return epls_loss(forward_batch(X, W_, b_, kind).H, T)
    gW = np.zeros_like(W)
    for idx in np.ndindex(*W.shape):
        Wp, Wm = W.copy(), W.copy()
        Wp[idx] += h
        Wm[idx] -= h
        gW[idx] = (loss(Wp, b) - loss(Wm, b)) / (2 * h)
    gb = np.zeros_like(b)
    for j in range(b.size):
        bp, bm = b.copy(), b.copy()
        bp[j] += h
        bm[j] -= h
        gb[j] = (loss(W, bp) - loss(W, bm)) / (2 * h)
    return gW, gb


def rel_err(a, n):
    return np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-3))


def test_hand_traced_example():
    H = np.array([[0.9, 0.1], [0.8, 0.2]])
    T, a = build_target(H, Inhibitor.zeros(2, 2))
    np.testing.assert_array_equal(T, [[1, 0], [0, 1]])
    np.testing.assert_array_equal(a.values, [1.0, 1.0])


def test_constant_batch_round_robin():
    H = np.full((10, 4), 0.3)
    T, a = build_target(H, Inhibitor.zeros(4, 100))
    np.testing.assert_array_equal(np.argmax(T, axis=1), [0, 1, 2, 3, 0, 1, 2, 3, 0, 1])
    np.testing.assert_array_equal(a.counts, [3, 3, 2, 2])


def test_single_row():
    T, a = build_target(np.array([[0.0, 1.0]]), Inhibitor.zeros(2, 8))
    np.testing.assert_array_equal(T, [[0, 1]])
    np.testing.assert_array_equal(a.values, [0.0, 2 / 8])


def test_does_not_mutate_input_inhibitor():
    inh = Inhibitor.zeros(3, 10)
    build_target(np.eye(3), inh)
    assert inh.counts.sum() == 0


def test_dimension_mismatch():
    with pytest.raises(ShapeError):
        build_target(np.zeros((2, 3)), Inhibitor.zeros(4, 10))


def test_saturated_output_is_skipped():
    # output 0 already fired budget/n_outputs = 2 times; it must not fire again
    inh = Inhibitor(np.array([2, 0]), 4)
    T, _ = build_target(np.array([[1.0, 0.0], [0.0, 0.0]]), inh)
    np.testing.assert_array_equal(np.argmax(T, axis=1), [1, 1])


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 40), st.integers(1, 20), st.integers(0, 2**31))
def test_population_sparsity_and_conservation(nb, nh, seed):
    rng = np.random.default_rng(seed)
    N = 4096
    inh = Inhibitor.zeros(nh, N)
    T, inh = build_target(rng.random((nb, nh)), inh)
    assert np.all((T == 1).sum(axis=1) == 1) and np.all((T == 0).sum(axis=1) == nh - 1)
    assert inh.counts.sum() == nb
    assert math.isclose(inh.values.sum(), nb * nh / N, rel_tol=1e-12)


@pytest.mark.parametrize("nh", [8, 32, 128])
def test_lifetime_sparsity_full_epoch(nh):
    rng = np.random.default_rng(nh)
    N = 4096
    inh = Inhibitor.zeros(nh, N)
    nb = N // nh
    for start in range(0, N, nb):
        _, inh = build_target(rng.random((nb, nh)) ** 3, inh)
    assert inh.counts.sum() == N
    assert inh.counts.max() <= math.ceil(N / nh) + 1
    assert inh.values.sum() == N * nh / N


def test_determinism(rng):
    H = rng.random((50, 6))
    T1, a1 = build_target(H, Inhibitor.zeros(6, 300))
    T2, a2 = build_target(H.copy(), Inhibitor.zeros(6, 300))
    np.testing.assert_array_equal(T1, T2)
    np.testing.assert_array_equal(a1.counts, a2.counts)


def test_loss_examples(rng):
    T = np.array([[1.0, 0.0]])
    assert epls_loss(T, T) == 0.0
    assert epls_loss(np.array([[0.5, 0.5]]), T) == 0.5
    H, T = rng.random((7, 5)), rng.random((7, 5))
    brute = sum((H[i, j] - T[i, j]) ** 2 for i in range(7) for j in range(5))
    assert abs(epls_loss(H, T) - brute) < 1e-12


def test_gradient_zero_at_target(rng):
    X = rng.normal(size=(4, 3))
    batch = forward_batch(X, rng.normal(size=(2, 3)), rng.normal(size=2), "identity")
    gW, gb = loss_gradient(batch, batch.H, "identity")
    assert not gW.any() and not gb.any()


def test_gradient_scalar_least_squares():
    x = np.array([[1.0, -2.0, 0.5]])
    w, b, t = np.array([[0.3, 0.1, -0.4]]), np.array([0.2]), np.array([[1.0]])
    gW, gb = loss_gradient(forward_batch(x, w, b, "identity"), t, "identity")
    resid = (w @ x[0] + b - t[0])[0]
    np.testing.assert_allclose(gW[0], 2 * resid * x[0])
    np.testing.assert_allclose(gb, [2 * resid])


@pytest.mark.parametrize("kind", ["logistic", "identity", "rectifier"])
def test_gradient_finite_differences(kind):
    rng = np.random.default_rng(7)
    X = rng.normal(size=(6, 5))
    W, b = rng.normal(size=(3, 5)), rng.normal(size=3)
    if kind == "rectifier":
        Z = X @ W.T + b
        assert np.min(np.abs(Z)) > 1e-3
    T = (rng.random((6, 3)) > 0.5).astype(float)
    gW, gb = loss_gradient(forward_batch(X, W, b, kind), T, kind)
    nW, nb = fd_gradient(X, W, b, T, kind)
    assert rel_err(gW, nW) < 1e-5
    assert rel_err(gb, nb) < 1e-5


def test_batch_output_accepted_by_build_target(rng):
    batch = forward_batch(rng.normal(size=(5, 4)), rng.normal(size=(3, 4)), np.zeros(3))
    assert isinstance(batch, BatchOutput)
    T, _ = build_target(batch, Inhibitor.zeros(3, 5))
    assert T.shape == (5, 3)
