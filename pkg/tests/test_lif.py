import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fptsnn.lif import (LifParams, build_decay_matrix, fold_initial_potential,
                        sequential_bptt_gradient, sequential_lif, sigmoid_surrogate,
                        surrogate_gradient)


def soft_sequential_loss(c, lam, v_th, upstream, alpha):
    """Independent scalar loop: surrogate-fired LIF, loss = upstream . s."""
    u, s, total = 0.0, 0.0, 0.0
    for t in range(len(c)):
        u = lam * (u - v_th * s) + c[t]
        s = 1.0 / (1.0 + math.exp(-alpha * (u - v_th)))
        total += upstream[t] * s
    return total


def central_diff(f, x, h):
    g = np.zeros_like(x)
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


class TestParams:
    def test_defaults(self):
        p = LifParams()
        assert p.u0 == 0.0

    @pytest.mark.parametrize("lam", [0.0, 1.0, -0.1, 1.5])
    def test_rejects_decay(self, lam):
        with pytest.raises(ValueError):
            LifParams(lam=lam)

    def test_rejects_threshold(self):
        with pytest.raises(ValueError):
            LifParams(v_th=0.0)


class TestDecayMatrix:
    def test_single_step(self):
        np.testing.assert_array_equal(build_decay_matrix(1, 0.5), [[1.0]])

    def test_three_steps(self):
        expected = [[1, 0, 0], [0.5, 1, 0], [0.25, 0.5, 1]]
        np.testing.assert_array_equal(build_decay_matrix(3, 0.5), expected)

    def test_zero_decay_is_identity(self):
        np.testing.assert_array_equal(build_decay_matrix(4, 0.0), np.eye(4))

    @pytest.mark.parametrize("t,lam", [(0, 0.5), (3, 1.0), (3, -0.2), (2.5, 0.5)])
    def test_rejects(self, t, lam):
        with pytest.raises(ValueError):
            build_decay_matrix(t, lam)

    @pytest.mark.parametrize("t", [1, 2, 7, 40])
    def test_offdiagonal_is_nilpotent(self, t):
        m = build_decay_matrix(t, 0.3) - np.eye(t)
        assert np.all(np.diag(build_decay_matrix(t, 0.3)) == 1.0)
        assert np.allclose(np.linalg.eigvals(m), 0.0)
        assert np.all(np.linalg.matrix_power(m, t) == 0.0)

    @pytest.mark.parametrize("t", [1, 2, 5, 64, 1024])
    @pytest.mark.parametrize("lam", [0.25, 0.5, 0.9])
    def test_row_sums_match_closed_form(self, t, lam):
        m = build_decay_matrix(t, lam) - np.eye(t)
        closed = lam * (1 - lam ** (t - 1)) / (1 - lam)
        rows = m.sum(axis=1)
        assert np.max(np.abs(m).sum(axis=1)) == pytest.approx(closed, rel=1e-12, abs=1e-15)
        # row i spans i past steps
        for i in (0, t // 2, t - 1):
            assert rows[i] == pytest.approx(lam * (1 - lam ** i) / (1 - lam), rel=1e-12, abs=1e-15)


class TestSequential:
    def test_hand_example(self):
        tr = sequential_lif([2.0, 0.0], LifParams(lam=0.25, v_th=1.0))
        np.testing.assert_allclose(tr.u, [2.0, 0.25])
        np.testing.assert_array_equal(tr.s, [1, 0])

    def test_zero_input(self):
        tr = sequential_lif(np.zeros(3), LifParams(0.6, 2.0))
        np.testing.assert_array_equal(tr.u, 0)
        np.testing.assert_array_equal(tr.s, 0)

    def test_fires_at_threshold(self):
        tr = sequential_lif([1.0], LifParams(0.25, 1.0))
        assert tr.s[0] == 1.0

    def test_batched_matches_rows(self):
        rng = np.random.default_rng(0)
        c = rng.standard_normal((3, 5, 17))
        p = LifParams(0.4, 1.0)
        batched = sequential_lif(c, p)
        for i in range(3):
            for j in range(5):
                row = sequential_lif(c[i, j], p)
                np.testing.assert_array_equal(batched.u[i, j], row.u)

    def test_initial_potential_folds_into_first_step(self):
        rng = np.random.default_rng(1)
        c = rng.standard_normal(12)
        p = LifParams(0.5, 1.0, u0=0.7)
        warm = sequential_lif(c, p)
        cold = sequential_lif(fold_initial_potential(c, p), LifParams(0.5, 1.0))
        np.testing.assert_allclose(warm.u, cold.u, rtol=0, atol=1e-15)

    @pytest.mark.parametrize("t", [1, 2, 8, 33, 64])
    def test_matrix_identity(self, t):
        # u = -v_th (Lambda - I) s + Lambda c with the trajectory's own spikes
        rng = np.random.default_rng(t)
        p = LifParams(0.25, 1.0)
        c = rng.standard_normal(t) * 1.5
        tr = sequential_lif(c, p)
        lam = build_decay_matrix(t, p.lam)
        u = -p.v_th * (lam - np.eye(t)) @ tr.s + lam @ c
        np.testing.assert_allclose(u, tr.u, rtol=1e-10, atol=1e-12)


class TestSurrogate:
    def test_midpoint(self):
        assert sigmoid_surrogate(0.0, 12) == 0.5

    def test_closed_form(self):
        assert sigmoid_surrogate(0.25, 4) == pytest.approx(1 / (1 + math.exp(-1)), rel=1e-15)
        assert sigmoid_surrogate(0.25, 4) == pytest.approx(0.731059, abs=1e-6)

    def test_saturation_without_overflow(self):
        with np.errstate(over="raise"):
            assert sigmoid_surrogate(100.0, 12) == pytest.approx(1.0, abs=np.finfo(float).eps)
            assert sigmoid_surrogate(-100.0, 12) >= 0.0
            assert surrogate_gradient(50.0, 12) == pytest.approx(0.0, abs=np.finfo(float).eps)

    def test_gradient_peak(self):
        assert surrogate_gradient(0.0, 12) == 3.0

    def test_rejects_nonpositive_alpha(self):
        with pytest.raises(ValueError):
            sigmoid_surrogate(0.0, 0.0)

    @given(st.floats(-20, 20), st.floats(0.1, 30))
    def test_gradient_symmetric(self, x, alpha):
        assert surrogate_gradient(x, alpha) == pytest.approx(surrogate_gradient(-x, alpha), rel=1e-9, abs=1e-300)

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.5, 20))
    def test_monotone(self, a, b, alpha):
        lo, hi = min(a, b), max(a, b)
        assert sigmoid_surrogate(lo, alpha) <= sigmoid_surrogate(hi, alpha)

    def test_derivative_matches_finite_difference(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-2, 2, 100)
        alpha = rng.uniform(1, 12, 100)
        h = 1e-6
        fd = np.array([(sigmoid_surrogate(xi + h, a) - sigmoid_surrogate(xi - h, a)) / (2 * h)
                       for xi, a in zip(x, alpha)])
        analytic = np.array([surrogate_gradient(xi, a) for xi, a in zip(x, alpha)])
        assert np.max(np.abs(fd - analytic)) / np.max(np.abs(analytic)) < 1e-6


class TestBPTT:
    def test_zero_upstream(self):
        c = np.random.default_rng(0).standard_normal(6)
        g = sequential_bptt_gradient(c, LifParams(0.25, 1.0), np.zeros(6), 4.0)
        np.testing.assert_array_equal(g, 0.0)

    @pytest.mark.parametrize("soft", [False, True])
    def test_single_step(self, soft):
        p = LifParams(0.25, 1.0)
        g = sequential_bptt_gradient([1.3], p, [0.7], 4.0, surrogate_forward=soft)
        assert g[0] == pytest.approx(0.7 * float(surrogate_gradient(0.3, 4.0)), rel=1e-15)

    @pytest.mark.parametrize("t", [1, 2, 4, 8])
    @pytest.mark.parametrize("seed", range(3))
    def test_matches_finite_difference(self, t, seed):
        rng = np.random.default_rng(100 * t + seed)
        lam, v_th, alpha = 0.25, 1.0, 4.0
        c = rng.standard_normal(t) + 0.8
        up = rng.standard_normal(t)
        g = sequential_bptt_gradient(c, LifParams(lam, v_th), up, alpha, surrogate_forward=True)
        fd = central_diff(lambda x: soft_sequential_loss(x, lam, v_th, up, alpha), c, 1e-5)
        err = np.max(np.abs(g - fd)) / np.max(np.abs(fd))
        assert err < 1e-6

    def test_batched(self):
        rng = np.random.default_rng(5)
        c = rng.standard_normal((4, 9))
        up = rng.standard_normal((4, 9))
        p = LifParams(0.5, 1.0)
        g = sequential_bptt_gradient(c, p, up, 4.0)
        for i in range(4):
            np.testing.assert_array_equal(g[i], sequential_bptt_gradient(c[i], p, up[i], 4.0))
