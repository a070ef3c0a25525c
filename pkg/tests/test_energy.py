import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from daebm.energy import (
    MlpJointEnergy,
    ParamVector,
    ReluSplineEnergy1D,
    load_model,
    save_model,
    time_embed,
)


def fd_grad_x(model, x, t, h=1e-5):
    return np.array([
        (model.energy(x + h * e, t) - model.energy(x - h * e, t)) / (2 * h)
        for e in np.eye(x.size)
    ])


def fd_grad_theta(model, x, t, h=1e-5):
    base = model.params.copy_values()
    out = np.empty_like(base)
    for i in range(base.size):
        p = base.copy()
        p[i] += h
        model.set_param_values(p)
        up = model.energy(x, t)
        p[i] -= 2 * h
        model.set_param_values(p)
        um = model.energy(x, t)
        out[i] = (up - um) / (2 * h)
    model.set_param_values(base)
    return out


def max_rel_err(a, b, floor=1e-6):
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), floor))


class TestSplineEnergy:
    def test_prior_only(self):
        m = ReluSplineEnergy1D(knots=[0.0], prior_scale=0.1)
        assert m.energy(np.array([10.0])) == pytest.approx(1.0)

    def test_single_knot(self):
        m = ReluSplineEnergy1D(knots=[0.0], prior_scale=0.1)
        m.set_param_values(np.array([1.0]))
        assert m.energy(np.array([2.0])) == pytest.approx(2.04)
        assert m.grad_x(np.array([2.0]))[0] == pytest.approx(1.04)

    def test_prior_gradient(self):
        m = ReluSplineEnergy1D(knots=[0.0], prior_scale=0.1)
        assert m.grad_x(np.array([10.0]))[0] == pytest.approx(0.2)

    def test_grad_theta_is_basis(self):
        m = ReluSplineEnergy1D(knots=[-1.0, 0.0, 1.0])
        np.testing.assert_allclose(m.grad_theta(np.array([2.0])), [3.0, 2.0, 1.0])

    def test_grad_theta_length_matches_params(self):
        m = ReluSplineEnergy1D(knots=np.linspace(-4, 4, 81))
        assert m.grad_theta(np.array([0.3])).size == len(m.params)

    def test_kink_subgradient_is_zero(self):
        m = ReluSplineEnergy1D(knots=[0.5])
        m.set_param_values(np.array([3.0]))
        # left derivative at the kink: only the prior term contributes
        assert m.grad_x(np.array([0.5]))[0] == pytest.approx(2 * 0.01 * 0.5)

    def test_fd_grad_theta(self):
        rng = np.random.default_rng(3)
        m = ReluSplineEnergy1D(knots=np.linspace(-2, 2, 9))
        m.set_param_values(rng.standard_normal(9))
        for _ in range(30):
            x = rng.uniform(-3, 3, size=1)
            if np.min(np.abs(x[0] - m.knots)) < 1e-3:
                continue
            assert max_rel_err(m.grad_theta(x), fd_grad_theta(m, x, 0)) < 1e-6

    def test_coercivity_bound(self):
        # U(x) >= (s x)^2 / 2 - C with C from the negative weights and knots
        rng = np.random.default_rng(11)
        knots = np.linspace(-4, 4, 81)
        m = ReluSplineEnergy1D(knots=knots)
        w = rng.standard_normal(81)
        m.set_param_values(w)
        a = np.sum(np.maximum(-w, 0.0))
        s = m.prior_scale
        c = a**2 / (2 * s**2) + a * np.abs(knots).max()
        x = np.linspace(-500, 500, 2001)[:, None]
        u = m.energy_batch(x)
        assert np.all(u >= (s * x[:, 0]) ** 2 / 2 - c - 1e-9)

    def test_rejects_unsorted_knots(self):
        with pytest.raises(ValueError):
            ReluSplineEnergy1D(knots=[0.0, 0.0])

    def test_rejects_nonzero_time(self):
        m = ReluSplineEnergy1D(knots=[0.0])
        with pytest.raises(ValueError):
            m.energy(np.array([1.0]), t=1)


class TestMlpEnergy:
    def test_zero_network_is_zero_everywhere(self):
        m = MlpJointEnergy([2, 8, 8, 1], activation="softplus", T=3, time_embed_dim=4)
        # softplus(0) = log 2 propagates only through zero output weights
        for t in range(4):
            assert m.energy(np.array([0.4, -1.2]), t) == 0.0

    def test_fd_grad_x_softplus(self):
        rng = np.random.default_rng(0)
        m = MlpJointEnergy([2, 16, 16, 16, 1], activation="softplus", T=3,
                           time_embed_dim=8, rng=rng)
        for _ in range(20):
            x = rng.standard_normal(2)
            t = int(rng.integers(0, 4))
            assert max_rel_err(m.grad_x(x, t), fd_grad_x(m, x, t)) < 1e-5

    def test_fd_grad_theta_softplus(self):
        rng = np.random.default_rng(1)
        m = MlpJointEnergy([2, 8, 8, 1], activation="softplus", T=2,
                           time_embed_dim=4, rng=rng)
        for _ in range(3):
            x = rng.standard_normal(2)
            t = int(rng.integers(0, 3))
            assert max_rel_err(m.grad_theta(x, t), fd_grad_theta(m, x, t)) < 1e-4

    def test_fd_grad_relu_away_from_kinks(self):
        rng = np.random.default_rng(2)
        m = MlpJointEnergy([2, 8, 8, 1], activation="relu", T=0, rng=rng)
        checked = 0
        while checked < 10:
            x = rng.standard_normal(2)
            g = m.grad_x(x, 0)
            fd = fd_grad_x(m, x, 0)
            if np.abs(fd - g).max() < 1e-3:  # skip probes straddling a kink
                assert max_rel_err(g, fd) < 1e-4
                checked += 1

    def test_grad_theta_length(self):
        m = MlpJointEnergy([2, 8, 8, 1], T=1, time_embed_dim=4)
        assert m.grad_theta(np.zeros(2), 0).size == len(m.params)

    def test_batched_matches_single(self):
        rng = np.random.default_rng(4)
        m = MlpJointEnergy([2, 8, 8, 1], activation="softplus", T=3,
                           time_embed_dim=4, rng=rng)
        X = rng.standard_normal((6, 2))
        t = rng.integers(0, 4, size=6)
        batch = m.energy_batch(X, t)
        singles = [m.energy(X[i], int(t[i])) for i in range(6)]
        # BLAS may pick different kernels per shape; agreement is to rounding
        np.testing.assert_allclose(batch, singles, rtol=1e-13, atol=1e-15)

    def test_mean_grad_theta_is_mean_of_singles(self):
        rng = np.random.default_rng(5)
        m = MlpJointEnergy([2, 8, 8, 1], activation="softplus", T=2,
                           time_embed_dim=4, rng=rng)
        X = rng.standard_normal((5, 2))
        t = rng.integers(0, 3, size=5)
        _, g = m.mean_energy_grad_theta(X, t)
        singles = np.mean([m.grad_theta(X[i], int(t[i])) for i in range(5)], axis=0)
        np.testing.assert_allclose(g, singles, rtol=1e-12, atol=1e-14)

    def test_weighted_grad_theta(self):
        rng = np.random.default_rng(6)
        m = MlpJointEnergy([1, 8, 1], activation="softplus", rng=rng)
        X = rng.standard_normal((4, 1))
        w = np.array([1.0, 2.0, 0.0, 1.0])
        _, g = m.mean_energy_grad_theta(X, 0, weights=w)
        singles = [m.grad_theta(X[i], 0) for i in range(4)]
        expect = sum(wi * gi for wi, gi in zip(w, singles)) / w.sum()
        np.testing.assert_allclose(g, expect, rtol=1e-12, atol=1e-14)

    def test_rejects_bad_inputs(self):
        m = MlpJointEnergy([2, 4, 1], T=1, time_embed_dim=4)
        with pytest.raises(ValueError):
            m.energy(np.array([np.nan, 0.0]), 0)
        with pytest.raises(ValueError):
            m.energy(np.zeros(2), 2)
        with pytest.raises(ValueError):
            m.energy(np.zeros(2), -1)

    def test_checkpoint_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(7)
        m = MlpJointEnergy([2, 16, 16, 1], activation="softplus", T=4,
                           time_embed_dim=8, rng=rng)
        path = tmp_path / "model.npz"
        save_model(path, m)
        m2 = load_model(path)
        X = rng.standard_normal((50, 2))
        t = rng.integers(0, 5, size=50)
        np.testing.assert_array_equal(m.energy_batch(X, t), m2.energy_batch(X, t))

    def test_spline_checkpoint_roundtrip(self, tmp_path):
        rng = np.random.default_rng(8)
        m = ReluSplineEnergy1D(np.linspace(-4, 4, 81))
        m.set_param_values(rng.standard_normal(81))
        path = tmp_path / "spline.npz"
        save_model(path, m)
        m2 = load_model(path)
        X = rng.uniform(-5, 5, size=(64, 1))
        np.testing.assert_array_equal(m.energy_batch(X), m2.energy_batch(X))


class TestTimeEmbedding:
    def test_zero_time(self):
        e = time_embed(0, 8)
        np.testing.assert_array_equal(e[0::2], 0.0)
        np.testing.assert_array_equal(e[1::2], 1.0)

    def test_distinct_small_times(self):
        assert np.linalg.norm(time_embed(0, 8) - time_embed(1, 8)) > 0

    def test_squared_norm_half_dim(self):
        assert (time_embed(3, 8) ** 2).sum() == pytest.approx(4.0)

    def test_odd_dim_rejected(self):
        with pytest.raises(ValueError):
            time_embed(1, 7)

    @given(t=st.integers(0, 10_000), half=st.integers(1, 64))
    @settings(max_examples=60, deadline=None)
    def test_norm_bounded_by_sqrt_dim(self, t, half):
        dim = 2 * half
        assert np.linalg.norm(time_embed(t, dim)) <= np.sqrt(dim) + 1e-12


class TestParamVector:
    def test_layout_and_views(self):
        pv = ParamVector([("a", 3), ("b", 2)])
        assert len(pv) == 5
        pv.view("a")[:] = 1.0
        assert pv.values[:3].sum() == 3.0

    def test_rejects_nonfinite(self):
        pv = ParamVector([("a", 2)])
        with pytest.raises(ValueError):
            pv.set_values(np.array([1.0, np.inf]))

    def test_rejects_wrong_length(self):
        pv = ParamVector([("a", 2)])
        with pytest.raises(ValueError):
            pv.set_values(np.zeros(3))
