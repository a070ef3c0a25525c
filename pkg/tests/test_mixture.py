import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import ks_2samp, norm

from daebm.metrics import ks_statistic
from daebm.mixture import (
    GaussianMixture1D,
    LabeledState,
    Region,
    TwoComponentSpec,
    build_local_energy,
    check_mixture_invariance,
    component_probability,
    default_gamma_schedule,
    mgms2_transition,
    mis_transition,
    sams_run,
    sis_resample,
)


def gaussian_spec(a0=1.0, m0=0.0, a1=1.0, m1=0.0, sigma0=0.5, sigma1=0.5):
    """Pair of Gaussian energies (x - m)^2 / (2 a^2); log(Z1/Z0) = log(a1/a0)."""
    return TwoComponentSpec(
        u0=lambda X: (X[:, 0] - m0) ** 2 / (2 * a0**2),
        grad_u0=lambda X: (X - m0) / a0**2,
        u1=lambda X: (X[:, 0] - m1) ** 2 / (2 * a1**2),
        grad_u1=lambda X: (X - m1) / a1**2,
        sigma0=sigma0,
        sigma1=sigma1,
    )


class TestComponentProbability:
    def test_equal_energies_half(self):
        spec = gaussian_spec()
        assert component_probability(spec, np.array([0.7])) == pytest.approx(0.5)

    def test_log3_difference(self):
        spec = TwoComponentSpec(
            u0=lambda X: np.full(X.shape[0], np.log(3.0)),
            grad_u0=lambda X: np.zeros_like(X),
            u1=lambda X: np.zeros(X.shape[0]),
            grad_u1=lambda X: np.zeros_like(X),
        )
        assert component_probability(spec, np.zeros(1)) == pytest.approx(0.25)

    @given(
        e0=st.floats(-30, 30),
        e1=st.floats(-30, 30),
        shift=st.floats(-100, 100),
    )
    @settings(max_examples=80, deadline=None)
    def test_common_shift_invariance_and_range(self, e0, e1, shift):
        def make(c):
            return TwoComponentSpec(
                u0=lambda X: np.full(X.shape[0], e0 + c),
                grad_u0=lambda X: np.zeros_like(X),
                u1=lambda X: np.full(X.shape[0], e1 + c),
                grad_u1=lambda X: np.zeros_like(X),
            )

        v0 = component_probability(make(0.0), np.zeros(1))
        v1 = component_probability(make(shift), np.zeros(1))
        assert 0.0 <= v0 <= 1.0
        assert v0 == pytest.approx(v1, abs=1e-12)


class TestSis:
    def test_equal_energies_uniform_weights(self):
        spec = gaussian_spec()
        res = sis_resample(spec, n=500, k=100, rng=np.random.default_rng(0),
                           burn_in=200)
        np.testing.assert_allclose(res.weights, 1.0 / 500, atol=1e-12)
        assert res.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_umbrella_resampling_recovers_target_variance(self):
        # p0 = N(0,1) sampled through the wider design density p1 = N(0,4)
        spec = gaussian_spec(a0=1.0, a1=2.0, sigma1=1.0)
        res = sis_resample(spec, n=100_000, k=10_000,
                           rng=np.random.default_rng(1), burn_in=500, n_chains=100)
        assert abs(res.sample.var(ddof=1) - 1.0) < 0.05
        assert not res.degenerate

    def test_weights_sum_to_one(self):
        spec = gaussian_spec(a0=1.0, a1=1.5)
        res = sis_resample(spec, n=2_000, k=50, rng=np.random.default_rng(2),
                           burn_in=200)
        assert res.weights.sum() == pytest.approx(1.0, abs=1e-12)


class TestMis:
    def test_label_fraction_matches_normalizer_ratio(self):
        # quadrature oracle: fraction of label 0 is Z0 / (Z0 + Z1)
        spec = gaussian_spec(a0=1.0, a1=2.0, sigma0=0.8, sigma1=0.8)
        grid = np.linspace(-12, 12, 4001)
        z0 = np.trapezoid(np.exp(-spec.u0(grid[:, None])), grid)
        z1 = np.trapezoid(np.exp(-spec.u1(grid[:, None])), grid)
        target = z0 / (z0 + z1)
        rng = np.random.default_rng(3)
        x = np.zeros(1)
        labels = np.empty(40_000, dtype=np.int64)
        for i in range(labels.size):
            x, s = mis_transition(spec, x, rng)
            labels[i] = s
        assert abs(np.mean(labels[2_000:] == 0) - target) < 0.02

    def test_nonfinite_pooled_energy_rejected(self):
        spec = TwoComponentSpec(
            u0=lambda X: np.full(X.shape[0], np.inf),
            grad_u0=lambda X: np.zeros_like(X),
            u1=lambda X: np.full(X.shape[0], np.inf),
            grad_u1=lambda X: np.zeros_like(X),
        )
        with pytest.raises(ValueError):
            mis_transition(spec, np.zeros(1), np.random.default_rng(0))


class TestMgms2:
    def test_conditional_given_label0_matches_quadrature(self):
        spec = gaussian_spec(a0=1.0, a1=3.0, sigma0=0.8, sigma1=2.0)
        rng = np.random.default_rng(4)
        state = LabeledState(x=np.zeros(1), s=0)
        xs = []
        for i in range(12_000):
            state = mgms2_transition(spec, state, rng)
            if i >= 2_000 and state.s == 0:
                xs.append(state.x[0])
        assert len(xs) > 1_000
        assert ks_statistic(np.array(xs), norm.cdf) < 0.02

    def test_move_uses_current_label_step_size(self):
        spec = gaussian_spec(sigma0=1e-9, sigma1=1.0)
        rng = np.random.default_rng(5)
        jumps0, jumps1 = [], []
        state = LabeledState(x=np.zeros(1), s=0)
        for _ in range(400):
            s_before, x_before = state.s, state.x[0]
            state = mgms2_transition(spec, state, rng)
            (jumps0 if s_before == 0 else jumps1).append(abs(state.x[0] - x_before))
        assert max(jumps0) < 1e-6  # frozen component-0 moves
        assert max(jumps1) > 1e-3

    def test_symmetric_components_match_mis(self):
        spec = gaussian_spec(sigma0=0.7, sigma1=0.7)
        rng1 = np.random.default_rng(6)
        rng2 = np.random.default_rng(7)
        a = np.empty(8_000)
        b = np.empty(8_000)
        state = LabeledState(x=np.zeros(1), s=0)
        x = np.zeros(1)
        for i in range(a.size):
            state = mgms2_transition(spec, state, rng1)
            a[i] = state.x[0]
            x, _ = mis_transition(spec, x, rng2)
            b[i] = x[0]
        assert ks_2samp(a[1000:], b[1000:]).statistic < 0.02


class TestSams:
    def test_symmetric_truth_zero(self):
        spec = gaussian_spec()
        res = sams_run(spec, 50_000, np.random.default_rng(8))
        assert abs(res.delta_hat) < 0.05

    def test_shifted_means_equal_normalizers(self):
        spec = gaussian_spec(m1=1.0)
        res = sams_run(spec, 50_000, np.random.default_rng(9))
        assert abs(res.delta_hat) < 0.05

    def test_half_variance_log2(self):
        # closed form: log(Z1/Z0) = log(sqrt(2 pi 4) / sqrt(2 pi)) = log 2
        spec = gaussian_spec(a1=2.0, sigma1=1.0)
        res = sams_run(spec, 100_000, np.random.default_rng(10))
        assert abs(res.delta_hat - np.log(2.0)) < 0.05

    def test_fixed_point_increments_vanish(self):
        # freeze the offsets at the quadrature truth; the expected label
        # imbalance (hence the expected offset increment) must vanish
        spec = gaussian_spec(a1=2.0, sigma1=1.0)
        truth = np.log(2.0)
        rng = np.random.default_rng(11)
        state = LabeledState(x=np.zeros(1), s=0)
        from daebm.mixture import _CallableEnergy, _mala_move

        shifted = TwoComponentSpec(
            u0=spec.u0, grad_u0=spec.grad_u0,
            u1=lambda X: spec.u1(X) + truth, grad_u1=spec.grad_u1,
            sigma0=spec.sigma0, sigma1=spec.sigma1,
        )
        n = 100_000
        imbalance = np.empty(n)
        for i in range(n):
            state = mgms2_transition(shifted, state, rng)
            imbalance[i] = 1.0 if state.s == 1 else -1.0
        se = imbalance.std(ddof=1) / np.sqrt(n)
        # serial correlation from the chain: allow a generous factor
        assert abs(imbalance.mean()) < 3 * se * 4

    def test_divergence_aborts(self):
        spec = gaussian_spec()
        with pytest.raises(RuntimeError):
            sams_run(spec, 10_000, np.random.default_rng(12),
                     gamma_schedule=lambda i: 1e6)

    def test_gamma_schedule_default(self):
        g = default_gamma_schedule(gamma0=1.0, t0=10.0)
        assert g(1) == 1.0
        assert g(100) == pytest.approx(0.1)


class TestLocalEnergy:
    def piece(self, mean, std=0.1):
        return (
            lambda X, m=mean, s=std: (X[:, 0] - m) ** 2 / (2 * s**2),
            lambda X, m=mean, s=std: (X - m) / s**2,
        )

    def test_single_region_identity(self):
        u, g = self.piece(0.0)
        local = build_local_energy([(u, g, Region((-1.0,), (1.0,)), 0.0)])
        X = np.linspace(-0.9, 0.9, 11)[:, None]
        np.testing.assert_array_equal(local.energy_batch(X), u(X))

    def test_sentinel_outside_regions(self):
        u, g = self.piece(0.0)
        local = build_local_energy([(u, g, Region((-1.0,), (1.0,)), 0.0)])
        assert local.energy(np.array([2.0])) == pytest.approx(1e12)
        np.testing.assert_array_equal(local.grad_x(np.array([2.0])), 0.0)

    def test_overlapping_regions_rejected(self):
        u, g = self.piece(0.0)
        with pytest.raises(ValueError):
            build_local_energy([
                (u, g, Region((-1.0,), (1.0,)), 0.0),
                (u, g, Region((0.5,), (2.0,)), 0.0),
            ])

    def test_locally_normalized_densities_reproduce_components(self):
        # renormalized exp(-local energy) inside each region equals the
        # component density pointwise, whatever the offsets
        u_l, g_l = self.piece(-2.0)
        u_r, g_r = self.piece(2.0)
        local = build_local_energy([
            (u_l, g_l, Region((-2.6,), (-1.4,)), 0.0),
            (u_r, g_r, Region((1.4,), (2.6,)), 5.0),
        ])
        for lo, hi, mean in ((-2.6, -1.4, -2.0), (1.4, 2.6, 2.0)):
            grid = np.linspace(lo, hi, 4001)
            vals = np.exp(-local.energy_batch(grid[:, None]))
            dens = vals / np.trapezoid(vals, grid)
            comp = norm.pdf(grid, mean, 0.1)
            comp_trunc = comp / np.trapezoid(comp, grid)
            np.testing.assert_allclose(dens, comp_trunc, rtol=1e-10)

    def test_offsets_leave_gradients_unchanged(self):
        u, g = self.piece(-2.0)
        r = Region((-2.6,), (-1.4,))
        l0 = build_local_energy([(u, g, r, 0.0)])
        l5 = build_local_energy([(u, g, r, 5.0)])
        X = np.linspace(-2.5, -1.5, 21)[:, None]
        np.testing.assert_array_equal(l0.grad_x_batch(X), l5.grad_x_batch(X))


class TestInvariance:
    def setup_local(self, offset):
        piece = TestLocalEnergy()
        u_l, g_l = piece.piece(-2.0)
        u_r, g_r = piece.piece(2.0)
        return build_local_energy([
            (u_l, g_l, Region((-2.6,), (-1.4,)), 0.0),
            (u_r, g_r, Region((1.4,), (2.6,)), offset),
        ])

    def test_no_crossings_and_stationary(self):
        mixture = GaussianMixture1D((-2.0, 2.0), (0.1, 0.1), (0.75, 0.25))
        report = check_mixture_invariance(
            self.setup_local(0.0), mixture, n_chains=2_000, n_steps=500,
            sigma=0.1, rng=np.random.default_rng(13),
        )
        assert report.cross_region_transitions == 0
        assert report.exited_all_regions == 0
        assert report.max_occupancy_drift <= 0.01
        assert max(report.region_ks) < 0.05

    def test_offsets_are_invisible_to_the_chain(self):
        # same seed, different offsets: bit-identical trajectories, so the
        # diagnostic cannot distinguish the two invariant energies
        mixture = GaussianMixture1D((-2.0, 2.0), (0.1, 0.1), (0.75, 0.25))
        r0 = check_mixture_invariance(
            self.setup_local(0.0), mixture, n_chains=1_000, n_steps=300,
            sigma=0.1, rng=np.random.default_rng(14),
        )
        r5 = check_mixture_invariance(
            self.setup_local(5.0), mixture, n_chains=1_000, n_steps=300,
            sigma=0.1, rng=np.random.default_rng(14),
        )
        assert r0.cross_region_transitions == r5.cross_region_transitions == 0
        assert max(abs(a - b) for a, b in zip(r0.region_ks, r5.region_ks)) < 0.01

    def test_report_serializes(self):
        import json

        mixture = GaussianMixture1D((-2.0, 2.0), (0.1, 0.1), (0.75, 0.25))
        report = check_mixture_invariance(
            self.setup_local(0.0), mixture, n_chains=100, n_steps=50,
            sigma=0.1, rng=np.random.default_rng(15),
        )
        json.dumps(report.to_dict())
