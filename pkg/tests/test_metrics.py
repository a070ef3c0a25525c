import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from daebm.metrics import (
    GridCoverageError,
    QuadratureGrid,
    ScoreSet,
    auc_pr,
    auroc,
    energy_gap,
    ks_statistic,
    log_partition,
    metrics_report,
)


def brute_force_auroc(ind, ood):
    wins = 0.0
    for a in ind:
        for b in ood:
            wins += 1.0 if a > b else (0.5 if a == b else 0.0)
    return wins / (len(ind) * len(ood))


def brute_force_ap(pos, neg):
    # threshold sweep over unique scores, step-interpolated area
    scores = np.concatenate([pos, neg])
    thresholds = np.unique(scores)[::-1]
    ap = 0.0
    prev_recall = 0.0
    for thr in thresholds:
        tp = np.sum(pos >= thr)
        fp = np.sum(neg >= thr)
        recall = tp / len(pos)
        precision = tp / (tp + fp)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


class TestQuadrature:
    def test_gaussian_1d(self):
        grid = QuadratureGrid((-10.0,), (10.0,), (4001,))
        logz = log_partition(lambda X: 0.5 * X[:, 0] ** 2, 0, grid)
        assert logz == pytest.approx(0.5 * np.log(2 * np.pi), abs=1e-6)

    def test_gaussian_2d(self):
        grid = QuadratureGrid((-8.0, -8.0), (8.0, 8.0), (401, 401))
        logz = log_partition(lambda X: 0.5 * (X**2).sum(axis=1), 0, grid)
        assert logz == pytest.approx(np.log(2 * np.pi), abs=1e-6)

    def test_constant_shift_identity(self):
        grid = QuadratureGrid((-10.0,), (10.0,), (2001,))
        base = log_partition(lambda X: 0.5 * X[:, 0] ** 2, 0, grid)
        shifted = log_partition(lambda X: 0.5 * X[:, 0] ** 2 + 3.25, 0, grid)
        assert shifted == pytest.approx(base - 3.25, abs=1e-12)

    def test_boundary_mass_error(self):
        grid = QuadratureGrid((-1.0,), (1.0,), (101,))
        with pytest.raises(GridCoverageError):
            log_partition(lambda X: 0.5 * X[:, 0] ** 2, 0, grid)

    def test_trapezoid_convergence_order(self):
        # truncated-domain integral so the boundary derivatives do not vanish
        from scipy.stats import norm

        truth = 0.5 * np.log(2 * np.pi) + np.log(norm.cdf(3.0) - norm.cdf(-2.0))
        errs = []
        for n in (51, 201):
            grid = QuadratureGrid((-2.0,), (3.0,), (n,))
            errs.append(abs(
                log_partition(lambda X: 0.5 * X[:, 0] ** 2, 0, grid, boundary_tol=1.0)
                - truth
            ))
        assert errs[0] / errs[1] >= 4.0

    def test_accepts_model_objects(self):
        from daebm.energy import ReluSplineEnergy1D

        m = ReluSplineEnergy1D(knots=[0.0], prior_scale=0.5)
        grid = QuadratureGrid((-8.0,), (8.0,), (2001,))
        # U = (x/2)^2 : a N(0, 2) normalizer
        assert log_partition(m, 0, grid) == pytest.approx(
            0.5 * np.log(2 * np.pi * 2), abs=1e-6
        )


class TestEnergyGap:
    def test_symmetric_double_well(self):
        grid = QuadratureGrid((-6.0,), (6.0,), (4001,))
        gap = energy_gap(
            lambda X: (X[:, 0] ** 2 - 1.0) ** 2, grid, ((-2.0,), (-0.1,)), ((0.1,), (2.0,))
        )
        assert gap == pytest.approx(0.0, abs=1e-9)

    def test_true_mixture_mass_ratio(self):
        def energy(X):
            x = X[:, 0]
            p = 0.75 * np.exp(-0.5 * ((x + 2) / 0.1) ** 2) + 0.25 * np.exp(
                -0.5 * ((x - 2) / 0.1) ** 2
            )
            return -np.log(p / (0.1 * np.sqrt(2 * np.pi)))

        grid = QuadratureGrid((-6.0,), (6.0,), (12001,))
        gap = energy_gap(energy, grid, ((-3.0,), (-1.0,)), ((1.0,), (3.0,)))
        assert gap == pytest.approx(np.log(3.0), abs=1e-6)

    def test_shift_invariance(self):
        grid = QuadratureGrid((-6.0,), (6.0,), (2001,))
        g1 = energy_gap(lambda X: X[:, 0] ** 2, grid, ((-3.0,), (-0.5,)), ((0.5,), (3.0,)))
        g2 = energy_gap(
            lambda X: X[:, 0] ** 2 + 11.0, grid, ((-3.0,), (-0.5,)), ((0.5,), (3.0,))
        )
        assert g1 == pytest.approx(g2, abs=1e-12)

    def test_empty_region_mass_error(self):
        grid = QuadratureGrid((-6.0,), (6.0,), (2001,))
        with pytest.raises(ValueError):
            energy_gap(
                lambda X: 200.0 * np.abs(X[:, 0] - 5.0), grid,
                ((-6.0,), (-4.0,)), ((4.0,), (6.0,)),
            )


class TestAuroc:
    def test_perfect_separation(self):
        assert auroc(ScoreSet(np.array([3.0, 4.0]), np.array([1.0, 2.0]))) == 1.0

    def test_identical_multisets(self):
        s = np.array([1.0, 2.0, 3.0])
        assert auroc(ScoreSet(s, s.copy())) == 0.5

    def test_enumerated_example(self):
        assert auroc(ScoreSet(np.array([2.0, 3.0]), np.array([1.0, 2.5]))) == 0.75

    def test_side_swap_complement(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=30), rng.normal(size=20)
        assert auroc(ScoreSet(a, b)) + auroc(ScoreSet(b, a)) == pytest.approx(1.0)

    @given(
        ind=st.lists(st.integers(-20, 20), min_size=1, max_size=12),
        ood=st.lists(st.integers(-20, 20), min_size=1, max_size=12),
    )
    @settings(max_examples=120, deadline=None)
    def test_matches_brute_force_pairs(self, ind, ood):
        ind, ood = np.array(ind, float), np.array(ood, float)
        assert auroc(ScoreSet(ind, ood)) == pytest.approx(
            brute_force_auroc(ind, ood), abs=1e-12
        )

    @given(
        ind=st.lists(st.integers(-20, 20), min_size=1, max_size=10),
        ood=st.lists(st.integers(-20, 20), min_size=1, max_size=10),
        scale=st.floats(0.1, 2.0),
    )
    @settings(max_examples=60, deadline=None)
    def test_monotone_transform_invariance(self, ind, ood, scale):
        # integer scores keep the transform injective in floating point
        ind, ood = np.array(ind, float), np.array(ood, float)
        before = auroc(ScoreSet(ind, ood))

        def f(x):
            return np.exp(scale * x / 4.0)  # strictly increasing

        after = auroc(ScoreSet(f(ind), f(ood)))
        assert before == pytest.approx(after, abs=1e-12)


class TestAucPr:
    def test_perfect_separation(self):
        s = ScoreSet(np.array([3.0, 4.0]), np.array([1.0, 2.0]))
        assert auc_pr(s, "ind") == pytest.approx(1.0)

    def test_single_positive_ranked_last(self):
        n = 7
        s = ScoreSet(np.array([0.0]), np.arange(1.0, n + 1))
        assert auc_pr(s, "ind") == pytest.approx(1.0 / (n + 1))

    def test_enumerated_example(self):
        s = ScoreSet(np.array([2.0, 3.0]), np.array([1.0, 2.5]))
        assert auc_pr(s, "ind") == pytest.approx(5.0 / 6.0)

    def test_ood_positive_flips_ranking(self):
        s = ScoreSet(np.array([3.0, 4.0]), np.array([1.0, 2.0]))
        assert auc_pr(s, "ood") == pytest.approx(1.0)

    def test_invalid_side_rejected(self):
        s = ScoreSet(np.array([1.0]), np.array([0.0]))
        with pytest.raises(ValueError):
            auc_pr(s, "both")

    @given(
        ind=st.lists(st.integers(-8, 8), min_size=1, max_size=10),
        ood=st.lists(st.integers(-8, 8), min_size=1, max_size=10),
    )
    @settings(max_examples=120, deadline=None)
    def test_matches_threshold_sweep(self, ind, ood):
        ind, ood = np.array(ind, float), np.array(ood, float)
        s = ScoreSet(ind, ood)
        assert auc_pr(s, "ind") == pytest.approx(brute_force_ap(ind, ood), abs=1e-12)
        # OOD as the positive class ranks by ascending score
        assert auc_pr(s, "ood") == pytest.approx(brute_force_ap(-ood, -ind), abs=1e-12)


class TestKs:
    def test_quantile_construction(self):
        n = 100
        q = (np.arange(1, n + 1) - 0.5) / n
        assert ks_statistic(q, lambda x: x) == pytest.approx(0.5 / n)

    def test_constant_sample(self):
        assert ks_statistic(np.zeros(50), lambda x: np.clip(x + 0.5, 0, 1)) >= 0.5

    def test_reference_draws_within_band(self):
        from scipy.stats import norm

        rng = np.random.default_rng(123)
        n = 100_000
        sample = rng.standard_normal(n)
        assert ks_statistic(sample, norm.cdf) < 1.36 / np.sqrt(n)


def test_metrics_report_structure():
    s = ScoreSet(np.array([2.0, 3.0]), np.array([1.0, 2.5]))
    rep = metrics_report(s, bins=10)
    assert rep["auroc"] == pytest.approx(0.75)
    assert len(rep["histograms"]["bin_edges"]) == 11
    assert sum(rep["histograms"]["ind_counts"]) == 2
