import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from phaseloop.errors import DesignError, ParameterError
from phaseloop.phase import BIN_CENTERS
from phaseloop.stats import (
    AmplitudeRow,
    Z_CRIT_95,
    bootstrap_mean_interval,
    coefficient_of_variation,
    cosine_template_correlation,
    fit_amplitude_model,
    holm_bonferroni,
    ks_normality,
    permutation_test,
    phase_distribution_test,
    rayleigh_test,
    variance_components,
    wilcoxon_signed_rank,
)


def rows_from_cells(cell_means, n_per_cell=10, sigma=0.0, seed=0):
    """Balanced dataset; one session per (time, condition) cell row group."""
    rng = np.random.default_rng(seed)
    rows = []
    for (time, cond), mu in cell_means.items():
        for i in range(n_per_cell):
            rows.append(AmplitudeRow(
                session_id=f"{cond}_{i % 5}", subject_id=f"sub{i % 5}",
                condition=cond, time=time, regime="optimal",
                log10_amp=mu + sigma * rng.standard_normal(),
            ))
    return rows


class TestFitAmplitudeModel:
    def test_planted_cells_recovered_exactly(self):
        # hand-computable normal-equation solution (see `oracle ols`)
        cells = {("Baseline", "A"): 1.0, ("Post", "A"): 1.2,
                 ("Baseline", "B"): 0.9, ("Post", "B"): 1.5}
        fit = fit_amplitude_model(
            rows_from_cells(cells),
            time_levels=("Baseline", "Post"),
            condition_levels=("A", "B"),
        )
        assert fit["Intercept"].estimate == pytest.approx(1.0, abs=1e-12)
        assert fit["time[Post]"].estimate == pytest.approx(0.2, abs=1e-12)
        assert fit["cond[B]"].estimate == pytest.approx(-0.1, abs=1e-12)
        assert fit["time[Post]:cond[B]"].estimate == pytest.approx(0.4, abs=1e-12)

    def test_matches_closed_form_on_random_designs(self, rng):
        for trial in range(25):
            cells = {(t, c): rng.normal() for t in ("Baseline", "Post", "Post30")
                     for c in ("A", "B")}
            rows = rows_from_cells(cells, n_per_cell=7, sigma=0.3, seed=trial)
            fit = fit_amplitude_model(rows, time_levels=("Baseline", "Post", "Post30"),
                                      condition_levels=("A", "B"))
            # independent route: explicit normal equations
            X, y = [], []
            for r in rows:
                x = [1.0, r.time == "Post", r.time == "Post30", r.condition == "B",
                     (r.time == "Post") and (r.condition == "B"),
                     (r.time == "Post30") and (r.condition == "B")]
                X.append([float(v) for v in x])
                y.append(r.log10_amp)
            X, y = np.array(X), np.array(y)
            beta = np.linalg.solve(X.T @ X, X.T @ y)
            got = [c.estimate for c in fit.coefficients]
            np.testing.assert_allclose(got, beta, rtol=1e-9, atol=1e-12)

    def test_null_calibration(self):
        # planted null: Wald |z| < 1.96 for the interaction in >= 94% of sims
        hits = 0
        n_sim = 1000
        for seed in range(n_sim):
            rows = rows_from_cells(
                {("Baseline", "A"): 1.0, ("Post", "A"): 1.0,
                 ("Baseline", "B"): 1.0, ("Post", "B"): 1.0},
                n_per_cell=10, sigma=0.2, seed=seed,
            )
            fit = fit_amplitude_model(rows, time_levels=("Baseline", "Post"),
                                      condition_levels=("A", "B"))
            if abs(fit["time[Post]:cond[B]"].z) < 1.96:
                hits += 1
        assert hits >= 940

    def test_degenerate_constant_response(self):
        rows = rows_from_cells({("Baseline", "A"): 1.0, ("Post", "A"): 1.0,
                                ("Baseline", "B"): 1.0, ("Post", "B"): 1.0})
        fit = fit_amplitude_model(rows, time_levels=("Baseline", "Post"),
                                  condition_levels=("A", "B"))
        assert fit.degenerate
        assert fit.residual_var == pytest.approx(0.0, abs=1e-20)
        assert all(c.se == 0.0 for c in fit.coefficients)

    def test_rank_deficiency_names_columns(self):
        # condition B never observed at Post: interaction aliased
        rows = [r for r in rows_from_cells(
            {("Baseline", "A"): 1.0, ("Post", "A"): 1.2, ("Baseline", "B"): 0.9},
        )]
        with pytest.raises(DesignError, match="time\\[Post\\]:cond\\[B\\]"):
            fit_amplitude_model(rows, time_levels=("Baseline", "Post"),
                                condition_levels=("A", "B"))

    def test_ci_consistency_with_z(self, rng):
        rows = rows_from_cells({("Baseline", "A"): 1.0, ("Post", "A"): 1.1,
                                ("Baseline", "B"): 1.0, ("Post", "B"): 1.15},
                               n_per_cell=12, sigma=0.15, seed=5)
        fit = fit_amplitude_model(rows, time_levels=("Baseline", "Post"),
                                  condition_levels=("A", "B"))
        for c in fit.coefficients:
            excludes_zero = (c.ci_lo > 0) or (c.ci_hi < 0)
            assert excludes_zero == (abs(c.z) > Z_CRIT_95)


def _perm_rows(values, labels):
    return [
        AmplitudeRow(session_id=f"s{i}", subject_id=f"s{i}", condition=lab,
                     time="Post", regime="optimal", log10_amp=v)
        for i, (v, lab) in enumerate(zip(values, labels))
    ] + [
        AmplitudeRow(session_id=f"s{i}", subject_id=f"s{i}", condition=lab,
                     time="Baseline", regime="random", log10_amp=0.0)
        for i, (v, lab) in enumerate(zip(values, labels))
    ]


class TestPermutationTest:
    def test_matches_exhaustive_enumeration(self):
        values = [1.2, 0.8, 1.0, 2.1, 2.4, 1.9]
        labels = ["A", "A", "A", "B", "B", "B"]
        rows = _perm_rows(values, labels)
        contrast = "time[Post]:cond[B]"
        got = permutation_test(rows, contrast, n_perm=1000,
                               time_levels=("Baseline", "Post"),
                               condition_levels=("A", "B"))
        # brute force over all 20 label arrangements: the statistic reduces to
        # the Post-mean difference between groups since baselines are zero
        observed = abs(np.mean(values[3:]) - np.mean(values[:3]))
        hits = 0
        arrangements = sorted(set(itertools.permutations(labels)))
        for arr in arrangements:
            a = [v for v, l in zip(values, arr) if l == "A"]
            b = [v for v, l in zip(values, arr) if l == "B"]
            if abs(np.mean(b) - np.mean(a)) >= observed - 1e-12:
                hits += 1
        assert got == pytest.approx(hits / len(arrangements), abs=1e-12)

    def test_constant_data_p_one(self):
        rows = _perm_rows([1.0] * 6, ["A", "A", "A", "B", "B", "B"])
        p = permutation_test(rows, "time[Post]:cond[B]", n_perm=1000,
                             time_levels=("Baseline", "Post"),
                             condition_levels=("A", "B"))
        assert p == pytest.approx(1.0)

    def test_strong_effect_minimal_p(self):
        values = [0.0, 0.01, -0.01, 0.0, 0.01, 0.0, 5.0, 5.01, 4.99, 5.0, 5.02, 5.0]
        labels = ["A"] * 6 + ["B"] * 6
        rows = _perm_rows(values, labels)
        p = permutation_test(rows, "time[Post]:cond[B]", n_perm=1000,
                             time_levels=("Baseline", "Post"),
                             condition_levels=("A", "B"))
        # C(12,6) = 924 arrangements enumerated; only the original labelling
        # and its mirror reach the observed magnitude
        assert p == pytest.approx(2 / 924, abs=1e-12)

    def test_agrees_with_wald_on_calibrated_data(self, rng):
        agree = 0
        for seed in range(20):
            r2 = np.random.default_rng(seed)
            effect = r2.choice([0.0, 0.25])
            rows = []
            for i in range(20):
                cond = "A" if i < 10 else "B"
                for time, mu in (("Baseline", 0.0),
                                 ("Post", effect if cond == "B" else 0.0)):
                    for k in range(2):
                        rows.append(AmplitudeRow(
                            session_id=f"s{i}", subject_id=f"s{i}", condition=cond,
                            time=time, regime="optimal",
                            log10_amp=mu + 0.15 * r2.standard_normal()))
            fit = fit_amplitude_model(rows, time_levels=("Baseline", "Post"),
                                      condition_levels=("A", "B"))
            wald = fit["time[Post]:cond[B]"].p
            perm = permutation_test(rows, "time[Post]:cond[B]", n_perm=1000,
                                    rng=np.random.default_rng(seed),
                                    time_levels=("Baseline", "Post"),
                                    condition_levels=("A", "B"))
            agree += (wald < 0.05) == (perm < 0.05)
        assert agree >= 18

    def test_requires_enough_permutations(self):
        rows = _perm_rows([1.0, 2.0], ["A", "B"])
        with pytest.raises(ParameterError):
            permutation_test(rows, "time[Post]:cond[B]", n_perm=10)


class TestKsNormality:
    def test_uniform_p_under_true_params(self):
        rng = np.random.default_rng(0)
        ps = [ks_normality(rng.standard_normal(1000), mean=0.0, sd=1.0).p
              for _ in range(200)]
        assert 0.4 < np.mean(ps) < 0.6
        assert np.mean(np.array(ps) < 0.05) < 0.1

    def test_lognormal_rejected_log_passes(self, rng):
        raw = 10.0 ** rng.normal(0.0, 0.5, 2000)
        assert ks_normality(raw).p < 0.05
        assert ks_normality(np.log10(raw)).p > 0.05

    def test_constant_degenerate(self):
        res = ks_normality(np.ones(100))
        assert res.degenerate

    def test_too_short(self):
        with pytest.raises(ParameterError):
            ks_normality([1.0, 2.0])


class TestCoefficientOfVariation:
    def test_identical_deltas(self):
        assert coefficient_of_variation({"s1": [1.0, 1.0]}) == pytest.approx(0.0)

    def test_hand_value(self):
        got = coefficient_of_variation({"s1": [0.5, 1.5]})
        assert got == pytest.approx(np.sqrt(0.5), abs=1e-12)  # 0.7071/1.0

    def test_zero_mean_undefined(self):
        assert np.isnan(coefficient_of_variation({"s1": [-1.0, 1.0]}))

    def test_single_session_subjects_excluded(self):
        got = coefficient_of_variation({"a": [0.5, 1.5], "b": [99.0]})
        assert got == pytest.approx(np.sqrt(0.5), abs=1e-12)

    def test_no_eligible_subjects(self):
        with pytest.raises(ParameterError):
            coefficient_of_variation({"a": [1.0]})


class TestVarianceComponents:
    def test_zero_within(self):
        vc = variance_components({"a": [1.0, 1.0], "b": [2.0, 2.0], "c": [3.0, 3.0]})
        assert vc.within == pytest.approx(0.0, abs=1e-12)
        assert vc.between > 0.5

    def test_shuffled_labels_kill_between(self, rng):
        pool = rng.normal(0.0, 1.0, 300)
        groups = {f"g{i}": pool[i * 10:(i + 1) * 10].tolist() for i in range(30)}
        vc = variance_components(groups)
        assert vc.between < 0.15
        assert vc.lrt >= -1e-6

    def test_planted_ratio_recovery(self):
        # planted between 0.021, within 0.048; 50 subjects x 20 sessions
        rng = np.random.default_rng(42)
        groups = {}
        for i in range(50):
            b = rng.normal(0.0, np.sqrt(0.021))
            groups[f"s{i}"] = (b + rng.normal(0.0, np.sqrt(0.048), 20)).tolist()
        vc = variance_components(groups)
        assert vc.between == pytest.approx(0.021, rel=0.2)
        assert vc.within == pytest.approx(0.048, rel=0.2)
        assert vc.lrt > 10.0

    def test_needs_replication(self):
        with pytest.raises(ParameterError):
            variance_components({"a": [1.0]})


class TestRayleigh:
    def test_identical_angles(self):
        res = rayleigh_test([0.7] * 10)
        assert res.r == pytest.approx(1.0)
        # series correction collapses at R=1; p is clamped into (0, exp(-10)]
        assert 0.0 < res.p <= np.exp(-10.0)

    def test_bin_centers_perfectly_balanced(self):
        res = rayleigh_test(BIN_CENTERS)
        assert res.r == pytest.approx(0.0, abs=1e-12)
        assert res.p == pytest.approx(1.0)

    def test_von_mises_power(self):
        hits = 0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            res = rayleigh_test(rng.vonmises(1.0, 2.0, 22))
            hits += res.p < 0.05
        assert hits >= 45

    def test_rotation_invariance_of_r(self, rng):
        a = rng.vonmises(0.0, 1.0, 40)
        r1 = rayleigh_test(a).r
        r2 = rayleigh_test(a + 1.234).r
        assert r1 == pytest.approx(r2, abs=1e-12)

    def test_needs_three(self):
        with pytest.raises(ParameterError):
            rayleigh_test([0.0, 1.0])


class TestPhaseDistributionTest:
    def test_identical_histograms(self):
        h = np.array([5, 5, 5, 5, 5, 5, 5, 5])
        res = phase_distribution_test(h, h)
        assert res.statistic == pytest.approx(0.0)
        assert res.p == pytest.approx(1.0)

    def test_disjoint_one_hot(self):
        a = np.array([20, 0, 0, 0, 0, 0, 0, 0])
        b = np.array([0, 0, 0, 0, 20, 0, 0, 0])
        res = phase_distribution_test(a, b)
        assert res.p < 0.001

    def test_textbook_2x2_via_pooling(self):
        # zero bins pool away, leaving the classic 2x2 table
        # chi2 = N(ad-bc)^2 / (r1 r2 c1 c2) = 0.79365, df = 1
        a = np.array([10, 20, 0, 0, 0, 0, 0, 0])
        b = np.array([30, 40, 0, 0, 0, 0, 0, 0])
        res = phase_distribution_test(a, b)
        assert res.df == 1
        assert res.statistic == pytest.approx(0.7936507936507936, abs=1e-9)
        assert res.p == pytest.approx(sps.chi2.sf(0.7936507936507936, 1), abs=1e-12)

    def test_all_zero_rejected(self):
        with pytest.raises(ParameterError):
            phase_distribution_test(np.zeros(8), np.ones(8))


class TestCosineTemplate:
    def test_perfect_cosine(self):
        r, p = cosine_template_correlation(np.cos(BIN_CENTERS), 0.0)
        assert r == pytest.approx(1.0)
        assert p < 1e-6

    def test_anti_cosine(self):
        r, p = cosine_template_correlation(-np.cos(BIN_CENTERS), 0.0)
        assert r == pytest.approx(-1.0)

    def test_offset_template(self):
        r, _ = cosine_template_correlation(np.cos(BIN_CENTERS - 1.1), 1.1)
        assert r == pytest.approx(1.0)

    def test_uniform_undefined(self):
        r, p = cosine_template_correlation(np.ones(8), 0.0)
        assert np.isnan(r) and np.isnan(p)


class TestWilcoxon:
    def test_antisymmetric_pairs_no_shift(self):
        x = np.array([1.0, -1.0, 2.0, -2.0, 3.0, -3.0, 0.5, -0.5])
        assert wilcoxon_signed_rank(x) > 0.5

    def test_all_positive_n10_exact(self):
        diffs = np.arange(1.0, 11.0)
        assert wilcoxon_signed_rank(diffs) == pytest.approx(2.0 / 2**10)

    def test_matches_sign_flip_enumeration(self):
        # independent oracle: enumerate all 2^8 sign assignments
        diffs = np.array([1.5, -0.5, 2.0, 3.0, -1.25, 2.5, 1.0, 4.0])
        ranks = np.argsort(np.argsort(np.abs(diffs))) + 1.0
        w_obs = min(ranks[diffs > 0].sum(), ranks[diffs < 0].sum())
        count = 0
        for signs in itertools.product((1, -1), repeat=diffs.size):
            w_p = sum(r for s, r in zip(signs, ranks) if s > 0)
            if min(w_p, ranks.sum() - w_p) <= w_obs + 1e-12:
                count += 1
        assert wilcoxon_signed_rank(diffs) == pytest.approx(count / 2**8)

    def test_all_ties_degenerate(self):
        assert np.isnan(wilcoxon_signed_rank(np.zeros(10)))

    def test_large_sample_uses_approximation(self, rng):
        d = rng.normal(0.3, 1.0, 60)
        p = wilcoxon_signed_rank(d)
        assert 0.0 < p < 1.0


class TestHolm:
    def test_hand_case(self):
        got = holm_bonferroni([0.01, 0.02, 0.04])
        np.testing.assert_allclose(got, [0.03, 0.04, 0.04])

    def test_order_preserved(self):
        got = holm_bonferroni([0.04, 0.01, 0.02])
        np.testing.assert_allclose(got, [0.04, 0.03, 0.04])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=10))
    def test_monotone_and_bounded(self, pvals):
        adj = holm_bonferroni(pvals)
        assert np.all(adj <= 1.0)
        assert np.all(adj >= np.asarray(pvals) - 1e-15)
        order = np.argsort(pvals, kind="stable")
        assert np.all(np.diff(adj[order]) >= -1e-15)


class TestBootstrap:
    def test_interval_brackets_mean(self, rng):
        x = rng.normal(2.0, 1.0, 200)
        lo, hi = bootstrap_mean_interval(x, rng=np.random.default_rng(3))
        assert lo < np.mean(x) < hi
        assert hi - lo < 0.6

    def test_deterministic_given_rng(self):
        x = np.arange(50.0)
        a = bootstrap_mean_interval(x, rng=np.random.default_rng(9))
        b = bootstrap_mean_interval(x, rng=np.random.default_rng(9))
        assert a == b
