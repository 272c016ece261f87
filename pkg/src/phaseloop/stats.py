"""Offline statistics: amplitude models, permutation and circular tests.

Sessions are treated as independent observations throughout (the subject-level
random intercept is dropped from the primary model; variance_components exists
to re-verify that choice on simulated cohorts).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import optimize as spo
from scipy import stats as sps

from .circular import circular_mean, resultant_length
from .errors import DesignError, ParameterError
from .phase import BIN_CENTERS, N_BINS

Z_CRIT_95 = 1.95996

TIME_LEVELS = ("Baseline", "Post", "Post30")
CONDITION_ORDER = ("DECREASE", "INCREASE", "RANDOM")


@dataclass(frozen=True)
class AmplitudeRow:
    """One retained trial of the amplitude analysis dataset."""

    session_id: str
    subject_id: str
    condition: str
    time: str  # Baseline | Post | Post30
    regime: str  # optimal | random
    log10_amp: float


@dataclass(frozen=True)
class Coefficient:
    name: str
    estimate: float
    se: float
    z: float
    p: float
    ci_lo: float
    ci_hi: float


@dataclass(frozen=True)
class ModelFit:
    coefficients: tuple[Coefficient, ...]
    residual_var: float
    n: int
    degenerate: bool = False

    def __getitem__(self, name: str) -> Coefficient:
        for c in self.coefficients:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.coefficients)


def _ordered_levels(values, canonical) -> tuple[str, ...]:
    present = {v for v in values}
    ordered = [lv for lv in canonical if lv in present]
    ordered += sorted(present - set(canonical))
    return tuple(ordered)


def _design(rows, time_levels, condition_levels):
    names = ["Intercept"]
    cols = [np.ones(len(rows))]
    times = np.array([r.time for r in rows])
    conds = np.array([r.condition for r in rows])
    for tl in time_levels[1:]:
        names.append(f"time[{tl}]")
        cols.append((times == tl).astype(float))
    for cl in condition_levels[1:]:
        names.append(f"cond[{cl}]")
        cols.append((conds == cl).astype(float))
    for tl in time_levels[1:]:
        for cl in condition_levels[1:]:
            names.append(f"time[{tl}]:cond[{cl}]")
            cols.append(((times == tl) & (conds == cl)).astype(float))
    return names, np.stack(cols, axis=1)


def fit_amplitude_model(
    rows,
    time_levels: tuple[str, ...] | None = None,
    condition_levels: tuple[str, ...] | None = None,
) -> ModelFit:
    """OLS of log10 amplitude on time, condition and their interaction.

    Reference levels are the first entries of the level tuples (defaults:
    Baseline and, when more than one condition is present, DECREASE). Wald z
    tests and exact +/-1.95996*SE confidence intervals per coefficient.
    """
    rows = list(rows)
    if not rows:
        raise ParameterError("empty dataset")
    if time_levels is None:
        time_levels = _ordered_levels((r.time for r in rows), TIME_LEVELS)
    if condition_levels is None:
        condition_levels = _ordered_levels((r.condition for r in rows), CONDITION_ORDER)
    if len(time_levels) < 2:
        raise ParameterError("need at least two time levels")

    names, X = _design(rows, time_levels, condition_levels)
    y = np.array([r.log10_amp for r in rows])
    n, p = X.shape
    if n <= p:
        raise DesignError(f"{n} rows cannot identify {p} coefficients")

    q, r_mat = np.linalg.qr(X)
    diag = np.abs(np.diag(r_mat))
    aliased = [names[i] for i in range(p) if diag[i] < 1e-8 * max(diag.max(), 1.0)]
    if aliased:
        raise DesignError(f"rank-deficient design; aliased columns: {', '.join(aliased)}")

    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    rss = float(resid @ resid)
    sigma2 = rss / (n - p)
    xtx_inv = np.linalg.inv(X.T @ X)
    ses = np.sqrt(np.maximum(np.diag(xtx_inv) * sigma2, 0.0))

    degenerate = sigma2 < 1e-24
    if degenerate:
        ses = np.zeros_like(ses)
    coeffs = []
    for name, b, se in zip(names, beta, ses):
        if degenerate or se == 0.0:
            z = p_val = float("nan")
            lo = hi = float(b)
        else:
            z = float(b / se)
            p_val = float(2.0 * sps.norm.sf(abs(z)))
            lo, hi = float(b - Z_CRIT_95 * se), float(b + Z_CRIT_95 * se)
        coeffs.append(Coefficient(name, float(b), float(se), z, p_val, lo, hi))
    return ModelFit(tuple(coeffs), residual_var=sigma2, n=n, degenerate=degenerate)


def permutation_test(
    rows,
    contrast: str,
    n_perm: int = 2000,
    rng: np.random.Generator | None = None,
    time_levels: tuple[str, ...] | None = None,
    condition_levels: tuple[str, ...] | None = None,
) -> float:
    """Label-shuffling p for a model coefficient.

    Condition labels are permuted at the session level (sessions are the
    exchangeable units). Exact enumeration replaces sampling when the number
    of distinct arrangements is at most ``n_perm``.
    """
    if n_perm < 1000:
        raise ParameterError("n_perm must be >= 1000")
    rows = list(rows)
    sessions = sorted({r.session_id for r in rows})
    labels = {s: next(r.condition for r in rows if r.session_id == s) for s in sessions}
    label_list = [labels[s] for s in sessions]

    def stat(assignment: dict) -> float:
        relabeled = [
            AmplitudeRow(r.session_id, r.subject_id, assignment[r.session_id],
                         r.time, r.regime, r.log10_amp)
            for r in rows
        ]
        fit = fit_amplitude_model(relabeled, time_levels, condition_levels)
        return fit[contrast].estimate

    observed = stat(labels)

    from sympy.utilities.iterables import multiset_permutations

    counts = {}
    for lv in label_list:
        counts[lv] = counts.get(lv, 0) + 1
    total = _multinomial(len(label_list), list(counts.values()))
    if total <= n_perm:
        hits = 0
        for perm in multiset_permutations(label_list):
            t = stat(dict(zip(sessions, perm)))
            if abs(t) >= abs(observed) - 1e-12:
                hits += 1
        return hits / total

    if rng is None:
        rng = np.random.default_rng(0)
    hits = 0
    arr = list(label_list)
    for _ in range(n_perm):
        rng.shuffle(arr)
        t = stat(dict(zip(sessions, arr)))
        if abs(t) >= abs(observed) - 1e-12:
            hits += 1
    return (1 + hits) / (n_perm + 1)


def _multinomial(n: int, ks) -> int:
    import math

    out = math.factorial(n)
    for k in ks:
        out //= math.factorial(k)
    return out


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p: float
    degenerate: bool = False


def ks_normality(values, mean: float | None = None, sd: float | None = None) -> KsResult:
    """One-sample Kolmogorov-Smirnov test against a (fitted) normal."""
    x = np.asarray(values, dtype=float)
    if x.size < 5:
        raise ParameterError("need at least 5 values")
    mu = float(np.mean(x)) if mean is None else mean
    sigma = float(np.std(x, ddof=1)) if sd is None else sd
    if sigma <= 0 or not np.isfinite(sigma):
        return KsResult(float("nan"), float("nan"), degenerate=True)
    stat, p = sps.kstest(x, "norm", args=(mu, sigma))
    return KsResult(float(stat), float(p))


def coefficient_of_variation(deltas_by_subject: dict) -> float:
    """SD/|mean| of within-subject session deltas pooled across subjects.

    Subjects contribute only with two or more sessions. NaN when the pooled
    mean is zero (undefined ratio).
    """
    pooled = []
    for _, deltas in sorted(deltas_by_subject.items()):
        if len(deltas) >= 2:
            pooled.extend(float(d) for d in deltas)
    if len(pooled) < 2:
        raise ParameterError("need at least one subject with >= 2 sessions")
    pooled = np.asarray(pooled)
    mean = pooled.mean()
    if mean == 0:
        return float("nan")
    return float(np.std(pooled, ddof=1) / abs(mean))


@dataclass(frozen=True)
class VarianceComponents:
    between: float
    within: float
    lrt: float


def variance_components(values_by_subject: dict) -> VarianceComponents:
    """Method-of-moments one-way decomposition plus an ML likelihood ratio.

    The LRT compares the random-intercept model against the pooled model
    (both by maximum likelihood); it is non-negative up to optimizer
    tolerance.
    """
    groups = [np.asarray(v, dtype=float) for v in values_by_subject.values() if len(v) > 0]
    if len(groups) < 2 or not any(g.size >= 2 for g in groups):
        raise ParameterError("need >= 2 subjects and >= 1 subject with >= 2 sessions")
    sizes = np.array([g.size for g in groups])
    n_total = int(sizes.sum())
    k = len(groups)
    grand = float(np.concatenate(groups).mean())
    group_means = np.array([g.mean() for g in groups])
    ssw = float(sum(((g - g.mean()) ** 2).sum() for g in groups))
    ssb = float((sizes * (group_means - grand) ** 2).sum())
    msw = ssw / max(n_total - k, 1)
    msb = ssb / (k - 1)
    n0 = (n_total - float((sizes**2).sum()) / n_total) / (k - 1)
    between_mom = max((msb - msw) / n0, 0.0)

    y_all = np.concatenate(groups)

    def negll(theta):
        sb2, se2 = theta
        if se2 <= 0 or sb2 < 0:
            return 1e12
        w = sizes / (se2 + sizes * sb2)
        mu = float((w * group_means).sum() / w.sum())
        ll = 0.0
        for g, m in zip(groups, group_means):
            ni = g.size
            ssw_i = float(((g - m) ** 2).sum())
            ll -= 0.5 * ((ni - 1) * np.log(se2) + np.log(se2 + ni * sb2))
            ll -= 0.5 * (ssw_i / se2 + ni * (m - mu) ** 2 / (se2 + ni * sb2))
        ll -= 0.5 * n_total * np.log(2.0 * np.pi)
        return -ll

    start = (max(between_mom, 1e-6), max(msw, 1e-6))
    res = spo.minimize(negll, start, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-10, "maxiter": 2000})
    ll_full = -float(res.fun)
    sigma2_pooled = float(((y_all - y_all.mean()) ** 2).mean())
    ll_reduced = -0.5 * n_total * (np.log(2.0 * np.pi * sigma2_pooled) + 1.0)
    lrt = 2.0 * (ll_full - ll_reduced)
    return VarianceComponents(between=between_mom, within=msw, lrt=float(lrt))


@dataclass(frozen=True)
class CircularSummary:
    mean_rad: float
    r: float
    p: float
    n: int


def rayleigh_test(angles) -> CircularSummary:
    """Rayleigh test of circular uniformity with the small-sample correction."""
    a = np.asarray(angles, dtype=float)
    if a.size < 3:
        raise ParameterError("need at least 3 angles")
    n = a.size
    r = resultant_length(a)
    z = n * r**2
    p = np.exp(-z) * (
        1.0
        + (2.0 * z - z**2) / (4.0 * n)
        - (24.0 * z - 132.0 * z**2 + 76.0 * z**3 - 9.0 * z**4) / (288.0 * n**2)
    )
    p = float(min(1.0, max(p, np.finfo(float).tiny)))
    return CircularSummary(mean_rad=circular_mean(a), r=r, p=p, n=int(n))


@dataclass(frozen=True)
class Chi2Result:
    statistic: float
    p: float
    df: int
    pooled_groups: tuple[tuple[int, ...], ...]


def phase_distribution_test(counts_a, counts_b) -> Chi2Result:
    """Chi-squared homogeneity of two distributions over the 8 bins.

    Bins are pooled left-to-right until every expected cell count is at
    least 1; the pooling is reported in the result.
    """
    a = np.asarray(counts_a, dtype=float)
    b = np.asarray(counts_b, dtype=float)
    if a.shape != (N_BINS,) or b.shape != (N_BINS,):
        raise ParameterError(f"histograms must cover the {N_BINS} bins")
    if a.sum() == 0 or b.sum() == 0:
        raise ParameterError("all-zero histogram")

    groups = [(i,) for i in range(N_BINS)]
    ga, gb = list(a), list(b)

    def min_expected():
        ta, tb = sum(ga), sum(gb)
        n = ta + tb
        exps = []
        for ca, cb in zip(ga, gb):
            col = ca + cb
            exps.append(min(ta * col / n, tb * col / n))
        return exps

    while len(ga) > 2:
        exps = min_expected()
        j = int(np.argmin(exps))
        if exps[j] >= 1.0:
            break
        merge_into = j + 1 if j + 1 < len(ga) else j - 1
        lo, hi = sorted((j, merge_into))
        ga[lo] += ga[hi]
        gb[lo] += gb[hi]
        groups[lo] = tuple(groups[lo]) + tuple(groups[hi])
        del ga[hi], gb[hi], groups[hi]

    table = np.array([ga, gb])
    total = table.sum()
    expected = np.outer(table.sum(axis=1), table.sum(axis=0)) / total
    with np.errstate(divide="ignore", invalid="ignore"):
        contrib = np.where(expected > 0, (table - expected) ** 2 / expected, 0.0)
    stat = float(contrib.sum())
    df = len(ga) - 1
    p = float(sps.chi2.sf(stat, df))
    return Chi2Result(statistic=stat, p=p, df=df,
                      pooled_groups=tuple(tuple(g) for g in groups))


def cosine_template_correlation(per_bin_values, template_offset_rad: float = 0.0):
    """Pearson r between 8 per-bin values and cos(center - offset).

    Returns (r, p); (nan, nan) for zero-variance input.
    """
    v = np.asarray(per_bin_values, dtype=float)
    if v.shape != (N_BINS,):
        raise ParameterError(f"need exactly {N_BINS} per-bin values")
    template = np.cos(BIN_CENTERS - template_offset_rad)
    if np.std(v) == 0 or np.std(template) == 0:
        return float("nan"), float("nan")
    r, p = sps.pearsonr(v, template)
    return float(r), float(p)


def wilcoxon_signed_rank(x, y=None) -> float:
    """Two-sided signed-rank p; exact for n <= 25 without ties.

    Zero differences are dropped; all-zero input is degenerate (NaN).
    """
    x = np.asarray(x, dtype=float)
    d = x - np.asarray(y, dtype=float) if y is not None else x
    d = d[d != 0]
    if d.size == 0:
        return float("nan")
    if d.size < 5:
        raise ParameterError("need at least 5 non-tied pairs")
    ties = np.unique(np.abs(d)).size < d.size
    method = "exact" if (d.size <= 25 and not ties) else "approx"
    res = sps.wilcoxon(d, alternative="two-sided", method=method)
    return float(res.pvalue)


def holm_bonferroni(pvals) -> np.ndarray:
    """Holm step-down adjusted p-values (monotone, capped at 1)."""
    p = np.asarray(pvals, dtype=float)
    m = p.size
    order = np.argsort(p, kind="stable")
    adjusted = np.empty(m)
    running = 0.0
    for rank, idx in enumerate(order):
        running = max(running, (m - rank) * p[idx])
        adjusted[idx] = min(running, 1.0)
    return adjusted


def bootstrap_mean_interval(
    values, coverage: float = 0.94, n_boot: int = 10_000,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Percentile bootstrap interval of the mean (default 94% coverage)."""
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise ParameterError("need at least 2 values")
    if rng is None:
        rng = np.random.default_rng(0)
    idx = rng.integers(x.size, size=(n_boot, x.size))
    means = x[idx].mean(axis=1)
    alpha = (1.0 - coverage) / 2.0
    return (float(np.quantile(means, alpha)), float(np.quantile(means, 1.0 - alpha)))
