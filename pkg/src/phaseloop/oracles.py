"""Independent reference computations backing the test suite.

Every suite derives expected values by brute force, enumeration or analytic
formula, independent of the implementation paths they check, and prints them
for embedding in tests.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .circular import wrap_angle
from .errors import ParameterError
from .phase import BIN_CENTERS, N_BINS


def oracle_ar() -> dict:
    """Analytic AR(2) representation of a sampled sinusoid."""
    fs, f0 = 1000.0, 10.0
    a1 = 2.0 * math.cos(2.0 * math.pi * f0 / fs)
    out = {
        "fs": fs, "f0": f0,
        "a1": a1, "a2": -1.0,
        "note": "x[t] = a1*x[t-1] + a2*x[t-2] holds exactly for cos(2*pi*f0*t/fs + p)",
    }
    # verify by direct substitution on a dense phase grid
    t = np.arange(1000)
    worst = 0.0
    for phase in np.linspace(-np.pi, np.pi, 17):
        x = np.cos(2 * np.pi * f0 / fs * t + phase)
        resid = x[2:] - (a1 * x[1:-1] - 1.0 * x[:-2])
        worst = max(worst, float(np.max(np.abs(resid))))
    out["max_recursion_residual"] = worst
    return out


def oracle_bandit(n_runs: int = 100, n_trials: int = 400, seed: int = 0) -> dict:
    """Deterministic-reward bandit: brute-force argmax vs epsilon-greedy runs."""
    phi_star = 0.4
    means = np.cos(BIN_CENTERS - phi_star)
    best = int(np.argmax(means))
    converged = 0
    rng_master = np.random.default_rng(seed)
    for _ in range(n_runs):
        rng = np.random.default_rng(rng_master.integers(2**63))
        q = np.zeros(N_BINS)
        alpha, eps0, eps_min, decay = 0.3, 1.0, 0.05, 0.9851
        last = None
        for t in range(n_trials):
            eps = max(eps_min, eps0 * decay**t)
            if t == 0 or rng.random() < eps:
                a = int(rng.integers(N_BINS))
            else:
                mx = np.flatnonzero(q == q.max())
                a = int(mx[rng.integers(mx.size)]) if mx.size > 1 else int(mx[0])
            q[a] += alpha * (means[a] - q[a])
            last = a
        greedy = int(np.argmax(q))
        if greedy == best:
            converged += 1
    return {
        "phi_star": phi_star,
        "reward_means": means.tolist(),
        "brute_force_argmax": best,
        "greedy_convergence_rate": converged / n_runs,
        "n_runs": n_runs,
    }


def oracle_imcoh() -> dict:
    """Analytic imaginary coherence of a quarter-period-lagged tone."""
    f0 = 10.0
    lag_s = 1.0 / (4.0 * f0)
    values = {}
    for f in (8.0, 10.0, 12.0):
        values[f] = math.sin(2.0 * math.pi * f * lag_s)
    return {
        "f0": f0,
        "lag_s": lag_s,
        "imcoh_by_freq": values,
        "note": "pure delay: coherence 1 at all f, imaginary part sin(2*pi*f*lag)",
    }


def oracle_permutation() -> dict:
    """Exhaustive two-group permutation on a 6-observation dataset."""
    values = [1.2, 0.8, 1.0, 2.1, 2.4, 1.9]
    labels = ["A", "A", "A", "B", "B", "B"]

    def stat(assign):
        a = [v for v, l in zip(values, assign) if l == "A"]
        b = [v for v, l in zip(values, assign) if l == "B"]
        return abs(np.mean(b) - np.mean(a))

    observed = stat(labels)
    arrangements = sorted(set(itertools.permutations(labels)))
    hits = sum(1 for arr in arrangements if stat(arr) >= observed - 1e-12)
    return {
        "values": values,
        "labels": labels,
        "n_arrangements": len(arrangements),
        "observed_diff": observed,
        "exact_p": hits / len(arrangements),
    }


def oracle_wilcoxon() -> dict:
    """Enumerated signed-rank distribution for small samples."""
    # all-positive differences, n = 10
    n = 10
    total = 2**n
    # two-sided exact p for W- = 0 is 2 * P(all signs positive) = 2 / 2^n
    p_all_positive = 2.0 / total

    # a textbook-style paired sample, enumerated by brute force
    diffs = np.array([1.5, -0.5, 2.0, 3.0, -1.0, 2.5, 1.0, 4.0])
    ranks = np.argsort(np.argsort(np.abs(diffs))) + 1.0
    w_pos = float(ranks[diffs > 0].sum())
    w_obs = min(w_pos, float(ranks[diffs < 0].sum()))
    count = 0
    for signs in itertools.product((1, -1), repeat=diffs.size):
        w_p = float(sum(r for s, r in zip(signs, ranks) if s > 0))
        w = min(w_p, float(ranks.sum()) - w_p)
        if w <= w_obs + 1e-12:
            count += 1
    return {
        "p_all_positive_n10": p_all_positive,
        "textbook_diffs": diffs.tolist(),
        "textbook_w": w_obs,
        "textbook_exact_p": count / 2**diffs.size,
    }


def oracle_circular() -> dict:
    """Hand values for Rayleigh, chi-squared, Holm and CoV checks."""
    # Rayleigh with all angles identical, n = 10: z = 10
    n, z = 10, 10.0
    series = (
        1.0 + (2 * z - z**2) / (4 * n)
        - (24 * z - 132 * z**2 + 76 * z**3 - 9 * z**4) / (288 * n**2)
    )
    # 2x2 chi-squared via the closed form N(ad-bc)^2 / (r1 r2 c1 c2)
    a, b, c, d = 10.0, 20.0, 30.0, 40.0
    n_tot = a + b + c + d
    chi2_2x2 = n_tot * (a * d - b * c) ** 2 / ((a + b) * (c + d) * (a + c) * (b + d))
    holm_in = [0.01, 0.02, 0.04]
    m = len(holm_in)
    holm_out = []
    running = 0.0
    for i, p in enumerate(sorted(holm_in)):
        running = max(running, (m - i) * p)
        holm_out.append(min(running, 1.0))
    cov = float(np.std([0.5, 1.5], ddof=1) / np.mean([0.5, 1.5]))
    return {
        "rayleigh_identical_n10_series_factor": series,
        "rayleigh_identical_n10_exp": math.exp(-10.0),
        "chi2_2x2": chi2_2x2,
        "holm_input": holm_in,
        "holm_adjusted": holm_out,
        "cov_half_three_halves": cov,
    }


def oracle_ols() -> dict:
    """Closed-form normal-equation solution for a planted 2x2 design."""
    # cell means: Baseline/A=1.0, Post/A=1.2, Baseline/B=0.9, Post/B=1.5
    cells = {("Baseline", "A"): 1.0, ("Post", "A"): 1.2,
             ("Baseline", "B"): 0.9, ("Post", "B"): 1.5}
    intercept = cells[("Baseline", "A")]
    time_post = cells[("Post", "A")] - cells[("Baseline", "A")]
    cond_b = cells[("Baseline", "B")] - cells[("Baseline", "A")]
    interaction = (cells[("Post", "B")] - cells[("Baseline", "B")]) - time_post
    return {
        "cells": {f"{t}/{c}": v for (t, c), v in cells.items()},
        "intercept": intercept,
        "time_post": time_post,
        "cond_b": cond_b,
        "interaction": interaction,
    }


SUITES = {
    "ar": oracle_ar,
    "bandit": oracle_bandit,
    "imcoh": oracle_imcoh,
    "permutation": oracle_permutation,
    "wilcoxon": oracle_wilcoxon,
    "circular": oracle_circular,
    "ols": oracle_ols,
}


def run_suite(name: str) -> dict:
    if name not in SUITES:
        raise ParameterError(
            f"unknown oracle suite {name!r}; available: {', '.join(sorted(SUITES))}"
        )
    return SUITES[name]()


def format_suite(name: str, result: dict) -> str:
    lines = [f"oracle suite: {name}"]
    for key, value in result.items():
        lines.append(f"  {key} = {value}")
    return "\n".join(lines)
