"""Batch running, cohort indexing and the offline analysis pipeline."""

from __future__ import annotations

import json
import math
import multiprocessing as mp
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import CohortDraws, RunManifest, derive_session_seed, derive_subject_seed
from .connectivity import fc_change_analysis
from .errors import EmptyCohortError, PhaseloopError
from .persist import load_session, save_session, session_dir_name
from .phase import N_BINS
from .session import SessionConfig, SessionLog, retention_gate, run_session
from .stats import (
    AmplitudeRow,
    bootstrap_mean_interval,
    cosine_template_correlation,
    fit_amplitude_model,
    ks_normality,
    permutation_test,
    phase_distribution_test,
    rayleigh_test,
    wilcoxon_signed_rank,
)

INDEX_NAME = "cohort_index.csv"
INDEX_COLUMNS = ("session_dir,subject_id,condition,seed,status,retained,reason,"
                 "learned_bin,planted_bin,anti_bin,snr_planted_db,snr_measured_db")


def draw_subject_phi_mean(master_seed: int, subject_idx: int) -> float:
    rng = np.random.default_rng(derive_subject_seed(master_seed, subject_idx))
    return float(rng.uniform(-np.pi, np.pi))


def make_session_config(
    manifest: RunManifest, subject_idx: int, condition: str, rep: int
) -> SessionConfig:
    """Per-session config with ground truth drawn from derived seeds."""
    seed = derive_session_seed(manifest.master_seed, subject_idx, condition, rep)
    rng = np.random.default_rng(seed)
    draws: CohortDraws = manifest.draws
    phi_mean = draw_subject_phi_mean(manifest.master_seed, subject_idx)
    if draws.phi_kappa > 0:
        phi_opt = float(rng.vonmises(phi_mean, draws.phi_kappa))
    else:
        phi_opt = float(rng.uniform(-np.pi, np.pi))
    snr = draws.snr_db_mean
    if draws.snr_db_sd > 0:
        snr = float(rng.normal(draws.snr_db_mean, draws.snr_db_sd))
    subject = replace(manifest.subject, phi_opt=phi_opt, snr_db=snr)
    return SessionConfig(
        condition=condition,
        seed=seed,
        subject_id=f"S{subject_idx:02d}",
        subject=subject,
        agent=manifest.agent,
        predictor=manifest.predictor,
        **manifest.session_overrides,
    )


def _index_row(cfg: SessionConfig, status: str, retained, reason, log: SessionLog | None):
    return ",".join(str(v) for v in (
        session_dir_name(cfg), cfg.subject_id, cfg.condition, cfg.seed, status,
        int(bool(retained)), reason or "",
        log.learned_bin if log else "",
        log.planted_optimal_bin if log else "",
        log.planted_anti_bin if log else "",
        repr(cfg.subject.snr_db),
        repr(log.rest_baseline.snr_db) if log else "",
    ))


def _run_one(args):
    manifest, out_dir, subject_idx, condition, rep = args
    cfg = make_session_config(manifest, subject_idx, condition, rep)
    try:
        log = run_session(cfg, keep_signals=(manifest.rest_signals == "csv"))
        save_session(log, out_dir, rest_signals=manifest.rest_signals)
        retained, reason = retention_gate(log)
        return _index_row(cfg, "ok", retained, reason, log)
    except PhaseloopError as exc:
        return _index_row(cfg, f"error:{type(exc).__name__}", False, str(exc), None)


def run_batch(manifest: RunManifest, out_dir, parallelism: int = 1) -> Path:
    """Run every session of the cohort; outputs are independent of parallelism."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [
        (manifest, out_dir, s, cond, rep)
        for s in range(manifest.n_subjects)
        for cond in manifest.conditions
        for rep in range(manifest.sessions_per_condition)
    ]
    if parallelism > 1 and len(jobs) > 1:
        # fork (where available) lets workers inherit the warmed SNR
        # calibration cache; results do not depend on the start method
        method = "fork" if "fork" in mp.get_all_start_methods() else "spawn"
        ctx = mp.get_context(method)
        with ctx.Pool(parallelism) as pool:
            rows = pool.map(_run_one, jobs, chunksize=1)
    else:
        rows = [_run_one(j) for j in jobs]
    with open(out_dir / INDEX_NAME, "w") as fh:
        fh.write(INDEX_COLUMNS + "\n")
        for row in rows:
            fh.write(row + "\n")
    with open(out_dir / "manifest.json", "w") as fh:
        from dataclasses import asdict

        json.dump(asdict(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir


def load_cohort(cohort_dir) -> tuple[list[SessionLog], list[dict]]:
    """(retained logs, all index rows) of an executed cohort."""
    cohort_dir = Path(cohort_dir)
    index_path = cohort_dir / INDEX_NAME
    if not index_path.exists():
        raise EmptyCohortError(f"{cohort_dir}: no {INDEX_NAME}")
    rows = []
    with open(index_path) as fh:
        cols = fh.readline().strip().split(",")
        for line in fh:
            rows.append(dict(zip(cols, line.rstrip("\n").split(","))))
    logs = []
    for row in rows:
        if row["status"] == "ok" and row["retained"] == "1":
            logs.append(load_session(cohort_dir / row["session_dir"]))
    if not logs:
        raise EmptyCohortError(f"{cohort_dir}: no retained sessions")
    return logs, rows


# --- analysis pipeline -------------------------------------------------------

_TIME_OF_BLOCK = {
    "BASELINE": "Baseline",
    "POST_OPT": "Post", "POST_RAND": "Post",
    "POST30_OPT": "Post30", "POST30_RAND": "Post30",
}
_REGIME_OF_BLOCK = {
    "BASELINE": "random",
    "POST_OPT": "optimal", "POST_RAND": "random",
    "POST30_OPT": "optimal", "POST30_RAND": "random",
}


def amplitude_rows(logs: list[SessionLog]) -> list[AmplitudeRow]:
    """One row per retained paired-pulse trial outside training."""
    rows = []
    for log in logs:
        sid = session_dir_name(log.config)
        for t in log.trials:
            if t.block == "TRAIN" or t.stim != "paired" or t.rejected:
                continue
            rows.append(AmplitudeRow(
                session_id=sid,
                subject_id=log.config.subject_id,
                condition=log.config.condition,
                time=_TIME_OF_BLOCK[t.block],
                regime=_REGIME_OF_BLOCK[t.block],
                log10_amp=float(np.log10(t.amplitude_mv)),
            ))
    return rows


def regime_subset(rows, regime: str):
    """Baseline plus the requested post-stimulation regime."""
    return [r for r in rows if r.time == "Baseline" or r.regime == regime]


@dataclass
class ReportBundle:
    paths: dict[str, Path]
    summary: dict

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.summary["checks"])


def _circular_bin_stats(logs):
    """Per-condition distribution of learned bins plus paired tests."""
    from .phase import BIN_CENTERS

    by_cond: dict[str, list[int]] = {}
    for log in logs:
        by_cond.setdefault(log.config.condition, []).append(log.learned_bin)
    out = {}
    for cond, bins in sorted(by_cond.items()):
        angles = [float(BIN_CENTERS[b]) for b in bins]
        counts = np.bincount(bins, minlength=N_BINS)
        ray = rayleigh_test(angles) if len(angles) >= 3 else None
        r, p = cosine_template_correlation(counts.astype(float), 0.0)
        out[cond] = {
            "n": len(bins),
            "counts": counts.tolist(),
            "rayleigh_mean_rad": ray.mean_rad if ray else float("nan"),
            "rayleigh_r": ray.r if ray else float("nan"),
            "rayleigh_p": ray.p if ray else float("nan"),
            "cosine_r": r,
            "cosine_p": p,
        }
    chi2 = {}
    if "INCREASE" in by_cond and "DECREASE" in by_cond:
        ci = np.bincount(by_cond["INCREASE"], minlength=N_BINS)
        cd = np.bincount(by_cond["DECREASE"], minlength=N_BINS)
        full = phase_distribution_test(ci, cd)
        # ascending phases rise toward the peak: centers in (-pi, 0)
        asc_i = int(ci[:4].sum()); desc_i = int(ci[4:].sum())
        asc_d = int(cd[:4].sum()); desc_d = int(cd[4:].sum())
        dich = phase_distribution_test(
            np.array([asc_i, desc_i] + [0] * 6), np.array([asc_d, desc_d] + [0] * 6)
        )
        chi2 = {
            "chi2_8bin": full.statistic, "p_8bin": full.p, "df_8bin": full.df,
            "chi2_dichotomy": dich.statistic, "p_dichotomy": dich.p,
        }
    return out, chi2


def analyze_cohort(cohort_dir, n_perm: int = 2000) -> ReportBundle:
    """Full offline analysis; emits plot-ready CSVs plus a machine summary."""
    cohort_dir = Path(cohort_dir)
    logs, index_rows = load_cohort(cohort_dir)
    rows = amplitude_rows(logs)
    conditions = sorted({lg.config.condition for lg in logs})

    paths: dict[str, Path] = {}
    summary: dict = {"n_sessions_retained": len(logs),
                     "n_sessions_total": len(index_rows),
                     "conditions": conditions, "models": {}, "checks": []}

    # -- amplitude models -----------------------------------------------------
    model_rows = []
    perm_p = None
    wald_p = None
    have_both = {"INCREASE", "DECREASE"} <= set(conditions)
    enough_sessions = len({r.session_id for r in rows}) >= 4
    if have_both and enough_sessions:
        for regime in ("optimal", "random"):
            sub = [r for r in regime_subset(rows, regime)
                   if r.condition in ("INCREASE", "DECREASE")]
            fit = fit_amplitude_model(sub)
            for c in fit.coefficients:
                model_rows.append((f"ppmep_{regime}", c))
            if regime == "optimal":
                contrast = "time[Post]:cond[INCREASE]"
                wald_p = fit[contrast].p
                perm_p = permutation_test(sub, contrast, n_perm=n_perm,
                                          rng=np.random.default_rng(0))
                resid_check = ks_normality([r.log10_amp for r in sub])
                summary["models"]["optimal_interaction"] = {
                    "estimate": fit[contrast].estimate,
                    "wald_z": fit[contrast].z,
                    "wald_p": wald_p,
                    "permutation_p": perm_p,
                    "ks_p_log10": resid_check.p,
                }
        # pooled random-regime drift (uniform excitability growth check)
        pooled = [r for r in rows if r.regime == "random"]
        fit = fit_amplitude_model(pooled, condition_levels=("ALL",))
        for c in fit.coefficients:
            model_rows.append(("ppmep_random_pooled", c))
        summary["models"]["pooled_post30_drift"] = {
            "estimate": fit["time[Post30]"].estimate,
            "wald_p": fit["time[Post30]"].p,
        }
        deltas = _session_deltas(logs)
        for cond in conditions:
            vals = [d for c, d in deltas if c == cond]
            if len(vals) >= 2:
                lo, hi = bootstrap_mean_interval(vals, rng=np.random.default_rng(1))
                summary["models"][f"bootstrap_post_opt_delta_{cond}"] = {
                    "mean": float(np.mean(vals)), "ci94": [lo, hi],
                }
    else:
        summary["models"]["skipped"] = (
            "need INCREASE and DECREASE sessions (>=4) for the amplitude models"
        )

    path = cohort_dir / "model_fits.csv"
    with open(path, "w") as fh:
        fh.write("model,coefficient,estimate,se,z,p,ci_lo,ci_hi\n")
        for model, c in model_rows:
            fh.write(f"{model},{c.name},{c.estimate!r},{c.se!r},{c.z!r},"
                     f"{c.p!r},{c.ci_lo!r},{c.ci_hi!r}\n")
    paths["model_fits"] = path

    # -- circular statistics ----------------------------------------------------
    circ, chi2 = _circular_bin_stats(logs)
    path = cohort_dir / "circular_stats.csv"
    with open(path, "w") as fh:
        fh.write("condition,n,counts,rayleigh_mean_rad,rayleigh_r,rayleigh_p,"
                 "cosine_r,cosine_p\n")
        for cond, d in circ.items():
            counts = ";".join(str(c) for c in d["counts"])
            fh.write(f"{cond},{d['n']},{counts},{d['rayleigh_mean_rad']!r},"
                     f"{d['rayleigh_r']!r},{d['rayleigh_p']!r},{d['cosine_r']!r},"
                     f"{d['cosine_p']!r}\n")
        for key, val in chi2.items():
            fh.write(f"#{key},{val!r}\n")
    paths["circular_stats"] = path
    summary["circular"] = {"per_condition": circ, **chi2}

    # -- learning curves ---------------------------------------------------------
    path = cohort_dir / "learning_curves.csv"
    curves_by_cond: dict[str, list[list[float]]] = {}
    with open(path, "w") as fh:
        fh.write("session_dir,condition,epoch,fraction_optimal\n")
        for log in logs:
            curves_by_cond.setdefault(log.config.condition, []).append(log.learning_curve)
            for e, frac in enumerate(log.learning_curve):
                fh.write(f"{session_dir_name(log.config)},{log.config.condition},"
                         f"{e + 1},{frac!r}\n")
    paths["learning_curves"] = path
    lc = {}
    for cond, curves in curves_by_cond.items():
        lc[cond] = np.mean(np.array(curves), axis=0).tolist()
    summary["learning"] = {"mean_curves": lc}
    if "INCREASE" in lc and "DECREASE" in lc:
        summary["learning"]["wilcoxon_p"] = wilcoxon_signed_rank(
            np.array(lc["INCREASE"]), np.array(lc["DECREASE"])
        )

    # -- functional connectivity ---------------------------------------------------
    logs_by_cond: dict[str, list[SessionLog]] = {}
    for log in logs:
        logs_by_cond.setdefault(log.config.condition, []).append(log)
    fc = fc_change_analysis(logs_by_cond)
    path = cohort_dir / "fc_results.csv"
    with open(path, "w") as fh:
        fh.write("condition,pair,baseline_imcoh,post30_imcoh,delta,delta_se,t,"
                 "p_raw,p_corrected,significant,n\n")
        for r in fc:
            fh.write(f"{r.condition},{r.pair},{r.baseline_mean!r},{r.post30_mean!r},"
                     f"{r.delta_mean!r},{r.delta_se!r},{r.t!r},{r.p_raw!r},"
                     f"{r.p_corrected!r},{int(r.significant)},{r.n}\n")
    paths["fc_results"] = path
    summary["fc"] = [
        dict(condition=r.condition, pair=r.pair, delta=r.delta_mean,
             p_raw=r.p_raw, p_corrected=r.p_corrected, significant=r.significant)
        for r in fc
    ]

    # -- ground-truth scorecard -----------------------------------------------------
    hits = {c: [0, 0] for c in conditions}
    for log in logs:
        target = (log.planted_anti_bin if log.config.condition == "DECREASE"
                  else log.planted_optimal_bin)
        diff = min((log.learned_bin - target) % N_BINS, (target - log.learned_bin) % N_BINS)
        hits[log.config.condition][1] += 1
        if diff <= 1 and log.config.condition in ("INCREASE", "DECREASE"):
            hits[log.config.condition][0] += 1
    scorecard = {
        c: {"hits_within_1_bin": h, "n": n, "rate": (h / n if n else float("nan"))}
        for c, (h, n) in hits.items()
    }
    summary["scorecard"] = scorecard

    checks = []
    for cond in ("INCREASE", "DECREASE"):
        if cond in scorecard and scorecard[cond]["n"] > 0:
            rate = scorecard[cond]["rate"]
            checks.append({
                "name": f"learned_bin_hit_rate_{cond}",
                "value": rate,
                "passed": bool(rate >= 0.8),
            })
    if wald_p is not None and perm_p is not None:
        checks.append({
            "name": "optimal_interaction_significant",
            "value": wald_p,
            "passed": bool(wald_p < 0.05),
        })
        checks.append({
            "name": "wald_permutation_agree",
            "value": perm_p,
            "passed": bool((wald_p < 0.05) == (perm_p < 0.05)),
        })
    summary["checks"] = checks

    path = cohort_dir / "report.json"
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    paths["report"] = path

    for p in paths.values():
        if not p.exists():
            raise PhaseloopError(f"report bundle missing {p}")
    return ReportBundle(paths=paths, summary=summary)


def _session_deltas(logs):
    """Per-session mean log10 difference Post_optimal - Baseline."""
    out = []
    for log in logs:
        base = [np.log10(t.amplitude_mv) for t in log.trials_in("BASELINE")
                if t.stim == "paired" and not t.rejected]
        post = [np.log10(t.amplitude_mv) for t in log.trials_in("POST_OPT")
                if t.stim == "paired" and not t.rejected]
        if base and post:
            out.append((log.config.condition, float(np.mean(post) - np.mean(base))))
    return out


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def coefficient_of_variation_by_subject(logs) -> dict[str, float]:
    """CoV of the stimulation-induced change across repeated sessions."""
    from .stats import coefficient_of_variation

    out = {}
    for cond in sorted({lg.config.condition for lg in logs}):
        per_subject: dict[str, list[float]] = {}
        for lg in logs:
            if lg.config.condition != cond:
                continue
            d = _session_deltas([lg])
            if d:
                per_subject.setdefault(lg.config.subject_id, []).append(d[0][1])
        eligible = {s: v for s, v in per_subject.items() if len(v) >= 2}
        if eligible:
            out[cond] = coefficient_of_variation(eligible)
    return out
