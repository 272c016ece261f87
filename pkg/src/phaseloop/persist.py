"""Session directory persistence.

A session persists as `<subject>_<condition>_<seed>/` containing a structured
`session.json` header, the fixed-column `trials.csv`, and (optionally) the
resting-state channel files `rest_baseline.csv` / `rest_post30.csv`. Numeric
CSV output uses full round-trip precision (repr).
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .agent import AgentConfig
from .errors import IntegrityError
from .phase import N_BINS, PredictorConfig
from .session import RestSummary, SessionConfig, SessionLog, TrialRecord
from .signals import TimeSeries
from .subject import RoiSignalSet, SubjectParams

TRIAL_COLUMNS = (
    ["index", "block", "stim", "target_bin", "predicted_phase_rad",
     "oracle_phase_rad", "error_rad", "flagged", "amplitude_mv",
     "emg_rms_pre_uv", "rejected", "reward", "epsilon", "epoch", "step"]
    + [f"q{i}" for i in range(N_BINS)]
    + ["t_s"]
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def session_dir_name(cfg: SessionConfig) -> str:
    return f"{cfg.subject_id}_{cfg.condition}_{cfg.seed}"


def save_session(log: SessionLog, out_dir, rest_signals: str = "summary") -> Path:
    """Write the session directory; returns its path.

    rest_signals: "csv" writes the full resting-state channel files (requires
    a log produced with keep_signals=True); "summary" persists only derived
    quantities in session.json.
    """
    out_dir = Path(out_dir)
    sdir = out_dir / session_dir_name(log.config)
    tmp = out_dir / (session_dir_name(log.config) + ".tmp")
    if tmp.exists():
        for p in tmp.iterdir():
            p.unlink()
    tmp.mkdir(parents=True, exist_ok=True)

    header = {
        "config": asdict(log.config),
        "ground_truth": {
            "phi_opt_rad": log.config.subject.phi_opt,
            "optimal_bin": log.planted_optimal_bin,
            "anti_bin": log.planted_anti_bin,
            "coupling0": log.config.subject.coupling0,
            "snr_db_planted": log.config.subject.snr_db,
        },
        "results": {
            "learned_bin": log.learned_bin,
            "learning_curve": log.learning_curve,
            "baseline_avg_pp_mv": log.baseline_avg_pp_mv,
            "baseline_avg_sp_mv": log.baseline_avg_sp_mv,
            "rest_baseline": asdict(log.rest_baseline),
            "rest_post30": asdict(log.rest_post30),
            "subsection_order_post": list(log.subsection_order_post),
            "subsection_order_post30": list(log.subsection_order_post30),
            "duration_s": log.duration_s,
            "final_coupling": log.final_coupling,
            "final_gain": log.final_gain,
            "n_trials": len(log.trials),
        },
    }
    with open(tmp / "session.json", "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")

    with open(tmp / "trials.csv", "w", newline="") as fh:
        fh.write(",".join(TRIAL_COLUMNS) + "\n")
        for t in log.trials:
            q = t.q if t.q is not None else [None] * N_BINS
            row = [
                t.index, t.block, t.stim, t.target_bin, t.predicted_phase_rad,
                t.oracle_phase_rad, t.error_rad, t.flagged, t.amplitude_mv,
                t.emg_rms_pre_uv, t.rejected, t.reward, t.epsilon, t.epoch,
                t.step, *q, t.t_s,
            ]
            fh.write(",".join(_fmt(v) for v in row) + "\n")

    if rest_signals == "csv":
        if log.rest_baseline_signals is None or log.rest_baseline_scalp is None:
            raise IntegrityError("rest_signals='csv' needs a log with keep_signals=True")
        _write_rest_csv(tmp / "rest_baseline.csv", log.rest_baseline_scalp,
                        log.rest_baseline_signals)
        _write_rest_csv(tmp / "rest_post30.csv", log.rest_post30_scalp,
                        log.rest_post30_signals)
    elif rest_signals != "summary":
        raise IntegrityError(f"unknown rest_signals mode {rest_signals!r}")

    if sdir.exists():
        for p in sdir.iterdir():
            p.unlink()
        sdir.rmdir()
    os.replace(tmp, sdir)
    return sdir


def _write_rest_csv(path, scalp: TimeSeries, rois: RoiSignalSet) -> None:
    names = list(rois.names)
    with open(path, "w", newline="") as fh:
        fh.write(f"# fs={scalp.fs!r}\n")
        fh.write(",".join(["time_s", "scalp"] + names) + "\n")
        cols = [rois[n].samples for n in names]
        for i in range(scalp.n):
            t = i / scalp.fs
            vals = [repr(float(scalp.samples[i]))] + [repr(float(c[i])) for c in cols]
            fh.write(f"{t!r}," + ",".join(vals) + "\n")


def _read_rest_csv(path):
    with open(path) as fh:
        header = fh.readline().strip()
        fs = float(header.split("fs=", 1)[1])
        names = fh.readline().strip().split(",")[2:]
        scalp, chans = [], [[] for _ in names]
        for line in fh:
            parts = line.rstrip("\n").split(",")
            scalp.append(float(parts[1]))
            for j, v in enumerate(parts[2:]):
                chans[j].append(float(v))
    scalp_ts = TimeSeries(np.array(scalp), fs=fs, label="scalp")
    rois = RoiSignalSet(signals={
        n: TimeSeries(np.array(c), fs=fs, label=n) for n, c in zip(names, chans)
    })
    return scalp_ts, rois


def _trial_from_row(values: dict) -> TrialRecord:
    def f(key):
        v = values[key]
        return None if v == "" else float(v)

    def i(key):
        v = values[key]
        return None if v == "" else int(v)

    q = tuple(f(f"q{k}") for k in range(N_BINS))
    q = None if any(v is None for v in q) else q
    return TrialRecord(
        index=int(values["index"]),
        block=values["block"],
        stim=values["stim"],
        target_bin=int(values["target_bin"]),
        predicted_phase_rad=float(values["predicted_phase_rad"]),
        oracle_phase_rad=float(values["oracle_phase_rad"]),
        amplitude_mv=float(values["amplitude_mv"]),
        emg_rms_pre_uv=float(values["emg_rms_pre_uv"]),
        rejected=values["rejected"] == "1",
        flagged=values["flagged"] == "1",
        t_s=float(values["t_s"]),
        reward=f("reward"),
        epsilon=f("epsilon"),
        epoch=i("epoch"),
        step=i("step"),
        q=q,
    )


def load_session(session_dir) -> SessionLog:
    """Reconstruct a SessionLog from a session directory."""
    sdir = Path(session_dir)
    try:
        with open(sdir / "session.json") as fh:
            header = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"{sdir}: unreadable session.json: {exc}") from exc

    cfg_d = header["config"]
    try:
        cfg = SessionConfig(
            **{
                **{k: v for k, v in cfg_d.items()
                   if k not in ("subject", "agent", "predictor", "iti_s")},
                "iti_s": tuple(cfg_d["iti_s"]),
                "subject": SubjectParams(**cfg_d["subject"]),
                "agent": AgentConfig(**cfg_d["agent"]),
                "predictor": _predictor_from_dict(cfg_d["predictor"]),
            }
        )
    except (KeyError, TypeError) as exc:
        raise IntegrityError(f"{sdir}: malformed config in session.json: {exc}") from exc

    trials = []
    try:
        with open(sdir / "trials.csv") as fh:
            cols = fh.readline().strip().split(",")
            if cols != TRIAL_COLUMNS:
                raise IntegrityError(f"{sdir}: trials.csv columns do not match schema")
            for ln, line in enumerate(fh, start=2):
                parts = line.rstrip("\n").split(",")
                if len(parts) != len(cols):
                    raise IntegrityError(f"{sdir}: trials.csv line {ln} malformed")
                trials.append(_trial_from_row(dict(zip(cols, parts))))
    except OSError as exc:
        raise IntegrityError(f"{sdir}: unreadable trials.csv: {exc}") from exc
    except ValueError as exc:
        raise IntegrityError(f"{sdir}: corrupt numeric field in trials.csv: {exc}") from exc

    res = header["results"]
    rest_base = _rest_from_dict(res["rest_baseline"])
    rest_post = _rest_from_dict(res["rest_post30"])

    scalp_base = rois_base = scalp_post = rois_post = None
    if (sdir / "rest_baseline.csv").exists():
        scalp_base, rois_base = _read_rest_csv(sdir / "rest_baseline.csv")
    if (sdir / "rest_post30.csv").exists():
        scalp_post, rois_post = _read_rest_csv(sdir / "rest_post30.csv")

    return SessionLog(
        config=cfg,
        trials=trials,
        learned_bin=int(res["learned_bin"]),
        learning_curve=[float(v) for v in res["learning_curve"]],
        baseline_avg_pp_mv=float(res["baseline_avg_pp_mv"]),
        baseline_avg_sp_mv=float(res["baseline_avg_sp_mv"]),
        rest_baseline=rest_base,
        rest_post30=rest_post,
        subsection_order_post=tuple(res["subsection_order_post"]),
        subsection_order_post30=tuple(res["subsection_order_post30"]),
        duration_s=float(res["duration_s"]),
        final_coupling=float(res["final_coupling"]),
        final_gain=float(res["final_gain"]),
        rest_baseline_signals=rois_base,
        rest_post30_signals=rois_post,
        rest_baseline_scalp=scalp_base,
        rest_post30_scalp=scalp_post,
    )


def _predictor_from_dict(d: dict) -> PredictorConfig:
    d = dict(d)
    d["band"] = tuple(d["band"])
    if d.get("freq_band") is not None:
        d["freq_band"] = tuple(d["freq_band"])
    return PredictorConfig(**d)


def _rest_from_dict(d: dict) -> RestSummary:
    return RestSummary(
        snr_db=float(d["snr_db"]),
        peak_hz=float(d["peak_hz"]),
        imcoh={k: float(v) for k, v in d["imcoh"].items()},
        band=tuple(d["band"]),
    )
