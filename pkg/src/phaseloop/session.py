"""Session state machine: the full protocol wiring phase engine, virtual
subject and agent into a closed loop.

Protocol order: resting EEG, baseline block (paired+single pulses at scheduled
random bins), closed-loop training, first evaluation (optimal-phase and
random-phase subsections in randomized order), a 30-minute gap, a second
resting EEG, and a second evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import agent as agent_mod
from .agent import AgentConfig, AgentState, RewardSpec, compute_reward
from .circular import wrap_angle
from .connectivity import imaginary_coherence, roi_pair_names
from .errors import ParameterError, SessionInvalidError
from .phase import (
    N_BINS,
    PhaseBin,
    PredictorConfig,
    acquire_trigger,
    bin_of,
)
from .signals import TimeSeries, estimate_peak_hz, estimate_snr, welch_psd
from .subject import (
    SNR_WELCH_WINDOW_S,
    RoiSignalSet,
    SubjectParams,
    SubjectState,
    apply_plasticity,
    emit_roi_signals,
    emit_scalp_eeg,
    initial_state,
    respond,
    scalp_gen_params,
)
from .signals import generate_mu_trace

CONDITIONS = ("INCREASE", "DECREASE", "RANDOM")
BLOCKS = ("BASELINE", "TRAIN", "POST_OPT", "POST_RAND", "POST30_OPT", "POST30_RAND")

SNR_THRESHOLD_DB = 4.0

# sub-stream ids for per-trial seed derivation (documented, stable)
_STREAM_TRIAL_EEG = 1
_STREAM_REST_SCALP = 2
_STREAM_REST_ROI = 3


@dataclass(frozen=True)
class SessionConfig:
    condition: str = "INCREASE"
    seed: int = 0
    subject_id: str = "S00"
    n_baseline_pp: int = 100
    n_baseline_sp: int = 100
    epochs: int = 10
    steps_per_epoch: int = 40
    n_eval_pp: int = 50
    n_eval_sp: int = 50
    iti_s: tuple[float, float] = (2.0, 3.0)
    isi_ms: float = 6.0
    rest_eeg_s: float = 300.0
    post_gap_min: float = 30.0
    subject: SubjectParams = field(default_factory=SubjectParams)
    agent: AgentConfig = field(default_factory=AgentConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ParameterError(f"unknown condition {self.condition!r}")
        if min(self.n_baseline_pp, self.n_baseline_sp, self.n_eval_pp, self.n_eval_sp) < 8:
            raise ParameterError("all block sizes must be >= 8 trials")
        if self.epochs < 1 or self.steps_per_epoch < 1:
            raise ParameterError("epochs and steps_per_epoch must be >= 1")
        if not (0 < self.iti_s[0] <= self.iti_s[1]):
            raise ParameterError(f"bad ITI range {self.iti_s}")

    @property
    def n_train(self) -> int:
        return self.epochs * self.steps_per_epoch

    @property
    def total_trials(self) -> int:
        # two evaluations, each with an optimal and a random subsection
        return (
            self.n_baseline_pp + self.n_baseline_sp + self.n_train
            + 4 * (self.n_eval_pp + self.n_eval_sp)
        )


@dataclass
class TrialRecord:
    index: int
    block: str
    stim: str  # "paired" | "single"
    target_bin: int
    predicted_phase_rad: float
    oracle_phase_rad: float
    amplitude_mv: float
    emg_rms_pre_uv: float
    rejected: bool
    flagged: bool
    t_s: float
    reward: float | None = None
    epsilon: float | None = None
    epoch: int | None = None
    step: int | None = None
    q: tuple[float, ...] | None = None

    @property
    def error_rad(self) -> float:
        return float(wrap_angle(self.oracle_phase_rad - PhaseBin(self.target_bin).center))


@dataclass
class RestSummary:
    """Derived quantities of one resting-state block."""

    snr_db: float
    peak_hz: float
    imcoh: dict[str, float]  # per ROI pair, mean over the mu band
    band: tuple[float, float]


@dataclass
class SessionLog:
    config: SessionConfig
    trials: list[TrialRecord]
    learned_bin: int
    learning_curve: list[float]
    baseline_avg_pp_mv: float
    baseline_avg_sp_mv: float
    rest_baseline: RestSummary
    rest_post30: RestSummary
    subsection_order_post: tuple[str, str]
    subsection_order_post30: tuple[str, str]
    duration_s: float
    final_coupling: float
    final_gain: float
    rest_baseline_signals: RoiSignalSet | None = None
    rest_post30_signals: RoiSignalSet | None = None
    rest_baseline_scalp: TimeSeries | None = None
    rest_post30_scalp: TimeSeries | None = None

    @property
    def planted_optimal_bin(self) -> int:
        return bin_of(self.config.subject.phi_opt).index

    @property
    def planted_anti_bin(self) -> int:
        return bin_of(self.config.subject.phi_opt + np.pi).index

    def trials_in(self, block: str) -> list[TrialRecord]:
        return [t for t in self.trials if t.block == block]


@dataclass(frozen=True)
class BinSchedule:
    """Balanced pseudo-randomized target sequence."""

    bins: tuple[int, ...]

    def counts(self) -> np.ndarray:
        return np.bincount(self.bins, minlength=N_BINS)


def make_bin_schedule(n: int, rng: np.random.Generator) -> BinSchedule:
    """Each bin occurs floor(n/8) or ceil(n/8) times, order shuffled."""
    if n < N_BINS:
        raise ParameterError(f"schedule needs at least {N_BINS} trials, got {n}")
    base, extra = divmod(n, N_BINS)
    counts = np.full(N_BINS, base, dtype=int)
    lucky = rng.permutation(N_BINS)[:extra]
    counts[lucky] += 1
    seq = np.repeat(np.arange(N_BINS), counts)
    rng.shuffle(seq)
    return BinSchedule(bins=tuple(int(b) for b in seq))


def _session_mu_band(peak_hz: float) -> tuple[float, float]:
    return (peak_hz - 2.0, peak_hz + 2.0)


class _TrialRunner:
    """Generates per-trial EEG, acquires the trigger, queries the subject."""

    def __init__(self, cfg: SessionConfig, pcfg: PredictorConfig, rng_subject):
        self.cfg = cfg
        self.pcfg = pcfg
        self.rng_subject = rng_subject
        fs = cfg.subject.fs
        window_s = pcfg.window_ms / 1000.0
        # window + retry allowance + horizon + oracle guard
        self.decision = pcfg.window_samples(fs)
        self.seg_s = window_s + 1.3 + 0.3
        self.gen = scalp_gen_params(cfg.subject, self.seg_s)

    def run(self, index, block, stim, target, state, clock_s, trial_seed):
        full, _, phase = generate_mu_trace(self.gen, trial_seed)
        plan = acquire_trigger(full, self.decision, target, self.pcfg)
        oracle = float(phase[plan.fire_sample])
        resp = respond(state, self.cfg.subject, stim, oracle, self.rng_subject)
        if stim == "paired":
            state = apply_plasticity(state, self.cfg.subject, stim, oracle)
        record = TrialRecord(
            index=index,
            block=block,
            stim=stim,
            target_bin=target.index,
            predicted_phase_rad=plan.predicted_phase,
            oracle_phase_rad=oracle,
            amplitude_mv=resp.amplitude_mv,
            emg_rms_pre_uv=resp.emg_rms_pre_uv,
            rejected=resp.preinnervated,
            flagged=plan.flagged,
            t_s=clock_s,
        )
        return record, state


def _rest_summary(
    state: SubjectState, cfg: SessionConfig, seed_scalp: int, seed_roi: int
) -> tuple[RestSummary, TimeSeries, RoiSignalSet]:
    scalp = emit_scalp_eeg(cfg.subject, cfg.rest_eeg_s, seed_scalp)
    rois = emit_roi_signals(state, cfg.subject, cfg.rest_eeg_s, cfg.subject.fs, seed_roi)
    est = estimate_snr(welch_psd(scalp, window_s=SNR_WELCH_WINDOW_S))
    peak = estimate_peak_hz(scalp)
    band = _session_mu_band(peak)
    imcoh = {}
    for a, b in roi_pair_names(rois.names):
        imcoh[f"{a}-{b}"] = imaginary_coherence(rois[a], rois[b], band)
    summary = RestSummary(snr_db=est.snr_db, peak_hz=peak, imcoh=imcoh, band=band)
    return summary, scalp, rois


def run_session(cfg: SessionConfig, keep_signals: bool = False) -> SessionLog:
    """Execute the full protocol and return the complete session log.

    Identical configs (including seed) produce identical logs. With
    ``keep_signals`` the resting-state traces are retained on the log for
    persistence; derived summaries are always present.
    """
    sq = np.random.SeedSequence(cfg.seed)
    rng_protocol, rng_subject, rng_agent = [
        np.random.default_rng(s) for s in sq.spawn(3)
    ]

    def trial_seed(i: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(entropy=cfg.seed, spawn_key=(_STREAM_TRIAL_EEG, i))

    state = initial_state(cfg.subject)
    clock = 0.0
    trials: list[TrialRecord] = []

    # -- baseline resting EEG ------------------------------------------------
    rest_base, scalp_base, rois_base = _rest_summary(
        state, cfg,
        np.random.SeedSequence(entropy=cfg.seed, spawn_key=(_STREAM_REST_SCALP, 0)),
        np.random.SeedSequence(entropy=cfg.seed, spawn_key=(_STREAM_REST_ROI, 0)),
    )
    clock += cfg.rest_eeg_s
    pcfg = cfg.predictor.with_peak(rest_base.peak_hz)

    runner = _TrialRunner(cfg, pcfg, rng_subject)
    index = 0

    def run_block(block, stim_bins, state, clock):
        nonlocal index
        records = []
        for stim, target in stim_bins:
            clock += rng_protocol.uniform(*cfg.iti_s)
            rec, state = runner.run(
                index, block, stim, target, state, clock, trial_seed(index)
            )
            records.append(rec)
            trials.append(rec)
            index += 1
        return records, state, clock

    # -- baseline block ------------------------------------------------------
    sched_pp = make_bin_schedule(cfg.n_baseline_pp, rng_protocol)
    sched_sp = make_bin_schedule(cfg.n_baseline_sp, rng_protocol)
    mixed = [("paired", PhaseBin(b)) for b in sched_pp.bins]
    mixed += [("single", PhaseBin(b)) for b in sched_sp.bins]
    order = rng_protocol.permutation(len(mixed))
    base_records, state, clock = run_block("BASELINE", [mixed[i] for i in order], state, clock)

    base_pp = [r.amplitude_mv for r in base_records if r.stim == "paired" and not r.rejected]
    base_sp = [r.amplitude_mv for r in base_records if r.stim == "single" and not r.rejected]
    if not base_pp or not base_sp:
        raise SessionInvalidError(
            f"no retained baseline trials (pp={len(base_pp)}, sp={len(base_sp)}); "
            "baseline average undefined"
        )
    baseline_avg_pp = float(np.mean(base_pp))
    baseline_avg_sp = float(np.mean(base_sp))

    # -- closed-loop training ------------------------------------------------
    train_actions: list[int] = []
    train_rewards: list[float | None] = []
    agent_state = None
    reward_spec = None
    if cfg.condition != "RANDOM":
        agent_state = AgentState(cfg.agent, rng_agent)
        reward_spec = RewardSpec(condition=cfg.condition, baseline_avg_mv=baseline_avg_pp)
    reward_window: list[float] = []

    for t in range(cfg.n_train):
        if cfg.condition == "RANDOM":
            target = PhaseBin(int(rng_agent.integers(N_BINS)))
            epsilon = None
        else:
            epsilon = cfg.agent.epsilon_at(agent_state.step)
            target = agent_mod.select_action(agent_state, cfg.agent, rng_agent)
        clock += rng_protocol.uniform(*cfg.iti_s)
        rec, state = runner.run(index, "TRAIN", "paired", target, state, clock, trial_seed(index))
        rec.epoch = t // cfg.steps_per_epoch
        rec.step = t
        rec.epsilon = epsilon
        train_actions.append(target.index)
        if cfg.condition != "RANDOM" and not rec.rejected:
            reward_window.append(rec.amplitude_mv)
            reward_window = reward_window[-cfg.agent.avg_window :]
            reward = compute_reward(reward_spec, float(np.mean(reward_window)))
            agent_mod.update(agent_state, cfg.agent, target, reward, rng_agent)
            rec.reward = reward
            train_rewards.append(reward)
        else:
            train_rewards.append(None)
        if agent_state is not None:
            rec.q = tuple(float(v) for v in agent_state.q_snapshot())
        trials.append(rec)
        index += 1

    learned = agent_mod.extract_optimal_phase(
        [PhaseBin(a) for a in train_actions], train_rewards
    )
    curve = agent_mod.learning_curve(
        [PhaseBin(a) for a in train_actions], learned, cfg.steps_per_epoch
    )

    # -- first evaluation ----------------------------------------------------
    def eval_blocks(tag_opt: str, tag_rand: str, state, clock):
        order = ("OPT", "RAND") if rng_protocol.random() < 0.5 else ("RAND", "OPT")
        for which in order:
            if which == "OPT":
                mixed = [("paired", learned)] * cfg.n_eval_pp + [("single", learned)] * cfg.n_eval_sp
                perm = rng_protocol.permutation(len(mixed))
                _, state, clock = run_block(tag_opt, [mixed[i] for i in perm], state, clock)
            else:
                spp = make_bin_schedule(cfg.n_eval_pp, rng_protocol)
                ssp = make_bin_schedule(cfg.n_eval_sp, rng_protocol)
                mixed = [("paired", PhaseBin(b)) for b in spp.bins]
                mixed += [("single", PhaseBin(b)) for b in ssp.bins]
                perm = rng_protocol.permutation(len(mixed))
                _, state, clock = run_block(tag_rand, [mixed[i] for i in perm], state, clock)
        return order, state, clock

    order_post, state, clock = eval_blocks("POST_OPT", "POST_RAND", state, clock)

    # -- gap and second resting EEG -------------------------------------------
    clock += cfg.post_gap_min * 60.0
    rest_post30, scalp_post30, rois_post30 = _rest_summary(
        state, cfg,
        np.random.SeedSequence(entropy=cfg.seed, spawn_key=(_STREAM_REST_SCALP, 1)),
        np.random.SeedSequence(entropy=cfg.seed, spawn_key=(_STREAM_REST_ROI, 1)),
    )
    clock += cfg.rest_eeg_s

    # -- second evaluation -----------------------------------------------------
    order_post30, state, clock = eval_blocks("POST30_OPT", "POST30_RAND", state, clock)

    return SessionLog(
        config=cfg,
        trials=trials,
        learned_bin=learned.index,
        learning_curve=curve,
        baseline_avg_pp_mv=baseline_avg_pp,
        baseline_avg_sp_mv=baseline_avg_sp,
        rest_baseline=rest_base,
        rest_post30=rest_post30,
        subsection_order_post=order_post,
        subsection_order_post30=order_post30,
        duration_s=clock,
        final_coupling=state.coupling,
        final_gain=state.excitability_gain,
        rest_baseline_signals=rois_base if keep_signals else None,
        rest_post30_signals=rois_post30 if keep_signals else None,
        rest_baseline_scalp=scalp_base if keep_signals else None,
        rest_post30_scalp=scalp_post30 if keep_signals else None,
    )


def retention_gate(log: SessionLog, snr_threshold_db: float = SNR_THRESHOLD_DB):
    """(retained: bool, reason: str | None) from the baseline resting-state SNR."""
    if log.rest_baseline_scalp is not None:
        snr = estimate_snr(
            welch_psd(log.rest_baseline_scalp, window_s=SNR_WELCH_WINDOW_S)
        ).snr_db
    else:
        snr = log.rest_baseline.snr_db
    if snr < snr_threshold_db:
        return False, f"low_snr ({snr:.2f} dB < {snr_threshold_db} dB)"
    return True, None


def replay_q_trace(log: SessionLog) -> list[tuple[float, ...]]:
    """Recompute the tabular q-trace from the logged training trials.

    Closed-loop causality check: every logged reward and q vector must be
    reproducible from the (action, amplitude, rejected) sequence alone.
    """
    cfg = log.config
    if cfg.condition == "RANDOM":
        raise ParameterError("no agent trace in a RANDOM-condition session")
    if cfg.agent.mode != "tabular":
        raise ParameterError("replay check supports the tabular reference mode")
    q = np.zeros(N_BINS)
    spec = RewardSpec(condition=cfg.condition, baseline_avg_mv=log.baseline_avg_pp_mv)
    window: list[float] = []
    out = []
    for rec in log.trials_in("TRAIN"):
        if not rec.rejected:
            window.append(rec.amplitude_mv)
            window = window[-cfg.agent.avg_window :]
            reward = compute_reward(spec, float(np.mean(window)))
            q[rec.target_bin] += cfg.agent.alpha * (reward - q[rec.target_bin])
        out.append(tuple(float(v) for v in q))
    return out
