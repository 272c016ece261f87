"""Phase-selection agent: reward computation, epsilon-greedy Q-learning, and
learning-curve extraction.

The task has no observable state transition between trials, so the value
update runs with a zero discount: a stochastic 8-armed bandit. The tabular
mode is the reference; the mlp mode mirrors the deep-Q framing with a small
network, experience replay and periodic target sync.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .phase import N_BINS, PhaseBin

INCREASE = "INCREASE"
DECREASE = "DECREASE"
RANDOM = "RANDOM"

REWARD_MULTIPLIER = {INCREASE: 1.5, DECREASE: 0.7}


@dataclass(frozen=True)
class RewardSpec:
    condition: str
    baseline_avg_mv: float

    def __post_init__(self):
        if self.condition not in REWARD_MULTIPLIER:
            raise ParameterError(f"no reward defined for condition {self.condition!r}")
        if self.baseline_avg_mv <= 0:
            raise ParameterError("baseline_avg_mv must be positive")

    @property
    def multiplier(self) -> float:
        return REWARD_MULTIPLIER[self.condition]


def compute_reward(spec: RewardSpec, current_avg_mv: float) -> float:
    """INCREASE: current - 1.5*baseline; DECREASE: 0.7*baseline - current."""
    if current_avg_mv <= 0:
        raise ParameterError("current_avg_mv must be positive")
    if spec.condition == INCREASE:
        return current_avg_mv - spec.multiplier * spec.baseline_avg_mv
    return spec.multiplier * spec.baseline_avg_mv - current_avg_mv


@dataclass(frozen=True)
class AgentConfig:
    mode: str = "tabular"  # "tabular" | "mlp"
    alpha: float = 0.05
    epsilon0: float = 1.0
    epsilon_min: float = 0.05
    epsilon_decay: float = 0.9851  # ~epsilon_min by trial 200
    replay_capacity: int = 256
    batch_size: int = 16
    target_sync_steps: int = 20
    avg_window: int = 5
    hidden_units: int = 16

    def __post_init__(self):
        if self.mode not in ("tabular", "mlp"):
            raise ParameterError(f"unknown agent mode {self.mode!r}")
        if not (0 < self.alpha <= 1):
            raise ParameterError("alpha must be in (0, 1]")
        if not (0 <= self.epsilon_min <= self.epsilon0 <= 1):
            raise ParameterError("need 0 <= epsilon_min <= epsilon0 <= 1")
        if not (0 < self.epsilon_decay <= 1):
            raise ParameterError("epsilon_decay must be in (0, 1]")
        if self.avg_window < 1:
            raise ParameterError("avg_window must be >= 1")

    def epsilon_at(self, step: int) -> float:
        return max(self.epsilon_min, self.epsilon0 * self.epsilon_decay**step)


class _QNet:
    """Tiny constant-input network: q = W2.T @ tanh(w1) + b2."""

    def __init__(self, hidden: int, rng: np.random.Generator):
        self.w1 = 0.1 * rng.standard_normal(hidden)
        self.w2 = 0.1 * rng.standard_normal((hidden, N_BINS))
        self.b2 = np.zeros(N_BINS)

    def q_values(self) -> np.ndarray:
        return np.tanh(self.w1) @ self.w2 + self.b2

    def sgd_step(self, actions: np.ndarray, targets: np.ndarray, lr: float) -> None:
        h = np.tanh(self.w1)
        q = h @ self.w2 + self.b2
        dq = np.zeros(N_BINS)
        dh = np.zeros_like(h)
        for a, y in zip(actions, targets):
            g = 2.0 * (q[a] - y) / actions.size
            dq[a] += g
            dh += g * self.w2[:, a]
        self.w2 -= lr * np.outer(h, dq)
        self.b2 -= lr * dq
        self.w1 -= lr * dh * (1.0 - h**2)

    def copy_weights(self) -> dict:
        return {"w1": self.w1.copy(), "w2": self.w2.copy(), "b2": self.b2.copy()}


class AgentState:
    """Single-writer mutable state; snapshots are cheap copies for logging."""

    def __init__(self, cfg: AgentConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.step = 0
        self.visit_counts = np.zeros(N_BINS, dtype=int)
        self.replay: list[tuple[int, float]] = []
        self.net = None
        self.target_net_weights = None
        self.updates = 0
        if cfg.mode == "mlp":
            if rng is None:
                raise ParameterError("mlp mode needs an rng for weight init")
            self.net = _QNet(cfg.hidden_units, rng)
            self.target_net_weights = self.net.copy_weights()
            self._q = None
        else:
            self._q = np.zeros(N_BINS)

    @property
    def q(self) -> np.ndarray:
        if self.cfg.mode == "mlp":
            return self.net.q_values()
        return self._q

    def q_snapshot(self) -> np.ndarray:
        return np.array(self.q, dtype=float)


def select_action(state: AgentState, cfg: AgentConfig, rng: np.random.Generator) -> PhaseBin:
    """Epsilon-greedy with uniform tie-breaking; the first trial is uniform.

    Records the visit: increments the step counter and the chosen bin's count.
    """
    eps = cfg.epsilon_at(state.step)
    if state.step == 0 or rng.random() < eps:
        a = int(rng.integers(N_BINS))
    else:
        q = state.q
        maxima = np.flatnonzero(q == q.max())
        a = int(maxima[rng.integers(maxima.size)]) if maxima.size > 1 else int(maxima[0])
    state.step += 1
    state.visit_counts[a] += 1
    return PhaseBin(a)


def update(
    state: AgentState,
    cfg: AgentConfig,
    action: PhaseBin,
    reward: float,
    rng: np.random.Generator | None = None,
) -> AgentState:
    """Value update with a zero-discount target (reward itself)."""
    a = action.index
    if cfg.mode == "tabular":
        state._q[a] += cfg.alpha * (reward - state._q[a])
        state.updates += 1
        return state
    if rng is None:
        raise ParameterError("mlp update needs an rng for replay sampling")
    state.replay.append((a, float(reward)))
    if len(state.replay) > cfg.replay_capacity:
        state.replay.pop(0)
    k = min(cfg.batch_size, len(state.replay))
    idx = rng.integers(len(state.replay), size=k)
    actions = np.array([state.replay[i][0] for i in idx])
    targets = np.array([state.replay[i][1] for i in idx])
    state.net.sgd_step(actions, targets, cfg.alpha)
    state.updates += 1
    if state.updates % cfg.target_sync_steps == 0:
        state.target_net_weights = state.net.copy_weights()
    return state


def extract_optimal_phase(action_history, rewards=None) -> PhaseBin:
    """Modal bin of the training actions.

    Ties break toward the bin with the higher mean reward (when rewards are
    given), then toward the lower index.
    """
    actions = [a.index if isinstance(a, PhaseBin) else int(a) for a in action_history]
    if not actions:
        raise ParameterError("empty action history")
    counts = np.bincount(actions, minlength=N_BINS)
    best = counts.max()
    candidates = np.flatnonzero(counts == best)
    if candidates.size == 1 or rewards is None:
        return PhaseBin(int(candidates[0]))
    means = []
    for c in candidates:
        rs = [r for a, r in zip(actions, rewards) if a == c and r is not None]
        means.append(np.mean(rs) if rs else -np.inf)
    return PhaseBin(int(candidates[int(np.argmax(means))]))


def learning_curve(action_history, optimal: PhaseBin, steps_per_epoch: int = 40) -> list[float]:
    """Per-epoch fraction of trials that used the given optimal bin."""
    actions = np.array([a.index if isinstance(a, PhaseBin) else int(a) for a in action_history])
    if actions.size == 0 or actions.size % steps_per_epoch != 0:
        raise ParameterError(
            f"history length {actions.size} is not a multiple of {steps_per_epoch}"
        )
    hits = (actions == optimal.index).astype(float)
    return [float(chunk.mean()) for chunk in hits.reshape(-1, steps_per_epoch)]
