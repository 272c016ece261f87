import numpy as np
import pytest
from scipy import stats as sps

from phaseloop.agent import (
    AgentConfig,
    AgentState,
    RewardSpec,
    compute_reward,
    extract_optimal_phase,
    learning_curve,
    select_action,
    update,
)
from phaseloop.errors import ParameterError
from phaseloop.phase import BIN_CENTERS, N_BINS, PhaseBin


class TestComputeReward:
    def test_increase_at_target_is_zero(self):
        spec = RewardSpec("INCREASE", baseline_avg_mv=1.0)
        assert compute_reward(spec, 1.5) == pytest.approx(0.0)

    def test_increase_above_target(self):
        spec = RewardSpec("INCREASE", baseline_avg_mv=1.0)
        assert compute_reward(spec, 2.0) == pytest.approx(0.5)

    def test_decrease_at_target_is_zero(self):
        spec = RewardSpec("DECREASE", baseline_avg_mv=1.0)
        assert compute_reward(spec, 0.7) == pytest.approx(0.0)

    def test_scale_covariance(self):
        for cond in ("INCREASE", "DECREASE"):
            r1 = compute_reward(RewardSpec(cond, 1.0), 1.2)
            r3 = compute_reward(RewardSpec(cond, 3.0), 3.6)
            assert r3 == pytest.approx(3.0 * r1)

    def test_nonpositive_rejected(self):
        spec = RewardSpec("INCREASE", 1.0)
        with pytest.raises(ParameterError):
            compute_reward(spec, 0.0)

    def test_random_condition_has_no_reward(self):
        with pytest.raises(ParameterError):
            RewardSpec("RANDOM", 1.0)


class TestSelectAction:
    def test_first_trial_uniform(self):
        cfg = AgentConfig()
        counts = np.zeros(N_BINS)
        for seed in range(20_000):
            state = AgentState(cfg)
            rng = np.random.default_rng(seed)
            counts[select_action(state, cfg, rng).index] += 1
        chi2 = ((counts - counts.mean()) ** 2 / counts.mean()).sum()
        assert sps.chi2.sf(chi2, N_BINS - 1) > 0.01

    def test_greedy_when_epsilon_zero(self, rng):
        cfg = AgentConfig(epsilon0=0.0, epsilon_min=0.0)
        state = AgentState(cfg)
        state.step = 5
        state._q[3] = 1.0
        for _ in range(50):
            assert select_action(state, cfg, rng).index == 3

    def test_uniform_when_epsilon_one(self, rng):
        cfg = AgentConfig(epsilon0=1.0, epsilon_min=1.0, epsilon_decay=1.0)
        state = AgentState(cfg)
        state._q[3] = 10.0
        counts = np.zeros(N_BINS)
        for _ in range(16_000):
            counts[select_action(state, cfg, rng).index] += 1
        chi2 = ((counts - counts.mean()) ** 2 / counts.mean()).sum()
        assert sps.chi2.sf(chi2, N_BINS - 1) > 0.01

    def test_visit_counts_track_steps(self, rng):
        cfg = AgentConfig()
        state = AgentState(cfg)
        for _ in range(100):
            select_action(state, cfg, rng)
        assert state.visit_counts.sum() == state.step == 100

    def test_epsilon_schedule_monotone(self):
        cfg = AgentConfig()
        eps = [cfg.epsilon_at(t) for t in range(400)]
        assert all(a >= b for a, b in zip(eps, eps[1:]))
        assert eps[0] == 1.0
        assert eps[250] == cfg.epsilon_min

    def test_all_bins_visited_with_floor(self):
        cfg = AgentConfig(epsilon_min=0.05)
        ok = 0
        for seed in range(500):
            rng = np.random.default_rng(seed)
            state = AgentState(cfg)
            for _ in range(400):
                a = select_action(state, cfg, rng)
                update(state, cfg, a, 1.0 if a.index == 2 else 0.0)
            ok += int(np.all(state.visit_counts >= 1))
        assert ok >= 495


class TestUpdate:
    def test_single_tabular_step(self):
        cfg = AgentConfig(alpha=0.5)
        state = AgentState(cfg)
        update(state, cfg, PhaseBin(2), 1.0)
        assert state.q[2] == pytest.approx(0.5)

    def test_alpha_one_recency(self):
        cfg = AgentConfig(alpha=1.0)
        state = AgentState(cfg)
        for r in (0.3, -2.0, 0.9):
            update(state, cfg, PhaseBin(1), r)
        assert state.q[1] == pytest.approx(0.9)

    def test_contraction_to_constant_reward(self):
        cfg = AgentConfig(alpha=0.25)
        state = AgentState(cfg)
        for k in range(1, 30):
            update(state, cfg, PhaseBin(0), 2.0)
            expected = 2.0 * (1 - (1 - 0.25) ** k)
            assert state.q[0] == pytest.approx(expected)

    def test_bandit_convergence_tabular(self):
        # deterministic reward means: brute-force argmax is the oracle
        phi_star = 0.4
        means = np.cos(BIN_CENTERS - phi_star)
        best = int(np.argmax(means))
        # deterministic rewards favor a fast learning rate (see oracle suite)
        cfg = AgentConfig(alpha=0.3)
        wins = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            state = AgentState(cfg)
            for _ in range(400):
                a = select_action(state, cfg, rng)
                update(state, cfg, a, float(means[a.index]))
            if int(np.argmax(state.q)) == best:
                wins += 1
        assert wins >= 95

    def test_bandit_convergence_mlp(self):
        phi_star = -1.3
        means = np.cos(BIN_CENTERS - phi_star)
        best = int(np.argmax(means))
        cfg = AgentConfig(mode="mlp", alpha=0.05)
        wins = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            state = AgentState(cfg, rng)
            for _ in range(400):
                a = select_action(state, cfg, rng)
                update(state, cfg, a, float(means[a.index]), rng)
            if int(np.argmax(state.q)) == best:
                wins += 1
        assert wins >= 16

    def test_mlp_replay_bounded(self, rng):
        cfg = AgentConfig(mode="mlp", replay_capacity=32)
        state = AgentState(cfg, rng)
        for _ in range(100):
            update(state, cfg, PhaseBin(0), 1.0, rng)
        assert len(state.replay) == 32


class TestExtractOptimalPhase:
    def test_unanimous(self):
        assert extract_optimal_phase([PhaseBin(2)] * 400).index == 2

    def test_tie_breaks_by_mean_reward(self):
        actions = [PhaseBin(1)] * 200 + [PhaseBin(5)] * 200
        rewards = [0.3] * 200 + [0.1] * 200
        assert extract_optimal_phase(actions, rewards).index == 1

    def test_tie_breaks_to_lower_index_without_rewards(self):
        actions = [PhaseBin(6)] * 10 + [PhaseBin(2)] * 10
        assert extract_optimal_phase(actions).index == 2

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            extract_optimal_phase([])

    def test_modal_property(self, rng):
        for _ in range(100):
            actions = [PhaseBin(int(b)) for b in rng.integers(0, N_BINS, 50)]
            winner = extract_optimal_phase(actions)
            counts = np.bincount([a.index for a in actions], minlength=N_BINS)
            assert counts[winner.index] == counts.max()


class TestLearningCurve:
    def test_all_optimal(self):
        curve = learning_curve([PhaseBin(3)] * 400, PhaseBin(3))
        assert curve == [1.0] * 10

    def test_uniform_random_near_chance(self, rng):
        fracs = []
        for _ in range(200):
            actions = [PhaseBin(int(b)) for b in rng.integers(0, N_BINS, 400)]
            fracs.extend(learning_curve(actions, PhaseBin(0)))
        assert np.mean(fracs) == pytest.approx(1 / N_BINS, abs=0.01)
        # per-epoch SD matches the binomial sqrt(p(1-p)/40)
        assert np.std(fracs) == pytest.approx(np.sqrt(0.125 * 0.875 / 40), rel=0.15)

    def test_length_mismatch(self):
        with pytest.raises(ParameterError):
            learning_curve([PhaseBin(0)] * 399, PhaseBin(0))
