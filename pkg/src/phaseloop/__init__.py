"""Closed-loop phase-targeted stimulation simulator.

A seedable re-implementation of a reinforcement-learning closed-loop
stimulation experiment: real-time mu-phase prediction and triggering, an
8-phase-bin Q-learning agent, the full session protocol against a virtual
subject with planted ground truth, and the offline statistical and
connectivity analysis.
"""

from .agent import AgentConfig, RewardSpec, compute_reward
from .phase import PhaseBin, PredictorConfig, TriggerPlan, bin_of
from .session import SessionConfig, run_session, retention_gate
from .signals import MuGenParams, TimeSeries, generate_mu_eeg
from .subject import SubjectParams, SubjectState, respond

__version__ = "0.1.0"

__all__ = [
    "AgentConfig", "RewardSpec", "compute_reward",
    "PhaseBin", "PredictorConfig", "TriggerPlan", "bin_of",
    "SessionConfig", "run_session", "retention_gate",
    "MuGenParams", "TimeSeries", "generate_mu_eeg",
    "SubjectParams", "SubjectState", "respond",
]
