"""Decentralized task-offloading game simulator with bandit learners.

Self-interested clients repeatedly pick vehicular fog nodes under bandit
feedback, an oblivious adversary and congestion coupling.  The package pairs
the simulator with a verification layer: replicator-ODE integration,
brute-force equilibrium oracles, and regret / price-of-total-anarchy metrics.
"""

__version__ = "0.1.0"

from .bandit import AgentState, LearnerParams, LearningRates
from .env import (
    AdversaryPhaseSchedule,
    CandidateSchedule,
    ChannelParams,
    CostTriple,
    EnvConfig,
    Environment,
    VfnSpec,
)
from .game import GameConfig, GameTrace, RoundRecord, run_game
from .oracle import SmallGame

__all__ = [
    "AdversaryPhaseSchedule",
    "AgentState",
    "CandidateSchedule",
    "ChannelParams",
    "CostTriple",
    "EnvConfig",
    "Environment",
    "GameConfig",
    "GameTrace",
    "LearnerParams",
    "LearningRates",
    "RoundRecord",
    "SmallGame",
    "VfnSpec",
    "run_game",
]
