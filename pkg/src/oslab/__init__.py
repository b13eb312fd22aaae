"""Opponent-shaping laboratory for N-player iterated social dilemmas."""

from .games import Action, GameSpec, Trajectory, encode_observation, payoff, play_episode, welfare_bounds
from .shaping import ShaperSpec, TrialRecord, evaluate_genome, run_trial, train_shapers

__version__ = "0.1.0"

__all__ = [
    "Action",
    "GameSpec",
    "Trajectory",
    "ShaperSpec",
    "TrialRecord",
    "encode_observation",
    "payoff",
    "play_episode",
    "welfare_bounds",
    "evaluate_genome",
    "run_trial",
    "train_shapers",
    "__version__",
]
