"""Acting agents: the shared sampling interface over GRU policies.

An agent owns its recurrent hidden state for the duration of a trial (it
persists across episode boundaries) and exposes ``act_batch`` over a batch
of independent game copies. Learning agents additionally implement
``end_episode``, called by the trial loop after every episode.
"""

from __future__ import annotations

import numpy as np

from .games import Trajectory
from .nets import GruPolicy, gru_forward_np, log_softmax_np


class Agent:
    """Base protocol: fixed behavior, no learning."""

    hidden: np.ndarray

    def reset_hidden(self) -> None:
        self.hidden = np.zeros_like(self.hidden)

    def act_batch(self, codes: np.ndarray, u: np.ndarray):
        raise NotImplementedError

    def end_episode(self, trajectory: Trajectory, seats: list["Agent"], seat_index: int, rng: np.random.Generator) -> None:
        """Learning hook; fixed policies do nothing."""


class FixedActionAgent(Agent):
    """Plays one hard-coded action forever (test opponents)."""

    def __init__(self, action: int, batch_size: int = 1):
        self.action = int(action)
        self.hidden = np.zeros((batch_size, 0))

    def act_batch(self, codes, u):
        B = codes.shape[0]
        actions = np.full(B, self.action, dtype=np.int64)
        return actions, np.zeros(B), np.zeros(B)


class GruAgent(Agent):
    """Samples from a GRU policy; parameters stay fixed unless a subclass learns.

    `params` arrays have leading stack axis 1 (shared across the batch) or
    B (independent parameters per batch element, e.g. one candidate genome
    per slot during population evaluation).
    """

    def __init__(self, policy: GruPolicy, params: dict[str, np.ndarray], batch_size: int = 1):
        self.policy = policy
        self.params = params
        self.batch_size = batch_size
        self.hidden = np.zeros((batch_size, policy.hidden_dim))

    def act_batch(self, codes, u):
        logits, values, new_hidden = gru_forward_np(self.params, codes, self.hidden)
        self.hidden = new_hidden
        log_probs = log_softmax_np(logits)
        p_coop = np.exp(log_probs[:, 1])
        actions = (u < p_coop).astype(np.int64)
        taken = log_probs[np.arange(codes.shape[0]), actions]
        return actions, taken, values

    def action_distribution(self, codes: np.ndarray) -> np.ndarray:
        """Cooperation probability per batch element without advancing state."""
        logits, _, _ = gru_forward_np(self.params, codes, self.hidden)
        return np.exp(log_softmax_np(logits)[:, 1])
