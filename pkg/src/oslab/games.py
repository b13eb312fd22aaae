"""N-player iterated cooperate/defect games.

Four symmetric social dilemmas (iterated prisoner's dilemma, snowdrift,
tragedy of the commons, stag hunt) share one representation: every player
simultaneously picks Cooperate or Defect, payoffs depend only on the
player's own action and the number of cooperators, and the game repeats
for a fixed number of steps per episode.

All stateful rollout machinery is batched: a batch element is one
independent copy of the game (one trial), so population-sized experiments
run as vectorized numpy instead of python loops.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Mapping, Sequence

import numpy as np

GAME_KINDS = ("ipd", "snowdrift", "toc", "staghunt")

# Per-kind payoff constants and their defaults. ToC's threshold default is
# resolved against n_players at validation time (None placeholder here).
_DEFAULT_PARAMS: dict[str, dict[str, float | None]] = {
    "ipd": {},
    "snowdrift": {"benefit": 5.0, "total_cost": 3.0},
    "toc": {"benefit": 5.0, "cost": 3.0, "threshold": None},
    "staghunt": {"hunt_cost": 3.0, "reward": 6.0},
}


class Action(IntEnum):
    """The two moves; Cooperate encodes as bit 1 in observations."""

    DEFECT = 0
    COOPERATE = 1


class GameError(ValueError):
    """Contract violation in game construction or payoff evaluation."""


@dataclass(eq=True)
class GameSpec:
    """Which dilemma, how many players, and its payoff constants."""

    kind: str
    n_players: int
    params: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in GAME_KINDS:
            raise GameError(f"unknown game kind {self.kind!r}; expected one of {GAME_KINDS}")
        if self.n_players < 2:
            raise GameError(f"n_players must be >= 2, got {self.n_players}")
        defaults = dict(_DEFAULT_PARAMS[self.kind])
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise GameError(f"unknown params for {self.kind}: {sorted(unknown)}")
        merged = {**defaults, **self.params}
        if self.kind == "toc" and merged["threshold"] is None:
            merged["threshold"] = float(self.n_players // 2)
        self.params = {k: float(v) for k, v in merged.items()}
        self._validate()

    def _validate(self) -> None:
        p = self.params
        if self.kind == "toc":
            if not (0 <= p["threshold"] < self.n_players):
                raise GameError(
                    f"toc threshold must satisfy 0 <= T < n_players, got T={p['threshold']}"
                )
        elif self.kind == "staghunt":
            if not (p["reward"] > p["hunt_cost"]):
                raise GameError("staghunt requires reward > hunt_cost")
        elif self.kind == "snowdrift":
            if not (p["benefit"] > p["total_cost"]):
                raise GameError("snowdrift requires benefit > total_cost (lone shoveling must pay)")

    @property
    def num_codes(self) -> int:
        """Observation alphabet size: all joint actions plus the start symbol."""
        return 2**self.n_players + 1

    @property
    def start_code(self) -> int:
        return 2**self.n_players

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n_players": self.n_players, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "GameSpec":
        return cls(kind=d["kind"], n_players=int(d["n_players"]), params=dict(d.get("params", {})))


def payoff_batch(spec: GameSpec, actions: np.ndarray) -> np.ndarray:
    """Per-player payoffs for a batch of joint actions.

    `actions` is an integer array of shape (B, n_players) with entries in
    {0, 1}; returns float payoffs of the same shape. Payoffs depend only on
    the player's own action and the total cooperator count, which is what
    makes every game here symmetric.
    """
    actions = np.asarray(actions)
    if actions.ndim != 2 or actions.shape[1] != spec.n_players:
        raise GameError(
            f"joint action shape {actions.shape} does not match n_players={spec.n_players}"
        )
    if not np.isin(actions, (0, 1)).all():
        raise GameError("actions must be 0 (defect) or 1 (cooperate)")
    n = spec.n_players
    p = spec.params
    a = actions.astype(np.float64)
    k = a.sum(axis=1, keepdims=True)  # cooperators per batch row

    if spec.kind == "ipd":
        # m = cooperators among the *other* players; C pays 2m, D pays 2m+1.
        m = k - a
        return 2.0 * m + (1.0 - a)
    if spec.kind == "snowdrift":
        shoveled = k >= 1
        coop_pay = np.where(shoveled, p["benefit"] - p["total_cost"] / np.maximum(k, 1.0), 0.0)
        defect_pay = np.where(shoveled, p["benefit"], 0.0)
        return np.where(a == 1.0, coop_pay, defect_pay)
    if spec.kind == "toc":
        sustained = k > p["threshold"]
        coop_pay = np.where(sustained, p["benefit"] - p["cost"], -p["cost"])
        defect_pay = np.where(sustained, p["benefit"], 0.0)
        return np.where(a == 1.0, coop_pay, defect_pay)
    # staghunt
    success = k >= np.ceil(n / 2)
    share = k * p["reward"] / n
    coop_pay = np.where(success, share - p["hunt_cost"], -p["hunt_cost"])
    defect_pay = np.where(success, share, 0.0)
    return np.where(a == 1.0, coop_pay, defect_pay)


def payoff(spec: GameSpec, joint: Sequence[int]) -> np.ndarray:
    """Payoff vector for a single joint action (length n_players)."""
    joint = np.asarray(joint, dtype=np.int64)
    if joint.shape != (spec.n_players,):
        raise GameError(f"joint action length {joint.shape} != n_players {spec.n_players}")
    return payoff_batch(spec, joint[None, :])[0]


def encode_observation(prev: Sequence[int] | None, agent_index: int, n_players: int) -> int:
    """Observation code an agent sees: the previous joint action, rotated.

    The agent's own previous action occupies bit 0 and the remaining players
    follow in ring order (i+1, i+2, ... mod n). Episode start (no previous
    action) maps to the reserved code 2**n for every agent.
    """
    if not 0 <= agent_index < n_players:
        raise GameError(f"agent_index {agent_index} out of range for n_players={n_players}")
    if prev is None:
        return 2**n_players
    joint = np.asarray(prev, dtype=np.int64)
    if joint.shape != (n_players,):
        raise GameError("previous joint action length mismatch")
    code = 0
    for bit in range(n_players):
        code |= int(joint[(agent_index + bit) % n_players]) << bit
    return code


def encode_observation_batch(actions: np.ndarray) -> np.ndarray:
    """Codes for all agents at once: (B, n) actions -> (B, n) codes."""
    B, n = actions.shape
    weights = 1 << np.arange(n)
    codes = np.zeros((B, n), dtype=np.int64)
    for i in range(n):
        rotated = np.roll(actions, -i, axis=1)
        codes[:, i] = rotated @ weights
    return codes


def enumerate_joint_actions(n_players: int) -> np.ndarray:
    """All 2**n joint actions, shape (2**n, n)."""
    if n_players > 20:
        raise GameError("joint-action enumeration requires n_players <= 20")
    return np.array(list(itertools.product((0, 1), repeat=n_players)), dtype=np.int64)


def welfare_bounds(spec: GameSpec) -> tuple[float, float]:
    """Min and max total payoff over all joint actions (exhaustive)."""
    joints = enumerate_joint_actions(spec.n_players)
    totals = payoff_batch(spec, joints).sum(axis=1)
    return float(totals.min()), float(totals.max())


def player_payoff_bounds(spec: GameSpec) -> tuple[float, float]:
    """Min and max single-player payoff over all joint actions.

    Identical for every seat by symmetry; used to normalize per-role returns.
    """
    joints = enumerate_joint_actions(spec.n_players)
    payoffs = payoff_batch(spec, joints)
    return float(payoffs.min()), float(payoffs.max())


def payoff_table(spec: GameSpec) -> dict[str, list[float]]:
    """Payoffs by own action and cooperator count among the other players.

    Returns {"C": [...], "D": [...]} indexed by the number of cooperators
    among the remaining n-1 players, the layout used for reporting.
    """
    n = spec.n_players
    rows: dict[str, list[float]] = {"C": [], "D": []}
    for others_coop in range(n):
        joint_c = [1] + [1] * others_coop + [0] * (n - 1 - others_coop)
        joint_d = [0] + [1] * others_coop + [0] * (n - 1 - others_coop)
        rows["C"].append(float(payoff(spec, joint_c)[0]))
        rows["D"].append(float(payoff(spec, joint_d)[0]))
    return rows


@dataclass
class Trajectory:
    """One agent's per-step record of a (batched) episode.

    All arrays carry a leading batch axis B; a plain single episode is B=1.
    `hiddens_pre[:, t]` is the recurrent state *before* consuming step t's
    observation, which is what minibatch re-unrolls restart from.
    """

    observations: np.ndarray  # (B, T) int codes
    actions: np.ndarray  # (B, T) in {0, 1}
    log_probs: np.ndarray  # (B, T)
    values: np.ndarray  # (B, T)
    rewards: np.ndarray  # (B, T)
    hiddens_pre: np.ndarray  # (B, T, H)
    final_hidden: np.ndarray  # (B, H)

    @property
    def episode_length(self) -> int:
        return self.observations.shape[1]

    @property
    def batch_size(self) -> int:
        return self.observations.shape[0]


def play_episode(
    policies: Sequence,
    spec: GameSpec,
    episode_length: int,
    rng: np.random.Generator,
    batch_size: int = 1,
) -> list[Trajectory]:
    """Roll one episode of the iterated game, one trajectory per agent.

    Each policy must expose ``act_batch(codes, u) -> (actions, log_probs,
    values)`` over a batch of observation codes, advancing its own recurrent
    state, plus a ``hidden`` array of shape (B, H). Policies are polled in
    seat order every step with one shared uniform draw per (seat, batch)
    cell, so identical seeds give bit-identical episodes.
    """
    n = spec.n_players
    if len(policies) != n:
        raise GameError(f"need {n} policies, got {len(policies)}")
    if episode_length < 1:
        raise GameError("episode_length must be >= 1")
    B, T = batch_size, episode_length

    obs = np.full((B, n), spec.start_code, dtype=np.int64)
    observations = np.zeros((n, B, T), dtype=np.int64)
    actions = np.zeros((n, B, T), dtype=np.int64)
    log_probs = np.zeros((n, B, T))
    values = np.zeros((n, B, T))
    rewards = np.zeros((n, B, T))
    hiddens_pre = [np.zeros((B, T) + pol.hidden.shape[1:]) for pol in policies]

    for t in range(T):
        u = rng.random((n, B))
        step_actions = np.zeros((B, n), dtype=np.int64)
        for i, pol in enumerate(policies):
            hiddens_pre[i][:, t] = pol.hidden
            observations[i, :, t] = obs[:, i]
            a, lp, v = pol.act_batch(obs[:, i], u[i])
            step_actions[:, i] = a
            actions[i, :, t] = a
            log_probs[i, :, t] = lp
            values[i, :, t] = v
        rewards[:, :, t] = payoff_batch(spec, step_actions).T
        obs = encode_observation_batch(step_actions)

    return [
        Trajectory(
            observations=observations[i],
            actions=actions[i],
            log_probs=log_probs[i],
            values=values[i],
            rewards=rewards[i],
            hiddens_pre=hiddens_pre[i],
            final_hidden=policies[i].hidden.copy(),
        )
        for i in range(n)
    ]
