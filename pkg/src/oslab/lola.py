"""Lookahead opponent shaping with the DiCE estimator.

The lookahead agent assumes parameter access to its co-players. Each
update it simulates batched rollouts under everyone's current policies on
a gradient tape, takes each co-player's own policy-gradient step as a
*differentiable* function of all parameters, re-simulates under the
stepped ("virtual") co-players, and ascends the gradient of its own return
through both its direct action choices and the co-players' anticipated
updates. The magic-box construction keeps every one of those gradients a
correct score-function estimator at any differentiation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .agents import GruAgent
from .games import GameSpec, encode_observation_batch, payoff_batch
from .nets import AdamState, GruPolicy, adam_update, gru_step, log_softmax


class LolaError(RuntimeError):
    """Non-finite gradients or inconsistent rollout bookkeeping."""


@dataclass
class LolaConfig:
    inner_lr: float = 0.3
    lookahead_steps: int = 1
    batch_size: int = 16
    lr: float = 0.05
    discount: float = 0.96
    use_baseline: bool = True
    value_coef: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.lookahead_steps < 1:
            raise ValueError("lookahead_steps must be >= 1")
        if self.inner_lr < 0:
            raise ValueError("inner_lr must be non-negative")


def magic_box(cumulative_log_probs: Tensor) -> Tensor:
    """exp(tau - stop_gradient(tau)): value exactly 1, gradient of tau."""
    return ad.exp(ad.sub(cumulative_log_probs, ad.detach(cumulative_log_probs)))


@dataclass
class RolloutBatch:
    """Taped simulated episodes: per-seat, per-step tensors plus raw arrays."""

    log_probs: list[list[Tensor]]  # [seat][t] -> (B,) taken-action log probs
    values: list[list[Tensor]]  # [seat][t] -> (B,) critic outputs
    stored_log_probs: np.ndarray  # (n, B, T) values captured at sampling time
    rewards: np.ndarray  # (n, B, T)
    actions: np.ndarray  # (n, B, T)

    @property
    def n_seats(self) -> int:
        return len(self.log_probs)

    @property
    def length(self) -> int:
        return self.rewards.shape[2]

    @property
    def batch_size(self) -> int:
        return self.rewards.shape[1]


def simulate_batch(
    policy: GruPolicy,
    seat_params: list[dict[str, Tensor]],
    spec: GameSpec,
    episode_length: int,
    start_hiddens: list[np.ndarray],
    rng: np.random.Generator,
    batch_size: int,
) -> RolloutBatch:
    """Roll simulated episodes with every seat's policy on the active tape.

    Action sampling itself is not differentiated; the taped log-probs of
    the sampled actions carry all gradient information. Hidden states start
    from the provided snapshots (broadcast across the batch), mirroring how
    the next real episode would begin.
    """
    n = spec.n_players
    if len(seat_params) != n:
        raise LolaError(f"need params for {n} seats, got {len(seat_params)}")
    B, T = batch_size, episode_length
    eye = np.eye(policy.n_actions)

    hiddens = [Tensor(np.repeat(np.atleast_2d(h)[:1], B, axis=0)) for h in start_hiddens]
    codes = np.full((B, n), spec.start_code, dtype=np.int64)
    log_probs: list[list[Tensor]] = [[] for _ in range(n)]
    values: list[list[Tensor]] = [[] for _ in range(n)]
    stored = np.zeros((n, B, T))
    rewards = np.zeros((n, B, T))
    all_actions = np.zeros((n, B, T), dtype=np.int64)

    for t in range(T):
        u = rng.random((n, B))
        step_actions = np.zeros((B, n), dtype=np.int64)
        for i in range(n):
            logits, value, hiddens[i] = gru_step(seat_params[i], codes[:, i], hiddens[i])
            logp = log_softmax(logits)
            p_coop = np.exp(logp.value[:, 1])
            acts = (u[i] < p_coop).astype(np.int64)
            taken = ad.tsum(ad.mul(logp, eye[acts]), axis=1)
            step_actions[:, i] = acts
            all_actions[i, :, t] = acts
            log_probs[i].append(taken)
            values[i].append(value)
            stored[i, :, t] = taken.value
        rewards[:, :, t] = payoff_batch(spec, step_actions).T
        codes = encode_observation_batch(step_actions)

    return RolloutBatch(
        log_probs=log_probs,
        values=values,
        stored_log_probs=stored,
        rewards=rewards,
        actions=all_actions,
    )


def dice_objective(
    batch: RolloutBatch,
    agent_index: int,
    discount: float,
    use_baseline: bool = False,
) -> Tensor:
    """Differentiable surrogate whose value is the plain discounted return.

    Each step's reward is weighted by the magic box of the cumulative joint
    log-probability of all actions up to that step, so differentiating any
    number of times yields the corresponding score-function estimator. The
    optional baseline adds (1 - box(step nodes)) * b_t terms, which leave
    the value untouched and reduce gradient variance.
    """
    T, B = batch.length, batch.batch_size
    for i in range(batch.n_seats):
        for t in range(T):
            drift = np.max(np.abs(batch.log_probs[i][t].value - batch.stored_log_probs[i, :, t]))
            if drift > 1e-6:
                raise LolaError(
                    f"stale log-probs for seat {i} step {t}: recomputed values drifted {drift:.3g}"
                )

    total = Tensor(np.zeros(B))
    cumulative = Tensor(np.zeros(B))
    for t in range(T):
        step_joint = batch.log_probs[0][t]
        for i in range(1, batch.n_seats):
            step_joint = ad.add(step_joint, batch.log_probs[i][t])
        cumulative = ad.add(cumulative, step_joint)
        weight = discount**t * batch.rewards[agent_index, :, t]
        total = ad.add(total, ad.mul(magic_box(cumulative), weight))
        if use_baseline:
            baseline = discount**t * batch.values[agent_index][t].value
            total = ad.add(total, ad.mul(ad.sub(1.0, magic_box(step_joint)), baseline))
    return ad.tmean(total)


def critic_loss(batch: RolloutBatch, agent_index: int, discount: float) -> Tensor:
    """Mean squared error of the critic against empirical discounted returns."""
    T, B = batch.length, batch.batch_size
    returns = np.zeros((B, T))
    acc = np.zeros(B)
    for t in range(T - 1, -1, -1):
        acc = batch.rewards[agent_index, :, t] + discount * acc
        returns[:, t] = acc
    total = Tensor(np.zeros(B))
    for t in range(T):
        err = ad.sub(batch.values[agent_index][t], returns[:, t])
        total = ad.add(total, ad.mul(err, err))
    return ad.tmean(ad.mul(total, 1.0 / T))


def inner_lookahead(
    tape: Tape,
    co_params: dict[str, Tensor],
    batch: RolloutBatch,
    co_index: int,
    inner_lr: float,
    discount: float,
    use_baseline: bool = False,
) -> dict[str, Tensor]:
    """One anticipated policy-gradient ascent step for a co-player.

    `tape` must be the (already closed) tape that recorded `batch`; calling
    this while an outer tape is active keeps the returned parameters
    differentiable, which is the channel the outer gradient flows through.
    """
    objective = dice_objective(batch, co_index, discount, use_baseline)
    names = list(co_params)
    grads = tape.gradient(objective, [co_params[k] for k in names])
    return {k: ad.add(co_params[k], ad.mul(inner_lr, g)) for k, g in zip(names, grads)}


def lola_gradients(
    policy: GruPolicy,
    spec: GameSpec,
    seat_params: list[dict[str, np.ndarray]],
    own_index: int,
    start_hiddens: list[np.ndarray],
    episode_length: int,
    config: LolaConfig,
    rng: np.random.Generator,
) -> tuple[dict[str, np.ndarray], dict]:
    """Ascent gradient of the shaping objective for one agent's parameters.

    The objective is the agent's own DiCE return under virtually-stepped
    co-players, minus the critic regression loss (shared torso, so both
    terms update through one optimizer). Returns (gradient dict, aux info).
    """
    n = spec.n_players
    co_indices = [i for i in range(n) if i != own_index]
    with Tape() as outer:
        leaves = [
            {k: Tensor(v) for k, v in params.items()} for params in seat_params
        ]
        current: list[dict[str, Tensor]] = list(leaves)
        for _ in range(config.lookahead_steps):
            with Tape() as inner:
                batch = simulate_batch(
                    policy, current, spec, episode_length, start_hiddens, rng, config.batch_size
                )
            stepped = {
                j: inner_lookahead(
                    inner,
                    current[j],
                    batch,
                    j,
                    config.inner_lr,
                    config.discount,
                    config.use_baseline,
                )
                for j in co_indices
            }
            current = [current[i] if i == own_index else stepped[i] for i in range(n)]
        shaped_batch = simulate_batch(
            policy, current, spec, episode_length, start_hiddens, rng, config.batch_size
        )
        own_return = dice_objective(
            shaped_batch, own_index, config.discount, config.use_baseline
        )
        value_err = critic_loss(shaped_batch, own_index, config.discount)
        objective = ad.sub(own_return, ad.mul(config.value_coef, value_err))
    names = list(seat_params[own_index])
    grads = outer.gradient(objective, [leaves[own_index][k] for k in names])
    grad_dict = {k: g.value for k, g in zip(names, grads)}
    for k, g in grad_dict.items():
        if not np.isfinite(g).all():
            raise LolaError(f"non-finite lookahead gradient in {k}")
    aux = {
        "own_return": float(own_return.value),
        "mean_rewards": shaped_batch.rewards.mean(axis=(1, 2)),
    }
    return grad_dict, aux


class LolaLearner(GruAgent):
    """Per-episode-updating lookahead agent with parameter access to co-players.

    Only single-copy trials are supported (batch_size 1): each update is a
    full second-order differentiation, so population batching happens at a
    higher level for these agents.
    """

    def __init__(
        self,
        policy: GruPolicy,
        params: dict[str, np.ndarray],
        config: LolaConfig,
        episode_length: int,
    ):
        super().__init__(policy, params, batch_size=1)
        self.config = config
        self.episode_length = episode_length
        self.adam = AdamState.zeros_like(params)

    @classmethod
    def create(
        cls,
        policy: GruPolicy,
        config: LolaConfig,
        rng: np.random.Generator,
        episode_length: int,
    ) -> "LolaLearner":
        init = policy.init_params(rng)
        params = {k: v[None] for k, v in init.items()}
        return cls(policy, params, config, episode_length)

    def end_episode(self, trajectory, seats, seat_index, rng) -> None:
        self.lola_update(seats, seat_index, rng)

    def lola_update(self, seats: list, seat_index: int, rng: np.random.Generator) -> None:
        """One shaping update using the current parameters of every seat."""
        seat_params = []
        start_hiddens = []
        for agent in seats:
            if not isinstance(agent, GruAgent):
                raise LolaError("lookahead agents require parameter access to all seats")
            seat_params.append(agent.params)
            start_hiddens.append(agent.hidden)
        cfg = self.config
        grads, _ = lola_gradients(
            self.policy,
            self._spec,
            seat_params,
            seat_index,
            start_hiddens,
            self.episode_length,
            cfg,
            rng,
        )
        adam_update(
            self.params,
            grads,
            self.adam,
            cfg.lr,
            cfg.adam_beta1,
            cfg.adam_beta2,
            cfg.adam_eps,
            maximize=True,
        )

    def bind_game(self, spec: GameSpec) -> None:
        self._spec = spec
