"""Naive co-players: recurrent PPO agents updating after every episode.

A naive learner treats everyone else as part of the environment. It keeps
its GRU hidden state across episode boundaries within a trial, and after
each episode runs a clipped-surrogate PPO update over the episode it just
played, re-unrolling contiguous time segments from their stored hidden
states so recurrent credit assignment stays exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .agents import GruAgent
from .games import Trajectory
from .nets import (
    AdamState,
    GruPolicy,
    adam_update,
    clip_global_norm_dict,
    gru_forward_np,
    gru_step,
    log_softmax,
    stack_params,
)


@dataclass
class PpoConfig:
    """Hyperparameters; defaults follow the reference configuration."""

    minibatches: int = 10
    epochs: int = 4
    gamma: float = 0.96
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    value_coef: float = 0.5
    clip_value: bool = True
    max_grad_norm: float = 0.5
    entropy_coef: float = 0.1
    lr: float = 3e-4
    adam_eps: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    normalize_advantages: bool = False

    def __post_init__(self) -> None:
        if not (0.0 < self.gamma <= 1.0 and 0.0 < self.gae_lambda <= 1.0):
            raise ValueError("gamma and gae_lambda must lie in (0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")


def gae(
    rewards: np.ndarray,
    values: np.ndarray,
    bootstrap_value: np.ndarray | float,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and returns.

    delta_t = r_t + gamma*V_{t+1} - V_t, A_t = delta_t + gamma*lam*A_{t+1},
    returns = A + V. Accepts (T,) or batched (B, T) arrays.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    squeeze = rewards.ndim == 1
    r = np.atleast_2d(rewards)
    v = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if r.shape != v.shape:
        raise ValueError("rewards and values must have matching shapes")
    B, T = r.shape
    boot = np.broadcast_to(np.asarray(bootstrap_value, dtype=np.float64), (B,))
    adv = np.zeros((B, T))
    next_adv = np.zeros(B)
    next_value = boot
    for t in range(T - 1, -1, -1):
        delta = r[:, t] + gamma * next_value - v[:, t]
        next_adv = delta + gamma * lam * next_adv
        adv[:, t] = next_adv
        next_value = v[:, t]
    returns = adv + v
    if squeeze:
        return adv[0], returns[0]
    return adv, returns


class NaiveLearner(GruAgent):
    """Recurrent PPO agent; one batch slot per independent game copy."""

    def __init__(
        self,
        policy: GruPolicy,
        params: dict[str, np.ndarray],
        config: PpoConfig,
        batch_size: int = 1,
    ):
        super().__init__(policy, params, batch_size)
        self.config = config
        self.adam = AdamState.zeros_like(params)
        self.episodes_seen = 0

    # -- construction -------------------------------------------------------

    @classmethod
    def create(
        cls, policy: GruPolicy, config: PpoConfig, rng: np.random.Generator, batch_size: int = 1
    ) -> "NaiveLearner":
        """Fresh agent: one random initialization shared across the batch."""
        init = policy.init_params(rng)
        params = {k: np.repeat(v[None], batch_size, axis=0) for k, v in init.items()}
        return cls(policy, params, config, batch_size)

    @classmethod
    def create_batch(
        cls, policy: GruPolicy, config: PpoConfig, seeds: list
    ) -> "NaiveLearner":
        """Fresh agent with an independent initialization per batch slot."""
        inits = [policy.init_params(np.random.default_rng(s)) for s in seeds]
        return cls(policy, stack_params(inits), config, len(seeds))

    def act(self, obs_code: int, rng: np.random.Generator) -> tuple[int, float, float]:
        """Single-game convenience wrapper around :meth:`act_batch`."""
        if self.batch_size != 1:
            raise ValueError("act() requires batch_size 1; use act_batch")
        a, lp, v = self.act_batch(np.array([obs_code]), rng.random(1))
        return int(a[0]), float(lp[0]), float(v[0])

    # -- learning -----------------------------------------------------------

    def end_episode(self, trajectory, seats, seat_index, rng) -> None:
        self.ppo_update(trajectory, rng)

    def ppo_update(self, trajectory: Trajectory, rng: np.random.Generator) -> None:
        """Clipped-surrogate update over one episode.

        Minibatches are contiguous time segments re-unrolled from their
        stored segment-initial hidden states. The advantage bootstrap is
        the critic's valuation of the state the agent will actually face
        next: the episode-start observation with the current hidden state.
        """
        cfg = self.config
        B, T = trajectory.rewards.shape
        if T == 0:
            raise ValueError("cannot update from an empty trajectory")

        start_codes = np.full(B, self.policy.input_dim - 1, dtype=np.int64)
        _, v_boot, _ = gru_forward_np(self.params, start_codes, self.hidden)
        advantages, returns = gae(
            trajectory.rewards, trajectory.values, v_boot, cfg.gamma, cfg.gae_lambda
        )
        if cfg.normalize_advantages:
            mean = advantages.mean(axis=1, keepdims=True)
            std = advantages.std(axis=1, keepdims=True)
            advantages = (advantages - mean) / (std + 1e-8)

        segments = np.array_split(np.arange(T), min(cfg.minibatches, T))
        names = list(self.params)
        eye = np.eye(self.policy.n_actions)
        for _ in range(cfg.epochs):
            for si in rng.permutation(len(segments)):
                seg = segments[si]
                with Tape() as tape:
                    leaves = {k: Tensor(self.params[k]) for k in names}
                    hidden = Tensor(trajectory.hiddens_pre[:, seg[0]])
                    pg_terms, ent_terms, val_terms = [], [], []
                    for t in seg:
                        logits, value, hidden = gru_step(
                            leaves, trajectory.observations[:, t], hidden
                        )
                        logp = log_softmax(logits)
                        taken = ad.tsum(ad.mul(logp, eye[trajectory.actions[:, t]]), axis=1)
                        ratio = ad.exp(ad.sub(taken, trajectory.log_probs[:, t]))
                        adv_t = advantages[:, t]
                        surrogate = ad.minimum(
                            ad.mul(ratio, adv_t),
                            ad.mul(ad.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), adv_t),
                        )
                        pg_terms.append(surrogate)
                        ent_terms.append(ad.neg(ad.tsum(ad.mul(ad.exp(logp), logp), axis=1)))
                        err = ad.sub(value, returns[:, t])
                        if cfg.clip_value:
                            v_old = trajectory.values[:, t]
                            v_clipped = ad.add(
                                v_old, ad.clip(ad.sub(value, v_old), -cfg.clip_eps, cfg.clip_eps)
                            )
                            err_clipped = ad.sub(v_clipped, returns[:, t])
                            val_terms.append(
                                ad.maximum(ad.mul(err, err), ad.mul(err_clipped, err_clipped))
                            )
                        else:
                            val_terms.append(ad.mul(err, err))
                    inv = 1.0 / len(seg)
                    pg = ad.mul(_accumulate(pg_terms), inv)
                    ent = ad.mul(_accumulate(ent_terms), inv)
                    val = ad.mul(_accumulate(val_terms), inv)
                    per_slot = ad.add(
                        ad.sub(ad.mul(cfg.value_coef * 0.5, val), pg),
                        ad.mul(-cfg.entropy_coef, ent),
                    )
                    loss = ad.tsum(per_slot)
                grad_tensors = tape.gradient(loss, [leaves[k] for k in names])
                grads = {k: g.value for k, g in zip(names, grad_tensors)}
                clip_global_norm_dict(grads, cfg.max_grad_norm, batched=True)
                adam_update(
                    self.params,
                    grads,
                    self.adam,
                    cfg.lr,
                    cfg.adam_beta1,
                    cfg.adam_beta2,
                    cfg.adam_eps,
                )
        self.episodes_seen += 1


def _accumulate(terms: list[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = ad.add(acc, t)
    return acc


def reset_for_trial(
    rng: np.random.Generator, policy: GruPolicy, config: PpoConfig, batch_size: int = 1
) -> NaiveLearner:
    """Fresh parameters, zero hidden state, zero optimizer moments."""
    return NaiveLearner.create(policy, config, rng, batch_size)
