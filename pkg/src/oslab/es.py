"""Natural-evolution-strategies optimizer over flat parameter genomes.

Mirrored Gaussian sampling around a mean vector, centered-rank fitness
shaping, an Adam ascent step on the estimated gradient, and exponential
decay schedules for both the sampling sigma and the learning rate. This is
the standard OpenES recipe; the shaping meta-agents are trained with it
because a trial-length fitness signal has no useful per-step gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class EsError(ValueError):
    """Invalid optimizer configuration or fitness input."""


@dataclass
class EsConfig:
    population: int = 100
    sigma_init: float = 0.04
    sigma_decay: float = 0.999
    sigma_limit: float = 0.01
    lrate_init: float = 0.01
    lrate_decay: float = 0.9999
    lrate_limit: float = 0.001
    init_min: float = 0.0
    init_max: float = 0.0
    clip_min: float = -1e10
    clip_max: float = 1e10
    beta1: float = 0.99
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.population < 2 or self.population % 2 != 0:
            raise EsError("population must be even and >= 2 (mirrored sampling)")
        for name in ("sigma_decay", "lrate_decay"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise EsError(f"{name} must lie in (0, 1]")
        if self.sigma_limit > self.sigma_init or self.lrate_limit > self.lrate_init:
            raise EsError("schedule limits must not exceed initial values")


@dataclass
class EsState:
    """Search distribution mean plus optimizer and schedule state."""

    mean: np.ndarray
    sigma: float
    lrate: float
    adam_m: np.ndarray
    adam_v: np.ndarray
    generation: int = 0
    pending_noise: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def create(cls, dim: int, config: EsConfig, rng: np.random.Generator) -> "EsState":
        mean = rng.uniform(config.init_min, config.init_max, size=dim)
        return cls(
            mean=mean,
            sigma=config.sigma_init,
            lrate=config.lrate_init,
            adam_m=np.zeros(dim),
            adam_v=np.zeros(dim),
        )

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "sigma": self.sigma,
            "lrate": self.lrate,
            "adam_m": self.adam_m.tolist(),
            "adam_v": self.adam_v.tolist(),
            "generation": self.generation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EsState":
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            sigma=float(d["sigma"]),
            lrate=float(d["lrate"]),
            adam_m=np.asarray(d["adam_m"], dtype=np.float64),
            adam_v=np.asarray(d["adam_v"], dtype=np.float64),
            generation=int(d["generation"]),
        )


def ask(state: EsState, config: EsConfig, rng: np.random.Generator) -> np.ndarray:
    """Sample a mirrored population of candidates around the current mean.

    Returns a (population, dim) matrix whose first half is mean + sigma*eps
    and second half mean - sigma*eps; the raw noise is stashed on the state
    for the matching :func:`tell`.
    """
    half = config.population // 2
    noise = rng.standard_normal((half, state.mean.shape[0]))
    signed = np.concatenate([noise, -noise], axis=0)
    candidates = np.clip(
        state.mean[None, :] + state.sigma * signed, config.clip_min, config.clip_max
    )
    state.pending_noise = signed
    return candidates


def centered_ranks(fitnesses: np.ndarray) -> np.ndarray:
    """Map fitnesses to average-tie ranks rescaled into [-0.5, 0.5]."""
    fitnesses = np.asarray(fitnesses, dtype=np.float64)
    n = fitnesses.shape[0]
    order = np.argsort(fitnesses, kind="stable")
    ranks = np.empty(n)
    ranks[order] = np.arange(n, dtype=np.float64)
    # Equal fitnesses share the average of their positional ranks so the
    # shaping is exactly permutation-consistent (and all-equal maps to 0).
    _, inverse = np.unique(fitnesses, return_inverse=True)
    sums = np.bincount(inverse, weights=ranks)
    counts = np.bincount(inverse)
    ranks = sums[inverse] / counts[inverse]
    if n == 1:
        return np.zeros(1)
    return ranks / (n - 1) - 0.5


def tell(state: EsState, fitnesses: np.ndarray, config: EsConfig) -> EsState:
    """Consume one generation's fitnesses: gradient step plus schedule decay."""
    fitnesses = np.asarray(fitnesses, dtype=np.float64)
    if state.pending_noise is None:
        raise EsError("tell() called without a pending ask()")
    if fitnesses.shape != (config.population,):
        raise EsError(
            f"expected {config.population} fitnesses, got shape {fitnesses.shape}"
        )
    if not np.isfinite(fitnesses).all():
        bad = np.where(~np.isfinite(fitnesses))[0]
        raise EsError(f"non-finite fitness for candidates {bad.tolist()}; generation rejected")

    shaped = centered_ranks(fitnesses)
    grad = state.pending_noise.T @ shaped / (config.population * state.sigma)

    # Adam ascent on the mean.
    t = state.generation + 1
    state.adam_m = config.beta1 * state.adam_m + (1.0 - config.beta1) * grad
    state.adam_v = config.beta2 * state.adam_v + (1.0 - config.beta2) * grad * grad
    m_hat = state.adam_m / (1.0 - config.beta1**t)
    v_hat = state.adam_v / (1.0 - config.beta2**t)
    state.mean = np.clip(
        state.mean + state.lrate * m_hat / (np.sqrt(v_hat) + config.eps),
        config.clip_min,
        config.clip_max,
    )

    state.sigma = max(state.sigma * config.sigma_decay, config.sigma_limit)
    state.lrate = max(state.lrate * config.lrate_decay, config.lrate_limit)
    state.generation = t
    state.pending_noise = None
    return state
