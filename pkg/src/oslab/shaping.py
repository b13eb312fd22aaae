"""Shaping meta-agents and the trial loop.

A *trial* pits a group of fixed-policy shaping agents against freshly
initialized learning co-players for E episodes; the co-players update
after every episode while the shapers only accumulate hidden state. The
shapers' parameters are trained *across* trials by evolution strategies on
the concatenated group genome: sample a population of groups, play each
group against copies of the same co-players, and move the search mean
toward the most successful groups. Groups never mix.

Everything here is batched: one batch slot is one independent trial, so a
whole ES population (times opponent samples) evaluates as a single
vectorized pass. All randomness derives functionally from (root seed,
purpose tag, indices), which makes runs reproducible, resumable, and
independent of scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import es as es_mod
from . import metrics
from .agents import GruAgent
from .es import EsConfig, EsState
from .games import GameSpec, play_episode, welfare_bounds
from .lola import LolaConfig, LolaLearner
from .nets import GruPolicy, unflatten_params_batch
from .ppo import NaiveLearner, PpoConfig


class ShapingError(ValueError):
    pass


# Seed-space tags: every random stream in training or evaluation is built
# from SeedSequence([root, TAG, *indices]). Training and evaluation tags are
# disjoint by construction, so trained genomes always face unseen co-players.
TAG_ES_INIT = 0
TAG_ES_ASK = 1
TAG_TRAIN_OPPONENT = 2
TAG_TRAIN_STREAMS = 3
TAG_EVAL_OPPONENT = 4
TAG_EVAL_STREAMS = 5
TRAIN_TAGS = frozenset({TAG_ES_INIT, TAG_ES_ASK, TAG_TRAIN_OPPONENT, TAG_TRAIN_STREAMS})
EVAL_TAGS = frozenset({TAG_EVAL_OPPONENT, TAG_EVAL_STREAMS})


def seed_tuple(root: int, tag: int, *indices: int) -> tuple[int, ...]:
    return (int(root), int(tag)) + tuple(int(i) for i in indices)


def rng_from(seed: tuple[int, ...]) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(seed)))


@dataclass
class ShaperSpec:
    """Seating plan and horizon for one experimental cell.

    `num_shapers` 0 is the all-naive baseline protocol; the genome then has
    zero length and trials just run the co-players against each other.
    """

    game: GameSpec
    num_shapers: int
    num_coplayers: int
    coplayer_kind: str = "naive"  # "naive" | "lola"
    episode_length: int = 100
    episodes_per_trial: int = 1000
    group_fitness: str = "sum"  # "sum" | "mean" | "min"

    def __post_init__(self) -> None:
        if self.num_shapers < 0 or self.num_coplayers < 0:
            raise ShapingError("seat counts must be non-negative")
        if self.num_shapers + self.num_coplayers != self.game.n_players:
            raise ShapingError(
                f"{self.num_shapers} shapers + {self.num_coplayers} co-players "
                f"!= {self.game.n_players} players"
            )
        if self.coplayer_kind not in ("naive", "lola"):
            raise ShapingError(f"unknown co-player kind {self.coplayer_kind!r}")
        if self.group_fitness not in ("sum", "mean", "min"):
            raise ShapingError(f"unknown group fitness {self.group_fitness!r}")
        if self.episode_length < 1 or self.episodes_per_trial < 1:
            raise ShapingError("episode_length and episodes_per_trial must be >= 1")

    @property
    def policy(self) -> GruPolicy:
        return GruPolicy(input_dim=self.game.num_codes)

    @property
    def genome_dim(self) -> int:
        return self.num_shapers * self.policy.param_count

    @property
    def shaper_seats(self) -> list[int]:
        return list(range(self.num_shapers))


@dataclass
class TrialRecord:
    """Everything the metrics need from one trial."""

    returns: np.ndarray  # (episodes, n_players) per-episode summed rewards
    episode_length: int
    shaper_seats: list[int]
    seed: str = ""

    @property
    def episodes(self) -> int:
        return self.returns.shape[0]

    @property
    def welfare_per_episode(self) -> np.ndarray:
        return self.returns.sum(axis=1)

    @property
    def trial_rewards(self) -> np.ndarray:
        """Undiscounted per-agent trial reward: the sum over all episodes."""
        return self.returns.sum(axis=0)

    def converged_window(self, fraction: float = 0.1) -> tuple[int, int]:
        w = metrics.default_window(self.episodes, fraction)
        return self.episodes - w, self.episodes

    def converged_welfare(self, spec: GameSpec, fraction: float = 0.1) -> float:
        w = metrics.default_window(self.episodes, fraction)
        return metrics.normalized_global_welfare(self.returns, self.episode_length, spec, w)


def _split_genome_batch(genomes: np.ndarray, spec: ShaperSpec) -> list[dict[str, np.ndarray]]:
    """(B, N*P) genome matrix -> per-shaper-seat batched parameter dicts."""
    genomes = np.atleast_2d(genomes)
    if genomes.shape[1] != spec.genome_dim:
        raise ShapingError(
            f"genome length {genomes.shape[1]} != expected {spec.genome_dim}"
        )
    P = spec.policy.param_count
    layout = spec.policy.layout()
    return [
        unflatten_params_batch(genomes[:, s * P : (s + 1) * P], layout)
        for s in range(spec.num_shapers)
    ]


def _build_seats(
    spec: ShaperSpec,
    shaper_stacks: list[dict[str, np.ndarray]],
    co_init_seeds: Sequence,
    batch_size: int,
    ppo_config: PpoConfig,
    lola_config: LolaConfig | None,
    shaper_kind: str = "genome",
) -> list:
    """Instantiate one agent object per seat, shapers first."""
    policy = spec.policy
    seats: list = []
    for s in range(spec.num_shapers):
        if shaper_kind == "genome":
            seats.append(GruAgent(policy, shaper_stacks[s], batch_size))
        elif shaper_kind == "lola":
            if batch_size != 1:
                raise ShapingError("lookahead seats require batch_size 1")
            if lola_config is None:
                raise ShapingError("lookahead seats require a LolaConfig")
            rng = rng_from_seedlike(co_init_seeds[0], child=("shaper", s))
            agent = LolaLearner.create(policy, lola_config, rng, spec.episode_length)
            agent.bind_game(spec.game)
            seats.append(agent)
        else:
            raise ShapingError(f"unknown shaper kind {shaper_kind!r}")
    for c in range(spec.num_coplayers):
        if spec.coplayer_kind == "naive":
            seeds = [seedseq_from(seed_like, child=("co", c)) for seed_like in co_init_seeds]
            seats.append(NaiveLearner.create_batch(policy, ppo_config, seeds))
        else:
            if batch_size != 1:
                raise ShapingError("lookahead co-players require batch_size 1")
            if lola_config is None:
                raise ShapingError("lookahead co-players require a LolaConfig")
            rng = rng_from_seedlike(co_init_seeds[0], child=("co", c))
            agent = LolaLearner.create(policy, lola_config, rng, spec.episode_length)
            agent.bind_game(spec.game)
            seats.append(agent)
    return seats


def seedseq_from(seed_like, child: tuple) -> np.random.SeedSequence:
    """Derive a named child seed sequence from a seed tuple or integer."""
    base = list(seed_like) if isinstance(seed_like, tuple) else [int(seed_like)]
    salt = [hash_label(child[0]), int(child[1])]
    return np.random.SeedSequence(base + salt)


def rng_from_seedlike(seed_like, child: tuple) -> np.random.Generator:
    return np.random.default_rng(seedseq_from(seed_like, child))


def hash_label(label: str) -> int:
    """Stable small integer for a stream label (never python's salted hash)."""
    return int.from_bytes(label.encode("utf-8"), "little") % (2**31)


def run_trial_batch(
    spec: ShaperSpec,
    shaper_stacks: list[dict[str, np.ndarray]],
    co_init_seeds: Sequence,
    rollout_rng: np.random.Generator,
    update_rng_seed,
    batch_size: int,
    ppo_config: PpoConfig,
    lola_config: LolaConfig | None = None,
    shaper_kind: str = "genome",
    probe: Callable | None = None,
) -> np.ndarray:
    """Run one batch of independent trials; returns (B, E, n) episode returns.

    Co-players are freshly initialized from `co_init_seeds` (one entry per
    batch slot), every agent starts with a zero hidden state, and hidden
    states persist across all E episode boundaries. Genome-seat parameters
    are never written.
    """
    if len(co_init_seeds) != batch_size:
        raise ShapingError("need one co-player init seed per batch slot")
    seats = _build_seats(
        spec, shaper_stacks, co_init_seeds, batch_size, ppo_config, lola_config, shaper_kind
    )
    n = spec.game.n_players
    E = spec.episodes_per_trial
    learn_seats = [
        i
        for i, seat in enumerate(seats)
        if isinstance(seat, (NaiveLearner, LolaLearner))
    ]
    update_rngs = {
        i: rng_from_seedlike(update_rng_seed, child=("update", i)) for i in learn_seats
    }

    returns = np.zeros((batch_size, E, n))
    for e in range(E):
        trajectories = play_episode(seats, spec.game, spec.episode_length, rollout_rng, batch_size)
        for i in range(n):
            returns[:, e, i] = trajectories[i].rewards.sum(axis=1)
        for i in learn_seats:
            seats[i].end_episode(trajectories[i], seats, i, update_rngs[i])
        if probe is not None:
            probe(e, seats, trajectories)
    return returns


def run_trial(
    genome: np.ndarray,
    spec: ShaperSpec,
    rng: np.random.Generator,
    ppo_config: PpoConfig | None = None,
    lola_config: LolaConfig | None = None,
    probe: Callable | None = None,
    seed_label: str = "",
) -> TrialRecord:
    """One trial of the genome's group against fresh co-players."""
    ppo_config = ppo_config or PpoConfig()
    stacks = _split_genome_batch(genome[None, :], spec) if spec.num_shapers else []
    co_seed = int(rng.integers(2**62))
    update_seed = int(rng.integers(2**62))
    rollout_rng = np.random.default_rng(rng.integers(2**62))
    returns = run_trial_batch(
        spec,
        stacks,
        [co_seed],
        rollout_rng,
        update_seed,
        1,
        ppo_config,
        lola_config,
        probe=probe,
    )
    return TrialRecord(
        returns=returns[0],
        episode_length=spec.episode_length,
        shaper_seats=spec.shaper_seats,
        seed=seed_label,
    )


# ---------------------------------------------------------------------------
# Genome evaluation and ES training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    """Knobs of the ES training loop that are not EsConfig's business."""

    opponent_samples: int = 10
    env_repeats: int = 2
    plateau_window: int = 30
    plateau_rel_tol: float = 0.01
    min_generations: int = 10

    def __post_init__(self) -> None:
        if self.opponent_samples < 1 or self.env_repeats < 1:
            raise ShapingError("opponent_samples and env_repeats must be >= 1")


def _evaluate_stacked(
    genomes: np.ndarray,
    spec: ShaperSpec,
    opponent_seeds: Sequence,
    rollout_seed,
    update_seed,
    repeats: int,
    ppo_config: PpoConfig,
    lola_config: LolaConfig | None,
) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate (G, dim) genomes over samples x repeats; returns fitness and welfare.

    Batch layout: slot index b = (g * S + s) * R + r. Every genome faces
    the identical opponent seed set `opponent_seeds` (length S).
    """
    G = genomes.shape[0]
    S, R = len(opponent_seeds), repeats
    B = G * S * R
    co_seeds = [opponent_seeds[(b // R) % S] for b in range(B)]
    expanded = np.repeat(genomes, S * R, axis=0)
    stacks = _split_genome_batch(expanded, spec) if spec.num_shapers else []
    rollout_rng = rng_from_seedlike(rollout_seed, child=("rollout", 0))
    returns = run_trial_batch(
        spec, stacks, co_seeds, rollout_rng, update_seed, B, ppo_config, lola_config
    )
    trial_rewards = returns.sum(axis=1)  # (B, n)
    shaper_part = trial_rewards[:, spec.shaper_seats]
    if spec.group_fitness == "sum":
        group = shaper_part.sum(axis=1)
    elif spec.group_fitness == "mean":
        group = shaper_part.mean(axis=1)
    else:
        group = shaper_part.min(axis=1)
    fitness = group.reshape(G, S * R).mean(axis=1)

    window = metrics.default_window(spec.episodes_per_trial)
    lo, hi = welfare_bounds(spec.game)
    tail = returns[:, -window:, :].mean(axis=1).sum(axis=1) / spec.episode_length
    welfare = ((tail - lo) / (hi - lo)).reshape(G, S * R).mean(axis=1)
    return fitness, welfare


def evaluate_genome(
    genome: np.ndarray,
    spec: ShaperSpec,
    num_opponent_samples: int,
    num_env_repeats: int,
    rng: np.random.Generator,
    ppo_config: PpoConfig | None = None,
    lola_config: LolaConfig | None = None,
) -> float:
    """Mean group trial reward over fresh opponent draws and rollout repeats."""
    if num_opponent_samples < 1 or num_env_repeats < 1:
        raise ShapingError("repeat counts must be positive")
    ppo_config = ppo_config or PpoConfig()
    opponent_seeds = [int(rng.integers(2**62)) for _ in range(num_opponent_samples)]
    rollout_seed = int(rng.integers(2**62))
    update_seed = int(rng.integers(2**62))
    fitness, _ = _evaluate_stacked(
        np.atleast_2d(genome),
        spec,
        opponent_seeds,
        rollout_seed,
        update_seed,
        num_env_repeats,
        ppo_config,
        lola_config,
    )
    return float(fitness[0])


def train_shapers(
    spec: ShaperSpec,
    es_config: EsConfig,
    generations: int,
    root_seed: int,
    train_config: TrainConfig | None = None,
    ppo_config: PpoConfig | None = None,
    lola_config: LolaConfig | None = None,
    on_generation: Callable | None = None,
    resume_state: EsState | None = None,
    history: list[dict] | None = None,
) -> tuple[np.ndarray, list[dict], EsState]:
    """Algorithm: iterate ask -> play trials -> tell until cap or plateau.

    Returns (trained genome = final search mean, per-generation history,
    final ES state). All seeds are pure functions of (root_seed, generation),
    so resuming from a checkpointed state continues the identical run.
    """
    if spec.num_shapers < 1:
        raise ShapingError("training requires at least one shaper seat")
    train_config = train_config or TrainConfig()
    ppo_config = ppo_config or PpoConfig()
    state = resume_state or EsState.create(
        spec.genome_dim, es_config, rng_from(seed_tuple(root_seed, TAG_ES_INIT))
    )
    history = list(history) if history else []

    for gen in range(state.generation, generations):
        candidates = es_mod.ask(state, es_config, rng_from(seed_tuple(root_seed, TAG_ES_ASK, gen)))
        opponent_seeds = [
            seed_tuple(root_seed, TAG_TRAIN_OPPONENT, gen, s)
            for s in range(train_config.opponent_samples)
        ]
        fitness, welfare = _evaluate_stacked(
            candidates,
            spec,
            opponent_seeds,
            seed_tuple(root_seed, TAG_TRAIN_STREAMS, gen, 0),
            seed_tuple(root_seed, TAG_TRAIN_STREAMS, gen, 1),
            train_config.env_repeats,
            ppo_config,
            lola_config,
        )
        es_mod.tell(state, fitness, es_config)
        best = int(np.argmax(fitness))
        row = {
            "generation": gen,
            "best_fitness": float(fitness[best]),
            "mean_fitness": float(fitness.mean()),
            "std_fitness": float(fitness.std()),
            "best_welfare": float(welfare[best]),
            "mean_welfare": float(welfare.mean()),
            "sigma": state.sigma,
            "lrate": state.lrate,
        }
        history.append(row)
        if on_generation is not None:
            on_generation(state, row)
        if len(history) >= max(train_config.min_generations, train_config.plateau_window):
            tail = np.array(
                [h["mean_fitness"] for h in history[-train_config.plateau_window :]]
            )
            if (
                metrics.detect_convergence(
                    tail, train_config.plateau_rel_tol, train_config.plateau_window
                )
                is not None
            ):
                break
    return state.mean.copy(), history, state


def evaluate_trained(
    genome: np.ndarray,
    spec: ShaperSpec,
    num_eval_trials: int,
    root_seed: int,
    ppo_config: PpoConfig | None = None,
    lola_config: LolaConfig | None = None,
    shaper_kind: str = "genome",
) -> list[TrialRecord]:
    """Trials of a trained genome against held-out co-players.

    Evaluation seed tuples use tags disjoint from every training tag, which
    is asserted here: trained shapers never meet a training opponent draw.
    """
    assert TRAIN_TAGS.isdisjoint(EVAL_TAGS)
    ppo_config = ppo_config or PpoConfig()
    co_seeds = [seed_tuple(root_seed, TAG_EVAL_OPPONENT, t) for t in range(num_eval_trials)]
    records = []
    if shaper_kind == "genome" and spec.coplayer_kind == "naive":
        stacks = (
            _split_genome_batch(np.repeat(genome[None, :], num_eval_trials, axis=0), spec)
            if spec.num_shapers
            else []
        )
        rollout_rng = rng_from(seed_tuple(root_seed, TAG_EVAL_STREAMS, 0))
        returns = run_trial_batch(
            spec,
            stacks,
            co_seeds,
            rollout_rng,
            seed_tuple(root_seed, TAG_EVAL_STREAMS, 1),
            num_eval_trials,
            ppo_config,
            lola_config,
        )
        for t in range(num_eval_trials):
            records.append(
                TrialRecord(
                    returns=returns[t],
                    episode_length=spec.episode_length,
                    shaper_seats=spec.shaper_seats,
                    seed=f"eval-{t}",
                )
            )
        return records

    # Lookahead seats update second-order state per slot, so those trials run
    # one at a time with per-trial streams.
    for t in range(num_eval_trials):
        stacks = _split_genome_batch(genome[None, :], spec) if spec.num_shapers and shaper_kind == "genome" else []
        rollout_rng = rng_from(seed_tuple(root_seed, TAG_EVAL_STREAMS, 0, t))
        returns = run_trial_batch(
            spec,
            stacks,
            [co_seeds[t]],
            rollout_rng,
            seed_tuple(root_seed, TAG_EVAL_STREAMS, 1, t),
            1,
            ppo_config,
            lola_config,
            shaper_kind=shaper_kind,
        )
        records.append(
            TrialRecord(
                returns=returns[0],
                episode_length=spec.episode_length,
                shaper_seats=spec.shaper_seats,
                seed=f"eval-{t}",
            )
        )
    return records
