"""Welfare and exploitation metrics over trial records.

Normalization endpoints come from exhaustive enumeration of joint actions:
global welfare maps the sum of all players' per-step payoffs onto [0, 1]
between the worst and best achievable totals, and per-role returns use the
analogous single-player bounds. Convergence detection is a moving-window
stability test on a per-episode series.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .games import GameSpec, player_payoff_bounds, welfare_bounds


class MetricsError(ValueError):
    pass


@dataclass
class WelfareReport:
    """One evaluation trial's headline numbers."""

    normalized_global_welfare: float
    per_agent_normalized: list[float]
    shaper_norm: float | None
    naive_norm: float | None
    converged_window: tuple[int, int]
    seed: str

    CSV_HEADER = (
        "seed",
        "normalized_global_welfare",
        "shaper_norm",
        "naive_norm",
        "window_start",
        "window_end",
        "per_agent_normalized",
    )

    def csv_row(self) -> list[str]:
        return [
            self.seed,
            repr(self.normalized_global_welfare),
            "" if self.shaper_norm is None else repr(self.shaper_norm),
            "" if self.naive_norm is None else repr(self.naive_norm),
            str(self.converged_window[0]),
            str(self.converged_window[1]),
            ";".join(repr(x) for x in self.per_agent_normalized),
        ]


def mean_step_returns(returns: np.ndarray, episode_length: int, window: int) -> np.ndarray:
    """Per-agent mean per-step return over the final `window` episodes."""
    E = returns.shape[0]
    if not (1 <= window <= E):
        raise MetricsError(f"window {window} outside trial of {E} episodes")
    return returns[E - window :].mean(axis=0) / episode_length


def normalized_global_welfare(
    returns: np.ndarray, episode_length: int, spec: GameSpec, window: int
) -> float:
    """Mean per-step total payoff over the converged window, rescaled to [0, 1].

    `returns` has shape (episodes, n_players) holding per-episode summed
    rewards. Endpoints are the enumerated min/max joint-action welfare.
    """
    lo, hi = welfare_bounds(spec)
    if hi == lo:
        raise MetricsError("degenerate game: welfare bounds coincide, cannot normalize")
    per_step_total = mean_step_returns(returns, episode_length, window).sum()
    return float((per_step_total - lo) / (hi - lo))


def per_agent_normalized_returns(
    returns: np.ndarray, episode_length: int, spec: GameSpec, window: int
) -> np.ndarray:
    lo, hi = player_payoff_bounds(spec)
    if hi == lo:
        raise MetricsError("degenerate game: player payoff bounds coincide")
    per_step = mean_step_returns(returns, episode_length, window)
    return (per_step - lo) / (hi - lo)


def role_returns(
    returns: np.ndarray,
    episode_length: int,
    spec: GameSpec,
    shaper_seats: list[int],
    window: int,
) -> tuple[float | None, float | None]:
    """(shaper mean, co-player mean) of per-player normalized returns.

    Either role may be empty, in which case its aggregate is None; an
    entirely empty seat partition is a contract violation.
    """
    n = returns.shape[1]
    seats = set(shaper_seats)
    if not seats.issubset(range(n)):
        raise MetricsError(f"shaper seats {sorted(seats)} invalid for {n} players")
    normalized = per_agent_normalized_returns(returns, episode_length, spec, window)
    shaper = [normalized[i] for i in range(n) if i in seats]
    naive = [normalized[i] for i in range(n) if i not in seats]
    shaper_mean = float(np.mean(shaper)) if shaper else None
    naive_mean = float(np.mean(naive)) if naive else None
    return shaper_mean, naive_mean


def moving_average(series: np.ndarray, window: int) -> np.ndarray:
    """Trailing moving average; entry i averages series[i-window+1 .. i]."""
    series = np.asarray(series, dtype=np.float64)
    if window < 1 or window > series.shape[0]:
        raise MetricsError("moving-average window outside series")
    csum = np.concatenate([[0.0], np.cumsum(series)])
    out = np.empty_like(series)
    for i in range(series.shape[0]):
        start = max(0, i - window + 1)
        out[i] = (csum[i + 1] - csum[start]) / (i + 1 - start)
    return out


def detect_convergence(series: np.ndarray, rel_tol: float, window: int) -> int | None:
    """First index whose trailing `window` values are mutually stable.

    Stability means the window's spread (max - min) is at most rel_tol
    times the window's mean magnitude (with an absolute floor so an exactly
    constant series converges as soon as the window fills). Returns None if
    no index qualifies.
    """
    series = np.asarray(series, dtype=np.float64)
    if window < 2:
        raise MetricsError("window must be >= 2")
    for i in range(window, series.shape[0] + 1):
        chunk = series[i - window : i]
        spread = chunk.max() - chunk.min()
        scale = max(abs(float(chunk.mean())), 1e-12)
        if spread <= rel_tol * scale:
            return i
    return None


def default_window(episodes: int, fraction: float = 0.1) -> int:
    """Converged-window size: the final `fraction` of the trial, at least 1."""
    return max(1, int(round(episodes * fraction)))
