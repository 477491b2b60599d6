"""Simulated missingness for corrupting test data.

Every simulator takes a series ``[n x f]`` (NaN marks natural missingness)
and returns ``(corrupted, holdout)``: the series with held-out entries set
to NaN and a boolean mask of the entries removed. Ground truth for scoring is
the original series at ``holdout``.

MCAR draws entries independently per channel. Block patterns remove whole
timesteps across every channel, modeling a sensor outage.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

log = logging.getLogger(__name__)

PATTERNS = ("mcar", "fixed_block", "variable_block")
FIXED_BLOCK_RATIO = 0.10
VARIABLE_BLOCK_RANGE = (0.05, 0.15)


@dataclass(frozen=True)
class MissingnessSpec:
    pattern: str
    rate: float
    block_ratio: float | tuple[float, float] | None = None
    seed: int = 0

    def __post_init__(self):
        pattern = normalize_pattern(self.pattern)
        object.__setattr__(self, "pattern", pattern)
        if not 0.0 < self.rate < 1.0:
            raise ContractError(f"rate must be in (0, 1), got {self.rate}")
        if self.block_ratio is None:
            default = FIXED_BLOCK_RATIO if pattern == "fixed_block" else VARIABLE_BLOCK_RANGE
            object.__setattr__(self, "block_ratio", default if pattern != "mcar" else None)
        if isinstance(self.block_ratio, tuple):
            lo, hi = self.block_ratio
            if not 0.0 < lo <= hi < 1.0:
                raise ContractError(f"block ratio interval must be ordered inside (0, 1): {self.block_ratio}")

    def apply(self, series, seed=None):
        seed = self.seed if seed is None else seed
        if self.pattern == "mcar":
            return apply_mcar(series, self.rate, seed)
        if self.pattern == "fixed_block":
            return apply_fixed_blocks(series, self.rate, seed, ratio=self.block_ratio)
        return apply_variable_blocks(series, self.rate, seed, ratio_range=self.block_ratio)


def normalize_pattern(name: str) -> str:
    key = name.replace("-", "_").lower()
    if key not in PATTERNS:
        raise ContractError(f"unknown missingness pattern {name!r}")
    return key


def _as_series(series) -> np.ndarray:
    x = np.array(series, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ContractError(f"series must be [n x f], got shape {x.shape}")
    return x


def apply_mcar(series, rate: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Hold out each observed entry independently with probability ``rate``.

    At least one observed entry always survives; a warning is logged when the
    draw had to be capped.
    """
    x = _as_series(series)
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"rate must be in [0, 1), got {rate}")
    rng = np.random.default_rng(seed)
    observed = ~np.isnan(x)
    holdout = (rng.random(x.shape) < rate) & observed
    if observed.any() and not (observed & ~holdout).any():
        flat = np.flatnonzero(holdout)
        holdout.reshape(-1)[flat[rng.integers(flat.size)]] = False
        log.warning("MCAR draw removed every observed value; kept one")
    out = x.copy()
    out[holdout] = np.nan
    return out, holdout


def _free_runs(taken: np.ndarray) -> list[tuple[int, int]]:
    """(start, length) of each maximal run of False in ``taken``."""
    runs, start = [], None
    for i, t in enumerate(taken):
        if not t and start is None:
            start = i
        elif t and start is not None:
            runs.append((start, i - start))
            start = None
    if start is not None:
        runs.append((start, len(taken) - start))
    return runs


def _place_blocks(n: int, rate: float, draw_length, rng: np.random.Generator) -> tuple[np.ndarray, list[int]]:
    """Mark non-overlapping, non-wrapping blocks until ``rate * n`` steps are covered.

    Starts are uniform over the positions where the block fits. The block that
    reaches the target is truncated to hit it exactly. When no free run is long
    enough, the block is truncated to the longest free run instead.
    """
    target = int(round(rate * n))
    taken = np.zeros(n, dtype=bool)
    lengths: list[int] = []
    covered = 0
    while covered < target:
        length = min(draw_length(), target - covered)
        runs = _free_runs(taken)
        if not runs:
            break
        longest = max(r[1] for r in runs)
        length = min(length, longest)
        starts = [s + off for s, l in runs for off in range(l - length + 1)]
        s = starts[rng.integers(len(starts))]
        taken[s : s + length] = True
        lengths.append(length)
        covered += length
    if covered < target:
        log.warning("block placement saturated at %d of %d steps", covered, target)
    return taken, lengths


def _block_holdout(x: np.ndarray, steps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    observed = ~np.isnan(x)
    holdout = steps[:, None] & observed
    if observed.any() and not (observed & ~holdout).any():
        log.warning("block pattern removed every observed value; kept the last one")
        holdout.reshape(-1)[np.flatnonzero(holdout)[-1]] = False
    out = x.copy()
    out[holdout] = np.nan
    return out, holdout


def fixed_block_steps(n: int, rate: float, seed, ratio: float = FIXED_BLOCK_RATIO) -> tuple[np.ndarray, list[int]]:
    """Timestep mask and block lengths for the fixed-size pattern."""
    if n < 10:
        raise ContractError(f"block patterns need length >= 10, got {n}")
    rng = np.random.default_rng(seed)
    size = max(1, int(round(ratio * n)))
    return _place_blocks(n, rate, lambda: size, rng)


def variable_block_steps(n: int, rate: float, seed, ratio_range=VARIABLE_BLOCK_RANGE) -> tuple[np.ndarray, list[int]]:
    """Timestep mask and block lengths; each length uniform on the scaled interval."""
    if n < 10:
        raise ContractError(f"block patterns need length >= 10, got {n}")
    rng = np.random.default_rng(seed)
    lo = max(1, int(round(ratio_range[0] * n)))
    hi = max(lo, int(round(ratio_range[1] * n)))
    return _place_blocks(n, rate, lambda: int(rng.integers(lo, hi + 1)), rng)


def apply_fixed_blocks(series, rate: float, seed, ratio: float = FIXED_BLOCK_RATIO):
    x = _as_series(series)
    steps, _ = fixed_block_steps(x.shape[0], rate, seed, ratio)
    return _block_holdout(x, steps)


def apply_variable_blocks(series, rate: float, seed, ratio_range=VARIABLE_BLOCK_RANGE):
    x = _as_series(series)
    steps, _ = variable_block_steps(x.shape[0], rate, seed, ratio_range)
    return _block_holdout(x, steps)


def apply_pattern(series, pattern: str, rate: float, seed):
    return MissingnessSpec(pattern, rate, seed=seed).apply(series)
