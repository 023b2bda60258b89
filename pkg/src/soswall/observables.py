"""Scalar observables of a height configuration.

Everything the experiments track: level occupation events, diagonal-line
deviation budgets, and the up/down fluctuation census around the typical
height.  All functions are pure; builders at the bottom return named
callables for the sampling loop of the dynamics module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import HeightField, ModelParams, equilibrium_height

VARIANT_ABOVE = "above"
VARIANT_BELOW = "below"
VARIANT_ABS = "abs"


def occupies_level_fraction(eta: HeightField, a: float, params: ModelParams,
                            fraction: float = 0.9) -> bool:
    """True when strictly more than ``fraction`` of the sites sit at height
    at least ceil(a * H).  The ceiling makes the event conservative when
    a * H is fractional; the comparison is strict at the threshold."""
    if not 0 < a < 1:
        raise ValueError("a must lie in (0, 1)")
    H = equilibrium_height(params)
    level = math.ceil(a * H)
    count = int((eta.heights >= level).sum())
    return count > fraction * eta.heights.size


def diagonal_lines(L: int) -> list[list[tuple[int, int]]]:
    """The 2L-1 diagonals of an L x L box, each read south-west to
    north-east; they partition the box and line i (1-based) has min(i, 2L-i)
    sites."""
    out = []
    for i in range(1, 2 * L):
        d = L - i  # x2 - x1 on line i
        line = [(x1, x1 + d) for x1 in range(L) if 0 <= x1 + d < L]
        out.append(line)
    return out


def within_diagonal_budget(eta: HeightField, ell: float, variant: str,
                           params: ModelParams) -> bool:
    """True when every diagonal's deviation from the typical height stays
    within L * ell: positive parts only ("above"), negative parts only
    ("below"), or absolute deviations ("abs")."""
    L, m = eta.dims
    if L != m or L != params.L:
        raise ValueError("diagonal budgets are defined on the square box")
    H = equilibrium_height(params)
    dev = eta.heights.astype(np.int64) - H
    if variant == VARIANT_ABOVE:
        per_site = np.maximum(dev, 0)
    elif variant == VARIANT_BELOW:
        per_site = np.maximum(-dev, 0)
    elif variant == VARIANT_ABS:
        per_site = np.abs(dev)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    budget = L * ell
    # diagonal x2 - x1 = d <-> offset d in numpy's diagonal numbering
    for d in range(-(L - 1), L):
        if per_site.diagonal(offset=d).sum() > budget:
            return False
    return True


@dataclass(frozen=True)
class LevelStats:
    """Census of deviations from the typical height H.

    ``down[k]`` counts sites with positive part of (H - height) equal to k,
    ``up[k]`` the same for (height - H); index 0 collects sites at or beyond
    H in the other direction, so each split sums to the site count.
    """

    H: int
    down: tuple
    up: tuple
    mean_height: float
    n_sites: int

    def count_at_most(self, k: int) -> int:
        """Sites at height <= H - k (k >= 1)."""
        return sum(self.down[k:])

    def count_at_least(self, k: int) -> int:
        """Sites at height >= H + k (k >= 1)."""
        return sum(self.up[k:])

    def fraction_at_or_above(self, level: int) -> float:
        if level <= self.H:
            return 1.0 - self.count_at_most(self.H - level + 1) / self.n_sites
        return self.count_at_least(level - self.H) / self.n_sites


def level_statistics(eta: HeightField, params: ModelParams) -> LevelStats:
    """Up/down fluctuation counts around the typical height."""
    H = equilibrium_height(params)
    dev = eta.heights.astype(np.int64).ravel() - H
    down_part = np.maximum(-dev, 0)
    up_part = np.maximum(dev, 0)
    kmax = int(max(down_part.max(initial=0), up_part.max(initial=0)))
    down = np.bincount(down_part, minlength=kmax + 1)
    up = np.bincount(up_part, minlength=kmax + 1)
    return LevelStats(H=H, down=tuple(int(v) for v in down),
                      up=tuple(int(v) for v in up),
                      mean_height=float(eta.heights.mean()),
                      n_sites=eta.heights.size)


# ---------------------------------------------------------------------------
# Named observables for the sampling loop
# ---------------------------------------------------------------------------

def mean_height():
    return "mean_height", lambda eta: eta.heights.mean()

def max_height():
    return "max_height", lambda eta: eta.heights.max()

def min_height():
    return "min_height", lambda eta: eta.heights.min()

def fraction_at_or_above(level: int):
    name = f"frac_ge_{level}"
    return name, lambda eta: (eta.heights >= level).mean()

def level_occupation_indicator(a: float, params: ModelParams,
                               fraction: float = 0.9):
    name = f"occupies_{a:g}"
    return name, lambda eta: float(occupies_level_fraction(eta, a, params, fraction))


def standard_observables(params: ModelParams) -> dict:
    obs = dict([mean_height(), max_height(), min_height()])
    H = equilibrium_height(params)
    for level in range(1, H + 2):
        name, fn = fraction_at_or_above(level)
        obs[name] = fn
    return obs
