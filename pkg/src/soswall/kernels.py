"""Hot loops of the heat-bath sampler.

Single-site conditionals depend only on the four neighbouring heights, so for
moderate height windows the inverse-CDF sampler reduces to one table lookup
plus a linear scan.  The table is indexed by the neighbour heights shifted to
0..S-1 and is independent of the boundary condition (ring values are baked
into the padded height array).  Kernels are compiled with numba when it is
importable and run as plain Python otherwise; both paths perform identical
float comparisons, so trajectories agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import (BoundaryCondition, HeightField, ModelParams,
                    _field_vector, padded_heights)

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def deco(fn):
            return fn

        return deco


TABLE_MAX_BYTES = 1 << 27


def neighbor_tables(L: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat padded index of every site and of its four neighbours.

    The padded array is (L+2) x (m+2) row-major; site (x, y) lives at
    (x+1) * (m+2) + (y+1).
    """
    stride = m + 2
    xs, ys = np.divmod(np.arange(L * m), m)
    s2p = (xs + 1) * stride + (ys + 1)
    nbr = np.stack([s2p - stride, s2p + stride, s2p - 1, s2p + 1], axis=1)
    return s2p.astype(np.int64), nbr.astype(np.int64)


@lru_cache(maxsize=16)
def cdf_table(params: ModelParams) -> tuple[np.ndarray, int] | None:
    """Inverse-CDF table over all neighbour-height tuples, or None when the
    window is too wide to tabulate."""
    lo, hi = params.height_window()
    S = hi - lo + 1
    if S ** 5 * 8 > TABLE_MAX_BYTES:
        return None
    vals = np.arange(S)
    single = -params.beta * np.abs(vals[:, None] - vals[None, :]).astype(np.float64)
    pair = (single[:, None, :] + single[None, :, :]).reshape(S * S, S)
    logits = (pair[:, None, :] + pair[None, :, :]).reshape(S ** 4, S)
    if params.field_enabled:
        logits += _field_vector(params, lo, hi) / params.field_prefactor_L
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    cdf = np.cumsum(probs, axis=1)
    cdf /= cdf[:, -1].copy()[:, None]
    cdf[:, -1] = 1.0  # guarantee the scan terminates for every u < 1
    return cdf, lo


@dataclass
class SamplerPlan:
    """Precomputed arrays binding (params, boundary condition) to kernels."""

    params: ModelParams
    lo: int
    S: int
    s2p: np.ndarray
    nbr: np.ndarray
    cdf: np.ndarray | None  # None -> compute conditionals on the fly
    fvec: np.ndarray  # shifted field values (zeros when field off)

    def padded_state(self, eta: HeightField, xi: BoundaryCondition) -> np.ndarray:
        """Flat shifted padded heights; ring values come from xi."""
        eta.require_admissible(self.params)
        return (padded_heights(eta, xi) - self.lo).ravel().astype(np.int64)

    def read_state(self, hpad: np.ndarray) -> HeightField:
        L, m = self.params.L, self.params.m
        grid = hpad.reshape(L + 2, m + 2)[1:-1, 1:-1] + self.lo
        return HeightField(grid.copy())

    def table_usable(self, hpad: np.ndarray) -> bool:
        return self.cdf is not None and hpad.min() >= 0 and hpad.max() < self.S


def make_plan(params: ModelParams, xi: BoundaryCondition) -> SamplerPlan:
    lo, hi = params.height_window()
    S = hi - lo + 1
    s2p, nbr = neighbor_tables(params.L, params.m)
    tab = cdf_table(params)
    cdf = tab[0] if tab is not None else None
    if params.field_enabled:
        fvec = _field_vector(params, lo, hi) / params.field_prefactor_L
    else:
        fvec = np.zeros(S)
    return SamplerPlan(params=params, lo=lo, S=S, s2p=s2p, nbr=nbr, cdf=cdf,
                       fvec=fvec)


# ---------------------------------------------------------------------------
# Kernels.  All operate on shifted heights (0-based) in padded flat arrays.
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def run_table(hpad, s2p, nbr, cdf, S, sites, us):
    for i in range(sites.shape[0]):
        x = sites[i]
        idx = ((hpad[nbr[x, 0]] * S + hpad[nbr[x, 1]]) * S
               + hpad[nbr[x, 2]]) * S + hpad[nbr[x, 3]]
        row = cdf[idx]
        u = us[i]
        k = 0
        while row[k] < u:
            k += 1
        hpad[s2p[x]] = k


@njit(cache=True, nogil=True)
def run_table_occupation(hpad, s2p, nbr, cdf, S, sites, us, radix, occup, idx0):
    """Run while histogramming the visited state index (mixed-radix over
    site heights).  Returns the final index."""
    idx = idx0
    for i in range(sites.shape[0]):
        x = sites[i]
        t = ((hpad[nbr[x, 0]] * S + hpad[nbr[x, 1]]) * S
             + hpad[nbr[x, 2]]) * S + hpad[nbr[x, 3]]
        row = cdf[t]
        u = us[i]
        k = 0
        while row[k] < u:
            k += 1
        p = s2p[x]
        idx += (k - hpad[p]) * radix[x]
        hpad[p] = k
        occup[idx] += 1
    return idx


@njit(cache=True, nogil=True)
def run_table_coupled(hpads, s2p, nbr, cdf, S, sites, us, check_order,
                      stop_on_coalescence, t0):
    """Advance every chain with the same events.

    Chains are expected in increasing order.  Returns (first step with an
    order violation or -1, first step count at which the extreme chains
    agree everywhere or -1).
    """
    C = hpads.shape[0]
    gap_total = 0
    for x in range(s2p.shape[0]):
        gap_total += hpads[C - 1, s2p[x]] - hpads[0, s2p[x]]
    first_violation = np.int64(-1)
    coalesced = np.int64(-1)
    if gap_total == 0:
        coalesced = t0
        if stop_on_coalescence:
            return first_violation, coalesced
    for i in range(sites.shape[0]):
        x = sites[i]
        u = us[i]
        p = s2p[x]
        old_gap = hpads[C - 1, p] - hpads[0, p]
        for c in range(C):
            idx = ((hpads[c, nbr[x, 0]] * S + hpads[c, nbr[x, 1]]) * S
                   + hpads[c, nbr[x, 2]]) * S + hpads[c, nbr[x, 3]]
            row = cdf[idx]
            k = 0
            while row[k] < u:
                k += 1
            hpads[c, p] = k
        if check_order and first_violation < 0:
            for c in range(C - 1):
                if hpads[c, p] > hpads[c + 1, p]:
                    first_violation = t0 + i
                    break
        gap_total += (hpads[C - 1, p] - hpads[0, p]) - old_gap
        if gap_total == 0 and coalesced < 0:
            coalesced = t0 + i + 1
            if stop_on_coalescence:
                return first_violation, coalesced
    return first_violation, coalesced


@njit(cache=True, nogil=True)
def run_table_censored(hpad, s2p, nbr, cdf, S, sites, us, allowed, a, b):
    """One censoring phase: only sites flagged in ``allowed`` whose current
    height lies in [a, b] resample, from the conditional renormalised to
    [a, b]."""
    for i in range(sites.shape[0]):
        x = sites[i]
        if allowed[x] == 0:
            continue
        p = s2p[x]
        h = hpad[p]
        if h < a or h > b:
            continue
        idx = ((hpad[nbr[x, 0]] * S + hpad[nbr[x, 1]]) * S
               + hpad[nbr[x, 2]]) * S + hpad[nbr[x, 3]]
        row = cdf[idx]
        floor_mass = row[a - 1] if a > 0 else 0.0
        target = floor_mass + us[i] * (row[b] - floor_mass)
        k = a
        while k < b and row[k] < target:
            k += 1
        hpad[p] = k


@njit(cache=True, nogil=True)
def run_free(hpad, s2p, nbr, beta, fvec, S, sites, us, work):
    """Table-free path for wide windows: per-update conditional build."""
    for i in range(sites.shape[0]):
        x = sites[i]
        n0 = hpad[nbr[x, 0]]
        n1 = hpad[nbr[x, 1]]
        n2 = hpad[nbr[x, 2]]
        n3 = hpad[nbr[x, 3]]
        mx = -1.0e300
        for k in range(S):
            v = -beta * (abs(k - n0) + abs(k - n1) + abs(k - n2) + abs(k - n3)) \
                + fvec[k]
            work[k] = v
            if v > mx:
                mx = v
        tot = 0.0
        for k in range(S):
            tot += math.exp(work[k] - mx)
            work[k] = tot
        target = us[i] * tot
        k = 0
        while k < S - 1 and work[k] < target:
            k += 1
        hpad[s2p[x]] = k


@njit(cache=True, nogil=True)
def run_free_coupled(hpads, s2p, nbr, beta, fvec, S, sites, us, work,
                     check_order, stop_on_coalescence, t0):
    C = hpads.shape[0]
    gap_total = 0
    for x in range(s2p.shape[0]):
        gap_total += hpads[C - 1, s2p[x]] - hpads[0, s2p[x]]
    first_violation = np.int64(-1)
    coalesced = np.int64(-1)
    if gap_total == 0:
        coalesced = t0
        if stop_on_coalescence:
            return first_violation, coalesced
    for i in range(sites.shape[0]):
        x = sites[i]
        u = us[i]
        p = s2p[x]
        old_gap = hpads[C - 1, p] - hpads[0, p]
        for c in range(C):
            n0 = hpads[c, nbr[x, 0]]
            n1 = hpads[c, nbr[x, 1]]
            n2 = hpads[c, nbr[x, 2]]
            n3 = hpads[c, nbr[x, 3]]
            mx = -1.0e300
            for k in range(S):
                v = -beta * (abs(k - n0) + abs(k - n1) + abs(k - n2)
                             + abs(k - n3)) + fvec[k]
                work[k] = v
                if v > mx:
                    mx = v
            tot = 0.0
            for k in range(S):
                tot += math.exp(work[k] - mx)
                work[k] = tot
            target = u * tot
            k = 0
            while k < S - 1 and work[k] < target:
                k += 1
            hpads[c, p] = k
        if check_order and first_violation < 0:
            for c in range(C - 1):
                if hpads[c, p] > hpads[c + 1, p]:
                    first_violation = t0 + i
                    break
        gap_total += (hpads[C - 1, p] - hpads[0, p]) - old_gap
        if gap_total == 0 and coalesced < 0:
            coalesced = t0 + i + 1
            if stop_on_coalescence:
                return first_violation, coalesced
    return first_violation, coalesced


def python_reference(fn):
    """Uncompiled version of a kernel (identity when numba is absent)."""
    return getattr(fn, "py_func", fn)
