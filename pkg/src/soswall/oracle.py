"""Exact ground truth for enumerable systems.

For tiny boxes the full state space (window size to the power of the site
count) is enumerated, giving the exact stationary vector, the exact one-step
kernel of the heat-bath chain, total-variation curves, the mixing time at the
1/(2e) threshold and the spectral gap.  Everything downstream (sampler,
censoring, congestion bounds) is validated against these objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (BoundaryCondition, HeightField, ModelParams,
                    _field_vector, hamiltonian, neighbor_values)

TV_THRESHOLD = 1.0 / (2.0 * math.e)
DENSE_EIG_LIMIT = 20000


@dataclass
class ExactChain:
    """Enumerated chain: states, stationary vector and transition matrix.

    States are indexed mixed-radix over sites (row-major, first site most
    significant), matching the occupation histograms of the sampler.
    """

    params: ModelParams
    xi: BoundaryCondition
    states: np.ndarray  # (n_states, n_sites) heights, int64
    pi: np.ndarray
    P: np.ndarray

    @property
    def n_states(self) -> int:
        return self.states.shape[0]

    def state_index(self, eta: HeightField) -> int:
        lo, _ = self.params.height_window()
        S = self._window_size()
        digits = (eta.heights.ravel() - lo).astype(np.int64)
        radix = S ** np.arange(self.params.n_sites - 1, -1, -1)
        return int((digits * radix).sum())

    def state_field(self, idx: int) -> HeightField:
        return HeightField(self.states[idx].reshape(self.params.L, self.params.m))

    def _window_size(self) -> int:
        lo, hi = self.params.height_window()
        return hi - lo + 1

    def row_sums_residual(self) -> float:
        return float(np.abs(self.P.sum(axis=1) - 1.0).max())

    def reversibility_residual(self) -> float:
        F = self.pi[:, None] * self.P
        return float(np.abs(F - F.T).max())

    def stationarity_residual(self) -> float:
        return float(np.abs(self.pi @ self.P - self.pi).max())


def enumerate_chain(params: ModelParams, xi: BoundaryCondition,
                    cap: int = 1 << 20) -> ExactChain:
    """Build the exact chain; raises when the state count exceeds ``cap``."""
    lo, hi = params.height_window()
    S = hi - lo + 1
    n_sites = params.n_sites
    n_states = S ** n_sites
    if n_states > cap:
        raise ValueError(f"state space {n_states} exceeds cap {cap}")

    states = enumerate_states(params)
    logw = log_weights(states, params, xi)
    logw -= logw.max()
    pi = np.exp(logw)
    pi /= pi.sum()

    P = _transition_matrix(states, params, xi)
    chain = ExactChain(params=params, xi=xi, states=states, pi=pi, P=P)
    if chain.row_sums_residual() > 1e-12:
        raise AssertionError("transition rows do not sum to one")
    if chain.reversibility_residual() > 1e-12:
        raise AssertionError("detailed balance residual too large")
    return chain


def enumerate_states(params: ModelParams) -> np.ndarray:
    """All height configurations as an (n_states, n_sites) array."""
    lo, hi = params.height_window()
    S = hi - lo + 1
    n_sites = params.n_sites
    idx = np.arange(S ** n_sites)
    out = np.empty((len(idx), n_sites), dtype=np.int64)
    for pos in range(n_sites - 1, -1, -1):
        out[:, pos] = idx % S + lo
        idx //= S
    return out


def log_weights(states: np.ndarray, params: ModelParams,
                xi: BoundaryCondition) -> np.ndarray:
    """Unnormalised log-weights of many states at once."""
    L, m = params.L, params.m
    xi.validate_for(L, m)
    grids = states.reshape(-1, L, m)
    energy = np.abs(np.diff(grids, axis=1)).sum(axis=(1, 2)).astype(np.float64)
    energy += np.abs(np.diff(grids, axis=2)).sum(axis=(1, 2))
    if xi.constant is not None:
        ring = {s: xi.constant for s in _ring_sites(L, m)}
    else:
        ring = xi.explicit
    for y in range(m):
        energy += np.abs(grids[:, 0, y] - ring[(-1, y)])
        energy += np.abs(grids[:, L - 1, y] - ring[(L, y)])
    for x in range(L):
        energy += np.abs(grids[:, x, 0] - ring[(x, -1)])
        energy += np.abs(grids[:, x, m - 1] - ring[(x, m)])
    logw = -params.beta * energy
    if params.field_enabled:
        lo, hi = params.height_window()
        fvec = _field_vector(params, lo, hi)
        logw += fvec[states - lo].sum(axis=1) / params.field_prefactor_L
    return logw


def _ring_sites(L, m):
    for y in range(m):
        yield (-1, y)
        yield (L, y)
    for x in range(L):
        yield (x, -1)
        yield (x, m)


def _site_conditional(chain_states, params, xi, a_idx, site_flat):
    eta = HeightField(chain_states[a_idx].reshape(params.L, params.m))
    x = (site_flat // params.m, site_flat % params.m)
    nb = neighbor_values(x, eta, xi)
    lo, hi = params.height_window()
    ks = np.arange(lo, hi + 1)
    logits = -params.beta * np.abs(ks[:, None] - nb[None, :]).sum(axis=1).astype(float)
    if params.field_enabled:
        logits += _field_vector(params, lo, hi) / params.field_prefactor_L
    logits -= logits.max()
    p = np.exp(logits)
    return p / p.sum()


def _transition_matrix(states, params, xi):
    """Heat-bath kernel: pick a uniform site, resample from the conditional."""
    lo, hi = params.height_window()
    S = hi - lo + 1
    n_states, n_sites = states.shape
    radix = (S ** np.arange(n_sites - 1, -1, -1)).astype(np.int64)
    P = np.zeros((n_states, n_states))
    inv_sites = 1.0 / n_sites
    for a in range(n_states):
        for x in range(n_sites):
            p = _site_conditional(states, params, xi, a, x)
            base = a - (states[a, x] - lo) * radix[x]
            for k in range(S):
                P[a, base + k * radix[x]] += inv_sites * p[k]
    return P


def censored_kernel(chain: ExactChain, sites, a: int, b: int) -> np.ndarray:
    """One-phase censored heat-bath kernel as a dense matrix.

    ``sites`` is an iterable of (x, y) allowed to update (None for all).
    A chosen site outside the set, or with current height outside [a, b],
    contributes holding mass; otherwise it resamples from the conditional
    renormalised to [a, b].
    """
    params, xi, states = chain.params, chain.xi, chain.states
    lo, hi = params.height_window()
    S = hi - lo + 1
    n_states, n_sites = states.shape
    radix = (S ** np.arange(n_sites - 1, -1, -1)).astype(np.int64)
    if sites is None:
        allowed = set(range(n_sites))
    else:
        allowed = {s[0] * params.m + s[1] for s in sites}
    P = np.zeros((n_states, n_states))
    inv_sites = 1.0 / n_sites
    ia, ib = a - lo, b - lo
    for s in range(n_states):
        for x in range(n_sites):
            cur = states[s, x] - lo
            if x not in allowed or cur < ia or cur > ib:
                P[s, s] += inv_sites
                continue
            p = _site_conditional(states, params, xi, s, x)
            pw = p[ia:ib + 1]
            pw = pw / pw.sum()
            base = s - cur * radix[x]
            for k in range(ia, ib + 1):
                P[s, base + k * radix[x]] += inv_sites * pw[k - ia]
    return P


# ---------------------------------------------------------------------------
# Convergence functionals
# ---------------------------------------------------------------------------

def tv_distance(mu: np.ndarray, nu: np.ndarray) -> float:
    return 0.5 * float(np.abs(mu - nu).sum())

def tv_curve(chain: ExactChain, start: int, horizon: int):
    """Exact (t, TV(law_t, pi)) for t = 0..horizon from a point mass."""
    mu = np.zeros(chain.n_states)
    mu[start] = 1.0
    out = [(0, tv_distance(mu, chain.pi))]
    for t in range(1, horizon + 1):
        mu = mu @ chain.P
        out.append((t, tv_distance(mu, chain.pi)))
    return out


def worst_tv_curve(chain: ExactChain, horizon: int):
    """Max over starting states of TV to stationarity, for t = 0..horizon."""
    M = np.eye(chain.n_states)
    out = [0.5 * float(np.abs(M - chain.pi).sum(axis=1).max())]
    for _ in range(horizon):
        M = M @ chain.P
        out.append(0.5 * float(np.abs(M - chain.pi).sum(axis=1).max()))
    return out


def mixing_time(chain: ExactChain, threshold: float = TV_THRESHOLD,
                max_t: int = 1 << 20) -> int:
    """Smallest t with worst-start TV at most the threshold."""
    M = np.eye(chain.n_states)
    for t in range(1, max_t + 1):
        M = M @ chain.P
        if np.abs(M - chain.pi).sum(axis=1).max() * 0.5 <= threshold:
            return t
    raise RuntimeError("mixing time exceeded max_t")


def spectral_gap(chain: ExactChain) -> float:
    """1 minus the second-largest eigenvalue of the reversible kernel."""
    d = np.sqrt(chain.pi)
    A = (d[:, None] * chain.P) / d[None, :]
    A = 0.5 * (A + A.T)
    n = chain.n_states
    if n <= DENSE_EIG_LIMIT:
        vals = np.linalg.eigvalsh(A)
        lam2 = vals[-2]
    else:  # pragma: no cover - oracle instances stay at desk scale
        from scipy.sparse.linalg import eigsh
        vals = eigsh(A, k=2, which="LA", return_eigenvectors=False)
        lam2 = np.sort(vals)[-2]
    return float(1.0 - lam2)


def relaxation_time(chain: ExactChain) -> float:
    return 1.0 / spectral_gap(chain)


def pi_min(chain: ExactChain) -> float:
    return float(chain.pi.min())


def p_min(chain: ExactChain) -> float:
    pos = chain.P[chain.P > 0]
    return float(pos.min())


# ---------------------------------------------------------------------------
# Stochastic dominance on the pointwise-order poset (Strassen via max-flow)
# ---------------------------------------------------------------------------

def stochastically_dominates(chain: ExactChain, nu: np.ndarray, mu: np.ndarray,
                             tol: float = 1e-10) -> bool:
    """True when nu >= mu on every increasing event.

    Equivalent, by the coupling characterisation, to routing all of the mass
    of mu to nu along pairs (a, b) with state_a <= state_b pointwise; checked
    with a max-flow on the bipartite comparability graph.
    """
    support_mu = np.where(mu > tol * 1e-3)[0]
    support_nu = np.where(nu > tol * 1e-3)[0]
    le = _pointwise_le(chain.states[support_mu], chain.states[support_nu])
    flow = _bipartite_maxflow(mu[support_mu], nu[support_nu], le)
    return flow >= float(mu[support_mu].sum()) - tol


def _pointwise_le(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return (A[:, None, :] <= B[None, :, :]).all(axis=2)


def _bipartite_maxflow(supply: np.ndarray, demand: np.ndarray,
                       le: np.ndarray) -> float:
    """Dinic-style augmentation specialised to bipartite unit structure."""
    na, nb = len(supply), len(demand)
    src, snk = na + nb, na + nb + 1
    n = na + nb + 2
    cap: list[dict[int, float]] = [dict() for _ in range(n)]
    for i in range(na):
        cap[src][i] = float(supply[i])
        cap[i][src] = 0.0
    for j in range(nb):
        cap[na + j][snk] = float(demand[j])
        cap[snk][na + j] = 0.0
    big = float(supply.sum()) + 1.0
    for i in range(na):
        for j in range(nb):
            if le[i, j]:
                cap[i][na + j] = big
                cap[na + j][i] = 0.0
    total = 0.0
    eps = 1e-15
    while True:
        # BFS levels
        level = [-1] * n
        level[src] = 0
        queue = [src]
        for v in queue:
            for w, c in cap[v].items():
                if c > eps and level[w] < 0:
                    level[w] = level[v] + 1
                    queue.append(w)
        if level[snk] < 0:
            return total
        # DFS blocking flow
        def push(v, f):
            if v == snk:
                return f
            for w, c in cap[v].items():
                if c > eps and level[w] == level[v] + 1:
                    got = push(w, min(f, c))
                    if got > eps:
                        cap[v][w] -= got
                        cap[w][v] += got
                        return got
            level[v] = -1
            return 0.0
        while True:
            pushed = push(src, big)
            if pushed <= eps:
                break
            total += pushed
