"""Heat-bath chain, grand monotone coupling, censored dynamics and the
timing observables built on them (hitting and coalescence times).

One discrete step picks a uniform site and resamples its height from the
exact single-site conditional by inverse CDF at a shared uniform.  Because
single-site conditionals are stochastically ordered in their neighbourhood,
driving any number of chains with the same (site, uniform) events preserves
pointwise order between ordered starts and ordered boundary conditions; that
is the entire coupling construction.  Time is counted in steps; one sweep is
L*m steps.

Bulk runs (``run``, ``run_coupled``, ``run_censored``) and the per-event API
(``heatbath_step``, ``censored_step``) evaluate the same conditionals with
different floating-point operation orders, so their inverse-CDF cut points
can differ in the last bit; bit-exact replays must stay within one API.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import kernels
from .kernels import SamplerPlan, make_plan
from .model import (BoundaryCondition, HeightField, ModelParams,
                    conditional_cdf, height_field_to_bytes)
from .rng import ROLE_DRIVER, UpdateEvent, UpdateStream

BLOCK = 1 << 16


def _flat(site: tuple[int, int], m: int) -> int:
    return site[0] * m + site[1]


def heatbath_step(eta: HeightField, ev: UpdateEvent, xi: BoundaryCondition,
                  params: ModelParams) -> HeightField:
    """Resample the height at ``ev.site`` in place: smallest k whose
    conditional CDF reaches ev.u."""
    cdf = conditional_cdf(ev.site, eta, xi, params)
    lo, _ = params.height_window()
    # smallest k with CDF(k) >= u, as in the bulk kernels
    k = int(np.searchsorted(cdf, ev.u, side="left"))
    k = min(k, len(cdf) - 1)
    eta.heights[ev.site] = lo + k
    return eta


@dataclass(frozen=True)
class CensorPhase:
    t_start: int
    t_end: int  # exclusive
    sites: frozenset | None  # None = every site may update
    a: int
    b: int


class CensorSchedule:
    """Piecewise update restriction: during phase i only sites in V_i whose
    height lies in [a_i, b_i] may resample, and only within [a_i, b_i]."""

    def __init__(self, phases):
        phases = [CensorPhase(p[0], p[1],
                              None if p[2] is None else frozenset(p[2]),
                              p[3], p[4])
                  if not isinstance(p, CensorPhase) else p
                  for p in phases]
        if not phases:
            raise ValueError("schedule needs at least one phase")
        if phases[0].t_start != 0:
            raise ValueError("first phase must start at t=0")
        for prev, cur in zip(phases, phases[1:]):
            if cur.t_start != prev.t_end:
                raise ValueError("phases must tile the time axis")
        for p in phases:
            if p.t_end <= p.t_start:
                raise ValueError("empty phase")
            if p.a > p.b:
                raise ValueError("phase window a > b")
        self.phases = phases

    @property
    def total_steps(self) -> int:
        return self.phases[-1].t_end

    def phase_at(self, t: int) -> CensorPhase:
        for p in self.phases:
            if p.t_start <= t < p.t_end:
                return p
        raise ValueError(f"step {t} outside the schedule range")

    @classmethod
    def unrestricted(cls, params: ModelParams, steps: int) -> "CensorSchedule":
        lo, hi = params.height_window()
        return cls([(0, steps, None, lo, hi)])


def censored_step(eta: HeightField, ev: UpdateEvent, schedule: CensorSchedule,
                  t: int, xi: BoundaryCondition, params: ModelParams) -> HeightField:
    """One step of the censored dynamics at time t (in place)."""
    phase = schedule.phase_at(t)
    if phase.sites is not None and ev.site not in phase.sites:
        return eta
    h = int(eta.heights[ev.site])
    if h < phase.a or h > phase.b:
        return eta
    cdf = conditional_cdf(ev.site, eta, xi, params)
    lo, _ = params.height_window()
    ia, ib = phase.a - lo, phase.b - lo
    floor_mass = cdf[ia - 1] if ia > 0 else 0.0
    target = floor_mass + ev.u * (cdf[ib] - floor_mass)
    k = ia
    while k < ib and cdf[k] < target:
        k += 1
    eta.heights[ev.site] = lo + k
    return eta


# ---------------------------------------------------------------------------
# Bulk runs
# ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    """Everything needed to reproduce and post-process one run."""

    seed: int
    config: dict
    sweep: int
    times: list = dc_field(default_factory=list)  # step counts at samples
    series: dict = dc_field(default_factory=dict)  # name -> list of values
    hitting: dict = dc_field(default_factory=dict)  # name -> step count or None
    step_count: int = 0
    final_state: HeightField | None = None
    occupation: np.ndarray | None = None

    def final_digest(self) -> str:
        if self.final_state is None:
            return ""
        return hashlib.sha256(height_field_to_bytes(self.final_state)).hexdigest()

    def config_hash(self) -> str:
        blob = json.dumps(self.config, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def write_csv(self, path):
        names = sorted(self.series)
        with open(path, "w") as fh:
            fh.write(",".join(["step", "sweep"] + names) + "\n")
            for i, t in enumerate(self.times):
                row = [str(t), repr(t / self.sweep)]
                row += [repr(self.series[n][i]) for n in names]
                fh.write(",".join(row) + "\n")

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "config_hash": self.config_hash(),
            "steps": self.step_count,
            "hitting_times": {k: v for k, v in self.hitting.items()},
            "final_state_digest": self.final_digest(),
        }


class _Engine:
    """Plan plus padded state; advances a single chain in event blocks."""

    def __init__(self, eta: HeightField, xi: BoundaryCondition,
                 params: ModelParams, seed: int, role: int = ROLE_DRIVER):
        self.params = params
        self.plan: SamplerPlan = make_plan(params, xi)
        self.hpad = self.plan.padded_state(eta, xi)
        self.stream = UpdateStream(seed, params.L, params.m, role=role)
        self.use_table = self.plan.table_usable(self.hpad)
        self._work = np.zeros(self.plan.S)
        self.t = 0

    def advance(self, n_steps: int):
        plan = self.plan
        t = self.t
        end = t + n_steps
        while t < end:
            n = min(BLOCK, end - t)
            sites, us = self.stream.block(t, n)
            if self.use_table:
                kernels.run_table(self.hpad, plan.s2p, plan.nbr, plan.cdf,
                                  plan.S, sites, us)
            else:
                kernels.run_free(self.hpad, plan.s2p, plan.nbr,
                                 self.params.beta, plan.fvec, plan.S,
                                 sites, us, self._work)
            t += n
        self.t = end

    def snapshot(self) -> HeightField:
        return self.plan.read_state(self.hpad)


def run(eta: HeightField, xi: BoundaryCondition, params: ModelParams,
        steps: int, rng_seed: int, observables: dict | None = None,
        sample_every: int = 1, record_occupation: bool = False,
        occupation_cap: int = 1 << 20) -> RunRecord:
    """Run the heat-bath chain for ``steps`` updates (in place on eta).

    Observables (name -> callable on HeightField) are sampled at step 0 and
    then every ``sample_every`` sweeps.  With ``record_occupation`` the
    visited-state histogram is accumulated every step (enumerable systems
    only); state index is mixed-radix over sites, most significant first.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    observables = observables or {}
    params_dict = {"L": params.L, "m": params.m, "beta": params.beta,
                   "n_plus": params.n_plus, "floor_mode": params.floor_mode.value,
                   "field": params.field_enabled}
    rec = RunRecord(seed=rng_seed, config={"params": params_dict, "steps": steps,
                                           "sample_every": sample_every},
                    sweep=params.n_sites)
    eng = _Engine(eta, xi, params, rng_seed)

    occup = None
    radix = None
    idx = 0
    if record_occupation:
        n_states = eng.plan.S ** params.n_sites
        if n_states > occupation_cap:
            raise ValueError("state space too large for occupation recording")
        if not eng.use_table:
            raise ValueError("occupation recording needs the table sampler")
        occup = np.zeros(n_states, dtype=np.int64)
        radix = (eng.plan.S ** np.arange(params.n_sites - 1, -1, -1)).astype(np.int64)
        idx = int((eng.hpad[eng.plan.s2p] * radix).sum())

    def sample():
        snap = eng.snapshot()
        rec.times.append(eng.t)
        for name, fn in observables.items():
            rec.series.setdefault(name, []).append(float(fn(snap)))

    sample()
    # without observables there is nothing to record between endpoints
    stride = max(1, sample_every) * params.n_sites if observables else max(steps, 1)
    while eng.t < steps:
        n = min(stride - eng.t % stride if eng.t % stride else stride,
                steps - eng.t)
        if occup is None:
            eng.advance(n)
        else:
            t, end = eng.t, eng.t + n
            while t < end:
                cnt = min(BLOCK, end - t)
                sites, us = eng.stream.block(t, cnt)
                idx = kernels.run_table_occupation(
                    eng.hpad, eng.plan.s2p, eng.plan.nbr, eng.plan.cdf,
                    eng.plan.S, sites, us, radix, occup, idx)
                t += cnt
            eng.t = end
        if eng.t % stride == 0 or eng.t == steps:
            sample()

    rec.step_count = eng.t
    rec.final_state = eng.snapshot()
    rec.occupation = occup
    eta.heights[:] = rec.final_state.heights
    return rec


def run_censored(eta: HeightField, xi: BoundaryCondition, params: ModelParams,
                 schedule: CensorSchedule, rng_seed: int) -> HeightField:
    """Run the censored dynamics over the whole schedule (in place)."""
    plan = make_plan(params, xi)
    hpad = plan.padded_state(eta, xi)
    if not plan.table_usable(hpad):
        raise ValueError("censored runs need a tabulated window")
    stream = UpdateStream(rng_seed, params.L, params.m)
    n_sites = params.n_sites
    for phase in schedule.phases:
        allowed = np.zeros(n_sites, dtype=np.uint8)
        if phase.sites is None:
            allowed[:] = 1
        else:
            for s in phase.sites:
                allowed[_flat(s, params.m)] = 1
        a, b = phase.a - plan.lo, phase.b - plan.lo
        t = phase.t_start
        while t < phase.t_end:
            n = min(BLOCK, phase.t_end - t)
            sites, us = stream.block(t, n)
            kernels.run_table_censored(hpad, plan.s2p, plan.nbr, plan.cdf,
                                       plan.S, sites, us, allowed, a, b)
            t += n
    eta.heights[:] = plan.read_state(hpad).heights
    return eta


# ---------------------------------------------------------------------------
# Grand monotone coupling
# ---------------------------------------------------------------------------

@dataclass
class CoupledFamily:
    """Chains advanced in lockstep by one event stream.

    Boundary conditions may differ per chain; for the order-preservation
    guarantee, chains and boundary conditions must both be sorted increasing.
    """

    chains: list
    params: ModelParams
    xis: list
    step_count: int = 0

    def __post_init__(self):
        if not self.chains:
            raise ValueError("family needs at least one chain")
        if len(self.xis) == 1:
            self.xis = self.xis * len(self.chains)
        if len(self.xis) != len(self.chains):
            raise ValueError("one boundary condition, or one per chain")

    @classmethod
    def extremes(cls, params: ModelParams, xi: BoundaryCondition) -> "CoupledFamily":
        return cls(chains=[HeightField.bottom(params), HeightField.top(params)],
                   params=params, xis=[xi])


@dataclass
class CoupledResult:
    first_violation: int  # -1 if the order never broke
    coalesced_at: int  # -1 if the extreme chains never met
    steps_run: int


def coupled_step(family: CoupledFamily, ev: UpdateEvent) -> CoupledFamily:
    """Apply the same update event to every chain in the family."""
    for eta, xi in zip(family.chains, family.xis):
        heatbath_step(eta, ev, xi, family.params)
    family.step_count += 1
    return family


def run_coupled(family: CoupledFamily, steps: int, rng_seed: int,
                check_order: bool = True,
                stop_on_coalescence: bool = False) -> CoupledResult:
    """Advance the family ``steps`` updates with a shared event stream."""
    params = family.params
    plans = [make_plan(params, xi) for xi in family.xis]
    plan0 = plans[0]
    hpads = np.stack([p.padded_state(eta, xi)
                      for p, eta, xi in zip(plans, family.chains, family.xis)])
    table_ok = plan0.cdf is not None and hpads.min() >= 0 and hpads.max() < plan0.S
    stream = UpdateStream(rng_seed, params.L, params.m)
    work = np.zeros(plan0.S)
    t = 0
    first_violation = -1
    coalesced = -1
    while t < steps:
        n = min(BLOCK, steps - t)
        sites, us = stream.block(t, n)
        if table_ok:
            viol, coal = kernels.run_table_coupled(
                hpads, plan0.s2p, plan0.nbr, plan0.cdf, plan0.S, sites, us,
                check_order, stop_on_coalescence, t)
        else:
            viol, coal = kernels.run_free_coupled(
                hpads, plan0.s2p, plan0.nbr, params.beta, plan0.fvec, plan0.S,
                sites, us, work, check_order, stop_on_coalescence, t)
        if viol >= 0 and first_violation < 0:
            first_violation = int(viol)
        if coal >= 0 and coalesced < 0:
            coalesced = int(coal)
        if coalesced >= 0 and stop_on_coalescence:
            t = coalesced
            break
        t += n
    for eta, p, hp in zip(family.chains, plans, hpads):
        eta.heights[:] = p.read_state(hp).heights
    family.step_count += t
    return CoupledResult(first_violation=first_violation, coalesced_at=coalesced,
                         steps_run=t)


def coalescence_time(params: ModelParams, xi: BoundaryCondition,
                     max_steps: int, rng_seed: int) -> int | None:
    """First step at which the grand-coupled chains from the two extreme
    states agree on every site; None if the budget runs out."""
    fam = CoupledFamily.extremes(params, xi)
    res = run_coupled(fam, max_steps, rng_seed, check_order=False,
                      stop_on_coalescence=True)
    return res.coalesced_at if res.coalesced_at >= 0 else None


def hitting_time(eta: HeightField, xi: BoundaryCondition, params: ModelParams,
                 predicate, rng_seed: int, max_steps: int,
                 check_every: int | None = None) -> int | None:
    """First checked step at which ``predicate(field)`` holds, checking at
    step 0 and then every ``check_every`` steps (default: one sweep).
    Budget exhaustion returns None."""
    if check_every is None:
        check_every = params.n_sites
    if check_every < 1:
        raise ValueError("check_every must be >= 1")
    eng = _Engine(eta, xi, params, rng_seed)
    if predicate(eng.snapshot()):
        return 0
    while eng.t < max_steps:
        n = min(check_every, max_steps - eng.t)
        eng.advance(n)
        if predicate(eng.snapshot()):
            eta.heights[:] = eng.snapshot().heights
            return eng.t
    eta.heights[:] = eng.snapshot().heights
    return None
