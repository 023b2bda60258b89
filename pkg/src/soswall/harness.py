"""Experiment harness: configuration, presets, checkpoints and data export.

A run is fully determined by (config, seed): randomness is counter-based, so
interrupted runs resume from a checkpoint onto the identical trajectory.
Presets cover the standard experiments: the metastable staircase from a flat
start, the fall from the ceiling to the typical height, matched floored
versus symmetric coalescence, equilibrium fluctuation profiles, and the
exact-oracle and congestion-bound sweeps.  Outputs are CSV series plus a
JSON summary per run; budgets are measured in sweeps (one sweep = L*m
updates).
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import bounds as bounds_mod
from . import dynamics as dyn
from . import observables as obs
from . import oracle as orc
from .model import (BoundaryCondition, FloorMode, HeightField, ModelParams,
                    equilibrium_height, height_field_from_json,
                    height_field_to_json)

PRESETS = ("sample", "staircase", "ceiling_fall", "floor_vs_nofloor",
           "equilibrium_profile", "oracle_suite", "bounds_suite")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    preset: str
    L: int
    beta: float
    n_plus: int
    m: int = 0
    floor_mode: str = "floor_at_zero"
    field_enabled: bool = False
    boundary: int = 0
    seeds: list = dc_field(default_factory=lambda: [1])
    budget_sweeps: int = 10 ** 6
    sample_every: int = 1
    out_dir: str = "."
    options: dict = dc_field(default_factory=dict)

    def params(self, floor_mode: str | None = None, L: int | None = None) -> ModelParams:
        try:
            mode = FloorMode(floor_mode or self.floor_mode)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        try:
            return ModelParams(L=L or self.L, m=0 if L else self.m,
                               beta=self.beta, n_plus=self.n_plus,
                               floor_mode=mode, field_enabled=self.field_enabled)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def xi(self) -> BoundaryCondition:
        return BoundaryCondition.flat(self.boundary)

    def to_dict(self) -> dict:
        return {"preset": self.preset, "L": self.L, "m": self.m,
                "beta": self.beta, "n_plus": self.n_plus,
                "floor_mode": self.floor_mode, "field_enabled": self.field_enabled,
                "boundary": self.boundary, "seeds": list(self.seeds),
                "budget_sweeps": self.budget_sweeps,
                "sample_every": self.sample_every, "options": self.options}


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - {f for f in ExperimentConfig.__dataclass_fields__}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("preset", "L", "beta", "n_plus"):
        if key not in raw:
            raise ConfigError(f"config key {key!r} is required")
    cfg = ExperimentConfig(**raw)
    if cfg.preset not in PRESETS:
        raise ConfigError(f"unknown preset {cfg.preset!r}; choose from {PRESETS}")
    if cfg.budget_sweeps < 0:
        raise ConfigError("budget_sweeps must be nonnegative")
    if not cfg.seeds:
        raise ConfigError("at least one seed is required")
    cfg.params()  # validate model parameters eagerly
    return cfg


# ---------------------------------------------------------------------------
# Atomic files and checkpoints
# ---------------------------------------------------------------------------

def atomic_write(path, text: str):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def write_checkpoint(path, step: int, eta: HeightField, mode: FloorMode,
                     extra: dict | None = None):
    payload = {"step": step, "field": height_field_to_json(eta, mode),
               "extra": extra or {}}
    atomic_write(path, json.dumps(payload))


def read_checkpoint(path):
    with open(path) as fh:
        payload = json.load(fh)
    eta, mode = height_field_from_json(payload["field"])
    return payload["step"], eta, mode, payload.get("extra", {})


def run_with_checkpoints(eta: HeightField, xi, params, total_steps: int,
                         seed: int, checkpoint_path=None,
                         checkpoint_every_steps: int = 0) -> HeightField:
    """Plain run that persists (step, state) periodically and resumes from an
    existing checkpoint; the counter-based stream makes the resumed
    trajectory identical to an uninterrupted one."""
    eng = dyn._Engine(eta, xi, params, seed)
    if checkpoint_path and os.path.exists(checkpoint_path):
        step, saved, _, _ = read_checkpoint(checkpoint_path)
        if step > total_steps:
            raise ValueError("checkpoint is beyond the requested horizon")
        eng.hpad = eng.plan.padded_state(saved, xi)
        eng.t = step
    stride = checkpoint_every_steps or total_steps
    while eng.t < total_steps:
        eng.advance(min(stride, total_steps - eng.t))
        if checkpoint_path:
            write_checkpoint(checkpoint_path, eng.t, eng.snapshot(),
                             params.floor_mode)
    out = eng.snapshot()
    eta.heights[:] = out.heights
    return eta


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

def _fanout(fn, seeds, max_workers=None):
    if len(seeds) == 1:
        return [fn(seeds[0])]
    workers = max_workers or min(len(seeds), os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, seeds))


def geometric_sweep_grid(budget_sweeps: int, factor: float = 1.15) -> list[int]:
    """Strictly increasing integer sweep times, geometrically spaced."""
    ts, t = [], 1.0
    while t <= budget_sweeps:
        it = int(math.ceil(t))
        if not ts or it > ts[-1]:
            ts.append(it)
        t *= factor
    if not ts or ts[-1] != budget_sweeps:
        ts.append(budget_sweeps)
    return ts


def run_staircase(config: ExperimentConfig) -> dict:
    """Mean height versus log time from the flat-zero start, with level
    hitting times.  Hitting is checked every sweep; series are sampled on a
    geometric grid so the staircase costs little to record."""
    params = config.params()
    if params.floor_mode is not FloorMode.FLOOR_AT_ZERO:
        raise ConfigError("staircase preset needs the floored model")
    xi = config.xi()
    H = equilibrium_height(params)
    levels = config.options.get("levels") or list(range(1, H + 1))
    fraction = config.options.get("fraction", 0.9)
    grid = geometric_sweep_grid(config.budget_sweeps)
    sweep = params.n_sites

    def one(seed):
        eng = dyn._Engine(HeightField.bottom(params), xi, params, seed)
        rec = dyn.RunRecord(seed=seed, config=config.to_dict(), sweep=sweep)
        rec.series = {"mean_height": []}
        for lev in levels:
            rec.series[f"frac_ge_{lev}"] = []
            rec.hitting[f"level_{lev}"] = None
        gi = 0
        for s in range(1, config.budget_sweeps + 1):
            eng.advance(sweep)
            snap = eng.plan.read_state(eng.hpad).heights
            for lev in levels:
                key = f"level_{lev}"
                if rec.hitting[key] is None and \
                        (snap >= lev).sum() > fraction * snap.size:
                    rec.hitting[key] = s
            if gi < len(grid) and s == grid[gi]:
                rec.times.append(eng.t)
                rec.series["mean_height"].append(float(snap.mean()))
                for lev in levels:
                    rec.series[f"frac_ge_{lev}"].append(float((snap >= lev).mean()))
                gi += 1
            if config.options.get("stop_at_top", True) and \
                    all(v is not None for v in rec.hitting.values()):
                break
        rec.step_count = eng.t
        rec.final_state = eng.snapshot()
        return rec

    records = _fanout(one, config.seeds)
    taus = {f"level_{lev}": [r.hitting[f"level_{lev}"] for r in records]
            for lev in levels}
    return {"records": records, "levels": levels, "taus": taus,
            "H": H, "budget_exhausted": {k: any(v is None for v in vs)
                                         for k, vs in taus.items()}}


def run_ceiling_fall(config: ExperimentConfig) -> dict:
    """Mean-height decay from a flat start above the typical height."""
    params = config.params()
    if params.floor_mode is not FloorMode.FLOOR_AT_ZERO:
        raise ConfigError("ceiling_fall preset needs the floored model")
    start = config.options.get("start_height", 10)
    if not 0 <= start <= params.n_plus:
        raise ConfigError("start_height outside the height window")
    xi = config.xi()
    window = config.options.get("window_sweeps", max(1, config.budget_sweeps // 10))

    def one(seed):
        eta = HeightField.constant(params.L, params.m, start)
        rec = dyn.run(eta, xi, params, config.budget_sweeps * params.n_sites,
                      rng_seed=seed, observables=dict([obs.mean_height()]),
                      sample_every=config.sample_every)
        series = rec.series["mean_height"]
        n_window = max(1, window // max(config.sample_every, 1))
        rec.config["final_window_mean"] = float(np.mean(series[-n_window:]))
        return rec

    records = _fanout(one, config.seeds)
    return {"records": records,
            "final_window_means": [r.config["final_window_mean"] for r in records],
            "H": equilibrium_height(params)}


def run_floor_vs_nofloor(config: ExperimentConfig) -> dict:
    """Median coalescence sweeps of the extreme-state coupling, floored
    versus symmetric, over a grid of box sides."""
    L_grid = config.options.get("L_grid") or [config.L]
    xi = config.xi()
    rows = []
    for L in L_grid:
        for mode in ("floor_at_zero", "symmetric"):
            params = config.params(floor_mode=mode, L=L)
            budget = config.budget_sweeps * params.n_sites

            def one(seed, params=params, budget=budget):
                t = dyn.coalescence_time(params, xi, budget, seed)
                return None if t is None else t / params.n_sites

            times = _fanout(one, config.seeds)
            rows += [{"L": L, "mode": mode, "seed": s, "coalescence_sweeps": t}
                     for s, t in zip(config.seeds, times)]
    summary = {}
    for L in L_grid:
        entry = {}
        for mode in ("floor_at_zero", "symmetric"):
            ts = [r["coalescence_sweeps"] for r in rows
                  if r["L"] == L and r["mode"] == mode]
            censored = any(t is None for t in ts)
            med = float(np.median([t for t in ts if t is not None])) \
                if any(t is not None for t in ts) else None
            entry[mode] = {"median": med, "censored": censored}
        f, s = entry["floor_at_zero"]["median"], entry["symmetric"]["median"]
        entry["ratio"] = (f / s) if (f and s) else None
        summary[L] = entry
    return {"rows": rows, "summary": summary}


def run_equilibrium_profile(config: ExperimentConfig) -> dict:
    """Fluctuation census at equilibrium: burn in, sample decorrelated
    snapshots, aggregate level statistics and fit the tail decay rates."""
    params = config.params()
    xi = config.xi()
    burn_in = config.options.get("burn_in_sweeps", max(10, config.budget_sweeps // 5))
    spacing = max(1, config.sample_every)
    n_samples = max(1, (config.budget_sweeps - burn_in) // spacing)
    H = equilibrium_height(params)

    def one(seed):
        eng = dyn._Engine(HeightField.bottom(params), xi, params, seed)
        eng.advance(burn_in * params.n_sites)
        down = np.zeros(64, dtype=np.int64)
        up = np.zeros(64, dtype=np.int64)
        hist = {}
        frac_ge = np.zeros(8)
        for _ in range(n_samples):
            eng.advance(spacing * params.n_sites)
            snap = eng.plan.read_state(eng.hpad).heights
            dev = snap.ravel() - H
            dcounts = np.bincount(np.maximum(-dev, 0), minlength=64)
            ucounts = np.bincount(np.maximum(dev, 0), minlength=64)
            down += dcounts[:64]
            up += ucounts[:64]
            for v, c in zip(*np.unique(snap, return_counts=True)):
                hist[int(v)] = hist.get(int(v), 0) + int(c)
            for h in range(1, 9):
                frac_ge[h - 1] += (snap >= h).mean()
        return down, up, hist, frac_ge / n_samples

    results = _fanout(one, config.seeds)
    down = sum(r[0] for r in results)
    up = sum(r[1] for r in results)
    hist = {}
    for r in results:
        for v, c in r[2].items():
            hist[v] = hist.get(v, 0) + c
    frac_ge = np.mean([r[3] for r in results], axis=0)

    def tail_rate(counts):
        # least-squares slope of log tail counts for k >= 1
        ks, ys = [], []
        for k in range(1, len(counts)):
            tail = counts[k:].sum()
            if tail > 0:
                ks.append(k)
                ys.append(math.log(tail))
        if len(ks) < 2:
            return None
        slope = np.polyfit(ks, ys, 1)[0]
        return float(-slope)

    mode_height = max(hist.items(), key=lambda kv: kv[1])[0] if hist else None
    return {"H": H, "down_counts": down.tolist(), "up_counts": up.tolist(),
            "height_histogram": hist, "mode_height": mode_height,
            "down_tail_rate": tail_rate(down), "up_tail_rate": tail_rate(up),
            "frac_at_or_above": {h + 1: float(frac_ge[h]) for h in range(8)},
            "n_samples": n_samples * len(config.seeds)}


DEFAULT_ORACLE_INSTANCES = (
    {"L": 1, "m": 1, "beta": 0.5, "n_plus": 1},
    {"L": 1, "m": 1, "beta": 1.5, "n_plus": 2},
    {"L": 2, "m": 1, "beta": 1.0, "n_plus": 2},
    {"L": 2, "m": 2, "beta": 0.5, "n_plus": 1},
    {"L": 2, "m": 2, "beta": 1.0, "n_plus": 2},
    {"L": 3, "m": 2, "beta": 1.5, "n_plus": 1},
)


def oracle_instances(config: ExperimentConfig):
    specs = config.options.get("instances") or [dict(s) for s in DEFAULT_ORACLE_INSTANCES]
    for spec in specs:
        params = ModelParams(L=spec["L"], m=spec.get("m", 0), beta=spec["beta"],
                             n_plus=spec["n_plus"],
                             floor_mode=FloorMode(spec.get("floor_mode",
                                                           "floor_at_zero")))
        yield spec, params


def run_oracle_suite(config: ExperimentConfig) -> dict:
    xi = config.xi()
    horizon = config.options.get("tv_horizon", 60)
    out = []
    rows = []
    for spec, params in oracle_instances(config):
        chain = orc.enumerate_chain(params, xi)
        gap = orc.spectral_gap(chain)
        tmix = orc.mixing_time(chain)
        curve = orc.worst_tv_curve(chain, horizon)
        out.append({"instance": spec, "n_states": chain.n_states,
                    "gap": gap, "t_rel": 1.0 / gap, "t_mix": tmix,
                    "pi_min": orc.pi_min(chain),
                    "worst_tv_curve": curve,
                    "reversibility_residual": chain.reversibility_residual()})
        label = f"{params.L}x{params.m}b{params.beta}n{params.n_plus}"
        rows.append({"instance": label, "n_states": chain.n_states,
                     "gap": gap, "t_rel": 1.0 / gap, "t_mix": tmix,
                     "pi_min": orc.pi_min(chain)})
    return {"instances": out, "rows": rows}


def run_bounds_suite(config: ExperimentConfig) -> dict:
    xi = config.xi()
    rows = []
    for spec, params in oracle_instances(config):
        chain = orc.enumerate_chain(params, xi)
        trel = orc.relaxation_time(chain)
        rep = bounds_mod.congestion_bound(chain)
        H = equilibrium_height(params)
        good = np.array([(np.abs(s - H) <= 1).all() for s in chain.states])
        if not good.any():
            good = np.ones(chain.n_states, dtype=bool)
        T = config.options.get("good_set_T", 4 * params.n_sites)
        probe = bounds_mod.good_set_bound(chain, good, T=T, alpha=1e-9)
        alpha = max(probe.alpha_certified, 1e-9)
        gs = bounds_mod.good_set_bound(chain, good, T=T, alpha=alpha)
        rows.append({"instance": spec, "t_rel": trel,
                     "congestion_bound": rep.bound,
                     "good_set_bound": gs.value,
                     "alpha_certified": gs.alpha_certified,
                     "sound": bool(rep.bound >= trel and gs.value >= trel)})
    return {"rows": rows}


def run_sample(config: ExperimentConfig) -> dict:
    """Generic observable-recording run from a configurable flat start."""
    params = config.params()
    xi = config.xi()
    start = config.options.get("start_height")
    lo, hi = params.height_window()
    if start is None:
        start = lo

    def one(seed):
        eta = HeightField.constant(params.L, params.m, start)
        return dyn.run(eta, xi, params, config.budget_sweeps * params.n_sites,
                       rng_seed=seed, observables=obs.standard_observables(params),
                       sample_every=config.sample_every)

    return {"records": _fanout(one, config.seeds)}


def run_preset(config: ExperimentConfig) -> dict:
    fn = {"sample": run_sample, "staircase": run_staircase,
          "ceiling_fall": run_ceiling_fall,
          "floor_vs_nofloor": run_floor_vs_nofloor,
          "equilibrium_profile": run_equilibrium_profile,
          "oracle_suite": run_oracle_suite,
          "bounds_suite": run_bounds_suite}[config.preset]
    return fn(config)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def export_results(config: ExperimentConfig, result: dict) -> list[str]:
    """Write CSVs and a JSON summary under config.out_dir; returns paths."""
    os.makedirs(config.out_dir, exist_ok=True)
    paths = []
    records = result.get("records", [])
    for rec in records:
        p = os.path.join(config.out_dir, f"{config.preset}_seed{rec.seed}.csv")
        rec.write_csv(p)
        paths.append(p)
    if "rows" in result:
        p = os.path.join(config.out_dir, f"{config.preset}.csv")
        rows = result["rows"]
        if rows:
            cols = list(rows[0].keys())
            lines = [",".join(cols)]
            for r in rows:
                lines.append(",".join(_csv_cell(r[c]) for c in cols))
            atomic_write(p, "\n".join(lines) + "\n")
            paths.append(p)
    summary = {"config": config.to_dict()}
    for key, val in result.items():
        if key in ("records", "rows"):
            continue
        summary[key] = val
    if records:
        summary["runs"] = [rec.summary() for rec in records]
    sp = os.path.join(config.out_dir, f"{config.preset}_summary.json")
    atomic_write(sp, json.dumps(_jsonable(summary), indent=2, sort_keys=True))
    paths.append(sp)
    return paths


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x
