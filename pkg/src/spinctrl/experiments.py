"""Scripted studies on the radical-pair control problem, plus persistence.

Each study is a plain function over an ExperimentConfig: single optimization
runs, gamma sweeps against the no-filter baseline, yield-loss tables over
initial controls and proton counts, and the 54-start uniqueness study on the
sign-changing prism.  Results are written to a deterministic directory
layout:

    <out>/<experiment-name>/<run-id>/
        config.json        resolved configuration (all defaults expanded)
        report.json        optimizer outcome
        cost_history.csv   iteration, cost
        control.csv        t, u_x, u_y, u_z        (uT, interval left nodes)
        field.csv          t, v_x, v_y, v_z        (uT, grid nodes)
        switching.csv      t, phi_x, phi_y, phi_z  (grid nodes)

plus flat summary tables (sweep.csv, yield_loss.csv) for the sweep studies.
The run id is a hash of the resolved configuration, so identical configs
land in identical directories with bit-identical files.

Configs carry fields in uT (controls, prisms, filter state); hyperfine rows
are mT.  A filter v0 may be the string "matched", which resolves to the
value at t = 0 of the no-filter optimal field computed from the same
starting point.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import (
    ControlSignal,
    FilterConfig,
    Prism,
    TimeGrid,
    constant_control,
    filter_field,
    integrate_forward,
)
from .model import (
    GYRO_DEFAULT,
    PhysicalConstants,
    build_model,
    default_hyperfine,
    triplet_states,
)
from .objective import singlet_yield
from .optimize import (
    STATUS_OSCILLATING,
    ControlProblem,
    GpmSettings,
    IpmpSettings,
    OptimizerReport,
    control_norm,
    gpm_optimize,
    ipmp_optimize,
)

# Reference parameter block: electromagnetic prisms (uT), gamma sample for
# sweeps, starting controls for the yield-loss table, and the two grid
# vertices of the uniqueness study.
PRISM_CASE_1 = ((3.0, 3.0, 3.0), (6.0, 6.0, 6.0))
PRISM_CASE_2 = ((3.0, 3.0, -1.0), (6.0, 6.0, 2.0))
GAMMA_SWEEP_DEFAULT = (0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0, 60.0)
YIELD_LOSS_STARTS = ((3.0, 3.0, 3.0), (6.0, 6.0, 6.0), (6.0, 6.0, 3.0))
STUDY_VERTICES = ((6.0, 6.0, -1.0), (6.0, 6.0, 2.0))


class ConfigError(ValueError):
    """Rejected configuration; the message names the offending key."""


@dataclass(frozen=True)
class GridSpec:
    """27 constant starting controls: vertex + spacing*[1-i, 1-j, 1-k]."""

    vertex: tuple
    spacing: float = 0.5

    def __post_init__(self):
        object.__setattr__(
            self, "vertex", tuple(float(c) for c in np.reshape(self.vertex, 3))
        )
        if self.spacing <= 0:
            raise ConfigError("grid spacing must be positive")


def grid_points(spec: GridSpec):
    """The raw 27 grid vectors, unclipped, index order (i, j, k)."""
    offsets = spec.spacing * (1.0 - np.arange(3.0))
    pts = [
        np.asarray(spec.vertex) + np.array([offsets[i], offsets[j], offsets[k]])
        for i in range(3)
        for j in range(3)
        for k in range(3)
    ]
    return np.array(pts)


def grid_initializers(spec: GridSpec, grid: TimeGrid, prism: Prism):
    """27 constant-in-time controls on `grid`, clipped into `prism`.

    Clipping matters: the grid around a prism vertex pokes outside the box,
    and controls must start feasible.
    """
    return [
        constant_control(prism.clip(point), grid, prism)
        for point in grid_points(spec)
    ]


@dataclass(frozen=True)
class ControlComparison:
    rel_ctrl: float
    rel_cost: float
    absolute: bool = False  # True when ||u1|| = 0 forced an absolute norm


def compare_controls(u1: ControlSignal, u2: ControlSignal, j1, j2, h=1.0):
    """Relative L2 control discrepancy and relative cost discrepancy.

    Both use u1/j1 as the reference.  A zero reference control makes the
    ratio undefined; the absolute difference norm is returned instead with
    the `absolute` flag raised.
    """
    diff = control_norm(u1.values - u2.values, h)
    ref = control_norm(u1.values, h)
    if ref == 0.0:
        rel_ctrl, absolute = diff, True
    else:
        rel_ctrl, absolute = diff / ref, False
    rel_cost = abs(j1 - j2) / abs(j1) if j1 != 0 else abs(j2)
    return ControlComparison(rel_ctrl=rel_ctrl, rel_cost=rel_cost, absolute=absolute)


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully-resolved description of one experiment.

    Defaults reproduce the reference single-proton scenario: T = 0.5 us on
    200 intervals, the standard hyperfine table, prism [3,6]^3 uT, filter
    gamma = 1 with v0 = [3,3,3] uT, constant starting control [3,3,3] uT,
    IPMP optimizer.
    """

    p: int = 1
    t_final: float = 0.5
    steps: int = 200
    gyro: float = GYRO_DEFAULT
    k_singlet: float = 10.0
    k_triplet: float = 10.0
    hyperfine: tuple | None = None  # mT rows; None = built-in table for p
    prism_lower: tuple = PRISM_CASE_1[0]
    prism_upper: tuple = PRISM_CASE_1[1]
    filter_enabled: bool = True
    gamma: float = 1.0
    v0: tuple | str = (3.0, 3.0, 3.0)  # uT vector or "matched"
    u0_kind: str = "constant"  # constant | grid | explicit
    u0_vector: tuple = (3.0, 3.0, 3.0)
    u0_values: tuple | None = None  # (steps, 3) rows, explicit kind only
    grid_vertex: tuple = STUDY_VERTICES[0]
    grid_spacing: float = 0.5
    method: str = "ipmp"  # gpm | ipmp
    gpm: GpmSettings = field(default_factory=GpmSettings)
    ipmp: IpmpSettings = field(default_factory=IpmpSettings)
    gammas: tuple = GAMMA_SWEEP_DEFAULT
    p_max: int = 3
    seed: int = 2024

    def to_dict(self):
        """Nested plain-data form, the on-disk schema."""
        hyperfine = self.hyperfine
        if hyperfine is None:
            hyperfine = tuple(map(tuple, default_hyperfine(self.p)))
        return {
            "p": self.p,
            "t_final": self.t_final,
            "steps": self.steps,
            "seed": self.seed,
            "constants": {
                "gyro": self.gyro,
                "k_singlet": self.k_singlet,
                "k_triplet": self.k_triplet,
            },
            "hyperfine": [list(row) for row in hyperfine],
            "prism": {
                "lower": list(self.prism_lower),
                "upper": list(self.prism_upper),
            },
            "filter": {
                "enabled": self.filter_enabled,
                "gamma": self.gamma,
                "v0": self.v0 if isinstance(self.v0, str) else list(self.v0),
            },
            "u0": {
                "kind": self.u0_kind,
                "vector": list(self.u0_vector),
                "values": None
                if self.u0_values is None
                else [list(row) for row in self.u0_values],
                "grid": {
                    "vertex": list(self.grid_vertex),
                    "spacing": self.grid_spacing,
                },
            },
            "optimizer": {
                "method": self.method,
                "gpm": {
                    "eps_cost": self.gpm.eps_cost,
                    "eps_ctrl": self.gpm.eps_ctrl,
                    "max_iters": self.gpm.max_iters,
                    "lambda0": self.gpm.lambda0,
                    "step_scale": self.gpm.step_scale,
                    "bb_unsquared_denominator": self.gpm.bb_unsquared_denominator,
                },
                "ipmp": {
                    "max_iters": self.ipmp.max_iters,
                    "cycle_window": self.ipmp.cycle_window,
                },
            },
            "sweep": {"gammas": list(self.gammas), "p_max": self.p_max},
        }


def _reject_unknown(data, schema, path=""):
    for key, value in data.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in schema:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(schema[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where} must be an object")
            _reject_unknown(value, schema[key], where)


def _vector3(value, where):
    arr = np.asarray(value, dtype=float)
    if arr.shape != (3,):
        raise ConfigError(f"config key {where} must be a 3-vector")
    return tuple(float(c) for c in arr)


def _positive(value, where, kind=float):
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {where} must be a number") from None
    if kind is int:
        if number != int(number):
            raise ConfigError(f"config key {where} must be an integer")
        number = int(number)
    if number <= 0:
        raise ConfigError(f"config key {where} must be positive")
    return number


def config_from_dict(data):
    """Validate a nested config document and fill every default.

    Raises ConfigError naming the offending dotted key path.
    """
    if not isinstance(data, dict):
        raise ConfigError("config document must be a JSON object")
    template = ExperimentConfig().to_dict()
    _reject_unknown(data, template)

    def section(name):
        part = data.get(name, {})
        if not isinstance(part, dict):
            raise ConfigError(f"config key {name} must be an object")
        return part

    base = ExperimentConfig()
    p = _positive(data.get("p", base.p), "p", kind=int)
    t_final = _positive(data.get("t_final", base.t_final), "t_final")
    steps = _positive(data.get("steps", base.steps), "steps", kind=int)

    consts = section("constants")
    gyro = _positive(consts.get("gyro", base.gyro), "constants.gyro")
    k_singlet = float(consts.get("k_singlet", base.k_singlet))
    k_triplet = float(consts.get("k_triplet", base.k_triplet))
    if k_singlet < 0:
        raise ConfigError("config key constants.k_singlet must be non-negative")
    if k_triplet < 0:
        raise ConfigError("config key constants.k_triplet must be non-negative")

    hyperfine = data.get("hyperfine")
    if hyperfine is not None:
        table = np.asarray(hyperfine, dtype=float)
        if table.ndim != 2 or table.shape != (p, 3):
            raise ConfigError(
                f"config key hyperfine must be a {p}x3 array of mT rows"
            )
        hyperfine = tuple(map(tuple, table))

    prism = section("prism")
    lower = _vector3(prism.get("lower", base.prism_lower), "prism.lower")
    upper = _vector3(prism.get("upper", base.prism_upper), "prism.upper")
    if any(lo > hi for lo, hi in zip(lower, upper)):
        raise ConfigError("config key prism.lower exceeds prism.upper")

    filt = section("filter")
    enabled = filt.get("enabled", base.filter_enabled)
    if not isinstance(enabled, bool):
        raise ConfigError("config key filter.enabled must be true or false")
    gamma = _positive(filt.get("gamma", base.gamma), "filter.gamma")
    v0 = filt.get("v0", base.v0)
    if isinstance(v0, str):
        if v0 != "matched":
            raise ConfigError('config key filter.v0 must be a 3-vector or "matched"')
    else:
        v0 = _vector3(v0, "filter.v0")

    u0 = section("u0")
    u0_kind = u0.get("kind", base.u0_kind)
    if u0_kind not in ("constant", "grid", "explicit"):
        raise ConfigError("config key u0.kind must be constant, grid, or explicit")
    u0_vector = _vector3(u0.get("vector", base.u0_vector), "u0.vector")
    u0_values = u0.get("values", base.u0_values)
    if u0_values is not None:
        arr = np.asarray(u0_values, dtype=float)
        if arr.ndim != 2 or arr.shape != (steps, 3):
            raise ConfigError(
                f"config key u0.values must be a {steps}x3 array"
            )
        u0_values = tuple(map(tuple, arr))
    elif u0_kind == "explicit":
        raise ConfigError("config key u0.values required when u0.kind=explicit")
    u0_grid = u0.get("grid", {})
    if not isinstance(u0_grid, dict):
        raise ConfigError("config key u0.grid must be an object")
    grid_vertex = _vector3(
        u0_grid.get("vertex", base.grid_vertex), "u0.grid.vertex"
    )
    grid_spacing = _positive(
        u0_grid.get("spacing", base.grid_spacing), "u0.grid.spacing"
    )

    opt = section("optimizer")
    method = opt.get("method", base.method)
    if method not in ("gpm", "ipmp"):
        raise ConfigError("config key optimizer.method must be gpm or ipmp")
    gpm_part = opt.get("gpm", {})
    if not isinstance(gpm_part, dict):
        raise ConfigError("config key optimizer.gpm must be an object")
    lambda0 = gpm_part.get("lambda0", base.gpm.lambda0)
    if lambda0 is not None:
        lambda0 = _positive(lambda0, "optimizer.gpm.lambda0")
    try:
        gpm = GpmSettings(
            eps_cost=float(gpm_part.get("eps_cost", base.gpm.eps_cost)),
            eps_ctrl=float(gpm_part.get("eps_ctrl", base.gpm.eps_ctrl)),
            max_iters=int(gpm_part.get("max_iters", base.gpm.max_iters)),
            lambda0=lambda0,
            step_scale=float(gpm_part.get("step_scale", base.gpm.step_scale)),
            bb_unsquared_denominator=bool(
                gpm_part.get("bb_unsquared_denominator", base.gpm.bb_unsquared_denominator)
            ),
        )
    except ValueError as exc:
        raise ConfigError(f"config key optimizer.gpm invalid: {exc}") from None
    if gpm.eps_cost <= 0 or gpm.eps_ctrl <= 0:
        raise ConfigError("config key optimizer.gpm tolerances must be positive")
    if gpm.max_iters < 1:
        raise ConfigError("config key optimizer.gpm.max_iters must be at least 1")
    ipmp_part = opt.get("ipmp", {})
    if not isinstance(ipmp_part, dict):
        raise ConfigError("config key optimizer.ipmp must be an object")
    ipmp = IpmpSettings(
        max_iters=int(ipmp_part.get("max_iters", base.ipmp.max_iters)),
        cycle_window=int(ipmp_part.get("cycle_window", base.ipmp.cycle_window)),
    )
    if ipmp.max_iters < 1:
        raise ConfigError("config key optimizer.ipmp.max_iters must be at least 1")
    if ipmp.cycle_window < 2:
        raise ConfigError("config key optimizer.ipmp.cycle_window must be >= 2")

    sweep = section("sweep")
    gammas = sweep.get("gammas", base.gammas)
    try:
        gammas = tuple(float(g) for g in gammas)
    except (TypeError, ValueError):
        raise ConfigError("config key sweep.gammas must be a list of numbers") from None
    if not gammas or any(g <= 0 for g in gammas):
        raise ConfigError("config key sweep.gammas must be positive numbers")
    p_max = _positive(sweep.get("p_max", base.p_max), "sweep.p_max", kind=int)

    seed = int(data.get("seed", base.seed))

    return ExperimentConfig(
        p=p,
        t_final=t_final,
        steps=steps,
        gyro=gyro,
        k_singlet=k_singlet,
        k_triplet=k_triplet,
        hyperfine=hyperfine,
        prism_lower=lower,
        prism_upper=upper,
        filter_enabled=enabled,
        gamma=gamma,
        v0=v0,
        u0_kind=u0_kind,
        u0_vector=u0_vector,
        u0_values=u0_values,
        grid_vertex=grid_vertex,
        grid_spacing=grid_spacing,
        method=method,
        gpm=gpm,
        ipmp=ipmp,
        gammas=gammas,
        p_max=p_max,
        seed=seed,
    )


# --------------------------------------------------------------------------
# building and running problems


def build_problem(config: ExperimentConfig):
    """ControlProblem for a resolved (numeric-v0) config."""
    if isinstance(config.v0, str):
        raise ConfigError(
            'filter.v0 "matched" must be resolved before building; '
            "see resolve_matched_v0"
        )
    constants = PhysicalConstants(
        gyro=config.gyro,
        k_singlet=config.k_singlet,
        k_triplet=config.k_triplet,
    )
    hyperfine = (
        None if config.hyperfine is None else np.asarray(config.hyperfine)
    )
    assembly = build_model(p=config.p, constants=constants, hyperfine=hyperfine)
    basis = triplet_states(config.p)
    grid = TimeGrid(config.t_final, config.steps)
    prism = Prism(lower=config.prism_lower, upper=config.prism_upper)
    filter_cfg = FilterConfig(
        gamma=config.gamma, v0=config.v0, enabled=config.filter_enabled
    )
    return ControlProblem(
        assembly=assembly,
        basis=basis,
        grid=grid,
        prism=prism,
        filter_cfg=filter_cfg,
    )


def initial_control(config: ExperimentConfig, problem: ControlProblem):
    if config.u0_kind == "constant":
        return constant_control(config.u0_vector, problem.grid, problem.prism)
    if config.u0_kind == "explicit":
        return ControlSignal(
            values=np.asarray(config.u0_values, dtype=float),
            bounds=problem.prism,
        )
    raise ConfigError(
        "u0.kind=grid describes a family of starts; use grid_initializers "
        "or the grid-study experiment"
    )


def run_optimizer(problem: ControlProblem, u0: ControlSignal, config: ExperimentConfig):
    if config.method == "gpm":
        return gpm_optimize(problem, u0, config.gpm)
    return ipmp_optimize(problem, u0, config.ipmp)


def resolve_matched_v0(config: ExperimentConfig):
    """Replace v0="matched" by the no-filter optimal field at t = 0.

    The no-filter problem is solved from the same starting control; its
    optimal control equals its field, and the value on the first interval
    seeds the filter.  Returns (resolved config, no-filter report).
    """
    nofilter = replace(config, filter_enabled=False, v0=(0.0, 0.0, 0.0))
    problem = build_problem(nofilter)
    report = run_optimizer(problem, initial_control(nofilter, problem), nofilter)
    v0 = tuple(float(c) for c in report.final_control.values[0])
    return replace(config, v0=v0), report


def resolved_config(config: ExperimentConfig):
    if isinstance(config.v0, str):
        config, _ = resolve_matched_v0(config)
    return config


def run_single(config: ExperimentConfig, out=None, name="optimize"):
    """One optimization run; persists when `out` is given.

    Returns (resolved config, report, run directory or None).
    """
    config = resolved_config(config)
    problem = build_problem(config)
    report = run_optimizer(problem, initial_control(config, problem), config)
    run_dir = None
    if out is not None:
        run_dir = persist_run(out, name, config, problem, report)
    return config, report, run_dir


def simulate(config: ExperimentConfig):
    """Propagate the starting control without optimizing.

    Returns (resolved config, problem, fields, forward ensemble, cost).
    """
    config = resolved_config(config)
    problem = build_problem(config)
    u0 = initial_control(config, problem)
    fields = filter_field(u0, problem.filter_cfg, problem.grid)
    forward = integrate_forward(problem.assembly, fields, problem.basis, problem.grid)
    cost = singlet_yield(forward, problem.assembly, problem.grid)
    return config, problem, fields, forward, cost


# --------------------------------------------------------------------------
# studies


@dataclass(frozen=True)
class SweepRow:
    gamma: float | None  # None marks the no-filter baseline row
    cost: float
    status: str

    @property
    def label(self):
        return "nofilter" if self.gamma is None else repr(self.gamma)


def gamma_sweep(config: ExperimentConfig, gammas=None, max_workers=1):
    """Optimize at each gamma, then append the no-filter baseline row.

    A MaxIters run is recorded with its status, not raised.  v0="matched"
    is resolved once and shared by every row, and the no-filter optimum it
    came from doubles as the baseline.
    """
    gammas = tuple(config.gammas if gammas is None else gammas)
    baseline_report = None
    if isinstance(config.v0, str):
        config, baseline_report = resolve_matched_v0(config)

    def one(gamma):
        run_cfg = replace(config, filter_enabled=True, gamma=gamma)
        _, report, _ = run_single(run_cfg)
        return SweepRow(gamma=gamma, cost=report.final_cost, status=report.status)

    rows = _map_ordered(one, gammas, max_workers)
    if baseline_report is None:
        nofilter = replace(config, filter_enabled=False, v0=(0.0, 0.0, 0.0))
        _, baseline_report, _ = run_single(nofilter)
    rows.append(
        SweepRow(
            gamma=None,
            cost=baseline_report.final_cost,
            status=baseline_report.status,
        )
    )
    return rows


@dataclass(frozen=True)
class YieldLossRow:
    p: int
    u0_label: str
    gamma: float
    j_filtered: float
    j_nofilter: float

    @property
    def loss_percent(self):
        return 100.0 * (self.j_nofilter - self.j_filtered) / self.j_nofilter


def yield_loss_table(
    config: ExperimentConfig,
    starts=YIELD_LOSS_STARTS,
    p_values=None,
    gammas=None,
    max_workers=1,
):
    """Loss of optimal yield due to filtering, per (p, u0, gamma).

    The no-filter reference for each (p, u0) pair is its own optimization
    run in no-filter mode (direct-control switching function), never a
    large-gamma stand-in.  The filter starts at v0 = u0.  Returns (rows,
    summary) where summary maps (p, label) -> (min, max) loss percent.
    """
    p_values = tuple(range(1, config.p_max + 1)) if p_values is None else tuple(p_values)
    gammas = tuple(config.gammas if gammas is None else gammas)

    cases = []
    for p in p_values:
        for start in starts:
            label = "[" + ",".join(f"{c:g}" for c in start) + "]"
            cases.append((p, label, tuple(float(c) for c in start)))

    def one(case):
        p, label, start = case
        base = replace(
            config, p=p, hyperfine=None, u0_kind="constant", u0_vector=start
        )
        nofilter = replace(base, filter_enabled=False, v0=(0.0, 0.0, 0.0))
        _, ref, _ = run_single(nofilter)
        out = []
        for gamma in gammas:
            run_cfg = replace(base, filter_enabled=True, gamma=gamma, v0=start)
            _, rep, _ = run_single(run_cfg)
            out.append(
                YieldLossRow(
                    p=p,
                    u0_label=label,
                    gamma=gamma,
                    j_filtered=rep.final_cost,
                    j_nofilter=ref.final_cost,
                )
            )
        return out

    rows = [row for chunk in _map_ordered(one, cases, max_workers) for row in chunk]
    summary = {}
    for row in rows:
        key = (row.p, row.u0_label)
        lo, hi = summary.get(key, (np.inf, -np.inf))
        summary[key] = (min(lo, row.loss_percent), max(hi, row.loss_percent))
    return rows, summary


@dataclass(frozen=True)
class UniquenessReport:
    """Outcome of the multi-start study.

    classification: Unique | Multiple | Oscillating.  Pairwise discrepancy
    maxima cover all run pairs; the family fields compare the first run of
    each grid family (useful when the families land on distinct optima).
    """

    classification: str
    statuses: tuple
    costs: tuple
    max_pairwise_ctrl: float
    max_pairwise_cost: float
    family_split: ControlComparison
    controls: tuple
    reports: tuple


def uniqueness_study(
    config: ExperimentConfig,
    vertices=STUDY_VERTICES,
    spacing=0.5,
    max_workers=1,
):
    """Run IPMP from every grid start around each vertex and classify.

    Every run solves the same problem, with the filter seed v0 taken from
    the config; only the starting control varies over the 54 grid points.
    Deciding whether the filter regularizes away the start dependence only
    makes sense when the runs share one problem.
    """
    config = replace(config, method="ipmp")
    problem = build_problem(config)
    starts = []
    for vertex in vertices:
        spec = GridSpec(vertex=vertex, spacing=spacing)
        starts.extend(grid_initializers(spec, problem.grid, problem.prism))

    def one(u0):
        return run_optimizer(problem, u0, config)

    reports = _map_ordered(one, starts, max_workers)

    h = problem.grid.h
    n_family = len(reports) // len(vertices)
    max_ctrl = 0.0
    max_cost = 0.0
    for a in range(len(reports)):
        for b in range(a + 1, len(reports)):
            cmp = compare_controls(
                reports[a].final_control,
                reports[b].final_control,
                reports[a].final_cost,
                reports[b].final_cost,
                h,
            )
            max_ctrl = max(max_ctrl, cmp.rel_ctrl)
            max_cost = max(max_cost, cmp.rel_cost)
    family_split = compare_controls(
        reports[0].final_control,
        reports[n_family].final_control,
        reports[0].final_cost,
        reports[n_family].final_cost,
        h,
    )

    statuses = tuple(r.status for r in reports)
    if all(s == STATUS_OSCILLATING for s in statuses):
        classification = "Oscillating"
    elif max_ctrl == 0.0:
        classification = "Unique"
    else:
        classification = "Multiple"
    return UniquenessReport(
        classification=classification,
        statuses=statuses,
        costs=tuple(r.final_cost for r in reports),
        max_pairwise_ctrl=max_ctrl,
        max_pairwise_cost=max_cost,
        family_split=family_split,
        controls=tuple(r.final_control for r in reports),
        reports=tuple(reports),
    )


def _map_ordered(fn, items, max_workers):
    """Map preserving input order; thread pool when max_workers > 1."""
    if max_workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# persistence


def canonical_json(document):
    """Deterministic JSON text: sorted keys, no whitespace drift."""
    return json.dumps(document, sort_keys=True, separators=(",", ":"))


def run_id(config: ExperimentConfig, name):
    payload = canonical_json({"experiment": name, "config": config.to_dict()})
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def _csv_cell(value):
    if isinstance(value, (bool, np.bool_)):
        return str(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))  # shortest round-trip digits
    return str(value)


def write_csv(path, header, rows):
    """CSV with repr-formatted floats (bit-faithful round trips)."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(c) for c in row) + "\n")


def report_document(report: OptimizerReport):
    doc = {
        "status": report.status,
        "iterations": report.iterations,
        "final_cost": float(report.final_cost),
        "cost_history": [float(c) for c in report.cost_history],
    }
    if report.cycle_members is not None:
        doc["cycle"] = {"period": len(report.cycle_members)}
    return doc


def persist_run(out, name, config, problem, report, extra=None):
    """Write the standard run layout; returns the run directory."""
    rid = run_id(config, name)
    run_dir = os.path.join(out, name, rid)
    os.makedirs(run_dir, exist_ok=True)

    with open(os.path.join(run_dir, "config.json"), "w") as fh:
        fh.write(canonical_json(config.to_dict()) + "\n")
    with open(os.path.join(run_dir, "report.json"), "w") as fh:
        fh.write(canonical_json(report_document(report)) + "\n")

    write_csv(
        os.path.join(run_dir, "cost_history.csv"),
        ("iteration", "cost"),
        list(enumerate(report.cost_history)),
    )
    grid = problem.grid
    nodes = grid.nodes
    left = nodes[:-1]
    u = report.final_control.values
    write_csv(
        os.path.join(run_dir, "control.csv"),
        ("t", "u_x", "u_y", "u_z"),
        [(left[k], u[k, 0], u[k, 1], u[k, 2]) for k in range(grid.steps)],
    )
    v = report.final_field.node_values
    write_csv(
        os.path.join(run_dir, "field.csv"),
        ("t", "v_x", "v_y", "v_z"),
        [(nodes[k], v[k, 0], v[k, 1], v[k, 2]) for k in range(grid.steps + 1)],
    )
    phi = report.final_switching
    if phi is None:
        fields, forward, _ = problem.evaluate(report.final_control)
        _, phi = problem.gradient(fields, forward)
    write_csv(
        os.path.join(run_dir, "switching.csv"),
        ("t", "phi_x", "phi_y", "phi_z"),
        [
            (nodes[k], phi.values[k, 0], phi.values[k, 1], phi.values[k, 2])
            for k in range(grid.steps + 1)
        ],
    )
    if extra:
        for filename, document in extra.items():
            with open(os.path.join(run_dir, filename), "w") as fh:
                fh.write(canonical_json(document) + "\n")
    return run_dir


def persist_sweep(out, config, rows):
    """sweep.csv under its own run directory; returns the directory."""
    rid = run_id(config, "sweep-gamma")
    run_dir = os.path.join(out, "sweep-gamma", rid)
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.json"), "w") as fh:
        fh.write(canonical_json(config.to_dict()) + "\n")
    write_csv(
        os.path.join(run_dir, "sweep.csv"),
        ("gamma", "J", "status"),
        [(row.label, row.cost, row.status) for row in rows],
    )
    return run_dir


def persist_yield_loss(out, config, rows, summary):
    rid = run_id(config, "yield-loss")
    run_dir = os.path.join(out, "yield-loss", rid)
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.json"), "w") as fh:
        fh.write(canonical_json(config.to_dict()) + "\n")
    write_csv(
        os.path.join(run_dir, "yield_loss.csv"),
        ("p", "u0", "gamma", "J_filtered", "J_nofilter", "loss_percent"),
        [
            (
                row.p,
                row.u0_label,
                row.gamma,
                row.j_filtered,
                row.j_nofilter,
                row.loss_percent,
            )
            for row in rows
        ],
    )
    summary_doc = [
        {"p": p, "u0": label, "min_loss_percent": lo, "max_loss_percent": hi}
        for (p, label), (lo, hi) in sorted(summary.items())
    ]
    with open(os.path.join(run_dir, "summary.json"), "w") as fh:
        fh.write(canonical_json(summary_doc) + "\n")
    return run_dir


def persist_grid_study(out, config, study: UniquenessReport):
    rid = run_id(config, "grid-study")
    run_dir = os.path.join(out, "grid-study", rid)
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.json"), "w") as fh:
        fh.write(canonical_json(config.to_dict()) + "\n")
    document = {
        "classification": study.classification,
        "max_pairwise_ctrl": study.max_pairwise_ctrl,
        "max_pairwise_cost": study.max_pairwise_cost,
        "family_split": {
            "rel_ctrl": study.family_split.rel_ctrl,
            "rel_cost": study.family_split.rel_cost,
        },
        "statuses": list(study.statuses),
        "costs": [float(c) for c in study.costs],
    }
    with open(os.path.join(run_dir, "report.json"), "w") as fh:
        fh.write(canonical_json(document) + "\n")
    write_csv(
        os.path.join(run_dir, "runs.csv"),
        ("index", "status", "J"),
        [(k, study.statuses[k], study.costs[k]) for k in range(len(study.costs))],
    )
    return run_dir
