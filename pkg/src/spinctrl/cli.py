"""Command-line interface: config loading, subcommands, exit codes.

Exit status: 0 success; 1 configuration error; 2 numerical abort (state
amplitudes overflowed); 3 an optimizer hit its iteration cap and --strict
was given.  Configs are single JSON documents; --override patches dotted
keys on top.  Results land under --out, the SPINCTRL_OUT environment
variable, or ./results, in that order.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from .dynamics import ControlSignal, IntegrationOverflow, Prism
from .experiments import (
    ConfigError,
    ExperimentConfig,
    canonical_json,
    compare_controls,
    config_from_dict,
    gamma_sweep,
    persist_grid_study,
    persist_run,
    persist_sweep,
    persist_yield_loss,
    run_id,
    run_single,
    simulate,
    uniqueness_study,
    write_csv,
    yield_loss_table,
)
from .optimize import STATUS_MAX_ITERS

CONFIG_KEY_HELP = """\
config keys (JSON document; --override key=value patches single keys):
  p                               proton count (1..7)
  t_final                         pulse duration, us (default 0.5)
  steps                           time intervals (default 200)
  seed                            seed recorded for randomized diagnostics
  constants.gyro                  gyromagnetic ratio, rad/us/mT
  constants.k_singlet             singlet recombination rate, 1/us
  constants.k_triplet             triplet recombination rate, 1/us
  hyperfine                       p rows of [Ax, Ay, Az], mT
  prism.lower / prism.upper       control box corners, uT
  filter.enabled                  true: first-order filter; false: v = u
  filter.gamma                    filter rate, 1/us
  filter.v0                       initial field, uT 3-vector, or "matched"
  u0.kind                         constant | grid | explicit
  u0.vector                       constant starting control, uT
  u0.values                       explicit steps x 3 control table, uT
  u0.grid.vertex                  grid anchor vertex, uT
  u0.grid.spacing                 grid spacing, uT (default 0.5)
  optimizer.method                gpm | ipmp  (shorthand: optimizer=ipmp)
  optimizer.gpm.eps_cost          relative cost tolerance
  optimizer.gpm.eps_ctrl          relative control-change tolerance
  optimizer.gpm.max_iters         iteration cap
  optimizer.gpm.lambda0           first step size (default: auto)
  optimizer.gpm.step_scale        multiplier on the Barzilai-Borwein step
  optimizer.gpm.bb_unsquared_denominator  unsquared-norm step variant
  optimizer.ipmp.max_iters        iteration cap
  optimizer.ipmp.cycle_window     cycle-detection history length
  sweep.gammas                    gamma values for sweep-gamma/yield-loss, 1/us
  sweep.p_max                     largest proton count in yield-loss
"""


def _parse_override_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text  # bare words are strings, e.g. filter.v0=matched


def apply_override(document, assignment):
    """Patch `document` with one dotted key=value string."""
    if "=" not in assignment:
        raise ConfigError(f"override must look like key=value, got: {assignment}")
    key, _, text = assignment.partition("=")
    key = key.strip()
    if key == "optimizer":  # shorthand for the method name
        key = "optimizer.method"
    template = ExperimentConfig().to_dict()
    parts = key.split(".")
    node = template
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown config key: {key}")
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(f"unknown config key: {key}")
    target = document
    for part in parts[:-1]:
        target = target.setdefault(part, {})
        if not isinstance(target, dict):
            raise ConfigError(f"config key {key} collides with a non-object value")
    target[parts[-1]] = _parse_override_value(text)
    return document


def load_config(path, overrides=()):
    """JSON file (or nothing) + overrides -> validated ExperimentConfig."""
    if path is None:
        document = {}
    else:
        try:
            with open(path) as fh:
                document = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"config parse error at line {exc.lineno} column {exc.colno}: {exc.msg}"
            ) from None
    for assignment in overrides:
        document = apply_override(document, assignment)
    return config_from_dict(document)


def _out_dir(args):
    return args.out or os.environ.get("SPINCTRL_OUT") or "results"


def _configure_logging(verbosity):
    level = logging.WARNING
    if verbosity >= 2:
        level = logging.DEBUG
    elif verbosity == 1:
        level = logging.INFO
    logging.basicConfig(stream=sys.stderr, level=level, format="%(message)s")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spinctrl",
        description="Optimal-control toolkit for radical-pair spin dynamics.",
        epilog=CONFIG_KEY_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="per-iteration logs on stderr (-vv for debug)",
    )
    sub = parser.add_subparsers(dest="command", metavar="subcommand")

    def common(p, needs_out=True):
        p.add_argument("--config", help="JSON config file (omit for defaults)")
        p.add_argument(
            "--override",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="dotted-key config patch, repeatable",
        )
        if needs_out:
            p.add_argument(
                "--out", help="results directory (fallback: $SPINCTRL_OUT, ./results)"
            )
        p.add_argument(
            "--strict",
            action="store_true",
            help="exit 3 when an optimizer stops at its iteration cap",
        )

    p_sim = sub.add_parser(
        "simulate", help="propagate the starting control, no optimization"
    )
    common(p_sim)
    p_sim.add_argument(
        "--dump-states",
        action="store_true",
        help="also write the full state trajectory (states.csv, large)",
    )

    p_opt = sub.add_parser("optimize", help="run the configured optimizer once")
    common(p_opt)

    p_sweep = sub.add_parser(
        "sweep-gamma", help="optimize across filter rates plus no-filter baseline"
    )
    common(p_sweep)

    p_yield = sub.add_parser(
        "yield-loss", help="filtered-vs-no-filter yield loss table"
    )
    common(p_yield)

    p_grid = sub.add_parser(
        "grid-study", help="multi-start uniqueness study (54 grid starts)"
    )
    common(p_grid)

    p_cmp = sub.add_parser("compare", help="compare the controls of two runs")
    p_cmp.add_argument("run_a", help="first run directory (reference)")
    p_cmp.add_argument("run_b", help="second run directory")

    p_val = sub.add_parser(
        "validate", help="validate a config and echo its resolved form"
    )
    common(p_val, needs_out=False)

    return parser


def _echo_config(config):
    print(canonical_json(config.to_dict()))


def cmd_simulate(args):
    config = load_config(args.config, args.override)
    config, problem, fields, forward, cost = simulate(config)
    out = _out_dir(args)
    rid = run_id(config, "simulate")
    run_dir = os.path.join(out, "simulate", rid)
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.json"), "w") as fh:
        fh.write(canonical_json(config.to_dict()) + "\n")
    with open(os.path.join(run_dir, "report.json"), "w") as fh:
        fh.write(canonical_json({"cost": float(cost)}) + "\n")
    nodes = problem.grid.nodes
    v = fields.node_values
    norms = np.einsum("ksl,ksl->k", forward.states.conj(), forward.states).real
    norms /= forward.count  # mean over the ensemble; the law is per state
    write_csv(
        os.path.join(run_dir, "field.csv"),
        ("t", "v_x", "v_y", "v_z", "norm_sq"),
        [
            (nodes[k], v[k, 0], v[k, 1], v[k, 2], norms[k])
            for k in range(len(nodes))
        ],
    )
    if args.dump_states:
        rows = []
        states = forward.states
        for k in range(states.shape[0]):
            for l in range(states.shape[2]):
                for c in range(states.shape[1]):
                    z = states[k, c, l]
                    rows.append((nodes[k], l, c, z.real, z.imag))
        write_csv(
            os.path.join(run_dir, "states.csv"),
            ("t", "state", "component", "re", "im"),
            rows,
        )
    print(f"simulate: J={float(cost):.10f} run={run_dir}")
    return 0


def cmd_optimize(args):
    config = load_config(args.config, args.override)
    config, report, run_dir = run_single(config, out=_out_dir(args))
    print(
        f"optimize[{config.method}]: status={report.status} "
        f"iterations={report.iterations} J={report.final_cost:.10f} run={run_dir}"
    )
    if args.strict and report.status == STATUS_MAX_ITERS:
        return 3
    return 0


def cmd_sweep_gamma(args):
    config = load_config(args.config, args.override)
    rows = gamma_sweep(config)
    run_dir = persist_sweep(_out_dir(args), config, rows)
    for row in rows:
        print(f"gamma={row.label}: J={row.cost:.10f} status={row.status}")
    print(f"sweep-gamma: run={run_dir}")
    if args.strict and any(row.status == STATUS_MAX_ITERS for row in rows):
        return 3
    return 0


def cmd_yield_loss(args):
    config = load_config(args.config, args.override)
    rows, summary = yield_loss_table(config)
    run_dir = persist_yield_loss(_out_dir(args), config, rows, summary)
    for (p, label), (lo, hi) in sorted(summary.items()):
        print(f"p={p} u0={label}: loss% in [{lo:.4f}, {hi:.4f}]")
    print(f"yield-loss: run={run_dir}")
    return 0


def cmd_grid_study(args):
    config = load_config(args.config, args.override)
    study = uniqueness_study(config)
    run_dir = persist_grid_study(_out_dir(args), config, study)
    print(
        f"grid-study: classification={study.classification} "
        f"max_ctrl={study.max_pairwise_ctrl:.6f} "
        f"max_cost={study.max_pairwise_cost:.3e} run={run_dir}"
    )
    if args.strict and any(s == STATUS_MAX_ITERS for s in study.statuses):
        return 3
    return 0


def _read_run(run_dir):
    control_path = os.path.join(run_dir, "control.csv")
    report_path = os.path.join(run_dir, "report.json")
    with open(control_path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:4] != ["t", "u_x", "u_y", "u_z"]:
            raise ConfigError(f"{control_path} is not a control table")
        values = np.array([[float(c) for c in row[1:4]] for row in reader])
    with open(report_path) as fh:
        report = json.load(fh)
    cost = report.get("final_cost", report.get("cost"))
    if cost is None:
        raise ConfigError(f"{report_path} has no cost entry")
    return values, float(cost)


def cmd_compare(args):
    u1, j1 = _read_run(args.run_a)
    u2, j2 = _read_run(args.run_b)
    if u1.shape != u2.shape:
        raise ConfigError(
            f"control grids differ: {u1.shape[0]} vs {u2.shape[0]} intervals"
        )
    hull = Prism(
        lower=np.minimum(u1.min(axis=0), u2.min(axis=0)),
        upper=np.maximum(u1.max(axis=0), u2.max(axis=0)),
    )
    cmp = compare_controls(
        ControlSignal(u1, hull), ControlSignal(u2, hull), j1, j2
    )
    tag = " (absolute: reference control is zero)" if cmp.absolute else ""
    print(f"rel_ctrl={cmp.rel_ctrl:.6f}{tag}")
    print(f"rel_cost={cmp.rel_cost:.6e}")
    return 0


def cmd_validate(args):
    config = load_config(args.config, args.override)
    _echo_config(config)
    return 0


HANDLERS = {
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "sweep-gamma": cmd_sweep_gamma,
    "yield-loss": cmd_yield_loss,
    "grid-study": cmd_grid_study,
    "compare": cmd_compare,
    "validate": cmd_validate,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 1
    _configure_logging(args.verbose)
    try:
        return HANDLERS[args.command](args)
    except IntegrationOverflow as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
