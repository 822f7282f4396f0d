"""Command-line front end: topology export, placement, evaluation, sweeps, self-checks.

Outputs are plain CSV plus a resolved scenario echo and a version stamp, and
are byte-identical across repeated runs with the same inputs and seed.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import __version__
from .evaluator import STRATEGIES, evaluate, make_plan, sweep
from .placement import FeasibilityError, read_plan, write_plan
from .scenario import (
    Scenario,
    ScenarioError,
    SWEEP_AXES,
    build_runtime,
    load_scenario,
    write_resolved,
)
from .validation import run_batteries

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_VALIDATION = 4
EXIT_IO = 5

OUT_DIR_ENV = "LEOMOE_OUT"


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _out_dir(args) -> Path:
    if args.out is not None:
        return Path(args.out)
    env = os.environ.get(OUT_DIR_ENV)
    if env:
        return Path(env)
    return Path("leomoe-out") / args.command


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_rows(path: Path, header: str, rows: list[str], preamble: list[str] | None = None) -> None:
    lines = list(preamble or []) + [header] + rows
    _write_text(path, "\n".join(lines) + "\n")


def _prepare_out(args, scenario: Scenario) -> Path:
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "version.txt", f"leomoe {__version__}\n")
    write_resolved(scenario, out / "scenario.resolved.ini")
    return out


def _seed(args, scenario: Scenario) -> int:
    return scenario.eval.seed if args.seed is None else args.seed


def cmd_topology(args) -> int:
    scenario = load_scenario(args.scenario)
    out = _prepare_out(args, scenario)
    seed = _seed(args, scenario)
    runtime = build_runtime(scenario)
    model = runtime.topo

    edge_rows: list[str] = []
    summary_rows: list[str] = []
    n_disconnected = 0
    n_sats = scenario.constellation.n_sats
    for real in model.sequence(seed):
        for uid, vid in real.edge_ids:
            edge_rows.append(f"{real.slot},{uid},{vid}")
        e = real.edge_ids
        graph = csr_matrix(
            (np.ones(2 * e.shape[0]), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])),
            shape=(n_sats, n_sats),
        )
        n_comp, _ = connected_components(graph, directed=False)
        connected = int(n_comp == 1)
        n_disconnected += 1 - connected
        mean_deg = 2.0 * real.n_edges / n_sats
        summary_rows.append(f"{real.slot},{real.n_edges},{repr(mean_deg)},{connected}")

    n_slots = scenario.constellation.n_slots
    frac = n_disconnected / n_slots
    _write_rows(out / "edges.csv", "slot,u_id,v_id", edge_rows)
    _write_rows(
        out / "summary.csv",
        "slot,n_edges,mean_degree,connected",
        summary_rows,
        preamble=[f"# seed: {seed}", f"# disconnect_fraction: {repr(frac)}"],
    )
    print(f"wrote {out / 'edges.csv'} and {out / 'summary.csv'} "
          f"(disconnect fraction {frac:.4f})")
    return EXIT_OK


def cmd_place(args) -> int:
    scenario = load_scenario(args.scenario)
    out = _prepare_out(args, scenario)
    seed = _seed(args, scenario)
    runtime = build_runtime(scenario)
    plan = make_plan(scenario, args.strategy, seed, runtime=runtime)
    plan.validate(
        subnets=runtime.subnets if args.strategy != "rand_place" else None,
        max_experts_per_sat=scenario.compute.max_experts_per_sat,
    )
    write_plan(plan, out / "plan.csv")
    print(f"wrote {out / 'plan.csv'} ({args.strategy}, seed {seed})")

    if args.strategy == "spacemoe":
        from .routing import expected_path_latencies_bulk

        lat = expected_path_latencies_bulk(
            runtime.topo,
            scenario.token,
            [
                [c for c in spec.nodes if c != runtime.central_gateways[spec.layer - 1]]
                for spec in runtime.subnets
            ],
            runtime.central_gateways,
            scenario.compute.compute_s,
            n_survival_samples=scenario.eval.n_survival_samples,
            seed=seed,
            disconnect_policy=scenario.eval.disconnect_policy,
            penalty_s=scenario.eval.penalty_s,
        )
        rows = []
        for layer_lat in lat:
            for coord, val in zip(layer_lat.candidates, layer_lat.values):
                rows.append(f"{layer_lat.layer},{coord.x},{coord.y},{_fmt(val)}")
        _write_rows(
            out / "path_latencies.csv", "layer,x,y,expected_latency_s", rows,
            preamble=[f"# seed: {seed}"],
        )
        print(f"wrote {out / 'path_latencies.csv'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.trials is not None:
        import dataclasses

        scenario = dataclasses.replace(
            scenario, eval=dataclasses.replace(scenario.eval, n_trials=args.trials)
        )
    out = _prepare_out(args, scenario)
    seed = _seed(args, scenario)
    runtime = build_runtime(scenario)
    if (args.plan is None) == (args.strategy is None):
        raise ScenarioError("evaluate needs exactly one of --plan or --strategy")
    if args.plan is not None:
        plan = read_plan(args.plan)
        if plan.n_layers != scenario.moe.n_layers or plan.n_experts != scenario.moe.n_experts:
            raise ScenarioError(
                f"plan shape {plan.n_layers} layers x {plan.n_experts} experts does not "
                f"match scenario {scenario.moe.n_layers} x {scenario.moe.n_experts}"
            )
    else:
        plan = make_plan(scenario, args.strategy, seed, runtime=runtime)
    plan.validate(max_experts_per_sat=scenario.compute.max_experts_per_sat)

    report = evaluate(plan, scenario, scenario.eval.n_trials, seed, runtime=runtime)
    meta = [
        ("strategy", report.strategy_tag),
        ("seed", report.seed),
        ("n_trials", report.n_trials),
        ("n_kept", report.n_kept),
        ("disconnect_fraction", report.disconnect_fraction),
        ("e2e_mean_s", report.e2e_mean),
        ("e2e_std_s", report.e2e_std),
        ("e2e_min_s", report.e2e_min),
        ("e2e_max_s", report.e2e_max),
    ]
    _write_rows(out / "report.csv", "metric,value", [f"{k},{_fmt(v)}" for k, v in meta])
    _write_rows(
        out / "layers.csv",
        "layer,mean_s,std_s",
        [
            f"{i + 1},{_fmt(report.per_layer_mean[i])},{_fmt(report.per_layer_std[i])}"
            for i in range(report.n_layers)
        ],
    )
    print(
        f"{report.strategy_tag}: e2e {report.e2e_mean:.4f} s/token over "
        f"{report.n_kept}/{report.n_trials} trials (disconnect fraction "
        f"{report.disconnect_fraction:.4f}); wrote {out / 'report.csv'}"
    )
    return EXIT_OK


def _load_grid(path: Path) -> dict[str, list]:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh, source=str(path))
    except configparser.Error as exc:
        raise ScenarioError(f"cannot parse grid {path}: {exc}") from exc
    grid: dict[str, list] = {}
    for section in parser.sections():
        if section not in SWEEP_AXES:
            raise ScenarioError(f"unknown sweep axis [{section}] (known: {', '.join(SWEEP_AXES)})")
        raw = parser.get(section, "values", fallback=None)
        if raw is None:
            raise ScenarioError(f"grid section [{section}] needs a 'values' key")
        vals = [tok.strip() for tok in raw.split(",") if tok.strip()]
        if not vals:
            raise ScenarioError(f"grid section [{section}] lists no values")
        grid[section] = vals
    if not grid:
        raise ScenarioError(f"grid {path} defines no axes")
    return grid


def cmd_sweep(args) -> int:
    scenario = load_scenario(args.scenario)
    grid = _load_grid(Path(args.grid))
    out = _prepare_out(args, scenario)
    seed = _seed(args, scenario)
    n_trials = args.trials if args.trials is not None else scenario.eval.n_trials
    strategies = args.strategies.split(",") if args.strategies else list(STRATEGIES)
    cells = sweep(scenario, grid, strategies, n_trials, seed)
    by_axis: dict[str, list[str]] = {}
    for cell in cells:
        r = cell.report
        by_axis.setdefault(cell.axis, []).append(
            f"{cell.value_label},{cell.strategy},{_fmt(r.e2e_mean)},{_fmt(r.e2e_std)},"
            f"{r.n_trials},{r.n_kept},{_fmt(r.disconnect_fraction)}"
        )
    for axis, rows in by_axis.items():
        path = out / f"sweep_{axis}.csv"
        _write_rows(
            path,
            "value,strategy,e2e_mean_s,e2e_std_s,n_trials,n_kept,disconnect_fraction",
            rows,
            preamble=[f"# seed: {seed}"],
        )
        print(f"wrote {path}")
    return EXIT_OK


def cmd_validate(args) -> int:
    results = run_batteries(level=args.level)
    failed = False
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: {r.n_instances} instances, {r.n_failures} failures")
        for d in r.details:
            print(f"    {d}")
        failed = failed or not r.passed
    return EXIT_VALIDATION if failed else EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="leomoe",
        description="Simulate and optimize distributed MoE inference over a polar LEO constellation.",
    )
    p.add_argument("--version", action="version", version=f"leomoe {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=True):
        if scenario:
            sp.add_argument("--scenario", required=True,
                            help="scenario .ini path or builtin name (e.g. paper_table2)")
        sp.add_argument("--out", default=None,
                        help=f"output directory (default: $ {OUT_DIR_ENV} or ./leomoe-out/<cmd>)")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the scenario's seed")

    sp = sub.add_parser("topology", help="export sampled per-slot link graphs")
    common(sp)
    sp.set_defaults(fn=cmd_topology)

    sp = sub.add_parser("place", help="build a placement plan")
    common(sp)
    sp.add_argument("--strategy", required=True, choices=STRATEGIES)
    sp.set_defaults(fn=cmd_place)

    sp = sub.add_parser("evaluate", help="Monte-Carlo token latency of a plan")
    common(sp)
    sp.add_argument("--plan", default=None, help="plan.csv produced by `leomoe place`")
    sp.add_argument("--strategy", default=None, choices=STRATEGIES,
                    help="build the plan on the fly instead of --plan")
    sp.add_argument("--trials", type=int, default=None, help="override [eval] n_trials")
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("sweep", help="evaluate strategies over a parameter grid")
    common(sp)
    sp.add_argument("--grid", required=True, help="grid .ini: one section per axis, values = a, b, c")
    sp.add_argument("--trials", type=int, default=None, help="override [eval] n_trials")
    sp.add_argument("--strategies", default=None,
                    help="comma list (default: all four strategies)")
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("validate", help="run randomized self-check batteries")
    sp.add_argument("--level", choices=("small", "full"), default="small")
    sp.set_defaults(fn=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FeasibilityError as exc:
        print(f"error: infeasible configuration: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
