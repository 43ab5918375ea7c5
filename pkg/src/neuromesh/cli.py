"""Command-line harness: run scenarios, sweep parameter grids, self-check.

Exit status separates infrastructure failures from experiment outcomes:
``run`` exits 0 whenever the scenario executed cleanly, even if every run
inside it failed its task; config and runtime errors exit nonzero with a
field-path diagnostic. Task outcomes live in the emitted CSVs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .assignment import (
    AssignmentModel,
    run_assignment_scenario,
    sr_metric,
    tcp_metric,
)
from .config import (
    SCHEMA_DOC,
    build_aggregation,
    build_medium,
    build_topology,
    load_config,
)
from .control import (
    ControlPolicy,
    NavigationParams,
    UnicycleState,
    run_navigation_scenario,
)
from .errors import ConfigError, NeuromeshError
from .netsim import MeshSimulator, measure_link_quality, scalability_sweep
from .pipeline import (
    PipelineStats,
    identity_stage,
    run_pipeline,
    run_sequential,
    with_delay,
)
from .reporting import write_csv, write_manifest
from .selftest import run_selftest


def _run_timing(cfg: dict, outdir: Path) -> list[Path]:
    delays = [d / 1000.0 for d in cfg["timing"]["delays_ms"]]
    items = [np.float32(i) for i in range(cfg["timing"]["items"])]
    stages = [with_delay(identity_stage, d) for d in delays]
    _, parallel = run_pipeline(*stages, items)
    _, sequential = run_sequential(*stages, items)
    rows = [
        ["parallel"] + parallel.to_csv_row(agent_id=0),
        ["sequential"] + sequential.to_csv_row(agent_id=0),
    ]
    columns = ("mode",) + PipelineStats.CSV_COLUMNS
    return [write_csv(outdir / "timing.csv", "timing", columns, rows)]


def _run_comms(cfg: dict, outdir: Path) -> list[Path]:
    section = cfg["comms"]
    medium = build_medium(cfg["network"])
    if section["scenario"] == "sweep":
        rows = scalability_sweep(
            section["team_sizes"],
            payload_bytes=section["payload_bytes"],
            offered_hz=section["offered_hz"],
            medium=medium,
            duration_s=section["duration_s"],
        )
        csv_rows = [
            [r.team_size, f"{r.offered_hz:.2f}", f"{r.delivered_mean:.2f}",
             f"{r.delivered_std:.2f}", f"{r.oracle_value:.2f}"]
            for r in rows
        ]
        columns = ("team_size", "offered_hz", "delivered_mean", "delivered_std", "oracle_value")
        return [write_csv(outdir / "comms_sweep.csv", "comms-sweep", columns, csv_rows)]
    topo = build_topology(2, cfg["network"])
    sim = MeshSimulator(topo, medium)
    quality = measure_link_quality(
        sim, 0, 1, section["payload_bytes"], section["offered_hz"], section["duration_s"]
    )
    columns = ("latency_mean_ms", "jitter_ms", "loss_pct", "throughput_msgs_per_s")
    row = [f"{quality.latency_mean_ns / 1e6:.3f}", f"{quality.jitter_ns / 1e6:.3f}",
           f"{quality.loss_pct:.3f}", f"{quality.throughput_msgs_per_s:.2f}"]
    return [write_csv(outdir / "comms_quality.csv", "comms-quality", columns, [row])]


def _assignment_model(section: dict) -> AssignmentModel | None:
    if section["mode"] != "learned":
        return None
    w = section["weights"]
    return AssignmentModel.load(
        w["encoder"], w["attention"], w["decoder"], heads=w["heads"], layers=w["layers"]
    )


def _instance_costs(section: dict, n: int, seed: int, test_id: int) -> np.ndarray:
    if section["costs"] != "random":
        costs = np.asarray(section["costs"], dtype=np.float32)
        if costs.shape != (n, n):
            raise ConfigError("assignment.costs", f"expected a {n}x{n} matrix, got {costs.shape}")
        return costs
    lo, hi = section["cost_range"]
    rng = np.random.default_rng((seed, test_id))
    return rng.uniform(lo, hi, size=(n, n)).astype(np.float32)


def _run_assignment(cfg: dict, outdir: Path, budget=None, tag: str = "") -> list[Path]:
    section = cfg["assignment"]
    n = cfg["team_size"]
    if section["n_goals"] != n:
        raise ConfigError("assignment.n_goals",
                          f"one-to-one matching needs n_goals == team_size ({n})")
    model = _assignment_model(section)
    topo = build_topology(n, cfg["network"])
    medium = build_medium(cfg["network"])
    agg = build_aggregation(cfg["aggregation"])
    if budget is None:
        budget = section["message_budget_bytes"]
    rows = []
    covered_total = 0
    pairs = []
    for test_id in range(section["n_tests"]):
        costs = _instance_costs(section, n, cfg["seed"], test_id)
        outcome = run_assignment_scenario(
            costs, mode=section["mode"], message_budget_bytes=budget,
            agg_config=agg, topology=topo, medium=medium, model=model,
        )
        covered_total += outcome.covered_goals
        if outcome.covered_goals == n and not outcome.failed:
            pairs.append((outcome.cost_out, outcome.cost_opt))
        rows.append([
            test_id,
            outcome.covered_goals,
            "" if outcome.cost_out is None else f"{outcome.cost_out:.4f}",
            f"{outcome.cost_opt:.4f}",
            int(outcome.failed),
        ])
    sr = sr_metric(covered_total, n, section["n_tests"])
    tcp = tcp_metric(pairs) if pairs else float("nan")
    print(f"assignment{tag}: SR = {sr:.2f} %  TCP = {tcp:.4f} % over {len(pairs)} covered tests")
    columns = ("test_id", "covered_goals", "C_out", "C_opt", "failed")
    name = f"assignment{tag}.csv"
    return [write_csv(outdir / name, "assignment", columns, rows)]


def _control_team(cfg: dict, run_id: int):
    section = cfg["control"]
    n = cfg["team_size"]
    half = section["arena_half_extent_m"]
    rng = np.random.default_rng((cfg["seed"], run_id))
    states, goals = {}, {}
    for a in range(n):
        if section["initial_poses"] == "random":
            pose = rng.uniform(-half, half, size=2)
            heading = rng.uniform(-np.pi, np.pi)
        else:
            x, y, heading = section["initial_poses"][a]
            pose = np.array([x, y])
        states[a] = UnicycleState(pose, heading)
        if section["goals"] == "random":
            goals[a] = rng.uniform(-half, half, size=2)
        else:
            goals[a] = np.asarray(section["goals"][a], dtype=np.float64)
    return states, goals


def _run_control(cfg: dict, outdir: Path) -> list[Path]:
    section = cfg["control"]
    policy = None
    if section["policy"] == "learned":
        w = section["weights"]
        policy = ControlPolicy.load(w["encoder"], w["pairwise"], w["decoder"])
    topo = build_topology(cfg["team_size"], cfg["network"])
    medium = build_medium(cfg["network"])
    agg = build_aggregation(cfg["aggregation"])
    rows = []
    trajectory_rows = []
    successes = 0
    for run_id in range(section["n_runs"]):
        states, goals = _control_team(cfg, run_id)
        params = NavigationParams(
            success_radius_m=section["success_radius_m"],
            collision_radius_m=section["collision_radius_m"],
            control_rate_hz=section["control_rate_hz"],
            max_steps=section["max_steps"],
            v_bounds=section["v_bounds"],
            omega_bounds=section["omega_bounds"],
            deterministic_actions=section["deterministic_actions"],
            seed=cfg["seed"] + run_id,
        )
        outcome = run_navigation_scenario(
            states, goals, policy=policy, params=params, topology=topo, medium=medium,
            agg_config=agg, scripted=section["policy"] == "scripted",
            record_trajectory=section["write_trajectories"],
        )
        successes += outcome.success
        rows.append([
            run_id, int(outcome.success), outcome.steps,
            f"{outcome.min_pairwise_distance_m:.4f}",
        ])
        for step, agent, x, y, heading in outcome.trajectory:
            trajectory_rows.append(
                [run_id, step, agent, f"{x:.4f}", f"{y:.4f}", f"{heading:.4f}"]
            )
    print(f"control: {successes}/{section['n_runs']} runs succeeded")
    outputs = [write_csv(
        outdir / "control_runs.csv", "control-runs",
        ("run_id", "success", "steps", "min_pairwise_distance_m"), rows,
    )]
    if section["write_trajectories"]:
        outputs.append(write_csv(
            outdir / "control_trajectories.csv", "trajectory",
            ("run_id", "step", "agent", "x_m", "y_m", "heading_rad"), trajectory_rows,
        ))
    return outputs


_RUNNERS = {
    "timing": _run_timing,
    "comms": _run_comms,
    "assignment": _run_assignment,
    "control": _run_control,
}


def _cmd_run(cfg: dict) -> int:
    outdir = Path(cfg["output_dir"])
    outputs = _RUNNERS[cfg["task"]](cfg, outdir)
    manifest = write_manifest(outdir / "run_manifest.json", cfg, outputs)
    for path in outputs + [manifest]:
        print(f"wrote {path}")
    return 0


def _cmd_sweep(cfg: dict) -> int:
    outdir = Path(cfg["output_dir"])
    sweep = cfg.get("sweep") or {}
    outputs: list[Path] = []
    if cfg["task"] == "assignment":
        budgets = sweep.get("message_budget_bytes")
        if not budgets:
            raise ConfigError("sweep.message_budget_bytes", "required for an assignment sweep")
        for budget in budgets:
            outputs += _run_assignment(cfg, outdir, budget=budget, tag=f"_budget{budget}")
    elif cfg["task"] == "comms":
        sizes = sweep.get("team_sizes")
        if sizes:
            cfg["comms"]["team_sizes"] = sizes
        outputs += _run_comms(cfg, outdir)
    else:
        raise ConfigError("sweep", f"no sweep defined for task {cfg['task']!r}")
    manifest = write_manifest(outdir / "run_manifest.json", cfg, outputs)
    for path in outputs + [manifest]:
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="neuromesh",
        description="Decentralized multi-agent inference scenarios and network experiments",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute the scenario described by a config file")
    p_run.add_argument("config", help="path to a JSON scenario config")

    p_sweep = sub.add_parser("sweep", help="run a parameter grid from the config's sweep section")
    p_sweep.add_argument("config", help="path to a JSON scenario config")

    p_self = sub.add_parser("selftest", help="run the fast acceptance subset")
    p_self.add_argument("--weights-dir", default=None,
                        help="directory with optional learned-mode weight files")

    sub.add_parser("print-schema", help="print the config schema as JSON")

    args = parser.parse_args(argv)
    try:
        if args.command == "print-schema":
            print(json.dumps(SCHEMA_DOC, indent=2))
            return 0
        if args.command == "selftest":
            return run_selftest(weights_dir=args.weights_dir)
        cfg = load_config(args.config)
        if args.command == "run":
            return _cmd_run(cfg)
        return _cmd_sweep(cfg)
    except NeuromeshError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
