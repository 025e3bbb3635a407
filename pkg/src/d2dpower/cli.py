"""Command line entry point: run, sweep, oracle, priority-table.

Exit status: 0 success, 1 configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .config import (ConfigError, build_oracle, build_sim_config, config_to_dict,
                     load_settings, oracle_to_dict)
from .controller import ALL_POLICIES
from .mdp import (build_quantized_mdp, clipped_mass, compare_priority, export_policy_table,
                  export_value_table, flow_params_for, relative_value_iteration)
from .priority import build_per_flow, build_priorities, export_priority_table
from .sim import SimConfig, episode_rates, monte_carlo, topology_seeds, with_overrides
from .topology import generate_topology

log = logging.getLogger("d2dpower")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

# sweep axis -> SimConfig field
SWEEP_AXES = {
    "arrival_rate": "mean_arrival_rate",
    "avg_power_weight": "gamma",
    "d2d_range": "d2d_range",
    "sensing_distance": "sensing_distance",
}

SWEEP_COLUMNS = ["sweep_value", "policy", "mean_delay", "stderr_delay", "mean_power", "stderr_power"]


def _fmt(x) -> str:
    return repr(float(x))


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _seed_records(cfg: SimConfig):
    return [{"topology_index": i, "topology_seed": s.topology, "episode_seed": s.episode}
            for i, s in enumerate(topology_seeds(cfg.seed, cfg.num_topologies))]


def _manifest(command: str, cfg: SimConfig, extra=None) -> dict:
    out = {
        "schema": "d2dpower.manifest/1",
        "command": command,
        "version": __version__,
        "config": config_to_dict(cfg),
        "seeds": _seed_records(cfg),
        "policies": [p.value for p in ALL_POLICIES],
    }
    out.update(extra or {})
    return out


def metrics_rows(results: dict, cfg: SimConfig):
    """One row per topology x policy."""
    k = cfg.topology.num_pairs
    header = (["topology_index", "episode_seed", "policy", "mean_delay_s", "sum_delay_s"]
              + [f"delay_{i}_s" for i in range(k)] + ["mean_power_w"]
              + [f"power_{i}_w" for i in range(k)]
              + ["objective", "mean_iters", "nonconverged", "cap_hits"])
    rows = []
    for policy in results:
        for i, m in enumerate(results[policy].episodes):
            rows.append([i, m.seed, policy, _fmt(m.mean_delay), _fmt(m.sum_delay)]
                        + [_fmt(v) for v in m.avg_delay] + [_fmt(m.mean_power)]
                        + [_fmt(v) for v in m.avg_power]
                        + [_fmt(m.objective), _fmt(m.mean_iters), m.nonconverged, m.cap_hits])
    rows.sort(key=lambda r: (r[0], r[2]))
    return header, rows


def summary_dict(results: dict) -> dict:
    out = {}
    for policy, s in results.items():
        (d, sd), (p, sp), (o, so) = s.delay, s.power, s.objective
        out[policy] = {"mean_delay_s": d, "stderr_delay_s": sd, "mean_power_w": p,
                       "stderr_power_w": sp, "objective": o, "stderr_objective": so}
    return out


def cmd_run(cfg: SimConfig, out: Path, workers: int) -> int:
    results = monte_carlo(cfg, ALL_POLICIES, workers=workers)
    header, rows = metrics_rows(results, cfg)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    _write_json(out / "summary.json", _manifest("run", cfg, {"summary": summary_dict(results)}))
    for policy, s in summary_dict(results).items():
        log.info("%-16s delay %.4g s  power %.4g W", policy, s["mean_delay_s"], s["mean_power_w"])
    return EXIT_OK


def sweep_configs(cfg: SimConfig, axis: str, values):
    field = SWEEP_AXES[axis]
    return [with_overrides(cfg, **{field: float(v)}) for v in values]


def validate_sweep(axis, values):
    problems = []
    if axis not in SWEEP_AXES:
        problems.append(f"sweep axis must be one of {', '.join(SWEEP_AXES)}, got {axis!r}")
    if not values:
        problems.append("sweep values must be nonempty")
    elif any(b <= a for a, b in zip(values, values[1:])):
        problems.append("sweep values must be strictly increasing")
    return problems


def cmd_sweep(cfg: SimConfig, out: Path, axis: str, values, workers: int) -> int:
    try:
        configs = sweep_configs(cfg, axis, values)
    except ValueError as exc:
        raise ConfigError([f"sweep {axis}: {m}" for m in str(exc).split("; ")]) from exc
    path = out / f"sweep_{axis}.csv"
    manifest = _manifest("sweep", cfg, {"sweep": {"axis": axis, "values": list(values),
                                                  "csv": path.name, "completed": []}})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for value, c in zip(values, configs):
            results = monte_carlo(c, ALL_POLICIES, workers=workers)
            for policy in (p.value for p in ALL_POLICIES):
                s = results[policy]
                (d, sd), (p, sp) = s.delay, s.power
                w.writerow([_fmt(value), policy, _fmt(d), _fmt(sd), _fmt(p), _fmt(sp)])
            fh.flush()
            manifest["sweep"]["completed"].append(value)
            _write_json(out / "manifest.json", manifest)
            log.info("%s = %g done", axis, value)
    _write_json(out / "manifest.json", manifest)
    return EXIT_OK


def cmd_oracle(settings: dict, out: Path) -> int:
    spec, tol, max_sweeps = build_oracle(settings)
    if spec.num_flows != 1:
        raise ConfigError(["the oracle command compares against a single flow (K = 1)"])
    t0 = time.perf_counter()
    mdp = build_quantized_mdp(spec)
    result = relative_value_iteration(mdp, tol=tol, max_sweeps=max_sweeps)
    elapsed = time.perf_counter() - t0
    pf = build_per_flow(flow_params_for(spec), q_max_table=mdp.queue_grid[-1] * 100)
    cmp = compare_priority(mdp, result, pf)
    export_value_table(mdp, result, out / "oracle_values.csv", pf)
    export_policy_table(mdp, result, out / "oracle_policy.csv")
    report = {
        "schema": "d2dpower.oracle/1",
        "version": __version__,
        "spec": oracle_to_dict(spec, tol, max_sweeps),
        "theta_per_slot": result.theta,
        "theta_per_time": cmp.theta_per_time,
        "c_inf": cmp.c_inf,
        "theta_gap": cmp.theta_gap,
        "spearman": cmp.spearman,
        "threshold_rvi": cmp.threshold_rvi.tolist(),
        "threshold_formula": cmp.threshold_formula.tolist(),
        "max_threshold_diff": cmp.max_threshold_diff,
        "sweeps": result.sweeps,
        "span": result.span,
        "clipped_mass": clipped_mass(mdp, result),
        "seconds": round(elapsed, 3),
    }
    _write_json(out / "oracle_report.json", report)
    log.info("spearman %.4f  threshold diff %d  sweeps %d", cmp.spearman, cmp.max_threshold_diff,
             result.sweeps)
    return EXIT_OK


def cmd_priority_table(cfg: SimConfig, out: Path, index: int) -> int:
    seeds = topology_seeds(cfg.seed, max(cfg.num_topologies, index + 1))[index]
    topo = generate_topology(cfg.topology, seeds.topology)
    lam = episode_rates(cfg, seeds.episode)
    flows, cm = build_priorities(topo, cfg.betas(), cfg.gammas(), lam / cfg.bandwidth, cfg.noise,
                                 cfg.sinr_gap, cfg.table_slots * lam * cfg.slot_duration, cfg.q_clamp)
    info = []
    for k, pf in enumerate(flows):
        name = f"priority_flow_{k}.csv"
        export_priority_table(pf, out / name)
        info.append({"flow": k, "csv": name, "lam_bps": float(lam[k]), "a": pf.a, "d": pf.d,
                     "c_inf": pf.c_inf, "y0": pf.y0, "b": pf.b, "q_max_table": pf.q_max_table,
                     "asymptotic_coeff": pf.asymptotic_coeff})
    _write_json(out / "priority_tables.json", _manifest(
        "priority-table", cfg, {"topology_index": index, "topology": topo.to_dict(), "flows": info,
                                "coupling_D": cm.D.tolist()}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--out", default="results", help="output directory")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    common.add_argument("--topologies", type=int, help="number of random topologies")
    common.add_argument("--slots", type=int, help="measured slots per episode")
    common.add_argument("--seed", type=lambda t: int(t, 0), help="base seed")
    common.add_argument("--workers", type=int, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="d2dpower", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="Monte Carlo over all policies")
    sw = sub.add_parser("sweep", parents=[common], help="parameter sweep over all policies")
    sw.add_argument("--axis", choices=sorted(SWEEP_AXES))
    sw.add_argument("--values", help="comma-separated, strictly increasing")
    sub.add_parser("oracle", parents=[common], help="value iteration on a quantized K=1 instance")
    pt = sub.add_parser("priority-table", parents=[common], help="export per-flow priority tables")
    pt.add_argument("--topology-index", type=int, default=0)
    return parser


def _collect_overrides(args) -> list:
    items = list(args.overrides)
    if args.topologies is not None:
        items.append(f"sim.num_topologies={args.topologies}")
    if args.slots is not None:
        items.append(f"sim.horizon={args.slots}")
    if args.seed is not None:
        items.append(f"sim.seed={args.seed}")
    if getattr(args, "axis", None) is not None:
        items.append(f"sweep.axis={args.axis}")
    if getattr(args, "values", None) is not None:
        items.append(f"sweep.values={args.values}")
    return items


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        settings = load_settings(args.config, _collect_overrides(args))
        cfg = build_sim_config(settings)
        if args.command == "sweep":
            axis = settings.get("sweep.axis")
            values = list(settings.get("sweep.values", ()))
            problems = validate_sweep(axis, values)
            if problems:
                raise ConfigError(problems)
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError([f"cannot create output directory {out}: {exc}"]) from exc
        if not os.access(out, os.W_OK):
            raise ConfigError([f"output directory {out} is not writable"])
    except ConfigError as exc:
        print(f"configuration error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "run":
            return cmd_run(cfg, out, args.workers)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, axis, values, args.workers)
        if args.command == "oracle":
            return cmd_oracle(settings, out)
        return cmd_priority_table(cfg, out, args.topology_index)
    except ConfigError as exc:
        print(f"configuration error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # any episode failure is a runtime failure
        log.debug("failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
