"""Command-line front end.

Exit codes: 0 success, 2 input error, 3 I/O error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from hitab import bab, io, reach
from hitab.certify import BallSpec, BoxSpec, bound_ball, bound_box, crossover_thresholds
from hitab.errors import InputError, NumericError
from hitab.lipzoo import bundle
from hitab.net import local_model

EXIT_OK, EXIT_INPUT, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("HITAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InputError(f"HITAB_THREADS must be an integer, got {env!r}") from None
    return 1


def _bab_config(prob: io.Problem, batch_size: int = 1) -> bab.BabConfig:
    return bab.BabConfig(
        tolerance=prob.tolerance,
        max_nodes=prob.max_nodes,
        max_seconds=prob.max_seconds,
        bound_mode=prob.bound_mode,
        batch_size=prob.batch_size or batch_size,
    )


def _require_center(prob: io.Problem, dim: int) -> None:
    if prob.center is None:
        raise InputError("problem: missing 'center'")
    if prob.center.shape[0] != dim:
        raise InputError(f"problem: center has length {prob.center.shape[0]}, network input width is {dim}")


def cmd_lipschitz(args) -> int:
    net = io.load_network(args.network)
    print(io.dumps_report(bundle(net).to_dict()))
    return EXIT_OK


def cmd_bound(args) -> int:
    net = io.load_network(args.network)
    prob = io.load_problem(args.problem)
    _require_center(prob, net.input_dim)
    lip = bundle(net)
    model = local_model(net, prob.center)
    if prob.norm == "l2":
        cert = bound_ball(model, lip, BallSpec(prob.center, prob.radius))
    else:
        cert = bound_box(model, lip, BoxSpec(prob.center, prob.radii))
    eps01, eps12 = crossover_thresholds(model, lip)
    report = cert.to_dict()
    report.update({"eps01": eps01, "eps12": eps12})
    print(io.dumps_report(report))
    return EXIT_OK


def cmd_bab(args) -> int:
    net = io.load_network(args.network)
    prob = io.load_problem(args.problem)
    _require_center(prob, net.input_dim)
    if prob.norm != "linf":
        raise InputError("problem: branch and bound runs over boxes; use norm 'linf' with 'radii'")
    progress = bab.json_progress(sys.stderr) if args.verbose else None
    result = bab.run(net, BoxSpec(prob.center, prob.radii), _bab_config(prob), progress=progress)
    print(io.dumps_report(result.to_dict(timing=args.timing)))
    return EXIT_OK


def _system_from(doc) -> reach.LtiSystem:
    if not isinstance(doc, dict):
        raise InputError("problem: 'system' must be an object")
    if "quadrotor" in doc:
        q = doc["quadrotor"] or {}
        return reach.quadrotor_system(float(q.get("dt", 0.1)), float(q.get("g", 9.81)))
    for key in ("a", "b", "d"):
        if key not in doc:
            raise InputError(f"system: missing {key!r}")
    return reach.LtiSystem(np.array(doc["a"], dtype=float), np.array(doc["b"], dtype=float), np.array(doc["d"], dtype=float))


def _init_from(prob: io.Problem, dim: int) -> reach.RotatedRect:
    doc = prob.init
    if doc is None:
        if prob.center is None or prob.radii is None:
            raise InputError("problem: missing 'init' (or 'center' with 'radii')")
        doc = {"center": prob.center, "radii": prob.radii}
    for key in ("center", "radii"):
        if key not in doc:
            raise InputError(f"init: missing {key!r}")
    rot = np.array(doc.get("rotation", np.eye(dim)), dtype=float)
    return reach.RotatedRect(rot, np.array(doc["center"], dtype=float), np.array(doc["radii"], dtype=float))


def cmd_reach(args) -> int:
    net = io.load_network(args.network)
    prob = io.load_problem(args.problem)
    if prob.system is None:
        raise InputError("problem: missing 'system' block")
    system = _system_from(prob.system)
    system.check_controller(net)
    init = _init_from(prob, system.state_dim)
    cfg = reach.ReachConfig(
        steps=prob.steps,
        bab=_bab_config(prob, batch_size=16),
        sample_count=prob.sample_count,
        seed=args.seed,
        threads=_threads(args),
        rotation_fit=prob.rotation_fit,
    )
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {out_dir}: {exc}", file=sys.stderr)
        return EXIT_IO

    steps = reach.run_reach(system, net, init, cfg)
    regions = [s.region for s in steps]
    rng = np.random.default_rng(args.seed + 1)
    traj = reach.simulate(system, net, init, prob.trajectories, len(steps), rng)
    inside = reach.containment(regions, traj)
    obstacles = prob.obstacles or []

    records = []
    for k, step in enumerate(steps):
        rec = {"step": k + 1}
        rec.update(step.region.to_dict())
        rec["per_direction_bounds"] = {
            "upper": step.upper_supports.tolist(),
            "lower": step.lower_supports.tolist(),
        }
        rec["status"] = [r.status.value for r in step.results]
        rec["nodes"] = step.nodes
        rec["safe_flags"] = [reach.obstacle_safe(step.region, ob["center"], float(ob["radius"])) for ob in obstacles]
        rec["contained"] = bool(inside[:, k].all())
        records.append(rec)

    try:
        (out_dir / "reach_sets.json").write_text(io.dumps_report(records) + "\n")
        with open(out_dir / "trajectories.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["trajectory", "step"] + [f"x{i}" for i in range(system.state_dim)])
            for t in range(traj.shape[0]):
                for k in range(traj.shape[1]):
                    writer.writerow([t, k] + [format(v, ".17g") for v in traj[t, k]])
    except OSError as exc:
        print(f"error: cannot write outputs to {out_dir}: {exc}", file=sys.stderr)
        return EXIT_IO

    print(f"{'step':>4} {'branches':>10} {'run time (s)':>13} {'max gap':>10} {'contained':>9}")
    for k, step in enumerate(steps):
        print(f"{k + 1:>4} {step.nodes:>10} {step.elapsed:>13.3f} {step.max_gap:>10.2e} {str(records[k]['contained']):>9}")
    print(f"total branches {sum(s.nodes for s in steps)}, run time {sum(s.elapsed for s in steps):.3f} s")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hitab", description="Certified reachability bounds for smooth networks.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", action="store_true", help="stream progress records as JSON lines on stderr")
    common.add_argument("--seed", type=int, default=0, help="seed for any sampling")
    common.add_argument("--threads", type=int, default=None, help="worker cap (falls back to HITAB_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lipschitz", parents=[common], help="print the Lipschitz bundle of a network")
    p.add_argument("network")
    p.set_defaults(func=cmd_lipschitz)

    p = sub.add_parser("bound", parents=[common], help="certificate hierarchy at one region")
    p.add_argument("network")
    p.add_argument("problem")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("bab", parents=[common], help="branch and bound over a box")
    p.add_argument("network")
    p.add_argument("problem")
    p.add_argument("--timing", action="store_true", help="include wall-clock time in the report")
    p.set_defaults(func=cmd_bab)

    p = sub.add_parser("reach", parents=[common], help="multi-step closed-loop reachability")
    p.add_argument("network")
    p.add_argument("problem")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_reach)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
