"""Command-line entry point.

    tnet <command> --spec <file> [--n N] [--reps R] [--seed S]
                   [--grid-h H] [--out DIR]

Commands: simulate, fluid, diffuse, bottlenecks, verify, reproduce.
Every run writes a manifest (spec hash, seed, parameters, versions) next to
its outputs; rerunning with the same manifest inputs reproduces the outputs
byte for byte.  Outputs are plot-ready CSV/JSON only.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .bottleneck import bottleneck_timeline
from .diffusion import DiffusionNetputSampler, diffusion_queue_pointwise, tandem_diffusion_path
from .fluid import crossing_times, fluid_solve
from .network import NetworkSpec, SpecValidationError, load_spec
from .paths import TimeGrid, VectorPath, write_path_csv
from .reflection import DirectionalRegulator, directional_derivative_fd
from .simulator import diffusion_scale, fluid_scale, simulate
from .stochastic import RngStream
from .verify import check_fclt_queue, check_fslln_arrivals, check_service_routing

SCENARIOS = {
    "example1": "example1.json",
    "example1-fast": "example1_fast.json",
    "example2": "example2.json",
    "example2-high": "example2_high.json",
    "tandem-uniform-i": "tandem_uniform_i.json",
    "tandem-uniform-ii": "tandem_uniform_ii.json",
    "tandem-uniform-iii": "tandem_uniform_iii.json",
    "single-node": "single_node.json",
    "single-node-fast": "single_node_fast.json",
}


def scenario_path(name: str) -> Path:
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    return Path(str(resources.files("tnet") / "scenarios" / SCENARIOS[name]))


class _OutputStage:
    """Collects output files and removes them all if the run fails."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.written: list[Path] = []
        out_dir.mkdir(parents=True, exist_ok=True)

    def __enter__(self) -> "_OutputStage":
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc_type is not None:
            self.cleanup()
        return False

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self.written.append(p)
        return p

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text, encoding="utf-8")
        return p

    def write_json(self, name: str, doc) -> Path:
        return self.write_text(name, json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def write_path(self, name: str, path_obj: VectorPath, header=None) -> Path:
        p = self.path(name)
        with open(p, "w", encoding="utf-8") as fh:
            write_path_csv(path_obj, fh, header=header)
        return p

    def cleanup(self) -> None:
        for p in self.written:
            p.unlink(missing_ok=True)


def _load(args) -> NetworkSpec:
    spec = load_spec(args.spec)
    if args.grid_h is not None:
        spec = replace(spec, horizon=TimeGrid(spec.horizon.t0, spec.horizon.t1, args.grid_h))
    spec.validate()
    return spec


def _manifest(stage: _OutputStage, args, command: str, extra: dict | None = None) -> None:
    digest = hashlib.sha256(Path(args.spec).read_bytes()).hexdigest()
    doc = {
        "command": command,
        "spec": str(args.spec),
        "spec_sha256": digest,
        "seed": args.seed,
        "n": getattr(args, "n", None),
        "reps": getattr(args, "reps", None),
        "grid_h": args.grid_h,
        "versions": {
            "tnet": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }
    if extra:
        doc.update(extra)
    stage.write_json("manifest.json", doc)


def _cmd_simulate(args) -> int:
    spec = _load(args)
    with _OutputStage(Path(args.out)) as stage:
        traj = simulate(spec, args.n, RngStream(args.seed))
        traj.check_invariants()
        scaled = fluid_scale(traj)
        with open(stage.path("events.csv"), "w", encoding="utf-8") as fh:
            traj.write_event_log(fh)
        stage.write_path("queue_fluid_scaled.csv", scaled.queue)
        stage.write_path("busy_time.csv", scaled.busy)
        stage.write_path("inflow_fluid_scaled.csv", scaled.inflow)
        stage.write_path("departures_fluid_scaled.csv", scaled.departures)
        _manifest(stage, args, "simulate", {"truncated": traj.truncated})
        print(f"simulate: n={args.n}, truncated={traj.truncated}, outputs in {stage.out_dir}")
    return 0


def _cmd_fluid(args) -> int:
    spec = _load(args)
    with _OutputStage(Path(args.out)) as stage:
        sol = fluid_solve(spec)
        stage.write_path("netput.csv", sol.netput)
        stage.write_path("queue.csv", sol.queue)
        stage.write_path("regulator.csv", sol.regulator)
        if sol.busy is not None:
            stage.write_path("busy.csv", sol.busy)
            stage.write_path("workload.csv", sol.workload)
        if spec.J == 1:
            stage.write_json("crossings.json", [c.to_json_dict() for c in crossing_times(spec)])
        _manifest(stage, args, "fluid", {"workload_defined": sol.workload_defined})
        print(f"fluid: wrote netput/queue/regulator CSVs in {stage.out_dir}")
    return 0


def _cmd_diffuse(args) -> int:
    spec = _load(args)
    with _OutputStage(Path(args.out)) as stage:
        rng = RngStream(args.seed)
        t = args.t if args.t is not None else 0.5 * (spec.horizon.t0 + spec.horizon.t1)
        samples = diffusion_queue_pointwise(spec, t, rng.child(0), args.reps)
        with open(stage.path("queue_limit_samples.csv"), "w", encoding="utf-8") as fh:
            fh.write("rep," + ",".join(f"node_{k + 1}" for k in range(spec.K)) + "\n")
            for r in range(args.reps):
                fh.write(
                    f"{r}," + ",".join(f"{samples[k, r]:.12g}" for k in range(spec.K)) + "\n"
                )
        netput = DiffusionNetputSampler(spec).sample(rng.child(1))
        stage.write_path("netput_sample.csv", netput.netput)
        extra = {"t": t}
        if spec.K == 2:
            try:
                path_sample = tandem_diffusion_path(spec, rng.child(2))
                stage.write_path("queue_path_sample.csv", path_sample.queue)
                extra["discontinuities"] = [
                    {"node": d.node + 1, "t": d.time, "kind": d.kind}
                    for d in path_sample.discontinuities
                ]
            except ValueError:
                pass  # fluid structure outside the supported path-sampling cases
        _manifest(stage, args, "diffuse", extra)
        print(f"diffuse: {args.reps} pointwise samples at t={t:.4g} in {stage.out_dir}")
    return 0


def _cmd_bottlenecks(args) -> int:
    spec = _load(args)
    with _OutputStage(Path(args.out)) as stage:
        report = bottleneck_timeline(spec, args.reps, RngStream(args.seed))
        stage.write_text("bottlenecks.json", report.to_json() + "\n")
        frac = VectorPath(spec.horizon, report.exceed_fraction, interpolation="linear")
        stage.write_path("exceedance.csv", frac)
        _manifest(stage, args, "bottlenecks")
        nodes = sorted(k + 1 for k in report.bottleneck_nodes())
        print(f"bottlenecks: flagged nodes {nodes}, report in {stage.out_dir}")
    return 0


def _cmd_verify(args) -> int:
    spec = _load(args)
    with _OutputStage(Path(args.out)) as stage:
        rng = RngStream(args.seed)
        n_list = tuple(int(v) for v in args.n_list.split(","))
        if args.target == "fslln":
            result = check_fslln_arrivals(spec, n_list, args.reps, rng)
        elif args.target == "fclt":
            t = args.t if args.t is not None else 0.5 * (spec.horizon.t0 + spec.horizon.t1)
            result = check_fclt_queue(spec, t, args.n, args.reps, rng)
        elif args.target == "service-routing":
            result = check_service_routing(spec, n_list, args.reps, rng)
        else:
            raise KeyError(args.target)
        stage.write_text(f"verify_{args.target.replace('-', '_')}.json", result.to_json() + "\n")
        _manifest(stage, args, f"verify {args.target}")
        print(f"verify {args.target}: pass={result.passed}, outputs in {stage.out_dir}")
    return 0 if result.passed else 1


def _cmd_reproduce(args) -> int:
    out_root = Path(args.out)
    rng = RngStream(args.seed)
    if args.scenario == "tandem-uniform":
        names = ["tandem-uniform-i", "tandem-uniform-ii", "tandem-uniform-iii"]
        for i, name in enumerate(names):
            spec = load_spec(str(scenario_path(name)))
            with _OutputStage(out_root / name) as stage:
                sol = fluid_solve(spec)
                stage.write_path("fluid_queue.csv", sol.queue)
                sample = tandem_diffusion_path(spec, rng.child(i))
                stage.write_path("queue_path_sample.csv", sample.queue)
                regulator = DirectionalRegulator(sol.netput, spec.P)
                delta = regulator.solve(sample.netput).value
                fd = directional_derivative_fd(sol.netput, sample.netput, spec.P)
                # compare away from the sample's discontinuities (2h guard)
                times = spec.horizon.times
                keep = np.ones(spec.horizon.m, dtype=bool)
                for d in sample.discontinuities:
                    keep &= np.abs(times - d.time) > 2.0 * spec.horizon.h
                gap = float(np.max(np.abs(delta.values - fd.values)[:, keep]))
                stage.write_json(
                    "summary.json",
                    {
                        "scenario": name,
                        "discontinuities": [
                            {"node": d.node + 1, "t": d.time, "kind": d.kind}
                            for d in sample.discontinuities
                        ],
                        "fd_vs_regulator_sup_gap_interior": gap,
                    },
                )
                print(f"reproduce {name}: path sample + regulator outputs in {stage.out_dir}")
        return 0
    name = args.scenario
    spec = load_spec(str(scenario_path(name)))
    with _OutputStage(out_root / name) as stage:
        sol = fluid_solve(spec)
        stage.write_path("fluid_queue.csv", sol.queue)
        stage.write_path("fluid_workload.csv", sol.workload)
        stage.write_json("crossings.json", [c.to_json_dict() for c in crossing_times(spec)])
        traj = simulate(spec, args.n, rng.child(0))
        traj.check_invariants()
        scaled = fluid_scale(traj)
        stage.write_path("queue_fluid_scaled.csv", scaled.queue)
        gap = float(np.max(np.abs(scaled.queue.values - sol.queue.values)))
        report = bottleneck_timeline(spec, args.reps, rng.child(1))
        stage.write_text("bottlenecks.json", report.to_json() + "\n")
        stage.write_json(
            "summary.json",
            {
                "scenario": name,
                "sim_vs_fluid_sup_gap": gap,
                "bottleneck_nodes": sorted(k + 1 for k in report.bottleneck_nodes()),
                "phases": [
                    {"start": a, "end": b, "nodes": sorted(k + 1 for k in nodes)}
                    for a, b, nodes in report.phases()
                ],
            },
        )
        print(f"reproduce {name}: sim/fluid gap {gap:.4f}, outputs in {stage.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tnet", description="Transitory queueing network toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, spec_required=True):
        if spec_required:
            p.add_argument("--spec", required=True, help="network spec JSON file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--grid-h", type=float, default=None, dest="grid_h")
        p.add_argument("--out", default="tnet-out")

    p = sub.add_parser("simulate", help="one exact realization, event log + scaled paths")
    common(p)
    p.add_argument("--n", type=int, default=10_000)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("fluid", help="fluid netput/queue/regulator/busy/workload")
    common(p)
    p.set_defaults(fn=_cmd_fluid)

    p = sub.add_parser("diffuse", help="diffusion-limit samples (pointwise queue law)")
    common(p)
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--t", type=float, default=None)
    p.set_defaults(fn=_cmd_diffuse)

    p = sub.add_parser("bottlenecks", help="Monte Carlo bottleneck timeline")
    common(p)
    p.add_argument("--reps", type=int, default=500)
    p.set_defaults(fn=_cmd_bottlenecks)

    p = sub.add_parser("verify", help="simulation-vs-limit convergence checks")
    p.add_argument("target", choices=["fslln", "fclt", "service-routing"])
    common(p)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--n-list", default="100,1000,10000", dest="n_list")
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--t", type=float, default=None)
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("reproduce", help="run a shipped scenario end to end")
    p.add_argument("scenario", choices=sorted(set(SCENARIOS) | {"tandem-uniform"}))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-h", type=float, default=None, dest="grid_h")
    p.add_argument("--out", default="tnet-out")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--reps", type=int, default=500)
    p.set_defaults(fn=_cmd_reproduce)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SpecValidationError as exc:
        print("spec validation failed:", file=sys.stderr)
        for issue in exc.issues:
            print(f"  - {issue}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
