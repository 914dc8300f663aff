"""Command-line entry points: simulate, build, join, eval and render.

Every command reads an optional flat ``key = value`` config file
(``--config``); any ``--key value`` flag given on the command line wins over
the file. Exit status is 0 on success, 1 for input errors and 2 for
numerical failures, with the error class named on standard error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from . import evaluation
from .builder import BuildParams, load_submap, save_submap
from .errors import GridJoinError, InputError, NumericalError
from .grids import read_grid, render_pgm, write_grid
from .joiner import JoinProblem, pose_only_gn, recover_map
from .pipeline import (
    SubmapSet,
    frames_for,
    odometry_submaps,
    read_frames,
    truth_map,
    truth_submaps,
    write_frames,
)
from .se2 import Pose2
from .simulator import NoiseSpec, ScannerConfig, load_world, read_dataset, simulate, write_dataset

log = logging.getLogger("gridjoin")


@dataclass
class RunConfig:
    world: str = "office"
    waypoints: str = ""  # "x,y,theta; x,y,theta; ..." overrides the world's loop
    steps_per_leg: int = 8
    sigma_range: float = 0.02
    sigma_odo_xy: float = 0.04
    sigma_odo_theta: float = 0.003
    seed: int = 0
    n_beams: int = 1081
    max_range: float = 30.0
    n_submaps: int = 4
    submap_resolution: float = 0.1
    resolution: float = 0.1
    margin: float = 2.0
    tau_k: int = 50
    tau_delta: float = 1e-8
    output_dir: str = "."

    def noise(self) -> NoiseSpec:
        return NoiseSpec(self.sigma_range, self.sigma_odo_xy, self.sigma_odo_theta, self.seed)

    def scanner(self) -> ScannerConfig:
        return ScannerConfig(n_beams=self.n_beams, max_range=self.max_range)

    def waypoint_list(self) -> list[Pose2] | None:
        if not self.waypoints.strip():
            return None
        out = []
        for item in self.waypoints.split(";"):
            if not item.strip():
                continue
            try:
                vals = [float(v) for v in item.split(",")]
            except ValueError:
                raise InputError(f"cannot parse waypoint {item.strip()!r}") from None
            if len(vals) != 3:
                raise InputError(f"waypoint {item.strip()!r} needs x,y,theta")
            out.append(Pose2(*vals))
        return out

    def validate(self):
        positive = ["steps_per_leg", "n_beams", "max_range", "n_submaps",
                    "submap_resolution", "resolution"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ["margin", "tau_k", "tau_delta"]:
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be nonnegative, got {getattr(self, name)}")
        self.noise()
        self.waypoint_list()


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = type(getattr(RunConfig(), name))
    try:
        return kind(raw)
    except ValueError:
        raise InputError(f"config key {name}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise InputError(f"config file not found: {path}") from None
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{n}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise InputError(f"{path}:{n}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def resolve_config(args) -> RunConfig:
    values = parse_config_file(args.config) if args.config else {}
    for name in _FIELDS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = _coerce(name, flag)
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args, cfg: RunConfig) -> int:
    world = load_world(cfg.world)
    dataset = simulate(world, cfg.waypoint_list(), cfg.steps_per_leg, cfg.noise(), cfg.scanner())
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "dataset.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(dataset, out)
    log.info("wrote %d scans to %s", len(dataset), out)
    return 0


def _write_submap_set(sset, directory: Path, frames_name: str):
    directory.mkdir(parents=True, exist_ok=True)
    for sm in sset.submaps:
        save_submap(sm, directory / f"submap_{sm.id:02d}")
    write_frames(sset.frames, directory / frames_name, [sm.id for sm in sset.submaps])


def cmd_build(args, cfg: RunConfig) -> int:
    dataset = read_dataset(args.dataset)
    out = Path(cfg.output_dir)
    params = BuildParams()
    est = odometry_submaps(dataset, cfg.n_submaps, cfg.submap_resolution, params)
    _write_submap_set(est, out / "submaps", "frames_init.txt")
    ref = truth_submaps(dataset, cfg.n_submaps, cfg.submap_resolution, params)
    _write_submap_set(ref, out / "truth", "frames.txt")
    log.info("wrote %d submaps to %s", len(est.submaps), out)
    return 0


def _load_submaps(paths) -> list:
    files = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files.extend(sorted(p.glob("*.json")))
        else:
            files.append(p)
    if not files:
        raise InputError("no submap files given")
    submaps = [load_submap(f) for f in files]
    ids = [sm.id for sm in submaps]
    if len(set(ids)) != len(ids):
        raise InputError(f"duplicate submap ids {ids}")
    return sorted(submaps, key=lambda sm: sm.id)


def cmd_join(args, cfg: RunConfig) -> int:
    submaps = _load_submaps(args.submaps)
    frames = frames_for(submaps, read_frames(args.frames))
    # the first submap is the gauge; frames are re-expressed relative to it
    g0 = frames[0]
    frames = [g0.between(f) for f in frames]
    problem = JoinProblem.create(submaps, frames, s=cfg.resolution, margin=cfg.margin)
    final, report = pose_only_gn(problem, tau_k=cfg.tau_k, tau_delta=cfg.tau_delta)
    final = [g0.compose(f) for f in final]
    fused = recover_map(problem, [g0.between(f) for f in final])

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_frames(final, out / "frames.txt", [sm.id for sm in submaps])
    write_grid(fused, out / "map.grid")
    render_pgm(fused, "occupancy", out / "map.pgm")
    (out / "report.json").write_text(json.dumps(report.to_json(), indent=2) + "\n")
    log.info("join finished after %d iterations (converged=%s)",
             report.iterations, report.converged)
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    est_table = read_frames(args.frames)
    ref_table = read_frames(args.truth_frames)
    ids = sorted(ref_table)
    missing = [i for i in ids if i not in est_table]
    if missing:
        raise InputError(f"estimated frames lack ids {missing}")
    # the gauge frame is identical by construction and left out
    poses = evaluation.pose_errors([est_table[i] for i in ids[1:]],
                                   [ref_table[i] for i in ids[1:]])
    estimate = read_grid(args.map)
    truth_set = _load_submaps(args.truth_submaps)
    reference = truth_map(SubmapSet(truth_set, frames_for(truth_set, ref_table)), estimate.layout)
    result = poses.to_json()
    result["auc"] = evaluation.map_auc(estimate, reference)
    result["precision"] = evaluation.map_precision(estimate, reference)
    text = json.dumps(result, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_render(args, cfg: RunConfig) -> int:
    grid = read_grid(args.grid)
    out = Path(args.out) if args.out else Path(args.grid).with_suffix(".pgm")
    render_pgm(grid, args.mode, out)
    return 0


# --------------------------------------------------------------------------
# argument parsing


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="flat key = value config file")
    group = parser.add_argument_group("config overrides")
    for name in _FIELDS:
        group.add_argument("--" + name.replace("_", "-"), dest=name, default=None,
                           metavar=name.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridjoin", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a dataset file")
    p.add_argument("--out", help="dataset path (default OUTPUT_DIR/dataset.jsonl)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("build", help="build odometry and ground-truth submaps")
    p.add_argument("dataset")
    _add_config_flags(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("join", help="join submaps with pose-only Gauss-Newton")
    p.add_argument("submaps", nargs="+", help="submap sidecar files or directories")
    p.add_argument("--frames", required=True, help="initial frames file")
    _add_config_flags(p)
    p.set_defaults(func=cmd_join)

    p = sub.add_parser("eval", help="score joined frames and map against ground truth")
    p.add_argument("--frames", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--truth-frames", required=True)
    p.add_argument("--truth-submaps", nargs="+", required=True)
    p.add_argument("--out", help="also write the metrics JSON here")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="render a grid file as PGM")
    p.add_argument("grid")
    p.add_argument("--mode", choices=["occupancy", "hit"], default="occupancy")
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except InputError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except GridJoinError as exc:  # pragma: no cover - every subclass is mapped above
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
