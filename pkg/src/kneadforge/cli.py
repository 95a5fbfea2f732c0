"""Command-line pipeline: one subcommand per stage plus ``pipeline``.

Every stage reads and writes files, and ``pipeline`` runs the same stage
functions on the same paths, so its output matches chaining the stages by
hand byte for byte.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from .classifier import ClassifierTolerances, classify, signature
from .ideal import EndEffectorSpec, ideal_cloud
from .mesh_io import read_cloud, read_stl, write_cloud, write_stl
from .metrics import MetricsReport, emit_report, error_distribution, ring_mesh_area, utilization_summary
from .planner import STRATEGIES, KneadingProgram, PlannerConfig, plan_program
from .registration import compensate, default_thresholds, sweep
from .shapes import cloud_to_mesh, gen_shape, load_geometries, shape_from_dict, shape_to_dict
from .sim import DEFAULT_EPS, fit_billet, init_billet, knead, size_billet
from .slicer import LayeredContourCloud, slice_to_cloud

__all__ = ["main", "PipelineConfig", "ConfigError", "build_parser"]

GEOMETRIES = ("A", "B", "C", "D", "E")
DEFAULT_BILLET = {"type": "cylinder", "diameter": 80.0, "height": 40.0}


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists every offending key."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config: " + "; ".join(self.problems))


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        self.stage = stage
        super().__init__(f"{stage}: {exc}")


# ------------------------------------------------------------------- config


@dataclass
class PipelineConfig:
    geometry: str | None = None
    shape: object = None  # shape spec, or a path to a shape JSON / STL file
    billet: object = None
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    strategy: str = "auto"
    effector: EndEffectorSpec = field(default_factory=EndEffectorSpec)
    rebound_eps: float = DEFAULT_EPS
    margin: float = 0.5
    fit_billet: bool = True
    thresholds: tuple = field(default_factory=default_thresholds)
    stop_at_full: bool = False
    tolerances: ClassifierTolerances = field(default_factory=ClassifierTolerances)
    layer_step: float = 1.0
    points: int = 400
    out: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        """Parse a JSON config, collecting every problem before raising."""
        problems = []
        if not isinstance(d, dict):
            raise ConfigError(["<root>: expected a JSON object"])
        top = {"geometry", "shape", "billet", "planner", "strategy", "effector", "sim", "sweep",
               "classifier", "layerStep", "points", "out"}
        problems += [f"{k}: unknown key" for k in sorted(set(d) - top)]
        kw = {}

        def section(name, keys):
            v = d.get(name, {})
            if not isinstance(v, dict):
                problems.append(f"{name}: expected an object")
                return {}
            problems.extend(f"{name}.{k}: unknown key" for k in sorted(set(v) - set(keys)))
            return {k: v[k] for k in v if k in keys}

        def number(path, v, positive=True):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                problems.append(f"{path}: expected a number")
                return None
            if positive and not v > 0:
                problems.append(f"{path}: must be positive")
                return None
            return float(v)

        if "geometry" in d:
            if d["geometry"] not in GEOMETRIES:
                problems.append(f"geometry: expected one of {', '.join(GEOMETRIES)}")
            else:
                kw["geometry"] = d["geometry"]
        for key in ("shape", "billet"):
            if key in d:
                v = d[key]
                if isinstance(v, str):
                    kw[key] = v
                else:
                    try:
                        kw[key] = shape_from_dict(v)
                    except (ValueError, TypeError, AttributeError, KeyError) as exc:
                        problems.append(f"{key}: {exc}")
        if "strategy" in d:
            if d["strategy"] not in STRATEGIES + ("auto",):
                problems.append(f"strategy: expected one of {', '.join(STRATEGIES + ('auto',))}")
            else:
                kw["strategy"] = d["strategy"]

        p = section("planner", ("fingerWidth", "moldScale", "centerOffset", "endEffectorDiameter",
                                "radialCompensation", "layerStep"))
        if p:
            try:
                kw["planner"] = PlannerConfig.from_dict(p)
            except (ValueError, TypeError) as exc:
                problems.append(f"planner: {exc}")
        e = section("effector", ("diameter", "footprintPoints", "minRingPoints"))
        if e:
            try:
                kw["effector"] = EndEffectorSpec(
                    float(e.get("diameter", 4.0)), int(e.get("footprintPoints", 40)), int(e.get("minRingPoints", 8)))
            except (ValueError, TypeError) as exc:
                problems.append(f"effector: {exc}")
        s = section("sim", ("reboundEps", "margin", "fitBillet"))
        if "reboundEps" in s:
            v = number("sim.reboundEps", s["reboundEps"], positive=False)
            if v is not None and v < 0:
                problems.append("sim.reboundEps: must be >= 0")
            elif v is not None:
                kw["rebound_eps"] = v
        if "margin" in s:
            v = number("sim.margin", s["margin"], positive=False)
            if v is not None:
                kw["margin"] = v
        if "fitBillet" in s:
            kw["fit_billet"] = bool(s["fitBillet"])
        w = section("sweep", ("start", "stop", "step", "stopAtFull"))
        if any(k in w for k in ("start", "stop", "step")):
            vals = [number(f"sweep.{k}", w.get(k, dflt)) for k, dflt in (("start", 0.1), ("stop", 20.0), ("step", 0.1))]
            if None not in vals:
                if vals[1] < vals[0]:
                    problems.append("sweep.stop: must be >= sweep.start")
                else:
                    kw["thresholds"] = default_thresholds(*vals)
        if "stopAtFull" in w:
            kw["stop_at_full"] = bool(w["stopAtFull"])
        c = section("classifier", ("gradJump", "signFlips", "areaNoise", "torsionJump", "centerDrift", "twistWindow"))
        if c:
            try:
                kw["tolerances"] = ClassifierTolerances.from_dict(c)
            except (ValueError, TypeError) as exc:
                problems.append(f"classifier: {exc}")
        if "layerStep" in d:
            v = number("layerStep", d["layerStep"])
            if v is not None:
                kw["layer_step"] = v
        if "points" in d:
            v = d["points"]
            if isinstance(v, bool) or not isinstance(v, int) or v < 3:
                problems.append("points: expected an integer >= 3")
            else:
                kw["points"] = v
        if "out" in d:
            if not isinstance(d["out"], str):
                problems.append("out: expected a path string")
            else:
                kw["out"] = d["out"]
        if problems:
            raise ConfigError(problems)
        return cls(**kw)

    def shape_spec(self):
        if self.shape is not None:
            if isinstance(self.shape, str) and not self.shape.lower().endswith(".stl"):
                with open(self.shape, encoding="utf-8") as fh:
                    return shape_from_dict(json.load(fh))
            return self.shape
        if self.geometry is not None:
            return load_geometries()[self.geometry]["shape"]
        raise ValueError("no shape given: use --geometry or --shape")

    def billet_spec(self):
        if self.billet is not None:
            if isinstance(self.billet, str):
                with open(self.billet, encoding="utf-8") as fh:
                    return shape_from_dict(json.load(fh))
            return self.billet
        if self.geometry is not None:
            return load_geometries()[self.geometry]["billet"]
        return shape_from_dict(DEFAULT_BILLET)


def load_config(path) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"<file>: not valid JSON ({exc})"]) from None
    return PipelineConfig.from_dict(data)


def resolve(args) -> PipelineConfig:
    """Config file first, then command-line flags on top."""
    cfg = load_config(getattr(args, "config", None))
    over = {}
    for attr, name in (("geometry", "geometry"), ("shape", "shape"), ("billet", "billet"),
                       ("strategy", "strategy"), ("eps", "rebound_eps"), ("layer_step", "layer_step"),
                       ("points", "points"), ("out_dir", "out")):
        v = getattr(args, attr, None)
        if v is not None:
            over[name] = v
    if over.get("strategy") not in (None, "auto") + STRATEGIES:
        raise ConfigError([f"strategy: expected one of {', '.join(STRATEGIES + ('auto',))}"])
    cfg = replace(cfg, **over)
    if cfg.out is None:
        cfg = replace(cfg, out=os.environ.get("KNEADFORGE_OUT", "."))
    return cfg


# ------------------------------------------------------------------- helpers


def _path(cfg, name):
    return os.path.join(cfg.out, name)


def _write_text(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def _write_json(path, obj):
    return _write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _read_layered(path) -> LayeredContourCloud:
    return LayeredContourCloud.from_point_cloud(read_cloud(path))


def _choose_strategy(cfg, target):
    if cfg.strategy != "auto":
        return cfg.strategy
    return "envelope" if classify(signature(target), cfg.tolerances).enveloping else "gradient"


# -------------------------------------------------------------------- stages


def stage_gen_shape(cfg: PipelineConfig, out=None, stl=None):
    spec = cfg.shape_spec()
    if isinstance(spec, str):
        cloud = slice_to_cloud(read_stl(spec), cfg.layer_step, cfg.points)
    else:
        cloud = gen_shape(spec, cfg.layer_step, cfg.points)
    out = out or _path(cfg, "target.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    write_cloud(cloud.to_point_cloud(), out)
    if stl:
        write_stl(cloud_to_mesh(cloud), stl)
    return out


def stage_slice(cfg: PipelineConfig, stl, out=None):
    cloud = slice_to_cloud(read_stl(stl), cfg.layer_step, cfg.points)
    out = out or _path(cfg, "target.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    write_cloud(cloud.to_point_cloud(), out)
    return out


def stage_classify(cfg: PipelineConfig, target, out=None):
    result = classify(signature(_read_layered(target)), cfg.tolerances)
    return _write_text(out or _path(cfg, "classification.json"), result.to_json() + "\n")


def stage_plan(cfg: PipelineConfig, target, out=None):
    tgt = _read_layered(target)
    strategy = _choose_strategy(cfg, tgt)
    billet = init_billet(cfg.billet_spec(), cfg.points)
    program = plan_program(tgt, billet.max_radius, cfg.planner, strategy)
    return _write_text(out or _path(cfg, "program.json"), program.to_json() + "\n")


def stage_ideal(cfg: PipelineConfig, program, out=None, cycle=None):
    prog = KneadingProgram.from_json(open(program, encoding="utf-8").read())
    if cycle is None:
        cycle = len(prog.cycles) - 1 if prog.cycles else None
    cloud = ideal_cloud(prog, cfg.effector, cycle)
    out = out or _path(cfg, "ideal.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    write_cloud(cloud, out)
    return out


def stage_simulate(cfg: PipelineConfig, target, out=None):
    """Knead a billet onto ``target``; writes the final cloud and ``sim.json``."""
    tgt = _read_layered(target)
    strategy = _choose_strategy(cfg, tgt)
    spec = cfg.billet_spec()
    if cfg.fit_billet:
        billet = fit_billet(tgt, spec, cfg.planner, strategy, cfg.rebound_eps, cfg.points, margin=cfg.margin)
    else:
        billet = init_billet(size_billet(spec, tgt, cfg.rebound_eps, cfg.margin), cfg.points,
                             eps=cfg.rebound_eps)
    res = knead(tgt, billet, cfg.planner, strategy)
    out = out or _path(cfg, "kneaded.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    write_cloud(res.final.slice(tgt.layer_step or 1.0).to_point_cloud(), out)
    summary = {
        "strategy": strategy,
        "reboundEps": cfg.rebound_eps,
        "billet": shape_to_dict(_billet_with_height(spec, billet.height)),
        "initialVolume": res.initial.volume,
        "finalVolume": res.final.volume,
        "finalHeight": res.final.height,
        "commandDrift": res.command_drift,
        "programDrift": res.program_drift,
        "commands": len(res.program.commands),
        "cycles": len(res.program.cycles),
        "areaSeries": [[int(c), float(a)] for c, a in res.area_series()],
        "targetArea": ring_mesh_area(tgt),
    }
    _write_json(os.path.splitext(out)[0] + "_sim.json", summary)
    return out


def _billet_with_height(spec, height):
    return replace(spec, height=float(height))


def stage_register(cfg: PipelineConfig, source, target, name=None, compensate_out=None):
    """Threshold sweep of ``source`` onto ``target``.

    Writes ``<name>_curve.csv`` and ``<name>_registration.json``. With
    ``compensate_out`` the source is also pulled in by its compensation
    value and written there.
    """
    name = name or os.path.splitext(os.path.basename(source))[0]
    src = read_cloud(source)
    tgt = read_cloud(target)
    curve = sweep(src, tgt, cfg.thresholds, stop_at_full=cfg.stop_at_full)
    _write_text(_path(cfg, f"{name}_curve.csv"), curve.to_csv())
    info = {"name": name, "source": os.path.basename(source), "target": os.path.basename(target),
            "samples": [list(s) for s in curve.samples], "compensationValue": curve.compensation_value,
            "complete": curve.complete, "fullFitnessThreshold": curve.full_fitness_threshold}
    path = _write_json(_path(cfg, f"{name}_registration.json"), _finite(info))
    if compensate_out is not None:
        if not curve.complete:
            raise ValueError(f"{name}: fitness 1.0 never reached; nothing to compensate")
        write_cloud(compensate(src, curve.compensation_value), compensate_out)
    return path


def _finite(obj):
    """JSON cannot carry inf; unmatched RMSE values become null."""
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def stage_metrics(cfg: PipelineConfig, target, sim_json=None, registrations=(), compare=None,
                  mass_in=None, mass_out=None, prefix="report"):
    tgt = _read_layered(target)
    report = MetricsReport(target_area=ring_mesh_area(tgt))
    if sim_json:
        sim = _read_json(sim_json)
        report.area_series = [tuple(x) for x in sim["areaSeries"]]
        report.surface_area = sim["areaSeries"][-1][1] if sim["areaSeries"] else None
        report.volume = sim["finalVolume"]
        report.utilization = {"volumeIn": sim["initialVolume"], "volumeOut": sim["finalVolume"],
                              "utilization": sim["finalVolume"] / sim["initialVolume"]}
        report.extra["programDrift"] = sim["programDrift"]
        report.extra["commandDrift"] = sim["commandDrift"]
    if mass_in is not None and mass_out is not None:
        report.utilization = utilization_summary(mass_in, mass_out)
    for path in registrations:
        reg = _read_json(path)
        samples = [[t, f, r if r is not None else float("nan")] for t, f, r in reg["samples"]]
        report.registration[reg["name"]] = {"samples": samples, "compensationValue": reg["compensationValue"],
                                            "complete": reg["complete"]}
    if compare:
        a, b = compare
        report.error_stats = error_distribution(read_cloud(a), read_cloud(b), tgt)
        report.error_stats["clouds"] = [os.path.basename(a), os.path.basename(b)]
    paths = emit_report(report, cfg.out, prefix)
    return paths["json"]


def stage_pipeline(cfg: PipelineConfig):
    """All stages in order on files under ``cfg.out``."""
    steps = []

    def run(stage, fn, *a, **kw):
        try:
            steps.append(fn(cfg, *a, **kw))
        except (OSError, ValueError, KeyError, RuntimeError) as exc:
            raise StageError(stage, exc) from exc
        return steps[-1]

    os.makedirs(cfg.out, exist_ok=True)
    target = run("gen-shape", stage_gen_shape)
    run("classify", stage_classify, target)
    program = run("plan", stage_plan, target)
    ideal = run("ideal-pcl", stage_ideal, program)
    kneaded = run("simulate", stage_simulate, target)
    compensated = _path(cfg, "compensated.csv")
    regs = [run("register", stage_register, ideal, target, "ideal"),
            run("register", stage_register, kneaded, target, "kneaded", compensate_out=compensated)]
    regs.append(run("register", stage_register, compensated, target, "compensated"))
    sim_json = os.path.splitext(kneaded)[0] + "_sim.json"
    run("metrics", stage_metrics, target, sim_json, regs, (ideal, kneaded))
    return steps


# ----------------------------------------------------------------------- CLI


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline config; flags override its keys")
    common.add_argument("--seed", type=int, default=None, help="reserved; no stage samples randomly")
    common.add_argument("--out-dir", help="output directory (default: $KNEADFORGE_OUT or .)")

    shape = argparse.ArgumentParser(add_help=False)
    shape.add_argument("--geometry", choices=GEOMETRIES, help="preset geometry A-E")
    shape.add_argument("--shape", help="shape JSON file or STL path")
    shape.add_argument("--layer-step", type=float, help="layer spacing in mm (default 1)")
    shape.add_argument("--points", type=int, help="points per layer (default 400)")

    billet = argparse.ArgumentParser(add_help=False)
    billet.add_argument("--billet", help="billet shape JSON file")
    billet.add_argument("--strategy", help="envelope, gradient or auto (classifier decides)")

    p = argparse.ArgumentParser(prog="kneadforge", description="Kneading path planning and evaluation pipeline.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("gen-shape", parents=[common, shape], help="sample a shape into a layered cloud")
    s.add_argument("-o", "--out", help="cloud path (CSV or PLY)")
    s.add_argument("--stl", help="also write a closed STL mesh here")

    s = sub.add_parser("slice", parents=[common, shape], help="slice an STL into a layered cloud")
    s.add_argument("stl", help="input STL")
    s.add_argument("-o", "--out")

    s = sub.add_parser("classify", parents=[common], help="enveloping vs non-enveloping label")
    s.add_argument("target", help="layered target cloud")
    s.add_argument("-o", "--out")

    s = sub.add_parser("plan", parents=[common, billet], help="multi-cycle kneading program")
    s.add_argument("target")
    s.add_argument("--geometry", choices=GEOMETRIES, help="take the billet from a preset")
    s.add_argument("-o", "--out")

    s = sub.add_parser("ideal-pcl", parents=[common], help="ideal machining cloud of a program")
    s.add_argument("program", help="program JSON")
    s.add_argument("--cycle", type=int, help="feed cycle to stamp (default: the finishing cycle)")
    s.add_argument("-o", "--out")

    s = sub.add_parser("simulate", parents=[common, billet], help="knead a billet in the simulator")
    s.add_argument("target")
    s.add_argument("--geometry", choices=GEOMETRIES, help="take the billet from a preset")
    s.add_argument("--eps", type=float, help="elastic rebound in mm (default 0.3)")
    s.add_argument("-o", "--out")

    s = sub.add_parser("register", parents=[common], help="ICP threshold sweep against a target")
    s.add_argument("source")
    s.add_argument("target")
    s.add_argument("--name", help="artefact name prefix (default: source file stem)")
    s.add_argument("--compensate", metavar="PATH", help="write the compensated source here")

    s = sub.add_parser("metrics", parents=[common], help="assemble the JSON/CSV/SVG report")
    s.add_argument("target")
    s.add_argument("--sim", help="simulation summary JSON")
    s.add_argument("--registration", action="append", default=[], help="registration JSON (repeatable)")
    s.add_argument("--compare", nargs=2, metavar=("A", "B"), help="clouds for the error-distribution test")
    s.add_argument("--mass-in", type=float)
    s.add_argument("--mass-out", type=float)
    s.add_argument("--prefix", default="report")

    sub.add_parser("pipeline", parents=[common, shape, billet], help="run every stage end to end")
    return p


def _dispatch(args, cfg):
    c = args.command
    if c == "gen-shape":
        return stage_gen_shape(cfg, args.out, args.stl)
    if c == "slice":
        return stage_slice(cfg, args.stl, args.out)
    if c == "classify":
        return stage_classify(cfg, args.target, args.out)
    if c == "plan":
        return stage_plan(cfg, args.target, args.out)
    if c == "ideal-pcl":
        return stage_ideal(cfg, args.program, args.out, args.cycle)
    if c == "simulate":
        return stage_simulate(cfg, args.target, args.out)
    if c == "register":
        return stage_register(cfg, args.source, args.target, args.name, args.compensate)
    if c == "metrics":
        return stage_metrics(cfg, args.target, args.sim, args.registration, args.compare,
                             args.mass_in, args.mass_out, args.prefix)
    return stage_pipeline(cfg)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args)
        result = _dispatch(args, cfg)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"kneadforge {args.command}: config error: {problem}", file=sys.stderr)
        return 1
    except StageError as exc:
        print(f"kneadforge pipeline [{exc.stage}]: error: {exc.__cause__}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"kneadforge {args.command}: error: {exc}", file=sys.stderr)
        return 1
    for path in result if isinstance(result, list) else [result]:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
