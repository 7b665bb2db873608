"""Command line entry point: ``scenefuse <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 bad input or configuration.
"""
from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import os
import sys
import time
from typing import List, Optional, Sequence

from . import __version__
from .dataset import Dataset, DatasetError
from .evaluation import (D_MAX, OBJECT_COLUMNS, RELATION_COLUMNS, eval_objects, eval_relations,
                         write_csv)
from .experiments import DATA_DIR, SCENES, repro
from .graph import export_graph, export_prompt
from .pipeline import FusionPipeline, RunConfig
from .planner import (MODES, SEARCH_COLUMNS, LikelihoodPrior, execute, plan, result_row,
                      target_position)
from .simulator import ScenarioTruth, SceneSpecError, bundled_spec_path, generate, load_spec

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Raised for anything wrong with the user's files or flags."""


@contextlib.contextmanager
def _reading(what: str):
    """Turn loading failures into InputError naming what was being read."""
    try:
        yield
    except InputError:
        raise
    except (OSError, ValueError, KeyError, TypeError, tomllib.TOMLDecodeError) as exc:
        raise InputError(f"{what}: {exc}") from None


def _emit(args, text: str, payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True) if args.json else text)


def _write_text(path: str, text: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _resolve_scene(path: str) -> str:
    """A scene file path, or the name of a bundled scene (with or without .toml)."""
    if os.path.exists(path):
        return path
    name = os.path.splitext(os.path.basename(path))[0]
    bundled = bundled_spec_path(name)
    if os.path.exists(bundled):
        return bundled
    raise InputError(f"scene {path!r} not found (bundled scenes: {', '.join(SCENES)})")


def _run_config(args, defaults: Optional[dict] = None) -> RunConfig:
    """Scene defaults, then the --config file, then explicit flags."""
    with _reading("config"):
        merged = dict(defaults or {})
        if args.config:
            with open(args.config, "rb") as fh:
                d = tomllib.load(fh)
            merged.update(d.get("run", d))
        flags = {k: getattr(args, k, None) for k in ("voxel_size", "seed")}
        return RunConfig.from_dict(merged, **flags)


# ---------------------------------------------------------------- commands
def cmd_simulate(args) -> int:
    with _reading("scene"):
        spec = load_spec(_resolve_scene(args.scene))
        noise = {k: getattr(args, k) for k in ("p_flip", "p_flip_relation", "sigma_d", "drift_trans",
                                              "drift_rot", "erosion") if getattr(args, k) is not None}
        if noise:
            spec = spec.with_noise(**noise)
        if args.seed is not None:
            spec = dataclasses.replace(spec, seed=args.seed)
    t0 = time.perf_counter()
    sim = generate(spec, args.out)
    n_kf = sum(1 for it in sim.items if hasattr(it, "panoptic"))
    stats = {"scene": spec.name, "seed": spec.seed, "keyframes": n_kf,
             "corrections": len(sim.items) - n_kf, "label_flips": len(sim.log.label_flips),
             "relation_flips": len(sim.log.relation_flips), "out": args.out,
             "wall_time_s": round(time.perf_counter() - t0, 3)}
    _emit(args, f"simulated {spec.name} seed {spec.seed}: {n_kf} keyframes, "
                f"{stats['corrections']} corrections -> {args.out}", stats)
    return EXIT_OK


def cmd_fuse(args) -> int:
    with _reading("dataset"):
        ds = Dataset(args.dataset)
    cfg = _run_config(args, ds.meta.get("run"))
    pipe = FusionPipeline(ds.vocabulary, ds.camera, cfg)
    t0 = time.perf_counter()
    for item in ds:
        pipe.process(item)
    wall = time.perf_counter() - t0
    out = args.out or os.path.join(args.dataset, "graph.json")
    _write_text(out, export_graph(pipe.graph))
    s = pipe.stats.as_dict(pipe.graph)
    s.pop("wall_time")
    s["wall_time_s"] = round(wall, 3)
    s["out"] = out
    _emit(args, f"keyframes={s['keyframes']} objects={s['objects']} edges={s['edges']} "
                f"regions={s['regions']} corrections={s['corrections']} wall_time_s={wall:.2f}", s)
    return EXIT_OK


def _load_graph(path: str) -> dict:
    with _reading("graph"):
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        for key in ("objects", "relations", "regions", "landmarks"):
            if key not in doc:
                raise InputError(f"graph: {path} lacks {key!r}")
    return doc


def _load_truth(path: str):
    with _reading("truth"):
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return raw, ScenarioTruth.from_dict(raw)


def _check_pair(ds: Dataset, raw_truth: dict, truth: ScenarioTruth, items: Sequence) -> None:
    """Refuse a truth file that was not generated alongside the dataset."""
    for key in ("scene", "seed"):
        a, b = ds.meta.get(key), raw_truth.get(key)
        if a is not None and b is not None and a != b:
            raise InputError(f"dataset and truth disagree on {key}: {a!r} vs {b!r}")
    known = {o["id"] for o in truth.objects} | {o["id"] for o in truth.landmarks}
    for it in items:
        if not hasattr(it, "panoptic"):
            continue
        stray = sorted(set(it.panoptic.instance_table) - known)
        if stray:
            raise InputError(f"keyframe {it.index} shows instances {stray[:5]} absent from truth")


def cmd_eval(args) -> int:
    with _reading("dataset"):
        ds = Dataset(args.dataset)
    raw, truth = _load_truth(args.truth or os.path.join(args.dataset, "truth.json"))
    graph = _load_graph(args.graph or os.path.join(args.dataset, "graph.json"))
    items = list(ds)
    _check_pair(ds, raw, truth, items)
    scene, seed = ds.meta.get("scene", ""), ds.meta.get("seed", "")
    d_max = args.d_max if args.d_max is not None else D_MAX
    oe = eval_objects(items, ds.camera, truth, graph, d_max)
    if args.kind == "objects":
        rows, columns = oe.rows(scene, seed), OBJECT_COLUMNS
        text = (f"centroid error: single-frame {oe.baseline.value:.3f} m, fused {oe.fused.value:.3f} m "
                f"({oe.improvement_pct:.1f}% lower)")
        payload = {"single_frame": oe.baseline.value, "fused": oe.fused.value,
                   "improvement_pct": oe.improvement_pct, "matched": len(oe.match.pairs),
                   "excluded": oe.excluded}
    else:
        re_ = eval_relations(items, ds.vocabulary, truth, graph, oe.match, d_max)
        rows, columns = re_.rows(scene, seed), RELATION_COLUMNS
        text = (f"relation accuracy: single-frame {re_.baseline_accuracy:.1f}%, fused "
                f"{re_.fused_accuracy:.1f}% (+{re_.improvement_points:.1f} points)")
        payload = {"single_frame": re_.baseline_accuracy, "fused": re_.fused_accuracy,
                   "improvement_points": re_.improvement_points, "truth": len(re_.truth),
                   "baseline_keyframe": re_.baseline_keyframe}
    if args.out:
        write_csv(args.out, columns, rows)
        payload["out"] = args.out
    _emit(args, text, payload)
    return EXIT_OK


def cmd_search(args) -> int:
    graph = _load_graph(args.graph)
    _raw, truth = _load_truth(args.truth)
    with _reading("prior"):
        prior = LikelihoodPrior.load(args.prior or os.path.join(DATA_DIR, "prior.toml"))
    classes = {o["class"] for o in truth.objects}
    if args.target not in classes:
        raise InputError(f"unknown target class {args.target!r}: not among the truth objects")
    with _reading("target"):
        if args.instance is not None:
            obj = truth.object(args.instance)
            if obj["class"] != args.target:
                raise InputError(f"instance {args.instance} is a {obj['class']}, not a {args.target}")
        target_position(truth, args.instance, args.target)
    instance = args.instance
    if instance is None:
        instance = next(o["id"] for o in truth.objects if o["class"] == args.target)
    cfg = _run_config(args)
    modes = MODES if args.mode == "both" else (args.mode,)
    rows, lines, payload = [], [], []
    for mode in modes:
        p = plan(graph, args.target, prior, mode, tuple(args.start))
        res = execute(p, truth, instance, cfg.speed, cfg.t_look, cfg.r_s)
        rows.append(result_row(args.name or args.target, args.target, mode, res))
        lines.append(f"{mode}: {'found' if res.found else 'not found'} after {res.time_s:.2f} s "
                     f"({res.path_m:.2f} m, {res.dwells} looks)")
        payload.append({"mode": mode, "time_s": res.time_s, "path_m": res.path_m,
                        "found": res.found, "dwells": res.dwells})
    if args.out:
        write_csv(args.out, SEARCH_COLUMNS, rows)
    if args.json:
        print(json.dumps({"target": args.target, "instance": instance, "results": payload}, sort_keys=True))
    else:
        print("\n".join(lines))
    return EXIT_OK


def cmd_export_prompt(args) -> int:
    graph = _load_graph(args.graph)
    text = export_prompt(graph, args.target)
    if args.out:
        _write_text(args.out, text)
        _emit(args, f"wrote {args.out}", {"out": args.out, "lines": text.count("\n")})
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_repro(args) -> int:
    if args.seeds < 1:
        raise InputError("--seeds must be at least 1")
    cfg = _run_config(args) if args.config or args.voxel_size else None
    base = args.seed if args.seed is not None else 0
    log = None if args.json else print
    t0 = time.perf_counter()
    paths = repro(args.out, args.seeds, base, cfg, log=log)
    _emit(args, f"wrote {', '.join(sorted(os.path.basename(p) for p in paths.values()))} "
                f"to {args.out} in {time.perf_counter() - t0:.1f} s",
          {"paths": paths, "seeds": args.seeds, "base_seed": base})
    return EXIT_OK


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file of run settings (a [run] table or top-level keys)")
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--out", default=None, help="output file or directory")
    common.add_argument("--json", action="store_true", help="print machine-readable stats")

    p = argparse.ArgumentParser(prog="scenefuse", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="render a synthetic dataset and its truth")
    s.add_argument("--scene", required=True, help="scene TOML, or a bundled scene name")
    for flag, typ in (("--p-flip", float), ("--p-flip-relation", float), ("--sigma-d", float),
                      ("--drift-trans", float), ("--drift-rot", float), ("--erosion", int)):
        s.add_argument(flag, type=typ, default=None)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fuse", parents=[common], help="fuse a dataset into a scene graph")
    s.add_argument("--dataset", required=True)
    s.add_argument("--voxel-size", type=float, default=None)
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("eval", parents=[common], help="score a fused graph against truth")
    s.add_argument("kind", choices=("objects", "relations"))
    s.add_argument("--dataset", required=True)
    s.add_argument("--truth", default=None, help="default: <dataset>/truth.json")
    s.add_argument("--graph", default=None, help="default: <dataset>/graph.json")
    s.add_argument("--d-max", type=float, default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("search", parents=[common], help="plan and simulate an object search")
    s.add_argument("--graph", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--target", required=True, help="target class")
    s.add_argument("--instance", type=int, default=None, help="target instance (default: the only one)")
    s.add_argument("--mode", choices=MODES + ("both",), default="both")
    s.add_argument("--prior", default=None, help="likelihood prior TOML (default: bundled)")
    s.add_argument("--start", type=float, nargs=2, default=(0.0, 0.0), metavar=("X", "Y"))
    s.add_argument("--name", default=None, help="scenario label for the CSV row")
    s.set_defaults(func=cmd_search)

    s = sub.add_parser("export-prompt", parents=[common], help="render a graph as a text prompt")
    s.add_argument("--graph", required=True)
    s.add_argument("--target", default=None)
    s.set_defaults(func=cmd_export_prompt)

    s = sub.add_parser("repro", parents=[common], help="run the full benchmark into --out")
    s.add_argument("--seeds", type=int, default=10)
    s.add_argument("--voxel-size", type=float, default=None)
    s.set_defaults(func=cmd_repro)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in ("simulate", "repro") and not args.out:
        parser.error(f"{args.command} needs --out")
    try:
        return args.func(args)
    except (InputError, SceneSpecError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - report, don't dump a traceback
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
