"""Benchmark runs over the bundled scenes: simulate, fuse, evaluate, search."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .evaluation import (OBJECT_COLUMNS, RELATION_COLUMNS, ObjectEval, RelationEval, eval_objects,
                         eval_relations, write_csv)
from .graph import export_graph, export_prompt
from .pipeline import FusionPipeline, RunConfig
from .planner import (MODES, SEARCH_COLUMNS, LikelihoodPrior, Scenario, execute, load_scenarios, plan,
                      result_row)
from .simulator import SceneSpec, Simulation, bundled_spec, simulate

SCENES = ("indoor_small", "outdoor_lot")
DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


@dataclass(frozen=True)
class BenchmarkNoise:
    p_flip: float = 0.1
    p_flip_relation: float = 0.2
    sigma_d: float = 0.05
    drift_trans: float = 0.01   # m per keyframe
    drift_rot: float = 0.003    # rad per keyframe


def scene_config(spec: SceneSpec, base: Optional[RunConfig] = None, **overrides) -> RunConfig:
    """Fusion settings for a scene: its recommended values, then ``base``, then overrides."""
    cfg = RunConfig.from_dict(dict(spec.run))
    if base is not None:
        changed = {f.name: getattr(base, f.name) for f in dataclasses.fields(base)
                   if getattr(base, f.name) != getattr(RunConfig(), f.name)}
        cfg = cfg.replace(**changed)
    return cfg.replace(**overrides)


def benchmark_spec(scene: str, seed: int, noise: BenchmarkNoise = BenchmarkNoise()) -> SceneSpec:
    spec = bundled_spec(scene)
    return dataclasses.replace(spec, seed=seed).with_noise(**dataclasses.asdict(noise))


@dataclass
class RunOutcome:
    scene: str
    seed: int
    sim: Simulation
    pipeline: FusionPipeline
    graph: str
    objects: ObjectEval
    relations: RelationEval


def run_once(spec: SceneSpec, config: Optional[RunConfig] = None) -> RunOutcome:
    cfg = scene_config(spec, config)
    sim = simulate(spec)
    pipe = FusionPipeline(spec.vocab, spec.camera, cfg).run(sim.items)
    doc = export_graph(pipe.graph)
    oe = eval_objects(sim.items, spec.camera, sim.truth, doc, cfg.d_max)
    re_ = eval_relations(sim.items, spec.vocab, sim.truth, doc, oe.match)
    return RunOutcome(spec.name, spec.seed, sim, pipe, doc, oe, re_)


# ------------------------------------------------------------------ search
def search_setup(path: Optional[str] = None) -> Tuple[SceneSpec, List[Scenario], Tuple[int, ...]]:
    scene, scenarios, remove = load_scenarios(path or os.path.join(DATA_DIR, "scenarios.toml"))
    return bundled_spec(scene), scenarios, remove


def search_graph(spec: SceneSpec, remove: Sequence[int], config: Optional[RunConfig] = None) -> str:
    """Noise-free graph of the scene with the searchable objects taken out."""
    spec = dataclasses.replace(spec, objects=tuple(b for b in spec.objects if b.instance not in remove))
    pipe = FusionPipeline(spec.vocab, spec.camera, scene_config(spec, config)).run(simulate(spec).items)
    return export_graph(pipe.graph)


def scenario_truth_objects(spec: SceneSpec, sc: Scenario) -> List[dict]:
    """Truth objects of the scene with the scenario's target at its placement."""
    out = []
    for b in spec.objects:
        if b.instance == sc.instance:
            continue
        out.append({"id": b.instance, "class": b.cls, "centroid": [float(v) for v in b.center]})
    out.append({"id": sc.instance, "class": sc.target, "centroid": list(sc.position)})
    return sorted(out, key=lambda o: o["id"])


def run_search(graph: str, spec: SceneSpec, scenarios: Sequence[Scenario], prior: LikelihoodPrior,
               config: RunConfig) -> List[dict]:
    rows = []
    for sc in scenarios:
        truth = scenario_truth_objects(spec, sc)
        for mode in MODES:
            p = plan(graph, sc.target, prior, mode, sc.start)
            res = execute(p, truth, sc.instance, config.speed, config.t_look, config.r_s)
            rows.append(result_row(sc.name, sc.target, mode, res))
    return rows


# ------------------------------------------------------------------- repro
def repro(out_dir: str, seeds: int = 10, base_seed: int = 0, config: Optional[RunConfig] = None,
          scenes: Sequence[str] = SCENES, noise: BenchmarkNoise = BenchmarkNoise(),
          log=None) -> Dict[str, str]:
    """Run the whole benchmark and write its CSVs, graphs and prompt into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    obj_rows, rel_rows = [], []
    for scene in scenes:
        for seed in range(base_seed, base_seed + seeds):
            out = run_once(benchmark_spec(scene, seed, noise), config)
            obj_rows += out.objects.rows(scene, seed)
            rel_rows += out.relations.rows(scene, seed)
            run_dir = os.path.join(out_dir, "runs", f"{scene}-{seed:03d}")
            os.makedirs(run_dir, exist_ok=True)
            with open(os.path.join(run_dir, "graph.json"), "w", encoding="utf-8") as fh:
                fh.write(out.graph)
            if log:
                log(f"{scene} seed {seed}: centroid error {out.objects.baseline.value:.3f} -> "
                    f"{out.objects.fused.value:.3f} m, relations {out.relations.baseline_accuracy:.1f} -> "
                    f"{out.relations.fused_accuracy:.1f} %")
    spec, scenarios, remove = search_setup()
    cfg = scene_config(spec, config)
    graph = search_graph(spec, remove, config)
    prior = LikelihoodPrior.load(os.path.join(DATA_DIR, "prior.toml"))
    search_rows = run_search(graph, spec, scenarios, prior, cfg)

    paths = {
        "eval_objects": os.path.join(out_dir, "eval_objects.csv"),
        "eval_relations": os.path.join(out_dir, "eval_relations.csv"),
        "search_results": os.path.join(out_dir, "search_results.csv"),
        "graph": os.path.join(out_dir, "graph.json"),
        "prompt": os.path.join(out_dir, "prompt.txt"),
    }
    write_csv(paths["eval_objects"], OBJECT_COLUMNS, obj_rows)
    write_csv(paths["eval_relations"], RELATION_COLUMNS, rel_rows)
    write_csv(paths["search_results"], SEARCH_COLUMNS, search_rows)
    with open(paths["graph"], "w", encoding="utf-8") as fh:
        fh.write(graph)
    with open(paths["prompt"], "w", encoding="utf-8") as fh:
        fh.write(export_prompt(graph))
    return paths
