import dataclasses
import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from scenefuse.dataset import Vocabulary
from scenefuse.geometry import CameraModel
from scenefuse.graph import export_graph
from scenefuse.pipeline import FusionPipeline, RunConfig
from scenefuse.simulator import bundled_spec, simulate, spec_from_dict

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

TINY_VOCAB = {
    "classes": ["table", "chair", "sofa", "door", "bottle", "cup"],
    "predicates": ["on", "beside", "attached to", "in front of"],
    "large_classes": ["table", "chair", "sofa"],
    "landmark_classes": ["door"],
    "symmetric_predicates": ["beside"],
    "view_dependent_predicates": ["in front of"],
}


@pytest.fixture
def vocab():
    return Vocabulary.from_dict(TINY_VOCAB)


@pytest.fixture
def camera():
    return CameraModel(60.0, 60.0, 32.0, 24.0, 64, 48)


def orbit(center, radius, n, start_deg=0.0):
    """Waypoints on a circle around ``center``, each facing the center."""
    out = []
    for k in range(n + 1):
        a = np.radians(start_deg + 360.0 * k / n)
        x, y = center[0] + radius * np.cos(a), center[1] + radius * np.sin(a)
        out.append([float(x), float(y), float(np.degrees(a) + 180.0)])
    return out


def make_spec(objects, landmarks=(), waypoints=None, noise=None, camera=None, step_m=0.5,
              step_deg=30.0, loop_events=(), seed=0, structure=(), relations=None, run=None):
    """Scene spec over the tiny vocabulary; boxes are (id, class, center, size)."""
    d = {
        "name": "test", "seed": seed, "vocabulary": TINY_VOCAB,
        "camera": camera or {"fx": 60.0, "fy": 60.0, "cx": 32.0, "cy": 24.0, "width": 64, "height": 48,
                             "mount_height": 1.2, "pitch_deg": 20.0, "max_range": 10.0},
        "noise": noise or {},
        "trajectory": {"waypoints": waypoints or [[0.0, 0.0, 0.0]], "step_m": step_m,
                       "step_deg": step_deg, "loop_events": [list(e) for e in loop_events]},
        "objects": [{"id": i, "class": c, "center": list(ce), "size": list(sz)} for i, c, ce, sz in objects],
        "landmarks": [{"id": i, "class": c, "center": list(ce), "size": list(sz)} for i, c, ce, sz in landmarks],
        "structure": [{"center": list(ce), "size": list(sz)} for ce, sz in structure],
    }
    if relations:
        d["relations"] = relations
    if run:
        d["run"] = run
    return spec_from_dict(d)


def fuse(spec, items=None, **overrides):
    cfg = RunConfig.from_dict(dict(spec.run), **overrides)
    if items is None:
        items = simulate(spec).items
    return FusionPipeline(spec.vocab, spec.camera, cfg).run(items)


@pytest.fixture(scope="session")
def indoor_clean():
    """Noise-free bundled apartment: (spec, simulation, pipeline, exported graph)."""
    spec = bundled_spec("indoor_small")
    sim = simulate(spec)
    pipe = fuse(spec, sim.items)
    return spec, sim, pipe, export_graph(pipe.graph)


@pytest.fixture(scope="session")
def outdoor_clean():
    spec = bundled_spec("outdoor_lot")
    sim = simulate(spec)
    pipe = fuse(spec, sim.items)
    return spec, sim, pipe, export_graph(pipe.graph)


def noisy(spec, seed, **noise):
    return dataclasses.replace(spec, seed=seed).with_noise(**noise)


# ------------------------------------------------------ acceptance reporting
CRITERIA = {}


def record_criterion(number, title, ok, detail):
    """Remember (and print) one acceptance verdict for the terminal summary."""
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    CRITERIA[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
