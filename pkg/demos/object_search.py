"""Search for a backpack or a bottle with and without the 'beside' relations.

    python demos/object_search.py
"""
import json
import os

from scenefuse.experiments import DATA_DIR, run_search, scene_config, search_graph, search_setup
from scenefuse.planner import NO_RELATIONS, WITH_RELATIONS, LikelihoodPrior, plan

spec, scenarios, remove = search_setup()
graph = search_graph(spec, remove)
prior = LikelihoodPrior.load(os.path.join(DATA_DIR, "prior.toml"))

doc = json.loads(graph)
names = {o["id"]: f"{o['class']}#{o['id']}" for o in doc["objects"]}
beside = [(e["subject"], e["object"]) for e in doc["relations"] if e["accepted"] and e["predicate"] == "beside"]
print("accepted 'beside' pairs:", ", ".join(f"{names[a]}~{names[b]}" for a, b in beside))

sc = scenarios[0]
for mode in (NO_RELATIONS, WITH_RELATIONS):
    p = plan(graph, sc.target, prior, mode, sc.start)
    stops = [" + ".join(names[a] for a in w.anchors) for w in p.waypoints]
    print(f"\n{mode}: {len(stops)} stops for {sc.target}")
    for i, s in enumerate(stops, 1):
        print(f"  {i:2d}. {s}")

rows = run_search(graph, spec, scenarios, prior, scene_config(spec))
t = {(r["scenario"], r["mode"]): float(r["time_s"]) for r in rows}
print(f"\n{'scenario':<18}{'no-rel (s)':>12}{'with-rel (s)':>14}")
for s in scenarios:
    print(f"{s.name:<18}{t[s.name, NO_RELATIONS]:12.1f}{t[s.name, WITH_RELATIONS]:14.1f}")
mean_no = sum(t[s.name, NO_RELATIONS] for s in scenarios) / len(scenarios)
mean_with = sum(t[s.name, WITH_RELATIONS] for s in scenarios) / len(scenarios)
print(f"{'mean':<18}{mean_no:12.1f}{mean_with:14.1f}   ({(mean_no - mean_with) / mean_no * 100:.1f}% less)")
