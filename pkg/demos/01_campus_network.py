"""Build a synthetic campus and poke at its contact layers.

The population mixes on-campus students (communal rooms inside dorm
buildings), off-campus students (small shared houses), and faculty/staff.
Contacts run over three layers: households, in-person classes, and a fresh
random-encounter graph every day.
"""

import numpy as np

from surveilsim import (PopulationConfig, build_static_layers, neighbors_of,
                        sample_random_layer, synthesize_population)

cfg = PopulationConfig(n=2000, rng_seed=42)
pop = synthesize_population(cfg)

print(f"population: {pop.n} agents")
for code, name in enumerate(("off-campus students", "on-campus students",
                             "faculty/staff")):
    print(f"  {name:20s} {np.sum(pop.group == code)}")
print(f"  attending in person  {pop.attends_in_person.sum()}")
print(f"  mean baseline risk   {pop.baseline_risk.mean():.3f}")

layers = build_static_layers(pop, cfg)
sizes = [len(u) for u in layers.household_units if len(u)]
print(f"\nhousehold units: {len(layers.household_units)} "
      f"(occupied {len(sizes)}, sizes {min(sizes)}..{max(sizes)})")
print(f"classes: {len(layers.classes)} "
      f"(sizes {min(len(c) for c in layers.classes)}.."
      f"{max(len(c) for c in layers.classes)})")

# the random layer is redrawn every day; riskier agents meet more people
rng = np.random.default_rng(7)
edges = sample_random_layer(pop, risk_scale=0.5, rng=rng)
layers.attach_random_layer(edges, day=1)
deg = np.bincount(edges.ravel(), minlength=pop.n)
print(f"\nday-1 random encounters: {len(edges)} pairs, "
      f"degrees {deg.min()}..{deg.max()} (mean {deg.mean():.1f})")

# per-layer neighborhood of one dorm resident
resident = int(np.flatnonzero(pop.communal)[0])
for layer, (ids, prob) in neighbors_of(layers, resident, day=1).items():
    print(f"agent {resident} {layer:9s} p={prob:.3f} contacts={ids.tolist()[:8]}"
          f"{'…' if len(ids) > 8 else ''}")
