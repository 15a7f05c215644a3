"""Watch an uncontrolled outbreak move through the compartments.

Seeds the standard (E=8, It=2, Is=2) starting condition and advances the
engine day by day with no testing at all.
"""

import numpy as np

from surveilsim import (EpidemicState, PopulationConfig, advance_day,
                        build_static_layers, sample_random_layer,
                        seed_epidemic, synthesize_population)

cfg = PopulationConfig(n=2000, rng_seed=3, random_degree_mu=20.0,
                       risk_dispersion_n=20000)
pop = synthesize_population(cfg)
layers = build_static_layers(pop, cfg)
rng = np.random.default_rng(3)

state = EpidemicState(pop)
seed_epidemic(state, {"E": 8, "It": 2, "Is": 2}, rng)

print("day     S     E    It    Is    Ia     R   cumulative")
for day in range(1, 121):
    layers.attach_random_layer(sample_random_layer(pop, 0.5, rng, mu=20.0), day)
    advance_day(state, layers, rng, risk_scale=0.5, import_rate=3e-4)
    if day % 10 == 0:
        s, e, it, is_, ia, r = state.compartment_counts()
        print(f"{day:3d} {s:5d} {e:5d} {it:5d} {is_:5d} {ia:5d} {r:5d}   "
              f"{state.cumulative_infections / pop.n:.1%}")

print(f"\nfinal cumulative incidence: {state.cumulative_infections / pop.n:.1%}")
