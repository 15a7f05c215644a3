"""End-to-end: replicated comparison, CSV export, and figure rendering.

A shrunken version of the desk-scale experiment.  The exported directory
feeds the `surveilplots` package (or any other CSV consumer).
"""

from pathlib import Path

from surveilsim import (ExperimentConfig, PopulationConfig, run_monte_carlo,
                        summarize_and_export)

cfg = ExperimentConfig(
    population=PopulationConfig(n=800, rng_seed=1, random_degree_mu=20.0,
                                risk_dispersion_n=20000),
    tau=60, budget_tests=24, import_rate=5e-4, isolation_factor=0.6,
    strategies=("no_testing", "random", "symptomatic_contact",
                "osl_tmle_ci", "perfect"),
    n_replicates=5, base_seed=123)

summary = run_monte_carlo(cfg)
print("mean final cumulative incidence over 5 replicates:")
for s in cfg.strategies:
    m, lo, hi = summary.finals[s]
    print(f"  {s:22s} {m:6.1%}  (95% MC interval {lo:.1%}..{hi:.1%})")

out = Path("results/demo_mc")
hashes = summarize_and_export(summary, out)
print(f"\nexported to {out}/ ({', '.join(sorted(hashes))})")
print("render figures with, e.g.:")
print(f"  surveilplots render --kind finals --in {out} --out {out}/finals.png")
