"""The online risk-model bank at work inside a running surveillance loop.

Candidates differ in how they weight history (full, trailing windows,
exponential decay).  Each day they are scored prequentially on the next
day's tested outcomes; the discrete super learner is the cumulative-risk
minimizer.
"""

from collections import Counter

from surveilsim import ExperimentConfig, PopulationConfig, run_trajectory

cfg = ExperimentConfig(
    population=PopulationConfig(n=1000, rng_seed=5, random_degree_mu=20.0,
                                risk_dispersion_n=20000),
    tau=60, budget_tests=30, import_rate=1e-3, isolation_factor=0.5,
    strategies=("osl_tmle_ci",), n_replicates=1, base_seed=5)

record = run_trajectory(cfg, "osl_tmle_ci", 0)

print("deployed designs over 60 days:")
for design, days in Counter(d.deployed for d in record.days).most_common():
    print(f"  {design:28s} {days} days")

found = sum(d.positives for d in record.days)
print(f"\npositives found: {found}")
print(f"final cumulative incidence: {record.final_incidence():.1%}")
print(f"largest |EIF mean| after targeting: {record.eif_abs_max:.2e}")
if record.fallback_events:
    print(f"risk-design fallbacks while unfitted: {len(record.fallback_events)}")
