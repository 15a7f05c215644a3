"""Testing strategies as probability vectors plus an allocation rule.

Every design produces per-agent test probabilities; ranking or weighted
sampling turns them into at most k tests.  Inverse-probability weighting of
the observed results recovers the latent infection rate.
"""

import numpy as np

from surveilsim import (DesignContext, allocate, design_probabilities,
                        observed_outcome)

rng = np.random.default_rng(11)
n, k = 200, 12

# a toy observable state: 5 symptomatic agents, 30 traced contacts
symptomatic = np.zeros(n, dtype=bool)
symptomatic[:5] = True
latent = symptomatic.copy()
latent[5:20] = True  # asymptomatic infectious nobody can see
traced = np.zeros(n, dtype=bool)
traced[20:50] = True

ctx = DesignContext(n=n, symptomatic=symptomatic, latent=latent,
                    isolated=np.zeros(n, dtype=bool), traced=traced,
                    risk_predictions={"toy": np.clip(latent * 0.5 + rng.random(n) * 0.3,
                                                     1e-6, 1 - 1e-6)})

for kind, learner, mode in (("random", "", "sample"),
                            ("symptomatic", "", "rank"),
                            ("symptomatic_contact", "", "rank"),
                            ("risk", "toy", "rank"),
                            ("perfect", "", "rank")):
    g = design_probabilities(kind, learner, ctx)
    tested, g_used = allocate(g, mode, k, rng)
    found = int(latent[tested].sum())
    print(f"{kind:20s} tests={int(tested.sum()):2d}  positives found={found}")

# the identification trick: tested results re-weighted by 1/g estimate the
# population infection rate even though only a few agents were tested
g = design_probabilities("random", "", ctx)
estimates = []
for _ in range(2000):
    tested, g_used = allocate(g, "sample", k, rng)
    estimates.append(observed_outcome(tested, latent, g_used).mean())
print(f"\nIPW estimate of latent prevalence: {np.mean(estimates):.4f} "
      f"(truth {latent.mean():.4f})")
