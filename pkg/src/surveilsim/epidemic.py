"""Daily-step infection dynamics over the layered contact network.

Compartments follow S -> E -> It -> (Is | Ia) -> R.  Durations are drawn at
infection time from gamma distributions and rounded up to whole-day clocks;
per-edge transmission combines as an independent-exposure complement product.
Detection never alters the disease course, only the isolation flag, which
scales the agent's onward infectiousness.
"""

from __future__ import annotations

import numpy as np

from .population import P_RANDOM, NetworkLayers, Population

S, E, IT, IS, IA, R = 0, 1, 2, 3, 4, 5
COMPARTMENTS = ("S", "E", "It", "Is", "Ia", "R")

# (shape, scale) of the stage-duration gammas, in days.
GAMMA_E = (9.0, 0.5)
GAMMA_IT = (1.0, 1.0)
GAMMA_IS = (13.0, 1.0)
GAMMA_IA = (7.5, 1.0)

ASYMPTOMATIC_FACTOR = 0.61  # 39% relative infectiousness reduction
INFECTIOUS_FLOOR = 0.1


def draw_course(rng: np.random.Generator, will_be_symptomatic: np.ndarray
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample (dur_E, dur_It, dur_I) for a batch of newly infected agents."""
    m = len(will_be_symptomatic)
    dur_e = rng.gamma(GAMMA_E[0], GAMMA_E[1], size=m)
    dur_it = rng.gamma(GAMMA_IT[0], GAMMA_IT[1], size=m)
    dur_i = np.where(will_be_symptomatic,
                     rng.gamma(GAMMA_IS[0], GAMMA_IS[1], size=m),
                     rng.gamma(GAMMA_IA[0], GAMMA_IA[1], size=m))
    return dur_e, dur_it, dur_i


class EpidemicState:
    """Mutable per-agent health state for one trajectory."""

    def __init__(self, pop: Population):
        n = pop.n
        self.pop = pop
        self.n = n
        self.day = 0
        self.comp = np.full(n, S, dtype=np.int8)
        self.days_in = np.zeros(n, dtype=np.int32)
        self.isolated = np.zeros(n, dtype=bool)
        self.will_symptomatic = pop.symptomatic_if_infected.copy()
        self.dur_e = np.full(n, np.nan)
        self.dur_it = np.full(n, np.nan)
        self.dur_i = np.full(n, np.nan)
        self.cumulative_infections = 0

    # -- views ---------------------------------------------------------------

    def latent_positive(self) -> np.ndarray:
        """Y^l: true test-detectable infectious status (It, Is or Ia)."""
        return (self.comp == IT) | (self.comp == IS) | (self.comp == IA)

    def compartment_counts(self) -> np.ndarray:
        return np.bincount(self.comp, minlength=6)

    def infectiousness(self, isolation_factor: float) -> np.ndarray:
        """Transmission multiplier phi for every agent (0 outside It/Is/Ia).

        It ramps linearly toward the transition; Is decays linearly to a 0.1
        floor; Ia is the Is shape scaled by 0.61.  Isolated agents are scaled
        by the isolation factor.
        """
        phi = np.zeros(self.n)
        it = self.comp == IT
        phi[it] = np.minimum(1.0, (self.days_in[it] + 1.0) / (self.dur_it[it] + 1.0))
        for c, scale in ((IS, 1.0), (IA, ASYMPTOMATIC_FACTOR)):
            m = self.comp == c
            phi[m] = scale * np.maximum(INFECTIOUS_FLOOR,
                                        1.0 - self.days_in[m] / self.dur_i[m])
        phi[self.isolated] *= isolation_factor
        return phi


def infectiousness_at(state: EpidemicState, j: int, isolation_factor: float = 0.0) -> float:
    """Multiplier phi for one infectious agent; errors if j is not infectious."""
    c = state.comp[j]
    if c not in (IT, IS, IA):
        raise ValueError(f"agent {j} is in {COMPARTMENTS[c]}, not infectious")
    return float(state.infectiousness(isolation_factor)[j])


def seed_epidemic(state: EpidemicState, seeds: dict[str, int],
                  rng: np.random.Generator) -> EpidemicState:
    """Place randomly chosen agents into the seeded compartments at day 0.

    Agents seeded directly into Is (Ia) have their symptomatic fate forced to
    match; E and It seeds keep their pre-drawn fate.
    """
    unknown = set(seeds) - {"E", "It", "Is", "Ia"}
    if unknown:
        raise ValueError(f"unknown seed compartments: {sorted(unknown)}")
    total = sum(seeds.values())
    if total > state.n:
        raise ValueError("more seeds than agents")
    chosen = rng.choice(state.n, size=total, replace=False)
    pos = 0
    for name, code in (("E", E), ("It", IT), ("Is", IS), ("Ia", IA)):
        count = seeds.get(name, 0)
        idx = chosen[pos:pos + count]
        pos += count
        if count == 0:
            continue
        if code == IS:
            state.will_symptomatic[idx] = True
        elif code == IA:
            state.will_symptomatic[idx] = False
        dur_e, dur_it, dur_i = draw_course(rng, state.will_symptomatic[idx])
        state.comp[idx] = code
        state.days_in[idx] = 0
        state.dur_e[idx] = dur_e
        state.dur_it[idx] = dur_it
        state.dur_i[idx] = dur_i
    state.cumulative_infections = total
    return state


def _log_survival(state: EpidemicState, layers: NetworkLayers, risk_scale: float,
                  phi: np.ndarray) -> np.ndarray:
    """Accumulated log(1 - p * phi) of every agent's infectious exposures."""
    acc = np.zeros(state.n)
    sus = state.comp == S
    infectious = phi > 0.0

    src, dst, p = layers.static_src, layers.static_dst, layers.static_prob
    if len(src):
        m = sus[src] & infectious[dst]
        if m.any():
            np.add.at(acc, src[m], np.log1p(-p[m] * phi[dst[m]]))

    e = layers.random_edges
    if len(e):
        for a, b in ((e[:, 0], e[:, 1]), (e[:, 1], e[:, 0])):
            m = sus[a] & infectious[b]
            if m.any():
                pr = P_RANDOM * (1.0 + risk_scale * state.pop.baseline_risk[a[m]])
                np.add.at(acc, a[m], np.log1p(-pr * phi[b[m]]))
    return acc


def hazard_of(i: int, layers: NetworkLayers, state: EpidemicState,
              risk_scale: float, isolation_factor: float = 0.0) -> float:
    """Probability that susceptible agent i is infected today."""
    if state.comp[i] != S:
        raise ValueError(f"agent {i} is not susceptible")
    phi = state.infectiousness(isolation_factor)
    acc = 0.0
    hh = layers.household_members(i)
    communal_i = layers.building_of[i] >= 0
    for j in hh:
        p = 0.03 + (0.01 if communal_i and layers.building_of[j] >= 0 else 0.0)
        acc += np.log1p(-p * phi[j])
    for j in layers.classmates(i):
        acc += np.log1p(-0.01 * phi[j])
    pr = P_RANDOM * (1.0 + risk_scale * state.pop.baseline_risk[i])
    for j in layers.random_contacts(i):
        acc += np.log1p(-pr * phi[j])
    return float(-np.expm1(acc))


def all_hazards(state: EpidemicState, layers: NetworkLayers, risk_scale: float,
                isolation_factor: float) -> np.ndarray:
    """Vectorized infection probability for every susceptible agent (0 otherwise)."""
    phi = state.infectiousness(isolation_factor)
    acc = _log_survival(state, layers, risk_scale, phi)
    haz = -np.expm1(acc)
    haz[state.comp != S] = 0.0
    return haz


def advance_day(state: EpidemicState, layers: NetworkLayers,
                rng: np.random.Generator, risk_scale: float,
                isolation_factor: float = 0.0,
                import_rate: float = 0.0) -> EpidemicState:
    """Advance the epidemic one day: infections, then clocked transitions.

    Hazards are evaluated against the frozen start-of-day state; an agent
    spends ceil(duration) daily steps in each clocked compartment and makes
    at most one transition per day.
    """
    haz = all_hazards(state, layers, risk_scale, isolation_factor)
    if import_rate > 0.0:
        # outside exposure rides on the agent's own infection risk: the
        # baseline-risk draw is the propensity for risky outside interaction
        p_imp = import_rate * state.pop.baseline_risk * (1.0 + risk_scale * state.pop.baseline_risk)
        haz = 1.0 - (1.0 - haz) * np.where(state.comp == S, 1.0 - p_imp, 1.0)
    new_inf = np.flatnonzero((state.comp == S) & (rng.random(state.n) < haz))

    clocked = state.comp != S
    state.days_in[clocked] += 1

    due = clocked & (state.comp == E) & (state.days_in >= state.dur_e)
    idx = np.flatnonzero(due)
    state.comp[idx] = IT
    state.days_in[idx] = 0
    moved = due

    due = clocked & ~moved & (state.comp == IT) & (state.days_in >= state.dur_it)
    idx = np.flatnonzero(due)
    state.comp[idx] = np.where(state.will_symptomatic[idx], IS, IA)
    state.days_in[idx] = 0
    moved |= due

    due = clocked & ~moved & ((state.comp == IS) | (state.comp == IA)) \
        & (state.days_in >= state.dur_i)
    idx = np.flatnonzero(due)
    state.comp[idx] = R
    state.days_in[idx] = 0

    if len(new_inf):
        dur_e, dur_it, dur_i = draw_course(rng, state.will_symptomatic[new_inf])
        state.comp[new_inf] = E
        state.days_in[new_inf] = 0
        state.dur_e[new_inf] = dur_e
        state.dur_it[new_inf] = dur_it
        state.dur_i[new_inf] = dur_i
        state.cumulative_infections += len(new_inf)

    state.day += 1
    return state


def apply_isolation(state: EpidemicState, detected: np.ndarray) -> EpidemicState:
    """Flag test-positive agents as isolated; their course continues to R."""
    detected = np.asarray(detected, dtype=np.int64)
    if len(detected) == 0:
        return state
    bad = ~np.isin(state.comp[detected], (IT, IS, IA))
    if bad.any():
        raise ValueError("isolation requested for agents who are not test-positive")
    state.isolated[detected] = True
    return state
