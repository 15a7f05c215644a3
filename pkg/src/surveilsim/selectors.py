"""Daily design selection: targeting step, per-design estimates, and the loop.

Each day the currently deployed design allocates the test budget, results
feed the learner bank, and every candidate design is scored three ways: a
windowed inverse-weighted loss, a targeted plug-in estimate of expected
detections per capita, and the lower bound of its confidence interval.  The
chosen selector picks tomorrow's design; before any information has accrued
the loop deploys uniform random testing.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .config import ExperimentConfig, parse_catalog_token
from .designs import (DesignContext, TestRound, allocate, design_probabilities,
                      effective_probabilities)
from .epidemic import COMPARTMENTS, IS, EpidemicState, advance_day, apply_isolation, seed_epidemic
from .learners import (FALLBACK_PREDICTION, PRED_CLIP, CandidateLearner,
                       FeatureExtractor, OnlineCvLedger, TrainingBuffer,
                       ensemble_fit)
from .population import NetworkLayers, Population, sample_random_layer

EIF_TOL = 1e-10
EPSILON_BOUND = 10.0


@dataclass
class TmleFit:
    """Result of the one-dimensional logistic fluctuation."""

    epsilon: float
    targeted: np.ndarray       # Q*(1, C_i) for every agent
    weights: np.ndarray        # g*/g on tested rows
    degenerate: bool
    eif_mean: float            # (1/n) sum of weighted residuals after targeting


@dataclass
class DesignEstimate:
    """Per-design daily summary feeding the selectors."""

    design: str
    psi: float
    sigma: float
    ci_lo: float
    ci_hi: float
    window_loss: float         # trailing mean held-out loss; nan if no window yet
    epsilon: float = 0.0
    degenerate: bool = False


def tmle_fluctuate(q_tested: np.ndarray, outcomes: np.ndarray, weights: np.ndarray,
                   q_all: np.ndarray, n: int) -> TmleFit:
    """Solve the weighted intercept fluctuation so the EIF mean vanishes.

    The score sum_m w_m (y_m - expit(logit q_m + eps)) is monotone in eps;
    a safeguarded Newton iteration with a bisection bracket finds the root.
    Days whose tested outcomes are all identical have no finite root: eps is
    clamped to +/-10 and flagged degenerate.
    """
    q_all = np.clip(q_all, PRED_CLIP, 1.0 - PRED_CLIP)
    q_tested = np.clip(q_tested, PRED_CLIP, 1.0 - PRED_CLIP)
    off = logit(q_tested)

    def score(eps: float) -> float:
        return float(np.sum(weights * (outcomes - expit(off + eps))))

    degenerate = False
    if len(outcomes) == 0 or np.all(weights <= 0):
        eps = 0.0
    elif np.all(outcomes[weights > 0] == outcomes[weights > 0][0]):
        eps = EPSILON_BOUND if outcomes[weights > 0][0] > 0 else -EPSILON_BOUND
        degenerate = True
    else:
        lo, hi = -EPSILON_BOUND, EPSILON_BOUND
        s_lo, s_hi = score(lo), score(hi)
        if s_lo < 0 or s_hi > 0:  # root outside the bracket
            eps = lo if abs(s_lo) < abs(s_hi) else hi
            degenerate = True
        else:
            eps = 0.0
            for _ in range(200):
                s = score(eps)
                if abs(s) < EIF_TOL:
                    break
                if s > 0:
                    lo = eps
                else:
                    hi = eps
                mu = expit(off + eps)
                deriv = float(np.sum(weights * mu * (1.0 - mu)))
                step = eps + s / deriv if deriv > 0 else None
                eps = step if step is not None and lo < step < hi else 0.5 * (lo + hi)
            else:
                degenerate = abs(score(eps)) >= EIF_TOL

    targeted = expit(logit(q_all) + eps)
    targeted_tested = expit(off + eps)
    eif_mean = float(np.sum(weights * (outcomes - targeted_tested))) / n
    return TmleFit(eps, targeted, weights, degenerate, eif_mean)


def plugin_value(q_star: np.ndarray, a_eff: np.ndarray) -> float:
    """Expected detections per capita: (1/n) sum_i a_i Q*(1, C_i)."""
    return float(a_eff @ q_star) / len(q_star)


def eif_variance(q_star_tested: np.ndarray, outcomes: np.ndarray,
                 weights: np.ndarray, n: int) -> float:
    """Empirical variance of the influence terms; untested rows contribute 0."""
    terms = weights * (outcomes - q_star_tested)
    return float(np.sum(terms ** 2)) / n


def select_design(kind: str, estimates: list[DesignEstimate],
                  incumbent: str) -> str:
    """Pick tomorrow's design; ties prefer the incumbent, then lowest index."""
    if not estimates:
        raise ValueError("no design estimates")
    if kind == "loss_based":
        values = [-e.window_loss for e in estimates]
        if all(math.isnan(v) for v in values):
            return incumbent
    elif kind == "tmle_point":
        values = [e.psi for e in estimates]
    elif kind == "tmle_ci":
        values = [e.ci_lo for e in estimates]
    else:
        raise ValueError(f"unknown selector kind '{kind}'")
    best = max(v for v in values if not math.isnan(v))
    winners = [e.design for e, v in zip(estimates, values) if v == best]
    if incumbent in winners:
        return incumbent
    return winners[0]


@dataclass
class DayRecord:
    day: int
    counts: np.ndarray
    tests: int
    positives: int
    cumulative_infections: int
    deployed: str
    selected: str


@dataclass
class SelectorRow:
    day: int
    design: str
    psi: float
    sigma: float
    ci_lo: float
    ci_hi: float
    window_loss: float
    chosen: bool


@dataclass
class LedgerRow:
    day: int
    candidate: str
    cumulative_risk: float
    is_winner: bool


@dataclass
class TrajectoryRecord:
    strategy: str
    replicate: int
    n: int
    days: list[DayRecord] = field(default_factory=list)
    selector_rows: list[SelectorRow] = field(default_factory=list)
    ledger_rows: list[LedgerRow] = field(default_factory=list)
    test_log: list[tuple[int, int, str, float, int]] = field(default_factory=list)
    state_log: list[tuple[int, int, str, int]] = field(default_factory=list)
    fallback_events: list[str] = field(default_factory=list)
    psi_tau: float = float("nan")
    eif_abs_max: float = 0.0   # largest non-degenerate post-targeting |EIF mean|
    ensemble_gaps: list[float] = field(default_factory=list)

    def cumulative_curve(self) -> np.ndarray:
        return np.array([d.cumulative_infections for d in self.days]) / self.n

    def final_incidence(self) -> float:
        return self.days[-1].cumulative_infections / self.n


_FIXED_DESIGNS = {
    "no_testing": ("no_testing", "", "rank"),
    "random": ("random", "", "sample"),
    "symptomatic": ("symptomatic", "", "rank"),
    "contact_tracing": ("contact_tracing", "", "rank"),
    "symptomatic_contact": ("symptomatic_contact", "", "rank"),
    "perfect": ("perfect", "", "rank"),
    "glm_risk": ("risk", "full_bn", "rank"),
}
_SELECTOR_OF = {"osl_loss": "loss_based", "osl_tmle": "tmle_point",
                "osl_tmle_ci": "tmle_ci"}


def _traced_mask(n: int, positives: np.ndarray, layers: NetworkLayers,
                 prev_random_edges: np.ndarray | None = None) -> np.ndarray:
    """Known network of yesterday's positives: household and class co-members,
    plus their recorded random encounters when that layer is observable."""
    mask = np.zeros(n, dtype=bool)
    if len(positives) == 0:
        return mask
    pos_set = np.zeros(n, dtype=bool)
    pos_set[positives] = True
    src, dst = layers.static_src, layers.static_dst
    if len(src):
        mask[src[pos_set[dst]]] = True
    if prev_random_edges is not None and len(prev_random_edges):
        e = prev_random_edges
        mask[e[pos_set[e[:, 1]], 0]] = True
        mask[e[pos_set[e[:, 0]], 1]] = True
    mask[positives] = False
    return mask


def run_surveillance_loop(cfg: ExperimentConfig, strategy: str,
                          pop: Population, layers: NetworkLayers,
                          state: EpidemicState, rng: np.random.Generator,
                          replicate: int = 0) -> TrajectoryRecord:
    """Run one tau-day trajectory under a fixed or adaptive strategy."""
    n = pop.n
    k = cfg.budget_tests
    adaptive = strategy in _SELECTOR_OF
    selector_kind = _SELECTOR_OF.get(strategy)

    seed_epidemic(state, {"E": cfg.seed_exposed, "It": cfg.seed_detectable,
                          "Is": cfg.seed_symptomatic, "Ia": cfg.seed_asymptomatic}, rng)

    needs_learners = adaptive or strategy == "glm_risk"
    candidates: list[CandidateLearner] = []
    ledger: OnlineCvLedger | None = None
    if adaptive:
        candidates = [CandidateLearner.from_token(t) for t in cfg.candidates]
        ledger = OnlineCvLedger(tuple(c.id for c in candidates))
    elif strategy == "glm_risk":
        candidates = [CandidateLearner.from_token("full_bn")]
    extractor = (FeatureExtractor(pop, layers, cfg.random_layer_observable)
                 if needs_learners else None)
    buffer = TrainingBuffer() if needs_learners else None

    catalog = [parse_catalog_token(t, cfg.candidates) for t in cfg.catalog] if adaptive else []
    catalog_names = list(cfg.catalog)

    record = TrajectoryRecord(strategy=strategy, replicate=replicate, n=n)
    incumbent = "random" if adaptive else strategy
    sl_index: int | None = None
    sl_beta: np.ndarray | None = None
    prev_positives = np.zeros(0, dtype=np.int64)
    prev_edges = np.zeros((0, 2), dtype=np.int32)
    loss_windows: dict[str, deque] = {name: deque(maxlen=cfg.loss_window)
                                      for name in catalog_names}
    psi_of_deployed: list[float] = []

    for t in range(1, cfg.tau + 1):
        traced = _traced_mask(n, prev_positives, layers,
                              prev_edges if cfg.random_layer_observable else None)
        edges = sample_random_layer(pop, cfg.risk_scale, rng,
                                    mu=cfg.population.random_degree_mu)
        layers.attach_random_layer(edges, t)

        symptomatic = state.comp == IS
        features = extractor.extract(t, symptomatic) if extractor is not None else None

        preds_full = None
        fitted_mask = np.zeros(len(candidates), dtype=bool)
        if needs_learners:
            preds_full = np.full((n, len(candidates)), FALLBACK_PREDICTION)
            for j, c in enumerate(candidates):
                if c.fitted:
                    preds_full[:, j] = c.predict(features)
                    fitted_mask[j] = True

        risk_predictions: dict[str, np.ndarray] = {}
        if needs_learners:
            for j, c in enumerate(candidates):
                if fitted_mask[j]:
                    risk_predictions[c.id] = preds_full[:, j]
            if adaptive and sl_index is not None and fitted_mask[sl_index]:
                if cfg.use_ensemble and sl_beta is not None:
                    risk_predictions["sl"] = np.clip(
                        preds_full @ sl_beta, PRED_CLIP, 1.0 - PRED_CLIP)
                else:
                    risk_predictions["sl"] = preds_full[:, sl_index]

        ctx = DesignContext(n=n, symptomatic=symptomatic,
                            latent=state.latent_positive(),
                            isolated=state.isolated.copy(), traced=traced,
                            risk_predictions=risk_predictions)

        # 1. allocate today's tests with yesterday's winning design
        dep_kind, dep_learner, dep_mode = (parse_catalog_token(incumbent, cfg.candidates)
                                           if adaptive and incumbent in catalog_names
                                           else _FIXED_DESIGNS.get(incumbent, ("random", "", "sample")))
        g_deploy = design_probabilities(dep_kind, dep_learner, ctx)
        tested, g_used = allocate(g_deploy, dep_mode, k, rng)
        tested_ids = np.flatnonzero(tested)
        round_ = TestRound(day=t, design=incumbent, tested=tested,
                           results=state.latent_positive()[tested_ids],
                           tested_ids=tested_ids, g_used=g_used)
        results = round_.results
        positives = tested_ids[results]
        apply_isolation(state, positives)

        if cfg.debug_dumps:
            for a, res in zip(tested_ids, results):
                record.test_log.append((t, int(a), incumbent, float(g_used[a]),
                                        int(res)))

        # 2. fold results into buffers and the prequential ledger
        y_raw = results.astype(float)
        g_tested = g_used[tested_ids]
        if needs_learners:
            buffer.append_day(t, tested_ids, features[tested_ids], y_raw, g_tested)
            extractor.record_day(tested_ids, results, edges)
        if adaptive:
            ledger.update(t, y_raw, g_tested, preds_full[tested_ids],
                          np.array([c.fitted_through_day for c in candidates]))

        # 3. per-design estimates against the frozen pre-refit risk model
        selected = incumbent
        if adaptive:
            if sl_index is not None and "sl" in risk_predictions:
                q_all = risk_predictions["sl"]
            elif len(buffer) > 0:
                q_all = np.full(n, np.clip(buffer.y.mean(), PRED_CLIP, 1 - PRED_CLIP))
            else:
                q_all = np.full(n, FALLBACK_PREDICTION)
            q_tested = q_all[tested_ids]
            sl_ready = sl_index is not None and "sl" in risk_predictions

            estimates = []
            day_degenerate = True
            for (d_kind, d_learner, d_mode), name in zip(catalog, catalog_names):
                g_s = design_probabilities(d_kind, d_learner, ctx)
                a_s = effective_probabilities(g_s, d_mode, k)
                w_s = np.zeros(len(tested_ids))
                if len(tested_ids):
                    w_s = a_s[tested_ids] / g_tested
                fit = tmle_fluctuate(q_tested, y_raw, w_s, q_all, n)
                if not fit.degenerate and len(tested_ids) and w_s.sum() > 0:
                    day_degenerate = False
                    record.eif_abs_max = max(record.eif_abs_max, abs(fit.eif_mean))
                psi = plugin_value(fit.targeted, a_s)
                q_star_tested = fit.targeted[tested_ids] if len(tested_ids) else np.zeros(0)
                sigma2 = eif_variance(q_star_tested, y_raw, w_s, n)
                sigma = math.sqrt(sigma2)
                half = 1.96 * sigma / math.sqrt(n)
                # the detection rate is identified within [0, k/n]: truncate
                # the interval to the parameter space
                lo = min(max(psi - half, 0.0), psi)
                hi = min(psi + half, k / n)
                if sl_ready and len(tested_ids):
                    loss = float(np.sum((1.0 / g_tested)
                                        * (y_raw - a_s[tested_ids] * q_tested) ** 2)) / n
                    loss_windows[name].append(loss)
                wl = (sum(loss_windows[name]) / len(loss_windows[name])
                      if loss_windows[name] else float("nan"))
                estimates.append(DesignEstimate(name, psi, sigma, lo, hi, wl,
                                                fit.epsilon, fit.degenerate))

            # 4. pick tomorrow's design.  Before the estimates carry any
            # information every design ties, and the tie-break falls through
            # to the lowest catalog index; afterwards the selector rules.
            if selector_kind == "loss_based":
                ready = sl_ready and any(loss_windows[n_] for n_ in catalog_names)
            else:
                ready = sl_ready and not day_degenerate
            if ready:
                selected = select_design(selector_kind, estimates, incumbent)
            elif incumbent not in catalog_names:
                selected = catalog_names[0]
            deployed_est = next((e for e in estimates if e.design == incumbent), None)
            if deployed_est is not None and not math.isnan(deployed_est.psi):
                psi_of_deployed.append(deployed_est.psi)
            for e in estimates:
                record.selector_rows.append(SelectorRow(
                    t, e.design, e.psi, e.sigma, e.ci_lo, e.ci_hi,
                    e.window_loss, e.design == selected))

        # 5. refit candidates on everything observed so far
        if needs_learners:
            for c in candidates:
                c.fit(buffer, t)
            fitted_now = np.array([c.fitted for c in candidates])
            if adaptive and fitted_now.any():
                sl_index = ledger.discrete_select(eligible=fitted_now)
                for j, c in enumerate(candidates):
                    record.ledger_rows.append(LedgerRow(
                        t, c.id, float(ledger.cumulative[j]), j == sl_index))
                if cfg.use_ensemble:
                    sl_beta = ensemble_fit(ledger, eligible=fitted_now)
                    gap = ledger.ensemble_risk(sl_beta) - float(ledger.cumulative[
                        ledger.discrete_select(eligible=fitted_now)])
                    record.ensemble_gaps.append(gap)

        # 6. advance the epidemic; record end-of-day totals
        advance_day(state, layers, rng, cfg.risk_scale, cfg.isolation_factor,
                    cfg.import_rate)
        if cfg.debug_dumps:
            for a in np.flatnonzero(state.comp != 0):
                record.state_log.append((t, int(a), COMPARTMENTS[state.comp[a]],
                                         int(state.isolated[a])))
        record.fallback_events.extend(ctx.fallback_events)
        record.days.append(DayRecord(t, state.compartment_counts(), len(tested_ids),
                                     int(len(positives)), state.cumulative_infections,
                                     incumbent, selected))
        incumbent = selected
        prev_positives = positives
        prev_edges = edges

    if psi_of_deployed:
        record.psi_tau = float(np.mean(psi_of_deployed))
    return record
