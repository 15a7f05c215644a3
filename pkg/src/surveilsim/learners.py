"""Online risk estimation from tested agents only.

A bank of weighted logistic candidates regresses the tested outcome on a
fixed-dimensional summary of the observed past.  Candidates differ in how
they weight history (full, trailing window, exponential decay) and in their
feature set, covering structure shared across both agents and days, across
days only, or across agents only.  A prequential ledger scores every
candidate on the next day's tested rows with inverse-probability-weighted
squared error and backs a discrete selector and a convex ensemble.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .config import parse_candidate_token
from .population import Population, NetworkLayers

PRED_CLIP = 1e-6
FALLBACK_PREDICTION = 0.5  # scored for a candidate that is not yet fittable
DAYS_SINCE_NEG_CAP = 30

# Contact-count features cover every contact layer, including the day's
# recorded random encounters.  Lookbacks are disjoint lag bands within the
# 7-day window: yesterday, 2-3 days ago, 4-7 days ago (the band in which an
# exposed contact typically turns detectable).
FEATURE_NAMES = (
    "symptomatic",
    "hh_pos_1", "hh_pos_3", "hh_pos_7",
    "class_pos_1", "class_pos_3", "class_pos_7",
    "rand_pos_1", "rand_pos_3", "rand_pos_7",
    "communal", "in_person",
    "age_0", "age_1", "age_2", "age_3", "age_4", "age_5",
    "baseline_risk", "days_since_neg", "positivity_7d", "day",
)
N_FEATURES = len(FEATURE_NAMES)
_NETWORK_COLS = tuple(range(1, 10))
_BASE_COLS = tuple(i for i in range(N_FEATURES) if i not in _NETWORK_COLS)


def feature_columns(feature_set: str) -> tuple[int, ...]:
    if feature_set == "bn":
        return tuple(range(N_FEATURES))
    if feature_set == "base":
        return _BASE_COLS
    raise ValueError(f"unknown feature set '{feature_set}'")


class FeatureExtractor:
    """Rolling summaries of the observed past, one fixed-length row per agent.

    Everything here is a function of observable data: symptoms, test results,
    and the known contact structure.  The latent infection status never
    enters.
    """

    def __init__(self, pop: Population, layers: NetworkLayers,
                 random_observable: bool = False):
        self.pop = pop
        self.layers = layers
        self.random_observable = random_observable
        n = pop.n
        self._static = np.zeros((n, N_FEATURES))
        self._static[:, 10] = pop.communal
        self._static[:, 11] = pop.attends_in_person
        self._static[np.arange(n), 12 + pop.age_band] = 1.0
        self._static[:, 18] = pop.baseline_risk
        self.days_since_neg = np.full(n, DAYS_SINCE_NEG_CAP, dtype=np.int32)
        self._contact_counts: deque[np.ndarray] = deque(maxlen=7)  # (3, n) per day
        self._test_totals: deque[tuple[int, int]] = deque(maxlen=7)

    def extract(self, day: int, symptomatic: np.ndarray) -> np.ndarray:
        """Feature matrix for all agents at the start of ``day`` (pre-test)."""
        rows = self._static.copy()
        rows[:, 0] = symptomatic
        if self._contact_counts:
            stack = np.stack(self._contact_counts)  # (days, 3, n), oldest first
            m = len(stack)
            for j, (lo, hi) in enumerate(((1, 1), (2, 3), (4, 7))):
                if m < lo:
                    continue
                band = stack[max(m - hi, 0):m - lo + 1].sum(axis=0)
                rows[:, 1 + j] = band[0]
                rows[:, 4 + j] = band[1]
                rows[:, 7 + j] = band[2]
        rows[:, 19] = np.minimum(self.days_since_neg, DAYS_SINCE_NEG_CAP)
        tests = sum(t for t, _ in self._test_totals)
        pos = sum(p for _, p in self._test_totals)
        rows[:, 20] = pos / tests if tests else 0.0
        rows[:, 21] = day
        return rows

    def record_day(self, tested_ids: np.ndarray, results: np.ndarray,
                   random_edges: np.ndarray) -> None:
        """Fold one day's test results and encounter graph into the summaries."""
        n = self.pop.n
        self.days_since_neg = np.minimum(self.days_since_neg + 1, DAYS_SINCE_NEG_CAP)
        counts = np.zeros((3, n))
        results = np.asarray(results, dtype=bool)
        positives = tested_ids[results] if len(tested_ids) else np.zeros(0, dtype=int)
        if len(tested_ids):
            self.days_since_neg[tested_ids[~results]] = 0
        if len(positives):
            pos_mask = np.zeros(n, dtype=bool)
            pos_mask[positives] = True
            src, dst = self.layers.static_src, self.layers.static_dst
            if len(src):
                hit = pos_mask[dst]
                hh = hit & (self.layers.static_layer == 0)
                cl = hit & (self.layers.static_layer == 1)
                np.add.at(counts[0], src[hh], 1.0)
                np.add.at(counts[1], src[cl], 1.0)
            if self.random_observable and len(random_edges):
                for a, b in ((random_edges[:, 0], random_edges[:, 1]),
                             (random_edges[:, 1], random_edges[:, 0])):
                    hit = pos_mask[b]
                    if hit.any():
                        np.add.at(counts[2], a[hit], 1.0)
        self._contact_counts.append(counts)
        self._test_totals.append((len(tested_ids), int(len(positives))))


class TrainingBuffer:
    """Tested rows only: (day, agent, features, outcome, test probability)."""

    def __init__(self):
        self.day = np.zeros(0, dtype=np.int32)
        self.agent = np.zeros(0, dtype=np.int32)
        self.x = np.zeros((0, N_FEATURES))
        self.y = np.zeros(0)
        self.g = np.zeros(0)

    def __len__(self) -> int:
        return len(self.day)

    def append_day(self, day: int, ids: np.ndarray, x_rows: np.ndarray,
                   outcomes: np.ndarray, g: np.ndarray) -> None:
        if len(ids) == 0:
            return
        self.day = np.concatenate([self.day, np.full(len(ids), day, dtype=np.int32)])
        self.agent = np.concatenate([self.agent, np.asarray(ids, dtype=np.int32)])
        self.x = np.vstack([self.x, x_rows])
        self.y = np.concatenate([self.y, np.asarray(outcomes, dtype=float)])
        self.g = np.concatenate([self.g, np.asarray(g, dtype=float)])


def fit_weighted_logistic(x: np.ndarray, y: np.ndarray, w: np.ndarray,
                          damping: float = 1e-4, max_iter: int = 100,
                          tol: float = 1e-8,
                          warm: np.ndarray | None = None) -> np.ndarray | None:
    """Ridge-damped IRLS for a weighted Bernoulli log-likelihood.

    Returns the coefficient vector (intercept included in x), or None when
    the fit stays unstable even at the maximum damping.
    """
    active = w > 0
    if active.sum() == 0:
        return None
    ya = y[active]
    if ya.min() == ya.max():
        return None
    xa, wa = x[active], w[active]
    d = x.shape[1]

    def attempt(beta: np.ndarray, lam: float) -> np.ndarray | None:
        for _ in range(max_iter):
            mu = expit(xa @ beta)
            grad = xa.T @ (wa * (ya - mu)) - lam * beta
            curv = wa * mu * (1.0 - mu)
            h = (xa * curv[:, None]).T @ xa
            h[np.diag_indices_from(h)] += lam
            try:
                delta = np.linalg.solve(h, grad)
            except np.linalg.LinAlgError:
                return None
            # trust-region cap: a saturated start yields near-zero curvature
            # and an exploding Newton step otherwise
            big = np.abs(delta).max()
            if big > 10.0:
                delta *= 10.0 / big
            beta = beta + delta
            if not np.isfinite(beta).all() or np.abs(beta).max() > 100.0:
                return None
            if np.abs(delta).max() < tol:
                break
        return beta

    starts = [np.zeros(d)]
    if warm is not None and len(warm) == d:
        starts.insert(0, warm.copy())
    lam = damping
    while lam <= 0.1 + 1e-12:
        for start in starts:
            beta = attempt(start, lam)
            if beta is not None:
                return beta
        lam *= 10.0
    return None


@dataclass
class CandidateLearner:
    """One working-model-indexed logistic candidate."""

    id: str
    weighting: str           # "full" | "window" | "exp"
    param: float             # window length or decay rate
    feature_set: str         # "base" | "bn"
    coef: np.ndarray | None = None
    fitted: bool = False
    fitted_through_day: int = -1

    @classmethod
    def from_token(cls, token: str) -> "CandidateLearner":
        kind, param, feats = parse_candidate_token(token)
        return cls(id=token, weighting=kind, param=param, feature_set=feats)

    def row_weights(self, row_days: np.ndarray, now_day: int) -> np.ndarray:
        lag = now_day - row_days
        if self.weighting == "full":
            return np.ones(len(row_days))
        if self.weighting == "window":
            return (lag <= self.param).astype(float)
        if self.weighting == "exp":
            return (1.0 - self.param) ** lag
        raise ValueError(f"unknown weighting '{self.weighting}'")

    def fit(self, buffer: TrainingBuffer, now_day: int) -> bool:
        """Refit on the buffer as of ``now_day``; returns the fitted flag."""
        cols = feature_columns(self.feature_set)
        w = self.row_weights(buffer.day, now_day) if len(buffer) else np.zeros(0)
        active = w > 0
        if active.sum() == 0 or len({*buffer.y[active]}) < 2:
            self.fitted = False
            return False
        x = np.column_stack([np.ones(len(buffer)), buffer.x[:, cols]])
        beta = fit_weighted_logistic(x, buffer.y, w, warm=self.coef)
        if beta is None:
            self.fitted = False
            return False
        self.coef = beta
        self.fitted = True
        self.fitted_through_day = now_day
        return True

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Infection probability per agent; requires a fitted model."""
        if not self.fitted or self.coef is None:
            raise ValueError(f"candidate {self.id} is not fitted")
        cols = feature_columns(self.feature_set)
        x = np.column_stack([np.ones(len(features)), features[:, cols]])
        return np.clip(expit(x @ self.coef), PRED_CLIP, 1.0 - PRED_CLIP)


@dataclass
class OnlineCvLedger:
    """Cumulative prequential risk per candidate, plus held-out rows for ensembling."""

    candidate_ids: tuple[str, ...]
    cumulative: np.ndarray = field(init=False)
    daily_losses: list[tuple[int, np.ndarray]] = field(default_factory=list)
    _held_y: list[np.ndarray] = field(default_factory=list)
    _held_invg: list[np.ndarray] = field(default_factory=list)
    _held_preds: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.cumulative = np.zeros(len(self.candidate_ids))

    def update(self, day: int, outcomes: np.ndarray, g: np.ndarray,
               preds: np.ndarray, fitted_through: np.ndarray) -> None:
        """Score day-``day`` tested rows for every candidate.

        ``preds`` has one column per candidate (fallback predictions for the
        unfitted ones).  Prequential honesty is asserted: every fitted
        candidate must have been trained strictly before ``day``.
        """
        if np.any(fitted_through >= day):
            raise ValueError("candidate fitted on or after the held-out day")
        if len(outcomes) == 0:
            self.daily_losses.append((day, np.zeros(len(self.candidate_ids))))
            return
        invg = 1.0 / np.asarray(g)
        losses = (invg[:, None] * (outcomes[:, None] - preds) ** 2).sum(axis=0)
        self.cumulative += losses
        self.daily_losses.append((day, losses))
        self._held_y.append(np.asarray(outcomes, dtype=float))
        self._held_invg.append(invg)
        self._held_preds.append(preds)

    def discrete_select(self, eligible: np.ndarray | None = None) -> int:
        """Index of the candidate minimizing cumulative risk (ties: lowest index)."""
        if len(self.candidate_ids) == 0:
            raise ValueError("empty ledger")
        risks = self.cumulative.copy()
        if eligible is not None:
            if not eligible.any():
                raise ValueError("no eligible candidate")
            risks[~eligible] = np.inf
        return int(np.argmin(risks))

    def held_out_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self._held_y:
            return np.zeros(0), np.zeros(0), np.zeros((0, len(self.candidate_ids)))
        return (np.concatenate(self._held_y), np.concatenate(self._held_invg),
                np.vstack(self._held_preds))

    def ensemble_risk(self, beta: np.ndarray) -> float:
        y, invg, preds = self.held_out_arrays()
        if len(y) == 0:
            return 0.0
        return float((invg * (y - preds @ beta) ** 2).sum())


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.flatnonzero(u - css / np.arange(1, len(v) + 1) > 0)[-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def ensemble_fit(ledger: OnlineCvLedger, eligible: np.ndarray | None = None,
                 n_iter: int = 500) -> np.ndarray:
    """Convex combination weights minimizing the held-out prequential risk.

    Projected gradient descent with step halving, started at the discrete
    winner's vertex, so the returned risk never exceeds the winner's.
    Ineligible (unfitted) candidates are pinned to weight zero.
    """
    k = len(ledger.candidate_ids)
    if eligible is None:
        eligible = np.ones(k, dtype=bool)
    y, invg, preds = ledger.held_out_arrays()
    beta = np.zeros(k)
    beta[ledger.discrete_select(eligible)] = 1.0
    if len(y) == 0 or eligible.sum() < 2:
        return beta

    idx = np.flatnonzero(eligible)
    p = preds[:, idx]
    b = beta[idx]
    risk = float((invg * (y - p @ b) ** 2).sum())
    step = 1.0
    for _ in range(n_iter):
        grad = -2.0 * p.T @ (invg * (y - p @ b))
        cand = project_to_simplex(b - step * grad)
        cand_risk = float((invg * (y - p @ cand) ** 2).sum())
        if cand_risk <= risk:
            b, risk = cand, cand_risk
        else:
            step *= 0.5
            if step < 1e-16:
                break
    beta = np.zeros(k)
    beta[idx] = b
    return beta
