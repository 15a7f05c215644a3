import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit, logit

from surveilsim.config import PopulationConfig
from surveilsim.learners import (N_FEATURES, CandidateLearner,
                                 FeatureExtractor, OnlineCvLedger,
                                 TrainingBuffer, ensemble_fit, feature_columns,
                                 fit_weighted_logistic, project_to_simplex)
from surveilsim.population import build_static_layers, synthesize_population


def make_world(n=300, seed=1):
    cfg = PopulationConfig(n=n, rng_seed=seed)
    pop = synthesize_population(cfg)
    layers = build_static_layers(pop, cfg)
    return pop, layers


def fill_buffer(rows, d=4, seed=0, beta=None):
    """Synthetic buffer whose outcome follows a known logistic model."""
    rng = np.random.default_rng(seed)
    x = np.zeros((rows, N_FEATURES))
    x[:, :d] = rng.normal(size=(rows, d))
    if beta is None:
        beta = np.zeros(d)
    eta = x[:, :d] @ beta
    y = (rng.random(rows) < expit(eta)).astype(float)
    buf = TrainingBuffer()
    per_day = max(rows // 10, 1)
    for day in range(10):
        sl = slice(day * per_day, (day + 1) * per_day)
        ids = np.arange(sl.stop - sl.start)
        if sl.start >= rows:
            break
        buf.append_day(day + 1, ids, x[sl], y[sl], np.full(len(ids), 0.5))
    return buf, x, y


class TestFeatureExtractor:
    def test_day_zero_no_history(self):
        pop, layers = make_world()
        fx = FeatureExtractor(pop, layers)
        rows = fx.extract(0, np.zeros(pop.n, dtype=bool))
        assert rows.shape == (pop.n, N_FEATURES)
        assert np.all(rows[:, 1:10] == 0)      # contact counts empty
        assert np.all(rows[:, 20] == 0)        # positivity
        assert np.all(rows[:, 19] == 30)       # never tested

    def test_housemate_positive_yesterday(self):
        pop, layers = make_world()
        unit = next(u for u in layers.household_units if len(u) >= 2)
        a, b = int(unit[0]), int(unit[1])
        fx = FeatureExtractor(pop, layers)
        fx.record_day(np.array([a]), np.array([True]), np.zeros((0, 2), dtype=np.int32))
        rows = fx.extract(1, np.zeros(pop.n, dtype=bool))
        assert rows[b, 1] == 1.0  # household positives, 1-day lag band
        assert rows[a, 1] == 0.0  # the case itself is not its own contact

    def test_lag_bands_are_disjoint(self):
        pop, layers = make_world()
        unit = next(u for u in layers.household_units if len(u) >= 2)
        a, b = int(unit[0]), int(unit[1])
        fx = FeatureExtractor(pop, layers)
        fx.record_day(np.array([a]), np.array([True]), np.zeros((0, 2), dtype=np.int32))
        for _ in range(4):
            fx.record_day(np.zeros(0, dtype=int), np.zeros(0, dtype=bool), np.zeros((0, 2), dtype=np.int32))
        rows = fx.extract(5, np.zeros(pop.n, dtype=bool))
        assert rows[b, 1] == 0.0  # aged out of the 1-day band
        assert rows[b, 2] == 0.0
        assert rows[b, 3] == 1.0  # now in the 4-7 day band

    def test_fixed_dimension_across_days(self):
        pop, layers = make_world()
        fx = FeatureExtractor(pop, layers)
        dims = set()
        for day in range(5):
            rows = fx.extract(day, np.zeros(pop.n, dtype=bool))
            dims.add(rows.shape)
            fx.record_day(np.array([day]), np.array([False]), np.zeros((0, 2), dtype=np.int32))
        assert dims == {(pop.n, N_FEATURES)}

    def test_latent_state_never_read(self):
        # canary: two worlds identical in observables, different latent mix
        pop, layers = make_world()
        fx1 = FeatureExtractor(pop, layers)
        fx2 = FeatureExtractor(pop, layers)
        sympt = np.zeros(pop.n, dtype=bool)
        sympt[5] = True
        a = fx1.extract(3, sympt)
        b = fx2.extract(3, sympt)  # latent infections differ, features cannot
        assert np.array_equal(a, b)

    def test_positivity_window(self):
        pop, layers = make_world()
        fx = FeatureExtractor(pop, layers)
        fx.record_day(np.arange(10), np.array([True] * 2 + [False] * 8), np.zeros((0, 2), dtype=np.int32))
        rows = fx.extract(1, np.zeros(pop.n, dtype=bool))
        assert rows[0, 20] == pytest.approx(0.2)


class TestWeightedLogistic:
    def test_null_model_recovers_rate(self):
        buf, x, y = fill_buffer(4000, beta=np.zeros(4), seed=1)
        xa = np.column_stack([np.ones(len(buf)), buf.x[:, :4]])
        beta = fit_weighted_logistic(xa, buf.y, np.ones(len(buf)))
        assert abs(beta[0] - logit(y.mean())) < 0.1
        assert np.all(np.abs(beta[1:]) < 0.1)

    def test_planted_coefficients_recovered(self):
        truth = np.array([0.8, -0.5, 0.3, 0.0])
        buf, x, y = fill_buffer(5000, beta=truth, seed=2)
        xa = np.column_stack([np.ones(len(buf)), buf.x[:, :4]])
        beta = fit_weighted_logistic(xa, buf.y, np.ones(len(buf)))
        assert np.all(np.abs(beta[1:5] - truth) < 0.1)

    def test_zero_weight_rows_ignored(self):
        truth = np.array([0.5, 0.5, 0.0, 0.0])
        buf, x, y = fill_buffer(3000, beta=truth, seed=3)
        xa = np.column_stack([np.ones(len(buf)), buf.x[:, :4]])
        w = np.ones(len(buf))
        w[:1000] = 0.0
        full = fit_weighted_logistic(xa, buf.y, w)
        sub = fit_weighted_logistic(xa[1000:], buf.y[1000:], np.ones(2000))
        assert np.allclose(full, sub, atol=1e-6)

    def test_single_class_unfittable(self):
        xa = np.column_stack([np.ones(50), np.random.default_rng(0).normal(size=(50, 2))])
        assert fit_weighted_logistic(xa, np.zeros(50), np.ones(50)) is None

    def test_separable_data_still_fits(self):
        # perfectly separated outcomes converge under ridge damping
        x = np.zeros((100, 2))
        x[:, 0] = 1.0
        x[50:, 1] = 1.0
        y = np.zeros(100)
        y[50:] = 1.0
        beta = fit_weighted_logistic(x, y, np.ones(100))
        assert beta is not None
        assert np.isfinite(beta).all()

    def test_warm_start_matches_cold(self):
        truth = np.array([0.4, -0.2, 0.1, 0.0])
        buf, x, y = fill_buffer(2000, beta=truth, seed=4)
        xa = np.column_stack([np.ones(len(buf)), buf.x[:, :4]])
        cold = fit_weighted_logistic(xa, buf.y, np.ones(len(buf)))
        warm = fit_weighted_logistic(xa, buf.y, np.ones(len(buf)),
                                     warm=cold + 0.3)
        assert np.allclose(cold, warm, atol=1e-5)


class TestCandidateLearner:
    def test_window_weighting_equivalence(self):
        # deleting rows older than the window leaves the fit unchanged
        truth = np.array([0.6, -0.4, 0.2, 0.1])
        buf, x, y = fill_buffer(3000, beta=truth, seed=5)
        cand = CandidateLearner.from_token("window7_bn")
        assert cand.fit(buf, now_day=10)
        ref = cand.coef.copy()

        recent = buf.day >= 3  # lag <= 7 from day 10
        buf2 = TrainingBuffer()
        buf2.append_day(5, np.arange(recent.sum()), buf.x[recent], buf.y[recent],
                        buf.g[recent])
        buf2.day = buf.day[recent]
        cand2 = CandidateLearner.from_token("window7_bn")
        assert cand2.fit(buf2, now_day=10)
        assert np.allclose(ref, cand2.coef, atol=1e-6)

    def test_exponential_weights_form(self):
        cand = CandidateLearner.from_token("exp05_bn")
        days = np.array([10, 9, 5])
        w = cand.row_weights(days, now_day=10)
        assert w == pytest.approx([1.0, 0.95, 0.95 ** 5])

    def test_predict_requires_fit(self):
        cand = CandidateLearner.from_token("full_base")
        with pytest.raises(ValueError):
            cand.predict(np.zeros((3, N_FEATURES)))

    def test_zero_coefficients_give_half(self):
        cand = CandidateLearner.from_token("full_base")
        cand.coef = np.zeros(len(feature_columns("base")) + 1)
        cand.fitted = True
        assert np.all(cand.predict(np.zeros((5, N_FEATURES))) == 0.5)

    def test_monotone_in_positive_slope_feature(self):
        cand = CandidateLearner.from_token("full_bn")
        cand.coef = np.zeros(N_FEATURES + 1)
        cand.coef[2] = 1.5  # household 1-day contact count
        cand.fitted = True
        lo = np.zeros((1, N_FEATURES))
        hi = np.zeros((1, N_FEATURES))
        hi[0, 1] = 3.0
        assert cand.predict(hi)[0] > cand.predict(lo)[0]

    def test_hand_computed_inverse_logit(self):
        cand = CandidateLearner.from_token("full_base")
        cols = feature_columns("base")
        coef = np.zeros(len(cols) + 1)
        coef[0] = -1.0
        coef[1] = 2.0   # symptomatic column
        coef[2] = 0.5   # communal column
        cand.coef = coef
        cand.fitted = True
        row = np.zeros((1, N_FEATURES))
        row[0, 0] = 1.0    # symptomatic
        row[0, 10] = 1.0   # communal
        expected = expit(-1.0 + 2.0 + 0.5)
        assert cand.predict(row)[0] == pytest.approx(expected)

    def test_predictions_clipped(self):
        cand = CandidateLearner.from_token("full_base")
        cand.coef = np.full(len(feature_columns("base")) + 1, 50.0)
        cand.fitted = True
        row = np.ones((1, N_FEATURES))
        assert cand.predict(row)[0] <= 1 - 1e-6


class TestOnlineCvLedger:
    def test_perfect_predictor_adds_zero(self):
        led = OnlineCvLedger(("a",))
        led.update(1, np.array([1.0, 0.0]), np.array([0.5, 0.5]),
                   np.array([[1.0], [0.0]]), np.array([-1]))
        assert led.cumulative[0] == 0.0

    def test_half_predictor_known_loss(self):
        # one tested positive with g = 0.5 adds (1/0.5) * 0.25 = 0.5
        led = OnlineCvLedger(("a",))
        led.update(1, np.array([1.0]), np.array([0.5]),
                   np.array([[0.5]]), np.array([-1]))
        assert led.cumulative[0] == pytest.approx(0.5)

    def test_empty_day_adds_zero(self):
        led = OnlineCvLedger(("a", "b"))
        led.update(1, np.zeros(0), np.zeros(0), np.zeros((0, 2)), np.array([-1, -1]))
        assert np.all(led.cumulative == 0.0)

    def test_replay_equals_cumulative(self):
        rng = np.random.default_rng(9)
        led = OnlineCvLedger(("a", "b", "c"))
        log = []
        for day in range(1, 15):
            m = rng.integers(0, 8)
            y = (rng.random(m) < 0.3).astype(float)
            g = rng.uniform(0.1, 0.9, m)
            preds = rng.uniform(0.05, 0.95, (m, 3))
            led.update(day, y, g, preds, np.full(3, day - 1))
            log.append((y, g, preds))
        brute = np.zeros(3)
        for y, g, preds in log:
            if len(y):
                brute += ((1 / g)[:, None] * (y[:, None] - preds) ** 2).sum(axis=0)
        assert np.allclose(led.cumulative, brute)

    def test_prequential_honesty_enforced(self):
        led = OnlineCvLedger(("a",))
        with pytest.raises(ValueError):
            led.update(3, np.array([1.0]), np.array([0.5]),
                       np.array([[0.5]]), np.array([3]))

    def test_discrete_select_argmin_and_ties(self):
        led = OnlineCvLedger(("a", "b", "c"))
        led.cumulative = np.array([2.0, 1.0, 1.0])
        assert led.discrete_select() == 1  # tie between b and c -> lowest index
        led.cumulative = np.array([2.0, 1.0, 1.0])
        assert led.discrete_select(eligible=np.array([True, False, True])) == 2

    def test_scale_invariance(self):
        led = OnlineCvLedger(("a", "b"))
        led.cumulative = np.array([3.0, 1.5])
        pick = led.discrete_select()
        led.cumulative *= 7.3
        assert led.discrete_select() == pick

    def test_single_candidate(self):
        led = OnlineCvLedger(("only",))
        led.update(1, np.array([1.0]), np.array([1.0]), np.array([[0.4]]),
                   np.array([0]))
        assert led.discrete_select() == 0

    def test_planted_truth_candidate_wins(self):
        # candidate equal to the generating model accumulates the least risk
        rng = np.random.default_rng(10)
        ids = ("truth", "n1", "n2", "n3")
        led = OnlineCvLedger(ids)
        wins = []
        for day in range(1, 61):
            q = rng.uniform(0.1, 0.9, 30)
            y = (rng.random(30) < q).astype(float)
            preds = np.column_stack([
                q,
                np.clip(q + 0.25, 0, 1),
                np.clip(q - 0.25, 0, 1),
                rng.uniform(0.1, 0.9, 30),
            ])
            led.update(day, y, np.full(30, 0.5), preds, np.full(4, day - 1))
            wins.append(led.discrete_select() == 0)
        assert np.mean(wins[20:]) >= 0.95


class TestEnsemble:
    def test_projection_stays_on_simplex(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            v = rng.normal(size=rng.integers(2, 10)) * 5
            p = project_to_simplex(v)
            assert p.min() >= -1e-12
            assert p.sum() == pytest.approx(1.0)

    def test_dominant_candidate_gets_all_mass(self):
        rng = np.random.default_rng(12)
        led = OnlineCvLedger(("good", "bad"))
        for day in range(1, 30):
            q = rng.uniform(0.2, 0.8, 20)
            y = (rng.random(20) < q).astype(float)
            preds = np.column_stack([q, np.full(20, 0.5)])
            led.update(day, y, np.full(20, 0.5), preds, np.full(2, day - 1))
        beta = ensemble_fit(led)
        assert beta[0] > 0.9

    def test_complementary_errors_split_evenly(self):
        # symmetric opposite biases: optimum is the midpoint and beats both
        led = OnlineCvLedger(("plus", "minus"))
        y = np.array([1.0, 0.0] * 40)
        preds = np.column_stack([np.where(y == 1, 0.9, 0.3),
                                 np.where(y == 1, 0.7, 0.1)])
        led.update(1, y, np.full(len(y), 0.5), preds, np.array([0, 0]))
        beta = ensemble_fit(led)
        assert beta == pytest.approx([0.5, 0.5], abs=0.02)
        blended = led.ensemble_risk(beta)
        assert blended < led.cumulative.min()

    def test_never_worse_than_discrete_winner(self):
        rng = np.random.default_rng(13)
        for trial in range(5):
            k = rng.integers(2, 6)
            led = OnlineCvLedger(tuple(f"c{i}" for i in range(k)))
            for day in range(1, 20):
                m = rng.integers(1, 15)
                y = (rng.random(m) < 0.4).astype(float)
                preds = rng.uniform(0.05, 0.95, (m, k))
                led.update(day, y, rng.uniform(0.2, 0.9, m), preds,
                           np.full(k, day - 1))
            beta = ensemble_fit(led)
            winner_risk = led.cumulative[led.discrete_select()]
            assert led.ensemble_risk(beta) <= winner_risk + 1e-12

    def test_unfitted_candidates_pinned_to_zero(self):
        rng = np.random.default_rng(14)
        led = OnlineCvLedger(("a", "b", "c"))
        for day in range(1, 10):
            y = (rng.random(10) < 0.5).astype(float)
            preds = rng.uniform(0.1, 0.9, (10, 3))
            led.update(day, y, np.full(10, 0.5), preds, np.full(3, day - 1))
        beta = ensemble_fit(led, eligible=np.array([True, True, False]))
        assert beta[2] == 0.0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=8))
def test_simplex_projection_is_idempotent(vals):
    v = np.array(vals)
    p = project_to_simplex(v)
    assert np.allclose(project_to_simplex(p), p, atol=1e-9)


class TestObservableRandomLayer:
    def test_random_contact_counts_when_observable(self):
        pop, layers = make_world()
        fx = FeatureExtractor(pop, layers, random_observable=True)
        edges = np.array([[3, 9]], dtype=np.int32)
        fx.record_day(np.array([3]), np.array([True]), edges)
        rows = fx.extract(1, np.zeros(pop.n, dtype=bool))
        assert rows[9, 7] == 1.0   # random-contact positives, 1-day band
        assert rows[3, 7] == 0.0

    def test_random_contacts_invisible_by_default(self):
        pop, layers = make_world()
        fx = FeatureExtractor(pop, layers)
        edges = np.array([[3, 9]], dtype=np.int32)
        fx.record_day(np.array([3]), np.array([True]), edges)
        rows = fx.extract(1, np.zeros(pop.n, dtype=bool))
        assert rows[9, 7] == 0.0
