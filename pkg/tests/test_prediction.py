import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from icpsim.errors import DimensionMismatch, EmptyHistory, NonFiniteLoss
from icpsim.prediction import (
    ConcurrencyHistory,
    LstmHyper,
    LstmModel,
    NaivePredictor,
    ceil_count,
    chscg_counts,
    lstm_forward,
    lstm_gradients,
    lstm_train,
    make_windows,
    mse_loss,
    plan_bpcg,
    plan_chscg,
    plan_fpcg,
    predict_workflow_concurrency,
)
from icpsim.workflow import derive_workflow_type

from builders import chain, diamond, full_type, random_app, random_types


class Fixed:
    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def forecast(self, series):
        return self.values


# -- history ---------------------------------------------------------------


def test_series_left_pads_with_zeros():
    hist = ConcurrencyHistory.from_series([1, 2], [[3, 4]])
    s = hist.series(3)
    assert s.shape == (3, 2)
    assert s.tolist() == [[0, 0], [0, 0], [3, 4]]


def test_total_is_sum_over_types():
    hist = ConcurrencyHistory.from_series([1, 2, 3], [[1, 2, 3], [4, 0, 1]])
    assert hist.total(0) == 6 and hist.total() == 5


def test_negative_concurrency_rejected():
    with pytest.raises(ValueError):
        ConcurrencyHistory((1,)).record({1: -1})


# -- rounding and forecasting -----------------------------------------------


@pytest.mark.parametrize("raw,count", [(-0.3, 0), (0.0, 0), (4.2, 5), (7.0, 7), (7.03, 7), (6.97, 7)])
def test_ceil_count(raw, count):
    assert ceil_count(raw) == count


def test_predict_clamps_and_rounds_up():
    hist = ConcurrencyHistory.from_series([1, 2], [[1, 1]])
    assert predict_workflow_concurrency(hist, Fixed([-0.3, 4.2])) == {1: 0, 2: 5}


def test_predict_needs_history():
    with pytest.raises(EmptyHistory):
        predict_workflow_concurrency(ConcurrencyHistory((1,)), NaivePredictor())


def test_predict_checks_dimension():
    hist = ConcurrencyHistory.from_series([1, 2], [[1, 1]])
    with pytest.raises(DimensionMismatch):
        predict_workflow_concurrency(hist, Fixed([1.0]))


def test_naive_carries_last_interval():
    hist = ConcurrencyHistory.from_series([1, 2], [[1, 2], [5, 3]])
    assert predict_workflow_concurrency(hist, NaivePredictor()) == {1: 5, 2: 3}


# -- plans -------------------------------------------------------------------


def _diamond_types():
    app = diamond()
    k1 = derive_workflow_type(app, {"entry", "B", "exit"}, 1)
    k2 = derive_workflow_type(app, {"entry", "C", "exit"}, 2)
    return app, [k1, k2]


def test_fpcg_diamond():
    app, _ = _diamond_types()
    assert plan_fpcg({1: 10, 2: 5}, app) == {"entry": 15, "B": 15, "C": 15, "exit": 15}


def test_fpcg_zero_forecast():
    app = chain([("a", 1, 1), ("b", 1, 1)])
    assert set(plan_fpcg({1: 0}, app).values()) == {0}


def test_single_type_fpcg_equals_bpcg():
    app = chain([(n, 1, 1) for n in "abcd"])
    assert plan_fpcg({1: 3}, app) == plan_bpcg({1: 3}, [full_type(app)]) == dict.fromkeys("abcd", 3)


def test_bpcg_diamond():
    _, types = _diamond_types()
    assert plan_bpcg({1: 10, 2: 5}, types) == {"entry": 15, "B": 10, "C": 5, "exit": 15}


def test_bpcg_function_in_no_type_gets_zero():
    _, types = _diamond_types()
    assert plan_bpcg({1: 4}, types[:1])["C"] == 0


def test_bpcg_unknown_type():
    _, types = _diamond_types()
    with pytest.raises(DimensionMismatch):
        plan_bpcg({9: 1}, types)


def test_chscg_direct_product():
    assert chscg_counts({"A": 0.5, "B": 0.3, "C": 0.2}, 100) == {"A": 50, "B": 30, "C": 20}


def test_chscg_zero_total():
    assert set(chscg_counts({"A": 0.5, "B": 0.5}, 0).values()) == {0}


def test_chscg_ceiling():
    assert chscg_counts({"A": 1 / 3, "B": 2 / 3}, 10) == {"A": 4, "B": 7}


def test_chscg_from_history():
    hist = ConcurrencyHistory((1,))
    hist.record({1: 1}, invocations={"A": 1, "B": 2}, creations={"A": 4, "B": 6})
    assert plan_chscg(hist) == {"A": 4, "B": 7}


def test_chscg_window_limits_frequency_estimate():
    hist = ConcurrencyHistory((1,))
    hist.record({1: 1}, invocations={"A": 100})
    hist.record({1: 1}, invocations={"B": 1}, creations={"B": 3})
    assert plan_chscg(hist, window=1) == {"B": 3}
    assert plan_chscg(hist, window=2)["A"] == 3


def test_chscg_needs_history():
    with pytest.raises(EmptyHistory):
        plan_chscg(ConcurrencyHistory((1,)))


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(st.sampled_from("ABCDEF"), st.integers(1, 50), min_size=1), st.integers(0, 500))
def test_chscg_total_at_least_tn(weights, tn):
    total = sum(weights.values())
    plan = chscg_counts({k: v / total for k, v in weights.items()}, tn)
    assert sum(plan.values()) >= tn


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.data())
def test_bpcg_matches_membership_sum(seed, data):
    rng = random.Random(seed)
    app = random_app(rng)
    types = random_types(rng, app)
    forecast = {t.id: data.draw(st.integers(0, 30)) for t in types}
    plan = plan_bpcg(forecast, types)
    for f in app.functions:
        assert plan[f] == sum(forecast[t.id] * t.invokes(f) for t in types)
    assert plan[app.entry] == plan[app.exit] == sum(forecast.values())


# -- LSTM ----------------------------------------------------------------------


def test_zero_model_outputs_zero():
    m = LstmModel.zeros(3, 5)
    assert np.all(lstm_forward(m, np.random.default_rng(0).uniform(0, 9, (7, 3))) == 0)


def test_single_cell_hand_value():
    # i = sig(0.5), o = sig(1), g = tanh(2), c = i*g, h = o*tanh(c), y = 1.5h + 0.25
    m = LstmModel(
        W=np.array([[0.5], [-0.5], [1.0], [2.0]]),
        U=np.zeros((4, 1)),
        b=np.zeros(4),
        V=np.array([[1.5]]),
        c=np.array([0.25]),
    )
    assert lstm_forward(m, [[1.0]])[0] == pytest.approx(0.8389750695691215, abs=1e-12)


def test_series_36_two_types():
    m = LstmModel.init(2, 64, seed=1)
    assert lstm_forward(m, np.ones((36, 2))).shape == (2,)


def test_forward_batch_shape():
    m = LstmModel.init(2, 8, seed=1)
    assert lstm_forward(m, np.ones((5, 4, 2))).shape == (5, 2)


def test_forward_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        lstm_forward(LstmModel.init(2, 4), np.ones((3, 3)))


def test_forward_deterministic():
    m = LstmModel.init(3, 6, seed=4)
    x = np.random.default_rng(2).uniform(0, 5, (6, 3))
    assert np.array_equal(lstm_forward(m, x), lstm_forward(m, x))


def _numeric_grad(model, X, Y, eps=1e-4):
    out = {}
    for k, p in model.params().items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            up = mse_loss(model, X, Y)
            p[idx] = old - eps
            down = mse_loss(model, X, Y)
            p[idx] = old
            g[idx] = (up - down) / (2 * eps)
        out[k] = g
    return out


def max_relative_gradient_error(seed: int) -> float:
    rng = np.random.default_rng(seed)
    S, T = int(rng.integers(1, 4)), int(rng.integers(1, 7))
    m = LstmModel.init(S, 4, seed=seed)
    m.scale = float(rng.uniform(1, 10))
    X = rng.uniform(0, 10, (3, T, S))
    Y = rng.uniform(0, 10, (3, S))
    _, analytic = lstm_gradients(m, X, Y)
    numeric = _numeric_grad(m, X, Y)
    worst = 0.0
    for k in analytic:
        a, n = analytic[k], numeric[k]
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-7)
        worst = max(worst, float(rel.max()))
    return worst


@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_finite_differences(seed):
    assert max_relative_gradient_error(seed) < 1e-4


def test_constant_series_converges():
    series = np.full((40, 1), 5.0)
    X, Y = make_windows(series, 6)
    model = lstm_train(LstmModel.init(1, 8, seed=0), X, Y, LstmHyper(epochs=200, series_length=6))
    assert model.loss_history[-1] < 0.05
    assert len(model.loss_history) == 200


def test_zero_learning_rate_keeps_weights():
    X, Y = make_windows(np.arange(20.0).reshape(10, 2), 3)
    m0 = LstmModel.init(2, 4, seed=3)
    m1 = lstm_train(m0, X, Y, LstmHyper(learning_rate=0.0, epochs=3))
    for k in m0.params():
        assert np.array_equal(m0.params()[k], m1.params()[k])


def test_training_deterministic():
    X, Y = make_windows(np.random.default_rng(0).integers(0, 9, (30, 2)), 5)
    h = LstmHyper(epochs=5, series_length=5, seed=7)
    a = lstm_train(LstmModel.init(2, 4, seed=1), X, Y, h)
    b = lstm_train(LstmModel.init(2, 4, seed=1), X, Y, h)
    assert all(np.array_equal(a.params()[k], b.params()[k]) for k in a.params())


def test_divergence_guard():
    m = LstmModel.init(1, 4)
    m.scale = 1.0
    X = np.ones((4, 3, 1))
    Y = np.full((4, 1), np.inf)
    with np.errstate(all="ignore"), pytest.raises(NonFiniteLoss):
        lstm_train(m, X, Y, LstmHyper(epochs=2))


def test_training_dimension_mismatch():
    X, Y = make_windows(np.ones((10, 2)), 3)
    with pytest.raises(DimensionMismatch):
        lstm_train(LstmModel.init(3, 4), X, Y, LstmHyper(epochs=1))


def test_make_windows_pairs_history_with_next_value():
    X, Y = make_windows(np.arange(4.0).reshape(4, 1), 2)
    assert X[:, :, 0].tolist() == [[0, 0], [0, 1], [1, 2]]
    assert Y[:, 0].tolist() == [1, 2, 3]


def test_trained_constant_forecast_rounds_to_constant():
    series = np.full((48, 2), 7.0)
    X, Y = make_windows(series, 36)
    model = lstm_train(LstmModel.init(2, 16, seed=0), X, Y, LstmHyper(epochs=150, learning_rate=0.01))
    hist = ConcurrencyHistory.from_series([1, 2], series.astype(int).tolist()[:36])
    assert predict_workflow_concurrency(hist, model) == {1: 7, 2: 7}
