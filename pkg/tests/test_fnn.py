import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fundsel.errors import DegenerateTargets, DimensionMismatch, NonFiniteLoss, ScalerUnset, TooFewRows
from fundsel.fnn import (
    FnnModel,
    TrainConfig,
    fit_target_scaler,
    forward,
    gradient_check,
    init_fnn,
    load_fnn,
    loss_and_grads,
    numeric_grad,
    predict_return,
    save_fnn,
    scale_targets,
    train_fnn,
    unscale_targets,
)
from fundsel.oracles import central_difference


def zero_model(n_in=3, n_hidden=4, scaler=None):
    return FnnModel(np.zeros((n_hidden, n_in)), np.zeros(n_hidden), np.zeros(n_hidden), 0.0, scaler=scaler)


def unit_model():
    return FnnModel(np.ones((1, 1)), np.zeros(1), np.ones(1), 0.0)


def test_init_deterministic_and_shapes():
    a, b = init_fnn(21, 21, seed=7), init_fnn(21, 21, seed=7)
    assert a.same_params(b)
    assert not a.same_params(init_fnn(21, 21, seed=8))
    assert a.n_params == 21 * 21 + 21 + 21 + 1 == 484
    assert not a.b1.any() and a.b2 == 0.0
    assert np.abs(a.W1).max() <= math.sqrt(6 / 42) and np.abs(a.W2).max() <= math.sqrt(6 / 22)


def test_zero_weights_give_half():
    m = zero_model()
    for x in np.random.default_rng(0).normal(size=(5, 3)) * 100:
        assert forward(m, x) == 0.5


def test_relu_clamps_negative_input():
    assert forward(unit_model(), np.array([-5.0])) == 0.5


def test_forward_sigmoid_of_two():
    assert forward(unit_model(), np.array([2.0])) == pytest.approx(1 / (1 + math.exp(-2)), rel=1e-15)
    assert forward(unit_model(), np.array([2.0])) == pytest.approx(0.880797, abs=1e-6)


def test_forward_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        forward(zero_model(), np.ones(4))


def test_forward_stays_inside_unit_interval():
    m = FnnModel(np.full((2, 1), 1e3), np.zeros(2), np.full(2, 1e3), 0.0)
    for x in (-1e6, 1e6):
        y = forward(m, np.array([x]))
        assert 0.0 < y < 1.0


@given(st.integers(0, 2**32 - 1))
def test_forward_finite_and_bounded(seed):
    rng = np.random.default_rng(seed)
    m = init_fnn(5, 6, seed)
    m = m.with_params(m.params() * rng.uniform(0.1, 50))
    y = forward(m, rng.normal(size=(20, 5)) * rng.uniform(0.1, 1e3))
    assert np.all((y > 0) & (y < 1))


def test_target_scaler_examples():
    lo, hi = fit_target_scaler([-0.1, 0.3], 0.1)
    assert lo == pytest.approx(-0.14, abs=1e-15) and hi == pytest.approx(0.34, abs=1e-15)
    with pytest.raises(DegenerateTargets):
        fit_target_scaler([0.05, 0.05, 0.05])


@given(st.floats(-1, 1), st.floats(-0.5, 0.5), st.floats(0.001, 1))
def test_scale_unscale_inverse(t, lo, width):
    sc = (lo, lo + width)
    assert unscale_targets(scale_targets(t, sc), sc) == pytest.approx(t, rel=1e-15, abs=1e-15)


def test_scaled_training_targets_inside_unit_interval():
    t = np.random.default_rng(3).normal(size=50)
    s = scale_targets(t, fit_target_scaler(t, 0.1))
    assert s.min() > 0 and s.max() < 1


def test_predict_return_examples():
    m = zero_model(scaler=(-0.14, 0.34))
    assert predict_return(m, np.ones(3)) == pytest.approx(0.10, abs=1e-15)
    low = FnnModel(np.zeros((1, 1)), np.zeros(1), np.zeros(1), -800.0, scaler=(-0.14, 0.34))
    assert predict_return(low, np.ones(1)) == pytest.approx(-0.14, abs=1e-15)
    with pytest.raises(ScalerUnset):
        predict_return(zero_model(), np.ones(3))


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.floats(-1, 1), st.floats(0.01, 2))
def test_ranking_invariant_to_scaler(seed, lo, width):
    rng = np.random.default_rng(seed)
    m = init_fnn(4, 5, seed)
    X = rng.normal(size=(12, 4))
    raw = forward(m, X)
    pred = predict_return(FnnModel(m.W1, m.b1, m.W2, m.b2, scaler=(lo, lo + width)), X)
    for a in range(12):
        for b in range(12):
            if raw[a] > raw[b]:
                assert pred[a] >= pred[b]


def linear_fixture():
    rng = np.random.default_rng(42)
    X = rng.uniform(-1, 1, (200, 3))
    return X, X @ np.array([0.2, -0.1, 0.05])


def test_train_smoke_fixture():
    X, y = linear_fixture()
    m = train_fnn(init_fnn(3, 21, 0), X, y, TrainConfig(epochs=500))
    rmse = float(np.sqrt(np.mean((predict_return(m, X) - y) ** 2)))
    assert rmse < 0.01
    assert m.loss_history[-1] < m.loss_history[0]
    assert len(m.loss_history) == 501 and m.final_loss == m.loss_history[-1]


def test_zero_epochs_is_noop_with_scaler():
    X, y = linear_fixture()
    m0 = init_fnn(3, 5, 1)
    m = train_fnn(m0, X, y, TrainConfig(epochs=0))
    assert np.array_equal(m.params(), m0.params())
    assert m.scaler == fit_target_scaler(y, 0.1)


def test_training_deterministic():
    X, y = linear_fixture()
    cfg = TrainConfig(epochs=20, seed=9)
    a = train_fnn(init_fnn(3, 8, 1), X, y, cfg)
    b = train_fnn(init_fnn(3, 8, 1), X, y, cfg)
    assert a.same_params(b)


def test_sgd_option_reduces_loss():
    X, y = linear_fixture()
    m = train_fnn(init_fnn(3, 8, 1), X, y, TrainConfig(optimizer="sgd", learning_rate=0.5, epochs=50))
    assert m.loss_history[-1] < m.loss_history[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises():
    # tiny output weights keep the sigmoid unsaturated; the huge step then overflows them
    rng = np.random.default_rng(42)
    X, y = rng.uniform(0.5, 1, (32, 3)) * 1e150, rng.normal(size=32)
    m = FnnModel(np.ones((4, 3)), np.zeros(4), np.array([1, -1, 2, -3]) * 1e-150, 0.0)
    with pytest.raises(NonFiniteLoss):
        train_fnn(m, X, y, TrainConfig(optimizer="sgd", learning_rate=1e300, epochs=3))


def test_batch_larger_than_data():
    X, y = linear_fixture()
    with pytest.raises(TooFewRows):
        train_fnn(init_fnn(3, 4, 0), X[:5], y[:5], TrainConfig(batch_size=16))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(beta1=1.0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)


def random_case(seed):
    rng = np.random.default_rng(seed)
    m = init_fnn(21, 21, seed)
    m = m.with_params(m.params() + rng.normal(0, 0.1, m.n_params))
    return m, rng.normal(size=(4, 21)), rng.uniform(0.05, 0.95, 4)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_oracle(seed):
    m, X, T = random_case(seed)
    assert gradient_check(m, X, T) < 1e-4
    # same comparison through the independent central-difference oracle
    num = central_difference(lambda th: loss_and_grads(m.with_params(th), X, T)[0], m.params(), 1e-5)
    ana = loss_and_grads(m, X, T)[1]
    np.testing.assert_allclose(ana, num, rtol=1e-4, atol=1e-9)


def test_gradient_check_in_target_units_with_scaler():
    m, X, T = random_case(11)
    scaled = FnnModel(m.W1, m.b1, m.W2, m.b2, scaler=(-0.2, 0.3))
    assert gradient_check(scaled, X, unscale_targets(T, (-0.2, 0.3))) < 1e-4


def test_gradient_zero_at_exact_fit():
    m, X, _ = random_case(3)
    T = forward(m, X)  # residuals vanish, so does the gradient
    assert np.linalg.norm(loss_and_grads(m, X, T)[1]) < 1e-8
    assert np.linalg.norm(numeric_grad(m, X, T)) < 1e-8


def test_central_difference_order():
    # smooth region: positive inputs and weights keep every ReLU active
    rng = np.random.default_rng(4)
    m = FnnModel(rng.uniform(0.1, 0.5, (6, 3)), np.full(6, 0.1), rng.uniform(-0.5, 0.5, 6), 0.0)
    X, T = rng.uniform(0.1, 1, (4, 3)), rng.uniform(0.2, 0.8, 4)
    ana = loss_and_grads(m, X, T)[1]
    e3 = np.abs(numeric_grad(m, X, T, 1e-3) - ana).max()
    e5 = np.abs(numeric_grad(m, X, T, 1e-5) - ana).max()
    assert e5 < e3


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25)
def test_batch_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    m = init_fnn(5, 7, seed)
    X, T = rng.normal(size=(16, 5)), rng.uniform(0, 1, 16)
    perm = rng.permutation(16)
    la, ga = loss_and_grads(m, X, T)
    lb, gb = loss_and_grads(m, X[perm], T[perm])
    assert abs(la - lb) <= 1e-12
    np.testing.assert_allclose(ga, gb, rtol=0, atol=1e-12)


def test_save_load_bit_exact(tmp_path):
    X, y = linear_fixture()
    m = train_fnn(init_fnn(3, 6, 2), X, y, TrainConfig(epochs=3))
    save_fnn(m, tmp_path / "m.txt")
    back = load_fnn(tmp_path / "m.txt")
    assert back.same_params(m) and back.hyper == m.hyper and back.seed == m.seed
    assert np.array_equal(predict_return(back, X), predict_return(m, X))
