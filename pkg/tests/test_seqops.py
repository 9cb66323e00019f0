"""Sequence helpers and the causal-operator protocol."""
import numpy as np
import pytest
from scipy import signal

from ici.seqops import (DIVERGENCE_LIMIT, DivergedRunError, FeedbackInverse,
                        IdentityOperator, LinearStateSpace, SeriesOperator,
                        StaticOperator, UnitDelay, ZeroOperator, as_sequence,
                        check_finite, feedback_inverse, lp_norm, run_guarded,
                        series, truncate)


def test_as_sequence_promotes_1d():
    arr = as_sequence([1.0, 2.0, 3.0])
    assert arr.shape == (3, 1)
    assert arr.dtype == float


def test_as_sequence_rejects_bad_shapes():
    with pytest.raises(ValueError):
        as_sequence(np.zeros((2, 3, 4)))
    with pytest.raises(ValueError):
        as_sequence(np.zeros((5, 2)), dim=3)


def test_truncate_is_inclusive():
    x = np.arange(10.0).reshape(5, 2)
    np.testing.assert_array_equal(truncate(x, 1, 3), x[1:4])
    assert truncate(x, 3, 2).shape == (0, 2)


def test_lp_norm_hand_values():
    x = [[3.0, 4.0], [0.0, 0.0]]
    assert lp_norm(x, 2) == pytest.approx(5.0)
    assert lp_norm(x, 1) == pytest.approx(5.0)
    assert lp_norm(x, np.inf) == pytest.approx(5.0)
    assert lp_norm(np.zeros((0, 3))) == 0.0
    with pytest.raises(ValueError):
        lp_norm(x, 0.5)


def test_lp_norm_uses_per_sample_euclidean_norm():
    # two samples of norm 5 -> l1 norm 10, l2 norm 5*sqrt(2)
    x = [[3.0, 4.0], [4.0, 3.0]]
    assert lp_norm(x, 1) == pytest.approx(10.0)
    assert lp_norm(x, 2) == pytest.approx(5.0 * np.sqrt(2.0))


def test_check_finite_records_step():
    check_finite(np.ones(3), 0)
    with pytest.raises(DivergedRunError) as err:
        check_finite(np.array([np.nan]), 7)
    assert err.value.step == 7
    with pytest.raises(DivergedRunError):
        check_finite(np.array([2 * DIVERGENCE_LIMIT]), 0)


def test_unit_delay():
    op = UnitDelay(1)
    u = np.arange(1.0, 5.0)
    np.testing.assert_allclose(op.run(u)[:, 0], [0.0, 1.0, 2.0, 3.0])
    op.reset()
    np.testing.assert_allclose(op.run(u)[:, 0], [0.0, 1.0, 2.0, 3.0])


def test_static_and_zero_operators():
    sq = StaticOperator(lambda u: u ** 2, 1, 1)
    np.testing.assert_allclose(sq.run([1.0, 2.0, 3.0])[:, 0], [1.0, 4.0, 9.0])
    z = ZeroOperator(2, 3)
    assert z.readout().shape == (3,)
    np.testing.assert_array_equal(z.run(np.ones((4, 2))), np.zeros((4, 3)))
    ident = IdentityOperator(2)
    u = np.random.default_rng(0).standard_normal((5, 2))
    np.testing.assert_array_equal(ident.run(u), u)


def test_linear_state_space_matches_scipy():
    rng = np.random.default_rng(3)
    a = 0.4 * rng.standard_normal((3, 3))
    b = rng.standard_normal((3, 2))
    c = rng.standard_normal((2, 3))
    u = rng.standard_normal((30, 2))
    op = LinearStateSpace(a, b, c)
    # strictly causal: y_t = C x_t with no feedthrough
    sys = signal.dlti(a, b, c, np.zeros((2, 2)), dt=1)
    _, y_ref, _ = signal.dlsim(sys, u)
    np.testing.assert_allclose(op.run(u), y_ref, atol=1e-12)


def test_linear_state_space_feedthrough():
    op = LinearStateSpace([[0.5]], [[1.0]], [[2.0]], d=[[3.0]])
    assert op.causality == "causal"
    with pytest.raises(ValueError):
        op.readout()
    y = op.run([[1.0], [0.0]])
    # y_0 = D u_0 = 3; x_1 = 1; y_1 = C x_1 = 2
    np.testing.assert_allclose(y[:, 0], [3.0, 2.0])


def test_linear_state_space_shape_checks():
    with pytest.raises(ValueError):
        LinearStateSpace(np.zeros((2, 3)), np.zeros((2, 1)), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        LinearStateSpace(np.zeros((2, 2)), np.zeros((3, 1)), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        LinearStateSpace([[0.5]], [[1.0]], [[1.0]], d=np.zeros((2, 2)))


def test_series_equals_sequential_application():
    rng = np.random.default_rng(11)
    first = LinearStateSpace(0.3 * rng.standard_normal((2, 2)),
                             rng.standard_normal((2, 1)),
                             rng.standard_normal((2, 2)))
    second = StaticOperator(np.tanh, 2, 2)
    u = rng.standard_normal((20, 1))
    combined = series(first.clone(), second)
    np.testing.assert_allclose(combined.run(u), np.tanh(first.run(u)))


def test_series_causality_and_readout():
    delay = UnitDelay(1)
    static = StaticOperator(lambda u: 2.0 * u, 1, 1)
    assert series(delay.clone(), static).causality == "strictly_causal"
    assert series(static, delay.clone()).causality == "strictly_causal"
    both_static = series(StaticOperator(abs, 1, 1), StaticOperator(abs, 1, 1))
    assert both_static.causality == "causal"
    with pytest.raises(ValueError):
        both_static.readout()
    with pytest.raises(ValueError):
        series(StaticOperator(abs, 1, 2), StaticOperator(abs, 1, 1))


def test_series_readout_matches_run():
    rng = np.random.default_rng(4)
    inner = LinearStateSpace(0.4 * rng.standard_normal((2, 2)),
                             rng.standard_normal((2, 1)),
                             rng.standard_normal((1, 2)))
    op = series(inner, StaticOperator(lambda u: u ** 3, 1, 1))
    u = rng.standard_normal((15, 1))
    stepped = []
    for t in range(15):
        stepped.append(op.readout().copy())
        op.advance(u[t])
    op2 = series(inner.clone(), StaticOperator(lambda u: u ** 3, 1, 1))
    np.testing.assert_allclose(np.array(stepped), op2.run(u), atol=1e-12)


def test_feedback_inverse_requires_strict_causality():
    with pytest.raises(ValueError):
        FeedbackInverse(StaticOperator(abs, 1, 1))
    with pytest.raises(ValueError):
        FeedbackInverse(ZeroOperator(1, 2))


def test_feedback_inverse_solves_the_loop_equation():
    """b = (I + H)^{-1} a must satisfy b + H(b) = a, sample for sample.

    The inverse dynamics may be exponentially unstable, so the residual is
    judged relative to the magnitude the solution actually reaches.
    """
    rng = np.random.default_rng(42)
    for _ in range(20):
        n, d, t_len = rng.integers(1, 4), rng.integers(1, 3), 40
        h = LinearStateSpace(0.5 * rng.standard_normal((n, n)) / np.sqrt(n),
                             rng.standard_normal((n, d)),
                             rng.standard_normal((d, n)))
        a = rng.standard_normal((t_len, d))
        b = feedback_inverse(h.clone()).run(a)
        residual = b + h.clone().run(b) - a
        assert np.max(np.abs(residual)) < 1e-9 * max(1.0, np.max(np.abs(b)))


def test_feedback_inverse_round_trip():
    rng = np.random.default_rng(7)
    h = LinearStateSpace(0.5 * rng.standard_normal((3, 3)),
                         rng.standard_normal((3, 2)),
                         rng.standard_normal((2, 3)))
    b = rng.standard_normal((25, 2))
    a = b + h.clone().run(b)          # a = (I + H) b
    recovered = feedback_inverse(h.clone()).run(a)
    np.testing.assert_allclose(recovered, b, atol=1e-9)


def test_run_guarded_reports_divergence_step():
    class Doubler(LinearStateSpace):
        pass

    op = Doubler([[10.0]], [[1.0]], [[1.0]])
    u = np.ones((200, 1))
    y, diverged_at = run_guarded(op, u)
    assert diverged_at is not None
    assert np.all(np.isfinite(y[:diverged_at + 1]))
    assert np.all(np.isnan(y[diverged_at + 1:]))
    # magnitudes are monotone here, so the flagged step is the first offender
    assert np.abs(y[diverged_at]) > DIVERGENCE_LIMIT
    if diverged_at > 0:
        assert np.abs(y[diverged_at - 1]) <= DIVERGENCE_LIMIT


def test_run_guarded_clean_run():
    op = LinearStateSpace([[0.5]], [[1.0]], [[1.0]])
    y, diverged_at = run_guarded(op, np.ones((10, 1)))
    assert diverged_at is None
    assert np.all(np.isfinite(y))


def test_step_composes_preview_and_advance():
    op = UnitDelay(2)
    u0 = np.array([1.0, 2.0])
    expected = op.preview(u0)
    out = op.step(u0)
    np.testing.assert_array_equal(out, expected)
    np.testing.assert_array_equal(op.readout(), u0)
