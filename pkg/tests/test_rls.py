import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ubss.errors import NumericError, SingularMatrixError
from ubss.rls import (
    IDENTITY,
    NONLINEARITIES,
    RlsState,
    TANH,
    closed_form_separator,
    get_nonlinearity,
    init_state,
    loss_gradient,
    rls_step,
    run_sequence,
    weighted_correlations,
)
from ubss.signal_model import generate_sources


def direct_correlations(X, Y, beta):
    """Summation-form oracle for the decay-and-rank-one recursion."""
    T = X.shape[1]
    Cy = sum(beta ** (T - 1 - t) * np.outer(Y[:, t], Y[:, t]) for t in range(T))
    Cxy = sum(beta ** (T - 1 - t) * np.outer(X[:, t], Y[:, t]) for t in range(T))
    return Cy, Cxy


def weighted_reconstruction_loss(W, X, Y, beta):
    """Exponentially weighted sum of ||x(t) - W y(t)||^2 with Y held fixed."""
    T = X.shape[1]
    total = 0.0
    for t in range(T):
        r = X[:, t] - W @ Y[:, t]
        total += beta ** (T - 1 - t) * (r @ r)
    return total


class TestInitState:
    def test_orthonormal_columns(self):
        st_ = init_state(4, 2, beta=0.99, delta=0.01, seed=0)
        assert np.max(np.abs(st_.W.T @ st_.W - np.eye(2))) < 1e-12
        assert np.array_equal(st_.P, np.eye(2) / 0.01)
        assert st_.t == 0

    def test_deterministic_under_seed(self):
        a = init_state(5, 3, beta=0.95, seed=4)
        b = init_state(5, 3, beta=0.95, seed=4)
        assert np.array_equal(a.W, b.W) and np.array_equal(a.P, b.P)

    @pytest.mark.parametrize("beta", [1.5, 0.0, -0.1])
    def test_rejects_bad_forgetting_factor(self, beta):
        with pytest.raises(ValueError):
            init_state(4, 2, beta=beta)

    def test_rejects_bad_dims_and_delta(self):
        with pytest.raises(ValueError):
            init_state(2, 4, beta=0.99)
        with pytest.raises(ValueError):
            init_state(4, 2, beta=0.99, delta=0.0)


class TestRlsStep:
    def test_hand_evaluated_update(self):
        # W=I, P=I, beta=1, x=e1, linear output:
        # y=e1, h=e1, f=e1/2, P'=I-diag(1/2,0), e=0, W'=W
        state = RlsState(W=np.eye(2), P=np.eye(2), beta=1.0)
        state, y = rls_step(state, np.array([1.0, 0.0]), IDENTITY)
        assert np.array_equal(y, [1.0, 0.0])
        assert np.array_equal(state.P, np.diag([0.5, 1.0]))
        assert np.array_equal(state.W, np.eye(2))
        assert state.t == 1

    def test_zero_sample_only_rescales_p(self):
        state = init_state(4, 2, beta=0.9, seed=1)
        W0, P0 = state.W.copy(), state.P.copy()
        state, y = rls_step(state, np.zeros(4), TANH)
        assert np.array_equal(y, np.zeros(2))
        assert np.allclose(state.P, P0 / 0.9)
        assert np.array_equal(state.W, W0)

    def test_single_step_matches_direct_inverse(self):
        # P' must be the inverse of beta * P^-1 + y y', per rank-one update
        rng = np.random.default_rng(8)
        A = rng.standard_normal((2, 2))
        P = A @ A.T + np.eye(2)
        state = RlsState(W=rng.standard_normal((3, 2)), P=P, beta=0.95)
        C_prev = np.linalg.inv(P)
        state, y = rls_step(state, rng.standard_normal(3), IDENTITY)
        expected = np.linalg.inv(0.95 * C_prev + np.outer(y, y))
        rel = np.linalg.norm(state.P - expected) / np.linalg.norm(expected)
        assert rel < 1e-8

    def test_p_stays_symmetric(self):
        state = init_state(4, 3, beta=0.97, seed=2)
        rng = np.random.default_rng(3)
        for _ in range(50):
            state, _ = rls_step(state, rng.standard_normal(4), TANH)
            assert np.max(np.abs(state.P - state.P.T)) <= 1e-14

    def test_non_finite_sample_raises_with_step_index(self):
        state = init_state(4, 2, beta=0.99, seed=0)
        rls_step(state, np.ones(4), TANH)
        bad = np.array([1.0, np.nan, 0.0, 0.0])
        with pytest.raises(NumericError) as exc:
            rls_step(state, bad, TANH)
        assert exc.value.step == 2

    def test_rejects_wrong_sample_length(self):
        state = init_state(4, 2, beta=0.99, seed=0)
        with pytest.raises(ValueError):
            rls_step(state, np.ones(3), TANH)


class TestRunSequence:
    def test_empty_sequence_is_noop(self):
        state = init_state(4, 2, beta=0.99, seed=0)
        W0 = state.W.copy()
        state, Y, errs = run_sequence(state, np.empty((4, 0)), TANH)
        assert Y.shape == (2, 0) and errs.shape == (0,)
        assert np.array_equal(state.W, W0)

    def test_chained_halves_match_full_run(self):
        rng = np.random.default_rng(12)
        X = rng.standard_normal((4, 60))
        full = init_state(4, 2, beta=0.98, seed=5)
        full, Yf, errf = run_sequence(full, X, TANH)

        half = init_state(4, 2, beta=0.98, seed=5)
        half, Y1, err1 = run_sequence(half, X[:, :30], TANH)
        half, Y2, err2 = run_sequence(half, X[:, 30:], TANH)
        assert np.array_equal(np.hstack([Y1, Y2]), Yf)
        assert np.array_equal(np.hstack([err1, err2]), errf)
        assert np.array_equal(half.W, full.W) and np.array_equal(half.P, full.P)

    def test_reconstruction_error_shrinks_on_orthogonal_mixture(self):
        # linear subspace tracking on a noiseless orthonormal mixture converges
        rng = np.random.default_rng(42)
        A, _ = np.linalg.qr(rng.standard_normal((4, 2)))
        S = generate_sources(2, 2000, seed=7).S
        X = A @ S
        state = init_state(4, 2, beta=0.995, seed=1)
        _, _, errs = run_sequence(state, X, IDENTITY)
        assert errs[-100:].mean() < 0.1 * errs[:100].mean()


class TestWeightedCorrelations:
    def test_single_sample(self):
        x = np.array([[1.0], [2.0], [3.0]])
        y = np.array([[0.5], [-1.0]])
        acc = weighted_correlations(x, y, beta=0.7)
        assert np.array_equal(acc.Cy, np.outer(y[:, 0], y[:, 0]))
        assert np.array_equal(acc.Cxy, np.outer(x[:, 0], y[:, 0]))

    def test_beta_one_gives_plain_sums(self):
        rng = np.random.default_rng(0)
        X, Y = rng.standard_normal((3, 3)), rng.standard_normal((2, 3))
        acc = weighted_correlations(X, Y, beta=1.0)
        assert np.allclose(acc.Cy, Y @ Y.T, rtol=1e-14)
        assert np.allclose(acc.Cxy, X @ Y.T, rtol=1e-14)

    def test_recursion_matches_direct_summation(self):
        rng = np.random.default_rng(1)
        X, Y = rng.standard_normal((3, 50)), rng.standard_normal((2, 50))
        acc = weighted_correlations(X, Y, beta=0.9)
        Cy, Cxy = direct_correlations(X, Y, beta=0.9)
        assert np.linalg.norm(acc.Cy - Cy) / np.linalg.norm(Cy) < 1e-12
        assert np.linalg.norm(acc.Cxy - Cxy) / np.linalg.norm(Cxy) < 1e-12

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError):
            weighted_correlations(np.zeros((3, 4)), np.zeros((2, 5)), beta=0.9)


class TestClosedFormSeparator:
    def _random_acc(self, seed, l=3, m=2, T=30, beta=0.99):
        rng = np.random.default_rng(seed)
        X, Y = rng.standard_normal((l, T)), rng.standard_normal((m, T))
        return weighted_correlations(X, Y, beta)

    def test_identity_autocorrelation(self):
        from ubss.rls import CorrelationAccumulators

        Cxy = np.arange(6.0).reshape(3, 2)
        acc = CorrelationAccumulators(np.eye(2), Cxy)
        assert np.allclose(closed_form_separator(acc), Cxy)

    def test_rank_one_autocorrelation_is_singular(self):
        rng = np.random.default_rng(2)
        acc = weighted_correlations(
            rng.standard_normal((3, 1)), rng.standard_normal((2, 1)), beta=0.99
        )
        with pytest.raises(SingularMatrixError) as exc:
            closed_form_separator(acc)
        assert exc.value.cond is None or exc.value.cond > 1e12 or not np.isfinite(exc.value.cond)

    def test_solution_is_stationary_point(self):
        for seed in range(5):
            acc = self._random_acc(seed)
            W = closed_form_separator(acc)
            assert np.linalg.norm(loss_gradient(W, acc)) < 1e-8

    def test_beta_one_equals_ordinary_least_squares(self):
        rng = np.random.default_rng(3)
        X, Y = rng.standard_normal((4, 40)), rng.standard_normal((2, 40))
        acc = weighted_correlations(X, Y, beta=1.0)
        W = closed_form_separator(acc)
        # unweighted normal equations, solved directly
        W_ls = (X @ Y.T) @ np.linalg.inv(Y @ Y.T)
        assert np.linalg.norm(W - W_ls) / np.linalg.norm(W_ls) < 1e-10


class TestLossGradient:
    def test_zero_separator(self):
        acc = TestClosedFormSeparator()._random_acc(0)
        G = loss_gradient(np.zeros((3, 2)), acc)
        assert np.array_equal(G, -2.0 * acc.Cxy)

    def test_matches_finite_differences_of_weighted_loss(self):
        rng = np.random.default_rng(4)
        l, m, T, beta = 3, 2, 20, 0.9
        X, Y = rng.standard_normal((l, T)), rng.standard_normal((m, T))
        W = rng.standard_normal((l, m))
        acc = weighted_correlations(X, Y, beta)
        G = loss_gradient(W, acc)
        h = 1e-6
        for i in range(l):
            for j in range(m):
                Wp, Wm = W.copy(), W.copy()
                Wp[i, j] += h
                Wm[i, j] -= h
                num = (
                    weighted_reconstruction_loss(Wp, X, Y, beta)
                    - weighted_reconstruction_loss(Wm, X, Y, beta)
                ) / (2 * h)
                assert abs(G[i, j] - num) / max(abs(num), abs(G[i, j])) < 1e-6

    def test_rejects_shape_mismatch(self):
        acc = TestClosedFormSeparator()._random_acc(1)
        with pytest.raises(ValueError):
            loss_gradient(np.zeros((2, 2)), acc)


class TestShermanMorrisonConsistency:
    def test_inverse_tracks_weighted_gram_plus_prior(self):
        # P(t) must invert beta^t * delta * I + sum_i beta^(t-i) y_i y_i'
        for beta in (0.95, 1.0):
            state = init_state(4, 2, beta=beta, delta=0.01, seed=6)
            rng = np.random.default_rng(10)
            ys = []
            worst = 0.0
            for t in range(1, 301):
                state, y = rls_step(state, rng.standard_normal(4), IDENTITY)
                ys.append(y)
                Ymat = np.stack(ys, axis=1)
                w = beta ** (t - np.arange(1, t + 1))
                C = beta**t * state.delta * np.eye(2) + (Ymat * w) @ Ymat.T
                direct = np.linalg.inv(C)
                worst = max(
                    worst,
                    np.linalg.norm(state.P - direct) / np.linalg.norm(direct),
                )
            assert worst < 1e-6


class TestNonlinearities:
    @pytest.mark.parametrize("name", sorted(NONLINEARITIES))
    def test_odd_symmetry(self, name):
        g = get_nonlinearity(name)
        x = np.linspace(-5, 5, 1001)
        assert np.allclose(g.f(-x), -g.f(x), atol=1e-15)

    @pytest.mark.parametrize("name", sorted(NONLINEARITIES))
    def test_derivative_matches_central_differences(self, name):
        g = get_nonlinearity(name)
        x = np.linspace(-3, 3, 601)
        h = 1e-6
        num = (g.f(x + h) - g.f(x - h)) / (2 * h)
        ana = g.deriv(x)
        assert np.max(np.abs(ana - num) / np.maximum(np.abs(num), 1e-3)) < 1e-7

    def test_unknown_name_rejected(self):
        with pytest.raises(ValueError):
            get_nonlinearity("sigmoid")

    @given(x=st.floats(-50, 50))
    @settings(max_examples=50, deadline=None)
    def test_tanh_is_odd_pointwise(self, x):
        g = get_nonlinearity("tanh")
        assert g.f(np.float64(-x)) == pytest.approx(-g.f(np.float64(x)), abs=1e-14)
