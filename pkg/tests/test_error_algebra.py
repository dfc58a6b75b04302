import numpy as np
import pytest
from hypothesis import given, strategies as st

from errlab import error_algebra as ea


# ---------------------------------------------------------------------------
# Independent Monte-Carlo oracle: sample Gaussian errors with covariance
# eps^2 C around x0, push them through a plain python function, and read the
# bias and variance off at order eps^2.  No SmoothMap machinery involved.
# ---------------------------------------------------------------------------

def mc_error_moments(fn, x0, cov, eps=0.02, n=400_000, seed=1234):
    """(bias/eps^2, bias stderr, covariance/eps^2, covariance stderr)."""
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(np.asarray(cov, dtype=float))
    dx = eps * rng.standard_normal((n, len(x0))) @ chol.T
    base = np.asarray(fn(np.asarray(x0, dtype=float)[None, :]), dtype=float)
    vals = (np.asarray(fn(np.asarray(x0) + dx), dtype=float) - base).reshape(n, -1)
    mean = vals.mean(axis=0)
    bias = mean / eps**2
    bias_se = vals.std(axis=0) / np.sqrt(n) / eps**2
    centered = vals - mean
    prods = np.einsum("ni,nj->nij", centered, centered)
    cov_hat = prods.mean(axis=0) / eps**2
    cov_se = prods.std(axis=0) / np.sqrt(n) / eps**2
    return bias, bias_se, cov_hat, cov_se


def quadratic_pair(seed, d_in, d_mid, d_out):
    """Two random quadratic maps with exact derivatives, for composition."""
    rng = np.random.default_rng(seed)

    def rand_quad(di, do):
        q = rng.standard_normal((do, di, di))
        return ea.quadratic_map(rng.standard_normal(do), rng.standard_normal((do, di)),
                                0.5 * (q + np.swapaxes(q, 1, 2)))

    return rand_quad(d_in, d_mid), rand_quad(d_mid, d_out)


def random_erroneous(seed, d):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((d, d))
    return ea.ErroneousValue(rng.standard_normal(d), 0.1 * rng.standard_normal(d),
                             0.1 * (g @ g.T) + 0.01 * np.eye(d))


SQUARE = ea.from_scalar(lambda t: t * t, lambda t: 2.0 * t,
                        lambda t: np.full_like(np.asarray(t, dtype=float), 2.0), name="t^2")


class TestPropagate:
    def test_identity_leaves_triple_unchanged(self):
        x = ea.ErroneousValue([2.0, 3.0], [0.1, -0.2], np.diag([0.01, 0.04]))
        y = ea.propagate(ea.identity(2), x)
        np.testing.assert_array_equal(y.value, x.value)
        np.testing.assert_array_equal(y.bias, x.bias)
        np.testing.assert_array_equal(y.covariance, x.covariance)

    def test_square_forced_by_squared_field_identity(self):
        # bias' = 2*2*0.1 + (1/2)*2*0.04, var' = (2*2)^2 * 0.04
        y = ea.propagate(SQUARE, ea.ErroneousValue.scalar(2.0, 0.1, 0.04))
        assert y.value[0] == 4.0
        assert y.bias[0] == pytest.approx(0.44, abs=1e-15)
        assert y.covariance[0, 0] == pytest.approx(0.64, abs=1e-15)

    def test_product_map_matches_mc_oracle(self):
        cov = np.array([[0.01, 0.01], [0.01, 0.04]])
        x = ea.ErroneousValue([2.0, 3.0], [0.0, 0.0], cov)
        out = ea.propagate(ea.pairwise_product(), x)
        bias, bias_se, cov_hat, cov_hat_se = mc_error_moments(
            lambda p: p[:, 0] * p[:, 1], [2.0, 3.0], cov
        )
        # second-order rule gives exactly the eps^2 coefficients of the oracle
        assert out.bias[0] == pytest.approx(0.01, abs=1e-15)
        assert out.covariance[0, 0] == pytest.approx(0.37, abs=1e-14)
        assert abs(bias[0] - out.bias[0]) < 3 * bias_se[0] + 1e-4
        assert abs(cov_hat[0, 0] - out.covariance[0, 0]) < 3 * cov_hat_se[0, 0] + 1e-3

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError, match="dimension"):
            ea.propagate(ea.identity(3), ea.ErroneousValue.scalar(1.0))

    def test_non_finite_derivatives_rejected(self):
        bad = ea.SmoothMap(1, 1, eval=lambda x: x,
                           jacobian=lambda x: np.array([[np.inf]]),
                           hessian=lambda x: np.zeros((1, 1, 1)))
        with pytest.raises(ValueError, match="non-finite"):
            ea.propagate(bad, ea.ErroneousValue.scalar(1.0))

    @given(st.integers(0, 10_000))
    def test_first_order_ambiguity_shift(self, seed):
        # adding c to the input bias moves the output bias by exactly J c
        x = random_erroneous(seed, 2)
        f, _ = quadratic_pair(seed + 1, 2, 2, 2)
        c = np.random.default_rng(seed + 2).standard_normal(2)
        shifted = ea.ErroneousValue(x.value, x.bias + c, x.covariance)
        out0, out1 = ea.propagate(f, x), ea.propagate(f, shifted)
        j = f.jacobian(x.value)
        np.testing.assert_allclose(out1.bias - out0.bias, j @ c, rtol=0, atol=1e-12)
        np.testing.assert_array_equal(out0.covariance, out1.covariance)


class TestComposition:
    @pytest.mark.parametrize("seed", range(5))
    def test_two_step_equals_composed(self, seed):
        f, g = quadratic_pair(seed, 3, 2, 2)
        x = random_erroneous(seed + 100, 3)
        two_step = ea.propagate(g, ea.propagate(f, x))
        composed = ea.propagate(ea.compose(g, f), x)
        scale = 1.0 + np.max(np.abs(two_step.covariance))
        np.testing.assert_allclose(composed.bias, two_step.bias, rtol=0, atol=1e-12 * scale)
        np.testing.assert_allclose(composed.covariance, two_step.covariance, rtol=0, atol=1e-12 * scale)

    def test_composed_derivatives_match_finite_differences(self):
        f, g = quadratic_pair(7, 2, 3, 1)
        h = ea.compose(g, f)
        ea.validate_derivatives(h, np.random.default_rng(0).standard_normal((4, 2)))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="compose"):
            ea.compose(ea.identity(3), ea.identity(2))


class TestGaussCovariance:
    UNIT = ea.ErroneousValue([0.0, 0.0], [0.0, 0.0], np.eye(2))
    SUM = ea.affine(np.array([[1.0, 1.0]]))
    DIFF = ea.affine(np.array([[1.0, -1.0]]))

    def test_sum_of_independent_variances(self):
        assert ea.gauss_covariance(self.SUM, self.SUM, self.UNIT) == pytest.approx(2.0, abs=1e-15)

    def test_orthogonal_cancellation(self):
        assert ea.gauss_covariance(self.SUM, self.DIFF, self.UNIT) == pytest.approx(0.0, abs=1e-15)

    def test_product_matches_mc_oracle(self):
        x = ea.ErroneousValue([2.0, 3.0], [0.0, 0.0], np.diag([0.01, 0.04]))
        m = ea.pairwise_product()
        val = ea.gauss_covariance(m, m, x)
        assert val == pytest.approx(0.25, abs=1e-14)
        _, _, cov_hat, cov_se = mc_error_moments(lambda p: p[:, 0] * p[:, 1],
                                                 [2.0, 3.0], np.diag([0.01, 0.04]))
        assert abs(cov_hat[0, 0] - val) < 3 * cov_se[0, 0] + 1e-3

    def test_requires_scalar_maps(self):
        with pytest.raises(ValueError, match="scalar"):
            ea.gauss_covariance(ea.identity(2), self.SUM, self.UNIT)

    def test_rotation_round_trip_exact(self):
        rng = np.random.default_rng(3)
        g = rng.standard_normal((2, 2))
        cov = g @ g.T + 0.1 * np.eye(2)
        x = ea.ErroneousValue([0.5, -1.0], [0.0, 0.0], cov)
        theta = 0.7
        back = ea.propagate(ea.rotation(-theta), ea.propagate(ea.rotation(theta), x))
        np.testing.assert_allclose(back.covariance, cov, rtol=0,
                                   atol=1e-12 * (1 + np.max(np.abs(cov))))


class TestNaive:
    def test_identity(self):
        out = ea.naive_propagate(ea.identity(2), ea.NaiveErrorValue([0.0, 0.0], [1.0, 1.0]))
        np.testing.assert_array_equal(out.delta, [1.0, 1.0])

    def test_rotation_round_trip_inflates_to_two(self):
        # |J| entries are all sqrt(2)/2, so each pass multiplies the total
        # delta mass: (1,1) -> (sqrt2, sqrt2) -> (2, 2)
        start = ea.NaiveErrorValue([1.0, 1.0], [1.0, 1.0])
        once = ea.naive_propagate(ea.rotation(np.pi / 4), start)
        back = ea.naive_propagate(ea.rotation(-np.pi / 4), once)
        np.testing.assert_allclose(once.delta, [np.sqrt(2)] * 2, rtol=0, atol=1e-15)
        np.testing.assert_allclose(back.delta, [2.0, 2.0], rtol=0, atol=1e-12)

    def test_sum_bound_dominates_quadratic_bound(self):
        sum_map = ea.affine(np.array([[1.0, 1.0]]))
        naive = ea.naive_propagate(sum_map, ea.NaiveErrorValue([0.0, 0.0], [1.0, 1.0]))
        gauss = np.sqrt(ea.gauss_covariance(sum_map, sum_map,
                                            ea.ErroneousValue([0.0, 0.0], [0.0, 0.0], np.eye(2))))
        assert naive.delta[0] == pytest.approx(2.0, abs=1e-15)
        assert naive.delta[0] >= gauss
        assert gauss == pytest.approx(np.sqrt(2.0), abs=1e-15)

    @given(st.floats(0.01, 10.0), st.floats(0.01, 10.0))
    def test_round_trip_strictly_inflates_positive_deltas(self, d1, d2):
        start = ea.NaiveErrorValue([0.0, 0.0], [d1, d2])
        back = ea.naive_propagate(ea.rotation(-np.pi / 4),
                                  ea.naive_propagate(ea.rotation(np.pi / 4), start))
        assert back.delta[0] > start.delta[0]
        assert back.delta[1] > start.delta[1]

    def test_negative_delta_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            ea.NaiveErrorValue([0.0], [-1.0])


class TestSquaredFieldIdentity:
    def test_scalar_example(self):
        assert ea.square_identity_residual(ea.ErroneousValue.scalar(2.0, 0.1, 0.04), 0) <= 1e-12

    def test_correlated_example(self):
        x = ea.ErroneousValue([1.0, 1.0], [0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]])
        assert ea.square_identity_residual(x, 1) <= 1e-12

    @given(st.integers(0, 10_000), st.integers(1, 4))
    def test_any_triple_any_coordinate(self, seed, d):
        x = random_erroneous(seed, d)
        coord = seed % d
        assert ea.square_identity_residual(x, coord) <= 1e-12 * (1 + np.max(np.abs(x.covariance)))

    def test_coordinate_out_of_range(self):
        with pytest.raises(IndexError):
            ea.square_identity_residual(ea.ErroneousValue.scalar(1.0), 1)


class TestInvariants:
    @given(st.integers(0, 10_000), st.integers(1, 4))
    def test_psd_preserved(self, seed, d):
        x = random_erroneous(seed, d)
        f, _ = quadratic_pair(seed + 5, d, d, d)
        out = ea.propagate(f, x)
        eigmin = np.linalg.eigvalsh(out.covariance).min()
        assert eigmin >= -1e-10 * (1 + np.trace(out.covariance))

    def test_asymmetric_covariance_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            ea.ErroneousValue([0.0, 0.0], [0.0, 0.0], [[1.0, 0.2], [0.0, 1.0]])

    def test_indefinite_covariance_rejected(self):
        with pytest.raises(ValueError, match="semidefinite"):
            ea.ErroneousValue([0.0, 0.0], [0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ea.ErroneousValue([0.0, 0.0], [0.0], np.eye(2))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            ea.ErroneousValue([np.nan], [0.0], [[1.0]])


class TestDerivativeValidation:
    def test_builtin_maps_pass(self):
        points = np.random.default_rng(1).standard_normal((3, 2))
        for m in (ea.identity(2), ea.rotation(0.3), ea.pairwise_product(),
                  ea.coordinate_square(2, 1)):
            ea.validate_derivatives(m, points)

    def test_wrong_jacobian_caught(self):
        wrong = ea.SmoothMap(1, 1, eval=lambda x: x**2,
                             jacobian=lambda x: np.array([[3.0 * x[0]]]),
                             hessian=lambda x: np.full((1, 1, 1), 2.0))
        with pytest.raises(ValueError, match="finite differences"):
            ea.validate_derivatives(wrong, [[1.0]])

    def test_asymmetric_hessian_caught(self):
        bad = ea.SmoothMap(2, 1, eval=lambda x: np.array([x[0] * x[1]]),
                           jacobian=lambda x: np.array([[x[1], x[0]]]),
                           hessian=lambda x: np.array([[[0.0, 2.0], [0.0, 0.0]]]))
        with pytest.raises(ValueError, match="symmetric"):
            ea.propagate(bad, ea.ErroneousValue([1.0, 1.0], [0.0, 0.0], np.eye(2)))
