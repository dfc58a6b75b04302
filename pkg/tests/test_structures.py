import numpy as np
import pytest
from scipy.integrate import quad

from errlab import error_algebra as ea
from errlab import structures as st


OU = st.make_structure("ornstein_uhlenbeck")
MC = st.make_structure("monte_carlo_unit_interval")

X = st.tf_identity()
X2 = st.tf_monomial(2)
X2_PLUS_X = st.tf_polynomial([0.0, 1.0, 1.0])


def scalar_map(f, d1, d2, name=""):
    return ea.from_scalar(f, d1, d2, name=name)


class TestFactories:
    def test_ou_gamma_square(self):
        # Gamma[x^2](x) = (2x)^2
        assert st.gamma(OU, X2, X2, 1.5) == pytest.approx(9.0, abs=1e-14)

    def test_mc_gamma_sine(self):
        f = st.tf_from_scalar(lambda x: np.sin(np.pi * x),
                              lambda x: np.pi * np.cos(np.pi * x),
                              lambda x: -np.pi**2 * np.sin(np.pi * x), name="sin(pi x)")
        assert st.gamma(MC, f, f, 0.0) == pytest.approx(np.pi**2, abs=1e-12)

    def test_weighted_form_linear_coefficient(self):
        s = st.make_structure("weighted_form", a=lambda x: x)
        assert st.gamma(s, X, X, 0.25) == pytest.approx(0.25, abs=1e-15)

    def test_weighted_form_accepts_hinge(self):
        st.make_structure("weighted_form", a=lambda x: max(x, 0.0))

    def test_weighted_form_rejects_negative(self):
        with pytest.raises(ValueError, match="semidefinite"):
            st.make_structure("weighted_form", a=lambda x: -1.0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown structure"):
            st.make_structure("wiener_space")

    def test_sampler_deterministic(self):
        a = OU.sample(123, 50)
        b = OU.sample(123, 50)
        np.testing.assert_array_equal(a, b)

    def test_ou_generator_formula(self):
        # A[f](x) = f''(x)/2 - x f'(x)/2
        for x in (-1.0, 0.3, 2.0):
            assert OU.generator(X2, x) == pytest.approx(1.0 - x * x, abs=1e-14)

    def test_test_function_derivative_validation(self):
        X2.validate_derivatives([-1.0, 0.5, 2.0])
        wrong = st.tf_from_scalar(lambda x: x**2, lambda x: 3.0 * x, lambda x: 2.0 + 0.0 * x)
        with pytest.raises(ValueError):
            wrong.validate_derivatives([1.0])

    def test_bump_is_c2_with_consistent_derivatives(self):
        b = st.bump(0.3, 0.4)
        # probes avoid the peak and the support edges, where the *third*
        # derivative jumps and second differences pick up an O(h) error
        pts = [-0.2, 0.0, 0.05, 0.2, 0.31, 0.55, 0.69, 0.8]
        b.validate_derivatives(pts)
        assert b.eval(0.3) == 1.0
        assert b.eval(0.7) == 0.0 and b.d1(0.7) == 0.0 and b.d2(0.7) == 0.0
        # continuity across the peak and the edge
        for x0 in (0.3, 0.7):
            left, right = b.d2(x0 - 1e-9), b.d2(x0 + 1e-9)
            assert abs(left - right) < 1e-6

    def test_product_function_leibniz(self):
        p = X2.product(X2_PLUS_X)
        p.validate_derivatives([-0.7, 0.2, 1.3])


class TestGeneratorIdentity:
    @pytest.mark.parametrize("f", [X, X2, X2_PLUS_X, st.tf_polynomial([1.0, -0.5, 0.0, 2.0])])
    @pytest.mark.parametrize("x", [-1.2, 0.0, 0.7])
    def test_ou_pointwise(self, f, x):
        assert st.generator_identity_residual(OU, f, x) <= 1e-10

    def test_mc_pointwise(self):
        b = st.bump(0.5, 0.3)
        for x in (0.3, 0.5, 0.62):
            assert st.generator_identity_residual(MC, b, x) <= 1e-10

    def test_missing_generator(self):
        s = st.make_structure("weighted_form", a=lambda x: 1.0)
        with pytest.raises(ValueError, match="no generator"):
            s.generator(X, 0.5)


class TestSymmetry:
    def test_ou_linear_vs_quadratic_plus_linear(self):
        # E[x A[x^2+x]] = E[(x^2+x) A[x]] = -E[x^2]/2 = -1/2 (Gaussian moments)
        chk = st.check_symmetry(OU, X, X2_PLUS_X, 200_000, 42)
        assert chk.passed
        assert chk.lhs == pytest.approx(-0.5, abs=3 * chk.lhs_se)
        assert chk.rhs == pytest.approx(-0.5, abs=3 * chk.rhs_se)

    def test_equal_arguments_identical(self):
        chk = st.check_symmetry(OU, X2, X2, 10_000, 7)
        assert chk.lhs == chk.rhs

    def test_ou_odd_moments_vanish(self):
        chk = st.check_symmetry(OU, X, X2, 200_000, 11)
        assert chk.passed
        assert abs(chk.lhs) <= 3 * chk.lhs_se
        assert abs(chk.rhs) <= 3 * chk.rhs_se

    def test_missing_generator(self):
        s = st.make_structure("weighted_form", a=lambda x: 1.0)
        with pytest.raises(ValueError, match="no generator"):
            st.check_symmetry(s, X, X, 1000, 0)


class TestFormGeneratorLink:
    def test_ou_identity_function(self):
        # E[Gamma[x,x]]/2 = 1/2 and E[(x/2) x] = E[x^2]/2 = 1/2
        link = st.check_form_generator_link(OU, X, X, 200_000, 3)
        assert link.passed
        assert link.half_energy == 0.5  # Gamma[x] is identically one
        assert link.generator_pairing == pytest.approx(0.5, abs=3 * link.generator_pairing_se)
        assert link.full_energy == 1.0

    def test_ou_square_function(self):
        # E[4x^2]/2 = 2 and E[(x^2-1) x^2] = E[x^4] - E[x^2] = 2
        link = st.check_form_generator_link(OU, X2, X2, 400_000, 5)
        assert link.passed
        assert link.half_energy == pytest.approx(2.0, abs=3 * link.half_energy_se)
        assert link.generator_pairing == pytest.approx(2.0, abs=3 * link.generator_pairing_se)

    def test_mc_bumps_match_quadrature_oracle(self):
        f = st.bump(0.45, 0.25)
        g = st.bump(0.55, 0.25)
        link = st.check_form_generator_link(MC, f, g, 400_000, 9)
        half_oracle = 0.5 * quad(lambda x: f.d1(x) * g.d1(x), 0, 1, limit=200)[0]
        pairing_oracle = -quad(lambda x: 0.5 * f.d2(x) * g.eval(x), 0, 1, limit=200)[0]
        assert half_oracle == pytest.approx(pairing_oracle, abs=1e-10)
        assert link.passed
        assert link.half_energy == pytest.approx(half_oracle, abs=3 * link.half_energy_se)
        assert link.generator_pairing == pytest.approx(pairing_oracle,
                                                       abs=3 * link.generator_pairing_se)


class TestProduct:
    OU2 = st.product([OU, st.make_structure("ornstein_uhlenbeck")])

    def test_additive_gamma(self):
        f = st.tf_linear_nd([1.0, 1.0])
        for pt in ([0.0, 0.0], [1.3, -0.4]):
            assert st.gamma(self.OU2, f, f, pt) == pytest.approx(2.0, abs=1e-14)

    def test_product_function_gamma_and_mean(self):
        f = st.tf_coordinate_product()
        assert st.gamma(self.OU2, f, f, [1.0, 2.0]) == pytest.approx(5.0, abs=1e-14)
        xs = self.OU2.sample(77, 20_000)
        vals = xs[:, 0] ** 2 + xs[:, 1] ** 2
        se = vals.std() / np.sqrt(len(vals))
        assert vals.mean() == pytest.approx(2.0, abs=3 * se)

    def test_single_component_is_component(self):
        assert st.product([OU]) is OU

    def test_associative_up_to_relabeling(self):
        third = st.make_structure("monte_carlo_unit_interval")
        nested = st.product([st.product([OU, OU]), third])
        flat = st.product([OU, OU, third])
        f = st.tf_linear_nd([1.0, -2.0, 0.5])
        for pt in ([0.1, 0.2, 0.3], [-1.0, 0.5, 0.9]):
            assert st.gamma(nested, f, f, pt) == st.gamma(flat, f, f, pt)

    def test_generator_sums_over_blocks(self):
        f = st.tf_linear_nd([1.0, 1.0])
        # A[x1 + x2](x) = -x1/2 - x2/2
        assert self.OU2.generator(f, [1.0, 3.0]) == pytest.approx(-2.0, abs=1e-14)

    def test_empty_product_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            st.product([])


class TestImage:
    SQUARE = scalar_map(lambda t: t * t, lambda t: 2.0 * t,
                        lambda t: np.full_like(np.asarray(t, dtype=float), 2.0), name="x^2")

    def test_affine_image_constant_field(self):
        m = scalar_map(lambda t: 2.0 * t + 1.0,
                       lambda t: np.full_like(np.asarray(t, dtype=float), 2.0),
                       lambda t: np.zeros_like(np.asarray(t, dtype=float)), name="2x+1")
        img = st.image(OU, m, N=50_000, seed=1)
        for y in (-2.0, 1.0, 3.0):
            assert float(img.a_scalar(y)) == pytest.approx(4.0, abs=1e-12)

    def test_square_image_recovers_4y(self):
        img = st.image(OU, self.SQUARE, N=300_000, seed=2)
        assert float(img.a_scalar(1.0)) == pytest.approx(4.0, rel=0.10)
        for y in (0.25, 0.5, 1.5, 2.25):
            assert float(img.a_scalar(y)) == pytest.approx(4.0 * y, rel=0.10)

    def test_identity_image_of_monte_carlo(self):
        img = st.image(MC, scalar_map(lambda t: t + 0.0,
                                      lambda t: np.ones_like(np.asarray(t, dtype=float)),
                                      lambda t: np.zeros_like(np.asarray(t, dtype=float)),
                                      name="id"), N=50_000, seed=3)
        for y in (0.2, 0.5, 0.8):
            assert float(img.a_scalar(y)) == pytest.approx(1.0, abs=1e-12)

    def test_kernel_estimator_square_image(self):
        img = st.image(OU, self.SQUARE, estimator="kernel", N=200_000, seed=4)
        assert float(img.a_scalar(1.0)) == pytest.approx(4.0, rel=0.10)

    def test_image_of_image_matches_composition(self):
        # push OU forward through u(x) = x + 2, then v(y) = y^2, versus v(u(x))
        u = scalar_map(lambda t: t + 2.0,
                       lambda t: np.ones_like(np.asarray(t, dtype=float)),
                       lambda t: np.zeros_like(np.asarray(t, dtype=float)), name="x+2")
        vu = scalar_map(lambda t: (t + 2.0) ** 2, lambda t: 2.0 * (t + 2.0),
                        lambda t: np.full_like(np.asarray(t, dtype=float), 2.0), name="(x+2)^2")
        step = st.image(st.image(OU, u, N=400_000, seed=5), self.SQUARE, N=400_000, seed=6)
        direct = st.image(OU, vu, N=400_000, seed=7)
        for y in (2.0, 4.0, 6.0):  # (x+2)^2 for x ~ N(0,1): well-covered range
            assert float(step.a_scalar(y)) == pytest.approx(float(direct.a_scalar(y)), rel=0.10)

    def test_starved_bins_fail(self):
        with pytest.raises(st.EstimationError, match="min_count"):
            st.image(OU, self.SQUARE, bins=100, N=1_000, seed=8)

    def test_vector_valued_map_rejected(self):
        with pytest.raises(ValueError, match="scalar"):
            st.image(OU, ea.identity(2), N=1000, seed=0)

    def test_pushforward_sampler(self):
        img = st.image(OU, self.SQUARE, N=50_000, seed=9)
        ys = img.sample(10, 20_000)
        # law of x^2 for standard normal x: mean 1, var 2
        assert ys.mean() == pytest.approx(1.0, abs=0.05)
        assert ys.var() == pytest.approx(2.0, abs=0.15)


class TestDiffusionConsistency:
    def test_ou_square_at_origin(self):
        chk = st.diffusion_consistency(OU, X2, 0.0, t=0.01, N=200_000, seed=12)
        assert chk.predicted == 1.0
        assert chk.passed

    def test_ou_identity_drift(self):
        chk = st.diffusion_consistency(OU, X, 1.0, t=0.01, N=200_000, seed=13)
        assert chk.predicted == -0.5
        assert chk.passed

    def test_frozen_structure_rate_zero(self):
        frozen = st.make_structure("weighted_form", a=lambda x: 0.0, drift=lambda x: 0.0)
        chk = st.diffusion_consistency(frozen, X2, 0.3, t=0.01, N=1_000, seed=14)
        assert chk.empirical_rate == 0.0
        assert chk.predicted == 0.0

    def test_too_few_steps_rejected(self):
        with pytest.raises(ValueError, match="10"):
            st.diffusion_consistency(OU, X2, 0.0, t=0.01, steps=5, N=1_000, seed=0)

    def test_requires_drift(self):
        s = st.make_structure("weighted_form", a=lambda x: 1.0)
        with pytest.raises(ValueError, match="drift"):
            st.diffusion_consistency(s, X2, 0.0, t=0.01, N=1_000, seed=0)


class TestLebesgueDomain:
    def test_generator_is_half_laplacian(self):
        s = st.make_structure("lebesgue_domain", dim=1)
        b = st.bump(0.5, 0.3)
        assert s.generator(b, 0.4) == pytest.approx(0.5 * b.d2(0.4), abs=1e-14)

    def test_symmetry_with_bumps(self):
        s = st.make_structure("lebesgue_domain", dim=1)
        chk = st.check_symmetry(s, st.bump(0.4, 0.3), st.bump(0.6, 0.3), 200_000, 15)
        assert chk.passed
