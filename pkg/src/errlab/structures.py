"""Concrete error structures: sampling space, squared-field coefficient, and
(optionally) the generating operator of the associated semigroup.

An error structure here is the computable core of the term
(Omega, A, P, D, Gamma): a seeded sampler for P, a symmetric PSD coefficient
field ``a(x)`` defining ``Gamma[f](x) = grad f(x)^T a(x) grad f(x)``, and an
optional drift field ``b(x)`` defining the generator

    A[f](x) = 1/2 tr(a(x) f''(x)) + b(x) . f'(x).

Built-in kinds
--------------
* ``ornstein_uhlenbeck``  — standard normal law, a = 1, b = -x/2, so
  A[f] = f''/2 - x f'/2.
* ``monte_carlo_unit_interval`` — uniform law on [0, 1], a = 1, b = 0; the
  generator A[f] = f''/2 is valid for test functions supported inside (0, 1).
* ``lebesgue_domain``     — uniform law on the unit box (0,1)^d, a = I,
  b = 0; A = Laplacian/2 for compactly supported test functions.
* ``weighted_form``       — user-supplied coefficient field a(x) (validated
  symmetric PSD on probe points); no generator unless a drift is supplied.
* ``product``             — independent product with block-diagonal a; Gamma
  adds across factors, each acting on its own argument block.
* ``image``               — push-forward through a map, with a(y) estimated
  as the conditional expectation of the transported coefficient given the
  image point (binned or kernel regression).

Energy convention
-----------------
The checks below adopt the generator-consistent convention

    E[f, g] = (1/2) E[Gamma[f, g]] = <-A f, g>,

which makes the built-in generators above exact (integration by parts under
the respective laws).  ``check_form_generator_link`` also reports the full
(unhalved) expected squared field so both normalizations are visible.

All samplers take an explicit integer seed; Monte-Carlo reductions use
numpy's pairwise summation, so results are reproducible bit-for-bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _stats
from .error_algebra import SmoothMap, check_psd

__all__ = [
    "DiffusionCheck",
    "ErrorStructure",
    "EstimationError",
    "FormGeneratorLink",
    "ImageEstimate",
    "SymmetryCheck",
    "TestFunction",
    "bump",
    "check_form_generator_link",
    "check_symmetry",
    "diffusion_consistency",
    "gamma",
    "generator_identity_residual",
    "image",
    "make_structure",
    "product",
    "tf_coordinate_product",
    "tf_from_scalar",
    "tf_identity",
    "tf_linear_nd",
    "tf_monomial",
    "tf_polynomial",
]


class EstimationError(RuntimeError):
    """A Monte-Carlo estimate could not be formed at the requested settings."""


# ---------------------------------------------------------------------------
# Test functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TestFunction:
    """A function with explicit first and second derivatives.

    For ``dim == 1`` the three callables are vectorized scalar maps
    (arrays in, arrays out).  For ``dim > 1`` they take a point of shape
    (d,) and return value, gradient (d,), and Hessian (d, d).
    """

    eval: Callable
    d1: Callable
    d2: Callable
    dim: int = 1
    support_hint: tuple[float, float] | None = None
    name: str = ""

    def __call__(self, x):
        return self.eval(x)

    def product(self, other: "TestFunction") -> "TestFunction":
        """Pointwise product with Leibniz derivatives (not re-expanded)."""
        if self.dim != other.dim:
            raise ValueError("cannot multiply test functions of different dimensions")
        f, g = self, other
        if self.dim == 1:
            return TestFunction(
                eval=lambda x: f.eval(x) * g.eval(x),
                d1=lambda x: f.d1(x) * g.eval(x) + f.eval(x) * g.d1(x),
                d2=lambda x: f.d2(x) * g.eval(x) + 2.0 * f.d1(x) * g.d1(x) + f.eval(x) * g.d2(x),
                dim=1,
                support_hint=_hint_intersection(f.support_hint, g.support_hint),
                name=f"({f.name})*({g.name})" if f.name or g.name else "",
            )

        def d1(x):
            return f.d1(x) * g.eval(x) + f.eval(x) * g.d1(x)

        def d2(x):
            gf, gg = np.asarray(f.d1(x)), np.asarray(g.d1(x))
            return (
                f.d2(x) * g.eval(x)
                + f.eval(x) * g.d2(x)
                + np.outer(gf, gg)
                + np.outer(gg, gf)
            )

        return TestFunction(
            eval=lambda x: f.eval(x) * g.eval(x), d1=d1, d2=d2, dim=f.dim,
            name=f"({f.name})*({g.name})" if f.name or g.name else "",
        )

    def squared(self) -> "TestFunction":
        return self.product(self)

    def validate_derivatives(self, points, rtol: float = 1e-5) -> float:
        """Compare d1/d2 with central finite differences of eval."""
        if self.dim != 1:
            raise NotImplementedError("finite-difference validation implemented for dim 1")
        worst = 0.0
        h0 = np.finfo(float).eps ** (1.0 / 3.0)
        for x in np.atleast_1d(np.asarray(points, dtype=float)):
            h = h0 * (1.0 + abs(x))
            fd1 = (self.eval(x + h) - self.eval(x - h)) / (2 * h)
            fd2 = (self.eval(x + h) - 2 * self.eval(x) + self.eval(x - h)) / h**2
            worst = max(worst, abs(fd1 - self.d1(x)) / (1.0 + abs(self.d1(x))))
            worst = max(worst, abs(fd2 - self.d2(x)) / (1.0 + abs(self.d2(x))))
        if worst > rtol:
            raise ValueError(f"test function derivatives off by {worst:.2e} (> {rtol:.0e})")
        return worst


def _hint_intersection(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return (max(a[0], b[0]), min(a[1], b[1]))


def tf_from_scalar(f, d1, d2, support_hint=None, name: str = "") -> TestFunction:
    return TestFunction(eval=f, d1=d1, d2=d2, dim=1, support_hint=support_hint, name=name)


def tf_identity() -> TestFunction:
    return TestFunction(
        eval=lambda x: np.asarray(x, dtype=float) + 0.0,
        d1=lambda x: np.ones_like(np.asarray(x, dtype=float)),
        d2=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        name="x",
    )


def tf_monomial(k: int) -> TestFunction:
    """x ** k with exact derivatives."""
    if k < 0:
        raise ValueError("monomial degree must be nonnegative")
    coeffs = np.zeros(k + 1)
    coeffs[k] = 1.0
    return tf_polynomial(coeffs)


def tf_polynomial(coeffs) -> TestFunction:
    """Polynomial sum(coeffs[i] * x**i)."""
    p = np.polynomial.Polynomial(np.asarray(coeffs, dtype=float))
    p1, p2 = p.deriv(), p.deriv(2)
    return TestFunction(eval=p, d1=p1, d2=p2, name=f"poly{list(np.round(p.coef, 6))}")


def tf_linear_nd(coeffs) -> TestFunction:
    """sum_i c_i x_i on R^d."""
    c = np.asarray(coeffs, dtype=float)
    d = c.size
    return TestFunction(
        eval=lambda x: float(np.dot(c, np.asarray(x, dtype=float))),
        d1=lambda x: c,
        d2=lambda x: np.zeros((d, d)),
        dim=d,
        name="linear",
    )


def tf_coordinate_product() -> TestFunction:
    """x1 * x2 on R^2."""
    h = np.array([[0.0, 1.0], [1.0, 0.0]])
    return TestFunction(
        eval=lambda x: float(x[0] * x[1]),
        d1=lambda x: np.array([x[1], x[0]], dtype=float),
        d2=lambda x: h,
        dim=2,
        name="x1*x2",
    )


def _smoothstep(t):
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


def _smoothstep_d1(t):
    return 30.0 * t * t * (1.0 - t) ** 2


def _smoothstep_d2(t):
    return 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)


def bump(center: float, halfwidth: float, name: str = "") -> TestFunction:
    """C^2 compactly supported bump built from the quintic smoothstep.

    Supported on [center - halfwidth, center + halfwidth], peak value 1.
    Value, slope, and curvature all vanish at the support boundary, and the
    two halves meet at the peak with zero slope and curvature, so the bump
    and both derivatives are continuous everywhere.
    """
    if halfwidth <= 0:
        raise ValueError("halfwidth must be positive")
    c, h = float(center), float(halfwidth)

    def _t(x):
        u = (np.asarray(x, dtype=float) - c) / h
        return np.clip(1.0 - np.abs(u), 0.0, 1.0), np.sign(u)

    def f(x):
        t, _ = _t(x)
        return _smoothstep(t)

    def d1(x):
        t, s = _t(x)
        return -s * _smoothstep_d1(t) / h

    def d2(x):
        t, _ = _t(x)
        return _smoothstep_d2(t) / h**2

    return TestFunction(
        eval=f, d1=d1, d2=d2, dim=1, support_hint=(c - h, c + h),
        name=name or f"bump({c:g},{h:g})",
    )


# ---------------------------------------------------------------------------
# Error structures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ErrorStructure:
    """Sampler + squared-field coefficient + optional drift (generator).

    ``sampler(seed, size)`` returns points of shape (size, dim) distributed
    as the structure's law.  ``gamma_coeff(x)`` returns the (dim, dim)
    symmetric PSD coefficient at a point; built-in fields broadcast over
    leading sample axes.  ``a_scalar``/``b_scalar`` are vectorized fast paths
    for dim == 1 (arrays in, arrays out).
    """

    kind: str
    dim: int
    sampler: Callable[[int, int], np.ndarray]
    gamma_coeff: Callable[[np.ndarray], np.ndarray]
    drift: Callable[[np.ndarray], np.ndarray] | None = None
    params: dict = field(default_factory=dict)
    a_scalar: Callable | None = field(default=None, repr=False)
    b_scalar: Callable | None = field(default=None, repr=False)
    constant_gamma: bool = False

    @property
    def has_generator(self) -> bool:
        return self.drift is not None

    def generator(self, f: TestFunction, x) -> float:
        """A[f](x) = tr(a f'')/2 + b . f' at a single point."""
        if self.drift is None:
            raise ValueError(f"structure kind={self.kind!r} has no generator")
        if self.dim == 1:
            x = float(np.asarray(x).reshape(()))
            a = self.a_scalar(np.asarray(x)) if self.a_scalar else self.gamma_coeff(np.asarray([x]))[0, 0]
            b = self.b_scalar(np.asarray(x)) if self.b_scalar else self.drift(np.asarray([x]))[0]
            return float(0.5 * a * f.d2(x) + b * f.d1(x))
        x = np.asarray(x, dtype=float).reshape(self.dim)
        a = np.asarray(self.gamma_coeff(x), dtype=float).reshape(self.dim, self.dim)
        b = np.asarray(self.drift(x), dtype=float).reshape(self.dim)
        return float(0.5 * np.einsum("ij,ij->", a, f.d2(x)) + b @ np.asarray(f.d1(x)))

    def sample(self, seed: int, size: int) -> np.ndarray:
        out = np.asarray(self.sampler(seed, size), dtype=float)
        return out.reshape(size, self.dim)


def _constant_field(mat: np.ndarray):
    mat = np.asarray(mat, dtype=float)

    def coeff(x):
        lead = np.shape(x)[:-1] if np.ndim(x) > 1 else ()
        return np.broadcast_to(mat, lead + mat.shape)

    return coeff


def _gauss_sampler(dim: int):
    def sampler(seed, size):
        return _stats.rng_from(seed).standard_normal((size, dim))

    return sampler


def _uniform_sampler(dim: int):
    def sampler(seed, size):
        return _stats.rng_from(seed).random((size, dim))

    return sampler


def make_structure(kind: str, **params) -> ErrorStructure:
    """Build a structure of the given kind.

    Parameters by kind: ``ornstein_uhlenbeck``/``lebesgue_domain`` accept
    ``dim`` (default 1); ``weighted_form`` requires ``a`` (callable x -> PSD
    coefficient, scalar for dim 1) and accepts ``dim``, ``drift``,
    ``sampler``; ``product`` requires ``components``; ``image`` requires
    ``base`` and ``map`` plus the ``image()`` estimator arguments.
    """
    if kind == "ornstein_uhlenbeck":
        dim = int(params.pop("dim", 1))
        _no_extra(params, kind)
        return ErrorStructure(
            kind=kind,
            dim=dim,
            sampler=_gauss_sampler(dim),
            gamma_coeff=_constant_field(np.eye(dim)),
            drift=lambda x: -0.5 * np.asarray(x, dtype=float),
            a_scalar=(lambda x: np.ones_like(np.asarray(x, dtype=float))) if dim == 1 else None,
            b_scalar=(lambda x: -0.5 * np.asarray(x, dtype=float)) if dim == 1 else None,
            constant_gamma=True,
        )
    if kind == "monte_carlo_unit_interval":
        _no_extra(params, kind)
        return ErrorStructure(
            kind=kind,
            dim=1,
            sampler=_uniform_sampler(1),
            gamma_coeff=_constant_field(np.eye(1)),
            drift=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
            a_scalar=lambda x: np.ones_like(np.asarray(x, dtype=float)),
            b_scalar=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
            constant_gamma=True,
        )
    if kind == "lebesgue_domain":
        dim = int(params.pop("dim", 1))
        _no_extra(params, kind)
        return ErrorStructure(
            kind=kind,
            dim=dim,
            sampler=_uniform_sampler(dim),
            gamma_coeff=_constant_field(np.eye(dim)),
            drift=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
            a_scalar=(lambda x: np.ones_like(np.asarray(x, dtype=float))) if dim == 1 else None,
            b_scalar=(lambda x: np.zeros_like(np.asarray(x, dtype=float))) if dim == 1 else None,
            constant_gamma=True,
        )
    if kind == "weighted_form":
        a = params.pop("a", None)
        if a is None:
            raise ValueError("weighted_form requires a coefficient callable 'a'")
        dim = int(params.pop("dim", 1))
        drift = params.pop("drift", None)
        sampler = params.pop("sampler", None) or _uniform_sampler(dim)
        _no_extra(params, kind)
        coeff = _normalize_coeff(a, dim)
        _probe_psd(coeff, sampler, dim)
        return ErrorStructure(
            kind=kind,
            dim=dim,
            sampler=sampler,
            gamma_coeff=coeff,
            drift=_normalize_drift(drift, dim) if drift is not None else None,
            a_scalar=_vectorized_or_none(a) if dim == 1 else None,
            b_scalar=_vectorized_or_none(drift) if (dim == 1 and drift is not None) else None,
        )
    if kind == "product":
        return product(params.pop("components"))
    if kind == "image":
        base = params.pop("base")
        x_map = params.pop("map")
        return image(base, x_map, **params)
    raise ValueError(f"unknown structure kind {kind!r}")


def _no_extra(params: dict, kind: str) -> None:
    if params:
        raise ValueError(f"unsupported parameters for kind {kind!r}: {sorted(params)}")


def _normalize_coeff(a: Callable, dim: int):
    if dim == 1:
        # User fields need not be vectorized: force a scalar call per point.
        def coeff(x):
            x0 = float(np.asarray(x).reshape(-1)[0]) if np.ndim(x) else float(x)
            return np.asarray(a(x0), dtype=float).reshape(1, 1)

        return coeff
    return lambda x: np.asarray(a(x), dtype=float)


def _vectorized_or_none(fn: Callable) -> Callable | None:
    """Return fn if it maps a float array to a same-shape array, else None."""
    try:
        probe = np.asarray(fn(np.array([0.25, 0.5, 0.75])), dtype=float)
    except Exception:
        return None
    if probe.shape != (3,):
        return None
    expected = np.asarray([float(fn(v)) for v in (0.25, 0.5, 0.75)])
    if not np.allclose(probe, expected, rtol=1e-12, atol=1e-12):
        return None
    return lambda x: np.asarray(fn(x), dtype=float)


def _normalize_drift(b: Callable, dim: int):
    return lambda x: np.atleast_1d(np.asarray(b(x), dtype=float))


def _probe_psd(coeff, sampler, dim: int, n_probe: int = 64) -> None:
    pts = np.asarray(sampler(0, n_probe), dtype=float).reshape(n_probe, dim)
    for p in pts:
        x = p[0] if dim == 1 else p
        mat = np.asarray(coeff(x), dtype=float).reshape(dim, dim)
        check_psd(mat, name="gamma coefficient")


def gamma(s: ErrorStructure, f: TestFunction, g: TestFunction, x) -> float:
    """Squared-field value grad f(x)^T a(x) grad g(x) at a point."""
    if s.dim == 1:
        x = float(np.asarray(x).reshape(()))
        a = s.a_scalar(np.asarray(x)) if s.a_scalar else s.gamma_coeff(np.asarray([x]))[0, 0]
        return float(f.d1(x) * a * g.d1(x))
    x = np.asarray(x, dtype=float).reshape(s.dim)
    a = np.asarray(s.gamma_coeff(x), dtype=float).reshape(s.dim, s.dim)
    return float(np.asarray(f.d1(x)) @ a @ np.asarray(g.d1(x)))


def generator_identity_residual(s: ErrorStructure, f: TestFunction, x) -> float:
    """|Gamma[f] - (A[f^2] - 2 f A[f])| at a point; zero for generator-form
    structures by the squared-field identity."""
    fx = f.eval(float(np.asarray(x).reshape(()))) if s.dim == 1 else f.eval(np.asarray(x, dtype=float))
    lhs = gamma(s, f, f, x)
    rhs = s.generator(f.squared(), x) - 2.0 * float(fx) * s.generator(f, x)
    return abs(lhs - rhs)


# ---------------------------------------------------------------------------
# Monte-Carlo checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SymmetryCheck:
    lhs: float
    rhs: float
    mc_stderr: float
    lhs_se: float
    rhs_se: float

    @property
    def passed(self) -> bool:
        return abs(self.lhs - self.rhs) <= 3.0 * self.mc_stderr


@dataclass(frozen=True)
class FormGeneratorLink:
    half_energy: float
    generator_pairing: float
    mc_stderr: float
    full_energy: float
    half_energy_se: float
    generator_pairing_se: float

    @property
    def passed(self) -> bool:
        return abs(self.half_energy - self.generator_pairing) <= 3.0 * self.mc_stderr


def _generator_samples(s: ErrorStructure, f: TestFunction, xs: np.ndarray) -> np.ndarray:
    """A[f] evaluated on samples; vectorized for dim 1, loop otherwise."""
    if s.drift is None:
        raise ValueError(f"structure kind={s.kind!r} has no generator")
    if s.dim == 1 and s.a_scalar is not None and s.b_scalar is not None:
        x = xs[:, 0]
        return 0.5 * s.a_scalar(x) * f.d2(x) + s.b_scalar(x) * f.d1(x)
    return np.array([s.generator(f, x) for x in xs])


def _gamma_samples(s: ErrorStructure, f: TestFunction, g: TestFunction, xs: np.ndarray) -> np.ndarray:
    if s.dim == 1 and s.a_scalar is not None:
        x = xs[:, 0]
        return f.d1(x) * s.a_scalar(x) * g.d1(x)
    return np.array([gamma(s, f, g, x) for x in xs])


def _eval_samples(f: TestFunction, xs: np.ndarray) -> np.ndarray:
    if f.dim == 1:
        return np.asarray(f.eval(xs[:, 0]), dtype=float)
    return np.array([float(f.eval(x)) for x in xs])


def check_symmetry(
    s: ErrorStructure, f: TestFunction, g: TestFunction, N: int, seed: int
) -> SymmetryCheck:
    """Monte-Carlo check that the generator is symmetric for the law:
    E[f A[g]] = E[g A[f]].  ``mc_stderr`` is the stderr of the pathwise
    difference, so the contract is |lhs - rhs| <= 3 mc_stderr.
    """
    xs = s.sample(seed, N)
    lhs_samples = _eval_samples(f, xs) * _generator_samples(s, g, xs)
    rhs_samples = _eval_samples(g, xs) * _generator_samples(s, f, xs)
    lhs, lhs_se = _mean_se(lhs_samples)
    rhs, rhs_se = _mean_se(rhs_samples)
    _, diff_se = _mean_se(lhs_samples - rhs_samples)
    return SymmetryCheck(lhs, rhs, max(diff_se, 1e-300), lhs_se, rhs_se)


def check_form_generator_link(
    s: ErrorStructure, f: TestFunction, g: TestFunction, N: int, seed: int
) -> FormGeneratorLink:
    """Monte-Carlo check of E[f,g] = E[Gamma[f,g]]/2 = E[(-A f) g].

    Returns both the halved energy (the generator-consistent convention used
    throughout) and the full expected squared field, plus the stderr of the
    pathwise difference between the two convention-matched sides.
    """
    xs = s.sample(seed, N)
    gamma_samples = _gamma_samples(s, f, g, xs)
    pairing_samples = -_generator_samples(s, f, xs) * _eval_samples(g, xs)
    half, half_se = _mean_se(0.5 * gamma_samples)
    pairing, pairing_se = _mean_se(pairing_samples)
    _, diff_se = _mean_se(0.5 * gamma_samples - pairing_samples)
    return FormGeneratorLink(
        half_energy=half,
        generator_pairing=pairing,
        mc_stderr=max(diff_se, 1e-300),
        full_energy=2.0 * half,
        half_energy_se=half_se,
        generator_pairing_se=pairing_se,
    )


def _mean_se(samples: np.ndarray) -> tuple[float, float]:
    n = samples.size
    m = float(np.mean(samples))
    var = float(np.mean((samples - m) ** 2))
    return m, math.sqrt(max(var, 0.0) / n)


# ---------------------------------------------------------------------------
# Products
# ---------------------------------------------------------------------------

def product(components: Sequence[ErrorStructure]) -> ErrorStructure:
    """Finite product structure: independent sampler, block-diagonal
    coefficient, Gamma[f] = sum of per-factor Gammas on argument blocks."""
    comps = list(components)
    if not comps:
        raise ValueError("product requires at least one component")
    if len(comps) == 1:
        return comps[0]
    dims = [c.dim for c in comps]
    dim = sum(dims)
    offsets = np.cumsum([0] + dims)

    def sampler(seed, size):
        seeds = np.random.SeedSequence(seed).spawn(len(comps))
        return np.concatenate(
            [c.sample(sd, size) for c, sd in zip(comps, seeds)], axis=1
        )

    def coeff(x):
        x = np.asarray(x, dtype=float).reshape(dim)
        out = np.zeros((dim, dim))
        for c, lo, hi in zip(comps, offsets[:-1], offsets[1:]):
            xi = x[lo] if c.dim == 1 else x[lo:hi]
            out[lo:hi, lo:hi] = np.asarray(c.gamma_coeff(xi), dtype=float).reshape(c.dim, c.dim)
        return out

    drift = None
    if all(c.drift is not None for c in comps):
        def drift(x):
            x = np.asarray(x, dtype=float).reshape(dim)
            parts = []
            for c, lo, hi in zip(comps, offsets[:-1], offsets[1:]):
                xi = x[lo] if c.dim == 1 else x[lo:hi]
                if c.dim == 1 and c.b_scalar is not None:
                    parts.append(np.atleast_1d(c.b_scalar(np.asarray(xi))))
                else:
                    parts.append(np.asarray(c.drift(xi), dtype=float).reshape(c.dim))
            return np.concatenate(parts)

    return ErrorStructure(
        kind="product",
        dim=dim,
        sampler=sampler,
        gamma_coeff=coeff,
        drift=drift,
        params={"components": tuple(c.kind for c in comps)},
        constant_gamma=all(c.constant_gamma for c in comps),
    )


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImageEstimate:
    """Conditional-expectation estimate of the image coefficient field."""

    nodes: np.ndarray          # image points where the field was estimated
    values: np.ndarray         # coefficient estimate per node
    counts: np.ndarray         # samples (or effective samples) per node
    stderr: np.ndarray         # per-node MC stderr of the estimate
    failed: np.ndarray         # mask of cells with < min_count samples
    estimator: str
    bandwidth: float | None


def image(
    s: ErrorStructure,
    x_map: SmoothMap,
    estimator: str = "bins",
    bins: int | None = None,
    bandwidth: float | None = None,
    min_count: int = 30,
    N: int = 100_000,
    seed: int = 0,
) -> ErrorStructure:
    """Push an error structure forward through a scalar map.

    The image coefficient at y is the conditional expectation, given
    map(x) = y, of the transported coefficient J a J^T.  With
    ``estimator="bins"`` the conditioning uses equal-count bins of the image
    sample (cells with fewer than ``min_count`` raw samples are flagged as
    estimation failures and excluded from the field); ``estimator="kernel"``
    uses Nadaraya-Watson regression with a Gaussian kernel and the
    rule-of-thumb bandwidth std(y) * N**(-1/5) unless one is given.

    The returned structure samples by pushing base samples through the map
    and interpolates the estimated field piecewise-linearly between nodes
    (clamped outside the covered range).
    """
    if x_map.d_out != 1:
        raise ValueError("image estimation is implemented for scalar-valued maps")
    if x_map.d_in != s.dim:
        raise ValueError(f"map expects dimension {x_map.d_in}, structure has {s.dim}")
    if estimator not in ("bins", "kernel"):
        raise ValueError(f"unknown estimator {estimator!r}")
    if N < 2 * min_count:
        raise EstimationError("too few samples for conditional estimation")

    xs = s.sample(seed, N)
    ys, gamma_x = _pushforward_samples(s, x_map, xs)

    if estimator == "bins":
        n_bins = bins if bins is not None else max(10, min(200, N // max(1000, min_count)))
        order = np.argsort(ys, kind="stable")
        edges = np.linspace(0, N, n_bins + 1).astype(int)
        nodes, values, counts, stderr = [], [], [], []
        for lo, hi in zip(edges[:-1], edges[1:]):
            idx = order[lo:hi]
            g = gamma_x[idx]
            m, se = _mean_se(g) if idx.size else (np.nan, np.nan)
            nodes.append(float(np.mean(ys[idx])) if idx.size else np.nan)
            values.append(m)
            counts.append(idx.size)
            stderr.append(se)
        nodes = np.asarray(nodes)
        values = np.asarray(values)
        counts = np.asarray(counts)
        stderr = np.asarray(stderr)
        failed = counts < min_count
        est = ImageEstimate(nodes, values, counts, stderr, failed, "bins", None)
    else:
        h = bandwidth if bandwidth is not None else float(np.std(ys)) * N ** (-0.2)
        if h <= 0:
            raise ValueError("bandwidth must be positive")
        lo, hi = np.quantile(ys, [0.005, 0.995])
        nodes = np.linspace(lo, hi, 64)
        values = np.empty_like(nodes)
        counts = np.empty_like(nodes)
        stderr = np.empty_like(nodes)
        for i, y0 in enumerate(nodes):
            w = np.exp(-0.5 * ((ys - y0) / h) ** 2)
            sw = w.sum()
            counts[i] = int(np.sum(np.abs(ys - y0) <= h))
            if sw <= 0:
                values[i] = np.nan
                stderr[i] = np.nan
                continue
            mu = float(np.sum(w * gamma_x) / sw)
            values[i] = mu
            var = float(np.sum(w * (gamma_x - mu) ** 2) / sw)
            neff = sw**2 / np.sum(w**2)
            stderr[i] = math.sqrt(max(var, 0.0) / max(neff, 1.0))
        failed = counts < min_count
        est = ImageEstimate(nodes, values, counts, stderr, failed, "kernel", h)

    good = ~est.failed & np.isfinite(est.values)
    if not np.any(good):
        raise EstimationError("every conditional cell failed (fewer than min_count samples)")
    xp, fp = est.nodes[good], est.values[good]

    def a_scalar(y):
        return np.interp(np.asarray(y, dtype=float), xp, fp)

    def coeff(y):
        arr = np.asarray(y, dtype=float)
        if arr.ndim <= 1:  # scalar point or shape-(1,) point
            y0 = float(arr.reshape(-1)[0]) if arr.ndim else float(arr)
            return np.asarray([[float(np.interp(y0, xp, fp))]])
        return a_scalar(arr[..., 0])[..., None, None]

    def sampler(sample_seed, size):
        base = s.sample(sample_seed, size)
        ys_new, _ = _pushforward_samples(s, x_map, base, need_gamma=False)
        return ys_new.reshape(size, 1)

    return ErrorStructure(
        kind="image",
        dim=1,
        sampler=sampler,
        gamma_coeff=coeff,
        drift=None,
        params={"base": s.kind, "map": x_map.name, "estimate": est},
        a_scalar=a_scalar,
    )


def _pushforward_samples(s: ErrorStructure, x_map: SmoothMap, xs: np.ndarray, need_gamma: bool = True):
    """Image points and transported coefficient (J a J^T) per sample."""
    n = xs.shape[0]
    if s.dim == 1 and x_map.d1_scalar is not None and x_map.eval_scalar is not None:
        x = xs[:, 0]
        ys = np.asarray(x_map.eval_scalar(x), dtype=float)
        if not need_gamma:
            return ys, None
        jac = np.asarray(x_map.d1_scalar(x), dtype=float)
        a = s.a_scalar(x) if s.a_scalar is not None else np.array(
            [s.gamma_coeff(np.asarray([v]))[0, 0] for v in x]
        )
        return ys, jac * a * jac
    ys = np.empty(n)
    gamma_x = np.empty(n) if need_gamma else None
    for i in range(n):
        x = xs[i, 0] if s.dim == 1 else xs[i]
        ys[i] = float(x_map(np.atleast_1d(x))[0])
        if need_gamma:
            j = np.asarray(x_map.jacobian(np.atleast_1d(np.asarray(x, dtype=float))), dtype=float).reshape(1, s.dim)
            a = np.asarray(s.gamma_coeff(x), dtype=float).reshape(s.dim, s.dim)
            gamma_x[i] = float(j @ a @ j.T)
    return ys, gamma_x


# ---------------------------------------------------------------------------
# Diffusion consistency
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiffusionCheck:
    empirical_rate: float
    predicted: float
    mc_stderr: float
    bias_budget: float
    t: float
    steps: int

    @property
    def passed(self) -> bool:
        return abs(self.empirical_rate - self.predicted) <= 3.0 * self.mc_stderr + self.bias_budget


def _sqrt_psd(mat: np.ndarray) -> np.ndarray:
    """Symmetric square root; eigenvalues in [-1e-10 * trace, 0) are clamped
    to zero, anything lower is an error."""
    vals, vecs = np.linalg.eigh(mat)
    floor = -1e-10 * (1.0 + abs(float(np.trace(mat))))
    if np.any(vals < floor):
        raise ValueError(f"gamma coefficient is not PSD (min eigenvalue {vals.min():.3e})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def diffusion_consistency(
    s: ErrorStructure,
    f: TestFunction,
    x,
    t: float,
    steps: int | None = None,
    N: int = 100_000,
    seed: int = 0,
) -> DiffusionCheck:
    """Compare the short-time semigroup rate (E[f(S_t) | S_0=x] - f(x)) / t
    of the diffusion with drift b and diffusion matrix sqrt(a) against the
    generator value A[f](x).

    The declared bias budget covers the O(t) semigroup expansion error
    (|A[A[f]]| t / 2, with the outer generator applied by central finite
    differences) and the explicit-Euler stepping error, each with a safety
    factor of two.
    """
    if s.drift is None:
        raise ValueError("diffusion_consistency requires a structure with a drift field")
    if steps is None:
        steps = max(10, int(round(t / 0.001)))
    if steps < 10:
        raise ValueError("need at least 10 time steps")
    dt = t / steps
    rng = _stats.rng_from(seed)

    predicted = s.generator(f, x)

    # A[A[f]](x) by central differences of the generator map (dim 1 only;
    # higher dimensions fall back to a zero curvature allowance).
    a2 = 0.0
    if s.dim == 1:
        h = 1e-4 * (1.0 + abs(float(np.asarray(x).reshape(()))))
        x0 = float(np.asarray(x).reshape(()))
        g = lambda u: s.generator(f, u)
        g1 = (g(x0 + h) - g(x0 - h)) / (2 * h)
        g2 = (g(x0 + h) - 2 * g(x0) + g(x0 - h)) / h**2
        a_x = s.a_scalar(np.asarray(x0)) if s.a_scalar else s.gamma_coeff(np.asarray([x0]))[0, 0]
        b_x = s.b_scalar(np.asarray(x0)) if s.b_scalar else s.drift(np.asarray([x0]))[0]
        a2 = 0.5 * float(a_x) * g2 + float(b_x) * g1
    budget = abs(a2) * t + 2.0 * (abs(predicted) + abs(a2)) * dt

    if s.dim == 1 and s.a_scalar is not None and s.b_scalar is not None:
        paths = np.full(N, float(np.asarray(x).reshape(())))
        for _ in range(steps):
            a_vals = s.a_scalar(paths)
            if np.any(a_vals < -1e-10 * (1.0 + np.abs(a_vals))):
                raise ValueError("gamma coefficient went negative along the path")
            paths = (
                paths
                + s.b_scalar(paths) * dt
                + np.sqrt(np.clip(a_vals, 0.0, None) * dt) * rng.standard_normal(N)
            )
        terminal = np.asarray(f.eval(paths), dtype=float)
    else:
        x0 = np.asarray(x, dtype=float).reshape(s.dim)
        paths = np.tile(x0, (N, 1))
        if s.constant_gamma:
            sig = _sqrt_psd(np.asarray(s.gamma_coeff(x0), dtype=float).reshape(s.dim, s.dim))
            for _ in range(steps):
                noise = rng.standard_normal((N, s.dim)) @ sig.T
                drift_vals = np.stack([np.asarray(s.drift(p), dtype=float).reshape(s.dim) for p in paths])
                paths = paths + drift_vals * dt + noise * math.sqrt(dt)
        else:
            for _ in range(steps):
                noise = rng.standard_normal((N, s.dim))
                for i in range(N):
                    sig = _sqrt_psd(np.asarray(s.gamma_coeff(paths[i]), dtype=float).reshape(s.dim, s.dim))
                    b = np.asarray(s.drift(paths[i]), dtype=float).reshape(s.dim)
                    paths[i] = paths[i] + b * dt + (sig @ noise[i]) * math.sqrt(dt)
        terminal = np.array([float(f.eval(p)) for p in paths])

    f0 = float(f.eval(float(np.asarray(x).reshape(())))) if s.dim == 1 else float(f.eval(np.asarray(x, dtype=float)))
    mean_t, se_t = _mean_se(terminal)
    return DiffusionCheck(
        empirical_rate=(mean_t - f0) / t,
        predicted=predicted,
        mc_stderr=se_t / t,
        bias_budget=budget,
        t=t,
        steps=steps,
    )
