"""Second-order propagation of (value, bias, covariance) error triples.

An erroneous quantity is summarized by the first two conditional moments of
its random error: a drift vector (the *bias*, which already contains the
half-curvature second-order contribution) and the covariance matrix of the
first-order fluctuation.  A smooth map F transports the triple by

    value'      = F(value)
    bias'       = J bias + (1/2) H : covariance
    covariance' = J covariance J^T

where J is the Jacobian and H the Hessian stack of F at ``value``, and
``H : C`` denotes the contraction ``sum_ij H[k,i,j] C[i,j]``.

The covariance rule alone is the classical Gauss quadratic error calculus;
the bias rule is the second-order extension that keeps the calculus coherent
under composition.  The textbook absolute-error recipe
``delta' = |J| delta`` is also provided (``naive_propagate``) for comparison;
it is *not* coherent: composing a rotation with its inverse strictly inflates
positive deltas, while both Gauss and second-order propagation return the
original triple exactly.

Conventions
-----------
* The bias is the conditional mean of the full second-order increment.  Its
  first-order part depends on the chosen reference (adding a deterministic
  offset ``c`` to an input bias shifts the output bias by exactly ``J c`` and
  leaves the covariance unchanged); this module fixes the convention and does
  not attempt to split drift from curvature.
* Moments of order three and higher are not carried: for the locality class
  of error laws handled here they are negligible against the first two.
* Inputs failing the positive-semidefiniteness tolerance are rejected, never
  projected, so propagation stays exactly linear/bilinear in the moments.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "ErroneousValue",
    "NaiveErrorValue",
    "SmoothMap",
    "affine",
    "compose",
    "contract_hessian",
    "coordinate_square",
    "from_scalar",
    "gauss_covariance",
    "identity",
    "naive_propagate",
    "pairwise_product",
    "projection",
    "propagate",
    "quadratic_map",
    "rotation",
    "square_identity_residual",
    "validate_derivatives",
]

SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-10
FD_RTOL = 1e-5


def _as_vector(x, name: str) -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def _as_matrix(x, d: int, name: str) -> np.ndarray:
    m = np.asarray(x, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.shape != (d, d):
        raise ValueError(f"{name} must have shape ({d}, {d}), got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def check_psd(cov: np.ndarray, name: str = "covariance") -> None:
    """Reject matrices that are asymmetric or indefinite beyond tolerance."""
    scale = 1.0 + np.max(np.abs(cov)) if cov.size else 1.0
    asym = np.max(np.abs(cov - cov.T)) if cov.size else 0.0
    if asym > SYMMETRY_TOL * scale:
        raise ValueError(f"{name} is not symmetric (defect {asym:.3e})")
    min_eig = float(np.linalg.eigvalsh(cov).min())
    if min_eig < -PSD_TOL * (1.0 + float(np.trace(cov))):
        raise ValueError(f"{name} is not positive semidefinite (min eigenvalue {min_eig:.3e})")


@dataclass(frozen=True)
class ErroneousValue:
    """A quantity with value, bias vector, and error covariance matrix.

    ``bias[i]`` is the conditional mean of the (second-order) error increment
    of coordinate i; ``covariance[i, j]`` is the conditional second moment of
    the first-order increments.  Instances are immutable and safe to share.
    """

    value: np.ndarray
    bias: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        value = _as_vector(self.value, "value")
        bias = _as_vector(self.bias, "bias")
        d = value.size
        if bias.size != d:
            raise ValueError(f"bias has dimension {bias.size}, expected {d}")
        cov = _as_matrix(self.covariance, d, "covariance")
        check_psd(cov)
        cov = 0.5 * (cov + cov.T)  # drop sub-tolerance asymmetry
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "covariance", cov)
        self.value.setflags(write=False)
        self.bias.setflags(write=False)
        self.covariance.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.value.size

    @staticmethod
    def scalar(value: float, bias: float = 0.0, variance: float = 0.0) -> "ErroneousValue":
        return ErroneousValue([value], [bias], [[variance]])


@dataclass(frozen=True)
class NaiveErrorValue:
    """Value with textbook absolute error bounds (all deltas nonnegative)."""

    value: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        value = _as_vector(self.value, "value")
        delta = _as_vector(self.delta, "delta")
        if delta.size != value.size:
            raise ValueError("value/delta dimension mismatch")
        if np.any(delta < 0):
            raise ValueError("delta entries must be nonnegative")
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "delta", delta)

    @property
    def dim(self) -> int:
        return self.value.size


@dataclass(frozen=True)
class SmoothMap:
    """A map R^d_in -> R^d_out with explicit Jacobian and Hessian.

    ``eval(x) -> (d_out,)``, ``jacobian(x) -> (d_out, d_in)``,
    ``hessian(x) -> (d_out, d_in, d_in)`` symmetric in its last two indices.
    ``d1_scalar``/``eval_scalar`` are optional vectorized forms for 1 -> 1
    maps (arrays in, arrays out); bulk consumers use them when present.
    """

    d_in: int
    d_out: int
    eval: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    name: str = ""
    eval_scalar: Callable | None = field(default=None, repr=False)
    d1_scalar: Callable | None = field(default=None, repr=False)

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.eval(np.asarray(x, dtype=float)), dtype=float).reshape(self.d_out)


def identity(d: int) -> SmoothMap:
    return affine(np.eye(d), np.zeros(d), name=f"identity({d})")


def affine(matrix, offset=None, name: str = "") -> SmoothMap:
    """x -> A x + b."""
    a = np.atleast_2d(np.asarray(matrix, dtype=float))
    d_out, d_in = a.shape
    b = np.zeros(d_out) if offset is None else _as_vector(offset, "offset")
    if b.size != d_out:
        raise ValueError("offset dimension mismatch")
    hess = np.zeros((d_out, d_in, d_in))
    scalar_forms = {}
    if d_in == 1 and d_out == 1:
        aa, bb = float(a[0, 0]), float(b[0])
        scalar_forms = {
            "eval_scalar": lambda t: aa * t + bb,
            "d1_scalar": lambda t: np.full_like(np.asarray(t, dtype=float), aa),
        }
    return SmoothMap(
        d_in,
        d_out,
        eval=lambda x: a @ x + b,
        jacobian=lambda x: a,
        hessian=lambda x: hess,
        name=name or "affine",
        **scalar_forms,
    )


def rotation(theta: float) -> SmoothMap:
    """Rotation of the plane by ``theta`` radians."""
    c, s = np.cos(theta), np.sin(theta)
    return affine(np.array([[c, -s], [s, c]]), name=f"rotation({theta})")


def from_scalar(f, d1, d2, name: str = "") -> SmoothMap:
    """1 -> 1 map from vectorized scalar callables (value, f', f'')."""
    return SmoothMap(
        1,
        1,
        eval=lambda x: np.asarray([f(x[0])], dtype=float),
        jacobian=lambda x: np.asarray([[d1(x[0])]], dtype=float),
        hessian=lambda x: np.asarray([[[d2(x[0])]]], dtype=float),
        name=name or "scalar",
        eval_scalar=f,
        d1_scalar=d1,
    )


def quadratic_map(const, linear, quad, name: str = "") -> SmoothMap:
    """x -> const + linear x + 1/2 [x^T quad[k] x]_k with exact derivatives."""
    c = _as_vector(const, "const")
    lin = np.atleast_2d(np.asarray(linear, dtype=float))
    q = np.asarray(quad, dtype=float)
    d_out, d_in = lin.shape
    if q.shape != (d_out, d_in, d_in):
        raise ValueError("quadratic coefficient shape mismatch")
    q = 0.5 * (q + np.swapaxes(q, 1, 2))
    return SmoothMap(
        d_in,
        d_out,
        eval=lambda x: c + lin @ x + 0.5 * np.einsum("kij,i,j->k", q, x, x),
        jacobian=lambda x: lin + np.einsum("kij,j->ki", q, x),
        hessian=lambda x: q,
        name=name or "quadratic",
    )


def pairwise_product() -> SmoothMap:
    """(x, y) -> x y."""
    return quadratic_map([0.0], np.zeros((1, 2)), np.array([[[0.0, 1.0], [1.0, 0.0]]]), name="xy")


def projection(d: int, i: int) -> SmoothMap:
    if not 0 <= i < d:
        raise IndexError(f"coordinate {i} out of range for dimension {d}")
    row = np.zeros((1, d))
    row[0, i] = 1.0
    return affine(row, name=f"coord({i})")


def coordinate_square(d: int, i: int) -> SmoothMap:
    """x -> x_i ** 2."""
    if not 0 <= i < d:
        raise IndexError(f"coordinate {i} out of range for dimension {d}")
    q = np.zeros((1, d, d))
    q[0, i, i] = 2.0
    return quadratic_map([0.0], np.zeros((1, d)), q, name=f"coord({i})**2")


def compose(outer: SmoothMap, inner: SmoothMap) -> SmoothMap:
    """outer after inner, with chain-rule Jacobian and Hessian."""
    if inner.d_out != outer.d_in:
        raise ValueError(
            f"cannot compose: inner output dim {inner.d_out} != outer input dim {outer.d_in}"
        )

    def jac(x):
        return outer.jacobian(inner(x)) @ inner.jacobian(x)

    def hess(x):
        y = inner(x)
        ji = inner.jacobian(x)
        jo = outer.jacobian(y)
        hi = inner.hessian(x)
        ho = outer.hessian(y)
        return np.einsum("kab,ai,bj->kij", ho, ji, ji) + np.einsum("ka,aij->kij", jo, hi)

    return SmoothMap(
        inner.d_in,
        outer.d_out,
        eval=lambda x: outer(inner(x)),
        jacobian=jac,
        hessian=hess,
        name=f"{outer.name or 'g'}∘{inner.name or 'f'}",
    )


def contract_hessian(hessian: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """contract(H, C)[k] = sum_ij H[k, i, j] C[i, j]; used everywhere."""
    return np.einsum("kij,ij->k", hessian, cov)


def _derivatives_at(m: SmoothMap, x: np.ndarray):
    j = np.asarray(m.jacobian(x), dtype=float).reshape(m.d_out, m.d_in)
    h = np.asarray(m.hessian(x), dtype=float).reshape(m.d_out, m.d_in, m.d_in)
    if not (np.all(np.isfinite(j)) and np.all(np.isfinite(h))):
        raise ValueError(f"non-finite derivatives of {m.name or 'map'} at {x}")
    asym = np.max(np.abs(h - np.swapaxes(h, 1, 2))) if h.size else 0.0
    if asym > PSD_TOL * (1.0 + np.max(np.abs(h))):
        raise ValueError(f"hessian of {m.name or 'map'} is not symmetric at {x}")
    return j, h


def propagate(m: SmoothMap, x: ErroneousValue) -> ErroneousValue:
    """Transport an error triple through a smooth map.

    Returns the triple (F(v), J b + H:C / 2, J C J^T) evaluated at
    ``v = x.value``.  Raises on dimension mismatch, non-finite derivative
    values, or an input covariance violating the PSD tolerance.
    """
    if m.d_in != x.dim:
        raise ValueError(f"map expects dimension {m.d_in}, value has {x.dim}")
    value = m(x.value)
    if not np.all(np.isfinite(value)):
        raise ValueError(f"map {m.name or ''} produced non-finite values")
    j, h = _derivatives_at(m, x.value)
    bias = j @ x.bias + 0.5 * contract_hessian(h, x.covariance)
    cov = j @ x.covariance @ j.T
    return ErroneousValue(value, bias, cov)


def gauss_covariance(map_f: SmoothMap, map_g: SmoothMap, x: ErroneousValue) -> float:
    """Quadratic error covariance grad F . C . grad G of two scalar maps."""
    for m in (map_f, map_g):
        if m.d_out != 1:
            raise ValueError("gauss_covariance needs scalar-valued maps")
        if m.d_in != x.dim:
            raise ValueError(f"map expects dimension {m.d_in}, value has {x.dim}")
    gf = np.asarray(map_f.jacobian(x.value), dtype=float).reshape(x.dim)
    gg = np.asarray(map_g.jacobian(x.value), dtype=float).reshape(x.dim)
    return float(gf @ x.covariance @ gg)


def naive_propagate(m: SmoothMap, x: NaiveErrorValue) -> NaiveErrorValue:
    """Textbook absolute-error bound: delta' = |J| delta."""
    if m.d_in != x.dim:
        raise ValueError(f"map expects dimension {m.d_in}, value has {x.dim}")
    j, _ = _derivatives_at(m, x.value)
    return NaiveErrorValue(m(x.value), np.abs(j) @ x.delta)


def square_identity_residual(x: ErroneousValue, coord: int) -> float:
    """Residual of the squared-field identity Gamma[F] = A[F^2] - 2 F A[F]
    for the coordinate map F = x_coord, computed by propagating the
    coordinate-squaring map.  Zero to machine precision by construction.
    """
    if not 0 <= coord < x.dim:
        raise IndexError(f"coordinate {coord} out of range for dimension {x.dim}")
    f_val = x.value[coord]
    a_f = propagate(projection(x.dim, coord), x).bias[0]
    a_f2 = propagate(coordinate_square(x.dim, coord), x).bias[0]
    gamma_f = x.covariance[coord, coord]
    return abs(gamma_f - (a_f2 - 2.0 * f_val * a_f))


def validate_derivatives(m: SmoothMap, points, rtol: float = FD_RTOL) -> float:
    """Check Jacobian and Hessian against central finite differences of eval.

    Step per coordinate is eps**(1/3) * (1 + |x_i|) (truncation/rounding
    balance).  Returns the worst relative defect; raises if it exceeds
    ``rtol``.
    """
    worst = 0.0
    for p in np.atleast_2d(np.asarray(points, dtype=float)):
        x = p.reshape(m.d_in)
        j, h = _derivatives_at(m, x)
        steps = np.finfo(float).eps ** (1.0 / 3.0) * (1.0 + np.abs(x))
        jac_fd = np.empty_like(j)
        for i in range(m.d_in):
            e = np.zeros(m.d_in)
            e[i] = steps[i]
            jac_fd[:, i] = (m(x + e) - m(x - e)) / (2.0 * steps[i])
        scale = 1.0 + np.max(np.abs(j))
        worst = max(worst, float(np.max(np.abs(jac_fd - j)) / scale))
        hess_fd = np.empty_like(h)
        for i in range(m.d_in):
            ei = np.zeros(m.d_in)
            ei[i] = steps[i]
            for k in range(m.d_in):
                ek = np.zeros(m.d_in)
                ek[k] = steps[k]
                hess_fd[:, i, k] = (
                    m(x + ei + ek) - m(x + ei - ek) - m(x - ei + ek) + m(x - ei - ek)
                ) / (4.0 * steps[i] * steps[k])
        hscale = 1.0 + np.max(np.abs(h))
        worst = max(worst, float(np.max(np.abs(hess_fd - h)) / hscale))
    if worst > rtol:
        raise ValueError(
            f"derivatives of {m.name or 'map'} disagree with finite differences "
            f"(relative defect {worst:.3e} > {rtol:.1e})"
        )
    return worst
