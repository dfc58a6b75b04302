"""Fisher information of parametric observation models and the induced
error-structure coefficient: the inverse information matrix is taken as the
squared-field coefficient Gamma[I](x) of the measurement error at x.

The information matrix is always computed from the score outer product
J(x) = E_x[score score^T] (never the Hessian form), by one of three methods:
``analytic`` closed forms where a model provides them, ``quadrature`` over
the observation law with analytic or finite-difference scores, and
``monte_carlo`` with seeded sampling.  The identification is parametrization
invariant: transporting Gamma[I] through a smooth reparametrization by the
chain rule matches the inverse information of the reparametrized model,
which ``reparametrize_check`` verifies without circular use of the chain
rule (the direct side differentiates the transformed likelihood itself).

The a-priori law of the measured quantity plays no computational role here;
models carry only its description.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _stats
from .error_algebra import ErroneousValue, SmoothMap, from_scalar

__all__ = [
    "CramerRaoResult",
    "FisherResult",
    "GammaField",
    "ParameterMap",
    "ParametricModel",
    "affine_parameter_map",
    "bernoulli_model",
    "cramer_rao_check",
    "exponential_model",
    "fisher_info",
    "identify_structure",
    "normal_mean_model",
    "odds_map",
    "reparametrize_check",
    "score_identity",
]

MIN_MC_SAMPLES = 10_000
CONDITION_LIMIT = 1e12
SCORE_STEP = 1e-5  # finite-difference step factor for scores, h = 1e-5 (1 + |x|)


@dataclass(frozen=True)
class ParametricModel:
    """A dominated family of observation laws Q_x, x in an open domain.

    ``sampler(x, rng, size)`` draws observations; ``log_likelihood(x, obs)``
    is vectorized over observations.  ``score`` may be omitted, in which case
    a central finite difference of the log-likelihood in x is used.
    ``quadrature_rule(x) -> (nodes, weights)`` integrates observation-space
    expectations exactly enough for quadrature-based information.
    """

    name: str
    param_dim: int
    domain: str
    contains: Callable[[np.ndarray], bool]
    sampler: Callable[[np.ndarray, np.random.Generator, int], np.ndarray]
    log_likelihood: Callable[[np.ndarray, np.ndarray], np.ndarray]
    score: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    analytic_fisher: Callable[[np.ndarray], np.ndarray] | None = None
    quadrature_rule: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None
    prior_note: str = ""  # description of the a-priori law; metadata only

    def check_param(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.param_dim,):
            raise ValueError(f"parameter must have dimension {self.param_dim}")
        if not self.contains(x):
            raise ValueError(f"parameter {x} outside the domain {self.domain}")
        return x

    def score_at(self, x: np.ndarray, obs: np.ndarray) -> np.ndarray:
        """Score vectors, shape (len(obs), param_dim)."""
        obs = np.asarray(obs, dtype=float)
        if self.score is not None:
            out = np.asarray(self.score(x, obs), dtype=float)
            return out.reshape(obs.size, self.param_dim)
        cols = []
        for i in range(self.param_dim):
            h = SCORE_STEP * (1.0 + abs(float(x[i])))
            e = np.zeros(self.param_dim)
            e[i] = h
            cols.append(
                (np.asarray(self.log_likelihood(x + e, obs), dtype=float)
                 - np.asarray(self.log_likelihood(x - e, obs), dtype=float)) / (2.0 * h)
            )
        return np.stack(cols, axis=1)


def bernoulli_model() -> ParametricModel:
    return ParametricModel(
        name="bernoulli",
        param_dim=1,
        domain="p in (0, 1)",
        contains=lambda x: 0.0 < x[0] < 1.0,
        sampler=lambda x, rng, size: (rng.random(size) < x[0]).astype(np.float64),
        log_likelihood=lambda x, y: y * math.log(x[0]) + (1.0 - y) * math.log1p(-x[0]),
        score=lambda x, y: (y / x[0] - (1.0 - y) / (1.0 - x[0]))[:, None],
        analytic_fisher=lambda x: np.array([[1.0 / (x[0] * (1.0 - x[0]))]]),
        quadrature_rule=lambda x: (np.array([0.0, 1.0]), np.array([1.0 - x[0], x[0]])),
    )


def normal_mean_model(sigma: float = 1.0) -> ParametricModel:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    s2 = sigma * sigma
    nodes, weights = np.polynomial.hermite.hermgauss(64)

    return ParametricModel(
        name=f"normal_mean(sigma={sigma:g})",
        param_dim=1,
        domain="mean in R",
        contains=lambda x: bool(np.isfinite(x[0])),
        sampler=lambda x, rng, size: x[0] + sigma * rng.standard_normal(size),
        log_likelihood=lambda x, y: -0.5 * (y - x[0]) ** 2 / s2 - math.log(sigma * math.sqrt(2 * math.pi)),
        score=lambda x, y: ((y - x[0]) / s2)[:, None],
        analytic_fisher=lambda x: np.array([[1.0 / s2]]),
        quadrature_rule=lambda x: (x[0] + math.sqrt(2.0) * sigma * nodes, weights / math.sqrt(math.pi)),
    )


def exponential_model() -> ParametricModel:
    nodes, weights = np.polynomial.laguerre.laggauss(64)

    return ParametricModel(
        name="exponential_rate",
        param_dim=1,
        domain="rate in (0, inf)",
        contains=lambda x: x[0] > 0.0,
        sampler=lambda x, rng, size: rng.exponential(1.0 / x[0], size),
        log_likelihood=lambda x, y: math.log(x[0]) - x[0] * y,
        score=lambda x, y: (1.0 / x[0] - y)[:, None],
        analytic_fisher=lambda x: np.array([[1.0 / (x[0] * x[0])]]),
        quadrature_rule=lambda x: (nodes / x[0], weights),
    )


@dataclass(frozen=True)
class FisherResult:
    x: np.ndarray
    J: np.ndarray
    gamma: np.ndarray | None  # inverse information; None when singular
    method: str
    stderr: np.ndarray | None  # entrywise, Monte-Carlo method only
    singular: bool = False


def _invert_information(j: np.ndarray):
    vals, vecs = np.linalg.eigh(j)
    if vals.min() <= 0 or vals.max() / vals.min() > CONDITION_LIMIT:
        return None, True
    inv = (vecs / vals) @ vecs.T
    return inv, False


def fisher_info(
    m: ParametricModel,
    x,
    method: str = "analytic",
    N: int = 100_000,
    seed: int | None = None,
) -> FisherResult:
    """Information matrix J(x) = E_x[score score^T] and its inverse.

    A singular (or worse than 1e12-conditioned) J is reported with
    ``gamma=None`` rather than raising.
    """
    x = m.check_param(x)
    stderr = None
    if method == "analytic":
        if m.analytic_fisher is None:
            raise ValueError(f"model {m.name!r} has no analytic information")
        j = np.asarray(m.analytic_fisher(x), dtype=float).reshape(m.param_dim, m.param_dim)
    elif method == "quadrature":
        if m.quadrature_rule is None:
            raise ValueError(f"model {m.name!r} has no quadrature rule")
        nodes, weights = m.quadrature_rule(x)
        scores = m.score_at(x, np.asarray(nodes, dtype=float))
        j = (scores * np.asarray(weights, dtype=float)[:, None]).T @ scores
    elif method == "monte_carlo":
        if N < MIN_MC_SAMPLES:
            raise ValueError(f"need N >= {MIN_MC_SAMPLES} for Monte-Carlo information")
        if seed is None:
            raise ValueError("Monte-Carlo information requires an explicit seed")

        def blockfn(rng, size, _):
            obs = np.asarray(m.sampler(x, rng, size), dtype=float)
            sc = m.score_at(x, obs)
            outer = np.einsum("ni,nj->nij", sc, sc)
            return outer.sum(axis=0), (outer * outer).sum(axis=0)

        s1, s2 = _stats.map_blocks(blockfn, N, seed)
        j = s1 / N
        stderr = np.sqrt(np.maximum(s2 / N - j * j, 0.0) / N)
    else:
        raise ValueError("method must be analytic, quadrature, or monte_carlo")
    j = 0.5 * (j + j.T)
    gamma, singular = _invert_information(j)
    return FisherResult(x=x, J=j, gamma=gamma, method=method, stderr=stderr, singular=singular)


def score_identity(m: ParametricModel, x, N: int, seed: int):
    """Monte-Carlo mean of the score (zero in expectation) with stderr."""
    x = m.check_param(x)

    def blockfn(rng, size, _):
        sc = m.score_at(x, np.asarray(m.sampler(x, rng, size), dtype=float))
        return sc.sum(axis=0), (sc * sc).sum(axis=0)

    s1, s2 = _stats.map_blocks(blockfn, N, seed)
    return _stats.mean_stderr(s1, s2, N)


# ---------------------------------------------------------------------------
# Reparametrization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParameterMap:
    """An invertible C^1 reparametrization y = forward(x)."""

    forward: SmoothMap
    inverse: Callable[[np.ndarray], np.ndarray]
    name: str = ""

    def push(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def pull(self, y) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.inverse(np.atleast_1d(np.asarray(y, dtype=float))), dtype=float))


def odds_map() -> ParameterMap:
    fwd = from_scalar(
        lambda p: p / (1.0 - p),
        lambda p: 1.0 / (1.0 - p) ** 2,
        lambda p: 2.0 / (1.0 - p) ** 3,
        name="odds",
    )
    return ParameterMap(forward=fwd, inverse=lambda t: t / (1.0 + t), name="odds")


def affine_parameter_map(a: float, b: float) -> ParameterMap:
    if a == 0:
        raise ValueError("affine map must be invertible")
    fwd = from_scalar(lambda x: a * x + b, lambda x: np.full_like(np.asarray(x, dtype=float), a),
                      lambda x: np.zeros_like(np.asarray(x, dtype=float)), name=f"{a:g}x+{b:g}")
    return ParameterMap(forward=fwd, inverse=lambda y: (y - b) / a, name=f"affine({a:g},{b:g})")


def reparametrized_model(m: ParametricModel, pmap: ParameterMap) -> ParametricModel:
    """The same observation family indexed by y = forward(x).

    The transformed model differentiates its own log-likelihood in y by
    finite differences, so its information is computed honestly rather than
    through the chain rule.
    """

    def contains(y):
        try:
            x = pmap.pull(y)
        except (ValueError, ZeroDivisionError, FloatingPointError):
            return False
        return bool(np.all(np.isfinite(x))) and m.contains(x)

    return ParametricModel(
        name=f"{m.name}|{pmap.name}",
        param_dim=m.param_dim,
        domain=f"image of ({m.domain}) under {pmap.name}",
        contains=contains,
        sampler=lambda y, rng, size: m.sampler(pmap.pull(y), rng, size),
        log_likelihood=lambda y, obs: m.log_likelihood(pmap.pull(y), obs),
        score=None,
        analytic_fisher=None,
        quadrature_rule=(None if m.quadrature_rule is None else (lambda y: m.quadrature_rule(pmap.pull(y)))),
    )


@dataclass(frozen=True)
class ReparamCheck:
    image_gamma: np.ndarray
    direct_gamma: np.ndarray
    defect: float           # relative max difference of the two coefficients
    stderr: float | None    # relative, Monte-Carlo method only


def reparametrize_check(
    m: ParametricModel,
    pmap: ParameterMap,
    x,
    method: str = "analytic",
    N: int = 100_000,
    seed: int | None = None,
) -> ReparamCheck:
    """Compare the chain-rule image J_f Gamma[I](x) J_f^T against the inverse
    information of the reparametrized model at y = f(x).

    The direct side never sees the chain rule: analytic/quadrature requests
    integrate the transformed model's finite-difference scores by quadrature;
    Monte-Carlo requests sample it.  Relative defect <= 1e-6 for the built-in
    analytic models, <= 3 stderr for Monte Carlo.
    """
    x = m.check_param(x)
    jac = np.asarray(pmap.forward.jacobian(x), dtype=float).reshape(m.param_dim, m.param_dim)
    if abs(float(np.linalg.det(jac))) < 1e-300:
        raise ValueError("reparametrization Jacobian is singular at x")
    base = fisher_info(m, x, method=method, N=N, seed=seed)
    if base.gamma is None:
        raise ValueError("base information is singular; no coefficient to transport")
    image_gamma = jac @ base.gamma @ jac.T

    wrapped = reparametrized_model(m, pmap)
    y = pmap.push(x)
    direct_method = "quadrature" if method in ("analytic", "quadrature") else "monte_carlo"
    direct = fisher_info(wrapped, y, method=direct_method, N=N,
                         seed=None if seed is None else seed + 1)
    if direct.gamma is None:
        raise ValueError("transformed information is singular")
    scale = max(float(np.max(np.abs(image_gamma))), 1e-300)
    defect = float(np.max(np.abs(image_gamma - direct.gamma))) / scale
    stderr = None
    if direct_method == "monte_carlo":
        se_img = jac @ _gamma_stderr(base) @ jac.T
        se_tot = np.sqrt(se_img**2 + _gamma_stderr(direct) ** 2)
        stderr = float(np.max(se_tot)) / scale
    return ReparamCheck(image_gamma=image_gamma, direct_gamma=direct.gamma,
                        defect=defect, stderr=stderr)


def _gamma_stderr(res: FisherResult) -> np.ndarray:
    """First-order stderr of J^{-1}: |J^{-1}| se(J) |J^{-1}| entrywise."""
    if res.stderr is None or res.gamma is None:
        return np.zeros_like(res.J)
    g = np.abs(res.gamma)
    return g @ res.stderr @ g


# ---------------------------------------------------------------------------
# Cramer-Rao
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CramerRaoResult:
    variance: float
    bound: float
    slack: float
    stderr: float
    variance_se: float
    grad: np.ndarray
    grad_se: np.ndarray

    @property
    def passed(self) -> bool:
        return self.slack >= -3.0 * self.stderr


def cramer_rao_check(
    m: ParametricModel,
    x,
    estimator: Callable[[np.ndarray], np.ndarray],
    k: int,
    N: int,
    seed: int,
    grad_step: float = 1e-2,
) -> CramerRaoResult:
    """Monte-Carlo variance of a statistic of k i.i.d. observations against
    the information bound grad E_x[T]^T (k J(x))^{-1} grad E_x[T].

    ``estimator`` maps an (N, k) observation matrix to N statistic values.
    The mean gradient is taken by central finite differences in x with
    common random numbers (same substream at x +- h), which collapses the
    gradient noise for translation-equivariant statistics.
    """
    x = m.check_param(x)
    if k < 1:
        raise ValueError("need at least one observation per replicate")

    def draw(param: np.ndarray):
        def blockfn(rng, size, _):
            obs = np.asarray(m.sampler(param, rng, size * k), dtype=float).reshape(size, k)
            t = np.asarray(estimator(obs), dtype=float).reshape(size)
            if not np.all(np.isfinite(t)):
                raise ValueError("estimator produced non-finite values")
            t2 = t * t
            return t.sum(), t2.sum(), (t2 * t2).sum()

        return _stats.map_blocks(blockfn, N, seed)  # same seed: common random numbers

    s1, s2, s4 = draw(x)
    mean_t = s1 / N
    m2 = s2 / N
    variance = m2 - mean_t * mean_t
    m4c = s4 / N - m2 * m2
    variance_se = math.sqrt(max(m4c, 0.0) / N)

    grad = np.zeros(m.param_dim)
    grad_se = np.zeros(m.param_dim)
    for i in range(m.param_dim):
        h = grad_step * (1.0 + abs(float(x[i])))
        e = np.zeros(m.param_dim)
        e[i] = h
        up1, up2, _ = draw(x + e)
        dn1, dn2, _ = draw(x - e)
        grad[i] = (up1 - dn1) / (2.0 * h * N)
        var_up = max(up2 / N - (up1 / N) ** 2, 0.0)
        var_dn = max(dn2 / N - (dn1 / N) ** 2, 0.0)
        # conservative: CRN makes the two draws positively correlated
        grad_se[i] = math.sqrt((var_up + var_dn) / N) / (2.0 * h)

    info = fisher_info(m, x, method="analytic" if m.analytic_fisher else "quadrature")
    if info.gamma is None:
        raise ValueError("information matrix is singular; no bound available")
    minv = info.gamma / k
    bound = float(grad @ minv @ grad)
    bound_se = 2.0 * math.sqrt(float(np.sum((minv @ grad) ** 2 * grad_se**2)))
    slack = variance - bound
    return CramerRaoResult(
        variance=float(variance),
        bound=bound,
        slack=float(slack),
        stderr=math.sqrt(variance_se**2 + bound_se**2),
        variance_se=variance_se,
        grad=grad,
        grad_se=grad_se,
    )


# ---------------------------------------------------------------------------
# Coefficient-field identification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GammaField:
    """Tabulated inverse-information field over a parameter grid.

    ``values[i]`` is the coefficient matrix at ``grid[i]`` (NaN where the
    information was singular, with ``flags[i]`` set).  Piecewise-linear
    interpolation between the nodes; clamped outside the covered range.
    """

    grid: np.ndarray
    values: np.ndarray
    flags: np.ndarray
    param_dim: int

    def gamma_at(self, x) -> np.ndarray:
        if self.param_dim != 1:
            raise NotImplementedError("interpolation implemented for one-dimensional parameters")
        good = ~self.flags
        if not np.any(good):
            raise ValueError("every grid cell was flagged singular")
        xs = self.grid[good].reshape(-1)
        vs = self.values[good][:, 0, 0]
        return np.array([[float(np.interp(float(np.asarray(x).reshape(-1)[0]), xs, vs))]])

    def to_erroneous_value(self, x, bias=None) -> ErroneousValue:
        """Package a grid evaluation as a propagation input."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        cov = self.gamma_at(x)
        return ErroneousValue(x, np.zeros_like(x) if bias is None else bias, cov)


def identify_structure(
    m: ParametricModel,
    grid,
    method: str = "analytic",
    N: int = 100_000,
    seed: int | None = None,
) -> GammaField:
    """Tabulate Gamma[I](x) = J(x)^{-1} over a grid of parameter points."""
    pts = np.asarray(grid, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[1] != m.param_dim:
        raise ValueError(f"grid points must have dimension {m.param_dim}")
    values = np.full((len(pts), m.param_dim, m.param_dim), np.nan)
    flags = np.zeros(len(pts), dtype=bool)
    for i, p in enumerate(pts):
        res = fisher_info(m, p, method=method, N=N, seed=None if seed is None else seed + i)
        if res.gamma is None:
            flags[i] = True
        else:
            values[i] = res.gamma
    return GammaField(grid=pts, values=values, flags=flags, param_dim=m.param_dim)
