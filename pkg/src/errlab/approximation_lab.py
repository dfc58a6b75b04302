"""Seeded simulators for coupled approximation pairs (Y, Y_n) and estimation
of the bias/variance moments of the approximation error.

Built-in schemes
----------------
binary_digits
    Y = sum_{k<=53} a_k 2^-k with fair random bits, Y_n its n-digit
    truncation.  The error mean is 2^-(n+1), the raw second moment 4^-n / 3,
    and the centered variance 4^-(n+1) / 3: the bias dominates the spread.
    Rate 2^(n+1) (bias scale) or 3 * 4^n (variance scale).
carried by an urn: polya_urn
    X_{k+1} = X_k + (1_{U <= X_k} - X_k) / (k + 3) from X_0 = 1/2; X_n is a
    bounded martingale converging to a uniform limit, proxied at a long
    horizon.  The conditional bias vanishes and E[v_n] = 1 / (6 (n + 2))
    exactly, so the variance dominates.  Rate n.
series_independent
    S = sum_k (X_k / k^2 + Z_k / k) with i.i.d. (X_k, Z_k), Z centered,
    approximated by the n-term partial sum.  Terms up to about 2n are drawn
    exactly; the remaining tail is replaced by a Gaussian with its exact mean
    and variance (trigamma sums), which leaves the first two error moments
    exact.  Rate n.
stochastic_integral
    Y = the fine-grid Riemann sum of integral B dB on [0, 1], Y_n the n-cell
    Riemann sum subsampled from the same path, so the pair is coupled.
    n E[(Y - Y_n)^2] = 1/2 - n / (2 m) exactly at fine resolution m.  Rate n.
wiener_perturbation
    An independent-noise blur of a Gaussian coordinate: Y ~ N(0, t1) and
    Y_n = Y + sqrt(t1 / n) * xi.  Index n plays the role of 1 / epsilon, so
    the rate is n.

Moment reports carry unconditional averages of the error moments with their
Monte-Carlo standard errors.  Conditional (state-dependent) versions are
provided for the urn scheme via ``polya_conditional_moments``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import polygamma

from . import _stats
from .structures import EstimationError, TestFunction

__all__ = [
    "ApproximationScheme",
    "Law",
    "MomentReport",
    "MomentRow",
    "PropagationRow",
    "RegimeClassification",
    "classify_regime",
    "constant",
    "estimate_moments",
    "make_scheme",
    "normal",
    "polya_conditional_moments",
    "propagate_through",
    "rademacher",
    "uniform",
]

BINARY_DIGITS = 53  # double-precision mantissa; truncation bias < 2**-53


# ---------------------------------------------------------------------------
# Increment laws for the series scheme
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Law:
    """A one-dimensional sampling law with known mean and variance."""

    kind: str
    mean: float
    var: float
    _sample: Callable = field(repr=False)

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        return self._sample(rng, shape)

    @property
    def deterministic(self) -> bool:
        return self.var == 0.0


def constant(c: float) -> Law:
    c = float(c)
    return Law("constant", c, 0.0, lambda rng, shape: np.full(shape, c))


def rademacher() -> Law:
    return Law(
        "rademacher",
        0.0,
        1.0,
        lambda rng, shape: rng.integers(0, 2, size=shape, dtype=np.int8).astype(np.float64) * 2.0 - 1.0,
    )


def normal(mu: float, sd: float) -> Law:
    mu, sd = float(mu), float(sd)
    return Law("normal", mu, sd * sd, lambda rng, shape: mu + sd * rng.standard_normal(shape))


def uniform(lo: float, hi: float) -> Law:
    lo, hi = float(lo), float(hi)
    return Law(
        "uniform",
        0.5 * (lo + hi),
        (hi - lo) ** 2 / 12.0,
        lambda rng, shape: rng.uniform(lo, hi, size=shape),
    )


# ---------------------------------------------------------------------------
# Schemes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ApproximationScheme:
    """A paired sampler for (Y, Y_n) together with its rate sequence.

    ``pair_sampler(n, size, rng)`` draws ``size`` coupled pairs;
    ``multi_sampler(ns, size, rng)``, when present, draws one coupled sample
    of Y together with Y_n for every requested n (same underlying paths).
    Use ``sample_pairs``/``sample_multi`` for the seeded public interface.
    """

    kind: str
    rate: Callable[[int], float]
    pair_sampler: Callable[[int, int, np.random.Generator], tuple]
    params: dict
    multi_sampler: Callable | None = None
    validate_n: Callable[[int], None] = lambda n: None
    block_hint: int = _stats.DEFAULT_BLOCK

    def sample_pairs(self, n: int, size: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
        self.validate_n(n)
        return self.pair_sampler(n, size, _stats.rng_from(seed))

    def sample_multi(self, ns: Sequence[int], size: int, seed: int):
        for n in ns:
            self.validate_n(n)
        if self.multi_sampler is not None:
            return self.multi_sampler(list(ns), size, _stats.rng_from(seed))
        rng = _stats.rng_from(seed)
        out = {}
        y = None
        for n in ns:
            y, out[n] = self.pair_sampler(n, size, rng)
        return y, out

    @property
    def key(self) -> tuple:
        return (self.kind, tuple(sorted((k, repr(v)) for k, v in self.params.items())))


def make_scheme(kind: str, **params) -> ApproximationScheme:
    """Build a named approximation scheme; see the module docstring for the
    catalogue and the per-kind parameters."""
    if kind == "binary_digits":
        rate_scale = params.pop("rate_scale", "bias")
        if rate_scale not in ("bias", "variance"):
            raise ValueError("rate_scale must be 'bias' or 'variance'")
        _reject_extra(params, kind)
        return _binary_scheme(rate_scale)
    if kind == "polya_urn":
        horizon = params.pop("horizon", None)
        if horizon is not None and int(horizon) < 1:
            raise ValueError("horizon must be positive")
        _reject_extra(params, kind)
        return _polya_scheme(None if horizon is None else int(horizon))
    if kind == "series_independent":
        x_law = params.pop("x_law", constant(0.0))
        z_law = params.pop("z_law", rademacher())
        tail_min = int(params.pop("tail_min", 256))
        _reject_extra(params, kind)
        if abs(z_law.mean) > 0:
            raise ValueError("the 1/k increments must be centered")
        return _series_scheme(x_law, z_law, tail_min)
    if kind == "stochastic_integral":
        fine_grid = int(params.pop("fine_grid", 1 << 14))
        integrand = params.pop("integrand", "brownian")
        _reject_extra(params, kind)
        if integrand != "brownian":
            raise ValueError("only the Brownian integrand is supported")
        if fine_grid < (1 << 12) or fine_grid & (fine_grid - 1):
            raise ValueError("fine_grid must be a power of two >= 4096")
        return _stochastic_integral_scheme(fine_grid)
    if kind == "wiener_perturbation":
        t1 = float(params.pop("t1", 1.0))
        _reject_extra(params, kind)
        if t1 <= 0:
            raise ValueError("t1 must be positive")
        return _wiener_scheme(t1)
    raise ValueError(f"unknown scheme kind {kind!r}")


def _reject_extra(params: dict, kind: str) -> None:
    if params:
        raise ValueError(f"unsupported parameters for scheme {kind!r}: {sorted(params)}")


def _binary_scheme(rate_scale: str) -> ApproximationScheme:
    kmax = BINARY_DIGITS

    def validate(n: int) -> None:
        if not 1 <= n <= kmax - 1:
            raise ValueError(f"binary digit index must be in [1, {kmax - 1}], got {n}")

    def multi(ns, size, rng):
        bits = rng.integers(0, 1 << kmax, size=size, dtype=np.uint64)
        y = bits.astype(np.float64) / float(1 << kmax)
        yns = {n: (bits >> np.uint64(kmax - n)).astype(np.float64) / float(1 << n) for n in ns}
        return y, yns

    def pair(n, size, rng):
        y, yns = multi([n], size, rng)
        return y, yns[n]

    rate = (lambda n: float(2 ** (n + 1))) if rate_scale == "bias" else (lambda n: 3.0 * 4.0**n)
    return ApproximationScheme(
        kind="binary_digits",
        rate=rate,
        pair_sampler=pair,
        multi_sampler=multi,
        params={"rate_scale": rate_scale},
        validate_n=validate,
    )


def polya_default_horizon(n: int) -> int:
    return max(10_000, 1000 * n)


def _polya_scheme(horizon: int | None) -> ApproximationScheme:
    def validate(n: int) -> None:
        if n < 1:
            raise ValueError("urn step count must be >= 1")
        if horizon is not None and horizon <= n:
            raise ValueError("horizon must exceed the approximation index")

    def multi(ns, size, rng):
        h = horizon if horizon is not None else polya_default_horizon(max(ns))
        want = set(ns)
        x = np.full(size, 0.5)
        checkpoints = {}
        for k in range(h):
            u = rng.random(size)
            x = x + ((u <= x).astype(np.float64) - x) / (k + 3.0)
            if (k + 1) in want:
                checkpoints[k + 1] = x.copy()
        return x, checkpoints

    def pair(n, size, rng):
        y, cps = multi([n], size, rng)
        return y, cps[n]

    return ApproximationScheme(
        kind="polya_urn",
        rate=lambda n: float(n),
        pair_sampler=pair,
        multi_sampler=multi,
        params={"horizon": horizon},
        validate_n=validate,
        block_hint=1 << 14,
    )


def _series_tail_moments(m: int, x_law: Law, z_law: Law) -> tuple[float, float]:
    """Exact mean and standard deviation of the series tail beyond index m."""
    s2 = float(polygamma(1, m + 1))          # sum_{k>m} k^-2
    s4 = float(polygamma(3, m + 1)) / 6.0    # sum_{k>m} k^-4
    mean = x_law.mean * s2
    var = z_law.var * s2 + x_law.var * s4
    return mean, math.sqrt(var)


def _series_scheme(x_law: Law, z_law: Law, tail_min: int) -> ApproximationScheme:
    def validate(n: int) -> None:
        if n < 1:
            raise ValueError("partial-sum length must be >= 1")

    def multi(ns, size, rng):
        top = max(ns)
        m = top + max(top, tail_min)
        ks = np.arange(1, m + 1, dtype=np.float64)
        terms = z_law.sample(rng, (size, m)) / ks
        if x_law.deterministic:
            if x_law.mean != 0.0:
                terms = terms + x_law.mean / ks**2
        else:
            terms = terms + x_law.sample(rng, (size, m)) / ks**2
        csum = np.cumsum(terms, axis=1)
        yns = {n: csum[:, n - 1].copy() for n in ns}
        rem_mean, rem_sd = _series_tail_moments(m, x_law, z_law)
        y = csum[:, m - 1] + rem_mean
        if rem_sd > 0:
            y = y + rem_sd * rng.standard_normal(size)
        return y, yns

    def pair(n, size, rng):
        y, yns = multi([n], size, rng)
        return y, yns[n]

    return ApproximationScheme(
        kind="series_independent",
        rate=lambda n: float(n),
        pair_sampler=pair,
        multi_sampler=multi,
        params={"x_law": (x_law.kind, x_law.mean, x_law.var),
                "z_law": (z_law.kind, z_law.mean, z_law.var),
                "tail_min": tail_min,
                "_x": x_law, "_z": z_law},
        validate_n=validate,
        block_hint=1 << 13,
    )


def _stochastic_integral_scheme(fine_grid: int) -> ApproximationScheme:
    m = fine_grid

    def validate(n: int) -> None:
        if n < 1 or m % n:
            raise ValueError(f"coarse resolution {n} must divide the fine grid {m}")

    # Left-endpoint Riemann sums of integral B dB telescope exactly:
    #     sum_j B_{t_j} (B_{t_{j+1}} - B_{t_j}) = (B_1^2 - sum_j dB_j^2) / 2,
    # so (Y, Y_n) depend on the fine path only through the cell increments at
    # the finest requested level and the within-cell sums of squared fine
    # increments.  Given a cell increment dB over r fine steps, that sum is
    # dB^2 / r + chi^2_{r-1} / m with the chi-square independent (Cochran),
    # which is sampled directly: exact in joint law, no fine grid in memory.
    def multi(ns, size, rng):
        n0 = max(ns)  # power of two, so every requested n divides it
        r = m // n0
        db0 = rng.standard_normal((size, n0)) * math.sqrt(1.0 / n0)
        fine_sq = db0 * db0
        if r > 1:
            fine_sq = fine_sq / r + rng.chisquare(r - 1, (size, n0)) / m
        b1_sq = db0.sum(axis=1) ** 2
        y = 0.5 * (b1_sq - fine_sq.sum(axis=1))
        yns = {}
        for n in ns:
            dbc = db0.reshape(size, n, n0 // n).sum(axis=2)
            yns[n] = 0.5 * (b1_sq - (dbc * dbc).sum(axis=1))
        return y, yns

    def pair(n, size, rng):
        y, yns = multi([n], size, rng)
        return y, yns[n]

    return ApproximationScheme(
        kind="stochastic_integral",
        rate=lambda n: float(n),
        pair_sampler=pair,
        multi_sampler=multi,
        params={"fine_grid": m},
        validate_n=validate,
        block_hint=1 << 13,
    )


def _wiener_scheme(t1: float) -> ApproximationScheme:
    def validate(n: int) -> None:
        if n < 1:
            raise ValueError("perturbation index must be >= 1")

    def multi(ns, size, rng):
        y = math.sqrt(t1) * rng.standard_normal(size)
        xi = rng.standard_normal(size)
        return y, {n: y + math.sqrt(t1 / n) * xi for n in ns}

    def pair(n, size, rng):
        y, yns = multi([n], size, rng)
        return y, yns[n]

    return ApproximationScheme(
        kind="wiener_perturbation",
        rate=lambda n: float(n),
        pair_sampler=pair,
        multi_sampler=multi,
        params={"t1": t1},
        validate_n=validate,
    )


# ---------------------------------------------------------------------------
# Moment estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentRow:
    n: int
    b_hat: float
    b_se: float
    d_hat: float
    d_se: float
    v_hat: float
    v_se: float
    m4_hat: float
    m4_se: float


@dataclass(frozen=True)
class MomentReport:
    scheme_kind: str
    rows: tuple[MomentRow, ...]
    N: int
    seed: int

    def row(self, n: int) -> MomentRow:
        for r in self.rows:
            if r.n == n:
                return r
        raise KeyError(f"no row for n={n}")


def estimate_moments(
    s: ApproximationScheme, ns: Sequence[int], N: int, seed: int, threads: int = 1
) -> MomentReport:
    """Monte-Carlo means and standard errors of the error moments at each n.

    The stated 3-sigma contracts assume N >= 1e4.  All requested n values are
    estimated from the same coupled sample paths when the scheme supports it.
    """
    ns = sorted(set(int(n) for n in ns))
    if not ns:
        raise ValueError("need at least one approximation index")
    for n in ns:
        s.validate_n(n)

    def blockfn(rng, size, _):
        y, yns = (
            s.multi_sampler(ns, size, rng)
            if s.multi_sampler is not None
            else _fallback_multi(s, ns, size, rng)
        )
        sums = []
        for n in ns:
            e = y - yns[n]
            if not np.all(np.isfinite(e)):
                raise EstimationError(f"non-finite sample for n={n}")
            e2 = e * e
            e4 = e2 * e2
            sums.append(
                np.array([e.sum(), e2.sum(), (e2 * e).sum(), e4.sum(), (e4 * e4).sum()])
            )
        return tuple(sums)

    totals = _stats.map_blocks(blockfn, N, seed, block=s.block_hint, threads=threads)
    rows = []
    for n, sums in zip(ns, totals):
        m1, m2, m3, m4, m8 = (float(v) / N for v in sums)
        b_se = math.sqrt(max(m2 - m1 * m1, 0.0) / N)
        d_se = math.sqrt(max(m4 - m2 * m2, 0.0) / N)
        m4_se = math.sqrt(max(m8 - m4 * m4, 0.0) / N)
        v_hat = m2 - m1 * m1
        v_se = _stats.variance_stderr(N, m1, m2, m3, m4)
        row = MomentRow(n, m1, b_se, m2, d_se, v_hat, v_se, m4, m4_se)
        if not all(map(math.isfinite, (m1, m2, m4, v_hat))):
            raise EstimationError(f"non-finite moment estimate at n={n}")
        if v_hat < -3.0 * v_se:
            raise EstimationError(f"negative variance estimate beyond noise at n={n}")
        rows.append(row)
    return MomentReport(scheme_kind=s.kind, rows=tuple(rows), N=N, seed=seed)


def _fallback_multi(s, ns, size, rng):
    out = {}
    y = None
    for n in ns:
        y, out[n] = s.pair_sampler(n, size, rng)
    return y, out


# ---------------------------------------------------------------------------
# Regime classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegimeClassification:
    case: str  # bias_dominates | comparable | variance_dominates
    slope_b: float
    slope_v: float
    slope_b_halfwidth: float
    slope_v_halfwidth: float
    diagnostics: dict


def classify_regime(report: MomentReport) -> RegimeClassification:
    """Decide which error moment dominates asymptotically.

    Decision rule, at the two largest n of the report (z = 1.96 throughout):

    1. If the bias is statistically zero (|b| <= 3 se) at both points while
       the variance is resolved, the variance dominates (martingale case).
    2. Otherwise, if the ratio v/|b| decreases significantly (upper 95%
       bound at the larger n below the lower bound at the smaller), the
       bias dominates; if |b|/v decreases significantly, the variance
       dominates; otherwise the two are comparable.

    Slopes of log|b| and log v are fitted against log n (against n for the
    geometric digit scheme) by weighted least squares for reporting.
    """
    rows = report.rows
    if len(rows) < 4:
        raise ValueError("regime classification needs at least 4 values of n")
    r1, r2 = rows[-2], rows[-1]

    b_resolved = [abs(r.b_hat) > 3.0 * r.b_se for r in (r1, r2)]
    v_resolved = [r.v_hat > 3.0 * r.v_se for r in (r1, r2)]
    if not any(b_resolved) and not any(v_resolved):
        raise EstimationError("all moments below the Monte-Carlo noise floor")

    geometric = report.scheme_kind == "binary_digits"
    xs = [r.n if geometric else math.log(r.n) for r in rows]
    slope_b, hw_b = _log_slope(xs, [abs(r.b_hat) for r in rows], [r.b_se for r in rows])
    slope_v, hw_v = _log_slope(xs, [max(r.v_hat, 0.0) for r in rows], [r.v_se for r in rows])

    diagnostics: dict = {}
    if not any(b_resolved) and all(v_resolved):
        case = "variance_dominates"
        diagnostics["reason"] = "bias statistically zero at the two largest n"
    else:
        rho = [_ratio_ci(r.v_hat, r.v_se, abs(r.b_hat), r.b_se) for r in (r1, r2)]
        lam = [_ratio_ci(abs(r.b_hat), r.b_se, r.v_hat, r.v_se) for r in (r1, r2)]
        diagnostics["v_over_b"] = [c[0] for c in rho]
        diagnostics["b_over_v"] = [c[0] for c in lam]
        if rho[1][2] < rho[0][1]:
            case = "bias_dominates"
            diagnostics["reason"] = "v/|b| decreasing at 95% confidence"
        elif lam[1][2] < lam[0][1]:
            case = "variance_dominates"
            diagnostics["reason"] = "|b|/v decreasing at 95% confidence"
        else:
            case = "comparable"
            diagnostics["reason"] = "neither moment ratio vanishes at 95% confidence"
    return RegimeClassification(case, slope_b, slope_v, hw_b, hw_v, diagnostics)


def _ratio_ci(num: float, num_se: float, den: float, den_se: float):
    """(ratio, lower95, upper95) by the delta method, with a den floor."""
    den = max(den, 1e-300)
    r = num / den
    se = _stats.ratio_stderr(num, num_se, den, den_se)
    return r, r - _stats.Z95 * se, r + _stats.Z95 * se


def _log_slope(xs, values, ses):
    floor = 1e-300
    ys = [math.log(max(v, floor)) for v in values]
    sig = [se / max(v, floor) for v, se in zip(values, ses)]
    _, slope, se_slope = _stats.wls_line(xs, ys, sig)
    return slope, _stats.Z95 * se_slope


# ---------------------------------------------------------------------------
# Propagation through a smooth observable
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PropagationRow:
    n: int
    b_hat: float
    d_hat: float
    big_b_hat: float
    big_b_se: float
    big_d_hat: float
    big_d_se: float
    big_b_pred: float
    big_d_pred: float

    @property
    def bias_ratio(self) -> float:
        return self.big_b_hat / self.big_b_pred

    @property
    def var_ratio(self) -> float:
        return self.big_d_hat / self.big_d_pred


def propagate_through(
    s: ApproximationScheme,
    f: TestFunction,
    ns: Sequence[int],
    N: int,
    seed: int,
    threads: int = 1,
) -> tuple[PropagationRow, ...]:
    """Compare the empirical bias/second moment of f(Y) - f(Y_n) against the
    second-order predictions assembled from the estimated error moments:

        B_pred = b_hat mean f'(Y_n) + d_hat mean f''(Y_n) / 2
        D_pred = d_hat mean f'(Y_n)^2

    The ratios tend to one as n grows (exactly one for the identity).  The
    predictions factor state-independent products of means, which is exact
    when the conditional moments do not depend on the state (digit scheme)
    or when f'' is constant; see ``polya_conditional_moments`` for the
    state-dependent refinement on the urn scheme.
    """
    ns = sorted(set(int(n) for n in ns))

    def blockfn(rng, size, _):
        y, yns = (
            s.multi_sampler(ns, size, rng)
            if s.multi_sampler is not None
            else _fallback_multi(s, ns, size, rng)
        )
        fy = np.asarray(f.eval(y), dtype=float)
        sums = []
        for n in ns:
            yn = yns[n]
            fyn = np.asarray(f.eval(yn), dtype=float)
            df = fy - fyn
            e = y - yn
            d1 = np.asarray(f.d1(yn), dtype=float)
            sums.append(
                np.array(
                    [
                        df.sum(), (df * df).sum(), (df * df * df * df).sum(),
                        e.sum(), (e * e).sum(),
                        d1.sum(), (d1 * d1).sum(),
                        np.asarray(f.d2(yn), dtype=float).sum(),
                    ]
                )
            )
        return tuple(sums)

    totals = _stats.map_blocks(blockfn, N, seed, block=s.block_hint, threads=threads)
    rows = []
    for n, sums in zip(ns, totals):
        s_df, s_df2, s_df4, s_e, s_e2, s_d1, s_d1sq, s_d2 = (float(v) / N for v in sums)
        big_b_se = math.sqrt(max(s_df2 - s_df * s_df, 0.0) / N)
        big_d_se = math.sqrt(max(s_df4 - s_df2 * s_df2, 0.0) / N)
        rows.append(
            PropagationRow(
                n=n,
                b_hat=s_e,
                d_hat=s_e2,
                big_b_hat=s_df,
                big_b_se=big_b_se,
                big_d_hat=s_df2,
                big_d_se=big_d_se,
                big_b_pred=s_e * s_d1 + 0.5 * s_e2 * s_d2,
                big_d_pred=s_e2 * s_d1sq,
            )
        )
    return tuple(rows)


def polya_conditional_moments(
    n: int, N: int, bins: int, seed: int, horizon: int | None = None
) -> dict:
    """State-conditional error moments for the urn scheme, by binning on X_n.

    Returns arrays ``x_mean``, ``b_hat``, ``d_hat``, ``v_hat``, ``count`` per
    equal-count bin.  The conditional variance is X_n (1 - X_n) / (n + 3)
    (beta-distributed limit given the urn composition), which the binned
    estimates recover.
    """
    scheme = make_scheme("polya_urn", horizon=horizon)
    y, yn = scheme.sample_pairs(n, N, seed)
    e = y - yn
    order = np.argsort(yn, kind="stable")
    edges = np.linspace(0, N, bins + 1).astype(int)
    out = {k: np.empty(bins) for k in ("x_mean", "b_hat", "d_hat", "v_hat")}
    out["count"] = np.empty(bins, dtype=int)
    for i, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        idx = order[lo:hi]
        out["count"][i] = idx.size
        out["x_mean"][i] = float(np.mean(yn[idx]))
        b = float(np.mean(e[idx]))
        d = float(np.mean(e[idx] ** 2))
        out["b_hat"][i] = b
        out["d_hat"][i] = d
        out["v_hat"][i] = d - b * b
    return out
