"""Empirical weak-form estimation of the four asymptotic bias operators of an
approximation scheme, against a finite basis of bounded C^2 test functions.

With pairs (Y, Y_n), rate alpha_n, and basis functions phi_i, chi_j, the four
rate-scaled matrices are

    theoretical  <Abar phi_i, chi_j>  ~  alpha_n E[(phi_i(Y_n) - phi_i(Y)) chi_j(Y)]
    practical    <Aund phi_i, chi_j>  ~  alpha_n E[(phi_i(Y) - phi_i(Y_n)) chi_j(Y_n)]
    symmetric    <Atil phi_i, chi_j>  ~  -alpha_n E[(phi_i(Y_n)-phi_i(Y)) (chi_j(Y_n)-chi_j(Y))] / 2
    singular     <Asng phi_i, chi_j>  =  (theoretical - practical) / 2
                                      ~  alpha_n E[(phi_i(Y_n)-phi_i(Y)) (chi_j(Y)+chi_j(Y_n)) / 2]

viewing the asymptotic error respectively from the limit model, from the
approximate model, from their average, and from their half-difference.  The
squared-field matrix pairs Gamma[phi_i] against chi_j through

    alpha_n E[(phi_i(Y_n) - phi_i(Y))^2 (chi_j(Y_n) + chi_j(Y)) / 2].

Statistical conventions
-----------------------
* Estimates computed with the same (scheme, basis, n, N, seed) replay the
  same sample blocks, so the algebraic identities between the four matrices
  hold to floating-point rounding (``half_sum_residual`` checks one).
* On shared samples the symmetric-matrix estimator is symmetric *by
  construction* (the defining statistic is a symmetric bilinear form of the
  basis), so a meaningful symmetry test must assemble the half-sum from
  independently seeded one-sided estimates: see ``symmetric_from_sides``.
* Null checks on derived statistics ("the symmetric part vanishes", "the
  product-rule residual vanishes") are measured against the *resolution*
  standard error — the quadrature combination of the stderr of the one-sided
  estimates they derive from.  The raw statistic's own stderr is degenerate
  for such checks: exact pathwise cancellations shrink it far below the
  finite-n drift of the estimand, which the limit statement says nothing
  about.  Both scales are reported.
* Every estimate carries a two-point self-consistency check at 2n, flagged
  when the drift between n and 2n exceeds 3 combined standard errors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _stats
from .approximation_lab import ApproximationScheme
from .error_algebra import SmoothMap
from .structures import EstimationError, TestFunction, bump

__all__ = [
    "AsymptoticCalculusRow",
    "FirstOrderResidual",
    "LocalityReport",
    "TestFunctionBasis",
    "VarianceComparison",
    "WeakOperatorEstimate",
    "WeakOperatorSet",
    "asymptotic_calculus_check",
    "basis_for_scheme",
    "default_bump_basis",
    "estimate_all_weak",
    "estimate_weak",
    "first_order_residual",
    "gamma_weak",
    "gram_matrix",
    "half_sum_residual",
    "locality_statistic",
    "pointwise_diagnostic",
    "symmetric_from_sides",
    "symmetry_defect",
    "variance_comparison",
]

KINDS = ("theoretical", "practical", "symmetric", "singular")
MIN_SAMPLES = 10_000


@dataclass(frozen=True)
class TestFunctionBasis:
    """Bounded C^2 test functions, closed under pointwise products."""

    functions: tuple[TestFunction, ...]

    def __post_init__(self):
        object.__setattr__(self, "functions", tuple(self.functions))
        if not self.functions:
            raise ValueError("basis must contain at least one function")
        for f in self.functions:
            if f.dim != 1:
                raise ValueError("basis functions must be one-dimensional")

    def __len__(self) -> int:
        return len(self.functions)

    def __getitem__(self, i: int) -> TestFunction:
        return self.functions[i]

    def product(self, i: int, j: int) -> TestFunction:
        """Pointwise product of members i and j (evaluated, not re-expanded)."""
        return self.functions[i].product(self.functions[j])


def default_bump_basis(low: float, high: float, size: int = 8, overlap: float = 1.5) -> TestFunctionBasis:
    """Equispaced quintic-smoothstep bumps covering [low, high].

    Neighbouring supports overlap (halfwidth = overlap * spacing) so products
    of distinct members are not identically zero.
    """
    if size < 1 or high <= low:
        raise ValueError("need size >= 1 and high > low")
    if size == 1:
        centers = [0.5 * (low + high)]
        half = 0.5 * (high - low)
    else:
        centers = np.linspace(low, high, size)
        half = overlap * (high - low) / (size - 1)
    return TestFunctionBasis(tuple(bump(c, half, name=f"b{k}") for k, c in enumerate(np.atleast_1d(centers))))


def basis_for_scheme(
    s: ApproximationScheme,
    n: int,
    size: int = 8,
    probe: int = 20_000,
    seed: int = 0,
    coverage: tuple[float, float] = (0.005, 0.995),
) -> TestFunctionBasis:
    """Bump basis scaled to the empirical range of Y (quantile coverage)."""
    y, _ = s.sample_pairs(n, probe, seed)
    lo, hi = np.quantile(y, coverage)
    if hi <= lo:
        raise EstimationError("degenerate empirical range for basis construction")
    return default_bump_basis(float(lo), float(hi), size=size)


@dataclass(frozen=True)
class WeakOperatorEstimate:
    """Rate-scaled weak matrix G[i][j] ~ <Op[phi_i], chi_j> with stderrs.

    ``resolution_stderr`` is the combined stderr of the one-sided estimates
    the operator derives from (equal to ``stderr`` for the one-sided kinds);
    null hypotheses about derived operators are tested against it.
    ``richardson_drift`` is |G(2n) - G(n)| when the doubled index is valid.
    """

    kind: str
    n: int
    alpha: float
    G: np.ndarray
    stderr: np.ndarray
    resolution_stderr: np.ndarray
    N: int
    seed: int
    basis: TestFunctionBasis
    scheme_key: tuple
    richardson_drift: np.ndarray | None = None
    richardson_flagged: bool = False

    @property
    def provenance(self) -> tuple:
        return (self.scheme_key, self.n, self.N, self.seed, id(self.basis))


def _eval_matrix(basis: TestFunctionBasis, y: np.ndarray) -> np.ndarray:
    rows = [np.asarray(f.eval(y), dtype=float) for f in basis.functions]
    mat = np.stack(rows, axis=0)
    if not np.all(np.isfinite(mat)):
        raise EstimationError("basis evaluation produced non-finite values")
    return mat


def _weak_sums(
    s: ApproximationScheme,
    basis: TestFunctionBasis,
    n: int,
    N: int,
    seed: int,
    threads: int = 1,
):
    """One sampling pass: raw sums for all four operators plus the squared
    field and the Gram matrix.  Everything downstream is arithmetic."""
    k = len(basis)

    def blockfn(rng, size, _):
        y, yn = s.pair_sampler(n, size, rng)
        phi_y = _eval_matrix(basis, y)
        phi_yn = _eval_matrix(basis, yn)
        dphi = phi_yn - phi_y
        cbar = 0.5 * (phi_y + phi_yn)
        dphi2 = dphi * dphi
        return (
            dphi @ phi_y.T,            # theoretical terms
            dphi2 @ (phi_y * phi_y).T,
            dphi @ phi_yn.T,           # practical terms carry a minus later
            dphi2 @ (phi_yn * phi_yn).T,
            dphi @ dphi.T,             # symmetric terms carry -alpha/2
            dphi2 @ dphi2.T,
            dphi2 @ (cbar * cbar).T,   # singular second moments
            dphi2 @ cbar.T,            # squared-field terms
            (dphi2 * dphi2) @ (cbar * cbar).T,
            phi_y @ phi_y.T,           # Gram
            (phi_y * phi_y) @ (phi_y * phi_y).T,
        )

    sums = _stats.map_blocks(blockfn, N, seed, block=s.block_hint, threads=threads)
    return {"k": k, "sums": sums}


def _finish(sum1, sum2, scale: float, N: int):
    g = scale * sum1 / N
    m2 = scale * scale * sum2 / N
    se = np.sqrt(np.maximum(m2 - g * g, 0.0) / N)
    return g, se


def _estimate_once(s, basis, kind, n, N, seed, threads):
    alpha = s.rate(n)
    raw = _weak_sums(s, basis, n, N, seed, threads)
    (t1, t2, p1, p2, s1, s2, sing2, g1, g2, gr1, gr2) = raw["sums"]
    g_theo, se_theo = _finish(t1, t2, alpha, N)
    g_prac_neg, se_prac = _finish(p1, p2, alpha, N)
    g_prac = -g_prac_neg
    resolution = 0.5 * np.sqrt(se_theo**2 + se_prac**2)
    if kind == "theoretical":
        return alpha, g_theo, se_theo, se_theo
    if kind == "practical":
        return alpha, g_prac, se_prac, se_prac
    if kind == "symmetric":
        g_symm, se_symm = _finish(s1, s2, -0.5 * alpha, N)
        return alpha, g_symm, np.abs(se_symm), resolution
    if kind == "singular":
        g_sing = 0.5 * (g_theo - g_prac)
        m2 = alpha * alpha * sing2 / N
        se_sing = np.sqrt(np.maximum(m2 - g_sing * g_sing, 0.0) / N)
        return alpha, g_sing, se_sing, resolution
    raise ValueError(f"unknown operator kind {kind!r}")


def estimate_weak(
    s: ApproximationScheme,
    basis: TestFunctionBasis,
    kind: str,
    n: int,
    N: int,
    seed: int,
    threads: int = 1,
    richardson: bool = True,
) -> WeakOperatorEstimate:
    """Estimate one of the four rate-scaled weak operator matrices.

    Estimates sharing (scheme, basis, n, N, seed) replay identical samples,
    so cross-operator identities hold to rounding.  Requires N >= 1e4.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    if N < MIN_SAMPLES:
        raise ValueError(f"need N >= {MIN_SAMPLES} for weak operator estimates")
    s.validate_n(n)
    alpha, g, se, resolution = _estimate_once(s, basis, kind, n, N, seed, threads)

    drift = None
    flagged = False
    if richardson:
        try:
            s.validate_n(2 * n)
        except ValueError:
            pass
        else:
            _, g2, se2, _ = _estimate_once(s, basis, kind, 2 * n, N, seed, threads)
            drift = np.abs(g2 - g)
            flagged = bool(np.any(drift > 3.0 * np.sqrt(se**2 + se2**2)))
    return WeakOperatorEstimate(
        kind=kind, n=n, alpha=alpha, G=g, stderr=se, resolution_stderr=resolution,
        N=N, seed=seed, basis=basis, scheme_key=s.key,
        richardson_drift=drift, richardson_flagged=flagged,
    )


@dataclass(frozen=True)
class WeakOperatorSet:
    """All four operator estimates plus the squared-field and Gram matrices,
    computed from a single shared sampling pass."""

    theoretical: WeakOperatorEstimate
    practical: WeakOperatorEstimate
    symmetric: WeakOperatorEstimate
    singular: WeakOperatorEstimate
    gamma: np.ndarray
    gamma_stderr: np.ndarray
    gram: np.ndarray

    def __getitem__(self, kind: str) -> WeakOperatorEstimate:
        if kind not in KINDS:
            raise KeyError(kind)
        return getattr(self, kind)


def estimate_all_weak(
    s: ApproximationScheme,
    basis: TestFunctionBasis,
    n: int,
    N: int,
    seed: int,
    threads: int = 1,
) -> WeakOperatorSet:
    """All four weak operators, the squared-field matrix, and the basis Gram
    matrix from one sampling pass (identical to four ``estimate_weak`` calls
    with the same arguments, at a quarter of the cost)."""
    if N < MIN_SAMPLES:
        raise ValueError(f"need N >= {MIN_SAMPLES} for weak operator estimates")
    s.validate_n(n)
    alpha = s.rate(n)
    raw = _weak_sums(s, basis, n, N, seed, threads)
    (t1, t2, p1, p2, s1, s2, sing2, g1, g2, gr1, gr2) = raw["sums"]
    g_theo, se_theo = _finish(t1, t2, alpha, N)
    g_prac_neg, se_prac = _finish(p1, p2, alpha, N)
    g_prac = -g_prac_neg
    resolution = 0.5 * np.sqrt(se_theo**2 + se_prac**2)
    g_symm, se_symm = _finish(s1, s2, -0.5 * alpha, N)
    g_sing = 0.5 * (g_theo - g_prac)
    se_sing = np.sqrt(np.maximum(alpha * alpha * sing2 / N - g_sing * g_sing, 0.0) / N)
    gamma_g, gamma_se = _finish(g1, g2, alpha, N)

    def wrap(kind, g, se, res):
        return WeakOperatorEstimate(
            kind=kind, n=n, alpha=alpha, G=g, stderr=se, resolution_stderr=res,
            N=N, seed=seed, basis=basis, scheme_key=s.key,
        )

    return WeakOperatorSet(
        theoretical=wrap("theoretical", g_theo, se_theo, se_theo),
        practical=wrap("practical", g_prac, se_prac, se_prac),
        symmetric=wrap("symmetric", g_symm, se_symm, resolution),
        singular=wrap("singular", g_sing, se_sing, resolution),
        gamma=gamma_g,
        gamma_stderr=gamma_se,
        gram=gr1 / N,
    )


def _check_shared(*ests: WeakOperatorEstimate) -> None:
    p0 = ests[0].provenance
    for e in ests[1:]:
        if e.provenance != p0:
            raise ValueError("estimates were not built from the same (scheme, basis, n, N, seed)")


def half_sum_residual(
    theo: WeakOperatorEstimate, prac: WeakOperatorEstimate, symm: WeakOperatorEstimate
) -> float:
    """Max entrywise |symmetric - (theoretical + practical)/2| on shared
    samples; an algebraic identity, so at most rounding noise."""
    if (theo.kind, prac.kind, symm.kind) != ("theoretical", "practical", "symmetric"):
        raise ValueError("pass (theoretical, practical, symmetric) estimates in that order")
    _check_shared(theo, prac, symm)
    return float(np.max(np.abs(symm.G - 0.5 * (theo.G + prac.G))))


def symmetric_from_sides(theo: WeakOperatorEstimate, prac: WeakOperatorEstimate) -> WeakOperatorEstimate:
    """Assemble the symmetric operator as (theoretical + practical)/2.

    With *independently seeded* sides this estimate carries genuine sampling
    asymmetry, which is what makes ``symmetry_defect`` a real test; the
    direct estimator on shared samples is symmetric identically.
    """
    if (theo.kind, prac.kind) != ("theoretical", "practical"):
        raise ValueError("pass a theoretical and a practical estimate")
    if theo.scheme_key != prac.scheme_key or theo.n != prac.n or id(theo.basis) != id(prac.basis):
        raise ValueError("sides must share scheme, basis and n")
    se = 0.5 * np.sqrt(theo.stderr**2 + prac.stderr**2)
    return WeakOperatorEstimate(
        kind="symmetric", n=theo.n, alpha=theo.alpha,
        G=0.5 * (theo.G + prac.G), stderr=se, resolution_stderr=se,
        N=theo.N, seed=theo.seed, basis=theo.basis, scheme_key=theo.scheme_key,
    )


@dataclass(frozen=True)
class SymmetryDefect:
    defect: float          # max |G - G^T| relative to the reference scale
    abs_defect: float
    tolerance: float       # 3 * combined stderr of the antisymmetric part
    scale: float

    @property
    def passed(self) -> bool:
        return self.abs_defect <= self.tolerance


def symmetry_defect(symm: WeakOperatorEstimate, gram: np.ndarray | None = None) -> SymmetryDefect:
    """Asymmetry of the symmetric-operator matrix.

    Returns max |G - G^T| relative to max |G| (with the Gram scale as a floor
    when the operator itself is near zero).  The tolerance combines the
    entrywise stderrs of the two orderings.  Note: an estimate built by the
    direct shared-sample formula is symmetric by construction; feed this an
    estimate from ``symmetric_from_sides`` with independent seeds for a
    statistically meaningful check.
    """
    if symm.kind != "symmetric":
        raise ValueError("symmetry_defect expects a symmetric-kind estimate")
    g = symm.G
    abs_defect = float(np.max(np.abs(g - g.T)))
    scale = float(np.max(np.abs(g)))
    if gram is not None:
        gram = np.asarray(gram, dtype=float)
        if gram.shape != g.shape:
            raise ValueError("Gram matrix dimensions do not match the estimate")
        scale = max(scale, 1e-3 * float(np.max(np.abs(gram))))
    se = symm.stderr
    tolerance = 3.0 * float(np.max(np.sqrt(se**2 + se.T**2)))
    return SymmetryDefect(
        defect=abs_defect / scale if scale > 0 else 0.0,
        abs_defect=abs_defect,
        tolerance=tolerance,
        scale=scale,
    )


def gram_matrix(
    s: ApproximationScheme, basis: TestFunctionBasis, n: int, N: int, seed: int, threads: int = 1
) -> np.ndarray:
    """E[phi_i(Y) phi_j(Y)] under the scheme's limit sample."""
    raw = _weak_sums(s, basis, n, N, seed, threads)
    return raw["sums"][9] / N


def gamma_weak(
    s: ApproximationScheme,
    basis: TestFunctionBasis,
    n: int,
    N: int,
    seed: int,
    threads: int = 1,
):
    """Squared-field weak matrix Ghat[i][j] ~ E_Y[Gamma[phi_i] chi_j] via

        alpha_n mean[(phi_i(Y_n) - phi_i(Y))^2 (chi_j(Y_n) + chi_j(Y)) / 2].

    Returns (G, stderr).  Requires N >= 1e4.
    """
    if N < MIN_SAMPLES:
        raise ValueError(f"need N >= {MIN_SAMPLES} for weak operator estimates")
    s.validate_n(n)
    raw = _weak_sums(s, basis, n, N, seed, threads)
    g, se = _finish(raw["sums"][7], raw["sums"][8], s.rate(n), N)
    return g, se


@dataclass(frozen=True)
class LocalityReport:
    ns: tuple[int, ...]
    statistic: np.ndarray       # aggregate (max over basis) per n
    stderr: np.ndarray
    per_function: np.ndarray    # (len(ns), len(basis))
    slope: float
    slope_halfwidth: float
    abscissa: str               # "log n" or "n"

    @property
    def decreasing(self) -> bool:
        return bool(np.all(np.diff(self.statistic) < 0))

    @property
    def negative_slope_95(self) -> bool:
        return self.slope + self.slope_halfwidth < 0


def locality_statistic(
    s: ApproximationScheme,
    basis: TestFunctionBasis,
    ns: Sequence[int],
    N: int,
    seed: int,
    threads: int = 1,
) -> LocalityReport:
    """Rate-scaled fourth moments alpha_n mean[(phi(Y_n) - phi(Y))^4].

    Vanishing of this statistic is the empirical surrogate for locality of
    the limiting form; the report carries the per-n values, the aggregate
    over the basis, and a fitted decay slope with 95% halfwidth.
    """
    ns = sorted(set(int(m) for m in ns))
    if len(ns) < 3:
        raise ValueError("locality trend needs at least 3 values of n")
    per, per_se = [], []
    seeds = np.random.SeedSequence(seed).spawn(len(ns))

    for n, ss in zip(ns, seeds):
        s.validate_n(n)

        def blockfn(rng, size, _, n=n):
            y, yn = s.pair_sampler(n, size, rng)
            dphi = _eval_matrix(basis, yn) - _eval_matrix(basis, y)
            d4 = dphi**4
            return d4.sum(axis=1), (d4 * d4).sum(axis=1)

        s1, s2 = _stats.map_blocks(blockfn, N, int(ss.generate_state(1)[0]), block=s.block_hint, threads=threads)
        alpha = s.rate(n)
        m, se = _finish(s1, s2, alpha, N)
        per.append(m)
        per_se.append(se)
    per = np.stack(per)
    per_se = np.stack(per_se)
    agg_idx = np.argmax(per, axis=1)
    agg = per[np.arange(len(ns)), agg_idx]
    agg_se = per_se[np.arange(len(ns)), agg_idx]
    if np.any(agg <= 0):
        raise EstimationError("locality statistic vanished; slope fit is degenerate")
    geometric = s.kind == "binary_digits"
    xs = [n if geometric else math.log(n) for n in ns]
    _, slope, se_slope = _stats.wls_line(xs, np.log(agg), agg_se / agg)
    return LocalityReport(
        ns=tuple(ns), statistic=agg, stderr=agg_se, per_function=per,
        slope=slope, slope_halfwidth=_stats.Z95 * se_slope,
        abscissa="n" if geometric else "log n",
    )


@dataclass(frozen=True)
class FirstOrderResidual:
    """Product-rule defect of the singular operator in weak form:
    <Asng[phi chi], psi> - <Asng[phi] chi, psi> - <phi Asng[chi], psi>,
    every pairing weighted by (psi(Y) + psi(Y_n)) / 2."""

    residual: float
    own_stderr: float
    resolution_stderr: float
    pairings: tuple[float, float, float]

    @property
    def passed(self) -> bool:
        return abs(self.residual) <= 3.0 * self.resolution_stderr


def first_order_residual(
    s: ApproximationScheme,
    basis: TestFunctionBasis,
    n: int,
    N: int,
    seed: int,
    i: int = 0,
    j: int = 1,
    k: int = 2,
    threads: int = 1,
) -> FirstOrderResidual:
    """First-order (product-rule) check for the singular bias operator.

    The null tolerance is the resolution stderr combining the three pairing
    estimates; for local schemes the residual sits inside it.
    """
    s.validate_n(n)
    phi, chi, psi = basis[i], basis[j], basis[k]
    phichi = basis.product(i, j)
    chipsi = basis.product(j, k)
    phipsi = basis.product(i, k)
    alpha = s.rate(n)

    def blockfn(rng, size, _):
        y, yn = s.pair_sampler(n, size, rng)
        out = []
        for u, w in ((phichi, psi), (phi, chipsi), (chi, phipsi)):
            du = np.asarray(u.eval(yn), dtype=float) - np.asarray(u.eval(y), dtype=float)
            wbar = 0.5 * (np.asarray(w.eval(y), dtype=float) + np.asarray(w.eval(yn), dtype=float))
            t = du * wbar
            out.extend([t.sum(), (t * t).sum()])
        combo = (
            (np.asarray(phichi.eval(yn), dtype=float) - np.asarray(phichi.eval(y), dtype=float))
            * 0.5 * (np.asarray(psi.eval(y), dtype=float) + np.asarray(psi.eval(yn), dtype=float))
        )
        for u, w in ((phi, chipsi), (chi, phipsi)):
            combo = combo - (
                (np.asarray(u.eval(yn), dtype=float) - np.asarray(u.eval(y), dtype=float))
                * 0.5 * (np.asarray(w.eval(y), dtype=float) + np.asarray(w.eval(yn), dtype=float))
            )
        out.extend([combo.sum(), (combo * combo).sum()])
        return tuple(out)

    sums = _stats.map_blocks(blockfn, N, seed, block=s.block_hint, threads=threads)
    pairings = []
    res_var = 0.0
    for idx in range(3):
        m, se = _finish(sums[2 * idx], sums[2 * idx + 1], alpha, N)
        pairings.append(float(m))
        res_var += float(se) ** 2
    residual, own_se = _finish(sums[6], sums[7], alpha, N)
    return FirstOrderResidual(
        residual=float(residual),
        own_stderr=float(own_se),
        resolution_stderr=math.sqrt(res_var),
        pairings=tuple(pairings),
    )


@dataclass(frozen=True)
class VarianceComparison:
    theoretical_var: float
    practical_var: float
    stderr: float            # stderr of the pathwise difference
    theoretical_se: float
    practical_se: float

    @property
    def coincide(self) -> bool:
        return abs(self.theoretical_var - self.practical_var) <= 3.0 * self.stderr


def variance_comparison(
    s: ApproximationScheme,
    basis: TestFunctionBasis,
    n: int,
    N: int,
    seed: int,
    i: int = 0,
    j: int = 0,
    k: int = 1,
    threads: int = 1,
) -> VarianceComparison:
    """Rate-scaled error variance weighted at the limit model versus at the
    approximate model:

        alpha_n mean[(phi(Y_n)-phi(Y)) (chi(Y_n)-chi(Y)) psi(Y or Y_n)].

    The two coincide (within noise) exactly when the singular operator obeys
    the product rule; both then estimate E_Y[Gamma[phi, chi] psi].
    """
    s.validate_n(n)
    phi, chi, psi = basis[i], basis[j], basis[k]
    alpha = s.rate(n)

    def blockfn(rng, size, _):
        y, yn = s.pair_sampler(n, size, rng)
        dphi = np.asarray(phi.eval(yn), dtype=float) - np.asarray(phi.eval(y), dtype=float)
        dchi = np.asarray(chi.eval(yn), dtype=float) - np.asarray(chi.eval(y), dtype=float)
        core = dphi * dchi
        t_theo = core * np.asarray(psi.eval(y), dtype=float)
        t_prac = core * np.asarray(psi.eval(yn), dtype=float)
        diff = t_theo - t_prac
        return (
            t_theo.sum(), (t_theo * t_theo).sum(),
            t_prac.sum(), (t_prac * t_prac).sum(),
            diff.sum(), (diff * diff).sum(),
        )

    sums = _stats.map_blocks(blockfn, N, seed, block=s.block_hint, threads=threads)
    theo, theo_se = _finish(sums[0], sums[1], alpha, N)
    prac, prac_se = _finish(sums[2], sums[3], alpha, N)
    _, diff_se = _finish(sums[4], sums[5], alpha, N)
    return VarianceComparison(
        theoretical_var=float(theo), practical_var=float(prac),
        stderr=max(float(diff_se), 1e-300),
        theoretical_se=float(theo_se), practical_se=float(prac_se),
    )


@dataclass(frozen=True)
class AsymptoticCalculusRow:
    n: int
    lhs: float          # alpha_n mean[(F(f(Y_n)) - F(f(Y)))^2]
    rhs: float          # assembled sum_ij F'_i F'_j Gamma-weak estimate
    lhs_se: float
    rhs_se: float

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs


def asymptotic_calculus_check(
    s: ApproximationScheme,
    fs: Sequence[TestFunction],
    big_f: SmoothMap,
    ns: Sequence[int],
    N: int,
    seed: int,
    threads: int = 1,
) -> tuple[AsymptoticCalculusRow, ...]:
    """First-order error-calculus principle on composite observables
    F(f_1, ..., f_p): the rate-scaled squared increment of the composite
    matches the gradient-weighted assembly of the squared-field estimates.
    The ratio tends to one for local schemes (and equals one identically,
    up to rounding, for F = identity).
    """
    fs = list(fs)
    p = len(fs)
    if big_f.d_in != p or big_f.d_out != 1:
        raise ValueError(f"need a scalar map of {p} arguments")
    ns = sorted(set(int(m) for m in ns))
    rows = []
    seeds = np.random.SeedSequence(seed).spawn(len(ns))

    def f_values(y):
        return np.stack([np.asarray(f.eval(y), dtype=float) for f in fs], axis=0)

    def big_f_apply(vals):
        if p == 1 and big_f.eval_scalar is not None:
            return np.asarray(big_f.eval_scalar(vals[0]), dtype=float)
        return np.array([float(big_f(vals[:, col])[0]) for col in range(vals.shape[1])])

    def big_f_grad(vals):
        if p == 1 and big_f.d1_scalar is not None:
            return np.asarray(big_f.d1_scalar(vals[0]), dtype=float)[None, :]
        return np.stack(
            [np.asarray(big_f.jacobian(vals[:, col]), dtype=float).reshape(p) for col in range(vals.shape[1])],
            axis=1,
        )

    for n, ss in zip(ns, seeds):
        s.validate_n(n)
        alpha = s.rate(n)

        def blockfn(rng, size, _, n=n):
            y, yn = s.pair_sampler(n, size, rng)
            vy, vyn = f_values(y), f_values(yn)
            dcomp = big_f_apply(vyn) - big_f_apply(vy)
            lhs_t = dcomp * dcomp
            gy, gyn = big_f_grad(vy), big_f_grad(vyn)
            dv = vyn - vy
            rhs_t = np.zeros(size)
            for a in range(p):
                for b in range(p):
                    w = 0.5 * (gy[a] * gy[b] + gyn[a] * gyn[b])
                    rhs_t += dv[a] * dv[b] * w
            return lhs_t.sum(), (lhs_t * lhs_t).sum(), rhs_t.sum(), (rhs_t * rhs_t).sum()

        sums = _stats.map_blocks(blockfn, N, int(ss.generate_state(1)[0]), block=s.block_hint, threads=threads)
        lhs, lhs_se = _finish(sums[0], sums[1], alpha, N)
        rhs, rhs_se = _finish(sums[2], sums[3], alpha, N)
        rows.append(AsymptoticCalculusRow(n, float(lhs), float(rhs), float(lhs_se), float(rhs_se)))
    return tuple(rows)


def pointwise_diagnostic(
    s: ApproximationScheme,
    phi: TestFunction,
    kind: str,
    n: int,
    N: int,
    seed: int,
    bins: int = 25,
):
    """Diagnostic pointwise recovery Op[phi](y) by binned regression of the
    rate-scaled integrand on the conditioning variable (Y for the
    theoretical/symmetric/singular views, Y_n for the practical one).
    Returns (bin centers, values, stderr, counts).  Diagnostic only: the weak
    matrices are the supported interface.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    s.validate_n(n)
    y, yn = s.sample_pairs(n, N, seed)
    dphi = np.asarray(phi.eval(yn), dtype=float) - np.asarray(phi.eval(y), dtype=float)
    alpha = s.rate(n)
    if kind == "theoretical":
        w, cond = alpha * dphi, y
    elif kind == "practical":
        w, cond = -alpha * dphi, yn
    elif kind == "singular":
        w, cond = alpha * dphi, 0.5 * (y + yn)
    else:
        w, cond = -0.5 * alpha * dphi, y  # second factor integrated out
    order = np.argsort(cond, kind="stable")
    edges = np.linspace(0, N, bins + 1).astype(int)
    centers = np.empty(bins)
    values = np.empty(bins)
    stderr = np.empty(bins)
    counts = np.empty(bins, dtype=int)
    for b, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        idx = order[lo:hi]
        counts[b] = idx.size
        centers[b] = float(np.mean(cond[idx]))
        m = float(np.mean(w[idx]))
        values[b] = m
        stderr[b] = math.sqrt(max(float(np.mean((w[idx] - m) ** 2)), 0.0) / max(idx.size, 1))
    return centers, values, stderr, counts
