"""Batch command-line front end.

Subcommands: ``propagate``, ``gauss-demo``, ``naive-demo``, ``simulate``,
``bias-ops``, ``fisher``, ``structure-check``.  Every run is a pure function
of (config, seed): reports are byte-identical across repetitions and across
``--threads`` settings.  The seed comes from ``--seed`` or the ERRLAB_SEED
environment variable; there is no wall-clock default.

Reports echo the configuration, carry a sha256 content hash of the canonical
config, and list one PASS/FAIL line per checked contract (each line cites
the module-level contract it verifies).  JSON output holds everything in one
file; CSV output writes the data table (header row, '.' decimals, newline
endings, 17 significant digits) plus a ``<out>.report.json`` sidecar with
the metadata and checks.

Exit codes: 0 success, 1 invalid configuration or unwritable output,
2 numerical failure (an exception or a failed contract check).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, approximation_lab, bias_operators, fisher, structures
from . import error_algebra as ea

SCHEME_ALIASES = {
    "binary": "binary_digits",
    "binary_digits": "binary_digits",
    "polya": "polya_urn",
    "polya_urn": "polya_urn",
    "series": "series_independent",
    "series_independent": "series_independent",
    "stochastic-integral": "stochastic_integral",
    "stochastic_integral": "stochastic_integral",
    "wiener": "wiener_perturbation",
    "wiener_perturbation": "wiener_perturbation",
}

STRUCTURE_ALIASES = {
    "ou": "ornstein_uhlenbeck",
    "ornstein_uhlenbeck": "ornstein_uhlenbeck",
    "monte-carlo": "monte_carlo_unit_interval",
    "monte_carlo_unit_interval": "monte_carlo_unit_interval",
    "lebesgue": "lebesgue_domain",
    "lebesgue_domain": "lebesgue_domain",
}

MODEL_ALIASES = {"bernoulli", "normal", "exponential"}


@dataclass
class ExperimentConfig:
    command: str
    seed: int | None = None
    n_samples: int = 100_000
    ns: list[int] = field(default_factory=list)
    out: str | None = None
    format: str | None = None  # csv | json; default from the out extension
    threads: int = 1
    params: dict = field(default_factory=dict)

    def canonical(self) -> dict:
        return {
            "command": self.command,
            "seed": self.seed,
            "n_samples": self.n_samples,
            "ns": list(self.ns),
            "out": self.out,
            "format": self.resolved_format(),
            "threads": self.threads,
            "params": {k: self.params[k] for k in sorted(self.params)},
        }

    def resolved_format(self) -> str:
        if self.format:
            return self.format
        if self.out and self.out.endswith(".csv"):
            return "csv"
        return "json"


def validate(config: ExperimentConfig) -> list[str]:
    """Total function: list of violations, empty iff the run can proceed."""
    v: list[str] = []
    if config.command not in (
        "propagate", "gauss-demo", "naive-demo", "simulate",
        "bias-ops", "fisher", "structure-check",
    ):
        v.append(f"unknown command {config.command!r}")
        return v
    if config.seed is None:
        v.append("seed is required (pass --seed or set ERRLAB_SEED)")
    elif not 0 <= int(config.seed) < 2**64:
        v.append("seed must fit in an unsigned 64-bit integer")
    if config.n_samples < 1:
        v.append("n_samples must be >= 1")
    if config.threads < 1:
        v.append("threads must be >= 1")
    if config.resolved_format() not in ("csv", "json"):
        v.append("format must be csv or json")
    p = config.params
    if config.command == "simulate":
        if p.get("kind") not in SCHEME_ALIASES:
            v.append(f"unknown scheme kind {p.get('kind')!r}")
        if not config.ns:
            v.append("simulate requires --ns")
    if config.command == "bias-ops":
        if p.get("scheme") not in SCHEME_ALIASES:
            v.append(f"unknown scheme kind {p.get('scheme')!r}")
        if not p.get("n"):
            v.append("bias-ops requires --n")
    if config.command == "fisher":
        if p.get("model") not in MODEL_ALIASES:
            v.append(f"unknown model {p.get('model')!r}")
        if p.get("method", "analytic") not in ("analytic", "quadrature", "monte_carlo"):
            v.append("method must be analytic, quadrature, or monte_carlo")
    if config.command == "structure-check":
        if p.get("structure", "ou") not in STRUCTURE_ALIASES:
            v.append(f"unknown structure {p.get('structure')!r}")
    if config.command == "propagate":
        try:
            _parse_map(p.get("map", "identity:1"))
        except ValueError as exc:
            v.append(str(exc))
    return v


# ---------------------------------------------------------------------------
# Command implementations: each returns (results, checks, table)
# ---------------------------------------------------------------------------

def _check(name: str, contract: str, value: float, tolerance: float, passed: bool) -> dict:
    return {
        "name": name,
        "contract": contract,
        "value": float(value),
        "tolerance": float(tolerance),
        "passed": bool(passed),
    }


def _build_scheme(kind_alias: str, params: dict):
    kind = SCHEME_ALIASES[kind_alias]
    kwargs = {}
    if kind == "binary_digits" and params.get("rate_scale"):
        kwargs["rate_scale"] = params["rate_scale"]
    if kind == "polya_urn" and params.get("horizon"):
        kwargs["horizon"] = int(params["horizon"])
    if kind == "stochastic_integral" and params.get("fine_grid"):
        kwargs["fine_grid"] = int(params["fine_grid"])
    if kind == "series_independent":
        if params.get("x_const") is not None:
            kwargs["x_law"] = approximation_lab.constant(float(params["x_const"]))
    return approximation_lab.make_scheme(kind, **kwargs)


def _cmd_simulate(config: ExperimentConfig):
    scheme = _build_scheme(config.params["kind"], config.params)
    report = approximation_lab.estimate_moments(
        scheme, config.ns, config.n_samples, config.seed, threads=config.threads
    )
    header = ["n", "b_hat", "b_se", "d_hat", "d_se", "v_hat", "v_se", "m4_hat", "m4_se"]
    rows = [
        [r.n, r.b_hat, r.b_se, r.d_hat, r.d_se, r.v_hat, r.v_se, r.m4_hat, r.m4_se]
        for r in report.rows
    ]
    checks = [
        _check(
            f"variance_floor_n{r.n}",
            "approximation_lab.MomentReport: v_hat >= -3 stderr(v_hat)",
            r.v_hat, 3.0 * r.v_se, r.v_hat >= -3.0 * r.v_se,
        )
        for r in report.rows
    ]
    results = {"scheme": scheme.kind, "rows": {str(r.n): r.__dict__ for r in report.rows}}
    if len(report.rows) >= 4:
        regime = approximation_lab.classify_regime(report)
        results["regime"] = {
            "case": regime.case,
            "slope_b": regime.slope_b,
            "slope_v": regime.slope_v,
            "slope_b_halfwidth": regime.slope_b_halfwidth,
            "slope_v_halfwidth": regime.slope_v_halfwidth,
        }
    return results, checks, (header, rows)


def _cmd_bias_ops(config: ExperimentConfig):
    scheme = _build_scheme(config.params["scheme"], config.params)
    n = int(config.params["n"])
    basis = bias_operators.basis_for_scheme(scheme, n, seed=config.seed)
    ops = bias_operators.estimate_all_weak(
        scheme, basis, n, config.n_samples, config.seed, threads=config.threads
    )
    ests = {kind: ops[kind] for kind in bias_operators.KINDS}
    theo, prac, symm, sing = (ests[k] for k in bias_operators.KINDS)
    scale = max(np.max(np.abs(theo.G)), np.max(np.abs(prac.G)), 1e-300)
    half_sum = bias_operators.half_sum_residual(theo, prac, symm)
    sing_res = float(np.max(np.abs(sing.G - 0.5 * (theo.G - prac.G))))
    sides = bias_operators.symmetric_from_sides(
        theo,
        bias_operators.estimate_weak(
            scheme, basis, "practical", n, config.n_samples, config.seed + 1,
            threads=config.threads, richardson=False,
        ),
    )
    defect = bias_operators.symmetry_defect(sides, ops.gram)
    gam, gam_se = ops.gamma, ops.gamma_stderr
    flags = {kind: None for kind in bias_operators.KINDS}
    try:
        scheme.validate_n(2 * n)
    except ValueError:
        pass
    else:
        doubled = bias_operators.estimate_all_weak(
            scheme, basis, 2 * n, config.n_samples, config.seed, threads=config.threads
        )
        for kind in bias_operators.KINDS:
            drift = np.abs(doubled[kind].G - ests[kind].G)
            tol = 3.0 * np.sqrt(ests[kind].stderr ** 2 + doubled[kind].stderr ** 2)
            flags[kind] = bool(np.any(drift > tol))
    checks = [
        _check("half_sum_identity",
               "bias_operators.half_sum_residual: |symm - (theo+prac)/2| <= 1e-12 scale",
               half_sum, 1e-12 * scale, half_sum <= 1e-12 * scale),
        _check("singular_identity",
               "bias_operators: singular == (theo - prac)/2 exactly on shared samples",
               sing_res, 0.0, sing_res == 0.0),
        _check("symmetry_defect",
               "bias_operators.symmetry_defect: |G - G^T| <= 3 combined stderr "
               "(independently seeded sides)",
               defect.abs_defect, defect.tolerance, defect.passed),
    ]
    results = {
        "scheme": scheme.kind,
        "n": n,
        "alpha": scheme.rate(n),
        "basis_centers": [f.support_hint for f in basis.functions],
        "operators": {
            kind: {
                "G": ests[kind].G.tolist(),
                "stderr": ests[kind].stderr.tolist(),
                "richardson_flagged": flags[kind],
            }
            for kind in bias_operators.KINDS
        },
        "gamma_weak": {"G": gam.tolist(), "stderr": gam_se.tolist()},
    }
    return results, checks, None


def _parse_map(spec: str) -> ea.SmoothMap:
    name, _, arg = spec.partition(":")
    if name == "identity":
        return ea.identity(int(arg or 1))
    if name == "rotation":
        return ea.rotation(math.radians(float(arg or 0.0)))
    if name == "scale":
        diag = [float(t) for t in arg.split(",")] if arg else [1.0]
        return ea.affine(np.diag(diag), name=f"scale({arg})")
    if name == "square":
        return ea.from_scalar(lambda t: t * t, lambda t: 2.0 * t,
                              lambda t: np.full_like(np.asarray(t, dtype=float), 2.0), name="t^2")
    if name == "product2":
        return ea.pairwise_product()
    if name == "exp":
        return ea.from_scalar(np.exp, np.exp, np.exp, name="exp")
    raise ValueError(f"unknown map spec {spec!r}")


def _cmd_propagate(config: ExperimentConfig):
    p = config.params
    m = _parse_map(p.get("map", "identity:1"))
    value = [float(t) for t in str(p.get("value", "0")).split(",")]
    bias = [float(t) for t in str(p.get("bias", ",".join("0" for _ in value))).split(",")]
    cov_rows = str(p.get("cov", ";".join(",".join("0" for _ in value) for _ in value)))
    cov = [[float(t) for t in row.split(",")] for row in cov_rows.split(";")]
    x = ea.ErroneousValue(value, bias, cov)
    out = ea.propagate(m, x)
    eigmin = float(np.linalg.eigvalsh(out.covariance).min())
    tol = 1e-10 * (1.0 + float(np.trace(out.covariance)))
    checks = [
        _check("psd_preservation",
               "error_algebra.propagate: output covariance PSD within tolerance",
               eigmin, tol, eigmin >= -tol),
    ]
    header = ["coordinate", "value", "bias"] + [f"cov_{j}" for j in range(out.dim)]
    rows = [
        [i, out.value[i], out.bias[i]] + list(out.covariance[i])
        for i in range(out.dim)
    ]
    results = {
        "map": m.name,
        "value": out.value.tolist(),
        "bias": out.bias.tolist(),
        "covariance": out.covariance.tolist(),
    }
    return results, checks, (header, rows)


def _cmd_gauss_demo(config: ExperimentConfig):
    rng = np.random.default_rng(config.seed)
    g = rng.standard_normal((2, 2))
    cov = g @ g.T + 0.1 * np.eye(2)
    x = ea.ErroneousValue([1.0, -0.5], [0.0, 0.0], cov)
    rot = ea.rotation(math.pi / 4)
    inv = ea.rotation(-math.pi / 4)
    back = ea.propagate(inv, ea.propagate(rot, x))
    round_trip = float(np.max(np.abs(back.covariance - cov)))
    sum_map = ea.affine(np.array([[1.0, 1.0]]), name="x+y")
    diff_map = ea.affine(np.array([[1.0, -1.0]]), name="x-y")
    unit = ea.ErroneousValue([0.0, 0.0], [0.0, 0.0], np.eye(2))
    var_sum = ea.gauss_covariance(sum_map, sum_map, unit)
    cancel = ea.gauss_covariance(sum_map, diff_map, unit)
    scale = 1.0 + float(np.max(np.abs(cov)))
    checks = [
        _check("rotation_round_trip",
               "error_algebra: orthogonal map round trip returns the covariance to 1e-12",
               round_trip, 1e-12 * scale, round_trip <= 1e-12 * scale),
        _check("independent_sum_variance",
               "error_algebra.gauss_covariance: unit-covariance sum has variance 2",
               var_sum, 1e-12, abs(var_sum - 2.0) <= 1e-12),
        _check("orthogonal_cancellation",
               "error_algebra.gauss_covariance: cov(x+y, x-y) = 0 for unit covariance",
               cancel, 1e-12, abs(cancel) <= 1e-12),
    ]
    results = {
        "covariance": cov.tolist(),
        "round_trip_defect": round_trip,
        "sum_variance": var_sum,
        "sum_diff_covariance": cancel,
    }
    return results, checks, None


def _cmd_naive_demo(config: ExperimentConfig):
    rot = ea.rotation(math.pi / 4)
    inv = ea.rotation(-math.pi / 4)
    start = ea.NaiveErrorValue([1.0, 1.0], [1.0, 1.0])
    once = ea.naive_propagate(rot, start)
    back = ea.naive_propagate(inv, once)
    inflation = float(np.max(np.abs(back.delta - 2.0)))
    sum_map = ea.affine(np.array([[1.0, 1.0]]), name="x+y")
    naive_delta = ea.naive_propagate(sum_map, ea.NaiveErrorValue([0.0, 0.0], [1.0, 1.0])).delta[0]
    gauss_sigma = math.sqrt(
        ea.gauss_covariance(sum_map, sum_map, ea.ErroneousValue([0.0, 0.0], [0.0, 0.0], np.eye(2)))
    )
    checks = [
        _check("rotation_inflation",
               "error_algebra.naive_propagate: 45-degree round trip turns (1,1) into (2,2)",
               inflation, 1e-12, inflation <= 1e-12),
        _check("naive_dominates_gauss",
               "error_algebra: naive bound >= quadratic (std) bound for x+y",
               naive_delta - gauss_sigma, 0.0, naive_delta >= gauss_sigma),
    ]
    results = {
        "delta_after_rotation": once.delta.tolist(),
        "delta_round_trip": back.delta.tolist(),
        "naive_sum_bound": naive_delta,
        "gauss_sum_sigma": gauss_sigma,
    }
    return results, checks, None


def _cmd_fisher(config: ExperimentConfig):
    p = config.params
    name = p["model"]
    if name == "bernoulli":
        model = fisher.bernoulli_model()
    elif name == "normal":
        model = fisher.normal_mean_model(float(p.get("sigma", 1.0)))
    else:
        model = fisher.exponential_model()
    x = float(p.get("x", 0.5))
    method = p.get("method", "analytic")
    res = fisher.fisher_info(model, x, method=method, N=config.n_samples, seed=config.seed)
    checks = []
    if res.gamma is not None:
        unit = float(np.max(np.abs(res.gamma @ res.J - np.eye(model.param_dim))))
        tol = 1e-8 if method in ("analytic", "quadrature") else 1e-6
        checks.append(_check("inverse_identity",
                             "fisher.FisherResult: gamma J = identity within tolerance",
                             unit, tol, unit <= tol))
    mean, se = fisher.score_identity(model, x, config.n_samples, config.seed)
    checks.append(_check("score_identity",
                         "fisher.ParametricModel: E_x[score] = 0 within 3 stderr",
                         float(np.max(np.abs(mean))), float(3.0 * np.max(se)),
                         bool(np.all(np.abs(mean) <= 3.0 * se))))
    results = {
        "model": model.name,
        "x": x,
        "method": method,
        "J": res.J.tolist(),
        "gamma": None if res.gamma is None else res.gamma.tolist(),
        "singular": res.singular,
    }
    table = None
    if p.get("grid"):
        lo, hi, num = (float(t) for t in str(p["grid"]).split(":"))
        grid = np.linspace(lo, hi, int(num))
        fld = fisher.identify_structure(model, grid, method=method,
                                        N=config.n_samples, seed=config.seed)
        header = ["x", "gamma", "flagged"]
        rows = [
            [float(fld.grid[i, 0]), float(fld.values[i, 0, 0]), int(fld.flags[i])]
            for i in range(len(grid))
        ]
        results["grid"] = {"x": fld.grid[:, 0].tolist(), "gamma": fld.values[:, 0, 0].tolist()}
        table = (header, rows)
    return results, checks, table


def _cmd_structure_check(config: ExperimentConfig):
    kind = STRUCTURE_ALIASES[config.params.get("structure", "ou")]
    s = structures.make_structure(kind)
    if kind == "monte_carlo_unit_interval" or kind == "lebesgue_domain":
        f = structures.bump(0.45, 0.3, name="f")
        g = structures.bump(0.55, 0.3, name="g")
        probes = [0.2, 0.45, 0.6, 0.8]
    else:
        f = structures.tf_polynomial([0.0, 1.0])
        g = structures.tf_polynomial([0.0, 1.0, 1.0])
        probes = [-1.5, -0.3, 0.4, 1.2]
    residual = max(structures.generator_identity_residual(s, g, x) for x in probes)
    sym = structures.check_symmetry(s, f, g, config.n_samples, config.seed)
    link = structures.check_form_generator_link(s, f, g, config.n_samples, config.seed)
    checks = [
        _check("generator_identity",
               "structures: Gamma[f] = A[f^2] - 2 f A[f] pointwise to 1e-10",
               residual, 1e-10, residual <= 1e-10),
        _check("generator_symmetry",
               "structures.check_symmetry: |E[f A g] - E[g A f]| <= 3 stderr",
               abs(sym.lhs - sym.rhs), 3.0 * sym.mc_stderr, sym.passed),
        _check("form_generator_link",
               "structures.check_form_generator_link: E[Gamma]/2 = <-A f, g> within 3 stderr",
               abs(link.half_energy - link.generator_pairing), 3.0 * link.mc_stderr, link.passed),
    ]
    results = {
        "structure": kind,
        "symmetry": {"lhs": sym.lhs, "rhs": sym.rhs, "stderr": sym.mc_stderr},
        "link": {
            "half_energy": link.half_energy,
            "generator_pairing": link.generator_pairing,
            "full_energy": link.full_energy,
            "stderr": link.mc_stderr,
        },
    }
    if kind == "ornstein_uhlenbeck":
        diff = structures.diffusion_consistency(
            s, structures.tf_monomial(2), 0.0, t=0.01, N=min(config.n_samples, 200_000),
            seed=config.seed,
        )
        checks.append(_check(
            "diffusion_consistency",
            "structures.diffusion_consistency: rate matches A[f](x) within "
            "3 stderr + declared O(t) budget",
            abs(diff.empirical_rate - diff.predicted),
            3.0 * diff.mc_stderr + diff.bias_budget,
            diff.passed,
        ))
        results["diffusion"] = {
            "empirical_rate": diff.empirical_rate,
            "predicted": diff.predicted,
            "stderr": diff.mc_stderr,
            "bias_budget": diff.bias_budget,
        }
    return results, checks, None


COMMANDS = {
    "simulate": _cmd_simulate,
    "bias-ops": _cmd_bias_ops,
    "propagate": _cmd_propagate,
    "gauss-demo": _cmd_gauss_demo,
    "naive-demo": _cmd_naive_demo,
    "fisher": _cmd_fisher,
    "structure-check": _cmd_structure_check,
}


# ---------------------------------------------------------------------------
# Report serialization
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def _csv_text(header: list[str], rows: list[list]) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def _config_hash(config: ExperimentConfig) -> str:
    canon = json.dumps(config.canonical(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def run(config: ExperimentConfig) -> int:
    """Validate and execute; write reports; return the exit code."""
    violations = validate(config)
    if violations:
        for v in violations:
            print(f"invalid config: {v}", file=sys.stderr)
        return 1
    try:
        results, checks, table = COMMANDS[config.command](config)
    except (ValueError, KeyError, np.linalg.LinAlgError, structures.EstimationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2

    report = {
        "command": config.command,
        "config": config.canonical(),
        "input_hash": _config_hash(config),
        "version": __version__,
        "results": results,
        "checks": checks,
    }
    for c in checks:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"{status} {c['name']}: {c['contract']} "
              f"(value={_fmt(c['value'])}, tolerance={_fmt(c['tolerance'])})")

    try:
        if config.out:
            out = Path(config.out)
            if config.resolved_format() == "csv":
                if table is None:
                    header = ["check", "value", "tolerance", "passed"]
                    rows = [[c["name"], c["value"], c["tolerance"], int(c["passed"])] for c in checks]
                else:
                    header, rows = table
                out.write_text(_csv_text(header, rows))
                Path(str(out) + ".report.json").write_text(
                    json.dumps(report, sort_keys=True, indent=2) + "\n"
                )
            else:
                out.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return 1
    return 0 if all(c["passed"] for c in checks) else 2


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="errlab", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--n-samples", type=int, default=None)
        sp.add_argument("--out", type=str, default=None)
        sp.add_argument("--format", choices=["csv", "json"], default=None)
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--config", type=str, default=None,
                        help="JSON config file; explicit flags override it")

    sp = sub.add_parser("simulate", help="moment report for an approximation scheme")
    common(sp)
    sp.add_argument("--kind", type=str, default=None)
    sp.add_argument("--ns", type=str, default=None, help="comma-separated indices")
    sp.add_argument("--rate-scale", dest="rate_scale", choices=["bias", "variance"], default=None)
    sp.add_argument("--horizon", type=int, default=None)
    sp.add_argument("--fine-grid", dest="fine_grid", type=int, default=None)
    sp.add_argument("--x-const", dest="x_const", type=float, default=None)

    sp = sub.add_parser("bias-ops", help="four weak bias-operator matrices")
    common(sp)
    sp.add_argument("--scheme", type=str, default=None)
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--x-const", dest="x_const", type=float, default=None)
    sp.add_argument("--fine-grid", dest="fine_grid", type=int, default=None)

    sp = sub.add_parser("propagate", help="propagate an error triple through a map")
    common(sp)
    sp.add_argument("--map", type=str, default=None,
                    help="identity:D | rotation:DEG | scale:c1,c2 | square | product2 | exp")
    sp.add_argument("--value", type=str, default=None)
    sp.add_argument("--bias", type=str, default=None)
    sp.add_argument("--cov", type=str, default=None, help="rows separated by ';'")

    common(sub.add_parser("gauss-demo", help="quadratic calculus coherence demo"))
    common(sub.add_parser("naive-demo", help="textbook absolute-error incoherence demo"))

    sp = sub.add_parser("fisher", help="information matrix and coefficient field")
    common(sp)
    sp.add_argument("--model", choices=sorted(MODEL_ALIASES), default=None)
    sp.add_argument("--x", type=float, default=None)
    sp.add_argument("--method", choices=["analytic", "quadrature", "monte_carlo"], default=None)
    sp.add_argument("--sigma", type=float, default=None)
    sp.add_argument("--grid", type=str, default=None, help="lo:hi:count")

    sp = sub.add_parser("structure-check", help="structure symmetry and generator checks")
    common(sp)
    sp.add_argument("--structure", type=str, default=None)
    return parser


_COMMON_KEYS = ("seed", "n_samples", "out", "format", "threads")


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    base: dict = {}
    if getattr(args, "config", None):
        base = json.loads(Path(args.config).read_text())
    config = ExperimentConfig(command=args.command)
    params = dict(base.get("params", {}))
    for key, val in vars(args).items():
        if key in ("command", "config") or val is None:
            continue
        if key in _COMMON_KEYS:
            setattr(config, key, val)
        elif key == "ns":
            config.ns = [int(t) for t in str(val).split(",") if t]
        else:
            params[key] = val
    for key in _COMMON_KEYS:
        if getattr(args, key, None) is None and key in base:
            setattr(config, key, base[key])
    if not config.ns and base.get("ns"):
        config.ns = [int(t) for t in base["ns"]]
    config.params = params
    if config.seed is None and os.environ.get("ERRLAB_SEED"):
        config.seed = int(os.environ["ERRLAB_SEED"])
    if getattr(args, "n_samples", None) is None and "n_samples" not in base:
        config.n_samples = 100_000
    return config


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = build_config(args)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 1
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
