"""Experiment runner: reproducible convergence studies with file outputs.

Verbs: generate, integrate, roughpath, verify, study.  Configuration is a
single JSON document; --seed overrides the path seed, --out (or the
PATHINT_OUT environment variable) picks the output directory.  Exit status 0
means every requested check passed, 1 means at least one check failed, 2 means
the configuration or invocation was invalid (with a machine-readable error
JSON on standard error).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import report
from .integration import (
    HoeffdingPreconditionError,
    StepProcess,
    hoeffding_bound_curve,
    hoeffding_strategy,
    isometry_certificate,
    ito_ladder,
    matrix_left_integral,
)
from .partitions import MODES, build_ladder, ladder_to_json
from .paths import GENERATOR_KINDS, SamplePath, generate, read_path_csv, write_path_csv
from .quadvar import build_qv_ladder, follmer_qv_check
from .roughpath import (
    PHI_FUNCTIONS,
    ChenRelationError,
    build_ito_rough_path,
    check_rie,
    controlled_from_identity,
    controlled_from_phi,
    davie_sup,
    follmer_ito_residual,
    interpolated_area,
    left_riemann_curve,
    rough_integral_compensated,
    rough_path_to_json,
)

OUT_ENV_VAR = "PATHINT_OUT"
KNOWN_CHECKS = (
    "chen",
    "qv",
    "rie",
    "follmer",
    "hoeffding",
    "isometry",
    "rate",
    "bridge",
    "davie",
)
_DEFAULT_CHECKS = {
    "generate": [],
    "integrate": [],
    "roughpath": ["chen"],
    "verify": ["chen", "qv", "rate", "bridge"],
    "study": [],
}

__all__ = ["main", "ConfigError", "OUT_ENV_VAR", "KNOWN_CHECKS"]


class ConfigError(Exception):
    """Invalid configuration or invocation; carries a machine-readable code."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures through the JSON contract
        raise ConfigError("usage_error", message)


def _emit_error(code: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": {"code": code, "message": message}}) + "\n")


def _load_config(fp: str) -> dict:
    if not os.path.exists(fp):
        raise ConfigError("config_not_found", f"no config file at {fp}")
    try:
        with open(fp) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError("config_parse_error", f"config is not valid JSON: {e}")
    if not isinstance(cfg, dict):
        raise ConfigError("config_invalid", "config root must be a JSON object")
    return cfg


def _validate_exponents(cfg: dict) -> None:
    """All exponent constraints are checked before any numerical work."""
    p = cfg.get("p", 2.5)
    if not isinstance(p, (int, float)) or not (2.0 < float(p) < 3.0):
        raise ConfigError("exponent_out_of_range", f"p must lie in (2, 3), got {p}")
    p = float(p)
    if "q" in cfg:
        q = float(cfg["q"])
        if q <= 0.0 or 2.0 / p + 1.0 / q <= 1.0:
            raise ConfigError(
                "exponent_out_of_range", f"need q > 0 and 2/p + 1/q > 1, got q={q}"
            )
    if "eps" in cfg:
        eps = float(cfg["eps"])
        if not (0.0 < eps <= 1.0) or (2.0 + eps) / p <= 1.0:
            raise ConfigError(
                "exponent_out_of_range",
                f"need eps in (0, 1] with (2 + eps)/p > 1, got eps={eps}",
            )
    davie = cfg.get("check_params", {}).get("davie", {})
    if "alpha" in davie or "beta" in davie:
        alpha = float(davie.get("alpha", 0.475))
        beta = float(davie.get("beta", 0.9))
        if not (1.0 - alpha < beta < 2.0 * alpha):
            raise ConfigError(
                "exponent_out_of_range",
                f"need beta in (1 - alpha, 2 alpha), got alpha={alpha}, beta={beta}",
            )


def _thresholds(cfg: dict) -> np.ndarray:
    rule = cfg.get("thresholds")
    if rule is None:
        raise ConfigError("config_invalid", "config requires 'thresholds'")
    if isinstance(rule, dict):
        try:
            lo, hi = int(rule["start_exp"]), int(rule["stop_exp"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError(
                "config_invalid", "threshold rule needs integer start_exp/stop_exp"
            )
        if hi < lo:
            raise ConfigError("config_invalid", "stop_exp must be >= start_exp")
        return 2.0 ** (-np.arange(lo, hi + 1, dtype=float))
    arr = np.asarray(rule, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ConfigError("config_invalid", "thresholds must be a non-empty list")
    return arr


def _load_path(cfg: dict, seed_override) -> tuple:
    entry = cfg.get("path")
    if not isinstance(entry, dict):
        raise ConfigError("config_invalid", "config requires a 'path' object")
    if "csv" in entry:
        try:
            path = read_path_csv(entry["csv"])
        except (OSError, ValueError) as e:
            raise ConfigError("path_invalid", f"cannot read path CSV: {e}")
        return path, None
    kind = entry.get("kind")
    if kind not in GENERATOR_KINDS:
        raise ConfigError(
            "config_invalid", f"path.kind must be one of {GENERATOR_KINDS}, got {kind!r}"
        )
    seed = seed_override if seed_override is not None else entry.get("seed", 0)
    params = entry.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("config_invalid", "path.params must be an object")
    try:
        path = generate(kind, int(seed), params)
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError("config_invalid", f"path generation failed: {e}")
    return path, int(seed)


def _aitken_limit(values) -> float:
    """Extrapolated limit of a (near-)geometric sequence; exact on geometric."""
    v = [float(x) for x in values]
    if len(v) < 3:
        return v[-1]
    d1 = v[-1] - v[-2]
    d0 = v[-2] - v[-3]
    den = d1 - d0
    if den == 0.0 or not math.isfinite(den):
        return v[-1]
    lim = v[-1] - d1 * d1 / den
    return lim if math.isfinite(lim) else v[-1]


class _Context:
    """Lazily built shared artifacts for one experiment run."""

    def __init__(self, cfg: dict, path: SamplePath):
        self.cfg = cfg
        self.path = path
        self.p = float(cfg.get("p", 2.5))
        self.mode = cfg.get("mode", "vector_norm")
        if self.mode not in MODES:
            raise ConfigError("config_invalid", f"mode must be one of {MODES}")
        self._ladder = None
        self._qv = None
        self._qv_report = None
        self._rp = None
        self._ito = None

    @property
    def ladder(self):
        if self._ladder is None:
            thr = _thresholds(self.cfg)
            try:
                self._ladder = build_ladder(self.path, thr, mode=self.mode)
            except ValueError as e:
                raise ConfigError("config_invalid", f"ladder construction failed: {e}")
        return self._ladder

    @property
    def qv(self):
        if self._qv is None:
            self._qv = build_qv_ladder(self.path, self.ladder)
        return self._qv

    @property
    def qv_report(self):
        if self._qv_report is None:
            self._qv_report = follmer_qv_check(self.path, self.ladder)
        return self._qv_report

    @property
    def rough(self):
        if self._rp is None:
            self._rp = build_ito_rough_path(
                self.path, self.ladder, self.p, tol=math.inf
            )
        return self._rp

    @property
    def ito(self):
        if self._ito is None:
            self._ito = ito_ladder(self.path, self.ladder)
        return self._ito

    def qv_totals(self) -> list:
        return [float(np.trace(lv.cov[-1])) for lv in self.qv.levels]


def _check_params(cfg: dict, name: str) -> dict:
    params = cfg.get("check_params", {})
    if not isinstance(params, dict):
        raise ConfigError("config_invalid", "check_params must be an object")
    sub = params.get(name, {})
    if not isinstance(sub, dict):
        raise ConfigError("config_invalid", f"check_params.{name} must be an object")
    return sub


def _check_chen(ctx: _Context, params: dict) -> dict:
    tol = float(params.get("tol", 1e-9))
    resid = ctx.rough.chen_residual_max
    return {"passed": resid <= tol, "chen_residual_max": resid, "tol": tol}


def _check_qv(ctx: _Context, params: dict) -> dict:
    rep = ctx.qv_report
    return {
        "passed": bool(rep.passed),
        "gap_per_level": rep.gap_per_level.tolist(),
        "tv_per_level": rep.tv_per_level.tolist(),
    }


def _check_rie(ctx: _Context, params: dict) -> dict:
    if len(ctx.ladder) < 2:
        return {"passed": False, "message": "need at least two ladder levels"}
    rep = check_rie(
        ctx.path,
        [lv.stops for lv in ctx.ladder.levels],
        ctx.p,
        tol=float(params.get("tol", 1e-9)),
    )
    return {
        "passed": bool(rep.passed),
        "applicable": bool(rep.applicable),
        "sup_ratio": rep.sup_ratio,
        "scale_factor": rep.scale_factor,
        "gap_per_level": rep.gap_per_level.tolist(),
    }


def _check_follmer(ctx: _Context, params: dict) -> dict:
    name = params.get("phi", "square")
    if name not in PHI_FUNCTIONS:
        raise ConfigError(
            "config_invalid", f"unknown phi {name!r}; options: {sorted(PHI_FUNCTIONS)}"
        )
    phi, grad, hess = PHI_FUNCTIONS[name]
    try:
        rep = follmer_ito_residual(phi, grad, hess, ctx.path, ctx.ladder, ctx.qv_report)
    except ValueError as e:
        return {"passed": False, "message": str(e)}
    sups = rep.sup_residual_per_level
    atol = float(params.get("atol", 1e-8))
    converged = sups[-1] <= max(atol, 0.5 * sups[0])
    return {
        "passed": bool(converged),
        "phi": name,
        "sup_residual_per_level": sups.tolist(),
    }


def _check_hoeffding(ctx: _Context, params: dict) -> dict:
    lam = float(params.get("lam", 1.0))
    stops = ctx.ladder.finest.stops
    d = ctx.path.d
    h = np.full((stops.size, d), 1.0 / math.sqrt(d))
    values = ctx.path.values
    m = ctx.path.n_points
    ends = np.append(stops[1:], m - 1)
    sups = np.empty(stops.size)
    for k, (a, e) in enumerate(zip(stops, ends)):
        dots = (values[a : e + 1] - values[a]) @ h[k]
        sups[k] = np.abs(dots).max() if e > a else 0.0
    b = np.maximum(sups, 1e-300)
    try:
        strat = hoeffding_strategy(ctx.path, stops, h, b, lam)
        bound = hoeffding_bound_curve(ctx.path, stops, h, b, lam)
    except (HoeffdingPreconditionError, ValueError) as e:
        return {"passed": False, "message": str(e), "lam": lam}
    slack = float((1.0 + strat.wealth - bound).min())
    tol = 1e-9 * max(1.0, float(bound.max()))
    return {
        "passed": slack >= -tol,
        "lam": lam,
        "min_slack": slack,
        "max_bound": float(bound.max()),
    }


def _check_isometry(ctx: _Context, params: dict) -> dict:
    a = float(params.get("a", 1.0))
    b = float(params.get("b", 1.0))
    if "c" in params:
        c = float(params["c"])
    else:
        c = max(1.05 * float(np.trace(ctx.qv.levels[-1].cov[-1])), 1e-12)
    d = ctx.path.d
    F = StepProcess(
        stops=np.array([0], dtype=np.int64),
        positions=np.full((1, d), a / math.sqrt(d)),
    )
    cert = isometry_certificate(F, ctx.path, ctx.ladder, a, b, c)
    return {
        "passed": cert.verdict in ("pass", "vacuous pass"),
        "verdict": cert.verdict,
        "price_bound": cert.price_bound,
        "trigger_level": cert.trigger_level,
        "sup_integral": cert.sup_integral,
        "a": a,
        "b": b,
        "c": c,
    }


def _check_rate(ctx: _Context, params: dict) -> dict:
    lo, hi = params.get("slope_range", [0.5, 1.5])
    slope = ctx.ito.rate_slope
    ok = math.isfinite(slope) and float(lo) <= slope <= float(hi)
    return {
        "passed": bool(ok),
        "rate_slope": slope,
        "slope_range": [float(lo), float(hi)],
        "residual_per_level": ctx.ito.residual_per_level.tolist(),
    }


def _check_bridge(ctx: _Context, params: dict) -> dict:
    tol = float(params.get("tol", 1e-9))
    lv = ctx.qv.levels[-1]
    ito = matrix_left_integral(ctx.path, lv.stops)
    interp = interpolated_area(ctx.path, lv.stops)
    sampled = ito[interp.grid] + 0.5 * lv.cov[interp.grid]
    diff = float(np.abs(interp.curve - sampled).max())
    scale = max(1.0, float(np.abs(interp.curve).max()))
    return {"passed": diff <= tol * scale, "sup_gap": diff, "tol": tol}


def _check_davie(ctx: _Context, params: dict) -> dict:
    alpha = float(params.get("alpha", 0.475))
    beta = float(params.get("beta", 0.9))
    n_blocks = int(params.get("grid_points", 65))
    m = ctx.path.n_points
    q = max(1, (m - 1) // max(2, n_blocks - 1))
    idx = np.arange(0, ((m - 1) // q) * q + 1, q)
    curve = matrix_left_integral(ctx.path, ctx.ladder.finest.stops)
    values = ctx.path.values
    ig = curve[idx]
    sg = values[idx]
    diff = sg[None, :, :] - sg[:, None, :]
    area = ig[None, :, :, :] - ig[:, None, :, :] - np.einsum("ai,abj->abij", sg, diff)
    try:
        rep = davie_sup(area, ctx.path.times[idx], alpha, beta)
    except ValueError as e:
        return {"passed": False, "message": str(e)}
    cap = params.get("max_constant")
    passed = True if cap is None else rep.constant <= float(cap)
    return {
        "passed": bool(passed),
        "constant": rep.constant,
        "alpha": alpha,
        "beta": beta,
        "block_h": rep.block_h,
        "k": rep.k,
        "l": rep.l,
    }


_CHECKS = {
    "chen": _check_chen,
    "qv": _check_qv,
    "rie": _check_rie,
    "follmer": _check_follmer,
    "hoeffding": _check_hoeffding,
    "isometry": _check_isometry,
    "rate": _check_rate,
    "bridge": _check_bridge,
    "davie": _check_davie,
}


def _run_checks(ctx: _Context, names) -> dict:
    results = {}
    for name in names:
        if name not in _CHECKS:
            raise ConfigError(
                "config_invalid", f"unknown check {name!r}; options: {KNOWN_CHECKS}"
            )
        results[name] = _CHECKS[name](ctx, _check_params(ctx.cfg, name))
    return results


# ---------------------------------------------------------------------------
# verbs

def _integrand_values(cfg: dict, path: SamplePath):
    entry = cfg.get("integrand", "coordinate")
    if entry == "coordinate":
        return "coordinate", "coordinate"
    if isinstance(entry, dict) and "phi" in entry:
        name = entry["phi"]
        if name not in PHI_FUNCTIONS:
            raise ConfigError(
                "config_invalid", f"unknown phi {name!r}; options: {sorted(PHI_FUNCTIONS)}"
            )
        return PHI_FUNCTIONS[name][1](path.values), f"phi:{name}"
    if isinstance(entry, dict) and "csv" in entry:
        try:
            f = read_path_csv(entry["csv"])
        except (OSError, ValueError) as e:
            raise ConfigError("config_invalid", f"cannot read integrand CSV: {e}")
        if f.n_points != path.n_points:
            raise ConfigError("config_invalid", "integrand CSV grid does not match path")
        return f.values, "csv"
    raise ConfigError("config_invalid", "integrand must be 'coordinate', {'phi': name}, or {'csv': file}")


def _verb_generate(ctx: _Context, out: str, figures: bool) -> tuple:
    outputs = []
    write_path_csv(ctx.path, os.path.join(out, "path.csv"))
    outputs.append("path.csv")
    if ctx.cfg.get("thresholds") is not None:
        report.write_json(os.path.join(out, "ladder.json"), ladder_to_json(ctx.ladder))
        outputs.append("ladder.json")
    if figures:
        report.fig_path(os.path.join(out, "path.png"), ctx.path)
        outputs.append("path.png")
    extra = {
        "n_points": ctx.path.n_points,
        "d": ctx.path.d,
        "horizon": ctx.path.horizon,
    }
    return extra, outputs


def _verb_integrate(ctx: _Context, out: str, figures: bool) -> tuple:
    integrand, label = _integrand_values(ctx.cfg, ctx.path)
    result = (
        ctx.ito
        if isinstance(integrand, str)
        else ito_ladder(ctx.path, ctx.ladder, integrand=integrand)
    )
    outputs = []
    report.write_json(os.path.join(out, "ladder.json"), ladder_to_json(ctx.ladder))
    outputs.append("ladder.json")
    report.write_qv_csv(os.path.join(out, "qv_report.csv"), ctx.path, ctx.qv)
    outputs.append("qv_report.csv")
    outputs.extend(report.write_integral_csvs(out, ctx.path, result))
    if figures:
        report.fig_path(os.path.join(out, "path.png"), ctx.path)
        report.fig_rate_fit(os.path.join(out, "rate_fit.png"), result)
        outputs.extend(["path.png", "rate_fit.png"])
    extra = {
        "integrand": label,
        "rate_slope": result.rate_slope,
        "residual_per_level": result.residual_per_level.tolist(),
        "chen_residual_max": ctx.rough.chen_residual_max,
        "qv_limit": _aitken_limit(ctx.qv_totals()),
    }
    return extra, outputs


def _verb_roughpath(ctx: _Context, out: str, figures: bool) -> tuple:
    rp = ctx.rough
    outputs = []
    report.write_json(os.path.join(out, "rough_path.json"), rough_path_to_json(rp))
    outputs.append("rough_path.json")
    report.write_json(os.path.join(out, "ladder.json"), ladder_to_json(ctx.ladder))
    outputs.append("ladder.json")
    if figures:
        report.fig_path(os.path.join(out, "path.png"), ctx.path)
        outputs.append("path.png")
    extra = {
        "p": rp.p,
        "chen_residual_max": rp.chen_residual_max,
        "report_grid_points": int(rp.grid.size),
        "qv_limit": _aitken_limit(ctx.qv_totals()),
    }
    return extra, outputs


def _verb_verify(ctx: _Context, out: str, figures: bool) -> tuple:
    outputs = []
    report.write_json(os.path.join(out, "ladder.json"), ladder_to_json(ctx.ladder))
    outputs.append("ladder.json")
    report.write_qv_csv(os.path.join(out, "qv_report.csv"), ctx.path, ctx.qv)
    outputs.append("qv_report.csv")
    if figures:
        report.fig_path(os.path.join(out, "path.png"), ctx.path)
        report.fig_level_decay(
            os.path.join(out, "qv_gaps.png"),
            ctx.ladder.thresholds,
            ctx.qv_report.gap_per_level,
            "uniform gap to finest",
            "covariation convergence",
        )
        outputs.extend(["path.png", "qv_gaps.png"])
    extra = {
        "chen_residual_max": ctx.rough.chen_residual_max,
        "qv_limit": _aitken_limit(ctx.qv_totals()),
    }
    return extra, outputs


def _verb_study(ctx: _Context, out: str, figures: bool) -> tuple:
    rp = ctx.rough
    entry = ctx.cfg.get("integrand", {"phi": "square"})
    if entry == "coordinate":
        cp = controlled_from_identity(rp)
        label = "coordinate"
    elif isinstance(entry, dict) and "phi" in entry:
        name = entry["phi"]
        if name not in PHI_FUNCTIONS:
            raise ConfigError(
                "config_invalid", f"unknown phi {name!r}; options: {sorted(PHI_FUNCTIONS)}"
            )
        phi, grad, _ = PHI_FUNCTIONS[name]
        cp = controlled_from_phi(rp, phi, grad, float(ctx.cfg.get("eps", 1.0)))
        label = f"phi:{name}"
    else:
        raise ConfigError(
            "config_invalid", "study integrand must be 'coordinate' or {'phi': name}"
        )
    parts = [lv.stops for lv in ctx.ladder.levels]
    comp = rough_integral_compensated(cp, rp, parts, compute_local_bound=False)
    limit = comp.curves[-1]
    gaps = [
        float(np.abs(left_riemann_curve(cp, rp, stops) - limit).max())
        for stops in parts
    ]
    outputs = []
    report.write_study_csv(
        os.path.join(out, "study.csv"), ctx.ladder.thresholds.tolist(), gaps
    )
    outputs.append("study.csv")
    report.write_qv_csv(os.path.join(out, "qv_report.csv"), ctx.path, ctx.qv)
    outputs.append("qv_report.csv")
    report.write_json(os.path.join(out, "ladder.json"), ladder_to_json(ctx.ladder))
    outputs.append("ladder.json")
    if figures:
        report.fig_path(os.path.join(out, "path.png"), ctx.path)
        report.fig_level_decay(
            os.path.join(out, "study_gaps.png"),
            ctx.ladder.thresholds,
            gaps,
            "sup gap, plain vs compensated",
            "model-free vs rough-path integral",
        )
        report.fig_rate_fit(os.path.join(out, "rate_fit.png"), ctx.ito)
        outputs.extend(["path.png", "study_gaps.png", "rate_fit.png"])
    extra = {
        "integrand": label,
        "modelfree_vs_rough_gap": gaps[-1],
        "gap_per_level": gaps,
        "rate_slope": ctx.ito.rate_slope,
        "chen_residual_max": rp.chen_residual_max,
        "qv_limit": _aitken_limit(ctx.qv_totals()),
    }
    return extra, outputs


_VERBS = {
    "generate": _verb_generate,
    "integrate": _verb_integrate,
    "roughpath": _verb_roughpath,
    "verify": _verb_verify,
    "study": _verb_study,
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="pathint", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in _VERBS:
        sp = sub.add_parser(verb)
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override path seed")
        sp.add_argument(
            "--no-figures", action="store_true", help="skip figure rendering"
        )
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        cfg = _load_config(args.config)
        _validate_exponents(cfg)
        out = args.out or os.environ.get(OUT_ENV_VAR) or "pathint_out"
        report.ensure_out_dir(out)
        path, seed_used = _load_path(cfg, args.seed)
        ctx = _Context(cfg, path)
        extra, outputs = _VERBS[args.verb](ctx, out, not args.no_figures)
        check_names = cfg.get("checks", list(_DEFAULT_CHECKS[args.verb]))
        if not isinstance(check_names, list):
            raise ConfigError("config_invalid", "checks must be a list of names")
        checks = _run_checks(ctx, check_names)
    except ConfigError as e:
        _emit_error(e.code, str(e))
        return 2

    all_passed = all(c["passed"] for c in checks.values())
    summary = {
        "verb": args.verb,
        "seed": seed_used,
        "all_passed": all_passed,
        "checks": checks,
        "outputs": sorted(outputs) + ["summary.json"],
        "config": cfg,
    }
    summary.update(extra)
    report.write_summary(out, summary)
    return 0 if all_passed else 1


if __name__ == "__main__":
    sys.exit(main())
