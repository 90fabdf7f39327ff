"""Scenario configs, verification pipelines and reports.

A scenario names a space, a form, the exponents ``(alpha, beta, R0)`` and an
ordered pipeline of checks. Checks share one heat kernel table and pass
measured constants downstream; every constant in the report carries the
check that produced it (or ``override`` when it came from the config).
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
import time
import warnings
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import bounds, cutoff, davies
from .forms import assemble_form, check_jump_upper, tail_constant, truncate
from .semigroup import check_survival, heat_kernel
from .space import SpaceParams, build_space, check_upper_regularity

__all__ = [
    "CHECKS",
    "SOFT_BY_DEFAULT",
    "ConfigError",
    "Scenario",
    "CheckRecord",
    "VerificationReport",
    "load_scenarios",
    "bundled_config",
    "run_scenario",
    "emit_report",
]

log = logging.getLogger(__name__)

CHECKS = ("regularity", "jump_upper", "due", "ue", "ue_loc", "survival", "cib",
          "csa_strong", "davies_gap_suite", "truncation_comparison", "offdiag_assembly",
          "nash", "fs_suite", "improvement", "tail_exponent")

SOFT_BY_DEFAULT = frozenset({"ue", "ue_loc", "csa_strong"})

# each entry is a list of alternatives; one check from every alternative must run earlier
PREREQUISITES = {
    "nash": [("due",)],
    "offdiag_assembly": [("due",), ("cib", "csa_strong")],
}

DEFAULT_MAX_POINTS = 1024


class ConfigError(ValueError):
    """Malformed or inconsistent scenario configuration."""


@dataclass
class Scenario:
    """One verification experiment.

    Attributes
    ----------
    name : str
    space : dict
        Generator description for :func:`heatlab.space.build_space`.
    form : dict
        ``{"local": ..., "jump": ...}`` for :func:`heatlab.forms.assemble_form`.
    params : dict
        ``alpha``, ``beta`` and optionally ``R0``.
    pipeline : list of str
    times : list of float
        Time grid of the shared heat kernel table.
    window : dict
        Fitting window for envelope checks.
    checks : dict
        Per-check options.
    seed : int
    tolerances : dict
    hard, soft : list of str
        Overrides of the default soft set.
    max_points : int
    """

    name: str
    space: dict
    form: dict
    params: dict
    pipeline: list
    times: list = field(default_factory=lambda: list(np.geomspace(1.0, 100.0, 16)))
    window: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    seed: int = 0
    tolerances: dict = field(default_factory=dict)
    hard: list = field(default_factory=list)
    soft: list = field(default_factory=list)
    max_points: int = DEFAULT_MAX_POINTS

    @classmethod
    def from_dict(cls, spec: dict) -> "Scenario":
        if not isinstance(spec, dict):
            raise ConfigError("a scenario must be a mapping")
        unknown = set(spec) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown scenario keys {sorted(unknown)}")
        for key in ("name", "space", "form", "params", "pipeline"):
            if key not in spec:
                raise ConfigError(f"scenario is missing {key!r}")
        spec = dict(spec)
        spec["times"] = _parse_times(spec.get("times"))
        sc = cls(**spec)
        sc.validate()
        return sc

    def validate(self):
        """Reject empty or misordered pipelines and bad parameters, before any work."""
        if not isinstance(self.pipeline, list) or not self.pipeline:
            raise ConfigError(f"scenario {self.name!r}: pipeline must be a non-empty list")
        for i, check in enumerate(self.pipeline):
            if check not in CHECKS:
                raise ConfigError(f"unknown check {check!r}")
            if check in self.pipeline[:i]:
                raise ConfigError(f"check {check!r} appears twice")
            for alternatives in PREREQUISITES.get(check, []):
                if not any(a in self.pipeline[:i] for a in alternatives):
                    raise ConfigError(f"{check!r} needs {' or '.join(alternatives)} earlier "
                                      "in the pipeline")
        for name in list(self.hard) + list(self.soft):
            if name not in CHECKS:
                raise ConfigError(f"unknown check {name!r} in hard/soft lists")
        try:
            SpaceParams(float(self.params["alpha"]), float(self.params["beta"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad params: {exc}") from None
        if not isinstance(self.space, dict) or "kind" not in self.space:
            raise ConfigError("space must be a mapping with a 'kind'")
        if not isinstance(self.form, dict) or not ({"local", "jump"} & set(self.form)):
            raise ConfigError("form needs a 'local' and/or 'jump' entry")
        if set(self.form) - {"local", "jump"}:
            raise ConfigError(f"unknown form keys {sorted(set(self.form) - {'local', 'jump'})}")
        if set(self.checks) - set(CHECKS):
            raise ConfigError(f"options for unknown checks {sorted(set(self.checks) - set(CHECKS))}")
        if not self.times or min(self.times) <= 0:
            raise ConfigError("times must be positive")

    def is_soft(self, check: str, hard_all: bool = False) -> bool:
        if hard_all or check in self.hard:
            return False
        return check in self.soft or check in SOFT_BY_DEFAULT

    def to_dict(self):
        return asdict(self)


def _parse_times(spec):
    if spec is None:
        return list(np.geomspace(1.0, 100.0, 16))
    if isinstance(spec, dict):
        if set(spec) == {"geomspace"}:
            lo, hi, num = spec["geomspace"]
            return [float(x) for x in np.geomspace(float(lo), float(hi), int(num))]
        if set(spec) == {"linspace"}:
            lo, hi, num = spec["linspace"]
            return [float(x) for x in np.linspace(float(lo), float(hi), int(num))]
        raise ConfigError("times must be a list or {geomspace|linspace: [lo, hi, num]}")
    try:
        return [float(x) for x in spec]
    except (TypeError, ValueError):
        raise ConfigError("times must be a list of numbers") from None


def load_scenarios(source) -> list:
    """Parse a YAML config holding one scenario or ``{"scenarios": [...]}``.

    ``source`` is a path or an already parsed mapping.
    """
    if isinstance(source, (str, Path)):
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from None
    else:
        data = source
    if isinstance(data, dict) and "scenarios" in data:
        items = data["scenarios"]
        if not isinstance(items, list) or not items:
            raise ConfigError("'scenarios' must be a non-empty list")
    elif isinstance(data, dict):
        items = [data]
    else:
        raise ConfigError("config must be a mapping")
    out = [Scenario.from_dict(item) for item in items]
    names = [s.name for s in out]
    if len(set(names)) != len(names):
        raise ConfigError("scenario names must be unique")
    return out


def bundled_config() -> Path:
    """Path of the YAML file holding the bundled scenarios."""
    return Path(str(resources.files("heatlab") / "scenarios.yaml"))


@dataclass
class CheckRecord:
    name: str
    passed: bool
    soft: bool
    status: str
    values: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    message: str = ""


@dataclass
class VerificationReport:
    scenario: str
    seed: int
    config_hash: str
    environment: dict
    records: list
    exit_code: int
    timings: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict, repr=False)

    @property
    def passed(self) -> bool:
        return self.exit_code == 0

    def to_dict(self):
        """Deterministic content; wall-clock timings are kept out."""
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "environment": self.environment,
            "exit_code": self.exit_code,
            "checks": [asdict(r) for r in self.records],
            "constants": self.constants,
        }


def _plain(obj):
    """Recursively convert to JSON-safe builtins; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else repr(x)
    if obj is None or isinstance(obj, str):
        return obj
    return repr(obj)


def _config_hash(sc: Scenario, seed: int) -> str:
    blob = json.dumps(_plain({"scenario": sc.to_dict(), "seed": seed}), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _environment():
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


class _Context:
    """Lazily built objects shared by the checks of one scenario."""

    def __init__(self, sc: Scenario, seed: int):
        self.sc = sc
        self.seed = seed
        self.alpha = float(sc.params["alpha"])
        self.beta = float(sc.params["beta"])
        space = build_space(sc.space)
        if space.n > sc.max_points:
            raise ConfigError(f"{space.n} points exceed the cap of {sc.max_points}")
        if "R0" in sc.params:
            space = space.with_R0(float(sc.params["R0"]))
        self.space = space
        self.R0 = space.R0
        self.form = assemble_form(space, sc.form.get("local"), sc.form.get("jump"))
        self._table = None
        self.constants = {}  # name -> (value, source)
        self.artifacts = {}

    @property
    def table(self):
        if self._table is None:
            self._table = heat_kernel(self.form, self.sc.times)
        return self._table

    def opts(self, check):
        return dict(self.sc.checks.get(check) or {})

    def tol(self, key, default):
        return float(self.sc.tolerances.get(key, default))

    def window(self, check):
        win = dict(self.sc.window)
        win.update(self.opts(check).get("window", {}))
        return win

    def put(self, name, value, source):
        self.constants[name] = (value, source)

    def get(self, name, default=None):
        return self.constants.get(name, (default, None))


class OutOfRegime(Exception):
    pass


def _check_regularity(ctx):
    C, rep = check_upper_regularity(ctx.space, SpaceParams(ctx.alpha, ctx.beta))
    ctx.put("C_V", C, "regularity")
    return bool(np.isfinite(C)), {"C_fit": C, "argmax_x": rep.argmax_x,
                                  "argmax_r": rep.argmax_r, "grid_ratio": rep.grid_ratio}


def _check_jump_upper(ctx):
    C, rep = check_jump_upper(ctx.form, SpaceParams(ctx.alpha, ctx.beta))
    ctx.put("C_J", C, "jump_upper")
    return rep.passed, {"C_J_fit": C, "argmax": list(rep.argmax), "exponent": rep.exponent}


def _fit_record(fit):
    d = fit.to_dict()
    d.pop("passed")
    return d


def _check_due(ctx):
    fit = bounds.check_due(ctx.table, ctx.alpha, ctx.beta, ctx.R0, ctx.window("due"),
                           ctx.tol("envelope", bounds.DEFAULT_TOLERANCE))
    ctx.put("C_DUE", fit.C, "due")
    return fit.passed, _fit_record(fit)


def _check_ue(ctx):
    fit = bounds.check_ue(ctx.table, ctx.alpha, ctx.beta, ctx.R0, ctx.window("ue"),
                          ctx.tol("envelope", bounds.DEFAULT_TOLERANCE),
                          fit_scale=ctx.opts("ue").get("fit_scale", True))
    ctx.put("C_UE", fit.C, "ue")
    return fit.passed, _fit_record(fit)


def _check_ue_loc(ctx):
    fit = bounds.check_ue_loc(ctx.table, ctx.alpha, ctx.beta, ctx.R0, ctx.window("ue_loc"),
                              ctx.tol("envelope", bounds.DEFAULT_TOLERANCE),
                              theta=ctx.opts("ue_loc").get("theta"))
    ctx.put("C_UE_loc", fit.C, "ue_loc")
    ctx.put("c_UE_loc", fit.c, "ue_loc")
    return fit.passed, _fit_record(fit)


def _ball_opts(ctx, check):
    o = ctx.opts(check)
    diam = ctx.space.diam
    x0 = int(o.get("x0", 0))
    R = float(o.get("R", diam / 8))
    r = float(o.get("r", diam / 4))
    if not 0 < R < R + r <= ctx.R0:
        raise ConfigError(f"{check}: need 0 < R < R + r <= R0")
    return x0, R, r, o


def _check_survival(ctx):
    o = ctx.opts("survival")
    x0 = int(o.get("x0", 0))
    r = float(o.get("r", ctx.R0 / 4))
    if "epsilon" in o and "delta" in o:
        eps, delta = float(o["epsilon"]), float(o["delta"])
        src = "override"
    else:
        delta, eps, _ = cutoff.best_survival_parameters(ctx.form, [x0], r, ctx.beta)
        eps = min(max(eps * (1 + 1e-9), 1e-12), 1 - 1e-12)
        src = "survival"
    res = check_survival(ctx.form, x0, r, eps, delta, ctx.beta)
    ctx.put("epsilon", eps, src)
    ctx.put("delta", delta, src)
    return res.passed, {"epsilon": eps, "delta": delta, "worst": res.worst, "r": r,
                        "t_max": res.t_max, "vacuous": res.vacuous}


def _cib_soundness(ctx, cib, n_random):
    rng = np.random.default_rng(ctx.seed)
    prob = cib._problem
    worst_slack, worst_cert = np.inf, 0.0
    U = rng.standard_normal((n_random, ctx.form.n))
    d_u = np.sum(U * U * np.diag(prob.D), axis=1)
    q_u = np.sum((U @ prob.Q) * U, axis=1)
    m_u = np.sum(U * U * np.diag(prob.M), axis=1)
    for c1, c2, cert in zip(cib.C1_grid, cib.C2_of_C1, cib.certificates):
        lhs = d_u
        rhs = c1 * q_u + c2 / prob.scale * m_u
        scale = np.maximum(1.0, np.abs(rhs))
        worst_slack = min(worst_slack, float(np.min((rhs - lhs) / scale)))
        if c2 > 0:
            l = cert @ prob.D @ cert
            r = c1 * cert @ prob.Q @ cert + c2 / prob.scale * cert @ prob.M @ cert
            worst_cert = max(worst_cert, abs(l - r) / max(abs(r), 1e-300))
    return worst_slack, worst_cert


def _check_cib(ctx):
    x0, R, r, o = _ball_opts(ctx, "cib")
    cut = cutoff.resolvent_cutoff(ctx.form, x0, R, r, ctx.beta)
    cib = cutoff.cib_constants(ctx.form, cut, ctx.beta)
    slack, cert = _cib_soundness(ctx, cib, int(o.get("n_random", 1000)))
    # trade-off point used downstream: minimizes C4 * C3**beta over C1 > 0
    pos = cib.C1_grid > 0
    cost = cib.C2_of_C1[pos] * cib.C1_grid[pos] ** ctx.beta
    k = int(np.argmin(cost))
    C3, C4 = float(cib.C1_grid[pos][k]), float(cib.C2_of_C1[pos][k])
    ctx.put("C3", C3, "cib")
    ctx.put("C4", C4, "cib")
    ctx.put("C0_cutoff", cut.C0, "cib")
    ctx.artifacts["cib_tradeoff"] = cib
    ctx.artifacts["cutoff"] = cut
    sandwich = bool(np.all(cut.phi[ctx.space.dist[x0] < R] >= 1 - 1e-12)
                    and np.all(cut.phi[ctx.space.dist[x0] >= R + r] == 0))
    passed = (slack >= -ctx.tol("inequality", 1e-9) and cert <= 1e-6 and sandwich)
    return passed, {"x0": x0, "R": R, "r": r, "C0": cut.C0, "delta": cut.delta,
                    "epsilon": cut.epsilon, "degraded": cut.degraded, "sandwich": sandwich,
                    "C1_grid": cib.C1_grid, "C2_of_C1": cib.C2_of_C1,
                    "min_slack": slack, "certificate_rel_error": cert,
                    "C3": C3, "C4": C4}


def _check_csa_strong(ctx):
    x0, R, r, o = _ball_opts(ctx, "csa_strong")
    n_list = [int(n) for n in o.get("n_list", [1, 2, 4, 8])]
    lo, hi = o.get("slope_range", [-1.3, -0.7])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rep = cutoff.check_csa_strong(ctx.form, x0, R, r, n_list, ctx.beta,
                                      C4=o.get("C4"))
    ctx.put("C3", rep.C3, "csa_strong")
    ctx.put("C4", rep.C4, "override" if "C4" in o else "csa_strong")
    ctx.artifacts["csa"] = rep
    passed = bool(np.isfinite(rep.slope_c1) and lo <= rep.slope_c1 <= hi)
    return passed, asdict(rep)


def _check_davies_gap_suite(ctx):
    o = ctx.opts("davies_gap_suite")
    rhos = o.get("rho", [2.0, 4.0])
    forms = [truncate(ctx.form, float(rho)) for rho in rhos] + [ctx.form]
    res = davies.davies_gap_suite(forms, int(o.get("n_trials", 50)), seed=ctx.seed,
                                  tol=ctx.tol("inequality", 1e-9))
    return res.passed, {"min_slack": res.min_slack, "n_evaluations": res.n_trials,
                        "rho": rhos, "worst": res.worst}


def _check_truncation_comparison(ctx):
    o = ctx.opts("truncation_comparison")
    rhos = o.get("rho", [2.0, 4.0, 8.0])
    times = o.get("times", [0.1, 1.0, 10.0])
    out, ok = [], True
    for rho in rhos:
        res = davies.truncation_comparison(ctx.form, float(rho), times,
                                           tol=ctx.tol("inequality", 1e-9))
        ok &= res.passed
        out.append({"rho": res.rho, "max_violation": res.max_violation,
                    "tail_sup": res.tail_sup})
    return ok, {"times": times, "per_rho": out}


def _check_nash(ctx):
    due_C, _ = ctx.get("C_DUE")
    C, rep = bounds.check_nash(ctx.form, ctx.alpha, ctx.beta, ctx.R0, due_C,
                               n_random=int(ctx.opts("nash").get("n_random", 200)),
                               seed=ctx.seed)
    ctx.put("C_N", C, "nash")
    return bool(np.isfinite(C)), rep.to_dict()


def _check_offdiag_assembly(ctx):
    o = ctx.opts("offdiag_assembly")
    prov = {}
    C_N, src = ctx.get("C_N")
    if C_N is None:
        C_N, _ = bounds.check_nash(ctx.form, ctx.alpha, ctx.beta, ctx.R0,
                                   ctx.get("C_DUE")[0], seed=ctx.seed)
        src = "offdiag_assembly(nash probe)"
    prov["C_N"] = src
    C3, prov["C3"] = ctx.get("C3")
    C4, prov["C4"] = ctx.get("C4")
    C5, _ = tail_constant(ctx.form, ctx.beta)
    prov["C5"] = "offdiag_assembly(tail fit)"
    C6 = 9.0 * 12.0 ** (2 * ctx.beta) * C4 * C3 ** ctx.beta
    if "C0_override" in o:
        C0, prov["C0"] = float(o["C0_override"]), "override"
    else:
        C0, prov["C0"] = C5 + C6, "C5 + C6"
    radii = o.get("radii", [ctx.R0 / 16, ctx.R0 / 8, ctx.R0 / 4, 0.45 * ctx.R0])
    times = o.get("times", [float(t) for t in np.geomspace(1e-5, 1.0, 11)])
    res = davies.assembled_offdiag(ctx.form, ctx.alpha, ctx.beta, ctx.R0, C_N, C0,
                                   max(C3, 1e-300), times, radii, int(o.get("x0", 0)),
                                   tol=ctx.tol("inequality", 1e-9))
    values = {"C_N": C_N, "C3": C3, "C4": C4, "C5": C5, "C6": C6, "C0": C0,
              "C8": res.constants["C8"], "C12_fit": res.C12_fit,
              "max_violation": res.max_violation, "n_pairs": res.n_pairs,
              "n_out_of_regime": res.n_out_of_regime, "radii": radii, "times": times}
    if res.n_pairs == 0:
        raise OutOfRegime("no (t, r) in the jump-branch regime")
    ctx.put("C12", res.C12_fit, "offdiag_assembly")
    return res.passed, values, prov


def _check_fs_suite(ctx):
    o = ctx.opts("fs_suite")
    insts = bounds.random_fs_instances(int(o.get("n", 200)), seed=ctx.seed)
    res = [bounds.verify_fs(i) for i in insts]
    exact = bounds.verify_fs(bounds.FsInstance(1.0, 2.0, 1.0, 0.0, 1.0, (0.0,), (1.0,),
                                               np.inf, 10.0))
    passed = all(r.passed for r in res) and exact.passed
    return passed, {"n": len(res), "worst_ratio": max(r.worst_ratio for r in res),
                    "exact_margin": exact.margin}


def _check_improvement(ctx):
    beta = ctx.beta
    bp0 = float(ctx.opts("improvement").get("beta_prime0", 2 * beta + 2))
    sched = bounds.improvement_schedule(beta, bp0)
    ok = bool(np.isclose(sched[-1], beta / (beta - 1), rtol=1e-12)
              and np.all(np.diff(sched) > 0))
    fits = []
    if beta > 1:
        for th in sched:
            fit = bounds.check_ue_loc(ctx.table, ctx.alpha, beta, ctx.R0,
                                      ctx.window("improvement"), theta=th)
            fits.append({"theta": th, "C": fit.C, "c": fit.c, "residual": fit.residual})
    return ok, {"beta_prime0": bp0, "schedule": sched, "fits": fits}


def _check_tail_exponent(ctx):
    o = ctx.opts("tail_exponent")
    fit = bounds.tail_exponent_fit(ctx.table, ctx.alpha, ctx.beta, ctx.window("tail_exponent"),
                                   points=o.get("points"))
    expect_local = ctx.form.is_local
    if expect_local:
        target = ctx.beta / (ctx.beta - 1)
        passed = (not fit.flagged) and abs(fit.theta - target) <= float(o.get("tolerance", 0.2))
    else:
        target = None
        passed = fit.flagged
    ctx.put("theta_hat", fit.theta, "tail_exponent")
    return passed, {**fit.to_dict(), "expected": "exponential" if expect_local else "polynomial",
                    "target_theta": target}


_RUNNERS = {
    "regularity": _check_regularity,
    "jump_upper": _check_jump_upper,
    "due": _check_due,
    "ue": _check_ue,
    "ue_loc": _check_ue_loc,
    "survival": _check_survival,
    "cib": _check_cib,
    "csa_strong": _check_csa_strong,
    "davies_gap_suite": _check_davies_gap_suite,
    "truncation_comparison": _check_truncation_comparison,
    "offdiag_assembly": _check_offdiag_assembly,
    "nash": _check_nash,
    "fs_suite": _check_fs_suite,
    "improvement": _check_improvement,
    "tail_exponent": _check_tail_exponent,
}


def run_scenario(scenario, seed: int | None = None, hard_all: bool = False,
                 name: str | None = None) -> VerificationReport:
    """Run a scenario's pipeline in order.

    ``scenario`` is a :class:`Scenario`, a parsed mapping or a config path; with
    several scenarios in one config ``name`` picks one. Config problems raise
    :class:`ConfigError`; numeric failures inside a check are recorded and give
    exit code 3.
    """
    if not isinstance(scenario, Scenario):
        found = load_scenarios(scenario)
        if name is None:
            if len(found) > 1:
                raise ConfigError("config holds several scenarios; pick one by name")
            scenario = found[0]
        else:
            match = [s for s in found if s.name == name]
            if not match:
                raise ConfigError(f"no scenario named {name!r}")
            scenario = match[0]
    sc = scenario
    seed = sc.seed if seed is None else int(seed)
    ctx = _Context(sc, seed)
    records, timings = [], {}
    hard_fail = numeric_fail = False
    for check in sc.pipeline:
        soft = sc.is_soft(check, hard_all)
        start = time.perf_counter()
        prov = {}
        try:
            out = _RUNNERS[check](ctx)
            if len(out) == 3:
                passed, values, prov = out
            else:
                passed, values = out
            status = "pass" if passed else ("soft-fail" if soft else "fail")
            message = ""
        except OutOfRegime as exc:
            passed, values, message = False, {}, str(exc)
            status = "out-of-regime"
        except ConfigError:
            raise
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            passed, values, message = False, {}, f"{type(exc).__name__}: {exc}"
            status = "error"
            numeric_fail = True
        timings[check] = time.perf_counter() - start
        if not passed and not soft and status != "error":
            hard_fail = True
        for key, (val, src) in ctx.constants.items():
            if src == check:
                prov.setdefault(key, "measured")
        records.append(CheckRecord(check, bool(passed), soft, status, _plain(values),
                                   _plain(prov), message))
        log.info("%s: %s (%.2fs)", check, status, timings[check])
    code = 3 if numeric_fail else (1 if hard_fail else 0)
    artifacts = dict(ctx.artifacts)
    if ctx._table is not None:
        artifacts["table"] = ctx._table
    constants = {k: {"value": _plain(v), "source": s} for k, (v, s) in ctx.constants.items()}
    return VerificationReport(sc.name, seed, _config_hash(sc, seed), _environment(),
                              records, code, timings, constants, artifacts)


def emit_report(report: VerificationReport, out_dir, format: str = "json") -> list:
    """Write the report; returns the written paths.

    ``json`` writes ``<scenario>.json`` (byte-stable for a fixed config and
    seed) and ``<scenario>.timings.json``. ``csv-bundle`` adds per-check CSV
    files and kernel slices through the point 0.
    """
    if format not in ("json", "csv-bundle"):
        raise ValueError(f"unknown report format {format!r}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    body = report.to_dict()
    paths = []
    main = out / f"{report.scenario}.json"
    main.write_text(json.dumps(_plain(body), indent=2, sort_keys=True) + "\n")
    paths.append(main)
    tim = out / f"{report.scenario}.timings.json"
    tim.write_text(json.dumps({k: round(v, 6) for k, v in report.timings.items()},
                              indent=2, sort_keys=True) + "\n")
    paths.append(tim)
    if format == "csv-bundle":
        paths += _write_csvs(report, out)
    return paths


def _write_csvs(report, out: Path) -> list:
    paths = []
    prefix = report.scenario
    checks = out / f"{prefix}_checks.csv"
    with open(checks, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["check", "status", "passed", "soft", "message"])
        for r in report.records:
            wr.writerow([r.name, r.status, r.passed, r.soft, r.message])
    paths.append(checks)
    art = report.artifacts
    if "table" in art:
        p = out / f"{prefix}_kernel_slices.csv"
        art["table"].to_csv(p, points=[0])
        paths.append(p)
    if "cib_tradeoff" in art:
        p = out / f"{prefix}_cib_tradeoff.csv"
        art["cib_tradeoff"].to_csv(p)
        paths.append(p)
    if "cutoff" in art:
        p = out / f"{prefix}_cutoff.csv"
        art["cutoff"].to_csv(p)
        paths.append(p)
    if "csa" in art:
        p = out / f"{prefix}_csa_strong.csv"
        rep = art["csa"]
        with open(p, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["n", "c1_required", "c2_scaled", "sup_gap", "half_drop_c1"])
            for row in zip(rep.n_values, rep.c1_required, rep.c2_scaled, rep.sup_gaps,
                           rep.half_drop_c1):
                wr.writerow([repr(float(v)) for v in row])
        paths.append(p)
    return paths
