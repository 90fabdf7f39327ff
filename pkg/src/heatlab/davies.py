"""Davies perturbation: oscillation, perturbed semigroups, the energy
inequality behind the method, parameter selection and off-diagonal bounds.

On a finite space every form is a jump form (nearest-neighbour conductances
included), so the jump-type amplitude ``Lambda = exp(2 osc(psi))`` is used
throughout, with the oscillation taken over pairs at distance ``<= rho`` and
over every pair that carries conductance in the truncated form.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from math import ceil, exp, log, sqrt

import numpy as np

from .forms import (DirichletForm, energy, energy_measure, jump_tail_mass,
                    truncate)
from .semigroup import HeatSemigroup

__all__ = [
    "OutOfRegimeError",
    "DaviesConfig",
    "PerturbationLedger",
    "oscillation",
    "perturbation_ledger",
    "perturbed_semigroup",
    "davies_gap",
    "davies_gap_suite",
    "truncation_energy_slack",
    "jump_eta",
    "jump_lambda",
    "choose_parameters",
    "proof_constants",
    "offdiag_bound",
    "truncation_comparison",
    "TruncationComparison",
    "assembled_offdiag",
    "AssembledBound",
    "PerfectCutoffDiagnostic",
    "perfect_cutoff_diagnostic",
]


class OutOfRegimeError(ValueError):
    """Raised when ``r**beta / t`` is too small for the requested parameters."""


def oscillation(space, f, rho: float) -> float:
    """``max |f(y) - f(x)|`` over pairs with ``d(x, y) <= rho``."""
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    f = np.asarray(f, dtype=float)
    diff = np.abs(f[:, None] - f[None, :])
    return float(diff[space.dist <= rho].max())


def _active_oscillation(form: DirichletForm, psi) -> float:
    """Oscillation of ``psi`` over pairs within ``rho`` or carrying conductance."""
    psi = np.asarray(psi, dtype=float)
    diff = np.abs(psi[:, None] - psi[None, :])
    pairs = form.conductance > 0
    if np.isfinite(form.rho):
        pairs |= form.space.dist <= form.rho
    else:
        pairs[:] = True
    return float(diff[pairs].max()) if pairs.any() else 0.0


@dataclass
class PerturbationLedger:
    """Quantities attached to one perturbation ``psi``."""

    psi: np.ndarray = field(repr=False)
    osc_rho: float
    Lambda: float
    branch: str
    p_schedule: tuple = (1, 2, 4, 8)


def perturbation_ledger(form: DirichletForm, psi, branch: str = "jump") -> PerturbationLedger:
    """``Lambda = exp(2 osc)`` on the jump branch and ``1`` on the local branch."""
    osc = _active_oscillation(form, psi)
    if branch == "jump":
        lam = exp(2.0 * osc)
    elif branch == "local":
        lam = 1.0
    else:
        raise ValueError(f"unknown branch {branch!r}")
    return PerturbationLedger(np.asarray(psi, dtype=float), osc, lam, branch)


def perturbed_semigroup(form: DirichletForm, psi, t: float, f,
                        semigroup: HeatSemigroup | None = None) -> np.ndarray:
    """``Q_t^psi f = e^psi Q_t(e^-psi f)`` for the semigroup of ``form``."""
    psi = np.asarray(psi, dtype=float)
    f = np.asarray(f, dtype=float)
    sg = semigroup if semigroup is not None else HeatSemigroup(form)
    return np.exp(psi) * sg.apply(t, np.exp(-psi) * f)


def davies_gap(form: DirichletForm, psi, f, p: float, variant: str = "minus") -> float:
    """Slack of ``E(e^-psi f, e^psi f^(2p-1)) >= E(f^p)/(2p) - 9p Lambda int f^2p dGamma(psi)``.

    ``form`` is the (truncated) form the inequality is stated for;
    ``variant="plus"`` swaps the signs of ``psi`` in the left side.
    """
    f = np.asarray(f, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if np.any(f < 0):
        raise ValueError("f must be nonnegative")
    if p < 1:
        raise ValueError("p must be at least 1")
    sgn = {"minus": 1.0, "plus": -1.0}[variant]
    lhs = energy(form, np.exp(-sgn * psi) * f, np.exp(sgn * psi) * f ** (2 * p - 1))
    Lam = perturbation_ledger(form, psi).Lambda
    rhs = energy(form, f ** p) / (2 * p) - 9 * p * Lam * energy_measure(form, psi).integral(f ** (2 * p))
    return float(lhs - rhs)


@dataclass
class SuiteResult:
    passed: bool
    min_slack: float
    n_trials: int
    worst: dict = field(default_factory=dict)


def davies_gap_suite(forms, n_trials: int = 1000, p_values=(1, 2, 4), seed: int = 0,
                     tol: float = 1e-9) -> SuiteResult:
    """Random ``(f >= 0, psi, p)`` for each form, both sign variants.

    The slack is compared against ``-tol`` times the size of the terms, so
    round-off in large energies is not mistaken for a violation.
    """
    rng = np.random.default_rng(seed)
    if isinstance(forms, DirichletForm):
        forms = [forms]
    worst, info = np.inf, {}
    count = 0
    for fi, form in enumerate(forms):
        n = form.n
        for _ in range(n_trials):
            f = rng.random(n) * rng.choice([0.1, 1.0, 3.0])
            if rng.random() < 0.3:
                f[rng.random(n) < 0.5] = 0.0
            psi = rng.standard_normal(n) * rng.choice([0.05, 0.5, 2.0])
            p = float(rng.choice(p_values))
            for variant in ("minus", "plus"):
                s = davies_gap(form, psi, f, p, variant)
                scale = max(1.0, energy(form, f ** p))
                if s / scale < worst:
                    worst = s / scale
                    info = {"form": fi, "p": p, "variant": variant, "slack": s}
                count += 1
    return SuiteResult(bool(worst >= -tol), float(worst), count, info)


def truncation_energy_slack(form: DirichletForm, rho: float, f) -> float:
    """``4 ||f||^2 sup_x J-mass beyond rho - (E(f) - E_rho(f))``, which is ``>= 0``."""
    f = np.asarray(f, dtype=float)
    gap = energy(form, f) - energy(truncate(form, rho), f)
    l2 = float(np.sum(f * f * form.mass))
    return 4.0 * l2 * jump_tail_mass(form, rho) - gap


def jump_eta(alpha: float, beta: float) -> float:
    """Positive root of ``4(beta+1)(eta + 2 eta**2) = beta/(alpha+beta)``."""
    k = beta / (4.0 * (beta + 1) * (alpha + beta))
    return (-1.0 + sqrt(1.0 + 8.0 * k)) / 4.0


def jump_lambda(alpha: float, beta: float, r: float, t: float) -> float:
    """``lambda = ((alpha+beta)/beta) log(r**beta / t)``."""
    return (alpha + beta) / beta * log(r ** beta / t)


@dataclass
class DaviesConfig:
    """Perturbation amplitude and the derived rates for one ``(r, t)``."""

    lam: float
    eta: float
    rho: float
    n: int
    c1: float
    c2: float
    T: float
    K0: float
    branch: str
    r: float
    t: float
    alpha: float
    beta: float
    p: float = 1.0
    C0: float = 1.0
    C3: float = 1.0
    provenance: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def choose_parameters(alpha: float, beta: float, r: float, t: float, branch: str = "jump",
                      C0: float = 1.0, C3: float = 1.0, p: float = 1.0,
                      c2_threshold: float | None = None,
                      c4_threshold: float | None = None) -> DaviesConfig:
    """Select ``(lambda, eta, rho, n)`` and the rates ``T``, ``K0``.

    Jump branch: ``eta`` solves ``4(beta+1)(eta + 2 eta**2) = beta/(alpha+beta)``,
    ``lambda = ((alpha+beta)/beta) log(r**beta/t)``, ``c2 = eta + 2 eta**2``,
    ``c1 = 2(beta+1) c2``, ``T = exp(c1 lambda) / rho**beta`` and
    ``n = ceil(6 p lambda exp(lambda c2) sqrt(C3))``.
    Local branch: ``eta = 1/2``, ``lambda = (r**beta / (4 C0 t))**(1/(2 beta + 1))``,
    ``T = 1/r**beta``.
    Both require ``lambda >= 1/eta``; ``c2_threshold``/``c4_threshold`` add an
    explicit lower bound on ``r**beta/t``.
    """
    if not (r > 0 and t > 0):
        raise ValueError("r and t must be positive")
    ratio = r ** beta / t
    if branch == "jump":
        if c2_threshold is not None and ratio < c2_threshold:
            raise OutOfRegimeError(f"r^beta/t = {ratio:.4g} below threshold {c2_threshold}")
        eta = jump_eta(alpha, beta)
        lam = jump_lambda(alpha, beta, r, t)
        c2 = eta + 2 * eta ** 2
        c1 = 2 * (beta + 1) * c2
        rho = eta * r
        T = exp(c1 * lam) / rho ** beta
        if lam * eta < 1:
            raise OutOfRegimeError(
                f"lambda = {lam:.4g} is below 1/eta = {1 / eta:.4g}; use the on-diagonal bound")
        n = int(ceil(6 * p * lam * exp(lam * c2) * sqrt(C3)))
    elif branch == "local":
        if c4_threshold is not None and ratio < c4_threshold:
            raise OutOfRegimeError(f"r^beta/t = {ratio:.4g} below threshold {c4_threshold}")
        eta = 0.5
        lam = (ratio / (4.0 * C0)) ** (1.0 / (2 * beta + 1))
        c1 = c2 = 0.0
        rho = eta * r
        T = 1.0 / r ** beta
        if lam * eta < 1:
            raise OutOfRegimeError(f"lambda = {lam:.4g} is below 2; use the on-diagonal bound")
        n = int(ceil(6 * p * lam * sqrt(C3)))
    else:
        raise ValueError(f"unknown branch {branch!r}")
    K0 = T * C0 * lam ** (2 * beta + 2)
    return DaviesConfig(lam, eta, rho, n, c1, c2, T, K0, branch, r, t, alpha, beta,
                        p, C0, C3)


def proof_constants(alpha: float, beta: float, C_N: float) -> dict:
    """Chain from a Nash constant to the ``L1 -> Linf`` constant ``C8``.

    ``C_N' = 4 C_N exp(12 beta / alpha)``,
    ``C7 = (C_N' alpha/beta)**(alpha/(2 beta)) 2**(2 alpha (beta+1)/beta)``,
    ``C8 = 2**(alpha/beta) C7**2``.
    """
    CNp = 4.0 * C_N * exp(12.0 * beta / alpha)
    C7 = (CNp * alpha / beta) ** (alpha / (2 * beta)) * 2.0 ** (2 * alpha * (beta + 1) / beta)
    C8 = 2.0 ** (alpha / beta) * C7 ** 2
    return {"C_N": C_N, "C_N_prime": CNp, "C7": C7, "C8": C8}


def offdiag_bound(config: DaviesConfig | None, alpha: float, beta: float, R0: float,
                  d, t, C: float = 1.0, c: float = 1.0, improved: bool = False):
    """Envelope predicted by the Davies argument.

    Jump branch: ``min(C exp(t/(4 R0**beta)) t d**-(alpha+beta),
    C t**(-alpha/beta) exp(t/R0**beta))``. Local branch:
    ``C t**(-alpha/beta) exp(t/(4 R0**beta)) exp(-c (d/t**(1/beta))**(beta/(beta'-1)))``
    with ``beta' = 2 beta + 2``, or ``beta' = beta`` when ``improved``.
    ``config`` selects the branch (``None`` means jump).
    """
    d = np.asarray(d, dtype=float)
    branch = "jump" if config is None else config.branch
    diag = C * t ** (-alpha / beta) * np.exp(t / R0 ** beta)
    if branch == "jump":
        with np.errstate(divide="ignore"):
            far = C * np.exp(t / (4 * R0 ** beta)) * t * d ** (-(alpha + beta))
        return np.minimum(far, diag)
    bp = beta if improved else 2 * beta + 2
    if bp == 1:
        raise ValueError("beta' = 1 has no exponent")
    theta = beta / (bp - 1)
    return (C * t ** (-alpha / beta) * np.exp(t / (4 * R0 ** beta))
            * np.exp(-c * (d / t ** (1.0 / beta)) ** theta))


@dataclass
class TruncationComparison:
    passed: bool
    max_violation: float
    rho: float
    times: list
    tail_sup: float
    per_time: list


def truncation_comparison(form: DirichletForm, rho: float, times, tol: float = 1e-9,
                          cache_dir=None) -> TruncationComparison:
    """Check ``p_t <= q_t^(rho) + 2t sup_{d >= rho} J`` on every pair."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    full = HeatSemigroup(form, cache_dir=cache_dir)
    trunc = HeatSemigroup(truncate(form, rho), cache_dir=cache_dir)
    far = form.space.dist >= rho
    sup_j = float(form.jump_density[far].max()) if far.any() else 0.0
    per = []
    for t in np.atleast_1d(times):
        v = full.kernel(t) - trunc.kernel(t) - 2 * t * sup_j
        per.append(float(v.max()))
    worst = max(per)
    return TruncationComparison(worst <= tol, worst, float(rho),
                                [float(t) for t in np.atleast_1d(times)], sup_j, per)


@dataclass
class AssembledBound:
    """Exact kernels against the bound assembled from measured constants."""

    passed: bool
    max_violation: float
    C12_fit: float
    n_pairs: int
    n_out_of_regime: int
    constants: dict
    samples: list = field(default_factory=list, repr=False)


def assembled_offdiag(form: DirichletForm, alpha: float, beta: float, R0: float,
                      C_N: float, C0: float, C3: float, times, radii, x0: int = 0,
                      tol: float = 1e-9) -> AssembledBound:
    """Compare ``p_t(x, y)`` with the Davies bound for ``x in B(x0, r)``, ``y`` outside ``B(x0, 2r)``.

    For each in-regime ``(t, r)`` the bound is
    ``q <= C8 t**(-alpha/beta) exp(t/(4 R0**beta)) exp(2 C0 lam**(2b+2) T t - lam)``
    for the truncated kernel, plus ``2 t sup_{d >= rho} J`` for the full one.
    ``C12_fit`` is the smallest constant with
    ``p_t <= C12 exp(t/(4 R0**beta)) t / d**(alpha+beta)`` on those pairs.
    """
    consts = proof_constants(alpha, beta, C_N)
    C8 = consts["C8"]
    sg = HeatSemigroup(form)
    dist = form.space.dist
    worst, c12, pairs, skipped = -np.inf, 0.0, 0, 0
    samples = []
    for t in np.atleast_1d(times):
        P = sg.kernel(float(t))
        for r in np.atleast_1d(radii):
            if not 0 < 2 * r < R0 + 1e-12:
                skipped += 1
                continue
            try:
                cfg = choose_parameters(alpha, beta, r, float(t), "jump", C0=C0, C3=C3)
            except OutOfRegimeError:
                skipped += 1
                continue
            xs = dist[x0] < r
            ys = dist[x0] >= 2 * r
            if not (xs.any() and ys.any()):
                skipped += 1
                continue
            far = dist >= cfg.rho
            sup_j = float(form.jump_density[far].max()) if far.any() else 0.0
            # exponent may overflow to inf; the bound is then vacuous but true
            with np.errstate(over="ignore"):
                q_bound = (C8 * t ** (-alpha / beta) * exp(t / (4 * R0 ** beta))
                           * np.exp(2 * C0 * cfg.lam ** (2 * beta + 2) * cfg.T * t - cfg.lam))
            bound = q_bound + 2 * t * sup_j
            block = P[np.ix_(xs, ys)]
            worst = max(worst, float(block.max() - bound))
            d = dist[np.ix_(xs, ys)]
            env = exp(t / (4 * R0 ** beta)) * t / d ** (alpha + beta)
            c12 = max(c12, float((block / env).max()))
            pairs += block.size
            samples.append({"t": float(t), "r": float(r), "lam": cfg.lam,
                            "max_p": float(block.max()), "bound": float(bound)})
    return AssembledBound(bool(pairs > 0 and worst <= tol), float(worst), c12, pairs,
                          skipped, consts, samples)


@dataclass
class PerfectCutoffDiagnostic:
    """Distance of the averaged cutoff to the tent against ``1/(6 lam p)**2``."""

    n_requested: int
    n_used: int
    sup_gap: float
    target: float
    within: bool


def perfect_cutoff_diagnostic(form: DirichletForm, config: DaviesConfig, x0: int,
                              R: float, r: float, beta: float) -> PerfectCutoffDiagnostic:
    """Build the averaged cutoff with ``config.n`` terms and measure ``||phi - Phi||``.

    Discrete annuli cap the usable ``n``, so ``within`` is informative only.
    """
    from .cutoff import averaged_cutoff

    cut = averaged_cutoff(form, x0, R, r, config.n, beta)
    target = 1.0 / (6 * config.lam * config.p) ** 2
    return PerfectCutoffDiagnostic(int(config.n), int(cut.n), float(cut.sup_gap), target,
                                   bool(cut.sup_gap <= target))
