"""Cutoff functions for concentric balls and the constants of the cutoff inequality.

Two constructions are provided. :func:`resolvent_cutoff` clamps a scaled
killed resolvent ``w = (r**-beta - L^{B'})^{-1} 1`` at level 1;
:func:`averaged_cutoff` averages ``n`` such cutoffs over nested sub-annuli and
tracks the tent profile within ``1/n``. :func:`cib_constants` turns the
"for all u" in the cutoff inequality into one generalized eigenproblem per
trial first constant.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import brentq

from .forms import DirichletForm, energy_measure
from .semigroup import HeatSemigroup, resolvent
from .space import MetricMeasureSpace, ball_mask

__all__ = [
    "CutoffPair",
    "CibConstants",
    "CsaScaling",
    "tent_function",
    "survival_parameters",
    "best_survival_parameters",
    "resolvent_cutoff",
    "averaged_cutoff",
    "feasible_n",
    "cib_constants",
    "required_c1",
    "check_csa_strong",
    "default_c1_grid",
]


def tent_function(space: MetricMeasureSpace, x0: int, R: float, r: float) -> np.ndarray:
    """``Phi(y) = min(((R + r - d(x0, y)) / r)_+, 1)``."""
    if not (R > 0 and r > 0):
        raise ValueError("need 0 < R and r > 0")
    return np.clip((R + r - space.dist[x0]) / r, 0.0, 1.0)


@dataclass
class CutoffPair:
    """A cutoff function of ``(B(x0, R), B(x0, R + r))`` and its tent profile."""

    x0: int
    R: float
    r: float
    phi: np.ndarray
    tent: np.ndarray
    n: int
    construction: str
    C0: float = np.nan
    epsilon: float = np.nan
    delta: float = np.nan
    w: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)
    components: list = field(default_factory=list, repr=False)
    n_requested: int | None = None
    degraded: bool = False

    @property
    def sup_gap(self) -> float:
        """``||phi - Phi||_inf``."""
        return float(np.max(np.abs(self.phi - self.tent)))

    def to_csv(self, path, space: MetricMeasureSpace | None = None):
        """Write ``point,phi,tent[,distance]`` rows."""
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["point", "phi", "tent"] + (["distance"] if space is not None else []))
            for i, (p, t) in enumerate(zip(self.phi, self.tent)):
                row = [i, repr(float(p)), repr(float(t))]
                if space is not None:
                    row.append(repr(float(space.dist[self.x0, i])))
                wr.writerow(row)


def _deficit_curves(form: DirichletForm, centers, r: float, times) -> np.ndarray:
    """Worst ``1 - P_t^B 1_B`` on ``B/4`` over balls ``B(z, r)``, one value per time."""
    space = form.space
    times = np.atleast_1d(np.asarray(times, dtype=float))
    worst = np.zeros(times.size)
    seen = set()
    for z in np.atleast_1d(centers):
        mask = ball_mask(space, int(z), r)
        quarter = ball_mask(space, int(z), r / 4)
        key = (mask.tobytes(), quarter.tobytes())
        if key in seen or not quarter.any():
            continue
        seen.add(key)
        sg = HeatSemigroup(form, mask)
        coef = sg.evecs.T @ sg.sqrt_mass
        q = quarter[sg.index]
        rows = sg.evecs[q] / sg.sqrt_mass[q, None]
        surv = rows @ (np.exp(np.outer(sg.evals, times)) * coef[:, None])
        worst = np.maximum(worst, (1.0 - surv).max(axis=0))
    return worst


def survival_parameters(form: DirichletForm, centers, r: float, delta: float,
                        beta: float) -> float:
    """Worst survival deficit ``1 - P_t^B 1_B`` on ``B/4`` at ``t = (delta r)**beta``.

    ``B`` runs over the balls ``B(z, r)`` with ``z`` in ``centers``. The deficit
    grows with ``t``, so this is the smallest ``epsilon`` for which the
    survival estimate holds on those balls for all ``t**(1/beta) <= delta r``.
    """
    return float(_deficit_curves(form, centers, r, [(delta * r) ** beta])[0])


DELTA_GRID = np.geomspace(0.01, 0.9, 24)


def best_survival_parameters(form: DirichletForm, centers, r: float, beta: float,
                             deltas=DELTA_GRID):
    """``(delta, epsilon, C0)`` minimizing ``C0`` over a grid of ``delta``."""
    deltas = np.asarray(deltas, dtype=float)
    eps = np.minimum(_deficit_curves(form, centers, r, (deltas * r) ** beta), 1.0)
    db = deltas ** beta
    with np.errstate(divide="ignore"):
        c0 = np.where(eps < 1, 1.0 / (db * np.exp(-db) * (1.0 - eps)), np.inf)
    k = int(np.argmin(c0))
    if not np.isfinite(c0[k]):
        raise ValueError("no delta gives a survival deficit below 1")
    return float(deltas[k]), float(eps[k]), float(c0[k])


def resolvent_cutoff(form: DirichletForm, x0: int, R: float, r: float, beta: float,
                     lam: float | None = None, epsilon: float | None = None,
                     delta: float | None = None) -> CutoffPair:
    """Resolvent cutoff of ``(B(x0, R), B(x0, R + r))``.

    ``w`` solves ``(lam - L^{B'}) w = 1`` on ``B' = B(x0, R + r)`` with
    ``lam = r**-beta``; ``v = C0 w / r**beta`` with
    ``C0 = 1 / (delta**beta exp(-delta**beta) (1 - epsilon))`` and ``phi = min(v, 1)``.

    When ``epsilon`` is omitted it is measured on the balls ``B(z, r)``, ``z``
    in the inner ball, which is what makes ``phi = 1`` there. When ``delta`` is
    omitted too, the pair minimizing ``C0`` is used. A cutoff that falls below
    1 on the inner ball is returned with ``degraded=True`` and a warning.
    """
    space = form.space
    if not (R > 0 and r > 0):
        raise ValueError("need 0 < R < R + r")
    if lam is None:
        lam = r ** (-beta)
    inner = ball_mask(space, x0, R)
    outer = ball_mask(space, x0, R + r)
    w = resolvent(form, outer, lam)
    if np.any(w > (1.0 / lam) * (1 + 1e-9)):
        raise ArithmeticError("resolvent exceeds 1/lam; form is not Markovian")
    centers = np.flatnonzero(inner)
    if epsilon is None and delta is None:
        delta, epsilon, _ = best_survival_parameters(form, centers, r, beta)
    elif epsilon is None:
        epsilon = survival_parameters(form, centers, r, delta, beta)
    elif delta is None:
        raise ValueError("delta is required when epsilon is given")
    if not 0 <= epsilon < 1:
        raise ValueError("survival deficit must lie in [0, 1)")
    db = delta ** beta
    C0 = 1.0 / (db * np.exp(-db) * (1.0 - epsilon))
    v = C0 * w / r ** beta
    phi = np.minimum(v, 1.0)
    degraded = bool(np.any(phi[inner] < 1.0))
    if degraded:
        warnings.warn("resolvent cutoff is below 1 on the inner ball; "
                      "survival parameters too optimistic", RuntimeWarning)
    return CutoffPair(x0, R, r, phi, tent_function(space, x0, R, r), 1, "resolvent",
                      C0=C0, epsilon=float(epsilon), delta=float(delta), w=w, v=v,
                      degraded=degraded)


def feasible_n(space: MetricMeasureSpace, x0: int, R: float, r: float) -> int:
    """Number of distinct distances from ``x0`` in ``[R, R + r)``."""
    d = np.unique(space.dist[x0])
    return int(np.count_nonzero((d >= R) & (d < R + r)))


def averaged_cutoff(form: DirichletForm, x0: int, R: float, r: float, n: int,
                    beta: float, delta: float | None = None) -> CutoffPair:
    """Average of ``n`` resolvent cutoffs of ``(B_{k-1}, B_k)``, ``B_k = B(x0, R + k r/n)``.

    ``n`` is capped at :func:`feasible_n` (finite metrics quantize radii); the
    effective value is ``result.n`` and the request is ``result.n_requested``.
    """
    if n < 1:
        raise ValueError("n must be a positive integer")
    space = form.space
    n_req = int(n)
    n = max(1, min(n_req, feasible_n(space, x0, R, r)))
    width = r / n
    parts = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for k in range(1, n + 1):
            parts.append(resolvent_cutoff(form, x0, R + (k - 1) * width, width, beta,
                                          delta=delta))
    if n == 1:
        out = parts[0]
        out.n_requested = n_req
        return out
    phi = np.mean([p.phi for p in parts], axis=0)
    return CutoffPair(x0, R, r, phi, tent_function(space, x0, R, r), n, "averaged",
                      C0=max(p.C0 for p in parts), epsilon=max(p.epsilon for p in parts),
                      delta=parts[0].delta, components=[p.phi for p in parts],
                      n_requested=n_req, degraded=any(p.degraded for p in parts))


def default_c1_grid(kmin: int = -12, kmax: int = 8) -> np.ndarray:
    """``{0} U {2**k : kmin <= k <= kmax}``."""
    return np.concatenate([[0.0], 2.0 ** np.arange(kmin, kmax + 1)])


class _CibProblem:
    """The pencil ``(D_phi - C1 Q, M_mu)`` for one cutoff function."""

    def __init__(self, form, phi, r, beta):
        gamma = energy_measure(form, phi).density
        self.D = np.diag(gamma * form.mass)
        self.Q = form.quadratic_matrix()
        self.M = np.diag(form.mass)
        self.scale = r ** beta
        self.n = form.n

    def top(self, c1):
        vals, vecs = scipy.linalg.eigh(self.D - c1 * self.Q, self.M,
                                       subset_by_index=[self.n - 1, self.n - 1])
        return float(vals[-1]), vecs[:, -1]

    def c2(self, c1):
        lam, vec = self.top(c1)
        return self.scale * max(lam, 0.0), vec


@dataclass
class CibConstants:
    """Trade-off between the two constants of the cutoff inequality.

    ``C2_of_C1[i]`` is the smallest ``C2`` such that
    ``int u**2 dGamma(phi) <= C1_grid[i] E(u) + C2 / r**beta int u**2 dmu`` for
    every ``u``; ``certificates[i]`` is a maximizing ``u``.
    """

    C1_grid: np.ndarray
    C2_of_C1: np.ndarray
    certificates: np.ndarray = field(repr=False)
    r: float = 1.0
    beta: float = 1.0
    _problem: _CibProblem | None = field(default=None, repr=False)

    def c2(self, C1: float) -> float:
        """Smallest ``C2`` for an arbitrary ``C1`` (solved exactly)."""
        return self._problem.c2(float(C1))[0]

    def to_csv(self, path):
        """Write ``C1,C2,certificate_norm`` rows."""
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["C1", "C2", "certificate_norm"])
            for c1, c2, u in zip(self.C1_grid, self.C2_of_C1, self.certificates):
                wr.writerow([repr(float(c1)), repr(float(c2)),
                             repr(float(np.linalg.norm(u)))])


def cib_constants(form: DirichletForm, cutoff, beta: float, r: float | None = None,
                  C1_grid=None) -> CibConstants:
    """Smallest second constant ``C2`` for each trial first constant ``C1``.

    ``C2(C1) = r**beta * max(lambda_max(D_phi - C1 Q, M_mu), 0)`` where ``D_phi``
    is ``u -> int u**2 dGamma(phi)``, ``Q`` is ``u -> E(u, u)`` and ``M_mu`` is
    ``u -> int u**2 dmu``. The top generalized eigenvector is the certificate.

    Parameters
    ----------
    cutoff : CutoffPair or ndarray
        The cutoff function; ``r`` is read from a CutoffPair when not given.
    """
    if isinstance(cutoff, CutoffPair):
        phi = cutoff.phi
        r = cutoff.r if r is None else r
    else:
        phi = np.asarray(cutoff, dtype=float)
        if r is None:
            raise ValueError("r is required when passing a bare function")
    grid = default_c1_grid() if C1_grid is None else np.asarray(C1_grid, dtype=float)
    prob = _CibProblem(form, phi, r, beta)
    C2 = np.empty(grid.size)
    certs = np.empty((grid.size, form.n))
    for i, c1 in enumerate(grid):
        C2[i], certs[i] = prob.c2(c1)
    return CibConstants(grid, C2, certs, r=r, beta=beta, _problem=prob)


def required_c1(form: DirichletForm, phi, r: float, beta: float, target_c2: float,
                c1_max: float = 1e6) -> float:
    """Smallest ``C1`` whose optimal ``C2`` does not exceed ``target_c2``.

    Returns 0 when ``C1 = 0`` already suffices and ``inf`` when no ``C1`` up to
    ``c1_max`` does (the target is below the ``C1 -> inf`` floor).
    """
    prob = _CibProblem(form, phi, r, beta)

    def excess(c1):
        return prob.scale * prob.top(c1)[0] - target_c2

    if excess(0.0) <= 0:
        return 0.0
    if excess(c1_max) > 0:
        return np.inf
    hi = 1.0
    while excess(hi) > 0:
        hi *= 2.0
    lo = hi / 2.0
    while lo > 1e-300 and excess(lo) <= 0:
        hi, lo = lo, lo / 2.0
    return float(brentq(excess, lo, hi, xtol=1e-14, rtol=1e-10))


@dataclass
class CsaScaling:
    """How the first constant of the cutoff inequality scales with ``n``.

    ``c1_required[i]`` is the smallest first constant for the averaged cutoff
    with ``n_values[i]`` terms when the second constant is held at
    ``C4 * n**beta``. ``slope_c1`` is the log-log slope over the strictly
    positive entries (``nan`` with fewer than two); ``c1_vanishes_at`` lists
    the ``n`` for which no energy term is needed at all.
    """

    n_values: list
    c1_required: list
    c2_scaled: list
    sup_gaps: list
    slope_c1: float
    slope_c2_scaled: float
    C3: float
    C4: float
    c1_vanishes_at: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    half_drop_c1: list = field(default_factory=list)
    slope_half_drop: float = np.nan


def _loglog_slope(n, y):
    n = np.asarray(n, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(y) & (y > 0)
    if ok.sum() < 2:
        return np.nan
    return float(np.polyfit(np.log(n[ok]), np.log(y[ok]), 1)[0])


def check_csa_strong(form: DirichletForm, x0: int, R: float, r: float, n_list,
                     beta: float, C4: float | None = None,
                     delta: float | None = None) -> CsaScaling:
    """Measure the constants of the improved cutoff inequality along ``n``.

    For each feasible ``n`` the averaged cutoff ``phi_n`` is built and the
    smallest first constant keeping the second at ``C4 n**beta`` is found.
    ``C4`` defaults to the geometric mean of the ``n = 1`` trade-off endpoints
    ``C2(0)`` and ``C2(inf) = r**beta E(phi_1) / mu(M)``, which puts the
    ``n = 1`` target strictly inside its attainable range.

    As a diagnostic that does not depend on ``C4``, ``half_drop_c1`` records
    the first constant at which ``C2`` falls to half of ``C2(0)``.
    ``C3 = max_n n * c1_required(n)``.
    """
    space = form.space
    cap = feasible_n(space, x0, R, r)
    n_ok, skipped = [], []
    for n in n_list:
        (n_ok if n <= cap else skipped).append(int(n))
    if skipped:
        warnings.warn(f"skipping infeasible n values {skipped} (at most {cap} annuli)",
                      RuntimeWarning)
    if not n_ok:
        raise ValueError("no feasible n")
    cutoffs = [averaged_cutoff(form, x0, R, r, n, beta, delta=delta) for n in n_ok]
    probs = [_CibProblem(form, c.phi, r, beta) for c in cutoffs]
    if C4 is None:
        phi1 = cutoffs[0].phi if n_ok[0] == 1 else resolvent_cutoff(
            form, x0, R, r, beta, delta=delta).phi
        gamma = energy_measure(form, phi1)
        hi = r ** beta * float(gamma.density.max())
        lo = r ** beta * gamma.integral() / space.total_mass
        C4 = float(np.sqrt(hi * lo))
    c1s, halves = [], []
    for n, cut, prob in zip(n_ok, cutoffs, probs):
        c1s.append(required_c1(form, cut.phi, r, beta, C4 * n ** beta))
        halves.append(required_c1(form, cut.phi, r, beta, 0.5 * prob.c2(0.0)[0]))
    c2_scaled = [prob.c2(c1)[0] / n ** beta if np.isfinite(c1) else np.inf
                 for prob, n, c1 in zip(probs, n_ok, c1s)]
    finite = [n * c for n, c in zip(n_ok, c1s) if np.isfinite(c)]
    return CsaScaling(
        n_values=n_ok, c1_required=c1s, c2_scaled=c2_scaled,
        sup_gaps=[c.sup_gap for c in cutoffs],
        slope_c1=_loglog_slope(n_ok, c1s),
        slope_c2_scaled=_loglog_slope(n_ok, c2_scaled),
        C3=float(max(finite)) if finite else np.inf, C4=C4,
        c1_vanishes_at=[n for n, c in zip(n_ok, c1s) if c == 0.0],
        skipped=skipped, half_drop_c1=halves,
        slope_half_drop=_loglog_slope(n_ok, halves))
