"""Heat kernel bound checkers, the Nash ratio, the ODE comparison bound and
the exponent-improvement schedule.

Envelope checks compare a kernel table with

* on-diagonal:  ``C t**(-alpha/beta) exp(t / R0**beta)``,
* stable-like:  the same times ``(1 + d / (c t**(1/beta)))**-(alpha+beta)``,
* local type:   the same times ``exp(-(d / (c t**(1/beta)))**(beta/(beta-1)))``,

inside a scaling window (see :class:`Window`). ``C`` is always the smallest
constant making the envelope an upper bound on the window. The residual is
half the spread of ``log(p / envelope)`` for the best scale ``c``: zero when
the kernel has exactly the envelope's shape, ``log 2 / 2`` when it wanders by
a factor 2. A fit passes when the residual is within its tolerance.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from math import ceil, isclose

import numpy as np
import scipy.integrate
from scipy.optimize import minimize_scalar

from .forms import DirichletForm, energy
from .semigroup import HeatKernelTable, HeatSemigroup
from .space import MetricMeasureSpace, ball_mask

__all__ = [
    "Window",
    "BoundFit",
    "TailExponentFit",
    "NashReport",
    "FsInstance",
    "FsResult",
    "IterationState",
    "check_due",
    "check_ue",
    "check_ue_loc",
    "synthetic_table",
    "tail_exponent_fit",
    "check_nash",
    "nash_ratio",
    "fs_bound",
    "verify_fs",
    "random_fs_instances",
    "improvement_schedule",
    "iteration_states",
    "weighted_tail_mass",
]

DEFAULT_TOLERANCE = 0.1


@dataclass
class Window:
    """Scaling window for envelope fits.

    Attributes
    ----------
    t_min, t_max : float or None
        Time range; ``t_max`` defaults to the mixing time ``1/gap`` when the
        table knows its spectral gap, ``t_min`` to the first table time.
    d_min_steps : float
        Off-diagonal pairs need ``d > d_min_steps * min_distance`` (lattice
        scale excluded). Diagonal entries are always kept.
    d_max : float or None
        Largest distance; defaults to ``diam / 2`` so that wrap-around images
        on periodic spaces stay small.
    rel_floor : float
        Entries with ``p_t(x, y) < rel_floor * p_t(x, x)`` are dropped; this
        removes the large-deviation tail where lattice kernels leave every
        continuum shape.
    """

    t_min: float | None = None
    t_max: float | None = None
    d_min_steps: float = 2.0
    d_max: float | None = None
    rel_floor: float = 1e-4

    def resolve(self, table: HeatKernelTable) -> "Window":
        t_min = float(table.times[0]) if self.t_min is None else float(self.t_min)
        if self.t_max is not None:
            t_max = float(self.t_max)
        elif table.spectral_gap > 0:
            t_max = min(float(table.times[-1]), 1.0 / table.spectral_gap)
        else:
            t_max = float(table.times[-1])
        d_max = table.space.diam / 2 if self.d_max is None else float(self.d_max)
        return Window(t_min, t_max, self.d_min_steps, d_max, self.rel_floor)

    @classmethod
    def from_dict(cls, spec) -> "Window":
        if spec is None:
            return cls()
        if isinstance(spec, Window):
            return spec
        unknown = set(spec) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown window keys {sorted(unknown)}")
        return cls(**spec)


@dataclass
class BoundFit:
    """Result of fitting one envelope to a kernel table."""

    condition: str
    C: float
    c: float | None
    window: dict
    residual: float
    tolerance: float
    passed: bool
    n_samples: int
    exponent: float | None = None
    argmax: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _norm_log(table, alpha, beta, R0, k):
    """``log p_t + (alpha/beta) log t - t / R0**beta`` at the ``k``-th time."""
    t = table.times[k]
    with np.errstate(divide="ignore"):
        return np.log(table.kernels[k]) + (alpha / beta) * np.log(t) - t / R0 ** beta


def _samples(table, alpha, beta, R0, win, diagonal_only=False):
    """Per ``(t, d)`` cell the extreme normalized log-kernel values in the window.

    Returns ``t, d, hi, lo`` arrays with one entry per occupied cell.
    """
    space = table.space
    dist = space.dist
    dvals, dinv = np.unique(dist, return_inverse=True)
    dinv = dinv.reshape(dist.shape)
    d_cut = win.d_min_steps * space.min_distance
    ts, ds, his, los = [], [], [], []
    for k, t in enumerate(table.times):
        if not (win.t_min * (1 - 1e-12) <= t <= win.t_max * (1 + 1e-12)):
            continue
        lp = _norm_log(table, alpha, beta, R0, k)
        diag = np.diag(lp)
        if diagonal_only:
            ok = np.isfinite(diag)
            if ok.any():
                ts.append(t), ds.append(0.0), his.append(diag[ok].max()), los.append(diag[ok].min())
            continue
        keep = (dist == 0) | ((dist > d_cut) & (dist <= win.d_max))
        keep &= np.isfinite(lp)
        keep &= lp >= diag[:, None] + np.log(win.rel_floor)
        for j in np.unique(dinv[keep]):
            vals = lp[keep & (dinv == j)]
            ts.append(t), ds.append(dvals[j]), his.append(vals.max()), los.append(vals.min())
    if not ts:
        raise ValueError("no kernel entries inside the fitting window")
    return np.array(ts), np.array(ds), np.array(his), np.array(los)


def _minimax_scale(t, d, hi, lo, shape, fit_scale=True, c0=1.0):
    """Scale ``c`` minimizing the spread of ``log p - shape(c)``; returns ``(c, residual)``."""

    def spread(log_c):
        s = shape(np.exp(log_c))
        return 0.5 * (float(np.max(hi - s)) - float(np.min(lo - s)))

    if not fit_scale:
        return c0, spread(np.log(c0))
    grid = np.linspace(-8.0, 8.0, 161)
    vals = np.array([spread(g) for g in grid])
    g0 = grid[int(np.argmin(vals))]
    res = minimize_scalar(spread, bounds=(g0 - 0.1, g0 + 0.1), method="bounded",
                          options={"xatol": 1e-10})
    best = min((res.fun, res.x), (vals.min(), g0))
    return float(np.exp(best[1])), float(best[0])


def _finish(condition, t, d, hi, lo, s, c, residual, win, tolerance, exponent=None):
    top = hi - s
    k = int(np.argmax(top))
    C = float(np.exp(top[k]))
    passed = bool(np.isfinite(C) and residual <= tolerance)
    return BoundFit(condition, C, c, asdict(win), float(residual), float(tolerance),
                    passed, int(t.size), exponent, {"t": float(t[k]), "d": float(d[k])})


def check_due(table: HeatKernelTable, alpha: float, beta: float, R0: float,
              window=None, tolerance: float = DEFAULT_TOLERANCE) -> BoundFit:
    """Fit ``p_t(x, x) <= C t**(-alpha/beta) exp(t / R0**beta)``.

    ``C`` is the maximum over the window of ``p_t(x, x) t**(alpha/beta)
    exp(-t / R0**beta)``; the residual measures how far that quantity is from
    constant (a diverging ``C`` shows up as a large residual).
    """
    win = Window.from_dict(window).resolve(table)
    t, d, hi, lo = _samples(table, alpha, beta, R0, win, diagonal_only=True)
    residual = 0.5 * (hi.max() - lo.min())
    return _finish("due", t, d, hi, lo, np.zeros_like(t), None, residual, win, tolerance)


def _ue_shape(alpha, beta, t, d):
    return lambda c: -(alpha + beta) * np.log1p(d / (c * t ** (1.0 / beta)))


def _loc_shape(theta, beta, t, d):
    return lambda c: -(d / (c * t ** (1.0 / beta))) ** theta


def check_ue(table: HeatKernelTable, alpha: float, beta: float, R0: float,
             window=None, tolerance: float = DEFAULT_TOLERANCE,
             fit_scale: bool = True) -> BoundFit:
    """Fit the stable-like envelope ``(1 + d/(c t**(1/beta)))**-(alpha+beta)``.

    With ``fit_scale=False`` the scale is pinned at ``c = 1``.
    """
    win = Window.from_dict(window).resolve(table)
    t, d, hi, lo = _samples(table, alpha, beta, R0, win)
    shape = _ue_shape(alpha, beta, t, d)
    c, residual = _minimax_scale(t, d, hi, lo, shape, fit_scale)
    return _finish("ue", t, d, hi, lo, shape(c), c, residual, win, tolerance,
                   exponent=alpha + beta)


def check_ue_loc(table: HeatKernelTable, alpha: float, beta: float, R0: float,
                 window=None, tolerance: float = DEFAULT_TOLERANCE,
                 theta: float | None = None) -> BoundFit:
    """Joint fit of ``(C, c)`` for ``exp(-(d/(c t**(1/beta)))**theta)``.

    ``theta`` defaults to ``beta/(beta-1)``; weaker exponents
    ``beta/(beta'-1)`` can be passed to test intermediate bounds.
    """
    if beta <= 1:
        raise ValueError("the local-type envelope needs beta > 1")
    theta = beta / (beta - 1) if theta is None else float(theta)
    win = Window.from_dict(window).resolve(table)
    t, d, hi, lo = _samples(table, alpha, beta, R0, win)
    shape = _loc_shape(theta, beta, t, d)
    c, residual = _minimax_scale(t, d, hi, lo, shape)
    return _finish("ue_loc", t, d, hi, lo, shape(c), c, residual, win, tolerance,
                   exponent=theta)


def synthetic_table(kind: str, space: MetricMeasureSpace, times, alpha: float,
                    beta: float, R0: float | None = None, C: float = 1.0,
                    c: float = 1.0) -> HeatKernelTable:
    """Kernel table built exactly from an envelope formula.

    ``kind`` is ``"due"`` (no spatial decay), ``"ue"`` or ``"ue_loc"``.
    """
    R0 = space.R0 if R0 is None else R0
    times = np.sort(np.asarray(times, dtype=float))
    d = space.dist
    out = []
    for t in times:
        base = C * t ** (-alpha / beta) * np.exp(t / R0 ** beta)
        s = d / (c * t ** (1.0 / beta))
        if kind == "due":
            out.append(np.full_like(d, base))
        elif kind == "ue":
            out.append(base * (1 + s) ** (-(alpha + beta)))
        elif kind == "ue_loc":
            if beta <= 1:
                raise ValueError("the local-type envelope needs beta > 1")
            out.append(base * np.exp(-s ** (beta / (beta - 1))))
        else:
            raise ValueError(f"unknown envelope {kind!r}")
    return HeatKernelTable(times, np.stack(out), space=space)


@dataclass
class TailExponentFit:
    """Regression of ``log log(p_t(x,x)/p_t(x,y))`` on ``log(d / t**(1/beta))``."""

    theta: float
    r2: float
    n_samples: int
    flagged: bool
    threshold: float
    window: dict
    intercept: float = np.nan

    def to_dict(self):
        return asdict(self)


def tail_exponent_fit(table: HeatKernelTable, alpha: float, beta: float, window=None,
                      points=None, decay_range=(1.0, 9.2), r2_threshold: float = 0.995,
                      min_samples: int = 20) -> TailExponentFit:
    """Estimate the exponent ``theta`` in ``p_t(x,y) ~ p_t(x,x) exp(-(d/(c t**(1/beta)))**theta)``.

    Samples are off-diagonal entries whose decay ``log(p_t(x,x)/p_t(x,y))``
    lies in ``decay_range`` (far field, above round-off), at times inside the
    window. Exponential-type tails give a straight line with slope ``theta``;
    polynomial tails bend, and the fit is flagged when ``R**2 < r2_threshold``.
    """
    win = Window.from_dict(window)
    win = Window(win.t_min, win.t_max, win.d_min_steps, win.d_max, 0.0).resolve(table)
    space = table.space
    pts = range(space.n) if points is None else points
    d_cut = win.d_min_steps * space.min_distance
    xs, ys = [], []
    lo_dec, hi_dec = decay_range
    for k, t in enumerate(table.times):
        if not (win.t_min * (1 - 1e-12) <= t <= win.t_max * (1 + 1e-12)):
            continue
        K = table.kernels[k]
        for x in pts:
            row = K[x]
            dx = space.dist[x]
            ok = (dx > d_cut) & (dx <= win.d_max) & (row > 0)
            dec = np.log(row[x]) - np.log(row[ok])
            sel = (dec >= lo_dec) & (dec <= hi_dec)
            xs.append(np.log(dx[ok][sel] / t ** (1.0 / beta)))
            ys.append(np.log(dec[sel]))
    X = np.concatenate(xs) if xs else np.zeros(0)
    Y = np.concatenate(ys) if ys else np.zeros(0)
    if X.size < min_samples or np.ptp(X) == 0:
        raise ValueError(f"insufficient far-field samples ({X.size})")
    slope, intercept = np.polyfit(X, Y, 1)
    pred = slope * X + intercept
    ss_res = float(np.sum((Y - pred) ** 2))
    ss_tot = float(np.sum((Y - Y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return TailExponentFit(float(slope), r2, int(X.size), bool(r2 < r2_threshold),
                           r2_threshold, asdict(win), float(intercept))


def nash_ratio(form: DirichletForm, u, alpha: float, beta: float, R0: float) -> float:
    """``||u||_2**(2(1+beta/alpha)) / ((E(u) + R0**-beta ||u||_2**2) ||u||_1**(2 beta/alpha))``."""
    u = np.asarray(u, dtype=float)
    m = form.mass
    l2 = float(np.sum(u * u * m))
    l1 = float(np.sum(np.abs(u) * m))
    denom = (energy(form, u) + R0 ** (-beta) * l2) * l1 ** (2 * beta / alpha)
    return l2 ** (1 + beta / alpha) / denom


@dataclass
class NashReport:
    C_N_fit: float
    argmax_kind: str
    n_probes: int
    due_C: float | None

    def to_dict(self):
        return asdict(self)


def check_nash(form: DirichletForm, alpha: float, beta: float, R0: float,
               due_C: float | None = None, n_random: int = 200, seed: int = 0):
    """Largest Nash ratio over random, indicator and eigenvector probes."""
    rng = np.random.default_rng(seed)
    n = form.n
    probes = [("constant", np.ones(n))]
    probes += [("indicator", np.eye(n)[i]) for i in range(n)]
    sg = HeatSemigroup(form)
    vecs = sg.evecs / sg.sqrt_mass[:, None]
    probes += [("eigenvector", vecs[:, -k]) for k in range(1, min(n, 32) + 1)]
    probes += [("random", rng.standard_normal(n)) for _ in range(n_random)]
    probes += [("random_positive", rng.random(n) ** 4) for _ in range(n_random)]
    best, kind = -np.inf, ""
    for name, u in probes:
        val = nash_ratio(form, u, alpha, beta, R0)
        if val > best:
            best, kind = val, name
    report = NashReport(float(best), kind, len(probes), due_C)
    return report.C_N_fit, report


def fs_bound(b: float, p: float, theta: float, K: float, nu: float, w_fn, t):
    """``(2 p**nu / (theta b))**(1/theta) t**(-(p-1)/theta) exp(K p**-nu t) w(t)``.

    ``K = 0`` is accepted as the limit of the bound.
    """
    if not (b > 0 and p > 1 and theta > 0 and K >= 0 and nu >= 1):
        raise ValueError("need b > 0, p > 1, theta > 0, K >= 0, nu >= 1")
    t = np.asarray(t, dtype=float)
    w = np.asarray(w_fn(t), dtype=float)
    return ((2 * p ** nu / (theta * b)) ** (1 / theta) * t ** (-(p - 1) / theta)
            * np.exp(K * p ** (-nu) * t) * w)


@dataclass
class FsInstance:
    """``u' = -b t**(p-2) u**(1+theta) / w(t)**theta + K u``, ``u(0) = u0``.

    ``w`` is the step function equal to ``w_values[i]`` on
    ``[w_breaks[i], w_breaks[i+1])`` with ``w_breaks[0] = 0``.
    """

    b: float
    p: float
    theta: float
    K: float
    nu: float
    w_breaks: tuple
    w_values: tuple
    u0: float
    T_end: float

    def __post_init__(self):
        if self.w_breaks[0] != 0 or len(self.w_breaks) != len(self.w_values):
            raise ValueError("w_breaks must start at 0 and match w_values")
        if np.any(np.diff(self.w_breaks) <= 0) or np.any(np.diff(self.w_values) < 0):
            raise ValueError("w must be a nondecreasing step function")
        if min(self.w_values) <= 0 or not self.u0 > 0 or self.T_end <= 0:
            raise ValueError("w, u0 and T_end must be positive")
        if not np.isfinite(self.T_end):
            raise ValueError("T_end must be finite")

    def w(self, t):
        idx = np.searchsorted(np.asarray(self.w_breaks), np.asarray(t), side="right") - 1
        return np.asarray(self.w_values)[np.clip(idx, 0, len(self.w_values) - 1)]


@dataclass
class FsResult:
    passed: bool
    worst_ratio: float
    margin: float
    steps: int
    times: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)


def _solve_fs(inst: FsInstance, points: int):
    """Equality-case solution on a grid, in closed form up to quadrature.

    The equation is of Bernoulli type: ``z = u**-theta`` solves the linear
    ``z' + theta K z = theta b t**(p-2) / w**theta``, so on each piece of ``w``
    ``z(t) e^(theta K t)`` grows by ``(theta b / w**theta) int s**(p-2) e^(theta K s) ds``.
    The integral is taken in ``sigma = s**(p-1)``, where the integrand is bounded.
    """
    b, p, th, K = inst.b, inst.p, inst.theta, inst.K
    q = 1.0 / (p - 1)
    cuts = [x for x in inst.w_breaks if x < inst.T_end] + [inst.T_end]
    ts, zs = [0.0], [inst.u0 ** -th]
    acc = inst.u0 ** -th  # z(t) e^(theta K t)
    for i in range(len(cuts) - 1):
        coef = th * b / inst.w_values[i] ** th / (p - 1)
        a, e = cuts[i], cuts[i + 1]
        n = max(2, int(ceil(points * (e - a) / inst.T_end)))
        sig = np.linspace(a ** (p - 1), e ** (p - 1), n + 1)
        for s0, s1 in zip(sig[:-1], sig[1:]):
            val, _ = scipy.integrate.quad(lambda x: np.exp(th * K * x ** q), s0, s1,
                                          epsabs=0, epsrel=1e-13, limit=200)
            acc += coef * val
            t1 = s1 ** q
            ts.append(t1)
            zs.append(acc * np.exp(-th * K * t1))
    t = np.array(ts)
    with np.errstate(divide="ignore"):
        return t, np.array(zs) ** (-1.0 / th)


def verify_fs(inst: FsInstance, points: int = 256, slack: float = 1e-6) -> FsResult:
    """Solve the equality case and compare with :func:`fs_bound` on the grid.

    ``u0 = inf`` selects the maximal solution, which is the extremal case of
    the bound (``margin`` is then the sharp constant).
    """
    t, u = _solve_fs(inst, points)
    pos = t > 0
    if not (np.all(np.isfinite(u[pos])) and np.all(u[pos] > 0)):
        raise ArithmeticError("equality-case solution left the positive reals")
    bound = fs_bound(inst.b, inst.p, inst.theta, inst.K, inst.nu, inst.w, t[pos])
    ratio = u[pos] / bound
    worst = float(ratio.max())
    return FsResult(worst <= 1 + slack, worst, float(1.0 / worst), int(pos.sum()), t, u)


def random_fs_instances(n: int, seed: int = 0):
    """Random instances with ``b, K`` in [0.1, 10], ``p`` in (1, 4], ``theta`` in (0, 3]."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        k = int(rng.integers(1, 4))
        T = float(rng.uniform(0.5, 5.0))
        breaks = (0.0,) + tuple(np.sort(rng.uniform(0, T, k - 1)))
        values = tuple(np.sort(rng.uniform(0.5, 3.0, k)))
        out.append(FsInstance(
            b=float(rng.uniform(0.1, 10)), p=float(rng.uniform(1.05, 4.0)),
            theta=float(rng.uniform(0.1, 3.0)), K=float(rng.uniform(0.1, 10)),
            nu=float(rng.uniform(1.0, 3.0)), w_breaks=breaks, w_values=values,
            u0=float(10 ** rng.uniform(-1, 1)), T_end=T))
    return out


@dataclass
class IterationState:
    """One step of the exponent improvement: ``theta = beta / (beta_prime - 1)``."""

    beta: float
    beta_prime: float
    theta: float
    step: int


def iteration_states(beta: float, beta_prime0: float) -> list:
    """States visited when improving ``beta/(beta_prime0-1)`` to ``beta/(beta-1)``.

    While ``beta' > beta + 1`` each step lowers ``beta'`` by one. Once
    ``beta'`` lands in ``(beta, beta+1]`` the bound is weakened to
    ``beta' = beta + 1`` (``theta = 1``) and a final step reaches
    ``beta' = beta``.
    """
    if not beta > 1:
        raise ValueError("beta must exceed 1")
    if not beta_prime0 > beta:
        raise ValueError("beta_prime0 must exceed beta")
    states = []
    bp = float(beta_prime0)
    while bp > beta + 1 and not isclose(bp, beta + 1, rel_tol=0, abs_tol=1e-12):
        states.append(IterationState(beta, bp, beta / (bp - 1), len(states)))
        bp -= 1.0
    states.append(IterationState(beta, beta + 1.0, 1.0, len(states)))
    states.append(IterationState(beta, float(beta), beta / (beta - 1), len(states)))
    return states


def improvement_schedule(beta: float, beta_prime0: float) -> list:
    """The exponent sequence ``theta_j`` ending at ``beta/(beta-1)``."""
    return [s.theta for s in iteration_states(beta, beta_prime0)]


def weighted_tail_mass(table: HeatKernelTable, x: int, t: float, a: float,
                       theta: float, beta: float, delta: float = 0.5) -> float:
    """``max_y (P_t E_{t,x})(y)`` over ``y`` in ``B(x, 2 t**(1/beta) / delta) / 4``.

    ``E_{t,x}(z) = exp(a (d(x,z) / t**(1/beta))**theta)``.
    """
    if not a > 0:
        raise ValueError("a must be positive")
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    space = table.space
    s = t ** (1.0 / beta)
    E = np.exp(a * (space.dist[x] / s) ** theta)
    P = table.at(t)
    mass = P @ (E * table.mass)
    near = ball_mask(space, x, 0.5 * s / delta)
    return float(mass[near].max())
