"""Generators, heat semigroups and heat kernels of finite Dirichlet forms.

All exponentials go through one dense eigendecomposition of the symmetrized
generator ``D**1/2 L D**-1/2`` (``D = diag(mu)``), reused for every time.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .forms import DirichletForm
from .space import ball_mask

__all__ = [
    "Generator",
    "HeatSemigroup",
    "HeatKernelTable",
    "SurvivalResult",
    "generator",
    "heat_kernel",
    "killed_semigroup",
    "resolvent",
    "approximating_form",
    "check_survival",
    "survival_deficit",
    "form_hash",
]

log = logging.getLogger(__name__)

NEG_TOL = 1e-12


def _omega_mask(n, omega):
    if omega is None:
        return np.ones(n, dtype=bool)
    omega = np.asarray(omega)
    if omega.dtype == bool:
        mask = omega.copy()
    else:
        mask = np.zeros(n, dtype=bool)
        mask[omega.astype(int)] = True
    if not mask.any():
        raise ValueError("Omega must be nonempty")
    return mask


@dataclass(frozen=True, eq=False)
class Generator:
    """Generator ``L`` with ``E(u, v) = -<Lu, v>_mu``."""

    matrix: np.ndarray
    mass: np.ndarray

    def __call__(self, u):
        return self.matrix @ np.asarray(u, dtype=float)


def generator(form: DirichletForm) -> Generator:
    """``(Lu)(x) = sum_y (u(y) - u(x)) (2 w(x,y) / mu(x) + 2 J(x,y) mu(y))``."""
    L = -2.0 * form.laplacian() / form.mass[:, None]
    return Generator(L, form.mass)


def form_hash(form: DirichletForm) -> str:
    """Content hash of a form (distances, masses, conductances, rho)."""
    h = hashlib.sha256()
    for arr in (form.space.dist, form.space.mass, form.local_weights, form.jump_density):
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update(repr(float(form.rho)).encode())
    return h.hexdigest()[:24]


class HeatSemigroup:
    """Spectral representation of ``P_t = exp(t L)`` or of the killed ``P_t^Omega``.

    Parameters
    ----------
    form : DirichletForm
    omega : array_like of int or bool mask, optional
        Dirichlet region; the whole space when omitted.
    cache_dir : path, optional
        Directory for ``.npz`` caches of the eigendecomposition keyed by
        :func:`form_hash`.
    """

    def __init__(self, form: DirichletForm, omega=None, cache_dir=None):
        self.form = form
        self.mask = _omega_mask(form.n, omega)
        self.whole = bool(self.mask.all())
        idx = np.flatnonzero(self.mask)
        self.index = idx
        m = form.mass[idx]
        self.sqrt_mass = np.sqrt(m)
        self.evals, self.evecs = self._decompose(form, idx, m, cache_dir)

    @staticmethod
    def _decompose(form, idx, m, cache_dir):
        path = None
        if cache_dir is not None:
            key = hashlib.sha256(idx.tobytes()).hexdigest()[:12]
            path = Path(cache_dir) / f"eig_{form_hash(form)}_{key}.npz"
            if path.exists():
                with np.load(path) as data:
                    return data["evals"], data["evecs"]
        lap = form.laplacian()[np.ix_(idx, idx)]
        s = 1.0 / np.sqrt(m)
        S = -2.0 * s[:, None] * lap * s[None, :]
        S = 0.5 * (S + S.T)
        try:
            evals, evecs = scipy.linalg.eigh(S)
        except np.linalg.LinAlgError as exc:
            raise ValueError("eigendecomposition failed; malformed form?") from exc
        evals = np.minimum(evals, 0.0)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            np.savez(path, evals=evals, evecs=evecs)
        return evals, evecs

    @property
    def spectral_gap(self) -> float:
        """Smallest nonzero ``-L`` eigenvalue (whole space) or bottom of the spectrum."""
        lam = -self.evals[::-1]
        if self.whole:
            nz = lam[lam > 1e-10 * max(1.0, lam.max())]
            return float(nz[0]) if nz.size else 0.0
        return float(lam[0])

    def _sym_exp(self, t):
        return (self.evecs * np.exp(t * self.evals)) @ self.evecs.T

    def kernel(self, t: float) -> np.ndarray:
        """``p_t(x, y)`` as an ``n x n`` matrix, zero outside ``Omega``."""
        if t < 0:
            raise ValueError("t must be nonnegative")
        s = 1.0 / self.sqrt_mass
        sub = s[:, None] * self._sym_exp(t) * s[None, :]
        sub = 0.5 * (sub + sub.T)
        scale = max(1.0, float(np.abs(sub).max()))
        worst = float(sub.min())
        if worst < -NEG_TOL * scale:
            raise ValueError(f"heat kernel entry {worst:.3e} is negative beyond rounding")
        if worst < 0:
            log.debug("clamped kernel entries down to %.2e at t=%g", worst, t)
            sub = np.maximum(sub, 0.0)
        if self.whole:
            return sub
        out = np.zeros((self.form.n, self.form.n))
        out[np.ix_(self.index, self.index)] = sub
        return out

    def apply(self, t: float, f) -> np.ndarray:
        """``P_t f`` (``f`` restricted to ``Omega``, result extended by zero)."""
        f = np.asarray(f, dtype=float)
        g = self.sqrt_mass * f[self.index]
        h = self.evecs @ (np.exp(t * self.evals) * (self.evecs.T @ g))
        out = np.zeros(self.form.n)
        out[self.index] = h / self.sqrt_mass
        return out

    def resolvent(self, lam: float, f=None) -> np.ndarray:
        """``(lam - L^Omega)^{-1} f`` with ``f = 1_Omega`` by default."""
        if f is None:
            f = np.ones(self.form.n)
        f = np.asarray(f, dtype=float)
        g = self.sqrt_mass * f[self.index]
        h = self.evecs @ ((self.evecs.T @ g) / (lam - self.evals))
        out = np.zeros(self.form.n)
        out[self.index] = h / self.sqrt_mass
        return out


@dataclass
class HeatKernelTable:
    """Heat kernels ``p_t(x, y)`` (density against ``mu`` in ``y``) on a time grid."""

    times: np.ndarray
    kernels: np.ndarray
    form: DirichletForm | None = field(default=None, repr=False)
    omega: np.ndarray | None = None
    spectral_gap: float = 0.0
    space: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.space is None:
            if self.form is None:
                raise ValueError("a kernel table needs a form or a space")
            self.space = self.form.space

    @property
    def mass(self):
        return self.space.mass

    @property
    def dist(self):
        return self.space.dist

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        if not np.isclose(self.times[k], t, rtol=1e-12, atol=0):
            raise KeyError(f"t={t} is not on the table's grid")
        return self.kernels[k]

    def row_mass(self) -> np.ndarray:
        """``sum_y p_t(x, y) mu(y)`` for each time and ``x``."""
        return self.kernels @ self.mass

    def to_csv(self, path, points=None):
        """Write ``t,x,y,p`` rows; ``points`` restricts the ``x`` index set."""
        xs = range(self.kernels.shape[1]) if points is None else points
        with open(path, "w") as fh:
            fh.write("t,x,y,p\n")
            for t, K in zip(self.times, self.kernels):
                for x in xs:
                    for y, p in enumerate(K[x]):
                        fh.write(f"{t:.17g},{x},{y},{p:.17g}\n")


def heat_kernel(form: DirichletForm, times, omega=None, cache_dir=None) -> HeatKernelTable:
    """Exact heat kernels ``p_t(x, y) = (e^{tL})_{xy} / mu(y)`` for each ``t``."""
    times = np.sort(np.atleast_1d(np.asarray(times, dtype=float)))
    if np.any(times <= 0):
        raise ValueError("times must be positive")
    sg = HeatSemigroup(form, omega, cache_dir=cache_dir)
    kernels = np.stack([sg.kernel(t) for t in times])
    return HeatKernelTable(times, kernels, form,
                           None if sg.whole else sg.mask, sg.spectral_gap)


def killed_semigroup(form: DirichletForm, omega, t: float, f) -> np.ndarray:
    """``P_t^Omega f`` with Dirichlet (killing) conditions outside ``Omega``."""
    return HeatSemigroup(form, omega).apply(t, f)


def resolvent(form: DirichletForm, omega, lam: float) -> np.ndarray:
    """Solve ``(lam - L^Omega) w = 1`` on ``Omega``; ``w = 0`` outside.

    Equivalently ``w = int_0^inf e^{-lam t} P_t^Omega 1_Omega dt``.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    mask = _omega_mask(form.n, omega)
    idx = np.flatnonzero(mask)
    m = form.mass[idx]
    A = lam * np.diag(m) + 2.0 * form.laplacian()[np.ix_(idx, idx)]
    w = np.zeros(form.n)
    w[idx] = scipy.linalg.solve(A, m, assume_a="pos")
    return w


def approximating_form(form: DirichletForm, t: float, u, v=None, semigroup=None) -> float:
    """``E^(t)(u, v)`` built from the transition kernel at time ``t``.

    ``(1/2t) sum (u(x)-u(y))(v(x)-v(y)) p_t(x,y) mu(x) mu(y)
    + (1/t) sum u v (1 - P_t 1) mu``.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    sg = semigroup if semigroup is not None else HeatSemigroup(form)
    u = np.asarray(u, dtype=float)
    v = u if v is None else np.asarray(v, dtype=float)
    m = form.mass
    # transition probabilities P_t(x, {y}) = p_t(x, y) mu(y)
    P = sg.kernel(t) * m[None, :]
    du = u[:, None] - u[None, :]
    dv = v[:, None] - v[None, :]
    first = np.sum(du * dv * P * m[:, None]) / (2.0 * t)
    deficit = 1.0 - P.sum(axis=1)
    return float(first + np.sum(u * v * deficit * m) / t)


def survival_deficit(form: DirichletForm, center: int, r: float, t: float) -> np.ndarray:
    """``1 - P_t^B 1_B`` on ``B = B(center, r)`` (zero elsewhere)."""
    mask = ball_mask(form.space, center, r)
    out = 1.0 - HeatSemigroup(form, mask).apply(t, mask.astype(float))
    return np.where(mask, out, 0.0)


@dataclass
class SurvivalResult:
    passed: bool
    worst: float
    epsilon: float
    delta: float
    t_max: float
    times: np.ndarray
    deficits: np.ndarray
    vacuous: bool = False


def check_survival(form: DirichletForm, center: int, r: float, epsilon: float,
                   delta: float, beta: float, n_times: int = 12) -> SurvivalResult:
    """Check ``1 - P_t^B 1_B <= epsilon`` on ``B/4`` for ``t**(1/beta) <= delta r``.

    The time grid is geometric over four decades ending at ``(delta r)**beta``.
    """
    if not (0 < epsilon < 1 and 0 < delta < 1):
        raise ValueError("epsilon and delta must lie in (0, 1)")
    if not 0 < r < form.space.R0:
        raise ValueError("r must lie in (0, R0)")
    t_max = (delta * r) ** beta
    times = t_max * np.logspace(-4, 0, n_times)
    quarter = ball_mask(form.space, center, r / 4)
    if not quarter.any():
        return SurvivalResult(True, 0.0, epsilon, delta, t_max, times,
                              np.zeros(n_times), vacuous=True)
    mask = ball_mask(form.space, center, r)
    sg = HeatSemigroup(form, mask)
    one = mask.astype(float)
    deficits = np.array([float(np.max(1.0 - sg.apply(t, one)[quarter])) for t in times])
    worst = float(deficits.max())
    return SurvivalResult(worst <= epsilon, worst, epsilon, delta, t_max, times, deficits)
