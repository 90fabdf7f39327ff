"""Dirichlet forms on finite spaces.

A form is the sum of a nearest-neighbour conductance part (the discrete
surrogate for a local part) and a jump part with density ``J`` against
``mu x mu``. Both double sums run over ordered pairs without a factor 1/2::

    E(u, v) = sum_{x,y} (u(x)-u(y)) (v(x)-v(y)) [w(x,y) + J(x,y) mu(x) mu(y)]

so the two-point form with ``J(a, b) = 1`` has ``E(u) = 2 (u(a) - u(b))**2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .space import MetricMeasureSpace, SpaceParams

__all__ = [
    "DirichletForm",
    "EnergyDensity",
    "assemble_form",
    "energy",
    "energy_measure",
    "energy_measure_polarized",
    "weighted_energy_integral",
    "truncate",
    "jump_tail_mass",
    "tail_constant",
    "check_jump_upper",
    "JumpUpperReport",
]


def _check_kernel(mat, n, what):
    mat = np.array(mat, dtype=float)
    if mat.shape != (n, n):
        raise ValueError(f"{what} must have shape {(n, n)}, got {mat.shape}")
    if not np.allclose(mat, mat.T, rtol=0, atol=0):
        raise ValueError(f"{what} is not symmetric")
    if np.any(np.diag(mat) != 0):
        raise ValueError(f"{what} must vanish on the diagonal")
    if np.any(mat < 0) or not np.all(np.isfinite(mat)):
        raise ValueError(f"{what} must be finite and nonnegative")
    return mat


@dataclass(frozen=True, eq=False)
class DirichletForm:
    """Killing-free Dirichlet form ``E = E_local + E_jump`` on a finite space.

    Attributes
    ----------
    space : MetricMeasureSpace
    local_weights : ndarray, shape (n, n)
        Symmetric conductances on nearest-neighbour pairs.
    jump_density : ndarray, shape (n, n)
        Symmetric jump density ``J(x, y)``, zero on the diagonal.
    rho : float
        Truncation radius; ``inf`` for an untruncated form.
    """

    space: MetricMeasureSpace
    local_weights: np.ndarray
    jump_density: np.ndarray
    rho: float = np.inf

    def __post_init__(self):
        n = self.space.n
        w = _check_kernel(self.local_weights, n, "local_weights")
        J = _check_kernel(self.jump_density, n, "jump_density")
        if np.any(w[~self.space.neighbours] != 0):
            raise ValueError("local weights must live on nearest-neighbour pairs")
        if np.isfinite(self.rho) and np.any(J[self.space.dist >= self.rho] != 0):
            raise ValueError("jump density must vanish at distances >= rho")
        w.setflags(write=False)
        J.setflags(write=False)
        object.__setattr__(self, "local_weights", w)
        object.__setattr__(self, "jump_density", J)
        m = self.space.mass
        K = w + J * m[:, None] * m[None, :]
        K.setflags(write=False)
        object.__setattr__(self, "_K", K)

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def mass(self) -> np.ndarray:
        return self.space.mass

    @property
    def conductance(self) -> np.ndarray:
        """Total pair weight ``w(x,y) + J(x,y) mu(x) mu(y)``."""
        return self._K

    @property
    def is_local(self) -> bool:
        return not np.any(self.jump_density)

    @property
    def has_local_part(self) -> bool:
        return bool(np.any(self.local_weights))

    def laplacian(self) -> np.ndarray:
        """Matrix ``D - K`` of the conductances; ``E(u, v) = 2 u @ lap @ v``."""
        K = self._K
        return np.diag(K.sum(axis=1)) - K

    def quadratic_matrix(self) -> np.ndarray:
        """Symmetric ``Q`` with ``E(u, v) = u @ Q @ v``."""
        return 2.0 * self.laplacian()

    def local_part(self) -> "DirichletForm":
        return DirichletForm(self.space, self.local_weights,
                             np.zeros_like(self.jump_density), rho=0.0)

    def jump_part(self) -> "DirichletForm":
        return DirichletForm(self.space, np.zeros_like(self.local_weights),
                             self.jump_density, rho=self.rho)


@dataclass(frozen=True)
class EnergyDensity:
    """Density ``gamma`` of an energy measure against ``mu``."""

    density: np.ndarray
    mass: np.ndarray

    def integral(self, f=None) -> float:
        """``int f dGamma``; ``f`` defaults to 1."""
        if f is None:
            return float(self.density @ self.mass)
        return float(np.sum(np.asarray(f) * self.density * self.mass))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.density, dtype=dtype)


def assemble_form(space: MetricMeasureSpace, local_spec=None, jump_spec=None) -> DirichletForm:
    """Build a form from local and jump descriptions.

    Parameters
    ----------
    local_spec : dict or None
        ``{"kind": "nearest_neighbor", "weight": w}`` or ``None``.
    jump_spec : dict or None
        ``{"kind": "stable", "alpha": a, "beta": b, "scale": c}`` giving
        ``J = c d**-(a+b)``, ``{"kind": "explicit", "matrix": J}`` or ``None``.
    """
    local_spec = _normalize_spec(local_spec)
    jump_spec = _normalize_spec(jump_spec)
    if local_spec is None and jump_spec is None:
        raise ValueError("a form needs a local part, a jump part, or both")
    n = space.n
    w = np.zeros((n, n))
    J = np.zeros((n, n))
    if local_spec is not None:
        kind = local_spec.get("kind")
        if kind != "nearest_neighbor":
            raise ValueError(f"unknown local part {kind!r}")
        weight = float(local_spec.get("weight", 1.0))
        if weight < 0:
            raise ValueError("local weight must be nonnegative")
        w = np.where(space.neighbours, weight, 0.0)
    if jump_spec is not None:
        kind = jump_spec.get("kind")
        if kind == "stable":
            a, b = float(jump_spec["alpha"]), float(jump_spec["beta"])
            c = float(jump_spec.get("scale", 1.0))
            if c < 0:
                raise ValueError("jump scale must be nonnegative")
            SpaceParams(a, b)
            off = ~np.eye(n, dtype=bool)
            J[off] = c * space.dist[off] ** (-(a + b))
        elif kind == "explicit":
            mat = jump_spec["matrix"]
            if isinstance(mat, str):
                mat = np.loadtxt(mat.splitlines(), ndmin=2)
            J = _check_kernel(mat, n, "jump matrix")
        else:
            raise ValueError(f"unknown jump part {kind!r}")
    return DirichletForm(space, w, J)


def _normalize_spec(spec):
    if spec is None or spec == "none":
        return None
    if isinstance(spec, dict) and spec.get("kind") in (None, "none"):
        return None
    return spec


def _as_vec(form, u, name="u"):
    u = np.asarray(u, dtype=float)
    if u.shape != (form.n,):
        raise ValueError(f"{name} must have shape ({form.n},), got {u.shape}")
    return u


def energy(form: DirichletForm, u, v=None) -> float:
    """``E(u, v)``; ``E(u, u)`` when ``v`` is omitted."""
    u = _as_vec(form, u)
    v = u if v is None else _as_vec(form, v, "v")
    return float(2.0 * (u @ form.laplacian() @ v))


def energy_measure(form: DirichletForm, u, part: str = "all") -> EnergyDensity:
    """Energy measure ``Gamma(u)`` as a density against ``mu``.

    ``gamma(x) = sum_y (u(x) - u(y))**2 [w(x,y)/mu(x) + J(x,y) mu(y)]``, so that
    ``sum_x gamma(x) mu(x) = E(u, u)``. ``part`` selects ``"local"``, ``"jump"``
    or ``"all"``.
    """
    u = _as_vec(form, u)
    m = form.mass
    if part == "all":
        K = form.conductance
    elif part == "local":
        K = form.local_weights
    elif part == "jump":
        K = form.jump_density * m[:, None] * m[None, :]
    else:
        raise ValueError(f"unknown part {part!r}")
    diff2 = (u[:, None] - u[None, :]) ** 2
    return EnergyDensity((K * diff2).sum(axis=1) / m, m)


def energy_measure_polarized(form: DirichletForm, u, v) -> EnergyDensity:
    """Signed density of ``Gamma(u, v) = (Gamma(u+v) - Gamma(u) - Gamma(v)) / 2``."""
    u = _as_vec(form, u)
    v = _as_vec(form, v, "v")
    g = (energy_measure(form, u + v).density
         - energy_measure(form, u).density
         - energy_measure(form, v).density)
    return EnergyDensity(0.5 * g, form.mass)


def weighted_energy_integral(form: DirichletForm, u, v, w) -> float:
    """``int u dGamma(v, w)`` through ``(E(uv, w) + E(v, uw) - E(vw, u)) / 2``."""
    u = _as_vec(form, u)
    v = _as_vec(form, v, "v")
    w = _as_vec(form, w, "w")
    return 0.5 * (energy(form, u * v, w) + energy(form, v, u * w) - energy(form, v * w, u))


def truncate(form: DirichletForm, rho: float) -> DirichletForm:
    """Drop jumps of length ``>= rho``; ``rho = 0`` leaves the local part only."""
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    J = np.where(form.space.dist < rho, form.jump_density, 0.0)
    return DirichletForm(form.space, form.local_weights, J, rho=float(rho))


def _tail_rows(form, rho):
    far = form.space.dist >= rho
    return (np.where(far, form.jump_density, 0.0) @ form.mass)


def jump_tail_mass(form: DirichletForm, rho: float) -> float:
    """``sup_x sum_{y : d(x,y) >= rho} J(x, y) mu(y)``."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    return float(_tail_rows(form, rho).max())


def tail_constant(form: DirichletForm, beta: float, rhos=None):
    """Smallest ``C`` with ``jump_tail_mass(rho) <= C rho**-beta`` over ``rhos``.

    ``rhos`` defaults to every distance value of the space. Returns ``(C, rho*)``.
    """
    if rhos is None:
        rhos = np.unique(form.space.dist[form.space.dist > 0])
    best, arg = 0.0, float(rhos[0])
    for rho in rhos:
        c = jump_tail_mass(form, rho) * rho ** beta
        if c > best:
            best, arg = c, float(rho)
    return best, arg


@dataclass
class JumpUpperReport:
    C_J_fit: float
    argmax: tuple
    exponent: float
    passed: bool


def check_jump_upper(form: DirichletForm, params: SpaceParams):
    """Fit ``C`` in ``J(x, y) <= C d(x, y)**-(alpha+beta)``."""
    expo = params.alpha + params.beta
    d = form.space.dist
    off = ~np.eye(form.n, dtype=bool)
    scaled = np.zeros_like(d)
    scaled[off] = form.jump_density[off] * d[off] ** expo
    x, y = np.unravel_index(int(np.argmax(scaled)), scaled.shape)
    C = float(scaled[x, y])
    return C, JumpUpperReport(C, (int(x), int(y)), expo, bool(np.isfinite(C)))
