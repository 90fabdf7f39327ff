"""Finite metric measure spaces and their geometric queries.

Spaces are immutable: a symmetric distance matrix, positive point masses and a
localization radius ``R0``. Graph generators use the shortest-path metric and
unit masses.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

__all__ = [
    "MetricMeasureSpace",
    "SpaceParams",
    "RegularityReport",
    "build_space",
    "cycle",
    "torus",
    "path",
    "sierpinski",
    "ultrametric",
    "explicit",
    "ball",
    "volume",
    "volumes",
    "check_upper_regularity",
    "radius_grid",
]

GRID_RATIO = 2.0 ** 0.25


@dataclass(frozen=True, eq=False)
class MetricMeasureSpace:
    """A finite metric measure space.

    Parameters
    ----------
    dist : ndarray, shape (n, n)
        Symmetric distance matrix with zero diagonal.
    mass : ndarray, shape (n,)
        Strictly positive point masses.
    R0 : float, optional
        Localization radius in ``(0, diam]``; defaults to the diameter.
    name : str
        Generator label, used in reports.
    """

    dist: np.ndarray
    mass: np.ndarray
    R0: float | None = None
    name: str = "explicit"
    _check_triangle: bool = field(default=False, repr=False)

    def __post_init__(self):
        dist = np.array(self.dist, dtype=float)
        mass = np.array(self.mass, dtype=float)
        if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
            raise ValueError("distance matrix must be square")
        n = dist.shape[0]
        if n < 2:
            raise ValueError("a space needs at least 2 points")
        if mass.shape != (n,):
            raise ValueError(f"expected {n} masses, got shape {mass.shape}")
        if not np.all(np.isfinite(dist)):
            raise ValueError("distances must be finite (disconnected graph?)")
        if np.any(np.diag(dist) != 0):
            raise ValueError("dist(x, x) must be 0")
        if not np.array_equal(dist, dist.T):
            raise ValueError("distance matrix is not symmetric")
        off = ~np.eye(n, dtype=bool)
        if np.any(dist[off] <= 0):
            raise ValueError("distinct points must be at positive distance")
        if np.any(mass <= 0) or not np.all(np.isfinite(mass)):
            raise ValueError("masses must be finite and strictly positive")
        if self._check_triangle:
            _check_triangle_inequality(dist)
        dist.setflags(write=False)
        mass.setflags(write=False)
        object.__setattr__(self, "dist", dist)
        object.__setattr__(self, "mass", mass)
        diam = float(dist.max())
        R0 = diam if self.R0 is None else float(self.R0)
        if not 0 < R0 <= diam:
            raise ValueError(f"R0 must lie in (0, diam={diam}], got {R0}")
        object.__setattr__(self, "R0", R0)

    @property
    def n(self) -> int:
        return self.dist.shape[0]

    @property
    def diam(self) -> float:
        return float(self.dist.max())

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    @property
    def min_distance(self) -> float:
        off = ~np.eye(self.n, dtype=bool)
        return float(self.dist[off].min())

    @property
    def neighbours(self) -> np.ndarray:
        """Boolean adjacency of nearest-neighbour pairs.

        ``x ~ y`` when ``d(x, y)`` is the smallest distance seen from ``x`` or
        from ``y``. For unit-length graphs this is the edge set.
        """
        d = self.dist + np.diag(np.full(self.n, np.inf))
        nearest = d.min(axis=1)
        adj = (d == nearest[:, None]) | (d == nearest[None, :])
        return adj

    def with_R0(self, R0: float) -> "MetricMeasureSpace":
        return MetricMeasureSpace(self.dist, self.mass, R0=R0, name=self.name)

    def with_mass(self, mass) -> "MetricMeasureSpace":
        return MetricMeasureSpace(self.dist, mass, R0=self.R0, name=self.name)


@dataclass(frozen=True)
class SpaceParams:
    """Volume exponent ``alpha`` and walk exponent ``beta``."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.beta > 0:
            raise ValueError("beta must be positive")


def _check_triangle_inequality(dist, atol=1e-12):
    n = dist.shape[0]
    scale = max(1.0, float(dist.max()))
    for z in range(n):
        via = dist[:, z][:, None] + dist[z, :][None, :]
        bad = dist > via + atol * scale
        if bad.any():
            x, y = np.argwhere(bad)[0]
            raise ValueError(
                f"triangle inequality fails: d({x},{y})={dist[x, y]} > "
                f"d({x},{z}) + d({z},{y})={via[x, y]}"
            )


def _graph_space(n, edges, name, mass=None, R0=None):
    rows, cols = zip(*edges)
    adj = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    dist = shortest_path(adj, directed=False, unweighted=True)
    if mass is None:
        mass = np.ones(n)
    return MetricMeasureSpace(dist, mass, R0=R0, name=name)


def cycle(n: int, mass=None, R0=None) -> MetricMeasureSpace:
    """Cycle graph on ``n`` vertices with the graph metric."""
    if n < 2:
        raise ValueError("size parameters must be >= 2")
    i = np.arange(n)
    gap = np.abs(i[:, None] - i[None, :])
    dist = np.minimum(gap, n - gap).astype(float)
    return MetricMeasureSpace(dist, np.ones(n) if mass is None else mass,
                              R0=R0, name=f"cycle({n})")


def torus(n: int, dims: int = 2, mass=None, R0=None) -> MetricMeasureSpace:
    """Discrete torus ``(Z/n)^dims`` with the graph (l1) metric."""
    if n < 2 or dims < 1:
        raise ValueError("size parameters must be >= 2")
    coords = np.array(list(itertools.product(range(n), repeat=dims)))
    gap = np.abs(coords[:, None, :] - coords[None, :, :])
    dist = np.minimum(gap, n - gap).sum(axis=-1).astype(float)
    size = coords.shape[0]
    return MetricMeasureSpace(dist, np.ones(size) if mass is None else mass,
                              R0=R0, name=f"torus({n},{dims})")


def path(n: int, mass=None, R0=None) -> MetricMeasureSpace:
    """Path graph on ``n`` vertices."""
    if n < 2:
        raise ValueError("size parameters must be >= 2")
    i = np.arange(n)
    dist = np.abs(i[:, None] - i[None, :]).astype(float)
    return MetricMeasureSpace(dist, np.ones(n) if mass is None else mass,
                              R0=R0, name=f"path({n})")


def _gasket_edges(level):
    # integer barycentric-style coordinates (a, b) inside a triangle of side 2**(level-1)
    side = 2 ** (level - 1)
    triangles = [((0, 0), (side, 0), (0, side))]
    for _ in range(level - 1):
        refined = []
        for p, q, s in triangles:
            pq = ((p[0] + q[0]) // 2, (p[1] + q[1]) // 2)
            ps = ((p[0] + s[0]) // 2, (p[1] + s[1]) // 2)
            qs = ((q[0] + s[0]) // 2, (q[1] + s[1]) // 2)
            refined += [(p, pq, ps), (pq, q, qs), (ps, qs, s)]
        triangles = refined
    vertices = sorted({v for tri in triangles for v in tri})
    index = {v: k for k, v in enumerate(vertices)}
    edges = set()
    for tri in triangles:
        for a, b in itertools.combinations(tri, 2):
            i, j = sorted((index[a], index[b]))
            edges.add((i, j))
    return len(vertices), sorted(edges)


def sierpinski(level: int, mass=None, R0=None) -> MetricMeasureSpace:
    """Sierpinski gasket graph.

    Level 1 is a single triangle (3 vertices); each further level glues three
    copies of the previous one, so level ``k`` has ``3 (3**(k-1) + 1) / 2``
    vertices and graph diameter ``2**(k-1)``.
    """
    if level < 1:
        raise ValueError("level must be >= 1")
    n, edges = _gasket_edges(level)
    return _graph_space(n, edges, f"sierpinski({level})", mass=mass, R0=R0)


def ultrametric(depth: int, arity: int, mass=None, R0=None) -> MetricMeasureSpace:
    """Leaves of a complete ``arity``-ary tree of height ``depth``.

    Two leaves whose lowest common ancestor sits ``h`` levels up are at
    distance ``2**(h-1)``.
    """
    if depth < 1 or arity < 2:
        raise ValueError("size parameters must be >= 2")
    n = arity ** depth
    i = np.arange(n)
    h = np.zeros((n, n), dtype=int)
    a, b = i[:, None].copy(), i[None, :].copy()
    for level in range(1, depth + 1):
        a, b = a // arity, b // arity
        h = np.where((h == 0) & (a == b) & (i[:, None] != i[None, :]), level, h)
    dist = np.where(h > 0, 2.0 ** (h - 1), 0.0)
    return MetricMeasureSpace(dist, np.ones(n) if mass is None else mass,
                              R0=R0, name=f"ultrametric({depth},{arity})")


def explicit(dist, mass=None, R0=None) -> MetricMeasureSpace:
    """Space from an explicit distance matrix (validated, incl. triangle inequality)."""
    dist = np.asarray(dist, dtype=float)
    if mass is None:
        mass = np.ones(dist.shape[0])
    return MetricMeasureSpace(dist, mass, R0=R0, name="explicit", _check_triangle=True)


_GENERATORS = {
    "cycle": cycle,
    "torus": torus,
    "path": path,
    "sierpinski": sierpinski,
    "sierpinski_level": sierpinski,
    "ultrametric": ultrametric,
    "explicit": explicit,
}


def build_space(spec: dict) -> MetricMeasureSpace:
    """Build a space from a generator description.

    ``spec`` is a mapping with a ``kind`` key naming the generator (``cycle``,
    ``torus``, ``path``, ``sierpinski``, ``ultrametric`` or ``explicit``) and the
    generator's keyword arguments, e.g. ``{"kind": "cycle", "n": 16}``.
    """
    spec = dict(spec)
    try:
        kind = spec.pop("kind")
    except KeyError:
        raise ValueError("space spec needs a 'kind'") from None
    if kind not in _GENERATORS:
        raise ValueError(f"unknown space kind {kind!r}")
    if kind == "explicit" and isinstance(spec.get("dist"), str):
        spec["dist"] = np.loadtxt(spec["dist"].splitlines(), ndmin=2)
    return _GENERATORS[kind](**spec)


def ball(space: MetricMeasureSpace, x: int, r: float) -> np.ndarray:
    """Indices of the open ball ``{y : d(x, y) < r}``."""
    if not r > 0:
        raise ValueError("radius must be positive")
    return np.flatnonzero(space.dist[x] < r)


def ball_mask(space: MetricMeasureSpace, x: int, r: float) -> np.ndarray:
    return space.dist[x] < r


def volume(space: MetricMeasureSpace, x: int, r: float) -> float:
    """Measure of the open ball ``B(x, r)``."""
    if not r > 0:
        raise ValueError("radius must be positive")
    return float(space.mass[space.dist[x] < r].sum())


def volumes(space: MetricMeasureSpace, r: float, closed: bool = False) -> np.ndarray:
    """Ball volumes for every centre at once."""
    inside = space.dist <= r if closed else space.dist < r
    return inside @ space.mass


def radius_grid(space: MetricMeasureSpace, ratio: float = GRID_RATIO) -> np.ndarray:
    """Geometric grid from the smallest positive distance up to the diameter."""
    lo, hi = space.min_distance, space.diam
    k = int(np.floor(np.log(hi / lo) / np.log(ratio) + 1e-12))
    grid = lo * ratio ** np.arange(k + 1)
    if grid[-1] < hi:
        grid = np.append(grid, hi)
    return grid


@dataclass
class RegularityReport:
    C_fit: float
    argmax_x: int
    argmax_r: float
    right_limit: bool
    alpha: float
    grid: np.ndarray
    grid_ratio: float


def check_upper_regularity(space: MetricMeasureSpace, params: SpaceParams | float):
    """Fit the constant in ``V(x, r) <= C r**alpha``.

    Radii run over the geometric grid of :func:`radius_grid` together with the
    right limits ``r -> d+`` at every distance value ``d`` inside the grid range;
    the latter make the supremum over the whole range exact, since ``V(x, .)`` is
    a left-continuous step function.

    Returns
    -------
    C_fit : float
    report : RegularityReport
    """
    alpha = params.alpha if isinstance(params, SpaceParams) else float(params)
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    grid = radius_grid(space)
    best = (-np.inf, 0, 0.0, False)
    for r in grid:
        v = volumes(space, r)
        x = int(np.argmax(v))
        ratio = v[x] / r ** alpha
        if ratio > best[0]:
            best = (ratio, x, float(r), False)
    for d in np.unique(space.dist):
        if d < grid[0] or d > grid[-1]:
            continue
        v = volumes(space, d, closed=True)
        x = int(np.argmax(v))
        ratio = v[x] / d ** alpha
        if ratio > best[0]:
            best = (ratio, x, float(d), True)
    C, x, r, right = best
    return float(C), RegularityReport(float(C), x, r, right, alpha, grid, GRID_RATIO)
