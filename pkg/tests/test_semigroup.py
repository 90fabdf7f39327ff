import numpy as np
import pytest
import scipy.linalg

from heatlab.forms import DirichletForm, assemble_form, energy
from heatlab.semigroup import (HeatSemigroup, approximating_form, check_survival, generator,
                               heat_kernel, killed_semigroup, resolvent, survival_deficit)
from heatlab.space import cycle, path

from conftest import random_forms


def normalized(form):
    """Same form scaled so that the generator has spectral radius 1."""
    s = -HeatSemigroup(form).evals.min()
    return DirichletForm(form.space, form.local_weights / s, form.jump_density / s)


def _expm_kernel(form, t, omega=None):
    """Oracle through scipy's Pade matrix exponential."""
    L = generator(form).matrix
    if omega is not None:
        idx = np.flatnonzero(omega)
        P = np.zeros_like(L)
        P[np.ix_(idx, idx)] = scipy.linalg.expm(t * L[np.ix_(idx, idx)])
    else:
        P = scipy.linalg.expm(t * L)
    return P / form.mass[None, :]


def test_two_point_generator(two_point):
    assert np.allclose(generator(two_point).matrix, [[-2, 2], [2, -2]])


def test_path3_local_generator():
    f = assemble_form(path(3), {"kind": "nearest_neighbor", "weight": 1}, None)
    lap = np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]], dtype=float)
    assert np.allclose(generator(f).matrix, -2 * lap)


def test_generator_identity(rng):
    for f in random_forms(8, seed=21):
        L = generator(f)
        u, v = rng.standard_normal((2, f.n))
        assert energy(f, u, v) == pytest.approx(-np.sum(L(u) * v * f.mass), rel=1e-10)
        assert np.allclose(L(np.ones(f.n)), 0, atol=1e-12)


def test_two_point_kernel_closed_form(two_point):
    for t in (0.01, 0.3, 2.0):
        P = heat_kernel(two_point, [t]).kernels[0]
        assert P[0, 1] == pytest.approx((1 - np.exp(-4 * t)) / 2, rel=1e-12)
        assert P[0, 0] == pytest.approx((1 + np.exp(-4 * t)) / 2, rel=1e-12)


def test_kernel_limits():
    f = random_forms(1, seed=22)[0]
    P0 = heat_kernel(f, [1e-12]).kernels[0] * f.mass[None, :]
    assert np.allclose(P0, np.eye(f.n), atol=1e-9)
    Pinf = heat_kernel(f, [1e4]).kernels[0]
    assert np.allclose(Pinf, 1 / f.space.total_mass, rtol=1e-8)


def test_kernel_matches_expm():
    for f in random_forms(4, seed=23, n_max=30):
        for t in (0.1, 1.0):
            got = heat_kernel(f, [t]).kernels[0]
            assert np.allclose(got, _expm_kernel(f, t), rtol=1e-9, atol=1e-12)


def test_symmetry_positivity_conservation():
    for f in random_forms(6, seed=24):
        tab = heat_kernel(f, [0.05, 0.5, 5.0])
        for K in tab.kernels:
            assert np.allclose(K, K.T, rtol=1e-12, atol=0)
            assert K.min() >= 0
        assert np.allclose(tab.row_mass(), 1.0, atol=1e-10)


def test_chapman_kolmogorov(rng):
    for f in random_forms(5, seed=25, n_max=64):
        t, s = rng.uniform(0.05, 2, 2)
        tab = heat_kernel(f, [t, s, t + s])
        Pt, Ps, Pts = tab.at(t), tab.at(s), tab.at(t + s)
        composed = (Pt * f.mass[None, :]) @ Ps
        assert np.allclose(composed, Pts, rtol=1e-9, atol=1e-14)


def test_diagonal_nonincreasing():
    f = random_forms(1, seed=26)[0]
    tab = heat_kernel(f, np.geomspace(0.01, 50, 30))
    diag = np.array([np.diag(K) for K in tab.kernels])
    assert np.all(np.diff(diag, axis=0) <= 1e-14)


def test_killed_two_point(two_point):
    out = killed_semigroup(two_point, [0], 0.7, [1.0, 1.0])
    assert out[0] == pytest.approx(np.exp(-1.4))
    assert out[1] == 0


def test_killed_whole_space_equals_free(rng):
    f = random_forms(1, seed=27)[0]
    g = rng.standard_normal(f.n)
    assert np.allclose(killed_semigroup(f, np.arange(f.n), 0.4, g),
                       HeatSemigroup(f).apply(0.4, g))


def test_killed_domination(rng):
    for f in random_forms(4, seed=28):
        omega = rng.random(f.n) < 0.6
        omega[0] = True
        g = rng.random(f.n)
        killed = killed_semigroup(f, omega, 0.5, g * omega)
        free = HeatSemigroup(f).apply(0.5, g * omega)
        assert np.all(killed >= -1e-14)
        assert np.all(killed <= free + 1e-12)
        tab = heat_kernel(f, [0.5], omega=omega)
        assert np.all(tab.row_mass() <= 1 + 1e-12)
        assert np.allclose(tab.kernels[0], _expm_kernel(f, 0.5, omega), atol=1e-12)


def test_resolvent(two_point):
    assert resolvent(two_point, [0], 1.0)[0] == pytest.approx(1 / 3)
    f = random_forms(1, seed=29)[0]
    assert np.allclose(resolvent(f, None, 0.25), 4.0)
    omega = np.arange(f.n) < f.n // 2
    w = resolvent(f, omega, 0.5)
    assert np.all(w >= 0) and np.all(w <= 2 + 1e-12)
    assert np.allclose(w, HeatSemigroup(f, omega).resolvent(0.5) * omega)


def test_resolvent_is_laplace_transform():
    from scipy.integrate import quad

    f = random_forms(1, seed=30, n_max=12)[0]
    omega = np.arange(f.n) < max(2, f.n // 2)
    sg = HeatSemigroup(f, omega)
    w = resolvent(f, omega, 0.7)
    one = omega.astype(float)
    x = 0
    val, _ = quad(lambda t: np.exp(-0.7 * t) * sg.apply(t, one)[x], 0, np.inf,
                  epsabs=1e-12, epsrel=1e-10)
    assert w[x] == pytest.approx(val, rel=1e-8)


def test_approximating_form_two_point(two_point):
    u = np.array([0.0, 1.0])
    for t in (0.1, 1.0, 3.0):
        assert approximating_form(two_point, t, u) == pytest.approx(
            (1 - np.exp(-4 * t)) / (2 * t), rel=1e-12)


def test_approximating_form_convergence(rng):
    for f in random_forms(10, seed=31, n_max=32):
        g = normalized(f)
        sg = HeatSemigroup(g)
        u = rng.standard_normal(f.n)
        E = energy(g, u)
        errs = [abs(approximating_form(g, 2.0 ** -k, u, semigroup=sg) - E) / E
                for k in range(21)]
        assert errs[-1] <= 1e-6
        assert errs[-1] < errs[0]
        assert approximating_form(g, 0.5, np.ones(f.n), semigroup=sg) == pytest.approx(
            0, abs=1e-12)


def test_survival_deficit_and_check():
    f = assemble_form(cycle(64), {"kind": "nearest_neighbor", "weight": 1}, None)
    small = survival_deficit(f, 0, 16, 1e-6)
    assert small.max() < 1e-4
    res = check_survival(f, 0, 16, 0.5, 0.3, 2.0)
    assert res.t_max == pytest.approx((0.3 * 16) ** 2)
    assert np.all(np.diff(res.deficits) >= -1e-12)
    assert res.passed == (res.worst <= 0.5)


def test_survival_whole_space_conservative():
    f = assemble_form(cycle(8, R0=4), {"kind": "nearest_neighbor", "weight": 1}, None)
    # B(0, 4.5) would be the whole space; inside R0 take the largest proper radius
    res = check_survival(f, 0, 3.9, 0.5, 0.5, 2.0)
    assert 0 <= res.worst < 1
    full = survival_deficit(f, 0, 10, 2.0)
    assert np.allclose(full, 0, atol=1e-12)


def test_kernel_cache(tmp_path):
    f = random_forms(1, seed=32)[0]
    a = HeatSemigroup(f, cache_dir=tmp_path)
    assert list(tmp_path.glob("eig_*.npz"))
    b = HeatSemigroup(f, cache_dir=tmp_path)
    assert np.array_equal(a.evals, b.evals)


def test_table_csv(tmp_path, two_point):
    tab = heat_kernel(two_point, [0.5, 1.0])
    p = tmp_path / "k.csv"
    tab.to_csv(p)
    rows = p.read_text().splitlines()
    assert rows[0] == "t,x,y,p" and len(rows) == 1 + 2 * 4
    with pytest.raises(KeyError):
        tab.at(0.7)
