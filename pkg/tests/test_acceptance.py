"""Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned.

Run with ``pytest tests/test_acceptance.py -v``; the verdicts are repeated in
the ``acceptance criteria`` section of the terminal summary.
"""
import time

import numpy as np
import pytest

from heatlab.bounds import (check_ue, check_ue_loc, improvement_schedule, random_fs_instances,
                            synthetic_table, tail_exponent_fit, verify_fs, FsInstance)
from heatlab.cutoff import (averaged_cutoff, check_csa_strong, cib_constants, feasible_n,
                            resolvent_cutoff)
from heatlab.davies import davies_gap_suite, truncation_comparison
from heatlab.forms import (DirichletForm, assemble_form, energy, energy_measure,
                           energy_measure_polarized, truncate, weighted_energy_integral)
from heatlab.scenario import bundled_config, load_scenarios, run_scenario
from heatlab.semigroup import (HeatSemigroup, approximating_form, heat_kernel,
                               killed_semigroup)
from heatlab.space import cycle

from conftest import random_forms

STABLE = {"kind": "stable", "alpha": 1, "beta": 1, "scale": 1}
NN = {"kind": "nearest_neighbor", "weight": 1}


def _rel(a, b, scale):
    return abs(a - b) / max(scale, 1e-300)


def test_algebra_identities(criterion):
    rng = np.random.default_rng(101)
    forms = random_forms(20, seed=101, n_max=50)
    worst = 0.0
    start = time.perf_counter()
    for k in range(1000):
        f = forms[k % 20]
        u, v, w = rng.standard_normal((3, f.n))
        m = f.mass
        # signed measure integrates to the bilinear form
        pol = energy_measure_polarized(f, v, w).integral()
        worst = max(worst, _rel(pol, energy(f, v, w), abs(energy(f, v, w))
                                + energy(f, v) + energy(f, w)))
        # weighted integral equals the density form, u = 1 gives E(v, w)
        wi = weighted_energy_integral(f, u, v, w)
        dens = float(np.sum(u * energy_measure_polarized(f, v, w).density * m))
        worst = max(worst, _rel(wi, dens, abs(wi) + abs(dens)))
        one = weighted_energy_integral(f, np.ones(f.n), v, w)
        worst = max(worst, _rel(one, energy(f, v, w), energy(f, v) + energy(f, w)))
        # product rule
        lhs = energy(f, u * v, w)
        a, b = weighted_energy_integral(f, u, v, w), weighted_energy_integral(f, v, u, w)
        worst = max(worst, _rel(lhs, a + b, abs(a) + abs(b)))
        # energy measure total mass
        g = energy_measure(f, u).integral()
        worst = max(worst, _rel(g, energy(f, u), energy(f, u)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed <= 30
    criterion(1, "algebra identities", ok,
              f"worst relative error {worst:.2e} (<= 1e-10), {elapsed:.1f}s (<= 30s)")
    assert ok


def _normalized(form):
    s = -HeatSemigroup(form).evals.min()
    return DirichletForm(form.space, form.local_weights / s, form.jump_density / s)


def test_semigroup_suite(criterion):
    rng = np.random.default_rng(202)
    forms = random_forms(12, seed=202, n_max=64)
    start = time.perf_counter()
    sym = ck = cons = sub = conv = 0.0
    for f in forms:
        tab = heat_kernel(f, [0.1, 0.7, 0.8, 5.0])
        for K in tab.kernels:
            sym = max(sym, np.max(np.abs(K - K.T)) / K.max())
            cons = max(cons, np.max(np.abs((K * f.mass[None, :]).sum(axis=1) - 1)))
        composed = (tab.at(0.1) * f.mass[None, :]) @ tab.at(0.7)
        # relative to the sup norm: far entries of local kernels underflow to 0
        ck = max(ck, np.max(np.abs(composed - tab.at(0.8))) / tab.at(0.8).max())
        omega = rng.random(f.n) < 0.6
        omega[0] = True
        ktab = heat_kernel(f, [0.5, 3.0], omega=omega)
        sub = max(sub, float(ktab.row_mass().max()) - 1, -float(ktab.kernels.min()))
        g = rng.random(f.n)
        sub = max(sub, float(np.max(killed_semigroup(f, omega, 0.5, g * omega)
                                    - HeatSemigroup(f).apply(0.5, g * omega))))
        nf = _normalized(f)
        sg = HeatSemigroup(nf)
        u = rng.standard_normal(f.n)
        E = energy(nf, u)
        conv = max(conv, abs(approximating_form(nf, 2.0 ** -20, u, semigroup=sg) - E) / E)
    elapsed = time.perf_counter() - start
    ok = (sym <= 1e-12 and ck <= 1e-9 and cons <= 1e-10 and sub <= 1e-12 and conv <= 1e-6
          and elapsed <= 60)
    criterion(2, "semigroup suite", ok,
              f"symmetry {sym:.1e}, Chapman-Kolmogorov {ck:.1e} (<= 1e-9), "
              f"conservation {cons:.1e} (<= 1e-10), killed excess {sub:.1e}, "
              f"E^(t) error {conv:.1e} (<= 1e-6), {elapsed:.1f}s")
    assert ok


def test_truncation_comparison(criterion):
    worst = -np.inf
    for n in (32, 64):
        f = assemble_form(cycle(n), None, STABLE)
        for rho in (2, 4, 8):
            res = truncation_comparison(f, rho, [0.1, 1, 10])
            worst = max(worst, res.max_violation)
    ok = worst <= 1e-9
    criterion(3, "truncation comparison", ok, f"max violation {worst:.3e} (<= 1e-9)")
    assert ok


def test_davies_inequality(criterion):
    start = time.perf_counter()
    forms = [truncate(f, 3) for f in random_forms(10, seed=303, n_max=40)]
    res = davies_gap_suite(forms, n_trials=1000, p_values=(1, 2, 4), seed=303)
    a = np.linspace(-20, 20, 400001)
    elem = float(np.min(np.exp(2 * np.abs(a)) * a * a - np.expm1(a) ** 2))
    elapsed = time.perf_counter() - start
    ok = res.min_slack >= -1e-9 and elem >= 0 and elapsed <= 120
    criterion(4, "Davies inequality", ok,
              f"{res.n_trials} evaluations (both sign variants), min normalized slack "
              f"{res.min_slack:.3e} (>= -1e-9), elementary slack {elem:.1e}, {elapsed:.1f}s")
    assert ok


def _sup_gap_ok(cut, n):
    # the identity is exact; 1e-12 relative absorbs summation round-off
    return cut.sup_gap <= (1 + 1e-12) / n


def test_cutoff_constructions(criterion):
    notes, sandwich_ok = [], True
    local = assemble_form(cycle(64), NN, None)
    for form, beta in ((local, 2.0), (assemble_form(cycle(64), None, STABLE), 1.0)):
        cut = resolvent_cutoff(form, 0, 8, 16, beta)
        d = form.space.dist[0]
        sandwich = (np.all(cut.phi[d < 8] == 1) and np.all(cut.phi[d >= 24] == 0)
                    and np.all((cut.phi >= 0) & (cut.phi <= 1)))
        sandwich_ok &= bool(sandwich and cut.w.max() <= 16.0 ** beta)
    worst, ok = 0.0, sandwich_ok
    for n_pts, R, r in ((64, 8, 16), (256, 32, 64)):
        form = assemble_form(cycle(n_pts), None, STABLE)
        cap = feasible_n(form.space, 0, R, r)
        for n in range(1, cap + 1):
            cut = averaged_cutoff(form, 0, R, r, n, 1.0)
            worst = max(worst, n * cut.sup_gap)
            ok &= bool(_sup_gap_ok(cut, n) and cut.n == n)
        notes.append(f"cycle({n_pts}) n=1..{cap}")
    rng = np.random.default_rng(505)
    form = assemble_form(cycle(64), None, STABLE)
    v = resolvent_cutoff(form, 0, 8, 16, 1.0).v
    gv = energy_measure(form, v).density
    gphi = energy_measure(form, np.minimum(v, 1)).density
    contr = min(float(np.sum(u * u * (gv - gphi) * form.mass))
                for u in rng.standard_normal((500, 64)))
    ok &= contr >= -1e-12
    criterion(5, "cutoff constructions", ok,
              f"sandwich and w <= r^beta {sandwich_ok}; {', '.join(notes)}: max n*sup_gap "
              f"{worst:.15f} (<= 1, 1e-12 relative round-off allowed); "
              f"contraction min slack {contr:.2e}")
    assert ok


def test_cib_soundness(criterion):
    rng = np.random.default_rng(606)
    form = assemble_form(cycle(256), None, STABLE)
    cut = resolvent_cutoff(form, 0, 32, 64, 1.0)
    cib = cib_constants(form, cut, 1.0)
    gamma = energy_measure(form, cut.phi).density
    m = form.mass
    L = form.laplacian()
    U = rng.standard_normal((1000, 256))
    lhs = (U * U * gamma * m).sum(axis=1)
    E = 2 * np.einsum("ij,jk,ik->i", U, L, U)
    l2 = (U * U * m).sum(axis=1)
    worst_slack, worst_cert = np.inf, 0.0
    for c1, c2, cert in zip(cib.C1_grid, cib.C2_of_C1, cib.certificates):
        rhs = c1 * E + c2 / 64.0 * l2
        worst_slack = min(worst_slack, float(np.min((rhs - lhs) / np.maximum(rhs, 1))))
        if c2 > 0:
            lc = np.sum(cert * cert * gamma * m)
            rc = c1 * energy(form, cert) + c2 / 64.0 * np.sum(cert * cert * m)
            worst_cert = max(worst_cert, abs(lc - rc) / rc)
    ok = worst_slack >= -1e-9 and worst_cert <= 1e-6
    criterion(6, "CIB soundness and tightness", ok,
              f"{cib.C1_grid.size} C1 values x 1000 u, min slack {worst_slack:.2e} (>= -1e-9); "
              f"certificate relative error {worst_cert:.1e} (<= 1e-6)")
    assert ok


def test_csa_strong_scaling(criterion):
    form = assemble_form(cycle(256), None, STABLE)
    rep = check_csa_strong(form, 0, 32, 64, [1, 2, 4, 8], 1.0)
    slope = rep.slope_c1
    ok = bool(np.isfinite(slope) and -1.3 <= slope <= -0.7)
    c1 = ", ".join(f"{x:.3g}" for x in rep.c1_required)
    gaps = ", ".join(f"{x:.3f}" for x in rep.sup_gaps)
    criterion(7, "CSA_strong scaling", ok,
              f"slope {slope:.3f} (needs [-1.3, -0.7]); required C1 for n=1,2,4,8: [{c1}] "
              f"at C4={rep.C4:.4g}; sup gaps [{gaps}]")
    assert ok


def test_ode_comparison_bound(criterion):
    results = [verify_fs(inst) for inst in random_fs_instances(200, seed=808)]
    worst = max(r.worst_ratio for r in results)
    exact = verify_fs(FsInstance(1.0, 2.0, 1.0, 0.0, 1.0, (0.0,), (1.0,), np.inf, 5.0))
    ok = (all(r.worst_ratio <= 1 + 1e-6 for r in results)
          and exact.margin == pytest.approx(4.0, rel=1e-12))
    criterion(8, "ODE comparison bound", ok,
              f"200 instances, worst u/bound {worst:.4f} (<= 1+1e-6); "
              f"u' = -u^2 margin {exact.margin:.15f} (= 4)")
    assert ok


def test_exponent_schedule(criterion):
    sched = improvement_schedule(2, 6)
    ok = sched == [0.4, 0.5, 2 / 3, 1.0, 2.0]
    rng = np.random.default_rng(909)
    terminal = 0.0
    for _ in range(50):
        beta = rng.uniform(1.05, 4.0)
        bp0 = beta + rng.uniform(0.05, 8.0)
        s = improvement_schedule(beta, bp0)
        terminal = max(terminal, abs(s[-1] - beta / (beta - 1)))
        ok &= bool(np.all(np.diff(s) > 0))
    ok &= terminal == 0.0
    criterion(9, "exponent schedule", ok,
              f"beta=2, beta'=6 -> {[round(x, 6) for x in sched]}; "
              f"50 random terminal errors max {terminal:.1e}")
    assert ok


def test_checker_self_tests(criterion):
    sp256, sp512 = cycle(256), cycle(512)
    ue_tab = synthetic_table("ue", sp256, np.geomspace(1, 100, 16), 1, 1, R0=128, C=2.0, c=1.5)
    loc_tab = synthetic_table("ue_loc", sp512, np.geomspace(16, 3000, 20), 1, 2, R0=256,
                              C=0.7, c=2.0)
    a = check_ue(ue_tab, 1, 1, 128)
    b = check_ue_loc(loc_tab, 1, 2, 256)
    recover = (abs(a.C / 2.0 - 1) <= 0.01 and a.residual <= 0.01
               and abs(b.C / 0.7 - 1) <= 0.01 and b.residual <= 0.01)
    ue_as_loc = synthetic_table("ue", sp512, np.geomspace(16, 3000, 20), 1, 2, R0=256)
    flags = (not check_ue(loc_tab, 1, 2, 256).passed
             and not check_ue_loc(ue_as_loc, 1, 2, 256).passed)
    sc = {s.name: s for s in load_scenarios(bundled_config())}
    lt = sc["local_torus"]
    local = assemble_form(cycle(512), NN, None)
    tab = heat_kernel(local, lt.times)
    fit_loc = tail_exponent_fit(tab, 1, 2, lt.window, points=[0])
    st = sc["stable_torus"]
    stable = assemble_form(cycle(256), None, STABLE)
    fit_st = tail_exponent_fit(heat_kernel(stable, st.times), 1, 1, st.window, points=[0])
    tail = abs(fit_loc.theta - 2) <= 0.2 and not fit_loc.flagged and fit_st.flagged
    ok = bool(recover and flags and tail)
    criterion(10, "checker self-tests", ok,
              f"UE C={a.C:.4f} res={a.residual:.1e}; UE_loc C={b.C:.4f} res={b.residual:.1e}; "
              f"mismatches flagged={flags}; local theta={fit_loc.theta:.4f} "
              f"(R2 {fit_loc.r2:.6f}); stable R2 {fit_st.r2:.4f} flagged={fit_st.flagged}")
    assert ok


def test_implication_experiments(criterion):
    parts, ok = [], True
    for name in ("stable_torus", "local_torus"):
        start = time.perf_counter()
        rep = run_scenario(bundled_config(), name=name)
        elapsed = time.perf_counter() - start
        hard = [r for r in rep.records if not r.soft]
        soft = {r.name: r.status for r in rep.records if r.soft}
        good = rep.exit_code == 0 and all(r.passed for r in hard) and elapsed <= 600
        if name == "local_torus":
            good &= soft.get("ue_loc") == "pass"
        ok &= good
        parts.append(f"{name}: {len(hard)} hard checks pass={good}, soft {soft}, "
                     f"{elapsed:.0f}s")
    criterion(11, "implication experiments", ok, "; ".join(parts))
    assert ok
