import numpy as np
import pytest

from heatlab.davies import (DaviesConfig, OutOfRegimeError, assembled_offdiag,
                            choose_parameters, davies_gap, davies_gap_suite, jump_eta,
                            jump_lambda, offdiag_bound, oscillation, perfect_cutoff_diagnostic,
                            perturbation_ledger, perturbed_semigroup, proof_constants,
                            truncation_comparison, truncation_energy_slack)
from heatlab.forms import assemble_form, energy, energy_measure, truncate
from heatlab.semigroup import HeatSemigroup
from heatlab.space import cycle

from conftest import random_forms


@pytest.fixture(scope="module")
def stable32():
    return assemble_form(cycle(32), None, {"kind": "stable", "alpha": 1, "beta": 1})


def test_oscillation_closed_ball():
    sp = cycle(8)
    f = np.arange(8.0)
    assert oscillation(sp, f, 1) == 7.0  # 0 and 7 are neighbours on the cycle
    assert oscillation(sp, f, 0) == 0.0
    with pytest.raises(ValueError):
        oscillation(sp, f, -1)


def test_ledger_lambda(stable32):
    psi = np.linspace(0, 1, 32)
    led = perturbation_ledger(stable32, psi)
    assert led.osc_rho == pytest.approx(1.0)
    assert led.Lambda == pytest.approx(np.exp(2.0))
    assert perturbation_ledger(stable32, psi, "local").Lambda == 1.0
    t4 = truncate(stable32, 4)
    assert perturbation_ledger(t4, psi).osc_rho == pytest.approx(1.0)
    local = assemble_form(cycle(32), {"kind": "nearest_neighbor", "weight": 1}, None)
    # only neighbouring pairs carry conductance; the wrap edge 0-31 is the widest
    assert perturbation_ledger(truncate(local, 0.5), psi).osc_rho == pytest.approx(1.0)
    with pytest.raises(ValueError):
        perturbation_ledger(stable32, psi, "mixed")


def test_perturbed_semigroup_identities(rng):
    for f in random_forms(4, seed=41, n_max=30):
        sg = HeatSemigroup(f)
        psi = 0.5 * rng.standard_normal(f.n)
        g, h = rng.standard_normal((2, f.n))
        assert np.allclose(perturbed_semigroup(f, np.zeros(f.n), 0.3, g, sg), sg.apply(0.3, g))
        assert np.allclose(perturbed_semigroup(f, psi, 0.0, g, sg), g)
        a = np.sum(perturbed_semigroup(f, psi, 0.4, g, sg) * h * f.mass)
        b = np.sum(g * perturbed_semigroup(f, -psi, 0.4, h, sg) * f.mass)
        assert a == pytest.approx(b, rel=1e-10)
        two = perturbed_semigroup(f, psi, 0.2, perturbed_semigroup(f, psi, 0.3, g, sg), sg)
        assert np.allclose(two, perturbed_semigroup(f, psi, 0.5, g, sg), rtol=1e-9, atol=1e-12)


def test_davies_gap_zero_psi(rng):
    f = random_forms(1, seed=42)[0]
    u = rng.random(f.n)
    assert davies_gap(f, np.zeros(f.n), u, 1) == pytest.approx(energy(f, u) / 2, rel=1e-12)


def test_davies_gap_two_point(two_point):
    # E(u, v) = 2 (u0 - u1)(v0 - v1) on the two-point space
    f = np.array([1.0, 2.0])
    psi = np.array([0.3, -0.2])
    em, ep = np.exp(-psi) * f, np.exp(psi) * f
    lhs = 2 * (em[0] - em[1]) * (ep[0] - ep[1])
    Lam = np.exp(2 * 0.5)
    gamma_density = 0.5 ** 2  # same at both points
    rhs = 2 * 1.0 / 2 - 9 * Lam * gamma_density * (1.0 + 4.0)
    assert davies_gap(two_point, psi, f, 1) == pytest.approx(lhs - rhs, rel=1e-12)


def test_davies_gap_constant_f(rng, stable32):
    psi = rng.standard_normal(32)
    Lam = perturbation_ledger(stable32, psi).Lambda
    for c, p in ((0.5, 1), (2.0, 2), (1.3, 4)):
        expected = c ** (2 * p) * (energy(stable32, np.exp(-psi), np.exp(psi))
                                   + 9 * p * Lam * energy_measure(stable32, psi).integral())
        got = davies_gap(stable32, psi, np.full(32, c), p)
        assert got == pytest.approx(expected, rel=1e-10)


def test_davies_gap_rejects_bad_input(stable32):
    with pytest.raises(ValueError):
        davies_gap(stable32, np.zeros(32), -np.ones(32), 1)
    with pytest.raises(ValueError):
        davies_gap(stable32, np.zeros(32), np.ones(32), 0.5)


def test_davies_gap_suite_small():
    forms = random_forms(3, seed=43, n_max=30)
    forms = [truncate(f, 3) for f in forms]
    res = davies_gap_suite(forms, n_trials=100, seed=1)
    assert res.passed and res.min_slack >= -1e-9
    assert res.n_trials == 3 * 100 * 2


def test_elementary_exponential_inequality():
    a = np.linspace(-20, 20, 200001)
    slack = np.exp(2 * np.abs(a)) * a * a - np.expm1(a) ** 2
    assert slack.min() >= 0


def test_truncation_energy_slack(rng, stable32):
    for rho in (1, 2, 4, 8):
        for _ in range(20):
            assert truncation_energy_slack(stable32, rho, rng.standard_normal(32)) >= -1e-12


def test_jump_parameters_invariants():
    for alpha, beta in ((1, 1), (2, 0.5), (1, 1.8)):
        eta = jump_eta(alpha, beta)
        assert 4 * (beta + 1) * (eta + 2 * eta ** 2) == pytest.approx(beta / (alpha + beta))
        r, t = np.exp(60.0 / beta), 1.0
        cfg = choose_parameters(alpha, beta, r, t)
        assert cfg.lam == pytest.approx(jump_lambda(alpha, beta, r, t))
        assert cfg.c2 == pytest.approx(eta + 2 * eta ** 2)
        assert cfg.c1 == pytest.approx(2 * (beta + 1) * cfg.c2)
        assert cfg.T == pytest.approx(np.exp(cfg.c1 * cfg.lam) / cfg.rho ** beta)
        assert cfg.lam * cfg.eta >= 1
        assert cfg.n >= 6 * cfg.lam
        assert isinstance(cfg.to_dict(), dict)


def test_jump_eta_value():
    assert jump_eta(1, 1) == pytest.approx((np.sqrt(1.5) - 1) / 4)
    assert jump_eta(1, 1) == pytest.approx(0.056186, abs=1e-6)


def test_small_ratio_is_out_of_regime():
    # r^beta/t = e^2 gives lambda = 4, far below 1/eta
    with pytest.raises(OutOfRegimeError):
        choose_parameters(1, 1, np.e ** 2, 1.0)
    with pytest.raises(OutOfRegimeError):
        choose_parameters(1, 1, 1e6, 1.0, c2_threshold=1e7)
    with pytest.raises(ValueError):
        choose_parameters(1, 1, -1, 1.0)


def test_local_branch():
    cfg = choose_parameters(1, 2, 100.0, 1.0, branch="local", C0=2.0)
    assert cfg.eta == 0.5
    assert cfg.lam == pytest.approx((1e4 / 8.0) ** 0.2)
    assert cfg.T == pytest.approx(1e-4)
    assert cfg.K0 == pytest.approx(cfg.T * 2.0 * cfg.lam ** 6)
    with pytest.raises(OutOfRegimeError):
        choose_parameters(1, 2, 2.0, 1.0, branch="local")


def test_proof_constants_chain():
    c = proof_constants(1, 1, 0.5)
    assert c["C_N_prime"] == pytest.approx(2 * np.exp(12))
    assert c["C7"] == pytest.approx(np.sqrt(c["C_N_prime"]) * 2 ** 4)
    assert c["C8"] == pytest.approx(2 * c["C7"] ** 2)


def test_offdiag_bound_shapes():
    d = np.array([0.0, 1.0, 10.0])
    jump = offdiag_bound(None, 1, 1, 100, d, 2.0, C=3.0)
    diag = 3.0 * 2.0 ** -1 * np.exp(2.0 / 100)
    assert jump[0] == pytest.approx(diag)
    assert jump[2] == pytest.approx(3.0 * np.exp(2.0 / 400) * 2.0 / 100)
    cfg = choose_parameters(1, 2, 100.0, 1.0, branch="local")
    loc = offdiag_bound(cfg, 1, 2, 100, d, 4.0, C=1.0, c=0.5)
    base = 4.0 ** -0.5 * np.exp(4.0 / (4 * 1e4))
    assert loc[0] == pytest.approx(base)
    # beta' = 2 beta + 2 = 6 gives exponent beta/(beta'-1) = 2/5
    assert loc[2] == pytest.approx(base * np.exp(-0.5 * (10 / 2.0) ** 0.4))
    imp = offdiag_bound(cfg, 1, 2, 100, d, 4.0, c=0.5, improved=True)
    assert imp[2] == pytest.approx(base * np.exp(-0.5 * (10 / 2.0) ** 2))
    cfg1 = choose_parameters(1, 1, 1e4, 1.0, branch="local")
    with pytest.raises(ValueError):
        offdiag_bound(cfg1, 1, 1, 100, d, 1.0, improved=True)


@pytest.mark.parametrize("n", [32, 64])
def test_truncation_comparison_stable(n):
    f = assemble_form(cycle(n), None, {"kind": "stable", "alpha": 1, "beta": 1})
    for rho in (2, 4, 8):
        res = truncation_comparison(f, rho, [0.1, 1, 10])
        assert res.passed and res.max_violation <= 1e-9
        assert res.tail_sup == pytest.approx(rho ** -2.0)


def test_truncation_comparison_degenerate():
    f = assemble_form(cycle(16), None, {"kind": "stable", "alpha": 1, "beta": 1})
    res = truncation_comparison(f, 100, [1.0])
    assert res.tail_sup == 0 and abs(res.max_violation) <= 1e-12
    local = assemble_form(cycle(16), {"kind": "nearest_neighbor", "weight": 1}, None)
    res = truncation_comparison(local, 2, [0.5, 5.0])
    assert res.tail_sup == 0 and abs(res.max_violation) <= 1e-12
    with pytest.raises(ValueError):
        truncation_comparison(f, 0, [1.0])


def test_assembled_offdiag_reports():
    f = assemble_form(cycle(64), None, {"kind": "stable", "alpha": 1, "beta": 1})
    res = assembled_offdiag(f, 1, 1, 32, C_N=0.5, C0=10.0, C3=1.0,
                            times=[1e-3, 1.0], radii=[4, 8, 40])
    assert res.passed and res.n_pairs > 0
    assert res.n_out_of_regime >= 2  # t = 1 is out of regime; 2r = 80 exceeds R0
    assert 0 < res.C12_fit < np.inf
    assert res.constants["C8"] == proof_constants(1, 1, 0.5)["C8"]


def test_perfect_cutoff_is_diagnostic(stable32):
    cfg = choose_parameters(1, 1, 2.0 ** 20, 1.0)
    diag = perfect_cutoff_diagnostic(stable32, cfg, 0, 4, 8, 1.0)
    assert diag.n_requested == cfg.n
    assert diag.n_used <= 8 < diag.n_requested
    assert diag.target == pytest.approx(1 / (6 * cfg.lam) ** 2)
    assert diag.within == (diag.sup_gap <= diag.target)
    assert isinstance(cfg, DaviesConfig)
