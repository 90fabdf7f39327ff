"""Where the Davies perturbation argument gives a usable off-diagonal bound.

For alpha = beta = 1 the amplitude is lambda = 2 log(r / t) and the argument
needs lambda >= 1/eta, about 17.8, i.e. r / t above e**8.9. Below that the
parameters are out of regime and only the on-diagonal bound is available.
The assembled constant C8 is large, so the bound is true but loose; the fit
of p_t against t / d**2 shows the constant that actually holds.
"""
import numpy as np

from heatlab import assemble_form, choose_parameters, cycle, OutOfRegimeError
from heatlab.davies import assembled_offdiag, proof_constants


def main():
    for ratio in (np.e ** 2, 1e3, 1e4, 1e6, 1e9):
        try:
            cfg = choose_parameters(1, 1, ratio, 1.0)
            print(f"r/t = {ratio:10.3g}: lambda = {cfg.lam:6.2f}, rho = {cfg.rho:9.3g}, "
                  f"n = {cfg.n}")
        except OutOfRegimeError as exc:
            print(f"r/t = {ratio:10.3g}: out of regime ({exc})")

    print("\nconstants from a Nash constant C_N = 0.5:", proof_constants(1, 1, 0.5))

    form = assemble_form(cycle(256), None, {"kind": "stable", "alpha": 1, "beta": 1})
    res = assembled_offdiag(form, 1, 1, 128, C_N=0.5, C0=14.6, C3=2.0 ** -12,
                            times=[1e-4, 1e-3], radii=[8, 16, 32])
    print(f"\nassembled bound: passed = {res.passed}, pairs = {res.n_pairs}, "
          f"max violation = {res.max_violation}")
    print(f"smallest C with p_t <= C t / d**2 on those pairs: {res.C12_fit:.3f}")


if __name__ == "__main__":
    main()
