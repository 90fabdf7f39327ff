"""Compare the off-diagonal decay of a long-range jump walk and a nearest-neighbour walk.

The stable-like kernel keeps a polynomial tail ~ t / d**2, while the local
walk decays like exp(-(d**2 / t)). The tail exponent regression separates the
two: a clean straight line with slope near 2 for the local walk, a bent
(flagged) fit for the jump walk.
"""
import numpy as np

from heatlab import assemble_form, check_due, check_ue, check_ue_loc, cycle, heat_kernel
from heatlab.bounds import tail_exponent_fit


def main():
    stable = assemble_form(cycle(256), None, {"kind": "stable", "alpha": 1, "beta": 1})
    local = assemble_form(cycle(512), {"kind": "nearest_neighbor", "weight": 1}, None)

    tab_s = heat_kernel(stable, np.geomspace(1, 100, 16))
    tab_l = heat_kernel(local, np.geomspace(16, 3000, 20))

    print("jump walk on cycle(256), alpha = beta = 1")
    due = check_due(tab_s, 1, 1, 128)
    ue = check_ue(tab_s, 1, 1, 128)
    print(f"  on-diagonal C = {due.C:.4f}   residual {due.residual:.3f}")
    print(f"  stable envelope C = {ue.C:.4f}, c = {ue.c:.3f}, residual {ue.residual:.3f}")
    fit = tail_exponent_fit(tab_s, 1, 1, points=[0])
    print(f"  tail regression R^2 = {fit.r2:.4f}  flagged as non-exponential: {fit.flagged}")

    print("nearest-neighbour walk on cycle(512), alpha = 1, beta = 2")
    due = check_due(tab_l, 1, 2, 256)
    loc = check_ue_loc(tab_l, 1, 2, 256)
    print(f"  on-diagonal C = {due.C:.4f}   residual {due.residual:.3f}")
    print(f"  Gaussian envelope C = {loc.C:.4f}, c = {loc.c:.3f}, residual {loc.residual:.3f}")
    fit = tail_exponent_fit(tab_l, 1, 2, points=[0])
    print(f"  tail exponent theta = {fit.theta:.4f} (R^2 {fit.r2:.6f})")

    # far-field slice through the origin before mixing
    t = float(tab_s.times[0])
    P = tab_s.at(t)
    print(f"\np_t(0, d) * d**2 / t at t = {t:.2f}:")
    for d in (4, 8, 16, 32, 64):
        print(f"  d = {d:3d}: {P[0, d] * d ** 2 / t:.4f}")


if __name__ == "__main__":
    main()
