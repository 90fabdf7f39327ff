"""Cutoff functions on an annulus and the energy trade-off they induce.

Builds the resolvent cutoff and its averaged refinements on cycle(256) with
the stable jump form, prints the distance to the linear tent, and the
smallest first constant C1 needed to keep the second constant at C4.
For this annulus the averaged cutoffs already meet the target with C1 = 0
from n = 2 on, so no 1/n decay of C1 is visible.
"""
import numpy as np

from heatlab import assemble_form, averaged_cutoff, cib_constants, cycle, resolvent_cutoff
from heatlab.cutoff import check_csa_strong


def main():
    form = assemble_form(cycle(256), None, {"kind": "stable", "alpha": 1, "beta": 1})
    x0, R, r = 0, 32, 64

    cut = resolvent_cutoff(form, x0, R, r, 1.0)
    print(f"resolvent cutoff: epsilon = {cut.epsilon:.3f}, delta = {cut.delta:.3f}, "
          f"C0 = {cut.C0:.2f}, sup |phi - tent| = {cut.sup_gap:.3f}")

    for n in (2, 4, 8, 16, 32, 64):
        avg = averaged_cutoff(form, x0, R, r, n, 1.0)
        print(f"  averaged n = {n:2d}: sup |phi - tent| = {avg.sup_gap:.4f}  (1/n = {1 / n:.4f})")

    cib = cib_constants(form, cut, 1.0)
    print("\ntrade-off C2(C1) for the resolvent cutoff:")
    for c1, c2 in zip(cib.C1_grid[::4], cib.C2_of_C1[::4]):
        print(f"  C1 = {c1:9.3g}   C2 = {c2:.4f}")

    rep = check_csa_strong(form, x0, R, r, [1, 2, 4, 8], 1.0)
    print(f"\nC4 = {rep.C4:.3f}")
    for n, c1, gap in zip(rep.n_values, rep.c1_required, rep.sup_gaps):
        print(f"  n = {n}: required C1 = {c1:.4g}, sup gap = {gap:.3f}")
    print(f"log-log slope of required C1: {rep.slope_c1}")


if __name__ == "__main__":
    np.set_printoptions(precision=4)
    main()
