"""Numerical laboratory for heat kernel upper bounds of Dirichlet forms on finite spaces."""
from .space import (MetricMeasureSpace, SpaceParams, ball, build_space,
                    check_upper_regularity, cycle, path, sierpinski, torus, ultrametric,
                    volume)
from .forms import (DirichletForm, assemble_form, energy, energy_measure,
                    energy_measure_polarized, jump_tail_mass, truncate,
                    weighted_energy_integral, check_jump_upper)
from .semigroup import (HeatKernelTable, HeatSemigroup, approximating_form, check_survival,
                        generator, heat_kernel, killed_semigroup, resolvent)
from .cutoff import (CutoffPair, CibConstants, averaged_cutoff, check_csa_strong,
                     cib_constants, resolvent_cutoff, tent_function)
from .davies import (DaviesConfig, OutOfRegimeError, choose_parameters, davies_gap,
                     offdiag_bound, oscillation, perturbed_semigroup, truncation_comparison)
from .bounds import (BoundFit, check_due, check_nash, check_ue, check_ue_loc, fs_bound,
                     improvement_schedule, synthetic_table, tail_exponent_fit, verify_fs,
                     weighted_tail_mass)
from .scenario import Scenario, VerificationReport, emit_report, run_scenario

__version__ = "0.1.0"
