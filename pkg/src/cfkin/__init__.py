"""Numerical engine for discrete coagulation-fragmentation kinetics.

Simulates the truncated cluster equations under detailed balance, computes
equilibria and the critical mass, tracks the free-energy/dissipation
functionals, and property-tests the explicit inequalities behind the
convergence theory.
"""

from .dynamics import (IntegratorConfig, State, initial_state, integrate,
                       moment, moment_rate, rhs, truncation_study)
from .equilibrium import (DBSequence, EquilibriumProfile, K_z, build_db,
                          build_Q, compute_rho_s, equilibrium_profile,
                          estimate_zs, partition_sum, solve_z)
from .errors import (CfkinError, ConfigError, DetailedBalanceError,
                     DomainError, EstimationFailedError, KernelRangeError,
                     PreconditionError, StiffnessError,
                     SupercriticalMassError)
from .functionals import (DiagnosticsCollector, DiagnosticsRecord,
                          dissipation_bd, dissipation_cf, free_energy,
                          free_energy_lower_bound, h_theorem_check,
                          proximity_bound_check, relative_energy,
                          relative_energy_series, strong_distance)
from .inequalities import (ProbeResult, f_difference_bound,
                           mass_difference_probe, moment_log_bound_Q,
                           moment_log_bound_c, power_inequality,
                           relative_energy_probe, run_probe_suite,
                           square_log_bound, supercritical_dissipation_probe,
                           tail_sum_bound, xlogx_bound)
from .kernels import (BeckerDoringKernel, GeneralizedBDKernel,
                      HypothesisReport, Kernel, KernelTables,
                      PowerLawExpKernel, TableKernel, becker_doring_unit,
                      reference_kernel, validate_hypotheses)

__version__ = "0.1.0"
