"""mfergo: particle Monte Carlo for ergodic mean-field control.

Simulates controlled McKean-Vlasov dynamics by interacting-particle
approximation, certifies dissipativity/contraction margins, constructs the
ergodic value and bias function by vanishing discount, and cross-checks the
fixed-point, Abelian-Tauberian, HJB-residual, and verification relations
against analytic oracles.
"""

from .model import (ActionCost, ActionSet, BoundedFunction, DissipativityReport,
                    LipschitzConstants, ModelSpec, bounded_function,
                    dissipativity_margin, lipschitz_constants,
                    sample_check_dissipativity)
from .particle import (EmpiricalMeasure, Ensemble, GapCurve, InitialLaw,
                       RngStream, SimConfig, sample_initial,
                       second_moment_curve, simulate, step_euler,
                       synchronous_coupling_gap, w2_distance)
from .policy import (AffineClampedPolicy, ConstantPolicy, OptimizerConfig,
                     PiecewisePolicy, PolicyFamily, TabularPolicy, evaluate,
                     optimize_policy, policy_from_json, policy_to_json)
from .value import (DiscountedValue, FiniteHorizonValue, TerminalReward,
                    discounted_reward, dpp_residual, finite_horizon_value,
                    value_discounted)
from .lions import (DerivativeField, InterpolantDerivativeSource,
                    MomentFunctional, OracleDerivativeSource,
                    PoissonBiasOracle, SeparableFunctional, greedy_feedback,
                    hamiltonian_F, hjb_residual, lions_derivative,
                    mean_functional, mean_squared_functional,
                    second_moment_functional)
from .ergodic import (ErgodicPair, PhiInterpolant, ProbeGrid,
                      abelian_tauberian_check, fixed_point_residual,
                      long_run_average, vanishing_discount, verification_run)
from .benchmarks import BENCHMARK_NAMES, get_benchmark, probe_grid_for
from .errors import BlowUpError, ConfigError, MissingConstantsError, OptimizerError

__version__ = "0.1.0"
