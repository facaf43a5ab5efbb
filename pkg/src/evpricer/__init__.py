"""Charging-price optimization on coupled road and power networks."""

__version__ = "0.1.0"

from .errors import (InputError, NumericalError, ParseError,
                     SingularJacobianError, UEConvergenceError)
from .network import (Arc, ChargingStation, ModelParams, ODDemand, ODPair,
                      TransportNetwork, load_tntp)
from .paths import PathStructure, generate_paths, hyper_arc_transform, k_shortest_paths
from .problem import PricingProblem, build_problem
from .ue import UEModel, UESolution, beckmann_objective, solve_ue, wardrop_residual
from .sensitivity import (EquilibratedSets, SensitivityResult, assemble_jacobians,
                          charge_flow_gradient, charge_flow_gradient_mixed,
                          classify_paths, cost_jacobian_diag, gradient,
                          gradient_mixed, select_eli)
from .pricing import (GDGSAConfig, PriceIterate, Trajectory, feasible_direction,
                      gauss_seidel_competition, gdgsa, profit, profit_gradient,
                      stepsize_search)
from .power import (OPFSolution, PowerNetwork, charging_load, coupled_fixed_point,
                    impact_report, load_power_file, solve_opf, transport_cost)
from .verify import Certificate, GridSpec, certify_ue, fd_gradient, grid_enumerate
