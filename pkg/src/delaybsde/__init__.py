"""Monte Carlo solver and diagnostics for delayed BSDEs with integrable data."""

__version__ = "0.1.0"

from .delay_core import (DelayMeasure, SegmentFrame, TimeGrid, delay_average,
                         fubini_identity_check, make_grid, point_mass, snap_measure)
from .errors import InvalidArgument, NumericalFailure
from .estimates import (PNormSettings, check_apriori_pair, check_apriori_Z, d_p, lambda_p,
                        smallness_advisory)
from .model import (DelayedProblem, GeneratorSpec, MarketModel, TerminalCondition,
                    check_growth, check_lipschitz, evaluate_generator, make_problem,
                    portfolio_insurance_problem, sample_terminal)
from .solver import (DiscreteSolution, StoppingFamily, backward_sweep, class_D_norm,
                     picard_solve, truncate_scalar, truncation_ladder, uniqueness_probe)
from .stochastics import (PathEnsemble, RegressionBasis, conditional_expectation, mc_norm,
                          simulate)
