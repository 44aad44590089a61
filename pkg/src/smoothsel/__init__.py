"""Private selection with smooth sensitivity and heavy-tailed admissible noise."""

from smoothsel.errors import (BudgetError, ConfigurationError, DomainError, ParameterError,
                              PreconditionError, ScoreFileError, SizeError, SmoothselError)
from smoothsel.mechanisms import (BudgetSplit, ScoreTable, choose_budget, exponential_mechanism,
                                  permute_and_flip, permute_and_flip_noise,
                                  smooth_numeric_mechanism, smooth_private_selection)
from smoothsel.noise import NoiseSpec, Sidedness, make_rng, sample, verify_admissibility
from smoothsel.sensitivity import (UNBOUNDED, FiniteDomain, SensitivityProfile, build_profile,
                                   smooth_sensitivity_oracle, smooth_sensitivity_thm4,
                                   smooth_upper_bound_thm5)
from smoothsel.tdt import TdtTable, tdt_distance, tdt_statistic

__version__ = "0.1.0"
