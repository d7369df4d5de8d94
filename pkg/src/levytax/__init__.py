"""Optimal threshold taxation with minimal bailouts for spectrally negative Levy processes."""
from .exceptions import DomainError, LevyTaxError, NonConvergence, RootFindingFailure
from .levy_model import (JumpComponent, LevyModel, VariationClass, laplace_exponent,
                         laplace_exponent_derivative, phi_inverse, variation_class)
from .scale_functions import (ScaleEvaluator, build_scale_evaluator, scale_ratio_limit_check,
                              w_bar, w_prime, w_scale, z_bar, z_double_prime, z_lower_bound,
                              z_prime, z_scale)
from .tax_optimizer import (QuadratureSpec, TaxParams, c_func, check_char_pde, check_ode_C,
                            check_verif_inequalities, optimal_threshold, q_func, r_gamma,
                            r_gamma_finite, value, value_finite_horizon)
from .path_engine import (ControlledPath, SamplePath, discounted_functionals, reflect_at_zero,
                          running_sup, simulate_path, tax_reflection_transform,
                          tax_transform_threshold)
from .monte_carlo import (McConfig, McEstimate, Strategy, compare_analytic, estimate_value,
                          sweep)
from .estimators import TaxReflectionTransformer, ThresholdTaxOptimizer

__version__ = "0.1.0"
