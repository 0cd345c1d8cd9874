"""decaylab: desk-scale numerics for decay-rate preservation under perturbation.

Verifies, numerically, when solutions of x' = -f(x) + g(t) and
dX = -f(X) dt + sigma(t) dB inherit the decay rate F^{-1}(t) of the
unperturbed flow, where F(x) = integral_x^1 du/f(u).
"""

from .classify import (
    RateVerdict,
    RatioSeries,
    Verdict,
    check_condition_a,
    check_condition_c,
    estimate_lambda,
    predict,
    rate_verdict,
    ratio_series,
    verdicts_agree,
)
from .errors import ConfigError, DecaylabError, DomainError, IntegrationError, ValidationError
from .flow import FlowMap, InverseFlow, compute_F, compute_F_inverse, dump_flow, verify_phi_F_bounds
from .nonlinearity import (
    DecayClass,
    LimitEstimate,
    NonlinearitySpec,
    ScaleGrid,
    check_phi_bar_log_bound,
    check_superlinearity,
    classify_nonlinearity,
    custom,
    estimate_phi_bar,
    estimate_phi_under,
    estimate_rho_limits,
    eval_f,
    flat_exponential,
    from_table,
    linear,
    power,
    validate_nonlinearity,
)
from .ode_sim import (
    PerturbationSpec,
    Trajectory,
    custom_perturbation,
    gamma_of,
    integrate_external,
    integrate_internal,
    oscillatory,
    power_tail,
    reduce_external_to_internal,
    zero_perturbation,
)
from .scenario import Scenario, load_scenario, scenario_from_dict
from .sde_sim import (
    NoiseSpec,
    PathEnsemble,
    classify_ensemble,
    compute_Sigma,
    estimate_mu,
    noise_constant,
    noise_custom,
    noise_power_tail,
    sigma_tail_integral,
    simulate_ensemble,
)

__version__ = "0.1.0"
