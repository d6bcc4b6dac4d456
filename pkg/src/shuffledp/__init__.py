"""Frequency estimation in the shuffle model: LDP mechanisms, amplification
bounds, secret-shared oblivious shuffling with fake reports, and heavy hitters."""

from .amplification import (AdversaryModel, amplify, invert_amplification, optimal_dprime, peos_eps,
                            peos_optimal_dprime, plan_parameters, var_grr, var_solh, var_ue)
from .errors import (ConfigurationError, InfeasibleError, InputError, OnionError, OverflowBudgetError,
                     ProtocolAbort, ResourceError, ShuffleDPError)
from .mechanisms import AueConfig, GrrConfig, SolhConfig, UeConfig, aggregate, perturb_batch
from .protocol import PeosConfig, exact_epsilon, extract_view, peos_run, poisoning_resistance_check, ss_run
from .treehist import TreeHistConfig, treehist_run

__version__ = "0.1.0"

__all__ = [
    "AdversaryModel", "amplify", "invert_amplification", "optimal_dprime", "peos_eps", "peos_optimal_dprime",
    "plan_parameters", "var_grr", "var_solh", "var_ue",
    "ConfigurationError", "InfeasibleError", "InputError", "OnionError", "OverflowBudgetError", "ProtocolAbort",
    "ResourceError", "ShuffleDPError",
    "AueConfig", "GrrConfig", "SolhConfig", "UeConfig", "aggregate", "perturb_batch",
    "PeosConfig", "exact_epsilon", "extract_view", "peos_run", "poisoning_resistance_check", "ss_run",
    "TreeHistConfig", "treehist_run",
]
