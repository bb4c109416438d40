"""Simulator for selfish VM migration across capacity-limited clouds."""
from .errors import (BudgetExceeded, DegenerateBracket, FlockError, InsufficientSamples,
                     InvalidBound, InvalidInstance, InvalidOutcome, NegativeWeight,
                     NoFeasibleAssignment, OverloadedCloud)
from .model import (Instance, cloud_loads, cloud_weights, e1_instance, load_instance,
                    processing_delay, save_instance, social_cost, utilities, vm_utility)
from .regularize import RegFn, check_lemma1_condition, eval_f, poa_bound, theorem2_lambda
from .protocol import ProtocolConfig, Trace, is_eta_nash, migration_test, run, run_controlled
from .oracle import brute_force_optimum, price_of_anarchy, verify_nash
from .scenarios import GenParams, gen_random_instance, initial_assignment

__version__ = "0.1.0"

__all__ = [
    "BudgetExceeded", "DegenerateBracket", "FlockError", "InsufficientSamples", "InvalidBound",
    "InvalidInstance", "InvalidOutcome", "NegativeWeight", "NoFeasibleAssignment",
    "OverloadedCloud", "Instance", "cloud_loads", "cloud_weights", "e1_instance",
    "load_instance", "processing_delay", "save_instance", "social_cost", "utilities",
    "vm_utility", "RegFn", "check_lemma1_condition", "eval_f", "poa_bound", "theorem2_lambda",
    "ProtocolConfig", "Trace", "is_eta_nash", "migration_test", "run", "run_controlled",
    "brute_force_optimum", "price_of_anarchy", "verify_nash", "GenParams",
    "gen_random_instance", "initial_assignment",
]
