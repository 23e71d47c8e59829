"""Numerical optimal stopping for partially observed piecewise-deterministic
Markov processes.

The pipeline simulates the embedded (state, inter-jump time, observation)
chain exactly, runs the exact recursive filter on the finite post-jump state
space, quantizes the (filter, time) chain with competitive learning, solves
a quantized backward dynamic program over a per-stratum time grid, and
replays the recorded optimizers as an explicit stopping rule whose loss is
controlled by computable bounds.
"""

from .model import (ChainBatch, ChainPath, HazardDomainError,
                    ModelValidationError, PdmpModel, RootBracketError,
                    cum_hazard_generic, example_model, linear_flow_model,
                    make_model, rng_stream, sample_jump_time, simulate_chain,
                    simulate_paths, trajectory_value_sup,
                    trajectory_value_sups)
from .filter import (DegenerateLikelihoodError, FilterDomainError,
                     filter_init, filter_path, filter_paths, filter_step,
                     filter_step_batch)
from .quantize import (QuantErrors, QuantizedStage, QuantizerConfigError,
                       clvq_train, load_stages, project, quant_error,
                       quant_errors, save_stages, simulate_theta)
from .dp import (DeltaInfeasibleError, TimeGrid, ValuePolicyTable,
                 backward_recursion, build_time_grid, delta_lower_bound,
                 delta_upper_bound, load_table, op_J_hat, op_K_hat,
                 save_table, terminal_value)
from .stop import (StoppingDecision, evaluate_policy, policy_decide,
                   run_policy, run_policy_batch)
from .bounds import (BoundInputs, DeltaConditionError, bound_inputs,
                     empirical_bound, lipschitz_constants, policy_bound,
                     theoretical_bound, value_bound_steps)
from .cli import (ConfigError, PipelineConfig, ReportRow, RunReport,
                  cmd_evaluate, cmd_pipeline, cmd_report, cmd_simulate,
                  cmd_solve, cmd_train, config_from_mapping, load_config,
                  load_report, main, save_report)

__version__ = "0.1.0"

__all__ = [
    "BoundInputs", "ChainBatch", "ChainPath", "ConfigError",
    "DegenerateLikelihoodError", "DeltaConditionError",
    "DeltaInfeasibleError", "FilterDomainError", "HazardDomainError",
    "ModelValidationError", "PdmpModel", "PipelineConfig", "QuantErrors",
    "QuantizedStage", "QuantizerConfigError", "ReportRow", "RootBracketError",
    "RunReport", "StoppingDecision", "TimeGrid", "ValuePolicyTable",
    "backward_recursion", "bound_inputs", "build_time_grid", "clvq_train",
    "cmd_evaluate", "cmd_pipeline", "cmd_report", "cmd_simulate", "cmd_solve",
    "cmd_train", "config_from_mapping", "cum_hazard_generic",
    "delta_lower_bound", "delta_upper_bound", "empirical_bound",
    "evaluate_policy", "example_model", "filter_init", "filter_path",
    "filter_paths", "filter_step", "filter_step_batch", "linear_flow_model",
    "lipschitz_constants", "load_config", "load_report", "load_stages",
    "load_table", "main", "make_model", "op_J_hat", "op_K_hat",
    "policy_bound", "policy_decide", "project", "quant_error", "quant_errors",
    "rng_stream", "run_policy", "run_policy_batch", "sample_jump_time",
    "save_report", "save_stages", "save_table", "simulate_chain",
    "simulate_paths", "simulate_theta", "terminal_value",
    "theoretical_bound", "trajectory_value_sup", "trajectory_value_sups",
    "value_bound_steps",
]
