"""Closed-loop system identification with the controller in the loop.

Any plant stabilized by a known controller K can be written as the
interconnection of K with a stable, strictly causal operator Q.  Training
a parameterized stable Q inside that interconnection gives models that K
provably stabilizes, even when the plant itself is open-loop unstable,
and an indirect fitting strategy on the external excitation stays
consistent under colored measurement noise.

The package provides the operator protocol (``seqops``), the trainable
stable family (``stable_family``), the interconnection and exact core
(``interconnect``), benchmark systems (``plants``), datasets, training
strategies, evaluation metrics, property-based self-verification
(``verify``) and a config-driven CLI (``ici``).
"""

from .seqops import (CausalOperator, StrictlyCausalOperator, DivergedRunError,
                     DIVERGENCE_LIMIT, FeedbackInverse, IdentityOperator,
                     LinearStateSpace, SeriesOperator, StaticOperator,
                     UnitDelay, ZeroOperator, as_sequence, feedback_inverse,
                     lp_norm, run_guarded, series, truncate)
from .stable_family import (ACTIVATIONS, ParamGrads, QOperator,
                            StableOperatorParams, incremental_gain_bound,
                            init_params, load_params, project_spectral,
                            q_backward, q_forward, q_step, save_params)
from .interconnect import (ClosedLoopSystem, ICIModel, TrueQOperator,
                           closed_loop_run, collect_dataset, construct_true_q,
                           ici_step)
from .datasets import Dataset, dataset_hash, load_dataset, save_dataset
from .plants import (ArmaNoise, Benchmark, GaussianNoise, PointMassRobot,
                     ProportionalController, ScalarPolyController,
                     ScalarUnstablePlant, StaticGainController,
                     TruncatedGaussianNoise, ZeroController, ZeroNoise,
                     get_benchmark, linear_benchmark, noise_from_config)
from .training import (STRATEGY_KINDS, Strategy, TrainConfig, TrainResult,
                       TrainingAbortError, cost, grad_check, model_operator,
                       normalize_kind, predict, resolve_scales, train)
from .metrics import (MetricReport, confidence_interval, consistency_sweep,
                      evaluate, evaluate_detailed, impulse_response,
                      ir_distance, ir_norm, r_squared, summarize_sweep)
from .experiments import (ConfigError, cmd_evaluate, cmd_generate, cmd_sweep,
                          cmd_train, load_config, resolve_config)
from .verify import run_suite

__version__ = "0.1.0"

__all__ = [
    "ACTIVATIONS", "ArmaNoise", "Benchmark", "CausalOperator",
    "ClosedLoopSystem", "ConfigError", "DIVERGENCE_LIMIT", "Dataset",
    "DivergedRunError", "FeedbackInverse", "GaussianNoise", "ICIModel",
    "IdentityOperator", "LinearStateSpace", "MetricReport", "ParamGrads",
    "PointMassRobot", "ProportionalController", "QOperator",
    "STRATEGY_KINDS", "ScalarPolyController", "ScalarUnstablePlant",
    "SeriesOperator", "StableOperatorParams", "StaticGainController",
    "StaticOperator", "Strategy", "StrictlyCausalOperator", "TrainConfig",
    "TrainResult", "TrainingAbortError", "TruncatedGaussianNoise",
    "TrueQOperator", "UnitDelay", "ZeroController", "ZeroNoise",
    "ZeroOperator", "as_sequence", "closed_loop_run", "cmd_evaluate",
    "cmd_generate", "cmd_sweep", "cmd_train", "collect_dataset",
    "confidence_interval", "consistency_sweep", "construct_true_q", "cost",
    "dataset_hash", "evaluate", "evaluate_detailed", "feedback_inverse",
    "get_benchmark", "grad_check", "ici_step", "impulse_response",
    "incremental_gain_bound", "init_params", "ir_distance", "ir_norm",
    "linear_benchmark", "load_config", "load_dataset", "load_params",
    "lp_norm", "model_operator", "noise_from_config", "normalize_kind",
    "predict", "project_spectral", "q_backward", "q_forward", "q_step",
    "r_squared", "resolve_config", "resolve_scales", "run_guarded",
    "run_suite", "save_dataset", "save_params", "series",
    "summarize_sweep", "train", "truncate",
]
