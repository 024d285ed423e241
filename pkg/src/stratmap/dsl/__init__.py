from .baselines import BASELINE_KINDS, builtin_baseline
from .errors import (DslError, DslSyntaxError, EvaluationError, ParamOutOfRange, UnboundReference,
                     UnknownCategory, UnknownIndicator)
from .evaluate import TargetSchedule, compute_schedule, evaluate_targets
from .indicators import Warmup, compute_indicator, indicator_arrays
from .parser import parse_program
from .program import IndicatorSpec, Program, Rebalance, Sizing, serialize

__all__ = [
    "BASELINE_KINDS", "builtin_baseline", "DslError", "DslSyntaxError", "EvaluationError",
    "ParamOutOfRange", "UnboundReference", "UnknownCategory", "UnknownIndicator", "TargetSchedule",
    "compute_schedule", "evaluate_targets", "Warmup", "compute_indicator", "indicator_arrays",
    "parse_program", "IndicatorSpec", "Program", "Rebalance", "Sizing", "serialize",
]
