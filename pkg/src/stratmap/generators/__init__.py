from .base import (EQUITY_TAXONOMY, HYPOTHESIS_FIELDS, KIND_CATEGORY, GenerationContext,
                   GenerationFailure, Generator, GeneratorOutcome, Hypothesis, Insight, categorize,
                   curate_insights, data_schema_prompt, describe_record, score_delta,
                   template_analysis, verdict_for)
from .llm import (ChatClient, EndpointConfig, EndpointError, LLMGenerator, MalformedHypothesis,
                  load_templates)
from .mutational import MutationalGenerator

__all__ = [
    "EQUITY_TAXONOMY", "HYPOTHESIS_FIELDS", "KIND_CATEGORY", "GenerationContext", "GenerationFailure",
    "Generator", "GeneratorOutcome", "Hypothesis", "Insight", "categorize", "curate_insights",
    "data_schema_prompt", "describe_record", "score_delta", "template_analysis", "verdict_for",
    "ChatClient", "EndpointConfig", "EndpointError", "LLMGenerator", "MalformedHypothesis",
    "load_templates", "MutationalGenerator",
]
