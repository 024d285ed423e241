"""Chat-completion backed generator: research, coding with repair, and review."""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Callable

import httpx
import numpy as np

from ..backtester import CandidateFailure
from ..dsl import DslError, Program, parse_program, serialize
from .base import (HYPOTHESIS_FIELDS, GenerationContext, GenerationFailure, GeneratorOutcome,
                   Hypothesis, Insight, categorize, describe_record, template_analysis)

log = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "STRATMAP_API_KEY"
# the research reply may use either name for the last section
TAG_ALIASES = {"experimentation_ideas": ("experimentation_ideas", "next_step_ideas")}
ANALYSIS_KEYS = (
    "hypothesis_evaluation_score", "hypothesis_evaluation_reasoning",
    "program_alignment_evaluation_score", "program_alignment_evaluation_reasoning",
    "results_analysis_score", "results_analysis_reasoning",
    "readability", "maintainability", "efficiency", "reasoning", "insight",
)
ANALYSIS_SCORES = ("hypothesis_evaluation_score", "program_alignment_evaluation_score",
                   "results_analysis_score", "readability", "maintainability", "efficiency")
TEMPLATE_NAMES = ("research", "coding", "repair", "hypothesis_repair", "analysis", "consolidate",
                  "dsl_schema")


class EndpointError(RuntimeError):
    pass


class MalformedHypothesis(ValueError):
    def __init__(self, missing: list[str], text: str = ""):
        super().__init__(f"hypothesis is missing sections: {', '.join(missing)}")
        self.missing = missing
        self.text = text


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = "http://localhost:8000/v1"
    model: str = "default"
    temperature: float = 0.7
    api_key: str | None = None
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout: float = 60.0
    max_retries: int = 2
    backoff: float = 1.0
    max_concurrency: int = 4

    def resolved_key(self) -> str | None:
        return os.environ.get(self.api_key_env) or self.api_key


class ChatClient:
    """Minimal chat-completion client with retry and a concurrency cap."""

    def __init__(self, config: EndpointConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self.sleep = sleep
        headers = {"Content-Type": "application/json"}
        key = config.resolved_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(base_url=config.base_url.rstrip("/") + "/", headers=headers,
                                  timeout=config.timeout, transport=transport)
        self._gate = threading.BoundedSemaphore(max(1, config.max_concurrency))
        self.calls = 0

    def close(self) -> None:
        self._http.close()

    def complete(self, messages: list[dict]) -> str:
        body = {"model": self.config.model, "temperature": self.config.temperature, "messages": messages}
        last: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self.sleep(self.config.backoff * 2 ** (attempt - 1))
            self.calls += 1
            try:
                with self._gate:
                    resp = self._http.post("chat/completions", json=body)
            except httpx.HTTPError as exc:
                last = exc
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = EndpointError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise EndpointError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise EndpointError(f"unexpected response shape: {exc}") from exc
        raise EndpointError(f"endpoint failed after {self.config.max_retries + 1} attempts: {last}")


def load_templates(directory: str | Path | None = None) -> dict[str, str]:
    """Prompt templates by name; a directory overrides the bundled files one by one."""
    out = {}
    bundled = resources.files("stratmap") / "prompts"
    for name in TEMPLATE_NAMES:
        path = Path(directory) / f"{name}.txt" if directory else None
        if path is not None and path.exists():
            out[name] = path.read_text(encoding="utf-8")
        else:
            out[name] = (bundled / f"{name}.txt").read_text(encoding="utf-8")
    return out


def fill(template: str, **values: str) -> str:
    """Substitute ``{name}`` placeholders; unknown braces are left alone."""
    return re.sub(r"\{([a-z_]+)\}", lambda m: str(values.get(m.group(1), m.group(0))), template)


def parse_hypothesis(text: str) -> Hypothesis:
    found = {}
    for field in HYPOTHESIS_FIELDS:
        for tag in TAG_ALIASES.get(field, (field,)):
            m = re.search(rf"<{tag}>(.*?)</{tag}>", text, re.S | re.I)
            if m and m.group(1).strip():
                found[field] = " ".join(m.group(1).split())
                break
    missing = [f for f in HYPOTHESIS_FIELDS if f not in found]
    if missing:
        raise MalformedHypothesis(missing, text)
    return Hypothesis(**found)


def extract_program_text(reply: str) -> str:
    m = re.search(r"```[a-zA-Z]*\n(.*?)```", reply, re.S)
    text = m.group(1) if m else reply
    # drop chatter before the first program line
    i = text.find("program ")
    return text[i:] if i > 0 else text


def parse_analysis_json(reply: str) -> dict:
    start, end = reply.find("{"), reply.rfind("}")
    if start < 0 or end <= start:
        raise ValueError("no JSON object in reply")
    data = json.loads(reply[start:end + 1])
    missing = [k for k in ANALYSIS_KEYS if k not in data]
    if missing:
        raise ValueError(f"analysis JSON is missing {missing}")
    for k in ANALYSIS_SCORES:
        v = float(data[k])
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{k} = {v} outside [0, 1]")
        data[k] = v
    if not str(data["insight"]).strip():
        raise ValueError("empty insight")
    return {k: data[k] for k in ANALYSIS_KEYS}


class LLMGenerator:
    def __init__(self, client: ChatClient, taxonomy=None, templates: dict[str, str] | None = None,
                 repair_budget: int = 3, param_bounds: dict | None = None, kind_table: dict | None = None):
        self.client = client
        self.taxonomy = tuple(taxonomy) if taxonomy is not None else None
        self.templates = templates or load_templates()
        self.repair_budget = repair_budget
        self.param_bounds = param_bounds or {}
        self.kind_table = kind_table

    def _ask(self, prompt: str, transcript: list, role: str) -> str:
        messages = [{"role": "user", "content": prompt}]
        reply = self.client.complete(messages)
        transcript.append({"role": role, "prompt": prompt, "reply": reply})
        return reply

    def propose(self, context: GenerationContext, rng: np.random.Generator | None = None) -> GeneratorOutcome:
        return self.llm_propose(context, rng)

    def llm_propose(self, context: GenerationContext, rng=None) -> GeneratorOutcome:
        taxonomy = context.taxonomy if self.taxonomy is None else self.taxonomy
        t = self.templates
        transcript: list = []
        common = dict(
            parent=describe_record(context.parent),
            cousins="\n\n".join(describe_record(c) for c in context.cousins) or "(none)",
            insights="\n".join(f"- {i.text}" for i in context.insights) or "(none yet)",
            data_schema=context.data_schema_prompt,
            taxonomy=", ".join(taxonomy),
            dsl_schema=t["dsl_schema"],
        )

        reply = self._ask(fill(t["research"], **common), transcript, "research")
        try:
            hypothesis = parse_hypothesis(reply)
        except MalformedHypothesis as exc:
            retry = fill(t["hypothesis_repair"], parse_error=", ".join(exc.missing), hypothesis=reply)
            reply = self._ask(retry, transcript, "hypothesis_repair")
            try:
                hypothesis = parse_hypothesis(reply)
            except MalformedHypothesis as exc2:
                exc2.transcripts = transcript
                raise
        hyp_text = "\n".join(f"{k}: {v}" for k, v in hypothesis.to_dict().items())

        prompt = fill(t["coding"], hypothesis=hyp_text, **common)
        reply = self._ask(prompt, transcript, "coding")
        repairs = 0
        while True:
            text = extract_program_text(reply)
            try:
                program, check_result = self._accept(text, context, taxonomy)
                return GeneratorOutcome(hypothesis, program, repairs, transcript,
                                        "llm proposal", check_result)
            except (DslError, CandidateFailure) as exc:
                error = exc.feedback() if isinstance(exc, DslError) else str(exc)
            if repairs >= self.repair_budget:
                failure = GenerationFailure(
                    f"no valid program after {repairs} repair attempts; last error: {error}")
                failure.transcripts = transcript
                raise failure
            repairs += 1
            log.info("repair attempt %d: %s", repairs, error)
            reply = self._ask(fill(t["repair"], program=text, parse_error=error,
                                   dsl_schema=t["dsl_schema"]), transcript, "repair")

    def _accept(self, text: str, context: GenerationContext, taxonomy) -> tuple[Program, object]:
        program = parse_program(text, param_bounds=self.param_bounds)
        if not program.tags or any(tag not in taxonomy for tag in program.tags):
            program = replace(program, tags=categorize(program, taxonomy, self.kind_table))
        program = replace(program, name=f"i{context.island_id}_g{context.generation}")
        program = parse_program(serialize(program), param_bounds=self.param_bounds)
        check_result = context.check(program) if context.check is not None else None
        return program, check_result

    def analyze(self, candidate, parent, outcome: GeneratorOutcome | None = None) -> tuple[dict, str]:
        base, summary = template_analysis(candidate, parent, "llm proposal")
        if candidate.error:
            return base, summary
        prompt = fill(self.templates["analysis"],
                      hypothesis=json.dumps(candidate.hypothesis, indent=1),
                      program=candidate.program_text, metrics=describe_record(candidate),
                      parent=describe_record(parent))
        transcript: list = []
        try:
            data = parse_analysis_json(self._ask(prompt, transcript, "analysis"))
        except (EndpointError, ValueError) as exc:
            log.warning("analysis degraded to template mode: %s", exc)
            base["degraded"] = str(exc)
            return base, summary
        if outcome is not None:
            outcome.raw_transcripts.extend(transcript)
        analysis = {"mode": "llm", **data, "verdict": base["verdict"], "score_delta": base["score_delta"],
                    "summary": data["reasoning"]}
        return analysis, str(data["insight"]).strip()

    def consolidate(self, insights: list[Insight]) -> str | None:
        text = "\n".join(f"- {i.text}" for i in insights)
        try:
            reply = self._ask(fill(self.templates["consolidate"], insights=text), [], "consolidate")
        except EndpointError as exc:
            log.warning("insight consolidation skipped: %s", exc)
            return None
        return reply.strip() or None


__all__ = ["EndpointError", "MalformedHypothesis", "EndpointConfig", "ChatClient", "LLMGenerator",
           "load_templates", "fill", "parse_hypothesis", "extract_program_text", "parse_analysis_json",
           "ANALYSIS_KEYS"]
