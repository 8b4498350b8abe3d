"""Prompt assembly and the pluggable text-generation endpoint.

Reasoning paths render one per line as
``name [Group] --relation--> name [Group] --group leap--> ...``; the block
goes into a chat-completion request together with the patient text. A
deterministic stub generator echoes every path concept name plus the first
sentence of the input, which keeps the end-to-end loop testable offline.
"""

from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass

import numpy as np
import requests

from .concept_linker import PatientInput
from .embeddings import EmbeddingTable, group_vectors
from .errors import (
    DataFormatError,
    EndpointNetworkError,
    EndpointResponseError,
    EndpointStatusError,
    EndpointTimeoutError,
)
from .gro_trainer import PatientContext, patient_context, run_rollout
from .kg_store import KnowledgeGraph
from .policy_net import PolicyParams, greedy_action, sample_action
from .retrieval_env import ReasoningPath

PROMPT_TEMPLATE_VERSION = "v1"

DEFAULT_TEMPLATE = {
    "version": PROMPT_TEMPLATE_VERSION,
    "system": (
        "You are a clinical assistant. Using the patient's pre-admission "
        "information and the reasoning paths from a medical knowledge graph, "
        "write the patient's discharge instruction."
    ),
    "instruction": (
        "Write the discharge instruction now as one plain-text paragraph."
    ),
}

_RETRY_BACKOFF_S = 0.05


@dataclass
class GeneratorConfig:
    endpoint: str = ""
    model: str = "local-model"
    temperature: float = 0.0
    max_tokens: int = 512
    auth_env: str = "R2AG_API_KEY"
    timeout_s: float = 30.0
    max_retries: int = 2

    def validate(self) -> None:
        if self.temperature < 0.0:
            raise ValueError("temperature must be >= 0")
        if self.timeout_s <= 0.0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass
class PromptBundle:
    system: str
    patient_text: str
    path_block: str  # one rendered line per path; "" when retrieval is off
    instruction: str

    def user_message(self) -> str:
        parts = ["Pre-admission information:", self.patient_text.strip(), ""]
        parts.append("Reasoning paths from a medical knowledge graph:")
        parts.append(self.path_block if self.path_block else "(none)")
        parts.extend(["", self.instruction])
        return "\n".join(parts)


def render_paths(paths: list[ReasoningPath], kg: KnowledgeGraph) -> str:
    """One line per path: concept names with [Group] tags joined by arrows."""
    if not paths:
        raise ValueError("no paths to render")
    lines = []
    for path in paths:
        pieces = []
        for i, step in enumerate(path.steps):
            name = kg.name_of(step.concept)
            group = kg.group_of(step.concept)
            seg = f"{name} [{group}]"
            if i == 0:
                pieces.append(seg)
            else:
                pieces.append(f"--{step.label}--> {seg}")
        lines.append(" ".join(pieces))
    return "\n".join(lines)


def select_paths(
    paths: list[ReasoningPath], max_paths: int | None
) -> list[ReasoningPath]:
    """Truncate to ``max_paths`` keeping the smallest origin ids."""
    use = list(paths)
    if max_paths is not None and len(use) > max_paths:
        use = sorted(use, key=lambda p: p.origin)[:max_paths]
    return use


def build_prompt_bundle(
    patient: PatientInput,
    paths: list[ReasoningPath],
    kg: KnowledgeGraph,
    max_paths: int | None = None,
    template: dict | None = None,
) -> PromptBundle:
    """Assemble the prompt; ``max_paths`` keeps the smallest origin ids."""
    tpl = template or DEFAULT_TEMPLATE
    use = select_paths(paths, max_paths)
    block = render_paths(use, kg) if use else ""
    return PromptBundle(
        system=tpl["system"],
        patient_text=patient.pre_admission,
        path_block=block,
        instruction=tpl["instruction"],
    )


def load_template(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            tpl = json.load(fh)
    except OSError as exc:
        raise DataFormatError(f"cannot read file: {exc}", path=path) from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"invalid JSON: {exc}", path=path) from exc
    for key in ("version", "system", "instruction"):
        if not isinstance(tpl.get(key), str):
            raise DataFormatError(f"template missing string field {key!r}", path=path)
    return tpl


def retrieve_for_patient(
    params: PolicyParams,
    patient: PatientInput,
    kg: KnowledgeGraph,
    table: EmbeddingTable,
    max_steps: int = 5,
    greedy: bool = True,
    rng: np.random.Generator | None = None,
    gv=None,
    ctx: PatientContext | None = None,
) -> list[ReasoningPath]:
    """One inference rollout (greedy by default; sampled behind a flag)."""
    if ctx is None:
        ctx = patient_context(patient.pre_admission, kg, table)
    if gv is None:
        gv = group_vectors(kg, table)
    if greedy:
        select = greedy_action
    else:
        if rng is None:
            raise ValueError("sampled inference needs an rng")
        select = lambda dist: sample_action(dist, rng)  # noqa: E731
    rec = run_rollout(params, ctx, kg, table, gv, max_steps, select)
    return rec.paths


_SEGMENT_SPLIT_RE = re.compile(r" --.+?--> ")
_NAME_RE = re.compile(r"^(.*) \[[^\]]+\]$")


def path_concept_names(path_block: str) -> list[str]:
    """Concept names appearing in a rendered block, deduped in order."""
    names: list[str] = []
    seen: set[str] = set()
    for line in path_block.splitlines():
        for segment in _SEGMENT_SPLIT_RE.split(line):
            m = _NAME_RE.match(segment.strip())
            if m:
                name = m.group(1)
                if name not in seen:
                    seen.add(name)
                    names.append(name)
    return names


def stub_generate(bundle: PromptBundle) -> str:
    """Offline test double: echo path concept names and the first sentence."""
    names = path_concept_names(bundle.path_block)
    first = bundle.patient_text.split(".")[0].strip()
    parts = ["Discharge summary."]
    if first:
        parts.append(f"Admission noted: {first}.")
    if names:
        parts.append("Hospital course addressed " + ", ".join(names) + ".")
    return " ".join(parts)


def generate(cfg: GeneratorConfig, bundle: PromptBundle) -> str:
    """POST a chat-completion request and return the first completion's text.

    Retries network failures, timeouts and 5xx responses with a short
    backoff; 4xx and unparseable bodies fail immediately. The bearer token,
    if any, comes from the environment variable named by ``cfg.auth_env``.
    """
    cfg.validate()
    if not cfg.endpoint:
        raise ValueError("no endpoint configured (use stub mode for offline runs)")
    payload = {
        "model": cfg.model,
        "messages": [
            {"role": "system", "content": bundle.system},
            {"role": "user", "content": bundle.user_message()},
        ],
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
    }
    headers = {"Content-Type": "application/json"}
    token = os.environ.get(cfg.auth_env)
    if token:
        headers["Authorization"] = f"Bearer {token}"

    last_error = None
    attempts = 0
    for attempt in range(cfg.max_retries + 1):
        if attempt > 0:
            time.sleep(_RETRY_BACKOFF_S * attempt)
        attempts = attempt + 1
        try:
            resp = requests.post(
                cfg.endpoint, json=payload, headers=headers, timeout=cfg.timeout_s
            )
        except requests.Timeout:
            last_error = EndpointTimeoutError(
                f"no response within {cfg.timeout_s}s from {cfg.endpoint}",
                attempts=attempts,
            )
            continue
        except requests.RequestException as exc:
            last_error = EndpointNetworkError(
                f"request to {cfg.endpoint} failed: {exc}", attempts=attempts
            )
            continue
        if 200 <= resp.status_code < 300:
            try:
                body = resp.json()
                content = body["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise EndpointResponseError(
                    f"unparseable completion response: {exc}", attempts=attempts
                ) from exc
            if not isinstance(content, str):
                raise EndpointResponseError(
                    "completion content is not a string", attempts=attempts
                )
            return content
        if resp.status_code >= 500:
            last_error = EndpointStatusError(resp.status_code, attempts=attempts)
            continue
        raise EndpointStatusError(resp.status_code, attempts=attempts)
    raise last_error
