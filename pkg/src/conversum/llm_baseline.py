"""Chat-model baseline: prompts, a retrying rate-limited client, and the comparison run."""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .corpus import DocumentRecord, language_pair_view
from .errors import AuthError, ContextOverflow, LlmError, RateLimited, SpecInvalid, TransientError
from .evaluation import EvalReport, ScoringBackends, SampleScore, aggregate, score_sample
from .languages import DISPLAY_NAMES, display_name, is_registered

logger = logging.getLogger(__name__)

API_KEY_ENV = "CONVERSUM_LLM_API_KEY"
MODES = ("zero_shot", "one_shot", "confidence_survey")

ZERO_SHOT_TEMPLATE = (
    "Summarize the given text in {target_language}, preferably in 80 words, "
    "concisely and informative. {document}"
)
ONE_SHOT_EXAMPLE = "Example:\nDocument: {example_document}\nSummary ({target_language}): {example_summary}\n\n"
SURVEY_PROMPT = (
    "How confident are you to generate high-quality cross-lingual summary concisely and "
    "informatively for low-resource languages? Find the list of languages - "
    + ", ".join(DISPLAY_NAMES)
    + ". Rate your confidence level for cross-lingual summarization on a scale of 1 to 10 "
    "for the given languages."
)

# Leading labels models like to put before the summary, per output language.
SUMMARY_LABELS: tuple[str, ...] = (
    "Summary", "Summarized text", "সারাংশ", "สรุป", "အနှစ်ချုပ်", "ማጠቃለያ", "ملخص", "الملخص",
    "摘要", "总结", "摘要如下", "要約", "सारांश", "Резюме", "Коротко", "Muhtasari", "Xulosa",
    "Tóm tắt", "Özet", "Résumé", "Resumen", "Resumo", "Nchịkọta", "Takaitaccen",
)


def label_pattern(labels: Iterable[str] = SUMMARY_LABELS) -> re.Pattern:
    alternatives = "|".join(re.escape(label) for label in sorted(labels, key=len, reverse=True))
    return re.compile(rf"^\s*\**\s*(?:{alternatives})\s*\**\s*[:：]\s*\**\s*", re.IGNORECASE)


DEFAULT_LABEL_RE = label_pattern()


@dataclass(frozen=True)
class PromptSpec:
    mode: str
    target_lang: str | None = None
    document: str = ""
    shot_example: tuple[str, str] | None = None

    def validate(self) -> None:
        if self.mode not in MODES:
            raise SpecInvalid(f"unknown prompt mode {self.mode!r}")
        if self.mode == "confidence_survey":
            return
        if self.target_lang is None or not is_registered(self.target_lang):
            raise SpecInvalid(f"target language {self.target_lang!r} is not registered")
        if not self.document.strip():
            raise SpecInvalid("document is empty")
        if self.mode == "one_shot" and self.shot_example is None:
            raise SpecInvalid("one_shot needs a shot_example")
        if self.mode == "zero_shot" and self.shot_example is not None:
            raise SpecInvalid("zero_shot must not carry a shot_example")


def build_prompt(spec: PromptSpec) -> str:
    spec.validate()
    if spec.mode == "confidence_survey":
        return SURVEY_PROMPT
    language = display_name(spec.target_lang)
    prompt = ZERO_SHOT_TEMPLATE.format(target_language=language, document=spec.document)
    if spec.mode == "one_shot":
        example_document, example_summary = spec.shot_example
        prompt = ONE_SHOT_EXAMPLE.format(example_document=example_document, target_language=language,
                                         example_summary=example_summary) + prompt
    return prompt


def extract_summary(raw_text: str, pattern: re.Pattern = DEFAULT_LABEL_RE) -> str:
    """Strip one optional leading label such as ``Summary:``."""
    return pattern.sub("", raw_text.strip(), count=1).strip()


# ---------------------------------------------------------------------------
# client

@dataclass(frozen=True)
class ChatResult:
    content: str
    model_id: str
    prompt_tokens: int = 0
    completion_tokens: int = 0


class ChatClient(Protocol):
    def complete(self, messages: list[dict[str, str]]) -> ChatResult:
        """Send chat messages, return the first reply. Raise LlmError subclasses on failure."""


_OVERFLOW_HINTS = ("context_length_exceeded", "maximum context length", "too long", "context window")


class OpenAICompatibleClient:
    """Minimal ``/chat/completions`` client for OpenAI-compatible HTTP APIs."""

    def __init__(self, model: str, base_url: str = "https://api.openai.com/v1",
                 api_key: str | None = None, timeout: float = 120.0, temperature: float | None = None):
        import httpx

        api_key = api_key or os.environ.get(API_KEY_ENV)
        if not api_key:
            raise AuthError(f"set {API_KEY_ENV} to call the chat API")
        self.model = model
        self.temperature = temperature
        self._http = httpx.Client(base_url=base_url.rstrip("/"), timeout=timeout,
                                  headers={"Authorization": f"Bearer {api_key}"})

    def complete(self, messages):
        import httpx

        body = {"model": self.model, "messages": messages}
        if self.temperature is not None:
            body["temperature"] = self.temperature
        try:
            resp = self._http.post("/chat/completions", json=body)
        except httpx.TransportError as exc:
            raise TransientError(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise AuthError(resp.text[:500])
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientError(f"HTTP {resp.status_code}: {resp.text[:500]}")
        if resp.status_code >= 400:
            detail = resp.text[:500]
            if any(hint in detail.lower() for hint in _OVERFLOW_HINTS):
                raise ContextOverflow(detail)
            raise LlmError(f"HTTP {resp.status_code}: {detail}")
        data = resp.json()
        usage = data.get("usage") or {}
        return ChatResult(
            content=data["choices"][0]["message"]["content"] or "",
            model_id=data.get("model", self.model),
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
        )


@dataclass
class RetryPolicy:
    max_retries: int = 3
    base_delay: float = 1.0
    max_delay: float = 30.0
    max_concurrent: int = 2
    min_interval: float = 0.0
    sleep: Callable[[float], None] = field(default=time.sleep, repr=False)

    def backoff(self, attempt: int) -> float:
        return min(self.max_delay, self.base_delay * 2 ** attempt)


class RequestLimiter:
    """Caps in-flight requests and spaces request starts at least ``min_interval`` apart."""

    def __init__(self, policy: RetryPolicy, clock: Callable[[], float] = time.monotonic):
        self.policy = policy
        self._slots = threading.BoundedSemaphore(policy.max_concurrent)
        self._lock = threading.Lock()
        self._next_start = 0.0
        self._clock = clock

    def __enter__(self):
        self._slots.acquire()
        if self.policy.min_interval > 0:
            with self._lock:
                now = self._clock()
                wait = self._next_start - now
                self._next_start = max(now, self._next_start) + self.policy.min_interval
            if wait > 0:
                self.policy.sleep(wait)
        return self

    def __exit__(self, *exc):
        self._slots.release()
        return False


@dataclass(frozen=True)
class LlmResponse:
    raw_text: str
    extracted_summary: str
    model_id: str
    latency_ms: int
    token_usage: tuple[int, int] = (0, 0)
    retries: int = 0

    def __post_init__(self):
        if not self.extracted_summary:
            raise LlmError("empty summary in response")
        if self.latency_ms < 0:
            raise ValueError("latency must be non-negative")


def request_summary(
    client: ChatClient,
    prompt: str,
    policy: RetryPolicy | None = None,
    limiter: RequestLimiter | None = None,
    label_re: re.Pattern = DEFAULT_LABEL_RE,
) -> LlmResponse:
    """One user-turn request with retries on transient errors.

    ``AuthError`` and ``ContextOverflow`` are raised immediately; transient
    errors are retried with exponential backoff and become ``RateLimited``
    once ``max_retries`` is exhausted.
    """
    policy = policy or RetryPolicy()
    limiter = limiter or RequestLimiter(policy)
    messages = [{"role": "user", "content": prompt}]
    retries = 0
    while True:
        start = time.perf_counter()
        try:
            with limiter:
                result = client.complete(messages)
        except TransientError as exc:
            if retries >= policy.max_retries:
                raise RateLimited(f"gave up after {retries} retries: {exc}") from exc
            delay = policy.backoff(retries)
            retries += 1
            logger.warning("transient error (%s); retry %d in %.1fs", exc, retries, delay)
            policy.sleep(delay)
            continue
        latency = int(round((time.perf_counter() - start) * 1000))
        return LlmResponse(
            raw_text=result.content,
            extracted_summary=extract_summary(result.content, label_re),
            model_id=result.model_id,
            latency_ms=latency,
            token_usage=(result.prompt_tokens, result.completion_tokens),
            retries=retries,
        )


# ---------------------------------------------------------------------------
# comparison run

@dataclass(frozen=True)
class Transcript:
    document_id: str
    prompt: str
    raw_text: str
    model_id: str
    latency_ms: int

    def to_json(self) -> dict:
        return {"document_id": self.document_id, "prompt": self.prompt, "raw_text": self.raw_text,
                "model_id": self.model_id, "latency_ms": self.latency_ms}


@dataclass
class ComparisonRun:
    report: EvalReport
    transcripts: list[Transcript]
    failures: dict[str, list[tuple[str, str]]]  # pair label -> [(document_id, error class)]


def run_comparison(
    pairs: Sequence[tuple[str, str]],
    test_view: Iterable[DocumentRecord],
    spec_mode: str,
    client: ChatClient,
    evaluator: ScoringBackends,
    *,
    system_name: str = "llm",
    policy: RetryPolicy | None = None,
    shot_examples: dict[tuple[str, str], tuple[str, str]] | None = None,
    transcript_path: str | os.PathLike | None = None,
) -> ComparisonRun:
    """Prompt the client for every record of every pair and evaluate the replies.

    A failing sample (provider error, empty reply, scoring error) is logged,
    counted under its pair and left out of the means; the run goes on.
    """
    if spec_mode not in ("zero_shot", "one_shot"):
        raise SpecInvalid(f"comparison runs use zero_shot or one_shot, not {spec_mode!r}")
    policy = policy or RetryPolicy()
    limiter = RequestLimiter(policy)
    records = list(test_view)
    jobs: list[DocumentRecord] = []
    for src, tgt in pairs:
        jobs.extend(language_pair_view(records, src, tgt))

    def run_one(record: DocumentRecord):
        shot = (shot_examples or {}).get(record.pair) if spec_mode == "one_shot" else None
        prompt = build_prompt(PromptSpec(spec_mode, record.target_lang, record.text, shot))
        try:
            response = request_summary(client, prompt, policy, limiter)
            score = score_sample(response.extracted_summary, record, evaluator)
        except Exception as exc:  # noqa: BLE001 - per-sample isolation
            logger.error("%s: %s: %s", record.id, type(exc).__name__, exc)
            return record, prompt, None, None, type(exc).__name__
        return record, prompt, response, score, None

    with ThreadPoolExecutor(max_workers=policy.max_concurrent) as pool:
        results = list(pool.map(run_one, jobs))

    scores: list[SampleScore] = []
    transcripts: list[Transcript] = []
    failures: dict[str, list[tuple[str, str]]] = {}
    for record, prompt, response, score, error in results:
        label = f"{record.source_lang}-{record.target_lang}"
        if error is not None:
            failures.setdefault(label, []).append((record.id, error))
            continue
        scores.append(score)
        transcripts.append(Transcript(record.id, prompt, response.raw_text, response.model_id, response.latency_ms))
    excluded = {label: len(items) for label, items in failures.items()}
    report = aggregate(system_name, scores, {"mode": spec_mode, "pairs": [list(p) for p in pairs]}, excluded)
    if transcript_path is not None:
        write_transcripts(transcripts, transcript_path)
    return ComparisonRun(report, transcripts, failures)


def write_transcripts(transcripts: Iterable[Transcript], path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for t in sorted(transcripts, key=lambda t: t.document_id):
            fh.write(json.dumps(t.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


def run_confidence_survey(client: ChatClient, repeats: int = 1, policy: RetryPolicy | None = None) -> list[str]:
    """Ask the survey prompt ``repeats`` times and return every raw reply, unaggregated."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    prompt = build_prompt(PromptSpec("confidence_survey"))
    limiter = RequestLimiter(policy or RetryPolicy())
    return [request_summary(client, prompt, policy, limiter).raw_text for _ in range(repeats)]
