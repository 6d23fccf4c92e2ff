"""Candidate summary generation.

A backend turns one document into several summaries for a requested target
language. :func:`generate_candidates` spreads beam groups across the
configured target languages, enforces the length cap with the backend's own
tokenizer and guarantees the returned candidates are pairwise distinct.
"""

from __future__ import annotations

import abc
import hashlib
import json
import logging
import os
import re
import tempfile
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from urllib.parse import quote

from .corpus import DocumentRecord
from .errors import BackendFailure, CorruptCache, DegenerateOutput, UnknownLanguage
from .languages import is_registered

logger = logging.getLogger(__name__)

MAX_REGENERATIONS = 2
PENALTY_STEP = 0.5


@dataclass(frozen=True)
class GenerationConfig:
    num_candidates: int = 8
    num_beam_groups: int = 8
    max_length: int = 80
    diversity_penalty: float = 1.0
    target_languages: tuple[str, ...] = ()
    seed: int = 0
    batch_size: int = 2

    def __post_init__(self):
        object.__setattr__(self, "target_languages", tuple(self.target_languages))
        if self.num_candidates < 1 or self.num_beam_groups < 1:
            raise ValueError("num_candidates and num_beam_groups must be positive")
        if self.num_candidates != self.num_beam_groups:
            raise ValueError("one candidate per beam group: num_candidates must equal num_beam_groups")
        if self.max_length < 1:
            raise ValueError("max_length must be >= 1")
        if self.diversity_penalty < 0:
            raise ValueError("diversity_penalty must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for tag in self.target_languages:
            if not is_registered(tag):
                raise UnknownLanguage(tag)

    def canonical_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()[:16]

    def languages_for(self, record: DocumentRecord) -> tuple[str, ...]:
        return self.target_languages or (record.target_lang,)

    @classmethod
    def from_dict(cls, data: dict) -> "GenerationConfig":
        return cls(**data)


@dataclass(frozen=True)
class CandidateSummary:
    text: str
    language: str
    group_index: int
    backend_score: float | None = None


@dataclass(frozen=True)
class CandidateSet:
    document_id: str
    candidates: tuple[CandidateSummary, ...]
    config_fingerprint: str

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        texts = [c.text for c in self.candidates]
        if len(set(texts)) != len(texts):
            raise DegenerateOutput(f"{self.document_id}: candidate texts are not pairwise distinct")

    def __len__(self):
        return len(self.candidates)

    def to_json(self) -> dict:
        return {
            "document_id": self.document_id,
            "config_fingerprint": self.config_fingerprint,
            "candidates": [asdict(c) for c in self.candidates],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CandidateSet":
        return cls(
            document_id=obj["document_id"],
            candidates=tuple(CandidateSummary(**c) for c in obj["candidates"]),
            config_fingerprint=obj["config_fingerprint"],
        )


@dataclass(frozen=True)
class Generated:
    """One decoded sequence as returned by a backend, best first."""

    text: str
    score: float | None = None


class GeneratorBackend(abc.ABC):
    """Conditional generator plus the tokenizer used for length accounting."""

    name: str = "backend"

    @abc.abstractmethod
    def generate(
        self,
        document: str,
        target_lang: str,
        group_indices: Sequence[int],
        config: GenerationConfig,
        diversity_penalty: float,
    ) -> list[Generated]:
        """Return at least ``len(group_indices)`` sequences, best first.

        The first ``len(group_indices)`` map onto those groups in order; any
        extra sequences are spare beams used to replace duplicates.
        """

    @abc.abstractmethod
    def tokenize(self, text: str) -> list[str]:
        ...

    def count_tokens(self, text: str) -> int:
        return len(self.tokenize(text))

    def truncate(self, text: str, max_length: int) -> str:
        tokens = self.tokenize(text)
        if len(tokens) <= max_length:
            return text
        return " ".join(tokens[:max_length])


_SENTENCE_END = re.compile(r"(?<=[.!?।။。።])\s+")


def split_sentences(text: str) -> list[str]:
    return [s for s in (p.strip() for p in _SENTENCE_END.split(text.strip())) if s]


def language_tag(lang: str) -> str:
    return f"[{lang}]"


class StubBackend(GeneratorBackend):
    """Deterministic extractive stand-in for a neural generator.

    Group ``g`` takes every ``(g + 1)``-th sentence of the document, starting
    at sentence ``seed mod n_sentences``, prefixes the language tag and
    truncates to ``max_length`` whitespace tokens. Spare beams are the same
    selections read from a later word onwards, then shorter truncations.
    The diversity penalty is ignored.
    """

    name = "stub"

    def tokenize(self, text: str) -> list[str]:
        return text.split()

    def generate(self, document, target_lang, group_indices, config, diversity_penalty):
        sentences = split_sentences(document)
        if not sentences:
            raise BackendFailure("document has no sentences")
        start = config.seed % len(sentences)
        tag = language_tag(target_lang)
        budget = config.max_length - 1
        primary, spares = [], []
        for g in group_indices:
            words = " ".join(sentences[start::g + 1]).split()
            if budget < 1:
                primary.append(Generated(tag, score=-float(g)))
                continue
            primary.append(Generated(" ".join([tag, *words[:budget]]), score=-float(g)))
            for off in range(1, len(words)):
                spares.append((0, off, g, " ".join([tag, *words[off:off + budget]])))
            for k in range(min(budget, len(words)) - 1, 0, -1):
                spares.append((1, -k, g, " ".join([tag, *words[:k]])))
        # shifted windows first (earliest shift), then ever shorter prefixes
        spares.sort(key=lambda item: item[:3])
        return primary + [Generated(text, score=-float(g) - 0.5) for *_, g, text in spares]


class Seq2SeqBackend(GeneratorBackend):
    """Hugging Face seq2seq model decoded with diverse (group) beam search.

    Written for the many-to-many CrossSum mT5 checkpoint, whose config maps
    language names to decoder start tokens. ``transformers`` is imported
    lazily so the package works without it.
    """

    name = "seq2seq"

    def __init__(self, model_name: str = "csebuetnlp/mT5_m2m_crossSum_enhanced",
                 device: str = "cpu", spare_beams: int = 2, max_input_length: int = 512):
        from transformers import AutoModelForSeq2SeqLM, AutoTokenizer

        self.model_name = model_name
        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModelForSeq2SeqLM.from_pretrained(model_name).to(device).eval()
        self.device = device
        self.spare_beams = spare_beams
        self.max_input_length = max_input_length

    def tokenize(self, text):
        return self.tokenizer.tokenize(text)

    def truncate(self, text, max_length):
        ids = self.tokenizer(text, add_special_tokens=False)["input_ids"]
        if len(ids) <= max_length:
            return text
        return self.tokenizer.decode(ids[:max_length], skip_special_tokens=True)

    def _lang_token_id(self, lang: str):
        params = getattr(self.model.config, "task_specific_params", None) or {}
        langid_map = params.get("langid_map", {})
        if lang in langid_map:
            return self.tokenizer.convert_tokens_to_ids(langid_map[lang][1])
        return None

    def generate(self, document, target_lang, group_indices, config, diversity_penalty):
        import torch

        groups = len(group_indices)
        n_return = groups + self.spare_beams
        beams = max(n_return, groups * 2)
        beams += (-beams) % groups  # beams must divide evenly into groups
        inputs = self.tokenizer(document, return_tensors="pt", truncation=True,
                                max_length=self.max_input_length).to(self.device)
        kwargs = dict(
            max_length=config.max_length,
            num_beams=beams,
            num_beam_groups=groups,
            diversity_penalty=diversity_penalty if groups > 1 else 0.0,
            num_return_sequences=n_return,
            output_scores=True,
            return_dict_in_generate=True,
        )
        start = self._lang_token_id(target_lang)
        if start is not None:
            kwargs["decoder_start_token_id"] = start
        torch.manual_seed(config.seed)
        try:
            with torch.no_grad():
                out = self.model.generate(**inputs, **kwargs)
        except Exception as exc:  # noqa: BLE001 - surface every backend error uniformly
            raise BackendFailure(str(exc)) from exc
        texts = self.tokenizer.batch_decode(out.sequences, skip_special_tokens=True)
        scores = out.sequences_scores.tolist() if out.sequences_scores is not None else [None] * len(texts)
        return [Generated(t.strip(), s) for t, s in zip(texts, scores) if t.strip()]


def _group_languages(config: GenerationConfig, record: DocumentRecord) -> dict[str, list[int]]:
    langs = config.languages_for(record)
    by_lang: dict[str, list[int]] = {}
    for g in range(config.num_beam_groups):
        by_lang.setdefault(langs[g % len(langs)], []).append(g)
    return by_lang


def _decode_round(record, config, backend, penalty):
    """One full generation pass: (per-group candidates, spare candidates)."""
    slots: dict[int, CandidateSummary] = {}
    spares: list[CandidateSummary] = []
    for lang, groups in _group_languages(config, record).items():
        outs = backend.generate(record.text, lang, groups, config, penalty)
        if len(outs) < len(groups):
            raise BackendFailure(f"{record.id}: backend returned {len(outs)} sequences for {len(groups)} groups")
        for i, out in enumerate(outs):
            text = backend.truncate(out.text, config.max_length).strip()
            if not text:
                continue
            if i < len(groups):
                slots[groups[i]] = CandidateSummary(text, lang, groups[i], out.score)
            else:
                spares.append(CandidateSummary(text, lang, -1, out.score))
    return [slots.get(g) for g in range(config.num_beam_groups)], spares


def _has_duplicates(candidates) -> bool:
    texts = [c.text for c in candidates if c is not None]
    return len(texts) != len(set(texts)) or len(texts) != len(candidates)


def generate_candidates(record: DocumentRecord, config: GenerationConfig, backend: GeneratorBackend) -> CandidateSet:
    """Generate ``config.num_candidates`` distinct candidates for one document.

    Duplicate outputs trigger up to two regenerations with the diversity
    penalty raised by 0.5 each time; remaining duplicates are replaced by the
    best distinct spare beam in the same language, falling back to any
    language. :class:`DegenerateOutput` is raised when that is not enough.
    """
    penalty = config.diversity_penalty
    candidates, spares = _decode_round(record, config, backend, penalty)
    attempt = 0
    while _has_duplicates(candidates) and attempt < MAX_REGENERATIONS:
        attempt += 1
        penalty += PENALTY_STEP
        logger.info("%s: duplicate candidates, regenerating (penalty %.1f)", record.id, penalty)
        candidates, spares = _decode_round(record, config, backend, penalty)

    seen: set[str] = set()
    final: list[CandidateSummary] = []
    for g, cand in enumerate(candidates):
        if cand is not None and cand.text not in seen:
            seen.add(cand.text)
            final.append(cand)
            continue
        lang = config.languages_for(record)[g % len(config.languages_for(record))]
        pool = [s for s in spares if s.language == lang] + [s for s in spares if s.language != lang]
        replacement = next((s for s in pool if s.text not in seen), None)
        if replacement is None:
            raise DegenerateOutput(
                f"{record.id}: only {len(seen)} distinct candidates for {config.num_candidates} groups"
            )
        seen.add(replacement.text)
        final.append(replace(replacement, group_index=g))
    return CandidateSet(record.id, tuple(final), config.fingerprint())


def stub_generate(record: DocumentRecord, config: GenerationConfig) -> CandidateSet:
    return generate_candidates(record, config, StubBackend())


def generate_many(
    records: Iterable[DocumentRecord],
    config: GenerationConfig,
    backend: GeneratorBackend,
    workers: int = 1,
) -> list[CandidateSet]:
    """Generate for many documents; results keep input order regardless of workers."""
    records = list(records)
    if workers <= 1:
        return [generate_candidates(r, config, backend) for r in records]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda r: generate_candidates(r, config, backend), records))


# ---------------------------------------------------------------------------
# cache

def cache_path(document_id: str, config_fingerprint: str, cache_dir: str | os.PathLike) -> Path:
    return Path(cache_dir) / f"{quote(document_id, safe='')}__{config_fingerprint}.json"


def cache_candidates(candidate_set: CandidateSet, cache_dir: str | os.PathLike) -> str:
    """Write atomically (temp file + rename); return the cache key."""
    path = cache_path(candidate_set.document_id, candidate_set.config_fingerprint, cache_dir)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = json.dumps(candidate_set.to_json(), ensure_ascii=False, sort_keys=True, indent=1)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(body + "\n")
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path.stem


def load_candidates(document_id: str, config_fingerprint: str, cache_dir: str | os.PathLike) -> CandidateSet | None:
    path = cache_path(document_id, config_fingerprint, cache_dir)
    if not path.exists():
        return None
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
        result = CandidateSet.from_json(obj)
    except (json.JSONDecodeError, KeyError, TypeError, DegenerateOutput) as exc:
        raise CorruptCache(path, str(exc)) from exc
    if result.document_id != document_id or result.config_fingerprint != config_fingerprint:
        raise CorruptCache(path, "key does not match file contents")
    return result


def get_backend(name: str, **kwargs) -> GeneratorBackend:
    if name == "stub":
        return StubBackend()
    if name == "seq2seq":
        return Seq2SeqBackend(**kwargs)
    raise ValueError(f"unknown generator backend {name!r}")


__all__ = [
    "CandidateSet", "CandidateSummary", "GenerationConfig", "Generated", "GeneratorBackend",
    "Seq2SeqBackend", "StubBackend", "cache_candidates", "generate_candidates", "generate_many",
    "load_candidates", "split_sentences", "stub_generate",
]
