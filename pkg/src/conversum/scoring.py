"""Embedding, similarity and LaSE scoring of candidate summaries."""

from __future__ import annotations

import abc
import hashlib
import json
import math
import re
import threading
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .errors import DimensionMismatch, EmptyText, EncoderFailure, LangIdFailure, ZeroVector
from .generation import CandidateSet, CandidateSummary
from .languages import ISO_CODES

TokenCounter = Callable[[str], int]


def whitespace_tokens(text: str) -> int:
    return len(text.split())


# ---------------------------------------------------------------------------
# encoders

class SentenceEncoder(abc.ABC):
    dim: int
    thread_safe: bool = True

    @abc.abstractmethod
    def embed(self, text: str) -> np.ndarray:
        """Raw (not necessarily normalised) sentence embedding."""


class TokenEncoder(abc.ABC):
    @abc.abstractmethod
    def token_embeddings(self, text: str) -> np.ndarray:
        """Array of shape (n_tokens, dim)."""


def _trigrams(text: str) -> list[str]:
    if len(text) < 3:
        return [text]
    return [text[i:i + 3] for i in range(len(text) - 2)]


@lru_cache(maxsize=1 << 18)
def _bucket(gram: str, buckets: int) -> int:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % buckets


class StubEncoder(SentenceEncoder, TokenEncoder):
    """Hashed bag of character trigrams through a fixed Gaussian projection.

    Each trigram is hashed (blake2b, 8 bytes, little endian) into one of
    ``buckets`` counters; the count vector is multiplied by a projection
    matrix drawn once from ``numpy.random.default_rng(projection_seed)``.
    Token embeddings apply the same map to each whitespace token.
    """

    def __init__(self, dim: int = 16, buckets: int = 2048, projection_seed: int = 0):
        self.dim = dim
        self.buckets = buckets
        self.projection_seed = projection_seed

    @cached_property
    def projection(self) -> np.ndarray:
        rng = np.random.default_rng(self.projection_seed)
        return rng.standard_normal((self.buckets, self.dim))

    def counts(self, text: str) -> np.ndarray:
        vec = np.zeros(self.buckets)
        for gram in _trigrams(text):
            vec[_bucket(gram, self.buckets)] += 1.0
        return vec

    def embed(self, text):
        return self.counts(text) @ self.projection

    def token_embeddings(self, text):
        tokens = text.split()
        if not tokens:
            raise EmptyText()
        return np.stack([self.embed(t) for t in tokens])


class OneHotTokenEncoder(TokenEncoder):
    """Each distinct token gets its own basis vector, so distinct tokens are orthogonal."""

    def __init__(self, dim: int = 4096):
        self.dim = dim
        self.vocab: dict[str, int] = {}
        self._lock = threading.Lock()

    def _index(self, token: str) -> int:
        with self._lock:
            if token not in self.vocab:
                if len(self.vocab) >= self.dim:
                    raise EncoderFailure("one-hot vocabulary exhausted")
                self.vocab[token] = len(self.vocab)
            return self.vocab[token]

    def token_embeddings(self, text):
        tokens = text.split()
        if not tokens:
            raise EmptyText()
        out = np.zeros((len(tokens), self.dim))
        for row, token in enumerate(tokens):
            out[row, self._index(token)] = 1.0
        return out


class TransformersEncoder(SentenceEncoder, TokenEncoder):
    """Mean-pooled hidden states of a Hugging Face encoder (XLM-R, LaBSE, ...)."""

    thread_safe = False

    def __init__(self, model_name: str = "FacebookAI/xlm-roberta-base", device: str = "cpu",
                 max_length: int = 512):
        from transformers import AutoModel, AutoTokenizer

        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModel.from_pretrained(model_name).to(device).eval()
        self.device = device
        self.max_length = max_length
        self.dim = int(self.model.config.hidden_size)

    def _hidden(self, text):
        import torch

        batch = self.tokenizer(text, return_tensors="pt", truncation=True,
                               max_length=self.max_length).to(self.device)
        with torch.no_grad():
            out = self.model(**batch)
        return out, batch["attention_mask"][0].bool()

    def embed(self, text):
        out, mask = self._hidden(text)
        return out.last_hidden_state[0][mask].mean(dim=0).cpu().numpy().astype(float)

    def token_embeddings(self, text):
        out, mask = self._hidden(text)
        hidden = out.last_hidden_state[0][mask][1:-1]  # drop <s> and </s>
        if hidden.shape[0] == 0:
            raise EmptyText()
        return hidden.cpu().numpy().astype(float)


class SerializedEncoder(SentenceEncoder):
    """Funnel calls to a non-thread-safe encoder through one lock."""

    def __init__(self, inner: SentenceEncoder):
        self.inner = inner
        self.dim = inner.dim
        self._lock = threading.Lock()

    def embed(self, text):
        with self._lock:
            return self.inner.embed(text)


def dispatch(encoder: SentenceEncoder) -> SentenceEncoder:
    return encoder if encoder.thread_safe else SerializedEncoder(encoder)


# ---------------------------------------------------------------------------
# language identification

class LanguageIdentifier(abc.ABC):
    @abc.abstractmethod
    def confidence(self, text: str, lang: str) -> float:
        """Probability in [0, 1] that ``text`` is written in ``lang``."""


_TAG_PREFIX = re.compile(r"^\[([a-z_]+)\]")


class StubLanguageIdentifier(LanguageIdentifier):
    """Reads the ``[lang]`` prefix written by the stub generator.

    Tagged text scores 1.0 for its own tag and 0.0 otherwise; untagged text
    scores ``untagged``.
    """

    def __init__(self, untagged: float = 1.0):
        self.untagged = untagged

    def confidence(self, text, lang):
        m = _TAG_PREFIX.match(text.strip())
        if m is None:
            return self.untagged
        return 1.0 if m.group(1) == lang else 0.0


class FastTextLanguageIdentifier(LanguageIdentifier):
    """fastText ``lid.176`` model; labels are mapped through ISO codes."""

    def __init__(self, model_path: str):
        import fasttext

        self.model = fasttext.load_model(model_path)

    def confidence(self, text, lang):
        code = ISO_CODES.get(lang)
        if code is None:
            raise LangIdFailure(f"no ISO code for {lang!r}")
        labels, probs = self.model.predict(" ".join(text.split()), k=-1)
        for label, prob in zip(labels, probs):
            if label.removeprefix("__label__") == code:
                return float(prob)
        return 0.0


# ---------------------------------------------------------------------------
# similarity

def _norm(v: np.ndarray) -> float:
    return float(np.linalg.norm(v))


def encode(text: str, encoder: SentenceEncoder) -> np.ndarray:
    """L2-normalised embedding of ``text``."""
    if not text or not text.strip():
        raise EmptyText()
    try:
        vec = np.asarray(encoder.embed(text), dtype=float)
    except (EmptyText, EncoderFailure):
        raise
    except Exception as exc:  # noqa: BLE001
        raise EncoderFailure(str(exc)) from exc
    if vec.shape != (encoder.dim,):
        raise EncoderFailure(f"expected shape ({encoder.dim},), got {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise EncoderFailure("non-finite embedding")
    n = _norm(vec)
    if n == 0.0:
        raise EncoderFailure("zero embedding")
    return vec / n


def _check(*vectors: np.ndarray) -> None:
    dim = vectors[0].shape
    for v in vectors[1:]:
        if v.shape != dim:
            raise DimensionMismatch(f"{v.shape} vs {dim}")
    for v in vectors:
        if not np.any(v):
            raise ZeroVector("zero vector")


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    _check(u, v)
    value = float(u @ v) / (_norm(u) * _norm(v))
    return min(1.0, max(-1.0, value))


def tri_similarity(c: np.ndarray, r: np.ndarray, s: np.ndarray) -> float:
    """Joint similarity of a candidate ``c`` and reference ``r`` to the source ``s``.

    ``(c.s + r.s) / (|c||s| + |r||s|)``; for unit inputs this is the mean of
    the two cosines.
    """
    c, r, s = (np.asarray(x, dtype=float) for x in (c, r, s))
    _check(c, r, s)
    ns = _norm(s)
    return float(c @ s + r @ s) / (_norm(c) * ns + _norm(r) * ns)


# ---------------------------------------------------------------------------
# LaSE

@dataclass(frozen=True)
class LaSEScore:
    meaning_similarity: float
    language_confidence: float
    length_penalty: float

    def __post_init__(self):
        for name in ("meaning_similarity", "language_confidence"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")
        if not 0.0 < self.length_penalty <= 1.0:
            raise ValueError(f"length_penalty={self.length_penalty} outside (0, 1]")

    @property
    def value(self) -> float:
        return self.meaning_similarity * self.language_confidence * self.length_penalty

    def to_json(self) -> dict:
        return {"ms": self.meaning_similarity, "lc": self.language_confidence,
                "lp": self.length_penalty, "value": self.value}


def length_penalty(pred_tokens: int, ref_tokens: int) -> float:
    """1 for predictions at least as long as the reference, else exp(1 - ref/pred)."""
    if pred_tokens < 1:
        raise EmptyText(field="prediction")
    if pred_tokens >= ref_tokens:
        return 1.0
    return math.exp(1.0 - ref_tokens / pred_tokens)


def lase(
    prediction: str,
    reference: str,
    target_lang: str,
    encoder: SentenceEncoder,
    lang_id: LanguageIdentifier,
    count_tokens: TokenCounter = whitespace_tokens,
    *,
    reference_embedding: np.ndarray | None = None,
) -> LaSEScore:
    if not prediction.strip():
        raise EmptyText(field="prediction")
    if not reference.strip():
        raise EmptyText(field="reference")
    ref_vec = encode(reference, encoder) if reference_embedding is None else reference_embedding
    ms = max(0.0, cosine_similarity(encode(prediction, encoder), ref_vec))
    try:
        lc = float(lang_id.confidence(prediction, target_lang))
    except LangIdFailure:
        raise
    except Exception as exc:  # noqa: BLE001
        raise LangIdFailure(str(exc)) from exc
    if not 0.0 <= lc <= 1.0:
        raise LangIdFailure(f"confidence {lc} outside [0, 1]")
    lp = length_penalty(count_tokens(prediction), count_tokens(reference))
    return LaSEScore(ms, lc, lp)


# ---------------------------------------------------------------------------
# ranking

@dataclass(frozen=True)
class ScoredCandidate:
    candidate: CandidateSummary
    lase: LaSEScore
    tri_similarity: float
    rank: int
    index: int  # position in the generated CandidateSet

    def to_json(self, document_id: str) -> dict:
        return {
            "document_id": document_id,
            "candidate_text": self.candidate.text,
            "language": self.candidate.language,
            "lase": self.lase.to_json(),
            "tri_similarity": self.tri_similarity,
            "rank": self.rank,
        }


def rank_order(values: Sequence[float]) -> list[int]:
    """Indices sorted by value descending; ties keep the lower index first."""
    return sorted(range(len(values)), key=lambda i: (-values[i], i))


def rank_candidates(
    candidate_set: CandidateSet,
    reference: str,
    target_lang: str | None,
    encoder: SentenceEncoder,
    lang_id: LanguageIdentifier,
    document: str,
    count_tokens: TokenCounter = whitespace_tokens,
) -> list[ScoredCandidate]:
    """Score every candidate and return them best-first by LaSE.

    ``target_lang=None`` scores each candidate against the language it was
    requested in rather than one shared target.
    """
    if len(candidate_set) == 0:
        raise ValueError("empty candidate set")
    ref_vec = encode(reference, encoder)
    doc_vec = encode(document, encoder)
    scored = []
    for cand in candidate_set.candidates:
        lang = target_lang or cand.language
        score = lase(cand.text, reference, lang, encoder, lang_id, count_tokens, reference_embedding=ref_vec)
        scored.append((cand, score, tri_similarity(encode(cand.text, encoder), ref_vec, doc_vec)))
    order = rank_order([s.value for _, s, _ in scored])
    return [
        ScoredCandidate(scored[i][0], scored[i][1], scored[i][2], rank=pos + 1, index=i)
        for pos, i in enumerate(order)
    ]


def dump_scored(document_id: str, ranked: Sequence[ScoredCandidate]) -> str:
    """JSONL lines for one document's ranked candidates."""
    return "".join(json.dumps(sc.to_json(document_id), ensure_ascii=False, sort_keys=True) + "\n" for sc in ranked)


def get_encoder(name: str, **kwargs) -> SentenceEncoder:
    if name == "stub":
        return StubEncoder(**kwargs)
    if name == "transformers":
        return TransformersEncoder(**kwargs)
    raise ValueError(f"unknown encoder backend {name!r}")


def get_lang_id(name: str, **kwargs) -> LanguageIdentifier:
    if name == "stub":
        return StubLanguageIdentifier(**kwargs)
    if name == "fasttext":
        return FastTextLanguageIdentifier(**kwargs)
    raise ValueError(f"unknown language-id backend {name!r}")
