"""Synthetic corpora for tests, smoke runs and the toy re-ranking task."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import DocumentRecord
from .generation import CandidateSet, CandidateSummary
from .scoring import LanguageIdentifier, SentenceEncoder, StubEncoder, StubLanguageIdentifier, rank_candidates
from .training import RankedExample, build_example

_SUBJECTS = ("The council", "A local farmer", "The minister", "Researchers", "The company",
             "Flood victims", "The football club", "Teachers", "The city hospital", "Engineers",
             "The central bank", "Volunteers")
_VERBS = ("announced", "rejected", "welcomed", "questioned", "delayed", "approved",
          "criticised", "celebrated", "reviewed", "funded")
_OBJECTS = ("a new bridge project", "the annual budget", "plans for a bigger stadium",
            "a rise in rice prices", "the river clean-up", "a vaccination drive",
            "the late train service", "a school meal scheme", "the storm warning",
            "an export deal", "the housing report", "a solar power plant")
_TAILS = ("on Monday", "after a long debate", "despite protests", "in the capital",
          "for the second time", "to mixed reactions", "ahead of the election",
          "with little notice", "in a short statement", "earlier this week")


def make_sentence(rng: np.random.Generator) -> str:
    return (f"{rng.choice(_SUBJECTS)} {rng.choice(_VERBS)} {rng.choice(_OBJECTS)} "
            f"{rng.choice(_TAILS)}.")


def make_documents(n: int, seed: int = 0, *, min_sentences: int = 8, max_sentences: int = 12,
                   lang: str = "english", split: str = "train", prefix: str = "doc") -> list[DocumentRecord]:
    """Template-built English news snippets with 2-3 sentence summaries."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        k = int(rng.integers(min_sentences, max_sentences + 1))
        sentences = [make_sentence(rng) for _ in range(k)]
        summary = " ".join(sentences[: int(rng.integers(2, 4))])
        records.append(DocumentRecord(f"{prefix}-{i:04d}", " ".join(sentences), summary, lang, lang, split))
    return records


# ---------------------------------------------------------------------------
# toy re-ranking task

@dataclass(frozen=True)
class ToyTaskConfig:
    """Signal/noise documents for the toy re-ranking task.

    Each document interleaves ``signal_sentences`` built from one vocabulary
    with ``noise_sentences`` built from a disjoint one; its reference is the
    signal sentences. Candidate ``j`` mixes ``j`` signal sentences with
    noise up to ``candidate_sentences``, so the LaSE order follows the signal
    fraction while raw document-candidate cosine favours noise.
    """

    signal_sentences: int = 7
    noise_sentences: int = 14
    candidate_sentences: int = 7
    num_candidates: int = 8
    sentence_length: int = 10
    vocabulary_size: int = 40
    vocabulary_seed: int = 12345


def _pseudo_words(rng, n, letters):
    return ["".join(rng.choice(list(letters), size=int(rng.integers(4, 8)))) for _ in range(n)]


def make_toy_task(
    n_docs: int,
    seed: int,
    config: ToyTaskConfig = ToyTaskConfig(),
    encoder: SentenceEncoder | None = None,
    lang_id: LanguageIdentifier | None = None,
) -> list[RankedExample]:
    """Build ``n_docs`` LaSE-ranked, embedded examples (oracle order = exact stub LaSE)."""
    encoder = encoder or StubEncoder(dim=16)
    lang_id = lang_id or StubLanguageIdentifier()
    vocab_rng = np.random.default_rng(config.vocabulary_seed)
    signal_vocab = _pseudo_words(vocab_rng, config.vocabulary_size, "aeioulmnrst")
    noise_vocab = _pseudo_words(vocab_rng, config.vocabulary_size, "bcdfghjkpqvwxyz")
    rng = np.random.default_rng(seed)

    def sentence(vocab):
        return " ".join(rng.choice(vocab, size=config.sentence_length)) + "."

    examples = []
    for d in range(n_docs):
        signal = [sentence(signal_vocab) for _ in range(config.signal_sentences)]
        noise = [sentence(noise_vocab) for _ in range(config.noise_sentences)]
        body = signal + noise
        rng.shuffle(body)
        document, reference = " ".join(body), " ".join(signal)
        candidates = []
        for j in range(config.num_candidates):
            k = min(round(j * config.candidate_sentences / (config.num_candidates - 1)), config.signal_sentences)
            parts = list(rng.choice(signal, size=k, replace=False))
            parts += list(rng.choice(noise, size=config.candidate_sentences - k, replace=False))
            rng.shuffle(parts)
            candidates.append(CandidateSummary(" ".join(parts), "english", j))
        doc_id = f"toy-{seed}-{d:04d}"
        ranked = rank_candidates(CandidateSet(doc_id, tuple(candidates), "toy"), reference,
                                 "english", encoder, lang_id, document)
        examples.append(build_example(doc_id, document, reference, ranked, encoder))
    return examples
