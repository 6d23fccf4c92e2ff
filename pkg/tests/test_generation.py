import json

import pytest

from conversum.corpus import DocumentRecord
from conversum.errors import BackendFailure, CorruptCache, DegenerateOutput, UnknownLanguage
from conversum.generation import (
    CandidateSet,
    GenerationConfig,
    Generated,
    GeneratorBackend,
    StubBackend,
    cache_candidates,
    cache_path,
    generate_candidates,
    generate_many,
    load_candidates,
    split_sentences,
    stub_generate,
)

EIGHT = " ".join(f"Sentence number {k} is here." for k in range(1, 9))


def record(text=EIGHT, doc_id="doc-1", lang="english"):
    return DocumentRecord(doc_id, text, "A reference summary.", lang, lang, "train")


class ScriptedBackend(GeneratorBackend):
    """Replays canned rounds; each round is a list of texts per generate() call."""

    name = "scripted"

    def __init__(self, rounds):
        self.rounds = list(rounds)
        self.penalties = []

    def tokenize(self, text):
        return text.split()

    def generate(self, document, target_lang, group_indices, config, diversity_penalty):
        self.penalties.append(diversity_penalty)
        texts = self.rounds.pop(0) if len(self.rounds) > 1 else self.rounds[0]
        return [Generated(t) for t in texts]


class TestConfig:
    def test_defaults(self):
        cfg = GenerationConfig()
        assert (cfg.num_candidates, cfg.num_beam_groups, cfg.max_length, cfg.diversity_penalty) == (8, 8, 80, 1.0)

    @pytest.mark.parametrize("kwargs", [
        {"max_length": 0}, {"num_candidates": 4}, {"diversity_penalty": -1.0}, {"num_candidates": 0, "num_beam_groups": 0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            GenerationConfig(**kwargs)

    def test_unknown_language(self):
        with pytest.raises(UnknownLanguage):
            GenerationConfig(target_languages=("klingon",))

    def test_fingerprint_tracks_config(self):
        assert GenerationConfig().fingerprint() == GenerationConfig().fingerprint()
        assert GenerationConfig().fingerprint() != GenerationConfig(seed=1).fingerprint()
        assert len(GenerationConfig().fingerprint()) == 16


class TestStubGeneration:
    def test_stride_enumeration(self):
        sentences = split_sentences(EIGHT)
        assert len(sentences) == 8
        cfg = GenerationConfig(num_candidates=4, num_beam_groups=4)
        got = [c.text for c in stub_generate(record(), cfg).candidates]
        expected = [
            "[english] " + " ".join(sentences[0::1]),
            "[english] " + " ".join(sentences[0::2]),
            "[english] " + " ".join(sentences[0::3]),
            "[english] " + " ".join(sentences[0::4]),
        ]
        assert got == expected
        assert [c.group_index for c in stub_generate(record(), cfg).candidates] == [0, 1, 2, 3]

    def test_seed_rotates_start(self):
        cfg = GenerationConfig(num_candidates=2, num_beam_groups=2, seed=3)
        first = stub_generate(record(), cfg).candidates[0].text
        assert first.startswith("[english] Sentence number 4")

    def test_language_tags_cycle(self):
        cfg = GenerationConfig(num_candidates=4, num_beam_groups=4, target_languages=("bengali", "english"))
        cands = stub_generate(record(), cfg).candidates
        assert [c.language for c in cands] == ["bengali", "english", "bengali", "english"]
        assert [c.text.split()[0] for c in cands] == ["[bengali]", "[english]", "[bengali]", "[english]"]

    def test_default_language_is_record_target(self):
        cands = stub_generate(record(lang="thai"), GenerationConfig()).candidates
        assert {c.language for c in cands} == {"thai"}

    def test_single_sentence_single_candidate(self):
        cfg = GenerationConfig(num_candidates=1, num_beam_groups=1, max_length=3)
        (cand,) = stub_generate(record("Only one sentence here."), cfg).candidates
        assert cand.text == "[english] Only one"

    def test_single_sentence_many_candidates_falls_back_to_truncations(self):
        cfg = GenerationConfig(num_candidates=3, num_beam_groups=3)
        texts = [c.text for c in stub_generate(record("Only one sentence here today."), cfg).candidates]
        assert len(set(texts)) == 3
        assert texts[0] == "[english] Only one sentence here today."

    def test_degenerate(self):
        cfg = GenerationConfig(num_candidates=4, num_beam_groups=4)
        with pytest.raises(DegenerateOutput):
            stub_generate(record("Tiny."), cfg)

    def test_max_length_five(self, fifty_docs):
        cfg = GenerationConfig(max_length=5)
        backend = StubBackend()
        for doc in fifty_docs:
            cands = generate_candidates(doc, cfg, backend).candidates
            assert len(cands) == 8
            assert all(backend.count_tokens(c.text) <= 5 for c in cands)

    def test_contract_on_fifty_documents(self, fifty_docs):
        cfg, backend = GenerationConfig(), StubBackend()
        first = generate_many(fifty_docs, cfg, backend)
        again = generate_many(fifty_docs, cfg, backend, workers=4)
        assert first == again
        for cs in first:
            texts = [c.text for c in cs.candidates]
            assert len(texts) == 8 == len(set(texts))
            assert all(0 < backend.count_tokens(t) <= 80 for t in texts)


class TestDeduplication:
    def test_regenerates_with_higher_penalty(self):
        backend = ScriptedBackend([["same", "same"], ["same", "same"], ["a", "b"]])
        cfg = GenerationConfig(num_candidates=2, num_beam_groups=2, diversity_penalty=1.0)
        cs = generate_candidates(record(), cfg, backend)
        assert [c.text for c in cs.candidates] == ["a", "b"]
        assert backend.penalties == [1.0, 1.5, 2.0]

    def test_spare_beam_replaces_duplicate(self):
        backend = ScriptedBackend([["same", "same", "spare"]])
        cfg = GenerationConfig(num_candidates=2, num_beam_groups=2)
        cs = generate_candidates(record(), cfg, backend)
        assert [c.text for c in cs.candidates] == ["same", "spare"]
        assert [c.group_index for c in cs.candidates] == [0, 1]
        assert len(backend.penalties) == 3

    def test_gives_up(self):
        backend = ScriptedBackend([["same", "same"]])
        with pytest.raises(DegenerateOutput):
            generate_candidates(record(), GenerationConfig(num_candidates=2, num_beam_groups=2), backend)

    def test_short_backend_output(self):
        backend = ScriptedBackend([["one"]])
        with pytest.raises(BackendFailure):
            generate_candidates(record(), GenerationConfig(num_candidates=2, num_beam_groups=2), backend)

    def test_candidate_set_rejects_duplicates(self):
        from conversum.generation import CandidateSummary

        with pytest.raises(DegenerateOutput):
            CandidateSet("d", (CandidateSummary("x", "english", 0), CandidateSummary("x", "english", 1)), "fp")


class TestCache:
    def test_round_trip(self, tmp_path):
        cs = stub_generate(record(), GenerationConfig())
        cache_candidates(cs, tmp_path)
        assert load_candidates(cs.document_id, cs.config_fingerprint, tmp_path) == cs

    def test_other_fingerprint_is_absent(self, tmp_path):
        cs = stub_generate(record(), GenerationConfig())
        cache_candidates(cs, tmp_path)
        assert load_candidates(cs.document_id, GenerationConfig(seed=9).fingerprint(), tmp_path) is None

    def test_truncated_file(self, tmp_path):
        cs = stub_generate(record(), GenerationConfig())
        cache_candidates(cs, tmp_path)
        path = cache_path(cs.document_id, cs.config_fingerprint, tmp_path)
        path.write_text(path.read_text()[:40])
        with pytest.raises(CorruptCache):
            load_candidates(cs.document_id, cs.config_fingerprint, tmp_path)

    def test_mismatched_contents(self, tmp_path):
        cs = stub_generate(record(), GenerationConfig())
        cache_candidates(cs, tmp_path)
        path = cache_path(cs.document_id, cs.config_fingerprint, tmp_path)
        obj = json.loads(path.read_text())
        obj["document_id"] = "someone-else"
        path.write_text(json.dumps(obj))
        with pytest.raises(CorruptCache):
            load_candidates(cs.document_id, cs.config_fingerprint, tmp_path)

    def test_awkward_ids(self, tmp_path):
        cs = stub_generate(record(doc_id="a/b c?"), GenerationConfig())
        cache_candidates(cs, tmp_path)
        assert load_candidates("a/b c?", cs.config_fingerprint, tmp_path) == cs
        assert [p.name for p in tmp_path.iterdir() if p.name.startswith(".tmp")] == []

    def test_byte_identical_reruns(self, tmp_path):
        for sub in ("x", "y"):
            cache_candidates(stub_generate(record(), GenerationConfig(seed=5)), tmp_path / sub)
        name = cache_path("doc-1", GenerationConfig(seed=5).fingerprint(), ".").name
        assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()
