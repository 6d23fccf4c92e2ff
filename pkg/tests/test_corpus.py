import csv
import json
import os
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conversum.corpus import (
    Dataset,
    DocumentRecord,
    SplitStats,
    convert_cnn_dailymail,
    convert_crosssum,
    convert_xlsum,
    language_pair_view,
    load_dataset,
    split_stats,
    write_jsonl,
)
from conversum.errors import EmptyText, MalformedRecord, MissingField, UnknownLanguage
from conversum.languages import DISPLAY_NAMES, LANGUAGES


def row(i, src="bengali", tgt="english", **over):
    obj = {"id": f"r{i}", "text": f"Body text {i}.", "summary": f"Summary {i}.", "source_lang": src, "target_lang": tgt}
    obj.update(over)
    return obj


def write_lines(path: Path, objs):
    path.write_text("".join((o if isinstance(o, str) else json.dumps(o)) + "\n" for o in objs), encoding="utf-8")
    return path


def make_split_dir(root: Path, counts: dict[str, int]) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    for split, n in counts.items():
        write_lines(root / f"{split}.jsonl", [row(f"{split}-{i}") for i in range(n)])
    return root


class TestRegistry:
    def test_forty_five_languages(self):
        assert len(LANGUAGES) == 45 == len(set(LANGUAGES))
        assert DISPLAY_NAMES[:4] == ("Amharic", "Arabic", "Azerbaijani", "Bengali")


class TestLoadDataset:
    def test_three_lines_in_order(self, tmp_path):
        path = write_lines(tmp_path / "a.jsonl", [row(1), row(2), row(3)])
        assert [r.id for r in load_dataset(path)] == ["r1", "r2", "r3"]

    def test_missing_summary_names_line(self, tmp_path):
        bad = row(2)
        del bad["summary"]
        path = write_lines(tmp_path / "a.jsonl", [row(1), bad])
        with pytest.raises(MissingField) as info:
            list(load_dataset(path, strict=True))
        assert info.value.line_no == 2 and info.value.key == "summary"

    def test_blank_text(self, tmp_path):
        path = write_lines(tmp_path / "a.jsonl", [row(1, text="   ")])
        with pytest.raises(EmptyText) as info:
            list(load_dataset(path, strict=True))
        assert info.value.line_no == 1

    def test_unknown_language(self, tmp_path):
        path = write_lines(tmp_path / "a.jsonl", [row(1, src="klingon")])
        with pytest.raises(UnknownLanguage) as info:
            list(load_dataset(path, strict=True))
        assert info.value.tag == "klingon" and info.value.line_no == 1

    def test_bad_json(self, tmp_path):
        path = write_lines(tmp_path / "a.jsonl", ["{not json"])
        with pytest.raises(MalformedRecord):
            list(load_dataset(path, strict=True))

    def test_lenient_mode_skips_and_reports(self, tmp_path):
        bad = row(2)
        del bad["text"]
        path = write_lines(tmp_path / "a.jsonl", [row(1), bad, "[1, 2]", row(3, tgt="nope"), row(4)])
        rejected = []
        assert [r.id for r in load_dataset(path, rejected=rejected)] == ["r1", "r4"]
        assert [type(e) for e in rejected] == [MissingField, MalformedRecord, UnknownLanguage]

    def test_missing_file_fails_eagerly(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "nope.jsonl")

    def test_round_trip(self, tmp_path, fixture_dataset):
        records = list(fixture_dataset.records("train"))
        write_jsonl(records, tmp_path / "train.jsonl")
        assert list(load_dataset(tmp_path / "train.jsonl")) == records

    def test_record_invariants(self):
        with pytest.raises(EmptyText):
            DocumentRecord("x", "", "s", "english", "english")
        with pytest.raises(ValueError):
            DocumentRecord("x", "t", "s", "english", "english", split="holdout")


class TestSplitStats:
    def test_fixture_hand_counts(self, fixture_dataset):
        stats = split_stats(fixture_dataset)
        assert stats.as_tuple() == (6, 3, 3)
        assert stats.total == 12

    def test_empty_files(self, tmp_path):
        ds = Dataset.from_dir(make_split_dir(tmp_path, {"train": 0, "validation": 0, "test": 0}))
        assert split_stats(ds).as_tuple() == (0, 0, 0)

    def test_val_alias(self, tmp_path):
        ds = Dataset.from_dir(make_split_dir(tmp_path, {"train": 2, "val": 1, "test": 1}))
        assert split_stats(ds).as_tuple() == (2, 1, 1)

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            SplitStats("x", -1, 0, 0)

    @settings(max_examples=25, deadline=None)
    @given(st.permutations(range(7)))
    def test_permutation_invariant(self, tmp_path_factory, order):
        root = tmp_path_factory.mktemp("perm")
        objs = [row(i) for i in range(7)]
        objs[3]["summary"] = ""
        for split in ("train", "validation", "test"):
            write_lines(root / f"{split}.jsonl", [objs[i] for i in order])
        assert split_stats(Dataset.from_dir(root)).as_tuple() == (6, 6, 6)


class TestLanguagePairView:
    def test_filter(self):
        records = [DocumentRecord(**row(1)), DocumentRecord(**row(2, "thai", "tamil")), DocumentRecord(**row(3))]
        assert [r.id for r in language_pair_view(records, "bengali", "english")] == ["r1", "r3"]
        assert list(language_pair_view(records, "english", "thai")) == []

    def test_unknown_tag(self):
        with pytest.raises(UnknownLanguage):
            language_pair_view([], "bengali", "xx")

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from(LANGUAGES[:5]), st.sampled_from(LANGUAGES[:5])), max_size=30))
    def test_union_over_pairs_is_complete(self, pairs):
        records = [DocumentRecord(**row(i, s, t)) for i, (s, t) in enumerate(pairs)]
        union = []
        for pair in sorted({r.pair for r in records}):
            union.extend(language_pair_view(records, *pair))
        assert sorted(r.id for r in union) == sorted(r.id for r in records)
        assert len(union) == len({r.id for r in union})


class TestAdapters:
    def test_cnn_dailymail(self, tmp_path):
        src = tmp_path / "src"
        src.mkdir()
        for split, n in (("train", 3), ("validation", 1), ("test", 2)):
            with (src / f"{split}.csv").open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["id", "article", "highlights"])
                for i in range(n):
                    w.writerow([f"{split}{i}", "An article, with commas.\nAnd lines.", "Highlights."])
        stats = convert_cnn_dailymail(src, tmp_path / "out")
        assert stats.as_tuple() == (3, 1, 2)
        assert split_stats(Dataset.from_dir(tmp_path / "out")).as_tuple() == (3, 1, 2)

    def test_xlsum(self, tmp_path):
        src = tmp_path / "src"
        src.mkdir()
        for split, n in (("train", 2), ("val", 1), ("test", 1)):
            write_lines(src / f"bengali_{split}.jsonl",
                        [{"id": f"{split}{i}", "url": "u", "title": "t", "summary": "সারাংশ।", "text": "লেখা।"}
                         for i in range(n)])
        assert convert_xlsum(src, "bengali", tmp_path / "out").as_tuple() == (2, 1, 1)
        rec = next(load_dataset(tmp_path / "out" / "train.jsonl"))
        assert rec.pair == ("bengali", "bengali") and rec.summary == "সারাংশ।"

    def test_crosssum(self, tmp_path):
        src = tmp_path / "src"
        src.mkdir()
        native = {"source_url": "http://x", "target_url": "http://y", "text": "Body.", "summary": "Sum."}
        write_lines(src / "thai-tamil_test.jsonl", [dict(native, source_url=f"u{i}") for i in range(3)])
        write_lines(src / "bengali-english_test.jsonl", [native])
        write_lines(src / "bengali-english_train.jsonl", [native, native])
        write_lines(src / "bengali-english_val.jsonl", [native])
        stats = convert_crosssum(src, tmp_path / "out")
        assert stats.as_tuple() == (2, 1, 4)
        test = list(load_dataset(tmp_path / "out" / "test.jsonl", split="test"))
        assert len(list(language_pair_view(test, "thai", "tamil"))) == 3


DATA_ROOT = os.environ.get("CONVERSUM_DATA_ROOT")
PUBLIC_SPLIT_COUNTS = {
    "cnn_dailymail": (287113, 13368, 11490),
    "xlsum-bengali": (8102, 1012, 1012),
    "xlsum-thai": (6616, 826, 826),
    "xlsum-burmese": (4569, 570, 570),
    "xlsum-tigrinya": (5451, 681, 681),
}


@pytest.mark.skipif(DATA_ROOT is None, reason="set CONVERSUM_DATA_ROOT to converted public datasets")
@pytest.mark.parametrize("name,expected", sorted(PUBLIC_SPLIT_COUNTS.items()))
def test_public_split_counts(name, expected):
    root = Path(DATA_ROOT) / name
    if not root.is_dir():
        pytest.skip(f"{root} not present")
    assert split_stats(Dataset.from_dir(root)).as_tuple() == expected
