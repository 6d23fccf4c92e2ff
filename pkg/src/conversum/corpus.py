"""Dataset ingestion.

Every dataset is normalised to one JSONL shape, one object per line::

    {"id": ..., "text": ..., "summary": ..., "source_lang": ..., "target_lang": ...}

A dataset on disk is a directory holding ``train.jsonl``, ``validation.jsonl``
and ``test.jsonl``. The ``convert_*`` adapters turn the public CNN/DailyMail,
XL-Sum and CrossSum layouts into that shape.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import re
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EmptyText, MalformedRecord, MissingField, RecordError, UnknownLanguage
from .languages import is_registered

logger = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")
RECORD_KEYS = ("id", "text", "summary", "source_lang", "target_lang")

# alternative file stems accepted for each split
_SPLIT_STEMS = {
    "train": ("train",),
    "validation": ("validation", "val", "dev"),
    "test": ("test",),
}


@dataclass(frozen=True)
class DocumentRecord:
    id: str
    text: str
    summary: str
    source_lang: str
    target_lang: str
    split: str = "train"

    def __post_init__(self):
        if not self.text.strip():
            raise EmptyText(field="text")
        if not self.summary.strip():
            raise EmptyText(field="summary")
        for tag in (self.source_lang, self.target_lang):
            if not is_registered(tag):
                raise UnknownLanguage(tag)
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")

    @property
    def pair(self) -> tuple[str, str]:
        return (self.source_lang, self.target_lang)

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in RECORD_KEYS}


@dataclass(frozen=True)
class SplitStats:
    dataset_name: str
    train_count: int = 0
    val_count: int = 0
    test_count: int = 0

    def __post_init__(self):
        if min(self.train_count, self.val_count, self.test_count) < 0:
            raise ValueError("split counts must be non-negative")

    @property
    def total(self) -> int:
        return self.train_count + self.val_count + self.test_count

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.train_count, self.val_count, self.test_count)


def parse_record(obj, line_no: int, split: str) -> DocumentRecord:
    """Validate one decoded JSON object, raising the line-tagged error."""
    if not isinstance(obj, dict):
        raise MalformedRecord(line_no, "expected a JSON object")
    for key in RECORD_KEYS:
        if key not in obj:
            raise MissingField(line_no, key)
    for key in ("text", "summary"):
        value = obj[key]
        if not isinstance(value, str) or not value.strip():
            raise EmptyText(line_no, key)
    for key in ("source_lang", "target_lang"):
        if not is_registered(obj[key]):
            raise UnknownLanguage(obj[key], line_no)
    return DocumentRecord(
        id=str(obj["id"]),
        text=obj["text"],
        summary=obj["summary"],
        source_lang=obj["source_lang"],
        target_lang=obj["target_lang"],
        split=split,
    )


def load_dataset(
    path: str | os.PathLike,
    format: str = "jsonl",
    split: str = "train",
    *,
    strict: bool = False,
    rejected: list[RecordError | EmptyText | UnknownLanguage] | None = None,
) -> Iterator[DocumentRecord]:
    """Yield validated records from a canonical JSONL file, in file order.

    Invalid lines are logged, appended to ``rejected`` when given, and
    skipped. With ``strict=True`` the first invalid line raises instead.
    """
    if format != "jsonl":
        raise ValueError(f"unsupported format {format!r}")
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    return _iter_jsonl(path, split, strict, rejected)


def _iter_jsonl(path: Path, split: str, strict: bool, rejected) -> Iterator[DocumentRecord]:
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise MalformedRecord(line_no, f"invalid JSON ({exc.msg})") from None
                record = parse_record(obj, line_no, split)
            except (RecordError, EmptyText, UnknownLanguage) as exc:
                if strict:
                    raise
                logger.error("%s: skipping record: %s", path, exc)
                if rejected is not None:
                    rejected.append(exc)
                continue
            yield record


def write_jsonl(records: Iterable[DocumentRecord], path: str | os.PathLike) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_json(), ensure_ascii=False) + "\n")
            n += 1
    return n


@dataclass
class Dataset:
    """Handle on a split directory. Nothing is read until a split is requested."""

    name: str
    paths: dict[str, Path] = field(default_factory=dict)
    strict: bool = False

    @classmethod
    def from_dir(cls, root: str | os.PathLike, name: str | None = None, strict: bool = False) -> "Dataset":
        root = Path(root)
        if not root.is_dir():
            raise FileNotFoundError(root)
        paths = {}
        for split, stems in _SPLIT_STEMS.items():
            for stem in stems:
                candidate = root / f"{stem}.jsonl"
                if candidate.exists():
                    paths[split] = candidate
                    break
        return cls(name=name or root.name, paths=paths, strict=strict)

    @property
    def splits(self) -> list[str]:
        return [s for s in SPLITS if s in self.paths]

    def records(self, split: str, rejected: list | None = None) -> Iterator[DocumentRecord]:
        if split not in self.paths:
            raise FileNotFoundError(f"dataset {self.name!r} has no {split} split")
        return load_dataset(self.paths[split], split=split, strict=self.strict, rejected=rejected)

    def __iter__(self) -> Iterator[DocumentRecord]:
        for split in self.splits:
            yield from self.records(split)


def split_stats(dataset: Dataset) -> SplitStats:
    """Count accepted records per split (all three splits must be present)."""
    counts = {}
    for split in SPLITS:
        counts[split] = sum(1 for _ in dataset.records(split))
    return SplitStats(dataset.name, counts["train"], counts["validation"], counts["test"])


def language_pair_view(
    records: Dataset | Iterable[DocumentRecord], source_lang: str, target_lang: str
) -> Iterator[DocumentRecord]:
    """Yield the records of one (source, target) language pair, order preserved."""
    for tag in (source_lang, target_lang):
        if not is_registered(tag):
            raise UnknownLanguage(tag)
    return (r for r in records if r.source_lang == source_lang and r.target_lang == target_lang)


# ---------------------------------------------------------------------------
# adapters for the public dataset layouts

def convert_cnn_dailymail(src_dir: str | os.PathLike, out_dir: str | os.PathLike) -> SplitStats:
    """Convert the ``{train,validation,test}.csv`` (id, article, highlights) layout."""
    src_dir, out_dir = Path(src_dir), Path(out_dir)
    counts = {}
    for split in SPLITS:
        src = _find_split_file(src_dir, split, ".csv")
        counts[split] = write_jsonl(_cnn_rows(src, split), out_dir / f"{split}.jsonl")
    return SplitStats("cnn_dailymail", counts["train"], counts["validation"], counts["test"])


def _cnn_rows(src: Path, split: str) -> Iterator[DocumentRecord]:
    csv.field_size_limit(1 << 30)
    with src.open(encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                yield DocumentRecord(row["id"], row["article"], row["highlights"], "english", "english", split)
            except (EmptyText, UnknownLanguage) as exc:
                logger.error("%s: skipping row %s: %s", src, row.get("id"), exc)


def convert_xlsum(src_dir: str | os.PathLike, language: str, out_dir: str | os.PathLike) -> SplitStats:
    """Convert XL-Sum ``{language}_{split}.jsonl`` files (id, url, title, summary, text)."""
    if not is_registered(language):
        raise UnknownLanguage(language)
    src_dir, out_dir = Path(src_dir), Path(out_dir)
    counts = {}
    for split in SPLITS:
        src = _find_split_file(src_dir, split, ".jsonl", prefix=f"{language}_")
        rows = _native_jsonl(src, split, lambda obj: (language, language))
        counts[split] = write_jsonl(rows, out_dir / f"{split}.jsonl")
    return SplitStats(f"xlsum-{language}", counts["train"], counts["validation"], counts["test"])


_CROSSSUM_NAME = re.compile(r"^(?P<src>[a-z_]+)-(?P<tgt>[a-z_]+)_(?P<split>train|val|validation|dev|test)\.jsonl$")


def convert_crosssum(src_dir: str | os.PathLike, out_dir: str | os.PathLike) -> SplitStats:
    """Merge CrossSum ``{src}-{tgt}_{split}.jsonl`` files into one canonical dataset.

    The language pair is taken from the file name; record ids fall back to
    the source URL when the native row has no ``id``.
    """
    src_dir, out_dir = Path(src_dir), Path(out_dir)
    by_split: dict[str, list[Path]] = {s: [] for s in SPLITS}
    for path in sorted(src_dir.glob("*.jsonl")):
        m = _CROSSSUM_NAME.match(path.name)
        if not m:
            continue
        split = next(s for s, stems in _SPLIT_STEMS.items() if m["split"] in stems)
        by_split[split].append(path)
    counts = {}
    for split, files in by_split.items():
        def rows(files=files, split=split):
            for path in files:
                m = _CROSSSUM_NAME.match(path.name)
                src, tgt = m["src"], m["tgt"]
                if not (is_registered(src) and is_registered(tgt)):
                    logger.error("%s: unregistered language pair, skipped", path)
                    continue
                yield from _native_jsonl(path, split, lambda obj: (src, tgt))
        counts[split] = write_jsonl(rows(), out_dir / f"{split}.jsonl")
    return SplitStats("crosssum", counts["train"], counts["validation"], counts["test"])


def _native_jsonl(src: Path, split: str, langs) -> Iterator[DocumentRecord]:
    with src.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            rid = obj.get("id") or obj.get("source_url") or f"{src.stem}-{line_no}"
            source_lang, target_lang = langs(obj)
            try:
                yield DocumentRecord(str(rid), obj.get("text", ""), obj.get("summary", ""),
                                     source_lang, target_lang, split)
            except (EmptyText, UnknownLanguage) as exc:
                logger.error("%s:%d: skipping: %s", src, line_no, exc)


def _find_split_file(src_dir: Path, split: str, suffix: str, prefix: str = "") -> Path:
    for stem in _SPLIT_STEMS[split]:
        candidate = src_dir / f"{prefix}{stem}{suffix}"
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"no {split} file under {src_dir} (prefix {prefix!r}, suffix {suffix!r})")
