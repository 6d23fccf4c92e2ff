"""Corpus-level LaSE / BERTScore evaluation and table rendering."""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .corpus import DocumentRecord
from .errors import DuplicateOutput, EmptyText, EncoderFailure, RowKeyMismatch, UnmatchedOutput
from .scoring import (
    LanguageIdentifier,
    SentenceEncoder,
    TokenCounter,
    TokenEncoder,
    dispatch,
    lase,
    whitespace_tokens,
)

CSV_HEADER = ("system", "source_lang", "target_lang", "n", "lase", "bertscore")


def fmt(value: float) -> str:
    return f"{value:.4f}"


def fmt_delta(value: float) -> str:
    return f"{value:+.4f}"


# ---------------------------------------------------------------------------
# BERTScore

def _unit(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise EncoderFailure("zero token embedding")
    return m / norms


def bertscore(prediction: str, reference: str, token_encoder: TokenEncoder) -> tuple[float, float, float]:
    """Greedy-matching BERTScore (no IDF weighting, no baseline rescaling)."""
    if not prediction.strip():
        raise EmptyText(field="prediction")
    if not reference.strip():
        raise EmptyText(field="reference")
    try:
        p_emb = np.asarray(token_encoder.token_embeddings(prediction), dtype=float)
        r_emb = np.asarray(token_encoder.token_embeddings(reference), dtype=float)
    except (EmptyText, EncoderFailure):
        raise
    except Exception as exc:  # noqa: BLE001
        raise EncoderFailure(str(exc)) from exc
    sim = _unit(p_emb) @ _unit(r_emb).T
    precision = float(sim.max(axis=1).mean())
    recall = float(sim.max(axis=0).mean())
    denom = precision + recall
    f1 = 2 * precision * recall / denom if denom != 0 else 0.0
    return precision, recall, f1


# ---------------------------------------------------------------------------
# reports

@dataclass(frozen=True)
class EvalRow:
    source_lang: str
    target_lang: str
    n: int
    lase: float
    bertscore: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("sample count must be >= 1")
        if not 0.0 <= self.lase <= 1.0:
            raise ValueError(f"mean LaSE {self.lase} outside [0, 1]")
        if not -1.0 <= self.bertscore <= 1.0:
            raise ValueError(f"mean BERTScore {self.bertscore} outside [-1, 1]")

    @property
    def key(self) -> tuple[str, str]:
        return (self.source_lang, self.target_lang)


@dataclass(frozen=True)
class EvalReport:
    system_name: str
    rows: tuple[EvalRow, ...]
    config_snapshot: str = "{}"
    excluded: dict[str, int] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        if not self.rows:
            raise ValueError("an EvalReport needs at least one row")
        keys = [r.key for r in self.rows]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate language-pair rows")

    def row_map(self) -> dict[tuple[str, str], EvalRow]:
        return {r.key: r for r in self.rows}


def _sorted_rows(rows: Iterable[EvalRow], order: Sequence[tuple[str, str]] | None) -> list[EvalRow]:
    rows = list(rows)
    if order is None:
        return sorted(rows, key=lambda r: r.key)
    position = {tuple(k): i for i, k in enumerate(order)}
    return sorted(rows, key=lambda r: (position.get(r.key, len(position)), r.key))


def _pair_label(key: tuple[str, str]) -> str:
    return f"{key[0]}-{key[1]}"


def emit_report(
    report: EvalReport,
    format: str = "markdown",
    baseline: EvalReport | None = None,
    order: Sequence[tuple[str, str]] | None = None,
) -> bytes:
    """Serialise a report; markdown puts ``baseline`` and ``report`` side by side."""
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rep in ([baseline] if baseline is not None else []) + [report]:
            for row in _sorted_rows(rep.rows, order):
                writer.writerow([rep.system_name, row.source_lang, row.target_lang, row.n,
                                 fmt(row.lase), fmt(row.bertscore)])
        return buf.getvalue().encode("utf-8")
    if format != "markdown":
        raise ValueError(f"unknown report format {format!r}")

    if baseline is None:
        lines = [f"| Source-Target | n | {report.system_name} LaSE | {report.system_name} BERTScore |",
                 "|---|---:|---:|---:|"]
        for row in _sorted_rows(report.rows, order):
            lines.append(f"| {_pair_label(row.key)} | {row.n} | {fmt(row.lase)} | {fmt(row.bertscore)} |")
        return ("\n".join(lines) + "\n").encode("utf-8")

    comparison = compare_reports(baseline, report)
    deltas = {d.key: d for d in comparison.rows}
    a, b = baseline.system_name, report.system_name
    lines = [f"| Source-Target | n | {a} LaSE | {a} BERTScore | {b} LaSE | {b} BERTScore | ΔLaSE | ΔBERTScore |",
             "|---|---:|---:|---:|---:|---:|---:|---:|"]
    base_rows = baseline.row_map()
    for row in _sorted_rows(report.rows, order):
        base, d = base_rows[row.key], deltas[row.key]
        lines.append(
            f"| {_pair_label(row.key)} | {row.n} | {fmt(base.lase)} | {fmt(base.bertscore)} | "
            f"{fmt(row.lase)} | {fmt(row.bertscore)} | {fmt_delta(d.lase)} | {fmt_delta(d.bertscore)} |"
        )
    lines.append("")
    lines.append(f"LaSE wins/losses/ties: {comparison.summary('lase')}; "
                 f"BERTScore wins/losses/ties: {comparison.summary('bertscore')}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def read_report_csv(data: bytes | str) -> list[EvalReport]:
    """Parse CSV produced by :func:`emit_report`, one report per system, in file order."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    by_system: dict[str, list[EvalRow]] = {}
    for rec in reader:
        by_system.setdefault(rec["system"], []).append(
            EvalRow(rec["source_lang"], rec["target_lang"], int(rec["n"]),
                    float(rec["lase"]), float(rec["bertscore"])))
    return [EvalReport(name, tuple(rows)) for name, rows in by_system.items()]


# ---------------------------------------------------------------------------
# comparison

@dataclass(frozen=True)
class DeltaRow:
    key: tuple[str, str]
    lase: float
    bertscore: float


@dataclass(frozen=True)
class ReportComparison:
    """Per-row ``b - a`` deltas; a delta counts as a tie when it rounds to 0.0000."""

    baseline: str
    system: str
    rows: tuple[DeltaRow, ...]

    def tally(self, metric: str) -> tuple[int, int, int]:
        wins = losses = ties = 0
        for row in self.rows:
            delta = round(getattr(row, metric), 4)
            if delta > 0:
                wins += 1
            elif delta < 0:
                losses += 1
            else:
                ties += 1
        return wins, losses, ties

    def summary(self, metric: str) -> str:
        return "/".join(str(x) for x in self.tally(metric))


def compare_reports(a: EvalReport, b: EvalReport) -> ReportComparison:
    """Join two reports on (source, target) and take ``b - a`` per metric."""
    rows_a, rows_b = a.row_map(), b.row_map()
    if set(rows_a) != set(rows_b):
        raise RowKeyMismatch(f"row keys differ: {sorted(set(rows_a) ^ set(rows_b))}")
    deltas = tuple(
        DeltaRow(key, rows_b[key].lase - rows_a[key].lase, rows_b[key].bertscore - rows_a[key].bertscore)
        for key in sorted(rows_a)
    )
    return ReportComparison(a.system_name, b.system_name, deltas)


# ---------------------------------------------------------------------------
# system evaluation

@dataclass
class ScoringBackends:
    encoder: SentenceEncoder
    lang_id: LanguageIdentifier
    token_encoder: TokenEncoder
    count_tokens: TokenCounter = whitespace_tokens


@dataclass(frozen=True)
class SampleScore:
    document_id: str
    pair: tuple[str, str]
    lase: float
    bertscore_f1: float


def score_sample(prediction: str, record: DocumentRecord, backends: ScoringBackends) -> SampleScore:
    value = lase(prediction, record.summary, record.target_lang, backends.encoder,
                 backends.lang_id, backends.count_tokens).value
    _, _, f1 = bertscore(prediction, record.summary, backends.token_encoder)
    return SampleScore(record.id, record.pair, value, f1)


def aggregate(system_name: str, scores: Iterable[SampleScore], config_snapshot: dict | None = None,
              excluded: dict[str, int] | None = None) -> EvalReport:
    """Unweighted per-pair means; the result does not depend on input order."""
    groups: dict[tuple[str, str], list[SampleScore]] = defaultdict(list)
    for s in scores:
        groups[s.pair].append(s)
    rows = []
    for key in sorted(groups):
        items = sorted(groups[key], key=lambda s: s.document_id)
        rows.append(EvalRow(key[0], key[1], len(items),
                            float(np.mean([s.lase for s in items])),
                            float(np.mean([s.bertscore_f1 for s in items]))))
    snapshot = json.dumps(config_snapshot or {}, sort_keys=True, separators=(",", ":"))
    return EvalReport(system_name, tuple(rows), snapshot, dict(excluded or {}))


def evaluate_system(
    outputs: Iterable[tuple[str, str]],
    test_set: Iterable[DocumentRecord],
    backends: ScoringBackends,
    system_name: str = "system",
    config_snapshot: dict | None = None,
    workers: int = 1,
) -> EvalReport:
    """Score ``(document_id, prediction)`` pairs against their references."""
    records = {r.id: r for r in test_set}
    seen: set[str] = set()
    jobs = []
    for doc_id, prediction in outputs:
        if doc_id not in records:
            raise UnmatchedOutput(doc_id)
        if doc_id in seen:
            raise DuplicateOutput(doc_id)
        seen.add(doc_id)
        jobs.append((prediction, records[doc_id]))
    if workers > 1:
        backends = ScoringBackends(dispatch(backends.encoder), backends.lang_id,
                                   backends.token_encoder, backends.count_tokens)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(lambda job: score_sample(job[0], job[1], backends), jobs))
    else:
        scores = [score_sample(p, r, backends) for p, r in jobs]
    return aggregate(system_name, scores, config_snapshot)
