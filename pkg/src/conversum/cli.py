"""Command-line pipeline: generate -> score -> train -> evaluate, plus compare-llm.

Every subcommand reads one JSON config (``--config``), applies flag
overrides on top, and records the merged result in
``<output_dir>/<command>/manifest.json``. Exit codes: 0 success, 1 runtime
failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .artifacts import canonical_json, write_manifest, write_text_atomic
from .contrastive import LossConfig
from .corpus import SPLITS, Dataset, DocumentRecord
from .errors import ConVerSumError, MissingUpstreamArtifact
from .evaluation import EvalReport, ScoringBackends, emit_report, evaluate_system, read_report_csv
from .generation import (
    CandidateSet,
    GenerationConfig,
    cache_candidates,
    generate_candidates,
    get_backend,
    load_candidates,
)
from .languages import is_registered
from .llm_baseline import OpenAICompatibleClient, ChatResult, RetryPolicy, run_comparison, write_transcripts
from .scoring import (
    CandidateSummary,
    LaSEScore,
    OneHotTokenEncoder,
    ScoredCandidate,
    StubEncoder,
    dump_scored,
    encode,
    get_encoder,
    get_lang_id,
    rank_candidates,
)
from .training import LinearScorer, RankedExample, TrainConfig, TrainHistory, train

logger = logging.getLogger("conversum")

FIXTURE_DIR = Path(__file__).parent / "data" / "fixture"

# Language pairs of the API comparison table, in its row order.
LLM_PAIRS = (
    ("burmese", "bengali"), ("amharic", "igbo"), ("tigrinya", "arabic"), ("japanese", "burmese"),
    ("thai", "tamil"), ("hausa", "bengali"), ("chinese_simplified", "tigrinya"), ("burmese", "marathi"),
    ("thai", "marathi"), ("chinese_simplified", "english"), ("chinese_traditional", "ukrainian"),
    ("uzbek", "thai"),
)

DEFAULT_CONFIG: dict = {
    "dataset": None,
    "splits": list(SPLITS),
    "output_dir": "runs/default",
    "cache_dir": None,
    "seed": 0,
    "workers": 1,
    "strict": False,
    "lase_target": "candidate",
    "generation": asdict(GenerationConfig()),
    "loss": asdict(LossConfig()),
    "train": {k: v for k, v in asdict(TrainConfig()).items() if k != "loss"},
    "backends": {
        "generator": "stub", "generator_options": {},
        "encoder": "stub", "encoder_options": {},
        "lang_id": "stub", "lang_id_options": {},
        "token_encoder": "stub", "token_encoder_options": {},
    },
    "llm": {
        "provider": "openai",
        "model": "gpt-4o-2024-05-13",
        "base_url": "https://api.openai.com/v1",
        "dataset": None,
        "split": "test",
        "pairs": [list(p) for p in LLM_PAIRS],
        "mode": "zero_shot",
        "max_concurrent": 2,
        "max_retries": 3,
        "min_interval": 0.0,
        "system_name": "gpt-4o",
    },
}


class UsageError(Exception):
    """Bad flags or configuration (exit code 2)."""


# ---------------------------------------------------------------------------
# configuration

def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if "command" in data and "config" in data:  # a run manifest
        data = data["config"]
    unknown = set(data) - set(DEFAULT_CONFIG)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return _merge(DEFAULT_CONFIG, data)


def apply_overrides(cfg: dict, args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(cfg)
    simple = {"dataset": "dataset", "output_dir": "output_dir", "cache_dir": "cache_dir",
              "workers": "workers", "seed": "seed"}
    for attr, key in simple.items():
        value = getattr(args, attr, None)
        if value is not None:
            cfg[key] = value
    if getattr(args, "strict", False):
        cfg["strict"] = True
    if getattr(args, "splits", None):
        cfg["splits"] = args.splits.split(",")
    gen = cfg["generation"]
    for attr in ("num_candidates", "max_length", "diversity_penalty"):
        value = getattr(args, attr, None)
        if value is not None:
            gen[attr] = value
    if getattr(args, "num_candidates", None) is not None:
        gen["num_beam_groups"] = args.num_candidates
    if getattr(args, "target_languages", None) is not None:
        gen["target_languages"] = [t for t in args.target_languages.split(",") if t]
    tr = cfg["train"]
    for attr in ("epochs", "batch_size", "validate_every_steps", "learning_rate", "lr_schedule",
                 "warmup_fraction", "max_steps"):
        value = getattr(args, attr, None)
        if value is not None:
            tr[attr] = value
    if getattr(args, "base_margin", None) is not None:
        cfg["loss"]["base_margin"] = args.base_margin
    if getattr(args, "fixed_margin", False):
        cfg["loss"]["rank_scaled"] = False
    if getattr(args, "lase_target", None) is not None:
        cfg["lase_target"] = args.lase_target
    llm = cfg["llm"]
    for attr in ("provider", "model", "base_url", "mode"):
        value = getattr(args, f"llm_{attr}", None)
        if value is not None:
            llm[attr] = value
    if getattr(args, "llm_dataset", None) is not None:
        llm["dataset"] = args.llm_dataset
    if getattr(args, "pairs", None):
        llm["pairs"] = [p.split(":") for p in args.pairs.split(",")]
    # one global seed drives every stage
    cfg["generation"]["seed"] = cfg["seed"]
    cfg["train"]["seed"] = cfg["seed"]
    if cfg["cache_dir"] is None:
        cfg["cache_dir"] = str(Path(cfg["output_dir"]) / "cache")
    return cfg


def generation_config(cfg: dict) -> GenerationConfig:
    try:
        return GenerationConfig.from_dict(cfg["generation"])
    except (TypeError, ValueError, ConVerSumError) as exc:
        raise UsageError(f"invalid generation config: {exc}") from None


def train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig.from_dict({**cfg["train"], "loss": LossConfig(**cfg["loss"])})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid train config: {exc}") from None


def open_dataset(path: str | None, strict: bool) -> Dataset:
    if path is None:
        raise UsageError("no dataset given (--dataset or config 'dataset')")
    root = FIXTURE_DIR if path == "fixture" else Path(path)
    if not root.is_dir():
        raise UsageError(f"cannot read dataset directory: {path}")
    dataset = Dataset.from_dir(root, strict=strict)
    if not dataset.splits:
        raise UsageError(f"no split files (train/validation/test.jsonl) under {path}")
    return dataset


def scoring_backends(cfg: dict) -> ScoringBackends:
    try:
        return _scoring_backends(cfg["backends"])
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid backend config: {exc}") from None


def _scoring_backends(b: dict) -> ScoringBackends:
    encoder = get_encoder(b["encoder"], **b["encoder_options"])
    lang_id = get_lang_id(b["lang_id"], **b["lang_id_options"])
    if b["token_encoder"] == "stub":
        token_encoder = StubEncoder(**b["token_encoder_options"])
    elif b["token_encoder"] == "onehot":
        token_encoder = OneHotTokenEncoder(**b["token_encoder_options"])
    elif b["token_encoder"] == "same":
        token_encoder = encoder
    else:
        token_encoder = get_encoder(b["token_encoder"], **b["token_encoder_options"])
    return ScoringBackends(encoder, lang_id, token_encoder)


def _stage_dir(cfg: dict, name: str) -> Path:
    return Path(cfg["output_dir"]) / name


def _records(dataset: Dataset, split: str) -> list[DocumentRecord]:
    if split not in dataset.splits:
        return []
    return list(dataset.records(split))


# ---------------------------------------------------------------------------
# commands

def cmd_generate(cfg: dict) -> dict:
    dataset = open_dataset(cfg["dataset"], cfg["strict"])
    gen_cfg = generation_config(cfg)
    try:
        backend = get_backend(cfg["backends"]["generator"], **cfg["backends"]["generator_options"])
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid generator config: {exc}") from None
    cache_dir = Path(cfg["cache_dir"])
    fingerprint = gen_cfg.fingerprint()
    stats = {"generated": 0, "cached": 0, "failed": 0}

    def one(record: DocumentRecord):
        if load_candidates(record.id, fingerprint, cache_dir) is not None:
            return "cached"
        try:
            cache_candidates(generate_candidates(record, gen_cfg, backend), cache_dir)
        except ConVerSumError as exc:
            if cfg["strict"]:
                raise
            logger.error("%s: generation failed: %s: %s", record.id, type(exc).__name__, exc)
            return "failed"
        return "generated"

    for split in cfg["splits"]:
        records = _records(dataset, split)
        if cfg["workers"] > 1:
            with ThreadPoolExecutor(max_workers=cfg["workers"]) as pool:
                outcomes = list(pool.map(one, records))
        else:
            outcomes = [one(r) for r in records]
        for outcome in outcomes:
            stats[outcome] += 1
    logger.info("generate: %(generated)d new, %(cached)d cache hits, %(failed)d failed", stats)
    return {"stats": stats, "fingerprint": fingerprint, "artifacts": sorted(cache_dir.glob("*.json"))}


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingUpstreamArtifact(path)
    return path


def cmd_score(cfg: dict) -> dict:
    dataset = open_dataset(cfg["dataset"], cfg["strict"])
    gen_cfg = generation_config(cfg)
    cache_dir = _require(Path(cfg["cache_dir"]))
    backends = scoring_backends(cfg)
    out_dir = _stage_dir(cfg, "score")
    target_mode = cfg["lase_target"]
    if target_mode not in ("candidate", "reference"):
        raise UsageError("lase_target must be 'candidate' or 'reference'")
    artifacts, stats = [], {}
    for split in cfg["splits"]:
        records = _records(dataset, split)
        if not records:
            continue
        lines, missing = [], 0
        for record in records:
            cands = load_candidates(record.id, gen_cfg.fingerprint(), cache_dir)
            if cands is None:
                if cfg["strict"]:
                    raise MissingUpstreamArtifact(cache_dir / f"{record.id} (fingerprint {gen_cfg.fingerprint()})")
                missing += 1
                continue
            target = record.target_lang if target_mode == "reference" else None
            ranked = rank_candidates(cands, record.summary, target, backends.encoder, backends.lang_id,
                                     record.text, backends.count_tokens)
            lines.append(dump_scored(record.id, ranked))
        path = out_dir / f"{split}.jsonl"
        write_text_atomic(path, "".join(lines))
        artifacts.append(path)
        stats[split] = {"scored": len(lines), "missing_candidates": missing}
    if not artifacts:
        raise MissingUpstreamArtifact(cache_dir)
    return {"stats": stats, "artifacts": artifacts}


def read_scored(path: Path) -> dict[str, list[ScoredCandidate]]:
    by_doc: dict[str, list[ScoredCandidate]] = defaultdict(list)
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            lase_obj = obj["lase"]
            by_doc[obj["document_id"]].append(ScoredCandidate(
                candidate=CandidateSummary(obj["candidate_text"], obj["language"], -1),
                lase=LaSEScore(lase_obj["ms"], lase_obj["lc"], lase_obj["lp"]),
                tri_similarity=obj["tri_similarity"],
                rank=obj["rank"],
                index=obj["rank"] - 1,
            ))
    return dict(by_doc)


def _examples(path: Path, records: dict[str, DocumentRecord], encoder) -> list[RankedExample]:
    from .training import build_example

    out = []
    for doc_id, ranked in read_scored(path).items():
        record = records.get(doc_id)
        if record is None:
            raise MissingUpstreamArtifact(f"{path}: document {doc_id} not in dataset")
        out.append(build_example(doc_id, record.text, record.summary, ranked, encoder))
    return out


def cmd_train(cfg: dict) -> dict:
    score_dir = _stage_dir(cfg, "score")
    train_path = _require(score_dir / "train.jsonl")
    dataset = open_dataset(cfg["dataset"], cfg["strict"])
    tr_cfg = train_config(cfg)
    backends = scoring_backends(cfg)
    records = {r.id: r for r in dataset}
    train_set = _examples(train_path, records, backends.encoder)
    val_path = score_dir / "validation.jsonl"
    if val_path.exists():
        val_set = _examples(val_path, records, backends.encoder)
    else:
        logger.warning("no scored validation split; validating on the training set")
        val_set = train_set
    if not train_set:
        raise MissingUpstreamArtifact(f"{train_path} (no scored documents)")
    run_dir = _stage_dir(cfg, "train")
    scorer = LinearScorer(backends.encoder.dim, seed=tr_cfg.seed)
    history = train(scorer, train_set, val_set, tr_cfg, run_dir=run_dir)
    artifacts = [run_dir / "config.json", run_dir / "history.json",
                 *sorted((run_dir / "checkpoints").glob("*.npz"))]
    return {"best_checkpoint": history.best_checkpoint, "artifacts": artifacts}


def _load_scorer(cfg: dict, dim: int) -> LinearScorer:
    run_dir = _stage_dir(cfg, "train")
    history = TrainHistory.from_json(json.loads(_require(run_dir / "history.json").read_text(encoding="utf-8")))
    if history.best_checkpoint is None:
        raise MissingUpstreamArtifact(run_dir / "history.json (no validated checkpoint)")
    scorer = LinearScorer(dim)
    scorer.load(_require(run_dir / "checkpoints" / f"{history.best_checkpoint}.npz"))
    return scorer


def cmd_evaluate(cfg: dict, baseline_only: bool = False) -> dict:
    dataset = open_dataset(cfg["dataset"], cfg["strict"])
    gen_cfg = generation_config(cfg)
    cache_dir = _require(Path(cfg["cache_dir"]))
    backends = scoring_backends(cfg)
    scorer = None if baseline_only else _load_scorer(cfg, backends.encoder.dim)
    test = _records(dataset, "test")
    if not test:
        raise MissingUpstreamArtifact(f"{cfg['dataset']}: test split")
    baseline_out, system_out = [], []
    for record in test:
        cands: CandidateSet | None = load_candidates(record.id, gen_cfg.fingerprint(), cache_dir)
        if cands is None:
            raise MissingUpstreamArtifact(cache_dir / f"{record.id} (fingerprint {gen_cfg.fingerprint()})")
        first = min(cands.candidates, key=lambda c: c.group_index)
        baseline_out.append((record.id, first.text))
        if scorer is not None:
            example = RankedExample(
                record.id, encode(record.text, backends.encoder), encode(record.summary, backends.encoder),
                np.stack([encode(c.text, backends.encoder) for c in cands.candidates]),
                np.zeros(len(cands)),
            )
            best = int(np.argmax(scorer.rank_scores(example)))
            system_out.append((record.id, cands.candidates[best].text))
    snapshot = {"generation": cfg["generation"], "backends": cfg["backends"]}
    out_dir = _stage_dir(cfg, "evaluate")
    baseline = evaluate_system(baseline_out, test, backends, "baseline", snapshot, cfg["workers"])
    artifacts = [out_dir / "predictions_baseline.jsonl"]
    _write_predictions(artifacts[0], baseline_out)
    if scorer is None:
        report, against = baseline, None
    else:
        report = evaluate_system(system_out, test, backends, "conversum", snapshot, cfg["workers"])
        artifacts.append(out_dir / "predictions_conversum.jsonl")
        _write_predictions(artifacts[-1], system_out)
        against = baseline
    write_text_atomic(out_dir / "report.csv", emit_report(report, "csv", baseline=against).decode("utf-8"))
    write_text_atomic(out_dir / "report.md", emit_report(report, "markdown", baseline=against).decode("utf-8"))
    artifacts += [out_dir / "report.csv", out_dir / "report.md"]
    return {"rows": [asdict(r) for r in report.rows], "artifacts": artifacts}


def _write_predictions(path: Path, outputs: list[tuple[str, str]]) -> None:
    write_text_atomic(path, "".join(
        json.dumps({"document_id": d, "prediction": p}, ensure_ascii=False, sort_keys=True) + "\n"
        for d, p in outputs))


class EchoClient:
    """Offline provider: answers with the first 80 words of the prompted document."""

    def complete(self, messages):
        text = messages[-1]["content"]
        marker = "concisely and informative. "
        body = text.split(marker, 1)[-1]
        return ChatResult(" ".join(body.split()[:80]), "echo")


def cmd_compare_llm(cfg: dict, against: str | None = None) -> dict:
    llm = cfg["llm"]
    dataset = open_dataset(llm["dataset"] or cfg["dataset"], cfg["strict"])
    pairs = [tuple(p) for p in llm["pairs"]]
    for pair in pairs:
        if len(pair) != 2 or not all(is_registered(t) for t in pair):
            raise UsageError(f"bad language pair {pair}")
    if llm["provider"] == "echo":
        client = EchoClient()
    elif llm["provider"] == "openai":
        client = OpenAICompatibleClient(llm["model"], llm["base_url"])
    else:
        raise UsageError(f"unknown llm provider {llm['provider']!r}")
    shots = None
    if llm["mode"] == "one_shot":
        shots = {}
        for record in _records(dataset, "train"):
            shots.setdefault(record.pair, (record.text, record.summary))
    policy = RetryPolicy(max_retries=llm["max_retries"], max_concurrent=llm["max_concurrent"],
                         min_interval=llm["min_interval"])
    out_dir = _stage_dir(cfg, "compare-llm")
    run = run_comparison(pairs, _records(dataset, llm["split"]), llm["mode"], client, scoring_backends(cfg),
                         system_name=llm["system_name"], policy=policy, shot_examples=shots)
    write_transcripts(run.transcripts, out_dir / "transcripts.jsonl")
    write_text_atomic(out_dir / "failures.json", json.dumps(run.failures, sort_keys=True, indent=1) + "\n")
    baseline: EvalReport | None = None
    if against:
        reports = read_report_csv(Path(against).read_bytes())
        keys = {r.key for r in run.report.rows}
        baseline = EvalReport(reports[-1].system_name,
                              tuple(r for r in reports[-1].rows if r.key in keys))
    order = [tuple(p) for p in pairs]
    report = run.report
    if baseline is not None:
        # chat model on the left, re-ranked system on the right
        report, baseline = baseline, run.report
    write_text_atomic(out_dir / "report.md", emit_report(report, "markdown", baseline=baseline, order=order).decode("utf-8"))
    write_text_atomic(out_dir / "report.csv", emit_report(run.report, "csv", order=order).decode("utf-8"))
    artifacts = [out_dir / n for n in ("transcripts.jsonl", "failures.json", "report.md", "report.csv")]
    return {"excluded": run.report.excluded, "artifacts": artifacts}


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", help="JSON config file (or a run manifest)")
    g.add_argument("--seed", type=int, help="seed for generation and training")
    g.add_argument("--workers", type=int, help="parallel workers for generation/evaluation")
    g.add_argument("--strict", action="store_true", help="fail on the first invalid record or generation error")
    g.add_argument("--dataset", help="dataset directory with train/validation/test.jsonl ('fixture' = bundled)")
    g.add_argument("--output-dir", dest="output_dir")
    g.add_argument("--cache-dir", dest="cache_dir")
    g.add_argument("--splits", help="comma-separated splits to process")
    g.add_argument("-v", "--verbose", action="store_true")

    gen = argparse.ArgumentParser(add_help=False)
    gg = gen.add_argument_group("generation")
    gg.add_argument("--num-candidates", type=int, help="candidates (= beam groups) per document")
    gg.add_argument("--max-length", type=int, help="token cap per candidate")
    gg.add_argument("--diversity-penalty", type=float)
    gg.add_argument("--target-languages", help="comma-separated language tags, cycled over beam groups")

    scoring = argparse.ArgumentParser(add_help=False)
    scoring.add_argument("--lase-target", choices=("candidate", "reference"),
                         help="score candidates in their own requested language or the reference language")

    tr = argparse.ArgumentParser(add_help=False)
    tg = tr.add_argument_group("training")
    tg.add_argument("--epochs", type=int)
    tg.add_argument("--batch-size", type=int)
    tg.add_argument("--validate-every-steps", type=int)
    tg.add_argument("--learning-rate", type=float)
    tg.add_argument("--lr-schedule", choices=("constant", "linear_decay", "warmup_linear"))
    tg.add_argument("--warmup-fraction", type=float)
    tg.add_argument("--max-steps", type=int)
    tg.add_argument("--base-margin", type=float)
    tg.add_argument("--fixed-margin", action="store_true", help="use one margin for every pair")

    parser = argparse.ArgumentParser(prog="conversum", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common, gen], help="generate and cache candidate summaries")
    sub.add_parser("score", parents=[common, gen, scoring], help="LaSE-rank cached candidates")
    sub.add_parser("train", parents=[common, gen, tr], help="train the re-ranking scorer")
    ev = sub.add_parser("evaluate", parents=[common, gen], help="evaluate re-ranked test outputs")
    ev.add_argument("--baseline", action="store_true", help="evaluate the generator's top beam only")
    cl = sub.add_parser("compare-llm", parents=[common], help="prompt a chat model and evaluate its summaries")
    cl.add_argument("--provider", dest="llm_provider", choices=("openai", "echo"))
    cl.add_argument("--model", dest="llm_model")
    cl.add_argument("--base-url", dest="llm_base_url")
    cl.add_argument("--mode", dest="llm_mode", choices=("zero_shot", "one_shot"))
    cl.add_argument("--llm-dataset", help="cross-lingual dataset directory (defaults to --dataset)")
    cl.add_argument("--pairs", help="comma-separated src:tgt pairs")
    cl.add_argument("--against", help="report CSV of our system to render side by side")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        cfg = apply_overrides(load_config(args.config), args)
        if args.command == "generate":
            result = cmd_generate(cfg)
        elif args.command == "score":
            result = cmd_score(cfg)
        elif args.command == "train":
            result = cmd_train(cfg)
        elif args.command == "evaluate":
            result = cmd_evaluate(cfg, baseline_only=args.baseline)
        else:
            result = cmd_compare_llm(cfg, args.against)
    except UsageError as exc:
        print(f"conversum {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except ConVerSumError as exc:
        print(f"conversum {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    artifacts = result.pop("artifacts", [])
    stage = _stage_dir(cfg, args.command)
    write_manifest(stage, args.command, cfg, time.perf_counter() - start, artifacts, {"result": _jsonable(result)})
    print(canonical_json({"command": args.command, **_jsonable(result)}))
    return 0


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=str))


if __name__ == "__main__":
    raise SystemExit(main())
