"""Scorer training under the contrastive ranking loss.

The generator is frozen: candidates are generated and LaSE-ranked up front,
then embedded once with the (frozen) sentence encoder. What is trained is a
scorer on top of those embeddings.
"""

from __future__ import annotations

import json
import logging
import math
import os
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .artifacts import save_arrays
from .contrastive import ContrastivePairBatch, LossConfig, build_pairs, loss_subgradient, ranking_loss
from .errors import CheckpointIOError, EmptyValidationSet, NoValidations, NonFiniteLoss
from .scoring import ScoredCandidate, SentenceEncoder, encode

logger = logging.getLogger(__name__)

LR_SCHEDULES = ("constant", "linear_decay", "warmup_linear")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 4
    validate_every_steps: int = 1000
    learning_rate: float = 1e-3
    lr_schedule: str = "warmup_linear"
    warmup_fraction: float = 0.1
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    max_steps: int | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.validate_every_steps < 1:
            raise ValueError("validate_every_steps must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in [0, 1)")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if isinstance(self.loss, dict):
            object.__setattr__(self, "loss", LossConfig(**self.loss))

    def total_steps(self, n_examples: int) -> int:
        steps = self.epochs * math.ceil(n_examples / self.batch_size)
        return min(steps, self.max_steps) if self.max_steps is not None else steps

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**data)


def learning_rate_at(step: int, total: int, config: TrainConfig) -> float:
    """LR used for 1-based ``step`` out of ``total``."""
    base = config.learning_rate
    if config.lr_schedule == "constant":
        return base
    if config.lr_schedule == "linear_decay":
        return base * (1.0 - (step - 1) / total)
    warmup = int(config.warmup_fraction * total)
    if step <= warmup:
        return base * step / warmup
    return base * (total - step + 1) / max(1, total - warmup)


@dataclass(frozen=True)
class RankedExample:
    """One document's candidates, embedded, in LaSE-rank order (best first)."""

    document_id: str
    document: np.ndarray
    reference: np.ndarray
    candidates: np.ndarray
    lase: np.ndarray

    def __post_init__(self):
        if self.candidates.ndim != 2 or len(self.candidates) != len(self.lase):
            raise ValueError("candidates must be (n, dim) with one LaSE value per row")


def build_example(document_id: str, document: str, reference: str,
                  ranked: Sequence[ScoredCandidate], encoder: SentenceEncoder) -> RankedExample:
    ranked = sorted(ranked, key=lambda sc: sc.rank)
    return RankedExample(
        document_id=document_id,
        document=encode(document, encoder),
        reference=encode(reference, encoder),
        candidates=np.stack([encode(sc.candidate.text, encoder) for sc in ranked]),
        lase=np.array([sc.lase.value for sc in ranked]),
    )


def _unit_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / norms, norms


def _cosine_grads(a, b):
    """cos(a_i, b) for each row a_i, and the gradients w.r.t. a_i and b."""
    ua, na = _unit_rows(a)
    ub, nb = _unit_rows(b[None, :])
    cos = ua @ ub[0]
    grad_a = (ub - cos[:, None] * ua) / na
    grad_b = (ua - cos[:, None] * ub) / nb
    return cos, grad_a, grad_b


class LinearScorer:
    """Scores candidates with the tri-similarity of linearly projected embeddings.

    Summaries (candidates and reference) go through ``Wsum`` and the source
    document through ``Wdoc``; every projection is L2-normalised, so the
    training score of candidate ``c`` is
    ``tri_similarity(Wsum c, Wsum r, Wdoc s) = (cos(Wsum c, Wdoc s) + cos(Wsum r, Wdoc s)) / 2``.
    The reference term is shared by all candidates of a document, hence
    ranking without a reference uses ``cos(Wsum c, Wdoc s)`` and gives the
    same order. Both projections start at the identity (plus optional noise),
    i.e. at the frozen encoder's own cosine geometry.
    """

    def __init__(self, dim: int, seed: int = 0, init_noise: float = 0.0):
        rng = np.random.default_rng(seed)
        self.params = {
            "Wsum": np.eye(dim) + init_noise * rng.standard_normal((dim, dim)),
            "Wdoc": np.eye(dim) + init_noise * rng.standard_normal((dim, dim)),
        }

    def _doc(self, example):
        return self.params["Wdoc"] @ example.document

    def score(self, example: RankedExample) -> np.ndarray:
        Wsum, d = self.params["Wsum"], self._doc(example)
        cos_c, _, _ = _cosine_grads(example.candidates @ Wsum.T, d)
        cos_r, _, _ = _cosine_grads((Wsum @ example.reference)[None, :], d)
        return 0.5 * (cos_c + cos_r[0])

    def rank_scores(self, example: RankedExample) -> np.ndarray:
        cos_c, _, _ = _cosine_grads(example.candidates @ self.params["Wsum"].T, self._doc(example))
        return cos_c

    def backward(self, example: RankedExample, upstream: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients of ``upstream . score(example)``."""
        Wsum, s = self.params["Wsum"], example.document
        d = self._doc(example)
        _, ga, gb = _cosine_grads(example.candidates @ Wsum.T, d)
        _, gra, grb = _cosine_grads((Wsum @ example.reference)[None, :], d)
        w = 0.5 * np.asarray(upstream, dtype=float)
        total = w.sum()
        d_sum = (ga * w[:, None]).T @ example.candidates + total * np.outer(gra[0], example.reference)
        d_doc = np.outer((gb * w[:, None]).sum(axis=0) + total * grb[0], s)
        return {"Wsum": d_sum, "Wdoc": d_doc}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.params = {k: np.array(v, dtype=float) for k, v in state.items()}

    def save(self, path: str | os.PathLike) -> None:
        try:
            save_arrays(path, self.params)
        except OSError as exc:
            raise CheckpointIOError(str(exc)) from exc

    def load(self, path: str | os.PathLike) -> None:
        try:
            with np.load(path) as data:
                self.load_state_dict({k: data[k] for k in data.files})
        except (OSError, ValueError) as exc:
            raise CheckpointIOError(str(exc)) from exc


class Adam:
    """Adam with bias-corrected first and second moment estimates."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            params[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def batch_loss_and_grad(scorer: LinearScorer, examples: Sequence[RankedExample],
                        loss: LossConfig) -> tuple[float, dict[str, np.ndarray]]:
    """Mean per-document pair-sum loss and its parameter gradient."""
    total = 0.0
    grads = {k: np.zeros_like(v) for k, v in scorer.params.items()}
    for ex in examples:
        batch = ContrastivePairBatch(scorer.score(ex), build_pairs(len(ex.lase), loss))
        total += ranking_loss(batch)
        for k, g in scorer.backward(ex, loss_subgradient(batch)).items():
            grads[k] += g
    n = max(1, len(examples))
    return total / n, {k: g / n for k, g in grads.items()}


def validate(scorer: LinearScorer, val_set: Iterable[RankedExample]) -> float:
    """Mean LaSE of the candidate the scorer puts first in each document."""
    picks = []
    for ex in val_set:
        scores = scorer.rank_scores(ex)
        picks.append(ex.lase[int(np.argmax(scores))])
    if not picks:
        raise EmptyValidationSet("validation set is empty")
    return float(np.mean(picks))


@dataclass
class TrainHistory:
    steps: list[tuple[int, float]] = field(default_factory=list)
    validations: list[tuple[int, float, str]] = field(default_factory=list)
    best_checkpoint: str | None = None
    snapshots: dict[str, dict[str, np.ndarray]] = field(default_factory=dict, repr=False, compare=False)

    def to_json(self) -> dict:
        return {
            "steps": [[s, loss] for s, loss in self.steps],
            "validations": [[s, v, ckpt] for s, v, ckpt in self.validations],
            "best_checkpoint": self.best_checkpoint,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainHistory":
        return cls(
            steps=[(int(s), float(v)) for s, v in obj["steps"]],
            validations=[(int(s), float(v), str(c)) for s, v, c in obj["validations"]],
            best_checkpoint=obj.get("best_checkpoint"),
        )


def select_best_checkpoint(history: TrainHistory) -> str:
    """Checkpoint with the highest mean validation LaSE; the earliest wins ties."""
    if not history.validations:
        raise NoValidations("history has no validation entries")
    best = history.validations[0]
    for entry in history.validations[1:]:
        if entry[1] > best[1]:
            best = entry
    return best[2]


def checkpoint_name(step: int) -> str:
    return f"step-{step:06d}"


def _write_json(path: Path, obj) -> None:
    try:
        path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    except OSError as exc:
        raise CheckpointIOError(str(exc)) from exc


def train(
    scorer: LinearScorer,
    train_candidates: Sequence[RankedExample],
    val_set: Sequence[RankedExample],
    config: TrainConfig,
    run_dir: str | os.PathLike | None = None,
) -> TrainHistory:
    """Run the training loop and return its history.

    Runs ``epochs * ceil(N / batch_size)`` steps (capped by ``max_steps``),
    validating every ``validate_every_steps`` steps and after the last one.
    When ``run_dir`` is given, each validation writes
    ``checkpoints/<name>.npz`` there along with ``config.json`` and
    ``history.json``. The scorer is left at its final parameters.
    """
    train_candidates = list(train_candidates)
    if not train_candidates:
        raise ValueError("no training examples")
    val_set = list(val_set)
    run_path = Path(run_dir) if run_dir is not None else None
    if run_path is not None:
        try:
            (run_path / "checkpoints").mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise CheckpointIOError(str(exc)) from exc
        _write_json(run_path / "config.json", config.to_json())

    rng = np.random.default_rng(config.seed)
    optimizer = Adam(config.beta1, config.beta2, config.eps)
    history = TrainHistory()
    total = config.total_steps(len(train_candidates))
    per_epoch = math.ceil(len(train_candidates) / config.batch_size)

    def run_validation(step: int) -> None:
        name = checkpoint_name(step)
        value = validate(scorer, val_set)
        history.validations.append((step, value, name))
        history.snapshots[name] = scorer.state_dict()
        if run_path is not None:
            scorer.save(run_path / "checkpoints" / f"{name}.npz")
        logger.info("step %d: validation LaSE %.4f", step, value)

    step = 0
    while step < total:
        order = rng.permutation(len(train_candidates))
        for b in range(per_epoch):
            if step >= total:
                break
            step += 1
            batch = [train_candidates[i] for i in order[b * config.batch_size:(b + 1) * config.batch_size]]
            loss, grads = batch_loss_and_grad(scorer, batch, config.loss)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NonFiniteLoss(step, [ex.document_id for ex in batch])
            optimizer.step(scorer.params, grads, learning_rate_at(step, total, config))
            history.steps.append((step, loss))
            if val_set and step % config.validate_every_steps == 0:
                run_validation(step)
    if val_set and (not history.validations or history.validations[-1][0] != step):
        run_validation(step)
    if history.validations:
        history.best_checkpoint = select_best_checkpoint(history)
    if run_path is not None:
        _write_json(run_path / "history.json", history.to_json())
    return history
