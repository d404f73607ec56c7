"""Alignment-based feedback scoring, its training loop, and MRR evaluation.

The trainable component is a single linear projection applied to frozen
provider embeddings before cosine similarity. The training loss is a hinge
over positive/negative candidate scores plus an L1 sparsity term on the
alignment matrices and a masked squared penalty toward prior alignments;
gradients are computed analytically and checked against finite differences
in the test suite.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from sqlfeedback.embeddings import EmbeddingMatrix, tokenize
from sqlfeedback.schema import DatabaseSchema
from sqlfeedback.verbalize import (
    NegativeSamplingUnavailable,
    TemplateFeedback,
    match_schema_mentions,
    sample_negative,
)

_TIE_TOLERANCE = 1e-12


class DegenerateEmbeddingError(ValueError):
    """A projected token vector with zero norm cannot be cosine-scored."""

    def __init__(self, token: str):
        super().__init__(f"projected embedding of token '{token}' has zero norm")
        self.token = token


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, example_id: str):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}, "
                         f"example {example_id}")
        self.epoch = epoch
        self.batch = batch
        self.example_id = example_id


@dataclass(frozen=True)
class EvalHyperparams:
    margin: float = 0.1
    lambda_sparsity: float = 1e-3
    gamma_prior: float = 1e-3
    w_primary: float = 0.9
    w_secondary: float = 0.1
    learning_rate: float = 1e-2
    batch_size: int = 64
    epochs: int = 200
    negatives_per_positive: int = 50

    def __post_init__(self):
        if abs(self.w_primary + self.w_secondary - 1.0) > 1e-9:
            raise ValueError("span weights must sum to 1")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.negatives_per_positive < 1:
            raise ValueError("need at least one negative per positive")


@dataclass
class ScorerModel:
    """A linear projection over provider embeddings."""

    projection: np.ndarray  # (dim_in, dim_out)
    provider_id: str
    trained_epochs: int = 0

    def __post_init__(self):
        self.projection = np.asarray(self.projection, dtype=np.float64)
        if not np.isfinite(self.projection).all():
            raise ValueError("projection must be finite")

    @classmethod
    def identity(cls, dim: int, provider_id: str) -> "ScorerModel":
        return cls(np.eye(dim), provider_id)

    def save(self, path: str | Path) -> None:
        payload = {
            "dim_in": int(self.projection.shape[0]),
            "dim_out": int(self.projection.shape[1]),
            "projection": self.projection.tolist(),
            "provider": self.provider_id,
            "trained_epochs": self.trained_epochs,
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ScorerModel":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        projection = np.asarray(payload["projection"], dtype=np.float64)
        if projection.shape != (payload["dim_in"], payload["dim_out"]):
            raise ValueError("projection shape does not match header")
        return cls(projection, payload["provider"],
                   payload.get("trained_epochs", 0))


@dataclass(frozen=True)
class AlignmentMatrix:
    """Token similarity matrix: rows = reference tokens, columns = candidate
    tokens; entries are cosines in [-1, 1]."""

    entries: np.ndarray
    ref_tokens: tuple[str, ...]
    cand_tokens: tuple[str, ...]

    def __post_init__(self):
        n, m = self.entries.shape
        if n != len(self.ref_tokens) or m != len(self.cand_tokens):
            raise ValueError("matrix shape must match token counts")


@dataclass(frozen=True)
class PriorAlignment:
    prior: np.ndarray  # (N, M) in {0, 1}
    mask: np.ndarray   # (N, M) in {0, 1}

    def __post_init__(self):
        if self.prior.shape != self.mask.shape:
            raise ValueError("prior and mask must share a shape")
        if ((self.prior > 0) & (self.mask == 0)).any():
            raise ValueError("prior support must lie inside the mask")


@dataclass(frozen=True)
class ScoreBreakdown:
    s_prec: float
    s_recall: float
    s: float
    weighted: bool = False
    z_m: float = 0.0
    z_n: float = 0.0
    cnt_primary: int = 0
    cnt_secondary: int = 0


def _normalize_rows(matrix: np.ndarray, tokens: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(matrix, axis=1)
    for token, norm in zip(tokens, norms):
        if norm <= 1e-300:
            raise DegenerateEmbeddingError(token)
    return matrix / norms[:, None], norms


def _cosine_from_units(ref_unit: np.ndarray, cand_unit: np.ndarray) -> np.ndarray:
    # 1 - ||u - v||^2 / 2 equals the cosine for unit vectors and is exactly
    # 1.0 for bit-identical rows, which the self-scoring invariant requires
    diff = ref_unit[:, None, :] - cand_unit[None, :, :]
    return 1.0 - 0.5 * np.einsum("nmd,nmd->nm", diff, diff)


def similarity_matrix(ref: EmbeddingMatrix, cand: EmbeddingMatrix,
                      model: ScorerModel) -> AlignmentMatrix:
    """Pairwise cosine similarities of the projected token embeddings."""
    ref_proj = ref.vectors @ model.projection
    cand_proj = cand.vectors @ model.projection
    ref_unit, _ = _normalize_rows(ref_proj, ref.tokens)
    cand_unit, _ = _normalize_rows(cand_proj, cand.tokens)
    entries = np.clip(_cosine_from_units(ref_unit, cand_unit), -1.0, 1.0)
    return AlignmentMatrix(entries, ref.tokens, cand.tokens)


def score(matrix: AlignmentMatrix) -> ScoreBreakdown:
    """Greedy-alignment precision/recall score.

    Precision is the mean over candidate columns of the best-matching
    reference similarity; recall is symmetric over reference rows; the
    final score is their average.
    """
    entries = matrix.entries
    n, m = entries.shape
    s_prec = float(entries.max(axis=0).mean())
    s_recall = float(entries.max(axis=1).mean())
    return ScoreBreakdown(s_prec, s_recall, (s_prec + s_recall) / 2.0,
                          weighted=False, z_m=float(m), z_n=float(n))


# --------------------------------------------------------------------------
# loss and analytic gradient
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoringContext:
    """Raw embeddings for one (reference, candidate) pair, with optional
    prior-alignment supervision for the candidate."""

    ref: EmbeddingMatrix
    cand: EmbeddingMatrix
    prior: Optional[PriorAlignment] = None


@dataclass(frozen=True)
class LossResult:
    loss: float
    grad: np.ndarray
    s_pos: float
    s_neg: float
    hinge_active: bool
    tie_flag: bool


@dataclass
class _MatrixContext:
    ref_raw: np.ndarray
    cand_raw: np.ndarray
    ref_unit: np.ndarray
    cand_unit: np.ndarray
    ref_norm: np.ndarray
    cand_norm: np.ndarray
    entries: np.ndarray
    score: float
    col_argmax: np.ndarray
    row_argmax: np.ndarray
    tie: bool


def _build_matrix_context(ctx: ScoringContext, model: ScorerModel) -> _MatrixContext:
    ref_proj = ctx.ref.vectors @ model.projection
    cand_proj = ctx.cand.vectors @ model.projection
    ref_unit, ref_norm = _normalize_rows(ref_proj, ctx.ref.tokens)
    cand_unit, cand_norm = _normalize_rows(cand_proj, ctx.cand.tokens)
    entries = _cosine_from_units(ref_unit, cand_unit)
    n, m = entries.shape
    col_argmax = entries.argmax(axis=0)
    row_argmax = entries.argmax(axis=1)
    tie = False
    if n > 1:
        top2_col = np.sort(entries, axis=0)[-2:, :]
        tie = tie or bool((top2_col[1] - top2_col[0] < _TIE_TOLERANCE).any())
    if m > 1:
        top2_row = np.sort(entries, axis=1)[:, -2:]
        tie = tie or bool((top2_row[:, 1] - top2_row[:, 0] < _TIE_TOLERANCE).any())
    s_prec = float(entries.max(axis=0).mean())
    s_recall = float(entries.max(axis=1).mean())
    return _MatrixContext(ctx.ref.vectors, ctx.cand.vectors, ref_unit, cand_unit,
                          ref_norm, cand_norm, entries,
                          (s_prec + s_recall) / 2.0, col_argmax, row_argmax, tie)


def _score_grad_wrt_entries(mc: _MatrixContext) -> np.ndarray:
    """d s / d A at the active argmax branches (first index wins ties)."""
    n, m = mc.entries.shape
    grad = np.zeros((n, m))
    grad[mc.col_argmax, np.arange(m)] += 1.0 / (2.0 * m)
    grad[np.arange(n), mc.row_argmax] += 1.0 / (2.0 * n)
    return grad


def _backprop_entries(mc: _MatrixContext, grad_entries: np.ndarray,
                      model: ScorerModel) -> np.ndarray:
    """Chain rule from dL/dA through cosine and projection to dL/dW."""
    ref_unit, cand_unit = mc.ref_unit, mc.cand_unit
    entries = mc.entries
    weighted_rows = (grad_entries * entries).sum(axis=1, keepdims=True)
    d_ref_proj = (grad_entries @ cand_unit - weighted_rows * ref_unit) \
        / mc.ref_norm[:, None]
    weighted_cols = (grad_entries * entries).sum(axis=0)[:, None]
    d_cand_proj = (grad_entries.T @ ref_unit - weighted_cols * cand_unit) \
        / mc.cand_norm[:, None]
    return mc.ref_raw.T @ d_ref_proj + mc.cand_raw.T @ d_cand_proj


def loss_and_grads(pos: ScoringContext, neg: ScoringContext,
                   hp: EvalHyperparams, model: ScorerModel) -> LossResult:
    """Full training loss and its analytic gradient w.r.t. the projection.

    loss = max(0, m - s_pos + s_neg)
         + lambda * (|A_pos|_1 + |A_neg|_1)
         + gamma * sum((A - A_prior)^2 * A_mask)   (per candidate with a prior)
    """
    pos_mc = _build_matrix_context(pos, model)
    neg_mc = _build_matrix_context(neg, model)
    hinge_value = hp.margin - pos_mc.score + neg_mc.score
    hinge_active = hinge_value > 0.0
    loss = max(0.0, hinge_value)
    grad_pos = np.zeros_like(pos_mc.entries)
    grad_neg = np.zeros_like(neg_mc.entries)
    if hinge_active:
        grad_pos -= _score_grad_wrt_entries(pos_mc)
        grad_neg += _score_grad_wrt_entries(neg_mc)
    if hp.lambda_sparsity:
        loss += hp.lambda_sparsity * (np.abs(pos_mc.entries).sum()
                                      + np.abs(neg_mc.entries).sum())
        grad_pos += hp.lambda_sparsity * np.sign(pos_mc.entries)
        grad_neg += hp.lambda_sparsity * np.sign(neg_mc.entries)
    if hp.gamma_prior:
        for mc, ctx, grad in ((pos_mc, pos, grad_pos), (neg_mc, neg, grad_neg)):
            if ctx.prior is None:
                continue
            delta = (mc.entries - ctx.prior.prior) * ctx.prior.mask
            loss += hp.gamma_prior * float((delta * (mc.entries - ctx.prior.prior)).sum())
            grad += hp.gamma_prior * 2.0 * delta
    grad = _backprop_entries(pos_mc, grad_pos, model) \
        + _backprop_entries(neg_mc, grad_neg, model)
    if not np.isfinite(loss) or not np.isfinite(grad).all():
        raise ValueError("non-finite loss or gradient")
    return LossResult(float(loss), grad, pos_mc.score, neg_mc.score,
                      hinge_active, pos_mc.tie or neg_mc.tie)


# --------------------------------------------------------------------------
# prior alignment supervision
# --------------------------------------------------------------------------


def build_prior(template: TemplateFeedback, candidate_tokens: Sequence[str],
                schema: DatabaseSchema) -> PriorAlignment:
    """Schema-anchored alignment supervision between a template reference
    and a candidate, with the row/column mask around aligned pairs."""
    ref_tokens = template.tokens()
    ref_mentions = match_schema_mentions(ref_tokens, schema)
    cand_mentions = match_schema_mentions(list(candidate_tokens), schema)
    n, m = len(ref_tokens), len(candidate_tokens)
    prior = np.zeros((n, m))
    for ref_mention in ref_mentions:
        for cand_mention in cand_mentions:
            if ref_mention.schema_item != cand_mention.schema_item:
                continue
            rows = range(ref_mention.token_start, ref_mention.token_end)
            cols = range(cand_mention.token_start, cand_mention.token_end)
            for row in rows:
                for col in cols:
                    prior[row, col] = 1.0
    mask = np.zeros((n, m))
    aligned_rows = prior.any(axis=1)
    aligned_cols = prior.any(axis=0)
    mask[aligned_rows, :] = 1.0
    mask[:, aligned_cols] = 1.0
    return PriorAlignment(prior, mask)


# --------------------------------------------------------------------------
# post-processing: bipartite matching + span weighting
# --------------------------------------------------------------------------


def bipartite_assignment(entries: np.ndarray) -> list[tuple[int, int]]:
    """One-to-one assignment maximizing total similarity over min(N, M)
    pairs."""
    rows, cols = linear_sum_assignment(entries, maximize=True)
    return list(zip(rows.tolist(), cols.tolist()))


def postprocess_score(matrix: AlignmentMatrix, template: TemplateFeedback,
                      hp: EvalHyperparams) -> ScoreBreakdown:
    """Bipartite-matched, span-weighted score.

    The alignment matrix is reduced to a one-to-one assignment; precision
    weights each candidate column by the span class of its assigned
    reference token (unassigned columns contribute zero at secondary
    weight), recall weights each reference row by its own span class, and
    both are weighted means.
    """
    weights_by_class = {"primary": hp.w_primary, "secondary": hp.w_secondary}
    token_weights = [weights_by_class[w] for w in template.token_weights()]
    entries = matrix.entries
    n, m = entries.shape
    if len(token_weights) != n:
        raise ValueError(f"template spans cover {len(token_weights)} tokens, "
                         f"matrix has {n} reference rows")
    assignment = bipartite_assignment(entries)
    assigned = np.zeros_like(entries)
    for row, col in assignment:
        assigned[row, col] = entries[row, col]
    col_weight = np.full(m, hp.w_secondary)
    for row, col in assignment:
        col_weight[col] = token_weights[row]
    # per-column max over the zeroed matrix, as in the literal formula: the
    # zeros clamp negative assigned similarities whenever N > 1
    col_value = assigned.max(axis=0)
    z_m = float(col_weight.sum())
    s_prec = float((col_weight * col_value).sum() / z_m)
    row_weights = np.asarray(token_weights)
    row_value = assigned.max(axis=1)
    z_n = float(row_weights.sum())
    s_recall = float((row_weights * row_value).sum() / z_n)
    cnt_primary = sum(1 for w in template.token_weights() if w == "primary")
    return ScoreBreakdown(s_prec, s_recall, (s_prec + s_recall) / 2.0,
                          weighted=True, z_m=z_m, z_n=z_n,
                          cnt_primary=cnt_primary,
                          cnt_secondary=n - cnt_primary)


# --------------------------------------------------------------------------
# MRR
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RankingEntry:
    template: TemplateFeedback
    positive: str
    negatives: tuple[str, ...]


def candidate_score(template: TemplateFeedback, candidate: str, model: ScorerModel,
                    provider, hp: EvalHyperparams) -> float:
    ref = provider.embed(template.tokens())
    cand = provider.embed(tokenize(candidate))
    return postprocess_score(similarity_matrix(ref, cand, model), template, hp).s


def mrr(eval_set: Sequence[RankingEntry], model: ScorerModel, provider,
        hp: EvalHyperparams) -> float:
    """Mean reciprocal rank of the positive among its negatives, ranking by
    post-processed score; ties rank the positive last (pessimistic)."""
    if not eval_set:
        raise ValueError("empty evaluation set")
    total = 0.0
    for entry in eval_set:
        if not entry.negatives:
            raise ValueError("every entry needs at least one negative")
        pos_score = candidate_score(entry.template, entry.positive, model,
                                    provider, hp)
        worse_or_equal = sum(
            1 for negative in entry.negatives
            if candidate_score(entry.template, negative, model, provider, hp)
            >= pos_score)
        total += 1.0 / (1 + worse_or_equal)
    return total / len(eval_set)


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainExample:
    template: TemplateFeedback
    positive: str
    schema: DatabaseSchema
    example_id: str = ""


def train(dataset: Sequence[TrainExample], provider, hp: EvalHyperparams,
          seed: int, model: Optional[ScorerModel] = None,
          dev_eval: Optional[Callable[[ScorerModel], float]] = None,
          log_sink: Optional[Callable[[dict], None]] = None
          ) -> tuple[ScorerModel, list[dict]]:
    """Plain batch gradient descent on the hinge + sparsity + prior loss.

    Negatives are regenerated once per epoch from a per-epoch derived seed;
    the whole loop is deterministic for a given seed. Returns the trained
    model and the per-epoch log (mean loss, optional dev MRR).
    """
    if not dataset:
        raise ValueError("empty training dataset")
    if model is None:
        probe = provider.embed(dataset[0].template.tokens())
        model = ScorerModel.identity(probe.dim, getattr(provider, "provider_id", ""))
    projection = model.projection.copy()
    log: list[dict] = []
    ref_cache: dict[str, EmbeddingMatrix] = {}
    prior_cache: dict[tuple[str, str], Optional[PriorAlignment]] = {}

    def embed_ref(example: TrainExample) -> EmbeddingMatrix:
        key = example.template.text
        if key not in ref_cache:
            ref_cache[key] = provider.embed(example.template.tokens())
        return ref_cache[key]

    def positive_context(example: TrainExample, cand_tokens: list[str]
                         ) -> ScoringContext:
        key = (example.template.text, " ".join(cand_tokens))
        if key not in prior_cache:
            prior_cache[key] = build_prior(example.template, cand_tokens,
                                           example.schema)
        return ScoringContext(embed_ref(example), provider.embed(cand_tokens),
                              prior_cache[key])

    for epoch in range(hp.epochs):
        epoch_rng = random.Random(seed * 1_000_003 + epoch)
        order = list(range(len(dataset)))
        epoch_rng.shuffle(order)
        pairs: list[tuple[TrainExample, str]] = []
        for index in order:
            example = dataset[index]
            for _ in range(hp.negatives_per_positive):
                try:
                    negative = sample_negative(example.positive, example.schema,
                                               epoch_rng)
                except NegativeSamplingUnavailable:
                    break
                pairs.append((example, negative))
        epoch_losses: list[float] = []
        working = ScorerModel(projection, model.provider_id, model.trained_epochs)
        for batch_start in range(0, len(pairs), hp.batch_size):
            batch = pairs[batch_start:batch_start + hp.batch_size]
            grad_sum = np.zeros_like(projection)
            for example, negative in batch:
                pos_tokens = tokenize(example.positive)
                pos_ctx = positive_context(example, pos_tokens)
                neg_ctx = ScoringContext(embed_ref(example),
                                         provider.embed(tokenize(negative)))
                try:
                    result = loss_and_grads(pos_ctx, neg_ctx, hp, working)
                except ValueError as exc:
                    raise TrainingDiverged(epoch, batch_start // hp.batch_size,
                                           example.example_id) from exc
                grad_sum += result.grad
                epoch_losses.append(result.loss)
            projection = projection - hp.learning_rate * grad_sum / len(batch)
            working = ScorerModel(projection, model.provider_id,
                                  model.trained_epochs)
        mean_loss = float(np.mean(epoch_losses)) if epoch_losses else 0.0
        if not np.isfinite(mean_loss):
            raise TrainingDiverged(epoch, -1, "")
        entry = {"epoch": epoch, "mean_loss": mean_loss,
                 "mrr_dev": dev_eval(working) if dev_eval else None}
        log.append(entry)
        if log_sink:
            log_sink(entry)
    final = ScorerModel(projection, model.provider_id,
                        trained_epochs=model.trained_epochs + hp.epochs)
    return final, log
