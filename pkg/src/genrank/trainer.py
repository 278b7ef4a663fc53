"""Training objectives and a deterministic SGD loop.

Three modes:

* ``tied-contrastive``: document vectors are the encoder's output on document
  text; InfoNCE over in-batch positives plus mined BM25 negatives.
* ``tied-marginmse``: same towers, regressing student margins
  ``q·d+ - q·d-`` onto teacher margins.
* ``free-dsi``: one free embedding row per document identifier, trained with
  softmax cross-entropy over the whole identifier vocabulary; a fraction of
  each batch are indexing samples (document text -> own identifier).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from genrank.corpus_io import Document, EmbeddingMatrix, PathLike, Query
from genrank.dense_index import inner
from genrank.encoder import (
    DEFAULT_DIM,
    DEFAULT_FEATURE_DIM,
    EncoderParams,
    FeatureVector,
    encode,
    feature_matrix,
    featurize,
    init_params,
)

logger = logging.getLogger(__name__)


class Mode(str, Enum):
    TIED_CONTRASTIVE = "tied-contrastive"
    TIED_MARGINMSE = "tied-marginmse"
    FREE_DSI = "free-dsi"


@dataclass
class TrainConfig:
    mode: Mode = Mode.TIED_CONTRASTIVE
    learning_rate: float = 0.1
    steps: int = 2000
    batch_size: int = 32
    negatives_per_query: int = 0
    temperature: float = 1.0
    multitask_ratio: float = 0.5
    seed: int = 42
    feature_dim: int = DEFAULT_FEATURE_DIM
    dim: int = DEFAULT_DIM
    normalize: bool = False
    init_scale: float = 0.1

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.steps < 0 or self.batch_size < 1 or self.negatives_per_query < 0:
            raise ValueError("need steps >= 0, batch_size >= 1, negatives_per_query >= 0")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if not 0 <= self.multitask_ratio <= 1:
            raise ValueError("multitask_ratio must be in [0, 1]")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.feature_dim < 1 or self.dim < 1 or not self.init_scale >= 0:
            raise ValueError("feature_dim and dim must be >= 1, init_scale >= 0")


@dataclass
class TrainBatch:
    """One minibatch.

    ``inputs[i]`` is the query-side text features (in free-dsi indexing samples
    this is document text). ``positives``/``negatives`` index into
    ``doc_features``.
    """

    inputs: List[FeatureVector]
    positives: List[int]
    negatives: List[List[int]]
    doc_features: Sequence[FeatureVector]
    teacher_margins: Optional[List[List[float]]] = None

    def __post_init__(self):
        if not (len(self.inputs) == len(self.positives) == len(self.negatives)):
            raise ValueError("inputs, positives and negatives must align")
        for pos, negs in zip(self.positives, self.negatives):
            if pos in negs:
                raise ValueError(f"positive {pos} appears in its own negative list")
        if self.teacher_margins is not None:
            if [len(t) for t in self.teacher_margins] != [len(n) for n in self.negatives]:
                raise ValueError("teacher margins must align with negatives")


@dataclass
class FreeEmbeddingTable:
    ids: Tuple[str, ...]
    weight: np.ndarray  # (N, d)

    def __post_init__(self):
        self.ids = tuple(self.ids)
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.weight.shape[0] != len(self.ids):
            raise ValueError("table rows must match ids")
        self._position = {d: i for i, d in enumerate(self.ids)}

    def row(self, doc_id: str) -> np.ndarray:
        try:
            return self.weight[self._position[doc_id]]
        except KeyError:
            raise MissingIdentifierError(doc_id) from None

    def as_matrix(self) -> EmbeddingMatrix:
        return EmbeddingMatrix(self.ids, self.weight.astype(np.float32), self.weight.shape[1])

    def copy(self) -> "FreeEmbeddingTable":
        return FreeEmbeddingTable(self.ids, self.weight.copy())


class MissingIdentifierError(KeyError):
    """A free-embedding model was asked about a document it has no identifier row for."""

    def __init__(self, doc_id: str):
        super().__init__(doc_id)
        self.doc_id = doc_id

    def __str__(self):
        return f"no identifier embedding for document {self.doc_id!r}; free-dsi cannot represent unseen documents"


@dataclass
class Gradients:
    weight: np.ndarray
    bias: np.ndarray
    table: Optional[np.ndarray] = None


# -- losses -------------------------------------------------------------------


def _log_softmax_terms(logits: np.ndarray) -> Tuple[float, np.ndarray, float]:
    m = logits.max()
    e = np.exp(logits - m)
    z = e.sum()
    return m, e / z, float(np.log(z))


def infonce_loss(q, positive, negatives, temperature: float):
    """-log softmax of the positive among {positive} ∪ negatives at temperature τ.

    Returns ``(loss, dq, dpositive, dnegatives)``.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(positive, dtype=np.float64)
    negs = np.asarray(negatives, dtype=np.float64).reshape(-1, q.shape[0])
    if p.shape != q.shape:
        raise ValueError("query and positive differ in dimension")
    if len(negs) == 0:
        return 0.0, np.zeros_like(q), np.zeros_like(p), np.zeros_like(negs)
    docs = np.vstack([p[None, :], negs])
    logits = inner(docs, q) / temperature
    m, probs, log_z = _log_softmax_terms(logits)
    loss = (m - logits[0]) + log_z
    dlogits = probs.copy()
    dlogits[0] -= 1.0
    dlogits /= temperature
    dq = dlogits @ docs
    ddocs = np.outer(dlogits, q)
    return max(float(loss), 0.0), dq, ddocs[0], ddocs[1:]


def margin_mse_loss(student_margins, teacher_margins):
    """Mean squared error between margins; returns ``(loss, d loss / d student)``."""
    s = np.asarray(student_margins, dtype=np.float64)
    t = np.asarray(teacher_margins, dtype=np.float64)
    if s.shape != t.shape:
        raise ValueError(f"length mismatch: {s.shape} vs {t.shape}")
    if s.size == 0:
        raise ValueError("margin lists must be non-empty")
    diff = s - t
    return float(np.mean(diff * diff)), 2.0 * diff / s.size


def dsi_ce_loss(h, table: np.ndarray, target_index: int):
    """Softmax cross-entropy over all identifier rows; returns ``(loss, dh, dtable)``."""
    table = np.asarray(table, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    n = table.shape[0]
    if not 0 <= target_index < n:
        raise ValueError(f"target index {target_index} out of range for {n} identifiers")
    logits = inner(table, h)
    m, probs, log_z = _log_softmax_terms(logits)
    loss = (m - logits[target_index]) + log_z
    dlogits = probs
    dlogits[target_index] -= 1.0
    return max(float(loss), 0.0), dlogits @ table, np.outer(dlogits, h)


# -- batched forward/backward through the encoder -----------------------------


def _forward(params: EncoderParams, features: Sequence[FeatureVector]):
    x = feature_matrix(features, params.num_features)
    u = x @ params.weight + params.bias
    if not params.normalize:
        return x, u, u, None
    norms = np.linalg.norm(u, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return x, u, u / safe[:, None], norms


def _backward(params: EncoderParams, x, out, norms, g_out):
    """Gradient of the encoder params given the gradient w.r.t. encoder outputs."""
    if params.normalize:
        dot = np.einsum("nd,nd->n", out, g_out)
        g_u = np.where((norms > 0)[:, None], (g_out - out * dot[:, None]) / np.where(norms > 0, norms, 1.0)[:, None], g_out)
    else:
        g_u = g_out
    return x.T @ g_u, g_u.sum(axis=0)


def _check_mode(batch: TrainBatch, config: TrainConfig, table) -> None:
    has_margins = batch.teacher_margins is not None
    if has_margins != (config.mode is Mode.TIED_MARGINMSE):
        raise ValueError(f"teacher margins must be present exactly in tied-marginmse mode (mode={config.mode.value})")
    if (table is not None) != (config.mode is Mode.FREE_DSI):
        raise ValueError(f"an identifier table is required exactly in free-dsi mode (mode={config.mode.value})")
    if config.mode is Mode.FREE_DSI and any(batch.negatives):
        raise ValueError("free-dsi batches carry no explicit negatives")


def compute_gradients(
    params: EncoderParams,
    batch: TrainBatch,
    config: TrainConfig,
    table: Optional[FreeEmbeddingTable] = None,
) -> Tuple[float, Gradients]:
    """Mean batch loss and its exact gradient w.r.t. every trainable array."""
    _check_mode(batch, config, table)
    n = len(batch.inputs)
    if n == 0:
        raise ValueError("empty batch")
    xq, _, qv, qnorm = _forward(params, batch.inputs)
    g_q = np.zeros_like(qv)

    if config.mode is Mode.FREE_DSI:
        g_table = np.zeros_like(table.weight)
        total = 0.0
        for i, target in enumerate(batch.positives):
            loss, dh, dt = dsi_ce_loss(qv[i], table.weight, target)
            total += loss
            g_q[i] = dh / n
            g_table += dt / n
        gw, gb = _backward(params, xq, qv, qnorm, g_q)
        return total / n, Gradients(gw, gb, g_table)

    doc_ids = sorted({d for d in batch.positives} | {d for negs in batch.negatives for d in negs})
    slot = {d: j for j, d in enumerate(doc_ids)}
    xd, _, dv, dnorm = _forward(params, [batch.doc_features[d] for d in doc_ids])
    g_d = np.zeros_like(dv)

    if config.mode is Mode.TIED_CONTRASTIVE:
        total = 0.0
        for i, (pos, negs) in enumerate(zip(batch.positives, batch.negatives)):
            neg_rows = dv[[slot[d] for d in negs]] if negs else np.zeros((0, dv.shape[1]))
            loss, dq, dp, dn = infonce_loss(qv[i], dv[slot[pos]], neg_rows, config.temperature)
            total += loss
            g_q[i] += dq / n
            g_d[slot[pos]] += dp / n
            for d, g in zip(negs, dn):
                g_d[slot[d]] += g / n
        loss_value = total / n
    else:
        student, teacher, where = [], [], []
        for i, (pos, negs) in enumerate(zip(batch.positives, batch.negatives)):
            p = dv[slot[pos]]
            for d, t in zip(negs, batch.teacher_margins[i]):
                student.append(float(qv[i] @ p - qv[i] @ dv[slot[d]]))
                teacher.append(t)
                where.append((i, slot[pos], slot[d]))
        if not student:
            loss_value = 0.0
        else:
            loss_value, dm = margin_mse_loss(student, teacher)
            for g, (i, ps, ns) in zip(dm, where):
                g_q[i] += g * (dv[ps] - dv[ns])
                g_d[ps] += g * qv[i]
                g_d[ns] -= g * qv[i]

    gw_q, gb_q = _backward(params, xq, qv, qnorm, g_q)
    gw_d, gb_d = _backward(params, xd, dv, dnorm, g_d)
    return loss_value, Gradients(gw_q + gw_d, gb_q + gb_d)


# -- training loop ------------------------------------------------------------


@dataclass
class TrainResult:
    params: EncoderParams
    table: Optional[FreeEmbeddingTable]
    losses: List[float] = field(default_factory=list)

    def write_loss_log(self, path: PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for step, loss in enumerate(self.losses):
                f.write(f"{step}\t{loss!r}\n")


class BatchSampler:
    """Deterministic batch construction shared by training and loss evaluation."""

    def __init__(
        self,
        corpus: Sequence[Document],
        queries: Sequence[Query],
        pairs: Sequence[Tuple[str, str]],
        config: TrainConfig,
        negatives: Optional[Mapping[str, Sequence[str]]] = None,
        teacher_margins: Optional[Mapping[str, Mapping[str, float]]] = None,
    ):
        self.config = config
        doc_pos = {d.doc_id: i for i, d in enumerate(corpus)}
        query_text = {q.query_id: q.text for q in queries}
        for qid, did in pairs:
            if qid not in query_text:
                raise ValueError(f"pair references unknown query {qid!r}")
            if did not in doc_pos:
                raise ValueError(f"pair references unknown document {did!r}")
        if config.mode is Mode.TIED_MARGINMSE and teacher_margins is None:
            raise ValueError("tied-marginmse needs teacher margins")
        if not pairs:
            raise ValueError("no training pairs")
        self.pairs = [(qid, doc_pos[did]) for qid, did in pairs]
        self.doc_features = [featurize(d.full_text, config.feature_dim) for d in corpus]
        self.query_features = {
            qid: featurize(query_text[qid], config.feature_dim) for qid in sorted({q for q, _ in pairs})
        }
        self.positives: Dict[str, set] = {}
        for qid, d in self.pairs:
            self.positives.setdefault(qid, set()).add(d)
        self.negatives: Dict[str, List[int]] = {}
        for qid, docs in (negatives or {}).items():
            if qid not in self.positives:
                continue
            ords = []
            for did in docs:
                if did not in doc_pos:
                    raise ValueError(f"negatives for {qid!r} reference unknown document {did!r}")
                if doc_pos[did] not in self.positives[qid]:
                    ords.append(doc_pos[did])
            self.negatives[qid] = ords
        self.teacher: Dict[str, Dict[int, float]] = {}
        for qid, margins in (teacher_margins or {}).items():
            self.teacher[qid] = {doc_pos[d]: float(m) for d, m in margins.items() if d in doc_pos}
        if config.negatives_per_query > 0 and config.mode is not Mode.FREE_DSI:
            if not any(self.negatives.get(q) for q in self.positives):
                raise ValueError("negatives_per_query > 0 but no negatives were supplied")

    def _pick(self, rng: np.random.Generator, pool: List[int], n: int) -> List[int]:
        if n <= 0 or not pool:
            return []
        if len(pool) <= n:
            return list(pool)
        return [pool[i] for i in sorted(rng.choice(len(pool), size=n, replace=False).tolist())]

    def sample(self, rng: np.random.Generator) -> TrainBatch:
        cfg = self.config
        size = min(cfg.batch_size, len(self.pairs))
        chosen = [self.pairs[i] for i in rng.choice(len(self.pairs), size=size, replace=False).tolist()]
        if cfg.mode is Mode.FREE_DSI:
            inputs, targets = [], []
            n_docs = len(self.doc_features)
            for qid, pos in chosen:
                if rng.random() < cfg.multitask_ratio:
                    d = int(rng.integers(n_docs))
                    inputs.append(self.doc_features[d])
                    targets.append(d)
                else:
                    inputs.append(self.query_features[qid])
                    targets.append(pos)
            return TrainBatch(inputs, targets, [[] for _ in targets], self.doc_features)

        inputs, positives, negatives, margins = [], [], [], []
        for qid, pos in chosen:
            own = self.positives[qid]
            if cfg.mode is Mode.TIED_CONTRASTIVE:
                negs = [p for _, p in chosen if p not in own]
                negs += self._pick(rng, self.negatives.get(qid, []), cfg.negatives_per_query)
                negs = list(dict.fromkeys(negs))
            else:
                pool = [d for d in self.negatives.get(qid, []) if d in self.teacher.get(qid, {})]
                if not pool:
                    pool = [d for d in sorted(self.teacher.get(qid, {})) if d not in own]
                negs = self._pick(rng, pool, max(cfg.negatives_per_query, 1))
                margins.append([self.teacher[qid][d] for d in negs])
            inputs.append(self.query_features[qid])
            positives.append(pos)
            negatives.append(negs)
        return TrainBatch(
            inputs,
            positives,
            negatives,
            self.doc_features,
            margins if cfg.mode is Mode.TIED_MARGINMSE else None,
        )


def init_table(ids: Sequence[str], dim: int, rng: np.random.Generator) -> FreeEmbeddingTable:
    return FreeEmbeddingTable(tuple(ids), rng.uniform(-0.05, 0.05, size=(len(ids), dim)))


def train(
    corpus: Sequence[Document],
    queries: Sequence[Query],
    pairs: Sequence[Tuple[str, str]],
    config: TrainConfig,
    negatives: Optional[Mapping[str, Sequence[str]]] = None,
    teacher_margins: Optional[Mapping[str, Mapping[str, float]]] = None,
    init: Optional[EncoderParams] = None,
) -> TrainResult:
    """Run exactly ``config.steps`` plain SGD steps at a fixed learning rate."""
    sampler = BatchSampler(corpus, queries, pairs, config, negatives, teacher_margins)
    rng = np.random.default_rng(config.seed)
    params = init.copy() if init is not None else initial_params(config)
    table = init_table([d.doc_id for d in corpus], config.dim, rng) if config.mode is Mode.FREE_DSI else None
    losses = []
    for step in range(config.steps):
        batch = sampler.sample(rng)
        loss, grads = compute_gradients(params, batch, config, table)
        losses.append(loss)
        params.weight -= config.learning_rate * grads.weight
        params.bias -= config.learning_rate * grads.bias
        if table is not None:
            table.weight -= config.learning_rate * grads.table
        if not np.isfinite(loss):
            raise FloatingPointError(f"loss diverged at step {step}")
        if step % 500 == 0:
            logger.info("step %d loss %.4f", step, loss)
    return TrainResult(params, table, losses)


def initial_params(config: TrainConfig) -> EncoderParams:
    return init_params(config.feature_dim, config.dim, config.seed, config.init_scale, config.normalize)


def mean_batch_loss(
    params: EncoderParams,
    sampler: BatchSampler,
    num_batches: int,
    seed: int,
    table: Optional[FreeEmbeddingTable] = None,
) -> float:
    """Average loss over a fixed, seeded set of batches (no parameter updates)."""
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(num_batches):
        loss, _ = compute_gradients(params, sampler.sample(rng), sampler.config, table)
        total += loss
    return total / num_batches


def free_dsi_scores(params: EncoderParams, table: FreeEmbeddingTable, query_text: str, doc_ids: Sequence[str]) -> np.ndarray:
    """Score documents by their identifier rows; unknown ids raise :class:`MissingIdentifierError`."""
    h = encode(params, featurize(query_text, params.num_features))
    rows = np.stack([table.row(d) for d in doc_ids])
    return inner(rows, h)
