"""Desk-scale end-to-end experiment: BM25 vs untrained vs trained tied encoder."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Tuple

from genrank.bm25 import DEFAULT, Bm25Params, bm25_search, build_bm25, mine_negatives
from genrank.corpus_io import Qrels, Query, RunFile
from genrank.dense_index import flat_search
from genrank.encoder import EncoderParams, encode_documents, encode_text
from genrank.evaluation import mrr_at_k
from genrank.synthetic import SyntheticConfig, SyntheticTask, make_task
from genrank.trainer import BatchSampler, TrainConfig, TrainResult, initial_params, mean_batch_loss, train

# Unit-norm embeddings with a sharp softmax; calibration notes live with the
# experiment scripts.
DESK_TRAIN = TrainConfig(
    steps=2000,
    batch_size=32,
    negatives_per_query=4,
    normalize=True,
    temperature=0.1,
)


@dataclass(frozen=True)
class DeskConfig:
    task: SyntheticConfig = field(default_factory=SyntheticConfig)
    train: TrainConfig = DESK_TRAIN
    bm25: Bm25Params = DEFAULT
    mine_top_k: int = 20
    mine_per_query: int = 20
    eval_k: int = 10
    loss_batches: int = 20
    loss_seed: int = 123


@dataclass
class DeskResult:
    bm25_mrr: float
    untrained_mrr: float
    trained_mrr: float
    initial_loss: float
    final_loss: float
    train_seconds: float
    result: TrainResult

    def lines(self) -> List[str]:
        return [
            f"bm25_mrr\t{self.bm25_mrr:.4f}",
            f"untrained_mrr\t{self.untrained_mrr:.4f}",
            f"trained_mrr\t{self.trained_mrr:.4f}",
            f"initial_loss\t{self.initial_loss:.4f}",
            f"final_loss\t{self.final_loss:.4f}",
            f"train_seconds\t{self.train_seconds:.1f}",
        ]


Ranker = Callable[[Query], Iterable[Tuple[str, float]]]


def heldout_mrr(rank: Ranker, queries: List[Query], qrels: Qrels, k: int) -> float:
    ranked = []
    for q in queries:
        hits = list(rank(q))
        ranked.append((q.query_id, [d for d, _ in hits], [s for _, s in hits]))
    return mrr_at_k(RunFile.from_ranked(ranked, "desk"), qrels, k).mean


def dense_ranker(params: EncoderParams, task: SyntheticTask, k: int) -> Ranker:
    W = encode_documents(params, [d.doc_id for d in task.corpus], [d.full_text for d in task.corpus])
    return lambda q: flat_search(encode_text(params, q.text), W, k)


def run_desk_experiment(cfg: DeskConfig = DeskConfig()) -> DeskResult:
    task = make_task(cfg.task)
    index = build_bm25(task.corpus, cfg.bm25)
    k = cfg.eval_k
    held = (task.heldout_queries, task.heldout_qrels, k)

    bm25 = heldout_mrr(lambda q: bm25_search(index, q.text, k), *held)
    negatives = mine_negatives(index, task.train_queries, task.train_qrels, cfg.mine_top_k, cfg.mine_per_query)
    start = initial_params(cfg.train)
    untrained = heldout_mrr(dense_ranker(start, task, k), *held)

    t0 = time.perf_counter()
    result = train(task.corpus, task.train_queries, task.train_pairs, cfg.train, negatives=negatives)
    seconds = time.perf_counter() - t0

    sampler = BatchSampler(task.corpus, task.train_queries, task.train_pairs, cfg.train, negatives)
    loss0 = mean_batch_loss(start, sampler, cfg.loss_batches, cfg.loss_seed)
    loss1 = mean_batch_loss(result.params, sampler, cfg.loss_batches, cfg.loss_seed)
    trained = heldout_mrr(dense_ranker(result.params, task, k), *held)
    return DeskResult(bm25, untrained, trained, loss0, loss1, seconds, result)
