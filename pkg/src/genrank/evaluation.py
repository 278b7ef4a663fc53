"""Recall@k and MRR@k over TREC-style runs and qrels."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List

from genrank.corpus_io import Qrels, RunFile


@dataclass(frozen=True)
class MetricReport:
    metric: str
    k: int
    per_query: Dict[str, float]

    @property
    def num_queries(self) -> int:
        return len(self.per_query)

    @property
    def mean(self) -> float:
        if not self.per_query:
            return 0.0
        # sorted keys so the mean does not depend on query processing order
        return math.fsum(self.per_query[q] for q in sorted(self.per_query)) / len(self.per_query)

    def line(self) -> str:
        return f"{self.metric}\t{self.k}\t{self.mean:.6f}\t{self.num_queries}"


def _relevant(qrels: Qrels) -> Dict[str, set]:
    out = {}
    for qid, judged in qrels.items():
        rel = {d for d, g in judged.items() if g > 0}
        if rel:
            out[qid] = rel
    return out


def _ranked_ids(run: RunFile, qid: str) -> List[str]:
    entries = sorted(run.rankings.get(qid, []), key=lambda e: e[1])
    return [d for d, _, _ in entries]


def recall_at_k(run: RunFile, qrels: Qrels, k: int) -> MetricReport:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    per_query = {}
    for qid, rel in _relevant(qrels).items():
        top = set(_ranked_ids(run, qid)[:k])
        per_query[qid] = len(rel & top) / len(rel)
    return MetricReport("recall", k, per_query)


def mrr_at_k(run: RunFile, qrels: Qrels, k: int) -> MetricReport:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    per_query = {}
    for qid, rel in _relevant(qrels).items():
        rr = 0.0
        for rank, doc_id in enumerate(_ranked_ids(run, qid)[:k], start=1):
            if doc_id in rel:
                rr = 1.0 / rank
                break
        per_query[qid] = rr
    return MetricReport("mrr", k, per_query)


METRICS = {"recall": recall_at_k, "mrr": mrr_at_k}
