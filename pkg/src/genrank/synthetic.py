"""Seeded synthetic retrieval tasks for desk-scale experiments.

Documents are random token sets: a handful of distinct content tokens drawn
uniformly from a large vocabulary plus function-word-like tokens drawn from a
small Zipf-distributed pool. A query keeps some of its document's content
tokens and adds stopword noise, so lexical overlap identifies the document but
raw (unweighted) overlap is swamped by the frequent tokens.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from genrank.corpus_io import Document, Qrels, Query


@dataclass(frozen=True)
class SyntheticConfig:
    num_docs: int = 2000
    content_vocab: int = 5000
    num_stopwords: int = 50
    zipf_exponent: float = 1.0
    doc_content: int = 8
    doc_stopwords: int = 12
    query_terms: int = 4
    query_noise: int = 3
    num_train: int = 500
    num_heldout: int = 100
    seed: int = 0


@dataclass
class SyntheticTask:
    corpus: List[Document]
    train_queries: List[Query]
    heldout_queries: List[Query]
    train_qrels: Qrels
    heldout_qrels: Qrels

    @property
    def train_pairs(self) -> List[Tuple[str, str]]:
        return [(qid, d) for qid, judged in self.train_qrels.items() for d in judged]


def make_task(cfg: SyntheticConfig = SyntheticConfig()) -> SyntheticTask:
    if cfg.num_train + cfg.num_heldout > cfg.num_docs:
        raise ValueError("more queries than documents")
    if cfg.query_terms > cfg.doc_content:
        raise ValueError("query_terms exceeds doc_content")
    rng = np.random.default_rng(cfg.seed)
    stop_p = 1.0 / np.arange(1, cfg.num_stopwords + 1) ** cfg.zipf_exponent
    stop_p /= stop_p.sum()

    corpus, content = [], []
    for i in range(cfg.num_docs):
        words = rng.choice(cfg.content_vocab, size=cfg.doc_content, replace=False)
        stops = rng.choice(cfg.num_stopwords, size=cfg.doc_stopwords, p=stop_p)
        tokens = [f"w{w}" for w in words] + [f"s{s}" for s in stops]
        content.append(words)
        corpus.append(Document(doc_id=f"d{i}", text=" ".join(rng.permutation(tokens).tolist())))

    targets = rng.permutation(cfg.num_docs)[: cfg.num_train + cfg.num_heldout]
    queries, qrels = [], {}
    for n, d in enumerate(targets.tolist()):
        kept = rng.choice(content[d], size=cfg.query_terms, replace=False)
        noise = rng.choice(cfg.num_stopwords, size=cfg.query_noise, p=stop_p)
        tokens = [f"w{w}" for w in kept] + [f"s{s}" for s in noise]
        qid = f"q{n}"
        queries.append(Query(qid, " ".join(rng.permutation(tokens).tolist())))
        qrels[qid] = {f"d{d}": 1}
    train_q, held_q = queries[: cfg.num_train], queries[cfg.num_train :]
    return SyntheticTask(
        corpus=corpus,
        train_queries=train_q,
        heldout_queries=held_q,
        train_qrels={q.query_id: qrels[q.query_id] for q in train_q},
        heldout_qrels={q.query_id: qrels[q.query_id] for q in held_q},
    )
