"""Filtered link-prediction ranking, MRR and Hits@K."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySplit
from .kg import HEAD, TAIL
from .models import batch_terms

HITS_AT = (1, 3, 10)
_CHUNK_ELEMS = 4_000_000


@dataclass
class RankResult:
    triple: tuple
    side: int
    filtered_rank: int


@dataclass
class EvalReport:
    mrr: float
    hits: dict
    n_queries: int
    ranks: np.ndarray = field(default=None, repr=False)

    def as_dict(self):
        out = {"mrr": self.mrr}
        out.update({f"hits{k}": v for k, v in self.hits.items()})
        out["n_queries"] = self.n_queries
        return out


class FilterIndex:
    """Known true heads per ``(relation, tail)`` and tails per ``(head, relation)``."""

    def __init__(self, known):
        heads, tails = defaultdict(list), defaultdict(list)
        for h, r, t in known:
            heads[(r, t)].append(h)
            tails[(h, r)].append(t)
        self.heads = {k: np.unique(v) for k, v in heads.items()}
        self.tails = {k: np.unique(v) for k, v in tails.items()}

    def true_candidates(self, triple, side):
        h, r, t = triple
        table, key = (self.heads, (r, t)) if side == HEAD else (self.tails, (h, r))
        return table.get(key, np.zeros(0, dtype=np.int64))


def tie_rank(keys, true_key, excluded):
    """``1 + #better + round_half_up(#ties / 2)`` over non-excluded candidates."""
    keep = ~excluded
    better = int(np.count_nonzero((keys < true_key) & keep))
    ties = int(np.count_nonzero((keys == true_key) & keep))
    return 1 + better + (ties + 1) // 2


def _candidate_keys(kind, state, queries, side, raw_score):
    """Yield ``(offset, keys)`` chunks of ranking keys (smaller is better)."""
    n_ent = state.entity.shape[0]
    per_chunk = max(1, _CHUNK_ELEMS // max(1, n_ent * state.dim))
    cand = np.arange(n_ent)
    for lo in range(0, len(queries), per_chunk):
        q = queries[lo:lo + per_chunk]
        rows = np.repeat(q, n_ent, axis=0)
        rows[:, 0 if side == HEAD else 2] = np.tile(cand, len(q))
        terms = batch_terms(kind, state, rows[:, 0], rows[:, 1], rows[:, 2], need_grad=False)
        key = terms.raw if raw_score else terms.d
        yield lo, key.reshape(len(q), n_ent)


def _rank_queries(kind, state, queries, side, raw_score, filt):
    queries = np.asarray(queries, dtype=np.int64).reshape(-1, 3)
    ranks = np.empty(len(queries), dtype=np.int64)
    col = 0 if side == HEAD else 2
    for lo, keys in _candidate_keys(kind, state, queries, side, raw_score):
        for i, row in enumerate(keys):
            tr = tuple(int(x) for x in queries[lo + i])
            true_ent = tr[col]
            excluded = np.zeros(len(row), dtype=bool)
            if filt is not None:
                excluded[filt.true_candidates(tr, side)] = True
            excluded[true_ent] = True  # the query itself is not a competitor
            ranks[lo + i] = tie_rank(row, row[true_ent], excluded)
    return ranks


def rank_filtered(state, kind, graph, triple, side, known=None, raw_score=False, filter_index=None) -> RankResult:
    """Filtered rank of the true entity on ``side`` among all replacements.

    Candidates forming a known true triple (other than the query) are dropped.
    ``raw_score`` ranks by the unclamped distance, i.e. the raw DistMult score.
    """
    if filter_index is None:
        filter_index = FilterIndex(graph.known if known is None else known)
    rank = _rank_queries(kind, state, [triple], side, raw_score, filter_index)[0]
    return RankResult(tuple(int(x) for x in triple), side, int(rank))


def summarize_ranks(ranks) -> EvalReport:
    ranks = np.asarray(ranks, dtype=np.int64)
    if len(ranks) == 0:
        raise EmptySplit("no queries to summarise")
    mrr = float(np.mean(1.0 / ranks))
    hits = {k: float(np.mean(ranks <= k)) for k in HITS_AT}
    return EvalReport(mrr, hits, len(ranks), ranks)


def evaluate(state, kind, graph, split="test", known=None, raw_score=False, filter_index=None) -> EvalReport:
    """Head and tail queries for every triple in ``split`` (``N = 2 |split|``).

    Ranks are ordered as all tail queries followed by all head queries.
    """
    triples = graph.split(split) if isinstance(split, str) else split
    if len(triples) == 0:
        raise EmptySplit(f"split {split!r} is empty")
    if filter_index is None:
        filter_index = FilterIndex(graph.known if known is None else known)
    queries = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    ranks = []
    for side in (TAIL, HEAD):
        ranks.append(_rank_queries(kind, state, queries, side, raw_score, filter_index))
    return summarize_ranks(np.concatenate(ranks))
