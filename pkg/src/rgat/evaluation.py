"""Filtered link-prediction ranking with random tie breaking, MRR and Hits@k."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .graph import Triplet

HITS_AT = (1, 3, 10)
OBJECT, SUBJECT = 0, 1


class FilterIndex(dict):
    """(subject, relation) -> frozenset of known objects, for both query directions."""


def build_filter(splits: Iterable[Sequence[Triplet]], num_relations: int) -> FilterIndex:
    acc: dict[tuple[int, int], set[int]] = defaultdict(set)
    for split in splits:
        for s, r, o in split:
            acc[(s, r)].add(o)
            acc[(o, r + num_relations)].add(s)
    return FilterIndex({k: frozenset(v) for k, v in acc.items()})


def query_rng(seed: int, index: int, direction: int) -> np.random.Generator:
    return np.random.default_rng([seed, index, direction])


def filtered_rank(scores: np.ndarray, gold: int, filter_set, rng: np.random.Generator | int) -> int:
    """Rank of ``gold`` among candidates not in ``filter_set`` (gold itself always competes).

    Candidates scoring exactly equal to gold are ordered by a random priority
    permutation drawn from ``rng``.
    """
    scores = np.asarray(scores)
    n = scores.shape[0]
    if not 0 <= gold < n:
        raise IndexError(f"gold entity {gold} missing from a score vector of length {n}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    priority = rng.permutation(n)
    live = np.ones(n, dtype=bool)
    if filter_set:
        live[np.fromiter(filter_set, dtype=np.intp, count=len(filter_set))] = False
    live[gold] = True
    g = scores[gold]
    ahead = (scores > g) | ((scores == g) & (priority < priority[gold]))
    return int(np.count_nonzero(ahead & live)) + 1


@dataclass
class RankReport:
    ranks: np.ndarray  # one entry per query; queries ordered (triplet 0 obj, triplet 0 subj, ...)
    num_entities: int

    @property
    def mrr(self) -> float:
        return float(np.mean(1.0 / self.ranks))

    def hits(self, k: int) -> float:
        return float(np.mean(self.ranks <= k))

    def metrics(self) -> dict[str, float]:
        out = {"mrr": self.mrr}
        out.update({f"hits@{k}": self.hits(k) for k in HITS_AT})
        return out

    def metric_lines(self, prefix: str = "") -> str:
        return "".join(f"{prefix}{k}={v:.6f}\n" for k, v in self.metrics().items())

    def table(self, title: str = "") -> str:
        m = self.metrics()
        head = "  ".join(f"{k:>8}" for k in m)
        vals = "  ".join(f"{v:>8.4f}" for v in m.values())
        lines = [title] if title else []
        lines += [f"{'queries':>8}  {head}", f"{len(self.ranks):>8}  {vals}"]
        return "\n".join(lines) + "\n"


ScoreFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def rank_triplets(score_fn: ScoreFn, triplets: Sequence[Triplet], filt: FilterIndex,
                  num_entities: int, num_relations: int, seed: int = 0,
                  batch_size: int = 256) -> RankReport:
    """Rank gold objects for (s, r, ?) and gold subjects for (o, r_inv, ?).

    ``score_fn(subjects, relations)`` returns [B, N_e] scores.
    """
    if not triplets:
        raise ValueError("cannot evaluate an empty split")
    arr = np.asarray(triplets, dtype=np.intp).reshape(-1, 3)
    n = len(arr)
    subj = np.empty(2 * n, dtype=np.intp)
    rel = np.empty(2 * n, dtype=np.intp)
    gold = np.empty(2 * n, dtype=np.intp)
    subj[0::2], rel[0::2], gold[0::2] = arr[:, 0], arr[:, 1], arr[:, 2]
    subj[1::2], rel[1::2], gold[1::2] = arr[:, 2], arr[:, 1] + num_relations, arr[:, 0]
    ranks = np.empty(2 * n, dtype=np.int64)
    for start in range(0, 2 * n, batch_size):
        stop = min(start + batch_size, 2 * n)
        scores = np.asarray(score_fn(subj[start:stop], rel[start:stop]))
        for j in range(stop - start):
            q = start + j
            key = (int(subj[q]), int(rel[q]))
            ranks[q] = filtered_rank(scores[j], int(gold[q]), filt.get(key, ()),
                                     query_rng(seed, q // 2, q % 2))
    return RankReport(ranks, num_entities)


def evaluate(encoder, decoder, store, graph, triplets: Sequence[Triplet], filt: FilterIndex,
             seed: int = 0, batch_size: int = 256) -> RankReport:
    """Encoder forward once in eval mode, then rank both directions of every triplet."""
    enc = encoder(graph, store, training=False)

    def score_fn(s, r):
        return decoder.score(enc, s, r, store).data

    return rank_triplets(score_fn, triplets, filt, graph.num_entities, graph.num_relations,
                         seed, batch_size)
