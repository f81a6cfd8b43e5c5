"""Channel-attention summaries and per-channel fact attributions for trained link models."""
from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import VocabError
from .train import LinkModel


@dataclass
class ChannelAttentionReport:
    relations: list[str]
    beta: np.ndarray  # [len(relations), K] mean channel weights
    sample_size: int
    seed: int

    def to_text(self) -> str:
        K = self.beta.shape[1]
        width = max([8] + [len(r) for r in self.relations])
        lines = [f"# channel attention, {self.sample_size} sampled subjects, seed {self.seed}",
                 f"{'relation':<{width}}  " + "  ".join(f"{'ch' + str(k):>7}" for k in range(K))]
        for name, row in zip(self.relations, self.beta):
            lines.append(f"{name:<{width}}  " + "  ".join(f"{v:7.4f}" for v in row))
        return "\n".join(lines) + "\n"

    def metric_lines(self) -> str:
        return "".join(f"beta[{name}][{k}]={v:.10f}\n"
                       for name, row in zip(self.relations, self.beta) for k, v in enumerate(row))


def _relation_ids(model: LinkModel, names: Sequence[str]) -> list[int]:
    return [model.data.vocab.relation_id(n) for n in names]


def channel_attention_summary(model: LinkModel, relations: Sequence[str] | None = None,
                              sample_size: int = 100, seed: int = 0) -> ChannelAttentionReport:
    """Mean query-channel weights per relation over a seeded sample of subjects."""
    vocab = model.data.vocab
    if relations is None:
        relations = vocab.relation_names[:vocab.num_relations]
    rel_ids = _relation_ids(model, relations)
    n_e = vocab.num_entities
    rng = np.random.default_rng(seed)
    subjects = np.sort(rng.choice(n_e, size=min(sample_size, n_e), replace=False))
    enc = model.encoder(model.data.graph, model.store, training=False)
    rows = []
    for r in rel_ids:
        beta = model.decoder.beta(enc, subjects, np.full(len(subjects), r), model.store).data
        rows.append(beta.mean(axis=0))
    return ChannelAttentionReport(list(relations), np.array(rows), len(subjects), seed)


@dataclass
class Fact:
    subject: str
    relation: str
    object: str
    weight: float

    def __str__(self) -> str:
        return f"({self.subject}, {self.relation}, {self.object}) : {self.weight:.3f}"


@dataclass
class FactAttributionReport:
    subject: str
    relation: str
    channels: list[tuple[int, float]]  # (channel, beta), beta descending
    facts: dict[int, list[Fact]]

    def to_text(self) -> str:
        lines = [f"Subject Entity: {self.subject}", f"Query Relation: {self.relation}",
                 f"Top-{len(self.channels)} Channels: "
                 + ", ".join(f"Channel {k}: {b:.3f}" for k, b in self.channels)]
        for k, _ in self.channels:
            lines.append(f"Top-{len(self.facts[k])} Facts of Channel {k}:")
            lines += [f"  {f}" for f in self.facts[k]]
        return "\n".join(lines) + "\n"


def _describe(model: LinkModel, v: int, u: int, i: int) -> tuple[str, str, str]:
    """Render incoming edge ``u -i-> v`` as a readable fact about ``v``."""
    vocab = model.data.vocab
    ent, rel, n = vocab.entity_names, vocab.relation_names, vocab.num_relations
    if i < n:
        return ent[u], rel[i], ent[v]
    if i < 2 * n:
        return ent[v], rel[i - n], ent[u]
    return ent[v], rel[i], ent[u]


def top_facts(model: LinkModel, subject: str, relation: str, top_channels: int = 3,
              top_facts: int = 4) -> FactAttributionReport:
    """Top channels by query weight, each with the subject's most attended 1-hop facts.

    Fact weights are the last encoder layer's attention for the subject's
    incoming edges (inverse edges are shown in their original direction).
    """
    vocab = model.data.vocab
    s = vocab.entity_id(subject)
    q = vocab.relation_id(relation)
    graph = model.data.graph
    enc = model.encoder(graph, model.store, training=False)
    beta = model.decoder.beta(enc, [s], [q], model.store).data[0]
    order = sorted(range(len(beta)), key=lambda k: (-beta[k], k))[:top_channels]
    edges = np.flatnonzero(graph.dst == s)
    alpha = enc.attention[-1][edges]
    facts = {}
    for k in order:
        ranked = sorted(range(len(edges)), key=lambda j: (-alpha[j, k], j))[:top_facts]
        facts[k] = [Fact(*_describe(model, s, int(graph.src[edges[j]]), int(graph.rel[edges[j]])),
                         float(alpha[j, k])) for j in ranked]
    return FactAttributionReport(subject, relation, [(k, float(beta[k])) for k in order], facts)


def aspect_alignment_score(report: ChannelAttentionReport, relation_aspect: dict[str, int]) -> float:
    """Mean over aspects of the share of relations whose argmax channel is the aspect's modal channel."""
    K = report.beta.shape[1]
    if K == 1:
        warnings.warn("single channel: alignment is trivially 1.0", stacklevel=2)
        return 1.0
    missing = set(report.relations) - set(relation_aspect)
    if missing:
        raise VocabError(f"no aspect label for {sorted(missing)}")
    top = {name: int(np.argmax(row)) for name, row in zip(report.relations, report.beta)}
    return _alignment(top, {r: relation_aspect[r] for r in report.relations})


def _alignment(top: dict[str, int], aspect: dict[str, int]) -> float:
    by_aspect: dict[int, list[int]] = {}
    for name, a in aspect.items():
        by_aspect.setdefault(a, []).append(top[name])
    scores = []
    for chans in by_aspect.values():
        counts = Counter(chans)
        modal = min(counts, key=lambda c: (-counts[c], c))
        scores.append(counts[modal] / len(chans))
    return float(np.mean(scores))


def chance_alignment(relation_aspect: dict[str, int], channels: int, trials: int = 10000,
                     seed: int = 0) -> float:
    """Monte Carlo alignment of random channel weights (argmax uniform over channels)."""
    rng = np.random.default_rng(seed)
    names = list(relation_aspect)
    draws = rng.integers(0, channels, size=(trials, len(names)))
    return float(np.mean([_alignment(dict(zip(names, row.tolist())), relation_aspect) for row in draws]))


def load_aspects(path) -> dict[str, int]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                name, a = line.rstrip("\n").split("\t")
                out[name] = int(a)
    return out
