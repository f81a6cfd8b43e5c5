"""Triplet loading, vocabularies and the augmented multi-relational graph."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np


class ParseError(ValueError):
    pass


class VocabError(KeyError):
    pass


class Triplet(NamedTuple):
    subject: int
    relation: int
    object: int


@dataclass
class Vocab:
    """Entity and relation names.

    ``relation_names`` holds only the |R| original relations until
    :meth:`augment` is called; afterwards ids ``r + |R|`` are inverses and id
    ``2|R|`` is the shared self-loop relation.
    """

    entity_names: list[str] = field(default_factory=list)
    relation_names: list[str] = field(default_factory=list)
    num_base_relations: int | None = None

    def __post_init__(self) -> None:
        self._ent = {n: i for i, n in enumerate(self.entity_names)}
        self._rel = {n: i for i, n in enumerate(self.relation_names)}
        if len(self._ent) != len(self.entity_names) or len(self._rel) != len(self.relation_names):
            raise VocabError("duplicate names in vocabulary")

    @property
    def is_empty(self) -> bool:
        return not self.entity_names and not self.relation_names

    @property
    def num_entities(self) -> int:
        return len(self.entity_names)

    @property
    def num_relations(self) -> int:
        """|R|, the number of original relations."""
        if self.num_base_relations is not None:
            return self.num_base_relations
        return len(self.relation_names)

    @property
    def augmented(self) -> bool:
        return self.num_base_relations is not None

    @property
    def num_aug_relations(self) -> int:
        return 2 * self.num_relations + 1

    @property
    def self_loop(self) -> int:
        return 2 * self.num_relations

    @classmethod
    def synthetic(cls, num_entities: int, num_relations: int) -> "Vocab":
        """Augmented vocab with placeholder names ``e0..`` and ``r0..``."""
        return cls([f"e{i}" for i in range(num_entities)],
                   [f"r{i}" for i in range(num_relations)]).augment()

    def inverse(self, r: int) -> int:
        n = self.num_relations
        if r < n:
            return r + n
        if r < 2 * n:
            return r - n
        return r

    def entity_id(self, name: str) -> int:
        try:
            return self._ent[name]
        except KeyError:
            raise VocabError(f"unknown entity {name!r}") from None

    def relation_id(self, name: str) -> int:
        try:
            return self._rel[name]
        except KeyError:
            raise VocabError(f"unknown relation {name!r}") from None

    def _add_entity(self, name: str) -> int:
        idx = self._ent.get(name)
        if idx is None:
            idx = self._ent[name] = len(self.entity_names)
            self.entity_names.append(name)
        return idx

    def _add_relation(self, name: str) -> int:
        idx = self._rel.get(name)
        if idx is None:
            idx = self._rel[name] = len(self.relation_names)
            self.relation_names.append(name)
        return idx

    def augment(self) -> "Vocab":
        """Append inverse relation names and the self-loop name (idempotent)."""
        if self.augmented:
            return self
        base = list(self.relation_names)
        suffix = "_inv"
        names = base + [n + suffix for n in base] + ["self_loop" + suffix[4:]]
        # a dataset may already use one of the synthetic names
        while len(set(names)) != len(names):
            suffix += "_"
            names = base + [n + suffix for n in base] + ["self_loop" + suffix[4:]]
        return Vocab(list(self.entity_names), names, num_base_relations=len(base))

    def dump(self) -> str:
        """Debug dump as ``id TAB name`` lines, entities then relations."""
        lines = ["# entities"]
        lines += [f"{i}\t{n}" for i, n in enumerate(self.entity_names)]
        lines.append("# relations")
        lines += [f"{i}\t{n}" for i, n in enumerate(self.relation_names)]
        return "\n".join(lines) + "\n"


def read_tsv_lines(path: str | Path, fields: int) -> Iterable[tuple[int, list[str]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != fields:
                raise ParseError(f"{path}:{lineno}: expected {fields} tab-separated fields, got {len(parts)}")
            yield lineno, parts


def load_triplets(path: str | Path, vocab: Vocab | None = None) -> tuple[list[Triplet], Vocab]:
    """Parse a ``subject TAB relation TAB object`` file.

    An empty (or missing) vocab is grown from the file, which is how the
    training split is read. A non-empty vocab is frozen: unknown names raise
    :class:`VocabError`.
    """
    if vocab is None:
        vocab = Vocab()
    grow = vocab.is_empty
    triplets = []
    for lineno, (s, r, o) in read_tsv_lines(path, 3):
        if grow:
            si, ri, oi = vocab._add_entity(s), vocab._add_relation(r), vocab._add_entity(o)
        else:
            try:
                si, ri, oi = vocab.entity_id(s), vocab.relation_id(r), vocab.entity_id(o)
            except VocabError as exc:
                raise VocabError(f"{path}:{lineno}: {exc.args[0]}") from None
            if ri >= vocab.num_relations:
                raise VocabError(f"{path}:{lineno}: relation {r!r} is synthetic")
        triplets.append(Triplet(si, ri, oi))
    return triplets, vocab


def add_entities_from(path: str | Path, vocab: Vocab) -> int:
    """Register entity names of another split without touching relations; returns how many were new."""
    before = vocab.num_entities
    for lineno, (s, r, o) in read_tsv_lines(path, 3):
        vocab._add_entity(s)
        vocab._add_entity(o)
    return vocab.num_entities - before


def write_triplets(path: str | Path, triplets: Iterable[Triplet], vocab: Vocab) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s, r, o in triplets:
            fh.write(f"{vocab.entity_names[s]}\t{vocab.relation_names[r]}\t{vocab.entity_names[o]}\n")


@dataclass(frozen=True)
class MultiRelGraph:
    """Incoming edges per target entity after inverse and self-loop augmentation.

    ``incoming[v]`` lists ``(u, i)`` pairs for edges ``u -i-> v``. The flat
    arrays ``src``, ``rel``, ``dst`` hold the same edges grouped by ``dst`` in
    ascending order, which is what the vectorised layers consume.
    """

    num_entities: int
    num_relations: int
    incoming: tuple[tuple[tuple[int, int], ...], ...]
    src: np.ndarray
    rel: np.ndarray
    dst: np.ndarray

    @property
    def edge_count(self) -> int:
        return int(self.dst.shape[0])

    @property
    def self_loop(self) -> int:
        return 2 * self.num_relations

    @property
    def num_aug_relations(self) -> int:
        return 2 * self.num_relations + 1

    def inverse(self, r: int) -> int:
        n = self.num_relations
        return r + n if r < n else (r - n if r < 2 * n else r)


def build_graph(triplets: Iterable[Triplet], vocab: Vocab) -> MultiRelGraph:
    """Augment ``triplets`` with inverse edges and one self-loop per entity.

    Each incoming list holds forward edges first, then inverse edges, then the
    self-loop, each group in triplet order. Duplicate triplets stay as
    distinct edges.
    """
    if not vocab.augmented:
        vocab = vocab.augment()
    num_entities, num_relations = vocab.num_entities, vocab.num_relations
    fwd: list[list[tuple[int, int]]] = [[] for _ in range(num_entities)]
    inv: list[list[tuple[int, int]]] = [[] for _ in range(num_entities)]
    for s, r, o in triplets:
        if not (0 <= s < num_entities and 0 <= o < num_entities and 0 <= r < num_relations):
            raise IndexError(f"triplet {(s, r, o)} out of bounds")
        fwd[o].append((s, r))
        inv[s].append((o, r + num_relations))
    loop = 2 * num_relations
    incoming = tuple(tuple(fwd[v] + inv[v] + [(v, loop)]) for v in range(num_entities))
    sizes = np.array([len(x) for x in incoming], dtype=np.intp)
    flat = np.array([pair for lst in incoming for pair in lst], dtype=np.intp).reshape(-1, 2)
    return MultiRelGraph(
        num_entities=num_entities,
        num_relations=num_relations,
        incoming=incoming,
        src=flat[:, 0].copy(),
        rel=flat[:, 1].copy(),
        dst=np.repeat(np.arange(num_entities, dtype=np.intp), sizes),
    )


def neighbors(graph: MultiRelGraph, v: int) -> tuple[tuple[int, int], ...]:
    return graph.incoming[v]


def permuted(graph: MultiRelGraph, rng: np.random.Generator) -> MultiRelGraph:
    """Same edge multiset with every incoming list shuffled (testing aid)."""
    incoming = tuple(tuple(lst[i] for i in rng.permutation(len(lst))) for lst in graph.incoming)
    sizes = np.array([len(x) for x in incoming], dtype=np.intp)
    flat = np.array([p for lst in incoming for p in lst], dtype=np.intp).reshape(-1, 2)
    return MultiRelGraph(graph.num_entities, graph.num_relations, incoming,
                         flat[:, 0].copy(), flat[:, 1].copy(),
                         np.repeat(np.arange(graph.num_entities, dtype=np.intp), sizes))
