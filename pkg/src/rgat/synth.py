"""Planted-aspect synthetic knowledge graphs.

Every entity carries one latent group per aspect. Each relation belongs to a
single aspect and maps the subject's group in that aspect to a fixed target
group (a random permutation per relation); objects are drawn from the target
group. Predicting an object therefore needs exactly one aspect of the subject.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import Triplet, Vocab, write_triplets


class InfeasibleError(ValueError):
    pass


@dataclass
class SyntheticKG:
    vocab: Vocab  # not augmented
    train: list[Triplet]
    valid: list[Triplet]
    test: list[Triplet]
    relation_aspect: list[int]
    groups: np.ndarray  # [N_e, A] latent group per entity and aspect

    @property
    def num_aspects(self) -> int:
        return self.groups.shape[1]

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {name: out / f"{name}.txt" for name in ("train", "valid", "test")}
        for name, path in paths.items():
            write_triplets(path, getattr(self, name), self.vocab)
        paths["aspects"] = out / "aspects.tsv"
        with open(paths["aspects"], "w", encoding="utf-8") as fh:
            for r, a in enumerate(self.relation_aspect):
                fh.write(f"{self.vocab.relation_names[r]}\t{a}\n")
        return paths


def _split(triplets: list[Triplet], rng: np.random.Generator, num_entities: int):
    order = rng.permutation(len(triplets))
    n_valid = len(triplets) // 10
    n_test = len(triplets) // 10
    shuffled = [triplets[i] for i in order]
    held = shuffled[:n_valid + n_test]
    train = shuffled[n_valid + n_test:]
    seen_e = {e for s, _, o in train for e in (s, o)}
    seen_r = {r for _, r, _ in train}
    kept = []
    for t in held:
        # transductive guarantee: held-out facts only mention training entities/relations
        if t.subject in seen_e and t.object in seen_e and t.relation in seen_r:
            kept.append(t)
        else:
            train.append(t)
            seen_e.update((t.subject, t.object))
            seen_r.add(t.relation)
    valid, test = kept[:n_valid], kept[n_valid:]
    return sorted(train), sorted(valid), sorted(test)


def generate_synthetic(aspects: int, relations_per_aspect: int, entities: int,
                       density: float = 1.0, seed: int = 0, groups: int = 4) -> SyntheticKG:
    """Deterministic planted-aspect KG split 80/10/10.

    ``density`` is the expected number of objects per (subject, relation).
    """
    if min(aspects, relations_per_aspect, entities, groups) < 1:
        raise InfeasibleError("aspects, relations, entities and groups must be positive")
    if groups > entities:
        raise InfeasibleError(f"{groups} groups cannot be filled by {entities} entities")
    rng = np.random.default_rng(seed)
    # balanced group assignment so no target group is empty
    latent = np.stack([rng.permutation(np.arange(entities) % groups) for _ in range(aspects)], axis=1)
    smallest = min(np.bincount(latent[:, a], minlength=groups).min() for a in range(aspects))
    if not 0 < density <= smallest - 1:
        raise InfeasibleError(f"density {density} infeasible: groups hold as few as {smallest} entities")
    members = [[np.flatnonzero(latent[:, a] == g) for g in range(groups)] for a in range(aspects)]

    relation_aspect = [a for a in range(aspects) for _ in range(relations_per_aspect)]
    base, frac = int(np.floor(density)), density - np.floor(density)
    triplets: set[Triplet] = set()
    for r, a in enumerate(relation_aspect):
        target = rng.permutation(groups)
        for s in range(entities):
            k = base + int(rng.random() < frac)
            if k == 0:
                continue
            pool = members[a][target[latent[s, a]]]
            pool = pool[pool != s]
            for o in rng.choice(pool, size=min(k, len(pool)), replace=False):
                triplets.add(Triplet(s, r, int(o)))
    if not triplets:
        raise InfeasibleError("density too low: no triplets generated")
    train, valid, test = _split(sorted(triplets), rng, entities)
    vocab = Vocab([f"e{i}" for i in range(entities)],
                  [f"a{a}_r{r % relations_per_aspect}" for r, a in enumerate(relation_aspect)])
    return SyntheticKG(vocab, train, valid, test, relation_aspect, latent)


@dataclass
class LabeledGraph:
    kg: SyntheticKG
    labels: dict[int, int]  # entity id -> class
    splits: dict[int, str]

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        paths = self.kg.write(out_dir)
        out = Path(out_dir)
        paths["labels"] = out / "labels.tsv"
        paths["splits"] = out / "splits.tsv"
        names = self.kg.vocab.entity_names
        with open(paths["labels"], "w", encoding="utf-8") as fh:
            for e, c in sorted(self.labels.items()):
                fh.write(f"{names[e]}\tclass{c}\n")
        with open(paths["splits"], "w", encoding="utf-8") as fh:
            for e, s in sorted(self.splits.items()):
                fh.write(f"{names[e]}\t{s}\n")
        return paths


def generate_labeled(entities: int = 100, classes: int = 4, aspects: int = 2,
                     relations_per_aspect: int = 2, density: float = 2.0, seed: int = 0,
                     test_fraction: float = 0.2) -> LabeledGraph:
    """Synthetic KG whose entity class is the latent group of aspect 0."""
    kg = generate_synthetic(aspects, relations_per_aspect, entities, density, seed, groups=classes)
    # classification uses the whole graph; keep every fact as structure
    kg = SyntheticKG(kg.vocab, sorted(kg.train + kg.valid + kg.test), [], [], kg.relation_aspect, kg.groups)
    rng = np.random.default_rng([seed, 1])
    order = rng.permutation(entities)
    n_test = int(round(test_fraction * entities))
    splits = {int(e): ("test" if i < n_test else "train") for i, e in enumerate(order)}
    labels = {e: int(kg.groups[e, 0]) for e in range(entities)}
    return LabeledGraph(kg, labels, splits)
