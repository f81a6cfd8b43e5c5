"""Entity classification head: linear class logits, row softmax, CE loss, accuracy."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .graph import Vocab, read_tsv_lines
from .layer import glorot

SPLITS = ("train", "valid", "test")


class LabelError(ValueError):
    pass


@dataclass
class LabelSet:
    """Gold classes for labelled entities plus their split assignment."""

    entities: np.ndarray  # entity ids
    classes: np.ndarray  # class id per entry of ``entities``
    splits: np.ndarray  # split name per entry
    class_names: list[str]

    def __post_init__(self) -> None:
        if len(set(self.entities.tolist())) != len(self.entities):
            raise LabelError("an entity is labelled twice; splits must be disjoint")
        if self.classes.size and (self.classes.min() < 0 or self.classes.max() >= self.num_classes):
            raise LabelError("class id out of range")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        mask = self.splits == name
        if not mask.any():
            raise LabelError(f"split {name!r} is empty")
        return self.entities[mask], self.classes[mask]


def load_labels(labels_path: str | Path, split_path: str | Path, vocab: Vocab) -> LabelSet:
    """Read ``entity TAB class`` lines and ``entity TAB split`` markers.

    Class ids are assigned in sorted name order so they do not depend on file order.
    """
    raw: dict[str, str] = {}
    for lineno, (ent, cls) in read_tsv_lines(labels_path, 2):
        if ent in raw:
            raise LabelError(f"{labels_path}:{lineno}: duplicate label for {ent!r}")
        raw[ent] = cls
    split_of: dict[str, str] = {}
    for lineno, (ent, split) in read_tsv_lines(split_path, 2):
        if split not in SPLITS:
            raise LabelError(f"{split_path}:{lineno}: unknown split {split!r}")
        if ent not in raw:
            raise LabelError(f"{split_path}:{lineno}: {ent!r} has no label")
        if ent in split_of:
            raise LabelError(f"{split_path}:{lineno}: {ent!r} assigned to two splits")
        split_of[ent] = split
    class_names = sorted(set(raw.values()))
    cid = {c: i for i, c in enumerate(class_names)}
    names = [e for e in raw if e in split_of]
    return LabelSet(
        entities=np.array([vocab.entity_id(e) for e in names], dtype=np.intp),
        classes=np.array([cid[raw[e]] for e in names], dtype=np.intp),
        splits=np.array([split_of[e] for e in names]),
        class_names=class_names,
    )


def class_logits(entities: Tensor, W_cls: Tensor) -> Tensor:
    """Row-softmax class probabilities [N_e, C] (despite the name, already normalised)."""
    n = entities.shape[0]
    C = W_cls.shape[0]
    logits = ad.matmul(entities, ad.transpose(W_cls))
    flat = ad.segment_softmax(ad.reshape(logits, (n * C,)), np.repeat(np.arange(n), C), n)
    return ad.reshape(flat, (n, C))


def ce_loss(probs: Tensor, entity_ids, classes) -> Tensor:
    entity_ids = np.asarray(entity_ids, dtype=np.intp)
    if entity_ids.size == 0:
        raise LabelError("cross-entropy over an empty split")
    C = probs.shape[1]
    onehot = np.eye(C)[np.asarray(classes, dtype=np.intp)]
    logp = ad.log(ad.gather_rows(probs, entity_ids), floor=1e-300)
    return ad.scale(ad.sum_all(ad.mul(logp, onehot)), -1.0 / len(entity_ids))


def accuracy(probs, entity_ids, classes) -> float:
    """Argmax match rate; ``np.argmax`` resolves ties to the lowest class id."""
    entity_ids = np.asarray(entity_ids, dtype=np.intp)
    if entity_ids.size == 0:
        raise LabelError("accuracy over an empty split")
    data = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    pred = np.argmax(data[entity_ids], axis=1)
    return float(np.mean(pred == np.asarray(classes)))


class ClassifierHead:
    def __init__(self, num_classes: int, d_e: int):
        self.num_classes = num_classes
        self.d_e = d_e

    def init(self, store: ParamStore, rng: np.random.Generator) -> None:
        store.add("cls.W", glorot(rng, self.num_classes, self.d_e))

    def __call__(self, entities: Tensor, store: ParamStore) -> Tensor:
        return class_logits(entities, store["cls.W"])
