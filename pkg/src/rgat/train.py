"""Training loops, checkpoints and the channel sweep."""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape
from .classify import ClassifierHead, LabelSet, accuracy, ce_loss, load_labels
from .config import RunConfig
from .decoder import QattDecoder
from .evaluation import FilterIndex, RankReport, build_filter, evaluate
from .graph import MultiRelGraph, add_entities_from, Triplet, Vocab, build_graph, load_triplets
from .layer import RgatEncoder

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.bin"
METRICS_NAME = "metrics.log"


class TrainingDiverged(FloatingPointError):
    pass


# ---------------------------------------------------------------------------
# data


@dataclass
class LinkData:
    vocab: Vocab  # augmented
    train: list[Triplet]
    valid: list[Triplet]
    test: list[Triplet]
    graph: MultiRelGraph
    filter: FilterIndex

    @classmethod
    def from_triplets(cls, vocab: Vocab, train, valid=(), test=()) -> "LinkData":
        vocab = vocab.augment()
        train, valid, test = list(train), list(valid), list(test)
        return cls(vocab, train, valid, test, build_graph(train, vocab),
                   build_filter([train, valid, test], vocab.num_relations))

    @classmethod
    def load(cls, config: RunConfig) -> "LinkData":
        train, vocab = load_triplets(config.train_path)
        if config.entity_vocab == "all":
            for path in (config.valid_path, config.test_path):
                if path:
                    add_entities_from(path, vocab)
        valid = load_triplets(config.valid_path, vocab)[0] if config.valid_path else []
        test = load_triplets(config.test_path, vocab)[0] if config.test_path else []
        return cls.from_triplets(vocab, train, valid, test)


def training_queries(triplets, num_relations: int) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """Distinct (subject, relation) pairs in both directions with their known answers."""
    answers: dict[tuple[int, int], set[int]] = defaultdict(set)
    for s, r, o in triplets:
        answers[(s, r)].add(o)
        answers[(o, r + num_relations)].add(s)
    keys = sorted(answers)
    subj = np.array([k[0] for k in keys], dtype=np.intp)
    rel = np.array([k[1] for k in keys], dtype=np.intp)
    return subj, rel, [np.array(sorted(answers[k]), dtype=np.intp) for k in keys]


# ---------------------------------------------------------------------------
# model assembly


@dataclass
class LinkModel:
    config: RunConfig
    data: LinkData
    encoder: RgatEncoder
    decoder: QattDecoder
    store: ParamStore

    @classmethod
    def build(cls, config: RunConfig, data: LinkData) -> "LinkModel":
        mc = config.model_config()
        encoder = RgatEncoder(mc, data.vocab.num_entities, data.vocab.num_aug_relations)
        decoder = QattDecoder(config.qatt_config(mc))
        store = ParamStore()
        rng = np.random.default_rng(config.seed)
        encoder.init(store, rng)
        decoder.init(store, rng)
        return cls(config, data, encoder, decoder, store)

    def evaluate(self, split: str = "test", seed: int | None = None) -> RankReport:
        triplets = getattr(self.data, split)
        return evaluate(self.encoder, self.decoder, self.store, self.data.graph, triplets,
                        self.data.filter, self.config.seed if seed is None else seed,
                        self.config.eval_batch_size)


@dataclass
class ClassModel:
    config: RunConfig
    vocab: Vocab
    graph: MultiRelGraph
    labels: LabelSet
    encoder: RgatEncoder
    head: ClassifierHead
    store: ParamStore

    @classmethod
    def build(cls, config: RunConfig, vocab: Vocab, graph: MultiRelGraph, labels: LabelSet) -> "ClassModel":
        mc = config.model_config()
        encoder = RgatEncoder(mc, vocab.num_entities, vocab.num_aug_relations)
        head = ClassifierHead(labels.num_classes, mc.d_out_e)
        store = ParamStore()
        rng = np.random.default_rng(config.seed)
        encoder.init(store, rng)
        head.init(store, rng)
        return cls(config, vocab, graph, labels, encoder, head, store)

    @classmethod
    def load_data(cls, config: RunConfig) -> tuple[Vocab, MultiRelGraph, LabelSet]:
        triplets, vocab = load_triplets(config.train_path)
        vocab = vocab.augment()
        labels = load_labels(config.labels_path, config.splits_path, vocab)
        return vocab, build_graph(triplets, vocab), labels

    def probabilities(self) -> np.ndarray:
        enc = self.encoder(self.graph, self.store, training=False)
        return self.head(enc.entities, self.store).data

    def accuracy(self, split: str = "test") -> float:
        ids, cls_ = self.labels.split(split)
        return accuracy(self.probabilities(), ids, cls_)


# ---------------------------------------------------------------------------
# checkpoints and logs


def save_checkpoint(path: str | Path, values: dict[str, np.ndarray], config: RunConfig,
                    epoch: int, best_metric: float) -> None:
    meta = {"config_hash": config.digest(), "epoch": epoch, "best_metric": best_metric,
            "task": config.task}
    Path(path).write_bytes(ad.dump_params(values, meta))


def load_checkpoint(path: str | Path, store: ParamStore, config: RunConfig | None = None) -> dict:
    values, meta = ad.load_params(Path(path).read_bytes())
    missing = set(store.names()) - set(values)
    if missing:
        raise ad.CheckpointError(f"checkpoint lacks parameters {sorted(missing)}")
    if config is not None and meta.get("config_hash") != config.digest():
        log.warning("checkpoint was written under a different config")
    store.load({k: values[k] for k in store.names()})
    return meta


class MetricLog:
    """Append-only ``epoch TAB metric TAB value`` lines, mirrored to a file if given."""

    def __init__(self, path: str | Path | None = None):
        self.lines: list[str] = []
        self.path = Path(path) if path else None
        if self.path:
            self.path.write_text("", encoding="utf-8")

    def __call__(self, epoch: int, metric: str, value: float) -> None:
        line = f"{epoch}\t{metric}\t{value:.10g}"
        self.lines.append(line)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def values(self, metric: str) -> list[float]:
        return [float(l.split("\t")[2]) for l in self.lines if l.split("\t")[1] == metric]


@dataclass
class TrainResult:
    model: LinkModel | ClassModel
    log: MetricLog
    best_metric: float
    best_epoch: int
    epochs_run: int
    checkpoint: Path | None = None
    extra: dict = field(default_factory=dict)


def _check_finite(loss: float, epoch: int) -> None:
    if not np.isfinite(loss):
        raise TrainingDiverged(f"loss became {loss} at epoch {epoch}")


def _out(out_dir):
    if out_dir is None:
        return None
    p = Path(out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------------------
# loops


def train_lp(config: RunConfig, data: LinkData | None = None, out_dir: str | Path | None = None,
             select_on: str = "valid") -> TrainResult:
    """Train encoder + Qatt decoder with 1-N BCE; keep the best-validation parameters.

    ``select_on`` picks the split whose filtered MRR drives model selection and
    early stopping; it falls back to ``train`` when the split is empty.
    """
    if data is None:
        config.validate_paths()
        data = LinkData.load(config)
    out = _out(out_dir)
    model = LinkModel.build(config, data)
    store = model.store
    mlog = MetricLog(out / METRICS_NAME if out else None)
    if not getattr(data, select_on):
        select_on = "train"
    subj, rel, answers = training_queries(data.train, data.vocab.num_relations)
    n_e = data.vocab.num_entities
    rng = np.random.default_rng([config.seed, 7])
    best, best_epoch, stale = -np.inf, 0, 0
    best_values = store.snapshot()
    epoch = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(subj))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            labels = np.zeros((len(idx), n_e))
            for row, q in enumerate(idx):
                labels[row, answers[q]] = 1.0
            with Tape() as tape:
                enc = model.encoder(data.graph, store, training=True, rng=rng)
                scores = model.decoder.score(enc, subj[idx], rel[idx], store)
                loss = model.decoder.loss(scores, labels)
            _check_finite(float(loss.data), epoch)
            ad.backward(tape, loss, store)
            ad.adam_step(store, config.lr, config.beta1, config.beta2, config.eps)
            total += float(loss.data) * len(idx)
        mlog(epoch, "loss", total / len(order))
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            mrr = model.evaluate(select_on).mrr
            mlog(epoch, f"{select_on}_mrr", mrr)
            if mrr > best:
                best, best_epoch, stale = mrr, epoch, 0
                best_values = store.snapshot()
            else:
                stale += 1
                if stale >= config.patience:
                    log.info("early stop at epoch %d", epoch)
                    break
    store.load(best_values)
    ckpt = None
    if out:
        ckpt = out / CHECKPOINT_NAME
        save_checkpoint(ckpt, best_values, config, best_epoch, best)
    return TrainResult(model, mlog, float(best), best_epoch, epoch, ckpt)


def train_ec(config: RunConfig, data: tuple[Vocab, MultiRelGraph, LabelSet] | None = None,
             out_dir: str | Path | None = None) -> TrainResult:
    """Full-batch CE training on labelled train entities; selection on valid (else train) accuracy."""
    if data is None:
        config.validate_paths()
        data = ClassModel.load_data(config)
    vocab, graph, labels = data
    out = _out(out_dir)
    model = ClassModel.build(config, vocab, graph, labels)
    store = model.store
    mlog = MetricLog(out / METRICS_NAME if out else None)
    train_ids, train_cls = labels.split("train")
    select_on = "valid" if (labels.splits == "valid").any() else "train"
    rng = np.random.default_rng([config.seed, 7])
    best, best_epoch, stale = -np.inf, 0, 0
    best_values = store.snapshot()
    epoch = 0
    for epoch in range(1, config.epochs + 1):
        with Tape() as tape:
            enc = model.encoder(graph, store, training=True, rng=rng)
            loss = ce_loss(model.head(enc.entities, store), train_ids, train_cls)
        _check_finite(float(loss.data), epoch)
        ad.backward(tape, loss, store)
        ad.adam_step(store, config.lr, config.beta1, config.beta2, config.eps)
        mlog(epoch, "loss", float(loss.data))
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            acc = model.accuracy(select_on)
            mlog(epoch, f"{select_on}_accuracy", acc)
            if acc > best:
                best, best_epoch, stale = acc, epoch, 0
                best_values = store.snapshot()
            else:
                stale += 1
                if stale >= config.patience:
                    break
    store.load(best_values)
    ckpt = None
    if out:
        ckpt = out / CHECKPOINT_NAME
        save_checkpoint(ckpt, best_values, config, best_epoch, best)
    return TrainResult(model, mlog, float(best), best_epoch, epoch, ckpt)


def load_lp(config: RunConfig, checkpoint: str | Path, data: LinkData | None = None) -> LinkModel:
    if data is None:
        config.validate_paths()
        data = LinkData.load(config)
    model = LinkModel.build(config, data)
    load_checkpoint(checkpoint, model.store, config)
    return model


def load_ec(config: RunConfig, checkpoint: str | Path) -> ClassModel:
    config.validate_paths()
    model = ClassModel.build(config, *ClassModel.load_data(config))
    load_checkpoint(checkpoint, model.store, config)
    return model


# ---------------------------------------------------------------------------
# channel sweep


@dataclass
class SweepRow:
    channels: int
    layer_params: int
    valid_mrr: float | None
    best_epoch: int | None
    status: str = "ok"


def sweep_channels(config: RunConfig, channel_list, data: LinkData | None = None,
                   out_dir: str | Path | None = None) -> list[SweepRow]:
    if data is None:
        config.validate_paths()
        data = LinkData.load(config)
    rows = []
    for k in channel_list:
        try:
            cfg = config.replace(channels=int(k))
            sub = Path(out_dir) / f"K{k}" if out_dir else None
            res = train_lp(cfg, data, sub)
            rows.append(SweepRow(int(k), res.model.encoder.layer_param_count(res.model.store),
                                 res.best_metric, res.best_epoch))
        except Exception as exc:  # a failed K must not abort the sweep
            log.warning("sweep K=%s failed: %s", k, exc)
            rows.append(SweepRow(int(k), 0, None, None, f"failed: {exc}"))
    return rows


def format_sweep(rows: list[SweepRow]) -> str:
    lines = [f"{'K':>4}  {'layer_params':>12}  {'valid_mrr':>9}  {'epoch':>5}  status"]
    for r in rows:
        mrr = f"{r.valid_mrr:9.4f}" if r.valid_mrr is not None else f"{'-':>9}"
        ep = f"{r.best_epoch:5d}" if r.best_epoch is not None else f"{'-':>5}"
        lines.append(f"{r.channels:>4}  {r.layer_params:>12}  {mrr}  {ep}  {r.status}")
    ok = [r for r in rows if r.valid_mrr is not None]
    if ok:
        top = max(ok, key=lambda r: (r.valid_mrr, -r.channels))
        lines.append(f"best K = {top.channels}")
    return "\n".join(lines) + "\n"
