"""Multi-channel relational graph attention layers and the stacked encoder.

A layer projects entity and relation features into K channel subspaces,
scores every edge ``u -i-> v`` per channel with a shared linear attention on
``[e_v^k || r_i^k || e_u^k]``, normalises the scores over each target's full
incoming set and aggregates ``alpha * (e_u^k * r_i^k)``. Channel outputs are
concatenated.

Channel k's weights are row block ``k`` of the stacked matrices ``W_e`` and
``W_r`` and row ``k`` of ``W_f``; the per-channel functions below slice them,
:func:`layer_forward` computes every channel in one vectorised pass.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .graph import MultiRelGraph

ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "elu": ad.elu,
    "relu": ad.relu,
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LayerConfig:
    channels: int
    d_in_e: int
    d_in_r: int
    d_out: int
    attention_slope: float = 0.2
    aggregate: str = "elu"
    attention_dropout: float = 0.1
    feature_dropout: float = 0.2

    def __post_init__(self) -> None:
        if self.channels < 1 or min(self.d_in_e, self.d_in_r, self.d_out) < 1:
            raise ConfigError(f"layer dims and channel count must be >= 1: {self}")
        if self.d_out % self.channels:
            raise ConfigError(f"channel count {self.channels} does not divide output dim {self.d_out}")
        if self.aggregate not in ACTIVATIONS:
            raise ConfigError(f"unknown aggregate nonlinearity {self.aggregate!r}")

    @property
    def width(self) -> int:
        return self.d_out // self.channels


def layer_param_count(cfg: LayerConfig) -> int:
    return cfg.d_out * cfg.d_in_e + cfg.d_out * cfg.d_in_r + 3 * cfg.d_out


@dataclass(frozen=True)
class ModelConfig:
    d_e0: int
    d_r0: int
    layers: tuple[LayerConfig, ...]
    relation_mode: str = "concat"  # or "identity": every layer sees the base relation embeddings

    def __post_init__(self) -> None:
        if not self.layers:
            raise ConfigError("need at least one layer")
        if self.relation_mode not in ("concat", "identity"):
            raise ConfigError(f"unknown relation_mode {self.relation_mode!r}")
        d_e, d_r = self.d_e0, self.d_r0
        for i, lc in enumerate(self.layers):
            if (lc.d_in_e, lc.d_in_r) != (d_e, d_r):
                raise ConfigError(
                    f"layer {i} expects inputs ({lc.d_in_e}, {lc.d_in_r}) but receives ({d_e}, {d_r})")
            d_e = lc.d_out
            d_r = lc.d_out if self.relation_mode == "concat" else self.d_r0

    @classmethod
    def stack(cls, num_layers: int, channels: int, d_e0: int, d_r0: int | None = None,
              d_out: int | None = None, relation_mode: str = "concat", **layer_kw) -> "ModelConfig":
        """Uniform stack: every layer has ``channels`` channels and ``d_out`` outputs."""
        d_r0 = d_e0 if d_r0 is None else d_r0
        d_out = d_e0 if d_out is None else d_out
        layers, d_e, d_r = [], d_e0, d_r0
        for _ in range(num_layers):
            layers.append(LayerConfig(channels, d_e, d_r, d_out, **layer_kw))
            d_e = d_out
            d_r = d_out if relation_mode == "concat" else d_r0
        return cls(d_e0, d_r0, tuple(layers), relation_mode)

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def channels(self) -> int:
        return self.layers[-1].channels

    @property
    def d_out_e(self) -> int:
        return self.layers[-1].d_out

    @property
    def d_out_r(self) -> int:
        return self.layers[-1].d_out if self.relation_mode == "concat" else self.d_r0

    def with_channels(self, k: int) -> "ModelConfig":
        return replace(self, layers=tuple(replace(lc, channels=k) for lc in self.layers))

    def without_dropout(self) -> "ModelConfig":
        return replace(self, layers=tuple(
            replace(lc, attention_dropout=0.0, feature_dropout=0.0) for lc in self.layers))


@dataclass
class LayerParams:
    W_e: Tensor  # [d_out, d_in_e]
    W_r: Tensor  # [d_out, d_in_r]
    W_f: Tensor  # [K, 3 * d_out / K]
    config: LayerConfig

    def channel(self, k: int) -> tuple[Tensor, Tensor, Tensor]:
        w = self.config.width
        rows = np.arange(k * w, (k + 1) * w)
        return (ad.gather_rows(self.W_e, rows), ad.gather_rows(self.W_r, rows),
                ad.gather_rows(self.W_f, [k]))


def glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def init_layer(store: ParamStore, prefix: str, cfg: LayerConfig, rng: np.random.Generator) -> LayerParams:
    K, w = cfg.channels, cfg.width
    W_e = np.concatenate([glorot(rng, w, cfg.d_in_e) for _ in range(K)])
    W_r = np.concatenate([glorot(rng, w, cfg.d_in_r) for _ in range(K)])
    W_f = np.concatenate([glorot(rng, 1, 3 * w) for _ in range(K)])
    return LayerParams(store.add(f"{prefix}.W_e", W_e), store.add(f"{prefix}.W_r", W_r),
                       store.add(f"{prefix}.W_f", W_f), cfg)


def layer_params(store: ParamStore, prefix: str, cfg: LayerConfig) -> LayerParams:
    return LayerParams(store[f"{prefix}.W_e"], store[f"{prefix}.W_r"], store[f"{prefix}.W_f"], cfg)


# ---------------------------------------------------------------------------
# single-channel building blocks


def channel_project(e: Tensor, r: Tensor, params: LayerParams, k: int) -> tuple[Tensor, Tensor]:
    W_ek, W_rk, _ = params.channel(k)
    return ad.matmul(e, ad.transpose(W_ek)), ad.matmul(r, ad.transpose(W_rk))


def edge_logits(graph: MultiRelGraph, e_k: Tensor, r_k: Tensor, W_fk: Tensor,
                slope: float = 0.2) -> Tensor:
    """One attention logit per edge, in the graph's flat edge order."""
    feats = ad.concat([ad.gather_rows(e_k, graph.dst), ad.gather_rows(r_k, graph.rel),
                       ad.gather_rows(e_k, graph.src)])
    raw = ad.reshape(ad.matmul(feats, ad.transpose(W_fk)), (graph.edge_count,))
    return ad.leaky_relu(raw, slope)


def normalize_attention(logits: Tensor, graph: MultiRelGraph) -> Tensor:
    return ad.segment_softmax(logits, graph.dst, graph.num_entities)


def aggregate_channel(graph: MultiRelGraph, alpha: Tensor, e_k: Tensor, r_k: Tensor,
                      activation: str = "elu") -> Tensor:
    msg = ad.mul(ad.gather_rows(e_k, graph.src), ad.gather_rows(r_k, graph.rel))
    alpha = ad.reshape(alpha, (graph.edge_count, 1))
    return ACTIVATIONS[activation](ad.scatter_add_rows(ad.mul(msg, alpha), graph.dst, graph.num_entities))


# ---------------------------------------------------------------------------
# vectorised layer


def _block_indicator(rows: int, width: int, channels: int) -> np.ndarray:
    """[rows, K] matrix with 1 where column index ``(j mod K*width) // width`` matches."""
    ind = np.zeros((rows, channels))
    ind[np.arange(rows), (np.arange(rows) % (channels * width)) // width] = 1.0
    return ind


@dataclass
class LayerOutput:
    entities: Tensor
    relations: Tensor
    attention: np.ndarray = field(repr=False)  # [E, K] normalised weights before dropout


def layer_forward(graph: MultiRelGraph, e: Tensor, r: Tensor, params: LayerParams,
                  training: bool = False, rng: np.random.Generator | None = None) -> LayerOutput:
    cfg = params.config
    K, w, D = cfg.channels, cfg.width, cfg.d_out
    if e.shape != (graph.num_entities, cfg.d_in_e) or r.shape != (graph.num_aug_relations, cfg.d_in_r):
        raise ad.ShapeError(f"layer inputs {e.shape}, {r.shape} do not match {cfg}")
    e_in = ad.dropout(e, cfg.feature_dropout, rng, training)
    ent = ad.matmul(e_in, ad.transpose(params.W_e))
    rel = ad.matmul(r, ad.transpose(params.W_r))

    e_dst = ad.gather_rows(ent, graph.dst)
    r_edge = ad.gather_rows(rel, graph.rel)
    e_src = ad.gather_rows(ent, graph.src)
    # W_f rows are [a_k | b_k | c_k]; reorder to [a_0..a_K | b_0..b_K | c_0..c_K]
    wf = ad.reshape(ad.transpose(ad.reshape(params.W_f, (K, 3, w)), (1, 0, 2)), (1, 3 * D))
    scores = ad.matmul(ad.mul(ad.concat([e_dst, r_edge, e_src]), wf), _block_indicator(3 * D, w, K))
    alpha = ad.segment_softmax(ad.leaky_relu(scores, cfg.attention_slope), graph.dst, graph.num_entities)
    attention = alpha.data
    alpha = ad.dropout(alpha, cfg.attention_dropout, rng, training)
    alpha_wide = ad.matmul(alpha, _block_indicator(D, w, K).T)
    msg = ad.mul(ad.mul(e_src, r_edge), alpha_wide)
    out = ACTIVATIONS[cfg.aggregate](ad.scatter_add_rows(msg, graph.dst, graph.num_entities))
    return LayerOutput(out, rel, attention)


# ---------------------------------------------------------------------------
# stacked encoder


@dataclass
class EncoderOutput:
    entities: Tensor
    relations: Tensor
    attention: list[np.ndarray]


def model_forward(graph: MultiRelGraph, base_e: Tensor, base_r: Tensor, params: list[LayerParams],
                  config: ModelConfig, training: bool = False,
                  rng: np.random.Generator | None = None) -> EncoderOutput:
    if len(params) != config.num_layers:
        raise ConfigError(f"{len(params)} parameter sets for {config.num_layers} layers")
    e, r = base_e, base_r
    attention = []
    for lp in params:
        out = layer_forward(graph, e, r, lp, training, rng)
        attention.append(out.attention)
        e = out.entities
        r = out.relations if config.relation_mode == "concat" else base_r
    return EncoderOutput(e, r, attention)


class RgatEncoder:
    """Base embeddings plus the layer stack, with parameters kept in a ParamStore."""

    def __init__(self, config: ModelConfig, num_entities: int, num_aug_relations: int):
        self.config = config
        self.num_entities = num_entities
        self.num_aug_relations = num_aug_relations

    def init(self, store: ParamStore, rng: np.random.Generator) -> None:
        cfg = self.config
        store.add("emb.entity", glorot(rng, self.num_entities, cfg.d_e0))
        store.add("emb.relation", glorot(rng, self.num_aug_relations, cfg.d_r0))
        for i, lc in enumerate(cfg.layers):
            init_layer(store, f"layer{i}", lc, rng)

    def layers(self, store: ParamStore) -> list[LayerParams]:
        return [layer_params(store, f"layer{i}", lc) for i, lc in enumerate(self.config.layers)]

    def layer_param_count(self, store: ParamStore) -> int:
        return sum(store.count(f"layer{i}.") for i in range(self.config.num_layers))

    def __call__(self, graph: MultiRelGraph, store: ParamStore, training: bool = False,
                 rng: np.random.Generator | None = None) -> EncoderOutput:
        return model_forward(graph, store["emb.entity"], store["emb.relation"], self.layers(store),
                             self.config, training, rng)
