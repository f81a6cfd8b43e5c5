"""Query-aware channel attention decoder with 1-N scoring and BCE loss."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .layer import ConfigError, EncoderOutput, glorot

NONLINEARITIES = {"relu": ad.relu, "elu": ad.elu, "sigmoid": ad.sigmoid, "identity": lambda x: x}


class Decoder(Protocol):
    """Anything that turns encoder output and (subject, relation) queries into [B, N_e] scores."""

    def init(self, store: ParamStore, rng: np.random.Generator) -> None: ...

    def score(self, enc: EncoderOutput, subjects, relations, store: ParamStore) -> Tensor: ...


@dataclass(frozen=True)
class QattConfig:
    channels: int
    d_e: int  # final entity width D_e^(L)
    d_r: int  # final relation width D_r^(L)
    d_q: int | None = None  # defaults to d_e / channels
    heads: int = 1
    output_nonlinearity: str = "relu"
    qatt_enabled: bool = True
    label_smoothing: float = 0.1

    def __post_init__(self) -> None:
        if self.d_e % self.channels:
            raise ConfigError(f"channel count {self.channels} does not divide entity dim {self.d_e}")
        if self.heads < 1 or (self.heads > 1 and self.query_dim % self.heads):
            raise ConfigError(f"heads={self.heads} must divide d_q={self.query_dim}")
        if self.output_nonlinearity not in NONLINEARITIES:
            raise ConfigError(f"unknown nonlinearity {self.output_nonlinearity!r}")

    @property
    def width(self) -> int:
        return self.d_e // self.channels

    @property
    def query_dim(self) -> int:
        return self.d_q if self.d_q is not None else self.width


@dataclass
class QattParams:
    W1: Tensor  # [d_q, w]
    W2: Tensor  # [d_q, d_r]
    W3: Tensor  # [d_q, d_r + w]
    W: Tensor  # [d_e, K * d_q]


def _rows(n: int, k: int) -> np.ndarray:
    """Row owner ids for a flattened [n, k] grid."""
    return np.repeat(np.arange(n), k)


def query_channel_attention(e_s: Tensor, r_q: Tensor, params: QattParams, channels: int,
                            heads: int = 1) -> Tensor:
    """Channel weights beta [B, K] for subject rows ``e_s`` [B, d_e] and query relations ``r_q`` [B, d_r].

    With several heads the query space is split into ``heads`` equal chunks,
    each chunk gets its own softmax over channels, and the results are averaged.
    """
    B, d_e = e_s.shape
    w = d_e // channels
    d_q = params.W1.shape[0]
    dh = d_q // heads
    keys = ad.matmul(ad.reshape(e_s, (B * channels, w)), ad.transpose(params.W1))  # [B*K, d_q]
    query = ad.matmul(r_q, ad.transpose(params.W2))  # [B, d_q]
    prod = ad.mul(keys, ad.gather_rows(query, _rows(B, channels)))
    head_ind = np.zeros((d_q, heads))
    head_ind[np.arange(d_q), np.arange(d_q) // dh] = 1.0
    logits = ad.scale(ad.matmul(prod, head_ind), 1.0 / np.sqrt(dh))  # [B*K, H]
    beta = ad.segment_softmax(logits, _rows(B, channels), B)
    if heads > 1:
        beta = ad.matmul(beta, np.full((heads, 1), 1.0 / heads))
    return ad.reshape(beta, (B, channels))


def query_aware_embedding(e_s: Tensor, r_q: Tensor, beta: Tensor, params: QattParams,
                          channels: int) -> Tensor:
    """Concatenation over channels of ``beta_k * W3 [e_s^k || r_q]``, shape [B, K*d_q]."""
    B, d_e = e_s.shape
    w = d_e // channels
    d_q = params.W3.shape[0]
    joint = ad.concat([ad.reshape(e_s, (B * channels, w)), ad.gather_rows(r_q, _rows(B, channels))])
    proj = ad.matmul(joint, ad.transpose(params.W3))  # [B*K, d_q]
    weighted = ad.mul(proj, ad.reshape(beta, (B * channels, 1)))
    return ad.reshape(weighted, (B, channels * d_q))


def score_all(Q: Tensor, entities: Tensor, params: QattParams, nonlinearity: str = "relu") -> Tensor:
    """Scores [B, N_e] of every entity as object for each query row of ``Q``."""
    h = NONLINEARITIES[nonlinearity](ad.matmul(Q, ad.transpose(params.W)))
    return ad.matmul(h, ad.transpose(entities))


def bce_loss(scores: Tensor, labels: np.ndarray, label_smoothing: float = 0.0) -> Tensor:
    """Mean binary cross-entropy over every (query, candidate) cell, sigmoid on scores."""
    t = np.asarray(labels, dtype=np.float64)
    if label_smoothing:
        t = (1.0 - label_smoothing) * t + label_smoothing / t.shape[-1]
    p = ad.sigmoid(scores)
    q = ad.sigmoid(ad.scale(scores, -1.0))  # 1 - p without cancellation
    cell = ad.add(ad.mul(ad.log(p, floor=1e-12), t), ad.mul(ad.log(q, floor=1e-12), 1.0 - t))
    return ad.scale(ad.mean_all(cell), -1.0)


class QattDecoder:
    def __init__(self, config: QattConfig):
        self.config = config

    def init(self, store: ParamStore, rng: np.random.Generator) -> None:
        c = self.config
        d_q, w = c.query_dim, c.width
        store.add("qatt.W1", glorot(rng, d_q, w))
        store.add("qatt.W2", glorot(rng, d_q, c.d_r))
        store.add("qatt.W3", glorot(rng, d_q, c.d_r + w))
        store.add("qatt.W", glorot(rng, c.d_e, c.channels * d_q))

    def params(self, store: ParamStore) -> QattParams:
        return QattParams(store["qatt.W1"], store["qatt.W2"], store["qatt.W3"], store["qatt.W"])

    def beta(self, enc: EncoderOutput, subjects, relations, store: ParamStore) -> Tensor:
        c = self.config
        subjects = np.asarray(subjects, dtype=np.intp)
        if not c.qatt_enabled:
            return Tensor(np.full((len(subjects), c.channels), 1.0 / c.channels))
        e_s = ad.gather_rows(enc.entities, subjects)
        r_q = ad.gather_rows(enc.relations, relations)
        return query_channel_attention(e_s, r_q, self.params(store), c.channels, c.heads)

    def score(self, enc: EncoderOutput, subjects, relations, store: ParamStore) -> Tensor:
        c = self.config
        p = self.params(store)
        e_s = ad.gather_rows(enc.entities, subjects)
        r_q = ad.gather_rows(enc.relations, relations)
        beta = self.beta(enc, subjects, relations, store)
        Q = query_aware_embedding(e_s, r_q, beta, p, c.channels)
        return score_all(Q, enc.entities, p, c.output_nonlinearity)

    def loss(self, scores: Tensor, labels: np.ndarray) -> Tensor:
        return bce_loss(scores, labels, self.config.label_smoothing)
