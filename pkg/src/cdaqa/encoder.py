"""Transformer encoder with per-head attention parameters.

The sublayer algebra is
    SA(h) = LN(h + MH(h))
    BL(h) = LN(FFN(SA(h)) + SA(h))
with MH the concatenation of per-head scaled dot-product attentions followed
by an output projection, and FFN(h) = W2 gelu(W1 h + b1) + b2.  SA(h) is
computed once per layer and reused in both summands.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, ContractError
from .seeding import trunc_normal


@dataclass(frozen=True)
class EncoderConfig:
    d: int
    n_heads: int
    d_ff: int
    n_layers: int
    vocab_size: int
    max_len: int
    activation: str = "gelu"
    dropout: float = 0.1

    def __post_init__(self):
        if min(self.d, self.n_heads, self.d_ff, self.n_layers) <= 0:
            raise ConfigError("encoder dimensions must be positive")
        if self.d % self.n_heads:
            raise ConfigError(f"width {self.d} is not divisible by {self.n_heads} heads")
        if self.max_len < 1:
            raise ConfigError("max_len must be at least 1")
        if self.vocab_size < 4:
            raise ConfigError("vocab_size must be at least 4 (ids 0..3 are reserved)")
        if self.activation != "gelu":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def head_dim(self) -> int:
        return self.d // self.n_heads


@dataclass
class LayerParams:
    """One encoder layer: n_heads (wq, wk, wv) triples, wo, FFN, two layer norms."""

    wq: list[Tensor]
    wk: list[Tensor]
    wv: list[Tensor]
    wo: Tensor
    attn_gain: Tensor
    attn_bias: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ffn_gain: Tensor
    ffn_bias: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for h, (q, k, v) in enumerate(zip(self.wq, self.wk, self.wv)):
            out[f"{prefix}/attn/head/{h:02d}/wq"] = q
            out[f"{prefix}/attn/head/{h:02d}/wk"] = k
            out[f"{prefix}/attn/head/{h:02d}/wv"] = v
        out[f"{prefix}/attn/wo"] = self.wo
        out[f"{prefix}/attn/ln/gain"] = self.attn_gain
        out[f"{prefix}/attn/ln/bias"] = self.attn_bias
        out[f"{prefix}/ffn/w1"] = self.w1
        out[f"{prefix}/ffn/b1"] = self.b1
        out[f"{prefix}/ffn/w2"] = self.w2
        out[f"{prefix}/ffn/b2"] = self.b2
        out[f"{prefix}/ffn/ln/gain"] = self.ffn_gain
        out[f"{prefix}/ffn/ln/bias"] = self.ffn_bias
        return out


@dataclass
class EncoderParams:
    token: Tensor      # vocab_size x d
    position: Tensor   # max_len x d
    segment: Tensor    # 2 x d (0 = question, 1 = context)
    layers: list[LayerParams]

    def named(self) -> dict[str, Tensor]:
        out = {"embed/token": self.token, "embed/position": self.position,
               "embed/segment": self.segment}
        for i, layer in enumerate(self.layers):
            out.update(layer.named(f"layer/{i:02d}"))
        return out


def init_layer(cfg: EncoderConfig, rng: np.random.Generator) -> LayerParams:
    hd = cfg.head_dim

    def w(*shape):
        return Tensor(trunc_normal(rng, shape), requires_grad=True)

    return LayerParams(
        wq=[w(hd, cfg.d) for _ in range(cfg.n_heads)],
        wk=[w(hd, cfg.d) for _ in range(cfg.n_heads)],
        wv=[w(hd, cfg.d) for _ in range(cfg.n_heads)],
        wo=w(cfg.d, cfg.d),
        attn_gain=Tensor(np.ones(cfg.d), requires_grad=True),
        attn_bias=Tensor(np.zeros(cfg.d), requires_grad=True),
        w1=w(cfg.d_ff, cfg.d),
        b1=Tensor(np.zeros(cfg.d_ff), requires_grad=True),
        w2=w(cfg.d, cfg.d_ff),
        b2=Tensor(np.zeros(cfg.d), requires_grad=True),
        ffn_gain=Tensor(np.ones(cfg.d), requires_grad=True),
        ffn_bias=Tensor(np.zeros(cfg.d), requires_grad=True),
    )


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator) -> EncoderParams:
    return EncoderParams(
        token=Tensor(trunc_normal(rng, (cfg.vocab_size, cfg.d)), requires_grad=True),
        position=Tensor(trunc_normal(rng, (cfg.max_len, cfg.d)), requires_grad=True),
        segment=Tensor(trunc_normal(rng, (2, cfg.d)), requires_grad=True),
        layers=[init_layer(cfg, rng) for _ in range(cfg.n_layers)],
    )


def padding_mask(length: int, valid_len: int) -> Tensor | None:
    """Additive mask row: 0 on real positions, a large negative on padding."""
    if valid_len >= length:
        return None
    row = np.zeros(length)
    row[valid_len:] = ag.MASK_NEG
    return Tensor(row)


def attention_head(h: Tensor, layer: LayerParams, head_index: int,
                   mask: Tensor | None = None, train_rng=None,
                   dropout: float = 0.0) -> Tensor:
    """Scaled dot-product attention for one head; scores scaled by sqrt(head width)."""
    q = ag.linear(h, layer.wq[head_index])
    k = ag.linear(h, layer.wk[head_index])
    v = ag.linear(h, layer.wv[head_index])
    scores = ag.scale(ag.matmul(q, ag.transpose(k)), 1.0 / np.sqrt(q.shape[1]))
    if mask is not None:
        scores = ag.add(scores, mask)
    attn = ag.softmax(scores, axis=-1)
    if train_rng is not None and dropout > 0.0:
        attn = ag.dropout(attn, dropout, train_rng)
    return ag.matmul(attn, v)


def multi_head(h: Tensor, layer: LayerParams, mask: Tensor | None = None,
               train_rng=None, dropout: float = 0.0) -> Tensor:
    heads = [attention_head(h, layer, i, mask, train_rng, dropout)
             for i in range(len(layer.wq))]
    return ag.linear(ag.concat(heads, axis=1), layer.wo)


def sa_sublayer(h: Tensor, layer: LayerParams, mask: Tensor | None = None,
                train_rng=None, dropout: float = 0.0) -> Tensor:
    mh = multi_head(h, layer, mask, train_rng, dropout)
    return ag.layer_norm(ag.add(h, mh), layer.attn_gain, layer.attn_bias)


def ffn(h: Tensor, layer: LayerParams, train_rng=None, dropout: float = 0.0) -> Tensor:
    out = ag.linear(ag.gelu(ag.linear(h, layer.w1, layer.b1)), layer.w2, layer.b2)
    if train_rng is not None and dropout > 0.0:
        out = ag.dropout(out, dropout, train_rng)
    return out


def bert_layer(h: Tensor, layer: LayerParams, mask: Tensor | None = None,
               train_rng=None, dropout: float = 0.0) -> Tensor:
    s = sa_sublayer(h, layer, mask, train_rng, dropout)
    f = ffn(s, layer, train_rng, dropout)
    return ag.layer_norm(ag.add(f, s), layer.ffn_gain, layer.ffn_bias)


def embed(params: EncoderParams, cfg: EncoderConfig, token_ids, segment_ids) -> Tensor:
    ids = np.asarray(token_ids, dtype=np.int64)
    segs = np.asarray(segment_ids, dtype=np.int64)
    if ids.shape != segs.shape or ids.ndim != 1:
        raise ContractError("token and segment id sequences must be 1-D and equal length")
    length = ids.shape[0]
    if length > cfg.max_len:
        raise ContractError(f"sequence length {length} exceeds max_len {cfg.max_len}; "
                            "callers must truncate before encoding")
    if length == 0:
        raise ContractError("cannot encode an empty sequence")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ContractError("token id out of vocabulary range")
    if segs.min() < 0 or segs.max() > 1:
        raise ContractError("segment ids must be 0 or 1")
    tok = ag.embedding(params.token, ids)
    pos = ag.embedding(params.position, np.arange(length))
    seg = ag.embedding(params.segment, segs)
    return ag.add(ag.add(tok, pos), seg)


def encode(params: EncoderParams, cfg: EncoderConfig, token_ids, segment_ids,
           valid_len: int | None = None, train_rng=None,
           layer_fn=None) -> Tensor:
    """Embed then run all layers; layer_fn(h, index) overrides the layer step.

    The override hook is how adapter-carrying models compose their sublayers
    without this module knowing about them.
    """
    h = embed(params, cfg, token_ids, segment_ids)
    length = h.shape[0]
    mask = padding_mask(length, length if valid_len is None else valid_len)
    rate = cfg.dropout if train_rng is not None else 0.0
    for i, layer in enumerate(params.layers):
        if layer_fn is not None:
            h = layer_fn(h, i)
        else:
            h = bert_layer(h, layer, mask, train_rng, rate)
    return h


def layer_weight_count(d: int, d_ff: int) -> int:
    """Weight matrices of one layer (no biases, no layer norms): 4d² + 2·d·d_ff."""
    return 4 * d * d + 2 * d * d_ff


def param_count(cfg: EncoderConfig, convention: str = "weights_only") -> int:
    per_layer = layer_weight_count(cfg.d, cfg.d_ff)
    if convention == "weights_only":
        return cfg.n_layers * per_layer
    if convention == "full":
        extras = cfg.d_ff + cfg.d + 2 * (2 * cfg.d)
        embeddings = (cfg.vocab_size + cfg.max_len + 2) * cfg.d
        return cfg.n_layers * (per_layer + extras) + embeddings
    raise ConfigError(f"unknown counting convention {convention!r}")
