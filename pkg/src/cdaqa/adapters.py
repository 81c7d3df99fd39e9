"""Adapter structures (PAL, BN) and their two insertion modes.

Both structures sandwich a transformation between a down projection to width
d_s and an up projection back to the host width d.  PAL's transformation is
multi-head self-attention in the d_s space (no output projection, so its
weight count is exactly 3·d_s² + 2·d_s·d); BN's is an elementwise gelu
(2·d_s·d).  Projection biases exist but are excluded from those counts.

Insertion composes with the host layer as
    INSIDE:  SA(h) = LN(Adapter(MH(h)) + h)    with Adapter(x) = path(x) + x
    ASIDE:   SA(h) = LN(MH(h) + Adapter(h) + h) with Adapter(x) = path(x)
and the same shape around the FFN.  The INSIDE pass-through keeps a
zero-initialized adapter an exact identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import encoder as enc
from .autograd import Tensor
from .errors import ConfigError
from .seeding import trunc_normal

STRUCTURES = ("PAL", "BN")
INSERTIONS = ("INSIDE", "ASIDE")

# Candidate PAL widths snap to multiples of 12: full-scale encoders run 12
# attention heads, and published adapter widths land on that grid.
PAL_WIDTH_GRID = 12


@dataclass(frozen=True)
class AdapterConfig:
    structure: str
    insertion: str
    d_s: int
    d: int
    n_heads: int = 2

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise ConfigError(f"adapter structure must be one of {STRUCTURES}")
        if self.insertion not in INSERTIONS:
            raise ConfigError(f"adapter insertion must be one of {INSERTIONS}")
        if self.d_s < 1 or self.d < 1:
            raise ConfigError("adapter widths must be positive")
        if self.structure == "PAL" and self.d_s % self.n_heads:
            raise ConfigError(f"PAL width {self.d_s} is not divisible by "
                              f"{self.n_heads} internal heads")


@dataclass
class AdapterParams:
    down_w: Tensor            # d_s x d
    down_b: Tensor            # d_s
    up_w: Tensor              # d x d_s
    up_b: Tensor              # d
    wq: list[Tensor] | None   # PAL only: per internal head, (d_s/n) x d_s
    wk: list[Tensor] | None
    wv: list[Tensor] | None

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}/down_w": self.down_w, f"{prefix}/down_b": self.down_b,
               f"{prefix}/up_w": self.up_w, f"{prefix}/up_b": self.up_b}
        if self.wq is not None:
            for h, (q, k, v) in enumerate(zip(self.wq, self.wk, self.wv)):
                out[f"{prefix}/pal/{h:02d}/wq"] = q
                out[f"{prefix}/pal/{h:02d}/wk"] = k
                out[f"{prefix}/pal/{h:02d}/wv"] = v
        return out

    def all_tensors(self) -> list[Tensor]:
        return list(self.named("a").values())


def init_adapter(cfg: AdapterConfig, rng: np.random.Generator) -> AdapterParams:
    """Down path truncated-normal, up path zero: a fresh adapter is a no-op."""
    down_w = Tensor(trunc_normal(rng, (cfg.d_s, cfg.d)), requires_grad=True)
    wq = wk = wv = None
    if cfg.structure == "PAL":
        hd = cfg.d_s // cfg.n_heads
        wq = [Tensor(trunc_normal(rng, (hd, cfg.d_s)), requires_grad=True)
              for _ in range(cfg.n_heads)]
        wk = [Tensor(trunc_normal(rng, (hd, cfg.d_s)), requires_grad=True)
              for _ in range(cfg.n_heads)]
        wv = [Tensor(trunc_normal(rng, (hd, cfg.d_s)), requires_grad=True)
              for _ in range(cfg.n_heads)]
    return AdapterParams(
        down_w=down_w,
        down_b=Tensor(np.zeros(cfg.d_s), requires_grad=True),
        up_w=Tensor(np.zeros((cfg.d, cfg.d_s)), requires_grad=True),
        up_b=Tensor(np.zeros(cfg.d), requires_grad=True),
        wq=wq, wk=wk, wv=wv,
    )


def adapter_forward(h: Tensor, params: AdapterParams, cfg: AdapterConfig,
                    mask: Tensor | None = None) -> Tensor:
    """The projection path only; insertion code adds any residuals."""
    z = ag.linear(h, params.down_w, params.down_b)
    if cfg.structure == "BN":
        t = ag.gelu(z)
    else:
        heads = []
        scale = 1.0 / np.sqrt(cfg.d_s // cfg.n_heads)
        for i in range(cfg.n_heads):
            q = ag.linear(z, params.wq[i])
            k = ag.linear(z, params.wk[i])
            v = ag.linear(z, params.wv[i])
            scores = ag.scale(ag.matmul(q, ag.transpose(k)), scale)
            if mask is not None:
                scores = ag.add(scores, mask)
            heads.append(ag.matmul(ag.softmax(scores, axis=-1), v))
        t = ag.concat(heads, axis=1)
    return ag.linear(t, params.up_w, params.up_b)


def adapted_sa(h: Tensor, layer: enc.LayerParams, adapter: AdapterParams,
               cfg: AdapterConfig, mask: Tensor | None = None,
               train_rng=None, dropout: float = 0.0) -> Tensor:
    mh = enc.multi_head(h, layer, mask, train_rng, dropout)
    if cfg.insertion == "INSIDE":
        path = adapter_forward(mh, adapter, cfg, mask)
        total = ag.add(ag.add(path, mh), h)
    else:
        path = adapter_forward(h, adapter, cfg, mask)
        total = ag.add(ag.add(mh, path), h)
    return ag.layer_norm(total, layer.attn_gain, layer.attn_bias)


def adapted_bl(h: Tensor, layer: enc.LayerParams, attn_adapter: AdapterParams,
               ffn_adapter: AdapterParams, cfg: AdapterConfig,
               mask: Tensor | None = None, train_rng=None,
               dropout: float = 0.0) -> Tensor:
    s = adapted_sa(h, layer, attn_adapter, cfg, mask, train_rng, dropout)
    f = enc.ffn(s, layer, train_rng, dropout)
    if cfg.insertion == "INSIDE":
        path = adapter_forward(f, ffn_adapter, cfg, mask)
        total = ag.add(ag.add(path, f), s)
    else:
        path = adapter_forward(s, ffn_adapter, cfg, mask)
        total = ag.add(ag.add(f, path), s)
    return ag.layer_norm(total, layer.ffn_gain, layer.ffn_bias)


def adapter_weight_count(cfg: AdapterConfig) -> int:
    """Per-instance weight count under the biasless convention."""
    if cfg.structure == "BN":
        return 2 * cfg.d_s * cfg.d
    return 3 * cfg.d_s * cfg.d_s + 2 * cfg.d_s * cfg.d


def adapter_param_count(cfg: AdapterConfig, convention: str = "weights_only") -> int:
    if convention == "weights_only":
        return adapter_weight_count(cfg)
    if convention == "full":
        return adapter_weight_count(cfg) + cfg.d_s + cfg.d
    raise ConfigError(f"unknown counting convention {convention!r}")


def model_adapter_budget(cfg: AdapterConfig, n_layers: int,
                         convention: str = "weights_only") -> int:
    """Whole-model budget: two instances (attention + FFN site) per layer."""
    return n_layers * 2 * adapter_param_count(cfg, convention)


def match_pal_width(bn_ds: int, d: int, grid: int = PAL_WIDTH_GRID) -> int:
    """PAL width whose weight count best matches BN at width bn_ds.

    Scans multiples of ``grid`` up to 4x the BN width and minimizes the
    absolute count difference; ties go to the smaller width.
    """
    if bn_ds < 1:
        raise ConfigError("BN width must be at least 1")
    target = 2 * bn_ds * d
    hi = max(4 * bn_ds, grid)
    best = grid
    best_diff = None
    for ds in range(grid, hi + 1, grid):
        diff = abs(3 * ds * ds + 2 * ds * d - target)
        if best_diff is None or diff < best_diff:
            best, best_diff = ds, diff
    return best
