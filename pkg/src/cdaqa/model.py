"""The full QA model: encoder backbone, span heads, optional per-domain adapters.

Heads and adapter sets are keyed by domain index.  Shared-model strategies
only ever use head 0; the progressive strategy adds one head and one adapter
set per domain and routes by index at inference time.
"""

from __future__ import annotations

import hashlib

import numpy as np

from . import adapters as ad
from . import encoder as enc
from .autograd import Tensor
from .errors import ContractError
from .qa import HeadParams, PackedExample, init_head, span_logits
from .seeding import derive_rng


class QAModel:
    def __init__(self, cfg: enc.EncoderConfig, seed: int,
                 adapter_cfg: ad.AdapterConfig | None = None):
        if adapter_cfg is not None and adapter_cfg.d != cfg.d:
            raise ContractError(f"adapter width {adapter_cfg.d} does not match "
                                f"encoder width {cfg.d}")
        self.cfg = cfg
        self.seed = seed
        self.adapter_cfg = adapter_cfg
        self.encoder = enc.init_encoder(cfg, derive_rng(seed, "init", "backbone"))
        self.heads: dict[int, HeadParams] = {0: init_head(cfg.d, derive_rng(seed, "init", "head", 0))}
        self.adapters: dict[int, list[tuple[ad.AdapterParams, ad.AdapterParams]]] = {}
        self._pristine = {n: t.data.copy() for n, t in self.named_params().items()}

    # -- registry ----------------------------------------------------------

    def add_head(self, domain_idx: int) -> None:
        self.heads[domain_idx] = init_head(
            self.cfg.d, derive_rng(self.seed, "init", "head", domain_idx))

    def add_adapters(self, domain_idx: int, init_from: int | None = None) -> None:
        if self.adapter_cfg is None:
            raise ContractError("model was built without an adapter configuration")
        rng = derive_rng(self.seed, "init", "adapter", domain_idx)
        sets = [(ad.init_adapter(self.adapter_cfg, rng),
                 ad.init_adapter(self.adapter_cfg, rng))
                for _ in range(self.cfg.n_layers)]
        if init_from is not None:
            source = self.adapters[init_from]
            for (attn, ffn), (src_attn, src_ffn) in zip(sets, source):
                for dst, src in ((attn, src_attn), (ffn, src_ffn)):
                    for name, t in dst.named("x").items():
                        t.data = src.named("x")[name].data.copy()
        self.adapters[domain_idx] = sets

    def named_params(self) -> dict[str, Tensor]:
        out = self.encoder.named()
        for idx in sorted(self.heads):
            out.update(self.heads[idx].named(f"head/{idx:02d}"))
        for idx in sorted(self.adapters):
            for layer_i, (attn, ffn) in enumerate(self.adapters[idx]):
                out.update(attn.named(f"adapter/{idx:02d}/{layer_i:02d}/attn"))
                out.update(ffn.named(f"adapter/{idx:02d}/{layer_i:02d}/ffn"))
        return out

    def backbone_names(self) -> set[str]:
        return set(self.encoder.named())

    def domain_param_names(self, domain_idx: int) -> set[str]:
        names = set(self.heads[domain_idx].named(f"head/{domain_idx:02d}"))
        if domain_idx in self.adapters:
            for layer_i, (attn, ffn) in enumerate(self.adapters[domain_idx]):
                names.update(attn.named(f"adapter/{domain_idx:02d}/{layer_i:02d}/attn"))
                names.update(ffn.named(f"adapter/{domain_idx:02d}/{layer_i:02d}/ffn"))
        return names

    # -- freezing and integrity --------------------------------------------

    def set_trainable(self, names: set[str]) -> None:
        for name, t in self.named_params().items():
            t.requires_grad = name in names

    def trainable(self) -> dict[str, Tensor]:
        return {n: t for n, t in self.named_params().items() if t.requires_grad}

    def fingerprint(self, names: set[str]) -> str:
        digest = hashlib.sha256()
        params = self.named_params()
        for name in sorted(names):
            digest.update(name.encode("utf-8"))
            digest.update(params[name].data.tobytes())
        return digest.hexdigest()

    def reset_to_pristine(self) -> None:
        """Restore the as-constructed backbone and head 0."""
        params = self.named_params()
        for name, arr in self._pristine.items():
            params[name].data = arr.copy()

    # -- forward -----------------------------------------------------------

    def forward_logits(self, packed: PackedExample, domain: int = 0,
                       train_rng=None) -> tuple[Tensor, Tensor]:
        layer_fn = None
        if self.adapter_cfg is not None and domain in self.adapters:
            sets = self.adapters[domain]
            rate = self.cfg.dropout if train_rng is not None else 0.0

            def layer_fn(h, i):
                attn_a, ffn_a = sets[i]
                return ad.adapted_bl(h, self.encoder.layers[i], attn_a, ffn_a,
                                     self.adapter_cfg, mask=None,
                                     train_rng=train_rng, dropout=rate)

        h = enc.encode(self.encoder, self.cfg, packed.token_ids,
                       packed.segment_ids, train_rng=train_rng, layer_fn=layer_fn)
        if domain not in self.heads:
            raise ContractError(f"no head registered for domain index {domain}")
        return span_logits(h, self.heads[domain])

    def param_total(self, convention: str = "full") -> int:
        if convention == "full":
            return sum(t.data.size for t in self.named_params().values())
        total = enc.param_count(self.cfg, convention)
        for idx in self.adapters:
            acfg = self.adapter_cfg
            total += self.cfg.n_layers * 2 * ad.adapter_param_count(acfg, convention)
        return total
