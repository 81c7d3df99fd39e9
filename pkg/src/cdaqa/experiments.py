"""Experiment orchestration: sequences, curves, transfer, orders, sweeps.

Every command returns a ReportBundle whose numbers are keyed by run id, so a
report row can always be traced back to the training log that produced it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass, field

from .adapters import AdapterConfig, model_adapter_budget
from .continual import (ContinualState, ResultsMatrix, StrategyConfig,
                        TrainConfig, run_sequence)
from .data import DomainData, SyntheticConfig, load_domain_dir, make_synthetic_cda
from .data import build_vocab
from .encoder import EncoderConfig
from .errors import ConfigError
from .model import QAModel
from .qa import evaluate_examples, pack_dataset

ORDER_POLICIES = ("given", "ascending", "descending")
SWEEP_SIZES = (32, 64, 128, 256, 384, 512)
FULL_SCALE_WIDTH = 768


@dataclass(frozen=True)
class ModelSpec:
    """Encoder dimensions; vocabulary size is filled in from the data."""
    d: int = 64
    n_heads: int = 2
    d_ff: int = 128
    n_layers: int = 2
    max_len: int = 64
    dropout: float = 0.1


@dataclass(frozen=True)
class ExperimentSpec:
    source: str | SyntheticConfig
    strategies: tuple[StrategyConfig, ...]
    train: TrainConfig = TrainConfig()
    model: ModelSpec = ModelSpec()
    order: str | tuple[str, ...] = "given"
    out_dir: str | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.strategies:
            raise ConfigError("an experiment needs at least one strategy")
        if isinstance(self.order, str) and self.order not in ORDER_POLICIES:
            raise ConfigError(f"unknown order policy {self.order!r}; pick one of "
                              f"{ORDER_POLICIES} or give an explicit name list")
        for s in self.strategies:
            if s.adapter is not None and s.adapter.d != self.model.d:
                raise ConfigError(f"adapter host width {s.adapter.d} does not "
                                  f"match model width {self.model.d}")


@dataclass
class ReportBundle:
    kind: str
    meta: dict
    matrices: dict[str, ResultsMatrix] = field(default_factory=dict)
    curves: dict[str, list[dict]] = field(default_factory=dict)
    tables: dict[str, list[dict]] = field(default_factory=dict)
    logs: dict[str, list[dict]] = field(default_factory=dict)
    predictions: dict[str, dict[str, list[dict]]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "meta": self.meta,
            "matrices": {rid: m.to_dict() for rid, m in self.matrices.items()},
            "curves": self.curves,
            "tables": self.tables,
        }


def spec_to_dict(spec: ExperimentSpec) -> dict:
    """Full resolved configuration, embedded in every report."""
    def plain(x):
        if dataclasses.is_dataclass(x) and not isinstance(x, type):
            return {k: plain(v) for k, v in dataclasses.asdict(x).items()}
        if isinstance(x, tuple):
            return [plain(v) for v in x]
        return x

    out = {
        "source": plain(spec.source) if isinstance(spec.source, SyntheticConfig)
        else str(spec.source),
        "synthetic": isinstance(spec.source, SyntheticConfig),
        "strategies": [plain(s) for s in spec.strategies],
        "train": plain(spec.train),
        "model": plain(spec.model),
        "order": list(spec.order) if isinstance(spec.order, tuple) else spec.order,
        "seed": spec.seed,
    }
    return out


def config_hash(spec: ExperimentSpec) -> str:
    payload = json.dumps(spec_to_dict(spec), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def load_domains(spec: ExperimentSpec) -> list[DomainData]:
    if isinstance(spec.source, SyntheticConfig):
        return make_synthetic_cda(spec.source, seed=spec.seed)
    return load_domain_dir(spec.source)


def order_names(sized: list[tuple[str, int]], order) -> list[str]:
    """Resolve an order policy or explicit name list against (name, size) pairs."""
    if order == "given":
        return [n for n, _ in sized]
    if order == "ascending":
        return [n for n, s in sorted(sized, key=lambda p: (p[1], p[0]))]
    if order == "descending":
        return [n for n, s in sorted(sized, key=lambda p: (-p[1], p[0]))]
    names = [n for n, _ in sized]
    wanted = list(order)
    if sorted(wanted) != sorted(names):
        raise ConfigError(f"order {wanted} must be a permutation of {sorted(names)}")
    return wanted


@dataclass
class PreparedData:
    """Domains packed once; reorderings reuse the same packed examples."""
    vocab_size: int
    encoder: EncoderConfig
    domains: list[tuple[str, list, list]]    # (name, packed train, packed test)

    def ordered(self, order) -> list[tuple[str, list, list]]:
        lookup = {name: trio for trio in self.domains for name in (trio[0],)}
        sized = [(name, len(train)) for name, train, _ in self.domains]
        return [lookup[n] for n in order_names(sized, order)]


def prepare(spec: ExperimentSpec) -> PreparedData:
    domains = load_domains(spec)
    vocab = build_vocab(domains)
    m = spec.model
    ecfg = EncoderConfig(d=m.d, n_heads=m.n_heads, d_ff=m.d_ff,
                         n_layers=m.n_layers, vocab_size=vocab.size,
                         max_len=m.max_len, dropout=m.dropout)
    packed = []
    for dom in domains:
        train = pack_dataset(dom.train.examples, vocab, ecfg.max_len)
        test = pack_dataset(dom.test.examples, vocab, ecfg.max_len,
                            keep_truncated=True)
        packed.append((dom.name, train, test))
    return PreparedData(vocab_size=vocab.size, encoder=ecfg, domains=packed)


def _tcfg(spec: ExperimentSpec) -> TrainConfig:
    return dataclasses.replace(spec.train, seed=spec.seed)


def run_one(spec: ExperimentSpec, data: PreparedData, strategy: StrategyConfig,
            run_id: str, bundle: ReportBundle, order=None, hook_factory=None):
    """One full continual run; results land in the bundle under run_id."""
    prepared = data.ordered(spec.order if order is None else order)
    model = QAModel(data.encoder, seed=spec.seed, adapter_cfg=strategy.adapter)
    state = ContinualState(model=model, strategy=strategy)
    hook = hook_factory(state, prepared, run_id) if hook_factory else None
    matrix, logs, step_preds = run_sequence(state, prepared, _tcfg(spec),
                                            epoch_hook=hook)
    bundle.matrices[run_id] = matrix
    bundle.logs[run_id] = logs
    bundle.predictions[run_id] = step_preds[-1]
    return matrix


def _new_bundle(kind: str, spec: ExperimentSpec) -> ReportBundle:
    meta = {"seed": spec.seed, "config_hash": config_hash(spec),
            "config": spec_to_dict(spec), "kind": kind}
    return ReportBundle(kind=kind, meta=meta)


def _finish(bundle: ReportBundle, started: float) -> ReportBundle:
    bundle.meta["wall_time_s"] = round(time.perf_counter() - started, 3)
    return bundle


def _strategy_run_id(i: int, s: StrategyConfig) -> str:
    return f"run-{i:02d}-{s.kind.lower()}"


def cmd_run(spec: ExperimentSpec) -> ReportBundle:
    """Train every strategy over the same ordered sequence; matrix each."""
    started = time.perf_counter()
    data = prepare(spec)
    bundle = _new_bundle("run", spec)
    for i, strategy in enumerate(spec.strategies):
        run_one(spec, data, strategy, _strategy_run_id(i, strategy), bundle)
    return _finish(bundle, started)


def cmd_forgetting_curve(spec: ExperimentSpec, tracked: int = 0) -> ReportBundle:
    """F1 on one tracked domain at every epoch boundary from its training on."""
    started = time.perf_counter()
    data = prepare(spec)
    n_domains = len(data.domains)
    if not 0 <= tracked < n_domains:
        raise ConfigError(f"tracked domain index {tracked} out of range "
                          f"(have {n_domains} domains)")
    bundle = _new_bundle("forgetting-curve", spec)

    def hook_factory(state, prepared, run_id):
        name, _, test = prepared[tracked]
        series = bundle.curves.setdefault(run_id, [])
        counter = {"global_epoch": 0}

        def hook(domain_index: int, epoch: int):
            counter["global_epoch"] += 1
            if domain_index < tracked:
                return
            route = state.route(tracked)
            em, f1, _ = evaluate_examples(
                lambda p: state.model.forward_logits(p, domain=route),
                test, _tcfg(spec).max_answer_length)
            series.append({"run_id": run_id, "tracked": name,
                           "during": prepared[domain_index][0],
                           "domain_pos": domain_index, "epoch": epoch,
                           "global_epoch": counter["global_epoch"],
                           "em": em, "f1": f1})
        return hook

    for i, strategy in enumerate(spec.strategies):
        run_one(spec, data, strategy, _strategy_run_id(i, strategy), bundle,
                hook_factory=hook_factory)
    return _finish(bundle, started)


def _prog_strategy(spec: ExperimentSpec) -> StrategyConfig:
    for s in spec.strategies:
        if s.kind == "PROG":
            return s
    raise ConfigError("this experiment needs a PROG strategy to take the "
                      "adapter configuration from")


def cmd_forward_transfer(spec: ExperimentSpec) -> ReportBundle:
    """Progressive with and without adapter warm start, against per-domain
    individual training; per-domain scores are each domain's first-seen row."""
    started = time.perf_counter()
    data = prepare(spec)
    prog = _prog_strategy(spec)
    variants = [
        ("PROG", dataclasses.replace(prog, init_from_prev=True)),
        ("PROG_no_init", dataclasses.replace(prog, init_from_prev=False)),
        ("INDIVIDUAL", StrategyConfig(kind="INDIVIDUAL")),
    ]
    bundle = _new_bundle("forward-transfer", spec)
    rows, overall_rows = [], []
    for i, (label, strategy) in enumerate(variants):
        run_id = f"transfer-{i:02d}-{label.lower().replace('_', '-')}"
        matrix = run_one(spec, data, strategy, run_id, bundle)
        f1s = []
        for name in matrix.domains:
            step = matrix.domains.index(name) + 1
            em, f1 = matrix.cell(step, name)
            rows.append({"run_id": run_id, "variant": label, "domain": name,
                         "em": em, "f1": f1})
            f1s.append(f1)
        overall_rows.append({"run_id": run_id, "variant": label,
                             "overall": math.fsum(f1s)})
    bundle.tables["forward_transfer"] = rows
    bundle.tables["forward_transfer_overall"] = overall_rows
    return _finish(bundle, started)


def cmd_order_robustness(spec: ExperimentSpec, orders=None) -> ReportBundle:
    """Rerun every strategy under each domain order; report final overalls."""
    started = time.perf_counter()
    data = prepare(spec)
    if orders is None:
        orders = list(ORDER_POLICIES)
    bundle = _new_bundle("order-robustness", spec)
    rows = []
    for oi, order in enumerate(orders):
        label = order if isinstance(order, str) else ">".join(order)
        for i, strategy in enumerate(spec.strategies):
            run_id = f"order-{oi:02d}-{i:02d}-{strategy.kind.lower()}"
            matrix = run_one(spec, data, strategy, run_id, bundle, order=order)
            rows.append({"run_id": run_id, "order": label,
                         "strategy": strategy.kind,
                         "overall": matrix.rows[-1]["overall"]})
    bundle.tables["order_robustness"] = rows
    return _finish(bundle, started)


def scaled_adapter_size(requested: int, d: int) -> int:
    """Published sweep sizes assume width 768; scale down for smaller models."""
    return max(4, round(requested * d / FULL_SCALE_WIDTH))


def cmd_adapter_sweep(spec: ExperimentSpec, sizes=None) -> ReportBundle:
    """One progressive run per adapter width."""
    started = time.perf_counter()
    data = prepare(spec)
    prog = _prog_strategy(spec)
    if sizes is None:
        sizes = list(SWEEP_SIZES)
    bundle = _new_bundle("adapter-sweep", spec)
    rows, overall_rows = [], []
    for i, requested in enumerate(sizes):
        d_s = scaled_adapter_size(requested, spec.model.d)
        acfg = dataclasses.replace(prog.adapter, d_s=d_s, d=spec.model.d)
        strategy = dataclasses.replace(prog, adapter=acfg)
        run_id = f"sweep-{i:02d}-ds{d_s:03d}"
        matrix = run_one(spec, data, strategy, run_id, bundle)
        f1s = []
        for name in matrix.domains:
            em, f1 = matrix.rows[-1]["scores"][name]
            rows.append({"run_id": run_id, "requested": requested, "d_s": d_s,
                         "domain": name, "em": em, "f1": f1})
            f1s.append(f1)
        overall_rows.append({
            "run_id": run_id, "requested": requested, "d_s": d_s,
            "overall": math.fsum(f1s),
            "adapter_params": model_adapter_budget(acfg, spec.model.n_layers),
        })
    bundle.tables["adapter_sweep"] = rows
    bundle.tables["adapter_sweep_overall"] = overall_rows
    return _finish(bundle, started)
