"""Sequential training engine and its four strategies.

Strategies:
  BASE        fine-tune every parameter on each arriving domain.
  REG         BASE plus a quadratic penalty sum_i F_i (theta_i - prev_i)^2
              anchored to the previous domain's solution, Fisher-weighted.
              No penalty while training the first domain; afterwards the
              engine keeps exactly two parameter sets (live + snapshot).
  PROG        frozen backbone; each domain gets fresh adapters and a fresh
              head, with adapters optionally initialized from the previous
              domain's; evaluation routes by domain label.
  INDIVIDUAL  reset to the pristine initialization for every domain and
              fine-tune on that domain alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .adapters import AdapterConfig
from .autograd import Tensor
from .errors import ConfigError, ContractError, DataError, InvariantViolation, ShapeError
from .model import QAModel
from .optim import Adam, warmup_linear
from .qa import PackedExample, evaluate_examples, qa_loss
from .seeding import derive_rng

STRATEGY_KINDS = ("BASE", "REG", "PROG", "INDIVIDUAL")


@dataclass(frozen=True)
class StrategyConfig:
    kind: str
    lam: float = 1.0
    adapter: AdapterConfig | None = None
    init_from_prev: bool = True
    fisher_samples: int = 1000

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigError(f"strategy must be one of {STRATEGY_KINDS}")
        if self.lam < 0:
            raise ConfigError("lambda must be nonnegative")
        if (self.kind == "PROG") != (self.adapter is not None):
            raise ConfigError("an adapter configuration is required for PROG "
                              "and meaningless otherwise")
        if self.fisher_samples < 1:
            raise ConfigError("fisher_samples must be positive")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 3
    batch_size: int = 16
    warmup_fraction: float = 0.10
    seed: int = 0
    max_answer_length: int = 30
    optimizer: str = "adam"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("learning rate, epochs and batch size must be positive")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction must lie in [0, 1)")
        if self.max_answer_length < 1:
            raise ConfigError("max_answer_length must be positive")
        if self.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")


@dataclass
class ContinualState:
    model: QAModel
    strategy: StrategyConfig
    seen: list[str] = field(default_factory=list)
    prev_params: dict[str, np.ndarray] | None = None
    fisher: dict[str, np.ndarray] | None = None

    @property
    def domain_index(self) -> int:
        return len(self.seen)

    def route(self, seen_position: int) -> int:
        """Head/adapter index used for a domain at the given arrival position."""
        return seen_position if self.strategy.kind == "PROG" else 0


def fisher_diagonal(model: QAModel, packed: list[PackedExample], sample_count: int,
                    domain: int = 0) -> dict[str, np.ndarray]:
    """Empirical Fisher: mean squared gradient of the loss at the gold labels."""
    if not packed:
        raise DataError("cannot estimate Fisher information from an empty dataset")
    if sample_count < 1:
        raise ContractError("sample_count must be positive")
    named = model.trainable()
    acc = {n: np.zeros_like(t.data) for n, t in named.items()}
    subset = packed[:min(sample_count, len(packed))]
    for p in subset:
        with ag.record() as g:
            start, end = model.forward_logits(p, domain=domain)
            loss = qa_loss(start, end, p.gold, p.context_mask)
        grads = ag.backward(loss, g)
        for n, t in named.items():
            if t in grads:
                acc[n] += grads[t] * grads[t]
            t.grad = None
    return {n: a / len(subset) for n, a in acc.items()}


def ewc_penalty(current: dict[str, Tensor], prev: dict[str, np.ndarray],
                fisher: dict[str, np.ndarray]) -> Tensor:
    """sum_i F_i (theta_i - prev_i)^2 over every anchored parameter, in-graph."""
    if set(fisher) != set(prev):
        raise ShapeError("Fisher and snapshot cover different parameters")
    total: Tensor | None = None
    for name in sorted(prev):
        if name not in current:
            raise ShapeError(f"anchored parameter {name!r} missing from the model")
        t = current[name]
        if t.data.shape != prev[name].shape or t.data.shape != fisher[name].shape:
            raise ShapeError(f"shape mismatch for anchored parameter {name!r}")
        diff = ag.sub(t, ag.constant(prev[name]))
        term = ag.sum_all(ag.mul(ag.constant(fisher[name]), ag.mul(diff, diff)))
        total = term if total is None else ag.add(total, term)
    if total is None:
        raise ShapeError("no anchored parameters")
    return total


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _prepare_trainable(state: ContinualState, t: int) -> None:
    model, kind = state.model, state.strategy.kind
    if kind == "PROG":
        if t > 0:
            model.add_head(t)
        init_from = t - 1 if (state.strategy.init_from_prev and t > 0) else None
        model.add_adapters(t, init_from=init_from)
        model.set_trainable(model.domain_param_names(t))
    elif kind == "INDIVIDUAL":
        model.reset_to_pristine()
        model.set_trainable(model.backbone_names() | model.domain_param_names(0))
    else:
        model.set_trainable(model.backbone_names() | model.domain_param_names(0))


def train_domain(state: ContinualState, domain_name: str,
                 packed_train: list[PackedExample], tcfg: TrainConfig,
                 epoch_hook=None) -> list[dict]:
    """Train the next domain in sequence; returns per-batch log records."""
    if not packed_train:
        raise DataError(f"domain {domain_name!r} has no usable training examples")
    t = state.domain_index
    _prepare_trainable(state, t)
    model, strat = state.model, state.strategy

    frozen_names = set(model.named_params()) - set(model.trainable())
    frozen_before = model.fingerprint(frozen_names)

    named_trainable = model.trainable()
    params = list(named_trainable.values())
    opt = Adam(params)
    n = len(packed_train)
    steps_per_epoch = math.ceil(n / tcfg.batch_size)
    schedule = warmup_linear(tcfg.learning_rate, tcfg.epochs * steps_per_epoch,
                             tcfg.warmup_fraction)
    # streams keyed by domain identity: reordering or inserting domains leaves
    # every other domain's batch order and dropout draws untouched
    drop_rng = derive_rng(tcfg.seed, "dropout", domain_name)
    anchored = strat.kind == "REG" and state.prev_params is not None
    route = state.route(t)
    log: list[dict] = []
    step = 0
    for epoch in range(tcfg.epochs):
        batch_rng = derive_rng(tcfg.seed, "batch-order", domain_name, epoch)
        for batch in _batches(n, tcfg.batch_size, batch_rng):
            with ag.record() as g:
                losses = []
                for i in batch:
                    p = packed_train[i]
                    start, end = model.forward_logits(p, domain=route,
                                                      train_rng=drop_rng)
                    losses.append(qa_loss(start, end, p.gold, p.context_mask))
                batch_loss = ag.scale(ag.add_n(losses), 1.0 / len(batch))
                penalty = 0.0
                if anchored:
                    pen = ewc_penalty(named_trainable, state.prev_params, state.fisher)
                    penalty = pen.item()
                    batch_loss = ag.add(batch_loss, ag.scale(pen, strat.lam))
                total = batch_loss.item()
            ag.backward(batch_loss, g)
            opt.step(schedule[step])
            log.append({"domain": domain_name, "step": step, "epoch": epoch,
                        "loss": total, "penalty": penalty, "lr": schedule[step]})
            step += 1
        if epoch_hook is not None:
            epoch_hook(domain_index=t, epoch=epoch)

    if model.fingerprint(frozen_names) != frozen_before:
        raise InvariantViolation("a frozen parameter changed during training "
                                 f"of domain {domain_name!r}")
    if strat.kind == "REG":
        state.prev_params = {n2: t2.data.copy() for n2, t2 in named_trainable.items()}
        state.fisher = fisher_diagonal(model, packed_train, strat.fisher_samples,
                                       domain=route)
    state.seen.append(domain_name)
    return log


def evaluate_all_seen(state: ContinualState,
                      packed_tests: list[tuple[str, list[PackedExample]]],
                      max_answer_length: int = 30):
    """Score every seen domain; progressive models route by domain label."""
    scores: dict[str, tuple[float, float]] = {}
    predictions: dict[str, list[dict]] = {}
    for pos, (name, packed) in enumerate(packed_tests[:state.domain_index]):
        route = state.route(pos)
        em, f1, recs = evaluate_examples(
            lambda p: state.model.forward_logits(p, domain=route),
            packed, max_answer_length)
        scores[name] = (em, f1)
        predictions[name] = recs
    return scores, predictions


class ResultsMatrix:
    """Lower-triangular (training step x domain) score table."""

    def __init__(self, domains: list[str]):
        if len(set(domains)) != len(domains):
            raise ConfigError("domain names must be unique")
        self.domains = list(domains)
        self.rows: list[dict] = []

    def add_row(self, scores: dict[str, tuple[float, float]]) -> None:
        step = len(self.rows) + 1
        expected = set(self.domains[:step])
        if set(scores) != expected:
            raise ContractError(f"row {step} must cover exactly the first {step} "
                                "domains")
        overall = math.fsum(scores[d][1] for d in self.domains[:step])
        self.rows.append({"step": step, "scores": dict(scores), "overall": overall})

    def cell(self, step: int, domain: str) -> tuple[float, float] | None:
        return self.rows[step - 1]["scores"].get(domain)

    def first_seen_f1(self, domain: str) -> float:
        return self.rows[self.domains.index(domain)]["scores"][domain][1]

    def rel_change(self, step: int, domain: str) -> float | None:
        """Relative F1 change vs the domain's first-seen (diagonal) score."""
        idx = self.domains.index(domain)
        if step - 1 == idx:
            return None
        base = self.first_seen_f1(domain)
        if base == 0.0:
            return None
        return (self.rows[step - 1]["scores"][domain][1] - base) / base * 100.0

    def to_records(self) -> list[dict]:
        out = []
        for row in self.rows:
            for domain in self.domains[:row["step"]]:
                em, f1 = row["scores"][domain]
                out.append({"step": row["step"], "domain": domain, "em": em,
                            "f1": f1, "overall": row["overall"],
                            "rel_change": self.rel_change(row["step"], domain)})
        return out

    def to_dict(self) -> dict:
        return {"domains": self.domains, "rows": self.rows}

    @classmethod
    def from_dict(cls, payload: dict) -> "ResultsMatrix":
        m = cls(list(payload["domains"]))
        for row in payload["rows"]:
            m.add_row({k: tuple(v) for k, v in row["scores"].items()})
        return m


def run_sequence(state: ContinualState,
                 prepared: list[tuple[str, list[PackedExample], list[PackedExample]]],
                 tcfg: TrainConfig, epoch_hook=None):
    """Train domains in order, scoring all seen domains after each.

    Returns (matrix, logs, predictions_by_step).  Training data for a domain
    is released once that domain has been trained; only test sets persist.
    """
    if not prepared:
        raise ConfigError("need at least one domain")
    names = [name for name, _, _ in prepared]
    matrix = ResultsMatrix(names)
    tests = [(name, test) for name, _, test in prepared]
    trains: list[list[PackedExample] | None] = [train for _, train, _ in prepared]
    logs: list[dict] = []
    predictions = []
    for t, name in enumerate(names):
        logs.extend(train_domain(state, name, trains[t], tcfg, epoch_hook))
        trains[t] = None   # previous domains' training data is out of reach
        scores, preds = evaluate_all_seen(state, tests, tcfg.max_answer_length)
        matrix.add_row(scores)
        predictions.append(preds)
    return matrix, logs, predictions
