"""Command-line front end.

Configuration comes from a JSON file (--config) whose keys match the flag
names, overridden by any flag given explicitly.  The default output
directory can be set with the CDAQA_OUT environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .adapters import AdapterConfig
from .continual import ResultsMatrix, StrategyConfig, TrainConfig
from .data import (SyntheticConfig, build_cda_c, build_cda_q, dataset_stats,
                   load_jsonl, records_to_examples, save_domain_dir)
from .errors import ConfigError, DataError, InvariantViolation
from .experiments import (ExperimentSpec, ModelSpec, ReportBundle,
                          cmd_adapter_sweep, cmd_forgetting_curve,
                          cmd_forward_transfer, cmd_order_robustness, cmd_run)
from .reports import FORMATS, write_report
from .seeding import derive_rng

OUT_ENV = "CDAQA_OUT"

DEFAULTS = {
    "data": None, "synthetic": False, "out": None, "format": "csv",
    "figures": True,
    "strategy": "base", "order": "given", "lam": 1.0,
    "adapter_structure": "bn", "adapter_insertion": "inside",
    "adapter_dim": None, "adapter_init": True,
    "lr": 1e-3, "epochs": 3, "batch_size": 16, "warmup": 0.10, "seed": 0,
    "max_answer_length": 30,
    "dim": 64, "heads": 2, "ff_dim": 128, "layers": 2, "max_len": 64,
    "dropout_rate": 0.1,
    "domains": 3, "train_size": 200, "test_size": 100, "slots": 3,
    "entities": 40, "values": 30, "synthetic_mode": "interference",
    "tracked": 0, "sizes": "32,64,128,256,384,512",
    "orders": "given,ascending,descending",
    "n_train": 500, "test_fraction": 0.25, "mode": None,
}


def _experiment_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("experiment")
    g.add_argument("--config", help="JSON file with flag-named keys")
    g.add_argument("--data", help="domain directory produced by split")
    g.add_argument("--synthetic", action="store_true", default=None,
                   help="generate the synthetic interference benchmark")
    g.add_argument("--strategy",
                   help="comma list from base,reg,prog,individual")
    g.add_argument("--order",
                   help="given | ascending | descending | comma list of names")
    g.add_argument("--lambda", dest="lam", type=float,
                   help="anchoring penalty weight")
    g.add_argument("--adapter-structure", choices=["pal", "bn"])
    g.add_argument("--adapter-insertion", choices=["inside", "aside"])
    g.add_argument("--adapter-dim", type=int, help="adapter bottleneck width")
    g.add_argument("--no-adapter-init", dest="adapter_init",
                   action="store_false", default=None,
                   help="fresh adapters instead of warm start from previous")
    g.add_argument("--lr", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--warmup", type=float, help="warmup fraction of steps")
    g.add_argument("--seed", type=int)
    g.add_argument("--max-answer-length", type=int)
    g.add_argument("--out", help="output directory for reports")
    g.add_argument("--format", choices=list(FORMATS))
    g.add_argument("--no-figures", dest="figures", action="store_false",
                   default=None)
    m = p.add_argument_group("model")
    m.add_argument("--dim", type=int, help="hidden width")
    m.add_argument("--heads", type=int)
    m.add_argument("--ff-dim", type=int)
    m.add_argument("--layers", type=int)
    m.add_argument("--max-len", type=int)
    m.add_argument("--dropout-rate", type=float)
    s = p.add_argument_group("synthetic data")
    s.add_argument("--domains", type=int)
    s.add_argument("--train-size", type=int)
    s.add_argument("--test-size", type=int)
    s.add_argument("--slots", type=int)
    s.add_argument("--entities", type=int)
    s.add_argument("--values", type=int)
    s.add_argument("--synthetic-mode", choices=["interference", "cued"])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cdaqa",
        description="Continual domain adaptation lab for extractive QA")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("split", help="cut source files into domain sequences")
    sp.add_argument("--data", nargs="+", required=True,
                    help="source JSONL files (header line carries the tag)")
    sp.add_argument("--mode", choices=["cda-q", "cda-c"], required=True)
    sp.add_argument("--out", help="directory for the domain files")
    sp.add_argument("--n-train", type=int,
                    help="per-domain training cap for cda-c")
    sp.add_argument("--test-fraction", type=float)
    sp.add_argument("--seed", type=int)

    for name, help_text in [
            ("run", "train strategies over a domain sequence"),
            ("forgetting-curve", "track one domain's F1 across the sequence"),
            ("forward-transfer", "warm-start value of progressive adapters"),
            ("order-robustness", "rerun under permuted domain orders"),
            ("adapter-sweep", "progressive runs across adapter widths")]:
        q = sub.add_parser(name, help=help_text)
        _experiment_flags(q)
        if name == "forgetting-curve":
            q.add_argument("--tracked", type=int,
                           help="index of the domain to follow")
        if name == "order-robustness":
            q.add_argument("--orders",
                           help="comma list of order policies to compare")
        if name == "adapter-sweep":
            q.add_argument("--sizes", help="comma list of adapter widths")

    rp = sub.add_parser("report", help="re-render files from a saved bundle")
    rp.add_argument("--bundle", required=True, help="path to bundle.json")
    rp.add_argument("--out")
    rp.add_argument("--format", choices=list(FORMATS))
    rp.add_argument("--no-figures", dest="figures", action="store_false",
                    default=None)
    return p


def resolve(args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags"""
    resolved = dict(DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(loaded)
    for key, value in vars(args).items():
        if key in DEFAULTS and value is not None:
            resolved[key] = value
    return resolved


def _adapter_config(r: dict) -> AdapterConfig:
    d_s = r["adapter_dim"]
    if d_s is None:
        d_s = max(4, r["dim"] // 3)
    return AdapterConfig(structure=r["adapter_structure"].upper(),
                         insertion=r["adapter_insertion"].upper(),
                         d_s=d_s, d=r["dim"])


def _strategies(r: dict) -> tuple[StrategyConfig, ...]:
    out = []
    for token in str(r["strategy"]).split(","):
        kind = token.strip().lower()
        if kind == "base":
            out.append(StrategyConfig(kind="BASE"))
        elif kind == "reg":
            out.append(StrategyConfig(kind="REG", lam=r["lam"]))
        elif kind == "prog":
            out.append(StrategyConfig(kind="PROG", adapter=_adapter_config(r),
                                      init_from_prev=r["adapter_init"]))
        elif kind == "individual":
            out.append(StrategyConfig(kind="INDIVIDUAL"))
        else:
            raise ConfigError(f"unknown strategy {token.strip()!r}; expected "
                              "base, reg, prog or individual")
    return tuple(out)


def _order(r: dict):
    order = r["order"]
    if isinstance(order, list):
        return tuple(order)
    if order in ("given", "ascending", "descending"):
        return order
    return tuple(s.strip() for s in str(order).split(","))


def build_spec(r: dict, need_prog: bool = False) -> ExperimentSpec:
    if r["synthetic"] and r["data"]:
        raise ConfigError("give either --data or --synthetic, not both")
    if r["synthetic"]:
        source = SyntheticConfig(
            n_domains=r["domains"], n_train=r["train_size"],
            n_test=r["test_size"], n_slots=r["slots"],
            n_entities=r["entities"], n_values=r["values"],
            mode=r["synthetic_mode"])
    elif r["data"]:
        source = r["data"]
    else:
        raise ConfigError("no dataset: give --data DIR or --synthetic")
    strategies = _strategies(r)
    if need_prog and not any(s.kind == "PROG" for s in strategies):
        strategies = strategies + (StrategyConfig(
            kind="PROG", adapter=_adapter_config(r),
            init_from_prev=r["adapter_init"]),)
    train = TrainConfig(learning_rate=r["lr"], epochs=r["epochs"],
                        batch_size=r["batch_size"],
                        warmup_fraction=r["warmup"], seed=r["seed"],
                        max_answer_length=r["max_answer_length"])
    model = ModelSpec(d=r["dim"], n_heads=r["heads"], d_ff=r["ff_dim"],
                      n_layers=r["layers"], max_len=r["max_len"],
                      dropout=r["dropout_rate"])
    return ExperimentSpec(source=source, strategies=strategies, train=train,
                          model=model, order=_order(r),
                          out_dir=r["out"], seed=r["seed"])


def out_dir_for(r: dict, kind: str) -> Path:
    if r["out"]:
        return Path(r["out"])
    root = os.environ.get(OUT_ENV, "cdaqa-reports")
    return Path(root) / kind


def _emit(bundle, r: dict, kind: str) -> int:
    out = out_dir_for(r, kind)
    written = write_report(bundle, out, fmt=r["format"], figures=r["figures"])
    line = f"{kind}: wrote {len(written)} files to {out}"
    wall = bundle.meta.get("wall_time_s")
    if wall is not None:
        line += f" (wall time {wall:.3f}s)"
    print(line)
    return 0


def _parse_sizes(text) -> list[int]:
    try:
        return [int(tok) for tok in str(text).split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"bad size list {text!r}; expected comma ints")


def _parse_orders(text):
    if isinstance(text, list):
        return text
    return [tok.strip() for tok in str(text).split(",") if tok.strip()]


def cmd_split(args: argparse.Namespace) -> int:
    r = resolve(args)
    seed = r["seed"]
    counters: dict = {}
    if r["mode"] == "cda-q":
        examples = []
        for path in args.data:
            records = load_jsonl(path, counters)
            examples.extend(records_to_examples(records, domain="source",
                                                counters=counters))
        domains = build_cda_q(examples, test_fraction=r["test_fraction"],
                              seed=seed)
    else:
        collections: dict = {}
        for path in args.data:
            records = load_jsonl(path, counters)
            if not records:
                continue
            tag = records[0].source_tag or Path(path).stem
            examples = records_to_examples(records, domain=tag,
                                           counters=counters)
            rng = derive_rng(seed, "cli-split", tag)
            order = rng.permutation(len(examples))
            n_test = max(1, int(round(len(examples) * r["test_fraction"])))
            test = [examples[i] for i in order[:n_test]]
            train = [examples[i] for i in order[n_test:]]
            prev_train, prev_test = collections.get(tag, ([], []))
            collections[tag] = (prev_train + train, prev_test + test)
        domains = build_cda_c(collections, n_train=r["n_train"], seed=seed)
    kept = [d for d in domains
            if d.train.examples and d.test.examples]
    for d in domains:
        if d not in kept:
            print(f"note: dropping domain {d.name!r} (no usable examples)")
    domains = kept
    if not domains:
        raise DataError("every domain came out empty; check the input files")
    out = out_dir_for(r, "domains")
    save_domain_dir(domains, out)
    for dom in domains:
        tr, te = dataset_stats(dom.train), dataset_stats(dom.test)
        print(f"{dom.name}: train={tr['count']} test={te['count']} "
              f"mean_question_words={tr['mean_question_words']:.1f}")
    dropped = {k: v for k, v in counters.items() if v}
    if dropped:
        print(f"counters: {dropped}")
    print(f"split: wrote {len(domains)} domains to {out}")
    return 0


def cmd_report_files(args: argparse.Namespace) -> int:
    r = resolve(args)
    bundle_path = Path(args.bundle)
    try:
        payload = json.loads(bundle_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"bundle not found: {bundle_path}")
    except json.JSONDecodeError as e:
        raise DataError(f"bundle is not valid JSON: {e}")
    bundle = ReportBundle(kind=payload["kind"], meta=payload["meta"])
    bundle.matrices = {rid: ResultsMatrix.from_dict(m)
                       for rid, m in payload["matrices"].items()}
    bundle.curves = payload.get("curves", {})
    bundle.tables = payload.get("tables", {})
    out = Path(r["out"]) if r["out"] else bundle_path.parent / "rendered"
    written = write_report(bundle, out, fmt=r["format"], figures=r["figures"])
    print(f"report: wrote {len(written)} files to {out}")
    return 0


def dispatch(args: argparse.Namespace) -> int:
    if args.command == "split":
        return cmd_split(args)
    if args.command == "report":
        return cmd_report_files(args)
    r = resolve(args)
    if args.command == "run":
        return _emit(cmd_run(build_spec(r)), r, "run")
    if args.command == "forgetting-curve":
        spec = build_spec(r)
        return _emit(cmd_forgetting_curve(spec, tracked=r["tracked"]),
                     r, "forgetting-curve")
    if args.command == "forward-transfer":
        spec = build_spec(r, need_prog=True)
        return _emit(cmd_forward_transfer(spec), r, "forward-transfer")
    if args.command == "order-robustness":
        spec = build_spec(r)
        return _emit(cmd_order_robustness(spec, orders=_parse_orders(r["orders"])),
                     r, "order-robustness")
    if args.command == "adapter-sweep":
        spec = build_spec(r, need_prog=True)
        return _emit(cmd_adapter_sweep(spec, sizes=_parse_sizes(r["sizes"])),
                     r, "adapter-sweep")
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return dispatch(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except InvariantViolation as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
