"""Desk-scale laboratory for continual domain adaptation in extractive QA.

A small float64 transformer encoder with reverse-mode autodiff, span-based
reading comprehension heads, and four sequential-training strategies: plain
fine-tuning, quadratic anchoring to the previous domain, frozen-backbone
progressive adapters, and per-domain individual models.
"""

from .adapters import (AdapterConfig, AdapterParams, adapter_param_count,
                       adapter_weight_count, match_pal_width,
                       model_adapter_budget)
from .autograd import Tensor, backward, record
from .checkpoint import load_checkpoint, restore_into, save_checkpoint
from .continual import (ContinualState, ResultsMatrix, StrategyConfig,
                        TrainConfig, ewc_penalty, fisher_diagonal,
                        run_sequence, train_domain)
from .data import (DomainData, DomainSpec, SyntheticConfig, Vocabulary,
                   build_cda_c, build_cda_q, build_vocab, dataset_stats,
                   load_domain_dir, load_jsonl, make_synthetic_cda,
                   question_type, records_to_examples, save_domain_dir,
                   tokenize)
from .encoder import EncoderConfig, EncoderParams, encode, init_encoder, param_count
from .errors import (ConfigError, ContractError, DataError, InvariantViolation,
                     ShapeError)
from .experiments import (ExperimentSpec, ModelSpec, ReportBundle,
                          cmd_adapter_sweep, cmd_forgetting_curve,
                          cmd_forward_transfer, cmd_order_robustness, cmd_run)
from .model import QAModel
from .optim import Adam, warmup_linear
from .qa import (QAExample, SpanPrediction, em_score, evaluate_examples,
                 f1_score, normalize_answer, pack_dataset, predict_span,
                 qa_loss)
from .reports import write_report
from .seeding import derive_rng

__version__ = "0.1.0"

__all__ = [
    "AdapterConfig", "AdapterParams", "adapter_param_count",
    "adapter_weight_count", "match_pal_width", "model_adapter_budget",
    "Tensor", "backward", "record",
    "load_checkpoint", "restore_into", "save_checkpoint",
    "ContinualState", "ResultsMatrix", "StrategyConfig", "TrainConfig",
    "ewc_penalty", "fisher_diagonal", "run_sequence", "train_domain",
    "DomainData", "DomainSpec", "SyntheticConfig", "Vocabulary",
    "build_cda_c", "build_cda_q", "build_vocab", "dataset_stats",
    "load_domain_dir", "load_jsonl", "make_synthetic_cda", "question_type",
    "records_to_examples", "save_domain_dir", "tokenize",
    "EncoderConfig", "EncoderParams", "encode", "init_encoder", "param_count",
    "ConfigError", "ContractError", "DataError", "InvariantViolation",
    "ShapeError",
    "ExperimentSpec", "ModelSpec", "ReportBundle", "cmd_adapter_sweep",
    "cmd_forgetting_curve", "cmd_forward_transfer", "cmd_order_robustness",
    "cmd_run",
    "QAModel",
    "Adam", "warmup_linear",
    "QAExample", "SpanPrediction", "em_score", "evaluate_examples", "f1_score",
    "normalize_answer", "pack_dataset", "predict_span", "qa_loss",
    "write_report",
    "derive_rng",
    "__version__",
]
