"""Vulnerability detection from CFG execution paths, trained as a two-player
game with shared class prototypes."""

from .anonymize import (IdentifierAnonymizer, IdentifierMap, anonymize_identifiers,
                        anonymize_source, build_identifier_setting, invert_anonymization)
from .cfg import CfgParseError, ControlFlowGraph, build_cfg, cfg_to_dot
from .corpus import (CodeSample, Corpus, SplitAssignment, check_split,
                     filter_by_token_limit, ingest_corpus, make_split, write_corpus)
from .encoders import EmbeddingCache, HashedTokenEncoder, encode_path, make_encoder
from .evaluate import (ConfusionCounts, EvalReport, evaluate_setting, metrics,
                       pair_same_label_rate, render_report_table)
from .fusion import ConvConfig, FusionWeights, fuse_paths
from .game import (PrototypeGameClassifier, TrainingLog, TrainingRecord,
                   compute_balance_gap, load_checkpoint, save_checkpoint)
from .losses import (LossConfig, MlpHead, PrototypeBank, ce_loss, proto_loss,
                     proto_prob, reg_loss, total_loss)
from .paths import (ExecutionPath, PathConfig, PathExtractor, check_path,
                    enumerate_paths, extract_paths, select_paths)
from .synthetic import GeneratedCorpus, GeneratorConfig, generate_corpus

__version__ = "0.1.0"

__all__ = [
    "CodeSample", "Corpus", "SplitAssignment", "ingest_corpus", "write_corpus",
    "filter_by_token_limit", "make_split", "check_split",
    "IdentifierMap", "IdentifierAnonymizer", "anonymize_identifiers",
    "anonymize_source", "invert_anonymization", "build_identifier_setting",
    "ControlFlowGraph", "CfgParseError", "build_cfg", "cfg_to_dot",
    "ExecutionPath", "PathConfig", "PathExtractor", "enumerate_paths",
    "select_paths", "extract_paths", "check_path",
    "HashedTokenEncoder", "EmbeddingCache", "make_encoder", "encode_path",
    "ConvConfig", "FusionWeights", "fuse_paths",
    "LossConfig", "MlpHead", "PrototypeBank", "ce_loss", "proto_prob",
    "proto_loss", "reg_loss", "total_loss",
    "PrototypeGameClassifier", "TrainingLog", "TrainingRecord",
    "compute_balance_gap", "save_checkpoint", "load_checkpoint",
    "ConfusionCounts", "EvalReport", "metrics", "pair_same_label_rate",
    "evaluate_setting", "render_report_table",
    "GeneratorConfig", "GeneratedCorpus", "generate_corpus",
]
