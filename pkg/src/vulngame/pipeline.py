"""End-to-end glue: corpus in, trained model and evaluation report out.

Each sample's selected execution paths are encoded and concatenated into one
input vector; the classifier trains on the split's train partition with the
valid partition driving early stopping.
"""

from __future__ import annotations

import numpy as np

from .corpus import Corpus, SplitAssignment
from .encoders import EmbeddingCache, OverLengthError, encode_paths
from .evaluate import EvalReport, evaluate_setting
from .game import PrototypeGameClassifier, TrainingLog
from .paths import PathConfig, extract_paths


class PipelineError(ValueError):
    pass


def extract_corpus_paths(corpus: Corpus, config: PathConfig = PathConfig()) -> dict[str, list]:
    """Selected execution paths per sample id."""
    return {s.id: extract_paths(s.source, config) for s in corpus.samples}


def encode_corpus(corpus: Corpus, sample_paths: dict[str, list], encoder,
                  cache: EmbeddingCache | None = None) -> dict[str, np.ndarray]:
    """Concatenated path-embedding vector per sample id."""
    vectors = {}
    for s in corpus.samples:
        texts = [p.rendered_text for p in sample_paths[s.id]]
        try:
            mat = encode_paths(texts, encoder, cache)
        except OverLengthError as exc:
            raise PipelineError(f"sample {s.id}: {exc}") from exc
        vectors[s.id] = mat.reshape(-1)
    return vectors


def _matrix(corpus: Corpus, vectors: dict[str, np.ndarray], ids):
    ids = sorted(ids)
    X = np.stack([vectors[i] for i in ids])
    y = np.array([corpus.by_id[i].label for i in ids], dtype=int)
    kinds = np.array([corpus.by_id[i].set_kind for i in ids], dtype=object)
    pairs = np.array([corpus.by_id[i].pair_id for i in ids], dtype=object)
    return ids, X, y, kinds, pairs


def train_model(corpus: Corpus, split: SplitAssignment, vectors: dict[str, np.ndarray],
                classifier: PrototypeGameClassifier,
                trace_hook=None) -> tuple[PrototypeGameClassifier, TrainingLog]:
    """Fit the two-player classifier on the split's train/valid partitions."""
    if not split.train:
        raise PipelineError("empty train partition")
    _, X, y, kinds, pairs = _matrix(corpus, vectors, split.train)
    X_val = y_val = None
    if split.valid:
        _, X_val, y_val, _, _ = _matrix(corpus, vectors, split.valid)
    classifier.fit(X, y, set_kind=kinds, pair_id=pairs, X_val=X_val, y_val=y_val,
                   trace_hook=trace_hook)
    return classifier, classifier.training_log_


def evaluate_model(model, corpus: Corpus, split: SplitAssignment,
                   vectors: dict[str, np.ndarray]) -> EvalReport:
    return evaluate_setting(model, vectors, corpus, split)
