"""Path encoders: text in, fixed-dimension sequence vector out.

Two configurations sit behind one interface: ``toy`` is a deterministic
hashed bag-of-tokens projection that needs no pretrained weights and drives
every test; ``reference`` adapts a pretrained transformer code encoder when
one is installed and available locally.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from . import lexer

ENCODER_KINDS = ("toy", "reference")


class EncoderError(ValueError):
    pass


class OverLengthError(EncoderError):
    def __init__(self, n_tokens: int, limit: int):
        super().__init__(f"sequence of {n_tokens} tokens exceeds the encoder limit of {limit}")
        self.n_tokens = n_tokens
        self.limit = limit
        self.path_index: int | None = None

    def with_path(self, index: int) -> "OverLengthError":
        self.path_index = index
        self.args = (f"path {index}: {self.args[0]}",)
        return self


def _as_tokens(text_or_tokens) -> list[str]:
    if isinstance(text_or_tokens, str):
        return [t.text for t in lexer.code_tokens(text_or_tokens)]
    return [str(t) for t in text_or_tokens]


class HashedTokenEncoder:
    """Fixed-seed hashed token counts projected to dimension ``dim``.

    Tokens hash into ``buckets`` bins; the normalized count vector is
    multiplied by a frozen Gaussian projection drawn from ``seed``. Purely
    deterministic: same text, same vector, on any machine.
    """

    def __init__(self, dim: int = 16, buckets: int = 1024, seed: int = 0,
                 max_tokens: int = 512):
        if dim < 1 or buckets < 1:
            raise EncoderError("dim and buckets must be positive")
        self.dim = dim
        self.buckets = buckets
        self.seed = seed
        self.max_tokens = max_tokens
        self._key = str(seed).encode("utf-8")[:64]
        rng = np.random.default_rng(seed)
        self._projection = rng.standard_normal((buckets, dim))
        self.encoder_id = f"hashed-bot-d{dim}-b{buckets}-s{seed}"

    def _bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=self._key).digest()
        return int.from_bytes(digest, "big") % self.buckets

    def encode(self, text_or_tokens) -> np.ndarray:
        tokens = _as_tokens(text_or_tokens)
        if not tokens:
            raise EncoderError("cannot encode an empty token sequence")
        if self.max_tokens is not None and len(tokens) > self.max_tokens:
            raise OverLengthError(len(tokens), self.max_tokens)
        counts = np.zeros(self.buckets)
        for tok in tokens:
            counts[self._bucket(tok)] += 1.0
        counts /= len(tokens)
        return counts @ self._projection


class PretrainedTransformerEncoder:
    """Adapter for a pretrained bidirectional transformer code encoder.

    Encodes a token sequence with the model's first-position summary vector.
    Requires the ``transformers`` and ``torch`` packages plus a local model
    path; raises EncoderError with instructions when either is missing.
    """

    def __init__(self, model_path: str | None = None, max_tokens: int = 512):
        if model_path is None:
            raise EncoderError(
                "the reference encoder needs model_path pointing at a local "
                "pretrained checkpoint; use the toy encoder for self-contained runs")
        try:
            import torch  # noqa: F401
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise EncoderError(
                "the reference encoder requires the 'transformers' and 'torch' "
                "packages; install them or select the toy encoder") from exc
        self._tokenizer = AutoTokenizer.from_pretrained(model_path)
        self._model = AutoModel.from_pretrained(model_path)
        self._model.eval()
        self.max_tokens = max_tokens
        self.dim = int(self._model.config.hidden_size)
        self.encoder_id = f"pretrained-{Path(model_path).name}"

    def encode(self, text_or_tokens) -> np.ndarray:
        import torch

        tokens = _as_tokens(text_or_tokens)
        if not tokens:
            raise EncoderError("cannot encode an empty token sequence")
        if len(tokens) > self.max_tokens:
            raise OverLengthError(len(tokens), self.max_tokens)
        enc = self._tokenizer(" ".join(tokens), return_tensors="pt",
                              truncation=True, max_length=self.max_tokens)
        with torch.no_grad():
            out = self._model(**enc)
        return out.last_hidden_state[0, 0].numpy().astype(float)


def make_encoder(kind: str, *, dim: int = 16, buckets: int = 1024, seed: int = 0,
                 max_tokens: int = 512, model_path: str | None = None):
    if kind == "toy":
        return HashedTokenEncoder(dim=dim, buckets=buckets, seed=seed, max_tokens=max_tokens)
    if kind == "reference":
        return PretrainedTransformerEncoder(model_path=model_path, max_tokens=max_tokens)
    raise EncoderError(f"unknown encoder kind {kind!r}; choose from {ENCODER_KINDS}")


def encode_path(rendered_text, encoder) -> np.ndarray:
    """Sequence vector for one execution path; deterministic in inference mode."""
    return encoder.encode(rendered_text)


class EmbeddingCache:
    """Disk cache of path embeddings keyed by (encoder id, text hash)."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def _path(self, encoder_id: str, text: str) -> Path:
        digest = hashlib.blake2b(text.encode("utf-8"), digest_size=16).hexdigest()
        return self.directory / encoder_id / f"{digest}.npy"

    def get(self, encoder_id: str, text: str) -> np.ndarray | None:
        p = self._path(encoder_id, text)
        return np.load(p) if p.exists() else None

    def put(self, encoder_id: str, text: str, vector: np.ndarray) -> None:
        p = self._path(encoder_id, text)
        p.parent.mkdir(parents=True, exist_ok=True)
        tmp = p.with_suffix(".tmp.npy")
        np.save(tmp, vector)
        tmp.replace(p)


def encode_paths(path_texts, encoder, cache: EmbeddingCache | None = None) -> np.ndarray:
    """Encode a sample's path texts into an (n_paths, dim) matrix."""
    rows = []
    for index, text in enumerate(path_texts):
        vec = cache.get(encoder.encoder_id, text) if cache is not None else None
        if vec is None:
            try:
                vec = encode_path(text, encoder)
            except OverLengthError as exc:
                raise OverLengthError(exc.n_tokens, exc.limit).with_path(index) from exc
            if cache is not None:
                cache.put(encoder.encoder_id, text, vec)
        rows.append(vec)
    return np.stack(rows)
