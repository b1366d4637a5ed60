"""Task-description embeddings.

Descriptions are embedded either by a deterministic hashed bag-of-words
fallback (no external model needed) or loaded from a plain-text file of
precomputed vectors. All embeddings are L2-normalized so downstream Lasso
sparsity levels are comparable across tasks.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

DEFAULT_DIM = 64

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class TaskDescription:
    task_id: int
    text: str

    def __post_init__(self):
        if self.task_id < 0:
            raise EmbeddingError("task_id must be >= 0")
        if not self.text:
            raise EmbeddingError("task description text must be non-empty")


@dataclass(frozen=True)
class TaskEmbedding:
    task_id: int
    values: np.ndarray  # shape (m,), unit L2 norm

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def _tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _word_vector(word: str, m: int, seed: int) -> np.ndarray:
    # Stable across processes: hashlib, not Python's randomized hash().
    digest = hashlib.blake2b(
        f"{seed}:{word}".encode("utf-8"), digest_size=8
    ).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.standard_normal(m)


def embed_description(desc: TaskDescription, m: int = DEFAULT_DIM, seed: int = 0) -> TaskEmbedding:
    """Hashed bag-of-words embedding: sum of seeded Gaussian word vectors.

    Pure function of (text, m, seed); word order does not matter, and
    shared words between two descriptions raise their cosine similarity.
    """
    if m < 8:
        raise EmbeddingError(f"embedding dimension must be >= 8, got {m}")
    tokens = _tokenize(desc.text)
    if not tokens:
        raise EmbeddingError(f"no tokens in description: {desc.text!r}")
    acc = np.zeros(m)
    for word in tokens:
        acc += _word_vector(word, m, seed)
    return TaskEmbedding(task_id=desc.task_id, values=_normalize(acc))


def _normalize(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or norm == 0.0:
        raise EmbeddingError("cannot normalize zero or non-finite vector")
    return v / norm


def load_embeddings(path, m: int) -> list[TaskEmbedding]:
    """Load embeddings from a text file, one row per task.

    Row format: optional leading integer task_id, then m space-separated
    reals. Lines starting with '#' are comments. Rows are L2-normalized
    on load; order defines the task_id mapping when ids are absent.
    """
    out: list[TaskEmbedding] = []
    with open(path) as fh:
        row_index = 0
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) == m + 1:
                try:
                    task_id = int(fields[0])
                except ValueError:
                    raise EmbeddingError(
                        f"{path}:{lineno}: leading field is not an integer task_id"
                    )
                values = fields[1:]
            elif len(fields) == m:
                task_id = row_index
                values = fields
            else:
                raise EmbeddingError(
                    f"{path}:{lineno}: expected {m} values "
                    f"(optionally with a task_id column), got {len(fields)} fields"
                )
            try:
                vec = np.array([float(x) for x in values])
            except ValueError:
                raise EmbeddingError(f"{path}:{lineno}: non-numeric entry")
            if not np.all(np.isfinite(vec)):
                raise EmbeddingError(f"{path}:{lineno}: non-finite entry")
            if np.linalg.norm(vec) == 0.0:
                raise EmbeddingError(f"{path}:{lineno}: zero row cannot be normalized")
            out.append(TaskEmbedding(task_id=task_id, values=_normalize(vec)))
            row_index += 1
    return out
