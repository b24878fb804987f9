"""Pretrained word vectors and the vocabulary-aligned embedding matrix."""

from __future__ import annotations

import logging
from collections.abc import Container
from pathlib import Path

import numpy as np

from vcp.textprep import Vocabulary

logger = logging.getLogger(__name__)

DEFAULT_DIM = 300


class VectorFormatError(ValueError):
    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def load_vectors(
    path: str | Path, keep: Container[str] | None = None
) -> dict[str, np.ndarray]:
    """Read a ``token v1 ... vD`` text vector file.

    ``D`` comes from the first line and is enforced on every later one. When
    ``keep`` is given, only those tokens are stored (lines are still
    validated). A repeated token overwrites the earlier vector.
    """
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if len(parts) < 2 or not parts[0]:
                raise VectorFormatError("expected a token followed by numbers", line_no)
            if dim is None:
                dim = len(parts) - 1
            elif len(parts) - 1 != dim:
                raise VectorFormatError(
                    f"expected {dim} components, got {len(parts) - 1}", line_no
                )
            token = parts[0]
            if keep is not None and token not in keep:
                continue
            try:
                vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError:
                raise VectorFormatError("non-numeric component", line_no) from None
            if token in vectors:
                logger.warning("duplicate vector for %r at line %d; keeping the later one", token, line_no)
            vectors[token] = vec
    if dim is None:
        raise VectorFormatError("empty vector file", 0)
    return vectors


def build_matrix(vocab: Vocabulary, vectors: dict[str, np.ndarray], dim: int) -> np.ndarray:
    """``(V+1, dim)`` read-only matrix; row 0 and rows of unseen tokens are zero."""
    if len(vocab) == 0:
        raise ValueError("vocabulary is empty")
    matrix = np.zeros((len(vocab) + 1, dim), dtype=np.float64)
    hits = 0
    for token, i in vocab.token_to_id.items():
        vec = vectors.get(token)
        if vec is None:
            continue
        if vec.shape != (dim,):
            raise ValueError(f"vector for {token!r} has shape {vec.shape}, expected ({dim},)")
        matrix[i] = vec
        hits += 1
    logger.info("embedding coverage: %d / %d tokens", hits, len(vocab))
    matrix.flags.writeable = False
    return matrix
