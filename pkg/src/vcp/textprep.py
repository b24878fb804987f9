"""Text normalization, frequency-ranked vocabulary and fixed-length encoding."""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from collections.abc import Iterable
from importlib import resources
from pathlib import Path

import numpy as np

from vcp.porter import stem

DEFAULT_SEQ_LEN = 50
PAD_ID = 0
VOCAB_HEADER = ("token", "id", "frequency")

# alphanumeric runs; everything else separates tokens
_TOKEN_RE = re.compile(r"[^\W_]+")


def split_tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    """Read a one-token-per-line stopword file (default: the bundled list).

    Entries are split with the same separator rule as :func:`normalize`, so
    ``"don't"`` also stops the fragments ``don`` and ``t``.
    """
    if path is None:
        text = resources.files("vcp").joinpath("data/stopwords.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    words: set[str] = set()
    for line in text.splitlines():
        words.update(split_tokens(line))
    return frozenset(words)


def normalize(text: str, stopwords: Iterable[str]) -> list[str]:
    """Lower-case, split on non-alphanumerics, drop stopwords, Porter-stem."""
    stop = stopwords if isinstance(stopwords, (set, frozenset)) else set(stopwords)
    return [stem(tok) for tok in split_tokens(text) if tok not in stop]


class Vocabulary:
    """Token ids ranked by descending corpus frequency, ties by token.

    Id 0 is padding; real tokens get the contiguous ids ``1..V``.
    """

    def __init__(self, frequencies: dict[str, int]):
        ranked = sorted(frequencies.items(), key=lambda kv: (-kv[1], kv[0]))
        self.token_to_id = {tok: i for i, (tok, _) in enumerate(ranked, 1)}
        self.frequency = dict(ranked)

    def __len__(self) -> int:
        return len(self.token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.frequency == other.frequency

    def id_of(self, token: str) -> int | None:
        return self.token_to_id.get(token)

    def to_tsv(self) -> str:
        lines = ["\t".join(VOCAB_HEADER)]
        lines += [f"{tok}\t{i}\t{self.frequency[tok]}" for tok, i in self.token_to_id.items()]
        return "\n".join(lines) + "\n"

    def digest(self) -> bytes:
        """SHA-256 of the canonical TSV form."""
        return hashlib.sha256(self.to_tsv().encode("utf-8")).digest()

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_tsv(), encoding="utf-8", newline="\n")

    @classmethod
    def read(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text("utf-8").splitlines()
        if not lines or tuple(lines[0].split("\t")) != VOCAB_HEADER:
            raise ValueError(f"{path}: missing vocabulary header")
        freqs: dict[str, int] = {}
        ids: dict[str, int] = {}
        for line_no, line in enumerate(lines[1:], 2):
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{line_no}: expected 3 fields")
            tok, i, f = parts
            ids[tok] = int(i)
            freqs[tok] = int(f)
        vocab = cls(freqs)
        if vocab.token_to_id != ids:
            raise ValueError(f"{path}: ids are not the frequency ranking of the listed counts")
        return vocab


def build_vocab(token_streams: Iterable[Iterable[str]]) -> Vocabulary:
    counts: Counter[str] = Counter()
    for tokens in token_streams:
        counts.update(tokens)
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    return Vocabulary(dict(counts))


def encode(tokens: Iterable[str], vocab: Vocabulary, length: int = DEFAULT_SEQ_LEN) -> np.ndarray:
    """Ids of the first ``length`` known tokens, zero-padded at the end.

    Tokens missing from the vocabulary are dropped, not mapped to an OOV id.
    """
    ids = [i for i in map(vocab.token_to_id.get, tokens) if i is not None][:length]
    out = np.zeros(length, dtype=np.int64)
    out[: len(ids)] = ids
    return out
