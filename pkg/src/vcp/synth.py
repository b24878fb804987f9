"""Synthetic wiki-style corpus with planted co-citations.

Documents come in triples: one citing article that links two target
articles exactly ``distance`` words apart, and the two targets. The targets
share ``overlap`` topic words and the planted distance falls linearly with
that overlap, plus bounded integer noise. Everything else in a citing
article (headings, paragraph breaks, piped and empty-anchor links, self
links, links to targets that have no document) is clutter the extractor
has to get right but the dataset stage drops.

Word forms are consonant-vowel syllables ending in a vowel, which the Porter
stemmer leaves untouched, so the planted overlap survives preprocessing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vcp.rng import make_rng

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aio"
_STOPWORDS = ("the", "of", "and", "in", "a", "to", "is", "with")


@dataclass(frozen=True)
class SynthConfig:
    doc_words: int = 20
    max_overlap: int = 10
    distance_span: int = 900
    noise: int = 30
    n_topics: int = 8
    topic_words: int = 30
    filler_words: int = 400
    n_distractors: int = 60
    dim: int = 16


@dataclass(frozen=True)
class PlantedPair:
    citing_id: str
    id_a: str
    id_b: str
    title_a: str
    title_b: str
    distance: int
    overlap: int


@dataclass
class SynthCorpus:
    records: list[dict]
    planted: list[PlantedPair]
    lexicon: dict[str, str]  # word -> "topic<k>" | "filler" | "citing"
    topics: list[list[str]]


def planted_distance(overlap: int, noise: int, cfg: SynthConfig) -> int:
    base = 1 + round(cfg.distance_span * (cfg.max_overlap - overlap) / cfg.max_overlap)
    return int(min(max(base + noise, 1), 1000))


def _make_words(rng: np.random.Generator, n: int, taken: set[str]) -> list[str]:
    out = []
    while len(out) < n:
        k = int(rng.integers(2, 5))
        word = "".join(
            _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
            for _ in range(k)
        )
        if word not in taken:
            taken.add(word)
            out.append(word)
    return out


class _Writer:
    """Accumulates markup while counting emitted words."""

    def __init__(self):
        self.parts: list[str] = []
        self.words = 0

    def word(self, w: str) -> None:
        self.parts.append(w)
        self.words += 1

    def link(self, target: str, anchor: str | None = None) -> None:
        if anchor is None:
            self.parts.append(f"[[{target}]]")
            self.words += len(target.split())
        else:
            self.parts.append(f"[[{target}|{anchor}]]")
            self.words += len(anchor.split())

    def paragraph(self) -> None:
        self.parts.append("\n\n")

    def heading(self, words: list[str]) -> None:
        self.parts.append("\n== " + " ".join(words) + " ==\n")
        self.words += len(words)

    def text(self) -> str:
        out = []
        for p in self.parts:
            if out and not p.startswith("\n") and not out[-1].endswith("\n"):
                out.append(" ")
            out.append(p)
        return "".join(out).strip("\n ") + "\n"


def _clutter(
    w: _Writer,
    budget: int,
    rng: np.random.Generator,
    vocab: list[str],
    distractors: list[str],
    self_title: str,
) -> None:
    """Emit exactly ``budget`` words of citing-article filler and clutter."""
    target = w.words + budget
    while w.words < target:
        left = target - w.words
        r = rng.random()
        if r < 0.02 and left >= 3:
            ref = distractors[rng.integers(len(distractors))]
            n = int(rng.integers(1, 4))
            w.link(ref, " ".join(vocab[rng.integers(len(vocab))] for _ in range(n)))
        elif r < 0.03 and left >= 2:
            w.link(distractors[rng.integers(len(distractors))])  # "Ref N": two words
        elif r < 0.035:
            w.link(distractors[rng.integers(len(distractors))], "")
        elif r < 0.038 and left >= len(self_title.split()):
            w.link(self_title)
        elif r < 0.041 and left >= 2:
            ref = distractors[rng.integers(len(distractors))]
            w.link(ref[:1].lower() + ref[1:])
        elif r < 0.05 and left >= 2:
            w.heading([vocab[rng.integers(len(vocab))] for _ in range(int(rng.integers(1, 3)))])
        elif r < 0.07:
            w.paragraph()
        else:
            word = vocab[rng.integers(len(vocab))]
            if rng.random() < 0.12:
                word += "."  # sentence end
            w.word(word)


def _target_text(rng: np.random.Generator, content: list[str]) -> str:
    out = []
    for i, word in enumerate(content):
        if i == 0:
            word = word.capitalize()
        out.append(word)
        if rng.random() < 0.25:
            out.append(_STOPWORDS[rng.integers(len(_STOPWORDS))])
    return " ".join(out) + ".\n"


def synthesize(n_docs: int, seed: int, cfg: SynthConfig = SynthConfig()) -> SynthCorpus:
    """Build ``n_docs`` documents: ``n_docs // 3`` planted triples plus clutter-only articles."""
    if n_docs < 0:
        raise ValueError("n_docs must be >= 0")
    rng = make_rng(seed, "synth")
    taken: set[str] = set()
    topics = [_make_words(rng, cfg.topic_words, taken) for _ in range(cfg.n_topics)]
    filler = _make_words(rng, cfg.filler_words, taken)
    citing_vocab = _make_words(rng, cfg.filler_words, taken)
    lexicon = {w: "filler" for w in filler}
    lexicon.update({w: "citing" for w in citing_vocab})
    for k, words in enumerate(topics):
        lexicon.update({w: f"topic{k}" for w in words})
    distractors = [f"Ref {k}" for k in range(cfg.n_distractors)]

    records: list[dict] = []
    planted: list[PlantedPair] = []
    n_triples = n_docs // 3

    def new_id() -> str:
        return f"doc{len(records):06d}"

    for t in range(n_triples):
        overlap = int(rng.integers(0, cfg.max_overlap + 1))
        topic = topics[rng.integers(cfg.n_topics)]
        shared = [str(x) for x in rng.choice(topic, size=overlap, replace=False)]
        distance = planted_distance(overlap, int(rng.integers(-cfg.noise, cfg.noise + 1)), cfg)

        citing_id = new_id()
        citing_title = f"Survey {t}"
        title_a, title_b = f"Study {t} a", f"Study {t} b"
        first, second = (title_a, title_b) if rng.random() < 0.5 else (title_b, title_a)

        w = _Writer()
        _clutter(w, int(rng.integers(5, 60)), rng, citing_vocab, distractors, citing_title)
        if rng.random() < 0.5:
            w.link(first)
        else:
            w.link(first, " ".join(citing_vocab[rng.integers(len(citing_vocab))] for _ in range(2)))
        _clutter(w, distance, rng, citing_vocab, distractors, citing_title)
        w.link(second)
        _clutter(w, int(rng.integers(5, 60)), rng, citing_vocab, distractors, citing_title)
        records.append({"id": citing_id, "title": citing_title, "text": w.text()})

        ids = []
        for title in (title_a, title_b):
            n_fill = max(cfg.doc_words - overlap, 0)
            content = shared + [str(x) for x in rng.choice(filler, size=n_fill, replace=False)]
            content = [content[i] for i in rng.permutation(len(content))]
            ids.append(new_id())
            records.append({"id": ids[-1], "title": title, "text": _target_text(rng, content)})
        planted.append(PlantedPair(citing_id, ids[0], ids[1], title_a, title_b, distance, overlap))

    for k in range(n_docs - 3 * n_triples):
        title = f"Notes {k}"
        w = _Writer()
        _clutter(w, int(rng.integers(20, 200)), rng, citing_vocab, distractors, title)
        records.append({"id": new_id(), "title": title, "text": w.text()})

    return SynthCorpus(records, planted, lexicon, topics)


def synth_vectors(corpus: SynthCorpus, dim: int, seed: int) -> dict[str, np.ndarray]:
    """Random vectors clustered by word class, so topic words sit near each other."""
    rng = make_rng(seed, "synth-vectors")
    classes = sorted(set(corpus.lexicon.values()))
    centroids = {c: rng.normal(0.0, 1.0, size=dim) for c in classes}
    vectors = {}
    for word in sorted(corpus.lexicon):
        c = corpus.lexicon[word]
        vectors[word] = centroids[c] + 0.3 * rng.normal(0.0, 1.0, size=dim)
    return vectors


def write_vectors(vectors: dict[str, np.ndarray], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for word, vec in vectors.items():
            fh.write(word + " " + " ".join(f"{v:.6f}" for v in vec) + "\n")


def write_planted(planted: list[PlantedPair], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("citing_id\tid_a\tid_b\ttitle_a\ttitle_b\tdistance\toverlap\n")
        for p in planted:
            fh.write(
                f"{p.citing_id}\t{p.id_a}\t{p.id_b}\t{p.title_a}\t{p.title_b}\t{p.distance}\t{p.overlap}\n"
            )
