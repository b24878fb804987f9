"""Co-citation events, pair aggregation, dataset filtering and splitting."""

from __future__ import annotations

import enum
import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import TypeVar

import numpy as np

from vcp.corpus import LinkOccurrence, ParseError, normalize_title, parse_document, word_distance
from vcp.rng import make_rng

logger = logging.getLogger(__name__)

T = TypeVar("T")

MIN_DISTANCE = 1
MAX_DISTANCE = 1000
DEFAULT_FRACTIONS = (0.72, 0.08, 0.20)

PAIRS_HEADER = ("target_a", "target_b", "count", "distances", "cpi")
DATASET_HEADER = ("id_a", "id_b", "distance")


class Level(enum.IntEnum):
    """Tightest structural unit holding both links of an event."""

    SAME_SENTENCE = 0
    SAME_PARAGRAPH = 1
    SAME_SECTION = 2
    SAME_ARTICLE = 3


_CPI = {
    Level.SAME_SENTENCE: 1.0,
    Level.SAME_PARAGRAPH: 0.5,
    Level.SAME_SECTION: 0.25,
    Level.SAME_ARTICLE: 0.125,
}


def cpi_of_level(level: Level) -> float:
    return _CPI[level]


class PairsFormatError(ValueError):
    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class CoCitationEvent:
    source_id: str
    target_a: str
    target_b: str
    distance_words: int
    level: Level


@dataclass
class CoCitationPair:
    target_a: str
    target_b: str
    count: int
    distances: list[int] = field(default_factory=list)
    cpi: float = 0.0


@dataclass(frozen=True)
class DatasetRow:
    """One regression example, referencing documents by id."""

    id_a: str
    id_b: str
    distance: int


def _level(a: LinkOccurrence, b: LinkOccurrence) -> Level:
    if a.sentence_idx == b.sentence_idx:
        return Level.SAME_SENTENCE
    if a.paragraph_idx == b.paragraph_idx:
        return Level.SAME_PARAGRAPH
    if a.section_idx == b.section_idx:
        return Level.SAME_SECTION
    return Level.SAME_ARTICLE


def enumerate_events(
    doc_occurrences: Sequence[LinkOccurrence], source_title: str | None = None
) -> list[CoCitationEvent]:
    """All co-citation events of one document.

    One event per unordered pair of occurrences with distinct targets.
    Links back to ``source_title`` (self-citations) take no part.
    """
    self_title = normalize_title(source_title) if source_title else None
    occs = [o for o in doc_occurrences if o.target_title != self_title]
    events = []
    for i, a in enumerate(occs):
        for b in occs[i + 1 :]:
            if a.target_title == b.target_title:
                continue
            lo, hi = sorted((a.target_title, b.target_title))
            events.append(
                CoCitationEvent(a.source_id, lo, hi, word_distance(a, b), _level(a, b))
            )
    return events


def aggregate(events: Iterable[CoCitationEvent]) -> list[CoCitationPair]:
    """Merge events into one pair per target couple, sorted by key.

    ``distances`` keep encounter order; ``cpi`` is the mean event CPI.
    """
    table: dict[tuple[str, str], tuple[list[int], list[float]]] = {}
    for ev in events:
        dists, cpis = table.setdefault((ev.target_a, ev.target_b), ([], []))
        dists.append(ev.distance_words)
        cpis.append(cpi_of_level(ev.level))
    return [
        CoCitationPair(a, b, len(dists), dists, sum(cpis) / len(cpis))
        for (a, b), (dists, cpis) in sorted(table.items())
    ]


def filter_pairs(
    pairs: Iterable[CoCitationPair], max_distance: int = MAX_DISTANCE
) -> list[CoCitationPair]:
    """Keep pairs co-cited exactly once at a distance in ``[1, max_distance]``."""
    return [
        p
        for p in pairs
        if p.count == 1 and MIN_DISTANCE <= p.distances[0] <= max_distance
    ]


def extract(records: Iterable[dict], limit: int | None = None) -> list[CoCitationPair]:
    """Parse corpus records and aggregate their co-citation pairs.

    Documents are processed in id order so that ``distances`` lists are
    ordered by (source id, word offset) no matter how the input is laid out.
    Documents with malformed markup are skipped with a warning.
    """
    ordered = sorted(records, key=lambda r: r["id"])
    if limit is not None:
        ordered = ordered[:limit]

    def events():
        for rec in ordered:
            try:
                _, occs = parse_document(rec["text"], rec["id"], rec["title"])
            except ParseError as exc:
                logger.warning("skipping document %r: %s", rec["id"], exc)
                continue
            yield from enumerate_events(occs, rec["title"])

    return aggregate(events())


def split_dataset(
    items: Sequence[T],
    seed: int,
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
) -> tuple[list[T], list[T], list[T]]:
    """Seeded shuffle into disjoint train / validation / test lists."""
    if len(items) < 3:
        raise ValueError(f"need at least 3 items to split, got {len(items)}")
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValueError(f"bad fractions {fractions!r}")
    if not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)!r}")
    n = len(items)
    n_test = round(n * fractions[2])
    n_val = round(n * fractions[1])
    order = make_rng(seed, "split").permutation(n)
    shuffled = [items[i] for i in order]
    n_train = n - n_val - n_test
    return (
        shuffled[:n_train],
        shuffled[n_train : n_train + n_val],
        shuffled[n_train + n_val :],
    )


def limit_items(items: Sequence[T], limit: int | None, seed: int) -> list[T]:
    """Seeded random subset of at most ``limit`` items, in original order."""
    if limit is None or limit >= len(items):
        return list(items)
    keep = np.sort(make_rng(seed, "limit").permutation(len(items))[:limit])
    return [items[i] for i in keep]


def to_rows(
    pairs: Iterable[CoCitationPair], title_to_id: dict[str, str]
) -> list[DatasetRow]:
    """Dataset rows for pairs whose two targets both exist as documents."""
    rows, missing = [], 0
    for p in pairs:
        id_a = title_to_id.get(p.target_a)
        id_b = title_to_id.get(p.target_b)
        if id_a is None or id_b is None:
            missing += 1
            continue
        rows.append(DatasetRow(id_a, id_b, p.distances[0]))
    if missing:
        logger.info("dropped %d pairs with a target missing from the corpus", missing)
    return rows


def write_pairs(pairs: Iterable[CoCitationPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(PAIRS_HEADER) + "\n")
        for p in pairs:
            dists = ",".join(str(d) for d in p.distances)
            fh.write(f"{p.target_a}\t{p.target_b}\t{p.count}\t{dists}\t{p.cpi!r}\n")


def _read_tsv(path: str | Path, header: Sequence[str]):
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if tuple(first.split("\t")) != tuple(header):
            raise PairsFormatError(f"expected header {chr(9).join(header)!r}", 1)
        for line_no, line in enumerate(fh, 2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != len(header):
                raise PairsFormatError(
                    f"expected {len(header)} fields, got {len(fields)}", line_no
                )
            yield line_no, fields


def read_pairs(path: str | Path) -> list[CoCitationPair]:
    pairs = []
    for line_no, (a, b, count, dists, cpi) in _read_tsv(path, PAIRS_HEADER):
        try:
            count_i = int(count)
            dist_l = [int(d) for d in dists.split(",")] if dists else []
            cpi_f = float(cpi)
        except ValueError as exc:
            raise PairsFormatError(str(exc), line_no) from None
        if count_i != len(dist_l) or count_i < 1:
            raise PairsFormatError(
                f"count {count_i} does not match {len(dist_l)} distances", line_no
            )
        pairs.append(CoCitationPair(a, b, count_i, dist_l, cpi_f))
    return pairs


def write_rows(rows: Iterable[DatasetRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(DATASET_HEADER) + "\n")
        for r in rows:
            fh.write(f"{r.id_a}\t{r.id_b}\t{r.distance}\n")


def read_rows(path: str | Path) -> list[DatasetRow]:
    rows = []
    for line_no, (id_a, id_b, dist) in _read_tsv(path, DATASET_HEADER):
        try:
            rows.append(DatasetRow(id_a, id_b, int(dist)))
        except ValueError as exc:
            raise PairsFormatError(str(exc), line_no) from None
    return rows
