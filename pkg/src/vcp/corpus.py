"""Wikitext link parsing.

Turns a markup string into a plain word stream and records where every
``[[Target]]`` / ``[[Target|anchor]]`` marker sits in that stream, together
with the sentence, paragraph and section it falls in.

Structural rules:

* a word is a maximal run of non-whitespace after link substitution;
* a sentence ends at a word whose last character is ``.``, ``!`` or ``?``;
* a paragraph ends at one or more blank lines;
* a section starts at any line beginning with ``==`` (the heading words
  belong to the new section, the ``=`` runs are dropped).
"""

from __future__ import annotations

import bisect
import json
import logging
import re
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

_WORD_RE = re.compile(r"\S+")
_SENTENCE_END = (".", "!", "?")

# pending-break levels, ordered so that max() picks the coarsest
_NONE, _SENTENCE, _PARAGRAPH, _SECTION = range(4)


class ParseError(ValueError):
    """Malformed link markup."""

    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"{message} at byte offset {byte_offset}")
        self.byte_offset = byte_offset


class CorpusFormatError(ValueError):
    """Bad line in a JSON-lines corpus file."""

    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass
class Document:
    id: str
    title: str
    body: str
    words: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class LinkOccurrence:
    source_id: str
    target_title: str
    word_offset: int
    anchor_words: int
    sentence_idx: int
    paragraph_idx: int
    section_idx: int


@dataclass(frozen=True)
class Boundaries:
    """Word offsets at which each sentence, paragraph and section starts."""

    sentence_starts: tuple[int, ...] = (0,)
    paragraph_starts: tuple[int, ...] = (0,)
    section_starts: tuple[int, ...] = (0,)

    def locate(self, word_offset: int) -> tuple[int, int, int]:
        """Return ``(sentence_idx, paragraph_idx, section_idx)`` for a word offset."""
        return (
            max(bisect.bisect_right(self.sentence_starts, word_offset) - 1, 0),
            max(bisect.bisect_right(self.paragraph_starts, word_offset) - 1, 0),
            max(bisect.bisect_right(self.section_starts, word_offset) - 1, 0),
        )


def normalize_title(title: str) -> str:
    """Trim, collapse internal whitespace and upper-case the first letter."""
    title = " ".join(title.split())
    return title[:1].upper() + title[1:]


@dataclass
class _Link:
    target: str
    start: int  # char span of the anchor in the substituted text
    end: int


def _substitute_links(raw: str) -> tuple[str, list[_Link]]:
    pieces: list[str] = []
    links: list[_Link] = []
    length = 0
    pos = 0
    while True:
        opening = raw.find("[[", pos)
        if opening < 0:
            pieces.append(raw[pos:])
            break
        closing = raw.find("]]", opening + 2)
        nested = raw.find("[[", opening + 2)
        if closing < 0:
            raise ParseError("unclosed link marker", len(raw[:opening].encode("utf-8")))
        if 0 <= nested < closing:
            raise ParseError("nested link marker", len(raw[:nested].encode("utf-8")))

        text = raw[pos:opening]
        pieces.append(text)
        length += len(text)

        inner = raw[opening + 2 : closing]
        target, pipe, anchor = inner.partition("|")
        if not pipe:
            anchor = target
        # anchors are inline: no newlines, extra pipes are markup
        anchor = " ".join(anchor.replace("|", " ").split())
        target = normalize_title(target)
        if target:
            links.append(_Link(target, length, length + len(anchor)))
        else:
            logger.warning(
                "discarding link with empty target at byte offset %d",
                len(raw[:opening].encode("utf-8")),
            )
        pieces.append(anchor)
        length += len(anchor)
        pos = closing + 2
    return "".join(pieces), links


@dataclass
class _Scan:
    words: list[str]
    word_starts: list[int]
    word_ends: list[int]
    boundaries: Boundaries
    links: list[_Link]


def _scan(raw: str) -> _Scan:
    text, links = _substitute_links(raw)

    words: list[str] = []
    starts: list[int] = []
    ends: list[int] = []
    sentences, paragraphs, sections = [0], [0], [0]
    pending = _NONE

    def emit(match: re.Match, base: int) -> None:
        nonlocal pending
        offset = len(words)
        if offset and pending >= _SENTENCE:
            sentences.append(offset)
            if pending >= _PARAGRAPH:
                paragraphs.append(offset)
            if pending >= _SECTION:
                sections.append(offset)
        pending = _NONE
        word = match.group()
        words.append(word)
        starts.append(base + match.start())
        ends.append(base + match.end())
        if word.endswith(_SENTENCE_END):
            pending = _SENTENCE

    line_start = 0
    for line in text.split("\n"):
        if line.startswith("=="):
            pending = _SECTION
            lo = len(line) - len(line.lstrip("="))
            content = line[lo:].rstrip()
            content = content.rstrip("=")
            for m in _WORD_RE.finditer(content):
                emit(m, line_start + lo)
            # body text after a heading opens a new paragraph
            pending = max(pending, _PARAGRAPH)
        elif not line.strip():
            pending = max(pending, _PARAGRAPH)
        else:
            for m in _WORD_RE.finditer(line):
                emit(m, line_start)
        line_start += len(line) + 1

    bounds = Boundaries(tuple(sentences), tuple(paragraphs), tuple(sections))
    return _Scan(words, starts, ends, bounds, links)


def structural_indices(raw: str) -> Boundaries:
    """Sentence, paragraph and section start offsets of ``raw``'s word stream."""
    return _scan(raw).boundaries


def parse_document(
    raw: str, id: str, title: str | None = None
) -> tuple[Document, list[LinkOccurrence]]:
    """Parse one markup document.

    Links are replaced by their anchor text in ``Document.words``. One
    :class:`LinkOccurrence` is returned per kept link marker, in document
    order. An empty anchor points at the word that follows the marker.

    Raises :class:`ParseError` for an unclosed or nested ``[[``.
    """
    scan = _scan(raw)
    occurrences = []
    for link in scan.links:
        first = bisect.bisect_right(scan.word_ends, link.start)
        if link.end > link.start:
            n_anchor = bisect.bisect_left(scan.word_starts, link.end) - first
        else:
            n_anchor = 0
        sentence, paragraph, section = scan.boundaries.locate(first)
        occurrences.append(
            LinkOccurrence(
                source_id=id,
                target_title=link.target,
                word_offset=first,
                anchor_words=n_anchor,
                sentence_idx=sentence,
                paragraph_idx=paragraph,
                section_idx=section,
            )
        )
    doc = Document(id=id, title=title if title else id, body=raw, words=scan.words)
    return doc, occurrences


def anchor_word_count(occ: LinkOccurrence) -> int:
    return occ.anchor_words


def word_distance(a: LinkOccurrence, b: LinkOccurrence) -> int:
    """Number of words strictly between two link markers of one document."""
    if a.source_id != b.source_id:
        raise ValueError(
            f"occurrences come from different documents: {a.source_id!r} vs {b.source_id!r}"
        )
    if (b.word_offset, b.anchor_words) < (a.word_offset, a.anchor_words):
        a, b = b, a
    return max(0, b.word_offset - (a.word_offset + a.anchor_words))


def iter_corpus(path: str | Path) -> Iterator[dict]:
    """Yield ``{"id", "title", "text"}`` records from a JSON-lines corpus."""
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"invalid JSON ({exc.msg})", line_no) from None
            if not isinstance(record, dict):
                raise CorpusFormatError("expected a JSON object", line_no)
            for key in ("id", "title", "text"):
                if not isinstance(record.get(key), str):
                    raise CorpusFormatError(f"missing or non-string field {key!r}", line_no)
            if record["id"] in seen:
                raise CorpusFormatError(f"duplicate id {record['id']!r}", line_no)
            seen.add(record["id"])
            yield {"id": record["id"], "title": record["title"], "text": record["text"]}


def write_corpus(records: Iterable[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            line = json.dumps(
                {"id": rec["id"], "title": rec["title"], "text": rec["text"]},
                ensure_ascii=False,
            )
            fh.write(line + "\n")
