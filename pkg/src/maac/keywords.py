"""Keyword table construction and multi-hot clip labels.

Captions are lower-cased and stripped of punctuation, tokens are tagged with a
bundled lexicon, verbs are reduced to their base form and nouns are kept as
written (plural nouns stay distinct keywords). The N most frequent non-stoplisted
noun/verb forms become the keyword table.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

NOUN, VERB, OTHER = "noun", "verb", "other"

# anything that is not a letter, digit or whitespace separates tokens
_PUNCT = re.compile(r"[^\w\s]|_", re.UNICODE)


class EmptyCaptionError(ValueError):
    pass


@dataclass(frozen=True)
class Caption:
    tokens: tuple
    clip_id: str = ""

    def __post_init__(self):
        if not self.tokens:
            raise EmptyCaptionError("caption has no tokens")
        for t in self.tokens:
            if t != t.lower() or _PUNCT.search(t) or not t:
                raise ValueError(f"token {t!r} is not a cleaned lowercase word")

    def text(self) -> str:
        return " ".join(self.tokens)


def tokenize_caption(text: str, clip_id: str = "") -> Caption:
    cleaned = _PUNCT.sub(" ", text.lower())
    tokens = tuple(cleaned.split())
    if not tokens:
        raise EmptyCaptionError(f"caption {text!r} is empty after cleaning")
    return Caption(tokens, clip_id)


# ---------------------------------------------------------------------------
# part-of-speech lexicon
# ---------------------------------------------------------------------------


class Tagger(Protocol):
    def tag_and_canonicalize(self, token: str) -> tuple: ...


def _read_pairs(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        word, value = line.split("\t")[:2]
        out[word] = value
    return out


class Lexicon:
    """Word -> POS lookup with suffix rules for verb inflections."""

    def __init__(self, pos: dict, exceptions: dict | None = None):
        bad = {p for p in pos.values() if p not in (NOUN, VERB, OTHER)}
        if bad:
            raise ValueError(f"unknown POS labels {sorted(bad)}")
        self.pos = dict(pos)
        self.exceptions = dict(exceptions or {})

    @classmethod
    def default(cls) -> "Lexicon":
        pkg = resources.files("maac.resources")
        return cls(
            _read_pairs(pkg.joinpath("lexicon.tsv").read_text("utf-8")),
            _read_pairs(pkg.joinpath("verb_exceptions.tsv").read_text("utf-8")),
        )

    def _is_verb(self, word: str) -> bool:
        return self.pos.get(word) == VERB

    def _verb_candidates(self, tok: str):
        if tok.endswith("ies") or tok.endswith("ied"):
            yield tok[:-3] + "y"
        if tok.endswith("ing") and len(tok) > 4:
            stem = tok[:-3]
            yield stem
            yield stem + "e"
            if len(stem) > 2 and stem[-1] == stem[-2]:
                yield stem[:-1]
        if tok.endswith("ed") and len(tok) > 3:
            stem = tok[:-2]
            yield stem
            yield tok[:-1]
            if len(stem) > 2 and stem[-1] == stem[-2]:
                yield stem[:-1]
        if tok.endswith("es"):
            yield tok[:-2]
        if tok.endswith("s"):
            yield tok[:-1]

    def tag_and_canonicalize(self, token: str) -> tuple:
        pos = self.pos.get(token)
        if pos == NOUN:
            return NOUN, token
        if pos == VERB:
            return VERB, token
        if token in self.exceptions:
            return VERB, self.exceptions[token]
        if pos is None:
            for cand in self._verb_candidates(token):
                if self._is_verb(cand):
                    return VERB, cand
        return OTHER, token


_DEFAULT_LEXICON = None


def default_lexicon() -> Lexicon:
    global _DEFAULT_LEXICON
    if _DEFAULT_LEXICON is None:
        _DEFAULT_LEXICON = Lexicon.default()
    return _DEFAULT_LEXICON


def tag_and_canonicalize(token: str, lexicon: Tagger | None = None) -> tuple:
    return (lexicon or default_lexicon()).tag_and_canonicalize(token)


def canonical(token: str, lexicon: Tagger | None = None) -> str:
    return tag_and_canonicalize(token, lexicon)[1]


def load_stoplist(path: str | Path | None = None) -> frozenset:
    if path is None:
        text = resources.files("maac.resources").joinpath("stoplist.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    words = (ln.strip() for ln in text.splitlines())
    return frozenset(w for w in words if w and not w.startswith("#"))


# ---------------------------------------------------------------------------
# keyword table
# ---------------------------------------------------------------------------


class NoKeywordsError(ValueError):
    pass


@dataclass
class KeywordTable:
    entries: list
    counts: list
    stoplist: frozenset = frozenset()
    requested: int = 0
    index: dict = field(init=False)

    def __post_init__(self):
        self.index = {w: i for i, w in enumerate(self.entries)}
        if len(self.index) != len(self.entries):
            raise ValueError("duplicate keyword entries")
        clash = self.stoplist.intersection(self.entries)
        if clash:
            raise ValueError(f"stoplisted words in table: {sorted(clash)}")

    def __len__(self) -> int:
        return len(self.entries)

    def to_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for w, c in zip(self.entries, self.counts):
                f.write(f"{w}\t{c}\n")

    @classmethod
    def from_tsv(cls, path, stoplist: frozenset = frozenset()) -> "KeywordTable":
        entries, counts = [], []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise ValueError(f"{path}:{lineno}: expected keyword<TAB>frequency")
                entries.append(parts[0])
                counts.append(int(parts[1]))
        return cls(entries, counts, stoplist, len(entries))


def keyword_counts(corpus: Iterable[Caption], stoplist=frozenset(), lexicon: Tagger | None = None) -> Counter:
    lexicon = lexicon or default_lexicon()
    counts = Counter()
    for cap in corpus:
        for tok in cap.tokens:
            pos, form = lexicon.tag_and_canonicalize(tok)
            if pos in (NOUN, VERB) and form not in stoplist:
                counts[form] += 1
    return counts


def build_keyword_table(corpus, n: int, stoplist=frozenset(), lexicon: Tagger | None = None) -> KeywordTable:
    """Top-``n`` canonical noun/verb forms by frequency; ties go lexicographic."""
    if n < 1:
        raise ValueError("n must be >= 1")
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty caption corpus")
    stoplist = frozenset(stoplist)
    counts = keyword_counts(corpus, stoplist, lexicon)
    if not counts:
        raise NoKeywordsError("no noun/verb candidates remain after the stoplist")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:n]
    return KeywordTable([w for w, _ in ranked], [c for _, c in ranked], stoplist, n)


@dataclass(frozen=True)
class MultiHotLabel:
    bits: np.ndarray
    clip_id: str = ""


def encode_multihot(captions, table: KeywordTable, lexicon: Tagger | None = None) -> MultiHotLabel:
    captions = list(captions)
    if not captions:
        raise ValueError("encode_multihot needs at least one caption")
    lexicon = lexicon or default_lexicon()
    bits = np.zeros(len(table), dtype=np.uint8)
    for cap in captions:
        for tok in cap.tokens:
            j = table.index.get(lexicon.tag_and_canonicalize(tok)[1])
            if j is not None:
                bits[j] = 1
    return MultiHotLabel(bits, captions[0].clip_id)
