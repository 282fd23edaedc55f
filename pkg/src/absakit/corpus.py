"""Dataset ingestion for aspect-level sentiment corpora.

Normalizes SemEval-2014 XML (sentiment classification) and TOWE-style TSV
(opinion extraction) into one JSONL instance schema, and provides the
train/dev splitting and statistics used by the experiment harness.

Canonical JSONL schema, one object per line::

    {"id": str, "words": [str],
     "aspect": {"start": int, "end": int, "text": str},
     "polarity": "positive|neutral|negative"|null,
     "opinions": [[int, int]]|null,
     "domain": "laptop|restaurant", "origin": "standard|adversarial"}

Adversarially generated files additionally carry "strategy" and "parent_id".
Instance ids follow ``<sentence_key>#<k>`` so that instances of the same
sentence can be grouped by the prefix before the last ``#``.
"""

from __future__ import annotations

import json
import random
import string
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ArgumentError, FormatError

POLARITIES = ("positive", "neutral", "negative")
DOMAINS = ("laptop", "restaurant")
ORIGINS = ("standard", "adversarial")

SC_FORMATS = ("semeval-xml", "jsonl")
OE_FORMATS = ("towe-tsv", "jsonl")

_PUNCT = frozenset(string.punctuation)


@dataclass(frozen=True)
class RawInstance:
    """One (sentence, aspect) pair with optional polarity label and opinion spans.

    All span indices are inclusive word indices into ``words``.
    """

    instance_id: str
    words: tuple[str, ...]
    aspect_start: int
    aspect_end: int
    aspect_text: str
    polarity: str | None = None
    opinion_spans: tuple[tuple[int, int], ...] | None = None
    domain: str = "laptop"
    origin: str = "standard"

    def __post_init__(self):
        n = len(self.words)
        if n == 0:
            raise ArgumentError(f"{self.instance_id}: empty word list")
        if not (0 <= self.aspect_start <= self.aspect_end < n):
            raise ArgumentError(
                f"{self.instance_id}: aspect span ({self.aspect_start}, "
                f"{self.aspect_end}) out of range for {n} words"
            )
        joined = " ".join(self.words[self.aspect_start : self.aspect_end + 1])
        if joined != self.aspect_text:
            raise ArgumentError(
                f"{self.instance_id}: aspect_text {self.aspect_text!r} does not "
                f"match words {joined!r}"
            )
        if self.polarity is not None and self.polarity not in POLARITIES:
            raise ArgumentError(f"{self.instance_id}: bad polarity {self.polarity!r}")
        if self.domain not in DOMAINS:
            raise ArgumentError(f"{self.instance_id}: bad domain {self.domain!r}")
        if self.origin not in ORIGINS:
            raise ArgumentError(f"{self.instance_id}: bad origin {self.origin!r}")
        if self.opinion_spans is not None:
            prev_end = -1
            for s, e in self.opinion_spans:
                if not (0 <= s <= e < n):
                    raise ArgumentError(
                        f"{self.instance_id}: opinion span ({s}, {e}) out of range"
                    )
                if s <= prev_end:
                    raise ArgumentError(
                        f"{self.instance_id}: opinion spans overlap or are unsorted"
                    )
                prev_end = e

    @property
    def sentence_key(self) -> str:
        """Grouping key shared by all aspects of one sentence."""
        head, sep, _ = self.instance_id.rpartition("#")
        return head if sep else self.instance_id

    @property
    def aspect_words(self) -> tuple[str, ...]:
        return self.words[self.aspect_start : self.aspect_end + 1]


@dataclass(frozen=True)
class DatasetStats:
    n_sentences: int
    n_aspects: int
    polarity_counts: dict[str, int]

    def summary(self) -> str:
        line = f"sentences={self.n_sentences} aspects={self.n_aspects}"
        if any(self.polarity_counts.values()):
            line += " " + " ".join(
                f"{p}={self.polarity_counts.get(p, 0)}" for p in POLARITIES
            )
        return line

    def to_dict(self) -> dict:
        return {
            "n_sentences": self.n_sentences,
            "n_aspects": self.n_aspects,
            "polarity_counts": dict(self.polarity_counts),
        }


@dataclass(frozen=True)
class Rejection:
    """A dropped input record and why it was dropped."""

    locator: str
    reason: str


@dataclass(frozen=True)
class LoadWarning:
    locator: str
    message: str


@dataclass(frozen=True)
class LoadResult:
    instances: tuple[RawInstance, ...]
    rejections: tuple[Rejection, ...] = ()
    warnings: tuple[LoadWarning, ...] = ()

    @property
    def stats(self) -> DatasetStats:
        return compute_stats(self.instances)


def tokenize_text(text: str) -> list[tuple[str, int, int]]:
    """Split raw text into words with character spans.

    Whitespace-delimited chunks are further split by detaching leading and
    trailing punctuation characters as separate one-character words, so
    "bad!" becomes ["bad", "!"]. Word-internal punctuation (don't, wi-fi)
    is kept.
    """
    out: list[tuple[str, int, int]] = []
    i, n = 0, len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace():
            j += 1
        chunk = text[i:j]
        s, e = 0, len(chunk)
        lead: list[tuple[str, int, int]] = []
        while s < e and chunk[s] in _PUNCT:
            lead.append((chunk[s], i + s, i + s + 1))
            s += 1
        trail: list[tuple[str, int, int]] = []
        while e > s and chunk[e - 1] in _PUNCT:
            trail.append((chunk[e - 1], i + e - 1, i + e))
            e -= 1
        out.extend(lead)
        if s < e:
            out.append((chunk[s:e], i + s, i + e))
        out.extend(reversed(trail))
        i = j
    return out


def _char_span_to_words(
    spans: Sequence[tuple[str, int, int]], c_from: int, c_to: int
) -> tuple[int, int] | None:
    """Word-index range of all words overlapping the character range [c_from, c_to)."""
    hit = [k for k, (_, ws, we) in enumerate(spans) if ws < c_to and we > c_from]
    if not hit:
        return None
    return hit[0], hit[-1]


# ---------------------------------------------------------------------------
# SC loading (SemEval-2014 XML / canonical JSONL)
# ---------------------------------------------------------------------------


def load_sc_dataset(
    path: str | Path, format: str, domain: str = "laptop"
) -> LoadResult:
    """Load a sentiment-classification dataset.

    Emits one instance per (sentence, aspect) pair with polarity populated.
    Aspects labeled "conflict" are dropped and recorded as rejections, as are
    aspects that cannot be located in their sentence.
    """
    if format not in SC_FORMATS:
        raise ArgumentError(f"unknown SC format {format!r}; expected {SC_FORMATS}")
    if format == "jsonl":
        return _load_jsonl_task(path, task="sc")
    return _load_semeval_xml(path, domain)


def _load_semeval_xml(path: str | Path, domain: str) -> LoadResult:
    path = Path(path)
    try:
        tree = ET.parse(path)
    except ET.ParseError as exc:
        line, col = exc.position
        raise FormatError(str(exc), locator=f"{path}:{line}:{col}") from exc
    except OSError as exc:
        raise FormatError(str(exc), locator=str(path)) from exc

    instances: list[RawInstance] = []
    rejections: list[Rejection] = []
    warnings: list[LoadWarning] = []
    for sent in tree.getroot().iter("sentence"):
        sid = sent.get("id", "")
        text_el = sent.find("text")
        if text_el is None or text_el.text is None:
            rejections.append(Rejection(f"{path}:{sid}", "sentence without text"))
            continue
        text = text_el.text
        word_spans = tokenize_text(text)
        words = tuple(w for w, _, _ in word_spans)
        terms = sent.find("aspectTerms")
        if terms is None:
            continue
        for k, term_el in enumerate(terms.findall("aspectTerm")):
            locator = f"{sid}#{k}"
            term = term_el.get("term") or ""
            polarity = term_el.get("polarity") or ""
            if polarity == "conflict":
                rejections.append(Rejection(locator, "conflict polarity"))
                continue
            if polarity not in POLARITIES:
                rejections.append(Rejection(locator, f"bad polarity {polarity!r}"))
                continue
            span = _locate_term(text, word_spans, term_el, term, locator, warnings)
            if span is None:
                rejections.append(
                    Rejection(locator, f"aspect {term!r} not locatable in sentence")
                )
                continue
            ws, we = span
            try:
                instances.append(
                    RawInstance(
                        instance_id=locator,
                        words=words,
                        aspect_start=ws,
                        aspect_end=we,
                        aspect_text=" ".join(words[ws : we + 1]),
                        polarity=polarity,
                        domain=domain,
                    )
                )
            except ArgumentError as exc:
                rejections.append(Rejection(locator, str(exc)))
    return LoadResult(tuple(instances), tuple(rejections), tuple(warnings))


def _locate_term(
    text: str,
    word_spans: Sequence[tuple[str, int, int]],
    term_el: ET.Element,
    term: str,
    locator: str,
    warnings: list[LoadWarning],
) -> tuple[int, int] | None:
    """Map an aspect term to a word span. Character offsets win when present
    and consistent; otherwise the first string occurrence is used with a warning."""
    c_from, c_to = term_el.get("from"), term_el.get("to")
    if c_from is not None and c_to is not None:
        try:
            f, t = int(c_from), int(c_to)
        except ValueError:
            f = t = -1
        if 0 <= f < t <= len(text) and text[f:t] == term:
            return _char_span_to_words(word_spans, f, t)
    pos = text.find(term)
    if pos < 0 or not term:
        return None
    occurrences = text.count(term)
    if occurrences > 1:
        warnings.append(
            LoadWarning(locator, f"aspect {term!r} occurs {occurrences} times; "
                                 "using first occurrence")
        )
    return _char_span_to_words(word_spans, pos, pos + len(term))


# ---------------------------------------------------------------------------
# OE loading (TOWE-style TSV / canonical JSONL)
# ---------------------------------------------------------------------------


def load_oe_dataset(
    path: str | Path, format: str, domain: str = "laptop"
) -> LoadResult:
    """Load an opinion-extraction dataset.

    TSV rows look like::

        sentence_id <TAB> sentence <TAB> aspect##start,end <TAB> op##s,e;op##s,e

    The sentence column is already space-tokenized; spans are inclusive word
    indices. Every accepted instance carries at least one opinion span and no
    polarity. Overlapping or out-of-range spans reject the row.
    """
    if format not in OE_FORMATS:
        raise ArgumentError(f"unknown OE format {format!r}; expected {OE_FORMATS}")
    if format == "jsonl":
        return _load_jsonl_task(path, task="oe")
    return _load_towe_tsv(path, domain)


def _parse_span_field(field: str) -> tuple[str, int, int]:
    text, sep, span = field.rpartition("##")
    if not sep:
        raise ValueError(f"missing '##' in span field {field!r}")
    s_str, _, e_str = span.partition(",")
    return text, int(s_str), int(e_str)


def _load_towe_tsv(path: str | Path, domain: str) -> LoadResult:
    path = Path(path)
    instances: list[RawInstance] = []
    rejections: list[Rejection] = []
    per_sentence: dict[str, int] = {}
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FormatError(str(exc), locator=str(path)) from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        locator = f"{path}:{lineno}"
        cols = line.rstrip("\n").split("\t")
        if len(cols) != 4:
            raise FormatError(f"expected 4 tab-separated columns, got {len(cols)}",
                              locator=locator)
        sid, sentence, aspect_field, opinion_field = cols
        words = tuple(sentence.split())
        k = per_sentence.get(sid, 0)
        per_sentence[sid] = k + 1
        instance_id = f"{sid}#{k}"
        try:
            aspect_text, a_s, a_e = _parse_span_field(aspect_field)
            spans = []
            for part in opinion_field.split(";"):
                if part.strip():
                    _, o_s, o_e = _parse_span_field(part)
                    spans.append((o_s, o_e))
        except ValueError as exc:
            rejections.append(Rejection(locator, str(exc)))
            continue
        if not spans:
            rejections.append(Rejection(locator, "no opinion span"))
            continue
        spans.sort()
        try:
            instances.append(
                RawInstance(
                    instance_id=instance_id,
                    words=words,
                    aspect_start=a_s,
                    aspect_end=a_e,
                    aspect_text=aspect_text,
                    opinion_spans=tuple(spans),
                    domain=domain,
                )
            )
        except ArgumentError as exc:
            rejections.append(Rejection(locator, str(exc)))
    return LoadResult(tuple(instances), tuple(rejections))


# ---------------------------------------------------------------------------
# Canonical JSONL
# ---------------------------------------------------------------------------

_KNOWN_KEYS = frozenset(
    {"id", "words", "aspect", "polarity", "opinions", "domain", "origin",
     "strategy", "parent_id"}
)


def instance_to_obj(inst: RawInstance) -> dict:
    obj: dict = {
        "id": inst.instance_id,
        "words": list(inst.words),
        "aspect": {
            "start": inst.aspect_start,
            "end": inst.aspect_end,
            "text": inst.aspect_text,
        },
        "polarity": inst.polarity,
        "opinions": [list(s) for s in inst.opinion_spans]
        if inst.opinion_spans is not None
        else None,
        "domain": inst.domain,
        "origin": inst.origin,
    }
    strategy = getattr(inst, "strategy", None)
    if strategy is not None:
        obj["strategy"] = strategy
        obj["parent_id"] = getattr(inst, "parent_id", None)
    return obj


def instance_from_obj(obj: dict, locator: str = "<jsonl>") -> RawInstance:
    unknown = set(obj) - _KNOWN_KEYS
    if unknown:
        raise FormatError(f"unknown keys {sorted(unknown)}", locator=locator)
    try:
        aspect = obj["aspect"]
        kwargs = dict(
            instance_id=obj["id"],
            words=tuple(obj["words"]),
            aspect_start=int(aspect["start"]),
            aspect_end=int(aspect["end"]),
            aspect_text=aspect["text"],
            polarity=obj.get("polarity"),
            opinion_spans=tuple(tuple(s) for s in obj["opinions"])
            if obj.get("opinions") is not None
            else None,
            domain=obj.get("domain", "laptop"),
            origin=obj.get("origin", "standard"),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed instance object: {exc}", locator=locator) from exc
    if "strategy" in obj:
        from .advgen import AdvVariant  # deferred: advgen depends on corpus

        return AdvVariant(
            strategy=obj["strategy"], parent_id=obj.get("parent_id", ""), **kwargs
        )
    return RawInstance(**kwargs)


def write_jsonl(instances: Iterable[RawInstance], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for inst in instances:
            f.write(json.dumps(instance_to_obj(inst), ensure_ascii=False) + "\n")


def read_jsonl(path: str | Path) -> list[RawInstance]:
    path = Path(path)
    out: list[RawInstance] = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FormatError(str(exc), locator=str(path)) from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        locator = f"{path}:{lineno}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(str(exc), locator=locator) from exc
        out.append(instance_from_obj(obj, locator=locator))
    return out


def _load_jsonl_task(path: str | Path, task: str) -> LoadResult:
    instances: list[RawInstance] = []
    rejections: list[Rejection] = []
    for inst in read_jsonl(path):
        if task == "sc" and inst.polarity is None:
            rejections.append(Rejection(inst.instance_id, "missing polarity"))
        elif task == "oe" and not inst.opinion_spans:
            rejections.append(Rejection(inst.instance_id, "no opinion span"))
        else:
            instances.append(inst)
    return LoadResult(tuple(instances), tuple(rejections))


# ---------------------------------------------------------------------------
# Splits and statistics
# ---------------------------------------------------------------------------


def split_dev_sc(
    train: Sequence[RawInstance], n_dev: int = 150, seed: int = 0
) -> tuple[list[RawInstance], list[RawInstance]]:
    """Uniformly sample ``n_dev`` instances as the dev set, reproducibly."""
    if not 0 <= n_dev < len(train):
        raise ArgumentError(
            f"n_dev={n_dev} must satisfy 0 <= n_dev < len(train)={len(train)}"
        )
    rng = random.Random(seed)
    dev_idx = set(rng.sample(range(len(train)), n_dev))
    train_out = [inst for k, inst in enumerate(train) if k not in dev_idx]
    dev_out = [inst for k, inst in enumerate(train) if k in dev_idx]
    return train_out, dev_out


def split_dev_oe(
    train: Sequence[RawInstance], fraction: float = 0.2, seed: int = 0
) -> tuple[list[RawInstance], list[RawInstance]]:
    """Hold out a fraction of *sentences* (round-half-even) as the dev set,
    so all aspects of one sentence land on the same side."""
    if not 0 <= fraction < 1:
        raise ArgumentError(f"fraction={fraction} must lie in [0, 1)")
    keys: list[str] = []
    seen: set[str] = set()
    for inst in train:
        if inst.sentence_key not in seen:
            seen.add(inst.sentence_key)
            keys.append(inst.sentence_key)
    n_dev = round(fraction * len(keys))
    rng = random.Random(seed)
    chosen = set(rng.sample(keys, n_dev))
    train_out = [inst for inst in train if inst.sentence_key not in chosen]
    dev_out = [inst for inst in train if inst.sentence_key in chosen]
    return train_out, dev_out


def compute_stats(instances: Iterable[RawInstance]) -> DatasetStats:
    sentences: set[str] = set()
    n_aspects = 0
    counts = {p: 0 for p in POLARITIES}
    for inst in instances:
        sentences.add(inst.sentence_key)
        n_aspects += 1
        if inst.polarity is not None:
            counts[inst.polarity] += 1
    return DatasetStats(len(sentences), n_aspects, counts)
