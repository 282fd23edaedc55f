"""Adversarial test-set generation for opinion extraction and classification.

Three strategies perturb a standard test set while keeping every edited
sentence annotated with valid word-level spans:

* ``REVTGT``  reverses the sentiment of the target aspect by swapping its
  opinion words for lexicon antonyms (falling back to negator insertion, or
  negator deletion to avoid double negation), flipping and<->but where the
  edited clause was linked to a clause of formerly equal sentiment.
* ``REVNON``  reverses the opinions of non-target aspects that shared the
  target's sentiment, leaving the target's label and span text intact.
* ``ADDDIFF`` appends up to ``k`` opposite-sentiment distractor clauses built
  from templates over (aspect, opinion) pairs harvested from training data.

Every source instance also yields a ``SOURCE`` copy so the generated file is a
self-contained test set. Output uses the corpus JSONL schema plus
``strategy``/``parent_id`` fields and origin=adversarial.
"""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import RawInstance
from .encoder import stable_seed
from .errors import ArgumentError, FormatError, StrategySkip

STRATEGIES = ("SOURCE", "REVTGT", "REVNON", "ADDDIFF")

_POLARITY_FLIP = {"positive": "negative", "negative": "positive"}
_PUNCT_CHARS = frozenset(".,!?;:")


def flip_polarity(polarity: str | None) -> str | None:
    if polarity is None:
        return None
    flipped = _POLARITY_FLIP.get(polarity)
    if flipped is None:
        raise ArgumentError(f"cannot flip polarity {polarity!r}")
    return flipped


def _match_case(original: str, replacement: str) -> str:
    if original.isupper() and len(original) > 1:
        return replacement.upper()
    if original[:1].isupper():
        return replacement.capitalize()
    return replacement


# ---------------------------------------------------------------------------
# Lexicon
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LexEntry:
    antonym: str | None
    polarity: str


@dataclass(frozen=True)
class Lexicon:
    """Opinion-word antonyms and polarities, plus negators and conjunction flips.

    Lookup is case-insensitive. Where both directions of an antonym pair
    exist they must point at each other, and no word may map to itself.
    """

    entries: Mapping[str, LexEntry]
    negators: tuple[str, ...] = ("not",)
    conjunction_flips: Mapping[str, str] = field(
        default_factory=lambda: {"and": "but", "but": "and"}
    )

    def __post_init__(self):
        for word, entry in self.entries.items():
            if entry.antonym is None:
                continue
            if entry.antonym == word:
                raise ArgumentError(f"lexicon word {word!r} maps to itself")
            back = self.entries.get(entry.antonym)
            if back is not None and back.antonym is not None and back.antonym != word:
                raise ArgumentError(
                    f"inconsistent antonym pair: {word!r} -> {entry.antonym!r} "
                    f"but {entry.antonym!r} -> {back.antonym!r}"
                )

    def antonym(self, word: str) -> str | None:
        entry = self.entries.get(word.lower())
        return entry.antonym if entry else None

    def polarity(self, word: str) -> str | None:
        entry = self.entries.get(word.lower())
        return entry.polarity if entry else None

    def is_negator(self, word: str) -> bool:
        return word.lower() in self.negators

    @classmethod
    def from_tsv(cls, path: str | Path) -> "Lexicon":
        """Load ``word <TAB> antonym <TAB> polarity`` rows; '-' means no antonym."""
        entries: dict[str, LexEntry] = {}
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise FormatError(
                    f"expected 3 tab-separated columns, got {len(cols)}",
                    locator=f"{path}:{lineno}",
                )
            word, antonym, polarity = (c.strip().lower() for c in cols)
            if polarity not in ("positive", "negative"):
                raise FormatError(
                    f"polarity must be positive|negative, got {polarity!r}",
                    locator=f"{path}:{lineno}",
                )
            entries[word] = LexEntry(None if antonym == "-" else antonym, polarity)
        return cls(entries=entries)

    @classmethod
    def seed(cls) -> "Lexicon":
        """The bundled ~200-word opinion lexicon used by tests and defaults."""
        ref = resources.files("absakit.data").joinpath("seed_lexicon.tsv")
        with resources.as_file(ref) as path:
            return cls.from_tsv(path)


# ---------------------------------------------------------------------------
# Variants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdvVariant(RawInstance):
    """A generated instance: RawInstance fields plus provenance.

    ``companions`` holds re-annotated sibling instances that share this
    variant's sentence (non-target aspects, added distractor aspects); the
    generator flattens them into the emitted set.
    """

    strategy: str = "SOURCE"
    parent_id: str = ""
    companions: tuple["AdvVariant", ...] = ()

    def __post_init__(self):
        super().__post_init__()
        if self.strategy not in STRATEGIES:
            raise ArgumentError(f"unknown strategy {self.strategy!r}")


def _instance_sentiment(inst: RawInstance, lex: Lexicon) -> str | None:
    """Polarity label when present, else lexicon polarity of its opinion words."""
    if inst.polarity is not None:
        return inst.polarity
    for s, e in inst.opinion_spans or ():
        for w in inst.words[s : e + 1]:
            pol = lex.polarity(w)
            if pol:
                return pol
    return None


def _aspect_range(inst: RawInstance) -> set[int]:
    return set(range(inst.aspect_start, inst.aspect_end + 1))


def _reverse_spans(
    words: Sequence[str],
    spans: Sequence[tuple[int, int]],
    lex: Lexicon,
    protected: set[int],
) -> tuple[list[str], list[tuple[int, int]], dict[int, int]]:
    """Reverse the opinion expressed by each span, left to right.

    Preference order per span: antonym substitution on every antonym-bearing
    word; deletion of an immediately preceding negator (avoids "not bad" ->
    "not good bad" pileups); otherwise insertion of a negator before the span.
    Returns the new words, the re-pointed span per input span, and an
    old->new index map covering all unedited positions.
    """
    new_words: list[str] = []
    index_map: dict[int, int] = {}
    new_spans: list[tuple[int, int]] = []
    pos = 0
    for s, e in sorted(spans):
        if s < pos:
            raise ArgumentError("opinion spans to edit overlap")
        antonyms = {
            i: lex.antonym(words[i])
            for i in range(s, e + 1)
            if i not in protected and lex.antonym(words[i])
        }
        if antonyms:
            action = "antonym"
        elif s - 1 >= pos and s - 1 not in protected and lex.is_negator(words[s - 1]):
            action = "denegate"
        else:
            action = "negate"
        copy_to = s - 1 if action == "denegate" else s
        for i in range(pos, copy_to):
            index_map[i] = len(new_words)
            new_words.append(words[i])
        span_start = len(new_words)
        if action == "negate":
            new_words.append("not")
        for i in range(s, e + 1):
            if action == "antonym" and i in antonyms:
                new_words.extend(_match_case(words[i], antonyms[i]).split())
            else:
                index_map[i] = len(new_words)
                new_words.append(words[i])
        new_spans.append((span_start, len(new_words) - 1))
        pos = e + 1
    for i in range(pos, len(words)):
        index_map[i] = len(new_words)
        new_words.append(words[i])
    return new_words, new_spans, index_map


def _remap_span(span: tuple[int, int], index_map: dict[int, int]) -> tuple[int, int]:
    s, e = span
    if s not in index_map or e not in index_map:
        raise ArgumentError(f"span {span} was destroyed by editing")
    return index_map[s], index_map[e]


def _lexicon_conjunction_flips(
    words: Sequence[str],
    edited_spans: Sequence[tuple[int, int]],
    original_sentiment: str | None,
    lex: Lexicon,
    excluded: set[int],
) -> set[int]:
    """Positions of conjunctions to flip, detected from the lexicon alone.

    A conjunction qualifies when, on its far side relative to an edited span,
    some opinion word still carries the span's original sentiment — i.e. the
    conjunction linked the edited clause to a clause of formerly equal
    sentiment. The nearest qualifying conjunction per edited span flips.
    """
    if original_sentiment not in _POLARITY_FLIP:
        return set()
    edited_positions = {i for s, e in edited_spans for i in range(s, e + 1)}
    flips: set[int] = set()
    for s, e in edited_spans:
        best: tuple[int, int] | None = None  # (distance, position)
        for j, w in enumerate(words):
            if w.lower() not in lex.conjunction_flips or j in edited_positions:
                continue
            if j > e:
                far = range(j + 1, len(words))
                dist = j - e
            elif j < s:
                far = range(0, j)
                dist = s - j
            else:
                continue
            same_sentiment = any(
                k not in edited_positions
                and k not in excluded
                and lex.polarity(words[k]) == original_sentiment
                for k in far
            )
            if same_sentiment and (best is None or dist < best[0]):
                best = (dist, j)
        if best is not None:
            flips.add(best[1])
    return flips


def _between_conjunction_flips(
    words: Sequence[str],
    edited_spans: Sequence[tuple[int, int]],
    anchor_spans: Sequence[tuple[int, int]],
    lex: Lexicon,
) -> set[int]:
    """Nearest conjunction strictly between each edited span and an anchor span."""
    flips: set[int] = set()
    for s, e in edited_spans:
        best: tuple[int, int] | None = None
        for a_s, a_e in anchor_spans:
            if a_s > e:
                lo, hi = e + 1, a_s
            elif a_e < s:
                lo, hi = a_e + 1, s
            else:
                continue
            for j in range(lo, hi):
                if words[j].lower() in lex.conjunction_flips:
                    dist = min(abs(j - e), abs(s - j))
                    if best is None or dist < best[0]:
                        best = (dist, j)
        if best is not None:
            flips.add(best[1])
    return flips


def _apply_flips(words: list[str], flips: set[int], index_map: dict[int, int],
                 lex: Lexicon) -> None:
    for j in flips:
        new_j = index_map[j]
        original = words[new_j]
        words[new_j] = _match_case(original, lex.conjunction_flips[original.lower()])


def _companion(
    source: RawInstance,
    sentence_key: str,
    ordinal: int,
    strategy: str,
    new_words: Sequence[str],
    aspect_span: tuple[int, int],
    opinion_spans: Sequence[tuple[int, int]] | None,
    polarity: str | None,
    companions: Sequence[AdvVariant] = (),
) -> AdvVariant:
    a_s, a_e = aspect_span
    new_words = tuple(new_words)
    return AdvVariant(
        instance_id=f"{sentence_key}#{ordinal}",
        words=new_words,
        aspect_start=a_s,
        aspect_end=a_e,
        aspect_text=" ".join(new_words[a_s : a_e + 1]),
        polarity=polarity,
        opinion_spans=tuple(sorted(opinion_spans)) if opinion_spans else None,
        domain=source.domain,
        origin="adversarial",
        strategy=strategy,
        parent_id=source.instance_id,
        companions=tuple(companions),
    )


def _group_companions(
    group: Sequence[RawInstance],
    target: RawInstance,
    sentence_key: str,
    strategy: str,
    new_words: Sequence[str],
    index_map: dict[int, int],
    edited_lookup: dict[tuple[int, int], tuple[int, int]],
    flipped: set[str],
    skip_ids: frozenset[str] = frozenset(),
) -> list[AdvVariant]:
    """Re-annotate the non-target aspects of the sentence onto the new words.

    Companions listed in ``skip_ids`` (or whose annotations an edit destroyed)
    are dropped rather than emitted with labels that no longer hold.
    """
    companions: list[AdvVariant] = []
    ordinal = 1
    for other in group:
        if other.instance_id == target.instance_id or other.instance_id in skip_ids:
            continue
        try:
            aspect_span = _remap_span((other.aspect_start, other.aspect_end), index_map)
            spans = [
                edited_lookup.get(tuple(sp)) or _remap_span(tuple(sp), index_map)
                for sp in other.opinion_spans or ()
            ]
        except ArgumentError:
            continue  # annotation destroyed by an edit; drop the companion
        polarity = (
            flip_polarity(other.polarity)
            if other.instance_id in flipped and other.polarity in _POLARITY_FLIP
            else other.polarity
        )
        companions.append(
            _companion(
                other, sentence_key, ordinal, strategy, new_words,
                aspect_span, spans or None, polarity,
            )
        )
        ordinal += 1
    return companions


def _ids_touching_spans(
    group: Sequence[RawInstance],
    target_id: str,
    edited: set[tuple[int, int]],
) -> tuple[frozenset[str], frozenset[str]]:
    """Split non-targets into (all spans edited, partially edited)."""
    fully: set[str] = set()
    partial: set[str] = set()
    for other in group:
        if other.instance_id == target_id or not other.opinion_spans:
            continue
        hit = sum(1 for sp in other.opinion_spans if tuple(sp) in edited)
        if hit == len(other.opinion_spans):
            fully.add(other.instance_id)
        elif hit:
            partial.add(other.instance_id)
    return frozenset(fully), frozenset(partial)


# ---------------------------------------------------------------------------
# Strategies
# ---------------------------------------------------------------------------


def rev_tgt(
    inst: RawInstance, lex: Lexicon, group: Sequence[RawInstance] = ()
) -> AdvVariant:
    """Reverse the sentiment expressed toward the target aspect."""
    if inst.polarity == "neutral":
        raise StrategySkip("neutral target")
    if not inst.opinion_spans:
        raise StrategySkip("no opinion span to edit")
    protected = _aspect_range(inst)
    for other in group:
        protected |= _aspect_range(other)
    editable = [
        sp
        for sp in inst.opinion_spans
        if not any(i in protected for i in range(sp[0], sp[1] + 1))
    ]
    if not editable:
        raise StrategySkip("no editable opinion word")
    sentiment = _instance_sentiment(inst, lex)

    new_words, new_spans, index_map = _reverse_spans(
        inst.words, editable, lex, protected
    )
    flips = _lexicon_conjunction_flips(
        inst.words, editable, sentiment, lex, excluded=protected
    )
    _apply_flips(new_words, flips, index_map, lex)

    sentence_key = f"{inst.instance_id}@revtgt"
    kept = [
        _remap_span(tuple(sp), index_map)
        for sp in inst.opinion_spans
        if tuple(sp) not in {tuple(e) for e in editable}
    ]
    edited_lookup = {tuple(old): new for old, new in zip(editable, new_spans)}
    # a non-target sharing an edited span had its opinion reversed too; its
    # original label no longer holds, so it is not re-emitted
    fully, partial = _ids_touching_spans(group, inst.instance_id,
                                         set(edited_lookup))
    companions = _group_companions(
        group, inst, sentence_key, "REVTGT", new_words, index_map,
        edited_lookup, flipped=set(), skip_ids=fully | partial,
    )
    return _companion(
        inst,
        sentence_key,
        0,
        "REVTGT",
        new_words,
        _remap_span((inst.aspect_start, inst.aspect_end), index_map),
        sorted(new_spans + kept),
        flip_polarity(inst.polarity),
        companions=companions,
    )


def rev_non(
    group: Sequence[RawInstance], target_id: str, lex: Lexicon
) -> AdvVariant:
    """Reverse same-sentiment non-target opinions; keep the target intact."""
    by_id = {i.instance_id: i for i in group}
    target = by_id.get(target_id)
    if target is None:
        raise ArgumentError(f"target {target_id!r} not in group")
    sentiment = _instance_sentiment(target, lex)
    if sentiment is None:
        raise StrategySkip("target sentiment undetermined")
    same = [
        o
        for o in group
        if o.instance_id != target_id
        and o.opinion_spans
        and _instance_sentiment(o, lex) == sentiment
    ]
    if not same:
        raise StrategySkip("no same-sentiment non-target aspect")

    protected = set()
    for member in group:
        protected |= _aspect_range(member)
    for sp in target.opinion_spans or ():
        protected |= set(range(sp[0], sp[1] + 1))
    spans_to_edit = sorted(
        {
            tuple(sp)
            for o in same
            for sp in o.opinion_spans
            if not any(i in protected for i in range(sp[0], sp[1] + 1))
        }
    )
    if not spans_to_edit:
        raise StrategySkip("no editable opinion word")

    new_words, new_spans, index_map = _reverse_spans(
        target.words, spans_to_edit, lex, protected
    )
    flips = _between_conjunction_flips(
        target.words, spans_to_edit, list(target.opinion_spans or ()), lex
    )
    _apply_flips(new_words, flips, index_map, lex)

    sentence_key = f"{target.instance_id}@revnon"
    edited_lookup = {old: new for old, new in zip(spans_to_edit, new_spans)}
    # flip labels only where every span really was edited; drop half-edited ones
    fully, partial = _ids_touching_spans(group, target.instance_id,
                                         set(edited_lookup))
    companions = _group_companions(
        group, target, sentence_key, "REVNON", new_words, index_map,
        edited_lookup, flipped=set(fully), skip_ids=partial,
    )
    return _companion(
        target,
        sentence_key,
        0,
        "REVNON",
        new_words,
        _remap_span((target.aspect_start, target.aspect_end), index_map),
        [_remap_span(tuple(sp), index_map) for sp in target.opinion_spans or ()],
        target.polarity,
        companions=companions,
    )


# ---------------------------------------------------------------------------
# Distractor pool / AddDiff
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DistractorEntry:
    aspect_words: tuple[str, ...]
    opinion_words: tuple[str, ...]
    polarity: str
    template: str


@dataclass(frozen=True)
class DistractorPool:
    entries: tuple[DistractorEntry, ...]
    n_dropped: int = 0


def default_templates() -> list[str]:
    ref = resources.files("absakit.data").joinpath("distractor_templates.json")
    templates = json.loads(ref.read_text(encoding="utf-8"))["templates"]
    for t in templates:
        if "{aspect}" not in t.split() or "{opinion}" not in t.split():
            raise FormatError(f"template {t!r} must contain {{aspect}} and {{opinion}}")
    return templates


def build_distractor_pool(
    train: Sequence[RawInstance],
    lex: Lexicon,
    templates: Sequence[str] | None = None,
) -> DistractorPool:
    """One entry per distinct (aspect, opinion) pair from the training data.

    Polarity comes from the instance label when present, else from the
    lexicon polarity of the opinion words; pairs with neither are dropped
    and counted.
    """
    templates = list(templates) if templates is not None else default_templates()
    entries: list[DistractorEntry] = []
    seen: set[tuple] = set()
    dropped = 0
    for inst in train:
        for s, e in inst.opinion_spans or ():
            opinion = inst.words[s : e + 1]
            key = (
                tuple(w.lower() for w in inst.aspect_words),
                tuple(w.lower() for w in opinion),
            )
            if key in seen:
                continue
            polarity = (
                inst.polarity
                if inst.polarity in _POLARITY_FLIP
                else next(
                    (lex.polarity(w) for w in opinion if lex.polarity(w)), None
                )
            )
            if polarity is None:
                dropped += 1
                continue
            seen.add(key)
            entries.append(
                DistractorEntry(
                    aspect_words=tuple(inst.aspect_words),
                    opinion_words=tuple(opinion),
                    polarity=polarity,
                    template=templates[len(entries) % len(templates)],
                )
            )
    return DistractorPool(tuple(entries), n_dropped=dropped)


def _instantiate_template(
    entry: DistractorEntry,
) -> tuple[list[str], tuple[int, int], tuple[int, int]]:
    words: list[str] = []
    a_span = o_span = None
    for token in entry.template.split():
        if token == "{aspect}":
            a_span = (len(words), len(words) + len(entry.aspect_words) - 1)
            words.extend(entry.aspect_words)
        elif token == "{opinion}":
            o_span = (len(words), len(words) + len(entry.opinion_words) - 1)
            words.extend(entry.opinion_words)
        else:
            words.append(token)
    return words, a_span, o_span


def add_diff(
    inst: RawInstance,
    pool: DistractorPool,
    k: int = 2,
    seed: int = 0,
    lex: Lexicon | None = None,
) -> AdvVariant:
    """Append up to ``k`` opposite-sentiment distractor clauses.

    The first clause replaces sentence-final punctuation with ", but <clause> .",
    later ones follow as "And <clause> .". Target annotations are untouched.
    When the pool holds fewer than ``k`` usable entries, as many as available
    are added (the generator records the shortfall).
    """
    if k < 0:
        raise ArgumentError("k must be non-negative")
    sentiment = inst.polarity
    if sentiment is None and lex is not None:
        sentiment = _instance_sentiment(inst, lex)
    if sentiment not in _POLARITY_FLIP:
        raise StrategySkip("target sentiment undetermined or neutral")
    wanted = flip_polarity(sentiment)
    target_aspect = tuple(w.lower() for w in inst.aspect_words)
    candidates = [
        e
        for e in pool.entries
        if e.polarity == wanted
        and tuple(w.lower() for w in e.aspect_words) != target_aspect
    ]
    rng = random.Random(seed)
    n_take = min(k, len(candidates))
    chosen_idx = sorted(rng.sample(range(len(candidates)), n_take))
    chosen = [candidates[i] for i in chosen_idx]

    words = list(inst.words)
    occupied = _aspect_range(inst) | {
        i for sp in inst.opinion_spans or () for i in range(sp[0], sp[1] + 1)
    }
    if chosen and words and all(ch in _PUNCT_CHARS for ch in words[-1]) \
            and (len(words) - 1) not in occupied:
        words = words[:-1]

    sentence_key = f"{inst.instance_id}@adddiff"
    placements: list[tuple[DistractorEntry, int, tuple[int, int], tuple[int, int]]] = []
    for c_idx, entry in enumerate(chosen):
        clause, a_rel, o_rel = _instantiate_template(entry)
        joiner = [",", "but"] if c_idx == 0 else ["And"]
        offset = len(words) + len(joiner)
        words.extend(joiner)
        words.extend(clause)
        words.append(".")
        placements.append((entry, offset, a_rel, o_rel))

    final_words = tuple(words)
    built_companions = []
    for ordinal, (entry, offset, a_rel, o_rel) in enumerate(placements, start=1):
        built_companions.append(
            AdvVariant(
                instance_id=f"{sentence_key}#{ordinal}",
                words=final_words,
                aspect_start=a_rel[0] + offset,
                aspect_end=a_rel[1] + offset,
                aspect_text=" ".join(
                    final_words[a_rel[0] + offset : a_rel[1] + offset + 1]
                ),
                polarity=entry.polarity,
                opinion_spans=((o_rel[0] + offset, o_rel[1] + offset),),
                domain=inst.domain,
                origin="adversarial",
                strategy="ADDDIFF",
                parent_id=inst.instance_id,
            )
        )

    return AdvVariant(
        instance_id=f"{sentence_key}#0",
        words=final_words,
        aspect_start=inst.aspect_start,
        aspect_end=inst.aspect_end,
        aspect_text=inst.aspect_text,
        polarity=inst.polarity,
        opinion_spans=inst.opinion_spans,
        domain=inst.domain,
        origin="adversarial",
        strategy="ADDDIFF",
        parent_id=inst.instance_id,
        companions=tuple(built_companions),
    )


# ---------------------------------------------------------------------------
# Full-set generation
# ---------------------------------------------------------------------------


@dataclass
class GenerationResult:
    variants: list[AdvVariant]
    manifest: dict


def _source_copy(inst: RawInstance, ordinal: int) -> AdvVariant:
    return AdvVariant(
        instance_id=f"{inst.sentence_key}@source#{ordinal}",
        words=inst.words,
        aspect_start=inst.aspect_start,
        aspect_end=inst.aspect_end,
        aspect_text=inst.aspect_text,
        polarity=inst.polarity,
        opinion_spans=inst.opinion_spans,
        domain=inst.domain,
        origin="adversarial",
        strategy="SOURCE",
        parent_id=inst.instance_id,
    )


def generate_arts_oe(
    test: Sequence[RawInstance],
    train: Sequence[RawInstance],
    lex: Lexicon,
    seed: int = 0,
    k: int = 2,
    templates: Sequence[str] | None = None,
) -> GenerationResult:
    """Emit SOURCE plus every applicable strategy variant per test instance.

    Sentence groups are processed independently in instance-id order, so the
    output is deterministic for a fixed seed. Variants that fail schema
    validation are dropped and logged in the manifest rather than aborting
    the run.
    """
    pool = build_distractor_pool(train, lex, templates=templates)
    groups: dict[str, list[RawInstance]] = {}
    for inst in test:
        groups.setdefault(inst.sentence_key, []).append(inst)

    variants: list[AdvVariant] = []
    counts: Counter = Counter()
    skips: dict[str, Counter] = {s: Counter() for s in STRATEGIES}
    dropped: list[dict] = []
    shortfall = 0

    def emit(variant: AdvVariant):
        # flatten: companions become ordinary rows of the emitted set
        variants.append(replace(variant, companions=()))
        counts[variant.strategy] += 1
        for comp in variant.companions:
            variants.append(comp)
            counts[comp.strategy] += 1

    for inst in sorted(test, key=lambda i: i.instance_id):
        group = groups[inst.sentence_key]
        emit(_source_copy(inst, group.index(inst)))
        for name, make in (
            ("REVTGT", lambda: rev_tgt(inst, lex, group=group)),
            ("REVNON", lambda: rev_non(group, inst.instance_id, lex)),
            ("ADDDIFF", lambda: add_diff(
                inst, pool, k=k,
                seed=stable_seed(seed, inst.instance_id, "adddiff"), lex=lex,
            )),
        ):
            try:
                variant = make()
            except StrategySkip as skip:
                skips[name][skip.reason] += 1
                continue
            except ArgumentError as exc:
                dropped.append({"parent": inst.instance_id, "strategy": name,
                                "error": str(exc)})
                continue
            if name == "ADDDIFF" and len(variant.companions) < k:
                shortfall += k - len(variant.companions)
            emit(variant)

    sentence_keys = {v.sentence_key for v in variants}
    sentence_keys_adv = {v.sentence_key for v in variants if v.strategy != "SOURCE"}
    manifest = {
        "seed": seed,
        "strategy_counts": {s: counts.get(s, 0) for s in STRATEGIES},
        "instances": {
            "inclusive": len(variants),
            "exclusive": sum(1 for v in variants if v.strategy != "SOURCE"),
        },
        "sentences": {
            "inclusive": len(sentence_keys),
            "exclusive": len(sentence_keys_adv),
        },
        "skips": {s: dict(c) for s, c in skips.items() if c},
        "dropped": dropped,
        "adddiff_shortfall": shortfall,
        "pool": {"size": len(pool.entries), "dropped": pool.n_dropped},
    }
    return GenerationResult(variants=variants, manifest=manifest)
