"""Aspect-specific input constructions at the subword level.

Four kinds are supported, named by how they expose the aspect to the encoder:

* ``AG`` (generality)  — ``[CLS] w1 .. wn [SEP]``, no aspect signal.
* ``AC`` (companion)   — sentence, then the aspect appended between separators.
* ``AP`` (prompt)      — sentence, then "the target aspect is <aspect>" before
  the final separator.
* ``AM`` (marker)      — boundary tokens inserted around the in-sentence aspect.

Every construction keeps a subword-to-word alignment map (``word_of``) and a
region tag per position so opinion labels can be projected to word level and
appended material never receives labels. For AC and AP the aspect range always
points at the in-sentence occurrence, never the appended copy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .corpus import RawInstance
from .encoder import ASP_END, ASP_START, TokenizerHandle
from .errors import ArgumentError, ConfigError, TruncationError, UnscoreableError

KINDS = ("AG", "AC", "AP", "AM")
REGION_SENTENCE = "sentence"
REGION_APPENDED = "appended"
REGION_SPECIAL = "special"

DEFAULT_MAX_LEN = 128
PROMPT_WORDS = ("the", "target", "aspect", "is")

TAGS = ("O", "B", "I")
TAG_TO_ID = {"O": 0, "B": 1, "I": 2}
IGNORE = "IGNORE"
IGNORE_ID = -100


@dataclass(frozen=True)
class TransformedInput:
    """Subword sequence after one input construction, with alignment metadata."""

    kind: str
    subtokens: tuple[str, ...]
    token_ids: tuple[int, ...]
    aspect_first: int
    aspect_last: int
    word_of: tuple[int | None, ...]
    region_of: tuple[str, ...]
    instance_id: str = ""

    def __post_init__(self):
        n = len(self.subtokens)
        if not (len(self.token_ids) == len(self.word_of) == len(self.region_of) == n):
            raise ArgumentError("parallel arrays of TransformedInput differ in length")

    def __len__(self) -> int:
        return len(self.subtokens)

    def sentence_positions(self) -> list[int]:
        return [i for i, r in enumerate(self.region_of) if r == REGION_SENTENCE]

    def segment_ids(self) -> tuple[int, ...]:
        """Two-segment signal for AC (sentence-pair style); all zeros otherwise."""
        if self.kind != "AC":
            return (0,) * len(self)
        first_sep = self.region_of.index(REGION_SPECIAL, 1)  # the sentence separator
        return tuple(0 if i <= first_sep else 1 for i in range(len(self)))

    def to_preview_obj(self) -> dict:
        return {
            "kind": self.kind,
            "subtokens": list(self.subtokens),
            "word_of": list(self.word_of),
            "aspect_first": self.aspect_first,
            "aspect_last": self.aspect_last,
        }


@dataclass(frozen=True)
class TagSequence:
    """Per-subword labels over {B, I, O, IGNORE}, parallel to a TransformedInput."""

    labels: tuple[str, ...]

    def __post_init__(self):
        bad = {l for l in self.labels if l not in TAGS and l != IGNORE}
        if bad:
            raise ArgumentError(f"unknown tags {sorted(bad)}")

    def __len__(self) -> int:
        return len(self.labels)

    def to_ids(self) -> list[int]:
        return [IGNORE_ID if l == IGNORE else TAG_TO_ID[l] for l in self.labels]

    @classmethod
    def from_ids(cls, ids: Sequence[int]) -> "TagSequence":
        return cls(tuple(IGNORE if i == IGNORE_ID else TAGS[i] for i in ids))


def reconstruct_words(ti: TransformedInput, tok: TokenizerHandle) -> list[str]:
    """Rebuild the original sentence words from sentence-region subwords."""
    groups: list[list[str]] = []
    last_word = None
    for piece, w, region in zip(ti.subtokens, ti.word_of, ti.region_of):
        if region != REGION_SENTENCE or w is None:
            continue
        if w != last_word:
            groups.append([])
            last_word = w
        groups[-1].append(piece)
    return [tok.detokenize_word(g) for g in groups]


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def _word_pieces(words: Sequence[str], tok: TokenizerHandle) -> list[list[str]]:
    return [tok.tokenize_word(w) for w in words]


def _truncate(
    inst: RawInstance, pieces: list[list[str]], budget: int
) -> list[list[str]]:
    """Drop whole words from the right until the sentence fits the budget."""
    if budget <= 0:
        raise TruncationError(
            f"{inst.instance_id}: no room for sentence under the length budget"
        )
    total = 0
    kept = 0
    for p in pieces:
        if total + len(p) > budget:
            break
        total += len(p)
        kept += 1
    if kept < len(pieces) and kept <= inst.aspect_end:
        raise TruncationError(
            f"{inst.instance_id}: truncation to {budget} subwords would cut the aspect"
        )
    return pieces[:kept]


def _assemble(
    inst: RawInstance,
    tok: TokenizerHandle,
    kind: str,
    sentence_pieces: list[list[str]],
    appended: list[tuple[str, str]],
    with_markers: bool,
) -> TransformedInput:
    """Lay out [CLS] + sentence (+ markers) + appended tail, tracking alignment."""
    subtokens: list[str] = [tok.cls_token]
    word_of: list[int | None] = [None]
    region: list[str] = [REGION_SPECIAL]
    aspect_first = aspect_last = -1
    for w_idx, p in enumerate(sentence_pieces):
        if with_markers and w_idx == inst.aspect_start:
            subtokens.append(ASP_START)
            word_of.append(None)
            region.append(REGION_SPECIAL)
        if w_idx == inst.aspect_start:
            aspect_first = len(subtokens)
        subtokens.extend(p)
        word_of.extend([w_idx] * len(p))
        region.extend([REGION_SENTENCE] * len(p))
        if w_idx == inst.aspect_end:
            aspect_last = len(subtokens) - 1
        if with_markers and w_idx == inst.aspect_end:
            subtokens.append(ASP_END)
            word_of.append(None)
            region.append(REGION_SPECIAL)
    for piece, piece_region in appended:
        subtokens.append(piece)
        word_of.append(None)
        region.append(piece_region)
    return TransformedInput(
        kind=kind,
        subtokens=tuple(subtokens),
        token_ids=tuple(tok.tokens_to_ids(subtokens)),
        aspect_first=aspect_first,
        aspect_last=aspect_last,
        word_of=tuple(word_of),
        region_of=tuple(region),
        instance_id=inst.instance_id,
    )


def apply_generality(
    inst: RawInstance, tok: TokenizerHandle, max_len: int = DEFAULT_MAX_LEN
) -> TransformedInput:
    """``[CLS] sentence [SEP]`` — the aspect-general baseline input."""
    pieces = _truncate(inst, _word_pieces(inst.words, tok), max_len - 2)
    return _assemble(inst, tok, "AG", pieces, [(tok.sep_token, REGION_SPECIAL)], False)


def apply_companion(
    inst: RawInstance, tok: TokenizerHandle, max_len: int = DEFAULT_MAX_LEN
) -> TransformedInput:
    """Sentence followed by the aspect as a second segment: ``.. [SEP] aspect [SEP]``."""
    aspect_pieces = [p for w in inst.aspect_words for p in tok.tokenize_word(w)]
    budget = max_len - 3 - len(aspect_pieces)
    pieces = _truncate(inst, _word_pieces(inst.words, tok), budget)
    tail = [(tok.sep_token, REGION_SPECIAL)]
    tail += [(p, REGION_APPENDED) for p in aspect_pieces]
    tail.append((tok.sep_token, REGION_SPECIAL))
    return _assemble(inst, tok, "AC", pieces, tail, False)


def apply_prompt(
    inst: RawInstance,
    tok: TokenizerHandle,
    max_len: int = DEFAULT_MAX_LEN,
    prompt_words: Sequence[str] = PROMPT_WORDS,
) -> TransformedInput:
    """Sentence followed by "<prompt> <aspect>" before the final separator.

    The default prompt is the lowercase four-word template; pass capitalized
    words to override the casing.
    """
    prompt_pieces = [p for w in prompt_words for p in tok.tokenize_word(w)]
    aspect_pieces = [p for w in inst.aspect_words for p in tok.tokenize_word(w)]
    budget = max_len - 2 - len(prompt_pieces) - len(aspect_pieces)
    pieces = _truncate(inst, _word_pieces(inst.words, tok), budget)
    tail = [(p, REGION_APPENDED) for p in prompt_pieces + aspect_pieces]
    tail.append((tok.sep_token, REGION_SPECIAL))
    return _assemble(inst, tok, "AP", pieces, tail, False)


def apply_marker(
    inst: RawInstance, tok: TokenizerHandle, max_len: int = DEFAULT_MAX_LEN
) -> TransformedInput:
    """Boundary tokens inserted immediately around the in-sentence aspect."""
    if not tok.has_markers:
        raise ConfigError(
            f"aspect markers {ASP_START}/{ASP_END} are not registered in the tokenizer"
        )
    pieces = _truncate(inst, _word_pieces(inst.words, tok), max_len - 4)
    return _assemble(inst, tok, "AM", pieces, [(tok.sep_token, REGION_SPECIAL)], True)


_BUILDERS = {
    "AG": apply_generality,
    "AC": apply_companion,
    "AP": apply_prompt,
    "AM": apply_marker,
}


def apply_transform(
    inst: RawInstance,
    tok: TokenizerHandle,
    kind: str,
    max_len: int = DEFAULT_MAX_LEN,
    prompt_words: Sequence[str] = PROMPT_WORDS,
) -> TransformedInput:
    kind = kind.upper()
    if kind not in _BUILDERS:
        raise ArgumentError(f"unknown transform kind {kind!r}; expected one of {KINDS}")
    if kind == "AP":
        return apply_prompt(inst, tok, max_len=max_len, prompt_words=prompt_words)
    return _BUILDERS[kind](inst, tok, max_len=max_len)


# ---------------------------------------------------------------------------
# Opinion label alignment and projection
# ---------------------------------------------------------------------------


def align_oe_labels(inst: RawInstance, ti: TransformedInput) -> TagSequence:
    """Project gold word-level opinion spans onto subword BIO labels.

    B goes on the first subword of a span's first word, I on every other
    subword of span words; other sentence subwords get O; special and appended
    positions get IGNORE and never contribute loss. Raises UnscoreableError
    when a gold span was truncated out of the input.
    """
    if not inst.opinion_spans:
        raise ArgumentError(f"{inst.instance_id}: no opinion spans to align")
    labels = [
        "O" if r == REGION_SENTENCE else IGNORE for r in ti.region_of
    ]
    positions: dict[int, list[int]] = {}
    for pos, (w, r) in enumerate(zip(ti.word_of, ti.region_of)):
        if r == REGION_SENTENCE and w is not None:
            positions.setdefault(w, []).append(pos)
    for ws, we in inst.opinion_spans:
        if any(w not in positions for w in range(ws, we + 1)):
            raise UnscoreableError(
                f"{inst.instance_id}: gold span ({ws}, {we}) truncated from input"
            )
        first = positions[ws][0]
        labels[first] = "B"
        for w in range(ws, we + 1):
            for pos in positions[w]:
                if pos != first:
                    labels[pos] = "I"
    return TagSequence(tuple(labels))


def project_predictions(
    ti: TransformedInput, tags: TagSequence
) -> list[tuple[int, int]]:
    """Decode subword tags back to word-level spans.

    Maximal B(I)* runs over sentence-region positions are mapped through
    ``word_of`` and merged at word level. Decoding is lenient: an I without a
    preceding B opens a new span. IGNORE positions are skipped without
    closing a run.
    """
    if len(tags) != len(ti):
        raise ArgumentError("tag sequence not parallel to input")
    runs: list[tuple[int, int]] = []
    cur: list[int] | None = None
    for pos in range(len(ti)):
        if ti.region_of[pos] != REGION_SENTENCE:
            continue
        label = tags.labels[pos]
        if label == IGNORE:
            continue
        if label == "B":
            if cur is not None:
                runs.append((cur[0], cur[1]))
            cur = [pos, pos]
        elif label == "I":
            if cur is None:
                cur = [pos, pos]
            else:
                cur[1] = pos
        else:  # O
            if cur is not None:
                runs.append((cur[0], cur[1]))
                cur = None
    if cur is not None:
        runs.append((cur[0], cur[1]))

    word_spans = sorted(
        (ti.word_of[p0], ti.word_of[p1]) for p0, p1 in runs
    )
    merged: list[list[int]] = []
    for s, e in word_spans:
        if merged and s <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    return [(s, e) for s, e in merged]


# ---------------------------------------------------------------------------
# Dataset preparation shared by trainer and evaluator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PreparedItem:
    inst: RawInstance
    ti: TransformedInput
    tags: TagSequence | None = None


@dataclass(frozen=True)
class PreparedDataset:
    items: tuple[PreparedItem, ...]
    unscoreable: tuple[tuple[RawInstance, str], ...]

    @property
    def n_unscoreable(self) -> int:
        return len(self.unscoreable)


def prepare_dataset(
    instances: Sequence[RawInstance],
    tok: TokenizerHandle,
    kind: str,
    max_len: int = DEFAULT_MAX_LEN,
    prompt_words: Sequence[str] = PROMPT_WORDS,
    need_tags: bool = False,
) -> PreparedDataset:
    """Transform a dataset, separating instances that cannot be scored
    (aspect truncated, or a gold span truncated when tags are needed)."""
    items: list[PreparedItem] = []
    unscoreable: list[tuple[RawInstance, str]] = []
    for inst in instances:
        try:
            ti = apply_transform(inst, tok, kind, max_len=max_len,
                                 prompt_words=prompt_words)
        except TruncationError as exc:
            unscoreable.append((inst, str(exc)))
            continue
        tags = None
        if need_tags:
            try:
                tags = align_oe_labels(inst, ti)
            except UnscoreableError as exc:
                unscoreable.append((inst, str(exc)))
                continue
        items.append(PreparedItem(inst=inst, ti=ti, tags=tags))
    return PreparedDataset(tuple(items), tuple(unscoreable))
