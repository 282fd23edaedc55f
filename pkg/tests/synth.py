"""Deterministic synthetic corpora used across the test suite."""

from __future__ import annotations

import random

from absakit.corpus import POLARITIES, RawInstance

NOUNS = [
    "food", "service", "battery", "keyboard", "screen", "pasta", "staff",
    "trackpad", "pizza", "decor", "memory", "processor", "speakers",
    "atmosphere", "warranty", "breadsticks", "margaritas", "motherboard",
]
MODIFIERS = ["grilled", "extended", "backlit", "external", "complimentary"]
OPINION_WORDS = [
    "good", "bad", "tasty", "bland", "outstanding", "disappointing",
    "sluggish", "responsive", "overpriced", "delicious", "unreliable",
    "gorgeous", "mediocre", "extraordinary", "uncomfortable",
]
LEADS = [[], ["Honestly"], ["I", "think"], ["Overall", ","]]
TAILS = [[], ["for", "sure"], ["in", "my", "opinion"], ["compared", "to", "others"]]


def make_instance(rng: random.Random, idx: int, domain: str | None = None) -> RawInstance:
    words: list[str] = []
    aspect_at_start = idx % 10 == 0  # force the boundary case regularly
    if not aspect_at_start:
        words += rng.choice(LEADS)
        if rng.random() < 0.8:
            words.append("the")
    aspect = ([rng.choice(MODIFIERS)] if rng.random() < 0.3 else []) + [rng.choice(NOUNS)]
    a_start = len(words)
    words += aspect
    a_end = len(words) - 1
    words.append(rng.choice(["is", "was", "seems"]))

    spans: list[tuple[int, int]] = []
    first = rng.choice(OPINION_WORDS)
    if rng.random() < 0.3:
        words += ["very", first]
        spans.append((len(words) - 2, len(words) - 1))
    else:
        words.append(first)
        spans.append((len(words) - 1, len(words) - 1))
    if rng.random() < 0.25:
        words.append("and")
        second = rng.choice([w for w in OPINION_WORDS if w != first])
        words.append(second)
        spans.append((len(words) - 1, len(words) - 1))
    words += rng.choice(TAILS)
    words.append(rng.choice([".", "!"]))

    return RawInstance(
        instance_id=f"fx{idx}#0",
        words=tuple(words),
        aspect_start=a_start,
        aspect_end=a_end,
        aspect_text=" ".join(aspect),
        polarity=rng.choice(POLARITIES),
        opinion_spans=tuple(spans),
        domain=domain or rng.choice(("laptop", "restaurant")),
    )


def build_fixture_corpus(n: int = 500, seed: int = 20240501,
                         domain: str | None = None) -> list[RawInstance]:
    rng = random.Random(seed)
    return [make_instance(rng, i, domain=domain) for i in range(n)]


ADV_ASPECTS = ["screen", "battery", "keyboard", "trackpad", "speakers", "fan",
               "hinge", "charger", "webcam", "display"]
# opinion word -> has an antonym in the seed lexicon?
ADV_OPINIONS = [
    ("good", True), ("bad", True), ("great", True), ("terrible", True),
    ("fast", True), ("slow", True), ("reliable", True), ("noisy", True),
    ("tasty", False), ("iffy", False), ("mediocre", False), ("superb", False),
]


def build_adv_fixture(n_sentences: int = 50, seed: int = 424242) -> list[RawInstance]:
    """Sentences with one or two aspects whose opinion words come from the seed
    lexicon, so every adversarial strategy has material to work with."""
    from absakit.advgen import Lexicon

    lex = Lexicon.seed()
    rng = random.Random(seed)
    out: list[RawInstance] = []
    for i in range(n_sentences):
        sid = f"adv{i}"
        two_aspects = i % 5 != 4
        a1, a2 = rng.sample(ADV_ASPECTS, 2)
        op1, _ = ADV_OPINIONS[rng.randrange(len(ADV_OPINIONS))]
        if two_aspects:
            op2, _ = ADV_OPINIONS[rng.randrange(len(ADV_OPINIONS))]
            same = lex.polarity(op1) == lex.polarity(op2)
            conj = "and" if same else "but"
            words = ("The", a1, "is", op1, conj, "the", a2, "is", op2, ".")
            out.append(RawInstance(f"{sid}#0", words, 1, 1, a1,
                                   polarity=lex.polarity(op1),
                                   opinion_spans=((3, 3),)))
            out.append(RawInstance(f"{sid}#1", words, 6, 6, a2,
                                   polarity=lex.polarity(op2),
                                   opinion_spans=((8, 8),)))
        else:
            words = ("The", a1, "is", op1, ".")
            out.append(RawInstance(f"{sid}#0", words, 1, 1, a1,
                                   polarity=lex.polarity(op1),
                                   opinion_spans=((3, 3),)))
    return out


SC_ASPECTS = ["fan", "lid", "rice", "soup", "cord", "bag", "keys", "dock",
              "mouse", "case", "menu", "wine", "fish", "bread", "plug", "port"]
SC_OPINIONS = [("good", "positive"), ("bad", "negative"), ("odd", "neutral"),
               ("nice", "positive"), ("poor", "negative"), ("plain", "neutral")]


def build_overfit_sc_set(n: int = 16) -> list[RawInstance]:
    """Tiny memorization task: the label is determined by the opinion word
    sitting two words right of the aspect."""
    out = []
    for i in range(n):
        aspect = SC_ASPECTS[i % len(SC_ASPECTS)]
        opinion, polarity = SC_OPINIONS[i % len(SC_OPINIONS)]
        words = ("the", aspect, "is", opinion, "today", ".")
        out.append(
            RawInstance(f"syn{i}#0", words, 1, 1, aspect, polarity=polarity)
        )
    return out
