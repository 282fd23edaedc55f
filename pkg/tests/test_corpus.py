import pytest

from absakit import corpus
from absakit.corpus import (
    DatasetStats,
    RawInstance,
    compute_stats,
    load_oe_dataset,
    load_sc_dataset,
    read_jsonl,
    split_dev_oe,
    split_dev_sc,
    tokenize_text,
    write_jsonl,
)
from absakit.errors import ArgumentError, FormatError

from synth import build_fixture_corpus


SEMEVAL_XML = """<?xml version="1.0" encoding="UTF-8"?>
<sentences>
  <sentence id="100">
    <text>The food is tasty but the service is very bad!</text>
    <aspectTerms>
      <aspectTerm term="food" polarity="positive" from="4" to="8"/>
      <aspectTerm term="service" polarity="negative" from="26" to="33"/>
    </aspectTerms>
  </sentence>
  <sentence id="101">
    <text>Great laptop with a terrible battery.</text>
    <aspectTerms>
      <aspectTerm term="battery" polarity="conflict" from="29" to="36"/>
      <aspectTerm term="laptop" polarity="positive" from="6" to="12"/>
    </aspectTerms>
  </sentence>
  <sentence id="102">
    <text>No aspects in this one.</text>
  </sentence>
  <sentence id="103">
    <text>The screen and the screen hinge are fine.</text>
    <aspectTerms>
      <aspectTerm term="screen" polarity="neutral"/>
      <aspectTerm term="missingterm" polarity="positive"/>
    </aspectTerms>
  </sentence>
</sentences>
"""

TOWE_TSV = "\n".join(
    [
        "2339\tThe food is tasty but the service is very bad !\tfood##1,1\ttasty##3,3",
        "2339\tThe food is tasty but the service is very bad !\tservice##6,6\tvery bad##8,9",
        "2340\tthe soup was cold today\tsoup##1,1\tcold##3,3",
        # overlapping spans -> rejection
        "2341\tthe menu was odd and odd\tmenu##1,1\todd##3,3;odd and##3,4",
        # span out of range -> rejection
        "2342\tshort line here\tshort##0,0\tmissing##9,9",
    ]
)


class TestRawInstance:
    def test_aspect_text_must_match_words(self):
        with pytest.raises(ArgumentError):
            RawInstance("x#0", ("a", "b"), 0, 0, "b")

    def test_span_bounds_checked(self):
        with pytest.raises(ArgumentError):
            RawInstance("x#0", ("a", "b"), 0, 2, "a b ?")
        with pytest.raises(ArgumentError):
            RawInstance("x#0", ("a", "b"), 0, 0, "a", opinion_spans=((1, 5),))

    def test_overlapping_spans_rejected(self):
        with pytest.raises(ArgumentError):
            RawInstance(
                "x#0", ("a", "b", "c", "d"), 0, 0, "a",
                opinion_spans=((1, 2), (2, 3)),
            )

    def test_sentence_key_strips_ordinal(self):
        inst = RawInstance("sent12#3", ("a",), 0, 0, "a")
        assert inst.sentence_key == "sent12"


class TestTokenizeText:
    def test_detaches_trailing_punctuation(self):
        words = [w for w, _, _ in tokenize_text("The food is bad!")]
        assert words == ["The", "food", "is", "bad", "!"]

    def test_keeps_internal_punctuation(self):
        words = [w for w, _, _ in tokenize_text('I "don\'t" like wi-fi.')]
        assert words == ["I", '"', "don't", '"', "like", "wi-fi", "."]

    def test_char_spans_cover_source(self):
        text = "  spaced   out!  "
        for w, s, e in tokenize_text(text):
            assert text[s:e] == w


class TestLoadScXml:
    @pytest.fixture()
    def result(self, tmp_path):
        path = tmp_path / "train.xml"
        path.write_text(SEMEVAL_XML, encoding="utf-8")
        return load_sc_dataset(path, "semeval-xml", domain="laptop")

    def test_instances_and_rejections(self, result):
        ids = [i.instance_id for i in result.instances]
        assert ids == ["100#0", "100#1", "101#1", "103#0"]
        reasons = {r.locator: r.reason for r in result.rejections}
        assert reasons["101#0"] == "conflict polarity"
        assert "not locatable" in reasons["103#1"]

    def test_offsets_map_to_word_spans(self, result):
        food, service = result.instances[0], result.instances[1]
        assert (food.aspect_start, food.aspect_end) == (1, 1)
        assert food.polarity == "positive"
        assert food.words[-1] == "!"
        assert (service.aspect_start, service.aspect_end) == (6, 6)

    def test_multi_occurrence_warns_and_uses_first(self, result):
        screen = result.instances[3]
        assert (screen.aspect_start, screen.aspect_end) == (1, 1)
        assert any("screen" in w.message for w in result.warnings)

    def test_stats(self, result):
        stats = result.stats
        assert stats.n_sentences == 3
        assert stats.n_aspects == 4
        assert stats.polarity_counts == {"positive": 2, "neutral": 1, "negative": 1}

    def test_malformed_xml_reports_locator(self, tmp_path):
        path = tmp_path / "bad.xml"
        path.write_text("<sentences><sentence>", encoding="utf-8")
        with pytest.raises(FormatError) as exc:
            load_sc_dataset(path, "semeval-xml")
        assert "bad.xml" in str(exc.value)

    def test_empty_file_means_empty_dataset(self, tmp_path):
        path = tmp_path / "empty.xml"
        path.write_text("<sentences/>", encoding="utf-8")
        result = load_sc_dataset(path, "semeval-xml")
        assert result.instances == ()
        assert result.stats == DatasetStats(0, 0, {p: 0 for p in corpus.POLARITIES})

    def test_unknown_format_rejected(self, tmp_path):
        with pytest.raises(ArgumentError):
            load_sc_dataset(tmp_path / "x", "towe-tsv")


class TestLoadOeTsv:
    @pytest.fixture()
    def result(self, tmp_path):
        path = tmp_path / "train.tsv"
        path.write_text(TOWE_TSV, encoding="utf-8")
        return load_oe_dataset(path, "towe-tsv", domain="restaurant")

    def test_figure_sentence_loads(self, result):
        inst = result.instances[0]
        assert inst.opinion_spans == ((3, 3),)
        assert inst.aspect_text == "food"
        assert inst.polarity is None

    def test_sentence_grouping(self, result):
        assert result.instances[0].sentence_key == result.instances[1].sentence_key

    def test_overlap_and_range_rejections(self, result):
        reasons = [r.reason for r in result.rejections]
        assert len(result.rejections) == 2
        assert any("overlap" in r for r in reasons)
        assert any("out of range" in r for r in reasons)

    def test_stats_counts_sentences_not_rows(self, result):
        stats = result.stats
        assert stats.n_sentences == 2
        assert stats.n_aspects == 3


class TestLoadJsonlTask:
    def test_two_sentences_three_aspects_preserve_order(self, tmp_path):
        words_a = ("nice", "food", "and", "staff", ".")
        words_b = ("slow", "wifi", ".")
        fixture = [
            RawInstance("a#0", words_a, 1, 1, "food", polarity="positive"),
            RawInstance("a#1", words_a, 3, 3, "staff", polarity="positive"),
            RawInstance("b#0", words_b, 1, 1, "wifi", polarity="negative"),
        ]
        path = tmp_path / "sc.jsonl"
        write_jsonl(fixture, path)
        result = load_sc_dataset(path, "jsonl")
        assert list(result.instances) == fixture
        assert result.stats.n_sentences == 2 and result.stats.n_aspects == 3

    def test_sc_jsonl_requires_polarity(self, tmp_path):
        inst = RawInstance("a#0", ("ok", "wifi"), 1, 1, "wifi")
        path = tmp_path / "sc.jsonl"
        write_jsonl([inst], path)
        result = load_sc_dataset(path, "jsonl")
        assert result.instances == ()
        assert result.rejections[0].reason == "missing polarity"

    def test_oe_jsonl_requires_spans(self, tmp_path):
        inst = RawInstance("a#0", ("ok", "wifi"), 1, 1, "wifi",
                           polarity="negative")
        path = tmp_path / "oe.jsonl"
        write_jsonl([inst], path)
        result = load_oe_dataset(path, "jsonl")
        assert result.instances == ()
        assert result.rejections[0].reason == "no opinion span"


class TestJsonlRoundTrip:
    def test_round_trip_preserves_instances(self, tmp_path):
        instances = build_fixture_corpus(50, seed=7)
        path = tmp_path / "c.jsonl"
        write_jsonl(instances, path)
        again = read_jsonl(path)
        assert again == instances
        # canonical form is stable under a second round trip
        path2 = tmp_path / "c2.jsonl"
        write_jsonl(again, path2)
        assert path2.read_text() == path.read_text()

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "a#0", "words": ["x"], "bogus": 1}\n')
        with pytest.raises(FormatError):
            read_jsonl(path)

    def test_bad_json_reports_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text("{not json}\n")
        with pytest.raises(FormatError) as exc:
            read_jsonl(path)
        assert "bad.jsonl:1" in str(exc.value)


class TestSplits:
    def test_sc_split_sizes_and_partition(self):
        train = build_fixture_corpus(400, seed=3)
        t, d = split_dev_sc(train, n_dev=150, seed=1)
        assert len(d) == 150 and len(t) == 250
        assert sorted(i.instance_id for i in t + d) == sorted(
            i.instance_id for i in train
        )
        assert not {i.instance_id for i in t} & {i.instance_id for i in d}

    def test_sc_split_deterministic(self):
        train = build_fixture_corpus(200, seed=3)
        assert split_dev_sc(train, 50, seed=9) == split_dev_sc(train, 50, seed=9)
        assert split_dev_sc(train, 50, seed=9) != split_dev_sc(train, 50, seed=10)

    def test_sc_split_zero_dev(self):
        train = build_fixture_corpus(10, seed=3)
        t, d = split_dev_sc(train, n_dev=0, seed=0)
        assert d == [] and t == train

    def test_sc_split_too_large_rejected(self):
        train = build_fixture_corpus(10, seed=3)
        with pytest.raises(ArgumentError):
            split_dev_sc(train, n_dev=10, seed=0)

    def test_oe_split_by_sentence(self):
        insts = []
        for group in build_fixture_corpus(60, seed=5):
            insts.append(group)
            # add a second aspect on the same sentence for every third instance
        train = insts
        t, d = split_dev_oe(train, fraction=0.2, seed=2)
        t_keys = {i.sentence_key for i in t}
        d_keys = {i.sentence_key for i in d}
        assert not t_keys & d_keys
        assert len(d_keys) == round(0.2 * 60)

    def test_oe_split_keeps_sentence_together(self):
        base = build_fixture_corpus(30, seed=5)
        doubled = []
        for inst in base:
            doubled.append(inst)
            doubled.append(
                RawInstance(
                    inst.instance_id.replace("#0", "#1"),
                    inst.words,
                    inst.aspect_start,
                    inst.aspect_end,
                    inst.aspect_text,
                    polarity=inst.polarity,
                    opinion_spans=inst.opinion_spans,
                    domain=inst.domain,
                )
            )
        t, d = split_dev_oe(doubled, fraction=0.5, seed=11)
        for side in (t, d):
            keys = {i.sentence_key for i in side}
            members = [i for i in doubled if i.sentence_key in keys]
            assert sorted(i.instance_id for i in side) == sorted(
                i.instance_id for i in members
            )

    def test_oe_split_rounding_at_published_scale(self):
        train = [
            RawInstance(f"s{i}#0", ("w", "x"), 0, 0, "w") for i in range(1158)
        ]
        _, dev = split_dev_oe(train, fraction=0.2, seed=1)
        assert len({i.sentence_key for i in dev}) == 232  # round(0.2 * 1158)

    def test_oe_split_fraction_zero(self):
        train = build_fixture_corpus(10, seed=5)
        t, d = split_dev_oe(train, fraction=0.0, seed=0)
        assert d == [] and t == train

    def test_oe_split_bad_fraction(self):
        train = build_fixture_corpus(10, seed=5)
        with pytest.raises(ArgumentError):
            split_dev_oe(train, fraction=1.0, seed=0)

    def test_oe_split_deterministic(self):
        train = build_fixture_corpus(40, seed=5)
        assert split_dev_oe(train, 0.2, seed=4) == split_dev_oe(train, 0.2, seed=4)


class TestComputeStats:
    def test_empty(self):
        assert compute_stats([]) == DatasetStats(0, 0, {p: 0 for p in corpus.POLARITIES})

    def test_one_sentence_two_aspects(self):
        words = ("nice", "food", "and", "staff", ".")
        a = RawInstance("s#0", words, 1, 1, "food", polarity="positive")
        b = RawInstance("s#1", words, 3, 3, "staff", polarity="positive")
        stats = compute_stats([a, b])
        assert (stats.n_sentences, stats.n_aspects) == (1, 2)
