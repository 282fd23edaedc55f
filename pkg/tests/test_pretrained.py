"""Adapter-contract tests for the pretrained backend.

Weights are never downloaded: a one-layer randomly initialized BERT built
from a local vocab file stands in for a real checkpoint, which is enough to
exercise tokenization, marker registration with embedding resize, and the
encode path including the two-segment signal for the companion transform.
"""

import pytest

transformers = pytest.importorskip("transformers")

import torch

from absakit.corpus import RawInstance
from absakit.encoder import ASP_END, ASP_START
from absakit.pretrained import PretrainedEncoder, PretrainedTokenizer
from absakit.transform import apply_companion, apply_marker, reconstruct_words

VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "the", "food", "is", "ta", "##sty", "but", "service", "bad", "!",
    "very", "good", "a", "##b", "##c", "t", "s",
]


@pytest.fixture(scope="module")
def backend(tmp_path_factory):
    vocab_file = tmp_path_factory.mktemp("vocab") / "vocab.txt"
    vocab_file.write_text("\n".join(VOCAB))
    hf_tok = transformers.BertTokenizer(str(vocab_file))
    config = transformers.BertConfig(
        vocab_size=len(VOCAB), hidden_size=32, num_hidden_layers=1,
        num_attention_heads=2, intermediate_size=37,
        max_position_embeddings=64,
    )
    torch.manual_seed(0)
    model = transformers.BertModel(config)
    tok = PretrainedTokenizer(hf_tok)
    enc = PretrainedEncoder(model, seed=3)
    tok.register_markers()
    enc.resize_for_markers(len(hf_tok))
    return tok, enc


@pytest.fixture()
def instance():
    words = tuple("the food is tasty but the service is bad !".split())
    return RawInstance("p#0", words, 1, 1, "food", polarity="positive",
                       opinion_spans=((3, 3),))


class TestPretrainedTokenizer:
    def test_wordpiece_segmentation(self, backend):
        tok, _ = backend
        assert tok.tokenize_word("tasty") == ["ta", "##sty"]
        assert tok.detokenize_word(["ta", "##sty"]) == "tasty"

    def test_markers_registered_and_atomic(self, backend):
        tok, _ = backend
        a, b = tok.marker_ids
        assert a != b
        assert tok.tokens_to_ids([ASP_START, ASP_END]) == [a, b]
        assert tok.register_markers() == (a, b)  # idempotent

    def test_vocab_grew_by_two(self, backend):
        tok, _ = backend
        assert tok.vocab_size == len(VOCAB) + 2


class TestPretrainedEncoder:
    def test_embeddings_resized_with_mean_plus_noise(self, backend):
        tok, enc = backend
        table = enc.model.get_input_embeddings().weight.detach()
        assert table.shape[0] == len(VOCAB) + 2
        base_mean = table[: len(VOCAB)].mean(dim=0)
        for row in (len(VOCAB), len(VOCAB) + 1):
            delta = (table[row] - base_mean).abs()
            assert float(delta.max()) < 0.2  # near the mean, small noise
        assert not torch.equal(table[len(VOCAB)], table[len(VOCAB) + 1])

    def test_encode_shapes_for_marker_transform(self, backend, instance):
        tok, enc = backend
        ti = apply_marker(instance, tok)
        out = enc.encode(ti)
        assert tuple(out.hidden.shape) == (len(ti), 32)
        assert reconstruct_words(ti, tok) == list(instance.words)

    def test_companion_uses_segment_signal(self, backend, instance):
        tok, enc = backend
        ti = apply_companion(instance, tok)
        seg = ti.segment_ids()
        assert 0 in seg and 1 in seg
        out = enc.encode(ti)
        assert tuple(out.hidden.shape) == (len(ti), 32)

    def test_gradient_path_available(self, backend, instance):
        tok, enc = backend
        ti = apply_marker(instance, tok)
        emb = enc.embed(ti.token_ids).detach().requires_grad_(True)
        hidden = enc.forward_from_embeddings(emb)
        hidden.sum().backward()
        assert emb.grad is not None
        assert enc.supports_gradients
