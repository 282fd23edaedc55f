"""Pretrained transformer backend, loaded lazily through ``transformers``.

The adapter exposes the same surface as the tiny backend: word-level
subtokenization, marker registration that extends the embedding table (mean
of existing rows plus small seeded noise), and ``encode`` returning one
hidden row per subword. BERT- and RoBERTa-style tokenizers are both handled;
the classification/separator token convention is read off the tokenizer so
transforms never branch on model family.
"""

from __future__ import annotations

from typing import Sequence

import torch
from torch import nn

from .encoder import ASP_END, ASP_START, EncoderOutput, stable_seed
from .errors import ConfigError, EncodingError, TokenizationError


def _require_transformers():
    try:
        import transformers
    except ImportError as exc:  # pragma: no cover - environment dependent
        raise ConfigError(
            "the pretrained backend needs the 'transformers' package; "
            "install absakit[pretrained]"
        ) from exc
    return transformers


class PretrainedTokenizer:
    """Word-level adapter over a Hugging Face tokenizer."""

    def __init__(self, hf_tokenizer):
        self.hf = hf_tokenizer
        self.cls_token = hf_tokenizer.cls_token or hf_tokenizer.bos_token
        self.sep_token = hf_tokenizer.sep_token or hf_tokenizer.eos_token
        if self.cls_token is None or self.sep_token is None:
            raise ConfigError("tokenizer lacks classification/separator tokens")
        self._markers: tuple[int, int] | None = None
        ids = hf_tokenizer.convert_tokens_to_ids([ASP_START, ASP_END])
        unk = hf_tokenizer.unk_token_id
        if all(i is not None and i != unk for i in ids):
            self._markers = tuple(ids)

    def tokenize_word(self, word: str) -> list[str]:
        if not word or any(ch.isspace() for ch in word):
            raise TokenizationError(word, "empty or contains whitespace")
        pieces = self.hf.tokenize(word)
        if not pieces:
            raise TokenizationError(word, "tokenizer produced no pieces")
        return pieces

    def detokenize_word(self, pieces: Sequence[str]) -> str:
        return self.hf.convert_tokens_to_string(list(pieces)).strip()

    def tokens_to_ids(self, tokens: Sequence[str]) -> list[int]:
        return self.hf.convert_tokens_to_ids(list(tokens))

    @property
    def vocab_size(self) -> int:
        return len(self.hf)

    @property
    def has_markers(self) -> bool:
        return self._markers is not None

    @property
    def marker_ids(self) -> tuple[int, int]:
        if self._markers is None:
            raise ConfigError("aspect markers are not registered")
        return self._markers

    def register_markers(self) -> tuple[int, int]:
        if self._markers is not None:
            return self._markers
        vocab = self.hf.get_vocab()
        for marker in (ASP_START, ASP_END):
            if marker in vocab:
                raise ConfigError(f"marker {marker!r} collides with an existing token")
        self.hf.add_tokens([ASP_START, ASP_END])
        self._markers = tuple(self.hf.convert_tokens_to_ids([ASP_START, ASP_END]))
        return self._markers


class PretrainedEncoder(nn.Module):
    supports_gradients = True

    def __init__(self, model, seed: int = 0):
        super().__init__()
        self.model = model
        self.seed = seed

    @property
    def hidden_width(self) -> int:
        return self.model.config.hidden_size

    def resize_for_markers(self, new_vocab_size: int) -> None:
        """Extend the embedding table; new rows get mean-of-table plus noise."""
        old = self.model.get_input_embeddings().weight.detach().clone()
        self.model.resize_token_embeddings(new_vocab_size)
        emb = self.model.get_input_embeddings().weight
        gen = torch.Generator().manual_seed(stable_seed(self.seed, "markers"))
        with torch.no_grad():
            mean = old.mean(dim=0)
            for row in range(old.shape[0], new_vocab_size):
                noise = torch.empty_like(mean).normal_(0.0, 0.02, generator=gen)
                emb[row] = mean + noise

    def embed(self, token_ids: Sequence[int] | torch.Tensor) -> torch.Tensor:
        ids = torch.as_tensor(token_ids, dtype=torch.long)
        table = self.model.get_input_embeddings()
        if ids.min() < 0 or ids.max() >= table.num_embeddings:
            raise EncodingError("token id out of vocabulary range")
        return table(ids)

    def forward_from_embeddings(self, emb: torch.Tensor) -> torch.Tensor:
        out = self.model(inputs_embeds=emb.unsqueeze(0))
        return out.last_hidden_state.squeeze(0)

    def encode(self, ti) -> EncoderOutput:
        ids = torch.as_tensor(ti.token_ids, dtype=torch.long).unsqueeze(0)
        type_ids = None
        if ti.kind == "AC" and getattr(self.model.config, "type_vocab_size", 1) > 1:
            type_ids = torch.as_tensor(ti.segment_ids(), dtype=torch.long).unsqueeze(0)
        out = self.model(input_ids=ids, token_type_ids=type_ids)
        hidden = out.last_hidden_state.squeeze(0)
        if not torch.isfinite(hidden).all():
            raise EncodingError("encoder produced non-finite hidden states")
        return EncoderOutput(hidden)


def load_pretrained_backend(model_name: str, run_seed: int = 0):
    transformers = _require_transformers()
    kwargs = {}
    # word-level tokenization needs a prefix space on byte-BPE tokenizers
    if "roberta" in model_name.lower() or "gpt2" in model_name.lower():
        kwargs["add_prefix_space"] = True
    hf_tok = transformers.AutoTokenizer.from_pretrained(model_name, **kwargs)
    model = transformers.AutoModel.from_pretrained(model_name)
    tok = PretrainedTokenizer(hf_tok)
    enc = PretrainedEncoder(model, seed=run_seed)
    if not tok.has_markers:
        tok.register_markers()
        enc.resize_for_markers(len(hf_tok))
    return tok, enc
