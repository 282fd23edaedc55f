"""Contextual encoder adapters.

Two backends hide behind one contract: a desk-scale deterministic encoder
(seeded embeddings plus one windowed position-wise affine mixing layer) for
tests and smoke runs, and a pretrained transformer loaded lazily through
:mod:`absakit.pretrained`. Backends are selected with a spec string,
``tiny:<seed>`` or ``pretrained:<model-name>``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import torch
from torch import nn

from .errors import ConfigError, EncodingError, TokenizationError

ASP_START = "⟨asp⟩"    # ⟨asp⟩
ASP_END = "⟨/asp⟩"     # ⟨/asp⟩

CLS = "[CLS]"
SEP = "[SEP]"
PAD = "[PAD]"


def stable_seed(*parts) -> int:
    """Order-sensitive 31-bit seed derived from the reprs of ``parts``.

    Unlike built-in ``hash``, stable across processes.
    """
    digest = hashlib.sha256("\x1f".join(repr(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:4], "big") & 0x7FFFFFFF


@runtime_checkable
class TokenizerHandle(Protocol):
    """Subword segmentation plus the special-token inventory transforms need."""

    cls_token: str
    sep_token: str

    @property
    def vocab_size(self) -> int: ...

    def tokenize_word(self, word: str) -> list[str]: ...

    def tokens_to_ids(self, tokens: Sequence[str]) -> list[int]: ...

    def detokenize_word(self, pieces: Sequence[str]) -> str: ...

    @property
    def has_markers(self) -> bool: ...

    def register_markers(self) -> tuple[int, int]: ...


def register_markers(tok):
    """Register the aspect boundary markers as atomic tokens; idempotent.

    Returns the handle for chaining. Raises ConfigError when a marker string
    already exists in the vocabulary as an ordinary token.
    """
    tok.register_markers()
    return tok


class TinyTokenizer:
    """Deterministic rule-based subword tokenizer for the tiny backend.

    Words segment into a head piece of at most four characters followed by
    ``##``-prefixed continuation pieces, so alignment logic sees realistic
    multi-piece words. Ids are interned in first-seen order; a trained
    checkpoint must therefore persist the vocabulary (see ``to_state``).
    Not safe for concurrent mutation; clone per worker.
    """

    piece_len = 4

    def __init__(self):
        self.cls_token = CLS
        self.sep_token = SEP
        self._vocab: dict[str, int] = {PAD: 0, CLS: 1, SEP: 2}
        self._markers: tuple[int, int] | None = None

    # -- segmentation ------------------------------------------------------

    def tokenize_word(self, word: str) -> list[str]:
        if not word:
            raise TokenizationError(word, "empty word")
        if any(ch.isspace() for ch in word):
            raise TokenizationError(word, "contains whitespace")
        if word.startswith("##"):
            raise TokenizationError(word, "reserved continuation prefix")
        if self._markers is not None and word in (ASP_START, ASP_END):
            return [word]  # registered markers stay atomic
        pieces = [word[: self.piece_len]]
        rest = word[self.piece_len :]
        while rest:
            pieces.append("##" + rest[: self.piece_len])
            rest = rest[self.piece_len :]
        return pieces

    def detokenize_word(self, pieces: Sequence[str]) -> str:
        return "".join(p[2:] if p.startswith("##") else p for p in pieces)

    # -- vocabulary --------------------------------------------------------

    def _intern(self, token: str) -> int:
        idx = self._vocab.get(token)
        if idx is None:
            idx = len(self._vocab)
            self._vocab[token] = idx
        return idx

    def tokens_to_ids(self, tokens: Sequence[str]) -> list[int]:
        return [self._intern(t) for t in tokens]

    @property
    def vocab_size(self) -> int:
        return len(self._vocab)

    @property
    def cls_id(self) -> int:
        return self._vocab[CLS]

    @property
    def sep_id(self) -> int:
        return self._vocab[SEP]

    # -- markers -----------------------------------------------------------

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
        for marker in (ASP_START, ASP_END):
            if marker in self._vocab:
                raise ConfigError(
                    f"marker {marker!r} collides with an existing token"
                )
        self._markers = (self._intern(ASP_START), self._intern(ASP_END))
        return self._markers

    # -- persistence -------------------------------------------------------

    def to_state(self) -> dict:
        return {"vocab": dict(self._vocab), "markers": self._markers}

    @classmethod
    def from_state(cls, state: dict) -> "TinyTokenizer":
        tok = cls()
        tok._vocab = dict(state["vocab"])
        markers = state.get("markers")
        tok._markers = tuple(markers) if markers is not None else None
        return tok


@dataclass(frozen=True)
class EncoderOutput:
    """Contextual hidden states, one row per subword."""

    hidden: torch.Tensor  # (L, d)

    @property
    def width(self) -> int:
        return int(self.hidden.shape[1])

    def __len__(self) -> int:
        return int(self.hidden.shape[0])


class TinyEncoder(nn.Module):
    """Seeded embedding lookup followed by one windowed affine mixing layer.

    The mixing layer is a 1-d convolution over the token axis, i.e. a
    position-wise affine map of each token's window. Runs in float64 so that
    gradient checks against finite differences are tight and loss histories
    reproduce bit-for-bit on CPU.
    """

    supports_gradients = True

    def __init__(
        self,
        seed: int,
        d: int = 32,
        window: int = 4,
        vocab_slots: int = 32768,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        self.seed = int(seed)
        self.window = int(window)
        gen = torch.Generator().manual_seed(self.seed)
        emb = torch.empty(vocab_slots, d, dtype=dtype).normal_(0.0, 0.5, generator=gen)
        self.embedding = nn.Embedding(vocab_slots, d, _weight=emb)
        kernel = 2 * self.window + 1
        self.mixer = nn.Conv1d(d, d, kernel_size=kernel, padding=self.window)
        with torch.no_grad():
            w = torch.empty(d, d, kernel, dtype=dtype)
            w.normal_(0.0, (d * kernel) ** -0.5, generator=gen)
            self.mixer.weight = nn.Parameter(w)
            self.mixer.bias = nn.Parameter(torch.zeros(d, dtype=dtype))

    @property
    def hidden_width(self) -> int:
        return self.embedding.embedding_dim

    def embed(self, token_ids: Sequence[int] | torch.Tensor) -> torch.Tensor:
        ids = torch.as_tensor(token_ids, dtype=torch.long)
        if ids.numel() == 0:
            raise EncodingError("empty token id sequence")
        if ids.min() < 0 or ids.max() >= self.embedding.num_embeddings:
            raise EncodingError(
                f"token id out of vocabulary range [0, {self.embedding.num_embeddings})"
            )
        return self.embedding(ids)

    def forward_from_embeddings(self, emb: torch.Tensor) -> torch.Tensor:
        # (L, d) -> Conv1d expects (N, d, L)
        mixed = self.mixer(emb.t().unsqueeze(0)).squeeze(0).t()
        return mixed

    def encode(self, ti) -> EncoderOutput:
        hidden = self.forward_from_embeddings(self.embed(ti.token_ids))
        if not torch.isfinite(hidden).all():
            raise EncodingError("encoder produced non-finite hidden states")
        return EncoderOutput(hidden)

    forward = forward_from_embeddings


def tiny_encoder(seed: int, d: int = 32, window: int = 4) -> TinyEncoder:
    """Desk-scale trainable encoder; same seed gives bit-identical parameters."""
    return TinyEncoder(seed=seed, d=d, window=window)


@dataclass
class Backend:
    tokenizer: TokenizerHandle
    encoder: nn.Module
    spec: str

    @property
    def hidden_width(self) -> int:
        return self.encoder.hidden_width


def parse_backend_spec(spec: str) -> tuple[str, str]:
    family, sep, arg = spec.partition(":")
    if not sep or family not in ("tiny", "pretrained") or not arg:
        raise ConfigError(
            f"bad encoder backend {spec!r}; expected 'tiny:<seed>' or "
            f"'pretrained:<model-name>'"
        )
    return family, arg


def build_backend(spec: str, run_seed: int = 0, d: int = 32) -> Backend:
    """Construct (tokenizer, encoder) for a backend spec string.

    For the tiny backend the effective parameter seed combines the seed from
    the backend string with ``run_seed`` so multi-seed experiments get
    distinct initializations.
    """
    family, arg = parse_backend_spec(spec)
    if family == "tiny":
        try:
            base = int(arg)
        except ValueError as exc:
            raise ConfigError(f"tiny backend seed must be an integer: {arg!r}") from exc
        tok = TinyTokenizer()
        enc = TinyEncoder(seed=stable_seed(base, run_seed, "encoder"), d=d)
        return Backend(tokenizer=tok, encoder=enc, spec=spec)
    from .pretrained import load_pretrained_backend

    tok, enc = load_pretrained_backend(arg, run_seed=run_seed)
    return Backend(tokenizer=tok, encoder=enc, spec=spec)
