"""Aspect feature induction, classification heads, and the training loss.

The aspect-specific feature is the element-wise mean of exactly two hidden
rows, the first and last aspect subwords. Sentiment classification scores that
vector through an MLP; opinion extraction concatenates it onto every token
representation first. Ablation modes swap in the classification-token feature
(SC) or drop the concatenation (OE).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .encoder import EncoderOutput, stable_seed
from .errors import ArgumentError, ContractViolation
from .transform import IGNORE_ID, TransformedInput

SC_CLASSES = ("positive", "neutral", "negative")

SC_FEATURE_MODES = ("mean_pool", "cls")
OE_FEATURE_MODES = ("concat", "token_only")


@dataclass(frozen=True)
class HeadConfig:
    task: str                      # "sc" | "oe"
    hidden_width: int
    sc_feature_mode: str = "mean_pool"
    oe_feature_mode: str = "concat"
    mlp_hidden: int | None = None  # defaults to hidden_width
    dropout_rate: float = 0.1
    lambda_l2: float = 0.0
    n_classes: int = 3

    def __post_init__(self):
        if self.task not in ("sc", "oe"):
            raise ArgumentError(f"task must be 'sc' or 'oe', got {self.task!r}")
        if self.sc_feature_mode not in SC_FEATURE_MODES:
            raise ArgumentError(f"bad sc_feature_mode {self.sc_feature_mode!r}")
        if self.oe_feature_mode not in OE_FEATURE_MODES:
            raise ArgumentError(f"bad oe_feature_mode {self.oe_feature_mode!r}")
        if not 0 <= self.dropout_rate < 1:
            raise ArgumentError(f"dropout_rate {self.dropout_rate} outside [0, 1)")
        if self.hidden_width <= 0 or (self.mlp_hidden is not None and self.mlp_hidden <= 0):
            raise ArgumentError("widths must be positive")
        if self.lambda_l2 < 0:
            raise ArgumentError("lambda_l2 must be non-negative")

    @property
    def head_input_width(self) -> int:
        if self.task == "oe" and self.oe_feature_mode == "concat":
            return 2 * self.hidden_width
        return self.hidden_width


@dataclass(frozen=True)
class Prediction:
    """Logits plus the softmax distribution; (3,) for SC, (L, 3) for OE."""

    logits: torch.Tensor
    probs: torch.Tensor

    @classmethod
    def from_logits(cls, logits: torch.Tensor) -> "Prediction":
        return cls(logits=logits, probs=torch.softmax(logits, dim=-1))

    def predicted_class(self) -> int:
        return int(self.logits.argmax(dim=-1))

    def predicted_tag_ids(self) -> list[int]:
        return [int(i) for i in self.logits.argmax(dim=-1)]


def _unwrap(H) -> torch.Tensor:
    return H.hidden if isinstance(H, EncoderOutput) else H


def induce_aspect_feature(H, aspect_first: int, aspect_last: int) -> torch.Tensor:
    """Mean of exactly the first and last aspect subword hidden states."""
    hidden = _unwrap(H)
    L = hidden.shape[0]
    for idx in (aspect_first, aspect_last):
        if not 0 <= idx < L:
            raise ContractViolation(
                f"aspect row {idx} out of range for {L} hidden states"
            )
    return (hidden[aspect_first] + hidden[aspect_last]) / 2


def induce_oe_features(H, aspect_feature: torch.Tensor, mode: str) -> torch.Tensor:
    """Per-token features for span tagging: [h_i ; aspect] or plain h_i."""
    hidden = _unwrap(H)
    if mode == "token_only":
        return hidden
    if mode != "concat":
        raise ArgumentError(f"bad oe_feature_mode {mode!r}")
    if aspect_feature.shape[-1] != hidden.shape[-1]:
        raise ContractViolation(
            f"aspect feature width {aspect_feature.shape[-1]} != hidden width "
            f"{hidden.shape[-1]}"
        )
    expanded = aspect_feature.unsqueeze(0).expand(hidden.shape[0], -1)
    return torch.cat([hidden, expanded], dim=-1)


class MlpHead(nn.Module):
    """Fully-connected -> ReLU -> dropout -> fully-connected, onto class logits."""

    def __init__(self, in_width: int, cfg: HeadConfig, seed: int = 0,
                 dtype: torch.dtype = torch.float64):
        super().__init__()
        hidden = cfg.mlp_hidden or cfg.hidden_width
        gen = torch.Generator().manual_seed(int(seed))
        self.fc1 = nn.Linear(in_width, hidden)
        self.fc2 = nn.Linear(hidden, cfg.n_classes)
        with torch.no_grad():
            for lin in (self.fc1, self.fc2):
                w = torch.empty(lin.out_features, lin.in_features, dtype=dtype)
                w.normal_(0.0, lin.in_features ** -0.5, generator=gen)
                lin.weight = nn.Parameter(w)
                lin.bias = nn.Parameter(torch.zeros(lin.out_features, dtype=dtype))
        self.dropout = nn.Dropout(cfg.dropout_rate)
        self.in_width = in_width

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_width:
            raise ContractViolation(
                f"head expected width {self.in_width}, got {x.shape[-1]}"
            )
        return self.fc2(self.dropout(F.relu(self.fc1(x))))


def mlp_head(x: torch.Tensor, head: MlpHead) -> torch.Tensor:
    return head(x)


def loss(
    pred: Prediction,
    gold,
    cfg: HeadConfig,
    parameters: Iterable[torch.Tensor] = (),
) -> torch.Tensor:
    """Mean cross-entropy over contributing positions plus lambda_l2 * sum(theta^2).

    Computed from logits via log-sum-exp, so a gold class with probability 0
    never hits a raw log. OE positions labeled IGNORE are excluded; a sequence
    with no scorable position is an error rather than a silent zero.
    """
    logits = pred.logits
    if cfg.task == "sc":
        gold_t = torch.as_tensor([int(gold)], dtype=torch.long)
        ce = F.cross_entropy(logits.unsqueeze(0), gold_t)
    else:
        gold_t = torch.as_tensor(list(gold), dtype=torch.long)
        if gold_t.shape[0] != logits.shape[0]:
            raise ArgumentError("gold tag length does not match logits")
        if (gold_t != IGNORE_ID).sum() == 0:
            raise ArgumentError("no scorable OE positions in gold labels")
        ce = F.cross_entropy(logits, gold_t, ignore_index=IGNORE_ID)
    if cfg.lambda_l2 > 0:
        reg = sum((p ** 2).sum() for p in parameters)
        ce = ce + cfg.lambda_l2 * reg
    return ce


def batched_cross_entropy(
    logits_chunks: Sequence[torch.Tensor],
    gold_chunks: Sequence[torch.Tensor],
    cfg: HeadConfig,
    parameters: Iterable[torch.Tensor] = (),
) -> torch.Tensor:
    """Single mean cross-entropy over every contributing position in a batch."""
    logits = torch.cat([l.reshape(-1, cfg.n_classes) for l in logits_chunks])
    gold = torch.cat([g.reshape(-1) for g in gold_chunks])
    ce = F.cross_entropy(logits, gold, ignore_index=IGNORE_ID)
    if cfg.lambda_l2 > 0:
        ce = ce + cfg.lambda_l2 * sum((p ** 2).sum() for p in parameters)
    return ce


class AbsaModel(nn.Module):
    """Encoder plus task head; one aspect per forward pass."""

    def __init__(self, encoder: nn.Module, cfg: HeadConfig, seed: int = 0):
        super().__init__()
        if cfg.hidden_width != encoder.hidden_width:
            raise ContractViolation(
                f"head width {cfg.hidden_width} != encoder width "
                f"{encoder.hidden_width}"
            )
        self.encoder = encoder
        self.cfg = cfg
        self.head = MlpHead(cfg.head_input_width, cfg, seed=stable_seed(seed, "head"))

    # -- logits ------------------------------------------------------------

    def sc_logits_from_hidden(self, hidden: torch.Tensor, ti: TransformedInput):
        if self.cfg.sc_feature_mode == "cls":
            feature = hidden[0]
        else:
            feature = induce_aspect_feature(hidden, ti.aspect_first, ti.aspect_last)
        return self.head(feature)

    def oe_logits_from_hidden(self, hidden: torch.Tensor, ti: TransformedInput):
        if self.cfg.oe_feature_mode == "concat":
            feature = induce_aspect_feature(hidden, ti.aspect_first, ti.aspect_last)
        else:
            feature = None
        x = induce_oe_features(hidden, feature, self.cfg.oe_feature_mode) \
            if feature is not None else hidden
        return self.head(x)

    def logits(self, ti: TransformedInput) -> torch.Tensor:
        hidden = self.encoder.encode(ti).hidden
        if self.cfg.task == "sc":
            return self.sc_logits_from_hidden(hidden, ti)
        return self.oe_logits_from_hidden(hidden, ti)

    def logits_from_embeddings(
        self, ti: TransformedInput, emb: torch.Tensor
    ) -> torch.Tensor:
        hidden = self.encoder.forward_from_embeddings(emb)
        if self.cfg.task == "sc":
            return self.sc_logits_from_hidden(hidden, ti)
        return self.oe_logits_from_hidden(hidden, ti)

    # -- predictions -------------------------------------------------------

    def forward_sc(self, ti: TransformedInput) -> Prediction:
        if self.cfg.task != "sc":
            raise ArgumentError("model head is configured for OE, not SC")
        return Prediction.from_logits(self.logits(ti))

    def forward_oe(self, ti: TransformedInput) -> Prediction:
        if self.cfg.task != "oe":
            raise ArgumentError("model head is configured for SC, not OE")
        return Prediction.from_logits(self.logits(ti))

    def predict(self, ti: TransformedInput) -> Prediction:
        return self.forward_sc(ti) if self.cfg.task == "sc" else self.forward_oe(ti)
