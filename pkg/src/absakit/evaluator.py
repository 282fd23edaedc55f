"""Standard and robustness metrics, plus gradient-saliency attributions.

SC reports accuracy and macro-averaged F1 over the three polarity classes
(a class absent from both predictions and golds still contributes F1=0 to the
macro mean). OE reports exact-span-match precision/recall/F1, micro-averaged
over all spans; a predicted span counts only when its word boundaries equal a
gold span's exactly. Instances whose aspect or gold span was truncated are
never silently dropped: they are reported in ``n_unscoreable`` and count as
misses for OE recall.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch

from .errors import ArgumentError, UnsupportedOperationError
from .model import SC_CLASSES, AbsaModel
from .transform import (
    PROMPT_WORDS,
    PreparedDataset,
    TagSequence,
    TransformedInput,
    prepare_dataset,
    project_predictions,
)


@dataclass(frozen=True)
class ClassPRF:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class ScMetrics:
    accuracy: float
    macro_f1: float
    per_class: dict[str, ClassPRF]
    n_evaluated: int
    n_unscoreable: int = 0

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class": {
                c: {"precision": m.precision, "recall": m.recall, "f1": m.f1}
                for c, m in self.per_class.items()
            },
            "n_evaluated": self.n_evaluated,
            "n_unscoreable": self.n_unscoreable,
        }

    @property
    def selection_metric(self) -> float:
        return self.macro_f1


@dataclass(frozen=True)
class OeMetrics:
    precision: float
    recall: float
    f1: float
    n_evaluated: int
    n_unscoreable: int = 0

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "n_evaluated": self.n_evaluated,
            "n_unscoreable": self.n_unscoreable,
        }

    @property
    def selection_metric(self) -> float:
        return self.f1


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def sc_metrics(
    preds: Sequence[str], golds: Sequence[str], n_unscoreable: int = 0
) -> ScMetrics:
    """Accuracy and macro-F1 over the fixed three-way polarity label set."""
    if len(preds) != len(golds):
        raise ArgumentError(f"{len(preds)} predictions vs {len(golds)} golds")
    if not golds:
        raise ArgumentError("cannot score an empty prediction list")
    per_class: dict[str, ClassPRF] = {}
    for c in SC_CLASSES:
        tp = sum(1 for p, g in zip(preds, golds) if p == c and g == c)
        fp = sum(1 for p, g in zip(preds, golds) if p == c and g != c)
        fn = sum(1 for p, g in zip(preds, golds) if p != c and g == c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        per_class[c] = ClassPRF(prec, rec, _f1(prec, rec))
    accuracy = sum(1 for p, g in zip(preds, golds) if p == g) / len(golds)
    macro = sum(m.f1 for m in per_class.values()) / len(SC_CLASSES)
    return ScMetrics(accuracy, macro, per_class, len(golds), n_unscoreable)


Span = tuple[int, int]


def oe_span_f1(
    pred_spans: Sequence[Sequence[Span]],
    gold_spans: Sequence[Sequence[Span]],
    unscoreable_gold_spans: Sequence[Sequence[Span]] = (),
    aggregation: str = "micro",
) -> OeMetrics:
    """Exact-match span F1.

    ``micro`` (default) pools matches over all spans; ``macro`` averages
    per-instance precision/recall/F1, scoring an instance with neither
    predictions nor golds as full agreement. ``unscoreable_gold_spans`` holds
    golds of instances the model could not score; under micro they enter the
    recall denominator as guaranteed misses, under macro they contribute
    all-zero instances.
    """
    if len(pred_spans) != len(gold_spans):
        raise ArgumentError(
            f"{len(pred_spans)} prediction lists vs {len(gold_spans)} gold lists"
        )
    if aggregation not in ("micro", "macro"):
        raise ArgumentError(f"aggregation must be micro|macro, got {aggregation!r}")
    if aggregation == "macro":
        rows = []
        for preds, golds in zip(pred_spans, gold_spans):
            p_set = {tuple(s) for s in preds}
            g_set = {tuple(s) for s in golds}
            if not p_set and not g_set:
                rows.append((1.0, 1.0, 1.0))
                continue
            match = len(p_set & g_set)
            p = match / len(p_set) if p_set else 0.0
            r = match / len(g_set) if g_set else 0.0
            rows.append((p, r, _f1(p, r)))
        rows.extend((0.0, 0.0, 0.0) for _ in unscoreable_gold_spans)
        n = len(rows)
        precision = sum(r[0] for r in rows) / n if n else 0.0
        recall = sum(r[1] for r in rows) / n if n else 0.0
        f1 = sum(r[2] for r in rows) / n if n else 0.0
        return OeMetrics(precision, recall, f1, n_evaluated=len(gold_spans),
                         n_unscoreable=len(unscoreable_gold_spans))
    n_match = 0
    n_pred = 0
    n_gold = 0
    for preds, golds in zip(pred_spans, gold_spans):
        p_set = {tuple(s) for s in preds}
        g_set = {tuple(s) for s in golds}
        n_match += len(p_set & g_set)
        n_pred += len(p_set)
        n_gold += len(g_set)
    for golds in unscoreable_gold_spans:
        n_gold += len({tuple(s) for s in golds})
    precision = n_match / n_pred if n_pred else 0.0
    recall = n_match / n_gold if n_gold else 0.0
    return OeMetrics(
        precision,
        recall,
        _f1(precision, recall),
        n_evaluated=len(gold_spans),
        n_unscoreable=len(unscoreable_gold_spans),
    )


# ---------------------------------------------------------------------------
# Model evaluation over prepared datasets
# ---------------------------------------------------------------------------


def evaluate_sc(model: AbsaModel, prepared: PreparedDataset) -> tuple[ScMetrics, list[str]]:
    model.eval()
    preds: list[str] = []
    golds: list[str] = []
    with torch.no_grad():
        for item in prepared.items:
            pred = model.forward_sc(item.ti)
            preds.append(SC_CLASSES[pred.predicted_class()])
            golds.append(item.inst.polarity)
    metrics = sc_metrics(preds, golds, n_unscoreable=prepared.n_unscoreable)
    return metrics, preds


def evaluate_oe(
    model: AbsaModel, prepared: PreparedDataset, aggregation: str = "micro"
) -> tuple[OeMetrics, list[list[Span]]]:
    model.eval()
    pred_spans: list[list[Span]] = []
    gold_spans: list[list[Span]] = []
    with torch.no_grad():
        for item in prepared.items:
            pred = model.forward_oe(item.ti)
            tags = TagSequence.from_ids(pred.predicted_tag_ids())
            pred_spans.append(project_predictions(item.ti, tags))
            gold_spans.append(list(item.inst.opinion_spans or ()))
    missed = [list(inst.opinion_spans or ()) for inst, _ in prepared.unscoreable]
    metrics = oe_span_f1(pred_spans, gold_spans, unscoreable_gold_spans=missed,
                         aggregation=aggregation)
    return metrics, pred_spans


def evaluate_dataset(checkpoint, instances, require_adversarial: bool = False):
    """Score a checkpoint on a dataset, rebuilding its model and transform.

    With ``require_adversarial`` this is the robustness protocol: the dataset
    must carry origin=adversarial and match the checkpoint's training domain,
    and no retraining happens.
    """
    origins = {inst.origin for inst in instances}
    if require_adversarial and origins != {"adversarial"}:
        raise ArgumentError(
            f"robustness evaluation requires origin=adversarial instances, "
            f"got origins {sorted(origins)}"
        )
    domains = {inst.domain for inst in instances}
    ckpt_domain = checkpoint.meta.get("domain")
    if ckpt_domain is not None and domains and domains != {ckpt_domain}:
        raise ArgumentError(
            f"checkpoint was trained on domain {ckpt_domain!r} but the dataset "
            f"covers {sorted(domains)}; refusing to mix domains"
        )
    model, tokenizer = checkpoint.build_model()
    task = checkpoint.meta["task"]
    prepared = prepare_dataset(
        instances,
        tokenizer,
        checkpoint.meta["transform"],
        max_len=checkpoint.meta.get("max_sequence_length", 128),
        prompt_words=tuple(checkpoint.meta.get("prompt_words") or PROMPT_WORDS),
        need_tags=(task == "oe"),
    )
    if task == "sc":
        metrics, _ = evaluate_sc(model, prepared)
    else:
        metrics, _ = evaluate_oe(
            model, prepared,
            aggregation=checkpoint.run_config.get("oe_aggregation", "micro"),
        )
    return metrics


def robustness_eval(checkpoint, adversarial_set):
    """Evaluate a standard-trained checkpoint on an adversarial test set."""
    return evaluate_dataset(checkpoint, adversarial_set, require_adversarial=True)


# ---------------------------------------------------------------------------
# Gradient saliency
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SaliencyMap:
    """Per-subword gradient-norm attribution, max-normalized to 1."""

    subtokens: tuple[str, ...]
    scores: tuple[float, ...]

    def to_obj(self) -> dict:
        return {"subtokens": list(self.subtokens), "scores": list(self.scores)}


def saliency(checkpoint_or_model, ti: TransformedInput) -> SaliencyMap:
    """L2 norm of d(score)/d(embedding) per subword, max-normalized.

    The score is the predicted polarity logit for SC and the summed B logit
    over sentence positions for OE.
    """
    model: AbsaModel = getattr(checkpoint_or_model, "model", None) or (
        checkpoint_or_model
        if isinstance(checkpoint_or_model, AbsaModel)
        else checkpoint_or_model.build_model()[0]
    )
    encoder = model.encoder
    if not getattr(encoder, "supports_gradients", False):
        raise UnsupportedOperationError(
            "saliency requires a differentiable encoder backend"
        )
    was_training = model.training
    model.eval()
    try:
        emb = encoder.embed(ti.token_ids).detach().requires_grad_(True)
        logits = model.logits_from_embeddings(ti, emb)
        if model.cfg.task == "sc":
            score = logits[int(logits.argmax())]
        else:
            rows = ti.sentence_positions()
            score = logits[rows, 1].sum()  # B logit
        score.backward()
        norms = emb.grad.norm(dim=1)
        peak = float(norms.max())
        if peak > 0:
            norms = norms / peak
        return SaliencyMap(ti.subtokens, tuple(float(x) for x in norms))
    finally:
        model.train(was_training)


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------


def write_metrics_report(
    path: str | Path,
    run_id: str,
    task: str,
    transform: str,
    dataset: str,
    split: str,
    metrics: dict,
    per_seed: list[dict] | None = None,
    n_unscoreable: int = 0,
) -> dict:
    report = {
        "run_id": run_id,
        "task": task,
        "transform": transform,
        "dataset": dataset,
        "split": split,
        "metrics": metrics,
        "per_seed": per_seed or [],
        "n_unscoreable": n_unscoreable,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return report
