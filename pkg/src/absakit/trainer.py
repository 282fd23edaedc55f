"""Fine-tuning loop with seeded multi-run averaging and dev-based selection.

One optimizer run owns its model exclusively; distinct seeds are independent
runs whose metrics are arithmetically averaged. Model selection only ever
consults the dev split: after each epoch the dev metric (macro-F1 for SC,
span-F1 for OE) is computed and the best checkpoint is retained for the final
test evaluation. On the tiny backend a fixed (config, seed) pair reproduces
loss histories bit-for-bit; pretrained backends are reproducible up to
backend nondeterminism.
"""

from __future__ import annotations

import copy
import math
import os
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import torch

from . import corpus
from .corpus import RawInstance
from .encoder import build_backend, register_markers, stable_seed
from .errors import AbsaKitError, ArgumentError, ConfigError, TrainingDiverged
from .evaluator import evaluate_oe, evaluate_sc, write_metrics_report
from .model import SC_CLASSES, AbsaModel, HeadConfig, batched_cross_entropy
from .transform import PROMPT_WORDS, PreparedDataset, prepare_dataset

TASKS = ("sc", "oe")
TRANSFORMS = ("ag", "ac", "ap", "am")

DEFAULT_LR = {"sc": 1e-5, "oe": 5e-5}


def default_checkpoint_root() -> str:
    return os.environ.get("ABSAKIT_CHECKPOINT_ROOT", "checkpoints")


@dataclass
class RunConfig:
    """Everything one experiment needs; mirrors the run-config file keys."""

    task: str
    transform: str
    train_path: str | None = None
    dev_path: str | None = None
    test_path: str | None = None
    run_id: str = "run"
    dataset_name: str | None = None
    backend: str = "tiny:0"
    learning_rate: float | None = None  # per-task default when unset
    batch_size: int = 64
    max_sequence_length: int = 128
    epochs: int = 5
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    encoder_width: int = 32  # tiny backend only
    sc_feature_mode: str = "mean_pool"
    oe_feature_mode: str = "concat"
    mlp_hidden: int | None = None
    dropout: float = 0.1
    lambda_l2: float = 0.0
    early_stop_patience: int | None = 2
    grad_clip: float | None = None
    dev_split_seed: int = 42
    dev_size: int = 150       # SC: dev instances held out of train
    dev_fraction: float = 0.2  # OE: dev sentence fraction held out of train
    oe_aggregation: str = "micro"  # span-F1 pooling: micro | macro
    prompt_words: tuple[str, ...] = PROMPT_WORDS
    checkpoint_root: str | None = None
    out_dir: str = "runs"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.transform.lower() not in TRANSFORMS:
            raise ConfigError(
                f"transform must be one of {TRANSFORMS}, got {self.transform!r}"
            )
        self.transform = self.transform.lower()
        self.seeds = tuple(int(s) for s in self.seeds)
        self.prompt_words = tuple(self.prompt_words)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.oe_aggregation not in ("micro", "macro"):
            raise ConfigError(
                f"oe_aggregation must be micro|macro, got {self.oe_aggregation!r}"
            )

    @property
    def effective_lr(self) -> float:
        return self.learning_rate if self.learning_rate is not None else DEFAULT_LR[self.task]

    def head_config(self, hidden_width: int) -> HeadConfig:
        return HeadConfig(
            task=self.task,
            hidden_width=hidden_width,
            sc_feature_mode=self.sc_feature_mode,
            oe_feature_mode=self.oe_feature_mode,
            mlp_hidden=self.mlp_hidden,
            dropout_rate=self.dropout,
            lambda_l2=self.lambda_l2,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["prompt_words"] = list(self.prompt_words)
        return d


@dataclass
class SeedResult:
    seed: int
    loss_history: list[float]
    best_epoch: int
    dev_metrics: dict | None
    test_metrics: dict | None
    checkpoint_path: str | None
    n_train: int
    n_train_skipped: int

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "loss_history": self.loss_history,
            "best_epoch": self.best_epoch,
            "dev": self.dev_metrics,
            "test": self.test_metrics,
            "checkpoint": self.checkpoint_path,
            "n_train": self.n_train,
            "n_train_skipped": self.n_train_skipped,
        }


@dataclass
class RunResult:
    run_id: str
    config: RunConfig
    per_seed: list[SeedResult]
    averaged_dev: dict | None
    averaged_test: dict | None
    failures: list[dict] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.failures)


class Checkpoint:
    """A trained model state plus everything needed to rebuild and score it."""

    def __init__(self, state_dict, tokenizer_state, run_config: dict, seed: int,
                 meta: dict):
        self.state_dict = state_dict
        self.tokenizer_state = tokenizer_state
        self.run_config = run_config
        self.seed = seed
        self.meta = meta
        self._model = None
        self._tokenizer = None

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "state_dict": self.state_dict,
                "tokenizer_state": self.tokenizer_state,
                "run_config": self.run_config,
                "seed": self.seed,
                "meta": self.meta,
            },
            path,
        )

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        try:
            blob = torch.load(Path(path), map_location="cpu", weights_only=False)
        except (OSError, RuntimeError) as exc:
            raise ConfigError(f"cannot load checkpoint {path}: {exc}") from exc
        try:
            return cls(
                blob["state_dict"],
                blob["tokenizer_state"],
                blob["run_config"],
                blob["seed"],
                blob["meta"],
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed checkpoint {path}: {exc}") from exc

    def build_model(self):
        if self._model is not None:
            return self._model, self._tokenizer
        cfg = RunConfig(**self.run_config)
        family = cfg.backend.split(":", 1)[0]
        if family == "tiny":
            from .encoder import TinyEncoder, TinyTokenizer

            tokenizer = TinyTokenizer.from_state(self.tokenizer_state)
            emb = self.state_dict["encoder.embedding.weight"]
            kernel = self.state_dict["encoder.mixer.weight"].shape[2]
            encoder = TinyEncoder(
                seed=0,
                d=emb.shape[1],
                window=(kernel - 1) // 2,
                vocab_slots=emb.shape[0],
            )
        else:
            backend = build_backend(cfg.backend, run_seed=self.seed,
                                    d=cfg.encoder_width)
            tokenizer, encoder = backend.tokenizer, backend.encoder
            register_markers(tokenizer)
        model = AbsaModel(encoder, cfg.head_config(encoder.hidden_width), seed=0)
        model.load_state_dict(self.state_dict)
        model.eval()
        self._model, self._tokenizer = model, tokenizer
        return model, tokenizer

    @property
    def model(self) -> AbsaModel:
        return self.build_model()[0]


# ---------------------------------------------------------------------------
# Data plumbing
# ---------------------------------------------------------------------------


def _load_task_dataset(path: str, task: str) -> list[RawInstance]:
    loader = corpus.load_sc_dataset if task == "sc" else corpus.load_oe_dataset
    return list(loader(path, "jsonl").instances)


def load_splits(cfg: RunConfig) -> tuple[list, list, list]:
    """Load train/dev/test; when no dev path is given, hold dev out of train."""
    if not cfg.train_path:
        raise ArgumentError("config has no train_path")
    train = _load_task_dataset(cfg.train_path, cfg.task)
    if cfg.dev_path:
        dev = _load_task_dataset(cfg.dev_path, cfg.task)
    elif cfg.task == "sc":
        train, dev = corpus.split_dev_sc(train, n_dev=cfg.dev_size,
                                         seed=cfg.dev_split_seed)
    else:
        train, dev = corpus.split_dev_oe(train, fraction=cfg.dev_fraction,
                                         seed=cfg.dev_split_seed)
    test = _load_task_dataset(cfg.test_path, cfg.task) if cfg.test_path else []
    return train, dev, test


def _prepare(cfg: RunConfig, tok, instances: Sequence[RawInstance]) -> PreparedDataset:
    return prepare_dataset(
        instances,
        tok,
        cfg.transform,
        max_len=cfg.max_sequence_length,
        prompt_words=cfg.prompt_words,
        need_tags=(cfg.task == "oe"),
    )


def _gold_tensor(cfg: RunConfig, item) -> torch.Tensor:
    if cfg.task == "sc":
        return torch.tensor([SC_CLASSES.index(item.inst.polarity)], dtype=torch.long)
    return torch.tensor(item.tags.to_ids(), dtype=torch.long)


def _evaluate(cfg: RunConfig, model: AbsaModel, prepared: PreparedDataset):
    if cfg.task == "sc":
        return evaluate_sc(model, prepared)[0]
    return evaluate_oe(model, prepared, aggregation=cfg.oe_aggregation)[0]


def _dataset_domain(instances: Sequence[RawInstance]) -> str | None:
    domains = {inst.domain for inst in instances}
    return domains.pop() if len(domains) == 1 else None


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def train_one(
    cfg: RunConfig,
    seed: int,
    datasets: tuple[Sequence, Sequence, Sequence] | None = None,
    save_checkpoint: bool = True,
) -> SeedResult:
    """Run one seeded fine-tuning pass and return its metrics and history."""
    train, dev, test = datasets if datasets is not None else load_splits(cfg)

    torch.manual_seed(stable_seed(seed, cfg.run_id, "torch"))
    if cfg.backend.startswith("tiny:"):
        torch.set_num_threads(1)  # keeps CPU reductions bit-for-bit reproducible

    backend = build_backend(cfg.backend, run_seed=seed, d=cfg.encoder_width)
    tok = register_markers(backend.tokenizer)
    model = AbsaModel(
        backend.encoder,
        cfg.head_config(backend.hidden_width),
        seed=stable_seed(seed, cfg.run_id, "head"),
    )

    prepared_train = _prepare(cfg, tok, train)
    if not prepared_train.items:
        raise ArgumentError("training set is empty after preparation")
    prepared_dev = _prepare(cfg, tok, dev)
    prepared_test = _prepare(cfg, tok, test)

    items = list(prepared_train.items)
    golds = [_gold_tensor(cfg, item) for item in items]

    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.effective_lr)
    rng = random.Random(stable_seed(seed, cfg.run_id, "shuffle"))

    best_state = copy.deepcopy(model.state_dict())
    best_metric = -math.inf
    best_epoch = -1
    epochs_since_best = 0
    loss_history: list[float] = []

    for epoch in range(cfg.epochs):
        model.train()
        order = list(range(len(items)))
        rng.shuffle(order)
        batch_losses: list[float] = []
        for b_start in range(0, len(order), cfg.batch_size):
            batch = order[b_start : b_start + cfg.batch_size]
            optimizer.zero_grad()
            logits_chunks = []
            gold_chunks = []
            for idx in batch:
                logits = model.logits(items[idx].ti)
                logits_chunks.append(logits)
                gold_chunks.append(golds[idx])
            batch_loss = batched_cross_entropy(
                logits_chunks, gold_chunks, model.cfg, model.parameters()
            )
            value = float(batch_loss.detach())
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, b_start // cfg.batch_size, value)
            batch_loss.backward()
            if cfg.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            batch_losses.append(value)
        loss_history.append(sum(batch_losses) / len(batch_losses))

        if prepared_dev.items:
            metric = _evaluate(cfg, model, prepared_dev).selection_metric
            if metric > best_metric:
                best_metric = metric
                best_state = copy.deepcopy(model.state_dict())
                best_epoch = epoch
                epochs_since_best = 0
            else:
                epochs_since_best += 1
                if (
                    cfg.early_stop_patience is not None
                    and epochs_since_best >= cfg.early_stop_patience
                ):
                    break
        else:
            best_state = copy.deepcopy(model.state_dict())
            best_epoch = epoch

    model.load_state_dict(best_state)
    model.eval()

    dev_metrics = (
        _evaluate(cfg, model, prepared_dev).to_dict() if prepared_dev.items else None
    )
    test_metrics = (
        _evaluate(cfg, model, prepared_test).to_dict() if prepared_test.items else None
    )

    checkpoint_path = None
    if save_checkpoint:
        root = cfg.checkpoint_root or default_checkpoint_root()
        checkpoint_path = str(Path(root) / cfg.run_id / str(seed) / "best.pt")
        tok_state = tok.to_state() if hasattr(tok, "to_state") else None
        meta = {
            "task": cfg.task,
            "transform": cfg.transform,
            "backend": cfg.backend,
            "domain": _dataset_domain(train),
            "origin": "standard",
            "max_sequence_length": cfg.max_sequence_length,
            "prompt_words": list(cfg.prompt_words),
            "dev_metrics": dev_metrics,
            "test_metrics": test_metrics,
            "best_epoch": best_epoch,
        }
        Checkpoint(model.state_dict(), tok_state, cfg.to_dict(), seed, meta).save(
            checkpoint_path
        )

    return SeedResult(
        seed=seed,
        loss_history=loss_history,
        best_epoch=best_epoch,
        dev_metrics=dev_metrics,
        test_metrics=test_metrics,
        checkpoint_path=checkpoint_path,
        n_train=len(items),
        n_train_skipped=prepared_train.n_unscoreable,
    )


def _mean_metrics(dicts: list[dict]) -> dict | None:
    """Arithmetic mean of scalar metric fields over the per-seed results."""
    dicts = [d for d in dicts if d is not None]
    if not dicts:
        return None
    keys = [
        k
        for k in dicts[0]
        if isinstance(dicts[0][k], (int, float)) and all(k in d for d in dicts)
    ]
    return {k: sum(d[k] for d in dicts) / len(dicts) for k in keys}


def run_experiment(cfg: RunConfig, write_reports: bool = True) -> RunResult:
    """Train every seed, average metrics, and emit report files.

    A seed that aborts is recorded as a failure and the surviving seeds are
    still averaged; the result is then marked partial.
    """
    datasets = load_splits(cfg)
    per_seed: list[SeedResult] = []
    failures: list[dict] = []
    for seed in cfg.seeds:
        try:
            per_seed.append(train_one(cfg, seed, datasets=datasets))
        except AbsaKitError as exc:
            failures.append({"seed": seed, "error": str(exc)})
    if not per_seed:
        raise AbsaKitError(
            f"every seed failed: {'; '.join(f['error'] for f in failures)}"
        )

    averaged_dev = _mean_metrics([r.dev_metrics for r in per_seed])
    averaged_test = _mean_metrics([r.test_metrics for r in per_seed])
    result = RunResult(
        run_id=cfg.run_id,
        config=cfg,
        per_seed=per_seed,
        averaged_dev=averaged_dev,
        averaged_test=averaged_test,
        failures=failures,
    )

    if write_reports:
        dataset_name = cfg.dataset_name or (
            Path(cfg.train_path).stem if cfg.train_path else "dataset"
        )
        out = Path(cfg.out_dir) / cfg.run_id
        for split, averaged, pick in (
            ("dev", averaged_dev, lambda r: r.dev_metrics),
            ("test", averaged_test, lambda r: r.test_metrics),
        ):
            if averaged is None:
                continue
            write_metrics_report(
                out / f"report_{split}.json",
                run_id=cfg.run_id,
                task=cfg.task,
                transform=cfg.transform,
                dataset=dataset_name,
                split=split,
                metrics=averaged,
                per_seed=[
                    {"seed": r.seed, "metrics": pick(r)} for r in per_seed
                ],
                n_unscoreable=max(
                    (pick(r) or {}).get("n_unscoreable", 0) for r in per_seed
                ),
            )
    return result
