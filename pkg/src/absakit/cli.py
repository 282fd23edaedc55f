"""Command-line entry point.

Verbs: ingest, preview, train, eval, gen-adv, report. Exit status 0 on
success, 1 on runtime failure, 2 on usage/config errors (including malformed
input files and refused evaluations).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import corpus
from .advgen import Lexicon, generate_arts_oe
from .config import load_run_config
from .encoder import build_backend, register_markers
from .errors import (
    AbsaKitError,
    ArgumentError,
    ConfigError,
    FormatError,
)
from .evaluator import evaluate_dataset, write_metrics_report
from .trainer import Checkpoint, run_experiment
from .transform import apply_transform


def cmd_ingest(args) -> int:
    if args.task == "sc":
        if args.format not in corpus.SC_FORMATS:
            raise ConfigError(f"format {args.format!r} is not an SC format")
        result = corpus.load_sc_dataset(args.input, args.format, domain=args.domain)
    else:
        if args.format not in corpus.OE_FORMATS:
            raise ConfigError(f"format {args.format!r} is not an OE format")
        result = corpus.load_oe_dataset(args.input, args.format, domain=args.domain)
    corpus.write_jsonl(result.instances, args.out)
    stats = result.stats
    print(stats.summary())
    if result.rejections:
        print(f"rejections={len(result.rejections)}", file=sys.stderr)
    side = {
        "stats": stats.to_dict(),
        "rejections": [
            {"locator": r.locator, "reason": r.reason} for r in result.rejections
        ],
        "warnings": [
            {"locator": w.locator, "message": w.message} for w in result.warnings
        ],
    }
    Path(str(args.out) + ".stats.json").write_text(
        json.dumps(side, indent=2) + "\n", encoding="utf-8"
    )
    return 0


def cmd_preview(args) -> int:
    instances = corpus.read_jsonl(args.input)
    backend = build_backend(args.backend)
    tok = register_markers(backend.tokenizer)
    preview_objs = []
    for inst in instances[: args.n]:
        try:
            ti = apply_transform(inst, tok, args.transform,
                                 max_len=args.max_sequence_length)
        except AbsaKitError as exc:
            print(f"[skip] {inst.instance_id}: {exc}", file=sys.stderr)
            continue
        marked = list(ti.subtokens)
        marked[ti.aspect_first] = ">>" + marked[ti.aspect_first]
        marked[ti.aspect_last] = marked[ti.aspect_last] + "<<"
        print(f"[{ti.kind}] {inst.instance_id}: " + " ".join(ti.subtokens))
        print(f"      aspect[{ti.aspect_first}..{ti.aspect_last}]: " + " ".join(marked))
        preview_objs.append(ti.to_preview_obj())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            for obj in preview_objs:
                f.write(json.dumps(obj, ensure_ascii=False) + "\n")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.set or ())
    if args.seed is not None:
        cfg.seeds = (args.seed,)
    result = run_experiment(cfg)
    for r in result.per_seed:
        dev = (r.dev_metrics or {})
        test = (r.test_metrics or {})
        print(
            f"seed={r.seed} best_epoch={r.best_epoch} "
            f"dev={_fmt_metrics(dev)} test={_fmt_metrics(test)}"
        )
    if result.averaged_dev:
        print(f"mean dev: {_fmt_metrics(result.averaged_dev)}")
    if result.averaged_test:
        print(f"mean test: {_fmt_metrics(result.averaged_test)}")
    for failure in result.failures:
        print(f"seed {failure['seed']} failed: {failure['error']}", file=sys.stderr)
    print(f"reports under {Path(cfg.out_dir) / cfg.run_id}")
    return 0


def _fmt_metrics(metrics: dict) -> str:
    keys = ("accuracy", "macro_f1", "precision", "recall", "f1")
    parts = [f"{k}={metrics[k]:.4f}" for k in keys if k in metrics]
    return "{" + " ".join(parts) + "}" if parts else "{}"


def cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    task = ckpt.meta["task"]
    if args.task is not None and args.task != task:
        raise ConfigError(
            f"checkpoint is a {task.upper()} model but --task {args.task} was given"
        )
    data = corpus.read_jsonl(args.data)
    if task == "sc" and any(inst.polarity is None for inst in data):
        raise ConfigError("SC checkpoint but the dataset has unlabeled instances")
    if task == "oe" and any(not inst.opinion_spans for inst in data):
        raise ConfigError("OE checkpoint but the dataset has instances without spans")
    metrics = evaluate_dataset(ckpt, data, require_adversarial=args.robustness)
    if args.saliency_out:
        write_saliency_maps(ckpt, data[: args.saliency_n], args.saliency_out)
    split = args.split or ("adversarial" if args.robustness else "standard")
    report = write_metrics_report(
        args.out,
        run_id=ckpt.run_config.get("run_id", "eval"),
        task=task,
        transform=ckpt.meta["transform"],
        dataset=Path(args.data).stem,
        split=split,
        metrics=metrics.to_dict(),
        n_unscoreable=metrics.n_unscoreable,
    )
    print(_fmt_metrics(report["metrics"]))
    return 0


def write_saliency_maps(ckpt, instances, out_path) -> None:
    from .evaluator import saliency
    from .transform import prepare_dataset

    model, tokenizer = ckpt.build_model()
    prepared = prepare_dataset(
        instances, tokenizer, ckpt.meta["transform"],
        max_len=ckpt.meta.get("max_sequence_length", 128),
    )
    with open(out_path, "w", encoding="utf-8") as f:
        for item in prepared.items:
            smap = saliency(model, item.ti)
            f.write(json.dumps(smap.to_obj(), ensure_ascii=False) + "\n")


def cmd_gen_adv(args) -> int:
    test = corpus.read_jsonl(args.input)
    train = corpus.read_jsonl(args.train)
    lex = Lexicon.from_tsv(args.lexicon) if args.lexicon else Lexicon.seed()
    result = generate_arts_oe(test, train, lex, seed=args.seed, k=args.k)
    corpus.write_jsonl(result.variants, args.out)
    manifest_path = args.manifest or str(args.out) + ".manifest.json"
    Path(manifest_path).write_text(
        json.dumps(result.manifest, indent=2) + "\n", encoding="utf-8"
    )
    for strategy, count in result.manifest["strategy_counts"].items():
        print(f"{strategy}={count}")
    print(
        f"sentences={result.manifest['sentences']['inclusive']} "
        f"instances={result.manifest['instances']['inclusive']}"
    )
    return 0


def cmd_report(args) -> int:
    if args.metrics:
        rows = []
        for path in args.metrics:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
            m = obj.get("metrics", {})
            rows.append(
                (
                    obj.get("run_id", "?"),
                    obj.get("task", "?"),
                    obj.get("transform", "?"),
                    obj.get("dataset", "?"),
                    obj.get("split", "?"),
                    m.get("accuracy"),
                    m.get("macro_f1", m.get("f1")),
                )
            )
        header = ("run", "task", "transform", "dataset", "split", "Acc", "F1")
        widths = [
            max(len(str(header[c])), *(len(_cell(r[c])) for r in rows))
            for c in range(len(header))
        ]
        print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
        for r in rows:
            print("  ".join(_cell(v).ljust(w) for v, w in zip(r, widths)))
    if args.saliency:
        render_saliency(args.saliency, args.out or "saliency.png")
        print(f"saliency heat-map written to {args.out or 'saliency.png'}")
    if not args.metrics and not args.saliency:
        raise ConfigError("report needs --metrics and/or --saliency")
    return 0


def _cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{100 * v:.2f}"
    return str(v)


def render_saliency(path: str, out: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    maps = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            maps.append(json.loads(line))
    if not maps:
        raise ArgumentError(f"no saliency rows in {path}")
    fig, axes = plt.subplots(len(maps), 1, figsize=(max(6, len(maps[0]["subtokens"])), 1.2 * len(maps)),
                             squeeze=False)
    for ax, obj in zip(axes[:, 0], maps):
        scores = [obj["scores"]]
        ax.imshow(scores, aspect="auto", cmap="Oranges", vmin=0.0, vmax=1.0)
        ax.set_xticks(range(len(obj["subtokens"])))
        ax.set_xticklabels(obj["subtokens"], rotation=45, ha="right", fontsize=7)
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="absakit",
        description="Aspect-specific context modeling toolkit for ABSA",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("ingest", help="normalize a dataset to canonical JSONL")
    p.add_argument("--input", required=True)
    p.add_argument("--format", required=True,
                   choices=sorted(set(corpus.SC_FORMATS) | set(corpus.OE_FORMATS)))
    p.add_argument("--task", required=True, choices=["sc", "oe"])
    p.add_argument("--out", required=True)
    p.add_argument("--domain", default="laptop", choices=list(corpus.DOMAINS))
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("preview", help="show transformed inputs")
    p.add_argument("--input", required=True)
    p.add_argument("--transform", required=True, choices=["ag", "ac", "ap", "am"])
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--backend", default="tiny:0")
    p.add_argument("--max-sequence-length", type=int, default=128)
    p.add_argument("--out", help="also write preview JSONL here")
    p.set_defaults(func=cmd_preview)

    p = sub.add_parser("train", help="run a training experiment from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="dotted config override, repeatable")
    p.add_argument("--seed", type=int, help="train a single seed only")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task", choices=["sc", "oe"])
    p.add_argument("--split")
    p.add_argument("--robustness", action="store_true",
                   help="require an adversarial test set")
    p.add_argument("--saliency-out",
                   help="also write saliency JSONL for the first instances")
    p.add_argument("--saliency-n", type=int, default=5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-adv", help="generate an adversarial test set")
    p.add_argument("--input", required=True, help="standard test set JSONL")
    p.add_argument("--train", required=True, help="training set JSONL (distractors)")
    p.add_argument("--out", required=True)
    p.add_argument("--lexicon", help="antonym lexicon TSV; defaults to the seed lexicon")
    p.add_argument("--manifest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=2, help="max distractor clauses")
    p.set_defaults(func=cmd_gen_adv)

    p = sub.add_parser("report", help="render metrics tables and saliency maps")
    p.add_argument("--metrics", nargs="*", default=[])
    p.add_argument("--saliency")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, ArgumentError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AbsaKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
