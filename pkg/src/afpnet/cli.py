"""Command-line entry point: dedup, train, evaluate, predict, explain, bench.

Exit codes: 0 success, 1 usage error, 2 data or contract error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import sys
from pathlib import Path

from afpnet import __version__
from afpnet.bench import count_flops, measure_memory, measure_scaling
from afpnet.evaluation import compute_metrics, project_features
from afpnet.explain import DEFAULT_DEPTH, attribute, render_report
from afpnet.fpm import ConfigError, ModelConfig
from afpnet.ingest import (CorpusError, dedup_corpus, duplicate_groups, load_manifest,
                           manifest_paths, split_corpus, write_manifest)
from afpnet.lexer import encode, tokenize
from afpnet.model import load_checkpoint, predict_batches
from afpnet.train import TrainConfig, TrainingError, run_trials

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
# CorpusError, LexError, ConfigError, CheckpointError and JSON errors are ValueErrors
DATA_ERRORS = (ValueError, IndexError, OSError, TrainingError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _dump_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _write_run_manifest(path: Path, args, started: str, config=None, inputs=None, outputs=None):
    _dump_json(path, {
        "subcommand": args.command,
        "tool_version": __version__,
        "seed": getattr(args, "seed", None),
        "config": config or {},
        "inputs": {k: str(v) for k, v in (inputs or {}).items()},
        "outputs": {k: str(v) for k, v in (outputs or {}).items()},
        "started": started,
        "finished": _now(),
    })


def _load_json(path) -> dict:
    if path is None:
        return {}
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return data


def _resolve_configs(args) -> tuple[ModelConfig, TrainConfig]:
    """Flag > config file > built-in default."""
    model = _load_json(args.config)
    train = _load_json(args.train_config)
    for flag, key in [("embed_dim", "embed_dim"), ("heights", "heights"), ("kernels", "kernels"),
                      ("top_p", "top_p"), ("blocks", "blocks"), ("heads", "heads"),
                      ("stride", "stride"), ("threshold", "threshold")]:
        if getattr(args, flag) is not None:
            model[key] = getattr(args, flag)
    for flag, key in [("lr", "learning_rate"), ("epochs", "epochs"), ("batch_size", "batch_size"),
                      ("trials", "trials"), ("seed", "seed"), ("clip_norm", "clip_norm"),
                      ("class_weight", "class_weight"), ("min_freq", "min_freq"),
                      ("weight_decay", "weight_decay"), ("train_fraction", "train_fraction")]:
        if getattr(args, flag) is not None:
            train[key] = getattr(args, flag)
    try:
        return ModelConfig.from_dict(model), TrainConfig.from_dict(train)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_dedup(args) -> int:
    started = _now()
    corpus = load_manifest(args.manifest, args.vuln_type)
    groups = duplicate_groups(corpus)
    deduped = dedup_corpus(corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(deduped, out / "manifest.jsonl", manifest_paths(args.manifest))
    report = {
        "input": len(corpus),
        "survivors": len(deduped),
        "removed": len(corpus) - len(deduped),
        "groups": [{"survivor": g[0].id, "removed": [c.id for c in g[1:]]} for g in groups],
    }
    _dump_json(out / "dedup_report.json", report)
    _write_run_manifest(out / "run_manifest.json", args, started,
                        inputs={"manifest": args.manifest},
                        outputs={"manifest": out / "manifest.jsonl", "report": out / "dedup_report.json"})
    print(f"{len(corpus)} contracts -> {len(deduped)} survivors ({len(groups)} duplicate groups)")
    return EXIT_OK


def cmd_train(args) -> int:
    started = _now()
    mconfig, tconfig = _resolve_configs(args)
    corpus = load_manifest(args.manifest, args.vuln_type)
    if len(corpus) == 0:
        raise CorpusError(f"no contracts of type {args.vuln_type!r} in {args.manifest}")
    train, test = split_corpus(corpus, tconfig.train_fraction, tconfig.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(train, out / "train_manifest.jsonl")
    write_manifest(test, out / "test_manifest.jsonl")
    _dump_json(out / "model_config.json", mconfig.to_dict())
    _dump_json(out / "train_config.json", tconfig.to_dict())

    def progress(rec):
        if args.verbose:
            print(f"epoch {rec['epoch']}: loss {rec['train_loss']:.4f} "
                  f"test F1 {rec['test']['percent']['f1']:.2f}", file=sys.stderr)

    result = run_trials(train, test, mconfig, tconfig, out_dir=out, progress=progress)
    for entry in result["trials"]:
        entry["checkpoint"] = str(Path(entry["checkpoint"]).relative_to(out))
    _dump_json(out / "metrics.json", result)
    _write_run_manifest(
        out / "run_manifest.json", args, started,
        config={"model": mconfig.to_dict(), "train": tconfig.to_dict()},
        inputs={"manifest": args.manifest},
        outputs={"dir": out, "metrics": out / "metrics.json"})
    pct = result["mean"]["percent"]
    print(f"mean over {tconfig.trials} trial(s): P {pct['precision']:.2f}  R {pct['recall']:.2f}  "
          f"F1 {pct['f1']:.2f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    started = _now()
    model, vocab = load_checkpoint(args.checkpoint)
    corpus = load_manifest(args.manifest, args.vuln_type)
    if len(corpus) == 0:
        raise CorpusError(f"no contracts to evaluate in {args.manifest}")
    ids = [encode(tokenize(c.source), vocab) for c in corpus]
    probs, feats = predict_batches(model, ids, args.batch_size, with_features=True)
    decisions = (probs >= model.config.threshold).astype(int).tolist()
    report = compute_metrics(decisions, corpus.labels)
    out = Path(args.out)
    _dump_json(out, report.to_dict())
    outputs = {"metrics": out}
    if args.emit_pca:
        coords, degenerate = project_features(feats)
        pca_path = Path(args.emit_pca)
        pca_path.parent.mkdir(parents=True, exist_ok=True)
        with pca_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "x", "y", "label"])
            for c, (x, y) in zip(corpus, coords):
                writer.writerow([c.id, repr(float(x)), repr(float(y)), c.label])
        if degenerate:
            print("warning: features have zero variance; PCA coordinates are all zero", file=sys.stderr)
        outputs["pca"] = pca_path
    _write_run_manifest(out.with_name(out.name + ".run.json"), args, started,
                        config=model.config.to_dict(),
                        inputs={"checkpoint": args.checkpoint, "manifest": args.manifest},
                        outputs=outputs)
    p = report.to_dict()["percent"]
    print(f"P {p['precision']:.2f}  R {p['recall']:.2f}  F1 {p['f1']:.2f}  (n={report.total})")
    return EXIT_OK


def _read_input(path) -> str:
    return Path(path).read_text(encoding="utf-8")


def cmd_predict(args) -> int:
    started = _now()
    model, vocab = load_checkpoint(args.checkpoint)
    source = _read_input(args.input)
    seq = tokenize(source)
    if args.dump_tokens:
        print(" ".join(seq.tokens))
    pred, _ = model.predict(encode(seq, vocab))
    result = pred.to_dict()
    if args.attribution:
        report = attribute(source, (model, vocab), depth=args.depth)
        result["attribution"] = [
            {"tokens": " ".join(s.tokens), "chars": [s.char_start, s.char_end], "activation": s.value}
            for s in report.snippets]
    if args.json:
        print(json.dumps(result, sort_keys=True))
    else:
        print(f"probability {pred.probability:.6f}")
        print(f"decision {pred.decision}")
        for i, snip in enumerate(result.get("attribution", []), start=1):
            print(f"  {i:>2}. {snip['activation']:.4f}  {snip['tokens']}")
    if args.out:
        out = Path(args.out)
        _dump_json(out, result)
        _write_run_manifest(out.with_name(out.name + ".run.json"), args, started,
                            inputs={"checkpoint": args.checkpoint, "input": args.input},
                            outputs={"prediction": out})
    return EXIT_OK


def cmd_explain(args) -> int:
    started = _now()
    model, vocab = load_checkpoint(args.checkpoint)
    source = _read_input(args.input)
    if args.dump_tokens:
        print(" ".join(tokenize(source).tokens))
    report = attribute(source, (model, vocab), depth=args.depth)
    report.contract_id = Path(args.input).name
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_report(report, args.format), encoding="utf-8")
    _write_run_manifest(out.with_name(out.name + ".run.json"), args, started,
                        config={"format": args.format, "depth": args.depth},
                        inputs={"checkpoint": args.checkpoint, "input": args.input},
                        outputs={"report": out})
    print(f"probability {report.probability:.6f}; {len(report.snippets)} snippet(s) -> {out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    started = _now()
    model, _ = load_checkpoint(args.checkpoint)
    lengths = args.lengths
    result = {
        "timing": measure_scaling(model, lengths, args.repeats, seed=args.seed or 0, parallel=args.parallel),
        "cost_model": [count_flops(model.config, n).to_dict() for n in lengths],
    }
    if args.memory:
        result["memory"] = measure_memory(model, lengths, seed=args.seed or 0)
    out = Path(args.out)
    _dump_json(out, result)
    _write_run_manifest(out.with_name(out.name + ".run.json"), args, started,
                        config={"lengths": lengths, "repeats": args.repeats, "parallel": args.parallel},
                        inputs={"checkpoint": args.checkpoint}, outputs={"bench": out})
    for row in result["timing"]["rows"]:
        print(f"n={row['n']:>6}  median {row['median'] * 1e3:.2f} ms")
    print("ratios: " + ", ".join(f"{r:.3f}" for r in result["timing"]["ratios"]))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="afpnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("dedup", help="drop normalized-duplicate contracts from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--vuln-type")
    p.set_defaults(func=cmd_dedup)

    p = sub.add_parser("train", help="split, train and evaluate over several trials")
    p.add_argument("--manifest", required=True)
    p.add_argument("--vuln-type", required=True)
    p.add_argument("--config", help="model config JSON")
    p.add_argument("--train-config", help="training config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--clip-norm", type=float)
    p.add_argument("--class-weight", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--min-freq", type=int)
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--heights", type=_int_list)
    p.add_argument("--kernels", type=int)
    p.add_argument("--top-p", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="metrics JSON path")
    p.add_argument("--emit-pca", help="CSV of 2-D PCA coordinates (id,x,y,label)")
    p.add_argument("--vuln-type")
    p.add_argument("--batch-size", type=int, default=TrainConfig.eval_batch_size)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="classify one source file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--attribution", action="store_true", help="list the top snippets")
    p.add_argument("--depth", type=int, default=10)
    p.add_argument("--dump-tokens", action="store_true")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("explain", help="render a highlighted snippet report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["markdown", "html"], default="markdown")
    p.add_argument("--out", required=True)
    p.add_argument("--depth", type=int, default=DEFAULT_DEPTH)
    p.add_argument("--dump-tokens", action="store_true")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("bench", help="time the forward pass across input lengths")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lengths", type=_int_list, default=[1000, 2000, 4000])
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--memory", action="store_true", help="also record peak allocations")
    p.add_argument("--parallel", action="store_true", help="use all torch threads")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
