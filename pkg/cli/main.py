"""Command-line entry point.

Usage:
    python -m cli gen-synthetic --output data/synthetic.jsonl
    python -m cli train --corpus data/synthetic.jsonl --window 5 --padding 2
    python -m cli eval --checkpoint runs/model.ckpt --corpus data/synthetic.jsonl --setting both
    python -m cli predict-online --checkpoint runs/model.ckpt < dialogue.txt
    python -m cli viz-attention --checkpoint runs/model.ckpt --corpus data/synthetic.jsonl --window-index 1
    python -m cli bench-complexity --dim 64 --lengths 16 32 64
"""
import argparse
import itertools
import json
import logging
import sys
import types
from pathlib import Path
from typing import Any, Literal, Optional, Sequence, Union, get_args, get_origin

from pydantic import ValidationError
from tabulate import tabulate

from core.config import settings
from core.exceptions import ConfigurationError, DialogueActError, SegmentationError, TrainingDivergedError
from core.logging_setup import configure_logging
from ingestion.loader import corpus_stats, format_stats, load_corpus, write_corpus
from ingestion.segmenter import split_dialogue
from ingestion.sources.synthetic import gen_synthetic
from model.network import DialogueActModel
from reporting.complexity import COLUMNS, complexity_rows, rows_to_csv
from reporting.heatmap import export_attention, long_range_mass
from schemas.corpus import CorpusSplits
from schemas.synthetic import SyntheticSpec
from schemas.training import Metrics, RunReport, TrainConfig
from training.trainer import OnlinePredictor, Trainer, evaluate

logger = logging.getLogger(__name__)

ERROR_TOKEN = "<error>"
EXIT_OK = 0
EXIT_FAILURE = 1


def _unwrap_optional(annotation: Any) -> Any:
    if get_origin(annotation) in (Union, getattr(types, "UnionType", Union)):
        args = [a for a in get_args(annotation) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return annotation


def _add_model_flags(parser: argparse.ArgumentParser, model: type, skip: Sequence[str] = ()) -> None:
    """One ``--flag`` per pydantic field, defaulting to None so unset flags do not override."""
    for name, field in model.model_fields.items():
        if name in skip:
            continue
        flag = "--" + name.replace("_", "-")
        annotation = _unwrap_optional(field.annotation)
        help_text = field.description or name
        if annotation is bool:
            parser.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction, default=None, help=help_text)
        elif get_origin(annotation) is Literal:
            parser.add_argument(flag, dest=name, choices=get_args(annotation), default=None, help=help_text)
        else:
            parser.add_argument(flag, dest=name, type=annotation, default=None, help=help_text)


def _overrides(args: argparse.Namespace, model: type) -> dict[str, Any]:
    return {name: getattr(args, name) for name in model.model_fields if getattr(args, name, None) is not None}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dialogue-acts",
        description="Dialogue act recognition with local-context self-attention",
    )
    parser.add_argument("--log-level", default=None, help=f"Log level (default: {settings.log_level})")
    parser.add_argument("--log-format", choices=["text", "json"], default=None, help="Log line format")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="Train a model and write checkpoint + metrics")
    train.add_argument("--corpus", default=settings.corpus_path, help="JSON-lines corpus file")
    train.add_argument("--config", help="Flat JSON file of training options")
    train.add_argument("--output-dir", default=settings.output_dir, help="Directory for artifacts")
    train.add_argument("--sweep-w", type=int, nargs="+", help="Train every listed window size")
    train.add_argument("--sweep-p", type=int, nargs="+", help="Train every listed padding")
    _add_model_flags(train, TrainConfig)

    ev = commands.add_parser("eval", help="Evaluate a checkpoint on one split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--corpus", default=settings.corpus_path)
    ev.add_argument("--split", choices=["train", "valid", "test"], default="test")
    ev.add_argument("--setting", choices=["offline", "online", "both"], default="both")
    ev.add_argument("--padding", type=int, help="Context padding (default: the checkpoint's)")
    ev.add_argument("--output", help="Write the metrics as JSON here")

    online = commands.add_parser("predict-online", help="Label utterances read one per line from stdin")
    online.add_argument("--checkpoint", required=True)
    online.add_argument("--padding", type=int, help="Preceding utterances to use (default: the checkpoint's)")

    viz = commands.add_parser("viz-attention", help="Export attention weights of one window")
    viz.add_argument("--checkpoint", required=True)
    viz.add_argument("--corpus", default=settings.corpus_path)
    viz.add_argument("--split", choices=["train", "valid", "test"], default="test")
    viz.add_argument("--dialogue", help="Dialogue id (default: first of the split)")
    viz.add_argument("--window-index", type=int, default=1, help="1-based window number")
    viz.add_argument("--output", help="Output prefix (default: <output-dir>/attention_<dialogue>_w<k>)")
    viz.add_argument("--no-bias", action="store_true", help="Drop the locality bias when computing weights")

    bench = commands.add_parser("bench-complexity", help="Count context-layer operations per window length")
    bench.add_argument("--dim", type=int, default=64)
    bench.add_argument("--heads", type=int, default=4)
    bench.add_argument("--lengths", type=int, nargs="+", default=[16, 32, 64])
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--output", help="CSV file (default: stdout)")

    gen = commands.add_parser("gen-synthetic", help="Write a synthetic corpus that needs local context")
    gen.add_argument("--output", required=True, help="JSON-lines corpus file to write")
    _add_model_flags(gen, SyntheticSpec)

    return parser


# Commands

def _load_splits(parser: argparse.ArgumentParser, corpus: Optional[str]) -> CorpusSplits:
    if not corpus:
        parser.error("--corpus is required (or set DA_CORPUS_PATH)")
    if not Path(corpus).exists():
        parser.error(f"corpus file not found: {corpus}")
    return load_corpus(corpus)


def _config_echo(config: TrainConfig) -> dict[str, Any]:
    echo = config.model_dump(mode="json")
    echo.update(
        head_dim=config.resolved_head_dim,
        n_max=config.resolved_n_max,
        width_scale=config.resolved_width_scale,
    )
    return echo


def cmd_train(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    splits = _load_splits(parser, args.corpus)
    base, sources = TrainConfig.resolve(args.config, _overrides(args, TrainConfig))
    windows = args.sweep_w or [base.window]
    paddings = args.sweep_p or [base.padding]

    runs = []
    for window, padding in itertools.product(windows, paddings):
        config, _ = TrainConfig.resolve(None, {**base.model_dump(), "window": window, "padding": padding})
        trainer = Trainer(config, splits)
        history = trainer.fit()
        test_offline = evaluate(splits.test, trainer.model, "offline") if splits.test else None
        test_online = evaluate(splits.test, trainer.model, "online") if splits.test else None
        runs.append((config, trainer.model, history, test_offline, test_online))

    sweep_rows = [
        {
            "window": config.window,
            "padding": config.padding,
            "context_layer": config.context_layer,
            "use_bias": config.use_bias,
            "valid_accuracy": history.best_valid_accuracy,
            "test_accuracy": test_offline.accuracy if test_offline else None,
            "test_online_accuracy": test_online.accuracy if test_online else None,
        }
        for config, _, history, test_offline, test_online in runs
    ]
    best = max(runs, key=lambda run: run[2].best_valid_accuracy if run[2].best_valid_accuracy is not None else -1.0)
    config, model, history, test_offline, test_online = best
    if len(runs) > 1:
        sources = {**sources, "window": "sweep", "padding": "sweep"}

    output_dir = Path(args.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = model.save(output_dir / settings.checkpoint_name)
    report = RunReport(
        config=_config_echo(config),
        config_sources=sources,
        history=history,
        test_offline=test_offline,
        test_online=test_online,
        sweep=sweep_rows if len(runs) > 1 else [],
    )
    metrics_path = output_dir / settings.metrics_name
    metrics_path.write_text(report.model_dump_json(indent=2), encoding="utf-8")

    rows = [
        [e.epoch, f"{e.train_loss:.4f}", f"{e.train_accuracy:.4f}",
         "N/A" if e.valid_accuracy is None else f"{e.valid_accuracy:.4f}"]
        for e in history.epochs
    ]
    print(tabulate(rows, headers=["Epoch", "Loss", "Train acc", "Valid acc"], tablefmt="grid"))
    if len(runs) > 1:
        print(tabulate(sweep_rows, headers="keys", tablefmt="grid"))
    if test_offline is not None:
        print(f"Test accuracy: offline {test_offline.accuracy:.4f}, online {test_online.accuracy:.4f}")
    print(f"Checkpoint: {checkpoint_path}")
    print(f"Metrics: {metrics_path}")
    return EXIT_OK


def _metrics_table(metrics: Metrics) -> str:
    rows = [
        [label, counts.total, counts.correct, f"{counts.correct / counts.total:.4f}" if counts.total else "N/A"]
        for label, counts in metrics.per_class.items()
    ]
    rows.append(["(all)", metrics.total, metrics.correct, f"{metrics.accuracy:.4f}"])
    return tabulate(rows, headers=["Act", "Total", "Correct", "Accuracy"], tablefmt="grid")


def cmd_eval(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    splits = _load_splits(parser, args.corpus)
    model = DialogueActModel.load(args.checkpoint)
    dialogues = splits.split(args.split)
    settings_to_run = ["offline", "online"] if args.setting == "both" else [args.setting]
    results = {}
    for setting in settings_to_run:
        metrics = evaluate(dialogues, model, setting, padding=args.padding)
        results[setting] = metrics.model_dump(mode="json")
        print(f"\n{setting.capitalize()} evaluation on {args.split} ({len(dialogues)} dialogues)")
        print(_metrics_table(metrics))
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(json.dumps(results, indent=2), encoding="utf-8")
    return EXIT_OK


def cmd_predict_online(args: argparse.Namespace, stdin=None, stdout=None) -> int:
    stdin = stdin if stdin is not None else sys.stdin.buffer
    stdout = stdout if stdout is not None else sys.stdout
    predictor = OnlinePredictor(DialogueActModel.load(args.checkpoint), args.padding)
    for line_number, raw in enumerate(stdin, start=1):
        try:
            text = raw.decode("utf-8").rstrip("\r\n")
            if not text.strip():
                raise ValueError("empty utterance")
            label = predictor.push(text)
        except (UnicodeDecodeError, ValueError) as e:
            logger.error(f"line {line_number}: {e}")
            label = ERROR_TOKEN
        stdout.write(label + "\n")
        stdout.flush()
    return EXIT_OK


def cmd_viz_attention(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    splits = _load_splits(parser, args.corpus)
    model = DialogueActModel.load(args.checkpoint)
    dialogues = splits.split(args.split)
    if not dialogues:
        raise SegmentationError(f"the {args.split} split has no dialogues")
    if args.dialogue is None:
        dialogue = dialogues[0]
    else:
        matches = [d for d in dialogues if d.id == args.dialogue]
        if not matches:
            raise SegmentationError(f"dialogue {args.dialogue!r} not found in the {args.split} split")
        dialogue = matches[0]

    windows = split_dialogue(len(dialogue), model.config.window, model.config.padding, dialogue.id)
    if not 1 <= args.window_index <= len(windows):
        raise SegmentationError(
            f"window index {args.window_index} out of range: dialogue {dialogue.id} has {len(windows)} windows"
        )
    window = windows[args.window_index - 1]
    tokens = [model.tokenize(dialogue.utterances[i - 1].text) for i in window.indices]
    weights = model.attention_weights(tokens, use_bias=False if args.no_bias else None)

    prefix = Path(args.output) if args.output else (
        Path(settings.output_dir) / f"attention_{dialogue.id}_w{args.window_index}"
    )
    labels = [f"{i}:{dialogue.utterances[i - 1].act}" for i in window.indices]
    for path in export_attention(weights, prefix, labels):
        print(path)
    mean = sum(weights) / len(weights)
    distance = model.config.center_bound + 2
    print(f"Mean attention mass beyond distance {distance:g}: {long_range_mass(mean, distance):.4f}")
    return EXIT_OK


def cmd_bench_complexity(args: argparse.Namespace) -> int:
    rows = complexity_rows(args.dim, args.lengths, heads=args.heads, seed=args.seed)
    text = rows_to_csv(rows)
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(text, encoding="utf-8")
        print(tabulate([[getattr(r, c) for c in COLUMNS] for r in rows], headers=list(COLUMNS), tablefmt="grid"))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_gen_synthetic(args: argparse.Namespace) -> int:
    try:
        spec = SyntheticSpec(**_overrides(args, SyntheticSpec))
    except ValidationError as e:
        raise ConfigurationError(f"invalid synthetic corpus options: {e}") from e
    corpus = gen_synthetic(spec)
    write_corpus(corpus.splits, args.output)
    print(format_stats(corpus_stats(corpus.splits)))
    print(tabulate(sorted(corpus.marginals.items()), headers=["Act", "Frequency"], tablefmt="grid", floatfmt=".4f"))
    print(f"Context-free accuracy ceiling: {corpus.ceiling:.4f}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level, args.log_format)

    try:
        if args.command == "train":
            return cmd_train(args, parser)
        if args.command == "eval":
            return cmd_eval(args, parser)
        if args.command == "predict-online":
            return cmd_predict_online(args)
        if args.command == "viz-attention":
            return cmd_viz_attention(args, parser)
        if args.command == "bench-complexity":
            return cmd_bench_complexity(args)
        return cmd_gen_synthetic(args)
    except (DialogueActError, TrainingDivergedError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
