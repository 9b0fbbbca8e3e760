"""Command-line entry point.

Commands: build-corpus, aggregate, stats, train, sweep-alpha, evaluate,
generate, audit, serve. Exit codes: 0 success, 2 usage error, 1 runtime
error. Option precedence is flags > config file (--config, ``key = value``
lines keyed by flag name) > built-in defaults; ``--seed`` threads through
every stochastic component.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

from . import annotation, checkpoint, corpus, metrics, training
from .corpus import CorpusSplit, Label, SplitName
from .errors import IntegrityError, VteError
from .explainer import (
    DecoderConfig,
    ExplainableVteModel,
    ExplanationClassifier,
    ExplToLabelConfig,
    GeneratedExplanation,
    build_vocab,
    load_vocab,
    save_generated,
    save_vocab,
)
from .features import FeatureStore, random_embedding_table, load_embedding_table
from .model import VteClassifier, VteModelConfig
from .text import tokenize

logger = logging.getLogger(__name__)


class UsageError(Exception):
    pass


def _read_config(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    values = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{line_no}: expected 'key = value'")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


class Options:
    """flags > config file > defaults."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = _read_config(getattr(args, "config", None))

    def get(self, name: str, default=None, cast=str):
        value = getattr(self.args, name.replace("-", "_"), None)
        if value is not None:
            return value
        if name in self.config:
            raw = self.config[name]
            if cast is bool:
                return raw.lower() in ("1", "true", "yes")
            return cast(raw)
        return default


def _split_name(raw: str) -> SplitName:
    try:
        return SplitName(raw)
    except ValueError:
        raise UsageError(f"unknown split name {raw!r}")


def _check_alpha(alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise UsageError(f"--alpha must be in [0, 1], got {alpha}")
    return alpha


# ----------------------------------------------------------------- commands


def cmd_build_corpus(args) -> int:
    opts = Options(args)
    split = corpus.load_split(args.base, _split_name(opts.get("name", "validation")))
    if args.outcomes:
        with open(args.outcomes, encoding="utf-8") as fh:
            outcomes = [
                annotation.outcome_from_record(json.loads(line))
                for line in fh
                if line.strip()
            ]
        split = corpus.merge_corrections(split, outcomes)
    if args.explanations:
        with open(args.explanations, encoding="utf-8") as fh:
            mapping = {}
            for line in fh:
                if line.strip():
                    raw = json.loads(line)
                    mapping[raw["pair_id"]] = raw["explanations"]
        split = corpus.attach_explanations(split, mapping)
    corpus.save_split(split, args.out)
    print(f"wrote {len(split)} instances to {args.out}")
    return 0


def cmd_aggregate(args) -> int:
    opts = Options(args)
    base = corpus.load_split(args.base, _split_name(opts.get("name", "validation")))
    records = annotation.load_records(args.records)
    grouped: dict[str, list] = defaultdict(list)
    for record in records:
        grouped[record.pair_id].append(record)

    outcomes = []
    for pair_id, pair_records in grouped.items():
        if len(pair_records) < 3:
            logger.warning(
                "pair %s has %d/3 annotations; skipped", pair_id, len(pair_records)
            )
            continue
        if len(pair_records) > 3:
            raise IntegrityError(f"pair {pair_id!r} has {len(pair_records)} records")
        outcomes.append(annotation.aggregate(pair_id, pair_records))

    merged = corpus.merge_corrections(base, outcomes)
    corpus.save_split(merged, args.out)

    if outcomes:
        report = annotation.redistribution_report(outcomes, Label.NEUTRAL)
        print(report.to_text())
        if args.report:
            Path(args.report).write_text(
                json.dumps(report.to_record(), indent=2) + "\n", encoding="utf-8"
            )
    if args.outcomes_out:
        with open(args.outcomes_out, "w", encoding="utf-8") as fh:
            for outcome in outcomes:
                fh.write(json.dumps(annotation.outcome_to_record(outcome)) + "\n")
    if args.ambiguous_out:
        by_id = base.by_pair_id()
        removed = [by_id[o.pair_id] for o in outcomes if o.is_ambiguous]
        corpus.save_split(
            CorpusSplit(base.name, tuple(removed)), args.ambiguous_out
        )
    print(f"wrote {len(merged)} instances to {args.out}")
    return 0


def cmd_stats(args) -> int:
    opts = Options(args)
    split = corpus.load_split(args.split, _split_name(opts.get("name", "train")))
    stats = corpus.compute_stats(split)
    print(stats.to_text())
    if args.json:
        Path(args.json).write_text(
            json.dumps(stats.to_record(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    return 0


def _training_config(opts: Options, seed: int, selection) -> training.TrainingConfig:
    return training.TrainingConfig(
        batch_size=opts.get("batch-size", 64, int),
        max_epochs=opts.get("max-epochs", 100, int),
        patience=opts.get("patience", 3, int),
        learning_rate=opts.get("lr", 1e-3, float),
        alpha=_check_alpha(opts.get("alpha", 0.4, float)),
        selection_metric=selection,
        seed=seed,
    )


def _embedding_table(opts: Options, train_split: CorpusSplit, seed: int):
    path = opts.get("embeddings")
    if path:
        return load_embedding_table(path)
    tokens = sorted({t for inst in train_split for t in inst.hypothesis})
    return random_embedding_table(tokens, opts.get("embed-dim", 8, int), seed)


def _classifier_for(opts: Options, train_split, store, seed: int) -> VteClassifier:
    region_dim = store.get(train_split.instances[0].image_id).dim
    table = _embedding_table(opts, train_split, seed)
    config = VteModelConfig(
        embed_dim=table.dim,
        hidden_dim=opts.get("hidden-dim", 16, int),
        region_dim=region_dim,
        seed=seed,
    )
    return VteClassifier(config, embeddings=table)


def _explainable_for(opts: Options, trunk: VteClassifier, vocab, condition: bool, seed: int):
    decoder = DecoderConfig(
        vocab_size=len(vocab),
        input_dim=trunk.config.hidden_dim,
        embed_dim=opts.get("decoder-embed-dim", 8, int),
        hidden_dim=opts.get("decoder-hidden-dim", 16, int),
        condition_on_label=condition,
        seed=seed + 1,
    )
    from .explainer import ExplanationDecoder

    return ExplainableVteModel(trunk, ExplanationDecoder(decoder))


def cmd_train(args) -> int:
    opts = Options(args)
    seed = opts.get("seed", 0, int)
    model_kind = args.model
    train_split = corpus.load_split(args.train, SplitName.TRAIN)
    val_split = corpus.load_split(args.val, SplitName.VALIDATION)

    if model_kind == "expl-to-label":
        vocab = build_vocab(
            (tokenize(e) for inst in train_split for e in inst.explanations),
            min_count=opts.get("min-count", 1, int),
        )
        model = ExplanationClassifier(
            ExplToLabelConfig(
                vocab_size=len(vocab),
                embed_dim=opts.get("embed-dim", 8, int),
                hidden_dim=opts.get("hidden-dim", 16, int),
                mlp_dim=opts.get("mlp-dim", 16, int),
                seed=seed,
            )
        )
        task = training.ExplToLabelTask(
            model,
            training.explanation_pairs_from_split(train_split),
            training.explanation_pairs_from_split(val_split),
            vocab,
        )
        config = _training_config(opts, seed, training.SelectionMetric.BALANCED_ACCURACY)
        kind, config_dict = model.CHECKPOINT_KIND, model.config.to_dict()
    else:
        if not args.features:
            raise UsageError(f"--features is required for model {model_kind!r}")
        store = FeatureStore(args.features)
        trunk = _classifier_for(opts, train_split, store, seed)
        if model_kind == "classifier":
            model = trunk
            task = training.ClassifierTask(
                model,
                train_split,
                val_split,
                store,
                plain_accuracy=opts.get("selection", "balanced-accuracy") == "plain-accuracy",
            )
            config = _training_config(
                opts, seed, training.SelectionMetric.BALANCED_ACCURACY
            )
            kind, config_dict = model.CHECKPOINT_KIND, model.config.to_dict()
        else:
            vocab = build_vocab(
                (tokenize(e) for inst in train_split for e in inst.explanations),
                min_count=opts.get("min-count", 1, int),
            )
            condition = model_kind == "predict-explain"
            model = _explainable_for(opts, trunk, vocab, condition, seed)
            if condition:
                selection = training.SelectionMetric.BALANCED_ACCURACY
                alpha = _check_alpha(opts.get("alpha", 0.4, float))
            else:
                selection = training.SelectionMetric.PERPLEXITY
                alpha = 0.0
            config = _training_config(opts, seed, selection)
            config.alpha = alpha
            task = training.ExplainableTask(
                model, train_split, val_split, store, vocab, alpha, selection
            )
            kind, config_dict = model.CHECKPOINT_KIND, model.config_dict()
            vocab_out = opts.get("vocab-out", str(args.out) + ".vocab")
            save_vocab(vocab, vocab_out)

    state, history = training.train(task, config)
    model.load_state_dict(state)
    checkpoint.save_model(args.out, model, kind, config_dict)
    if args.history:
        training.save_history(history, args.history)
    print(history.to_text())
    print(
        f"selected epoch {history.selected_epoch} "
        f"(metric {history.selected_metric:.6f}); checkpoint: {args.out}"
    )
    return 0


def cmd_sweep_alpha(args) -> int:
    opts = Options(args)
    seed = opts.get("seed", 0, int)
    values = []
    for raw in str(args.alphas).split(","):
        values.append(_check_alpha(float(raw)))
    train_split = corpus.load_split(args.train, SplitName.TRAIN)
    val_split = corpus.load_split(args.val, SplitName.VALIDATION)
    store = FeatureStore(args.features)
    vocab = build_vocab(
        (tokenize(e) for inst in train_split for e in inst.explanations),
        min_count=opts.get("min-count", 1, int),
    )

    def make_task(alpha: float):
        trunk = _classifier_for(opts, train_split, store, seed)
        model = _explainable_for(opts, trunk, vocab, True, seed)
        return training.ExplainableTask(
            model, train_split, val_split, store, vocab, alpha,
            training.SelectionMetric.BALANCED_ACCURACY,
        )

    config = _training_config(opts, seed, training.SelectionMetric.BALANCED_ACCURACY)
    result = training.alpha_sweep(values, make_task, config)
    print(result.to_text())
    if args.report:
        Path(args.report).write_text(
            json.dumps(result.to_record(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    if args.out:
        best_task = make_task(result.best_alpha)
        best_task.model.load_state_dict(result.runs[result.best_alpha].state)
        checkpoint.save_model(
            args.out,
            best_task.model,
            ExplainableVteModel.CHECKPOINT_KIND,
            best_task.model.config_dict(),
        )
        save_vocab(vocab, opts.get("vocab-out", str(args.out) + ".vocab"))
    print(f"best alpha: {result.best_alpha}")
    return 0


def cmd_evaluate(args) -> int:
    store = FeatureStore(args.features)
    predictors = {}
    for key, path in (
        (metrics.ORIGINAL, args.checkpoint_original),
        (metrics.CORRECTED, args.checkpoint_corrected),
    ):
        kind, model = checkpoint.load_model(path)
        predictor_model = model.trunk if hasattr(model, "trunk") else model
        predictors[key] = (
            lambda inst, m=predictor_model: m.predict(inst, store.get(inst.image_id))
        )
    test_splits = {
        metrics.ORIGINAL: corpus.load_split(args.test_original, SplitName.TEST),
        metrics.CORRECTED: corpus.load_split(args.test_corrected, SplitName.TEST),
    }
    report = metrics.evaluate_matrix(predictors, test_splits)
    print(report.to_text())
    if args.out:
        Path(args.out).write_text(
            json.dumps(report.to_record(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    return 0


def cmd_generate(args) -> int:
    opts = Options(args)
    kind, model = checkpoint.load_model(args.checkpoint)
    if kind != ExplainableVteModel.CHECKPOINT_KIND:
        raise UsageError(f"checkpoint {args.checkpoint} is not an explainable model")
    vocab = load_vocab(args.vocab)
    split = corpus.load_split(args.split, _split_name(opts.get("name", "test")))
    store = FeatureStore(args.features)
    generated = []
    for instance in split:
        label, tokens = model.generate(
            instance,
            store.get(instance.image_id),
            vocab,
            width=opts.get("width", 3, int),
            max_len=opts.get("max-len", 40, int),
        )
        generated.append(
            GeneratedExplanation(instance.pair_id, label, " ".join(tokens))
        )
    save_generated(generated, args.out)
    print(f"wrote {len(generated)} explanations to {args.out}")
    return 0


def cmd_audit(args) -> int:
    opts = Options(args)
    if args.score:
        aggregate = metrics.score_relevance_sheet(metrics.read_relevance_sheet(args.score))
        print(json.dumps(aggregate.to_record(), indent=2, sort_keys=True))
        if args.out:
            Path(args.out).write_text(
                json.dumps(aggregate.to_record(), indent=2, sort_keys=True) + "\n",
                encoding="utf-8",
            )
        return 0
    if not (args.generated and args.split and args.out):
        raise UsageError("audit needs either --score or --generated/--split/--out")
    from .explainer import load_generated

    split = corpus.load_split(args.split, _split_name(opts.get("name", "test")))
    rows = metrics.make_relevance_sheet(
        load_generated(args.generated),
        split,
        sample_size=opts.get("sample-size", 100, int),
        seed=opts.get("seed", 0, int),
    )
    metrics.write_relevance_sheet(rows, args.out)
    print(f"wrote audit sheet with {len(rows)} rows to {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .annotation import TrustedPair
    from .server import create_app
    from .service import AnnotationService, load_workers

    opts = Options(args)
    queue = corpus.load_split(args.queue, _split_name(opts.get("queue-name", "validation")))
    trusted_split = corpus.load_split(args.trusted, SplitName.TEST)
    trusted = [TrustedPair(inst, inst.label) for inst in trusted_split]
    service = AnnotationService(
        queues=[queue],
        trusted_pool=trusted,
        workers=load_workers(args.workers),
        data_dir=args.data_dir,
        seed=opts.get("seed", 0, int),
        reservation_timeout=opts.get("reservation-timeout", 3600.0, float),
    )
    app = create_app(service, images_dir=args.images_dir, ui_dir=args.ui_dir)
    uvicorn.run(app, host=opts.get("host", "127.0.0.1"), port=opts.get("port", 8000, int))
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vte",
        description="Visual-textual entailment workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="seed for stochastic components")

    p = sub.add_parser("build-corpus", help="merge corrections and attach explanations")
    common(p)
    p.add_argument("--base", required=True)
    p.add_argument("--name", choices=[s.value for s in SplitName])
    p.add_argument("--outcomes")
    p.add_argument("--explanations")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_corpus)

    p = sub.add_parser("aggregate", help="aggregate annotation records into a corrected split")
    common(p)
    p.add_argument("--records", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--name", choices=[s.value for s in SplitName])
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--outcomes-out")
    p.add_argument("--ambiguous-out")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("stats", help="split statistics")
    common(p)
    p.add_argument("--split", required=True)
    p.add_argument("--name", choices=[s.value for s in SplitName])
    p.add_argument("--json")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument(
        "--model",
        required=True,
        choices=["classifier", "predict-explain", "generator", "expl-to-label"],
    )
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--features")
    p.add_argument("--embeddings")
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--mlp-dim", type=int)
    p.add_argument("--decoder-embed-dim", type=int)
    p.add_argument("--decoder-hidden-dim", type=int)
    p.add_argument("--min-count", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument(
        "--selection", choices=["balanced-accuracy", "plain-accuracy", "perplexity"]
    )
    p.add_argument("--out", required=True)
    p.add_argument("--history")
    p.add_argument("--vocab-out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep-alpha", help="alpha hyperparameter sweep")
    common(p)
    p.add_argument("--alphas", required=True, help="comma-separated values")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--decoder-embed-dim", type=int)
    p.add_argument("--decoder-hidden-dim", type=int)
    p.add_argument("--min-count", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out")
    p.add_argument("--vocab-out")
    p.add_argument("--report")
    p.set_defaults(func=cmd_sweep_alpha)

    p = sub.add_parser("evaluate", help="selection/test evaluation matrix")
    common(p)
    p.add_argument("--checkpoint-original", required=True)
    p.add_argument("--checkpoint-corrected", required=True)
    p.add_argument("--test-original", required=True)
    p.add_argument("--test-corrected", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("generate", help="decode explanations for a split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--name", choices=[s.value for s in SplitName])
    p.add_argument("--features", required=True)
    p.add_argument("--width", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("audit", help="relevance audit sheet / scoring")
    common(p)
    p.add_argument("--generated")
    p.add_argument("--split")
    p.add_argument("--name", choices=[s.value for s in SplitName])
    p.add_argument("--sample-size", type=int)
    p.add_argument("--score", help="aggregate a filled sheet")
    p.add_argument("--out")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("serve", help="run the annotation service")
    common(p)
    p.add_argument("--queue", required=True)
    p.add_argument("--queue-name", choices=[s.value for s in SplitName])
    p.add_argument("--trusted", required=True)
    p.add_argument("--workers", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--images-dir")
    p.add_argument("--ui-dir")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--reservation-timeout", type=float)
    p.set_defaults(func=cmd_serve)

    return parser


def dispatch(argv) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args) or 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (VteError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
