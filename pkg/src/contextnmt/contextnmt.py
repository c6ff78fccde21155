__doc__ = """
The `contextnmt` command line.

```
contextnmt synth --out-dir synth/
contextnmt prepare --src synth/corpus.src --trg synth/corpus.trg --out-dir data/
contextnmt train --data data/ --out-dir runs/s-hier-to-2 --strategy s-hier-to-2
contextnmt score-contrastive --data data/ --run-dir runs/s-hier-to-2 \\
    --testset synth/coreference.yaml --report report.yaml
```

Exit status is 0 on success, 1 on invalid data, configuration or files, and
2 on usage errors.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import yaml

from contextnmt.nmtBleu import corpus_bleu, read_lines
from contextnmt.nmtBpe import SubwordModel, learn_bpe, word_frequencies
from contextnmt.nmtCheckpoint import last_checkpoints
from contextnmt.nmtContrastive import (
    ModelScorer,
    accuracy_hook,
    evaluate,
    read_testset,
    validate_testset,
    write_testset,
)
from contextnmt.nmtDecoding import (
    MODES,
    export_attention,
    translate_documents,
    write_attention_report,
    write_translations,
)
from contextnmt.nmtStrategies import STRATEGIES
from contextnmt.nmtSynth import (
    SynthConfig,
    SynthLexicon,
    generate_corpus,
    generate_testset,
)
from contextnmt.nmtText import (
    TextPipeline,
    extract_context_pairs,
    prepare,
    read_parallel,
    read_source,
    tokenize,
    write_parallel,
)
from contextnmt.nmtTraining import Ensemble, TrainConfig, train
from contextnmt.nmtUtils import CheckpointFormatError, ConfigurationError

logger = logging.getLogger(__name__)

__all__ = ["build_parser", "run"]

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

_TRAIN_DEFAULTS = TrainConfig()
_SYNTH_DEFAULTS = SynthConfig()


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    common.add_argument(
        "--threads",
        type=int,
        default=1,
        help="parallel workers for scoring and generation",
    )
    return common


def _models(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--data", type=Path, required=True, help="prepared data directory"
    )
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument(
        "--models", type=Path, nargs="+", help="checkpoint files to ensemble"
    )
    group.add_argument("--run-dir", type=Path, help="training run directory")
    parser.add_argument(
        "--ensemble",
        type=int,
        default=_TRAIN_DEFAULTS.ensemble_size,
        help="last checkpoints of --run-dir to ensemble",
    )


def _translation(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--input", type=Path, required=True, help="source documents")
    parser.add_argument("--beam", type=int, default=12, help="beam size")
    parser.add_argument(
        "--mode",
        choices=MODES,
        default="stream",
        help="where the previous target comes from",
    )
    parser.add_argument(
        "--baseline", type=Path, default=None, help="baseline translations"
    )
    parser.add_argument(
        "--reference", type=Path, default=None, help="reference translations"
    )


def _override(
    parser: argparse.ArgumentParser, flag: str, type, default, help: str
) -> None:
    "An option that overrides a config file value only when given"
    parser.add_argument(
        flag, type=type, default=argparse.SUPPRESS, help=f"{help} (default: {default})"
    )


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="contextnmt",
        description="Contextual neural machine translation and contrastive evaluation.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def add(name: str, help: str) -> argparse.ArgumentParser:
        return sub.add_parser(
            name,
            help=help,
            parents=[common],
            formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        )

    p = add("bpe-learn", "learn a subword model from tokenized text")
    p.add_argument("--input", type=Path, nargs="+", required=True, help="text files")
    p.add_argument("--output", type=Path, required=True, help="subword model file")
    p.add_argument("--merges", type=int, default=90000, help="merge operations")
    p.add_argument("--threshold", type=int, default=0, help="lowest pair count merged")
    p.add_argument("--tokenize", action="store_true", help="tokenize the input first")
    p.set_defaults(handler=_bpe_learn)

    p = add("bpe-apply", "segment tokenized text into subwords")
    p.add_argument("--codes", type=Path, required=True, help="subword model file")
    p.add_argument("--input", type=Path, required=True, help="text file")
    p.add_argument("--output", type=Path, default=None, help="output file or stdout")
    p.set_defaults(handler=_bpe_apply)

    p = add("prepare", "tokenize, clean, case and segment a parallel corpus")
    p.add_argument("--src", type=Path, required=True, help="source side")
    p.add_argument("--trg", type=Path, required=True, help="target side")
    p.add_argument("--out-dir", type=Path, required=True, help="output directory")
    p.add_argument("--merges", type=int, default=90000, help="merge operations")
    p.add_argument("--threshold", type=int, default=50, help="lowest pair count merged")
    p.add_argument("--max-len", type=int, default=80, help="longest sentence kept")
    p.set_defaults(handler=_prepare)

    p = add("train", "train a model")
    p.add_argument("--data", type=Path, required=True, help="prepared data directory")
    p.add_argument("--out-dir", type=Path, required=True, help="run directory")
    p.add_argument("--config", type=Path, default=None, help="YAML training config")
    _override(
        p,
        "--strategy",
        str,
        _TRAIN_DEFAULTS.strategy,
        f"one of {', '.join(STRATEGIES)}",
    )
    _override(p, "--emb-dim", int, _TRAIN_DEFAULTS.emb_dim, "embedding size")
    _override(p, "--hidden-dim", int, _TRAIN_DEFAULTS.hidden_dim, "state size")
    _override(
        p, "--gate-activation", str, _TRAIN_DEFAULTS.gate_activation, "tanh or sigmoid"
    )
    _override(p, "--learning-rate", float, _TRAIN_DEFAULTS.learning_rate, "step size")
    _override(p, "--batch-size", int, _TRAIN_DEFAULTS.batch_size, "batch size")
    _override(p, "--max-len", int, _TRAIN_DEFAULTS.max_len, "longest training example")
    _override(
        p,
        "--checkpoint-interval",
        int,
        _TRAIN_DEFAULTS.checkpoint_interval,
        "updates between checkpoints",
    )
    _override(p, "--patience", int, _TRAIN_DEFAULTS.patience, "early stopping patience")
    _override(p, "--max-epochs", int, _TRAIN_DEFAULTS.max_epochs, "epoch limit")
    _override(p, "--max-updates", int, _TRAIN_DEFAULTS.max_updates, "update limit")
    _override(p, "--seed", int, _TRAIN_DEFAULTS.seed, "random seed")
    p.add_argument(
        "--testset",
        type=Path,
        default=None,
        help="contrastive test set scored at every checkpoint",
    )
    p.add_argument("--progress", action="store_true", help="show a progress bar")
    p.set_defaults(handler=_train)

    p = add("translate", "translate documents")
    _models(p)
    _translation(p)
    p.add_argument("--output", type=Path, required=True, help="translations")
    p.add_argument("--attention", type=Path, default=None, help="attention report")
    p.set_defaults(handler=_translate)

    p = add("attn-dump", "translate documents and dump attention weights")
    _models(p)
    _translation(p)
    p.add_argument("--output", type=Path, required=True, help="YAML attention report")
    p.set_defaults(handler=_attn_dump)

    p = add("score-contrastive", "evaluate a model on a contrastive test set")
    _models(p)
    p.add_argument("--testset", type=Path, required=True, help="test set file")
    p.add_argument("--format", default="yaml", help="test set format")
    p.add_argument("--report", type=Path, required=True, help="YAML report")
    p.add_argument(
        "--no-prefix",
        action="store_true",
        help="leave the previous translation out of two-sentence scores",
    )
    p.add_argument("--progress", action="store_true", help="show a progress bar")
    p.set_defaults(handler=_score_contrastive)

    p = add("validate-testset", "check the structure of a contrastive test set")
    p.add_argument("testset", type=Path, help="test set file")
    p.add_argument("--format", default="yaml", help="test set format")
    p.set_defaults(handler=_validate_testset)

    p = add("bleu", "corpus BLEU of detokenized translations")
    p.add_argument("hypotheses", type=Path, help="system output")
    p.add_argument("references", type=Path, help="references")
    p.add_argument("--max-n", type=int, default=4, help="longest n-gram")
    p.set_defaults(handler=_bleu)

    p = add("synth", "generate a synthetic corpus and contrastive test sets")
    p.add_argument("--out-dir", type=Path, required=True, help="output directory")
    p.add_argument("--config", type=Path, default=None, help="YAML generator config")
    _override(p, "--seed", int, _SYNTH_DEFAULTS.seed, "random seed")
    _override(p, "--num-documents", int, _SYNTH_DEFAULTS.num_documents, "corpus size")
    _override(
        p, "--proportion", float, _SYNTH_DEFAULTS.proportion, "linked share"
    )
    p.add_argument(
        "--coreference-blocks", type=int, default=50, help="coreference test blocks"
    )
    p.add_argument(
        "--coherence-blocks", type=int, default=100, help="coherence test blocks"
    )
    p.set_defaults(handler=_synth)

    return parser


# Handlers


def _bpe_learn(args) -> int:
    sentences = []
    for path in args.input:
        for line in read_lines(path):
            sentences.append(tokenize(line) if args.tokenize else line.split())
    model = learn_bpe(word_frequencies(sentences), args.merges, args.threshold)
    model.save(args.output)
    print(f"{len(model)} merges written to {args.output}")
    return 0


def _bpe_apply(args) -> int:
    model = SubwordModel.load(args.codes)
    lines = [
        " ".join(model.segment_sentence(line.split()))
        for line in read_lines(args.input)
    ]
    if args.output is None:
        for line in lines:
            print(line)
    else:
        args.output.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return 0


def _prepare(args) -> int:
    docs = read_parallel(args.src, args.trg)
    pipeline = prepare(docs, args.out_dir, args.merges, args.threshold, args.max_len)
    print(f"{pipeline!r} written to {args.out_dir}")
    return 0


def _overrides(args, names: Sequence[str]) -> Dict[str, object]:
    return {n: getattr(args, n) for n in names if hasattr(args, n)}


def _train(args) -> int:
    config = TrainConfig.from_yaml(args.config) if args.config else TrainConfig()
    config = config.with_overrides(
        **_overrides(
            args,
            (
                "strategy",
                "emb_dim",
                "hidden_dim",
                "gate_activation",
                "learning_rate",
                "batch_size",
                "max_len",
                "checkpoint_interval",
                "patience",
                "max_epochs",
                "max_updates",
                "seed",
            ),
        )
    )
    pipeline = TextPipeline.load(args.data)
    docs = read_parallel(args.data / "train.src", args.data / "train.trg")
    examples = [
        e
        for d in docs
        for e in extract_context_pairs(d, pipeline.src_vocab, pipeline.trg_vocab)
    ]
    hook = None
    if args.testset is not None:
        hook = accuracy_hook(pipeline, read_testset(args.testset))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "config.yaml").write_text(config.to_yaml(), encoding="utf-8")
    run = train(
        config,
        examples,
        args.out_dir,
        len(pipeline.src_vocab),
        len(pipeline.trg_vocab),
        on_checkpoint=hook,
        progress=args.progress,
        vocab_fingerprint=pipeline.vocab_fingerprint,
    )
    print(f"{len(run.checkpoints)} checkpoints written to {args.out_dir}")
    return 0


def _load_ensemble(args) -> Ensemble:
    if args.models:
        paths = list(args.models)
    else:
        paths = last_checkpoints(args.run_dir, args.ensemble)
        if not paths:
            raise ConfigurationError(f"No checkpoint in {args.run_dir}")
    logger.info("Ensembling %s", ", ".join(str(p) for p in paths))
    return Ensemble.from_checkpoints(paths)


def _documents(args):
    if args.reference is not None:
        return read_parallel(args.input, args.reference)
    return read_source(args.input)


def _baselines(args, docs) -> Optional[List[List[str]]]:
    if args.baseline is None:
        return None
    base = read_parallel(args.input, args.baseline)
    if [len(d) for d in base] != [len(d) for d in docs]:
        raise ConfigurationError(f"{args.baseline} does not align with {args.input}")
    return [d.targets for d in base]


def _decode(args):
    pipeline = TextPipeline.load(args.data)
    ensemble = _load_ensemble(args)
    docs = _documents(args)
    results = translate_documents(
        ensemble,
        pipeline,
        docs,
        args.beam,
        args.mode,
        _baselines(args, docs),
        args.threads,
    )
    return pipeline, ensemble, results


def _attention_reports(
    pipeline: TextPipeline, ensemble: Ensemble, results
) -> List[dict]:
    reports = []
    for doc in results:
        for r in doc:
            built = ensemble.build(r.example)
            vocabs = [
                pipeline.src_vocab if side == "src" else pipeline.trg_vocab
                for side in ensemble.strategy.encoder_sides
            ]
            inputs = [
                [v.token(i) for i in seq] for v, seq in zip(vocabs, built.inputs)
            ]
            outputs = [pipeline.trg_vocab.token(i) for i in r.hypothesis.tokens]
            report = export_attention(r.hypothesis, inputs, outputs)
            report["doc_id"] = r.example.doc_id
            report["position"] = r.example.position
            reports.append(report)
    return reports


def _translate(args) -> int:
    pipeline, ensemble, results = _decode(args)
    write_translations(results, args.output)
    if args.attention is not None:
        reports = _attention_reports(pipeline, ensemble, results)
        write_attention_report(reports, args.attention)
    print(f"{sum(len(d) for d in results)} sentences written to {args.output}")
    return 0


def _attn_dump(args) -> int:
    pipeline, ensemble, results = _decode(args)
    write_attention_report(_attention_reports(pipeline, ensemble, results), args.output)
    n = sum(len(d) for d in results)
    print(f"Attention of {n} sentences written to {args.output}")
    return 0


def _score_contrastive(args) -> int:
    pipeline = TextPipeline.load(args.data)
    testset = read_testset(args.testset, args.format)
    problems = validate_testset(testset)
    if problems:
        for problem in problems:
            logger.warning(problem)
        logger.warning(
            "%s has %d violations, a context-blind model may not score 50%%",
            args.testset,
            len(problems),
        )
    scorer = ModelScorer(
        _load_ensemble(args), pipeline, include_prefix=not args.no_prefix
    )
    report = evaluate(scorer, testset, args.threads, args.progress)
    report.save(args.report)
    table = report.table()
    args.report.with_suffix(".txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


def _validate_testset(args) -> int:
    testset = read_testset(args.testset, args.format)
    problems = validate_testset(testset)
    for problem in problems:
        print(problem)
    print(f"{len(problems)} violations in {len(testset)} blocks")
    return 1 if problems else 0


def _bleu(args) -> int:
    hypotheses, references = read_lines(args.hypotheses), read_lines(args.references)
    score = corpus_bleu(hypotheses, references, args.max_n)
    logger.info("%s", score)
    print(f"{score.score:.2f}")
    return 0


def _synth(args) -> int:
    config = SynthConfig.from_yaml(args.config) if args.config else SynthConfig()
    data = config.to_dict()
    data.update(_overrides(args, ("seed", "num_documents", "proportion")))
    config = SynthConfig.from_dict(data)

    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    docs = generate_corpus(config, args.threads)
    write_parallel(docs, out / "corpus.src", out / "corpus.trg")
    for kind, count in (
        ("coreference", args.coreference_blocks),
        ("coherence", args.coherence_blocks),
    ):
        write_testset(generate_testset(config, kind, count), out / f"{kind}.yaml")
    SynthLexicon.build(config).save(out / "lexicon.yaml")
    (out / "synth.yaml").write_text(yaml.safe_dump(config.to_dict()), encoding="utf-8")
    print(f"{len(docs)} documents and 2 test sets written to {out}")
    return 0


_DATA_ERRORS = (ValueError, ArithmeticError, CheckpointFormatError, OSError)


def _configure_logging(args) -> None:
    level = logging.INFO
    if getattr(args, "verbose", False):
        level = logging.DEBUG
    elif getattr(args, "quiet", False):
        level = logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT)


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command.

    Args:
        argv (Sequence[str], optional): arguments without the program name.
        Defaults to `sys.argv[1:]`.

    Returns:
        int: exit status
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    _configure_logging(args)
    if args.threads < 1:
        logger.error("--threads must be >= 1")
        return 2
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except _DATA_ERRORS as e:
        logger.error("%s: %s", type(e).__name__, e)
        return 1


def main() -> None:
    sys.exit(run())
