"""Command-line entry points: lda-train, train, rl-finetune, summarize, evaluate.

Options may also come from a ``key=value`` file given with ``--config``;
command-line flags take precedence. Exit codes: 0 success (including a
learning-rate STOP), 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import data, lda, rouge
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .decode import DEFAULT_BEAM, decode
from .model import ModelConfig, TopicConvS2S
from .train import LOG_COLUMNS, TrainConfig, TrainingDiverged, finetune_scst, train_ml

log = logging.getLogger("topic_convs2s")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class ValidationError(Exception):
    """Bad configuration or inputs, reported before any work starts."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file; flags override its entries")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-level", default="WARNING")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--d", type=int, default=256, help="embedding and hidden width")
    g.add_argument("--kernel-width", type=int, default=3)
    g.add_argument("--layers", type=int, default=6, help="word-level encoder/decoder depth")
    g.add_argument("--topic-layers", type=int, default=None, help="topic-level depth (default: --layers)")
    g.add_argument("--max-source-len", type=int, default=data.MAX_SOURCE_LEN)
    g.add_argument("--max-target-len", type=int, default=data.MAX_TARGET_LEN)
    g.add_argument("--init-scale", type=float, default=0.1)
    g.add_argument("--dropout", type=float, default=0.0)


def _add_optim_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("optimisation")
    g.add_argument("--momentum", type=float, default=0.99)
    g.add_argument("--clip", type=float, default=0.1, help="global gradient-norm clip (0 disables)")
    g.add_argument("--batch-size", type=int, default=32)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="topic-convs2s", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("lda-train", help="pre-train LDA and derive the topic vocabulary")
    _add_common(p)
    p.add_argument("--corpus", help="TAB-separated source/target corpus")
    p.add_argument("--topic-model", help="output topic model file")
    p.add_argument("--topic-vocab", help="output topic vocabulary file")
    p.add_argument("--num-topics", type=int, default=16)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--beta", type=float, default=0.01)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--top-n", type=int, default=200)
    p.add_argument("--universal-threshold", type=float, default=0.4,
                   help="document-frequency fraction above which a word is universal")
    p.add_argument("--stopwords", help="optional file of extra universal words, one per line")

    p = sub.add_parser("train", help="maximum-likelihood training")
    _add_common(p)
    p.add_argument("--corpus")
    p.add_argument("--valid", help="validation corpus (default: the training corpus)")
    p.add_argument("--topic-model")
    p.add_argument("--topic-vocab")
    p.add_argument("--checkpoint", help="output checkpoint")
    p.add_argument("--vocab", help="vocabulary file to write (default: CHECKPOINT.vocab)")
    p.add_argument("--vocab-size", type=int, default=50_000)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--log", help="append per-epoch log lines to this file")
    _add_model_flags(p)
    _add_optim_flags(p)
    p.add_argument("--lr", type=float, default=0.25)
    p.add_argument("--lr-decay", type=float, default=0.1)
    p.add_argument("--lr-floor", type=float, default=1e-5)
    p.add_argument("--patience", type=int, default=0)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--target-loss", type=float, default=None)

    p = sub.add_parser("rl-finetune", help="self-critical fine-tuning of an ML checkpoint")
    _add_common(p)
    p.add_argument("--corpus")
    p.add_argument("--valid")
    p.add_argument("--topic-model", help="accepted for symmetry with train; unused")
    p.add_argument("--topic-vocab")
    p.add_argument("--checkpoint", help="ML checkpoint to start from")
    p.add_argument("--output", help="output checkpoint (default: CHECKPOINT.rl)")
    p.add_argument("--vocab", help="vocabulary file (default: CHECKPOINT.vocab)")
    p.add_argument("--log")
    _add_optim_flags(p)
    p.add_argument("--lr-rl", type=float, default=1e-4)
    p.add_argument("--lambda-mixed", type=float, default=0.99)
    p.add_argument("--rl-epochs", type=int, default=5)

    p = sub.add_parser("summarize", help="decode summaries for a file of sources")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--input", help="one source per line")
    p.add_argument("--vocab")
    p.add_argument("--topic-vocab")
    p.add_argument("--corpus", help="unused; accepted for flag symmetry")
    p.add_argument("--topic-model", help="unused; accepted for flag symmetry")
    p.add_argument("--decoder", choices=("greedy", "beam", "sample"), default="beam")
    p.add_argument("--beam-size", type=int, default=DEFAULT_BEAM)
    p.add_argument("--max-len", type=int, default=None)

    p = sub.add_parser("evaluate", help="ROUGE-1/2/L of hypotheses against references")
    _add_common(p)
    p.add_argument("--hyp")
    p.add_argument("--ref", action="append", help="reference file; repeat for multiple references")
    p.add_argument("--mode", choices=("f1", "recall"), default="f1")
    p.add_argument("--level", choices=("word", "char-id"), default="word")
    p.add_argument("--no-lowercase", action="store_true")
    return parser


def _read_config_file(path: str) -> dict[str, str]:
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"--config: cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"--config {path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if command in action.choices:
            return action.choices[command]
    raise KeyError(command)


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = _subparser(parser, args.command)
        actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, raw in _read_config_file(args.config).items():
            action = actions.get(key)
            if action is None:
                raise ValidationError(f"--config: unknown option {key!r} for {args.command}")
            if isinstance(action, argparse._AppendAction):
                defaults[key] = [v.strip() for v in raw.split(",") if v.strip()]
            elif isinstance(action, argparse._StoreTrueAction):
                defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            else:
                defaults[key] = action.type(raw) if action.type else raw
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _require(args, *names: str) -> None:
    for name in names:
        value = getattr(args, name.replace("-", "_"))
        if value in (None, [], ""):
            raise ValidationError(f"missing required option --{name}")


def _require_file(args, *names: str) -> None:
    _require(args, *names)
    for name in names:
        values = getattr(args, name.replace("-", "_"))
        for value in values if isinstance(values, list) else [values]:
            if not Path(value).is_file():
                raise ValidationError(f"--{name}: file not found: {value}")


# -- commands ----------------------------------------------------------------------

def cmd_lda_train(args) -> int:
    _require_file(args, "corpus")
    _require(args, "topic-model", "topic-vocab")
    pairs = data.load_corpus(args.corpus)
    docs = [src for src, _ in pairs]
    stop = []
    if args.stopwords:
        stop = Path(args.stopwords).read_text(encoding="utf-8").split()
    universal = lda.universal_words(docs, args.universal_threshold, stop)
    filtered = [[w for w in doc if w not in universal] for doc in docs]
    model = lda.fit_lda(filtered, args.num_topics, args.alpha, args.beta, args.iterations, args.seed)
    tv = lda.topic_vocabulary(model, args.top_n, universal)
    model.save(args.topic_model)
    tv.save(args.topic_vocab)
    sys.stdout.write(tv.top_words_table())
    return EXIT_OK


def _model_config(args, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        d=args.d,
        kernel_width=args.kernel_width,
        word_layers=args.layers,
        topic_layers=args.layers if args.topic_layers is None else args.topic_layers,
        max_source_len=args.max_source_len,
        max_target_len=args.max_target_len,
        init_scale=args.init_scale,
        dropout=args.dropout,
    )


def _open_log(path):
    return open(path, "a", encoding="utf-8") if path else nullcontext()


class _Tee:
    """Mirror log lines to stdout and an optional file."""

    def __init__(self, fh):
        self.fh = fh

    def write(self, text):
        sys.stdout.write(text)
        if self.fh is not None:
            self.fh.write(text)

    def flush(self):
        sys.stdout.flush()
        if self.fh is not None:
            self.fh.flush()


def cmd_train(args) -> int:
    _require_file(args, "corpus", "topic-model", "topic-vocab")
    _require(args, "checkpoint")
    if args.valid:
        _require_file(args, "valid")
    tconf = TrainConfig(
        lr_ml=args.lr, lr_decay=args.lr_decay, lr_floor=args.lr_floor, momentum=args.momentum,
        batch_size=args.batch_size, grad_clip_norm=args.clip, max_epochs=args.max_epochs,
        seed=args.seed, patience=args.patience, target_loss=args.target_loss,
    )
    pairs = data.load_corpus(args.corpus)
    if not pairs:
        raise ValidationError(f"--corpus: no training pairs in {args.corpus}")
    valid = data.load_corpus(args.valid) if args.valid else None
    topic_model = lda.TopicModel.load(args.topic_model)
    tv = lda.TopicVocabulary.load(args.topic_vocab)
    vocab = data.build_vocab(pairs, args.vocab_size, args.min_count)
    vocab_path = args.vocab or args.checkpoint + ".vocab"
    vocab.save(vocab_path)

    config = _model_config(args, len(vocab))
    topic_ids = tv.ids(vocab)
    in_vocab = lda.TopicVocabulary([vocab.itos[i] for i in topic_ids], tv.per_topic_top_words)
    emb = lda.topic_embedding_matrix(topic_model, in_vocab, config.d) if topic_ids else None
    model = TopicConvS2S.create(config, topic_ids, emb, seed=args.seed)
    vhash, thash = vocab.hash(), tv.hash()

    def checkpoint(epoch, mdl):
        save_checkpoint(args.checkpoint, mdl, vhash, thash, vars(tconf))

    with _open_log(args.log) as fh:
        out = _Tee(fh)
        out.write("#" + "\t".join(LOG_COLUMNS) + "\n")
        result = train_ml(model, vocab, pairs, tconf, valid, out, on_epoch=checkpoint)
        save_checkpoint(args.checkpoint, model, vhash, thash, vars(tconf))
        out.write(f"# stop\t{result.stop_reason}\n")
    return EXIT_OK


def _load_for_inference(args):
    vocab_path = args.vocab or args.checkpoint + ".vocab"
    if not Path(vocab_path).is_file():
        raise ValidationError(f"--vocab: file not found: {vocab_path}")
    vocab = data.Vocabulary.load(vocab_path)
    tv = lda.TopicVocabulary.load(args.topic_vocab)
    try:
        ckpt = load_checkpoint(args.checkpoint, vocab.hash(), tv.hash())
    except CheckpointError as exc:
        raise ValidationError(str(exc)) from exc
    return vocab, tv, ckpt


def cmd_rl_finetune(args) -> int:
    _require_file(args, "corpus", "topic-vocab", "checkpoint")
    if args.valid:
        _require_file(args, "valid")
    vocab, tv, ckpt = _load_for_inference(args)
    tconf = TrainConfig(
        lr_rl=args.lr_rl, lambda_mixed=args.lambda_mixed, momentum=args.momentum,
        batch_size=args.batch_size, grad_clip_norm=args.clip, rl_epochs=args.rl_epochs, seed=args.seed,
    )
    pairs = data.load_corpus(args.corpus)
    valid = data.load_corpus(args.valid) if args.valid else None
    output = args.output or args.checkpoint + ".rl"

    def checkpoint(epoch, mdl):
        save_checkpoint(output, mdl, ckpt.vocab_hash, ckpt.topic_vocab_hash, vars(tconf))

    with _open_log(args.log) as fh:
        out = _Tee(fh)
        out.write("#" + "\t".join(LOG_COLUMNS) + "\n")
        finetune_scst(ckpt.model, vocab, pairs, tconf, valid, out, on_epoch=checkpoint)
        save_checkpoint(output, ckpt.model, ckpt.vocab_hash, ckpt.topic_vocab_hash, vars(tconf))
    return EXIT_OK


def cmd_summarize(args) -> int:
    _require_file(args, "checkpoint", "input", "topic-vocab")
    vocab, _, ckpt = _load_for_inference(args)
    model = ckpt.model
    with open(args.input, encoding="utf-8") as fh:
        for line in fh:
            tokens = line.split()[: model.config.max_source_len]
            if not tokens:
                sys.stdout.write("\n")
                continue
            hyp = decode(model, np.array(vocab.encode(tokens)), args.decoder, args.beam_size, args.max_len, args.seed)
            sys.stdout.write(" ".join(vocab.decode(hyp.tokens)) + "\n")
    return EXIT_OK


def _read_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n").rstrip("\r") for line in fh]


def cmd_evaluate(args) -> int:
    _require_file(args, "hyp", "ref")
    hyps = _read_lines(args.hyp)
    refs = [_read_lines(r) for r in args.ref]
    for path, lines in zip(args.ref, refs):
        if len(lines) != len(hyps):
            raise ValidationError(
                f"line count mismatch: --hyp has {len(hyps)} lines, --ref {path} has {len(lines)}"
            )
    scores = rouge.corpus_scores(hyps, refs, args.level, lowercase=not args.no_lowercase)
    sys.stdout.write(rouge.format_table(scores, args.mode))
    return EXIT_OK


COMMANDS = {
    "lda-train": cmd_lda_train,
    "train": cmd_train,
    "rl-finetune": cmd_rl_finetune,
    "summarize": cmd_summarize,
    "evaluate": cmd_evaluate,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s\t%(name)s\t%(message)s")
    logging.captureWarnings(True)
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, data.CorpusFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingDiverged, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        logging.captureWarnings(False)


if __name__ == "__main__":
    sys.exit(main())
