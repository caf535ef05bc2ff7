"""``tlaser`` command line.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numeric failure (including a failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as run_config
from .autograd import NumericError
from .bpe import Vocabulary, learn_bpe
from .data import DataError, load_parallel, load_split
from .evaluation import (DocumentDataset, asdict_report, embed_documents, paired_distance_report,
                         pca_project, read_embeddings, write_embeddings, write_projection,
                         zero_shot_matrix)
from .gradcheck import TOY_LOSS, TOY_MODEL, run_suite
from .synth import generate
from .train import load_checkpoint, train

log = logging.getLogger("tlaser")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _split_languages(corpus_dir: Path, split: str) -> list[str]:
    return sorted(p.name[len(split) + 1:-4] for p in corpus_dir.glob(f"{split}.*.txt")
                  if p.name != f"{split}.labels.txt")


def cmd_gen_corpus(args) -> int:
    cfg = run_config.load(args.config)
    cfg.require("synth")
    corpus = generate(cfg.synth(), args.out)
    sizes = {k: len(v) for k, v in corpus.splits.items()}
    log.info("wrote %s languages to %s: %s", len(corpus.spec.languages), args.out, sizes)
    return EXIT_OK


def cmd_learn_bpe(args) -> int:
    corpus = load_split(args.corpus, "train")
    lines = [s for lang in corpus.languages for s in corpus.sentences[lang]]
    vocab = learn_bpe(lines, args.vocab_size).with_languages(corpus.languages)
    vocab.save(args.out)
    log.info("vocabulary of %d tokens (%d merges) -> %s", len(vocab), len(vocab.merges), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = run_config.load(args.config)
    cfg.require("train")
    tcfg = cfg.train()
    if args.bilingual:
        tcfg.bilingual = True
    corpus = load_split(args.corpus, "train", cfg.data().languages)
    vocab = Vocabulary.load(args.vocab)
    result = train(tcfg, corpus, vocab, args.out, resume=args.resume)
    log.info("trained %d steps; checkpoint %s", len(result.records), result.checkpoint)
    return EXIT_OK


def cmd_embed(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    docs = load_parallel({args.lang or "doc": args.input}).sentences[args.lang or "doc"]
    emb = embed_documents(ck.model, ck.vocab, docs, args.max_doc_tokens, lang=args.lang)
    write_embeddings(emb, args.out)
    log.info("embedded %d documents -> %s", len(emb), args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    hyper, max_doc_tokens = None, args.max_doc_tokens
    if args.config:
        cfg = run_config.load(args.config)
        if cfg.has("eval"):
            hyper = cfg.classifier()
            max_doc_tokens = max_doc_tokens or cfg.max_doc_tokens
    max_doc_tokens = max_doc_tokens or 750
    ck = load_checkpoint(args.checkpoint)
    dataset_dir = Path(args.dataset)
    langs = _split_languages(dataset_dir, "test")
    splits = {s: load_split(dataset_dir, s, langs) for s in ("train", "dev", "test")}
    matrix = zero_shot_matrix(ck.model, ck.vocab, DocumentDataset(splits), hyper, max_doc_tokens)
    distances = paired_distance_report(ck.model, ck.vocab, splits["test"], max_doc_tokens=max_doc_tokens)
    report = Path(args.report)
    report.write_text(json.dumps(asdict_report(matrix, distances), indent=2, sort_keys=True) + "\n")
    report.with_suffix(".tsv").write_text(matrix.to_tsv())
    log.info("cross=%.4f same=%.4f all=%.4f -> %s", matrix.cross, matrix.same, matrix.all, report)
    return EXIT_OK


def cmd_plot(args) -> int:
    a, b = read_embeddings(args.emb_a), read_embeddings(args.emb_b)
    proj = pca_project(a, b)
    tsv = write_projection(proj, len(a), args.out, (a.lang or "a", b.lang or "b"))
    log.info("wrote %s and %s", args.out, tsv)
    return EXIT_OK


def cmd_grad_check(args) -> int:
    cfg = run_config.load(args.config)
    gc = cfg.grad_check()
    model = cfg.model() if cfg.has("model") else TOY_MODEL
    loss = cfg.loss() if cfg.has("loss") else TOY_LOSS
    if loss.n_neg > gc.n_pairs - 1:
        raise run_config.ConfigError(
            f"loss.n_neg={loss.n_neg} needs grad_check.n_pairs >= {loss.n_neg + 1}")
    result = run_suite(model, loss, gc.n_pairs, gc.seed, gc.step, gc.rel_tol)
    print(result.summary())
    return EXIT_OK if result.passed else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tlaser", description="Sentence embeddings from a translation encoder, "
                "with an optional distance constraint.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("gen-corpus", help="write a synthetic parallel corpus")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_corpus)

    s = sub.add_parser("learn-bpe", help="learn a joint BPE vocabulary from train.*.txt")
    s.add_argument("--corpus", required=True)
    s.add_argument("--vocab-size", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_learn_bpe)

    s = sub.add_parser("train", help="train (beta = lambda = 0 gives the unconstrained model)")
    s.add_argument("--config", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--vocab", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--bilingual", action="store_true", help="two languages, a->b and b->a only")
    s.add_argument("--resume", help="continue from this checkpoint")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("embed", help="embed one document per line")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--max-doc-tokens", type=int, default=750)
    s.add_argument("--lang", help="language tag stored in the file footer")
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("eval", help="zero-shot classification matrix and paired distances")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--config", help="classifier settings from the eval section")
    s.add_argument("--max-doc-tokens", type=int)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("plot", help="2-d PCA of two aligned embedding files")
    s.add_argument("--emb-a", required=True)
    s.add_argument("--emb-b", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("grad-check", help="finite-difference check of the objective")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_grad_check)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (ValueError, OSError, KeyError) as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
