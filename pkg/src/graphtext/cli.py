"""Command-line entry points.

    graphtext synth    --out DIR
    graphtext pretrain --corpus DIR --out CKPT
    graphtext zeroshot --checkpoint CKPT --corpus DIR [--template "a document about [CLASS]"]
    graphtext fewshot  --checkpoint CKPT --corpus DIR --shots K [--init context|random|label-only]

Exit status: 0 success, 1 invalid input or configuration, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import torch

from .checkpoint import CheckpointError, corpus_fingerprint, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .contrastive import parse_loss_terms
from .corpus import CorpusError, load_corpus
from .evaluation import FEWSHOT_INITS, few_shot_report, zero_shot_report
from .numeric import NumericError
from .pretrain import pretrain
from .prompt import PLACEHOLDER, PromptError
from .tasks import TaskError, generate_synthetic_corpus

log = logging.getLogger("graphtext")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


def _override(target, **values) -> None:
    for key, value in values.items():
        if value is not None:
            setattr(target, key, value)


def _emit_report(report, records_path) -> None:
    print(report.to_table())
    if records_path:
        Path(records_path).write_text("\n".join(report.to_records()) + "\n")


def cmd_synth(args, cfg: RunConfig) -> int:
    _override(cfg.synth, classes=args.classes, docs_per_class=args.docs_per_class, p_in=args.p_in,
              p_out=args.p_out, noise=args.noise)
    try:
        cfg.synth.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    raw = generate_synthetic_corpus(cfg.synth, seed=args.seed if args.seed is not None else 0)
    raw.save(args.out)
    print(f"wrote {len(raw.texts)} documents, {len(raw.edges)} edges to {args.out}")
    return EXIT_OK


def _load_training_corpus(args, cfg: RunConfig):
    c = cfg.corpus
    return load_corpus(args.corpus, max_len=c.max_len, min_freq=c.min_freq, embedding_dim=c.embedding_dim,
                       seed=c.seed)


def cmd_pretrain(args, cfg: RunConfig) -> int:
    _override(cfg.pretrain, epochs=args.epochs, batch_size=args.batch_size, eta=args.eta, lam=args.lam,
              lr=args.lr, seed=args.seed)
    if args.loss_mask is not None:
        cfg.pretrain.loss_terms = parse_loss_terms(args.loss_mask)
    cfg.validate()
    corpus = _load_training_corpus(args, cfg)
    model, trainlog = pretrain(corpus, cfg.text_config(len(corpus.vocab)), cfg.graph_config(corpus.feature_dim),
                               cfg.pretrain)
    save_checkpoint(args.out, model, corpus.vocab, corpus.word_vectors, metadata={
        "seed": cfg.pretrain.seed, "corpus_fingerprint": corpus_fingerprint(corpus),
        "loss_terms": list(cfg.pretrain.loss_terms), "lambda": cfg.pretrain.lam,
    })
    log_path = args.log or f"{args.out}.log"
    trainlog.write(log_path)
    last = trainlog.epoch_means()[max(trainlog.epoch_means())]
    print(f"checkpoint {args.out}; log {log_path}; final epoch mean loss {last['total']:.4f}")
    return EXIT_OK


def _load_eval_inputs(args):
    ckpt = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus, max_len=ckpt.model.text.config.max_len, vocab=ckpt.vocab,
                         word_vectors=ckpt.word_vectors)
    if ckpt.word_vectors is None and corpus.feature_dim != ckpt.model.graph.config.input_dim:
        raise CheckpointError("corpus feature dimension does not match the checkpoint's graph encoder")
    return ckpt, corpus


def cmd_zeroshot(args, cfg: RunConfig) -> int:
    template = args.template if args.template is not None else cfg.tasks.template
    if template.strip() and PLACEHOLDER not in template:
        raise PromptError(f"template must contain {PLACEHOLDER}: {template!r}")
    ckpt, corpus = _load_eval_inputs(args)
    report = zero_shot_report(ckpt.model, corpus, tasks=args.tasks or cfg.tasks.tasks,
                              ways=args.ways or cfg.tasks.ways,
                              seed=args.seed if args.seed is not None else cfg.tasks.seed,
                              template=template, query_cap=cfg.tasks.query_cap)
    _emit_report(report, args.records)
    return EXIT_OK


def cmd_fewshot(args, cfg: RunConfig) -> int:
    shots = args.shots if args.shots is not None else cfg.tasks.shots
    if shots < 1:
        raise TaskError("few-shot needs --shots >= 1; use the zeroshot command for K = 0")
    _override(cfg.prompt, prompt_len=args.prompt_len, eta=args.eta)
    cfg.validate()
    ckpt, corpus = _load_eval_inputs(args)
    report = few_shot_report(ckpt.model, corpus, shots=shots, tasks=args.tasks or cfg.tasks.tasks,
                             ways=args.ways or cfg.tasks.ways,
                             seed=args.seed if args.seed is not None else cfg.tasks.seed,
                             init=args.init or cfg.tasks.init, prompt_config=cfg.prompt,
                             query_cap=cfg.tasks.query_cap)
    _emit_report(report, args.records)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="graphtext", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--seed", type=int)
        return p

    p = common(sub.add_parser("synth", help="write a synthetic corpus"))
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int)
    p.add_argument("--docs-per-class", type=int)
    p.add_argument("--p-in", type=float)
    p.add_argument("--p-out", type=float)
    p.add_argument("--noise", type=float)
    p.set_defaults(func=cmd_synth)

    p = common(sub.add_parser("pretrain", help="contrastive pre-training"))
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training log path (default: <out>.log)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--eta", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--loss-mask", help="subset of L1,L2,L3, e.g. 'L1' or 'L2,L3'")
    p.set_defaults(func=cmd_pretrain)

    for name, func in (("zeroshot", cmd_zeroshot), ("fewshot", cmd_fewshot)):
        p = common(sub.add_parser(name, help=f"{name} evaluation over sampled tasks"))
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--corpus", required=True)
        p.add_argument("--tasks", type=int)
        p.add_argument("--ways", type=int)
        p.add_argument("--records", help="write line-delimited JSON records here")
        p.set_defaults(func=func)
        if name == "zeroshot":
            p.add_argument("--template", help=f"discrete prompt containing {PLACEHOLDER}; empty = label text only")
        else:
            p.add_argument("--shots", type=int)
            p.add_argument("--init", choices=FEWSHOT_INITS)
            p.add_argument("--prompt-len", type=int)
            p.add_argument("--eta", type=int)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CorpusError, CheckpointError, PromptError, TaskError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
