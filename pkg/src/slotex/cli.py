"""Command line interface.

Subcommands: gen-data, train, eval, explain. Exit codes: 0 success,
1 usage error, 2 data error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import sys

from .errors import (CapacityError, ConfigError, ContractError, DimensionError,
                     DomainError, NumericError, ParseError, SchemaError)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_DATA_ERRORS = (ParseError, SchemaError, ConfigError, CapacityError,
                ContractError, DimensionError, FileNotFoundError, NotADirectoryError)
_NUMERIC_ERRORS = (NumericError, DomainError)

_VARIANTS = {"softmax": "softmax", "ot": "optimal_transport",
             "optimal_transport": "optimal_transport"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=None,
                        help="override the seed from the manifest/config")
    parser.add_argument("--variant", choices=sorted(_VARIANTS), default=None,
                        help="attention variant override")
    parser.add_argument("--quiet", action="store_true")


def build_parser():
    parser = _Parser(prog="slotex",
                     description="Slot-attention relational triple extraction")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[], help="generate a synthetic corpus")
    p.add_argument("--manifest", required=True, help="manifest JSON file")
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="training config JSON file")
    p.add_argument("--data", required=True, help="corpus directory (from gen-data)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--stop-at-f1", type=float, default=None,
                   help="end early once validation exact F1 reaches this value")
    p.add_argument("--slot-layernorm", action="store_true",
                   help="normalize slot state inside each refinement iteration")
    _add_common(p)

    p = sub.add_parser("eval", help="score a checkpoint on a corpus split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["exact", "partial"], default="exact")
    p.add_argument("--split", choices=["train", "valid", "test"], default="test")
    p.add_argument("--breakdown", action="store_true",
                   help="also report per-pattern and per-count slices")
    _add_common(p)

    p = sub.add_parser("explain", help="export attention explanations")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=["train", "valid", "test"], default="test")
    p.add_argument("--iteration", type=int, default=None,
                   help="refinement iteration to export (default: final)")
    p.add_argument("--limit", type=int, default=25,
                   help="number of sentences to export")
    _add_common(p)
    return parser


def _cmd_gen_data(args):
    from .data import CorpusManifest, generate_synthetic, save_corpus

    manifest = CorpusManifest.from_json(args.manifest)
    if args.seed is not None:
        manifest.seed = args.seed
    splits = generate_synthetic(manifest)
    out = save_corpus(splits, manifest, args.out)
    if not args.quiet:
        sizes = ", ".join(str(len(s)) for s in splits)
        print(f"wrote corpus ({sizes}) to {out}")
    return EXIT_OK


def _cmd_train(args):
    from .data import load_corpus
    from .training import TrainConfig, train

    config = TrainConfig.from_json(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.variant is not None:
        config.variant = _VARIANTS[args.variant]
    manifest, (train_set, valid_set, _test) = load_corpus(args.data)
    overrides = {"head_word": manifest.head_word}
    if args.slot_layernorm:
        overrides["slot_layernorm"] = True
    model, record = train(train_set, valid_set, manifest.relations, config,
                          out_dir=args.out, quiet=args.quiet,
                          stop_at_f1=args.stop_at_f1, model_overrides=overrides)
    if not args.quiet:
        print(f"best validation exact F1 {record.best_val_f1_exact:.4f} "
              f"at epoch {record.best_epoch}; checkpoint in {args.out}")
    return EXIT_OK


def _load_model(args):
    from .model import TripleExtractor

    model = TripleExtractor.load(args.checkpoint)
    if args.variant is not None:
        model.config.variant = _VARIANTS[args.variant]
    return model


def _cmd_eval(args):
    from .data import load_corpus
    from .evaluation import evaluate_model, format_report

    model = _load_model(args)
    _manifest, splits = load_corpus(args.data)
    examples = dict(zip(("train", "valid", "test"), splits))[args.split]
    report = evaluate_model(model, examples)
    stats = report.overall[args.mode]
    if args.quiet:
        print(f"{stats.f1:.4f}")
    else:
        print(format_report(report, breakdown=args.breakdown))
    return EXIT_OK


def _cmd_explain(args):
    from .data import load_corpus
    from .explain import export_explanations

    model = _load_model(args)
    _manifest, splits = load_corpus(args.data)
    examples = dict(zip(("train", "valid", "test"), splits))[args.split]
    if args.limit is not None:
        examples = examples[:args.limit]
    written = export_explanations(model, examples, args.out,
                                  iteration=args.iteration, quiet=args.quiet)
    if not args.quiet:
        print(f"wrote {len(written)} files to {args.out}")
    return EXIT_OK


_COMMANDS = {"gen-data": _cmd_gen_data, "train": _cmd_train,
             "eval": _cmd_eval, "explain": _cmd_explain}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _NUMERIC_ERRORS as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
