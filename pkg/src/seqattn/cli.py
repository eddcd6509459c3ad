"""Command-line entry point.

    seqattn train --config run.json [--seed N] [--output-dir DIR] [--epochs N]
    seqattn eval --checkpoint last.ckpt --task task.json|'{"kind": ...}' [--n 100] [--beam B]
    seqattn decode --checkpoint last.ckpt --input data.tsv [--beam B | --greedy]
    seqattn gradcheck [--variant dot|bilinear|mlp|mlp-loc|mlp-ma-c] [--order O]
    seqattn export-attention --checkpoint last.ckpt --input data.tsv --format csv|pgm [--output FILE]

Results go to stdout as JSON lines. Failures print one JSON object on stderr
({"error": <kind>, "message": <text>}) and exit nonzero. Set SEQATTN_LOG_LEVEL
(DEBUG, INFO, WARNING, ...) to change log verbosity.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time

from . import checkpoint as ckpt_io
from .attention import VARIANTS
from .tensor import ConfigurationError

VARIANT_ALIASES = {"mlp-loc": "mlp_location", "mlp-ma-c": "mlp_ma_c"}
EXIT_FAILED, EXIT_CONFIG, EXIT_CHECKPOINT, EXIT_DIVERGED, EXIT_DATA = 1, 2, 3, 4, 5


def _emit(record):
    sys.stdout.write(json.dumps(record, sort_keys=True) + "\n")
    sys.stdout.flush()


def _variant(name):
    v = VARIANT_ALIASES.get(name, name.replace("-", "_"))
    if v not in VARIANTS:
        raise argparse.ArgumentTypeError(f"unknown variant {name!r}")
    return v


def _task_arg(value):
    """A task spec given inline as JSON or as a path to a JSON file."""
    from .config import task_from_dict

    text = value
    if not value.lstrip().startswith("{"):
        with open(value, encoding="utf-8") as fh:
            text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"task spec is not valid JSON ({exc})") from exc
    return task_from_dict(data.get("task", data) if "kind" not in data else data)


# --- subcommands -------------------------------------------------------------------

def cmd_train(args):
    from .config import load_config
    from .train import train

    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.epochs is not None:
        changes["epochs"] = args.epochs
    if args.output_dir is not None:
        changes["output_dir"] = args.output_dir
    cfg = dataclasses.replace(cfg, **changes).validate()
    resume = ckpt_io.load(args.resume) if args.resume else None
    result = train(cfg, resume=resume, callback=lambda e, rec, m: _emit(rec) if args.verbose_epochs else None)
    _emit({"checkpoint": result.checkpoint_path, "epochs": result.checkpoint.epoch,
           "final": result.metrics[-1] if result.metrics else {}})


def cmd_eval(args):
    from .train import TEST_SHARD, evaluate, model_from_checkpoint
    from .tasks import generate

    model, cfg = model_from_checkpoint(ckpt_io.load(args.checkpoint))
    task = _task_arg(args.task) if args.task else cfg.task
    examples = generate(task, args.n, shard=args.shard if args.shard is not None else TEST_SHARD)
    metrics = evaluate(model, examples, beam=args.beam, stop_threshold=cfg.stop_threshold)
    _emit(dict(metrics, n=len(examples)))


def cmd_decode(args):
    from .decoding import beam_decode, greedy_decode, tts_infer
    from .metrics import cer, diagnostics
    from .tasks import collate, load_dataset
    from .tensor import no_grad
    from .train import model_from_checkpoint

    model, cfg = model_from_checkpoint(ckpt_io.load(args.checkpoint))
    beam = 1 if args.greedy else args.beam
    for i, ex in enumerate(load_dataset(args.input)):
        if model.config.output_kind == "frames":
            res = tts_infer(model, ex.source, max_frames=args.max_frames, stop_threshold=cfg.stop_threshold)
            rec = {"index": i, "frames": int(len(res.primary)), "stopped": res.stopped,
                   "truncated": res.truncated, "primary": res.primary.tolist()}
        else:
            b = collate([ex], dtype=model.dtype)
            with no_grad():
                hE, mask = model.encode(b.src, b.src_mask)
            dec = greedy_decode(model, hE, mask) if beam == 1 else beam_decode(model, hE, mask, beam=beam)
            rec = {"index": i, "symbols": [int(s) for s in dec.symbols], "truncated": dec.truncated,
                   "log_likelihood": dec.log_likelihood,
                   "coverage": diagnostics(dec.alignments).terminal_coverage}
            if ex.target is not None:
                rec["cer"] = cer(dec.symbols, ex.target)
        _emit(rec)


def cmd_gradcheck(args):
    from .gradcheck import model_grad_check

    variants = [args.variant] if args.variant else list(VARIANTS)
    ok = True
    for v in variants:
        start = time.perf_counter()
        rep = model_grad_check(v, order=args.order, seed=args.seed)
        ok &= rep.passed
        _emit({"variant": v, "order": args.order, "passed": rep.passed, "max_rel_error": rep.max_rel_error,
               "worst": list(rep.worst) if rep.worst else None, "entries": rep.n_checked,
               "seconds": round(time.perf_counter() - start, 3)})
    return 0 if ok else EXIT_FAILED


def cmd_export(args):
    from .export import export_attention

    data = export_attention(args.checkpoint, args.input, args.format, output=args.output,
                            index=args.index, beam=args.beam)
    if args.output is None:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()


# --- plumbing ------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """Usage errors become the same one-line JSON as runtime errors."""

    def error(self, message):
        sys.stderr.write(json.dumps({"error": "UsageError", "message": f"{self.prog}: {message}"}) + "\n")
        sys.exit(EXIT_CONFIG)


def build_parser():
    p = _Parser(prog="seqattn", description="Attention encoder-decoder toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--output-dir")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--verbose-epochs", action="store_true", help="print each epoch's metrics record")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on generated held-out data")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--task", help="task spec as a JSON file or inline JSON (default: the training task)")
    e.add_argument("--n", type=int, default=100)
    e.add_argument("--shard", type=int)
    e.add_argument("--beam", type=int, default=1)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("decode", help="decode every record of a dataset file")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--input", required=True)
    d.add_argument("--beam", type=int, default=5)
    d.add_argument("--greedy", action="store_true")
    d.add_argument("--max-frames", type=int, default=400)
    d.set_defaults(func=cmd_decode)

    g = sub.add_parser("gradcheck", help="finite-difference check of a tiny model")
    g.add_argument("--variant", type=_variant)
    g.add_argument("--order", type=int, default=3)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    x = sub.add_parser("export-attention", help="write one record's alignment matrix as CSV or PGM")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--input", required=True)
    x.add_argument("--format", choices=("csv", "pgm"), default="csv")
    x.add_argument("--output")
    x.add_argument("--index", type=int, default=0)
    x.add_argument("--beam", type=int, default=1)
    x.set_defaults(func=cmd_export)
    return p


def _error_code(exc):
    from .optim import NonFiniteGradientError
    from .train import TrainingDiverged

    if isinstance(exc, ckpt_io.CheckpointFormatError):
        return EXIT_CHECKPOINT
    if isinstance(exc, ConfigurationError):
        return EXIT_CONFIG
    if isinstance(exc, (TrainingDiverged, NonFiniteGradientError)):
        return EXIT_DIVERGED
    if isinstance(exc, (OSError, ValueError, KeyError, IndexError)):
        return EXIT_DATA
    return EXIT_FAILED


def main(argv=None):
    level = os.environ.get("SEQATTN_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        code = args.func(args)
    except Exception as exc:  # noqa: BLE001 -- every failure becomes one machine-readable line
        logging.getLogger("seqattn").debug("command failed", exc_info=True)
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": msg}) + "\n")
        return _error_code(exc)
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
