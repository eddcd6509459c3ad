"""Training loop, evaluation and checkpoint <-> model conversion."""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt_io
from .config import TrainConfig, config_from_dict
from .decoding import beam_decode, greedy_decode, tts_infer
from .metrics import diagnostics, edit_distance, l2_metric, token_accuracy
from .model import Seq2Seq
from .optim import Adam
from .tasks import collate, generate, minibatches
from .tensor import no_grad

log = logging.getLogger(__name__)

TRAIN_SHARD, DEV_SHARD, TEST_SHARD = 0, 1, 2


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainResult:
    checkpoint: ckpt_io.Checkpoint
    metrics: list = field(default_factory=list)
    model: Seq2Seq | None = None
    checkpoint_path: str | None = None


def build_model(config: TrainConfig):
    return Seq2Seq(config.resolved_model(), rng=np.random.default_rng([config.seed, 1]))


def model_from_checkpoint(ckpt):
    config = config_from_dict(ckpt.config)
    model = build_model(config)
    model.load_arrays(ckpt.params)
    return model, config


def make_checkpoint(config, model, optim, epoch, rng):
    moments = {}
    if optim is not None:
        for k in optim.m:
            moments[f"m/{k}"] = optim.m[k]
            moments[f"v/{k}"] = optim.v[k]
    return ckpt_io.Checkpoint(
        config=config.to_dict(),
        params={k: p.data for k, p in model.params.items()},
        moments=moments,
        epoch=epoch,
        step=0 if optim is None else optim.t,
        rng_state=rng.bit_generator.state,
    )


def evaluate(model, examples, beam=1, stop_threshold=0.5):
    """Dev/test metrics: CER and token accuracy for symbol outputs, L2 and stop rate for frames."""
    if not examples:
        return {}
    if model.config.output_kind == "symbols":
        hyps, refs, cov, length_ok = [], [], [], []
        edits = ref_len = 0
        for ex in examples:
            b = collate([ex], dtype=model.dtype)
            with no_grad():
                hE, mask = model.encode(b.src, b.src_mask)
            dec = greedy_decode(model, hE, mask) if beam == 1 else beam_decode(model, hE, mask, beam=beam)
            hyps.append(dec.symbols)
            refs.append(list(ex.target))
            edits += edit_distance(dec.symbols, ex.target)
            ref_len += len(ex.target)
            cov.append(diagnostics(dec.alignments).terminal_coverage)
            length_ok.append(abs(len(dec.symbols) - len(ex.target)) <= 0.1 * len(ex.target))
        return {
            "cer": 100.0 * edits / ref_len,
            "token_accuracy": token_accuracy(hyps, refs),
            "mean_coverage": float(np.mean(cov)),
            "length_within_10pct": float(np.mean(length_ok)),
        }
    l2s, stopped = [], []
    r = model.config.frames_per_step
    for ex in examples:
        res = tts_infer(model, ex.source, max_frames=2 * len(ex.primary) + 4 * r, stop_threshold=stop_threshold)
        l2s.append(l2_metric(res.primary, ex.primary))
        stopped.append(res.stopped)
    return {"l2": float(np.mean(l2s)), "stop_rate": float(np.mean(stopped))}


def _append_metrics(path, record):
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def train(config: TrainConfig, resume: ckpt_io.Checkpoint | None = None, output_dir=None, callback=None):
    """Minibatch training with Adam; one metrics record and one checkpoint per epoch."""
    config.validate()
    out = output_dir or config.output_dir
    os.makedirs(out, exist_ok=True)
    metrics_path = os.path.join(out, "metrics.jsonl")
    last_path = os.path.join(out, "last.ckpt")

    model = build_model(config)
    optim = Adam(model.params, config.lr, config.beta1, config.beta2, config.eps, config.clip_norm)
    rng = np.random.default_rng([config.seed, 2])
    start_epoch = 0
    if resume is not None:
        model.load_arrays(resume.params)
        for k in optim.m:
            optim.m[k] = resume.moments[f"m/{k}"].astype(model.dtype)
            optim.v[k] = resume.moments[f"v/{k}"].astype(model.dtype)
        optim.t = resume.step
        rng.bit_generator.state = resume.rng_state
        start_epoch = resume.epoch
    else:
        open(metrics_path, "w").close()
        with open(os.path.join(out, "config.json"), "w", encoding="utf-8") as fh:
            json.dump(config.to_dict(), fh, indent=2, sort_keys=True)

    train_set = generate(config.task, config.train_size, shard=TRAIN_SHARD)
    dev_set = generate(config.task, config.dev_size, shard=DEV_SHARD) if config.dev_size else []
    r = model.config.frames_per_step

    ckpt = make_checkpoint(config, model, optim, start_epoch, rng)
    if resume is None:
        ckpt_io.save(last_path, ckpt)
    records = []
    for epoch in range(start_epoch + 1, config.epochs + 1):
        order = rng.permutation(len(train_set))
        losses = []
        for examples in minibatches(train_set, config.batch_size, order):
            batch = collate(examples, frames_per_step=r, dtype=model.dtype)
            optim.zero_grad()
            loss = model.loss(batch)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss in epoch {epoch}; last good checkpoint kept at {last_path}")
            loss.backward()
            optim.step()
            losses.append(value)
        record = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        record.update({f"dev_{k}": v for k, v in evaluate(model, dev_set, config.dev_beam, config.stop_threshold).items()})
        _append_metrics(metrics_path, record)
        records.append(record)
        log.info("epoch %d %s", epoch, record)
        ckpt = make_checkpoint(config, model, optim, epoch, rng)
        ckpt_io.save(last_path, ckpt)
        if config.keep_all_checkpoints:
            ckpt_io.save(os.path.join(out, f"epoch_{epoch:03d}.ckpt"), ckpt)
        if callback is not None:
            callback(epoch, record, model)
    return TrainResult(ckpt, records, model, last_path)
