"""Inference: greedy and beam search for symbol outputs, ending-probability stop for frame outputs."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .model import BOS, EOS
from .tensor import ConfigurationError, no_grad


@dataclass
class Hypothesis:
    symbols: list
    log_likelihood: float
    alive: bool = True
    alignments: list = field(default_factory=list)

    @property
    def length(self):
        """Emitted symbols, counting the final eos."""
        return len(self.symbols) + (0 if self.alive else 1)

    @property
    def normalized_score(self):
        return self.log_likelihood / max(self.length, 1)


@dataclass
class DecodeResult:
    symbols: list
    alignments: np.ndarray  # [steps, valid encoder length]
    truncated: bool
    log_likelihood: float
    finished: list = field(default_factory=list)

    @property
    def normalized_score(self):
        steps = len(self.alignments)
        return self.log_likelihood / max(steps, 1)


def default_max_len(mask):
    return 3 * int(np.asarray(mask).sum())


def _prepare(model, hE, mask):
    hE = T.as_tensor(hE)
    if hE.ndim == 2:
        hE = T.Tensor(hE.data[None])
    mask = np.ones(hE.shape[:2], dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(hE.shape[:2])
    if hE.shape[0] != 1:
        raise ValueError("decoding works on one utterance at a time")
    return hE, mask


def greedy_decode(model, hE, mask=None, max_len=None):
    """Argmax decoding until eos, keeping the alignment of every step."""
    hE, mask = _prepare(model, hE, mask)
    max_len = default_max_len(mask) if max_len is None else max_len
    if max_len < 1:
        raise ConfigurationError(f"max_len must be >= 1, got {max_len}")
    n_valid = int(mask.sum())
    with no_grad():
        cache = model.precompute(hE)
        state = model.initial_state(1)
        hist = model.initial_history(hE)
        prev = np.array([BOS])
        out, rows, ll = [], [], 0.0
        truncated = True
        for _ in range(max_len):
            step = model.decoder_step(prev, state, hist, hE, cache, mask)
            state, hist = step.state, step.hist
            rows.append(step.align.data[0, :n_valid].copy())
            logp = T.log_softmax(model.logits(step.head_in)).data[0]
            y = int(np.argmax(logp))
            ll += float(logp[y])
            if y == EOS:
                truncated = False
                break
            out.append(y)
            prev = np.array([y])
    return DecodeResult(out, np.asarray(rows), truncated, ll)


def beam_decode(model, hE, mask=None, beam=5, max_len=None):
    """Beam search; finished hypotheses are ranked by log-likelihood / length.

    In-beam pruning uses the raw log-likelihood. Each surviving row of the
    batched state is its own hypothesis; reordering copies state and history.
    """
    if beam < 1:
        raise ConfigurationError(f"beam must be >= 1, got {beam}")
    hE, mask = _prepare(model, hE, mask)
    max_len = default_max_len(mask) if max_len is None else max_len
    if max_len < 1:
        raise ConfigurationError(f"max_len must be >= 1, got {max_len}")
    n_valid = int(mask.sum())
    with no_grad():
        cache = model.precompute(hE)
        state = model.initial_state(1)
        hist = model.initial_history(hE)
        hyps = [Hypothesis([], 0.0)]
        finished = []
        for _ in range(max_len):
            k = len(hyps)
            rows = np.zeros(k, dtype=np.int64)
            hE_k = T.Tensor(hE.data[rows])
            cache_k = None if cache is None else T.Tensor(cache.data[rows])
            mask_k = mask[rows]
            prev = np.array([h.symbols[-1] if h.symbols else BOS for h in hyps])
            step = model.decoder_step(prev, state, hist, hE_k, cache_k, mask_k)
            logp = T.log_softmax(model.logits(step.head_in)).data
            V = logp.shape[1]
            base = np.array([h.log_likelihood for h in hyps])
            cand = (base[:, None] + logp).reshape(-1)
            flat = np.arange(k * V)
            # best total first, then best step log-prob, then lowest (hypothesis, symbol) index
            order = np.lexsort((flat, -logp.reshape(-1), -cand))[:beam]
            keep_rows, survivors = [], []
            for j in order:
                src, y = divmod(int(j), V)
                parent = hyps[src]
                align = step.align.data[src, :n_valid].copy()
                h = Hypothesis(parent.symbols + ([] if y == EOS else [y]), float(cand[j]), y != EOS,
                               parent.alignments + [align])
                if y == EOS:
                    finished.append(h)
                else:
                    survivors.append(h)
                    keep_rows.append(src)
            if not survivors:
                break
            idx = np.asarray(keep_rows)
            state = type(step.state)(tuple(T.Tensor(x.data[idx]) for x in step.state.h),
                                     tuple(T.Tensor(x.data[idx]) for x in step.state.c))
            hist = step.hist.select(idx)
            hyps = survivors
        truncated = not finished
        pool = finished if finished else hyps
        best = max(pool, key=lambda h: h.normalized_score)  # first of equals wins
    return DecodeResult(best.symbols, np.asarray(best.alignments), truncated, best.log_likelihood,
                        sorted(finished, key=lambda h: -h.normalized_score))


@dataclass
class TTSResult:
    primary: np.ndarray
    secondary: np.ndarray
    ending: np.ndarray
    alignments: np.ndarray
    stopped: bool
    truncated: bool


def tts_infer(model, src, max_frames=400, stop_threshold=0.5, src_mask=None):
    """Generate frame groups until some ending probability in a group exceeds ``stop_threshold``."""
    if not 0.0 < stop_threshold < 1.0 + 1e-12:
        raise ConfigurationError(f"stop_threshold must be in (0, 1), got {stop_threshold}")
    c = model.config
    src = np.asarray(src)
    if src.ndim == 1:
        src = src[None]
    with no_grad():
        hE, mask = model.encode(src, src_mask)
        n_valid = int(mask[0].sum())
        cache = model.precompute(hE)
        state = model.initial_state(1)
        hist = model.initial_history(hE)
        prev = np.zeros((1, c.primary_dim), dtype=model.dtype)
        prims, secs, ends, rows = [], [], [], []
        stopped = False
        n = 0
        while n < max_frames:
            out, (pm, ps, pe) = model.tts_decoder_step(prev, state, hist, hE, cache, mask)
            state, hist = out.state, out.hist
            prims.append(pm.data[0])
            secs.append(ps.data[0])
            ends.append(pe.data[0])
            rows.append(out.align.data[0, :n_valid].copy())
            n += c.frames_per_step
            if np.any(pe.data[0] > stop_threshold):
                stopped = True
                break
            prev = pm.data[:, -1]
    return TTSResult(np.concatenate(prims), np.concatenate(secs), np.concatenate(ends), np.asarray(rows),
                     stopped, not stopped)
