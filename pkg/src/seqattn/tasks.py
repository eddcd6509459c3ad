"""Synthetic transduction tasks, their text serialisation, and minibatch collation.

Record format (one example per line, tab-separated fields)::

    copy|reverse          <kind> TAB <source ids> TAB <target ids>
    frames-to-symbols     <kind> TAB <source frames> TAB <target ids>
    symbols-to-frames     <kind> TAB <source ids> TAB <primary frames> TAB <secondary frames> TAB <ending bits>

Ids and vector entries are space-separated; frames inside a matrix field are
separated by ``;``. Target fields may be omitted for decoding inputs.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .model import BOS, EOS, N_SPECIAL, PAD, Batch
from .tensor import ConfigurationError

KINDS = ("copy", "reverse", "frames-to-symbols", "symbols-to-frames")


@dataclass(frozen=True)
class SyntheticTaskSpec:
    kind: str = "copy"
    vocab: int = 8  # content symbols, excluding PAD/BOS/EOS
    min_len: int = 5
    max_len: int = 15
    rate: int = 4  # frames per symbol
    noise: float = 0.0
    seed: int = 0
    primary_dim: int = 8
    secondary_dim: int = 8
    ending_tail: int = 1  # trailing frames marked as "ended"

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown task kind {self.kind!r}; expected one of {KINDS}")
        if self.vocab < 3:
            raise ConfigurationError(f"vocabulary must hold at least 3 symbols, got {self.vocab}")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigurationError(f"need 1 <= min_len <= max_len, got [{self.min_len}, {self.max_len}]")
        if self.rate < 1:
            raise ConfigurationError(f"rate must be >= 1, got {self.rate}")
        if self.noise < 0:
            raise ConfigurationError(f"noise must be >= 0, got {self.noise}")
        if self.ending_tail < 1:
            raise ConfigurationError(f"ending_tail must be >= 1, got {self.ending_tail}")
        return self

    @property
    def model_vocab(self):
        return self.vocab + N_SPECIAL

    @property
    def input_dim(self):
        return self.vocab

    def to_dict(self):
        return asdict(self)


@dataclass
class Example:
    kind: str
    source: np.ndarray
    target: np.ndarray | None = None
    primary: np.ndarray | None = None
    secondary: np.ndarray | None = None
    ending: np.ndarray | None = None


def _prototypes(spec):
    """Per-symbol frame targets and the fixed secondary-stream map (depend on the seed only)."""
    rng = np.random.default_rng([spec.seed, 7919])
    protos = rng.normal(0.0, 1.0, size=(spec.vocab, spec.primary_dim))
    mix = rng.normal(0.0, 1.0 / np.sqrt(spec.primary_dim), size=(spec.secondary_dim, spec.primary_dim))
    return protos, mix


def symbol_frames(spec, symbols, rng=None):
    """Primary/secondary frame ramps and ending bits for a content-id sequence."""
    protos, mix = _prototypes(spec)
    prev = np.zeros(spec.primary_dim)
    frames = []
    for s in symbols:
        cur = protos[s - N_SPECIAL]
        for j in range(spec.rate):
            frames.append(prev + (j + 1) / spec.rate * (cur - prev))
        prev = cur
    primary = np.asarray(frames)
    if rng is not None and spec.noise > 0:
        primary = primary + rng.normal(0.0, spec.noise, size=primary.shape)
    secondary = np.tanh(primary @ mix.T)
    ending = np.zeros(len(primary))
    ending[-min(spec.ending_tail, len(primary)):] = 1.0
    return primary, secondary, ending


def generate(spec, n, shard=0):
    """``n`` examples, a pure function of (spec, n, shard)."""
    spec.validate()
    rng = np.random.default_rng([spec.seed, shard])
    out = []
    for _ in range(n):
        L = int(rng.integers(spec.min_len, spec.max_len + 1))
        sym = rng.integers(0, spec.vocab, size=L) + N_SPECIAL
        if spec.kind == "copy":
            out.append(Example(spec.kind, sym, sym.copy()))
        elif spec.kind == "reverse":
            out.append(Example(spec.kind, sym, sym[::-1].copy()))
        elif spec.kind == "frames-to-symbols":
            onehot = np.eye(spec.vocab)[np.repeat(sym - N_SPECIAL, spec.rate)]
            frames = onehot + rng.normal(0.0, spec.noise, size=onehot.shape) if spec.noise > 0 else onehot
            out.append(Example(spec.kind, frames, sym))
        else:
            prim, sec, end = symbol_frames(spec, sym, rng)
            out.append(Example(spec.kind, sym, None, prim, sec, end))
    return out


# --- serialisation ------------------------------------------------------------------

def _fmt_ids(a):
    return " ".join(str(int(v)) for v in a)


def _fmt_frames(m):
    return ";".join(" ".join(repr(float(v)) for v in row) for row in np.atleast_2d(m))


def _parse_ids(s):
    return np.array([int(v) for v in s.split()], dtype=np.int64)


def _parse_frames(s):
    return np.array([[float(v) for v in row.split()] for row in s.split(";")], dtype=np.float64)


def format_example(ex):
    fields = [ex.kind]
    if ex.kind == "frames-to-symbols":
        fields.append(_fmt_frames(ex.source))
    else:
        fields.append(_fmt_ids(ex.source))
    if ex.kind == "symbols-to-frames":
        if ex.primary is not None:
            fields += [_fmt_frames(ex.primary), _fmt_frames(ex.secondary), _fmt_ids(ex.ending)]
    elif ex.target is not None:
        fields.append(_fmt_ids(ex.target))
    return "\t".join(fields)


def parse_example(line):
    fields = line.rstrip("\n").split("\t")
    kind = fields[0]
    if kind not in KINDS:
        raise ValueError(f"unknown record kind {kind!r}")
    if len(fields) < 2:
        raise ValueError("record has no source field")
    src = _parse_frames(fields[1]) if kind == "frames-to-symbols" else _parse_ids(fields[1])
    ex = Example(kind, src)
    if kind == "symbols-to-frames":
        if len(fields) >= 5:
            ex.primary = _parse_frames(fields[2])
            ex.secondary = _parse_frames(fields[3])
            ex.ending = _parse_ids(fields[4]).astype(np.float64)
    elif len(fields) >= 3:
        ex.target = _parse_ids(fields[2])
    return ex


def save_dataset(path, examples):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(format_example(ex) + "\n")


def load_dataset(path):
    with open(path, encoding="utf-8") as fh:
        return [parse_example(line) for line in fh if line.strip()]


# --- batching --------------------------------------------------------------------------

def collate(examples, frames_per_step=1, dtype=np.float64):
    """Pad a list of examples into a :class:`Batch`."""
    B = len(examples)
    lens = np.array([len(ex.source) for ex in examples])
    S = int(lens.max())
    src_mask = np.arange(S)[None, :] < lens[:, None]
    if examples[0].source.ndim == 2:
        D = examples[0].source.shape[1]
        src = np.zeros((B, S, D), dtype=dtype)
    else:
        src = np.full((B, S), PAD, dtype=np.int64)
    for i, ex in enumerate(examples):
        src[i, : lens[i]] = ex.source
    batch = Batch(src, src_mask)
    if examples[0].target is not None:
        tl = np.array([len(ex.target) + 1 for ex in examples])
        Tt = int(tl.max())
        tin = np.full((B, Tt), PAD, dtype=np.int64)
        tout = np.full((B, Tt), PAD, dtype=np.int64)
        for i, ex in enumerate(examples):
            tin[i, : tl[i]] = np.concatenate([[BOS], ex.target])
            tout[i, : tl[i]] = np.concatenate([ex.target, [EOS]])
        batch.tgt_in, batch.tgt_out = tin, tout
        batch.tgt_mask = np.arange(Tt)[None, :] < tl[:, None]
    if examples[0].primary is not None:
        r = frames_per_step
        fl = np.array([len(ex.primary) for ex in examples])
        Tf = int(-(-fl.max() // r) * r)
        Dm = examples[0].primary.shape[1]
        Dr = examples[0].secondary.shape[1]
        prim = np.zeros((B, Tf, Dm), dtype=dtype)
        sec = np.zeros((B, Tf, Dr), dtype=dtype)
        end = np.zeros((B, Tf), dtype=dtype)
        for i, ex in enumerate(examples):
            prim[i, : fl[i]] = ex.primary
            sec[i, : fl[i]] = ex.secondary
            end[i, : fl[i]] = ex.ending
        batch.frames_primary, batch.frames_secondary, batch.ending = prim, sec, end
        batch.frame_mask = np.arange(Tf)[None, :] < fl[:, None]
    return batch


def minibatches(examples, batch_size, order=None):
    idx = np.arange(len(examples)) if order is None else order
    for start in range(0, len(idx), batch_size):
        yield [examples[i] for i in idx[start:start + batch_size]]
