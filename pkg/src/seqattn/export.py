"""Alignment-matrix export: CSV (exact decimals) and binary PGM heat maps.

Rows are decoder steps and columns are encoder positions after subsampling.
A CSV written here re-reads to the identical matrix, so converting a CSV to PGM
gives the same bytes as exporting the PGM directly.
"""
from __future__ import annotations

import io

import numpy as np

from . import checkpoint as ckpt_io
from .decoding import beam_decode, greedy_decode, tts_infer
from .tasks import collate, load_dataset
from .tensor import no_grad

FORMATS = ("csv", "pgm")


def alignment_matrix(model, example, beam=1, max_frames=400):
    """Decode one example and return its [steps, S'] alignment matrix."""
    if model.config.output_kind == "frames":
        return tts_infer(model, example.source, max_frames=max_frames).alignments
    b = collate([example], dtype=model.dtype)
    with no_grad():
        hE, mask = model.encode(b.src, b.src_mask)
    dec = greedy_decode(model, hE, mask) if beam == 1 else beam_decode(model, hE, mask, beam=beam)
    return dec.alignments


def to_csv(align):
    """One line per decoder step, comma-separated shortest round-trip decimals."""
    a = np.atleast_2d(np.asarray(align, dtype=np.float64))
    return "".join(",".join(repr(float(v)) for v in row) + "\n" for row in a)


def read_csv(text):
    rows = [line for line in text.splitlines() if line.strip()]
    return np.array([[float(v) for v in line.split(",")] for line in rows], dtype=np.float64)


def to_pgm(align):
    """8-bit binary PGM (P5); pixel = round(255·a), clipped to [0, 255]."""
    a = np.atleast_2d(np.asarray(align, dtype=np.float64))
    h, w = a.shape
    pix = np.clip(np.rint(255.0 * a), 0, 255).astype(np.uint8)
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes()


def read_pgm(data):
    """Pixel array of a P5 file written by :func:`to_pgm`."""
    stream = io.BytesIO(data)
    fields = []
    while len(fields) < 4:
        line = stream.readline()
        if not line:
            raise ValueError("truncated PGM header")
        fields += line.split(b"#", 1)[0].split()
    if fields[0] != b"P5":
        raise ValueError(f"not a binary PGM (magic {fields[0]!r})")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"only 8-bit PGM is supported, got maxval {maxval}")
    return np.frombuffer(stream.read(w * h), dtype=np.uint8).reshape(h, w)


def csv_to_pgm(text):
    return to_pgm(read_csv(text))


def export_attention(checkpoint, input_path, fmt="csv", output=None, index=0, beam=1):
    """Decode record ``index`` of ``input_path`` with the checkpointed model and serialise its alignments.

    ``checkpoint`` is a path or a loaded :class:`~seqattn.checkpoint.Checkpoint`.
    Returns the serialised bytes; also writes them to ``output`` when given.
    """
    from .train import model_from_checkpoint

    if fmt not in FORMATS:
        raise ValueError(f"unknown export format {fmt!r}; expected one of {FORMATS}")
    ckpt = checkpoint if isinstance(checkpoint, ckpt_io.Checkpoint) else ckpt_io.load(checkpoint)
    model, _ = model_from_checkpoint(ckpt)
    examples = load_dataset(input_path)
    if not 0 <= index < len(examples):
        raise IndexError(f"record {index} requested but {input_path} holds {len(examples)}")
    align = alignment_matrix(model, examples[index], beam=beam)
    data = to_csv(align).encode("ascii") if fmt == "csv" else to_pgm(align)
    if output is not None:
        with open(output, "wb") as fh:
            fh.write(data)
    return data
