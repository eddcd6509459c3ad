"""Evaluation metrics and attention diagnostics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .tensor import ContractViolation


class UndefinedMetricError(ValueError):
    pass


def edit_distance(hyp, ref):
    """Levenshtein distance with unit insert/delete/substitute costs."""
    return kernels.edit_distance(np.asarray(list(hyp), dtype=np.int64), np.asarray(list(ref), dtype=np.int64))


def _as_ids(seq):
    if isinstance(seq, str):
        return [ord(ch) for ch in seq]
    return list(seq)


def cer(hyp, ref):
    """Character error rate in percent: edit distance / len(ref) × 100."""
    hyp, ref = _as_ids(hyp), _as_ids(ref)
    if len(ref) == 0:
        raise UndefinedMetricError("CER is undefined for an empty reference")
    return 100.0 * edit_distance(hyp, ref) / len(ref)


def l2_metric(pred, target, return_lengths=False):
    """Mean over frames of the squared Euclidean distance, after truncating to the shorter length."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    n = min(len(pred), len(target))
    if n == 0:
        raise UndefinedMetricError("no overlapping frames")
    if pred.shape[1:] != target.shape[1:]:
        raise ValueError(f"frame widths differ: {pred.shape} vs {target.shape}")
    value = float(np.mean(np.sum((pred[:n] - target[:n]) ** 2, axis=1)))
    if return_lengths:
        return value, len(pred), len(target)
    return value


def token_accuracy(hyps, refs):
    """Position-wise matches over Σ max(len(hyp), len(ref)); length mismatches count as errors."""
    hit = total = 0
    for h, r in zip(hyps, refs):
        h, r = list(h), list(r)
        hit += sum(1 for a, b in zip(h, r) if a == b)
        total += max(len(h), len(r))
    return hit / total if total else 1.0


@dataclass
class AttentionDiagnostics:
    entropy: np.ndarray  # per decoder step
    expected_position: np.ndarray  # 1-based
    monotonicity_violations: int
    terminal_coverage: float

    def to_dict(self):
        return {
            "mean_entropy": float(np.mean(self.entropy)) if self.entropy.size else 0.0,
            "monotonicity_violations": int(self.monotonicity_violations),
            "terminal_coverage": float(self.terminal_coverage),
        }


def diagnostics(align, slack=2.0, tol=1e-4):
    """Entropy, expected position, monotonicity violations and terminal coverage of an alignment matrix [T, S]."""
    a = np.atleast_2d(np.asarray(align, dtype=np.float64))
    sums = a.sum(axis=1)
    if not np.all(np.abs(sums - 1.0) <= tol):
        raise ContractViolation(f"alignment rows must sum to 1, got {sums[np.argmax(np.abs(sums - 1))]}")
    S = a.shape[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(a > 0, a * np.log(np.where(a > 0, a, 1.0)), 0.0)
    entropy = -plogp.sum(axis=1)
    pos = a @ np.arange(1, S + 1, dtype=np.float64)
    violations = int(np.sum(np.diff(pos) < -slack))
    coverage = float(pos.max() / S) if len(pos) else 0.0
    return AttentionDiagnostics(entropy, pos, violations, coverage)
