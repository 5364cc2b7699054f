"""Sequence error rates and embedding similarity.

error_rate computes a minimal-edit alignment via dynamic programming and
reports substitution/deletion/insertion counts. Among minimal-cost
alignments the one with the fewest substitutions is reported, which makes
the counts unique and swap-symmetric (swapping reference and hypothesis
keeps S and exchanges D and I).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError, NumericError, ShapeError


@dataclass(frozen=True)
class ErrorRateResult:
    substitutions: int
    deletions: int
    insertions: int
    reference_length: int

    @property
    def rate(self) -> float:
        return (self.substitutions + self.deletions + self.insertions) / self.reference_length


def error_rate(reference: Sequence, hypothesis: Sequence) -> ErrorRateResult:
    """Minimal-edit error rate of `hypothesis` against a non-empty `reference`."""
    n = len(reference)
    m = len(hypothesis)
    if n == 0:
        raise InputError("error rate undefined for empty reference")
    if tuple(reference) == tuple(hypothesis):
        return ErrorRateResult(0, 0, 0, n)

    # dp[j] = (cost, substitutions) for aligning reference[:i] to hypothesis[:j];
    # lexicographic min gives minimal cost, then fewest substitutions.
    prev = [(j, 0) for j in range(m + 1)]
    for i in range(1, n + 1):
        ref_tok = reference[i - 1]
        cur = [(i, 0)] + [None] * m
        for j in range(1, m + 1):
            dc, ds = prev[j - 1]
            if ref_tok != hypothesis[j - 1]:
                dc += 1
                ds += 1
            best = (dc, ds)
            up = (prev[j][0] + 1, prev[j][1])
            if up < best:
                best = up
            left = (cur[j - 1][0] + 1, cur[j - 1][1])
            if left < best:
                best = left
            cur[j] = best
        prev = cur

    cost, subs = prev[m]
    deletions = (cost - subs + n - m) // 2
    insertions = (cost - subs - n + m) // 2
    return ErrorRateResult(subs, deletions, insertions, n)


def token_accuracy(reference: Sequence, hypothesis: Sequence) -> float:
    """Fraction of reference tokens recovered (1 - (D+S)/len(ref), floored at 0)."""
    result = error_rate(reference, hypothesis)
    recovered = result.reference_length - result.substitutions - result.deletions
    return max(recovered, 0) / result.reference_length


def fine_units(tokens: Sequence[int], base: int = 4) -> tuple[int, ...]:
    """Decompose each token id into fixed-base digits (finest first).

    Used for the phoneme-style error rate: every text token expands into two
    or more sub-word units so partially-correct tokens earn partial credit.
    """
    out: list[int] = []
    for tok in tokens:
        t = int(tok)
        digits = []
        while True:
            digits.append(t % base)
            t //= base
            if t == 0:
                break
        out.extend(reversed(digits))
    return tuple(out)


def cosine_similarity(e1: np.ndarray, e2: np.ndarray) -> float:
    a = np.asarray(e1, dtype=np.float64).ravel()
    b = np.asarray(e2, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"cosine inputs differ in dimension: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise NumericError("cosine similarity undefined for zero-norm input")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))
