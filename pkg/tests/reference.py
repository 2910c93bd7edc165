"""Independent reference implementations used as oracles by the tests.

Everything here is deliberately naive (explicit loops, float64, full sorts)
and shares no code with the package modules it checks.
"""

from __future__ import annotations

import math

import numpy as np


def naive_cosine(queries: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """Double-loop cosine scores in float64; rows normalized independently."""

    def unit(v):
        n = math.sqrt(sum(float(x) * float(x) for x in v))
        return [float(x) / n for x in v] if n > 1e-12 else [float(x) for x in v]

    out = np.zeros((len(queries), len(gallery)), dtype=np.float64)
    gallery_units = [unit(row) for row in gallery]
    for i, q in enumerate(queries):
        uq = unit(q)
        for j, g in enumerate(gallery_units):
            out[i, j] = sum(a * b for a, b in zip(uq, g))
    return out


def full_sort_ranking(scores) -> list[int]:
    """All indices sorted by descending score, ties by ascending index."""
    return sorted(range(len(scores)), key=lambda i: (-float(scores[i]), i))


def brute_recall(ranked_ids, ground_truth, k: int) -> float:
    gt = set(ground_truth)
    for rid in list(ranked_ids)[:k]:
        if rid in gt:
            return 1.0
    return 0.0


def brute_average_precision(ranked_ids, ground_truth, k: int) -> float:
    gt = set(ground_truth)
    hits = 0
    total = 0.0
    for rank, rid in enumerate(list(ranked_ids)[:k], start=1):
        if rid in gt:
            hits += 1
            total += hits / rank
    return total / min(k, len(gt))


def brute_subset_recall(scores, subset_ids, ground_truth, gallery_ids, k: int) -> float:
    """Rank only the subset (by score, then gallery position) and test recall."""
    position = {g: i for i, g in enumerate(gallery_ids)}
    ordered = sorted(subset_ids, key=lambda s: (-float(scores[position[s]]), position[s]))
    gt = set(ground_truth)
    return 1.0 if any(s in gt for s in ordered[:k]) else 0.0


def eq1_fusion(f_p, f_q, f_t, f_o, w_q=1.0, w_s=1.0, w_p=1.0) -> list[float]:
    """Float64 loop transcription of the three-term robust-proxy sum."""
    f_s = [float(t) - float(o) for t, o in zip(f_t, f_o)]
    mp = max(abs(float(x)) for x in f_p)
    mq = max(abs(float(x)) for x in f_q)
    ms = max(abs(float(x)) for x in f_s)
    a_q = mp / mq if mq >= 1e-12 else 0.0
    a_s = mp / ms if ms >= 1e-12 else 0.0
    return [
        w_p * float(p) + w_q * a_q * float(q) + w_s * a_s * s
        for p, q, s in zip(f_p, f_q, f_s)
    ]
