"""Retrieval metrics: Recall@K, truncated mAP@K, and subset Recall@K.

Recall is binary per query (any ground-truth item in the top K). Average
precision is truncated at K with denominator min(K, |GT|), the convention
for multi-target benchmarks. Subset recall re-ranks only a designated
candidate subset per query using the same tie-break as the main ranking
(descending score, then ascending gallery index).

Values are kept raw in [0, 1]; multiplying by 100 for presentation is the
formatting layer's concern.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Collection, Mapping, Sequence

import numpy as np

from .errors import ArgumentError, ProtocolError

DEFAULT_RECALL_KS = (1, 5, 10, 50)
DEFAULT_MAP_KS = (5, 10, 25, 50)
DEFAULT_SUBSET_KS = (1, 2, 3)


def _check_ks(name: str, ks: Sequence[int]) -> tuple[int, ...]:
    ks = tuple(int(k) for k in ks)
    if any(k < 1 for k in ks):
        raise ArgumentError(f"{name} entries must be >= 1, got {ks}")
    if list(ks) != sorted(ks):
        raise ArgumentError(f"{name} must be sorted ascending, got {ks}")
    return ks


@dataclass(frozen=True)
class EvalConfig:
    recall_ks: tuple[int, ...] = DEFAULT_RECALL_KS
    map_ks: tuple[int, ...] = DEFAULT_MAP_KS
    subset_ks: tuple[int, ...] = DEFAULT_SUBSET_KS

    def __post_init__(self):
        object.__setattr__(self, "recall_ks", _check_ks("recall_ks", self.recall_ks))
        object.__setattr__(self, "map_ks", _check_ks("map_ks", self.map_ks))
        object.__setattr__(self, "subset_ks", _check_ks("subset_ks", self.subset_ks))

    def max_rank_depth(self) -> int:
        return max(self.recall_ks + self.map_ks)


@dataclass
class EvalReport:
    """Metric values keyed by family and K, plus the configuration echo."""

    values: dict[str, dict[int, float]]
    config: dict
    first_relevant_rank: list[int | None] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "metrics": {
                family: {str(k): v for k, v in sorted(by_k.items())}
                for family, by_k in sorted(self.values.items())
            },
            "diagnostics": {"first_relevant_rank": self.first_relevant_rank},
        }

    def rows(self) -> list[tuple[str, int, float]]:
        """Flat (metric, K, value) rows for delimited output."""
        out = []
        for family in sorted(self.values):
            for k in sorted(self.values[family]):
                out.append((family, k, self.values[family][k]))
        return out


def recall_at_k(ranked_ids: Sequence[str], ground_truth: Collection[str], k: int) -> float:
    """1.0 if any ground-truth id appears in the top k, else 0.0."""
    if k < 1:
        raise ArgumentError(f"k must be >= 1, got {k}")
    if not ground_truth:
        raise ProtocolError("recall requires non-empty ground truth")
    gt = set(ground_truth)
    return 1.0 if any(r in gt for r in ranked_ids[:k]) else 0.0


def average_precision_at_k(
    ranked_ids: Sequence[str], ground_truth: Collection[str], k: int
) -> float:
    """Truncated AP: mean of precision at each relevant rank, over min(k, |GT|)."""
    if k < 1:
        raise ArgumentError(f"k must be >= 1, got {k}")
    if not ground_truth:
        raise ProtocolError("average precision requires non-empty ground truth")
    gt = set(ground_truth)
    hits = 0
    precision_sum = 0.0
    for rank, rid in enumerate(ranked_ids[:k], start=1):
        if rid in gt:
            hits += 1
            precision_sum += hits / rank
    return precision_sum / min(k, len(gt))


def subset_recall_at_k(
    scores: np.ndarray,
    subset: Sequence[str],
    ground_truth: Collection[str],
    k: int,
    id_index: Mapping[str, int],
) -> float:
    """Recall@k after ranking only the designated subset by final score.

    ``scores`` covers the whole gallery; ``id_index`` maps gallery ids to
    score positions. Ties break by ascending gallery index, as in the main
    ranking.
    """
    if k < 1:
        raise ArgumentError(f"k must be >= 1, got {k}")
    if not ground_truth:
        raise ProtocolError("subset recall requires non-empty ground truth")
    missing = set(ground_truth) - set(subset)
    if missing:
        raise ProtocolError(f"ground truth {sorted(missing)} not in subset")
    if k > len(subset):
        raise ProtocolError(f"k={k} exceeds subset size {len(subset)}")
    positions = np.asarray([id_index[s] for s in subset], dtype=np.int64)
    member_scores = np.asarray(scores, dtype=np.float32)[positions]
    # Sort subset members by (-score, gallery index); positions sorted first
    # so the stable sort resolves ties toward the lower gallery index.
    by_index = np.argsort(positions, kind="stable")
    order = by_index[np.argsort(-member_scores[by_index], kind="stable")]
    gt_positions = {id_index[g] for g in ground_truth}
    top = positions[order[:k]]
    return 1.0 if any(int(p) in gt_positions for p in top) else 0.0


def mean_over_queries(per_query: Sequence[float]) -> float:
    if not per_query:
        raise ProtocolError("cannot aggregate metrics over zero queries")
    return float(np.mean(np.asarray(per_query, dtype=np.float64)))
