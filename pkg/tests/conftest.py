from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ipcir.embed_store import (
    DatasetManifest,
    EmbeddingSet,
    MetricProtocol,
    QueryRecord,
    ResolvedDataset,
    Role,
    l2_normalize_rows,
)


def unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    return l2_normalize_rows(rng.standard_normal((n, dim)).astype(np.float32))


def make_set(role: Role, prefix: str, matrix: np.ndarray) -> EmbeddingSet:
    ids = [f"{prefix}{i:05d}" for i in range(matrix.shape[0])]
    return EmbeddingSet(role=role, dim=matrix.shape[1], ids=ids,
                        matrix=matrix.astype(np.float32))


def make_resolved(
    rng: np.random.Generator,
    *,
    dim: int = 16,
    gallery: int = 120,
    queries: int = 8,
    proxies_per_query: int = 3,
    baseline: np.ndarray | None = None,
    with_subsets: bool = False,
    gt_sizes: int | tuple[int, int] = 1,
    protocol: MetricProtocol = MetricProtocol.MULTI_TARGET_MAP,
) -> ResolvedDataset:
    """In-memory random dataset for pipeline-level tests."""
    sets = {
        Role.GALLERY: make_set(Role.GALLERY, "g", unit_rows(rng, gallery, dim)),
        Role.QUERY_IMAGE: make_set(Role.QUERY_IMAGE, "q", unit_rows(rng, queries, dim)),
        Role.PROXY_IMAGE: make_set(
            Role.PROXY_IMAGE, "p", unit_rows(rng, queries * proxies_per_query, dim)
        ),
        Role.TARGET_CAPTION: make_set(
            Role.TARGET_CAPTION, "t", unit_rows(rng, queries, dim)
        ),
        Role.ORIGIN_CAPTION: make_set(
            Role.ORIGIN_CAPTION, "o", unit_rows(rng, queries, dim)
        ),
    }
    gallery_ids = sets[Role.GALLERY].ids
    records = []
    for i in range(queries):
        if isinstance(gt_sizes, tuple):
            n_gt = int(rng.integers(gt_sizes[0], gt_sizes[1] + 1))
        else:
            n_gt = gt_sizes
        gt = [gallery_ids[j] for j in rng.choice(gallery, size=n_gt, replace=False)]
        subset = None
        if with_subsets:
            extra = [
                gallery_ids[j]
                for j in rng.choice(gallery, size=6, replace=False)
                if gallery_ids[j] not in gt
            ]
            subset = sorted(gt + extra[: 6 - len(gt)])
        records.append(
            QueryRecord(
                query_id=f"query{i:04d}",
                query_image=sets[Role.QUERY_IMAGE].ids[i],
                proxy_images=[
                    sets[Role.PROXY_IMAGE].ids[i * proxies_per_query + j]
                    for j in range(proxies_per_query)
                ],
                target_captions=[sets[Role.TARGET_CAPTION].ids[i]],
                origin_captions=[sets[Role.ORIGIN_CAPTION].ids[i]],
                ground_truth=gt,
                subset=subset,
            )
        )
    manifest = DatasetManifest(
        name="inmem",
        metric_protocol=protocol,
        sets={role: Path(f"{role}.ipce") for role in sets},
        queries=records,
    )
    return ResolvedDataset(manifest=manifest, sets=sets, baseline=baseline)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
