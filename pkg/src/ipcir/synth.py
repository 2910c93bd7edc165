"""Synthetic retrieval benchmarks with planted ground truth.

Each query is a random unit vector q with a random unit edit direction e.
The planted target normalize(q + edit_strength * e) sits in a gallery of
uniform random distractors plus an optional fraction of hard negatives
derived from query-dominant (under-edited) and edit-dominant (over-edited)
mixtures of the same q and e, which gives noisy text-side retrieval a
designed failure mode. Caption features carry noise proportional to the
edit strength; proxy embeddings point at the target with isotropic Gaussian
noise followed by re-normalization.

``oracle_evaluate`` re-runs the whole pipeline with plain Python loops in
float64 — no code shared with the fusion/scoring/metric modules — and is
the reference the engine is checked against.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embed_store import (
    DatasetManifest,
    EmbeddingSet,
    Role,
    load_manifest,
    write_embedding_set,
)
from .errors import ArgumentError, SizeError
from .fusion import FusionWeights
from .metrics import EvalConfig, EvalReport
from .simengine import write_score_table

# Noise on caption features, per contribution, as a fraction of edit strength.
CAPTION_NOISE_RATIO = 0.85
# Hard negatives: under-edited keeps this fraction of the edit; over-edited
# keeps this fraction of the query.
UNDER_EDIT_FRAC = 0.5
OVER_EDIT_QUERY_FRAC = 0.5
HARD_NEGATIVE_JITTER = 0.08

ORACLE_MAX_GALLERY = 1000


@dataclass(frozen=True)
class SynthSpec:
    dim: int = 64
    gallery_size: int = 1000
    num_queries: int = 50
    edit_strength: float = 0.7
    proxy_noise: float = 0.4
    proxies_per_query: int = 5
    seed: int = 0
    hard_negative_fraction: float = 0.0

    def __post_init__(self):
        if self.dim < 2:
            raise ArgumentError(f"dim must be >= 2, got {self.dim}")
        if self.gallery_size < self.num_queries:
            raise ArgumentError("gallery_size must be >= num_queries")
        if self.num_queries < 1:
            raise ArgumentError("num_queries must be >= 1")
        if not 0.0 <= self.edit_strength <= 1.0:
            raise ArgumentError("edit_strength must lie in [0, 1]")
        if self.proxy_noise < 0.0:
            raise ArgumentError("proxy_noise must be >= 0")
        if self.proxies_per_query < 1:
            raise ArgumentError("proxies_per_query must be >= 1")
        if not 0.0 <= self.hard_negative_fraction <= 1.0:
            raise ArgumentError("hard_negative_fraction must lie in [0, 1]")


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return matrix / norms


def _noise(rng: np.random.Generator, shape: tuple[int, ...], scale: float) -> np.ndarray:
    """Isotropic Gaussian noise with expected vector norm ``scale``."""
    dim = shape[-1]
    return rng.standard_normal(shape) * (scale / math.sqrt(dim))


def generate(spec: SynthSpec, out_dir: str | Path) -> Path:
    """Write a complete synthetic dataset; returns the manifest path.

    Deterministic: the same spec produces bit-identical files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    nq, dim, edit = spec.num_queries, spec.dim, spec.edit_strength

    queries = _unit_rows(rng.standard_normal((nq, dim)))
    edits = _unit_rows(rng.standard_normal((nq, dim)))
    targets = _unit_rows(queries + edit * edits)

    n_fill = spec.gallery_size - nq
    n_hard = int(round(spec.hard_negative_fraction * n_fill))
    distractors = _unit_rows(rng.standard_normal((n_fill - n_hard, dim)))
    hard: list[np.ndarray] = []
    for j in range(n_hard):
        i = j % nq
        jitter = _noise(rng, (dim,), HARD_NEGATIVE_JITTER)
        if (j // nq) % 2 == 0:
            vec = queries[i] + UNDER_EDIT_FRAC * edit * edits[i] + jitter
        else:
            vec = OVER_EDIT_QUERY_FRAC * queries[i] + edit * edits[i] + jitter
        hard.append(vec / np.linalg.norm(vec))
    negatives = np.stack(hard) if hard else np.zeros((0, dim))

    gallery = np.concatenate([targets, negatives, distractors], axis=0)
    order = rng.permutation(spec.gallery_size)
    gallery = gallery[order]
    # row i of the pre-shuffle stack (the target of query i) lands at
    # position argsort(order)[i] after the shuffle
    target_pos = np.argsort(order)[:nq]

    caption_scale = CAPTION_NOISE_RATIO * edit
    origins = queries + _noise(rng, (nq, dim), caption_scale)
    target_caps = origins + edit * edits + _noise(rng, (nq, dim), caption_scale)

    proxies = np.repeat(targets, spec.proxies_per_query, axis=0)
    proxies = _unit_rows(proxies + _noise(rng, proxies.shape, spec.proxy_noise))

    baseline = _unit_rows(target_caps) @ _unit_rows(gallery).T

    gallery_ids = [f"g{i:06d}" for i in range(spec.gallery_size)]
    query_ids = [f"q{i:05d}" for i in range(nq)]
    proxy_ids = [
        f"q{i:05d}_p{j}" for i in range(nq) for j in range(spec.proxies_per_query)
    ]

    def dump(name: str, role: Role, ids: list[str], matrix: np.ndarray) -> str:
        eset = EmbeddingSet(role=role, dim=dim, ids=ids, matrix=matrix.astype(np.float32))
        write_embedding_set(out_dir / name, eset)
        return name

    sets = {
        "gallery": dump("gallery.ipce", Role.GALLERY, gallery_ids, gallery),
        "query_image": dump("queries.ipce", Role.QUERY_IMAGE, query_ids, queries),
        "proxy_image": dump("proxies.ipce", Role.PROXY_IMAGE, proxy_ids, proxies),
        "target_caption": dump(
            "target_captions.ipce", Role.TARGET_CAPTION, query_ids, target_caps
        ),
        "origin_caption": dump(
            "origin_captions.ipce", Role.ORIGIN_CAPTION, query_ids, origins
        ),
    }
    write_score_table(out_dir / "baseline.ipcs", baseline.astype(np.float32))

    records = []
    for i in range(nq):
        records.append(
            {
                "query_id": query_ids[i],
                "query_image": query_ids[i],
                "proxy_images": [
                    f"q{i:05d}_p{j}" for j in range(spec.proxies_per_query)
                ],
                "target_captions": [query_ids[i]],
                "origin_captions": [query_ids[i]],
                "ground_truth": [gallery_ids[int(target_pos[i])]],
            }
        )
    manifest = {
        "name": f"synth-d{dim}-g{spec.gallery_size}-q{nq}-s{spec.seed}",
        "metric_protocol": "multi_target_map",
        "sets": sets,
        "baseline_scores": "baseline.ipcs",
        "queries": records,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest_path


# --------------------------------------------------------------------------
# Independent oracle: plain-Python float64 re-implementation of the pipeline.
# --------------------------------------------------------------------------


def _o_norm(v: list[float]) -> list[float]:
    norm = math.sqrt(sum(x * x for x in v))
    if norm < 1e-12:
        return list(v)
    return [x / norm for x in v]


def _o_mean_of_normalized(vectors: list[list[float]]) -> list[float]:
    dim = len(vectors[0])
    acc = [0.0] * dim
    for v in vectors:
        unit = _o_norm(v)
        for d in range(dim):
            acc[d] += unit[d]
    return [x / len(vectors) for x in acc]


def _o_dot(a: list[float], b: list[float]) -> float:
    return sum(x * y for x, y in zip(a, b))


def _o_maxabs(v: list[float]) -> float:
    return max(abs(x) for x in v) if v else 0.0


def _o_minmax(scores: list[float]) -> list[float]:
    lo, hi = min(scores), max(scores)
    if hi == lo:
        return [0.5] * len(scores)
    span = hi - lo
    return [(s - lo) / span for s in scores]


def _o_rank(scores: list[float]) -> list[int]:
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def oracle_evaluate(
    manifest: DatasetManifest | str | Path,
    lam: float,
    weights: FusionWeights = FusionWeights(),
    eval_config: EvalConfig = EvalConfig(),
    normalization: str = "minmax_per_query",
) -> EvalReport:
    """Reference evaluation of a small dataset, end to end.

    Loads the files named by the manifest and recomputes fusion,
    similarities, balancing, ranking, and all metrics with unoptimized
    float64 loops. Only mean-aggregation of proxies is supported. Instances
    with galleries above 1000 items are refused.
    """
    if not isinstance(manifest, DatasetManifest):
        manifest = load_manifest(manifest)

    from .embed_store import load_embedding_set
    from .simengine import load_score_table

    sets = {
        role: load_embedding_set(manifest.resolve_path(path), role)
        for role, path in manifest.sets.items()
    }
    gallery = sets[Role.GALLERY]
    if gallery.count > ORACLE_MAX_GALLERY:
        raise SizeError(
            f"oracle supports galleries up to {ORACLE_MAX_GALLERY} items, "
            f"got {gallery.count}"
        )
    baseline = None
    if manifest.baseline_scores is not None:
        baseline = load_score_table(manifest.resolve_path(manifest.baseline_scores))

    gallery_rows = [
        _o_norm([float(x) for x in gallery.matrix[i]]) for i in range(gallery.count)
    ]
    gt_sets = [set(r.ground_truth) for r in manifest.queries]
    id_of = gallery.ids

    recall_acc = {k: 0.0 for k in eval_config.recall_ks}
    map_acc = {k: 0.0 for k in eval_config.map_ks}
    subset_acc = {k: 0.0 for k in eval_config.subset_ks}
    have_subsets = all(r.subset is not None for r in manifest.queries)

    for qi, record in enumerate(manifest.queries):
        qset = sets[Role.QUERY_IMAGE]
        f_q = _o_norm([float(x) for x in qset.matrix[qset.id_index[record.query_image]]])

        def caption(role: Role, ids: list[str]) -> list[float]:
            if not ids:
                return [0.0] * gallery.dim
            eset = sets[role]
            vecs = [
                [float(x) for x in eset.matrix[eset.id_index[cid]]] for cid in ids
            ]
            return _o_mean_of_normalized(vecs)

        f_t = caption(Role.TARGET_CAPTION, record.target_captions)
        f_o = caption(Role.ORIGIN_CAPTION, record.origin_captions)
        f_s = [t - o for t, o in zip(f_t, f_o)]

        pset = sets[Role.PROXY_IMAGE]
        proxy_vecs = [
            [float(x) for x in pset.matrix[pset.id_index[pid]]]
            for pid in record.proxy_images
        ]
        f_p = _o_mean_of_normalized(proxy_vecs) if proxy_vecs else [0.0] * gallery.dim

        mp = _o_maxabs(f_p)
        mq = _o_maxabs(f_q)
        ms = _o_maxabs(f_s)
        a_q = mp / mq if mq >= 1e-12 else 0.0
        a_s = mp / ms if ms >= 1e-12 else 0.0
        rp = [
            weights.w_p * p + weights.w_q * a_q * q + weights.w_s * a_s * s
            for p, q, s in zip(f_p, f_q, f_s)
        ]
        rp = _o_norm(rp)

        s_p = [_o_dot(rp, row) for row in gallery_rows]
        if baseline is not None:
            row = record.baseline_row if record.baseline_row is not None else qi
            s_t = [float(x) for x in baseline[row]]
        else:
            f_t_unit = _o_norm(f_t)
            s_t = [_o_dot(f_t_unit, row) for row in gallery_rows]

        if normalization == "minmax_per_query":
            s_t_n, s_p_n = _o_minmax(s_t), _o_minmax(s_p)
        else:
            s_t_n, s_p_n = s_t, s_p
        final = [lam * t + (1.0 - lam) * (t * p) for t, p in zip(s_t_n, s_p_n)]

        ranking = _o_rank(final)
        ranked_ids = [id_of[i] for i in ranking]
        gt = gt_sets[qi]
        for k in recall_acc:
            recall_acc[k] += 1.0 if any(r in gt for r in ranked_ids[:k]) else 0.0
        for k in map_acc:
            hits, psum = 0, 0.0
            for rank, rid in enumerate(ranked_ids[:k], start=1):
                if rid in gt:
                    hits += 1
                    psum += hits / rank
            map_acc[k] += psum / min(k, len(gt))
        if have_subsets:
            member_idx = [gallery.id_index[s] for s in record.subset]
            member_rank = sorted(member_idx, key=lambda i: (-final[i], i))
            for k in subset_acc:
                top = member_rank[:k]
                subset_acc[k] += 1.0 if any(id_of[i] in gt for i in top) else 0.0

    n = len(manifest.queries)
    values = {
        "recall": {k: v / n for k, v in recall_acc.items()},
        "map": {k: v / n for k, v in map_acc.items()},
    }
    if have_subsets:
        values["subset_recall"] = {k: v / n for k, v in subset_acc.items()}
    return EvalReport(values=values, config={"oracle": True, "lambda": lam})
