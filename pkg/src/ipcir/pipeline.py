"""End-to-end retrieval runs: fusion, scoring, balancing, ranking, metrics.

The text-side and proxy-side score matrices are independent of the
balancing parameter, so sweeps compute them once and recombine cheaply.
Scoring batches every query into one kernel invocation, keeping runs
bit-deterministic for any thread count.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import figures
from .embed_store import (
    MetricProtocol,
    QueryRecord,
    ResolvedDataset,
    Role,
    l2_normalize_rows,
    load_manifest,
    mean_embedding,
    resolve_manifest,
)
from .errors import ConfigError, DataError, ProtocolError
from .fusion import (
    AGG_MEAN,
    AGG_PER_PROXY,
    FusionInputs,
    FusionWeights,
    aggregate_proxies,
    robust_proxy,
)
from .metrics import (
    EvalConfig,
    EvalReport,
    average_precision_at_k,
    mean_over_queries,
    recall_at_k,
    subset_recall_at_k,
)
from .simengine import (
    DEFAULT_BLOCK,
    NORM_MINMAX,
    NORM_NONE,
    balance_matrix,
    minmax_rows,
    score_matrix,
    top_k_matrix,
)


@dataclass(frozen=True)
class RunConfig:
    manifest: Path
    lam: float = 0.5
    weights: FusionWeights = field(default_factory=FusionWeights)
    aggregation: str = AGG_MEAN
    normalization: str = NORM_MINMAX
    eval_config: EvalConfig = field(default_factory=EvalConfig)
    out_dir: Path | None = None
    threads: int | None = None
    block: int = DEFAULT_BLOCK
    seed: int | None = None
    figures: bool = True

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.aggregation not in (AGG_MEAN, AGG_PER_PROXY):
            raise ConfigError(f"unknown aggregation mode {self.aggregation!r}")
        if self.normalization not in (NORM_MINMAX, NORM_NONE):
            raise ConfigError(f"unknown normalization mode {self.normalization!r}")

    def echo(self, **extra) -> dict:
        doc = {
            "manifest": str(self.manifest),
            "lambda": self.lam,
            "weights": {"w_q": self.weights.w_q, "w_s": self.weights.w_s, "w_p": self.weights.w_p},
            "aggregation": self.aggregation,
            "normalization": self.normalization,
            "recall_ks": list(self.eval_config.recall_ks),
            "map_ks": list(self.eval_config.map_ks),
            "subset_ks": list(self.eval_config.subset_ks),
            "threads": self.threads,
            "block": self.block,
            "seed": self.seed,
        }
        doc.update(extra)
        return doc


@dataclass
class SimilarityCache:
    """Balance-parameter-independent per-run state."""

    s_t: np.ndarray  # (nq, ng) float32 text-side scores
    s_p: np.ndarray  # (nq, ng) float32 proxy-side scores
    n_proxies: int | None  # proxy-list truncation used, if any


def _caption_feature(resolved: ResolvedDataset, role: Role, ids: list[str]) -> np.ndarray:
    if not ids:
        return np.zeros(resolved.dim, dtype=np.float32)
    return mean_embedding(list(resolved.set_for(role).rows(ids)))


def _truncated_proxies(record: QueryRecord, n_proxies: int | None) -> list[str]:
    if n_proxies is None:
        return record.proxy_images
    return record.proxy_images[:n_proxies]


def text_score_matrix(resolved: ResolvedDataset, config: RunConfig) -> np.ndarray:
    """Baseline text-side scores: imported table if present, else cosine of
    the aggregated target-caption feature against the gallery."""
    records = resolved.manifest.queries
    if resolved.baseline is not None:
        rows = [
            r.baseline_row if r.baseline_row is not None else i
            for i, r in enumerate(records)
        ]
        return resolved.baseline[rows]
    texts = np.empty((len(records), resolved.dim), dtype=np.float32)
    for i, record in enumerate(records):
        if not record.target_captions:
            raise DataError(
                f"query {record.query_id!r} has no baseline scores and no "
                f"target captions to derive text-side scores from"
            )
        texts[i] = _caption_feature(resolved, Role.TARGET_CAPTION, record.target_captions)
    return score_matrix(
        l2_normalize_rows(texts), resolved.gallery.unit_matrix, config.threads, config.block
    )


def proxy_score_matrix(
    resolved: ResolvedDataset, config: RunConfig, n_proxies: int | None = None
) -> np.ndarray:
    """Proxy-side scores from robust proxy features.

    Queries without proxy embeddings contribute an all-zero score row. In
    per-proxy aggregation every proxy is fused and scored separately and the
    rows are averaged per query.
    """
    records = resolved.manifest.queries
    nq, dim = len(records), resolved.dim
    gallery_units = resolved.gallery.unit_matrix
    query_set = resolved.set_for(Role.QUERY_IMAGE)

    fused_rows: list[np.ndarray] = []
    owners: list[int] = []
    for i, record in enumerate(records):
        proxy_ids = _truncated_proxies(record, n_proxies)
        if not proxy_ids:
            continue
        f_q = query_set.rows([record.query_image])[0]
        f_t = _caption_feature(resolved, Role.TARGET_CAPTION, record.target_captions)
        f_o = _caption_feature(resolved, Role.ORIGIN_CAPTION, record.origin_captions)
        proxies = resolved.set_for(Role.PROXY_IMAGE).rows(proxy_ids)
        aggregated = aggregate_proxies(list(proxies), config.aggregation)
        candidates = [aggregated] if config.aggregation == AGG_MEAN else aggregated
        for f_p in candidates:
            rp = robust_proxy(FusionInputs(f_p=f_p, f_q=f_q, f_t=f_t, f_o=f_o), config.weights)
            fused_rows.append(rp.vector)
            owners.append(i)

    scores = np.zeros((nq, gallery_units.shape[0]), dtype=np.float32)
    if fused_rows:
        fused = l2_normalize_rows(np.stack(fused_rows))
        raw = score_matrix(fused, gallery_units, config.threads, config.block)
        owners_arr = np.asarray(owners)
        for i in range(nq):
            mine = np.flatnonzero(owners_arr == i)
            if mine.size == 1:
                scores[i] = raw[mine[0]]
            elif mine.size > 1:
                scores[i] = raw[mine].mean(axis=0, dtype=np.float64).astype(np.float32)
    return scores


def build_cache(
    resolved: ResolvedDataset, config: RunConfig, n_proxies: int | None = None
) -> SimilarityCache:
    return SimilarityCache(
        s_t=text_score_matrix(resolved, config),
        s_p=proxy_score_matrix(resolved, config, n_proxies),
        n_proxies=n_proxies,
    )


def final_score_matrix(cache: SimilarityCache, config: RunConfig, lam: float) -> np.ndarray:
    if config.normalization == NORM_MINMAX:
        s_t, s_p = minmax_rows(cache.s_t), minmax_rows(cache.s_p)
    else:
        s_t, s_p = cache.s_t, cache.s_p
    return balance_matrix(s_t, s_p, lam)


def _validate_protocol(resolved: ResolvedDataset) -> None:
    protocol = resolved.manifest.metric_protocol
    records = resolved.manifest.queries
    if protocol is MetricProtocol.SUBSET_RECALL:
        missing = [r.query_id for r in records if r.subset is None]
        if missing:
            raise ProtocolError(
                f"subset_recall protocol but queries without subsets: {missing[:5]}"
            )
    if protocol is MetricProtocol.SINGLE_TARGET_RECALL:
        multi = [r.query_id for r in records if len(r.ground_truth) != 1]
        if multi:
            raise ProtocolError(
                f"single_target_recall protocol but multi-target queries: {multi[:5]}"
            )


def evaluate_scores(
    resolved: ResolvedDataset,
    final: np.ndarray,
    config: RunConfig,
    config_echo: dict,
) -> tuple[EvalReport, np.ndarray]:
    """Rank final scores and compute every applicable metric family.

    Returns the report and the (nq, depth) ranked-index matrix. Per-query
    exclusion lists are masked out of the ranking but left untouched in the
    score matrix handed to subset recall.
    """
    records = resolved.manifest.queries
    gallery = resolved.gallery
    _validate_protocol(resolved)

    ranked_scores = final
    if any(r.exclude for r in records):
        ranked_scores = final.copy()
        for i, record in enumerate(records):
            if record.exclude:
                idx = [gallery.id_index[g] for g in record.exclude]
                ranked_scores[i, idx] = -np.inf

    depth = config.eval_config.max_rank_depth()
    rank_idx = top_k_matrix(ranked_scores, depth)

    recall_per_k = {k: [] for k in config.eval_config.recall_ks}
    map_per_k = {k: [] for k in config.eval_config.map_ks}
    subset_available = all(r.subset is not None for r in records) and bool(records)
    subset_per_k = {k: [] for k in config.eval_config.subset_ks} if subset_available else {}
    first_relevant: list[int | None] = []

    for i, record in enumerate(records):
        ranked_ids = [gallery.ids[j] for j in rank_idx[i]]
        gt = set(record.ground_truth)
        for k in recall_per_k:
            recall_per_k[k].append(recall_at_k(ranked_ids, gt, k))
        for k in map_per_k:
            map_per_k[k].append(average_precision_at_k(ranked_ids, gt, k))
        for k in subset_per_k:
            subset_per_k[k].append(
                subset_recall_at_k(final[i], record.subset, gt, k, gallery.id_index)
            )
        hit = next((r for r, rid in enumerate(ranked_ids, start=1) if rid in gt), None)
        first_relevant.append(hit)

    values = {
        "recall": {k: mean_over_queries(v) for k, v in recall_per_k.items()},
        "map": {k: mean_over_queries(v) for k, v in map_per_k.items()},
    }
    if subset_per_k:
        values["subset_recall"] = {k: mean_over_queries(v) for k, v in subset_per_k.items()}

    report = EvalReport(values=values, config=config_echo, first_relevant_rank=first_relevant)
    return report, rank_idx


@dataclass
class RunResult:
    report: EvalReport
    rank_idx: np.ndarray
    final: np.ndarray
    cache: SimilarityCache


def run_single(
    resolved: ResolvedDataset, config: RunConfig, cache: SimilarityCache | None = None
) -> RunResult:
    if cache is None:
        cache = build_cache(resolved, config)
    final = final_score_matrix(cache, config, config.lam)
    echo = config.echo(dataset=resolved.manifest.name,
                       metric_protocol=resolved.manifest.metric_protocol.value)
    report, rank_idx = evaluate_scores(resolved, final, config, echo)
    return RunResult(report=report, rank_idx=rank_idx, final=final, cache=cache)


def _write_report(report: EvalReport, out_dir: Path, stem: str = "report") -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{stem}.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    with (out_dir / f"{stem}.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "k", "value"])
        for family, k, value in report.rows():
            writer.writerow([family, k, repr(value)])


def _write_rankings(
    resolved: ResolvedDataset, rank_idx: np.ndarray, final: np.ndarray, out_dir: Path
) -> None:
    gallery_ids = resolved.gallery.ids
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "rankings.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["query_id", "rank", "gallery_id", "score"])
        for i, record in enumerate(resolved.manifest.queries):
            for rank, j in enumerate(rank_idx[i], start=1):
                writer.writerow(
                    [record.query_id, rank, gallery_ids[j], repr(float(final[i, j]))]
                )


def load_and_resolve(config: RunConfig) -> ResolvedDataset:
    manifest = load_manifest(config.manifest)
    return resolve_manifest(manifest)


def run_retrieve(config: RunConfig, write_rankings: bool = True) -> EvalReport:
    """Full pipeline run; writes rankings, report, and a metrics figure."""
    if config.out_dir is None:
        raise ConfigError("retrieve requires an output directory")
    resolved = load_and_resolve(config)
    result = run_single(resolved, config)
    _write_report(result.report, config.out_dir)
    if write_rankings:
        _write_rankings(resolved, result.rank_idx, result.final, config.out_dir)
    if config.figures:
        figures.render_report(result.report, config.out_dir / "report.png")
    return result.report


def sweep_rows_lambda(
    resolved: ResolvedDataset, config: RunConfig, grid: list[float]
) -> list[tuple[float, str, int, float]]:
    if not grid:
        raise ConfigError("lambda grid must be non-empty")
    if sorted(grid) != list(grid):
        raise ConfigError("lambda grid must be sorted ascending")
    if any(not 0.0 <= g <= 1.0 for g in grid):
        raise ConfigError("lambda grid values must lie in [0, 1]")
    cache = build_cache(resolved, config)
    rows = []
    for lam in grid:
        point = replace(config, lam=lam)
        result = run_single(resolved, point, cache)
        for family, k, value in result.report.rows():
            rows.append((lam, family, k, value))
    return rows


def run_sweep_lambda(config: RunConfig, grid: list[float]) -> list[tuple[float, str, int, float]]:
    if config.out_dir is None:
        raise ConfigError("sweep-lambda requires an output directory")
    resolved = load_and_resolve(config)
    rows = sweep_rows_lambda(resolved, config, grid)
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_sweep_csv(out / "sweep_lambda.csv", "lambda", rows)
    if config.figures:
        figures.render_sweep(rows, "lambda", out / "sweep_lambda.png")
    return rows


def sweep_rows_proxies(
    resolved: ResolvedDataset, config: RunConfig, max_proxies: int
) -> list[tuple[int, str, int, float]]:
    if max_proxies < 1:
        raise ConfigError(f"max proxies must be >= 1, got {max_proxies}")
    for record in resolved.manifest.queries:
        if len(record.proxy_images) < max_proxies:
            raise ProtocolError(
                f"query {record.query_id!r} has {len(record.proxy_images)} "
                f"proxies, sweep needs {max_proxies}"
            )
    s_t = text_score_matrix(resolved, config)
    rows = []
    for n in range(1, max_proxies + 1):
        cache = SimilarityCache(
            s_t=s_t, s_p=proxy_score_matrix(resolved, config, n), n_proxies=n
        )
        result = run_single(resolved, config, cache)
        for family, k, value in result.report.rows():
            rows.append((n, family, k, value))
    return rows


def run_sweep_proxies(config: RunConfig, max_proxies: int) -> list[tuple[int, str, int, float]]:
    if config.out_dir is None:
        raise ConfigError("sweep-proxies requires an output directory")
    resolved = load_and_resolve(config)
    rows = sweep_rows_proxies(resolved, config, max_proxies)
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_sweep_csv(out / "sweep_proxies.csv", "n_proxies", rows)
    if config.figures:
        figures.render_sweep(rows, "n_proxies", out / "sweep_proxies.png")
    return rows


def _write_sweep_csv(path: Path, x_name: str, rows: list[tuple]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([x_name, "metric", "k", "value"])
        for x, family, k, value in rows:
            writer.writerow([x, family, k, repr(value)])
