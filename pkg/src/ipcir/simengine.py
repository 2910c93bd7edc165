"""Gallery scoring, similarity balancing, and exact top-K ranking.

Determinism contract: scoring cuts the gallery axis into fixed-width
canonical tiles and always keeps the full query batch in one matrix
product per tile, writing disjoint output slices. The block-size knob only
groups canonical tiles into scheduling tasks, so every output element is
produced by an identically shaped product no matter the worker count or
block size. (Splitting the query axis, or letting the block size reach the
BLAS call, is NOT bit-stable and is deliberately avoided.)

Similarity balancing combines a text-side score vector S_t with a
proxy-side vector S_p as

    S_f = lambda * S_t + (1 - lambda) * S_t * S_p

so that candidates scoring well on both sides beat candidates that are
extreme on one side only. Scores are min-max normalized per query to [0, 1]
first (configurable), which keeps the product term sign-free.

Externally computed baseline score tables are interchanged as binary files:

    magic "IPCS" | version u32 | query count u64 | gallery count u64
    query_count x gallery_count float32 values, row-major, little-endian
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embed_store import EmbeddingSet, l2_normalize
from .errors import ArgumentError, DataError, FormatError, ShapeError

SCORE_MAGIC = b"IPCS"
SCORE_VERSION = 1
_SCORE_HEADER = struct.Struct("<4sIQQ")

DEFAULT_BLOCK = 8192
# Width of the canonical gallery tiles actually handed to BLAS; fixed so
# that results cannot depend on the public block-size knob.
_TILE = 4096

KIND_TEXT = "text"
KIND_PROXY = "proxy"
KIND_BALANCED = "balanced"
KIND_FINAL = "final"

NORM_MINMAX = "minmax_per_query"
NORM_NONE = "none"


@dataclass
class SimilarityVector:
    query_id: str
    scores: np.ndarray  # (gallery_count,) float32
    kind: str


@dataclass(frozen=True)
class BalanceParams:
    lam: float
    normalization: str = NORM_MINMAX

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ArgumentError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.normalization not in (NORM_MINMAX, NORM_NONE):
            raise ArgumentError(f"unknown normalization {self.normalization!r}")


@dataclass
class RankedList:
    query_id: str
    ids: list[str]
    scores: np.ndarray
    indices: np.ndarray

    def pairs(self) -> list[tuple[str, float]]:
        return [(i, float(s)) for i, s in zip(self.ids, self.scores)]


def resolve_threads(requested: int | None = None) -> int:
    """Thread count: explicit value, else IPCIR_THREADS, else cpu count."""
    if requested is not None:
        if requested < 1:
            raise ArgumentError(f"thread count must be >= 1, got {requested}")
        return requested
    env = os.environ.get("IPCIR_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ArgumentError(f"IPCIR_THREADS is not an integer: {env!r}") from None
        if value < 1:
            raise ArgumentError(f"IPCIR_THREADS must be >= 1, got {value}")
        return value
    return os.cpu_count() or 1


def score_matrix(
    queries: np.ndarray,
    gallery_units: np.ndarray,
    threads: int | None = None,
    block: int = DEFAULT_BLOCK,
) -> np.ndarray:
    """Dot products of query rows against gallery rows, (nq, ng) float32.

    Rows are used as given; normalize beforehand for cosine scores. The
    gallery is processed in canonical tiles grouped into tasks of roughly
    ``block`` rows, in parallel across tasks; see the module docstring for
    the determinism argument.
    """
    queries = np.ascontiguousarray(queries, dtype=np.float32)
    gallery_units = np.ascontiguousarray(gallery_units, dtype=np.float32)
    if queries.ndim != 2 or gallery_units.ndim != 2:
        raise ShapeError("score_matrix expects 2-D query and gallery matrices")
    if queries.shape[1] != gallery_units.shape[1]:
        raise ShapeError(
            f"query dim {queries.shape[1]} != gallery dim {gallery_units.shape[1]}"
        )
    if block < 1:
        raise ArgumentError(f"block size must be >= 1, got {block}")
    nq, ng = queries.shape[0], gallery_units.shape[0]
    out = np.empty((nq, ng), dtype=np.float32)
    tiles = [(start, min(start + _TILE, ng)) for start in range(0, ng, _TILE)]
    group = max(1, block // _TILE)
    tasks = [tiles[i : i + group] for i in range(0, len(tiles), group)]

    def score_task(task: list[tuple[int, int]]) -> None:
        for start, end in task:
            out[:, start:end] = queries @ gallery_units[start:end].T

    # Workers beyond the physical cores only contend with the BLAS threads;
    # clamping changes scheduling, never results.
    workers = min(resolve_threads(threads), os.cpu_count() or 1)
    if workers == 1 or len(tasks) == 1:
        for task in tasks:
            score_task(task)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(score_task, tasks))
    return out


def cosine_scores(
    query_vec: np.ndarray,
    gallery: EmbeddingSet,
    kind: str = KIND_PROXY,
    query_id: str = "",
    threads: int | None = None,
    block: int = DEFAULT_BLOCK,
) -> SimilarityVector:
    """Cosine similarity of one query vector against every gallery row.

    The query vector is unit-normalized here; gallery rows come from the
    set's cached unit matrix. A zero query yields all-zero scores.
    """
    query_vec = np.asarray(query_vec, dtype=np.float32)
    if query_vec.ndim != 1:
        raise ShapeError("cosine_scores expects a 1-D query vector")
    if query_vec.shape[0] != gallery.dim:
        raise ShapeError(f"query dim {query_vec.shape[0]} != gallery dim {gallery.dim}")
    unit, _ = l2_normalize(query_vec)
    scores = score_matrix(unit[None, :], gallery.unit_matrix, threads, block)[0]
    return SimilarityVector(query_id=query_id, scores=scores, kind=kind)


def minmax_rows(scores: np.ndarray) -> np.ndarray:
    """Affine map of each row onto [0, 1]; constant rows map to 0.5.

    Computed in float64 so that distinct float32 scores can never collapse
    onto one value: order within every row is preserved exactly.
    """
    arr = np.asarray(scores, dtype=np.float64)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[None, :]
    lo = arr.min(axis=1, keepdims=True)
    hi = arr.max(axis=1, keepdims=True)
    span = hi - lo
    flat = (span == 0.0).ravel()
    span[span == 0.0] = 1.0
    out = (arr - lo) / span
    out[flat, :] = 0.5
    return out[0] if squeeze else out


def minmax_normalize(s: SimilarityVector) -> SimilarityVector:
    return SimilarityVector(
        query_id=s.query_id, scores=minmax_rows(s.scores), kind=s.kind
    )


def balance_matrix(s_t: np.ndarray, s_p: np.ndarray, lam: float) -> np.ndarray:
    s_t = np.asarray(s_t)
    s_p = np.asarray(s_p)
    if s_t.shape != s_p.shape:
        raise ShapeError(f"score shapes disagree: {s_t.shape} vs {s_p.shape}")
    balanced = s_t * s_p
    return lam * s_t + (1.0 - lam) * balanced


def balance(
    s_t: SimilarityVector, s_p: SimilarityVector, params: BalanceParams
) -> SimilarityVector:
    """Combine text and proxy similarities into the final score vector.

    Inputs are expected on the scale implied by ``params.normalization``
    (apply ``minmax_normalize`` first for the min-max setting). lambda=1
    returns S_t exactly; lambda=0 returns the product S_t * S_p exactly.
    """
    scores = balance_matrix(s_t.scores, s_p.scores, params.lam)
    return SimilarityVector(query_id=s_t.query_id, scores=scores, kind=KIND_FINAL)


def top_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k best scores, descending, ties by ascending index."""
    if k < 1:
        raise ArgumentError(f"k must be >= 1, got {k}")
    n = scores.shape[0]
    if k >= n:
        return np.argsort(-scores, kind="stable")
    part = np.argpartition(-scores, k - 1)[:k]
    kth = scores[part].min()
    # Re-rank every candidate tied at the boundary so the index tie-break
    # is honored even when argpartition split a tie arbitrarily.
    candidates = np.flatnonzero(scores >= kth)
    order = np.argsort(-scores[candidates], kind="stable")
    return candidates[order[:k]]


def top_k(s: SimilarityVector, k: int, gallery_ids: list[str]) -> RankedList:
    """Exact top-k ranking of a similarity vector."""
    idx = top_indices(s.scores, k)
    return RankedList(
        query_id=s.query_id,
        ids=[gallery_ids[i] for i in idx],
        scores=s.scores[idx],
        indices=idx,
    )


def top_k_matrix(scores: np.ndarray, k: int) -> np.ndarray:
    """Row-wise ``top_indices`` over a score matrix, (nq, min(k, ng))."""
    if k < 1:
        raise ArgumentError(f"k must be >= 1, got {k}")
    nq, ng = scores.shape
    width = min(k, ng)
    out = np.empty((nq, width), dtype=np.int64)
    for i in range(nq):
        out[i] = top_indices(scores[i], k)
    return out


def write_score_table(path: str | Path, table: np.ndarray) -> None:
    table = np.ascontiguousarray(table, dtype="<f4")
    if table.ndim != 2:
        raise ShapeError("score table must be 2-D (queries x gallery)")
    with Path(path).open("wb") as fh:
        fh.write(
            _SCORE_HEADER.pack(SCORE_MAGIC, SCORE_VERSION, table.shape[0], table.shape[1])
        )
        fh.write(table.tobytes())


def load_score_table(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read score table {path}: {exc}") from exc
    if len(blob) < _SCORE_HEADER.size:
        raise FormatError(f"{path}: file shorter than header")
    magic, version, nq, ng = _SCORE_HEADER.unpack_from(blob)
    if magic != SCORE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != SCORE_VERSION:
        raise FormatError(f"{path}: unsupported score-table version {version}")
    expected = nq * ng * 4
    payload = len(blob) - _SCORE_HEADER.size
    if payload != expected:
        raise FormatError(f"{path}: payload is {payload} bytes, expected {expected}")
    table = np.frombuffer(blob, dtype="<f4", offset=_SCORE_HEADER.size).reshape(nq, ng)
    bad = ~np.isfinite(table).all(axis=1)
    if bad.any():
        raise DataError(f"{path}: non-finite scores in row {int(np.flatnonzero(bad)[0])}")
    return table
