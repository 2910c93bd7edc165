"""Embedding collections and dataset manifests.

Embeddings are 1-D float32 numpy arrays; collections are stored on disk in a
little-endian binary container:

    magic "IPCE" | version u32 | role u32 | dim u32 | count u64
    count null-terminated UTF-8 id strings
    count x dim float32 values, row-major

The on-disk matrix is preserved bit-exactly across a write/load round trip.
Unit-normalized rows (used for cosine scoring) and per-row max-|component|
statistics are derived lazily and cached; the raw matrix is never mutated.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ArgumentError,
    DataError,
    FormatError,
    ResolutionError,
    RoleError,
    ShapeError,
)

MAGIC = b"IPCE"
FORMAT_VERSION = 1
ZERO_NORM_EPS = 1e-12

_HEADER = struct.Struct("<4sIIIQ")


class Role(enum.IntEnum):
    GALLERY = 0
    QUERY_IMAGE = 1
    PROXY_IMAGE = 2
    TARGET_CAPTION = 3
    ORIGIN_CAPTION = 4
    BASELINE_TEXT = 5

    @classmethod
    def from_string(cls, name: str) -> "Role":
        try:
            return cls[name.upper()]
        except KeyError:
            raise ArgumentError(f"unknown embedding-set role: {name!r}") from None

    def __str__(self) -> str:
        return self.name.lower()


class MetricProtocol(enum.Enum):
    MULTI_TARGET_MAP = "multi_target_map"
    SINGLE_TARGET_RECALL = "single_target_recall"
    SUBSET_RECALL = "subset_recall"
    RECALL_ONLY = "recall_only"


def l2_normalize(v: np.ndarray) -> tuple[np.ndarray, bool]:
    """Unit-normalize a finite vector.

    Returns ``(unit_vector, False)``, or ``(v unchanged, True)`` when the
    Euclidean norm is below 1e-12. Zero vectors are legal inputs and are
    signaled, not rejected.
    """
    v = np.asarray(v, dtype=np.float32)
    norm = float(np.linalg.norm(v.astype(np.float64)))
    if norm < ZERO_NORM_EPS:
        return v, True
    return (v / np.float32(norm)).astype(np.float32), False


def l2_normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Row-wise unit normalization; zero rows are left as zero."""
    m = np.asarray(matrix, dtype=np.float32)
    norms = np.linalg.norm(m.astype(np.float64), axis=1, keepdims=True)
    norms[norms < ZERO_NORM_EPS] = 1.0
    return (m / norms.astype(np.float32)).astype(np.float32)


def mean_embedding(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Componentwise mean of the L2-normalized inputs.

    Zero vectors contribute zero rather than failing. The result is not
    re-normalized, so a singleton input reduces to ``l2_normalize``.
    """
    if len(vectors) == 0:
        raise ArgumentError("mean_embedding requires a non-empty vector list")
    dims = {np.asarray(v).shape[-1] for v in vectors}
    if len(dims) != 1:
        raise ShapeError(f"mean_embedding inputs have mixed dims: {sorted(dims)}")
    acc = np.zeros(dims.pop(), dtype=np.float64)
    for v in vectors:
        unit, _ = l2_normalize(v)
        acc += unit.astype(np.float64)
    return (acc / len(vectors)).astype(np.float32)


@dataclass
class EmbeddingSet:
    """An immutable collection of equally-sized float32 embeddings."""

    role: Role
    dim: int
    ids: list[str]
    matrix: np.ndarray  # (count, dim) float32, raw values as stored

    def __post_init__(self):
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float32)
        if self.dim < 1:
            raise DataError(f"embedding dim must be >= 1, got {self.dim}")
        if self.matrix.shape != (len(self.ids), self.dim):
            raise ShapeError(
                f"matrix shape {self.matrix.shape} does not match "
                f"{len(self.ids)} ids x dim {self.dim}"
            )
        if len(set(self.ids)) != len(self.ids):
            raise DataError(f"duplicate ids in {self.role} set")
        bad = ~np.isfinite(self.matrix).all(axis=1)
        if bad.any():
            offender = self.ids[int(np.flatnonzero(bad)[0])]
            raise DataError(
                f"non-finite values in {self.role} set at id {offender!r}"
            )

    @property
    def count(self) -> int:
        return len(self.ids)

    @cached_property
    def id_index(self) -> dict[str, int]:
        return {id_: i for i, id_ in enumerate(self.ids)}

    @cached_property
    def unit_matrix(self) -> np.ndarray:
        """Rows normalized to unit length (zero rows stay zero)."""
        return l2_normalize_rows(self.matrix)

    @cached_property
    def row_maxabs(self) -> np.ndarray:
        """Per-row max absolute component of the raw (pre-normalization) rows."""
        if self.count == 0:
            return np.zeros(0, dtype=np.float32)
        return np.abs(self.matrix).max(axis=1)

    def rows(self, ids: Iterable[str], *, unit: bool = True) -> np.ndarray:
        source = self.unit_matrix if unit else self.matrix
        index = self.id_index
        try:
            sel = [index[i] for i in ids]
        except KeyError as exc:
            raise ResolutionError(
                f"id {exc.args[0]!r} not found in {self.role} set"
            ) from None
        return source[sel]


def write_embedding_set(path: str | Path, eset: EmbeddingSet) -> None:
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(
            _HEADER.pack(MAGIC, FORMAT_VERSION, int(eset.role), eset.dim, eset.count)
        )
        for id_ in eset.ids:
            encoded = id_.encode("utf-8")
            if b"\x00" in encoded:
                raise DataError(f"id {id_!r} contains a NUL byte")
            fh.write(encoded + b"\x00")
        fh.write(np.ascontiguousarray(eset.matrix, dtype="<f4").tobytes())


def load_embedding_set(path: str | Path, expected_role: Role) -> EmbeddingSet:
    """Load and fully validate an embedding set file.

    Raises FormatError on a malformed header or truncated payload, DataError
    naming the offending id on non-finite rows, and RoleError when the file's
    role does not match ``expected_role``.
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read embedding set {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than header")
    magic, version, role_code, dim, count = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    try:
        role = Role(role_code)
    except ValueError:
        raise FormatError(f"{path}: unknown role code {role_code}") from None
    if dim < 1:
        raise FormatError(f"{path}: dim must be >= 1, got {dim}")

    ids: list[str] = []
    pos = _HEADER.size
    for _ in range(count):
        end = blob.find(b"\x00", pos)
        if end < 0:
            raise FormatError(f"{path}: truncated id table")
        try:
            ids.append(blob[pos:end].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: id table is not valid UTF-8") from exc
        pos = end + 1

    expected_bytes = count * dim * 4
    if len(blob) - pos != expected_bytes:
        raise FormatError(
            f"{path}: payload is {len(blob) - pos} bytes, expected {expected_bytes}"
        )
    matrix = np.frombuffer(blob, dtype="<f4", count=count * dim, offset=pos)
    matrix = matrix.reshape(count, dim)

    try:
        eset = EmbeddingSet(role=role, dim=dim, ids=ids, matrix=matrix)
    except DataError as exc:
        raise type(exc)(f"{path}: {exc}") from None
    if role != expected_role:
        raise RoleError(
            f"{path}: file has role {role}, expected {expected_role}"
        )
    return eset


@dataclass
class QueryRecord:
    """One retrieval query binding embedding references and ground truth."""

    query_id: str
    query_image: str
    proxy_images: list[str]
    target_captions: list[str]
    origin_captions: list[str]
    ground_truth: list[str]
    subset: list[str] | None = None
    exclude: list[str] | None = None
    baseline_row: int | None = None


@dataclass
class DatasetManifest:
    name: str
    metric_protocol: MetricProtocol
    sets: dict[Role, Path]
    queries: list[QueryRecord]
    baseline_scores: Path | None = None
    base_dir: Path = field(default_factory=Path)

    @property
    def gallery_ref(self) -> Path:
        return self.sets[Role.GALLERY]

    def resolve_path(self, p: Path) -> Path:
        return p if p.is_absolute() else self.base_dir / p


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise DataError(message)


def _str_list(value, what: str) -> list[str]:
    _require(
        isinstance(value, list) and all(isinstance(x, str) for x in value),
        f"{what} must be a list of strings",
    )
    return list(value)


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: manifest is not valid JSON: {exc}") from exc
    _require(isinstance(doc, dict), f"{path}: manifest root must be an object")
    for key in ("name", "metric_protocol", "sets", "queries"):
        _require(key in doc, f"{path}: manifest missing key {key!r}")
    try:
        protocol = MetricProtocol(doc["metric_protocol"])
    except ValueError:
        raise DataError(
            f"{path}: unknown metric_protocol {doc['metric_protocol']!r}"
        ) from None

    _require(isinstance(doc["sets"], dict), f"{path}: sets must be an object")
    sets: dict[Role, Path] = {}
    for role_name, set_path in doc["sets"].items():
        sets[Role.from_string(role_name)] = Path(set_path)
    _require(Role.GALLERY in sets, f"{path}: sets must name a gallery file")

    queries: list[QueryRecord] = []
    _require(isinstance(doc["queries"], list), f"{path}: queries must be a list")
    for i, raw in enumerate(doc["queries"]):
        _require(isinstance(raw, dict), f"{path}: query #{i} must be an object")
        where = f"{path}: query #{i}"
        for key in ("query_id", "query_image", "ground_truth"):
            _require(key in raw, f"{where} missing key {key!r}")
        record = QueryRecord(
            query_id=str(raw["query_id"]),
            query_image=str(raw["query_image"]),
            proxy_images=_str_list(raw.get("proxy_images", []), f"{where} proxy_images"),
            target_captions=_str_list(
                raw.get("target_captions", []), f"{where} target_captions"
            ),
            origin_captions=_str_list(
                raw.get("origin_captions", []), f"{where} origin_captions"
            ),
            ground_truth=_str_list(raw["ground_truth"], f"{where} ground_truth"),
            subset=(
                _str_list(raw["subset"], f"{where} subset")
                if raw.get("subset") is not None
                else None
            ),
            exclude=(
                _str_list(raw["exclude"], f"{where} exclude")
                if raw.get("exclude") is not None
                else None
            ),
            baseline_row=(
                int(raw["baseline_row"]) if raw.get("baseline_row") is not None else None
            ),
        )
        _require(record.ground_truth, f"{where}: ground_truth must be non-empty")
        queries.append(record)

    seen = set()
    for record in queries:
        _require(
            record.query_id not in seen, f"{path}: duplicate query_id {record.query_id!r}"
        )
        seen.add(record.query_id)

    baseline = doc.get("baseline_scores")
    return DatasetManifest(
        name=str(doc["name"]),
        metric_protocol=protocol,
        sets=sets,
        queries=queries,
        baseline_scores=Path(baseline) if baseline else None,
        base_dir=path.parent,
    )


@dataclass
class ResolvedDataset:
    """All embedding sets of a manifest, loaded, cross-checked, and indexed."""

    manifest: DatasetManifest
    sets: dict[Role, EmbeddingSet]
    baseline: np.ndarray | None  # (rows, gallery_count) float32, or None

    @property
    def gallery(self) -> EmbeddingSet:
        return self.sets[Role.GALLERY]

    @property
    def dim(self) -> int:
        return self.gallery.dim

    def set_for(self, role: Role) -> EmbeddingSet:
        try:
            return self.sets[role]
        except KeyError:
            raise ResolutionError(
                f"manifest {self.manifest.name!r} declares no {role} set"
            ) from None


def _check_refs(query_id: str, ids: Iterable[str], eset: EmbeddingSet, what: str):
    index = eset.id_index
    for id_ in ids:
        if id_ not in index:
            raise ResolutionError(
                f"query {query_id!r}: {what} id {id_!r} does not resolve "
                f"in the {eset.role} set"
            )


def resolve_manifest(manifest: DatasetManifest) -> ResolvedDataset:
    """Load every referenced set and validate all cross-references.

    Enforces one shared dim across roles, resolves every embedding id in
    every query record, and checks subset/ground-truth containment.
    """
    sets: dict[Role, EmbeddingSet] = {}
    for role, rel in manifest.sets.items():
        sets[role] = load_embedding_set(manifest.resolve_path(rel), role)

    dims = {role: s.dim for role, s in sets.items()}
    if len(set(dims.values())) > 1:
        detail = ", ".join(f"{role}={d}" for role, d in dims.items())
        raise ShapeError(f"embedding sets disagree on dim: {detail}")

    def set_or_fail(role: Role, query_id: str) -> EmbeddingSet:
        if role not in sets:
            raise ResolutionError(
                f"query {query_id!r} references the {role} set but the "
                f"manifest declares none"
            )
        return sets[role]

    gallery = sets[Role.GALLERY]
    for record in manifest.queries:
        qid = record.query_id
        _check_refs(qid, [record.query_image], set_or_fail(Role.QUERY_IMAGE, qid), "query_image")
        if record.proxy_images:
            _check_refs(qid, record.proxy_images, set_or_fail(Role.PROXY_IMAGE, qid), "proxy_image")
        if record.target_captions:
            _check_refs(qid, record.target_captions, set_or_fail(Role.TARGET_CAPTION, qid), "target_caption")
        if record.origin_captions:
            _check_refs(qid, record.origin_captions, set_or_fail(Role.ORIGIN_CAPTION, qid), "origin_caption")
        _check_refs(record.query_id, record.ground_truth, gallery, "ground_truth")
        if record.subset is not None:
            _check_refs(record.query_id, record.subset, gallery, "subset")
            missing = set(record.ground_truth) - set(record.subset)
            if missing:
                raise DataError(
                    f"query {record.query_id!r}: ground truth {sorted(missing)} "
                    f"not contained in its subset"
                )
        if record.exclude is not None:
            _check_refs(record.query_id, record.exclude, gallery, "exclude")

    baseline = None
    if manifest.baseline_scores is not None:
        from .simengine import load_score_table

        baseline = load_score_table(manifest.resolve_path(manifest.baseline_scores))
        if baseline.shape[1] != gallery.count:
            raise ShapeError(
                f"baseline table has {baseline.shape[1]} columns, "
                f"gallery has {gallery.count} items"
            )
        for i, record in enumerate(manifest.queries):
            row = record.baseline_row if record.baseline_row is not None else i
            if not 0 <= row < baseline.shape[0]:
                raise ResolutionError(
                    f"query {record.query_id!r}: baseline row {row} out of range "
                    f"(table has {baseline.shape[0]} rows)"
                )
    elif any(r.baseline_row is not None for r in manifest.queries):
        raise ResolutionError(
            "query records reference baseline rows but the manifest names "
            "no baseline_scores file"
        )

    return ResolvedDataset(manifest=manifest, sets=sets, baseline=baseline)
