"""Robust proxy feature construction.

The image-side retrieval vector combines three signals: the proxy image
feature, the query image feature, and a semantic perturbation (the
difference between target-caption and origin-caption features, encoding the
edit direction). The query and perturbation terms are rescaled so their
magnitudes match the proxy term:

    f_RP = w_p * f_p
         + w_q * (maxabs(f_p) / maxabs(f_q)) * f_q
         + w_s * (maxabs(f_p) / maxabs(f_s)) * f_s

where maxabs is the largest absolute component. A scale factor whose
denominator vanishes is 0, dropping that term; an all-zero proxy feature
degrades gracefully (both remaining terms then drop too) with a warning.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embed_store import mean_embedding
from .errors import ArgumentError, DegenerateProxyWarning, ShapeError

ZERO_DENOM_EPS = 1e-12

MAX_MODE_MAXABS = "maxabs"
MAX_MODE_SIGNED = "signed"

AGG_MEAN = "mean_embedding"
AGG_PER_PROXY = "per_proxy"


@dataclass(frozen=True)
class FusionWeights:
    """Per-term multipliers; (1, 1, 1) reproduces the unweighted combination."""

    w_q: float = 1.0
    w_s: float = 1.0
    w_p: float = 1.0

    def __post_init__(self):
        for name, value in (("w_q", self.w_q), ("w_s", self.w_s), ("w_p", self.w_p)):
            if not np.isfinite(value) or value < 0:
                raise ArgumentError(f"fusion weight {name} must be finite and >= 0")


@dataclass
class FusionInputs:
    f_p: np.ndarray  # proxy image feature
    f_q: np.ndarray  # query image feature
    f_t: np.ndarray  # aggregated target-caption feature
    f_o: np.ndarray  # aggregated origin-caption feature

    def __post_init__(self):
        dims = {v.shape[-1] for v in (self.f_p, self.f_q, self.f_t, self.f_o)}
        if len(dims) != 1:
            raise ShapeError(f"fusion inputs have mixed dims: {sorted(dims)}")


@dataclass
class RobustProxy:
    vector: np.ndarray
    scale_q: float  # factor applied to the query term
    scale_s: float  # factor applied to the perturbation term


def semantic_perturbation(f_t: np.ndarray, f_o: np.ndarray) -> np.ndarray:
    """Componentwise f_t - f_o; may legitimately be the zero vector."""
    f_t = np.asarray(f_t, dtype=np.float32)
    f_o = np.asarray(f_o, dtype=np.float32)
    if f_t.shape != f_o.shape:
        raise ShapeError(f"perturbation inputs disagree: {f_t.shape} vs {f_o.shape}")
    return f_t - f_o


def scale_factor(
    numerator: np.ndarray, denominator: np.ndarray, mode: str = MAX_MODE_MAXABS
) -> float:
    """Magnitude-matching ratio between two feature vectors.

    ``maxabs`` mode uses the largest absolute component (infinity norm);
    ``signed`` uses the plain maximum. Returns 0 when the denominator
    statistic is below 1e-12, which drops the scaled term.
    """
    numerator = np.asarray(numerator, dtype=np.float32)
    denominator = np.asarray(denominator, dtype=np.float32)
    if numerator.shape != denominator.shape:
        raise ShapeError(
            f"scale_factor inputs disagree: {numerator.shape} vs {denominator.shape}"
        )
    if mode == MAX_MODE_MAXABS:
        num = float(np.abs(numerator).max()) if numerator.size else 0.0
        den = float(np.abs(denominator).max()) if denominator.size else 0.0
    elif mode == MAX_MODE_SIGNED:
        num = float(numerator.max()) if numerator.size else 0.0
        den = float(denominator.max()) if denominator.size else 0.0
    else:
        raise ArgumentError(f"unknown scale-factor mode {mode!r}")
    if abs(den) < ZERO_DENOM_EPS:
        return 0.0
    return num / den


def robust_proxy(
    inputs: FusionInputs,
    weights: FusionWeights = FusionWeights(),
    max_mode: str = MAX_MODE_MAXABS,
) -> RobustProxy:
    """Combine proxy, query, and perturbation features into one vector.

    With default weights this is exactly the three-term sum documented in
    the module docstring, evaluated in float32 in that term order.
    """
    f_p = np.asarray(inputs.f_p, dtype=np.float32)
    f_q = np.asarray(inputs.f_q, dtype=np.float32)
    f_s = semantic_perturbation(inputs.f_t, inputs.f_o)
    if f_p.shape != f_q.shape or f_p.shape != f_s.shape:
        raise ShapeError("fusion inputs disagree on dim")

    if f_p.size and float(np.abs(f_p).max()) < ZERO_DENOM_EPS:
        warnings.warn(
            "all-zero proxy feature: query and perturbation terms vanish",
            DegenerateProxyWarning,
            stacklevel=2,
        )
    a_q = scale_factor(f_p, f_q, max_mode)
    a_s = scale_factor(f_p, f_s, max_mode)

    vector = (
        np.float32(weights.w_p) * f_p
        + np.float32(weights.w_q * a_q) * f_q
        + np.float32(weights.w_s * a_s) * f_s
    )
    return RobustProxy(vector=vector, scale_q=a_q, scale_s=a_s)


def aggregate_proxies(
    proxies: Sequence[np.ndarray], mode: str = AGG_MEAN
) -> np.ndarray | list[np.ndarray]:
    """Reduce a query's proxy embeddings for fusion.

    ``mean_embedding`` averages the unit-normalized proxies into one vector
    (one fusion per query); ``per_proxy`` returns the list unchanged for
    downstream per-proxy similarity averaging.
    """
    if len(proxies) == 0:
        raise ArgumentError("aggregate_proxies requires at least one proxy")
    if mode == AGG_MEAN:
        return mean_embedding(proxies)
    if mode == AGG_PER_PROXY:
        return [np.asarray(p, dtype=np.float32) for p in proxies]
    raise ArgumentError(f"unknown proxy aggregation mode {mode!r}")
