"""Subgaussian vector balancing.

Assigns +-1 colors to a stream of sparse vectors so the running signed sum
stays small along every coordinate. The walk biases each color against the
current drift: a vector whose alignment with the accumulated sum is lambda
gets color -1 with probability 1/2 + lambda/(2c). The paired variant colors
difference vectors and expands each pair color into (+y, -y), which makes
the output exactly balanced.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MGF_SCALES = (0.25, 0.5, 1.0, 2.0)
EXP_OVERFLOW_LIMIT = 700.0  # exp argument beyond this would overflow float64


class WalkFailure(RuntimeError):
    """Drift exceeded the walk threshold; the subgaussian guarantee is void."""


@dataclass(frozen=True)
class SparseVector:
    """Sparse real vector with strictly increasing indices and no stored zeros.

    dim is the logical dimension, which may vastly exceed the number of
    stored entries.
    """

    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValueError("indices and values must be 1-d and congruent")
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= self.dim):
            raise ValueError("indices must be strictly increasing within [0, dim)")
        if np.any(val == 0.0):
            raise ValueError("zero values must not be stored")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.values ** 2)))


@dataclass(frozen=True)
class ColorVector:
    colors: np.ndarray

    def __post_init__(self):
        col = np.asarray(self.colors, dtype=np.int8)
        if col.ndim != 1 or not np.all(np.abs(col) == 1):
            raise ValueError("colors must be a 1-d array of +-1")
        object.__setattr__(self, "colors", col)

    def __len__(self) -> int:
        return int(self.colors.size)

    @property
    def is_balanced(self) -> bool:
        return int(self.colors.sum()) == 0


@dataclass
class WalkState:
    """Mutable walk bookkeeping: accumulator, threshold, failure, op count."""

    c: float
    accumulator: dict = field(default_factory=dict)
    failed: bool = False
    failed_at: int = -1
    nnz_processed: int = 0

    def drift(self, index: int) -> float:
        return self.accumulator.get(index, 0.0)

    def max_abs_drift(self) -> float:
        if not self.accumulator:
            return 0.0
        return max(abs(v) for v in self.accumulator.values())


def pair_difference(a: SparseVector, b: SparseVector) -> SparseVector:
    """(a - b)/2 with exact cancellation of shared equal entries."""
    if a.dim != b.dim:
        raise ValueError("dimension mismatch")
    idx = np.union1d(a.indices, b.indices)
    vals = np.zeros(idx.size, dtype=np.float64)
    vals[np.searchsorted(idx, a.indices)] += a.values
    vals[np.searchsorted(idx, b.indices)] -= b.values
    vals *= 0.5
    keep = vals != 0.0
    return SparseVector(idx[keep], vals[keep], a.dim)


def self_balancing_walk(
    vectors: Iterable[SparseVector], c: float, rng: np.random.Generator
) -> tuple[ColorVector | None, WalkState]:
    """Color a stream of vectors, biasing against the accumulated drift.

    Parameters
    ----------
    vectors : iterable of SparseVector
        Each must have euclidean norm at most 1.
    c : float
        Drift threshold; colors stay symmetric and the signed sum stays
        c-bounded coordinatewise unless the (polynomially unlikely) failure
        event occurs.
    rng : numpy Generator
        One uniform is consumed per vector, in stream order.

    Returns
    -------
    (ColorVector | None, WalkState)
        The coloring, or None if the walk failed; state carries the final
        accumulator, the failure flag/position, and the processed-entry
        counter used by the runtime-linearity checks.
    """
    if c <= 0:
        raise ValueError("threshold c must be positive")
    state = WalkState(c=float(c))
    acc = state.accumulator
    colors = []
    for t, v in enumerate(vectors):
        lam = 0.0
        for i, val in zip(v.indices.tolist(), v.values.tolist()):
            lam += acc.get(i, 0.0) * val
        state.nnz_processed += v.nnz
        if abs(lam) > c:
            state.failed = True
            state.failed_at = t
            return None, state
        p_minus = 0.5 + lam / (2.0 * c)
        x = -1 if rng.random() < p_minus else 1
        colors.append(x)
        for i, val in zip(v.indices.tolist(), v.values.tolist()):
            acc[i] = acc.get(i, 0.0) + x * val
        state.nnz_processed += v.nnz
    return ColorVector(np.array(colors, dtype=np.int8)), state


def balanced_coloring(
    vectors: Sequence[SparseVector], c: float, rng: np.random.Generator
) -> ColorVector:
    """Exactly balanced coloring via pairwise differencing.

    Adjacent vectors are paired, the walk colors the half-difference
    (v1 - v2)/2 of each pair, and pair color y expands to (y, -y). The sum
    of the output colors is zero by construction.

    Raises
    ------
    ValueError
        If the number of vectors is odd ("unbalanced input").
    WalkFailure
        If the underlying walk fails; the caller owns retry policy.
    """
    n = len(vectors)
    if n % 2 != 0:
        raise ValueError("unbalanced input: need an even number of vectors")
    diffs = (pair_difference(vectors[2 * i], vectors[2 * i + 1]) for i in range(n // 2))
    pair_colors, state = self_balancing_walk(diffs, c, rng)
    if state.failed:
        raise WalkFailure(f"drift exceeded c={c:g} at pair {state.failed_at}")
    out = np.empty(n, dtype=np.int8)
    out[0::2] = pair_colors.colors
    out[1::2] = -pair_colors.colors
    return ColorVector(out)


def mgf_profile(
    samples: np.ndarray,
    directions: int = 32,
    rng: np.random.Generator | None = None,
    scales: Sequence[float] = MGF_SCALES,
    extra_directions: np.ndarray | None = None,
) -> list[tuple[int, float, float]]:
    """Per-direction, per-scale subgaussian-constant estimates.

    For each unit direction theta and scale s, forms the plug-in bound
    2 * ln(mean exp(s * <u, theta>)) / s^2. Directions are random unit
    vectors; rows of extra_directions (normalized here) are appended,
    which lets callers probe a suspected bad direction such as all-ones.
    Direction/scale pairs whose exponential would overflow are skipped
    and reported via a warning. Returns (direction_id, scale, estimate)
    rows, extra directions last.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 100:
        raise ValueError("need at least 100 sample vectors (rows)")
    m = samples.shape[1]
    rng = np.random.default_rng() if rng is None else rng
    theta = rng.standard_normal((directions, m))
    if extra_directions is not None:
        theta = np.vstack([theta, np.atleast_2d(np.asarray(extra_directions, dtype=np.float64))])
    theta /= np.linalg.norm(theta, axis=1, keepdims=True)
    proj = samples @ theta.T  # (N, D)
    rows = []
    skipped = 0
    for j in range(theta.shape[0]):
        for s in scales:
            arg = s * proj[:, j]
            if np.max(np.abs(arg)) > EXP_OVERFLOW_LIMIT:
                skipped += 1
                continue
            mgf = float(np.mean(np.exp(arg)))
            rows.append((j, float(s), 2.0 * np.log(mgf) / s ** 2))
    if skipped:
        warnings.warn(f"subgaussian estimator: skipped {skipped} "
                      "direction/scale pairs (exp overflow)")
    return rows


def empirical_subgaussian_constant(
    samples: np.ndarray,
    directions: int = 32,
    rng: np.random.Generator | None = None,
    scales: Sequence[float] = MGF_SCALES,
    extra_directions: np.ndarray | None = None,
) -> float:
    """Max of :func:`mgf_profile` over the direction/scale grid, floored at 0."""
    rows = mgf_profile(samples, directions, rng, scales, extra_directions)
    if not rows:
        return 0.0
    return max(0.0, max(est for _, _, est in rows))
