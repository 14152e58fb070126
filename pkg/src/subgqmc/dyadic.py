"""Dyadic intervals, boxes, prefix corners, and decomposition matrices.

A prefix interval (0, l/2^h] splits into at most h dyadic intervals, one per
set bit of l. Collecting those covers for every grid prefix gives a sparse
0/1 matrix over (prefix row, dyadic-interval column) pairs. The filled
variant additionally populates the columns minimal covers never touch, using
the right-open sibling of each unused interval, which makes every column a
single consecutive run of rows. Runs are stored as (start, length) pairs, so
transposed products reduce to prefix sums.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np


class Openness(Enum):
    LEFT_OPEN = "left"
    RIGHT_OPEN = "right"


def num_intervals(h: int) -> int:
    """Number of dyadic intervals of level 0..h, i.e. 2^(h+1) - 1."""
    return 2 ** (h + 1) - 1


@dataclass(frozen=True)
class DyadicInterval:
    """One dyadic interval (l/2^j, (l+1)/2^j], or its right-open mirror.

    Parameters
    ----------
    level : int
        Resolution j >= 0; the interval has length 2^-j.
    index : int
        Position l within the level, 0 <= l < 2^j.
    openness : Openness
        LEFT_OPEN for (a, b], RIGHT_OPEN for [a, b).
    """

    level: int
    index: int
    openness: Openness = Openness.LEFT_OPEN

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("level must be non-negative")
        if not 0 <= self.index < 2 ** self.level:
            raise ValueError(f"index {self.index} out of range for level {self.level}")

    @property
    def left(self) -> float:
        return self.index / 2 ** self.level

    @property
    def right(self) -> float:
        return (self.index + 1) / 2 ** self.level

    @property
    def length(self) -> float:
        return 2.0 ** -self.level

    @property
    def parity(self) -> str:
        """Sibling-pair parity: "odd" for the leftmost of each pair."""
        return "odd" if self.index % 2 == 0 else "even"

    def sibling(self) -> "DyadicInterval":
        if self.level == 0:
            raise ValueError("level-0 interval has no sibling")
        return DyadicInterval(self.level, self.index ^ 1, self.openness)

    def contains(self, x: float) -> bool:
        if self.openness is Openness.LEFT_OPEN:
            return self.left < x <= self.right
        return self.left <= x < self.right

    def flat_id(self) -> int:
        """Position in the level-major, index-minor enumeration of levels 0..level."""
        return 2 ** self.level - 1 + self.index


@dataclass(frozen=True)
class DyadicBox:
    """Axis-aligned product of per-dimension dyadic intervals."""

    dims: tuple[DyadicInterval, ...]

    def __init__(self, dims: Iterable[DyadicInterval]):
        object.__setattr__(self, "dims", tuple(dims))

    @property
    def d(self) -> int:
        return len(self.dims)

    def contains(self, point: Sequence[float]) -> bool:
        return all(iv.contains(x) for iv, x in zip(self.dims, point))

    def volume(self) -> float:
        v = 1.0
        for iv in self.dims:
            v *= iv.length
        return v

    def flat_id(self, h: int) -> int:
        """Mixed-radix id over the d-fold product of level-0..h enumerations."""
        base = num_intervals(h)
        out = 0
        for iv in self.dims:
            if iv.level > h:
                raise ValueError("interval level exceeds box space resolution")
            out = out * base + iv.flat_id()
        return out


@dataclass(frozen=True)
class Corner:
    """Anchored box (0, z_1] x ... x (0, z_d] with z on the 2^-h grid.

    A zero coordinate makes the corner empty.
    """

    anchor: tuple[float, ...]
    h: int

    def __init__(self, anchor: Sequence[float], h: int):
        anchor = tuple(float(z) for z in anchor)
        scale = 2 ** h
        for z in anchor:
            if not 0.0 <= z <= 1.0:
                raise ValueError("corner anchor outside unit cube")
            if z * scale != round(z * scale):
                raise ValueError("corner anchor not on the 2^-h grid")
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "h", h)

    @property
    def d(self) -> int:
        return len(self.anchor)

    def volume(self) -> float:
        v = 1.0
        for z in self.anchor:
            v *= z
        return v

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Vectorized membership for an (m, d) array of points."""
        pts = np.atleast_2d(points)
        z = np.asarray(self.anchor)
        return np.all((pts > 0.0) & (pts <= z), axis=1)


def enumerate_dyadic(h: int, openness: Openness = Openness.LEFT_OPEN) -> list[DyadicInterval]:
    """All dyadic intervals of level 0..h, level-major then index-minor."""
    if h < 0:
        raise ValueError("h must be non-negative")
    return [
        DyadicInterval(j, l, openness)
        for j in range(h + 1)
        for l in range(2 ** j)
    ]


def decompose_prefix(z: float, h: int) -> list[DyadicInterval]:
    """Minimal disjoint dyadic cover of the prefix (0, z] for z = l/2^h.

    One interval per set bit of l, highest level of resolution last. l = 0
    gives the empty list; l = 2^h (the full prefix) gives the single level-0
    interval.

    Raises
    ------
    ValueError
        If z is not a multiple of 2^-h ("off-grid prefix").
    """
    scaled = z * 2 ** h
    l = int(round(scaled))
    if scaled != l or not 0 <= l <= 2 ** h:
        raise ValueError(f"off-grid prefix: {z!r} is not l/2^{h} with 0 <= l <= 2^{h}")
    out = []
    for j in range(h + 1):
        top = l >> (h - j)
        if top & 1:
            out.append(DyadicInterval(j, top - 1))
    return out


@dataclass(frozen=True)
class DecompositionMatrix:
    """Sparse 0/1 matrix from grid prefixes to dyadic intervals.

    Rows are the 2^h prefixes (0, l/2^h], l = 0..2^h-1. Columns are the
    dyadic intervals of level 1..h in level-major order; the level-0 interval
    is excluded from the column space entirely. Each column is one
    consecutive run of ones, stored as (start, length); unfilled matrices
    simply have zero-length runs in the sibling columns that no minimal
    cover uses.
    """

    h: int
    run_start: np.ndarray = field(repr=False)
    run_len: np.ndarray = field(repr=False)
    filled: bool = False

    @property
    def n_rows(self) -> int:
        return 2 ** self.h

    @property
    def n_cols(self) -> int:
        return 2 ** (self.h + 1) - 2

    def column_interval(self, c: int) -> DyadicInterval:
        """The (left-open) dyadic interval labeling column c."""
        if not 0 <= c < self.n_cols:
            raise IndexError("column out of range")
        j = int(c + 2).bit_length() - 1
        return DyadicInterval(j, c + 2 - 2 ** j)

    def column_of(self, interval: DyadicInterval) -> int:
        if interval.level < 1 or interval.level > self.h:
            raise ValueError("interval outside column space")
        return 2 ** interval.level - 2 + interval.index

    def run_interval(self, c: int) -> DyadicInterval | None:
        """The right-open interval whose grid points form column c's run."""
        if self.run_len[c] == 0:
            return None
        iv = self.column_interval(c)
        return DyadicInterval(iv.level, iv.index ^ 1, Openness.RIGHT_OPEN)

    def apply_transpose(self, u: np.ndarray) -> np.ndarray:
        """Column sums of u over each run, via one prefix-sum pass."""
        u = np.asarray(u)
        if u.shape[0] != self.n_rows:
            raise ValueError("vector length does not match row count")
        cs = np.concatenate([np.zeros(1, dtype=u.dtype), np.cumsum(u)])
        return cs[self.run_start + self.run_len] - cs[self.run_start]

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v)
        if v.shape[0] != self.n_cols:
            raise ValueError("vector length does not match column count")
        out = np.zeros(self.n_rows, dtype=np.result_type(v.dtype, np.float64))
        for c in range(self.n_cols):
            L = self.run_len[c]
            if L:
                s = self.run_start[c]
                out[s:s + L] += v[c]
        return out

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.n_rows, self.n_cols), dtype=np.int8)
        for c in range(self.n_cols):
            s, L = self.run_start[c], self.run_len[c]
            dense[s:s + L, c] = 1
        return dense

    def to_json(self) -> str:
        """Serialize as {h, columns:[{interval:{level,index,open}, run:{start,len}}]}.

        The interval field carries the column's label (always left-open);
        run gives the consecutive row range holding ones.
        """
        cols = []
        for c in range(self.n_cols):
            iv = self.column_interval(c)
            cols.append({
                "interval": {"level": iv.level, "index": iv.index, "open": iv.openness.value},
                "run": {"start": int(self.run_start[c]), "len": int(self.run_len[c])},
            })
        return json.dumps({"h": self.h, "columns": cols})

    @classmethod
    def from_json(cls, text: str) -> "DecompositionMatrix":
        obj = json.loads(text)
        h = obj["h"]
        n_cols = 2 ** (h + 1) - 2
        if len(obj["columns"]) != n_cols:
            raise ValueError("column count does not match h")
        start = np.zeros(n_cols, dtype=np.int64)
        length = np.zeros(n_cols, dtype=np.int64)
        for c, col in enumerate(obj["columns"]):
            iv = col["interval"]
            j = int(c + 2).bit_length() - 1
            if iv["level"] != j or iv["index"] != c + 2 - 2 ** j:
                raise ValueError("columns out of canonical order")
            start[c] = col["run"]["start"]
            length[c] = col["run"]["len"]
        filled = bool(np.all(length > 0))
        return cls(h=h, run_start=start, run_len=length, filled=filled)


def _runs(h: int, fill_unused: bool) -> tuple[np.ndarray, np.ndarray]:
    n_cols = 2 ** (h + 1) - 2
    start = np.zeros(n_cols, dtype=np.int64)
    length = np.zeros(n_cols, dtype=np.int64)
    c = 0
    for j in range(1, h + 1):
        w = 2 ** (h - j)
        for l in range(2 ** j):
            start[c] = (l ^ 1) * w
            if l % 2 == 0 or fill_unused:
                length[c] = w
            c += 1
    return start, length


def build_decomposition_matrix(h: int) -> DecompositionMatrix:
    """Matrix whose row l is the minimal dyadic cover of (0, l/2^h].

    Columns labeled by intervals with odd parity (leftmost siblings) hold one
    run each; the sibling columns are identically zero because no minimal
    cover ever uses a rightmost sibling below its parent's right edge.
    """
    start, length = _runs(h, fill_unused=False)
    return DecompositionMatrix(h=h, run_start=start, run_len=length, filled=False)


def build_filled_decomposition_matrix(h: int) -> DecompositionMatrix:
    """Like :func:`build_decomposition_matrix`, with the unused columns filled.

    Each zero column (label interval I with even parity) is replaced by ones
    at the rows whose grid point lies in the right-open sibling of I. Every
    column then holds exactly one run of 2^(h-j) ones at level j, and the
    runs, read as right-open intervals, tile [0, 1) level by level.
    """
    start, length = _runs(h, fill_unused=True)
    return DecompositionMatrix(h=h, run_start=start, run_len=length, filled=True)


def incidence_vector(point: Sequence[float], h: int) -> np.ndarray:
    """Sorted flat ids of every dyadic box of level <= h containing the point.

    The id space is the d-fold mixed-radix product of the level-major
    interval enumeration, matching DyadicBox.flat_id. Exactly (h+1)^d ids
    come back: one interval per level per dimension.
    """
    pt = np.atleast_1d(np.asarray(point, dtype=np.float64))
    if np.any(pt < 0.0) or np.any(pt >= 1.0):
        raise ValueError("point must lie in [0, 1)^d")
    levels = np.arange(h + 1)
    width = 2 ** levels
    # per-dim interval ids, shape (d, h+1)
    cell = np.minimum((pt[:, None] * width).astype(np.int64), width - 1)
    ids = (width - 1) + cell
    flat = ids[0]
    base = num_intervals(h)
    for k in range(1, pt.shape[0]):
        flat = (flat[:, None] * base + ids[k][None, :]).ravel()
    return np.sort(flat)
