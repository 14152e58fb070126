"""Continuous and combinatorial discrepancy, and adversarial colorings.

Combinatorial discrepancy here always means the signed imbalance of a
two-coloring (equivalently, of a parent/child split) over a region;
continuous discrepancy compares a point count against the region volume.
The module also carries the two hand-built colorings that separate
prefix-indexed from dyadic-indexed subgaussianity: a paired 1-d coloring
whose prefix discrepancies are perfectly correlated, and a 2-d layout
whose corner sums are forced to +-n.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence, Union

import numpy as np

from .balancing import ColorVector
from .dyadic import Corner, DyadicBox, DyadicInterval, decompose_prefix, num_intervals

if TYPE_CHECKING:  # pragma: no cover
    from .transference import PartitionTree


# ---------------------------------------------------------------------------
# index spaces and discrepancy vectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DyadicBoxSpace:
    """All d-fold products of dyadic intervals of level <= h."""
    h: int
    d: int

    @property
    def size(self) -> int:
        return num_intervals(self.h) ** self.d


@dataclass(frozen=True)
class PrefixSpace:
    """Prefixes (0, l/2^h] for l = 0..2^h - 1."""
    h: int

    @property
    def size(self) -> int:
        return 2 ** self.h


@dataclass(frozen=True)
class CornerSpace:
    """Anchored boxes with anchors on the d-dimensional 2^-h grid."""
    h: int
    d: int

    @property
    def size(self) -> int:
        return (2 ** self.h) ** self.d


IndexSpace = Union[DyadicBoxSpace, PrefixSpace, CornerSpace]


@dataclass(frozen=True)
class DiscrepancyVector:
    """Sparse map from region ids to discrepancy values.

    Combinatorial vectors hold integers; continuous ones hold reals. Region
    ids address the declared index space (flat ids for dyadic boxes, grid
    index l for prefixes/corners).
    """

    index_space: IndexSpace
    values: dict

    def get(self, region_id: int):
        return self.values.get(region_id, 0)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.index_space.size)
        for rid, v in self.values.items():
            out[rid] = v
        return out

    @property
    def integer_valued(self) -> bool:
        return all(float(v).is_integer() for v in self.values.values())


# ---------------------------------------------------------------------------
# membership and discrepancy primitives
# ---------------------------------------------------------------------------

def region_mask(region, points: np.ndarray) -> np.ndarray:
    """Boolean membership of each point (row) in the region."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if isinstance(region, Corner):
        return region.contains(pts)
    if isinstance(region, DyadicInterval):
        region = DyadicBox([region])
    if isinstance(region, DyadicBox):
        mask = np.ones(pts.shape[0], dtype=bool)
        for j, iv in enumerate(region.dims):
            x = pts[:, j]
            if iv.openness.value == "left":
                mask &= (x > iv.left) & (x <= iv.right)
            else:
                mask &= (x >= iv.left) & (x < iv.right)
        return mask
    raise TypeError(f"unsupported region type {type(region).__name__}")


def _as_rows(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    return pts


def comb_disc(parent: np.ndarray, child: np.ndarray, region) -> int:
    """|region ∩ parent| - 2 |region ∩ child| for a split child ⊆ parent."""
    parent = _as_rows(parent)
    child = _as_rows(child)
    parent_rows = {p.tobytes() for p in parent}
    for row in child:
        if row.tobytes() not in parent_rows:
            raise ValueError("child is not a subset of parent")
    return int(region_mask(region, parent).sum()) - 2 * int(region_mask(region, child).sum())


def coloring_disc(points: np.ndarray, colors: ColorVector | np.ndarray, region) -> int:
    """Signed color sum over the region; equals comb_disc against the -1 side."""
    cols = colors.colors if isinstance(colors, ColorVector) else np.asarray(colors)
    pts = _as_rows(points)
    if cols.shape[0] != pts.shape[0]:
        raise ValueError("one color per point required")
    return int(cols[region_mask(region, pts)].sum())


def continuous_disc(A: np.ndarray, corner: Corner) -> float:
    """|A| * vol(corner) - |A ∩ corner|."""
    pts = _as_rows(A)
    return pts.shape[0] * corner.volume() - int(corner.contains(pts).sum())


# ---------------------------------------------------------------------------
# star discrepancy
# ---------------------------------------------------------------------------

def _star_disc_exact_1d(x: np.ndarray) -> float:
    n = x.shape[0]
    pos = x[x > 0.0]  # corners are left-open, a point at 0 is never inside
    u, counts = np.unique(pos, return_counts=True)
    c_at = np.cumsum(counts)
    c_below = c_at - counts
    dev = np.maximum(np.abs(n * u - c_at), np.abs(n * u - c_below))
    # past the largest point the count is fixed; |D| there peaks at z=1
    tail = abs(n * 1.0 - pos.shape[0])
    return float(max(dev.max(initial=0.0), tail))


def _candidates_1d(coords: np.ndarray, h: int) -> np.ndarray:
    grid = np.arange(1, 2 ** h + 1) / 2 ** h
    vals = np.concatenate([coords, np.nextafter(coords, -1.0), grid])
    vals = vals[(vals > 0.0) & (vals <= 1.0)]
    return np.unique(vals)


def star_disc(A: np.ndarray, mode: str = "exact", h: int | None = None) -> float:
    """Unnormalized star discrepancy max_z |n vol(C_z) - |A ∩ C_z||.

    mode="exact" sweeps all critical anchors, 1-d only. mode="grid"
    evaluates anchors built from point coordinates and 2^-h grid lines,
    a documented lower bound in d >= 2.
    """
    pts = _as_rows(A)
    n, d = pts.shape
    if mode == "exact":
        if d != 1:
            raise ValueError("exact star discrepancy unsupported above 1-d")
        return _star_disc_exact_1d(pts[:, 0])
    if mode != "grid":
        raise ValueError(f"unknown mode {mode!r}")
    if h is None:
        h = max(1, int(np.ceil(np.log2(max(n, 2)))))
    if d == 1:
        cands = _candidates_1d(pts[:, 0], h)
        xs = np.sort(pts[:, 0])
        counts = np.searchsorted(xs, cands, side="right")
        return float(np.abs(n * cands - counts).max())
    axes = [_candidates_1d(pts[:, j], h) for j in range(d)]
    best = 0.0

    def recurse(j, mask, vol):
        nonlocal best
        if j == d - 1:
            sel = np.sort(pts[mask, -1])
            counts = np.searchsorted(sel, axes[j], side="right")
            dev = np.abs(n * vol * axes[j] - counts)
            best = max(best, float(dev.max()))
            return
        x = pts[:, j]
        for z in axes[j]:
            recurse(j + 1, mask & (x <= z), vol * z)

    recurse(0, (pts > 0.0).all(axis=1), 1.0)
    return best


# ---------------------------------------------------------------------------
# telescoping identity
# ---------------------------------------------------------------------------

def _corner_box_ids(corner: Corner, h: int) -> list[tuple[int, int]]:
    """Flat ids and (for bookkeeping) nothing else: every dyadic box in the
    per-dimension prefix decomposition of the corner, as (flat_id, 1) pairs.
    Empty when any coordinate is 0."""
    per_dim = []
    base = num_intervals(h)
    for z in corner.anchor:
        ivs = decompose_prefix(z, h)
        if not ivs:
            return []
        per_dim.append([iv.flat_id() for iv in ivs])
    flat = [0]
    for ids in per_dim:
        flat = [f * base + i for f in flat for i in ids]
    return [(f, 1) for f in flat]


def telescoping_check(tree: "PartitionTree", regions: Sequence[Corner],
                      leaf: int = 0) -> float:
    """Max residual of the level-by-level discrepancy telescoping identity.

    Walks the root-to-leaf path for the given leaf index and checks, for
    every corner, that the leaf's volume deviation equals the root's plus
    the accumulated per-split discrepancies divided by the parent sizes.
    Counts and recorded discrepancies are integers, so the residual is pure
    float arithmetic and must sit at the 1e-12 scale.
    """
    if tree.disc_records is None:
        raise ValueError("telescoping_check requires a tree built with discrepancy recording")
    cfg = tree.config
    T = cfg.T
    folded = tree.folded_points
    resid = 0.0
    for corner in regions:
        if corner.d != cfg.d:
            raise ValueError("corner dimension does not match tree")
        box_ids = _corner_box_ids(corner, cfg.h)
        vol = corner.volume()
        idx0 = tree.levels[0][0]
        h0 = vol - int(corner.contains(folded[idx0]).sum()) / idx0.size
        idxT = tree.levels[T][leaf]
        hT = vol - int(corner.contains(folded[idxT]).sum()) / idxT.size
        acc = 0.0
        for t in range(T):
            parent = leaf >> (T - t)
            child = leaf >> (T - t - 1)
            rec = tree.disc_records[(t, parent)]
            disc = sum(rec.get(fid) for fid, _ in box_ids)
            if child != 2 * parent:  # right child: recorded sign flips
                disc = -disc
            acc += disc / tree.levels[t][parent].size
        resid = max(resid, abs(hT - h0 - acc))
    return resid


# ---------------------------------------------------------------------------
# adversarial constructions
# ---------------------------------------------------------------------------

def paired_prefix_coloring(n: int, rng: np.random.Generator
                           ) -> tuple[np.ndarray, ColorVector, DiscrepancyVector]:
    """1-d coloring with perfectly correlated prefix discrepancies.

    Places one point at the midpoint of each of 2n equal cells. The first
    and last colors and every even-position color are i.i.d. signs; each
    odd position 3, 5, ..., 2n-1 negates its predecessor. Every prefix
    ending at an odd grid point (2j-1)/2n then has discrepancy equal to the
    first color: the n prefix coordinates are one shared sign, which is as
    far from subgaussian as a +-1 vector can get. Window sums over interior
    cells stay bounded (each is a difference of two of the free signs), so
    the dyadic-indexed discrepancies remain O(1).

    n must be a power of two so the 2n-cell grid is dyadic.
    """
    if n < 2 or n & (n - 1):
        raise ValueError("n must be a power of two, at least 2")
    m = 2 * n
    points = (np.arange(m) + 0.5) / m
    x = np.zeros(m, dtype=np.int8)
    free = rng.integers(0, 2, size=n + 1).astype(np.int8) * 2 - 1
    x[0] = free[0]
    x[m - 1] = free[n]
    for j in range(1, n):
        x[2 * j - 1] = free[j]
        x[2 * j] = -free[j]
    colors = ColorVector(x)
    h = int(np.log2(m))
    csum = np.cumsum(x)
    prefix_vals = {2 * j - 1: int(csum[2 * j - 2]) for j in range(1, n + 1)}
    prefix = DiscrepancyVector(PrefixSpace(h), prefix_vals)
    return points, colors, prefix


def strip_difference_sum(points: np.ndarray, colors: ColorVector | np.ndarray,
                         pivot: str = "layout") -> int:
    """Telescoped corner-difference sum that isolates one point's color.

    With pivot="layout" the points must follow the rigid 2-d layout: one
    point per horizontal band at heights i/n, the band-1 point pinned to
    first coordinate exactly 1 and everything else at most 1 - 1/n. The
    sum of disc((0,1] x (0,i/n]) - disc((0,1-1/n] x (0,i/n]) over i then
    picks up the pinned point's color n times, so the result is +-n for
    every coloring. pivot="max_x" runs the same sum on arbitrary points,
    splitting at the largest first coordinate; the result magnitude equals
    the number of bands at or above the pivot's height.
    """
    pts = _as_rows(points)
    cols = colors.colors if isinstance(colors, ColorVector) else np.asarray(colors)
    n = pts.shape[0]
    if pts.shape[1] != 2:
        raise ValueError("malformed layout: need 2-d points")
    if cols.shape[0] != n:
        raise ValueError("one color per point required")
    heights = pts[:, 1]
    if pivot == "layout":
        expect = np.arange(1, n + 1) / n
        if not np.array_equal(np.sort(heights), expect):
            raise ValueError("malformed layout: second coordinates must be i/n")
        band1 = pts[heights == 1.0 / n]
        if band1.shape[0] != 1 or band1[0, 0] != 1.0:
            raise ValueError("malformed layout: band-1 point must have first coordinate 1")
        others = pts[heights != 1.0 / n]
        if np.any(others[:, 0] <= 0.0) or np.any(others[:, 0] > 1.0 - 1.0 / n):
            raise ValueError("malformed layout: other first coordinates must lie in (0, 1-1/n]")
        cut = 1.0 - 1.0 / n
    elif pivot == "max_x":
        order = np.argsort(pts[:, 0])
        cut = float(pts[order[-2], 0]) if n >= 2 else 0.0
    else:
        raise ValueError(f"unknown pivot {pivot!r}")
    total = 0
    for i in range(1, n + 1):
        y = i / n if pivot == "layout" else float(np.sort(heights)[i - 1])
        wide = (pts[:, 0] > 0.0) & (pts[:, 0] <= 1.0) & (heights > 0.0) & (heights <= y)
        narrow = wide & (pts[:, 0] <= cut)
        total += int(cols[wide].sum()) - int(cols[narrow].sum())
    return total


# ---------------------------------------------------------------------------
# diagnostics export
# ---------------------------------------------------------------------------

def write_disc_csv(records: dict, path) -> None:
    """Dump per-split discrepancy records as region_id, level_t, disc_value."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["region_id", "level_t", "disc_value"])
        for (t, i), rec in sorted(records.items()):
            for rid in sorted(rec.values):
                w.writerow([rid, t, rec.values[rid]])


def write_mgf_csv(rows: Iterable[tuple], path) -> None:
    """Dump (direction_id, scale, mgf_estimate) diagnostic rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["direction_id", "scale", "mgf_estimate"])
        for row in rows:
            w.writerow(list(row))
