"""Recursive halving of a large random sample into low-discrepancy sets.

Start with n^2 i.i.d. uniform points and one global coordinate shift. Each
round splits every current set into exact halves using a balanced
subgaussian coloring of stacked vectors: one fresh identity coordinate per
point plus the point's dyadic-box incidence block at resolution h, rescaled
to unit norm. After log2(n) rounds the n leaf sets of n points each carry
small signed discrepancy over every dyadic box simultaneously, which
telescopes into small continuous discrepancy and integration error for the
leaves.

Two execution paths compute identical colorings: a dense kernel that
derives box ids on the fly (1-d and small box spaces) and a mapped kernel
over precomputed, compacted ids (higher dimensions, and whenever per-split
discrepancy records are requested). Both consume one uniform per point
pair from the split's substream, so results are reproducible by seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .balancing import ColorVector, SparseVector, WalkFailure
from .discrepancy import DiscrepancyVector, DyadicBoxSpace
from .dyadic import incidence_vector, num_intervals
from .rng import substream

DENSE_SPACE_LIMIT = 1 << 24  # boxes; beyond this the mapped path takes over


@dataclass(frozen=True)
class TransferenceConfig:
    """Parameters of one partition-tree build.

    n is the leaf size (a power of two); the initial sample has n^2 points.
    h defaults to ceil(c_h * log2(d*n)) and must not be set below that.
    c_walk scales the balancing threshold c = c_walk * ln(pairs * dim).
    pairing picks how points are paired for the walk: "spatial" (default)
    sorts each set so neighbors are paired, which makes paired colors cancel
    inside every coarse box and gives leaves with far lower star discrepancy
    and integration error; "given" feeds each set in stored order, the
    online-friendly choice when points arrive as a stream.
    """

    n: int
    d: int = 1
    h: int | None = None
    c_h: float = 2.0
    c_walk: float = 30.0
    seed: int = 0
    record_discrepancy: bool = False
    max_attempts: int = 5
    pairing: str = "spatial"

    def __post_init__(self):
        if self.n < 2 or self.n & (self.n - 1):
            raise ValueError("n must be a power of two, at least 2")
        if self.d < 1:
            raise ValueError("d must be positive")
        if self.pairing not in ("given", "spatial"):
            raise ValueError("pairing must be 'given' or 'spatial'")
        h_min = int(np.ceil(self.c_h * np.log2(self.d * self.n)))
        if self.h is None:
            object.__setattr__(self, "h", h_min)
        elif self.h < h_min:
            raise ValueError(f"h={self.h} below the required ceil(c_h*log2(d*n))={h_min}")

    @property
    def T(self) -> int:
        return int(np.log2(self.n))

    @property
    def m0(self) -> int:
        return self.n * self.n

    @property
    def K(self) -> int:
        """Stacked-vector support size: identity entry plus incidence block."""
        return 1 + (self.h + 1) ** self.d

    @property
    def n_boxes(self) -> int:
        return num_intervals(self.h) ** self.d


def sample_initial(config: TransferenceConfig,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """The n^2 i.i.d. uniform starting points, reproducible from the seed."""
    rng = substream(config.seed, "init") if rng is None else rng
    return rng.random((config.m0, config.d))


def apply_shift(points: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Coordinatewise (x + s) mod 1, folding by floor subtraction."""
    out = np.asarray(points, dtype=np.float64) + np.asarray(s, dtype=np.float64)
    out -= np.floor(out)
    return out


def stacked_vector(point, local_index: int, set_size: int, h: int) -> SparseVector:
    """Reference construction of one walk input vector.

    Identity coordinate first (local to the set being split), then the
    dyadic incidence block, every entry 1/sqrt(K) so the norm is 1. The
    fast kernels never materialize these; this form feeds the pure-python
    walk used as the equivalence oracle.
    """
    pt = np.atleast_1d(np.asarray(point, dtype=np.float64))
    d = pt.shape[0]
    K = 1 + (h + 1) ** d
    ids = incidence_vector(pt, h)
    indices = np.concatenate([[local_index], set_size + ids])
    values = np.full(indices.size, 1.0 / np.sqrt(K))
    return SparseVector(indices, values, set_size + num_intervals(h) ** d)


def walk_threshold(set_size: int, config: TransferenceConfig) -> float:
    """c = c_walk * ln(pairs * logical dimension) for one split."""
    dim = set_size + config.n_boxes
    pairs = max(set_size // 2, 1)
    return config.c_walk * float(np.log(pairs * dim))


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _walk_dense(pts, h, base, scale2, c, uniforms, w, colors):
    m, d = pts.shape
    npairs = m // 2
    nlev = h + 1
    ncombo = nlev ** d
    idp = np.empty((d, nlev), np.int64)
    idq = np.empty((d, nlev), np.int64)
    digits = np.zeros(d, np.int64)
    boxp = np.empty(ncombo, np.int64)
    boxq = np.empty(ncombo, np.int64)
    for i in range(npairs):
        for a in range(d):
            xp = pts[2 * i, a]
            xq = pts[2 * i + 1, a]
            width = 1
            for lev in range(nlev):
                cp = int(xp * width)
                if cp >= width:
                    cp = width - 1
                cq = int(xq * width)
                if cq >= width:
                    cq = width - 1
                idp[a, lev] = width - 1 + cp
                idq[a, lev] = width - 1 + cq
                width <<= 1
        sp = 0
        sq = 0
        for a in range(d):
            digits[a] = 0
        for ci in range(ncombo):
            fp = 0
            fq = 0
            for a in range(d):
                fp = fp * base + idp[a, digits[a]]
                fq = fq * base + idq[a, digits[a]]
            boxp[ci] = fp
            boxq[ci] = fq
            sp += w[fp]
            sq += w[fq]
            for a in range(d - 1, -1, -1):
                digits[a] += 1
                if digits[a] < nlev:
                    break
                digits[a] = 0
        lam = scale2 * (sp - sq)
        if lam > c or lam < -c:
            return i
        p_minus = 0.5 + lam / (2.0 * c)
        y = -1 if uniforms[i] < p_minus else 1
        colors[2 * i] = y
        colors[2 * i + 1] = -y
        for ci in range(ncombo):
            w[boxp[ci]] += y
            w[boxq[ci]] -= y
    return -1


@numba.njit(cache=True)
def _zero_touched_dense(pts, h, base, w):
    m, d = pts.shape
    nlev = h + 1
    ncombo = nlev ** d
    ids = np.empty((d, nlev), np.int64)
    digits = np.zeros(d, np.int64)
    for j in range(m):
        for a in range(d):
            x = pts[j, a]
            width = 1
            for lev in range(nlev):
                cc = int(x * width)
                if cc >= width:
                    cc = width - 1
                ids[a, lev] = width - 1 + cc
                width <<= 1
        for a in range(d):
            digits[a] = 0
        for ci in range(ncombo):
            f = 0
            for a in range(d):
                f = f * base + ids[a, digits[a]]
            w[f] = 0
            for a in range(d - 1, -1, -1):
                digits[a] += 1
                if digits[a] < nlev:
                    break
                digits[a] = 0


@numba.njit(cache=True)
def _walk_mapped(ids, scale2, c, uniforms, w, colors):
    m, kk = ids.shape
    npairs = m // 2
    for i in range(npairs):
        sp = 0
        sq = 0
        for j in range(kk):
            sp += w[ids[2 * i, j]]
            sq += w[ids[2 * i + 1, j]]
        lam = scale2 * (sp - sq)
        if lam > c or lam < -c:
            return i
        p_minus = 0.5 + lam / (2.0 * c)
        y = -1 if uniforms[i] < p_minus else 1
        colors[2 * i] = y
        colors[2 * i + 1] = -y
        for j in range(kk):
            w[ids[2 * i, j]] += y
            w[ids[2 * i + 1, j]] -= y
    return -1


def pairing_order(points: np.ndarray, h: int) -> np.ndarray:
    """Permutation putting spatial neighbors next to each other.

    The walk colors consecutive pairs jointly, so feeding points in spatial
    order makes most pairs share all coarse boxes and cancel there exactly;
    only pairs straddling a boundary can contribute, which is what keeps
    per-region discrepancy O(1) per level at practical sizes. 1-d sorts by
    coordinate; higher d sorts by interleaved cell bits (Morton order).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    m, d = pts.shape
    if d == 1:
        return np.argsort(pts[:, 0], kind="stable")
    bits = min(h, 63 // d)
    width = 1 << bits
    cells = np.minimum((pts * width).astype(np.int64), width - 1)
    code = np.zeros(m, dtype=np.int64)
    for b in range(bits):
        for a in range(d):
            code |= ((cells[:, a] >> b) & 1) << (b * d + (d - 1 - a))
    return np.argsort(code, kind="stable")


def _flat_ids(pts: np.ndarray, h: int) -> np.ndarray:
    """(m, (h+1)^d) flat dyadic-box ids per point, mixed-radix over dims."""
    m, d = pts.shape
    base = num_intervals(h)
    width = 2 ** np.arange(h + 1)
    flat = None
    for a in range(d):
        cells = np.minimum((pts[:, a, None] * width).astype(np.int64), width - 1)
        ids_a = (width - 1) + cells
        if flat is None:
            flat = ids_a
        else:
            flat = (flat[:, :, None] * base + ids_a[:, None, :]).reshape(m, -1)
    return flat


def _color_points(pts: np.ndarray, config: TransferenceConfig,
                  rng: np.random.Generator, w_dense: np.ndarray | None,
                  want_record: bool):
    """One walk attempt over a point block. Returns (colors, record or None).

    Raises WalkFailure if the drift threshold trips.
    """
    m = pts.shape[0]
    if m % 2:
        raise ValueError("unbalanced input: need an even number of points")
    scale = 0.5 / np.sqrt(config.K)
    scale2 = scale * scale
    c = walk_threshold(m, config)
    uniforms = rng.random(m // 2)
    colors = np.empty(m, dtype=np.int8)
    base = num_intervals(config.h)
    if not want_record and config.n_boxes <= DENSE_SPACE_LIMIT:
        if w_dense is None:
            w_dense = np.zeros(config.n_boxes, dtype=np.int64)
        fail = _walk_dense(pts, config.h, base, scale2, c, uniforms, w_dense, colors)
        _zero_touched_dense(pts, config.h, base, w_dense)
        if fail >= 0:
            raise WalkFailure(f"drift exceeded c={c:g} at pair {fail}")
        return colors, None
    ids = _flat_ids(pts, config.h)
    uniq, inv = np.unique(ids, return_inverse=True)
    compact = inv.reshape(ids.shape).astype(np.int64)
    wm = np.zeros(uniq.size, dtype=np.int64)
    fail = _walk_mapped(compact, scale2, c, uniforms, wm, colors)
    if fail >= 0:
        raise WalkFailure(f"drift exceeded c={c:g} at pair {fail}")
    record = None
    if want_record:
        nz = wm != 0
        record = {int(b): int(v) for b, v in zip(uniq[nz], wm[nz])}
    return colors, record


def _split_with_retries(pts, order_pts, config, t, set_index, w_dense):
    """Color one set: sort for pairing, walk, undo the permutation.

    order_pts supplies the sorting frame (the tree passes the original,
    unshifted coordinates so that anchored boxes in the output frame meet
    at most one straddling pair per level); pts are the shifted points the
    boxes are computed from.
    """
    rng = substream(config.seed, "split", t, set_index)
    perm = None
    if config.pairing == "spatial":
        perm = pairing_order(order_pts, config.h)
        pts = pts[perm]
    for attempt in range(config.max_attempts):
        try:
            colors, rec = _color_points(pts, config, rng, w_dense,
                                        config.record_discrepancy)
        except WalkFailure:
            continue
        if perm is not None:
            unperm = np.empty_like(colors)
            unperm[perm] = colors
            colors = unperm
        return colors, rec
    raise RuntimeError(
        f"walk failed {config.max_attempts} times at level {t}, set {set_index}, "
        f"seed {config.seed}; raise c_walk or change the seed")


def split_once(A_t: np.ndarray, config: TransferenceConfig,
               rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, ColorVector]:
    """Split one point set into exact halves.

    Pairs points per config.pairing, retries with fresh draws from the
    same stream on the rare drift failure, up to config.max_attempts,
    then raises.
    """
    pts = np.atleast_2d(np.asarray(A_t, dtype=np.float64))
    if pts.shape[0] % 2:
        raise ValueError("unbalanced input: need an even number of points")
    perm = pairing_order(pts, config.h) if config.pairing == "spatial" else None
    walk_pts = pts if perm is None else pts[perm]
    for attempt in range(config.max_attempts):
        try:
            colors_p, _ = _color_points(walk_pts, config, rng, None, False)
        except WalkFailure:
            continue
        colors = colors_p
        if perm is not None:
            colors = np.empty_like(colors_p)
            colors[perm] = colors_p
        cv = ColorVector(colors)
        return pts[colors == -1], pts[colors == 1], cv
    raise RuntimeError(f"walk failed {config.max_attempts} times; "
                       f"raise c_walk or change the seed")


# ---------------------------------------------------------------------------
# the partition tree
# ---------------------------------------------------------------------------

@dataclass
class PartitionTree:
    """Full output of one recursive-halving run.

    Point sets are stored as index arrays into the original sample; levels
    run t = 0..T with 2^t sets of n^2/2^t indices each. Children 2i and
    2i+1 partition parent i, the left child being the minus-colored half.
    Splits and discrepancies are computed in the shifted frame
    (folded_points); integration consumes the original points.
    """

    config: TransferenceConfig
    points: np.ndarray
    shift: np.ndarray
    levels: list
    colorings: dict
    disc_records: dict | None = None
    op_count: int = 0
    _folded: np.ndarray | None = field(default=None, repr=False)

    @property
    def folded_points(self) -> np.ndarray:
        if self._folded is None:
            self._folded = apply_shift(self.points, self.shift)
        return self._folded

    def set_points(self, t: int, i: int) -> np.ndarray:
        return self.points[self.levels[t][i]]

    def leaves(self) -> list:
        T = self.config.T
        return [self.points[idx] for idx in self.levels[T]]

    def save(self, path, which: str = "all", force: bool = False) -> None:
        """Write meta.json plus level_<t>/set_<i>.csv under path.

        which="leaves" writes only the last level. Coordinates are written
        as shortest round-trip decimals, so a rerun with the same seed
        produces byte-identical files. Refuses to overwrite a non-empty
        directory unless force is set.
        """
        root = Path(path)
        if root.exists() and any(root.iterdir()) and not force:
            raise FileExistsError(f"output path {root} is not empty (use force)")
        root.mkdir(parents=True, exist_ok=True)
        cfg = self.config
        meta = {
            "n": cfg.n, "d": cfg.d, "h": cfg.h, "c_h": cfg.c_h,
            "c_walk": cfg.c_walk, "seed": cfg.seed,
            "record_discrepancy": cfg.record_discrepancy,
            "pairing": cfg.pairing,
            "shift": [float(s) for s in self.shift],
            "levels_saved": which,
        }
        (root / "meta.json").write_text(json.dumps(meta, indent=1))
        T = self.config.T
        level_range = [T] if which == "leaves" else range(T + 1)
        for t in level_range:
            lvl_dir = root / f"level_{t}"
            lvl_dir.mkdir(exist_ok=True)
            for i, idx in enumerate(self.levels[t]):
                rows = "\n".join(
                    ",".join(repr(float(x)) for x in self.points[j]) for j in idx)
                (lvl_dir / f"set_{i}.csv").write_text(rows + "\n")


def load_partition_dir(path) -> tuple[dict, dict]:
    """Read back a saved tree directory: (meta, {(t, i): points array})."""
    root = Path(path)
    meta = json.loads((root / "meta.json").read_text())
    sets = {}
    for lvl_dir in sorted(root.glob("level_*")):
        t = int(lvl_dir.name.split("_")[1])
        for f in sorted(lvl_dir.glob("set_*.csv"),
                        key=lambda p: int(p.stem.split("_")[1])):
            i = int(f.stem.split("_")[1])
            rows = [[float(x) for x in line.split(",")]
                    for line in f.read_text().splitlines() if line]
            sets[(t, i)] = np.array(rows)
    return meta, sets


def build_partition_tree(config: TransferenceConfig) -> PartitionTree:
    """Run the full recursive halving: T levels, all 2^t sets per level."""
    shift = substream(config.seed, "shift").random(config.d)
    pts0 = sample_initial(config)
    folded = apply_shift(pts0, shift)
    levels = [[np.arange(config.m0)]]
    colorings = {}
    disc_records = {} if config.record_discrepancy else None
    use_dense = not config.record_discrepancy and config.n_boxes <= DENSE_SPACE_LIMIT
    w_dense = np.zeros(config.n_boxes, dtype=np.int64) if use_dense else None
    ncombo = (config.h + 1) ** config.d
    ops = 0
    for t in range(config.T):
        nxt = []
        for i, idx in enumerate(levels[t]):
            colors, rec = _split_with_retries(folded[idx], pts0[idx], config, t, i, w_dense)
            nxt.append(idx[colors == -1])
            nxt.append(idx[colors == 1])
            colorings[(t, i)] = ColorVector(colors)
            if rec is not None:
                disc_records[(t, i)] = DiscrepancyVector(
                    DyadicBoxSpace(config.h, config.d), rec)
            ops += 2 * idx.size * ncombo  # accumulator visits in the walk
        levels.append(nxt)
    return PartitionTree(config=config, points=pts0, shift=shift, levels=levels,
                         colorings=colorings, disc_records=disc_records,
                         op_count=ops, _folded=folded)


def sample_leaf(config: TransferenceConfig) -> np.ndarray:
    """One leaf of the partition tree (the leftmost), without building it all.

    Follows a single root-to-leaf path, so the cost is ~2 splits' worth of
    work instead of T full levels. Uses the same substreams as
    build_partition_tree, so the result equals that tree's leaf 0 exactly.
    """
    shift = substream(config.seed, "shift").random(config.d)
    pts0 = sample_initial(config)
    folded = apply_shift(pts0, shift)
    idx = np.arange(config.m0)
    use_dense = config.n_boxes <= DENSE_SPACE_LIMIT
    w_dense = np.zeros(config.n_boxes, dtype=np.int64) if use_dense else None
    for t in range(config.T):
        colors, _ = _split_with_retries(folded[idx], pts0[idx], config, t, 0, w_dense)
        idx = idx[colors == -1]
    return pts0[idx]
