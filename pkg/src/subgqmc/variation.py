"""Fourier test functions and the variation measures that bound their error.

Integrands are finite Fourier series on the torus. Three nested variation
measures differ only in the per-coordinate frequency weight applied to
|f_hat(k)|^2: weight 1 gives the plain standard deviation ``sigma``, weight
max(1, |k_j|) gives the half-order variation ``sigma_half``, and weight
max(1, |k_j|^2) gives the Hardy-Krause style ``sigma_hk``. The module also
builds the discrete mixed-increment vectors whose filled-decomposition norms
drive the half-order variation, and checks two exact error identities
(integration by parts in 1-d, phase orthogonality under random shifts).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from functools import lru_cache, reduce
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .dyadic import DecompositionMatrix, build_filled_decomposition_matrix

_TWO_PI_I = 2j * np.pi

# Increments on a 2^h grid undersample frequencies above 2^(h-2); the
# functions that mix a frequency with a grid warn past this ratio.
RESOLUTION_MARGIN_BITS = 2


# ---------------------------------------------------------------------------
# Fourier series
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FourierFunction:
    """Finite Fourier series f(z) = sum_k c_k exp(2 pi i <k, z>) on [0,1]^d.

    terms maps integer frequency vectors (length-d tuples) to complex
    coefficients. Real-valued functions carry conjugate-symmetric terms,
    c_{-k} = conj(c_k); nothing enforces that at construction, so complex
    single-phase functions are representable too.
    """

    d: int
    terms: dict[tuple[int, ...], complex]

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be at least 1")
        clean: dict[tuple[int, ...], complex] = {}
        for k, c in self.terms.items():
            key = tuple(int(v) for v in (k if isinstance(k, tuple) else (k,)))
            if len(key) != self.d:
                raise ValueError(f"frequency {key} does not have {self.d} coordinates")
            clean[key] = complex(c)
        object.__setattr__(self, "terms", clean)

    @classmethod
    def sine(cls, m: int, d: int = 1, axis: int = 0) -> "FourierFunction":
        """sin(2 pi m z_axis) embedded in d dimensions."""
        if not 0 <= axis < d:
            raise ValueError("axis out of range")
        if m == 0:
            return cls(d, {})
        k = tuple(m if j == axis else 0 for j in range(d))
        neg = tuple(-v for v in k)
        return cls(d, {k: -0.5j, neg: 0.5j})

    @property
    def max_freq(self) -> int:
        """Largest |k_j| over the support (0 for a constant)."""
        return max((abs(v) for k in self.terms for v in k), default=0)

    def coefficient(self, k: Sequence[int]) -> complex:
        return self.terms.get(tuple(int(v) for v in np.atleast_1d(k)), 0j)

    @property
    def mean_value(self) -> complex:
        """The exact integral over [0,1]^d, i.e. the zero-frequency coefficient."""
        return self.terms.get((0,) * self.d, 0j)

    def is_real(self, tol: float = 1e-12) -> bool:
        """True when coefficients are conjugate-symmetric to within tol."""
        for k, c in self.terms.items():
            neg = tuple(-v for v in k)
            if abs(np.conj(c) - self.terms.get(neg, 0j)) > tol:
                return False
        return True

    def _as_points(self, z) -> tuple[np.ndarray, bool]:
        pts = np.asarray(z, dtype=np.float64)
        if pts.ndim == 0:
            if self.d != 1:
                raise ValueError("scalar input needs a 1-d function")
            return pts.reshape(1, 1), True
        if pts.ndim == 1:
            if self.d == 1:
                return pts.reshape(-1, 1), False
            if pts.shape[0] == self.d:
                return pts.reshape(1, -1), True
            raise ValueError(f"point has {pts.shape[0]} coordinates, expected {self.d}")
        if pts.ndim == 2 and pts.shape[1] == self.d:
            return pts, False
        raise ValueError("points must be a (m, d) array")

    def evaluate_complex(self, z):
        """Complex series sum at z; accepts one point or an (m, d) array."""
        pts, scalar = self._as_points(z)
        out = np.zeros(pts.shape[0], dtype=np.complex128)
        for k, c in self.terms.items():
            out += c * np.exp(_TWO_PI_I * (pts @ np.asarray(k, dtype=np.float64)))
        return complex(out[0]) if scalar else out

    def evaluate(self, z):
        """Real part of the series sum.

        For conjugate-symmetric terms the imaginary part is pure rounding
        noise (at most ~1e-12 relative); for asymmetric terms it is simply
        dropped.
        """
        val = self.evaluate_complex(z)
        return val.real

    def to_dict(self) -> dict:
        items = [
            {"k": list(k), "re": c.real, "im": c.imag}
            for k, c in sorted(self.terms.items())
        ]
        return {"d": self.d, "terms": items}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict) -> "FourierFunction":
        terms = {
            tuple(int(v) for v in item["k"]): complex(item["re"], item.get("im", 0.0))
            for item in obj["terms"]
        }
        return cls(int(obj["d"]), terms)

    @classmethod
    def from_json(cls, text: str) -> "FourierFunction":
        return cls.from_dict(json.loads(text))


def product_function(factors: Sequence[FourierFunction]) -> FourierFunction:
    """Tensor product of 1-d series: f(z) = prod_i factors[i](z_i)."""
    if not factors:
        raise ValueError("need at least one factor")
    if any(g.d != 1 for g in factors):
        raise ValueError("factors must be 1-d")
    terms: dict[tuple[int, ...], complex] = {(): 1.0 + 0j}
    for g in factors:
        terms = {
            prefix + k: c_prefix * c
            for prefix, c_prefix in terms.items()
            for k, c in g.terms.items()
        }
    return FourierFunction(len(factors), terms)


def random_fourier_function(
    rng: np.random.Generator,
    d: int = 1,
    n_terms: int = 5,
    max_freq: int = 8,
    mean: float = 0.0,
) -> FourierFunction:
    """Random real series with n_terms conjugate pairs, |k_j| <= max_freq.

    Coefficients are complex standard gaussians scaled by 1/2, mirrored to
    make the function real-valued.
    """
    if max_freq < 1:
        raise ValueError("max_freq must be at least 1")
    available = ((2 * max_freq + 1) ** d - 1) // 2
    if n_terms > available:
        raise ValueError(
            f"cannot place {n_terms} conjugate pairs with only {available} available"
        )
    terms: dict[tuple[int, ...], complex] = {}
    if mean:
        terms[(0,) * d] = complex(mean)
    pairs = 0
    while pairs < n_terms:
        k = tuple(int(v) for v in rng.integers(-max_freq, max_freq + 1, size=d))
        neg = tuple(-v for v in k)
        if not any(k) or k in terms or neg in terms:
            continue
        c = complex(rng.standard_normal(), rng.standard_normal()) / 2.0
        terms[k] = c
        terms[neg] = np.conj(c)
        pairs += 1
    return FourierFunction(d, terms)


# ---------------------------------------------------------------------------
# Variation measures (Fourier side)
# ---------------------------------------------------------------------------

def _term_arrays(f: FourierFunction) -> tuple[np.ndarray, np.ndarray]:
    """(|c_k|^2, k) arrays over the non-zero frequencies, in one fixed order.

    Sharing these arrays across the sigma variants keeps their summation
    order identical, so the termwise weight ordering survives rounding and
    the nesting sigma <= sigma_half <= sigma_hk_unnormalized holds exactly
    in floats.
    """
    ks = [k for k in f.terms if any(k)]
    if not ks:
        return np.zeros(0), np.zeros((0, f.d), dtype=np.int64)
    mag2 = np.array([abs(f.terms[k]) ** 2 for k in ks])
    kmat = np.array(ks, dtype=np.int64)
    return mag2, kmat


def sigma(f: FourierFunction) -> float:
    """Standard deviation of f under the uniform measure: sqrt(sum |c_k|^2), k != 0."""
    mag2, _ = _term_arrays(f)
    return float(np.sqrt(np.sum(mag2)))


def sigma_half(f: FourierFunction) -> float:
    """Half-order variation: frequency weight prod_j max(1, |k_j|).

    The weight is the square root of the Hardy-Krause weight, so this sits
    between the plain standard deviation and sigma_hk_unnormalized and
    inherits both bounds: sigma <= sigma_half <= sigma_hk_unnormalized and
    sigma_half^2 <= sigma * sigma_hk_unnormalized.
    """
    mag2, kmat = _term_arrays(f)
    w = np.prod(np.maximum(1, np.abs(kmat)), axis=1)
    return float(np.sqrt(np.sum(mag2 * w)))


def sigma_hk_unnormalized(f: FourierFunction) -> float:
    """Hardy-Krause style variation with weight prod_j max(1, k_j^2), no 2 pi powers."""
    mag2, kmat = _term_arrays(f)
    w = np.prod(np.maximum(1, kmat.astype(np.float64) ** 2), axis=1)
    return float(np.sqrt(np.sum(mag2 * w)))


def sigma_hk(f: FourierFunction) -> float:
    """Derivative-true Hardy-Krause variation.

    Adds the factor (2 pi)^(2 * #nonzero coordinates of k) to the
    unnormalized weight, which in 1-d makes sigma_hk(f)^2 equal the energy
    integral of f' over the period.
    """
    mag2, kmat = _term_arrays(f)
    w = np.prod(np.maximum(1, kmat.astype(np.float64) ** 2), axis=1)
    active = np.sum(kmat != 0, axis=1)
    return float(np.sqrt(np.sum(mag2 * w * (2.0 * np.pi) ** (2 * active))))


# ---------------------------------------------------------------------------
# Mixed-increment vectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FaceSelector:
    """Non-empty set of axes (0-based) that vary on a face of the cube.

    Coordinates off the face are pinned at 1, so a face of axes {i, ...}
    is the slice {z : z_j = 1 for all j not selected}.
    """

    axes: tuple[int, ...]

    def __post_init__(self):
        axes = tuple(int(a) for a in self.axes)
        if not axes:
            raise ValueError("a face needs at least one axis")
        if any(a < 0 for a in axes) or len(set(axes)) != len(axes):
            raise ValueError("axes must be distinct and non-negative")
        object.__setattr__(self, "axes", tuple(sorted(axes)))

    @property
    def order(self) -> int:
        return len(self.axes)


@dataclass(frozen=True)
class DerivativeVector:
    """Discrete mixed increments of a shifted function over a face.

    values has shape (2^h,) * order; entry j holds the increment of the
    function over the grid cell [j/2^h, (j+1)/2^h] along the face axes,
    with every off-face coordinate held at 1.
    """

    face: FaceSelector
    h: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.shape != (2 ** self.h,) * self.face.order:
            raise ValueError("values shape does not match face order and resolution")
        object.__setattr__(self, "values", vals)


def _warn_if_undersampled(max_freq: int, h: int) -> None:
    limit = 2 ** (h - RESOLUTION_MARGIN_BITS)
    if max_freq > limit:
        warnings.warn(
            f"frequency {max_freq} exceeds the grid resolution budget "
            f"2^(h-{RESOLUTION_MARGIN_BITS}) = {limit} at h={h}; increments "
            "undersample the fastest oscillation",
            RuntimeWarning,
            stacklevel=3,
        )


def _phase_increments(k: int, shift: float, h: int) -> np.ndarray:
    """Grid increments of the single phase exp(2 pi i k (x + shift))."""
    if k == 0:
        return np.zeros(2 ** h, dtype=np.complex128)
    grid = np.arange(2 ** h + 1, dtype=np.float64) / 2 ** h + shift
    e = np.exp(_TWO_PI_I * k * grid)
    return e[1:] - e[:-1]


def grid_increments(f: FourierFunction, shift: float, h: int) -> DerivativeVector:
    """1-d increment vector: entry j is f((j+1)/2^h + shift) - f(j/2^h + shift).

    Computed by direct evaluation of the shifted series at the grid nodes;
    entries telescope, so they sum to zero for any 1-periodic f.
    """
    if f.d != 1:
        raise ValueError("grid increments need a 1-d function")
    _warn_if_undersampled(f.max_freq, h)
    grid = np.arange(2 ** h + 1, dtype=np.float64) / 2 ** h + shift
    vals = f.evaluate_complex(grid)
    return DerivativeVector(FaceSelector((0,)), h, vals[1:] - vals[:-1])


def mixed_increments(
    f: FourierFunction,
    shift: Sequence[float],
    face: FaceSelector | Iterable[int],
    h: int,
) -> DerivativeVector:
    """Mixed increments of the shifted f over a face, as an order-|face| tensor.

    Built termwise: each frequency k contributes its coefficient times the
    outer product of 1-d phase increments along the face axes, times the
    shifted phases of the off-face coordinates (pinned at 1, which integer
    frequencies cannot see). A term with k_i = 0 on any face axis drops out,
    exactly as constants vanish under differencing.
    """
    if not isinstance(face, FaceSelector):
        face = FaceSelector(tuple(face))
    if face.axes[-1] >= f.d:
        raise ValueError("face axis out of range for this function")
    s = np.asarray(shift, dtype=np.float64)
    if s.shape != (f.d,):
        raise ValueError(f"shift must have {f.d} coordinates")
    face_freq = max(
        (abs(k[i]) for k in f.terms for i in face.axes), default=0
    )
    _warn_if_undersampled(face_freq, h)
    off_axes = [j for j in range(f.d) if j not in face.axes]
    out = np.zeros((2 ** h,) * face.order, dtype=np.complex128)
    for k, c in f.terms.items():
        if any(k[i] == 0 for i in face.axes):
            continue
        vecs = [_phase_increments(k[i], s[i], h) for i in face.axes]
        phase = np.exp(_TWO_PI_I * sum(k[j] * s[j] for j in off_axes))
        out += (c * phase) * reduce(np.multiply.outer, vecs)
    return DerivativeVector(face, h, out)


# ---------------------------------------------------------------------------
# Filled-decomposition norms and the half-order estimator
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _filled_matrix(h: int) -> DecompositionMatrix:
    return build_filled_decomposition_matrix(h)


def filled_norm_closed_form(k: int, h: int) -> float:
    """Squared filled-decomposition norm of the increment vector of one phase.

    Returns 4 * sum_{j=0}^{h} 2^j sin^2(pi k / 2^j) and cross-checks it
    against the matrix route (transpose-apply of the filled decomposition
    matrix to the phase increments) to 1e-9; the two disagreeing means a
    broken build, hence the hard error. The value is even in k and bounded
    by 8 (1 + pi^2) |k|.
    """
    k = int(k)
    if k == 0:
        raise ValueError("frequency must be non-zero")
    j = np.arange(h + 1)
    closed = 4.0 * float(np.sum(2.0 ** j * np.sin(np.pi * k / 2.0 ** j) ** 2))
    col = _filled_matrix(h).apply_transpose(_phase_increments(k, 0.0, h))
    matrix_route = float(np.sum(np.abs(col) ** 2))
    if abs(matrix_route - closed) > 1e-9 * max(1.0, abs(closed)):
        raise ArithmeticError(
            f"closed form {closed!r} disagrees with matrix route {matrix_route!r} "
            f"for k={k}, h={h}"
        )
    return closed


def _apply_transpose_axis(mat: DecompositionMatrix, arr: np.ndarray, axis: int) -> np.ndarray:
    """Apply the matrix transpose along one tensor axis via prefix sums."""
    a = np.moveaxis(arr, axis, 0)
    flat = a.reshape(a.shape[0], -1)
    cs = np.concatenate(
        [np.zeros((1, flat.shape[1]), dtype=flat.dtype), np.cumsum(flat, axis=0)]
    )
    out = cs[mat.run_start + mat.run_len] - cs[mat.run_start]
    return np.moveaxis(out.reshape((mat.n_cols,) + a.shape[1:]), 0, axis)


def sigma_half_estimate(
    f: FourierFunction,
    h: int,
    shift_samples: int,
    rng: np.random.Generator,
) -> float:
    """Shift-averaged half-order variation of an evaluable function.

    Averages, over random torus shifts, the total squared filled-decomposition
    norm of the mixed-increment tensors across all non-empty faces, then takes
    the square root. The expected square equals
    sum_k |c_k|^2 prod_{face axes with k_i != 0} filled_norm_closed_form(k_i, h),
    and for fixed shifts the value is non-decreasing in h (refining the grid
    only adds columns). Cost grows as 2^(h d), so keep h small past d = 1.
    """
    if shift_samples < 1:
        raise ValueError("need at least one shift sample")
    shifts = rng.random((shift_samples, f.d))
    mat = _filled_matrix(h)
    faces = [
        FaceSelector(axes)
        for r in range(1, f.d + 1)
        for axes in combinations(range(f.d), r)
    ]
    total = 0.0
    for s in shifts:
        for face in faces:
            t = mixed_increments(f, s, face, h).values
            for axis in range(t.ndim):
                t = _apply_transpose_axis(mat, t, axis)
            total += float(np.sum(np.abs(t) ** 2))
    return float(np.sqrt(total / shift_samples))


# ---------------------------------------------------------------------------
# Integration error and exact identities
# ---------------------------------------------------------------------------

def integration_error(points, f: FourierFunction) -> float:
    """Mean of f over the point set minus its exact integral."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        raise ValueError("empty point set")
    vals = f.evaluate(pts)
    return float(np.mean(vals) - f.mean_value.real)


def _antiderivative_values(f: FourierFunction, x: np.ndarray) -> np.ndarray:
    """Values of the exact antiderivative F with F' = f (complex, d=1)."""
    out = f.mean_value * x.astype(np.complex128)
    for k, c in f.terms.items():
        if k[0] != 0:
            out += c / (_TWO_PI_I * k[0]) * np.exp(_TWO_PI_I * k[0] * x)
    return out


def hlawka_zaremba_error_1d(points, f: FourierFunction) -> float:
    """Integration error of a 1-d point set via the integration-by-parts route.

    Evaluates the integral of (t - empirical_cdf(t)) * f'(t) over [0, 1]
    exactly: the empirical cdf is constant between consecutive sorted points,
    and on each piece the integral reduces to endpoint values of f and of its
    trigonometric antiderivative. Must match integration_error(points, f);
    the two sides stay separate so they can check each other.
    """
    if f.d != 1:
        raise ValueError("the exact integration-by-parts identity is 1-d only")
    x = np.sort(np.asarray(points, dtype=np.float64).ravel())
    n = x.size
    if n == 0:
        raise ValueError("empty point set")
    nodes = np.concatenate([[0.0], x, [1.0]])
    fv = f.evaluate_complex(nodes)
    Fv = _antiderivative_values(f, nodes)
    a, b = nodes[:-1], nodes[1:]
    cdf = np.arange(n + 1, dtype=np.float64) / n
    pieces = b * fv[1:] - a * fv[:-1] - (Fv[1:] - Fv[:-1]) - cdf * (fv[1:] - fv[:-1])
    return float(np.sum(pieces).real)


def fourier_orthogonality_check(
    k,
    k_prime,
    shift_samples: int | None = None,
    rng: np.random.Generator | None = None,
) -> complex:
    """Correlation of two shifted unit-coefficient phases, E_s[conj(e_k(s)) e_k'(s)].

    With shift_samples set, estimates the expectation by averaging the phase
    of the frequency difference over random shifts; the modulus then decays
    like 1/sqrt(samples) for distinct frequencies. Without it, integrates the
    phase analytically coordinate by coordinate, which vanishes to rounding
    for distinct frequencies. Equal frequencies give exactly 1 either way.
    """
    kv = np.atleast_1d(np.asarray(k, dtype=np.int64))
    kpv = np.atleast_1d(np.asarray(k_prime, dtype=np.int64))
    if kv.shape != kpv.shape:
        raise ValueError("frequency vectors must have the same dimension")
    diff = kpv - kv
    if shift_samples is None:
        out = 1.0 + 0j
        for m in diff:
            if m != 0:
                out *= (np.exp(_TWO_PI_I * m) - 1.0) / (_TWO_PI_I * m)
        return complex(out)
    if rng is None:
        rng = np.random.default_rng()
    s = rng.random((int(shift_samples), diff.shape[0]))
    return complex(np.mean(np.exp(_TWO_PI_I * (s @ diff))))
