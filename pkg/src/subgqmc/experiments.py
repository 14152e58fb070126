"""Experiment harness: scaling studies, diagnostics, and invariant checks.

Everything here is driven by one frozen :class:`ExperimentConfig`, loaded
from JSON by the CLI or built directly in tests. Runs are reproducible:
every random draw comes from a named substream of the config seed, keyed
by estimator, sample size, and trial index, so results do not depend on
execution order or on the SUBGQMC_THREADS worker count.

Artifacts are deliberately plain: raw per-trial rows as CSV, aggregate
statistics as JSON. Both round-trip through the readers in this module
bit-exactly (floats are written as shortest round-trip decimals).
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .balancing import mgf_profile
from .discrepancy import star_disc, telescoping_check, write_disc_csv, write_mgf_csv
from .dyadic import (
    Corner,
    DecompositionMatrix,
    build_decomposition_matrix,
    build_filled_decomposition_matrix,
)
from .rng import substream
from .transference import (
    TransferenceConfig,
    build_partition_tree,
    sample_leaf,
    split_once,
)
from .variation import (
    FourierFunction,
    filled_norm_closed_form,
    hlawka_zaremba_error_1d,
    integration_error,
    random_fourier_function,
    sigma,
    sigma_half,
    sigma_hk_unnormalized,
)

MODES = ("scaling", "integrate", "diagnose", "verify", "generate")
ESTIMATORS = ("mc", "transference", "grid", "vdc_1d")

# Envelope enumeration is exponential in the number of conjugate pairs.
MAX_ENVELOPE_PAIRS = 16

# value / |k| for the filled-matrix column energies; 8 * (1 + pi^2).
FILLED_NORM_RATIO_BOUND = 8.0 * (1.0 + math.pi ** 2)

_ROWS_HEADER = ["estimator", "n", "trial", "error", "abs_error"]


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment run, fully determined by these fields plus the code.

    n_list entries are powers of two; the scaling mode sweeps all of them,
    while integrate uses the largest and diagnose/generate use the first.
    h and pairing are forwarded to the partition-tree builder when the
    "transference" estimator is involved; h=None picks the builder default.
    """

    mode: str
    function: FourierFunction | None = None
    n_list: tuple[int, ...] = (32, 64, 128, 256, 512, 1024)
    d: int = 1
    trials: int = 200
    seed: int = 0
    estimators: tuple[str, ...] = ("mc", "transference")
    output_path: str | None = None
    pairing: str = "spatial"
    h: int | None = None
    force: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r} (choose from {MODES})")
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        if not self.n_list:
            raise ValueError("n_list must not be empty")
        for n in self.n_list:
            if n < 2 or n & (n - 1):
                raise ValueError(f"n_list entries must be powers of two >= 2, got {n}")
        if self.d < 1:
            raise ValueError("dimension must be at least 1")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if not self.estimators:
            raise ValueError("estimators must not be empty")
        for e in self.estimators:
            if e not in ESTIMATORS:
                raise ValueError(f"unknown estimator {e!r} (choose from {ESTIMATORS})")
        if len(set(self.estimators)) != len(self.estimators):
            raise ValueError("duplicate estimator names")
        if "vdc_1d" in self.estimators and self.d != 1:
            raise ValueError("the vdc_1d estimator is one-dimensional only")
        if "grid" in self.estimators:
            for n in self.n_list:
                _grid_side(n, self.d)
        if self.pairing not in ("spatial", "given"):
            raise ValueError(f"pairing must be 'spatial' or 'given', got {self.pairing!r}")
        if self.h is not None and self.h < 1:
            raise ValueError("h must be at least 1 when given")
        if self.function is not None and self.function.d != self.d:
            raise ValueError(
                f"function dimension {self.function.d} does not match d={self.d}")

    @classmethod
    def from_dict(cls, obj: dict, base_dir: str | Path = ".") -> "ExperimentConfig":
        """Build a config from parsed JSON.

        The integrand may be given inline under "function" or as a path to
        a function JSON file under "function_path" (resolved relative to
        base_dir, normally the directory of the config file). Unknown keys
        are rejected so typos fail loudly instead of silently running with
        defaults.
        """
        obj = dict(obj)
        allowed = {
            "mode", "function", "function_path", "n_list", "d", "trials",
            "seed", "estimators", "output_path", "pairing", "h", "force",
        }
        unknown = sorted(set(obj) - allowed)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        if "function" in obj and "function_path" in obj:
            raise ValueError("give the function inline or as a path, not both")
        fn = None
        inline = obj.pop("function", None)
        if inline is not None:
            fn = FourierFunction.from_dict(inline)
        fn_path = obj.pop("function_path", None)
        if fn_path is not None:
            fn = FourierFunction.from_json(Path(base_dir, fn_path).read_text())
        return cls(function=fn, **obj)

    @classmethod
    def from_json_file(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        """Load a config file; keyword overrides replace file values."""
        path = Path(path)
        obj = json.loads(path.read_text())
        if not isinstance(obj, dict):
            raise ValueError("config file must hold a JSON object")
        obj.update(overrides)
        return cls.from_dict(obj, base_dir=path.parent)

    def to_dict(self) -> dict:
        out = {
            "mode": self.mode,
            "function": None if self.function is None else self.function.to_dict(),
            "n_list": list(self.n_list),
            "d": self.d,
            "trials": self.trials,
            "seed": self.seed,
            "estimators": list(self.estimators),
            "output_path": self.output_path,
            "pairing": self.pairing,
            "h": self.h,
            "force": self.force,
        }
        return out


def validate_mode_requirements(config: ExperimentConfig) -> None:
    """Raise ValueError for mode/field combinations that cannot run.

    Kept out of __post_init__ so partial configs stay constructible in
    library code (run_best_of_both fills in its own integrands).
    """
    if config.mode in ("scaling", "integrate") and config.function is None:
        raise ValueError(f"{config.mode} mode needs a function")
    if config.mode in ("diagnose", "generate") and config.output_path is None:
        raise ValueError(f"{config.mode} mode needs an output path")


# ---------------------------------------------------------------------------
# worker budget
# ---------------------------------------------------------------------------

def thread_budget() -> int:
    """Worker count from SUBGQMC_THREADS (default 1, must be a positive int)."""
    raw = os.environ.get("SUBGQMC_THREADS")
    if raw is None or not raw.strip():
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"SUBGQMC_THREADS must be an integer, got {raw!r}") from None
    if value < 1:
        raise ValueError(f"SUBGQMC_THREADS must be >= 1, got {value}")
    return value


def _map_ordered(fn: Callable, items: Iterable) -> list:
    """Map preserving input order, threaded when the budget allows.

    Work items must not share mutable state; every stochastic task keys
    its own substream, so the result is identical at any worker count.
    """
    items = list(items)
    budget = thread_budget()
    if budget <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=budget) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# point-set estimators
# ---------------------------------------------------------------------------

def _grid_side(n: int, d: int) -> int:
    side = round(n ** (1.0 / d))
    if side ** d != n:
        raise ValueError(f"grid estimator needs n = m^d, got n={n} for d={d}")
    return side


def _van_der_corput(n: int) -> np.ndarray:
    """First n base-2 radical-inverse points."""
    out = np.empty(n)
    for i in range(n):
        x, denom, acc = i, 2.0, 0.0
        while x:
            acc += (x & 1) / denom
            x >>= 1
            denom *= 2.0
        out[i] = acc
    return out


def build_point_set(estimator: str, n: int, config: ExperimentConfig,
                    trial: int) -> np.ndarray:
    """The (n, d) point set one trial of an estimator integrates with.

    mc and transference key their randomness by (seed, estimator, n, trial);
    grid and vdc_1d are deterministic and ignore seed and trial.
    """
    d = config.d
    if estimator == "mc":
        return substream(config.seed, "mc", n, trial).random((n, d))
    if estimator == "transference":
        leaf_seed = int(substream(config.seed, "transference", n, trial).integers(2 ** 62))
        tcfg = TransferenceConfig(n=n, d=d, h=config.h, seed=leaf_seed,
                                  pairing=config.pairing)
        return sample_leaf(tcfg)
    if estimator == "grid":
        side = _grid_side(n, d)
        if d == 1:
            return ((np.arange(n) + 0.5) / n).reshape(n, 1)
        axis = (np.arange(side) + 0.5) / side
        mesh = np.meshgrid(*([axis] * d), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)
    if estimator == "vdc_1d":
        if d != 1:
            raise ValueError("the vdc_1d estimator is one-dimensional only")
        return _van_der_corput(n).reshape(n, 1)
    raise ValueError(f"unknown estimator {estimator!r}")


# ---------------------------------------------------------------------------
# scaling runs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingRow:
    estimator: str
    n: int
    trial: int
    error: float
    abs_error: float


@dataclass(frozen=True)
class SummaryRow:
    estimator: str
    n: int
    trials: int
    rmse: float
    mean_error: float
    stderr: float


@dataclass(frozen=True)
class SlopeFit:
    """Least-squares slope of log RMSE against log n.

    slope/stderr/ci describe the fit with the smallest n dropped (warm-up
    sizes bend the line); slope_all_n keeps every point. n_used lists the
    sizes behind the headline slope. NaNs mean too few usable points.
    """

    estimator: str
    slope: float
    stderr: float
    ci_low: float
    ci_high: float
    slope_all_n: float
    n_used: tuple[int, ...]


@dataclass
class ScalingResult:
    config: ExperimentConfig
    rows: list[ScalingRow]
    summaries: list[SummaryRow]
    slopes: dict[str, SlopeFit]

    def rmse(self, estimator: str, n: int) -> float:
        for s in self.summaries:
            if s.estimator == estimator and s.n == n:
                return s.rmse
        raise KeyError(f"no summary for ({estimator!r}, {n})")

    def summary_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "summaries": [asdict(s) for s in self.summaries],
            "slopes": {k: asdict(v) for k, v in self.slopes.items()},
        }

    def write(self, out_dir: str | Path, force: bool = False) -> None:
        out = prepare_out_dir(out_dir, force)
        write_scaling_rows(self.rows, out / "scaling_rows.csv")
        (out / "scaling_summary.json").write_text(
            json.dumps(self.summary_dict(), indent=1) + "\n")


def summarize_rows(rows: Sequence[ScalingRow]) -> list[SummaryRow]:
    """Aggregate raw rows; also the recompute path for stored summaries.

    run_scaling and every test funnel through this one function, so a
    summary recomputed from a rows CSV equals the stored one float for
    float, not merely to tolerance.
    """
    order: list[tuple[str, int]] = []
    groups: dict[tuple[str, int], list[float]] = {}
    for r in rows:
        key = (r.estimator, r.n)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(r.error)
    out = []
    for est, n in order:
        errs = np.array(groups[(est, n)])
        rmse = float(np.sqrt(np.mean(errs ** 2)))
        mean = float(np.mean(errs))
        se = float(np.std(errs, ddof=1) / np.sqrt(errs.size)) if errs.size > 1 else 0.0
        out.append(SummaryRow(est, n, int(errs.size), rmse, mean, se))
    return out


def fit_slope(estimator: str, summaries: Sequence[SummaryRow]) -> SlopeFit:
    pts = sorted((s.n, s.rmse) for s in summaries
                 if s.estimator == estimator and s.rmse > 0)
    slope_all = _ols_slope(pts)[0]
    kept = pts
    if len({n for n, _ in pts}) >= 3:
        n_min = pts[0][0]
        kept = [(n, r) for n, r in pts if n != n_min]
    slope, se = _ols_slope(kept)
    if math.isnan(se):
        lo = hi = math.nan
    else:
        lo, hi = slope - 1.96 * se, slope + 1.96 * se
    return SlopeFit(estimator, slope, se, lo, hi, slope_all,
                    tuple(n for n, _ in kept))


def _ols_slope(pts: Sequence[tuple[int, float]]) -> tuple[float, float]:
    if len(pts) < 2:
        return math.nan, math.nan
    x = np.log([n for n, _ in pts])
    y = np.log([r for _, r in pts])
    slope, intercept = np.polyfit(x, y, 1)
    if len(pts) < 3:
        return float(slope), math.nan
    resid = y - (slope * x + intercept)
    s2 = float(np.sum(resid ** 2)) / (len(pts) - 2)
    se = math.sqrt(s2 / float(np.sum((x - x.mean()) ** 2)))
    return float(slope), se


def run_scaling(config: ExperimentConfig) -> ScalingResult:
    """Integration-error sweep over estimators, sizes, and trials."""
    f = config.function
    if f is None:
        raise ValueError("scaling mode needs a function")
    rows: list[ScalingRow] = []
    for est in config.estimators:
        for n in config.n_list:
            def one_trial(trial: int, est=est, n=n) -> float:
                pts = build_point_set(est, n, config, trial)
                return float(integration_error(pts, f))
            errs = _map_ordered(one_trial, range(config.trials))
            rows.extend(ScalingRow(est, n, t, e, abs(e)) for t, e in enumerate(errs))
    summaries = summarize_rows(rows)
    slopes = {est: fit_slope(est, summaries) for est in config.estimators}
    return ScalingResult(config, rows, summaries, slopes)


def write_scaling_rows(rows: Sequence[ScalingRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_ROWS_HEADER)
        for r in rows:
            w.writerow([r.estimator, r.n, r.trial, repr(r.error), repr(r.abs_error)])


def read_scaling_rows(path: str | Path) -> list[ScalingRow]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != _ROWS_HEADER:
            raise ValueError(f"not a scaling rows file: {path}")
        return [ScalingRow(est, int(n), int(t), float(e), float(a))
                for est, n, t, e, a in rd]


# ---------------------------------------------------------------------------
# best-of-both envelope
# ---------------------------------------------------------------------------

def two_scale_function(k: int) -> FourierFunction:
    """sin(2 pi x) + k^(-1/2) sin(2 pi k x), the two-band test integrand."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if k == 1:
        return FourierFunction(1, {(1,): -1.0j, (-1,): 1.0j})
    amp = k ** -0.5
    return FourierFunction(1, {
        (1,): -0.5j, (-1,): 0.5j,
        (k,): -0.5j * amp, (-k,): 0.5j * amp,
    })


def _conjugate_rep(k: tuple[int, ...]) -> tuple[int, ...]:
    neg = tuple(-v for v in k)
    return max(k, neg)


def error_envelope(f: FourierFunction, n: int) -> tuple[float, frozenset]:
    """Best split bound: min over g + h = f of sigma(g)^2/n + sigma_half(h)^2/n^2.

    Splits assign whole conjugate pairs, keeping both parts real. Returns
    the minimum and the set of pair representatives routed to the
    variance part g. The high-frequency content ends up in g once its
    half-order weight outgrows the extra factor of n.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    reps = sorted({_conjugate_rep(k) for k in f.terms if any(k)})
    if len(reps) > MAX_ENVELOPE_PAIRS:
        raise ValueError(
            f"envelope enumeration is exponential; {len(reps)} pairs exceeds "
            f"the limit of {MAX_ENVELOPE_PAIRS}")
    best_val, best_set = math.inf, frozenset()
    for bits in range(2 ** len(reps)):
        chosen = {reps[i] for i in range(len(reps)) if bits >> i & 1}
        g_terms = {k: c for k, c in f.terms.items()
                   if any(k) and _conjugate_rep(k) in chosen}
        h_terms = {k: c for k, c in f.terms.items()
                   if any(k) and _conjugate_rep(k) not in chosen}
        val = (sigma(FourierFunction(f.d, g_terms)) ** 2 / n
               + sigma_half(FourierFunction(f.d, h_terms)) ** 2 / n ** 2)
        if val < best_val:
            best_val, best_set = val, frozenset(chosen)
    return best_val, best_set


@dataclass
class BestOfBothResult:
    rows: list[ScalingRow]
    summaries: list[SummaryRow]
    envelopes: dict[int, float]
    envelope_splits: dict[int, frozenset]

    def rmse(self, estimator: str, n: int) -> float:
        for s in self.summaries:
            if s.estimator == estimator and s.n == n:
                return s.rmse
        raise KeyError(f"no summary for ({estimator!r}, {n})")


def run_best_of_both(config: ExperimentConfig) -> BestOfBothResult:
    """Two-band integrand study: k grows with n, mc vs transference.

    For each n in n_list the integrand is two_scale_function(n); the
    reported envelope is the best split bound at that size.
    """
    if config.d != 1:
        raise ValueError("the two-band study is one-dimensional")
    rows: list[ScalingRow] = []
    envelopes: dict[int, float] = {}
    splits: dict[int, frozenset] = {}
    for n in config.n_list:
        f = two_scale_function(n)
        sub = replace(config, function=f, n_list=(n,),
                      estimators=("mc", "transference"))
        rows.extend(run_scaling(sub).rows)
        envelopes[n], splits[n] = error_envelope(f, n)
    return BestOfBothResult(rows, summarize_rows(rows), envelopes, splits)


# ---------------------------------------------------------------------------
# integrate mode
# ---------------------------------------------------------------------------

def run_integrate(config: ExperimentConfig) -> list[dict]:
    """One point set per estimator at the largest n; estimate vs exact mean."""
    f = config.function
    if f is None:
        raise ValueError("integrate mode needs a function")
    n = max(config.n_list)
    results = []
    for est in config.estimators:
        pts = build_point_set(est, n, config, trial=0)
        estimate = float(np.mean(f.evaluate(pts)))
        error = float(integration_error(pts, f))
        results.append({
            "estimator": est,
            "n": n,
            "estimate": estimate,
            "exact": float(np.real(f.mean_value)),
            "error": error,
        })
    return results


# ---------------------------------------------------------------------------
# verify mode
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VerifyCheck:
    name: str
    passed: bool
    statistical: bool
    detail: str


@dataclass
class VerifyReport:
    seed: int
    checks: list[VerifyCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "passed": self.passed,
            "checks": [asdict(c) for c in self.checks],
        }


def filled_structure_ok(mat: DecompositionMatrix) -> bool:
    """Structural audit of a filled decomposition matrix.

    Checks the column count and, per level, that every run has the level
    width and that the runs tile the whole grid. Returns False instead of
    raising so it can double as the fault-injection target.
    """
    h = mat.h
    if mat.run_start.shape != (2 ** (h + 1) - 2,):
        return False
    if mat.run_len.shape != mat.run_start.shape:
        return False
    col = 0
    for level in range(1, h + 1):
        m = 2 ** level
        width = 2 ** (h - level)
        if not np.all(mat.run_len[col:col + m] == width):
            return False
        starts = np.sort(mat.run_start[col:col + m])
        if not np.array_equal(starts, np.arange(m) * width):
            return False
        col += m
    return col == mat.run_start.size


def diverse_fourier_function(key: int, d_max: int = 3) -> FourierFunction:
    """Random real integrand whose support spans >= 2 frequency-weight classes.

    The ordering chain between the three variations collapses to equality
    when every supported frequency carries the same weight, and equalities
    round unpredictably in floats. Drawing until two weight classes appear
    keeps exact-inequality assertions meaningful.
    """
    attempt = 0
    while True:
        rng = substream(key, "diverse-fn", attempt)
        d = int(rng.integers(1, d_max + 1))
        f = random_fourier_function(rng, d=d, n_terms=int(rng.integers(2, 7)),
                                    max_freq=6)
        weights = {
            int(np.prod([max(1, abs(v)) for v in k]))
            for k in f.terms if any(k)
        }
        if len(weights) >= 2:
            return f
        attempt += 1


def _check_filled_structure(seed: int) -> VerifyCheck:
    worst = math.inf
    for h in (3, 5, 6):
        plain = build_decomposition_matrix(h)
        filled = build_filled_decomposition_matrix(h)
        if not filled_structure_ok(filled):
            return VerifyCheck("filled_structure", False, False,
                               f"structure audit failed at h={h}")
        if not np.array_equal(plain.run_start[plain.run_len > 0],
                              filled.run_start[plain.run_len > 0]):
            return VerifyCheck("filled_structure", False, False,
                               f"filled matrix moved a used run at h={h}")
        u = substream(seed, "verify-structure", h).standard_normal((2 ** h, 100))
        dense_p = plain.to_dense().T.astype(np.float64)
        dense_f = filled.to_dense().T.astype(np.float64)
        norm_p = np.linalg.norm(dense_p @ u, axis=0)
        norm_f = np.linalg.norm(dense_f @ u, axis=0)
        margin = float(np.min(norm_f - norm_p))
        worst = min(worst, margin)
        if margin < -1e-9 * float(np.max(norm_f)):
            return VerifyCheck("filled_structure", False, False,
                               f"filling decreased a column-energy norm at h={h}")
    return VerifyCheck("filled_structure", True, False,
                       f"levels tile and filling dominates (min margin {worst:.3e})")


def _check_fault_injection(seed: int) -> VerifyCheck:
    mat = build_filled_decomposition_matrix(5)
    rng = substream(seed, "verify-fault")
    bad_len = mat.run_len.copy()
    bad_len[int(rng.integers(bad_len.size))] += 1
    corrupted = DecompositionMatrix(mat.h, mat.run_start.copy(), bad_len, True)
    caught = not filled_structure_ok(corrupted)
    detail = ("corrupted run length rejected by the structure audit" if caught
              else "corrupted matrix slipped past the structure audit")
    return VerifyCheck("fault_injection", caught, False, detail)


def _check_telescoping(seed: int, config: ExperimentConfig) -> VerifyCheck:
    worst = 0.0
    for n, d in ((32, 1), (16, 2)):
        tcfg = TransferenceConfig(
            n=n, d=d, record_discrepancy=True,
            seed=int(substream(seed, "verify-tele", n, d).integers(2 ** 62)))
        tree = build_partition_tree(tcfg)
        rng = substream(seed, "verify-tele-corners", n, d)
        h = tree.config.h
        anchors = rng.integers(1, 2 ** h + 1, size=(25, d)) / 2 ** h
        corners = [Corner(a, h) for a in anchors]
        for leaf in (0, n - 1):
            worst = max(worst, telescoping_check(tree, corners, leaf=leaf))
    tol = 1e-12 * 32
    return VerifyCheck("telescoping_identity", bool(worst <= tol), False,
                       f"max residual {worst:.3e} (tol {tol:.1e})")


def _check_parts_identity(seed: int) -> VerifyCheck:
    worst = 0.0
    for i in range(20):
        rng = substream(seed, "verify-parts", i)
        f = random_fourier_function(rng, d=1, n_terms=4, max_freq=6,
                                    mean=float(rng.normal()))
        pts = rng.random(int(rng.integers(1, 50)))
        gap = abs(hlawka_zaremba_error_1d(pts, f) - integration_error(pts, f))
        worst = max(worst, gap)
    return VerifyCheck("parts_identity", bool(worst <= 1e-10), False,
                       f"max |identity - direct| = {worst:.3e} (tol 1e-10)")


def _check_variation_ordering(seed: int) -> VerifyCheck:
    for i in range(100):
        f = diverse_fourier_function(key=(seed, "verify-ordering", i))
        a, b, c = sigma(f), sigma_half(f), sigma_hk_unnormalized(f)
        if not (a <= b <= c and b * b <= a * c):
            return VerifyCheck("variation_ordering", False, False,
                               f"ordering chain broke on draw {i}")
    return VerifyCheck("variation_ordering", True, False,
                       "chain and interpolation bound exact on 100 draws")


def _check_filled_norm_bound(seed: int) -> VerifyCheck:
    worst = 0.0
    for h in (4, 10, 14):
        for k in list(range(1, 65)) + [511, 1024]:
            ratio = filled_norm_closed_form(k, h) / k
            worst = max(worst, ratio)
    ok = bool(worst <= FILLED_NORM_RATIO_BOUND)
    return VerifyCheck("filled_norm_bound", ok, False,
                       f"max value/|k| = {worst:.4f} "
                       f"(bound {FILLED_NORM_RATIO_BOUND:.4f})")


def _check_balanced_split(seed: int, config: ExperimentConfig) -> VerifyCheck:
    rng = substream(seed, "verify-split")
    pts = rng.random((64, 2))
    tcfg = TransferenceConfig(n=8, d=2, pairing=config.pairing)
    left, right, colors = split_once(pts, tcfg, substream(seed, "verify-split-walk"))
    ok = bool(len(left) == len(right) == 32
              and int(np.sum(colors.colors)) == 0
              and np.array_equal(
                  np.sort(np.vstack([left, right]), axis=0), np.sort(pts, axis=0)))
    detail = ("split returns exact halves that partition the input" if ok
              else "split sizes or point multiset went wrong")
    return VerifyCheck("balanced_split", ok, False, detail)


def _check_leaf_unbiasedness(seed: int) -> VerifyCheck:
    f = FourierFunction.sine(2)
    errs = np.array([
        integration_error(
            sample_leaf(TransferenceConfig(
                n=16, seed=int(substream(seed, "verify-unbiased", i).integers(2 ** 62)))),
            f)
        for i in range(150)
    ])
    mean = float(np.mean(errs))
    se = float(np.std(errs, ddof=1) / np.sqrt(errs.size))
    ok = bool(abs(mean) <= 4 * se)
    return VerifyCheck("leaf_unbiasedness", ok, True,
                       f"mean error {mean:.2e} vs 4*SE = {4 * se:.2e} (150 leaves)")


def _check_leaf_star_advantage(seed: int) -> VerifyCheck:
    n = 32
    leaf_disc = [
        star_disc(sample_leaf(TransferenceConfig(
            n=n, seed=int(substream(seed, "verify-star", i).integers(2 ** 62)))))
        for i in range(9)
    ]
    iid_disc = [
        star_disc(substream(seed, "verify-star-iid", i).random((n, 1)))
        for i in range(9)
    ]
    med_leaf = float(np.median(leaf_disc))
    med_iid = float(np.median(iid_disc))
    ok = bool(med_leaf <= 0.6 * med_iid)
    return VerifyCheck("leaf_star_advantage", ok, True,
                       f"median star discrepancy {med_leaf:.3f} vs iid {med_iid:.3f}")


def _check_records_subgaussian(seed: int) -> VerifyCheck:
    n = 16
    vecs = []
    for i in range(120):
        tcfg = TransferenceConfig(
            n=n, record_discrepancy=True,
            seed=int(substream(seed, "verify-records", i).integers(2 ** 62)))
        tree = build_partition_tree(tcfg)
        vecs.append(tree.disc_records[(0, 0)].to_dense())
    samples = np.stack(vecs)
    rows = mgf_profile(samples, directions=24,
                       rng=substream(seed, "verify-records-dirs"))
    const = max(0.0, max(est for _, _, est in rows))
    bound = 8.0 * math.log(n) ** 2
    return VerifyCheck("records_subgaussian", bool(const <= bound), True,
                       f"empirical constant {const:.2f} vs bound {bound:.2f}")


def run_verify(config: ExperimentConfig) -> VerifyReport:
    """Run the named invariant suite; write a JSON report if output_path set.

    Exact checks must always pass. The three statistical checks use fixed
    substreams of the config seed, so a failure is reproducible; across
    seeds they are tuned to pass at least 4 in 5.
    """
    seed = config.seed
    checks = [
        _check_filled_structure(seed),
        _check_fault_injection(seed),
        _check_telescoping(seed, config),
        _check_parts_identity(seed),
        _check_variation_ordering(seed),
        _check_filled_norm_bound(seed),
        _check_balanced_split(seed, config),
        _check_leaf_unbiasedness(seed),
        _check_leaf_star_advantage(seed),
        _check_records_subgaussian(seed),
    ]
    report = VerifyReport(seed=seed, checks=checks)
    if config.output_path is not None:
        out = prepare_out_dir(config.output_path, config.force)
        (out / "verify_report.json").write_text(
            json.dumps(report.to_dict(), indent=1) + "\n")
    return report


# ---------------------------------------------------------------------------
# diagnose mode
# ---------------------------------------------------------------------------

def run_diagnose(config: ExperimentConfig) -> dict:
    """Record split discrepancies over many builds and profile their tails.

    Writes disc_records.csv (first build, all splits), mgf_profile.csv
    (per-direction, per-scale subgaussian estimates of the root-split
    record across config.trials builds), and diagnose_summary.json.
    """
    if config.output_path is None:
        raise ValueError("diagnose mode needs an output path")
    if config.trials < 100:
        raise ValueError("diagnose needs at least 100 trials for stable tail estimates")
    out = prepare_out_dir(config.output_path, config.force)
    n = config.n_list[0]
    vecs = []
    first_records = None
    h_used = None
    for i in range(config.trials):
        tcfg = TransferenceConfig(
            n=n, d=config.d, h=config.h, pairing=config.pairing,
            record_discrepancy=True,
            seed=int(substream(config.seed, "diagnose", i).integers(2 ** 62)))
        tree = build_partition_tree(tcfg)
        if first_records is None:
            first_records = tree.disc_records
            h_used = tree.config.h
        vecs.append(tree.disc_records[(0, 0)].to_dense())
    write_disc_csv(first_records, out / "disc_records.csv")
    samples = np.stack(vecs)
    rows = mgf_profile(samples, directions=32,
                       rng=substream(config.seed, "diagnose-directions"),
                       extra_directions=np.ones((1, samples.shape[1])))
    write_mgf_csv(rows, out / "mgf_profile.csv")
    constant = max(0.0, max(est for _, _, est in rows)) if rows else 0.0
    summary = {
        "n": n,
        "d": config.d,
        "h": h_used,
        "trials": config.trials,
        "subgaussian_constant": constant,
        "reference_bound": 8.0 * math.log(n) ** 2,
        "disc_csv": "disc_records.csv",
        "mgf_csv": "mgf_profile.csv",
    }
    (out / "diagnose_summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    return summary


# ---------------------------------------------------------------------------
# generate mode
# ---------------------------------------------------------------------------

def run_generate(config: ExperimentConfig) -> dict:
    """Build one partition tree and export its leaves as CSV files.

    The summary file holds only deterministic fields, so a rerun with the
    same config is byte-identical; the wall-clock time is returned to the
    caller (and printed by the CLI) but kept out of the artifact.
    """
    if config.output_path is None:
        raise ValueError("generate mode needs an output path")
    n = config.n_list[0]
    tcfg = TransferenceConfig(n=n, d=config.d, h=config.h,
                              pairing=config.pairing, seed=config.seed)
    start = time.perf_counter()
    tree = build_partition_tree(tcfg)
    wall = time.perf_counter() - start
    tree.save(config.output_path, which="leaves", force=config.force)
    summary = {
        "n": n,
        "d": config.d,
        "h": tcfg.h,
        "seed": config.seed,
        "pairing": config.pairing,
        "leaf_count": n,
        "points_total": tcfg.m0,
        "op_count": int(tree.op_count),
        "per_point_cost": tree.op_count / tcfg.m0,
    }
    (Path(config.output_path) / "generate_summary.json").write_text(
        json.dumps(summary, indent=1) + "\n")
    return {**summary, "wall_seconds": wall}


# ---------------------------------------------------------------------------
# shared output helpers
# ---------------------------------------------------------------------------

def prepare_out_dir(path: str | Path, force: bool = False) -> Path:
    """Create (or reuse) an output directory, refusing non-empty ones.

    Matches the tree exporter's collision rule so every mode fails the
    same way on an already-used path unless force is set.
    """
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"output path {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out
