"""Sampled drivers on uniform grids, their level-two lifts, and norms.

Paths live on uniform grids over [-1, 0].  Fractional Brownian samples
are drawn through a dense Cholesky factor of the exact increment
covariance, so the law is exact up to floating point.  The level-two
lift integrates the piecewise-linear interpolant; it is stored through
one-parameter cumulative integrals, which makes the Chen identity hold
by cancellation instead of by quadrature accuracy.

Norms are reported as `NormEstimate` records.  The Holder norm takes a
sup over grid pairs separated by at least a minimum gap (default two
grid steps, below which the quotient is dominated by interpolation
noise); the scaling-annealed field norm pairs the field against one
fixed C^2 tensor-product bump across a dyadic ladder of scales, so it
is a certified lower bound for the corresponding sup over all profiles.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from math import floor, sqrt
from pathlib import Path
from typing import BinaryIO, Callable

import numpy as np

MAX_GRID = 4096

_MAGIC_PATH = b"CPT1"
_MAGIC_LIFT = b"CLF1"


# ---------------------------------------------------------------------------
# sampled paths


@dataclass(frozen=True, eq=False)
class SampledPath:
    """A vector path sampled on a uniform ascending grid.

    `values` has one row per grid time and one column per component.
    `hurst` and `seed` record how random samples were drawn; both stay
    None for deterministic constructions.
    """

    times: np.ndarray
    values: np.ndarray
    hurst: float | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        times = np.array(self.times, dtype=np.float64)
        values = np.array(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if times.ndim != 1 or times.size < 2:
            raise ValueError("need a one-dimensional grid with at least two times")
        if values.shape[0] != times.size:
            raise ValueError("values must have one row per grid time")
        steps = np.diff(times)
        if steps[0] <= 0 or not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            raise ValueError("grid must be ascending and uniform")
        times.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def grid_size(self) -> int:
        return self.times.size

    @property
    def n_components(self) -> int:
        return self.values.shape[1]

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])


def path_from_function(fn: Callable[[float], float], grid_size: int = 129,
                       span: tuple[float, float] = (-1.0, 0.0)) -> SampledPath:
    """Sample a scalar function on a uniform grid; handy in tests."""
    times = np.linspace(span[0], span[1], grid_size)
    return SampledPath(times, np.array([[fn(float(t))] for t in times]))


# ---------------------------------------------------------------------------
# fractional Brownian sampling


@lru_cache(maxsize=8)
def _fbm_increment_cholesky(hurst: float, grid_size: int) -> np.ndarray:
    """Cholesky factor of the exact fBm increment covariance on the grid."""
    step = 1.0 / (grid_size - 1)
    k = np.abs(np.subtract.outer(np.arange(grid_size - 1), np.arange(grid_size - 1)))
    two_h = 2.0 * hurst
    cov = 0.5 * (np.abs(k + 1) ** two_h + np.abs(k - 1) ** two_h - 2.0 * k**two_h)
    cov *= step**two_h
    return np.linalg.cholesky(cov)


def sample_fbm(hurst: float, grid_size: int, n_components: int = 1,
               seed: int = 0) -> SampledPath:
    """Draw fractional Brownian motion on [-1, 0], started at zero.

    Components are independent copies with the same Hurst index.  The
    same seed always reproduces the same sample, and grids are capped at
    MAX_GRID to keep the dense factorisation affordable.
    """
    if not 0.0 < hurst < 1.0:
        raise ValueError(f"hurst index must lie in (0, 1), got {hurst}")
    if not 2 <= grid_size <= MAX_GRID:
        raise ValueError(f"grid_size must lie in [2, {MAX_GRID}], got {grid_size}")
    if n_components < 1:
        raise ValueError("need at least one component")
    chol = _fbm_increment_cholesky(float(hurst), int(grid_size))
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((grid_size - 1, n_components))
    increments = chol @ noise
    values = np.vstack([np.zeros((1, n_components)), np.cumsum(increments, axis=0)])
    return SampledPath(np.linspace(-1.0, 0.0, grid_size), values,
                       hurst=float(hurst), seed=int(seed))


def fbm_lag_one_correlation(hurst: float) -> float:
    """Correlation of consecutive unit-lag increments: 2^{2H-1} - 1."""
    return 2.0 ** (2.0 * hurst - 1.0) - 1.0


# ---------------------------------------------------------------------------
# level-two lift


@dataclass(frozen=True, eq=False)
class BranchedLift2:
    """A path together with its piecewise-linear second level.

    `integrals[t, j, i]` holds int_{t_0}^{t} X^j dX^i for the linear
    interpolant; the two-parameter array is reconstructed on demand as

        X2[s, t, j, i] = I_t - I_s - X^j_s (X^i_t - X^i_s),

    which keeps storage linear in the grid and makes Chen's identity an
    algebraic cancellation.
    """

    base: SampledPath
    integrals: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        n = self.base.n_components
        if self.integrals.shape != (self.base.grid_size, n, n):
            raise ValueError("integral table shape mismatch")
        self.integrals.flags.writeable = False

    def second(self, s: int, t: int) -> np.ndarray:
        """Second-level increment over grid indices s <= t, shape (n, n)."""
        x = self.base.values
        return (self.integrals[t] - self.integrals[s]
                - np.outer(x[s], x[t] - x[s]))

    def second_batch(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Vectorised `second` over index arrays; output (..., n, n)."""
        s = np.asarray(s)
        t = np.asarray(t)
        x = self.base.values
        outer = x[s][..., :, None] * (x[t] - x[s])[..., None, :]
        return self.integrals[t] - self.integrals[s] - outer

    def pair_matrix(self, j: int, i: int) -> np.ndarray:
        """Dense two-parameter array X2[s, t] for one component pair."""
        npts = self.base.grid_size
        if npts > 1024:
            raise ValueError("dense pair matrix restricted to grids <= 1024")
        x = self.base.values
        col = self.integrals[:, j, i]
        return (col[None, :] - col[:, None]
                - x[:, j][:, None] * (x[:, i][None, :] - x[:, i][:, None]))


def lift_level2(path: SampledPath) -> BranchedLift2:
    """Lift a sampled path by integrating its linear interpolant."""
    x = path.values
    mid = 0.5 * (x[:-1] + x[1:])
    dx = np.diff(x, axis=0)
    contrib = mid[:, :, None] * dx[:, None, :]
    table = np.concatenate(
        [np.zeros((1,) + contrib.shape[1:]), np.cumsum(contrib, axis=0)])
    return BranchedLift2(path, table)


def chen_residual(lift: BranchedLift2, samples: int = 4096, seed: int = 0) -> float:
    """Largest relative Chen defect over sampled index triples s < u < t.

    The defect X2_{s,t} - X2_{s,u} - X2_{u,t} - dX_{s,u} (x) dX_{u,t}
    vanishes identically for the cumulative-integral representation, so
    anything reported here is pure floating-point noise.
    """
    npts = lift.base.grid_size
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, npts, size=(samples, 3))
    picks.sort(axis=1)
    s, u, t = picks[:, 0], picks[:, 1], picks[:, 2]
    x = lift.base.values
    full = lift.second_batch(s, t)
    left = lift.second_batch(s, u)
    right = lift.second_batch(u, t)
    cross = (x[u] - x[s])[:, :, None] * (x[t] - x[u])[:, None, :]
    defect = np.abs(full - left - right - cross)
    scale = np.maximum.reduce(
        [np.abs(full), np.abs(left), np.abs(right), np.abs(cross)])
    scale = np.maximum(scale, 1e-300)
    return float(np.max(defect / scale))


# ---------------------------------------------------------------------------
# norm estimates


@dataclass(frozen=True)
class NormEstimate:
    """A computed norm with the window and exponent it refers to.

    `window` is the time interval for path seminorms; field norms use
    `center` and `scale` instead.  `resolution_limited` marks estimates
    whose requested scales fell below the grid resolution and were
    clamped rather than extrapolated.
    """

    value: float
    exponent: float
    window: tuple[float, float] | None = None
    center: tuple[float, ...] | None = None
    scale: float | None = None
    resolution_limited: bool = False


def holder_norm(path: SampledPath, gamma: float,
                interval: tuple[float, float] | None = None,
                min_gap: float | None = None) -> NormEstimate:
    """Sup of |X_t - X_s| / |t - s|^gamma over grid pairs in a window.

    Pairs closer than `min_gap` are excluded; the default and floor is
    two grid steps, and a smaller request is clamped to it with the
    resolution flag set.  Vector paths use the Euclidean norm across
    components.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"holder exponent must lie in (0, 1], got {gamma}")
    step = path.step
    lo, hi = interval if interval is not None else path.span
    if hi <= lo:
        raise ValueError("interval must have positive length")
    eps = 1e-9 * step
    first = int(np.searchsorted(path.times, lo - eps, side="left"))
    last = int(np.searchsorted(path.times, hi + eps, side="right")) - 1
    if last <= first:
        raise ValueError("window contains fewer than two grid points")
    limited = False
    floor_gap = 2.0 * step
    if min_gap is None:
        min_gap = floor_gap
    elif min_gap < floor_gap - eps:
        min_gap = floor_gap
        limited = True
    min_lag = max(1, int(np.ceil(min_gap / step - 1e-9)))
    if first + min_lag > last:
        raise ValueError("no grid pairs separated by the minimum gap")
    times = path.times[first:last + 1]
    values = path.values[first:last + 1]
    best = 0.0
    for lag in range(min_lag, times.size):
        diffs = values[lag:] - values[:-lag]
        gaps = times[lag:] - times[:-lag]
        norms = np.sqrt(np.sum(diffs * diffs, axis=1))
        best = max(best, float(np.max(norms / gaps**gamma)))
    return NormEstimate(best, gamma, window=(float(times[0]), float(times[-1])),
                        resolution_limited=limited)


# ---------------------------------------------------------------------------
# scaling-annealed field norm


def bump_profile(points: np.ndarray) -> np.ndarray:
    """The fixed C^2 test profile, evaluated on scaled coordinates.

    `points[..., 0]` is the scaled time in (-1, 0), the remaining axes
    are scaled space in (-1, 1).  Each factor is (1 - u^2)^3 on (-1, 1)
    with the time coordinate affinely mapped onto that interval, and the
    product carries a fixed 1/6 so that every derivative of parabolic
    order at most two has sup norm at most one.
    """
    u = np.array(points, dtype=np.float64, copy=True)
    u[..., 0] = 2.0 * u[..., 0] + 1.0
    inside = np.all(np.abs(u) < 1.0, axis=-1)
    factors = np.where(np.abs(u) < 1.0, (1.0 - u**2) ** 3, 0.0)
    return np.where(inside, factors.prod(axis=-1), 0.0) / 6.0


def bump_mass(dim: int) -> float:
    """Space-time integral of the fixed profile in `dim` coordinates."""
    return (1.0 / 6.0) * (16.0 / 35.0) * (32.0 / 35.0) ** (dim - 1)


def _pairing(values: np.ndarray, origin: tuple[float, ...],
             spacing: tuple[float, ...], z: tuple[float, ...],
             lam: float, profile: Callable[[np.ndarray], np.ndarray]) -> float:
    """Midpoint-rule pairing of a grid field with the profile at scale lam."""
    dim = values.ndim
    weights = (2.0,) + (1.0,) * (dim - 1)
    axes = np.meshgrid(*[origin[a] + spacing[a] * np.arange(values.shape[a])
                         for a in range(dim)], indexing="ij")
    scaled = np.stack(
        [(axes[a] - z[a]) / lam ** weights[a] for a in range(dim)], axis=-1)
    total_weight = float(sum(weights))
    kernel = profile(scaled) / lam**total_weight
    cell = float(np.prod(spacing))
    return float(np.sum(values * kernel) * cell)


def besov_norm_field(values: np.ndarray, origin: tuple[float, ...],
                     spacing: tuple[float, ...], beta: float,
                     z: tuple[float, ...], h: float,
                     profile: Callable[[np.ndarray], np.ndarray] | None = None,
                     min_scale: float | None = None) -> NormEstimate:
    """Sup over dyadic scales of lam^{-beta} |<field, profile at scale lam>|.

    The field is a d-axis array on a uniform rectangular grid; axis zero
    is time.  Scales run down the ladder h, h/2, ... and stop at the
    grid resolution (a few cells per direction); a `min_scale` request
    below that floor is clamped and the estimate carries the resolution
    flag.  Pairing a single fixed profile makes the value a lower bound
    for the sup over all admissible profiles.
    """
    values = np.asarray(values, dtype=np.float64)
    dim = values.ndim
    if not (len(origin) == len(spacing) == len(z) == dim):
        raise ValueError("origin, spacing and z must match the field rank")
    if h <= 0:
        raise ValueError("outer scale must be positive")
    top = tuple(origin[a] + spacing[a] * (values.shape[a] - 1) for a in range(dim))
    if z[0] - h * h < origin[0] - 1e-9 or z[0] > top[0] + 1e-9:
        raise ValueError("backwards ball leaves the grid in time")
    for a in range(1, dim):
        if z[a] - h < origin[a] - 1e-9 or z[a] + h > top[a] + 1e-9:
            raise ValueError("backwards ball leaves the grid in space")
    if profile is None:
        profile = bump_profile
    floor_scale = 2.0 * sqrt(spacing[0])
    for a in range(1, dim):
        floor_scale = max(floor_scale, 4.0 * spacing[a])
    limited = False
    if min_scale is None:
        min_scale = floor_scale
    elif min_scale < floor_scale:
        min_scale = floor_scale
        limited = True
    scales = []
    lam = h
    while lam >= min_scale * (1.0 - 1e-12):
        scales.append(lam)
        lam *= 0.5
    if not scales:
        # outer scale already below resolution: report it as-is, flagged
        scales = [h]
        limited = True
    best = max(lam ** (-beta) * abs(_pairing(values, origin, spacing, z, lam, profile))
               for lam in scales)
    return NormEstimate(best, beta, center=tuple(float(c) for c in z),
                        scale=float(h), resolution_limited=limited)


# ---------------------------------------------------------------------------
# serialization


def _header(magic: bytes, path: SampledPath) -> bytes:
    hurst = path.hurst if path.hurst is not None else float("nan")
    seed = path.seed if path.seed is not None else -1
    return struct.pack("<4sII d q", magic, path.n_components, path.grid_size,
                       hurst, seed)


def write_path_binary(path: SampledPath, dest: str | Path | BinaryIO) -> None:
    """Write a path as a little-endian columnar binary file.

    The header records component count, grid size, Hurst index (NaN for
    deterministic paths) and seed (-1 likewise); the payload is the time
    column followed by one float64 column per component.
    """
    _write_blob(dest, _header(_MAGIC_PATH, path) + _columns(path))


def write_lift_binary(lift: BranchedLift2, dest: str | Path | BinaryIO) -> None:
    """Write a lift: the path columns, then n^2 cumulative integral columns."""
    extras = [np.ascontiguousarray(lift.integrals[:, j, i]).tobytes()
              for j in range(lift.base.n_components)
              for i in range(lift.base.n_components)]
    blob = _header(_MAGIC_LIFT, lift.base) + _columns(lift.base) + b"".join(extras)
    _write_blob(dest, blob)


def _columns(path: SampledPath) -> bytes:
    cols = [np.ascontiguousarray(path.times, dtype="<f8").tobytes()]
    cols += [np.ascontiguousarray(path.values[:, j], dtype="<f8").tobytes()
             for j in range(path.n_components)]
    return b"".join(cols)


def _write_blob(dest: str | Path | BinaryIO, blob: bytes) -> None:
    if hasattr(dest, "write"):
        dest.write(blob)
    else:
        with open(dest, "wb") as handle:
            handle.write(blob)


def read_path_binary(src: str | Path | BinaryIO) -> SampledPath:
    """Read back a path written by `write_path_binary`."""
    path, _ = _read_columns(src, _MAGIC_PATH)
    return path


def read_lift_binary(src: str | Path | BinaryIO) -> BranchedLift2:
    """Read back a lift written by `write_lift_binary`."""
    path, rest = _read_columns(src, _MAGIC_LIFT)
    n, npts = path.n_components, path.grid_size
    flat = np.frombuffer(rest, dtype="<f8", count=n * n * npts)
    table = np.ascontiguousarray(
        flat.reshape(n, n, npts).transpose(2, 0, 1))
    return BranchedLift2(path, table)


def _read_columns(src: str | Path | BinaryIO, magic: bytes):
    if hasattr(src, "read"):
        blob = src.read()
    else:
        blob = Path(src).read_bytes()
    head = struct.calcsize("<4sII d q")
    tag, n, npts, hurst, seed = struct.unpack("<4sII d q", blob[:head])
    if tag != magic:
        raise ValueError(f"unexpected file tag {tag!r}")
    need = head + (n + 1) * npts * 8
    cols = np.frombuffer(blob[head:need], dtype="<f8").reshape(n + 1, npts)
    path = SampledPath(cols[0].copy(), cols[1:].T.copy(),
                       hurst=None if np.isnan(hurst) else float(hurst),
                       seed=None if seed < 0 else int(seed))
    return path, blob[need:]


def write_path_csv(path: SampledPath, dest: str | Path) -> None:
    """Write a path as CSV with a time column and one column per component."""
    with open(dest, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["time"] + [f"x{j}" for j in range(path.n_components)])
        for row in range(path.grid_size):
            writer.writerow([repr(float(path.times[row]))]
                            + [repr(float(v)) for v in path.values[row]])


def read_path_csv(src: str | Path) -> SampledPath:
    """Read a CSV path written by `write_path_csv`."""
    with open(src, newline="") as handle:
        rows = list(csv.reader(handle))
    data = np.array([[float(cell) for cell in row] for row in rows[1:]])
    return SampledPath(data[:, 0], data[:, 1:])
