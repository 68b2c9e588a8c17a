"""Empirical verification of the a priori bounds.

Each bound has the shape |phi_z| <= combination(driver norms, |z+1|^{-alpha})
with a data-dependent window scale lambda_z.  This module assembles the
right-hand sides from measured norms, sweeps initial or boundary data over
several orders of magnitude, and reports the largest observed LHS/RHS ratio
as the fitted constant.  The theorems leave their constants non-explicit,
so the interesting output is the stability of that ratio, not its value.

Driver norms are measured on the exact window each statement cites, which
keeps two invariants machine-checkable: the driver term depends only on the
driver restricted to the window, and scaling the driver by c multiplies the
term by exactly c^rho.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from fractions import Fraction
from math import sqrt
from typing import Callable, Sequence

import numpy as np

from .exponents import GrowthDescriptor, ExponentReport, alpha as alpha_of
from .exponents import classical_rho, rp_exponents, young_exponents
from .paths import (
    BranchedLift2,
    NormEstimate,
    SampledPath,
    besov_norm_field,
    holder_norm,
    lift_level2,
    sample_fbm,
)
from .solvers import (
    SCHEME_SPLIT,
    GridField,
    mollified_noise,
    pde_fd_solve,
    rde_solve_davie,
    young_solve,
)

YOUNG_KINDS = ("young_simple", "young_sharp", "young_weighted")
RP_KINDS = ("rp_general", "rp_linear")
KINDS = ("classical",) + YOUNG_KINDS + RP_KINDS

PROBE_POINTS = 5


# ---------------------------------------------------------------------------
# bound descriptors


@dataclass(frozen=True)
class BoundSpec:
    """Which estimate to check and the parameters entering its exponents.

    `constant` is the C of the window rule lambda_z = (C |phi_z|^{-1/alpha})
    wedge (fraction * dist z); the fraction is fixed per statement: one
    quarter for the heat bound, one half for the path bounds.  Exponent
    parameters may be Fractions when exact powers matter.
    """

    kind: str
    p: int
    gamma: float | Fraction = 0.75
    theta: float | Fraction = 1.0
    eta: float | Fraction = 0.0
    q: float | Fraction = 0.0
    beta: float | Fraction = -0.5
    constant: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown bound kind {self.kind!r}")
        if self.p < 2:
            raise ValueError(f"need integer power p >= 2, got {self.p}")
        if self.constant <= 0:
            raise ValueError("window constant must be positive")
        if self.kind == "classical" and not -2.0 < float(self.beta) <= 0.0:
            raise ValueError(f"field exponent must lie in (-2, 0], got {self.beta}")

    @property
    def alpha(self) -> Fraction:
        case = "pde" if self.kind == "classical" else "ode"
        return alpha_of(self.p, case)

    @property
    def fraction(self) -> float:
        return 0.25 if self.kind == "classical" else 0.5

    @property
    def bound_id(self) -> str:
        if self.kind == "classical":
            return f"classical:p={self.p}:beta={self.beta}"
        if self.kind in YOUNG_KINDS:
            extra = f":eta={self.eta}" if self.kind == "young_weighted" else ""
            return f"{self.kind}:p={self.p}:gamma={self.gamma}:theta={self.theta}{extra}"
        return f"{self.kind}:p={self.p}:gamma={self.gamma}:eta={self.eta}:q={self.q}"

    def window_scale(self, phi_z: float, dist: float) -> float:
        """The data-dependent localization scale lambda_z (mu_z for the PDE)."""
        cap = self.fraction * dist
        if phi_z == 0.0:
            return cap
        return min(self.constant * abs(phi_z) ** (-1.0 / float(self.alpha)), cap)


@dataclass(frozen=True)
class RhsParts:
    """One assembled right-hand side, split for reporting.

    `total` is the bound's value; `driver` is the norm-dependent part and
    `dist` the |z+1|^{-alpha} floor.  The two rough-path terms are kept
    separately when they exist.
    """

    driver: float
    dist: float
    total: float
    scale: float
    resolution_limited: bool = False
    term_one: float = 0.0
    term_two: float = 0.0


# ---------------------------------------------------------------------------
# forcing descriptors and their norms


@dataclass(frozen=True)
class Forcing:
    """Scalar forcing f with optional derivatives and a declared state box.

    Norm suprema are taken over `box` on a uniform grid; the descriptor is
    honest only while solutions stay inside the box.  `f = None` means the
    zero forcing.
    """

    f: Callable[[float], float] | None
    df: Callable[[float], float] | None = None
    d2f: Callable[[float], float] | None = None
    box: tuple[float, float] = (-8.0, 8.0)
    grid: int = 2001
    label: str = "f"

    def __post_init__(self) -> None:
        if self.box[1] <= self.box[0]:
            raise ValueError("state box must have positive length")
        if self.grid < 3:
            raise ValueError("need at least three grid points for norms")

    def samples(self, order: int) -> tuple[np.ndarray, np.ndarray]:
        """Grid values of the order-th derivative over the box."""
        xs = np.linspace(self.box[0], self.box[1], self.grid)
        fn = (self.f, self.df, self.d2f)[order]
        if fn is None:
            if order > 0 and self.f is not None:
                raise ValueError(f"forcing lacks derivative of order {order}")
            return xs, np.zeros_like(xs)
        return xs, np.array([float(fn(float(x))) for x in xs])


ZERO_FORCING = Forcing(None, label="zero")


def state_weight(x: np.ndarray, eta: float) -> np.ndarray:
    """The weight |x|_eta: |x|^eta + 1 for eta >= 0, else the bare power."""
    ax = np.abs(np.asarray(x, dtype=np.float64))
    if eta >= 0:
        return ax**eta + 1.0
    with np.errstate(divide="ignore"):
        return ax**eta


def weighted_sup(xs: np.ndarray, values: np.ndarray, eta: float | None) -> float:
    if eta is None:
        return float(np.max(np.abs(values)))
    with np.errstate(invalid="ignore"):
        ratios = np.abs(values) / state_weight(xs, eta)
    return float(np.max(ratios[np.isfinite(ratios)], initial=0.0))


def weighted_holder(xs: np.ndarray, values: np.ndarray, theta: float,
                    eta: float | None) -> float:
    """[f]_theta over the grid; the weighted variant restricts to pairs of
    comparable magnitude and divides by |x|_{eta-theta} at the larger x."""
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"holder exponent must lie in (0, 1], got {theta}")
    dx = xs[1] - xs[0]
    best = 0.0
    for lag in range(1, xs.size):
        lo, hi = values[:-lag], values[lag:]
        num = np.abs(hi - lo)
        gap = (lag * dx) ** theta
        if eta is None:
            best = max(best, float(np.max(num)) / gap)
            continue
        big = np.maximum(np.abs(xs[:-lag]), np.abs(xs[lag:]))
        small = np.minimum(np.abs(xs[:-lag]), np.abs(xs[lag:]))
        mask = small >= 0.5 * big
        if not np.any(mask):
            continue
        with np.errstate(invalid="ignore", divide="ignore"):
            ratios = num[mask] / (gap * state_weight(big[mask], eta - theta))
        finite = ratios[np.isfinite(ratios)]
        if finite.size:
            best = max(best, float(np.max(finite)))
    return best


def butcher_norm(forcing: Forcing, size: int, ell: int,
                 eta: float | None) -> float:
    """Weighted sup of D^ell f^tau for the one- and two-vertex trees.

    The grafted products for a scalar driver are f, f'f and their
    derivatives; anything deeper would need third derivatives and is out
    of the two-level table's reach.
    """
    if forcing.f is None:
        return 0.0
    xs, f0 = forcing.samples(0)
    if (size, ell) == (0, 0):
        vals = f0
    elif (size, ell) == (0, 1):
        vals = forcing.samples(1)[1]
    elif (size, ell) == (0, 2):
        vals = forcing.samples(2)[1]
    elif (size, ell) == (1, 0):
        vals = forcing.samples(1)[1] * f0
    elif (size, ell) == (1, 1):
        d1 = forcing.samples(1)[1]
        vals = d1 * d1 + f0 * forcing.samples(2)[1]
    else:
        raise ValueError(f"no grafted product for forest size {size}, order {ell}")
    return weighted_sup(xs, vals, eta)


def linear_growth_norm(forcing: Forcing, eta: float, q: float, levels: int) -> float:
    """max over 0 <= ell <= N of sup |D^ell f| / (|x|+1)^(eta + ell q)."""
    if forcing.f is None:
        return 0.0
    best = 0.0
    for ell in range(levels + 1):
        xs, vals = forcing.samples(ell)
        weight = (np.abs(xs) + 1.0) ** (eta + ell * q)
        best = max(best, float(np.max(np.abs(vals) / weight)))
    return best


# ---------------------------------------------------------------------------
# window norms of the driver


def second_level_holder(lift: BranchedLift2, exponent: float,
                        interval: tuple[float, float] | None = None,
                        min_gap: float | None = None) -> NormEstimate:
    """Sup of |X2_{s,t}| / |t-s|^exponent over grid pairs in a window.

    Mirrors `holder_norm` index selection; the value maxes over the
    component pairs of the second level.
    """
    if not 0.0 < exponent <= 2.0:
        raise ValueError(f"second-level exponent must lie in (0, 2], got {exponent}")
    path = lift.base
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
    best = 0.0
    for lag in range(min_lag, last - first + 1):
        s_idx = np.arange(first, last + 1 - lag)
        x2 = lift.second_batch(s_idx, s_idx + lag)
        gaps = path.times[s_idx + lag] - path.times[s_idx]
        peaks = np.max(np.abs(x2.reshape(x2.shape[0], -1)), axis=1)
        best = max(best, float(np.max(peaks / gaps**exponent)))
    return NormEstimate(best, exponent,
                        window=(float(path.times[first]), float(path.times[last])),
                        resolution_limited=limited)


# ---------------------------------------------------------------------------
# right-hand sides


def _resolved_scale(lam: float, step: float) -> tuple[float, bool]:
    """Clamp a window scale to three grid steps so at least one admissible
    pair exists; the flag mirrors the norm routines' resolution semantics."""
    floor = 3.0 * step
    if lam < floor:
        return floor, True
    return lam, False


def rhs_young(spec: BoundSpec, forcing: Forcing, path: SampledPath,
              z: float, phi_z: float) -> RhsParts:
    """max{driver term, |z+1|^{-alpha}} for the three one-level bounds."""
    if spec.kind not in YOUNG_KINDS:
        raise ValueError(f"not a one-level bound: {spec.kind!r}")
    dist = z + 1.0
    if dist <= 0.0 or z > path.span[1] + 1e-12:
        raise ValueError("z must lie inside the driver's time span")
    al = float(spec.alpha)
    rhos = young_exponents(spec.alpha, spec.gamma, spec.theta, spec.eta)
    lam, clamped = _resolved_scale(spec.window_scale(phi_z, dist), path.step)
    gamma, theta, eta = float(spec.gamma), float(spec.theta), float(spec.eta)
    xnorm = holder_norm(path, gamma, interval=(z - lam, z))
    limited = clamped or xnorm.resolution_limited
    if forcing.f is None:
        base, rho = 0.0, float(rhos["rho_simple"])
    elif spec.kind == "young_simple":
        xs, f0 = forcing.samples(0)
        c_theta = weighted_sup(xs, f0, None) + weighted_holder(xs, f0, theta, None)
        base, rho = c_theta * xnorm.value, float(rhos["rho_simple"])
    elif spec.kind == "young_sharp":
        xs, f0 = forcing.samples(0)
        f_inf = weighted_sup(xs, f0, None)
        c_theta = f_inf + weighted_holder(xs, f0, theta, None)
        w = (1.0 - gamma) / theta
        base = f_inf ** (1.0 - w) * c_theta**w * xnorm.value
        rho = float(rhos["rho_sharp"])
    else:
        xs, f0 = forcing.samples(0)
        f_inf = weighted_sup(xs, f0, eta)
        c_theta = f_inf + weighted_holder(xs, f0, theta, eta)
        w = (1.0 - gamma) / theta
        base = f_inf ** (1.0 - w) * c_theta**w * xnorm.value
        rho = float(rhos["rho_weighted"])
    driver = base**rho
    dist_term = dist ** (-al)
    return RhsParts(driver, dist_term, max(driver, dist_term), lam, limited)


def rp_driver_terms(report: ExponentReport, butcher: dict[tuple[int, int], float],
                    xnorms: dict[int, float]) -> tuple[float, float]:
    """The two local-norm maxima of the two-term bound, from raw factors.

    `butcher[(size, ell)]` is the weighted sup of D^ell f^tau for forests
    of that size, `xnorms[size]` the matching window Hoelder norm of the
    lifted driver.  Factored out so exponent bookkeeping can be checked
    against closed forms without touching paths or solvers.
    """
    h_factor = {row.size: butcher[(row.size, 0)] * xnorms[row.size]
                for row in report.ode_rows if row.ell == 0}
    term_one = 0.0
    for row in report.ode_rows:
        if row.ell == 0:
            if row.rho is None:
                raise ValueError("missing base exponent; margin not positive")
            term_one = max(term_one, h_factor[row.size] ** float(row.rho))
    term_two = 0.0
    for pair in report.ode_pairs:
        if pair.rho is None:
            raise ValueError("missing cross exponent; margin not positive")
        factor = (butcher[(pair.size, pair.ell)] * xnorms[pair.size]
                  * h_factor[pair.sigma_size] ** float(pair.zeta))
        term_two = max(term_two, factor ** float(pair.rho))
    return term_one, term_two


def rhs_rp(spec: BoundSpec, forcing: Forcing, lift: BranchedLift2,
           z: float, phi_z: float,
           report: ExponentReport | None = None) -> RhsParts:
    """Two-term rough-path bound, or its single-power linear collapse."""
    if spec.kind not in RP_KINDS:
        raise ValueError(f"not a rough-path bound: {spec.kind!r}")
    if report is None:
        report = rp_exponents(
            spec.p, Fraction(spec.gamma),
            GrowthDescriptor.linear_ode(Fraction(spec.eta), Fraction(spec.q)))
    levels = report.n_levels
    if levels > 2:
        raise ValueError("driver depth beyond two levels is not implemented")
    dist = z + 1.0
    if dist <= 0.0:
        raise ValueError("z must lie inside (-1, 0]")
    al = float(spec.alpha)
    lam, clamped = _resolved_scale(spec.window_scale(phi_z, dist), lift.base.step)
    window = (z - lam, z)
    gamma = float(spec.gamma)
    h1 = holder_norm(lift.base, gamma, interval=window)
    limited = clamped or h1.resolution_limited
    xnorms = {0: h1.value}
    if levels == 2:
        h2 = second_level_holder(lift, 2.0 * gamma, interval=window)
        xnorms[1] = h2.value
        limited = limited or h2.resolution_limited
    dist_term = dist ** (-al)
    if spec.kind == "rp_linear":
        if report.collapse_exponent is None:
            raise ValueError("margin not positive; no collapsed exponent")
        fnorm = linear_growth_norm(forcing, float(spec.eta), float(spec.q), levels)
        tri = max(xnorms[size] ** (1.0 / (size + 1)) for size in xnorms)
        driver = (fnorm * tri) ** float(report.collapse_exponent)
        return RhsParts(driver, dist_term, driver + dist_term, lam, limited)
    butcher = {(row.size, row.ell):
               butcher_norm(forcing, row.size, row.ell, float(row.eta))
               for row in report.ode_rows}
    term_one, term_two = rp_driver_terms(report, butcher, xnorms)
    driver = term_one + term_two
    return RhsParts(driver, dist_term, driver + dist_term, lam, limited,
                    term_one, term_two)


def parabolic_dist(z: tuple[float, ...]) -> float:
    """Distance to the bottom and sides of the unit backwards box,
    in the scale where time counts twice."""
    gap = sqrt(z[0] + 1.0) if z[0] > -1.0 else 0.0
    for coord in z[1:]:
        gap = min(gap, 1.0 - abs(coord))
    return gap


def rhs_classical(spec: BoundSpec, field: GridField | None,
                  z: tuple[float, ...], phi_z: float) -> RhsParts:
    """C max{measured field norm^rho, dist^{-alpha}} for the heat bound."""
    if spec.kind != "classical":
        raise ValueError(f"not the heat-equation bound: {spec.kind!r}")
    dist = parabolic_dist(z)
    if dist <= 0.0:
        raise ValueError(f"z = {z} is not an interior point")
    al = float(spec.alpha)
    mu = spec.window_scale(phi_z, dist)
    rho = float(classical_rho(spec.alpha, Fraction(spec.beta)))
    limited = False
    norm = 0.0
    if field is not None:
        beta = float(spec.beta)
        # probe centers on the backward cylinder of radius mu at z; each
        # besov ladder then stays inside the doubled cylinder
        for yt in np.linspace(z[0] - mu * mu, z[0], PROBE_POINTS):
            space_axes = [np.linspace(c - mu, c + mu, PROBE_POINTS) for c in z[1:]]
            for ypos in np.stack(np.meshgrid(*space_axes, indexing="ij"),
                                 axis=-1).reshape(-1, len(z) - 1):
                est = besov_norm_field(field.values, field.origin, field.spacing,
                                       beta, (float(yt), *map(float, ypos)), mu)
                norm = max(norm, est.value)
                limited = limited or est.resolution_limited
    driver = norm**rho
    dist_term = dist ** (-al)
    total = spec.constant * max(driver, dist_term)
    return RhsParts(driver, dist_term, total, mu, limited)


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class BoundRecord:
    """One (trial, z) evaluation of a bound."""

    bound_id: str
    trial: int
    seed: int
    z: str
    lhs: float
    rhs_driver: float
    rhs_dist: float
    ratio: float
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class BoundReport:
    """All records of one sweep plus the saturation summary."""

    bound_id: str
    records: tuple[BoundRecord, ...]
    magnitudes: tuple[float, ...]
    max_ratio_by_magnitude: tuple[float, ...]
    max_ratio: float
    constant: float
    verdict: str
    flags: tuple[str, ...] = ()


def _saturation_verdict(per_magnitude: Sequence[float]) -> str:
    """Saturating when the largest magnitude no longer grows the peak ratio.

    Rising toward a ceiling is the expected coming-down shape, so earlier
    increases don't count against the verdict; only growth that persists
    at the top of the sweep does.
    """
    if any(not np.isfinite(peak) for peak in per_magnitude):
        return "degenerate"
    if len(per_magnitude) < 2:
        return "saturating"
    if per_magnitude[-1] > 1.05 * max(per_magnitude[:-1]):
        return "growing"
    return "saturating"


def _summarize(bound_id: str, records: list[BoundRecord],
               magnitudes: Sequence[float]) -> BoundReport:
    by_mag: dict[float, float] = {m: float("-inf") for m in magnitudes}
    flags: set[str] = set()
    for rec in records:
        mag = float(rec.flags[0].split("=", 1)[1])
        if np.isfinite(rec.ratio):
            by_mag[mag] = max(by_mag[mag], rec.ratio)
        flags.update(rec.flags[1:])
    peaks = tuple(by_mag[m] for m in magnitudes)
    finite = [r.ratio for r in records if np.isfinite(r.ratio)]
    max_ratio = max(finite) if finite else float("nan")
    return BoundReport(bound_id, tuple(records), tuple(float(m) for m in magnitudes),
                       peaks, max_ratio, max_ratio,
                       _saturation_verdict(peaks), tuple(sorted(flags)))


def _record_flags(magnitude: float, parts: RhsParts | None,
                  blown: bool) -> tuple[str, ...]:
    flags = [f"magnitude={float(magnitude)!r}"]
    if parts is not None and parts.resolution_limited:
        flags.append("resolution")
    if blown:
        flags.append("blow_up")
    return tuple(flags)


def sweep_coming_down(spec: BoundSpec, forcing: Forcing = ZERO_FORCING,
                      magnitudes: Sequence[float] = (1.0, 10.0, 100.0, 1000.0),
                      trials: int = 2, seed: int = 0, grid_size: int = 1025,
                      amplitude: float = 1.0, z_points: int = 6,
                      shape: tuple[int, int] = (129, 129),
                      eps_m: float = 0.25) -> BoundReport:
    """Solve across data magnitudes and report LHS/RHS ratio stability.

    Path bounds run the split-drift scheme on fractional drivers sampled
    at the spec's Hoelder exponent, scaled by `amplitude`, and read the
    ratio on a grid of interior times.  The heat bound runs boundary
    magnitudes against a layered-noise field.  Blow-ups are recorded as
    flagged records, never raised.
    """
    if spec.kind == "classical":
        return _sweep_pde(spec, magnitudes, trials, seed, amplitude, shape, eps_m)
    return _sweep_ode(spec, forcing, magnitudes, trials, seed, grid_size,
                      amplitude, z_points)


def _sweep_ode(spec, forcing, magnitudes, trials, seed, grid_size, amplitude,
               z_points) -> BoundReport:
    report = None
    if spec.kind in RP_KINDS:
        report = rp_exponents(
            spec.p, Fraction(spec.gamma),
            GrowthDescriptor.linear_ode(Fraction(spec.eta), Fraction(spec.q)))
    records: list[BoundRecord] = []
    for trial in range(trials):
        trial_seed = seed + trial
        raw = sample_fbm(float(spec.gamma), grid_size, seed=trial_seed)
        driver = SampledPath(raw.times.copy(), amplitude * raw.values,
                             hurst=raw.hurst, seed=raw.seed)
        lift = lift_level2(driver) if spec.kind in RP_KINDS else None
        idx = np.linspace(grid_size // 2, grid_size - 1, z_points).astype(int)
        for magnitude in magnitudes:
            if spec.kind in RP_KINDS:
                sol = rde_solve_davie(forcing.f, forcing.df, spec.p, lift,
                                      float(magnitude), scheme=SCHEME_SPLIT)
            else:
                sol = young_solve(forcing.f, spec.p, driver, float(magnitude),
                                  scheme=SCHEME_SPLIT)
            for k in idx:
                z = float(driver.times[k])
                blown = sol.blew_up and sol.blow_up_index <= k
                if blown:
                    records.append(BoundRecord(
                        spec.bound_id, trial, trial_seed, repr(z), float("nan"),
                        float("nan"), float("nan"), float("nan"),
                        _record_flags(magnitude, None, True)))
                    continue
                phi_z = float(np.sqrt(sol.values[k] @ sol.values[k]))
                if spec.kind in RP_KINDS:
                    parts = rhs_rp(spec, forcing, lift, z, phi_z, report=report)
                else:
                    parts = rhs_young(spec, forcing, driver, z, phi_z)
                records.append(BoundRecord(
                    spec.bound_id, trial, trial_seed, repr(z), phi_z,
                    parts.driver, parts.dist, phi_z / parts.total,
                    _record_flags(magnitude, parts, False)))
    return _summarize(spec.bound_id, records, magnitudes)


def _sweep_pde(spec, magnitudes, trials, seed, amplitude, shape,
               eps_m) -> BoundReport:
    records: list[BoundRecord] = []
    nt, nx = shape
    rows = [nt // 2, (3 * nt) // 4, nt - 1]
    cols = [nx // 4, nx // 2, (3 * nx) // 4]
    for trial in range(trials):
        trial_seed = seed + trial
        field = None
        if amplitude != 0.0:
            field = mollified_noise(float(spec.beta), eps_m, shape=shape,
                                    seed=trial_seed, amplitude=amplitude)
        for magnitude in magnitudes:
            sol = pde_fd_solve(spec.p, forcing=field, boundary=float(magnitude),
                               shape=shape)
            times = sol.axis_coords(0)
            xs = sol.axis_coords(1)
            for r in rows:
                for c in cols:
                    z = (float(times[r]), float(xs[c]))
                    blown = sol.blow_up_index is not None and sol.blow_up_index <= r
                    if blown:
                        records.append(BoundRecord(
                            spec.bound_id, trial, trial_seed,
                            f"{z[0]!r}/{z[1]!r}", float("nan"), float("nan"),
                            float("nan"), float("nan"),
                            _record_flags(magnitude, None, True)))
                        continue
                    phi_z = float(abs(sol.values[r, c]))
                    parts = rhs_classical(spec, field, z, phi_z)
                    records.append(BoundRecord(
                        spec.bound_id, trial, trial_seed,
                        f"{z[0]!r}/{z[1]!r}", phi_z, parts.driver, parts.dist,
                        phi_z / parts.total,
                        _record_flags(magnitude, parts, False)))
    return _summarize(spec.bound_id, records, magnitudes)


# ---------------------------------------------------------------------------
# constants and reporting


@dataclass(frozen=True)
class ConstantEstimate:
    """Fitted bound constant with descriptive ratio quantiles."""

    constant: float
    max_ratio: float
    quantiles: tuple[tuple[float, float], ...]
    count: int


def empirical_constant(reports: Sequence[BoundReport]) -> ConstantEstimate:
    """C* = max LHS/RHS ratio pooled over reports; merge by max."""
    if not reports:
        raise ValueError("need at least one report")
    ratios = [rec.ratio for rep in reports for rec in rep.records
              if np.isfinite(rec.ratio)]
    if not ratios:
        raise ValueError("no finite ratios to fit a constant from")
    arr = np.array(ratios)
    peak = float(np.max(arr))
    quants = tuple((q, float(np.quantile(arr, q))) for q in (0.5, 0.9, 1.0))
    return ConstantEstimate(peak, peak, quants, arr.size)


CSV_COLUMNS = ("bound_id", "trial", "seed", "z", "lhs", "rhs_driver",
               "rhs_dist", "ratio", "flags")


def write_report_csv(reports: BoundReport | Sequence[BoundReport], dest) -> None:
    """Plot-ready CSV, one row per record; flags joined with '|'."""
    if isinstance(reports, BoundReport):
        reports = [reports]

    def emit(handle) -> None:
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        for rep in reports:
            for rec in rep.records:
                writer.writerow([rec.bound_id, rec.trial, rec.seed, rec.z,
                                 repr(rec.lhs), repr(rec.rhs_driver),
                                 repr(rec.rhs_dist), repr(rec.ratio),
                                 "|".join(rec.flags)])

    if hasattr(dest, "write"):
        emit(dest)
    else:
        with open(dest, "w", newline="") as handle:
            emit(handle)


def report_summary(report: BoundReport) -> dict:
    """JSON-ready summary of one sweep."""
    return {
        "bound_id": report.bound_id,
        "magnitudes": list(report.magnitudes),
        "max_ratio_by_magnitude": list(report.max_ratio_by_magnitude),
        "max_ratio": report.max_ratio,
        "constant": report.constant,
        "verdict": report.verdict,
        "flags": list(report.flags),
        "records": len(report.records),
    }


def write_summary_json(report: BoundReport, dest) -> None:
    payload = json.dumps(report_summary(report), indent=2, sort_keys=True)
    if hasattr(dest, "write"):
        dest.write(payload)
    else:
        with open(dest, "w") as handle:
            handle.write(payload)
