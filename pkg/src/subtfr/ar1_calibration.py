"""Calibration of the mean-one AR(1) scale-factor model.

The pipeline turns observed data into the two global parameters (phi, sigma):

1. build the scale-factor panel alpha = regional TFR / national TFR over all
   observed periods, with first differences delta_alpha;
2. smooth |alpha - 1| against the national TFR with a tricube local linear
   smoother and locate the minimum of the fitted curve; smooth |delta_alpha|
   the same way and read it off at that minimum;
3. convert the two mean absolute deviations into standard deviations with
   the normal identity SD = sqrt(pi/2) * E|x - mean|, then apply the
   stationary AR(1) moment identities

       phi     = 1 - Var(delta_alpha) / (2 Var(alpha))
       sigma^2 = Var(delta_alpha) - (1 - phi)^2 Var(alpha)

   which together force sigma^2 = (1 - phi^2) Var(alpha).

The per-country innovation scale is capped so the stationary cross-region
spread never exceeds the spread at the last observed period:

       sigma_c^2 = min(sigma^2, (1 - phi^2) Var_regions(alpha_at_P)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data_model import Country, ScaleAr1Params
from .errors import DataError, NumericError

GRID_POINTS = 512
DEFAULT_SPAN = 0.75


@dataclass(frozen=True)
class AlphaPanel:
    """Scale-factor observations pooled over regions and periods.

    Parallel arrays; delta_alpha is NaN for each region's first observed
    period.  tfr holds the national TFR of the period (the conditioning
    variable of the calibration curves).
    """

    region_ids: tuple[str, ...]
    period_index: np.ndarray
    alpha: np.ndarray
    delta_alpha: np.ndarray
    tfr: np.ndarray

    def __post_init__(self):
        n = len(self.region_ids)
        for name in ("period_index", "alpha", "delta_alpha", "tfr"):
            arr = getattr(self, name)
            if len(arr) != n:
                raise DataError(f"panel column {name} has length {len(arr)} != {n}")
            arr.flags.writeable = False
        if n and ((self.alpha <= 0).any() or (self.tfr <= 0).any()):
            raise DataError("panel alpha and tfr values must be positive")

    def __len__(self) -> int:
        return len(self.region_ids)


@dataclass(frozen=True)
class LoessFit:
    """Smoother output on an evenly spaced predictor grid."""

    grid: np.ndarray
    fitted: np.ndarray
    span: float
    n_points: int

    def __post_init__(self):
        if not np.all(np.diff(self.grid) > 0):
            raise NumericError("loess grid must be strictly increasing")
        if not np.isfinite(self.fitted).all():
            raise NumericError("loess produced non-finite fitted values")
        self.grid.flags.writeable = False
        self.fitted.flags.writeable = False

    def __call__(self, x: float) -> float:
        """Fitted value at x, linearly interpolated on the grid."""
        return float(np.interp(x, self.grid, self.fitted))

    @property
    def argmin(self) -> tuple[float, float]:
        """(grid point, fitted value) at the curve minimum, first on ties."""
        k = int(np.argmin(self.fitted))
        return float(self.grid[k]), float(self.fitted[k])


def initial_alpha(country: Country) -> dict[str, float]:
    """Starting scale factor per region: last observed regional TFR divided
    by the national TFR of that same period.

    Uses each region's own last observed period, so regions whose data end
    before the national present still get the most recent comparable ratio.
    """
    out: dict[str, float] = {}
    nat = country.national_series
    for reg in country.regions:
        p = reg.last_observed
        fc = nat.value_at(p)
        fr = reg.value_at(p)
        if math.isnan(fc) or fc <= 0:
            raise DataError(
                f"{country.country_id}: national TFR missing or zero at "
                f"'{nat.periods[p].label}', cannot form a scale factor for "
                f"{reg.geography_id}"
            )
        out[reg.geography_id] = fr / fc
    return out


def build_alpha_panel(countries: Sequence[Country]) -> AlphaPanel:
    """Pool alpha = regional/national TFR over every observed (region, period).

    Periods where the national value is missing are dropped.  delta_alpha is
    present from each region's second consecutive observed period onward.
    """
    region_ids: list[str] = []
    period_idx: list[int] = []
    alphas: list[float] = []
    deltas: list[float] = []
    tfrs: list[float] = []
    for country in countries:
        nat = country.national_series
        for reg in country.regions:
            prev_alpha = math.nan
            prev_index = -10
            for k in range(reg.first_observed, reg.last_observed + 1):
                fc = nat.value_at(k)
                fr = reg.value_at(k)
                if math.isnan(fc) or math.isnan(fr):
                    continue
                a = fr / fc
                d = a - prev_alpha if k == prev_index + 1 else math.nan
                region_ids.append(reg.geography_id)
                period_idx.append(k)
                alphas.append(a)
                deltas.append(d)
                tfrs.append(fc)
                prev_alpha, prev_index = a, k
    if not region_ids:
        raise DataError("no overlapping regional/national periods anywhere")
    return AlphaPanel(
        tuple(region_ids),
        np.asarray(period_idx, dtype=int),
        np.asarray(alphas, dtype=float),
        np.asarray(deltas, dtype=float),
        np.asarray(tfrs, dtype=float),
    )


def fit_loess(x, y, span: float = DEFAULT_SPAN) -> LoessFit:
    """Tricube-weighted local linear regression on a 512-point grid.

    For each grid point the span fraction of nearest observations gets
    tricube weights scaled by the window radius and a weighted line is
    fitted; the fit is exact on affine data for any span.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("x and y must be 1-d arrays of equal length")
    n = len(x)
    if n < 10:
        raise DataError(f"loess needs at least 10 points, got {n}")
    if not (0.0 < span <= 1.0):
        raise DataError(f"span={span} outside (0, 1]")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise DataError("loess inputs must be finite")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        raise DataError("x values are all equal")

    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    q = max(2, int(math.ceil(span * n)))
    grid = np.linspace(lo, hi, GRID_POINTS)
    fitted = np.empty(GRID_POINTS)

    left = 0
    for g, x0 in enumerate(grid):
        # q-nearest neighbours form a contiguous window in sorted x
        while left + q < n and xs[left + q] - x0 < x0 - xs[left]:
            left += 1
        win_x = xs[left : left + q]
        win_y = ys[left : left + q]
        dist = np.abs(win_x - x0)
        radius = dist[-1] if dist[-1] >= dist[0] else dist[0]
        if radius <= 0.0:
            # grid point sits on >= q identical x values
            fitted[g] = float(win_y.mean())
            continue
        u = dist / radius
        w = np.where(u < 1.0, (1.0 - u**3) ** 3, 0.0)
        xc = win_x - x0
        sw = w.sum()
        swx = w @ xc
        swxx = w @ (xc * xc)
        swy = w @ win_y
        swxy = w @ (xc * win_y)
        det = sw * swxx - swx * swx
        if det <= 1e-12 * max(sw * swxx, 1e-300):
            # local design degenerate, fall back to the weighted mean
            fitted[g] = swy / sw if sw > 0 else float(win_y.mean())
        else:
            fitted[g] = (swy * swxx - swxy * swx) / det
    return LoessFit(grid=grid, fitted=fitted, span=span, n_points=n)


def find_asymptotic_moments(
    panel: AlphaPanel, span: float = DEFAULT_SPAN
) -> tuple[float, float, float]:
    """Asymptotic mean absolute deviations of the scale-factor process.

    Returns (e_abs_alpha, e_abs_delta, tfr_at_min): the minimum of the
    smoothed |alpha - 1| curve over TFR, the smoothed |delta_alpha| curve
    evaluated at that same TFR, and the TFR where the minimum occurs.
    """
    if len(panel) == 0:
        raise DataError("empty alpha panel")
    fit_alpha = fit_loess(panel.tfr, np.abs(panel.alpha - 1.0), span)
    tfr_at_min, e_abs_alpha = fit_alpha.argmin
    have_delta = ~np.isnan(panel.delta_alpha)
    fit_delta = fit_loess(
        panel.tfr[have_delta], np.abs(panel.delta_alpha[have_delta]), span
    )
    e_abs_delta = fit_delta(tfr_at_min)
    return e_abs_alpha, e_abs_delta, tfr_at_min


def derive_phi_sigma(e_abs_alpha: float, e_abs_delta: float) -> tuple[float, float]:
    """Map asymptotic mean absolute deviations to (phi, sigma).

    Under normality SD = sqrt(pi/2) * mean absolute deviation; the
    stationary AR(1) identities then give phi and sigma.
    """
    if e_abs_alpha <= 0 or e_abs_delta <= 0:
        raise NumericError(
            f"moments must be positive, got E|alpha-1|={e_abs_alpha}, "
            f"E|dalpha|={e_abs_delta}"
        )
    sd_alpha = math.sqrt(math.pi / 2.0) * e_abs_alpha
    sd_delta = math.sqrt(math.pi / 2.0) * e_abs_delta
    phi = 1.0 - sd_delta**2 / (2.0 * sd_alpha**2)
    if not 0.0 < phi < 1.0:
        raise NumericError(
            f"phi={phi:.6f} outside (0, 1) for E|alpha-1|={e_abs_alpha}, "
            f"E|dalpha|={e_abs_delta}"
        )
    radicand = sd_delta**2 - (1.0 - phi) ** 2 * sd_alpha**2
    if radicand < 0:
        raise NumericError(
            f"negative innovation variance {radicand} for moments "
            f"({e_abs_alpha}, {e_abs_delta})"
        )
    return phi, math.sqrt(radicand)


def derive_sigma_c(phi: float, sigma: float, country: Country) -> float:
    """Per-country innovation scale with the cross-region spread cap.

    Sample variance over the regions' starting scale factors (divisor
    R_c - 1); a single-region country has nothing to cap against and keeps
    the global sigma, identical starting factors freeze the process.
    """
    alphas = list(initial_alpha(country).values())
    if len(alphas) < 2:
        return sigma
    var_p = float(np.var(alphas, ddof=1))
    return math.sqrt(min(sigma**2, (1.0 - phi**2) * var_p))


def calibrate(countries: Sequence[Country], span: float = DEFAULT_SPAN) -> ScaleAr1Params:
    """Full pipeline: panel -> smoothed moments -> (phi, sigma) -> per-country
    caps and per-region starting scale factors."""
    panel = build_alpha_panel(countries)
    e_abs_alpha, e_abs_delta, tfr_at_min = find_asymptotic_moments(panel, span)
    phi, sigma = derive_phi_sigma(e_abs_alpha, e_abs_delta)
    sigma_c = {c.country_id: derive_sigma_c(phi, sigma, c) for c in countries}
    alpha_init: dict[str, float] = {}
    for c in countries:
        alpha_init.update(initial_alpha(c))
    return ScaleAr1Params(
        phi=phi,
        sigma=sigma,
        sigma_c=sigma_c,
        alpha_init=alpha_init,
        provenance=(e_abs_alpha, e_abs_delta, tfr_at_min),
    )
