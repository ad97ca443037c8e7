"""Normalized forecast errors and between-region correlation estimation.

The normalized error of a region at a period is the observed TFR minus the
model trajectory value, divided by the model's standard deviation, averaged
over trajectories.  From a panel of such errors the between-region
correlation matrix A (unit diagonal, positive definite) is estimated by one
of eleven methods:

1  mean of the zero-truncated empirical correlations (equicorrelation)
2  median of the zero-truncated empirical correlations
3  posterior mean of the intraclass correlation (one-way random effects)
4  posterior mode of the intraclass correlation
5  as 3 with errors standardized by the global root mean square
6  as 4 with errors standardized by the global root mean square
7  ratio of the mean cross-product to the mean square (missing-aware counts)
8  zero-truncated empirical correlation matrix, repaired to positive
   definite, then shrunk elementwise toward the prior mean:
   ((T_bar - 1) / T_bar) * A~ + 1 / (2 T_bar), unit diagonal
9  as 8 with per-region normalized sums in the empirical correlations
10 elementwise posterior mean of the correlation under a bivariate normal
   likelihood with a flat prior on [0, 1) (numerical integration)
11 as 10 with one extra power of the normalizing factor (arcsine prior)

Methods 1-7 yield equicorrelation matrices.  For methods 8-11, cells with
fewer than two shared periods are undefined and get filled with the mean of
the defined off-diagonal entries.  Every returned matrix is certified
positive definite, with eigenvalue-clipping repair as a fallback.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .data_model import Country, PeriodIndex, TrajectorySet, build_axis
from .errors import DataError, NumericError

PHASE_II = "II"
PHASE_III = "III"

EIG_FLOOR = 1e-8
REPAIR_ROUNDS = 50
ICC_GRID = 2048
INTEGRAL_NODES = 2048
RHO_CUTOFF = 1e-9  # integrate rho over [0, 1 - RHO_CUTOFF]

ERROR_PANEL_COLUMNS = ("region_id", "period_label", "error", "phase")
EQUICORR_METHODS = frozenset({1, 2, 3, 4, 5, 6, 7})


@dataclass(frozen=True)
class NormalizedErrorPanel:
    """Matrix of normalized forecast errors, regions by periods.

    Missing cells are NaN; phase holds "II"/"III" tags where a cell is
    present and "" elsewhere.
    """

    region_ids: tuple[str, ...]
    periods: tuple[PeriodIndex, ...]
    e: np.ndarray
    phase: np.ndarray

    def __post_init__(self):
        shape = (len(self.region_ids), len(self.periods))
        if self.e.shape != shape or self.phase.shape != shape:
            raise DataError(f"panel arrays must have shape {shape}")
        present = ~np.isnan(self.e)
        if not np.isfinite(self.e[present]).all():
            raise DataError("panel errors must be finite where present")
        self.e.flags.writeable = False
        self.phase.flags.writeable = False

    @property
    def n_regions(self) -> int:
        return len(self.region_ids)

    @property
    def n_cells(self) -> int:
        return int((~np.isnan(self.e)).sum())

    def t_bar(self) -> float:
        """Average number of observed periods per region (regions with data)."""
        counts = (~np.isnan(self.e)).sum(axis=1)
        counts = counts[counts > 0]
        if counts.size == 0:
            raise DataError("panel has no errors")
        return float(counts.mean())


@dataclass(frozen=True)
class CorrelationEstimate:
    """Estimated between-region correlation matrix with its PD certificate."""

    A: np.ndarray
    method_id: int
    tfr_stratum: str
    pd_certificate: float
    T_bar: float
    region_ids: tuple[str, ...] = ()

    def __post_init__(self):
        A = self.A
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DataError("correlation matrix must be square")
        if not np.allclose(A, A.T, atol=1e-12):
            raise DataError("correlation matrix must be symmetric")
        if not np.all(np.diag(A) == 1.0):
            raise DataError("correlation matrix diagonal must be exactly 1")
        if not self.pd_certificate > 0:
            raise NumericError(
                f"matrix not positive definite (smallest eigenvalue "
                f"{self.pd_certificate:.3e})"
            )
        A.flags.writeable = False


def normalize_errors(
    observed: Country,
    model_traj: Mapping[str, TrajectorySet],
    model_sd: Mapping,
    phase: str,
) -> NormalizedErrorPanel:
    """Average standardized residuals of model trajectories per (region, period).

    model_sd maps region id to the per-trajectory standard deviations (or
    (region id, trajectory index) to a scalar).  Scored periods are those of
    each region's trajectory horizon that have an observed value.
    """
    if phase not in (PHASE_II, PHASE_III):
        raise DataError(f"phase must be 'II' or 'III', got {phase!r}")

    if any(isinstance(k, tuple) for k in model_sd):
        grouped: dict[str, dict[int, float]] = {}
        for (rid, i), v in model_sd.items():
            grouped.setdefault(rid, {})[int(i)] = float(v)
        sds = {rid: np.array([d[i] for i in sorted(d)]) for rid, d in grouped.items()}
    else:
        sds = {rid: np.asarray(v, dtype=float) for rid, v in model_sd.items()}

    cells: dict[str, dict[PeriodIndex, tuple[float, str]]] = {}
    period_pool: dict[int, PeriodIndex] = {}
    for reg in observed.regions:
        rid = reg.geography_id
        if rid not in model_traj:
            continue
        tset = model_traj[rid]
        if rid not in sds:
            raise DataError(f"no model standard deviations for region {rid!r}")
        sd = sds[rid]
        if len(sd) != tset.n_traj:
            raise DataError(
                f"{rid}: {len(sd)} standard deviations for {tset.n_traj} trajectories"
            )
        if np.any(sd <= 0):
            raise DataError(f"{rid}: model standard deviations must be positive")
        for k, p in enumerate(tset.horizon):
            f = reg.value_at(p.index)
            if math.isnan(f):
                continue
            d = (f - tset.paths[:, k]) / sd
            cells.setdefault(rid, {})[p] = (float(d.mean()), phase)
            period_pool[p.index] = p

    if not cells:
        raise DataError("no observed periods overlap the model trajectories")
    periods = tuple(period_pool[i] for i in sorted(period_pool))
    region_ids = tuple(r.geography_id for r in observed.regions if r.geography_id in cells)
    e = np.full((len(region_ids), len(periods)), np.nan)
    tags = np.full(e.shape, "", dtype="<U3")
    pos = {p: j for j, p in enumerate(periods)}
    for i, rid in enumerate(region_ids):
        for p, (val, tag) in cells[rid].items():
            e[i, pos[p]] = val
            tags[i, pos[p]] = tag
    return NormalizedErrorPanel(region_ids, periods, e, tags)


# ---------------------------------------------------------------------------
# Empirical correlations
# ---------------------------------------------------------------------------


def _pair_stats(panel: NormalizedErrorPanel):
    """Sums needed by the pairwise estimators.

    Returns (present mask, shared-period counts, cross products over shared
    periods, per-region squared sums over shared periods, per-region squared
    sums over own periods, per-region counts).
    """
    present = ~np.isnan(panel.e)
    e0 = np.where(present, panel.e, 0.0)
    n_shared = (present.astype(float) @ present.T.astype(float)).astype(int)
    cross = e0 @ e0.T
    sq_shared = (e0**2) @ present.T.astype(float)  # [r, s] = sum_t e_r^2 over shared
    sq_own = (e0**2).sum(axis=1)
    n_own = present.sum(axis=1)
    return present, n_shared, cross, sq_shared, sq_own, n_own


def empirical_corr(
    panel: NormalizedErrorPanel, normalization: str = "pairwise-complete"
) -> np.ndarray:
    """Uncentered correlation of the error series of every region pair.

    "pairwise-complete" sums numerator and both denominators over the
    periods shared by the pair.  "fixed-T" divides each sum by its own term
    count and takes the denominators over each region's full set of periods
    (the two coincide on complete panels).  Cells with fewer than two shared
    periods, or a zero denominator, are NaN (undefined, to be filled later).
    """
    if normalization not in ("pairwise-complete", "fixed-T"):
        raise DataError(f"unknown normalization {normalization!r}")
    _, n_shared, cross, sq_shared, sq_own, n_own = _pair_stats(panel)
    R = panel.n_regions
    out = np.full((R, R), np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        if normalization == "pairwise-complete":
            denom = np.sqrt(sq_shared * sq_shared.T)
            out = np.where((n_shared >= 2) & (denom > 0), cross / denom, np.nan)
        else:
            rms = np.where(n_own > 0, np.sqrt(sq_own / np.maximum(n_own, 1)), np.nan)
            denom = np.outer(rms, rms)
            mean_cross = cross / np.maximum(n_shared, 1)
            out = np.where((n_shared >= 2) & (denom > 0), mean_cross / denom, np.nan)
            out = np.clip(out, -1.0, 1.0)
    np.fill_diagonal(out, np.where(n_own > 0, 1.0, np.nan))
    return out


# ---------------------------------------------------------------------------
# Positive-definiteness repair
# ---------------------------------------------------------------------------


def repair_pd(matrix: np.ndarray, nonneg: bool = False) -> np.ndarray:
    """Nearest-ish positive definite unit-diagonal matrix by eigenvalue
    clipping.

    Clips eigenvalues below the floor, reconstructs, rescales to unit
    diagonal (optionally re-truncating negatives at zero) and repeats until
    positive definite or the round budget runs out.
    """
    A = np.array(matrix, dtype=float)
    if np.isnan(A).any():
        raise NumericError("cannot repair a matrix with undefined cells")
    for _ in range(REPAIR_ROUNDS):
        A = (A + A.T) / 2.0
        np.fill_diagonal(A, 1.0)
        if nonneg:
            A[A < 0] = 0.0
        evals = np.linalg.eigvalsh(A)
        if evals[0] >= EIG_FLOOR / 10:
            return A
        evals, evecs = np.linalg.eigh(A)
        A = (evecs * np.maximum(evals, EIG_FLOOR)) @ evecs.T
        d = np.sqrt(np.diag(A))
        A = A / np.outer(d, d)
    evals = np.linalg.eigvalsh((A + A.T) / 2.0)
    raise NumericError(
        f"PD repair failed after {REPAIR_ROUNDS} rounds "
        f"(smallest eigenvalue {evals[0]:.3e}, dimension {A.shape[0]})"
    )


def _fill_undefined(matrix: np.ndarray) -> np.ndarray:
    """Replace NaN cells with the mean of the defined off-diagonal entries."""
    A = matrix.copy()
    off = ~np.eye(A.shape[0], dtype=bool)
    defined = off & ~np.isnan(A)
    if not defined.any():
        raise NumericError("no region pair shares enough periods to correlate")
    fill = float(A[defined].mean())
    A[np.isnan(A)] = fill
    np.fill_diagonal(A, 1.0)
    return A


# ---------------------------------------------------------------------------
# Intraclass correlation posterior (methods 3-6)
# ---------------------------------------------------------------------------


def _icc_posterior(panel_e: np.ndarray) -> tuple[float, float]:
    """Posterior mean and mode of the within-period intraclass correlation.

    One-way random effects with total variance fixed at one: the error
    vector of each period is N(0, (1-rho) I + rho J) over the regions
    present.  Flat prior, midpoint grid on (0, 1).
    """
    present = ~np.isnan(panel_e)
    m = present.sum(axis=0).astype(float)
    keep = m >= 1
    if not keep.any():
        raise DataError("panel has no errors")
    e0 = np.where(present, panel_e, 0.0)
    s1 = e0.sum(axis=0)[keep]
    s2 = (e0**2).sum(axis=0)[keep]
    m = m[keep]

    rho = (np.arange(ICC_GRID) + 0.5) / ICC_GRID
    one_m_rho = 1.0 - rho
    # log-likelihood on the grid, summed over periods
    log_det = np.log(one_m_rho)[:, None] * (m - 1.0)[None, :] + np.log(
        1.0 + np.outer(rho, m - 1.0)
    )
    quad = (
        s2[None, :] - np.outer(rho, s1**2) / (1.0 + np.outer(rho, m - 1.0))
    ) / one_m_rho[:, None]
    loglik = -0.5 * (log_det + quad).sum(axis=1)
    loglik -= loglik.max()
    w = np.exp(loglik)
    mean = float((rho * w).sum() / w.sum())
    mode = float(rho[int(np.argmax(loglik))])
    return mean, mode


# ---------------------------------------------------------------------------
# Posterior-mean pair integrals (methods 10-11)
# ---------------------------------------------------------------------------


@lru_cache(maxsize=4)
def _gl_nodes(n: int, upper: float) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * upper * (x + 1.0), 0.5 * upper * w


def _pair_posterior_mean(ss_r: float, ss_s: float, ss_rs: float, t_exp: int) -> float:
    """Posterior mean of rho on [0, 1 - cutoff] for one region pair.

    Density proportional to (1 - rho^2)^(-t_exp / 2)
    exp(-(ss_r - 2 rho ss_rs + ss_s) / (2 (1 - rho^2))).  Integrated under
    the substitution u = -log(1 - rho) in log space, which resolves the
    boundary layer at rho near one.
    """
    u, w = _gl_nodes(INTEGRAL_NODES, -math.log(RHO_CUTOFF))
    rho = 1.0 - np.exp(-u)
    one_m_rho2 = 1.0 - rho**2
    log_f = (
        -0.5 * t_exp * np.log(one_m_rho2)
        - (ss_r - 2.0 * rho * ss_rs + ss_s) / (2.0 * one_m_rho2)
        - u  # Jacobian of the substitution
    )
    log_f -= log_f.max()
    f = np.exp(log_f)
    denom = float(w @ f)
    if denom <= 0 or not math.isfinite(denom):
        raise NumericError(
            f"degenerate posterior integral for SS=({ss_r}, {ss_s}, {ss_rs})"
        )
    return float(w @ (rho * f)) / denom


def _integral_matrix(panel: NormalizedErrorPanel, extra_power: int) -> np.ndarray:
    """Elementwise posterior-mean correlations, errors pre-standardized."""
    present = ~np.isnan(panel.e)
    n_avail = int(present.sum())
    rms = math.sqrt(float(np.nansum(panel.e**2)) / n_avail)
    if rms <= 0:
        raise NumericError("all errors are zero, cannot standardize")
    e = panel.e / rms
    present, n_shared, cross, sq_shared, _, _ = _pair_stats(
        NormalizedErrorPanel(panel.region_ids, panel.periods, e, panel.phase.copy())
    )
    R = panel.n_regions
    A = np.full((R, R), np.nan)
    for r in range(R):
        for s in range(r + 1, R):
            t = int(n_shared[r, s])
            if t < 2:
                continue
            A[r, s] = A[s, r] = _pair_posterior_mean(
                float(sq_shared[r, s]), float(sq_shared[s, r]), float(cross[r, s]),
                t + extra_power,
            )
    np.fill_diagonal(A, 1.0)
    return A


# ---------------------------------------------------------------------------
# The eleven estimators
# ---------------------------------------------------------------------------


def _equicorr(R: int, a: float) -> np.ndarray:
    A = np.full((R, R), a)
    np.fill_diagonal(A, 1.0)
    return A


def _standardized(panel: NormalizedErrorPanel) -> NormalizedErrorPanel:
    present = ~np.isnan(panel.e)
    n = int(present.sum())
    if n == 0:
        raise DataError("panel has no errors")
    rms = math.sqrt(float(np.nansum(panel.e**2)) / n)
    if rms <= 0:
        raise NumericError("all errors are zero, cannot standardize")
    return NormalizedErrorPanel(
        panel.region_ids, panel.periods, panel.e / rms, panel.phase.copy()
    )


def _truncated_offdiag(panel: NormalizedErrorPanel, normalization: str) -> np.ndarray:
    corr = empirical_corr(panel, normalization)
    off = ~np.eye(corr.shape[0], dtype=bool)
    vals = corr[off]
    vals = vals[~np.isnan(vals)]
    if vals.size == 0:
        raise NumericError("no region pair shares enough periods to correlate")
    return np.maximum(vals, 0.0)


def _method7(panel: NormalizedErrorPanel) -> float:
    present = ~np.isnan(panel.e)
    e0 = np.where(present, panel.e, 0.0)
    col_sum = e0.sum(axis=0)
    col_sq = (e0**2).sum(axis=0)
    m = present.sum(axis=0)
    b_sum = float(((col_sum**2 - col_sq) / 2.0).sum())
    n_b = int((m * (m - 1) // 2).sum())
    c_sum = float(col_sq.sum())
    n_c = int(m.sum())
    if n_b == 0 or n_c == 0 or c_sum == 0:
        raise NumericError("not enough concurrent errors for the cross-product ratio")
    return (b_sum / n_b) / (c_sum / n_c)


def _shrink(matrix: np.ndarray, t_bar: float) -> np.ndarray:
    A = ((t_bar - 1.0) / t_bar) * matrix + 1.0 / (2.0 * t_bar)
    np.fill_diagonal(A, 1.0)
    return A


def estimate_A(
    panel: NormalizedErrorPanel, method_id: int, tfr_stratum: str = "pooled"
) -> CorrelationEstimate:
    """Estimate the between-region correlation matrix by one of the eleven
    methods documented in the module docstring.

    The returned matrix is symmetric, has unit diagonal, and is certified
    positive definite (eigenvalue-clipping repair is applied if needed and
    a failure to repair raises NumericError).
    """
    if not 1 <= method_id <= 11:
        raise DataError(f"method_id must be in 1..11, got {method_id}")
    R = panel.n_regions
    if R < 2:
        raise DataError(f"correlation estimation needs >= 2 regions, got {R}")
    t_bar = panel.t_bar()

    nonneg = True
    if method_id in (1, 2):
        vals = _truncated_offdiag(panel, "pairwise-complete")
        a = float(np.mean(vals)) if method_id == 1 else float(np.median(vals))
        A = _equicorr(R, a)
    elif method_id in (3, 4):
        mean, mode = _icc_posterior(panel.e)
        A = _equicorr(R, mean if method_id == 3 else mode)
    elif method_id in (5, 6):
        mean, mode = _icc_posterior(_standardized(panel).e)
        A = _equicorr(R, mean if method_id == 5 else mode)
    elif method_id == 7:
        A = _equicorr(R, _method7(panel))
        nonneg = False  # the ratio estimator may legitimately be negative
    elif method_id in (8, 9):
        norm = "pairwise-complete" if method_id == 8 else "fixed-T"
        corr = empirical_corr(panel, norm)
        trunc = np.maximum(corr, 0.0)
        trunc[np.isnan(corr)] = np.nan
        filled = _fill_undefined(trunc)
        star = repair_pd(filled, nonneg=True)
        A = _shrink(star, t_bar)
    else:
        A = _fill_undefined(_integral_matrix(panel, 0 if method_id == 10 else 1))

    A = (A + A.T) / 2.0
    np.fill_diagonal(A, 1.0)
    smallest = float(np.linalg.eigvalsh(A)[0])
    if smallest <= 0:
        A = repair_pd(A, nonneg=nonneg)
        smallest = float(np.linalg.eigvalsh(A)[0])
    return CorrelationEstimate(
        A=A,
        method_id=method_id,
        tfr_stratum=tfr_stratum,
        pd_certificate=smallest,
        T_bar=t_bar,
        region_ids=panel.region_ids,
    )


def split_by_tfr_values(
    panel: NormalizedErrorPanel,
    national_tfr: Mapping[str, float],
    threshold: float = 5.0,
) -> tuple[NormalizedErrorPanel, NormalizedErrorPanel]:
    """Partition panel cells by a per-period national TFR lookup (by label).

    Periods at or above the threshold go to the high panel, the rest to the
    low panel; periods left empty in a panel are pruned from its axis.
    """
    high = np.full(panel.e.shape, np.nan)
    low = np.full(panel.e.shape, np.nan)
    for j, p in enumerate(panel.periods):
        if p.label not in national_tfr:
            if np.isnan(panel.e[:, j]).all():
                continue
            raise DataError(f"no national TFR for period '{p.label}', cannot split")
        target = high if national_tfr[p.label] >= threshold else low
        target[:, j] = panel.e[:, j]

    def _prune(e: np.ndarray) -> NormalizedErrorPanel:
        keep = ~np.isnan(e).all(axis=0)
        tags = np.where(~np.isnan(e), panel.phase, "")
        return NormalizedErrorPanel(
            panel.region_ids,
            tuple(p for p, k in zip(panel.periods, keep) if k),
            e[:, keep],
            tags[:, keep].astype("<U3"),
        )

    return _prune(high), _prune(low)


def split_by_tfr(
    panel: NormalizedErrorPanel, observed: Country, threshold: float = 5.0
) -> tuple[NormalizedErrorPanel, NormalizedErrorPanel]:
    """Partition panel cells by the country's national TFR at each period."""
    nat = {p.label: v for p, v in observed.national_series.observed_items()}
    return split_by_tfr_values(panel, nat, threshold)


def sample_correlated_errors(
    A: CorrelationEstimate | np.ndarray,
    sigma_t: Sequence[float],
    n: int,
    seed: int,
) -> np.ndarray:
    """Joint normal draws with covariance diag(sigma) A diag(sigma).

    Uses the Cholesky square root of the target covariance; returns an
    (n, regions) matrix.
    """
    mat = A.A if isinstance(A, CorrelationEstimate) else np.asarray(A, dtype=float)
    sigma = np.asarray(sigma_t, dtype=float)
    if mat.shape[0] != mat.shape[1] or sigma.shape != (mat.shape[0],):
        raise DataError(
            f"dimension mismatch: matrix {mat.shape}, sigma {sigma.shape}"
        )
    if np.any(sigma <= 0):
        raise DataError("sigma_t entries must be positive")
    cov = np.outer(sigma, sigma) * mat
    try:
        root = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"covariance is not positive definite: {exc}") from exc
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, mat.shape[0])) @ root.T


# ---------------------------------------------------------------------------
# Error-panel file format
# ---------------------------------------------------------------------------


def save_error_panel(
    panel: NormalizedErrorPanel,
    path: str | os.PathLike,
    national_tfr: Mapping[str, float] | None = None,
    force: bool = False,
) -> None:
    """Write a panel to CSV; the optional national TFR column enables the
    high/low split when the panel is reloaded by the CLI."""
    if not force and os.path.exists(path):
        raise DataError(f"{path}: exists, pass force=True to overwrite")
    header = list(ERROR_PANEL_COLUMNS)
    if national_tfr is not None:
        header.append("national_tfr")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, rid in enumerate(panel.region_ids):
            for j, p in enumerate(panel.periods):
                if math.isnan(panel.e[i, j]):
                    continue
                row = [rid, p.label, repr(float(panel.e[i, j])), panel.phase[i, j]]
                if national_tfr is not None:
                    row.append(repr(float(national_tfr[p.label])))
                writer.writerow(row)


def load_error_panel(
    path: str | os.PathLike,
) -> tuple[NormalizedErrorPanel, dict[str, float] | None]:
    """Read a panel CSV; returns the panel and the national TFR per period
    label when the file carries that column."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1) if r]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0][1]]
    missing = [c for c in ERROR_PANEL_COLUMNS if c not in header]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    col = {name: header.index(name) for name in header}
    has_tfr = "national_tfr" in col

    cells: dict[tuple[str, str], tuple[float, str]] = {}
    tfr: dict[str, float] = {}
    region_order: list[str] = []
    labels: list[str] = []
    for lineno, row in rows[1:]:
        rid = row[col["region_id"]].strip()
        label = row[col["period_label"]].strip()
        try:
            value = float(row[col["error"]])
        except ValueError:
            raise DataError(f"{path}: row {lineno}: bad error value") from None
        tag = row[col["phase"]].strip()
        if tag not in (PHASE_II, PHASE_III):
            raise DataError(f"{path}: row {lineno}: phase must be II or III")
        if (rid, label) in cells:
            raise DataError(f"{path}: row {lineno}: duplicate cell ({rid}, '{label}')")
        cells[(rid, label)] = (value, tag)
        if rid not in region_order:
            region_order.append(rid)
        if label not in labels:
            labels.append(label)
        if has_tfr:
            tfr[label] = float(row[col["national_tfr"]])
    axis = build_axis(labels)
    e = np.full((len(region_order), len(axis)), np.nan)
    tags = np.full(e.shape, "", dtype="<U3")
    for i, rid in enumerate(region_order):
        for j, p in enumerate(axis):
            if (rid, p.label) in cells:
                e[i, j], tags[i, j] = cells[(rid, p.label)]
    panel = NormalizedErrorPanel(tuple(region_order), axis, e, tags)
    return panel, (tfr if has_tfr else None)
