"""Forecast verification: MAE, bias, Monte Carlo CRPS, interval coverage,
and the out-of-sample holdout protocol.

The holdout harness cuts every series at a chosen period, re-runs the whole
scale-factor calibration on the truncated data, projects each method over
the held-out window from the supplied national ensembles, and scores the
projections against the held-back truth.  Two blocks are reported per
method: marginal TFR (every region/period cell pooled with equal weight)
and average TFR (the unweighted mean over a country's regions, one cell per
country and period).

Sign conventions: bias is truth minus forecast, so positive bias means the
method under-predicts.  CRPS is 0.5 E|X' - X''| - E|X - x| (larger is
better, a perfect point forecast scores zero).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .ar1_calibration import DEFAULT_SPAN, calibrate
from .data_model import Country, PeriodIndex, TrajectorySet
from .errors import DataError
from .scale_projector import METHOD_SCALE_AR1, METHODS, ProjectionConfig, project

DEFAULT_N_MC = 5000
COVERAGE_LEVELS = (80, 95)
_MIN_ENSEMBLE_95 = 40


@dataclass(frozen=True)
class HoldoutSpec:
    """Cut point and length of the held-out window."""

    cut_period: PeriodIndex
    horizon: int

    def __post_init__(self):
        if self.horizon < 1:
            raise DataError(f"horizon={self.horizon} must be at least 1")

    @property
    def window(self) -> tuple[int, ...]:
        """Global period indices of the held-out periods."""
        start = self.cut_period.index + 1
        return tuple(range(start, start + self.horizon))


@dataclass(frozen=True)
class MetricBlock:
    """Scores for one method on one block (marginal or average)."""

    mae: float
    bias: float
    crps: float
    cov80: float
    cov95: float
    n_values: int

    def __post_init__(self):
        if self.n_values <= 0:
            raise DataError("a metric block needs at least one scored value")
        for name in ("cov80", "cov95"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise DataError(f"{name}={v} outside [0, 100]")


@dataclass(frozen=True)
class ValidationReport:
    """Holdout scores per method, plus the recalibrated parameters."""

    cut_label: str
    cut_index: int
    horizon: int
    seed: int
    phi: float
    sigma: float
    methods: Mapping[str, Mapping[str, MetricBlock]] = field(default_factory=dict)

    def block(self, method: str, which: str) -> MetricBlock:
        return self.methods[method][which]

    def to_json(self) -> str:
        doc = {
            "cut_period": {"label": self.cut_label, "index": self.cut_index},
            "horizon": self.horizon,
            "seed": self.seed,
            "calibration": {"phi": self.phi, "sigma": self.sigma},
            "methods": {
                m: {
                    which: {
                        "mae": b.mae,
                        "bias": b.bias,
                        "crps": b.crps,
                        "cov80": b.cov80,
                        "cov95": b.cov95,
                        "n_values": b.n_values,
                    }
                    for which, b in blocks.items()
                }
                for m, blocks in self.methods.items()
            },
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ValidationReport":
        doc = json.loads(text)
        methods = {
            m: {
                which: MetricBlock(**block)
                for which, block in blocks.items()
            }
            for m, blocks in doc["methods"].items()
        }
        return cls(
            cut_label=doc["cut_period"]["label"],
            cut_index=doc["cut_period"]["index"],
            horizon=doc["horizon"],
            seed=doc["seed"],
            phi=doc["calibration"]["phi"],
            sigma=doc["calibration"]["sigma"],
            methods=methods,
        )


def save_report(report: ValidationReport, path: str | os.PathLike, force: bool = False) -> None:
    if not force and os.path.exists(path):
        raise DataError(f"{path}: exists, pass force=True to overwrite")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
        fh.write("\n")


def load_report(path: str | os.PathLike) -> ValidationReport:
    try:
        with open(path, encoding="utf-8") as fh:
            return ValidationReport.from_json(fh.read())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: not a valid report: {exc}") from exc


# ---------------------------------------------------------------------------
# Elementary scores
# ---------------------------------------------------------------------------


def mae_bias(point_forecasts, truth) -> tuple[float, float]:
    """Mean absolute error and mean signed error (truth minus forecast).

    NaN truth cells are excluded from the cell count; forecasts must be
    present wherever truth is.
    """
    f = np.asarray(point_forecasts, dtype=float)
    t = np.asarray(truth, dtype=float)
    if f.shape != t.shape:
        raise DataError(f"shape mismatch {f.shape} vs {t.shape}")
    keep = ~np.isnan(t)
    if not keep.any():
        raise DataError("no observed truth cells to score")
    if np.isnan(f[keep]).any():
        raise DataError("missing forecast for an observed truth cell")
    diff = t[keep] - f[keep]
    return float(np.abs(diff).mean()), float(diff.mean())


def crps(ensemble, truth: float, n_mc: int = DEFAULT_N_MC, seed=None) -> float:
    """Monte Carlo CRPS of an ensemble forecast, larger is better.

    Estimates 0.5 E|X' - X''| - E|X - x| with three independent batches of
    n_mc draws with replacement from the ensemble.  A one-member (or
    constant) ensemble returns exactly -|c - x|.
    """
    ens = np.asarray(ensemble, dtype=float).ravel()
    if ens.size == 0:
        raise DataError("empty ensemble")
    rng = np.random.default_rng(seed)
    x1 = rng.choice(ens, size=n_mc, replace=True)
    x2 = rng.choice(ens, size=n_mc, replace=True)
    x3 = rng.choice(ens, size=n_mc, replace=True)
    return float(0.5 * np.abs(x1 - x2).mean() - np.abs(x3 - truth).mean())


def coverage(ensemble, truth: float, level: int) -> bool:
    """Whether truth falls inside the central prediction interval.

    Interval endpoints are the (10, 90) or (2.5, 97.5) empirical percentiles
    with linear interpolation; endpoints are inclusive, so a degenerate
    ensemble covers exactly its own value.
    """
    if level not in COVERAGE_LEVELS:
        raise DataError(f"level must be one of {COVERAGE_LEVELS}, got {level}")
    ens = np.asarray(ensemble, dtype=float).ravel()
    if ens.size == 0:
        raise DataError("empty ensemble")
    if level == 95 and ens.size < _MIN_ENSEMBLE_95:
        raise DataError(
            f"the 95% interval needs an ensemble of >= {_MIN_ENSEMBLE_95}, "
            f"got {ens.size}"
        )
    half = (100 - level) / 2.0
    lo, hi = np.percentile(ens, [half, 100 - half])
    return bool(lo <= truth <= hi)


def country_average_ensemble(
    regional: Mapping[str, TrajectorySet], geography_id: str = "average"
) -> TrajectorySet:
    """Unweighted average of the regions' ensembles, trajectory by trajectory.

    Requires aligned horizons and ensemble sizes; trajectory i of the
    average is the mean over regions of each region's trajectory i, which is
    meaningful because all regions descend from the same national ensemble.
    """
    sets = list(regional.values())
    if not sets:
        raise DataError("no regional ensembles to average")
    first = sets[0]
    for ts in sets[1:]:
        if ts.horizon != first.horizon:
            raise DataError(
                f"{ts.geography_id}: horizon differs from {first.geography_id}"
            )
        if ts.n_traj != first.n_traj:
            raise DataError(
                f"{ts.geography_id}: ensemble size differs from {first.geography_id}"
            )
    paths = np.mean([ts.paths for ts in sets], axis=0)
    return TrajectorySet(geography_id, first.horizon, paths)


# ---------------------------------------------------------------------------
# Holdout harness
# ---------------------------------------------------------------------------


class _BlockAccumulator:
    def __init__(self):
        self.abs_err: list[float] = []
        self.err: list[float] = []
        self.crps: list[float] = []
        self.hits80 = 0
        self.hits95 = 0

    def add(self, ensemble: np.ndarray, truth: float, rng) -> None:
        point = float(np.median(ensemble))
        self.abs_err.append(abs(truth - point))
        self.err.append(truth - point)
        self.crps.append(crps(ensemble, truth, seed=rng))
        self.hits80 += coverage(ensemble, truth, 80)
        self.hits95 += coverage(ensemble, truth, 95)

    def block(self) -> MetricBlock:
        n = len(self.err)
        if n == 0:
            raise DataError("no scored values in block")
        return MetricBlock(
            mae=float(np.mean(self.abs_err)),
            bias=float(np.mean(self.err)),
            crps=float(np.mean(self.crps)),
            cov80=100.0 * self.hits80 / n,
            cov95=100.0 * self.hits95 / n,
            n_values=n,
        )


def run_holdout(
    countries: Sequence[Country],
    national_traj: Mapping[str, TrajectorySet],
    spec: HoldoutSpec,
    methods: Sequence[str],
    seed: int,
    span: float = DEFAULT_SPAN,
    lower_bound: float = 0.5,
    n_mc: int = DEFAULT_N_MC,
) -> ValidationReport:
    """Out-of-sample validation of the projection methods.

    Series are truncated at the cut period (the truncated dataset is a
    separate value, so calibration cannot touch held-out cells), the
    scale-factor model is re-fitted, each method projects the held-out
    window from the supplied national ensembles, and all available truth
    cells are scored.  Deterministic for a fixed seed.
    """
    for m in methods:
        if m not in METHODS:
            raise DataError(f"unknown method {m!r}")
    window = spec.window
    if not any(
        not math.isnan(reg.value_at(t))
        for c in countries
        for reg in c.regions
        for t in window
    ):
        raise DataError(
            f"no observed truth inside the holdout window "
            f"(periods {window[0]}..{window[-1]})"
        )

    truncated: list[tuple[Country, Country]] = []  # (full, truncated)
    for c in countries:
        t = c.truncated_at(spec.cut_period.index)
        if t is not None:
            truncated.append((c, t))
    if not truncated:
        raise DataError("no country has data before the cut period")

    try:
        params = calibrate([t for _, t in truncated], span)
    except DataError as exc:
        raise DataError(f"insufficient pre-cut data for calibration: {exc}") from exc

    method_blocks: dict[str, dict[str, MetricBlock]] = {}
    for m_ord, method in enumerate(methods):
        marginal = _BlockAccumulator()
        average = _BlockAccumulator()
        rng_marginal = np.random.default_rng((seed, 101, m_ord))
        rng_average = np.random.default_rng((seed, 202, m_ord))

        for full, trunc in truncated:
            cid = full.country_id
            if cid not in national_traj:
                raise DataError(f"no national trajectories for country {cid!r}")
            national = national_traj[cid].subset(window)
            config = ProjectionConfig(
                method=method,
                params=params if method == METHOD_SCALE_AR1 else None,
                lower_bound=lower_bound,
                seed=seed,
                n_traj=national.n_traj,
            )
            regional = project(trunc, national, config)

            # marginal cells
            for reg in trunc.regions:
                rid = reg.geography_id
                truth_series = full.region(rid)
                for k, t in enumerate(window):
                    truth = truth_series.value_at(t)
                    if math.isnan(truth):
                        continue
                    marginal.add(regional[rid].paths[:, k], truth, rng_marginal)

            # average cells: regions with observed truth at the period
            for k, t in enumerate(window):
                cols = []
                truths = []
                for reg in trunc.regions:
                    truth = full.region(reg.geography_id).value_at(t)
                    if math.isnan(truth):
                        continue
                    cols.append(regional[reg.geography_id].paths[:, k])
                    truths.append(truth)
                if not cols:
                    continue
                average.add(np.mean(cols, axis=0), float(np.mean(truths)), rng_average)

        method_blocks[method] = {
            "marginal": marginal.block(),
            "average": average.block(),
        }

    return ValidationReport(
        cut_label=spec.cut_period.label,
        cut_index=spec.cut_period.index,
        horizon=spec.horizon,
        seed=seed,
        phi=params.phi,
        sigma=params.sigma,
        methods=method_blocks,
    )
