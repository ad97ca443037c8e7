"""Domain containers and file ingestion for TFR series, trajectory ensembles
and model parameters.

Conventions
-----------
* Time runs over five-year periods identified by an integer ordinal; the
  text label (e.g. "2005-2010") is cosmetic and unique within a dataset.
* A series may start late (leading missing prefix) and a regional series may
  end before the national one, but the observed cells must be contiguous:
  an interior gap is a load error, never imputed.
* All containers are immutable after construction (arrays are frozen), so
  they can be shared freely across threads.

File formats (delimited text, comma separated, UTF-8, header row):

* series, long layout: ``country_id, region_id, period_label, tfr`` where an
  empty ``region_id`` marks a national row;
* series, wide layout: ``country_id, region_id`` followed by one column per
  period label, one row per geography, empty cells for missing values;
* trajectories: ``geography_id, trajectory_id, period_label, tfr`` with a
  dense trajectory-by-period grid.
"""

from __future__ import annotations

import csv
import json
import math
import os
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError

SERIES_COLUMNS = ("country_id", "region_id", "period_label", "tfr")
TRAJECTORY_COLUMNS = ("geography_id", "trajectory_id", "period_label", "tfr")

_LEADING_INT = re.compile(r"^\s*(\d+)")


@dataclass(frozen=True)
class PeriodIndex:
    """One five-year period: ordinal position plus display label."""

    index: int
    label: str


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    arr.flags.writeable = False
    return arr


def _order_labels(labels: Iterable[str]) -> list[str]:
    """Deterministic ordering for period labels.

    Labels that all start with an integer (e.g. "1950-1955") sort by that
    integer, anything else falls back to plain string order.
    """
    distinct = list(dict.fromkeys(labels))
    keys = [_LEADING_INT.match(lab) for lab in distinct]
    if all(k is not None for k in keys):
        return sorted(distinct, key=lambda lab: (int(_LEADING_INT.match(lab).group(1)), lab))
    return sorted(distinct)


def build_axis(labels: Iterable[str]) -> tuple[PeriodIndex, ...]:
    """Turn a collection of period labels into a consecutive period axis."""
    ordered = _order_labels(labels)
    if not ordered:
        raise DataError("no period labels found")
    return tuple(PeriodIndex(i, lab) for i, lab in enumerate(ordered))


class TfrSeries:
    """Observed TFR for one geography on a shared period axis.

    ``values[k]`` belongs to ``periods[k]`` and ``periods[k].index == k``
    (every series is anchored at the dataset's first period).  Missing
    values are NaN and may only form a leading prefix; the axis simply ends
    at the geography's last observed period.
    """

    __slots__ = ("geography_id", "periods", "values")

    def __init__(self, geography_id: str, periods: Sequence[PeriodIndex], values: Sequence[float]):
        values = _freeze(np.asarray(values, dtype=float))
        periods = tuple(periods)
        if len(periods) != len(values):
            raise DataError(f"{geography_id}: {len(periods)} periods vs {len(values)} values")
        if not periods:
            raise DataError(f"{geography_id}: empty series")
        for k, p in enumerate(periods):
            if p.index != k:
                raise DataError(f"{geography_id}: period axis not consecutive at position {k}")
        observed = ~np.isnan(values)
        if not observed.any():
            raise DataError(f"{geography_id}: series has no observed values")
        first = int(np.argmax(observed))
        if not observed[-1]:
            raise DataError(f"{geography_id}: trailing missing values, trim the axis instead")
        if not observed[first:].all():
            gap = first + int(np.argmin(observed[first:]))
            raise DataError(
                f"{geography_id}: interior gap at period '{periods[gap].label}'"
            )
        if np.any(values[observed] <= 0):
            raise DataError(f"{geography_id}: non-positive TFR value")
        self.geography_id = geography_id
        self.periods = periods
        self.values = values

    @property
    def first_observed(self) -> int:
        return int(np.argmax(~np.isnan(self.values)))

    @property
    def last_observed(self) -> int:
        """Index of the last observed period (the series' present, P)."""
        return len(self.values) - 1

    def value_at(self, index: int) -> float:
        """Observed value at a period index, NaN when absent."""
        if 0 <= index < len(self.values):
            return float(self.values[index])
        return math.nan

    def observed_items(self) -> list[tuple[PeriodIndex, float]]:
        return [
            (p, float(v))
            for p, v in zip(self.periods, self.values)
            if not math.isnan(v)
        ]

    def truncated_at(self, cut_index: int) -> "TfrSeries | None":
        """Copy keeping periods up to ``cut_index``; None if nothing observed."""
        end = min(cut_index, self.last_observed)
        if end < self.first_observed:
            return None
        return TfrSeries(self.geography_id, self.periods[: end + 1], self.values[: end + 1])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, TfrSeries)
            and self.geography_id == other.geography_id
            and self.periods == other.periods
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    def __repr__(self) -> str:
        return f"TfrSeries({self.geography_id!r}, {len(self.values)} periods)"


@dataclass(frozen=True)
class Country:
    """National series plus its regional series, all on one period axis."""

    country_id: str
    national_series: TfrSeries
    regions: tuple[TfrSeries, ...]

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        if self.r_c < 1:
            raise DataError(f"{self.country_id}: a country needs at least one region")
        nat = self.national_series
        for reg in self.regions:
            if reg.first_observed < nat.first_observed or reg.last_observed > nat.last_observed:
                raise DataError(
                    f"{self.country_id}/{reg.geography_id}: region observed outside "
                    f"the national period axis"
                )
            for p, q in zip(reg.periods, nat.periods):
                if p != q:
                    raise DataError(
                        f"{self.country_id}/{reg.geography_id}: period axis mismatch"
                    )

    @property
    def r_c(self) -> int:
        return len(self.regions)

    def region(self, region_id: str) -> TfrSeries:
        for reg in self.regions:
            if reg.geography_id == region_id:
                return reg
        raise KeyError(region_id)

    def truncated_at(self, cut_index: int) -> "Country | None":
        """Country restricted to periods <= cut_index.

        Regions with no remaining observations are dropped; returns None when
        the national series or every region drops out.
        """
        nat = self.national_series.truncated_at(cut_index)
        if nat is None:
            return None
        regions = [
            t for r in self.regions if (t := r.truncated_at(cut_index)) is not None
        ]
        if not regions:
            return None
        return Country(self.country_id, nat, tuple(regions))


class TrajectorySet:
    """Ensemble of simulated TFR paths for one geography.

    ``paths`` has shape (n_traj, n_periods), one row per trajectory, aligned
    with ``horizon``.  ``seed_record`` carries the RNG provenance for sets
    produced by this package and is None for externally supplied ensembles.
    """

    __slots__ = ("geography_id", "horizon", "paths", "seed_record")

    def __init__(
        self,
        geography_id: str,
        horizon: Sequence[PeriodIndex],
        paths: np.ndarray,
        seed_record: Mapping | None = None,
    ):
        paths = np.asarray(paths, dtype=float)
        if paths.ndim != 2:
            raise DataError(f"{geography_id}: paths must be a 2-d matrix")
        horizon = tuple(horizon)
        if paths.shape[0] < 1:
            raise DataError(f"{geography_id}: ensemble needs at least one trajectory")
        if paths.shape[1] != len(horizon):
            raise DataError(
                f"{geography_id}: {paths.shape[1]} columns vs {len(horizon)} horizon periods"
            )
        if paths.size and (not np.isfinite(paths).all() or (paths <= 0).any()):
            raise DataError(f"{geography_id}: trajectory values must be positive and finite")
        self.geography_id = geography_id
        self.horizon = horizon
        self.paths = _freeze(paths)
        self.seed_record = dict(seed_record) if seed_record is not None else None

    @property
    def n_traj(self) -> int:
        return self.paths.shape[0]

    @property
    def n_periods(self) -> int:
        return self.paths.shape[1]

    def column(self, period_index: int) -> np.ndarray:
        """All trajectory values for one horizon period (by global index)."""
        for k, p in enumerate(self.horizon):
            if p.index == period_index:
                return self.paths[:, k]
        raise KeyError(period_index)

    def subset(self, period_indices: Sequence[int]) -> "TrajectorySet":
        """Ensemble restricted to the given global period indices."""
        pos = []
        lookup = {p.index: k for k, p in enumerate(self.horizon)}
        for idx in period_indices:
            if idx not in lookup:
                raise DataError(
                    f"{self.geography_id}: period index {idx} not in ensemble horizon"
                )
            pos.append(lookup[idx])
        return TrajectorySet(
            self.geography_id,
            [self.horizon[k] for k in pos],
            self.paths[:, pos],
            self.seed_record,
        )

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, TrajectorySet)
            and self.geography_id == other.geography_id
            and self.horizon == other.horizon
            and np.array_equal(self.paths, other.paths)
        )

    def __repr__(self) -> str:
        return (
            f"TrajectorySet({self.geography_id!r}, {self.n_traj} x {self.n_periods})"
        )


@dataclass(frozen=True)
class ScaleAr1Params:
    """Fitted parameters of the mean-one AR(1) scale-factor model.

    phi and sigma are global; sigma_c caps the innovation scale per country
    so the cross-region spread cannot grow beyond its last observed level;
    alpha_init holds each region's starting scale factor.  provenance keeps
    the calibration moments (e_abs_alpha, e_abs_delta, tfr_at_min) when the
    parameters came out of the calibration pipeline.
    """

    phi: float
    sigma: float
    sigma_c: Mapping[str, float] = field(default_factory=dict)
    alpha_init: Mapping[str, float] = field(default_factory=dict)
    provenance: tuple[float, float, float] | None = None

    def __post_init__(self):
        if not 0.0 < self.phi < 1.0:
            raise DataError(f"phi={self.phi} outside (0, 1)")
        if not self.sigma > 0.0:
            raise DataError(f"sigma={self.sigma} must be positive")
        for cid, sc in self.sigma_c.items():
            if sc < 0 or sc > self.sigma * (1 + 1e-12):
                raise DataError(f"sigma_c[{cid}]={sc} outside [0, sigma]")
        for rid, a in self.alpha_init.items():
            if not a > 0:
                raise DataError(f"alpha_init[{rid}]={a} must be positive")
        object.__setattr__(self, "sigma_c", dict(self.sigma_c))
        object.__setattr__(self, "alpha_init", dict(self.alpha_init))

    def validate_against(self, countries: Sequence[Country]) -> None:
        """Check the per-country spread cap against a dataset."""
        for c in countries:
            if c.r_c < 2 or c.country_id not in self.sigma_c:
                continue
            alphas = [self.alpha_init[r.geography_id] for r in c.regions]
            cap = (1.0 - self.phi**2) * float(np.var(alphas, ddof=1))
            if self.sigma_c[c.country_id] ** 2 > cap * (1 + 1e-9) + 1e-15:
                raise DataError(
                    f"sigma_c[{c.country_id}] exceeds the cross-region spread cap"
                )


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def _open_rows(path: str | os.PathLike) -> tuple[list[str], list[tuple[int, list[str]]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            rows = [(lineno, row) for lineno, row in enumerate(reader, start=1) if row]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0][1]]
    return header, rows[1:]


def _parse_tfr(text: str, path, lineno: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"{path}: row {lineno}: tfr value {text!r} is not a number") from None
    if not math.isfinite(value) or value <= 0:
        raise DataError(f"{path}: row {lineno}: non-positive TFR value {value}")
    return value


def _series_from_cells(
    geography_id: str,
    axis: tuple[PeriodIndex, ...],
    cells: dict[int, float],
) -> TfrSeries:
    last = max(cells)
    values = np.full(last + 1, np.nan)
    for idx, v in cells.items():
        values[idx] = v
    return TfrSeries(geography_id, axis[: last + 1], values)


def load_series(path: str | os.PathLike, layout: str = "long") -> list[Country]:
    """Load per-country national and regional TFR series from a CSV file.

    layout "long" expects columns country_id, region_id, period_label, tfr
    (empty region_id marks national rows); layout "wide" expects one row per
    geography with one column per period label.  Leading gaps are preserved
    as missing; interior gaps, non-positive values, duplicate cells, regions
    outside the national axis and countries without a national series are
    all rejected.
    """
    if layout not in ("long", "wide"):
        raise DataError(f"unknown layout {layout!r}")
    header, rows = _open_rows(path)

    # (country_id, region_id or None) -> {period index -> value}
    cells: dict[tuple[str, str | None], dict[int, float]] = {}
    country_order: list[str] = []

    if layout == "long":
        missing = [c for c in SERIES_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        col = {name: header.index(name) for name in SERIES_COLUMNS}
        labels = _order_labels(
            row[col["period_label"]].strip() for _, row in rows if len(row) > col["period_label"]
        )
        axis = build_axis(labels)
        index_of = {p.label: p.index for p in axis}
        for lineno, row in rows:
            if len(row) < len(header):
                raise DataError(f"{path}: row {lineno}: too few fields")
            cid = row[col["country_id"]].strip()
            rid = row[col["region_id"]].strip() or None
            label = row[col["period_label"]].strip()
            value = _parse_tfr(row[col["tfr"]], path, lineno)
            key = (cid, rid)
            idx = index_of[label]
            geo = cells.setdefault(key, {})
            if idx in geo:
                raise DataError(
                    f"{path}: row {lineno}: duplicate value for "
                    f"({rid or cid}, '{label}')"
                )
            geo[idx] = value
            if cid not in country_order:
                country_order.append(cid)
    else:
        if len(header) < 3 or header[0] != "country_id" or header[1] != "region_id":
            raise DataError(
                f"{path}: wide layout needs 'country_id, region_id, <period labels...>'"
            )
        labels = header[2:]
        if len(set(labels)) != len(labels):
            raise DataError(f"{path}: duplicate period label in header")
        axis = build_axis(labels)
        index_of = {p.label: p.index for p in axis}
        for lineno, row in rows:
            cid = row[0].strip()
            rid = row[1].strip() or None
            key = (cid, rid)
            if key in cells:
                raise DataError(
                    f"{path}: row {lineno}: duplicate geography {rid or cid!r}"
                )
            geo: dict[int, float] = {}
            for label, text in zip(labels, row[2:]):
                if not text.strip():
                    continue
                geo[index_of[label]] = _parse_tfr(text, path, lineno)
            if not geo:
                raise DataError(f"{path}: row {lineno}: geography has no values")
            cells[key] = geo
            if cid not in country_order:
                country_order.append(cid)

    countries: list[Country] = []
    seen_regions: dict[str, str] = {}
    for cid in country_order:
        if (cid, None) not in cells:
            raise DataError(f"{path}: country {cid!r} has no national series")
        national = _series_from_cells(cid, axis, cells[(cid, None)])
        regions = []
        for (c, rid), geo in cells.items():
            if c != cid or rid is None:
                continue
            if rid in seen_regions:
                raise DataError(
                    f"{path}: region id {rid!r} appears under both "
                    f"{seen_regions[rid]!r} and {cid!r}"
                )
            seen_regions[rid] = cid
            regions.append(_series_from_cells(rid, axis, geo))
        countries.append(Country(cid, national, tuple(regions)))
    return countries


def save_series(
    countries: Sequence[Country],
    path: str | os.PathLike,
    layout: str = "long",
    force: bool = False,
) -> None:
    """Write countries back to a series CSV (long layout only)."""
    if layout != "long":
        raise DataError("save_series only writes the long layout")
    _check_target(path, force)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SERIES_COLUMNS)
        for c in countries:
            for p, v in c.national_series.observed_items():
                writer.writerow([c.country_id, "", p.label, repr(v)])
            for reg in c.regions:
                for p, v in reg.observed_items():
                    writer.writerow([c.country_id, reg.geography_id, p.label, repr(v)])


def load_trajectory_map(path: str | os.PathLike) -> dict[str, TrajectorySet]:
    """Load a trajectory CSV that may hold ensembles for several geographies."""
    header, rows = _open_rows(path)
    missing = [c for c in TRAJECTORY_COLUMNS if c not in header]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    col = {name: header.index(name) for name in TRAJECTORY_COLUMNS}

    # geography -> {(trajectory_id, label) -> value}
    data: dict[str, dict[tuple[str, str], float]] = {}
    traj_order: dict[str, list[str]] = {}
    labels: dict[str, list[str]] = {}
    for lineno, row in rows:
        gid = row[col["geography_id"]].strip()
        tid = row[col["trajectory_id"]].strip()
        label = row[col["period_label"]].strip()
        value = _parse_tfr(row[col["tfr"]], path, lineno)
        geo = data.setdefault(gid, {})
        if (tid, label) in geo:
            raise DataError(
                f"{path}: row {lineno}: duplicate cell (trajectory {tid}, '{label}')"
            )
        geo[(tid, label)] = value
        order = traj_order.setdefault(gid, [])
        if tid not in order:
            order.append(tid)
        labs = labels.setdefault(gid, [])
        if label not in labs:
            labs.append(label)

    out: dict[str, TrajectorySet] = {}
    for gid, geo in data.items():
        axis = build_axis(labels[gid])
        tids = traj_order[gid]
        paths = np.empty((len(tids), len(axis)))
        for i, tid in enumerate(tids):
            for j, p in enumerate(axis):
                if (tid, p.label) not in geo:
                    raise DataError(
                        f"{path}: trajectory {tid!r} of {gid!r} is missing "
                        f"period '{p.label}'"
                    )
                paths[i, j] = geo[(tid, p.label)]
        out[gid] = TrajectorySet(gid, axis, paths)
    return out


def load_trajectories(path: str | os.PathLike) -> TrajectorySet:
    """Load a single-geography trajectory ensemble from a CSV file."""
    sets = load_trajectory_map(path)
    if len(sets) != 1:
        raise DataError(
            f"{path}: expected one geography, found {sorted(sets)}"
        )
    return next(iter(sets.values()))


def _check_target(path, force: bool) -> None:
    if not force and os.path.exists(path):
        raise DataError(f"{path}: exists, pass force=True to overwrite")


def save_trajectories(
    tset: TrajectorySet, path: str | os.PathLike, force: bool = False
) -> None:
    """Write a trajectory ensemble to CSV with full float precision.

    Values are serialized with repr so a load round-trips bit-exactly.
    """
    if tset.n_periods == 0:
        raise DataError(f"{tset.geography_id}: refusing to save an empty horizon")
    _check_target(path, force)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRAJECTORY_COLUMNS)
            for i in range(tset.n_traj):
                for j, p in enumerate(tset.horizon):
                    writer.writerow(
                        [tset.geography_id, str(i), p.label, repr(float(tset.paths[i, j]))]
                    )
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Parameter persistence
# ---------------------------------------------------------------------------


def save_params(params: ScaleAr1Params, path: str | os.PathLike, force: bool = False) -> None:
    _check_target(path, force)
    doc = {
        "phi": params.phi,
        "sigma": params.sigma,
        "sigma_c": dict(sorted(params.sigma_c.items())),
        "alpha_init": dict(sorted(params.alpha_init.items())),
    }
    if params.provenance is not None:
        e_abs_alpha, e_abs_delta, tfr_at_min = params.provenance
        doc["provenance"] = {
            "e_abs_alpha": e_abs_alpha,
            "e_abs_delta": e_abs_delta,
            "tfr_at_min": tfr_at_min,
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_params(path: str | os.PathLike) -> ScaleAr1Params:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON: {exc}") from exc
    try:
        prov = None
        if "provenance" in doc:
            p = doc["provenance"]
            prov = (p["e_abs_alpha"], p["e_abs_delta"], p["tfr_at_min"])
        return ScaleAr1Params(
            phi=float(doc["phi"]),
            sigma=float(doc["sigma"]),
            sigma_c={k: float(v) for k, v in doc.get("sigma_c", {}).items()},
            alpha_init={k: float(v) for k, v in doc.get("alpha_init", {}).items()},
            provenance=prov,
        )
    except KeyError as exc:
        raise DataError(f"{path}: missing field {exc}") from exc
