"""Regional trajectory generation from a national ensemble.

Three methods:

* scale: each regional path is the national path times a fixed ratio taken
  at the last observed period, so region ranks never cross;
* scale-ar1: the ratio follows a mean-one AR(1) process per trajectory,
  which lets regions drift toward the national level and occasionally cross;
* persistence: flat forecast at the last observed value, the baseline.

Every random draw comes from a stream keyed by (seed, region digest,
trajectory index), so results are reproducible bit for bit and adding or
reordering regions never changes another region's draws.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ar1_calibration import initial_alpha
from .data_model import Country, PeriodIndex, ScaleAr1Params, TrajectorySet
from .errors import DataError

METHOD_SCALE = "scale"
METHOD_SCALE_AR1 = "scale-ar1"
METHOD_PERSISTENCE = "persistence"
METHODS = (METHOD_SCALE, METHOD_SCALE_AR1, METHOD_PERSISTENCE)

DEFAULT_LOWER_BOUND = 0.5
CLAMP_MARGIN = 1e-9
MAX_RESAMPLE = 100


@dataclass(frozen=True)
class ProjectionConfig:
    """Settings for one projection run."""

    method: str
    params: ScaleAr1Params | None = None
    lower_bound: float = DEFAULT_LOWER_BOUND
    seed: int = 0
    n_traj: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise DataError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if not self.lower_bound > 0:
            raise DataError(f"lower_bound={self.lower_bound} must be positive")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise DataError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.method == METHOD_SCALE_AR1 and self.params is None:
            raise DataError("scale-ar1 requires fitted ScaleAr1Params")


def _region_key(region_id: str) -> int:
    """Stable 64-bit stream key for a region id."""
    digest = hashlib.sha256(region_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def project_scale(country: Country, national: TrajectorySet) -> dict[str, TrajectorySet]:
    """Constant-ratio scaling of every national trajectory.

    No randomness is consumed; same-index trajectories of any two regions
    stay perfectly rank-correlated at every horizon period.
    """
    alphas = initial_alpha(country)
    out = {}
    for reg in country.regions:
        a = alphas[reg.geography_id]
        out[reg.geography_id] = TrajectorySet(
            reg.geography_id, national.horizon, a * national.paths
        )
    return out


def project_scale_ar1(
    country: Country, national: TrajectorySet, config: ProjectionConfig
) -> dict[str, TrajectorySet]:
    """Stochastic scaling with a mean-one AR(1) ratio per trajectory.

    For each (region, trajectory) an innovation stream is drawn; the ratio
    is updated, multiplied onto the national value, and the lower bound on
    the resulting TFR is enforced by resampling the step's innovation up to
    100 times before clamping just above the bound.
    """
    params = config.params
    if params is None:
        raise DataError("scale-ar1 requires fitted ScaleAr1Params")
    if config.n_traj is not None and config.n_traj != national.n_traj:
        raise DataError(
            f"n_traj={config.n_traj} does not match the national ensemble "
            f"size {national.n_traj}"
        )
    phi = params.phi
    sigma_c = params.sigma_c.get(country.country_id, params.sigma)
    lb = config.lower_bound
    n, horizon = national.n_traj, len(national.horizon)
    record = {
        "seed": config.seed,
        "method": METHOD_SCALE_AR1,
        "lower_bound": lb,
        "phi": phi,
        "sigma_c": sigma_c,
    }

    out = {}
    for reg in country.regions:
        rid = reg.geography_id
        if rid not in params.alpha_init:
            raise DataError(f"no alpha_init for region {rid!r}")
        rkey = _region_key(rid)
        gens = [
            np.random.default_rng((config.seed, rkey, i)) for i in range(n)
        ]
        eps = np.stack([g.normal(0.0, sigma_c, horizon) for g in gens])
        alpha = np.full(n, params.alpha_init[rid])
        paths = np.empty((n, horizon))
        for t in range(horizon):
            nat_t = national.paths[:, t]
            a = 1.0 + phi * (alpha - 1.0) + eps[:, t]
            f = a * nat_t
            if sigma_c > 0.0:
                for i in np.flatnonzero(f <= lb):
                    for _ in range(MAX_RESAMPLE):
                        e = gens[i].normal(0.0, sigma_c)
                        a_i = 1.0 + phi * (alpha[i] - 1.0) + e
                        if a_i * nat_t[i] > lb:
                            a[i] = a_i
                            f[i] = a_i * nat_t[i]
                            break
            low = f <= lb
            if low.any():
                f[low] = lb + CLAMP_MARGIN
                a[low] = f[low] / nat_t[low]
            paths[:, t] = f
            alpha = a
        out[rid] = TrajectorySet(rid, national.horizon, paths, seed_record=record)
    return out


def project_persistence(
    country: Country, horizon: Sequence[PeriodIndex], n_traj: int = 1
) -> dict[str, TrajectorySet]:
    """Flat forecast at each region's last observed value.

    Emits n_traj identical paths so downstream scoring can treat all
    methods uniformly; the predictive distribution is a point mass.
    """
    horizon = tuple(horizon)
    if not horizon:
        raise DataError("persistence needs a non-empty horizon")
    if n_traj < 1:
        raise DataError(f"n_traj={n_traj} must be at least 1")
    out = {}
    for reg in country.regions:
        last = reg.value_at(reg.last_observed)
        if math.isnan(last):
            raise DataError(f"{reg.geography_id}: no observed value to persist")
        paths = np.full((n_traj, len(horizon)), last)
        out[reg.geography_id] = TrajectorySet(reg.geography_id, horizon, paths)
    return out


def project(
    country: Country,
    national: TrajectorySet,
    config: ProjectionConfig,
) -> dict[str, TrajectorySet]:
    """Dispatch on the configured method; persistence reuses the national
    horizon and ensemble size."""
    if config.method == METHOD_SCALE:
        return project_scale(country, national)
    if config.method == METHOD_SCALE_AR1:
        return project_scale_ar1(country, national, config)
    return project_persistence(
        country, national.horizon, config.n_traj or national.n_traj
    )
