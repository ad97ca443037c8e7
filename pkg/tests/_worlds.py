"""Synthetic data builders shared across the test modules.

The AR(1) world generator produces data whose regional truth actually
follows the stochastic-scale law, including the per-country innovation cap,
so a correctly implemented holdout harness should be calibrated against it.
"""

from __future__ import annotations

import numpy as np

from subtfr import Country, PeriodIndex, TfrSeries, TrajectorySet


def labels(n: int, start: int = 1950) -> list[str]:
    return [f"{start + 5 * k}-{start + 5 * (k + 1)}" for k in range(n)]


def axis(n: int, start: int = 1950) -> tuple[PeriodIndex, ...]:
    return tuple(PeriodIndex(i, lab) for i, lab in enumerate(labels(n, start)))


def make_country(
    country_id: str,
    national: list[float],
    regions: dict[str, list[float]],
    start: int = 1950,
) -> Country:
    """Country from plain value lists (NaN allowed as leading prefix)."""
    n = len(national)
    ax = axis(n, start)
    nat = TfrSeries(country_id, ax, national)
    regs = []
    for rid, vals in regions.items():
        regs.append(TfrSeries(rid, ax[: len(vals)], vals))
    return Country(country_id, nat, tuple(regs))


def stationary_alpha(rng, phi: float, sigma: float, n_regions: int, n_periods: int):
    """AR(1) scale factors started from their stationary law, (R, T)."""
    sd = sigma / np.sqrt(1.0 - phi**2)
    a = np.empty((n_regions, n_periods))
    a[:, 0] = 1.0 + sd * rng.standard_normal(n_regions)
    for t in range(1, n_periods):
        a[:, t] = 1.0 + phi * (a[:, t - 1] - 1.0) + rng.normal(0.0, sigma, n_regions)
    return a


def ar1_panel_world(
    rng,
    n_countries: int,
    n_regions: int,
    n_periods: int,
    phi: float,
    sigma: float,
) -> list[Country]:
    """Observed-history-only world: regional TFR = alpha * national TFR with
    alpha following the stationary AR(1) law, national TFR declining."""
    countries = []
    for c in range(n_countries):
        hi = rng.uniform(2.5, 5.5)
        lo = rng.uniform(1.4, 2.2)
        national = np.linspace(hi, lo, n_periods)
        alpha = stationary_alpha(rng, phi, sigma, n_regions, n_periods)
        regions = {
            f"C{c:03d}-R{r}": list(alpha[r] * national) for r in range(n_regions)
        }
        countries.append(make_country(f"C{c:03d}", list(national), regions))
    return countries


def ar1_holdout_world(
    seed: int,
    n_countries: int = 20,
    n_regions: int = 4,
    n_history: int = 12,
    horizon: int = 3,
    n_traj: int = 800,
    phi: float = 0.925,
    sigma: float = 0.0452,
    rw_step: float = 0.03,
    rw_drift: float = 0.01,
):
    """Self-consistent world for holdout validation.

    History follows the stationary scale-factor law; the future truth is one
    more draw from the exact generating process the projector assumes: a
    national path drawn from the same law as the supplied ensemble, times
    AR(1) scale factors whose innovation scale is capped at the cut period
    the same way the projector caps it.

    Returns (countries, national_traj, cut PeriodIndex).
    """
    rng = np.random.default_rng(seed)
    total = n_history + horizon
    ax = axis(total)
    cut = ax[n_history - 1]

    countries = []
    national_traj = {}
    for c in range(n_countries):
        cid = f"C{c:03d}"
        hi = rng.uniform(2.8, 5.0)
        lo = rng.uniform(1.8, 2.4)
        nat_hist = np.linspace(hi, lo, n_history)
        alpha_hist = stationary_alpha(rng, phi, sigma, n_regions, n_history)

        # future national law: multiplicative random walk with mild decline
        def rw_paths(k: int) -> np.ndarray:
            steps = rng.normal(-rw_drift, rw_step, (k, horizon))
            return nat_hist[-1] * np.exp(np.cumsum(steps, axis=1))

        nat_future_truth = rw_paths(1)[0]
        ensemble = rw_paths(n_traj)

        # future scale factors with the capped innovation scale
        var_p = np.var(alpha_hist[:, -1], ddof=1)
        sigma_c = min(sigma, np.sqrt((1.0 - phi**2) * var_p))
        alpha_future = np.empty((n_regions, horizon))
        prev = alpha_hist[:, -1]
        for t in range(horizon):
            prev = 1.0 + phi * (prev - 1.0) + rng.normal(0.0, sigma_c, n_regions)
            alpha_future[:, t] = prev

        nat_full = np.concatenate([nat_hist, nat_future_truth])
        regions = {}
        for r in range(n_regions):
            hist = alpha_hist[r] * nat_hist
            future = alpha_future[r] * nat_future_truth
            regions[f"{cid}-R{r}"] = list(np.concatenate([hist, future]))
        countries.append(make_country(cid, list(nat_full), regions))
        national_traj[cid] = TrajectorySet(cid, ax[n_history:], ensemble)

    return countries, national_traj, cut


def count_rank_crossovers(
    paths_a: np.ndarray, paths_b: np.ndarray, initial_sign: float | None = None
) -> np.ndarray:
    """Number of times the ordering of two regions flips, per trajectory."""
    sign = np.sign(paths_a - paths_b)
    if initial_sign is not None:
        sign = np.column_stack([np.full(sign.shape[0], initial_sign), sign])
    return ((sign[:, 1:] * sign[:, :-1]) < 0).sum(axis=1)
