"""Command line interface.

Subcommands: estimate-ar1, project, correlate, validate, plot-data.  Flags
override values from an optional JSON config file, which in turn override
built-in defaults.  Every run writes a manifest.json next to its outputs
recording the subcommand, effective configuration hash, seed, input file
digests, tool version and timestamp.  Exit codes: 0 success, 2 usage error,
3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .ar1_calibration import DEFAULT_SPAN, calibrate
from .data_model import (
    TrajectorySet,
    load_params,
    load_series,
    load_trajectory_map,
    save_params,
    save_trajectories,
)
from .errors import DataError, NumericError, SubtfrError
from .error_correlation import estimate_A, load_error_panel, split_by_tfr_values
from .scale_projector import (
    METHOD_SCALE,
    METHOD_SCALE_AR1,
    METHODS,
    ProjectionConfig,
    project,
)
from .validation import HoldoutSpec, run_holdout, save_report

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

DEFAULTS = {
    "phi": 0.925,
    "sigma": 0.0452,
    "span": DEFAULT_SPAN,
    "seed": 0,
    "lower_bound": 0.5,
    "layout": "long",
}

QUANTILE_FIELDS = ("median", "q10", "q90", "q025", "q975")
QUANTILE_PROBS = (50.0, 10.0, 90.0, 2.5, 97.5)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: str, subcommand: str, settings: dict, inputs: list[str]) -> None:
    os.makedirs(out_dir, exist_ok=True)
    doc = {
        "subcommand": subcommand,
        "config_hash": hashlib.sha256(
            json.dumps(settings, sort_keys=True).encode()
        ).hexdigest(),
        "settings": settings,
        "seed": settings.get("seed"),
        "inputs": [{"path": p, "sha256": _sha256(p)} for p in inputs],
        "tool_version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _effective(args: argparse.Namespace, config: dict, key: str, cast=None):
    """Flag value if given, else config file value, else built-in default."""
    value = getattr(args, key.replace("-", "_"), None)
    if value is None:
        value = config.get(key, DEFAULTS.get(key))
    if cast is not None and value is not None:
        value = cast(value)
    return value


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise DataError(f"{path}: config must be a flat JSON object")
    return doc


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_estimate_ar1(args: argparse.Namespace, config: dict) -> int:
    span = float(_effective(args, config, "span"))
    countries = load_series(args.input, layout=_effective(args, config, "layout"))
    params = calibrate(countries, span=span)
    save_params(params, args.out, force=True)
    _write_manifest(
        os.path.dirname(os.path.abspath(args.out)),
        "estimate-ar1",
        {"span": span, "input": os.path.basename(args.input)},
        [args.input],
    )
    print(f"phi={params.phi:.5f} sigma={params.sigma:.5f} -> {args.out}")
    return EXIT_OK


def _quantile_rows(region_id: str, tset: TrajectorySet) -> list[list[str]]:
    rows = []
    for k, p in enumerate(tset.horizon):
        qs = np.percentile(tset.paths[:, k], QUANTILE_PROBS)
        rows.append([region_id, p.label] + [repr(float(q)) for q in qs])
    return rows


def _cmd_project(args: argparse.Namespace, config: dict) -> int:
    seed = int(_effective(args, config, "seed"))
    lower_bound = float(_effective(args, config, "lower_bound"))
    countries = load_series(args.series, layout=_effective(args, config, "layout"))
    national_map = load_trajectory_map(args.national_traj)

    params = None
    if args.params is not None:
        if args.method != METHOD_SCALE_AR1:
            print(
                f"warning: --params is ignored for method '{args.method}'",
                file=sys.stderr,
            )
        else:
            params = load_params(args.params)
    if args.method == METHOD_SCALE_AR1 and params is None:
        # fall back to configured global parameters, deriving the per-country
        # caps and starting factors from the series file
        from .ar1_calibration import derive_sigma_c, initial_alpha

        phi = float(_effective(args, config, "phi"))
        sigma = float(_effective(args, config, "sigma"))
        sigma_c = {c.country_id: derive_sigma_c(phi, sigma, c) for c in countries}
        alpha_init: dict[str, float] = {}
        for c in countries:
            alpha_init.update(initial_alpha(c))
        from .data_model import ScaleAr1Params

        params = ScaleAr1Params(phi=phi, sigma=sigma, sigma_c=sigma_c, alpha_init=alpha_init)

    os.makedirs(args.out_dir, exist_ok=True)
    quantiles: list[list[str]] = []
    for country in countries:
        if country.country_id not in national_map:
            raise DataError(
                f"{args.national_traj}: no trajectories for country "
                f"{country.country_id!r}"
            )
        national = national_map[country.country_id]
        cfg = ProjectionConfig(
            method=args.method,
            params=params,
            lower_bound=lower_bound,
            seed=seed,
            n_traj=national.n_traj,
        )
        regional = project(country, national, cfg)
        for rid, tset in regional.items():
            save_trajectories(
                tset, os.path.join(args.out_dir, f"{rid}.csv"), force=True
            )
            quantiles.extend(_quantile_rows(rid, tset))

    with open(
        os.path.join(args.out_dir, "quantiles.csv"), "w", newline="", encoding="utf-8"
    ) as fh:
        writer = csv.writer(fh)
        writer.writerow(["region_id", "period_label", *QUANTILE_FIELDS])
        writer.writerows(quantiles)

    _write_manifest(
        args.out_dir,
        "project",
        {"method": args.method, "seed": seed, "lower_bound": lower_bound},
        [args.series, args.national_traj] + ([args.params] if args.params else []),
    )
    print(f"projected {args.method} ensembles -> {args.out_dir}")
    return EXIT_OK


def _method_list(text: str) -> list[int]:
    if text == "all":
        return list(range(1, 12))
    try:
        ids = [int(tok) for tok in text.split(",")]
    except ValueError:
        raise DataError(f"--method must be 1..11 or 'all', got {text!r}") from None
    for i in ids:
        if not 1 <= i <= 11:
            raise DataError(f"--method must be 1..11 or 'all', got {i}")
    return ids


def _write_matrix(est, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region_id", *est.region_ids])
        for rid, row in zip(est.region_ids, est.A):
            writer.writerow([rid] + [repr(float(v)) for v in row])
    with open(path + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "method_id": est.method_id,
                "tfr_stratum": est.tfr_stratum,
                "T_bar": est.T_bar,
                "smallest_eigenvalue": est.pd_certificate,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")


def _cmd_correlate(args: argparse.Namespace, config: dict) -> int:
    panel, national_tfr = load_error_panel(args.errors)
    methods = _method_list(args.method)

    strata: list[tuple[str, object]] = [("pooled", panel)]
    if args.tfr_split:
        if national_tfr is None:
            raise DataError(
                f"{args.errors}: --tfr-split needs a national_tfr column"
            )
        high, low = split_by_tfr_values(panel, national_tfr, args.tfr_threshold)
        strata = [("high", high), ("low", low)]

    base, ext = os.path.splitext(args.out)
    ext = ext or ".csv"
    outputs = []
    for stratum, pan in strata:
        for mid in methods:
            est = estimate_A(pan, mid, tfr_stratum=stratum)
            suffix = ""
            if len(methods) > 1:
                suffix += f"_m{mid}"
            if stratum != "pooled":
                suffix += f"_{stratum}"
            path = f"{base}{suffix}{ext}"
            _write_matrix(est, path)
            outputs.append(path)

    _write_manifest(
        os.path.dirname(os.path.abspath(args.out)),
        "correlate",
        {"method": args.method, "tfr_split": bool(args.tfr_split)},
        [args.errors],
    )
    print(f"wrote {len(outputs)} correlation matrix file(s)")
    return EXIT_OK


def _cmd_validate(args: argparse.Namespace, config: dict) -> int:
    seed = int(_effective(args, config, "seed"))
    span = float(_effective(args, config, "span"))
    lower_bound = float(_effective(args, config, "lower_bound"))
    countries = load_series(args.series, layout=_effective(args, config, "layout"))
    national_map = load_trajectory_map(args.national_traj)

    axis = countries[0].national_series.periods
    by_label = {p.label: p for p in axis}
    if args.cut not in by_label:
        raise DataError(
            f"cut period '{args.cut}' not on the observed axis "
            f"({axis[0].label}..{axis[-1].label})"
        )
    spec = HoldoutSpec(cut_period=by_label[args.cut], horizon=args.horizon)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise DataError(f"unknown method {m!r}, expected subset of {METHODS}")

    report = run_holdout(
        countries,
        national_map,
        spec,
        methods,
        seed=seed,
        span=span,
        lower_bound=lower_bound,
    )
    save_report(report, args.out, force=True)
    _write_manifest(
        os.path.dirname(os.path.abspath(args.out)),
        "validate",
        {
            "cut": args.cut,
            "horizon": args.horizon,
            "methods": methods,
            "seed": seed,
            "span": span,
            "lower_bound": lower_bound,
        },
        [args.series, args.national_traj],
    )
    for m in methods:
        blk = report.block(m, "marginal")
        print(
            f"{m}: marginal mae={blk.mae:.4f} crps={blk.crps:.4f} "
            f"cov80={blk.cov80:.1f}% cov95={blk.cov95:.1f}% (n={blk.n_values})"
        )
    return EXIT_OK


def _cmd_plot_data(args: argparse.Namespace, config: dict) -> int:
    countries = load_series(args.series, layout=_effective(args, config, "layout"))
    observed = {}
    for c in countries:
        for reg in c.regions:
            observed[reg.geography_id] = reg.observed_items()

    with open(args.summary, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        needed = {"region_id", "period_label", *QUANTILE_FIELDS}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise DataError(f"{args.summary}: not a quantile summary file")
        summary: dict[str, list[dict]] = {}
        for row in reader:
            summary.setdefault(row["region_id"], []).append(row)

    os.makedirs(args.out_dir, exist_ok=True)
    written = []
    for rid, rows in summary.items():
        if rid not in observed:
            print(f"warning: region {rid!r} not in the series file, skipped",
                  file=sys.stderr)
            continue
        path = os.path.join(args.out_dir, f"{rid}_fan.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["period", "observed", *QUANTILE_FIELDS])
            for p, v in observed[rid]:
                writer.writerow([p.label, repr(v), "", "", "", "", ""])
            for row in rows:
                writer.writerow(
                    [row["period_label"], ""] + [row[f] for f in QUANTILE_FIELDS]
                )
        written.append((rid, path, rows))

    if args.svg:
        try:
            import matplotlib

            matplotlib.use("Agg")
            import matplotlib.pyplot as plt
        except ImportError:
            print("warning: matplotlib not available, skipping SVG output",
                  file=sys.stderr)
        else:
            for rid, _, rows in written:
                fig, ax = plt.subplots(figsize=(7, 4))
                labels = [p.label for p, _ in observed[rid]]
                ax.plot(labels, [v for _, v in observed[rid]], "k-", label="observed")
                proj_labels = [r["period_label"] for r in rows]
                med = [float(r["median"]) for r in rows]
                q10 = [float(r["q10"]) for r in rows]
                q90 = [float(r["q90"]) for r in rows]
                ax.plot(proj_labels, med, "r-", label="median")
                ax.fill_between(proj_labels, q10, q90, color="red", alpha=0.25,
                                label="80% interval")
                ax.set_title(rid)
                ax.set_ylabel("TFR")
                ax.tick_params(axis="x", rotation=60, labelsize=6)
                ax.legend()
                fig.tight_layout()
                fig.savefig(os.path.join(args.out_dir, f"{rid}_fan.svg"))
                plt.close(fig)

    _write_manifest(
        args.out_dir, "plot-data", {"svg": bool(args.svg)},
        [args.summary, args.series],
    )
    print(f"wrote fan-chart data for {len(written)} region(s) -> {args.out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subtfr",
        description="Probabilistic subnational TFR projection toolkit",
    )
    parser.add_argument("--config", help="JSON config file (flat key-value)")
    parser.add_argument("--version", action="version", version=f"subtfr {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("estimate-ar1", help="calibrate the scale-factor model")
    p.add_argument("--input", required=True, help="observed series CSV")
    p.add_argument("--span", type=float, default=None, help="loess span (0, 1]")
    p.add_argument("--layout", choices=["long", "wide"], default=None)
    p.add_argument("--out", required=True, help="output parameter JSON")
    p.set_defaults(func=_cmd_estimate_ar1)

    p = sub.add_parser("project", help="generate regional trajectory ensembles")
    p.add_argument("--method", required=True, choices=list(METHODS))
    p.add_argument("--series", required=True, help="observed series CSV")
    p.add_argument("--national-traj", required=True, help="national ensemble CSV")
    p.add_argument("--params", default=None, help="fitted parameter JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lower-bound", type=float, default=None)
    p.add_argument("--layout", choices=["long", "wide"], default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_project)

    p = sub.add_parser("correlate", help="estimate between-region correlations")
    p.add_argument("--errors", required=True, help="normalized error panel CSV")
    p.add_argument("--method", default="8", help="1..11, comma list, or 'all'")
    p.add_argument("--tfr-split", action="store_true",
                   help="estimate separate high/low TFR matrices")
    p.add_argument("--tfr-threshold", type=float, default=5.0)
    p.add_argument("--out", required=True, help="output matrix CSV")
    p.set_defaults(func=_cmd_correlate)

    p = sub.add_parser("validate", help="out-of-sample holdout validation")
    p.add_argument("--series", required=True)
    p.add_argument("--national-traj", required=True)
    p.add_argument("--cut", required=True, help="last period label kept for fitting")
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--methods", default="scale,scale-ar1,persistence")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--span", type=float, default=None)
    p.add_argument("--lower-bound", type=float, default=None)
    p.add_argument("--layout", choices=["long", "wide"], default=None)
    p.add_argument("--out", required=True, help="output report JSON")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("plot-data", help="emit fan-chart data files")
    p.add_argument("--summary", required=True, help="quantile summary CSV")
    p.add_argument("--series", required=True, help="observed series CSV")
    p.add_argument("--svg", action="store_true", help="also render static SVG charts")
    p.add_argument("--layout", choices=["long", "wide"], default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_plot_data)
    return parser


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SubtfrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
