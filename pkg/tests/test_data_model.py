import numpy as np
import pytest

from subtfr import (
    Country,
    DataError,
    PeriodIndex,
    ScaleAr1Params,
    TfrSeries,
    TrajectorySet,
    load_params,
    load_series,
    load_trajectories,
    save_params,
    save_series,
    save_trajectories,
)
from _worlds import axis, labels, make_country


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def long_csv(rows):
    return "country_id,region_id,period_label,tfr\n" + "\n".join(
        ",".join(map(str, r)) for r in rows
    ) + "\n"


class TestLoadSeriesLong:
    def test_one_country_two_regions_twelve_periods(self, tmp_path):
        labs = labels(12)
        rows = []
        for k, lab in enumerate(labs):
            rows.append(("BR", "", lab, 3.0 - 0.1 * k))
            rows.append(("BR", "BR-N", lab, 3.3 - 0.1 * k))
            rows.append(("BR", "BR-S", lab, 2.7 - 0.1 * k))
        path = write(tmp_path / "s.csv", long_csv(rows))
        countries = load_series(path)
        assert len(countries) == 1
        assert countries[0].r_c == 2
        assert len(countries[0].national_series.values) == 12

    def test_negative_tfr_names_row(self, tmp_path):
        rows = [("BR", "", "1950-1955", 3.0), ("BR", "BR-N", "1950-1955", -1)]
        path = write(tmp_path / "s.csv", long_csv(rows))
        with pytest.raises(DataError, match="row 3"):
            load_series(path)

    def test_duplicate_cell_rejected(self, tmp_path):
        rows = [
            ("BR", "", "1950-1955", 3.0),
            ("BR", "BR-N", "1950-1955", 3.1),
            ("BR", "BR-N", "1950-1955", 3.2),
        ]
        path = write(tmp_path / "s.csv", long_csv(rows))
        with pytest.raises(DataError, match="duplicate"):
            load_series(path)

    def test_region_outside_national_axis_rejected(self, tmp_path):
        labs = labels(3)
        rows = [("BR", "", labs[0], 3.0), ("BR", "", labs[1], 2.9)]
        rows += [("BR", "BR-N", lab, 2.5) for lab in labs]  # one period too long
        path = write(tmp_path / "s.csv", long_csv(rows))
        with pytest.raises(DataError, match="outside"):
            load_series(path)

    def test_interior_gap_rejected(self, tmp_path):
        labs = labels(4)
        rows = [("BR", "", lab, 3.0) for lab in labs]
        rows += [
            ("BR", "BR-N", labs[0], 2.5),
            ("BR", "BR-N", labs[2], 2.4),  # labs[1] missing
            ("BR", "BR-N", labs[3], 2.3),
        ]
        path = write(tmp_path / "s.csv", long_csv(rows))
        with pytest.raises(DataError, match="gap"):
            load_series(path)

    def test_country_without_national_rejected(self, tmp_path):
        rows = [("BR", "BR-N", "1950-1955", 2.5)]
        path = write(tmp_path / "s.csv", long_csv(rows))
        with pytest.raises(DataError, match="national"):
            load_series(path)

    def test_period_alignment_with_national(self, tmp_path):
        labs = labels(6)
        rows = [("SE", "", lab, 2.0 + 0.01 * k) for k, lab in enumerate(labs)]
        rows += [("SE", "SE-A", lab, 1.9) for lab in labs[2:]]
        path = write(tmp_path / "s.csv", long_csv(rows))
        (country,) = load_series(path)
        region = country.regions[0]
        for p, q in zip(region.periods, country.national_series.periods):
            assert p == q
        assert region.first_observed == 2
        assert np.isnan(region.values[:2]).all()


class TestLoadSeriesWide:
    def test_leading_missing_prefix(self, tmp_path):
        labs = labels(12)
        header = "country_id,region_id," + ",".join(labs)
        nat = "US,," + ",".join(str(2.5 - 0.05 * k) for k in range(12))
        reg = "US,US-W,,,,," + ",".join(str(2.2 - 0.05 * k) for k in range(8))
        path = write(tmp_path / "w.csv", f"{header}\n{nat}\n{reg}\n")
        (country,) = load_series(path, layout="wide")
        region = country.regions[0]
        assert region.first_observed == 4
        assert np.isnan(region.values[:4]).all()
        assert not np.isnan(region.values[4:]).any()

    def test_wide_duplicate_geography_rejected(self, tmp_path):
        labs = labels(2)
        header = "country_id,region_id," + ",".join(labs)
        body = "US,,2.0,1.9\nUS,US-W,1.8,1.7\nUS,US-W,1.8,1.7\n"
        path = write(tmp_path / "w.csv", f"{header}\n{body}")
        with pytest.raises(DataError, match="duplicate"):
            load_series(path, layout="wide")


class TestTrajectories:
    def traj_csv(self, n_traj, labs, gid="BR", drop=None):
        lines = ["geography_id,trajectory_id,period_label,tfr"]
        for i in range(n_traj):
            for lab in labs:
                if drop and (i, lab) == drop:
                    continue
                lines.append(f"{gid},{i},{lab},{2.0 + 0.001 * i}")
        return "\n".join(lines) + "\n"

    def test_dense_matrix_shape(self, tmp_path):
        labs = labels(18, start=2010)
        path = write(tmp_path / "t.csv", self.traj_csv(2000, labs))
        tset = load_trajectories(path)
        assert tset.paths.shape == (2000, 18)

    def test_ragged_trajectory_identified(self, tmp_path):
        labs = labels(3, start=2010)
        path = write(
            tmp_path / "t.csv", self.traj_csv(4, labs, drop=(2, labs[1]))
        )
        with pytest.raises(DataError, match="'2'"):
            load_trajectories(path)

    def test_single_trajectory_is_legal(self, tmp_path):
        labs = labels(3, start=2010)
        path = write(tmp_path / "t.csv", self.traj_csv(1, labs))
        assert load_trajectories(path).n_traj == 1

    def test_nonpositive_value_rejected(self, tmp_path):
        path = write(
            tmp_path / "t.csv",
            "geography_id,trajectory_id,period_label,tfr\nBR,0,2010-2015,0.0\n",
        )
        with pytest.raises(DataError, match="row 2"):
            load_trajectories(path)

    def test_save_load_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(7)
        ts = TrajectorySet("BR", axis(5, start=2010), 0.5 + rng.random((40, 5)) * 3)
        out = tmp_path / "t.csv"
        save_trajectories(ts, out)
        assert load_trajectories(out) == ts

    def test_empty_horizon_rejected_at_save(self, tmp_path):
        ts = TrajectorySet("BR", (), np.empty((3, 0)))
        with pytest.raises(DataError, match="empty horizon"):
            save_trajectories(ts, tmp_path / "t.csv")

    def test_overwrite_needs_force(self, tmp_path):
        ts = TrajectorySet("BR", axis(2, start=2010), np.full((2, 2), 2.0))
        out = tmp_path / "t.csv"
        save_trajectories(ts, out)
        with pytest.raises(DataError, match="force"):
            save_trajectories(ts, out)
        save_trajectories(ts, out, force=True)
        assert load_trajectories(out) == ts


class TestSeriesRoundTrip:
    def test_save_load_reproduces_countries(self, tmp_path):
        c1 = make_country(
            "AA",
            [3.0, 2.8, 2.6, 2.4],
            {"AA-1": [3.3, 3.1, 2.9, 2.7], "AA-2": [float("nan"), 2.5, 2.3, 2.1]},
        )
        c2 = make_country("BB", [2.0, 1.9, 1.8, 1.7], {"BB-1": [2.1, 2.0, 1.9]})
        out = tmp_path / "series.csv"
        save_series([c1, c2], out)
        loaded = load_series(out)
        assert loaded == [c1, c2]


class TestDomainTypes:
    def test_series_trailing_missing_rejected(self):
        ax = axis(3)
        with pytest.raises(DataError, match="trailing"):
            TfrSeries("X", ax, [2.0, 1.9, float("nan")])

    def test_series_is_immutable(self):
        s = TfrSeries("X", axis(2), [2.0, 1.9])
        with pytest.raises(ValueError):
            s.values[0] = 5.0

    def test_country_requires_region(self):
        nat = TfrSeries("X", axis(2), [2.0, 1.9])
        with pytest.raises(DataError, match="at least one region"):
            Country("X", nat, ())

    def test_truncation_drops_empty_regions(self):
        c = make_country(
            "CC",
            [3.0, 2.8, 2.6, 2.4],
            {"CC-1": [3.1, 2.9, 2.7, 2.5], "CC-2": [float("nan"), float("nan"), 2.2, 2.0]},
        )
        t = c.truncated_at(1)
        assert [r.geography_id for r in t.regions] == ["CC-1"]
        assert t.national_series.last_observed == 1

    def test_trajectory_subset_by_period_index(self):
        ts = TrajectorySet("X", axis(4), np.arange(8.0).reshape(2, 4) + 1.0)
        sub = ts.subset([2, 3])
        assert sub.horizon[0].index == 2
        assert np.array_equal(sub.paths, ts.paths[:, 2:])

    def test_params_round_trip(self, tmp_path):
        params = ScaleAr1Params(
            phi=0.925,
            sigma=0.0452,
            sigma_c={"BR": 0.0452, "SE": 0.01},
            alpha_init={"BR-N": 1.1, "SE-A": 0.93},
            provenance=(0.09475, 0.03678, 1.768),
        )
        out = tmp_path / "params.json"
        save_params(params, out)
        loaded = load_params(out)
        assert loaded == params

    def test_params_invariants(self):
        with pytest.raises(DataError):
            ScaleAr1Params(phi=1.2, sigma=0.05)
        with pytest.raises(DataError):
            ScaleAr1Params(phi=0.9, sigma=0.05, sigma_c={"A": 0.06})
        with pytest.raises(DataError):
            ScaleAr1Params(phi=0.9, sigma=0.05, alpha_init={"A-1": 0.0})

    def test_params_spread_cap_validation(self):
        c = make_country("DD", [2.0, 2.0], {"DD-1": [1.8, 1.8], "DD-2": [2.2, 2.2]})
        good = ScaleAr1Params(
            phi=0.925,
            sigma=0.0452,
            sigma_c={"DD": 0.0452},
            alpha_init={"DD-1": 0.9, "DD-2": 1.1},
        )
        good.validate_against([c])
        bad = ScaleAr1Params(
            phi=0.925,
            sigma=0.2,
            sigma_c={"DD": 0.2},
            alpha_init={"DD-1": 0.999, "DD-2": 1.001},
        )
        with pytest.raises(DataError, match="spread cap"):
            bad.validate_against([c])

    def test_period_index_equality(self):
        assert PeriodIndex(0, "1950-1955") == PeriodIndex(0, "1950-1955")
        assert PeriodIndex(0, "1950-1955") != PeriodIndex(1, "1950-1955")
