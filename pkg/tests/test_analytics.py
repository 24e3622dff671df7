from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from teai.analytics import (
    RegressionSpec,
    classify_tertiles,
    correlate,
    default_skill_group,
    growth_table,
    ols_fit,
)
from teai.errors import DataValidationError
from teai.onet import SocCode


def soc(i: int, major: int | None = None) -> SocCode:
    major_group = major if major is not None else 11 + 2 * (i % 5)
    return SocCode(f"{major_group:02d}-{1000 + i:04d}.00")


def dummy_fit(frame, dependent, regressors, fe_cols=(), weights_col=None, cluster_col=None):
    """Independent oracle: explicit dummy-variable OLS with intercept."""
    y = frame[dependent].to_numpy(float)
    parts = [frame[list(regressors)].to_numpy(float)]
    names = list(regressors)
    for col in fe_cols:
        dummies = pd.get_dummies(frame[col], drop_first=True, dtype=float)
        parts.append(dummies.to_numpy())
        names += [f"{col}={c}" for c in dummies.columns]
    parts.append(np.ones((len(frame), 1)))
    names.append("intercept")
    design = np.hstack(parts)
    w = frame[weights_col].to_numpy(float) if weights_col else np.ones(len(frame))
    root = np.sqrt(w)
    xs, ys = design * root[:, None], y * root
    beta, *_ = np.linalg.lstsq(xs, ys, rcond=None)
    resid = ys - xs @ beta
    dof = len(frame) - design.shape[1]
    xtx_inv = np.linalg.inv(xs.T @ xs)
    sigma2 = float(resid @ resid) / dof
    out = {
        "beta": dict(zip(names, beta)),
        "se": dict(zip(names, np.sqrt(np.diag(sigma2 * xtx_inv)))),
    }
    if cluster_col is not None:
        codes = pd.factorize(frame[cluster_col])[0]
        n_clusters = codes.max() + 1
        meat = np.zeros((design.shape[1], design.shape[1]))
        scores = xs * resid[:, None]
        for g in range(n_clusters):
            s = scores[codes == g].sum(axis=0)
            meat += np.outer(s, s)
        factor = (n_clusters / (n_clusters - 1)) * ((len(frame) - 1) / dof)
        cov = factor * xtx_inv @ meat @ xtx_inv
        out["cluster_se"] = dict(zip(names, np.sqrt(np.diag(cov))))
    return out


class TestClassifyTertiles:
    def test_nine_equal_employment(self):
        scores = {soc(i): float(i + 1) for i in range(9)}
        employment = {s: 100.0 for s in scores}
        report = classify_tertiles(scores, employment)
        assert [b.occupation_count for b in report.buckets] == [3, 3, 3]
        for bucket in report.buckets:
            assert bucket.employment_share == pytest.approx(1 / 3, abs=1e-9)

    def test_high_tertile_share(self):
        codes = [soc(i) for i in range(6)]
        scores = {codes[i]: float(i + 1) for i in range(6)}
        employment = {codes[i]: 1.0 for i in range(5)}
        employment[codes[5]] = 5.0
        report = classify_tertiles(scores, employment)
        high = report.buckets[2]
        assert high.label == "High"
        assert high.employment_share == pytest.approx(6 / 10, abs=1e-12)

    def test_shares_sum_to_one(self):
        rng = np.random.default_rng(5)
        scores = {soc(i): float(rng.normal()) for i in range(40)}
        employment = {s: float(rng.uniform(10, 1000)) for s in scores}
        report = classify_tertiles(scores, employment)
        total = sum(b.employment_share for b in report.buckets)
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_membership_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(6)
        scores = {soc(i): float(rng.uniform(1, 5)) for i in range(30)}
        transformed = {k: np.exp(v) for k, v in scores.items()}
        base = classify_tertiles(scores)
        after = classify_tertiles(transformed)
        assert [b.occupation_count for b in base.buckets] == [b.occupation_count for b in after.buckets]

    def test_needs_three_distinct_scores(self):
        with pytest.raises(DataValidationError):
            classify_tertiles({soc(0): 1.0, soc(1): 1.0, soc(2): 1.0})
        with pytest.raises(DataValidationError):
            classify_tertiles({soc(0): 1.0, soc(1): 2.0})

    def test_no_employment_gives_counts_only(self):
        scores = {soc(i): float(i) for i in range(6)}
        report = classify_tertiles(scores)
        assert all(b.employment_total is None for b in report.buckets)
        assert all(b.employment_share is None for b in report.buckets)
        assert sum(b.occupation_count for b in report.buckets) == 6

    def test_unmatched_occupations_reported(self):
        scores = {soc(i): float(i) for i in range(4)}
        employment = {soc(0): 10.0, soc(1): 10.0}
        report = classify_tertiles(scores, employment)
        assert len(report.unmatched_occupations) == 2

    def test_breakdowns_by_major_and_skill_group(self):
        scores = {
            SocCode("11-1011.00"): 5.0,  # high skill major
            SocCode("35-1011.00"): 1.0,  # low skill major
            SocCode("47-1011.00"): 3.0,  # medium skill major
        }
        report = classify_tertiles(scores)
        assert report.buckets[2].by_major_group == {"11": 1.0}
        assert report.buckets[2].by_skill_group == {"high": 1.0}
        assert report.buckets[0].by_skill_group == {"low": 1.0}

    def test_default_skill_groups(self):
        assert default_skill_group(SocCode("11-1011.00")) == "high"
        assert default_skill_group(SocCode("29-1131.00")) == "high"
        assert default_skill_group(SocCode("35-2014.00")) == "low"
        assert default_skill_group(SocCode("53-3054.00")) == "medium"

    def test_weighted_variant_moves_cutpoints(self):
        codes = [soc(i) for i in range(9)]
        scores = {codes[i]: float(i + 1) for i in range(9)}
        employment = {codes[i]: (1000.0 if i >= 7 else 1.0) for i in range(9)}
        unweighted = classify_tertiles(scores, employment, weighted=False)
        weighted = classify_tertiles(scores, employment, weighted=True)
        assert weighted.cutpoints[0] > unweighted.cutpoints[0]


class TestCorrelate:
    def test_self_correlation(self):
        series = {soc(i): float(i) for i in range(5)}
        assert correlate(series, series).coefficient == pytest.approx(1.0)

    def test_negation(self):
        series = {soc(i): float(i) for i in range(5)}
        negated = {k: -v for k, v in series.items()}
        assert correlate(series, negated).coefficient == pytest.approx(-1.0)

    def test_hand_computed_pair(self):
        a = {soc(i): v for i, v in enumerate([1.0, 2.0, 3.0, 4.0])}
        b = {soc(i): v for i, v in enumerate([1.0, 3.0, 2.0, 4.0])}
        assert correlate(a, b, "pearson").coefficient == pytest.approx(0.8, abs=1e-12)
        assert correlate(a, b, "spearman").coefficient == pytest.approx(0.8, abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        a = {soc(i): float(rng.normal()) for i in range(20)}
        b = {soc(i): float(rng.normal()) for i in range(20)}
        for method in ("pearson", "spearman"):
            ab = correlate(a, b, method)
            ba = correlate(b, a, method)
            assert ab.coefficient == pytest.approx(ba.coefficient, abs=1e-12)

    def test_invariances(self):
        rng = np.random.default_rng(3)
        a = {soc(i): float(rng.normal()) for i in range(20)}
        b = {soc(i): float(rng.normal()) for i in range(20)}
        affine = {k: 3.0 * v + 7.0 for k, v in b.items()}
        assert correlate(a, affine, "pearson").coefficient == pytest.approx(
            correlate(a, b, "pearson").coefficient, abs=1e-12
        )
        monotone = {k: np.exp(v) for k, v in b.items()}
        assert correlate(a, monotone, "spearman").coefficient == pytest.approx(
            correlate(a, b, "spearman").coefficient, abs=1e-12
        )

    def test_matching_on_soc_and_nan_dropping(self):
        a = {soc(i): float(i) for i in range(6)}
        b = {soc(i): float(i) for i in range(2, 9)}
        b[soc(3)] = float("nan")
        result = correlate(a, b)
        assert result.n == 3  # keys 2..5 minus the NaN pair

    def test_zero_variance_rejected(self):
        a = {soc(i): 1.0 for i in range(5)}
        b = {soc(i): float(i) for i in range(5)}
        with pytest.raises(DataValidationError):
            correlate(a, b)

    def test_too_few_pairs_rejected(self):
        a = {soc(0): 1.0, soc(1): 2.0}
        with pytest.raises(DataValidationError):
            correlate(a, a)


class TestOlsFit:
    def test_noiseless_line_recovered_exactly(self):
        x = np.linspace(-3, 5, 40)
        frame = pd.DataFrame({"x": x, "y": 3.0 + 2.0 * x})
        result = ols_fit(frame, RegressionSpec("line", "y", ("x",)))
        assert result.coefficients["x"] == pytest.approx(2.0, abs=1e-10)
        assert result.coefficients["intercept"] == pytest.approx(3.0, abs=1e-10)
        assert result.r_squared == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("seed,n,groups", [(0, 30, 4), (1, 80, 7), (2, 200, 12)])
    def test_one_way_fe_matches_dummy_oracle(self, seed, n, groups):
        rng = np.random.default_rng(seed)
        frame = pd.DataFrame(
            {
                "g": rng.integers(0, groups, n).astype(str),
                "x1": rng.normal(size=n),
                "x2": rng.normal(size=n),
            }
        )
        effects = dict(zip(sorted(frame["g"].unique()), rng.normal(scale=2.0, size=groups)))
        frame["y"] = (
            frame["g"].map(effects) + 2.0 * frame["x1"] - 1.0 * frame["x2"] + rng.normal(scale=0.5, size=n)
        )
        mine = ols_fit(frame, RegressionSpec("fe1", "y", ("x1", "x2"), fixed_effects=("g",)))
        oracle = dummy_fit(frame, "y", ["x1", "x2"], fe_cols=["g"])
        for term in ("x1", "x2"):
            assert mine.coefficients[term] == pytest.approx(oracle["beta"][term], abs=1e-8)
            assert mine.std_errors[term] == pytest.approx(oracle["se"][term], abs=1e-8)
        assert mine.n_groups_absorbed == frame["g"].nunique()
        assert mine.orthogonality_gap <= 1e-6

    def test_two_way_fe_matches_dummy_oracle_on_balanced_panel(self):
        rng = np.random.default_rng(4)
        units, periods = 6, 5
        rows = []
        unit_fx = rng.normal(scale=2.0, size=units)
        time_fx = rng.normal(scale=1.0, size=periods)
        for u in range(units):
            for t in range(periods):
                x = rng.normal()
                rows.append(
                    {
                        "unit": f"u{u}",
                        "period": f"t{t}",
                        "x": x,
                        "y": unit_fx[u] + time_fx[t] + 1.5 * x + rng.normal(scale=0.3),
                    }
                )
        frame = pd.DataFrame(rows)
        mine = ols_fit(frame, RegressionSpec("fe2", "y", ("x",), fixed_effects=("unit", "period")))
        oracle = dummy_fit(frame, "y", ["x"], fe_cols=["unit", "period"])
        assert mine.coefficients["x"] == pytest.approx(oracle["beta"]["x"], abs=1e-6)
        assert mine.std_errors["x"] == pytest.approx(oracle["se"]["x"], abs=1e-6)

    def test_cluster_robust_matches_dummy_oracle(self):
        rng = np.random.default_rng(8)
        n, groups = 120, 6
        frame = pd.DataFrame(
            {
                "g": rng.integers(0, groups, n).astype(str),
                "x": rng.normal(size=n),
            }
        )
        cluster_noise = dict(zip(sorted(frame["g"].unique()), rng.normal(scale=1.5, size=groups)))
        frame["y"] = 1.0 + 0.7 * frame["x"] + frame["g"].map(cluster_noise) + rng.normal(size=n)
        spec = RegressionSpec("crv", "y", ("x",), cluster="g")
        mine = ols_fit(frame, spec)
        oracle = dummy_fit(frame, "y", ["x"], cluster_col="g")
        assert mine.coefficients["x"] == pytest.approx(oracle["beta"]["x"], abs=1e-10)
        assert mine.cluster_std_errors["x"] == pytest.approx(oracle["cluster_se"]["x"], abs=1e-10)

    def test_weighted_fit_matches_dummy_oracle(self):
        rng = np.random.default_rng(10)
        n, groups = 60, 5
        frame = pd.DataFrame(
            {
                "g": rng.integers(0, groups, n).astype(str),
                "x": rng.normal(size=n),
                "w": rng.uniform(0.5, 3.0, size=n),
            }
        )
        frame["y"] = frame["g"].astype("category").cat.codes * 0.8 + 1.2 * frame["x"] + rng.normal(size=n)
        mine = ols_fit(frame, RegressionSpec("wls", "y", ("x",), fixed_effects=("g",), weights="w"))
        oracle = dummy_fit(frame, "y", ["x"], fe_cols=["g"], weights_col="w")
        assert mine.coefficients["x"] == pytest.approx(oracle["beta"]["x"], abs=1e-8)
        assert mine.std_errors["x"] == pytest.approx(oracle["se"]["x"], abs=1e-8)

    def test_rank_deficiency_names_column(self):
        rng = np.random.default_rng(12)
        frame = pd.DataFrame({"x1": rng.normal(size=30)})
        frame["x2"] = 2.0 * frame["x1"]
        frame["y"] = frame["x1"] + rng.normal(size=30)
        with pytest.raises(DataValidationError, match="x"):
            ols_fit(frame, RegressionSpec("collinear", "y", ("x1", "x2")))

    def test_missing_rows_dropped_and_counted(self):
        frame = pd.DataFrame({"x": [1.0, 2.0, np.nan, 4.0, 5.0, 6.0], "y": [2.0, 4.0, 6.0, 8.0, np.nan, 12.0]})
        result = ols_fit(frame, RegressionSpec("drop", "y", ("x",)))
        assert result.n_dropped == 2
        assert result.n_observations == 4

    def test_single_cluster_refused_but_fit_succeeds(self):
        rng = np.random.default_rng(13)
        frame = pd.DataFrame({"x": rng.normal(size=20), "c": ["only"] * 20})
        frame["y"] = frame["x"] * 2.0 + rng.normal(size=20)
        result = ols_fit(frame, RegressionSpec("onecluster", "y", ("x",), cluster="c"))
        assert result.cluster_std_errors is None
        assert any("refused" in note for note in result.notes)

    def test_missing_column_is_error(self):
        frame = pd.DataFrame({"x": [1.0, 2.0, 3.0]})
        with pytest.raises(DataValidationError, match="y"):
            ols_fit(frame, RegressionSpec("nocol", "y", ("x",)))

    def test_at_most_two_fe_groups(self):
        with pytest.raises(ValueError):
            RegressionSpec("threefe", "y", ("x",), fixed_effects=("a", "b", "c"))


class TestGrowthTable:
    @staticmethod
    def _panel(years, employment=None, wage=None, socs=("11-1011.00",), sectors=("54",)):
        rows = []
        for s in socs:
            for sector in sectors:
                for i, year in enumerate(years):
                    rows.append(
                        {
                            "soc": s,
                            "sector": sector,
                            "year": year,
                            "employment": employment[i] if employment else 100.0 * (1.05 ** i),
                            "wage": wage[i] if wage else 50000.0 * (1.03 ** i),
                        }
                    )
        return pd.DataFrame(rows)

    def test_ten_percent_growth(self):
        panel = self._panel([2019, 2023], employment=[100.0, 110.0], wage=[50000.0, 50000.0])
        table, dropped = growth_table(panel, 4)
        assert dropped == 0
        assert len(table) == 1
        assert table.iloc[0]["dlog_employment"] == pytest.approx(np.log(1.1), abs=1e-12)
        assert table.iloc[0]["dlog_wage"] == pytest.approx(0.0, abs=1e-12)

    def test_constant_series_zero_change(self):
        panel = self._panel([2019, 2023], employment=[100.0, 100.0], wage=[1.0, 1.0])
        table, _ = growth_table(panel, 4)
        assert table.iloc[0]["dlog_employment"] == 0.0

    def test_window_count_2003_2023(self):
        years = list(range(2003, 2024))
        panel = self._panel(years)
        table, _ = growth_table(panel, 4)
        assert len(table) == 17  # 2003-07 through 2019-23
        assert table["window_start"].min() == 2003
        assert table["window_start"].max() == 2019

    def test_additivity_across_adjacent_windows(self):
        years = list(range(2010, 2021))
        panel = self._panel(years)
        short, _ = growth_table(panel, 2)
        long, _ = growth_table(panel, 4)
        short_map = {(r.soc, r.sector, r.window_start): r.dlog_employment for r in short.itertuples()}
        for row in long.itertuples():
            combined = short_map[(row.soc, row.sector, row.window_start)] + short_map[
                (row.soc, row.sector, row.window_start + 2)
            ]
            assert row.dlog_employment == pytest.approx(combined, abs=1e-12)

    def test_nonpositive_levels_dropped_and_counted(self):
        panel = self._panel([2019, 2023], employment=[0.0, 110.0], wage=[1.0, 1.0])
        table, dropped = growth_table(panel, 4)
        assert len(table) == 0
        assert dropped == 1

    def test_window_exceeding_span_is_empty(self):
        panel = self._panel([2019, 2020])
        table, dropped = growth_table(panel, 4)
        assert table.empty
        assert dropped == 0

    def test_initial_level_controls_attached(self):
        panel = self._panel([2015, 2019], employment=[200.0, 220.0], wage=[40000.0, 44000.0])
        table, _ = growth_table(panel, 4)
        row = table.iloc[0]
        assert row["log_emp_initial"] == pytest.approx(np.log(200.0))
        assert row["log_wage_initial"] == pytest.approx(np.log(40000.0))
        assert row["log_wage_initial_sq"] == pytest.approx(np.log(40000.0) ** 2)

    def test_wageless_panel_omits_wage_columns(self):
        panel = self._panel([2015, 2019]).drop(columns=["wage"])
        table, _ = growth_table(panel, 4)
        assert "dlog_wage" not in table.columns
        assert len(table) == 1
