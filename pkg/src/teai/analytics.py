"""Desk-scale statistics over the scored corpus.

Tertile exposure classification with employment weights, correlations
against external occupation indexes, fixed-effect OLS via within-group
demeaning (so group dummies are never materialized), and log-change
growth tables over rolling windows of an employment panel.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import linalg as sla
from scipy.stats import pearsonr, spearmanr

from .errors import DataValidationError
from .onet import SocCode

logger = logging.getLogger(__name__)

TERTILE_LABELS = ("Low", "Medium", "High")

# Documented default skill-intensity grouping by SOC major group:
# management/professional majors are high-skill, service majors low-skill,
# the rest medium-skill. Override with a two-column soc -> group file.
_DEFAULT_HIGH_SKILL_MAJORS = {f"{m:02d}" for m in range(11, 30)}
_DEFAULT_LOW_SKILL_MAJORS = {"31", "33", "35", "37", "39"}


def default_skill_group(soc: SocCode) -> str:
    major = soc.major_group
    if major in _DEFAULT_HIGH_SKILL_MAJORS:
        return "high"
    if major in _DEFAULT_LOW_SKILL_MAJORS:
        return "low"
    return "medium"


@dataclass(frozen=True)
class TertileBucket:
    label: str
    occupation_count: int
    employment_total: float | None
    employment_share: float | None
    by_major_group: dict[str, float]
    by_skill_group: dict[str, float]


@dataclass(frozen=True)
class TertileReport:
    cutpoints: tuple[float, float]
    buckets: tuple[TertileBucket, ...]
    unmatched_occupations: tuple[str, ...]


def _weighted_quantile(values: np.ndarray, weights: np.ndarray, q: float) -> float:
    order = np.argsort(values)
    values, weights = values[order], weights[order]
    cum = np.cumsum(weights) - 0.5 * weights
    cum /= weights.sum()
    return float(np.interp(q, cum, values))


def classify_tertiles(
    scores: Mapping[SocCode, float],
    employment: Mapping[SocCode, float] | None = None,
    skill_groups: Mapping[SocCode, str] | None = None,
    weighted: bool = False,
) -> TertileReport:
    """Split occupations into Low/Medium/High exposure thirds.

    Cutpoints sit at the 1/3 and 2/3 quantiles of the unweighted
    occupation-level score distribution (employment-weighted quantiles
    behind the ``weighted`` flag). Employment totals and shares are
    computed per tertile when an employment join is available; occupations
    without employment are reported as unmatched. Breakdowns count
    employment when available, occupations otherwise.
    """
    if len(scores) < 3:
        raise DataValidationError("tertile classification needs at least 3 occupations")
    socs = sorted(scores.keys())
    values = np.array([scores[s] for s in socs], dtype=float)
    if len(np.unique(values)) < 3:
        raise DataValidationError("tertile classification needs at least 3 distinct scores")

    employment = employment or {}
    if weighted:
        if not employment:
            raise DataValidationError("employment-weighted tertiles need an employment join")
        weights = np.array([employment.get(s, 0.0) for s in socs], dtype=float)
        cut_low = _weighted_quantile(values, weights, 1 / 3)
        cut_high = _weighted_quantile(values, weights, 2 / 3)
    else:
        cut_low, cut_high = (float(q) for q in np.quantile(values, [1 / 3, 2 / 3]))

    matched = [s for s in socs if s in employment]
    unmatched = [s.code for s in socs if s not in employment]
    if unmatched:
        logger.warning("%d occupation(s) have scores but no employment", len(unmatched))
    total_employment = sum(employment[s] for s in matched)

    def label_for(value: float) -> str:
        if value <= cut_low:
            return "Low"
        if value <= cut_high:
            return "Medium"
        return "High"

    buckets = []
    for label in TERTILE_LABELS:
        members = [s for s in socs if label_for(scores[s]) == label]
        have_employment = bool(matched)
        bucket_employment = sum(employment.get(s, 0.0) for s in members if s in employment)
        by_major: dict[str, float] = {}
        by_skill: dict[str, float] = {}
        for s in members:
            measure = employment.get(s, 0.0) if have_employment else 1.0
            major = s.major_group
            group = skill_groups.get(s, default_skill_group(s)) if skill_groups is not None else default_skill_group(s)
            by_major[major] = by_major.get(major, 0.0) + measure
            by_skill[group] = by_skill.get(group, 0.0) + measure
        buckets.append(
            TertileBucket(
                label=label,
                occupation_count=len(members),
                employment_total=bucket_employment if have_employment else None,
                employment_share=(bucket_employment / total_employment)
                if have_employment and total_employment > 0
                else None,
                by_major_group=dict(sorted(by_major.items())),
                by_skill_group=dict(sorted(by_skill.items())),
            )
        )
    return TertileReport(
        cutpoints=(cut_low, cut_high),
        buckets=tuple(buckets),
        unmatched_occupations=tuple(unmatched),
    )


@dataclass(frozen=True)
class CorrelationResult:
    method: str
    coefficient: float
    p_value: float
    n: int


def correlate(
    series_a: Mapping[SocCode, float],
    series_b: Mapping[SocCode, float],
    method: str = "pearson",
) -> CorrelationResult:
    """Pearson or Spearman correlation over occupations present in both series."""
    keys = sorted(set(series_a) & set(series_b))
    a = np.array([series_a[k] for k in keys], dtype=float)
    b = np.array([series_b[k] for k in keys], dtype=float)
    keep = ~(np.isnan(a) | np.isnan(b))
    a, b = a[keep], b[keep]
    if len(a) < 3:
        raise DataValidationError(f"correlation needs at least 3 paired observations, have {len(a)}")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise DataValidationError("correlation undefined: a series has zero variance")
    if method == "pearson":
        stat = pearsonr(a, b)
    elif method == "spearman":
        stat = spearmanr(a, b)
    else:
        raise ValueError(f"unknown correlation method {method!r}")
    return CorrelationResult(method=method, coefficient=float(stat[0]), p_value=float(stat[1]), n=len(a))


@dataclass(frozen=True)
class RegressionSpec:
    """One OLS design: outcome, regressors, optional absorbed FE and cluster."""

    spec_id: str
    dependent: str
    regressors: tuple[str, ...]
    fixed_effects: tuple[str, ...] = ()
    cluster: str | None = None
    weights: str | None = None

    def __post_init__(self) -> None:
        if not self.regressors:
            raise ValueError("regression needs at least one regressor")
        if len(self.fixed_effects) > 2:
            raise ValueError("at most two fixed-effect groups are supported")


@dataclass
class RegressionResult:
    spec_id: str
    coefficients: dict[str, float]
    std_errors: dict[str, float]
    cluster_std_errors: dict[str, float] | None
    r_squared: float
    n_observations: int
    n_dropped: int
    n_groups_absorbed: int
    orthogonality_gap: float
    notes: list[str] = field(default_factory=list)


def _group_demean(matrix: np.ndarray, codes: list[np.ndarray], weights: np.ndarray,
                  tol: float = 1e-10, max_iter: int = 10000) -> np.ndarray:
    """Remove (weighted) group means for each FE factor by alternating projections."""
    out = matrix.copy()
    if not codes:
        return out
    group_weight = [np.bincount(c, weights=weights) for c in codes]
    if len(codes) == 1:
        c, gw = codes[0], group_weight[0]
        means = np.vstack([np.bincount(c, weights=weights * out[:, j]) for j in range(out.shape[1])]).T
        out -= (means / gw[:, None])[c]
        return out
    for _ in range(max_iter):
        delta = 0.0
        for c, gw in zip(codes, group_weight):
            means = np.vstack([np.bincount(c, weights=weights * out[:, j]) for j in range(out.shape[1])]).T
            adjustment = (means / gw[:, None])[c]
            out -= adjustment
            delta = max(delta, float(np.abs(adjustment).max()))
        if delta < tol:
            break
    else:
        logger.warning("demeaning did not converge below %g in %d sweeps", tol, max_iter)
    return out


def _absorbed_dof(codes: list[np.ndarray]) -> int:
    """Degrees of freedom consumed by the absorbed fixed effects.

    One factor costs one dof per group. Two factors cost G1 + G2 minus the
    number of connected components of their bipartite graph (one shared
    constant per component), which keeps the dummy-variable oracle exact.
    """
    if not codes:
        return 0
    if len(codes) == 1:
        return int(codes[0].max()) + 1
    g1 = int(codes[0].max()) + 1
    g2 = int(codes[1].max()) + 1
    parent = list(range(g1 + g2))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in zip(codes[0], codes[1]):
        ra, rb = find(int(a)), find(int(b) + g1)
        if ra != rb:
            parent[ra] = rb
    components = len({find(i) for i in range(g1 + g2)})
    return g1 + g2 - components


def _collinear_columns(matrix: np.ndarray, names: Sequence[str], tol: float = 1e-8) -> list[str]:
    scale = np.abs(matrix).max() if matrix.size else 0.0
    _, r, pivots = sla.qr(matrix, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    threshold = tol * max(scale, 1.0)
    return sorted(names[pivots[i]] for i in range(len(diag)) if diag[i] <= threshold)


def ols_fit(table: pd.DataFrame, spec: RegressionSpec) -> RegressionResult:
    """Least squares with up to two absorbed fixed-effect factors.

    Fixed effects are removed by iterated within-group demeaning (single
    exact pass for one factor, alternating projections to 1e-10 for two),
    then the demeaned system is solved by SVD-based least squares. With no
    fixed effects an intercept is estimated and reported under
    ``"intercept"``. Homoskedastic standard errors are always computed;
    cluster-robust ones when ``spec.cluster`` is set, using the
    G/(G-1)*(N-1)/(N-K) small-sample factor with K counting absorbed
    degrees of freedom. Rows with any missing field are dropped and
    counted. Observation weights, when named, enter as WLS.
    """
    columns = [spec.dependent, *spec.regressors, *spec.fixed_effects]
    if spec.cluster:
        columns.append(spec.cluster)
    if spec.weights:
        columns.append(spec.weights)
    missing = [c for c in columns if c not in table.columns]
    if missing:
        raise DataValidationError(f"{spec.spec_id}: table is missing column(s) {missing}")

    frame = table[list(dict.fromkeys(columns))].copy()
    n_before = len(frame)
    frame = frame.dropna()
    n_dropped = n_before - len(frame)
    n = len(frame)
    k = len(spec.regressors)
    if n <= k + 1:
        raise DataValidationError(f"{spec.spec_id}: only {n} complete observations")

    y = frame[spec.dependent].to_numpy(dtype=float)
    x = frame[list(spec.regressors)].to_numpy(dtype=float)
    weights = frame[spec.weights].to_numpy(dtype=float) if spec.weights else np.ones(n)
    if np.any(weights <= 0):
        raise DataValidationError(f"{spec.spec_id}: nonpositive observation weights")
    codes = [pd.factorize(frame[col])[0] for col in spec.fixed_effects]

    names = list(spec.regressors)
    stacked = np.column_stack([y, x])
    if codes:
        stacked = _group_demean(stacked, codes, weights)
        y_t, x_t = stacked[:, 0], stacked[:, 1:]
    else:
        y_t, x_t = stacked[:, 0], np.column_stack([stacked[:, 1:], np.ones(n)])
        names = names + ["intercept"]

    root = np.sqrt(weights)
    ys = y_t * root
    xs = x_t * root[:, None]

    # A regressor absorbed by the fixed effects demeans to (numerical) zero;
    # its own singular value scale would hide that from a plain rank test.
    if codes:
        original = np.column_stack([x]) * root[:, None]
        absorbed_cols = [
            name
            for j, name in enumerate(names)
            if np.linalg.norm(xs[:, j]) <= 1e-8 * max(1.0, np.linalg.norm(original[:, j]))
        ]
        if absorbed_cols:
            raise DataValidationError(
                f"{spec.spec_id}: regressor(s) collinear with the fixed effects: {absorbed_cols}"
            )
    if np.linalg.matrix_rank(xs) < xs.shape[1]:
        culprits = _collinear_columns(xs, names)
        raise DataValidationError(f"{spec.spec_id}: collinear regressors after demeaning: {culprits}")

    beta, _, _, _ = np.linalg.lstsq(xs, ys, rcond=None)
    residuals = ys - xs @ beta

    absorbed = _absorbed_dof(codes)
    k_total = xs.shape[1] + absorbed
    dof = n - k_total
    if dof <= 0:
        raise DataValidationError(f"{spec.spec_id}: no residual degrees of freedom (n={n}, k={k_total})")

    xtx_inv = np.linalg.inv(xs.T @ xs)
    sigma2 = float(residuals @ residuals) / dof
    se = np.sqrt(np.diag(sigma2 * xtx_inv))

    notes: list[str] = []
    cluster_se = None
    if spec.cluster:
        groups = pd.factorize(frame[spec.cluster])[0]
        n_clusters = int(groups.max()) + 1
        if n_clusters < 2:
            notes.append("cluster SEs refused: fewer than 2 clusters")
            logger.warning("%s: cluster SEs refused (fewer than 2 clusters)", spec.spec_id)
        else:
            scores = xs * residuals[:, None]
            meat = np.zeros((xs.shape[1], xs.shape[1]))
            for g in range(n_clusters):
                total = scores[groups == g].sum(axis=0)
                meat += np.outer(total, total)
            factor = (n_clusters / (n_clusters - 1)) * ((n - 1) / dof)
            cov = factor * xtx_inv @ meat @ xtx_inv
            cluster_se = {name: float(v) for name, v in zip(names, np.sqrt(np.diag(cov)))}

    if codes:
        tss = float(ys @ ys)  # demeaned outcome is centered within groups
    else:
        centered = ys - np.average(ys)
        tss = float(centered @ centered)
    rss = float(residuals @ residuals)
    r_squared = 1.0 - rss / tss if tss > 0 else float("nan")

    gram = np.abs(xs.T @ residuals).max()
    scale = max(1.0, float(np.linalg.norm(xs)) * float(np.linalg.norm(residuals)))
    return RegressionResult(
        spec_id=spec.spec_id,
        coefficients={name: float(v) for name, v in zip(names, beta)},
        std_errors={name: float(v) for name, v in zip(names, se)},
        cluster_std_errors=cluster_se,
        r_squared=r_squared,
        n_observations=n,
        n_dropped=n_dropped,
        n_groups_absorbed=sum(int(c.max()) + 1 for c in codes),
        orthogonality_gap=float(gram / scale),
        notes=notes,
    )


def growth_table(panel: pd.DataFrame, window_years: int) -> tuple[pd.DataFrame, int]:
    """Log changes in employment (and wages) over rolling windows.

    For every (soc, sector) series and start year t with both endpoints
    present, emits log(x[t+w]) - log(x[t]) plus initial-level controls
    (log employment; log wage and its square when the panel carries
    wages). Rows with a nonpositive value in any required level are
    dropped and counted; a window longer than the panel span yields an
    empty table with a warning. Returns (table, n_dropped).
    """
    required = {"year", "soc", "employment"}
    missing = required - set(panel.columns)
    if missing:
        raise DataValidationError(f"employment panel is missing column(s) {sorted(missing)}")
    has_wage = "wage" in panel.columns
    has_sector = "sector" in panel.columns

    frame = panel.copy()
    if not has_sector:
        frame["sector"] = ""
    span = frame["year"].max() - frame["year"].min() if len(frame) else 0
    columns = ["soc", "sector", "window_start", "window_end", "dlog_employment", "log_emp_initial"]
    if has_wage:
        columns += ["dlog_wage", "log_wage_initial", "log_wage_initial_sq"]
    if span < window_years:
        logger.warning("window of %d year(s) exceeds panel span of %d", window_years, span)
        return pd.DataFrame(columns=columns), 0

    dropped = 0
    rows = []
    for (soc, sector), group in frame.groupby(["soc", "sector"], sort=True):
        series = group.set_index("year").sort_index()
        years = set(series.index)
        for start in sorted(years):
            end = start + window_years
            if end not in years:
                continue
            emp0, emp1 = float(series.at[start, "employment"]), float(series.at[end, "employment"])
            levels = [emp0, emp1]
            if has_wage:
                wage0, wage1 = float(series.at[start, "wage"]), float(series.at[end, "wage"])
                levels += [wage0, wage1]
            if any(not np.isfinite(v) or v <= 0 for v in levels):
                dropped += 1
                continue
            row = {
                "soc": soc,
                "sector": sector,
                "window_start": int(start),
                "window_end": int(end),
                "dlog_employment": np.log(emp1) - np.log(emp0),
                "log_emp_initial": np.log(emp0),
            }
            if has_wage:
                row["dlog_wage"] = np.log(wage1) - np.log(wage0)
                row["log_wage_initial"] = np.log(wage0)
                row["log_wage_initial_sq"] = np.log(wage0) ** 2
            rows.append(row)
    if dropped:
        logger.warning("dropped %d window row(s) with nonpositive levels", dropped)
    return pd.DataFrame(rows, columns=columns), dropped
