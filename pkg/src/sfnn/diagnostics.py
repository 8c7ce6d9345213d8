"""Dataset statistics that predict which optional model modules help.

Three statistics drive the recommendations, all computed on the z-scored
training segment (the data exactly as the model sees it):

* trend strength: the mean over sliding input windows of the squared
  per-series window mean, averaged across series. Large values mean window
  means drift from zero, i.e. the data trends, and input mean centering is
  likely to help (threshold 0.2).
* scale difference: the mean over windows of the cross-series standard
  deviation of per-series window means. Large values mean series sit at
  visibly different levels inside a window and layer normalization is
  likely to help (threshold 0.5).
* cointegration trace curve: the trace statistic of the cointegration test
  at rank N-1 across a range of VECM lag orders. A curve that stays above
  the 95% critical value signals strong shared dynamics, where series
  mixing is likely to help.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import NormalizedDataset, split_chronological
from .errors import NotPositiveDefinite, RankDeficient, SingleSeries, TooShort
from .numerics import (
    cholesky_lower,
    generalized_symmetric_eigen,
    least_squares,
    solve_lower,
)

TREND_STRENGTH_THRESHOLD = 0.2
SCALE_DIFFERENCE_THRESHOLD = 0.5
MIXING_SMALL_N = 30
MIXING_LARGE_N = 100

# 95% critical values for the cointegration trace statistic under an
# unrestricted constant and no trend term, indexed by the number of common
# trends remaining under the null hypothesis (1..12). Values from the
# response-surface tables of MacKinnon, Haug and Michelis (1996).
TRACE_CRITICAL_95 = (
    3.8415,
    15.4943,
    29.7961,
    47.8545,
    69.8189,
    95.7542,
    125.6185,
    159.5290,
    197.3772,
    239.2468,
    285.1402,
    334.9795,
)


def _train_values(dataset_or_values) -> np.ndarray:
    """Accept a NormalizedDataset (use its train segment) or a plain matrix."""
    if isinstance(dataset_or_values, NormalizedDataset):
        train, _, _ = split_chronological(dataset_or_values)
        return train.data
    values = np.asarray(dataset_or_values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"expected a (T, N) matrix, got shape {values.shape}")
    return values


def _window_means(values: np.ndarray, lookback: int) -> np.ndarray:
    """(num_windows, N) matrix of per-series means of every length-L window."""
    t = values.shape[0]
    if lookback < 1:
        raise ValueError("lookback must be >= 1")
    if t < lookback:
        raise TooShort(f"{t} rows cannot form a window of length {lookback}")
    csum = np.vstack([np.zeros((1, values.shape[1])), np.cumsum(values, axis=0)])
    return (csum[lookback:] - csum[:-lookback]) / lookback


def trend_strength(dataset_or_values, lookback: int) -> float:
    """Mean over windows and series of the squared per-series window mean."""
    means = _window_means(_train_values(dataset_or_values), lookback)
    return float((means**2).mean())


def scale_difference(dataset_or_values, lookback: int) -> float:
    """Mean over windows of the cross-series population std of window means."""
    values = _train_values(dataset_or_values)
    if values.shape[1] < 2:
        raise SingleSeries("scale_difference needs at least two series")
    means = _window_means(values, lookback)
    return float(means.std(axis=1).mean())


@dataclass(frozen=True)
class JohansenResult:
    """One cointegration trace test: reject means rank >= ``rank``."""

    statistic: float
    critical_value_95: float
    reject: bool
    rank: int
    lags: int
    eigenvalues: tuple[float, ...]
    t_effective: int


def johansen_trace(values, lags: int, rank: int | None = None) -> JohansenResult:
    """Cointegration trace test with ``lags`` lagged differences.

    The VECM regressions use an unrestricted constant: the first difference
    at time t and the level at t - lags are each regressed on the lagged
    differences plus a constant, residual product-moment matrices are formed,
    and the squared canonical correlations come out of the generalized
    symmetric eigenproblem. The statistic for rank r sums the N - r + 1
    smallest eigenvalue terms,

        -T_eff * sum(log(1 - lambda_i) for the N - r + 1 smallest),

    with T_eff = T - lags - 1, and is compared against the 95% critical
    value for that many remaining common trends. Rejection is evidence that
    the cointegration rank is at least r; at the default r = N - 1 it means
    all N series share a single common trend, i.e. they are all cointegrated.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected (T, N) values, got shape {x.shape}")
    t, n = x.shape
    if n < 2:
        raise SingleSeries("the cointegration test needs at least two series")
    if lags < 1:
        raise ValueError("lags must be >= 1")
    if t <= lags * n + n + 10:
        raise TooShort(f"{t} rows is too short for {n} series with {lags} lags")
    r = n - 1 if rank is None else int(rank)
    if not 1 <= r <= n:
        raise ValueError(f"rank must be in [1, {n}], got {r}")
    n_trends = n - r + 1
    if n_trends > len(TRACE_CRITICAL_95):
        raise ValueError(f"no critical value tabulated for {n_trends} common trends")

    dx = np.diff(x, axis=0)
    nobs = t - 1 - lags
    regressors = [dx[lags - lag : lags - lag + nobs] for lag in range(1, lags + 1)]
    regressors.append(np.ones((nobs, 1)))
    z = np.hstack(regressors)
    y0 = dx[lags : lags + nobs]  # first differences at t
    yk = x[1 : 1 + nobs]  # levels at t - lags

    try:
        r0 = y0 - z @ least_squares(z, y0)
        rk = yk - z @ least_squares(z, yk)
    except RankDeficient as exc:
        raise NotPositiveDefinite(f"collinear VECM regressors: {exc}") from exc

    s00 = r0.T @ r0 / nobs
    s0k = r0.T @ rk / nobs
    skk = rk.T @ rk / nobs
    low = cholesky_lower(s00)
    w = solve_lower(low, s0k)
    a = w.T @ w  # = S_k0 S_00^-1 S_0k
    eigvals, _ = generalized_symmetric_eigen(a, skk)
    lam = np.clip(eigvals, 0.0, 1.0 - 1e-12)

    tail = lam[r - 1 :]  # the n - r + 1 smallest, eigenvalues sorted descending
    statistic = float(-nobs * np.sum(np.log1p(-tail)))
    critical = TRACE_CRITICAL_95[n_trends - 1]
    return JohansenResult(
        statistic=statistic,
        critical_value_95=critical,
        reject=statistic > critical,
        rank=r,
        lags=lags,
        eigenvalues=tuple(float(v) for v in lam),
        t_effective=nobs,
    )


@dataclass(frozen=True)
class CurvePoint:
    lag: int
    statistic: float | None
    critical_value_95: float | None
    reject: bool | None
    error: str | None = None


def johansen_curve(dataset_or_values, lags, rank: int | None = None) -> list[CurvePoint]:
    """Trace test per lag; per-lag failures are recorded and the curve continues."""
    values = _train_values(dataset_or_values)
    points = []
    for lag in lags:
        try:
            res = johansen_trace(values, lag, rank)
            points.append(
                CurvePoint(
                    lag=lag,
                    statistic=res.statistic,
                    critical_value_95=res.critical_value_95,
                    reject=res.reject,
                )
            )
        except (TooShort, NotPositiveDefinite, SingleSeries, ValueError) as exc:
            points.append(
                CurvePoint(lag=lag, statistic=None, critical_value_95=None, reject=None, error=str(exc))
            )
    return points


HEURISTIC_NOTE = "general guideline estimated from benchmark behaviour, not a strict rule"


@dataclass(frozen=True)
class Recommendations:
    """Which optional modules the statistics argue for, with rationales."""

    modules: frozenset[str]
    rationales: dict[str, str]
    note: str = HEURISTIC_NOTE


def recommend_modules(
    trend: float,
    scale: float | None,
    n_series: int,
    curve: list[CurvePoint] | None = None,
) -> Recommendations:
    """Apply the threshold rules to already-computed statistics.

    mean_centering when trend strength exceeds 0.2; layer_norm when the
    scale statistic exceeds 0.5; series_mixing for small series counts
    (N < 30), or for 30 <= N <= 100 when the cointegration curve still
    rejects at the longest tested lag. Above 100 series mixing tends to
    overfit and is never recommended.
    """
    modules = set()
    rationales = {}
    if trend > TREND_STRENGTH_THRESHOLD:
        modules.add("mean_centering")
        rationales["mean_centering"] = (
            f"trend strength {trend:.4g} > {TREND_STRENGTH_THRESHOLD}"
        )
    if scale is not None and scale > SCALE_DIFFERENCE_THRESHOLD:
        modules.add("layer_norm")
        rationales["layer_norm"] = (
            f"scale difference {scale:.4g} > {SCALE_DIFFERENCE_THRESHOLD}"
        )
    if 2 <= n_series < MIXING_SMALL_N:
        modules.add("series_mixing")
        rationales["series_mixing"] = f"{n_series} series < {MIXING_SMALL_N}"
    elif MIXING_SMALL_N <= n_series <= MIXING_LARGE_N and curve:
        computed = [p for p in curve if p.reject is not None]
        if computed and computed[-1].reject:
            modules.add("series_mixing")
            rationales["series_mixing"] = (
                f"{n_series} series and cointegration persists at lag {computed[-1].lag} "
                f"(statistic {computed[-1].statistic:.4g} > {computed[-1].critical_value_95:.4g})"
            )
    return Recommendations(modules=frozenset(modules), rationales=rationales)


@dataclass
class DiagnosticsReport:
    """Everything `sfnn diagnose` knows about a dataset."""

    n_series: int
    lookback: int
    trend_strength: float
    scale_difference: float | None
    johansen_curve: list[CurvePoint] = field(default_factory=list)
    recommendations: Recommendations | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_series": self.n_series,
            "lookback": self.lookback,
            "trend_strength": self.trend_strength,
            "scale_difference": self.scale_difference,
            "johansen_curve": [
                {
                    "lag": p.lag,
                    "statistic": p.statistic,
                    "critical_value_95": p.critical_value_95,
                    "reject": p.reject,
                    "error": p.error,
                }
                for p in self.johansen_curve
            ],
            "recommended_modules": sorted(self.recommendations.modules)
            if self.recommendations
            else [],
            "rationales": dict(self.recommendations.rationales) if self.recommendations else {},
            "heuristic_note": self.recommendations.note if self.recommendations else None,
            "notes": list(self.notes),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)

    def to_text(self) -> str:
        lines = [
            f"series:            {self.n_series}",
            f"lookback:          {self.lookback}",
            f"trend strength:    {self.trend_strength:.6g} "
            f"(mean centering threshold {TREND_STRENGTH_THRESHOLD})",
        ]
        if self.scale_difference is None:
            lines.append("scale difference:  n/a (single series)")
        else:
            lines.append(
                f"scale difference:  {self.scale_difference:.6g} "
                f"(layer norm threshold {SCALE_DIFFERENCE_THRESHOLD})"
            )
        if self.johansen_curve:
            lines.append("cointegration trace (rank N-1):")
            for p in self.johansen_curve:
                if p.error is not None:
                    lines.append(f"  lag {p.lag:>4}: error: {p.error}")
                else:
                    verdict = "reject (cointegrated)" if p.reject else "fail to reject"
                    lines.append(
                        f"  lag {p.lag:>4}: statistic {p.statistic:10.4f}  "
                        f"critical {p.critical_value_95:8.4f}  {verdict}"
                    )
        if self.recommendations is not None:
            mods = sorted(self.recommendations.modules)
            lines.append(f"recommended modules: {', '.join(mods) if mods else '(none)'}")
            for mod in mods:
                lines.append(f"  {mod}: {self.recommendations.rationales[mod]}")
            lines.append(f"note: {self.recommendations.note}")
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines) + "\n"


DEFAULT_CURVE_LAGS = (1, 2, 4, 8, 16, 32)


def compute_diagnostics(
    dataset: NormalizedDataset,
    lookback: int,
    lags=DEFAULT_CURVE_LAGS,
) -> DiagnosticsReport:
    """Run every statistic on the z-scored training segment."""
    train, _, _ = split_chronological(dataset)
    values = train.data
    n = dataset.n_series
    trend = trend_strength(values, lookback)
    notes = []
    if n >= 2:
        scale = scale_difference(values, lookback)
        curve = johansen_curve(values, lags)
        if all(p.error is not None for p in curve):
            notes.append("cointegration test failed at every lag; see curve errors")
    else:
        scale = None
        curve = []
        notes.append("single series: scale difference and cointegration test omitted")
    recs = recommend_modules(trend, scale, n, curve)
    if n == 1:
        notes.append("series mixing is meaningless for a single series")
    if math.isnan(trend):
        raise ValueError("trend strength is NaN; input contains invalid values")
    return DiagnosticsReport(
        n_series=n,
        lookback=lookback,
        trend_strength=trend,
        scale_difference=scale,
        johansen_curve=curve,
        recommendations=recs,
        notes=notes,
    )
