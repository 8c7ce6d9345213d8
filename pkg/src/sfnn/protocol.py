"""Benchmarking protocol: look-back sweeps, seed replication, significance.

A sweep trains one model per (lookback, horizon, seed) and appends every
result to a JSON-lines ledger, which makes sweeps resumable and auditable.
Look-back selection then happens in one of two modes:

* ``peek``: pick the look-back with the best mean test MSE (the common but
  optimistic practice of tuning on the test set);
* ``fair``: pick by mean validation MSE, never reading test scores.

Summaries aggregate per-cell means and standard deviations across models,
mark winners, and attach a dagger when the winner beats the runner-up in a
two-sided Welch test at p < 0.05.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .data import NormalizedDataset, SplitSpec, make_windows, split_chronological
from .errors import (
    DegenerateVariance,
    MissingCell,
    NoTrials,
    SfnnError,
    UnknownDataset,
)
from .model import SFNNConfig
from .numerics import least_squares_pivoted
from .training import TrainConfig, train


@dataclass(frozen=True)
class GridSpec:
    """A benchmark grid: which look-backs and horizons to sweep."""

    dataset_name: str
    period: int
    lookbacks: tuple[int, ...]
    horizons: tuple[int, ...]
    n_seeds: int = 10

    def __post_init__(self):
        if not self.lookbacks or any(l < 1 for l in self.lookbacks):
            raise ValueError("lookbacks must be non-empty and positive")
        if list(self.lookbacks) != sorted(set(self.lookbacks)):
            raise ValueError("lookbacks must be strictly increasing")
        if not self.horizons or any(h < 1 for h in self.horizons):
            raise ValueError("horizons must be non-empty and positive")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")


_LONG_HORIZONS = (96, 192, 336, 720)

# Grid per dataset: period, look-back multiples of it, standard horizons,
# and the chronological split ratio the benchmark lineage uses.
_BUILTIN = {
    "ETTm1": (96, (96, 192, 384, 672, 1344), _LONG_HORIZONS, "6:2:2"),
    "ETTm2": (96, (96, 192, 384, 672, 1344), _LONG_HORIZONS, "6:2:2"),
    # Hourly datasets have daily (24) and weekly (168) cycles; the grid uses
    # the weekly multiples.
    "ETTh1": (168, (168, 336, 672, 1344), _LONG_HORIZONS, "6:2:2"),
    "ETTh2": (168, (168, 336, 672, 1344), _LONG_HORIZONS, "6:2:2"),
    "Traffic": (168, (168, 336, 672, 1344), _LONG_HORIZONS, "7:1:2"),
    "Electricity": (168, (168, 336, 672, 1344), _LONG_HORIZONS, "7:1:2"),
    "Solar": (144, (144, 288, 576, 1008), _LONG_HORIZONS, "7:1:2"),
    "Weather": (144, (144, 288, 576, 1008), _LONG_HORIZONS, "7:1:2"),
    "ILI": (52, (52, 104, 208), (24, 36, 48, 60), "7:1:2"),
    # No clear periodicity; five trading days per week.
    "Exchange": (5, (5, 10, 20, 40, 80, 160, 320), _LONG_HORIZONS, "7:1:2"),
}

_ALIASES = {"solar energy": "Solar", "exchange rate": "Exchange", "exchange_rate": "Exchange"}


def _canonical_name(name: str) -> str:
    for known in _BUILTIN:
        if known.lower() == name.strip().lower():
            return known
    alias = _ALIASES.get(name.strip().lower())
    if alias:
        return alias
    raise UnknownDataset(name, _BUILTIN.keys())


def builtin_grid(dataset_name: str, n_seeds: int = 10) -> GridSpec:
    """The standard benchmark grid for one of the ten known datasets."""
    name = _canonical_name(dataset_name)
    period, lookbacks, horizons, _ = _BUILTIN[name]
    return GridSpec(
        dataset_name=name,
        period=period,
        lookbacks=lookbacks,
        horizons=horizons,
        n_seeds=n_seeds,
    )


def builtin_split(dataset_name: str) -> SplitSpec:
    """The chronological split ratio conventionally used for a known dataset."""
    name = _canonical_name(dataset_name)
    return SplitSpec.from_string(_BUILTIN[name][3])


@dataclass(frozen=True)
class TrialResult:
    """One (lookback, horizon, seed) training run."""

    lookback: int
    horizon: int
    seed: int
    val_mse: float | None
    test_mse: float | None
    wall_time: float
    config: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.lookback, self.horizon, self.seed)

    @property
    def completed(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        return {
            "lookback": self.lookback,
            "horizon": self.horizon,
            "seed": self.seed,
            "val_mse": self.val_mse,
            "test_mse": self.test_mse,
            "wall_time": self.wall_time,
            "config": self.config,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrialResult":
        return cls(
            lookback=int(d["lookback"]),
            horizon=int(d["horizon"]),
            seed=int(d["seed"]),
            val_mse=d.get("val_mse"),
            test_mse=d.get("test_mse"),
            wall_time=float(d.get("wall_time", 0.0)),
            config=d.get("config", {}),
            error=d.get("error"),
        )


def append_trial(path, trial: TrialResult) -> None:
    """Append one ledger line; flushed immediately so sweeps survive interrupts."""
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(trial.to_dict(), sort_keys=True) + "\n")
        fh.flush()


def load_ledger(path) -> list[TrialResult]:
    path = Path(path)
    if not path.exists():
        return []
    trials = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                trials.append(TrialResult.from_dict(json.loads(line)))
    return trials


def _run_one_trial(args) -> TrialResult:
    dataset, sfnn_config, train_config, lookback, horizon, seed = args
    started = time.perf_counter()
    try:
        _, report = train(dataset, sfnn_config, train_config)
        return TrialResult(
            lookback=lookback,
            horizon=horizon,
            seed=seed,
            val_mse=report.best_val_mse,
            test_mse=report.test_mse,
            wall_time=report.wall_time,
            config={"model": report.model_config, "train": report.train_config},
        )
    except SfnnError as exc:
        return TrialResult(
            lookback=lookback,
            horizon=horizon,
            seed=seed,
            val_mse=None,
            test_mse=None,
            wall_time=time.perf_counter() - started,
            config={"model": sfnn_config.snapshot(), "train": train_config.snapshot()},
            error=f"{type(exc).__name__}: {exc}",
        )


def run_trials(
    dataset: NormalizedDataset,
    grid: GridSpec,
    template: SFNNConfig,
    train_config: TrainConfig,
    ledger_path=None,
    workers: int = 1,
    progress=None,
) -> list[TrialResult]:
    """Train every (lookback, horizon, seed) cell of the grid.

    Seeds run 0..n_seeds-1. Triples already present in the ledger are
    skipped, so an interrupted sweep resumes where it stopped. Failures are
    recorded with an error marker instead of aborting the sweep. Results are
    written in task order regardless of worker count, keeping ledgers
    reproducible.
    """
    existing = {}
    if ledger_path is not None:
        for trial in load_ledger(ledger_path):
            existing[trial.key] = trial

    tasks = []
    for horizon in grid.horizons:
        for lookback in grid.lookbacks:
            for seed in range(grid.n_seeds):
                if (lookback, horizon, seed) in existing:
                    continue
                cfg = replace(
                    template,
                    lookback=lookback,
                    horizon=horizon,
                    n_series=dataset.n_series,
                )
                tcfg = replace(train_config, seed=seed)
                tasks.append((dataset, cfg, tcfg, lookback, horizon, seed))

    results = list(existing.values())

    def record(trial: TrialResult):
        results.append(trial)
        if ledger_path is not None:
            append_trial(ledger_path, trial)
        if progress is not None:
            progress(trial)

    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_one_trial, task) for task in tasks]
            for future in futures:  # submission order keeps the ledger deterministic
                record(future.result())
    else:
        for task in tasks:
            record(_run_one_trial(task))

    results.sort(key=lambda t: (t.horizon, t.lookback, t.seed))
    return results


SELECTION_MODES = ("peek", "fair")


def select_lookback(trials: list[TrialResult], mode: str) -> dict[int, int]:
    """Chosen look-back per horizon.

    ``peek`` minimizes mean test MSE across seeds; ``fair`` minimizes mean
    validation MSE and never reads test scores. Ties break toward the
    smaller look-back.
    """
    if mode not in SELECTION_MODES:
        raise ValueError(f"mode must be one of {SELECTION_MODES}, got {mode!r}")
    completed = [t for t in trials if t.completed]
    horizons = sorted({t.horizon for t in trials})
    if not horizons:
        raise NoTrials("no trials to select from")
    choice = {}
    for horizon in horizons:
        per_lookback = {}
        for t in completed:
            if t.horizon == horizon:
                per_lookback.setdefault(t.lookback, []).append(
                    t.test_mse if mode == "peek" else t.val_mse
                )
        if not per_lookback:
            raise NoTrials(f"no completed trials for horizon {horizon}")
        best_lb, best_score = None, math.inf
        for lookback in sorted(per_lookback):
            score = float(np.mean(per_lookback[lookback]))
            if score < best_score:
                best_lb, best_score = lookback, score
        choice[horizon] = best_lb
    return choice


# --- Welch's t-test ----------------------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    max_iter = 300
    eps = 1e-15
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), accurate to well below 1e-8 for the arguments used here."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf_two_sided(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


def welch_t_test(mean1, std1, n1, mean2, std2, n2):
    """Two-sided Welch test from summary statistics.

    ``std1``/``std2`` are the sample standard deviations of the two run
    groups. Returns (t, degrees_of_freedom, p_two_sided). When both groups
    have zero spread: equal means give (0, n1+n2-2, 1) by definition, and
    unequal means raise ``DegenerateVariance`` since no finite statistic
    exists.
    """
    if n1 < 2 or n2 < 2:
        raise ValueError("both groups need n >= 2")
    if std1 < 0 or std2 < 0:
        raise ValueError("standard deviations must be >= 0")
    var1 = std1 * std1 / n1
    var2 = std2 * std2 / n2
    se2 = var1 + var2
    if se2 == 0.0:
        if mean1 == mean2:
            return 0.0, float(n1 + n2 - 2), 1.0
        raise DegenerateVariance(
            f"zero variance in both groups with different means ({mean1} vs {mean2})"
        )
    t = (mean1 - mean2) / math.sqrt(se2)
    df = se2 * se2 / (var1 * var1 / (n1 - 1) + var2 * var2 / (n2 - 1))
    return t, df, student_t_sf_two_sided(t, df)


# --- aggregation -------------------------------------------------------------


@dataclass(frozen=True)
class CellStats:
    """One model's score on one (dataset, horizon) cell."""

    model: str
    dataset: str
    horizon: int
    mean: float
    std: float
    n: int
    lookback: int | None = None
    mode: str | None = None


@dataclass(frozen=True)
class CellOutcome:
    dataset: str
    horizon: int
    stats: dict[str, CellStats]
    winner: str
    significant: bool


@dataclass
class BenchmarkSummary:
    """Table-style aggregation across models and cells."""

    models: list[str]
    reference: str
    cells: list[CellOutcome]
    first_count: dict[str, int]
    significant_first_count: dict[str, int]
    avg_relative_loss: dict[str, float]


def aggregate_table(
    cells: list[CellStats],
    model_order: list[str] | None = None,
    reference: str | None = None,
    alpha: float = 0.05,
) -> BenchmarkSummary:
    """Aggregate per-model cells into winner counts and relative losses.

    Every model must cover exactly the same (dataset, horizon) cells. The
    winner of a cell is the lowest mean (ties break by model order); the
    dagger requires a Welch p-value below ``alpha`` against the runner-up.
    ``avg_relative_loss`` averages mean / reference_mean over cells, so the
    reference model scores exactly 1.
    """
    models = model_order or sorted({c.model for c in cells})
    if reference is None:
        reference = models[0]
    if reference not in models:
        raise ValueError(f"reference {reference!r} not among models {models}")

    table: dict[tuple[str, int], dict[str, CellStats]] = {}
    for cell in cells:
        table.setdefault((cell.dataset, cell.horizon), {})[cell.model] = cell
    cell_keys = sorted(table)
    for key in cell_keys:
        missing = [m for m in models if m not in table[key]]
        if missing:
            raise MissingCell(f"cell {key} missing models: {missing}")

    outcomes = []
    first = {m: 0 for m in models}
    sig_first = {m: 0 for m in models}
    rel = {m: 0.0 for m in models}
    for key in cell_keys:
        stats = table[key]
        ranked = sorted(models, key=lambda m: (stats[m].mean, models.index(m)))
        winner, runner = ranked[0], ranked[1] if len(ranked) > 1 else None
        significant = False
        if runner is not None and stats[winner].mean < stats[runner].mean:
            w, r = stats[winner], stats[runner]
            if w.n >= 2 and r.n >= 2:
                try:
                    _, _, p = welch_t_test(w.mean, w.std, w.n, r.mean, r.std, r.n)
                    significant = p < alpha
                except DegenerateVariance:
                    significant = True  # zero spread on both sides, strictly lower mean
        first[winner] += 1
        if significant:
            sig_first[winner] += 1
        for m in models:
            rel[m] += stats[m].mean / stats[reference].mean
        outcomes.append(
            CellOutcome(
                dataset=key[0],
                horizon=key[1],
                stats=stats,
                winner=winner,
                significant=significant,
            )
        )

    n_cells = len(cell_keys)
    avg_rel = {m: rel[m] / n_cells for m in models}
    return BenchmarkSummary(
        models=list(models),
        reference=reference,
        cells=outcomes,
        first_count=first,
        significant_first_count=sig_first,
        avg_relative_loss=avg_rel,
    )


def summarize_trials(
    trials: list[TrialResult],
    dataset_name: str,
    mode: str,
    model: str = "SFNN",
) -> list[CellStats]:
    """Collapse a trial sweep into per-horizon cells at the selected look-back."""
    chosen = select_lookback(trials, mode)
    cells = []
    for horizon, lookback in sorted(chosen.items()):
        scores = [
            t.test_mse
            for t in trials
            if t.completed and t.horizon == horizon and t.lookback == lookback
        ]
        arr = np.asarray(scores, dtype=np.float64)
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        cells.append(
            CellStats(
                model=model,
                dataset=dataset_name,
                horizon=horizon,
                mean=float(arr.mean()),
                std=std,
                n=int(arr.size),
                lookback=lookback,
                mode=mode,
            )
        )
    return cells


def load_published_table(source) -> list[CellStats]:
    """Read (model, dataset, horizon, mean, std, n) rows from a CSV file."""
    if hasattr(source, "read"):
        rows = list(csv.DictReader(source))
    else:
        with open(source, encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    return [
        CellStats(
            model=row["model"].strip(),
            dataset=row["dataset"].strip(),
            horizon=int(row["horizon"]),
            mean=float(row["mean"]),
            std=float(row["std"]),
            n=int(row["n"]),
        )
        for row in rows
    ]


def published_table1() -> list[CellStats]:
    """The bundled peek-mode benchmark summary used by the protocol self-check."""
    text = resources.files("sfnn.tables").joinpath("table1_published.csv").read_text()
    return load_published_table(io.StringIO(text))


def summary_to_markdown(summary: BenchmarkSummary) -> str:
    """Aligned markdown table: mean +/- std per model, * winner, + dagger."""
    header = ["dataset", "horizon"] + summary.models
    rows = [header, ["---"] * len(header)]
    for cell in summary.cells:
        row = [cell.dataset, str(cell.horizon)]
        for m in summary.models:
            s = cell.stats[m]
            text = f"{s.mean:.4f} ± {s.std:.4f}"
            if m == cell.winner:
                text = f"**{text}**" + ("†" if cell.significant else "")
            row.append(text)
        rows.append(row)
    rows.append(
        ["1st count", ""] + [str(summary.first_count[m]) for m in summary.models]
    )
    rows.append(
        ["1st count p<5%", ""]
        + [str(summary.significant_first_count[m]) for m in summary.models]
    )
    rows.append(
        [f"avg loss rel. {summary.reference}", ""]
        + [f"{summary.avg_relative_loss[m]:.3f}" for m in summary.models]
    )
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for r in rows:
        lines.append("| " + " | ".join(r[i].ljust(widths[i]) for i in range(len(header))) + " |")
    return "\n".join(lines) + "\n"


def summary_to_csv_rows(summary: BenchmarkSummary) -> list[dict]:
    rows = []
    for cell in summary.cells:
        for m in summary.models:
            s = cell.stats[m]
            rows.append(
                {
                    "dataset": cell.dataset,
                    "horizon": cell.horizon,
                    "model": m,
                    "mean_mse": s.mean,
                    "std": s.std,
                    "n": s.n,
                    "lookback": s.lookback if s.lookback is not None else "",
                    "mode": s.mode or "",
                    "winner": int(m == cell.winner),
                    "significant": int(m == cell.winner and cell.significant),
                }
            )
    return rows


def lookback_curve_rows(trials: list[TrialResult], dataset_name: str) -> list[dict]:
    """Per-(lookback, horizon) mean/std rows for accuracy-vs-lookback plots."""
    groups: dict[tuple[int, int], list[float]] = {}
    for t in trials:
        if t.completed:
            groups.setdefault((t.horizon, t.lookback), []).append(t.test_mse)
    rows = []
    for (horizon, lookback), scores in sorted(groups.items()):
        arr = np.asarray(scores, dtype=np.float64)
        rows.append(
            {
                "dataset": dataset_name,
                "horizon": horizon,
                "lookback": lookback,
                "mean_mse": float(arr.mean()),
                "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
                "n": int(arr.size),
            }
        )
    return rows


# --- N independent linear models ---------------------------------------------


@dataclass
class NLinearsResult:
    """N per-series linear forecasters with individually chosen look-backs."""

    horizon: int
    lookbacks: list[int]
    center: bool
    val_mse: float
    test_mse: float


def _series_design(windows, series: int, center: bool):
    """Design matrix (history + intercept) and target block for one series."""
    x, y = windows.gather()
    xs = x[:, :, series]
    ys = y[:, :, series]
    if center:
        mu = xs.mean(axis=1, keepdims=True)
        xs = xs - mu
        ys = ys - mu
    design = np.hstack([xs, np.ones((xs.shape[0], 1))])
    return design, ys


def _series_predict_sse(windows, series: int, coef, center: bool):
    """Sum of squared errors and element count on a window batch."""
    x, y = windows.gather()
    xs = x[:, :, series]
    ys = y[:, :, series]
    if center:
        mu = xs.mean(axis=1, keepdims=True)
        pred = np.hstack([xs - mu, np.ones((xs.shape[0], 1))]) @ coef + mu
    else:
        pred = np.hstack([xs, np.ones((xs.shape[0], 1))]) @ coef
    diff = pred - ys
    return float((diff**2).sum()), diff.size


def fit_n_linears(
    dataset: NormalizedDataset,
    horizon: int,
    lookbacks: list[int] | None = None,
    candidates: list[int] | None = None,
    center: bool = False,
) -> NLinearsResult:
    """Fit one least-squares forecaster per series.

    ``lookbacks`` pins a look-back per series; otherwise each series picks
    the best candidate by validation MSE (ties toward the smaller value).
    With ``center`` the per-window input mean is subtracted from history and
    target and re-added to predictions. Test MSE pools every series, window
    and step. The solve uses column-pivoted QR, so exactly periodic series
    (whose lag columns are collinear) still fit with zero residual.
    """
    n = dataset.n_series
    if lookbacks is not None:
        if len(lookbacks) != n:
            raise ValueError(f"{len(lookbacks)} lookbacks for {n} series")
        per_series = [[lb] for lb in lookbacks]
    else:
        if not candidates:
            raise ValueError("supply either per-series lookbacks or a candidate list")
        per_series = [sorted(set(candidates))] * n

    train_seg, val_seg, test_seg = split_chronological(dataset)
    chosen: list[int] = []
    coefs = []
    val_sse = 0.0
    val_count = 0
    for series in range(n):
        best = None  # (val_mse, lookback, coef)
        for lb in per_series[series]:
            train_windows = make_windows(train_seg, lb, horizon, allow_context=False)
            design, target = _series_design(train_windows, series, center)
            coef, _ = least_squares_pivoted(design, target)
            val_windows = make_windows(val_seg, lb, horizon, allow_context=True)
            sse, count = _series_predict_sse(val_windows, series, coef, center)
            mse = sse / count
            if best is None or mse < best[0]:
                best = (mse, lb, coef, sse, count)
        chosen.append(best[1])
        coefs.append(best[2])
        val_sse += best[3]
        val_count += best[4]

    test_sse = 0.0
    test_count = 0
    for series in range(n):
        test_windows = make_windows(test_seg, chosen[series], horizon, allow_context=True)
        sse, count = _series_predict_sse(test_windows, series, coefs[series], center)
        test_sse += sse
        test_count += count
    return NLinearsResult(
        horizon=horizon,
        lookbacks=chosen,
        center=center,
        val_mse=val_sse / val_count,
        test_mse=test_sse / test_count,
    )
