"""Command-line interface: diagnose, train, benchmark, verify.

Configuration precedence is flags > config file > built-in defaults; the
fully resolved configuration lands in a ``manifest.json`` next to every
output, and each emitted file points back at its manifest. All writes stay
inside the chosen output directory (``--out-dir``, or the ``SFNN_OUT_DIR``
environment variable).

Exit codes: 0 success, 2 data or usage errors, 3 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import SplitSpec, load_csv, zscore_fit_transform
from .diagnostics import DEFAULT_CURVE_LAGS, compute_diagnostics
from .errors import NonFiniteLoss, SfnnError, UnknownDataset
from .model import SFNNConfig, gradient_check, save_checkpoint
from .protocol import (
    GridSpec,
    aggregate_table,
    builtin_grid,
    builtin_split,
    fit_n_linears,
    lookback_curve_rows,
    published_table1,
    run_trials,
    summarize_trials,
    summary_to_csv_rows,
    summary_to_markdown,
    CellStats,
)
from .training import TrainConfig, train

ENV_OUT_DIR = "SFNN_OUT_DIR"

MODULE_FLAGS = {"center", "mix", "ln", "ln-affine"}


def _parse_config_file(path: Path) -> dict:
    """Flat key = value pairs in TOML syntax (strings, numbers, booleans, lists)."""
    values: dict = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            raise SfnnError(f"{path}:{lineno}: config files use flat key = value pairs only")
        if "=" not in line:
            raise SfnnError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, text = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = _parse_toml_value(text, path, lineno)
    return values


def _parse_toml_value(text: str, path: Path, lineno: int):
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        return text[1:-1]
    if text in ("true", "false"):
        return text == "true"
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        if not inner:
            return []
        return [_parse_toml_value(part.strip(), path, lineno) for part in inner.split(",")]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise SfnnError(f"{path}:{lineno}: cannot parse value {text!r}") from None


def _resolve(args, key: str, file_config: dict, default):
    """flags > config file > default."""
    cli_value = getattr(args, key, None)
    if cli_value is not None:
        return cli_value
    if key in file_config:
        return file_config[key]
    return default


def _out_dir(args, file_config: dict) -> Path:
    value = _resolve(args, "out_dir", file_config, None)
    if value is None:
        value = os.environ.get(ENV_OUT_DIR, "sfnn_out")
    path = Path(value)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir: Path, command: str, resolved: dict, dataset_path) -> dict:
    manifest = {
        "command": command,
        "resolved_config": resolved,
        "out_dir": str(out_dir),
        "dataset_path": str(dataset_path) if dataset_path else None,
        "dataset_sha256": _sha256(Path(dataset_path)) if dataset_path else None,
        "tool_version": __version__,
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    # The hash identifies the run configuration, not where it was written.
    manifest["config_hash"] = hashlib.sha256(
        json.dumps(resolved, sort_keys=True).encode()
    ).hexdigest()
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest


def _manifest_ref(manifest: dict) -> dict:
    return {"manifest": "manifest.json", "config_hash": manifest["config_hash"]}


def _write_csv(path: Path, rows: list[dict], manifest: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# manifest=manifest.json config_hash={manifest['config_hash']}\n")
        if rows:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)


def _parse_int_list(text) -> list[int]:
    if isinstance(text, list):
        return [int(v) for v in text]
    return [int(part) for part in str(text).split(",") if part.strip()]


def _split_from(args, file_config, dataset_name=None) -> SplitSpec:
    value = _resolve(args, "split", file_config, None)
    if value is not None:
        return SplitSpec.from_string(str(value))
    if dataset_name is not None:
        try:
            return builtin_split(dataset_name)
        except UnknownDataset:
            pass
    return SplitSpec.from_string("7:1:2")


def _modules_from(args, file_config) -> set[str]:
    value = _resolve(args, "modules", file_config, "")
    if isinstance(value, list):
        names = {str(v) for v in value}
    else:
        names = {part.strip() for part in str(value).split(",") if part.strip()}
    unknown = names - MODULE_FLAGS
    if unknown:
        raise SfnnError(f"unknown module flags {sorted(unknown)}; valid: {sorted(MODULE_FLAGS)}")
    return names


def _model_config(args, file_config, lookback: int, horizon: int, n_series: int) -> SFNNConfig:
    modules = _modules_from(args, file_config)
    width = _resolve(args, "width", file_config, None)
    blocks = _resolve(args, "blocks", file_config, None)
    mixing_blocks = _resolve(args, "mixing_blocks", file_config, None)
    return SFNNConfig(
        lookback=lookback,
        horizon=horizon,
        n_series=n_series,
        hidden_width=int(width) if width is not None else None,
        num_blocks=int(blocks) if blocks is not None else 2,
        use_mean_centering="center" in modules,
        use_series_mixing="mix" in modules,
        num_mixing_blocks=int(mixing_blocks) if mixing_blocks is not None else 1,
        use_layer_norm="ln" in modules or "ln-affine" in modules,
        layer_norm_affine="ln-affine" in modules,
    )


def _train_config(args, file_config, seed: int) -> TrainConfig:
    return TrainConfig(
        learning_rate=float(_resolve(args, "lr", file_config, 1e-3)),
        batch_size=int(_resolve(args, "batch_size", file_config, 64)),
        max_epochs=int(_resolve(args, "max_epochs", file_config, 100)),
        patience=int(_resolve(args, "patience", file_config, 10)),
        seed=seed,
    )


# --- commands ----------------------------------------------------------------


def cmd_diagnose(args) -> int:
    file_config = _parse_config_file(Path(args.config)) if args.config else {}
    out_dir = _out_dir(args, file_config)
    split = _split_from(args, file_config)
    lookback = int(_resolve(args, "lookback", file_config, 96))
    lags = _parse_int_list(_resolve(args, "lags", file_config, list(DEFAULT_CURVE_LAGS)))

    table = load_csv(args.csv)
    dataset = zscore_fit_transform(table, split)
    report = compute_diagnostics(dataset, lookback, lags)

    resolved = {
        "lookback": lookback,
        "lags": lags,
        "split": [split.train_fraction, split.val_fraction, split.test_fraction],
    }
    manifest = _write_manifest(out_dir, "diagnose", resolved, args.csv)
    payload = report.to_dict()
    payload.update(_manifest_ref(manifest))
    (out_dir / "diagnostics.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out_dir / "diagnostics.txt").write_text(report.to_text(), encoding="utf-8")
    curve_rows = [
        {
            "lag": p.lag,
            "statistic": "" if p.statistic is None else p.statistic,
            "critical_value_95": "" if p.critical_value_95 is None else p.critical_value_95,
            "reject": "" if p.reject is None else int(p.reject),
            "error": p.error or "",
        }
        for p in report.johansen_curve
    ]
    _write_csv(out_dir / "johansen_curve.csv", curve_rows, manifest)
    print(report.to_text(), end="")
    print(f"wrote {out_dir}/diagnostics.json")
    return 0


def cmd_train(args) -> int:
    file_config = _parse_config_file(Path(args.config)) if args.config else {}
    out_dir = _out_dir(args, file_config)
    split = _split_from(args, file_config)
    lookback = int(_resolve(args, "lookback", file_config, 96))
    horizon = int(_resolve(args, "horizon", file_config, 96))
    seed = int(_resolve(args, "seed", file_config, 0))

    table = load_csv(args.csv)
    dataset = zscore_fit_transform(table, split)
    model_config = _model_config(args, file_config, lookback, horizon, dataset.n_series)
    train_config = _train_config(args, file_config, seed)

    params, report = train(dataset, model_config, train_config)

    resolved = {
        "model": model_config.snapshot(),
        "train": train_config.snapshot(),
        "split": [split.train_fraction, split.val_fraction, split.test_fraction],
    }
    manifest = _write_manifest(out_dir, "train", resolved, args.csv)
    save_checkpoint(out_dir / "checkpoint.bin", params, model_config)
    payload = report.to_dict()
    payload.update(_manifest_ref(manifest))
    (out_dir / "train_report.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(
        f"val mse {report.best_val_mse:.6f}  test mse {report.test_mse:.6f}  "
        f"epochs {report.epochs_run}  ({out_dir}/train_report.json)"
    )
    return 0


def cmd_benchmark(args) -> int:
    file_config = _parse_config_file(Path(args.config)) if args.config else {}
    out_dir = _out_dir(args, file_config)
    name = _resolve(args, "name", file_config, None)
    seeds = int(_resolve(args, "seeds", file_config, 10))

    if name is not None:
        grid = builtin_grid(str(name), n_seeds=seeds)
    else:
        lookbacks = _resolve(args, "grid", file_config, None)
        if lookbacks is None:
            raise SfnnError("supply --name for a built-in grid or --grid with look-back lengths")
        period = int(_resolve(args, "period", file_config, 0)) or min(_parse_int_list(lookbacks))
        grid = GridSpec(
            dataset_name=str(_resolve(args, "dataset_label", file_config, Path(args.csv).stem)),
            period=period,
            lookbacks=tuple(_parse_int_list(lookbacks)),
            horizons=(96, 192, 336, 720),
            n_seeds=seeds,
        )
    horizons = _resolve(args, "horizons", file_config, None)
    if horizons is not None:
        grid = replace(grid, horizons=tuple(_parse_int_list(horizons)))

    split = _split_from(args, file_config, dataset_name=grid.dataset_name)
    mode = str(_resolve(args, "mode", file_config, "fair"))
    workers = int(_resolve(args, "workers", file_config, os.cpu_count() or 1))
    baseline = _resolve(args, "baseline", file_config, None)

    table = load_csv(args.csv)
    dataset = zscore_fit_transform(table, split)
    template = _model_config(args, file_config, grid.lookbacks[0], grid.horizons[0], dataset.n_series)
    train_config = _train_config(args, file_config, seed=0)

    resolved = {
        "grid": {
            "dataset_name": grid.dataset_name,
            "period": grid.period,
            "lookbacks": list(grid.lookbacks),
            "horizons": list(grid.horizons),
            "n_seeds": grid.n_seeds,
        },
        "mode": mode,
        "model_template": template.snapshot(),
        "train": train_config.snapshot(),
        "split": [split.train_fraction, split.val_fraction, split.test_fraction],
        "baseline": baseline,
        "workers": workers,
    }
    manifest = _write_manifest(out_dir, "benchmark", resolved, args.csv)

    ledger_path = out_dir / "ledger.jsonl"
    trials = run_trials(
        dataset,
        grid,
        template,
        train_config,
        ledger_path=ledger_path,
        workers=workers,
        progress=lambda t: print(
            f"  L={t.lookback} H={t.horizon} seed={t.seed}: "
            + (f"val {t.val_mse:.5f} test {t.test_mse:.5f}" if t.completed else f"FAILED {t.error}")
        ),
    )
    completed = [t for t in trials if t.completed]
    failed = [t for t in trials if not t.completed]
    if failed:
        print(f"{len(failed)} trial(s) failed; see ledger for error markers", file=sys.stderr)
    if not completed:
        print("error: no trial completed", file=sys.stderr)
        return 2

    live_horizons = {t.horizon for t in completed}
    dead_horizons = sorted(set(grid.horizons) - live_horizons)
    if dead_horizons:
        print(f"skipping horizons with no completed trial: {dead_horizons}", file=sys.stderr)
    usable = [t for t in trials if t.horizon in live_horizons]
    cells = summarize_trials(usable, grid.dataset_name, mode=mode)
    models = ["SFNN"]
    if baseline == "nlinears":
        for cell in list(cells):
            baseline_fit = fit_n_linears(
                dataset,
                cell.horizon,
                candidates=list(grid.lookbacks),
                center=template.use_mean_centering,
            )
            cells.append(
                CellStats(
                    model="NLinears",
                    dataset=grid.dataset_name,
                    horizon=cell.horizon,
                    mean=baseline_fit.test_mse,
                    std=0.0,
                    n=1,
                    lookback=max(baseline_fit.lookbacks),
                    mode=mode,
                )
            )
        models.append("NLinears")
    summary = aggregate_table(cells, model_order=models, reference="SFNN")

    markdown = summary_to_markdown(summary)
    markdown += f"\nmanifest: manifest.json (config_hash {manifest['config_hash']})\n"
    (out_dir / f"summary_{mode}.md").write_text(markdown, encoding="utf-8")
    _write_csv(out_dir / f"summary_{mode}.csv", summary_to_csv_rows(summary), manifest)
    _write_csv(
        out_dir / "lookback_curve.csv", lookback_curve_rows(trials, grid.dataset_name), manifest
    )
    print(markdown)
    print(f"wrote {out_dir}/summary_{mode}.md and {out_dir}/ledger.jsonl")
    return 0


def _verify_gradients() -> bool:
    from itertools import product

    ok = True
    for center, mixing, ln, blocks in product((False, True), repeat=4):
        config = SFNNConfig(
            lookback=5,
            horizon=3,
            n_series=4,
            hidden_width=6,
            num_blocks=2 if blocks else 0,
            use_mean_centering=center,
            use_series_mixing=mixing,
            num_mixing_blocks=2 if mixing else 1,
            use_layer_norm=ln,
            layer_norm_affine=ln,
        )
        result = gradient_check(config, seed=7, tolerance=1e-4)
        status = "PASS" if result["passed"] else "FAIL"
        print(
            f"[{status}] gradients center={int(center)} mix={int(mixing)} ln={int(ln)} "
            f"blocks={int(blocks)} max_rel_err={result['max_rel_err']:.2e}"
        )
        ok = ok and result["passed"]
    return ok


def _verify_oracles() -> bool:
    from .model import SFNNParams, forward_batch, init_params
    from .numerics import SeededRng

    ok = True
    # Linear network equals the explicit composition of its two maps.
    config = SFNNConfig(lookback=6, horizon=4, n_series=3, hidden_width=8, num_blocks=0)
    rng = SeededRng(3)
    params = init_params(config, rng)
    x = rng.standard_normal(config.lookback * config.n_series).reshape(
        1, config.lookback, config.n_series
    )
    y, _ = forward_batch(params, config, x)
    manual = np.empty_like(y)
    for series in range(config.n_series):
        h = params.input_w @ x[0, :, series] + params.input_b
        manual[0, :, series] = params.output_w @ h + params.output_b
    err = float(np.max(np.abs(y - manual)))
    passed = err < 1e-10
    print(f"[{'PASS' if passed else 'FAIL'}] linear composition max_err={err:.2e}")
    ok = ok and passed

    # Zero network with centering forecasts the input mean.
    config = SFNNConfig(
        lookback=6, horizon=4, n_series=3, hidden_width=8, num_blocks=1, use_mean_centering=True
    )
    params = init_params(config, SeededRng(0))
    zeros = SFNNParams.zeros_like(params)
    y, _ = forward_batch(zeros, config, x)
    expected = np.repeat(x.mean(axis=1)[:, None, :], config.horizon, axis=1)
    err = float(np.max(np.abs(y - expected)))
    passed = err < 1e-12
    print(f"[{'PASS' if passed else 'FAIL'}] zero-network centering max_err={err:.2e}")
    ok = ok and passed

    # A trained linear-only network lands on the least-squares solution.
    from .data import RawSeriesTable, make_windows, split_chronological
    from .numerics import least_squares_pivoted

    gen = np.random.default_rng(42)
    series = np.zeros(3000)
    eps = 0.1 * gen.standard_normal(3000)
    for t in range(2, 3000):
        series[t] = 1.6 * series[t - 1] - 0.8 * series[t - 2] + eps[t]
    ds = zscore_fit_transform(
        RawSeriesTable(("s0",), None, series[:, None]), SplitSpec.from_string("7:1:2")
    )
    lookback, horizon = 16, 4
    config = SFNNConfig(lookback=lookback, horizon=horizon, n_series=1, hidden_width=64, num_blocks=0)
    _, rep = train(ds, config, TrainConfig(learning_rate=3e-3, max_epochs=150, patience=20))
    train_seg, _, test_seg = split_chronological(ds)
    xw, yw = make_windows(train_seg, lookback, horizon).gather()
    coef, _ = least_squares_pivoted(np.hstack([xw[:, :, 0], np.ones((len(xw), 1))]), yw[:, :, 0])
    xt, yt = make_windows(test_seg, lookback, horizon, allow_context=True).gather()
    pred = np.hstack([xt[:, :, 0], np.ones((len(xt), 1))]) @ coef
    ls_mse = float(((pred - yt[:, :, 0]) ** 2).mean())
    gap = abs(rep.test_mse - ls_mse) / ls_mse
    passed = gap < 0.02
    print(f"[{'PASS' if passed else 'FAIL'}] trained linear vs least-squares gap={gap:.2%}")
    ok = ok and passed
    return ok


def _verify_protocol() -> bool:
    cells = published_table1()
    summary = aggregate_table(
        cells, model_order=["SFNN", "DUET", "iTransformer"], reference="SFNN"
    )
    first = tuple(summary.first_count[m] for m in ("SFNN", "DUET", "iTransformer"))
    sig = tuple(summary.significant_first_count[m] for m in ("SFNN", "DUET", "iTransformer"))
    ok = first == (19, 6, 3)
    print(f"[{'PASS' if ok else 'FAIL'}] first counts {first} (expected (19, 6, 3))")
    sig_ok = sum(abs(a - b) for a, b in zip(sig, (14, 4, 3))) <= 2
    print(f"[{'PASS' if sig_ok else 'FAIL'}] significance counts {sig} (expected (14, 4, 3) +/- 2 cells)")
    rel = summary.avg_relative_loss
    rel_ok = abs(rel["SFNN"] - 1.0) < 1e-12 and rel["DUET"] > 1.0 and rel["iTransformer"] > rel["DUET"]
    print(
        f"[{'PASS' if rel_ok else 'FAIL'}] relative losses "
        f"SFNN={rel['SFNN']:.3f} DUET={rel['DUET']:.3f} iTransformer={rel['iTransformer']:.3f}"
    )
    return ok and sig_ok and rel_ok


def cmd_verify(args) -> int:
    suites = {
        "gradients": _verify_gradients,
        "oracles": _verify_oracles,
        "protocol": _verify_protocol,
    }
    ok = suites[args.suite]()
    print(f"suite {args.suite}: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sfnn",
        description="Feedforward forecasting networks: diagnostics, training, benchmarking.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out-dir", "-o", dest="out_dir", help="output directory")
        p.add_argument("--config", help="flat TOML-style config file")
        p.add_argument("--split", help="train:val:test ratio, e.g. 7:1:2")

    p = sub.add_parser("diagnose", help="dataset statistics and module recommendations")
    p.add_argument("csv", help="input CSV file")
    common(p)
    p.add_argument("--lookback", type=int, help="window length for the statistics")
    p.add_argument("--lags", help="comma-separated lag orders for the cointegration curve")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("train", help="train a single model configuration")
    p.add_argument("csv")
    common(p)
    p.add_argument("--lookback", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--modules", help="comma list from: center, mix, ln, ln-affine")
    p.add_argument("--seed", type=int)
    p.add_argument("--width", type=int, help="hidden width (default max(512, 2L) capped at 2048)")
    p.add_argument("--blocks", type=int, help="residual block count (default 2)")
    p.add_argument("--mixing-blocks", dest="mixing_blocks", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("benchmark", help="look-back sweep with multi-seed trials")
    p.add_argument("csv")
    common(p)
    p.add_argument("--name", help="built-in dataset name mapping to grid and split")
    p.add_argument("--grid", help="comma-separated look-back lengths for a custom grid")
    p.add_argument("--period", type=int, help="period recorded with a custom grid")
    p.add_argument("--dataset-label", dest="dataset_label", help="label for a custom grid")
    p.add_argument("--horizons", help="comma-separated forecast horizons")
    p.add_argument("--seeds", type=int, help="seeds per (lookback, horizon), default 10")
    p.add_argument("--mode", choices=("peek", "fair"), help="look-back selection mode")
    p.add_argument("--baseline", choices=("nlinears",), help="add a closed-form baseline column")
    p.add_argument("--modules", help="comma list from: center, mix, ln, ln-affine")
    p.add_argument("--width", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--mixing-blocks", dest="mixing_blocks", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--workers", type=int, help="parallel trial workers (default: logical cores)")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("verify", help="run a built-in property suite")
    p.add_argument("--suite", choices=("gradients", "oracles", "protocol"), required=True)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NonFiniteLoss as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename or exc}", file=sys.stderr)
        return 2
    except (SfnnError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
