"""Simple feedforward forecasting networks, diagnostics and benchmarking."""

__version__ = "0.1.0"

from .data import (
    DEFAULT_SPLIT,
    NormalizedDataset,
    RawSeriesTable,
    Segment,
    SplitSpec,
    WindowBatch,
    kfold_oos_splits,
    load_csv,
    make_windows,
    split_chronological,
    zscore_fit_transform,
)
from .diagnostics import (
    DiagnosticsReport,
    JohansenResult,
    compute_diagnostics,
    johansen_curve,
    johansen_trace,
    recommend_modules,
    scale_difference,
    trend_strength,
)
from .model import (
    SFNNConfig,
    SFNNParams,
    backward,
    forward,
    forward_batch,
    gradient_check,
    init_params,
    layer_norm,
    load_checkpoint,
    relu,
    save_checkpoint,
    selu,
)
from .numerics import (
    Matrix,
    SeededRng,
    generalized_symmetric_eigen,
    least_squares,
    matmul,
    rng_standard_normal,
)
from .protocol import (
    BenchmarkSummary,
    CellStats,
    GridSpec,
    NLinearsResult,
    TrialResult,
    aggregate_table,
    builtin_grid,
    builtin_split,
    fit_n_linears,
    load_ledger,
    published_table1,
    run_trials,
    select_lookback,
    summarize_trials,
    welch_t_test,
)
from .training import (
    OptimizerState,
    TrainConfig,
    TrainReport,
    adam_step,
    evaluate,
    mse_loss,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
