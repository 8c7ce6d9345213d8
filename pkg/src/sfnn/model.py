"""The forecasting network: configuration, forward pass, exact gradients.

The temporal core is a residual multi-layer perceptron shared across all
series (channel independence): an input linear map, ``num_blocks`` residual
blocks ``h <- h + relu(linear(h))``, and an output linear map. Three
optional modules wrap it, applied in this fixed order:

1. input mean centering: subtract each series' window mean before the
   network and add it back onto every forecast step;
2. series mixing: residual cross-section maps ``x <- x + selu(M x + b)``
   applied at every time step;
3. layer normalization inside each residual block, before the block's
   linear map.

Gradients are computed by explicit reverse-mode differentiation of this
pipeline, with the ReLU subgradient at 0 fixed to 0; ``gradient_check``
verifies them against central finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch, TraceMismatch
from .numerics import SeededRng

# Self-normalizing activation constants (Klambauer et al., 2017).
SELU_SCALE = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

LAYER_NORM_EPS = 1e-5


def relu(x):
    return np.maximum(x, 0.0)


def selu(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0.0, SELU_SCALE * x, SELU_SCALE * SELU_ALPHA * np.expm1(x))


def _selu_grad(x):
    return np.where(x > 0.0, SELU_SCALE, SELU_SCALE * SELU_ALPHA * np.exp(np.minimum(x, 0.0)))


def layer_norm(v, gain=None, bias=None):
    """Normalize a vector to zero mean and (population std + eps) unit scale."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] < 2:
        raise ShapeMismatch(f"layer_norm needs a vector of length >= 2, got shape {v.shape}")
    out, _, _ = _layer_norm_rows(v[None, :], gain, bias)
    return out[0]


def _layer_norm_rows(h, gain, bias):
    """Row-wise layer norm; returns (output, mean, std) for the backward pass."""
    mu = h.mean(axis=1, keepdims=True)
    centered = h - mu
    sigma = np.sqrt((centered**2).mean(axis=1, keepdims=True))
    out = centered / (sigma + LAYER_NORM_EPS)
    if gain is not None:
        out = out * gain + bias
    return out, mu, sigma


def _layer_norm_rows_backward(h, mu, sigma, gain, d_out):
    """Gradients of row-wise layer norm.

    Returns (d_h, d_gain, d_bias); the gain/bias entries are None when the
    norm is not affine. Rows with zero spread get zero gradient (the scale
    term is non-differentiable there and its subgradient is taken as 0).
    """
    width = h.shape[1]
    centered = h - mu
    s = sigma + LAYER_NORM_EPS
    if gain is not None:
        y = centered / s
        d_gain = (d_out * y).sum(axis=0)
        d_bias = d_out.sum(axis=0)
        d_y = d_out * gain
    else:
        d_gain = d_bias = None
        d_y = d_out
    safe_sigma = np.where(sigma > 0.0, sigma, 1.0)
    scale_term = (d_y * centered).sum(axis=1, keepdims=True) * centered / (width * safe_sigma * s * s)
    scale_term = np.where(sigma > 0.0, scale_term, 0.0)
    d_centered = d_y / s - scale_term
    d_h = d_centered - d_centered.mean(axis=1, keepdims=True)
    return d_h, d_gain, d_bias


@dataclass(frozen=True)
class SFNNConfig:
    """Architecture hyperparameters.

    ``hidden_width=None`` resolves to max(512, 2 * lookback) capped at 2048.
    Temporal weights are shared across series; the mixing maps are the only
    cross-series parameters and exist only when ``use_series_mixing``.
    """

    lookback: int
    horizon: int
    n_series: int
    hidden_width: int | None = None
    num_blocks: int = 2
    use_mean_centering: bool = False
    use_series_mixing: bool = False
    num_mixing_blocks: int = 1
    use_layer_norm: bool = False
    layer_norm_affine: bool = False

    def __post_init__(self):
        if self.lookback < 1 or self.horizon < 1 or self.n_series < 1:
            raise ValueError("lookback, horizon and n_series must be >= 1")
        if self.num_blocks < 0:
            raise ValueError("num_blocks must be >= 0")
        if self.hidden_width is not None and self.hidden_width < 1:
            raise ValueError("hidden_width must be >= 1")
        if self.use_series_mixing and self.num_mixing_blocks < 1:
            raise ValueError("num_mixing_blocks must be >= 1 when mixing is enabled")

    @property
    def width(self) -> int:
        if self.hidden_width is not None:
            return self.hidden_width
        return min(2048, max(512, 2 * self.lookback))

    def snapshot(self) -> dict:
        """A JSON-friendly dict with the width default materialized."""
        return {
            "lookback": self.lookback,
            "horizon": self.horizon,
            "n_series": self.n_series,
            "hidden_width": self.width,
            "num_blocks": self.num_blocks,
            "use_mean_centering": self.use_mean_centering,
            "use_series_mixing": self.use_series_mixing,
            "num_mixing_blocks": self.num_mixing_blocks if self.use_series_mixing else 0,
            "use_layer_norm": self.use_layer_norm,
            "layer_norm_affine": self.layer_norm_affine,
        }


@dataclass
class SFNNParams:
    """All learnable tensors, in fixed declaration order.

    Declaration order (used by checkpoints, the optimizer and gradient
    reports): input map, residual blocks, output map, mixing blocks, layer
    norm gains/biases.
    """

    input_w: np.ndarray
    input_b: np.ndarray
    block_ws: list[np.ndarray]
    block_bs: list[np.ndarray]
    output_w: np.ndarray
    output_b: np.ndarray
    mix_ws: list[np.ndarray] = field(default_factory=list)
    mix_bs: list[np.ndarray] = field(default_factory=list)
    ln_gains: list[np.ndarray] = field(default_factory=list)
    ln_biases: list[np.ndarray] = field(default_factory=list)

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        out = [("input_map.w", self.input_w), ("input_map.b", self.input_b)]
        for i, (w, b) in enumerate(zip(self.block_ws, self.block_bs)):
            out.append((f"block{i}.w", w))
            out.append((f"block{i}.b", b))
        out.append(("output_map.w", self.output_w))
        out.append(("output_map.b", self.output_b))
        for i, (w, b) in enumerate(zip(self.mix_ws, self.mix_bs)):
            out.append((f"mix{i}.w", w))
            out.append((f"mix{i}.b", b))
        for i, g in enumerate(self.ln_gains):
            out.append((f"ln{i}.gain", g))
        for i, b in enumerate(self.ln_biases):
            out.append((f"ln{i}.bias", b))
        return out

    def copy(self) -> "SFNNParams":
        return SFNNParams(
            input_w=self.input_w.copy(),
            input_b=self.input_b.copy(),
            block_ws=[w.copy() for w in self.block_ws],
            block_bs=[b.copy() for b in self.block_bs],
            output_w=self.output_w.copy(),
            output_b=self.output_b.copy(),
            mix_ws=[w.copy() for w in self.mix_ws],
            mix_bs=[b.copy() for b in self.mix_bs],
            ln_gains=[g.copy() for g in self.ln_gains],
            ln_biases=[b.copy() for b in self.ln_biases],
        )

    @staticmethod
    def zeros_like(other: "SFNNParams") -> "SFNNParams":
        return SFNNParams(
            input_w=np.zeros_like(other.input_w),
            input_b=np.zeros_like(other.input_b),
            block_ws=[np.zeros_like(w) for w in other.block_ws],
            block_bs=[np.zeros_like(b) for b in other.block_bs],
            output_w=np.zeros_like(other.output_w),
            output_b=np.zeros_like(other.output_b),
            mix_ws=[np.zeros_like(w) for w in other.mix_ws],
            mix_bs=[np.zeros_like(b) for b in other.mix_bs],
            ln_gains=[np.zeros_like(g) for g in other.ln_gains],
            ln_biases=[np.zeros_like(b) for b in other.ln_biases],
        )

    def n_parameters(self) -> int:
        return sum(t.size for _, t in self.named_tensors())


def init_params(config: SFNNConfig, rng: SeededRng) -> SFNNParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases.

    Layer-norm gains start at one, biases at zero. Tensors are drawn in
    declaration order, so a given seed fully determines the result.
    """
    w = config.width
    l, h, n = config.lookback, config.horizon, config.n_series

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, shape)

    input_w = uniform((w, l), l)
    input_b = np.zeros(w)
    block_ws, block_bs = [], []
    for _ in range(config.num_blocks):
        block_ws.append(uniform((w, w), w))
        block_bs.append(np.zeros(w))
    output_w = uniform((h, w), w)
    output_b = np.zeros(h)
    mix_ws, mix_bs = [], []
    if config.use_series_mixing:
        for _ in range(config.num_mixing_blocks):
            mix_ws.append(uniform((n, n), n))
            mix_bs.append(np.zeros(n))
    ln_gains, ln_biases = [], []
    if config.use_layer_norm and config.layer_norm_affine:
        for _ in range(config.num_blocks):
            ln_gains.append(np.ones(w))
            ln_biases.append(np.zeros(w))
    return SFNNParams(
        input_w=input_w,
        input_b=input_b,
        block_ws=block_ws,
        block_bs=block_bs,
        output_w=output_w,
        output_b=output_b,
        mix_ws=mix_ws,
        mix_bs=mix_bs,
        ln_gains=ln_gains,
        ln_biases=ln_biases,
    )


@dataclass
class ForwardTrace:
    """Everything the backward pass needs from one forward call."""

    batch: int
    config: SFNNConfig
    x_mean: np.ndarray | None  # (B, N) per-series input means, if centering
    mix_inputs: list[np.ndarray]  # (B*L, N) input to each mixing block
    mix_pre: list[np.ndarray]  # (B*L, N) pre-activation of each mixing block
    x2: np.ndarray  # (B*N, L) flattened per-series input to the temporal core
    block_inputs: list[np.ndarray]  # (B*N, W) h entering each block
    block_norm_stats: list[tuple[np.ndarray, np.ndarray] | None]  # (mu, sigma) per block
    block_normed: list[np.ndarray]  # (B*N, W) what each block's linear saw
    block_pre: list[np.ndarray]  # (B*N, W) pre-ReLU activations
    h_final: np.ndarray  # (B*N, W) input to the output map


def _check_input_shape(config: SFNNConfig, x: np.ndarray):
    if x.shape[-2:] != (config.lookback, config.n_series):
        raise ShapeMismatch(
            f"input shape {x.shape} does not match (lookback, n_series) = "
            f"({config.lookback}, {config.n_series})"
        )


def forward_batch(params: SFNNParams, config: SFNNConfig, x: np.ndarray):
    """Forward pass over a stack of windows, shape (B, L, N) -> (B, H, N)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeMismatch(f"expected a (batch, lookback, n_series) stack, got shape {x.shape}")
    _check_input_shape(config, x)
    b, l, n = x.shape

    work = x
    x_mean = None
    if config.use_mean_centering:
        x_mean = x.mean(axis=1)
        work = x - x_mean[:, None, :]

    mix_inputs: list[np.ndarray] = []
    mix_pre: list[np.ndarray] = []
    if config.use_series_mixing:
        flat = np.ascontiguousarray(work.reshape(b * l, n))
        for w_mat, b_vec in zip(params.mix_ws, params.mix_bs):
            pre = flat @ w_mat.T + b_vec
            mix_inputs.append(flat)
            mix_pre.append(pre)
            flat = flat + selu(pre)
        work = flat.reshape(b, l, n)

    # Channel independence: every (window, series) pair becomes one row.
    x2 = np.ascontiguousarray(work.transpose(0, 2, 1).reshape(b * n, l))
    h = x2 @ params.input_w.T + params.input_b

    block_inputs, block_norm_stats, block_normed, block_pre = [], [], [], []
    for i in range(config.num_blocks):
        h_in = h
        if config.use_layer_norm:
            gain = params.ln_gains[i] if config.layer_norm_affine else None
            bias = params.ln_biases[i] if config.layer_norm_affine else None
            g, mu, sigma = _layer_norm_rows(h_in, gain, bias)
            block_norm_stats.append((mu, sigma))
        else:
            g = h_in
            block_norm_stats.append(None)
        pre = g @ params.block_ws[i].T + params.block_bs[i]
        h = h_in + relu(pre)
        block_inputs.append(h_in)
        block_normed.append(g)
        block_pre.append(pre)

    y2 = h @ params.output_w.T + params.output_b
    y = y2.reshape(b, n, config.horizon).transpose(0, 2, 1)
    if config.use_mean_centering:
        y = y + x_mean[:, None, :]

    trace = ForwardTrace(
        batch=b,
        config=config,
        x_mean=x_mean,
        mix_inputs=mix_inputs,
        mix_pre=mix_pre,
        x2=x2,
        block_inputs=block_inputs,
        block_norm_stats=block_norm_stats,
        block_normed=block_normed,
        block_pre=block_pre,
        h_final=h,
    )
    return np.ascontiguousarray(y), trace


def forward(params: SFNNParams, config: SFNNConfig, x: np.ndarray):
    """Forward pass for one window, shape (L, N) -> (H, N)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatch(f"expected an (lookback, n_series) window, got shape {x.shape}")
    y, trace = forward_batch(params, config, x[None])
    return y[0], trace


def backward(
    params: SFNNParams,
    config: SFNNConfig,
    trace: ForwardTrace,
    output_grad: np.ndarray,
    need_input_grad: bool = True,
):
    """Gradients of the scalar loss whose output gradient is ``output_grad``.

    Returns (grads, input_grad). Gradients of the shared temporal tensors are
    summed over series (and over the batch); ``input_grad`` matches the shape
    the forward call received, or is None when ``need_input_grad`` is false.
    """
    if trace.config is not config and trace.config != config:
        raise TraceMismatch("trace was produced under a different configuration")
    g = np.asarray(output_grad, dtype=np.float64)
    single = g.ndim == 2
    if single:
        if trace.batch != 1:
            raise TraceMismatch(f"trace holds a batch of {trace.batch}, output_grad is one window")
        g = g[None]
    if g.shape != (trace.batch, config.horizon, config.n_series):
        raise TraceMismatch(
            f"output_grad shape {g.shape} does not match trace batch {trace.batch} and "
            f"(horizon, n_series) = ({config.horizon}, {config.n_series})"
        )

    b, l, n = trace.batch, config.lookback, config.n_series
    grads = SFNNParams.zeros_like(params)

    d_mean = g.sum(axis=1) if config.use_mean_centering else None  # (B, N)

    d_y2 = np.ascontiguousarray(g.transpose(0, 2, 1).reshape(b * n, config.horizon))
    grads.output_w += d_y2.T @ trace.h_final
    grads.output_b += d_y2.sum(axis=0)
    d_h = d_y2 @ params.output_w

    for i in range(config.num_blocks - 1, -1, -1):
        d_pre = d_h * (trace.block_pre[i] > 0.0)
        grads.block_ws[i] += d_pre.T @ trace.block_normed[i]
        grads.block_bs[i] += d_pre.sum(axis=0)
        d_g = d_pre @ params.block_ws[i]
        if config.use_layer_norm:
            mu, sigma = trace.block_norm_stats[i]
            gain = params.ln_gains[i] if config.layer_norm_affine else None
            d_in, d_gain, d_bias = _layer_norm_rows_backward(
                trace.block_inputs[i], mu, sigma, gain, d_g
            )
            if config.layer_norm_affine:
                grads.ln_gains[i] += d_gain
                grads.ln_biases[i] += d_bias
            d_h = d_h + d_in
        else:
            d_h = d_h + d_g

    grads.input_w += d_h.T @ trace.x2
    grads.input_b += d_h.sum(axis=0)

    need_work_grad = need_input_grad or config.use_series_mixing
    d_work = None
    if need_work_grad:
        d_x2 = d_h @ params.input_w
        d_work = d_x2.reshape(b, n, l).transpose(0, 2, 1)

    if config.use_series_mixing:
        d_flat = np.ascontiguousarray(d_work.reshape(b * l, n))
        for i in range(len(params.mix_ws) - 1, -1, -1):
            d_pre = d_flat * _selu_grad(trace.mix_pre[i])
            grads.mix_ws[i] += d_pre.T @ trace.mix_inputs[i]
            grads.mix_bs[i] += d_pre.sum(axis=0)
            d_flat = d_flat + d_pre @ params.mix_ws[i]
        d_work = d_flat.reshape(b, l, n)

    if not need_input_grad:
        return grads, None

    if config.use_mean_centering:
        # work = x - mean(x); output also re-adds mean(x).
        col = d_mean - d_work.sum(axis=1)
        d_x = d_work + col[:, None, :] / l
    else:
        d_x = d_work
    d_x = np.ascontiguousarray(d_x)
    return grads, (d_x[0] if single else d_x)


def _mse_scalar(pred: np.ndarray, target: np.ndarray):
    diff = pred - target
    loss = float((diff**2).mean())
    return loss, 2.0 * diff / diff.size


def gradient_check(
    config: SFNNConfig,
    seed: int = 0,
    tolerance: float = 1e-4,
    step: float = 1e-5,
) -> dict:
    """Compare analytic gradients of an MSE loss against central differences.

    The error measure per entry is |analytic - numeric| / max(1, |analytic|,
    |numeric|), reported as a per-tensor maximum plus an ``input`` entry for
    the input gradient. Intended for small configurations (dims <= 8).
    """
    rng = SeededRng(seed)
    params = init_params(config, rng)
    x = rng.standard_normal(config.lookback * config.n_series).reshape(
        config.lookback, config.n_series
    )
    target = rng.standard_normal(config.horizon * config.n_series).reshape(
        config.horizon, config.n_series
    )

    def loss_at(px, xx):
        y, _ = forward(px, config, xx)
        return _mse_scalar(y, target)[0]

    y, trace = forward(params, config, x)
    _, d_y = _mse_scalar(y, target)
    grads, d_x = backward(params, config, trace, d_y)

    def max_rel_err(analytic, numeric):
        denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
        return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0

    report = {}
    worst = 0.0
    for (name, tensor), (_, grad) in zip(params.named_tensors(), grads.named_tensors()):
        numeric = np.zeros_like(tensor)
        flat_t = tensor.reshape(-1)
        flat_n = numeric.reshape(-1)
        for idx in range(flat_t.size):
            orig = flat_t[idx]
            flat_t[idx] = orig + step
            up = loss_at(params, x)
            flat_t[idx] = orig - step
            down = loss_at(params, x)
            flat_t[idx] = orig
            flat_n[idx] = (up - down) / (2.0 * step)
        err = max_rel_err(grad, numeric)
        report[name] = err
        worst = max(worst, err)

    numeric_x = np.zeros_like(x)
    for idx in range(x.size):
        orig = x.reshape(-1)[idx]
        x.reshape(-1)[idx] = orig + step
        up = loss_at(params, x)
        x.reshape(-1)[idx] = orig - step
        down = loss_at(params, x)
        x.reshape(-1)[idx] = orig
        numeric_x.reshape(-1)[idx] = (up - down) / (2.0 * step)
    err = max_rel_err(d_x, numeric_x)
    report["input"] = err
    worst = max(worst, err)

    return {"per_group": report, "max_rel_err": worst, "passed": worst <= tolerance}


# --- checkpoint format -----------------------------------------------------
#
# Little-endian binary layout:
#   8 bytes   magic b"SFNNPAR1"
#   10 int32  lookback, horizon, n_series, hidden_width, num_blocks,
#             num_mixing_blocks, use_mean_centering, use_series_mixing,
#             use_layer_norm, layer_norm_affine
#   then every tensor in declaration order as raw float64 values.
# A sidecar "<path>.meta.txt" lists the same fields plus tensor shapes.

CHECKPOINT_MAGIC = b"SFNNPAR1"
_HEADER = struct.Struct("<10i")


def save_checkpoint(path, params: SFNNParams, config: SFNNConfig) -> None:
    path = Path(path)
    header = _HEADER.pack(
        config.lookback,
        config.horizon,
        config.n_series,
        config.width,
        config.num_blocks,
        config.num_mixing_blocks if config.use_series_mixing else 0,
        int(config.use_mean_centering),
        int(config.use_series_mixing),
        int(config.use_layer_norm),
        int(config.layer_norm_affine),
    )
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(header)
        for _, tensor in params.named_tensors():
            fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
    lines = [f"format={CHECKPOINT_MAGIC.decode()}"]
    for key, value in config.snapshot().items():
        lines.append(f"{key}={value}")
    for name, tensor in params.named_tensors():
        lines.append(f"tensor.{name}={'x'.join(str(s) for s in tensor.shape)}")
    Path(str(path) + ".meta.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[SFNNParams, SFNNConfig]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    fields = _HEADER.unpack_from(raw, len(CHECKPOINT_MAGIC))
    (lookback, horizon, n_series, width, num_blocks, num_mix, center, mixing, ln, affine) = fields
    config = SFNNConfig(
        lookback=lookback,
        horizon=horizon,
        n_series=n_series,
        hidden_width=width,
        num_blocks=num_blocks,
        use_mean_centering=bool(center),
        use_series_mixing=bool(mixing),
        num_mixing_blocks=max(1, num_mix),
        use_layer_norm=bool(ln),
        layer_norm_affine=bool(affine),
    )
    rng = SeededRng(0)
    params = init_params(config, rng)  # template for shapes only
    offset = len(CHECKPOINT_MAGIC) + _HEADER.size
    for _, tensor in params.named_tensors():
        count = tensor.size
        values = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        tensor[...] = values.reshape(tensor.shape)
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    return params, config
