"""Small deterministic CNN engine: shared conv/FC trunk with three linear heads.

Every conv and hidden FC layer is followed by batch normalization and a
randomized leaky ReLU. Parameters live in float32; the forward and backward
passes run in whatever dtype the parameters carry, so a float64 copy of a
state (``state.astype(np.float64)``) gives a gradient-checkable network.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    ConfigurationError,
    ConsistencyError,
    DimensionError,
    NumericError,
    ParameterError,
)

RRELU_LOWER = 1.0 / 8.0
RRELU_UPPER = 1.0 / 3.0
RRELU_EVAL_SLOPE = (RRELU_LOWER + RRELU_UPPER) / 2.0
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
N_HEADS = 3

LAYER_KINDS = ("dropout", "conv", "maxpool", "fc")


@dataclass(frozen=True)
class LayerSpec:
    """One entry of the trunk.

    ``size`` is the kernel size for conv/maxpool and the unit count for fc.
    ``p`` is the drop probability: of the input for ``dropout`` layers and of
    the layer output for ``fc`` layers.
    """

    kind: str
    size: int = 0
    channels: int = 0
    stride: int = 1
    pad: int = 0
    p: float = 0.0


@dataclass(frozen=True)
class NetworkConfig:
    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    n_classes: int
    n_heads: int = N_HEADS

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        layer_output_shapes(self)

    @property
    def feature_width(self) -> int:
        return [spec for spec in self.layers if spec.kind == "fc"][-1].size

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "layers": [asdict(spec) for spec in self.layers],
            "n_classes": self.n_classes,
            "n_heads": self.n_heads,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(
            input_shape=tuple(d["input_shape"]),
            layers=tuple(LayerSpec(**spec) for spec in d["layers"]),
            n_classes=int(d["n_classes"]),
            n_heads=int(d.get("n_heads", N_HEADS)),
        )

    def canonical_text(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _describe(i, spec):
    return f"layer {i} ({spec.kind})" if i >= 0 else "input"


def layer_output_shapes(config: NetworkConfig) -> list[tuple[int, ...]]:
    """Propagate shapes through the trunk, raising on the first bad layer pair."""
    if config.n_heads != N_HEADS:
        raise ConfigurationError(f"exactly {N_HEADS} output heads are required, got {config.n_heads}")
    if config.n_classes < 1:
        raise ConfigurationError(f"class count must be positive, got {config.n_classes}")
    if len(config.input_shape) != 3 or min(config.input_shape) < 1:
        raise ConfigurationError(f"input shape must be (channels, height, width), got {config.input_shape}")
    if not any(spec.kind == "fc" for spec in config.layers):
        raise ConfigurationError("the trunk needs at least one fc layer to produce features")

    shape: tuple[int, ...] = config.input_shape
    shapes = []
    prev = (-1, None)
    for i, spec in enumerate(config.layers):
        pair = f"{_describe(*prev)} -> {_describe(i, spec)}"
        if spec.kind not in LAYER_KINDS:
            raise ConfigurationError(f"{pair}: unknown layer kind {spec.kind!r}")
        if not 0.0 <= spec.p <= 1.0:
            raise ConfigurationError(f"{pair}: dropout probability {spec.p} outside [0, 1]")
        if spec.kind in ("conv", "maxpool"):
            if len(shape) != 3:
                raise ConfigurationError(f"{pair}: {spec.kind} needs a spatial input, got shape {shape}")
            if spec.size < 1 or spec.stride < 1 or spec.pad < 0:
                raise ConfigurationError(f"{pair}: bad kernel/stride/pad {spec.size}/{spec.stride}/{spec.pad}")
            if spec.kind == "maxpool" and spec.pad >= spec.size:
                raise ConfigurationError(f"{pair}: pooling pad must be smaller than the window")
            c, h, w = shape
            oh = (h + 2 * spec.pad - spec.size) // spec.stride + 1
            ow = (w + 2 * spec.pad - spec.size) // spec.stride + 1
            if h + 2 * spec.pad < spec.size or w + 2 * spec.pad < spec.size:
                raise ConfigurationError(f"{pair}: window {spec.size} larger than padded input {shape}")
            if spec.kind == "conv":
                if spec.channels < 1:
                    raise ConfigurationError(f"{pair}: conv needs a positive channel count")
                c = spec.channels
            shape = (c, oh, ow)
        elif spec.kind == "fc":
            if spec.size < 1:
                raise ConfigurationError(f"{pair}: fc needs a positive width")
            shape = (spec.size,)
        shapes.append(shape)
        prev = (i, spec)
    return shapes


def desk_config(n_classes: int, input_shape=(1, 32, 32)) -> NetworkConfig:
    return NetworkConfig(
        input_shape=input_shape,
        layers=(
            LayerSpec("conv", size=5, channels=16, stride=1, pad=2),
            LayerSpec("maxpool", size=2, stride=2),
            LayerSpec("conv", size=3, channels=32, stride=1, pad=1),
            LayerSpec("maxpool", size=2, stride=2),
            LayerSpec("fc", size=128, p=0.5),
            LayerSpec("fc", size=128, p=0.5),
        ),
        n_classes=n_classes,
    )


def paper_config(n_classes: int, input_shape=(1, 150, 220)) -> NetworkConfig:
    return NetworkConfig(
        input_shape=input_shape,
        layers=(
            LayerSpec("dropout", p=0.1),
            LayerSpec("conv", size=11, channels=96, stride=4, pad=0),
            LayerSpec("maxpool", size=3, stride=2),
            LayerSpec("conv", size=5, channels=256, stride=1, pad=2),
            LayerSpec("maxpool", size=3, stride=1, pad=2),
            LayerSpec("conv", size=3, channels=384, stride=1, pad=1),
            LayerSpec("conv", size=3, channels=384, stride=1, pad=1),
            LayerSpec("conv", size=3, channels=256, stride=1, pad=1),
            LayerSpec("maxpool", size=3, stride=2),
            LayerSpec("fc", size=2048, p=0.5),
            LayerSpec("fc", size=2048, p=0.5),
        ),
        n_classes=n_classes,
    )


PRESETS: dict[str, Callable[..., NetworkConfig]] = {"desk": desk_config, "paper": paper_config}


@dataclass
class NetworkState:
    config: NetworkConfig
    params: dict[str, np.ndarray]
    bn_running_stats: dict[str, np.ndarray]
    rng_seed: int = 0

    def copy(self) -> "NetworkState":
        return NetworkState(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.bn_running_stats.items()},
            self.rng_seed,
        )

    def astype(self, dtype) -> "NetworkState":
        return NetworkState(
            self.config,
            {k: v.astype(dtype) for k, v in self.params.items()},
            {k: v.astype(dtype) for k, v in self.bn_running_stats.items()},
            self.rng_seed,
        )

    def tensors(self) -> dict[str, np.ndarray]:
        """Every array of the state under a unique name (params + BN statistics)."""
        return {**self.params, **self.bn_running_stats}


@dataclass
class OptimizerState:
    learning_rate: float
    momentum: float
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_state(cls, state: NetworkState, learning_rate=0.01, momentum=0.9) -> "OptimizerState":
        if learning_rate < 0 or not 0 <= momentum < 1:
            raise ParameterError(f"bad optimizer settings lr={learning_rate} momentum={momentum}")
        return cls(learning_rate, momentum, {k: np.zeros_like(v) for k, v in state.params.items()})


def expected_tensor_shapes(config: NetworkConfig) -> dict[str, tuple[int, ...]]:
    """Names and shapes of every tensor a state of this config must hold."""
    shapes: dict[str, tuple[int, ...]] = {}
    in_shape: tuple[int, ...] = config.input_shape
    for i, (spec, out_shape) in enumerate(zip(config.layers, layer_output_shapes(config))):
        if spec.kind == "conv":
            shapes[f"{i}.weight"] = (spec.channels, in_shape[0], spec.size, spec.size)
        elif spec.kind == "fc":
            shapes[f"{i}.weight"] = (spec.size, int(np.prod(in_shape)))
        if spec.kind in ("conv", "fc"):
            width = out_shape[0]
            shapes[f"{i}.bias"] = (width,)
            shapes[f"{i}.bn.gamma"] = (width,)
            shapes[f"{i}.bn.beta"] = (width,)
            shapes[f"{i}.bn.running_mean"] = (width,)
            shapes[f"{i}.bn.running_var"] = (width,)
        in_shape = out_shape
    for h in range(config.n_heads):
        shapes[f"head{h}.weight"] = (config.n_classes, config.feature_width)
        shapes[f"head{h}.bias"] = (config.n_classes,)
    return shapes


def _is_running_stat(name: str) -> bool:
    return name.endswith(".running_mean") or name.endswith(".running_var")


def init_network(config: NetworkConfig, seed: int) -> NetworkState:
    """He-normal weights, zero biases, identity batch norm."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    stats: dict[str, np.ndarray] = {}
    for name, shape in expected_tensor_shapes(config).items():
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:]))
            std = np.float32(np.sqrt(2.0 / fan_in))
            params[name] = rng.standard_normal(shape, dtype=np.float32) * std
        elif name.endswith(".bn.gamma"):
            params[name] = np.ones(shape, np.float32)
        elif name.endswith(".running_var"):
            stats[name] = np.ones(shape, np.float32)
        elif _is_running_stat(name):
            stats[name] = np.zeros(shape, np.float32)
        else:
            params[name] = np.zeros(shape, np.float32)
    return NetworkState(config, params, stats, int(seed))


def make_dropout_mask(shape, p: float, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Raw {0, 1} keep-mask; each entry is 0 with probability ``p``. No rescaling."""
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"dropout probability {p} outside [0, 1]")
    return (rng.random(shape, dtype=np.float32) >= np.float32(p)).astype(dtype)


# --- layer primitives -------------------------------------------------------


def conv_forward(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * k * k)
    out = cols @ w.reshape(f, -1).T + b
    out = out.reshape(n, oh, ow, f).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (cols, xp.shape, x.shape, stride, pad)


def conv_backward(dout, w, cache, need_dx=True):
    cols, xp_shape, x_shape, stride, pad = cache
    n, f, oh, ow = dout.shape
    k = w.shape[2]
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, f)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ w.reshape(f, -1)).reshape(n, oh, ow, w.shape[1], k, k)
    dxp = np.zeros(xp_shape, dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += dcols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    h, wd = x_shape[2], x_shape[3]
    return dxp[:, :, pad : pad + h, pad : pad + wd], dw, db


def linear_forward(x, w, b):
    """y = x W^T + b for x of shape (N, in) and W of shape (out, in)."""
    return x @ w.T + b, x


def linear_backward(dout, w, x, need_dx=True):
    dw = dout.T @ x
    db = dout.sum(axis=0)
    return (dout @ w if need_dx else None), dw, db


def maxpool_forward(x, k, stride, pad):
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, oh, ow = win.shape[:4]
    flat = win.reshape(n, c, oh, ow, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, (arg, xp.shape, x.shape, k, stride, pad)


def maxpool_backward(dout, cache):
    arg, xp_shape, x_shape, k, stride, pad = cache
    oh, ow = dout.shape[2], dout.shape[3]
    dxp = np.zeros(xp_shape, dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            hit = arg == i * k + j
            dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += dout * hit
    h, w = x_shape[2], x_shape[3]
    return dxp[:, :, pad : pad + h, pad : pad + w]


def _as_rows(x):
    """View activations as (samples, channels) for per-channel batch norm."""
    if x.ndim == 4:
        return x.transpose(0, 2, 3, 1).reshape(-1, x.shape[1])
    return x


def _from_rows(rows, like):
    if like.ndim == 4:
        n, c, h, w = like.shape
        return rows.reshape(n, h, w, c).transpose(0, 3, 1, 2)
    return rows


def batchnorm_forward(x, gamma, beta, mode, running_mean=None, running_var=None):
    rows = _as_rows(x)
    if mode == "train":
        mean = rows.mean(axis=0)
        var = rows.var(axis=0)
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (rows - mean) * inv_std
    out = _from_rows(xhat * gamma + beta, x)
    return np.ascontiguousarray(out), (xhat, inv_std, gamma, mean, var, rows.shape[0])


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, _, _, m = cache
    drows = _as_rows(dout)
    dgamma = (drows * xhat).sum(axis=0)
    dbeta = drows.sum(axis=0)
    dxhat = drows * gamma
    dx = inv_std / m * (m * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return _from_rows(dx, dout), dgamma, dbeta


def rrelu_forward(x, mode, rng):
    if mode == "train":
        u = rng.random(x.shape, dtype=np.float32).astype(x.dtype)
        slope = RRELU_LOWER + (RRELU_UPPER - RRELU_LOWER) * u
    else:
        slope = x.dtype.type(RRELU_EVAL_SLOPE)
    local = np.where(x >= 0, x.dtype.type(1), slope)
    return x * local, local


# --- whole network ----------------------------------------------------------


@dataclass
class ForwardCache:
    config: NetworkConfig
    mode: str
    entries: list
    penultimate: np.ndarray
    batch_stats: dict[str, tuple[np.ndarray, np.ndarray, int]]


def _check_batch(state: NetworkState, batch: np.ndarray):
    if batch.ndim != 4 or tuple(batch.shape[1:]) != state.config.input_shape:
        raise DimensionError(
            f"batch shape {tuple(batch.shape)} does not match input (N, {', '.join(map(str, state.config.input_shape))})"
        )


def network_forward(state: NetworkState, batch: np.ndarray, mode: str = "eval", rng=None):
    """Run the trunk and the three heads.

    Returns ``(heads, penultimate, cache)`` where ``heads`` is a list of raw
    (pre-softmax) outputs of shape (N, C). Train mode needs ``rng`` for
    dropout masks and leaky-ReLU slopes; eval mode is deterministic.
    """
    if mode not in ("train", "eval"):
        raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and rng is None:
        raise ParameterError("train mode needs an rng")
    _check_batch(state, batch)
    if mode == "train" and batch.shape[0] < 2:
        raise DimensionError("batch normalization in train mode needs at least 2 samples")

    p = state.params
    dtype = p["head0.weight"].dtype
    x = batch.astype(dtype, copy=False)
    entries = []
    batch_stats = {}
    for i, spec in enumerate(state.config.layers):
        if spec.kind == "dropout":
            if mode == "train" and spec.p > 0:
                scale = dtype.type(1.0 / (1.0 - spec.p)) if spec.p < 1 else dtype.type(0)
                mask = make_dropout_mask(x.shape, spec.p, rng, dtype) * scale
                x = x * mask
                entries.append(("dropout", mask))
            else:
                entries.append(("identity", None))
            continue
        if spec.kind == "maxpool":
            x, c = maxpool_forward(x, spec.size, spec.stride, spec.pad)
            entries.append(("maxpool", c))
            continue
        if spec.kind == "conv":
            x, lin_cache = conv_forward(x, p[f"{i}.weight"], p[f"{i}.bias"], spec.stride, spec.pad)
            in_shape = None
        else:
            in_shape = x.shape
            x, lin_cache = linear_forward(x.reshape(x.shape[0], -1), p[f"{i}.weight"], p[f"{i}.bias"])
        x, bn_cache = batchnorm_forward(
            x,
            p[f"{i}.bn.gamma"],
            p[f"{i}.bn.beta"],
            mode,
            state.bn_running_stats[f"{i}.bn.running_mean"].astype(dtype, copy=False),
            state.bn_running_stats[f"{i}.bn.running_var"].astype(dtype, copy=False),
        )
        if mode == "train":
            batch_stats[f"{i}.bn"] = (bn_cache[3], bn_cache[4], bn_cache[5])
        x, slope = rrelu_forward(x, mode, rng)
        mask = None
        if spec.kind == "fc" and spec.p > 0 and mode == "train":
            scale = dtype.type(1.0 / (1.0 - spec.p)) if spec.p < 1 else dtype.type(0)
            mask = make_dropout_mask(x.shape, spec.p, rng, dtype) * scale
            x = x * mask
        entries.append((spec.kind, (lin_cache, in_shape, bn_cache, slope, mask)))

    penultimate = x
    heads = [linear_forward(penultimate, p[f"head{h}.weight"], p[f"head{h}.bias"])[0] for h in range(state.config.n_heads)]
    cache = ForwardCache(state.config, mode, entries, penultimate, batch_stats)
    return heads, penultimate, cache


def network_backward(state: NetworkState, cache: ForwardCache, head_grads: Sequence[np.ndarray]) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every learnable parameter.

    ``head_grads[h]`` is dLoss/d(head h output). The trunk receives the sum
    of all three heads' contributions.
    """
    if cache.mode != "train":
        raise ConsistencyError("backward needs the cache of a train-mode forward pass")
    if cache.config != state.config:
        raise ConsistencyError("cache was produced by a network with a different configuration")
    if len(head_grads) != state.config.n_heads:
        raise DimensionError(f"expected {state.config.n_heads} head gradients, got {len(head_grads)}")
    p = state.params
    pen = cache.penultimate
    grads: dict[str, np.ndarray] = {}
    dx = np.zeros_like(pen)
    for h, g in enumerate(head_grads):
        g = np.asarray(g, dtype=pen.dtype)
        if g.shape != (pen.shape[0], state.config.n_classes):
            raise DimensionError(f"head {h} gradient has shape {g.shape}, expected {(pen.shape[0], state.config.n_classes)}")
        dpen, grads[f"head{h}.weight"], grads[f"head{h}.bias"] = linear_backward(g, p[f"head{h}.weight"], pen)
        dx = dx + dpen

    first_learnable = min(i for i, s in enumerate(state.config.layers) if s.kind in ("conv", "fc"))
    for i in range(len(state.config.layers) - 1, -1, -1):
        kind, c = cache.entries[i]
        if kind == "identity":
            continue
        if kind == "dropout":
            dx = dx * c
            continue
        if kind == "maxpool":
            dx = maxpool_backward(dx, c)
            continue
        lin_cache, in_shape, bn_cache, slope, mask = c
        if mask is not None:
            dx = dx * mask
        dx = dx * slope
        dx, grads[f"{i}.bn.gamma"], grads[f"{i}.bn.beta"] = batchnorm_backward(dx, bn_cache)
        need_dx = i > first_learnable
        if kind == "conv":
            dx, grads[f"{i}.weight"], grads[f"{i}.bias"] = conv_backward(dx, p[f"{i}.weight"], lin_cache, need_dx)
        else:
            dx, grads[f"{i}.weight"], grads[f"{i}.bias"] = linear_backward(dx, p[f"{i}.weight"], lin_cache, need_dx)
            if dx is not None:
                dx = dx.reshape(in_shape)
        if dx is None:
            break
    return grads


def update_running_stats(state: NetworkState, cache: ForwardCache, momentum: float = BN_MOMENTUM):
    """Fold the batch statistics of a train-mode pass into the running averages."""
    for key, (mean, var, m) in cache.batch_stats.items():
        rm = state.bn_running_stats[f"{key}.running_mean"]
        rv = state.bn_running_stats[f"{key}.running_var"]
        unbiased = var * (m / (m - 1)) if m > 1 else var
        rm *= 1 - momentum
        rm += momentum * mean.astype(rm.dtype)
        rv *= 1 - momentum
        rv += momentum * unbiased.astype(rv.dtype)


def nesterov_step(state: NetworkState, opt: OptimizerState, grads: dict[str, np.ndarray]):
    """In-place Nesterov momentum update: v <- mu*v + g; w <- w - lr*(g + mu*v)."""
    if set(grads) != set(state.params):
        missing = sorted(set(state.params) ^ set(grads))
        raise ConsistencyError(f"gradient map does not match parameters: {missing[:5]}")
    for name, g in grads.items():
        if g.shape != state.params[name].shape:
            raise DimensionError(f"gradient {name} has shape {g.shape}, parameter has {state.params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in tensor {name}")
    lr, mu = opt.learning_rate, opt.momentum
    for name, g in grads.items():
        w = state.params[name]
        v = opt.velocity[name]
        g = g.astype(w.dtype, copy=False)
        v *= mu
        v += g
        w -= lr * (g + mu * v)
    return state, opt


def sample_coords(params: dict[str, np.ndarray], n: int, rng: np.random.Generator) -> list[tuple[str, int]]:
    """Uniformly sample ``n`` distinct scalar coordinates across all tensors."""
    names = sorted(params)
    sizes = np.array([params[k].size for k in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    flat = rng.choice(int(offsets[-1]), size=min(n, int(offsets[-1])), replace=False)
    coords = []
    for f in np.sort(flat):
        t = int(np.searchsorted(offsets, f, side="right") - 1)
        coords.append((names[t], int(f - offsets[t])))
    return coords


def activation_pattern(cache: ForwardCache) -> bytes:
    """Fingerprint of every piecewise choice in a forward pass.

    Covers leaky-ReLU input signs and max-pool winners. Two passes with equal
    patterns lie on the same smooth piece of the network function.
    """
    parts = []
    for kind, c in cache.entries:
        if kind == "maxpool":
            parts.append(c[0].astype(np.int16).tobytes())
        elif kind in ("conv", "fc"):
            parts.append(np.packbits(c[3] == 1).tobytes())
    return b"".join(parts)


def kink_free_coords(pattern_fn, params: dict[str, np.ndarray], candidates, n: int, h: float = 1e-3):
    """First ``n`` candidates whose +-h perturbation keeps ``pattern_fn`` unchanged.

    Central differences straddling a kink measure a chord, not a derivative.
    Returns ``(coords, n_skipped)``.
    """
    base = pattern_fn(params)
    kept, skipped = [], 0
    for name, idx in candidates:
        arr = params[name].reshape(-1)
        orig = arr[idx]
        smooth = True
        for delta in (h, -h):
            arr[idx] = orig + delta
            smooth = smooth and pattern_fn(params) == base
        arr[idx] = orig
        if smooth:
            kept.append((name, idx))
            if len(kept) == n:
                break
        else:
            skipped += 1
    return kept, skipped


def finite_diff_check(loss_fn, params: dict[str, np.ndarray], analytic: dict[str, np.ndarray], coords, h: float = 1e-3) -> float:
    """Max over ``coords`` of |analytic - central difference| / max(1, |analytic|).

    ``loss_fn(params)`` must be deterministic; ``params`` is perturbed in place
    and restored.
    """
    if h <= 0:
        raise ParameterError("step h must be positive")
    worst = 0.0
    for name, idx in coords:
        arr = params[name].reshape(-1)
        orig = arr[idx]
        arr[idx] = orig + h
        f_plus = float(loss_fn(params))
        arr[idx] = orig - h
        f_minus = float(loss_fn(params))
        arr[idx] = orig
        numeric = (f_plus - f_minus) / (2 * h)
        a = float(analytic[name].reshape(-1)[idx])
        worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
