"""From-scratch convolutional network with explicit backpropagation.

Two variants share one backbone: three 3x3 conv + batch-norm + ReLU +
2x2 max-pool blocks, then two fully connected layers. The classifier
head emits 11 softmax classes (empty + ten radii); the regression head
emits one real (orientation, scaled to [-1, 1] internally). Training
uses ADAM with seeded shuffling and early stopping on validation loss.

Everything is plain numpy: convolutions run as im2col matrix products,
gradients are exact (finite-difference checked in the test suite), and
single-threaded runs are bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ConfigMismatchError,
    ParameterError,
    TruncatedFileError,
)

N_CLASSES = 11
BN_EPS = 1e-5
BN_MOMENTUM = 0.9
GAMMA_SCALE = 60.0        # degrees mapped to [-1, 1] for the regression target

CHECKPOINT_MAGIC = b"SMK1"


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class NetworkConfig:
    conv_channels: tuple = (16, 32, 64)
    kernel: int = 3
    fc1_units: int = 128
    output_units: int = N_CLASSES
    batch_norm: bool = True
    input_shape: tuple = (1, 40, 106)

    def __post_init__(self):
        if self.output_units not in (N_CLASSES, 1):
            raise ParameterError(f"output_units must be {N_CLASSES} or 1, got {self.output_units}")
        if self.kernel != 3:
            raise ParameterError("only 3x3 kernels are supported")

    @property
    def is_classifier(self) -> bool:
        return self.output_units == N_CLASSES

    def feature_dims(self):
        """(channels, height, width) after each pooling stage."""
        _, h, w = self.input_shape
        dims = []
        for ch in self.conv_channels:
            h, w = h // 2, w // 2
            dims.append((ch, h, w))
        return dims

    @property
    def flat_features(self) -> int:
        ch, h, w = self.feature_dims()[-1]
        return ch * h * w


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 100
    patience: int = 20
    batch_size: int = 64
    seed: int = 0
    class_weights: tuple | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ParameterError(f"lr must be > 0, got {self.lr}")
        if self.patience > self.max_epochs:
            raise ParameterError("patience must not exceed max_epochs")


def param_shapes(cfg: NetworkConfig) -> dict:
    """Ordered parameter name -> shape map; also the checkpoint layout."""
    shapes = {}
    in_ch = cfg.input_shape[0]
    for i, out_ch in enumerate(cfg.conv_channels, start=1):
        shapes[f"conv{i}_w"] = (out_ch, in_ch, cfg.kernel, cfg.kernel)
        if cfg.batch_norm:
            shapes[f"bn{i}_gamma"] = (out_ch,)
            shapes[f"bn{i}_beta"] = (out_ch,)
        in_ch = out_ch
    shapes["fc1_w"] = (cfg.flat_features, cfg.fc1_units)
    shapes["fc1_b"] = (cfg.fc1_units,)
    shapes["fc2_w"] = (cfg.fc1_units, cfg.output_units)
    shapes["fc2_b"] = (cfg.output_units,)
    return shapes


def param_count(cfg: NetworkConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def init_params(cfg: NetworkConfig, seed: int, dtype=np.float32) -> dict:
    """Fan-in-scaled uniform init for conv/FC weights; BN scale 1, shift 0."""
    rng = np.random.default_rng(np.random.SeedSequence((0x1817, seed)))
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith("_w"):
            fan_in = int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]
            bound = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        elif name.endswith("_gamma"):
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return params


def init_bn_state(cfg: NetworkConfig, dtype=np.float32) -> dict:
    state = {}
    if cfg.batch_norm:
        for i, ch in enumerate(cfg.conv_channels, start=1):
            state[f"bn{i}_mean"] = np.zeros(ch, dtype=dtype)
            state[f"bn{i}_var"] = np.ones(ch, dtype=dtype)
    return state


# ---------------------------------------------------------------------------
# layers

def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    # x (N, C, H, W) padded by k//2 -> (N*H*W, C*k*k), stride 1
    n, c, h, w = x.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    # (N, C, H, W, k, k) -> (N, H, W, C, k, k)
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * k * k)


def conv_forward(x: np.ndarray, w: np.ndarray):
    n, _, h, wd = x.shape
    f = w.shape[0]
    cols = _im2col(x, w.shape[-1])
    out = cols @ w.reshape(f, -1).T
    out = out.reshape(n, h, wd, f).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (cols, x.shape, w)


def conv_backward(dout: np.ndarray, cache):
    cols, x_shape, w = cache
    n, c, h, wd = x_shape
    f, _, k, _ = w.shape
    dmat = dout.transpose(0, 2, 3, 1).reshape(-1, f)
    dw = (dmat.T @ cols).reshape(w.shape)
    dcols = dmat @ w.reshape(f, -1)
    # col2im scatter-add over the k*k taps
    pad = k // 2
    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=dout.dtype)
    dcols = dcols.reshape(n, h, wd, c, k, k)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + h, j : j + wd] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, pad : pad + h, pad : pad + wd]
    return dx, dw


def bn_forward(x, gamma, beta, run_mean, run_var, training: bool):
    if training:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        run_mean *= BN_MOMENTUM
        run_mean += (1.0 - BN_MOMENTUM) * mean
        run_var *= BN_MOMENTUM
        run_var += (1.0 - BN_MOMENTUM) * var
    else:
        mean, var = run_mean, run_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return y, (xhat, inv_std, gamma, training)


def bn_backward(dout, cache):
    xhat, inv_std, gamma, training = cache
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    if not training:
        dx = dout * (gamma * inv_std)[None, :, None, None]
        return dx, dgamma, dbeta
    m = dout.shape[0] * dout.shape[2] * dout.shape[3]
    dxhat = dout * gamma[None, :, None, None]
    dx = (
        dxhat
        - dxhat.mean(axis=(0, 2, 3))[None, :, None, None]
        - xhat * (dxhat * xhat).mean(axis=(0, 2, 3))[None, :, None, None]
    ) * inv_std[None, :, None, None]
    return dx, dgamma, dbeta


def maxpool_forward(x):
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    xc = x[:, :, : h2 * 2, : w2 * 2]
    xr = xc.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    idx = xr.argmax(axis=-1)             # first maximum wins on ties
    out = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape)


def maxpool_backward(dout, cache):
    idx, x_shape = cache
    n, c, h, w = x_shape
    h2, w2 = h // 2, w // 2
    dxr = np.zeros((n, c, h2, w2, 4), dtype=dout.dtype)
    np.put_along_axis(dxr, idx[..., None], dout[..., None], axis=-1)
    dxc = dxr.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2 * 2, w2 * 2)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, :, : h2 * 2, : w2 * 2] = dxc
    return dx


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# network

def forward(cfg: NetworkConfig, params: dict, batch: np.ndarray, bn_state: dict | None = None,
            training: bool = False):
    """Run the network; returns (outputs, cache).

    Outputs are softmax probabilities for the classifier and raw reals
    for the regression head. The cache feeds backward(); with
    training=True batch-norm running statistics are updated in place.
    """
    x = np.asarray(batch)
    expected = (x.shape[0],) + tuple(cfg.input_shape)
    if x.ndim != 4 or x.shape != expected:
        raise ParameterError(f"batch shape mismatch: expected {expected}, got {x.shape}")
    if bn_state is None:
        bn_state = init_bn_state(cfg, dtype=x.dtype)
    caches = []
    for i in range(1, len(cfg.conv_channels) + 1):
        x, c_conv = conv_forward(x, params[f"conv{i}_w"])
        if cfg.batch_norm:
            x, c_bn = bn_forward(
                x, params[f"bn{i}_gamma"], params[f"bn{i}_beta"],
                bn_state[f"bn{i}_mean"], bn_state[f"bn{i}_var"], training,
            )
        else:
            c_bn = None
        relu_mask = x > 0
        x = x * relu_mask
        x, c_pool = maxpool_forward(x)
        caches.append((c_conv, c_bn, relu_mask, c_pool))
    conv_out_shape = None
    flat = x.reshape(x.shape[0], -1)
    conv_out_shape = x.shape
    h1 = flat @ params["fc1_w"] + params["fc1_b"]
    h1_mask = h1 > 0
    h1r = h1 * h1_mask
    logits = h1r @ params["fc2_w"] + params["fc2_b"]
    outputs = softmax(logits) if cfg.is_classifier else logits
    cache = {
        "cfg": cfg,
        "blocks": caches,
        "conv_out_shape": conv_out_shape,
        "flat": flat,
        "h1_mask": h1_mask,
        "h1r": h1r,
        "params": params,
    }
    return outputs, cache


def backward(cache: dict, grad_out: np.ndarray) -> dict:
    """Exact parameter gradients from a forward cache.

    grad_out is the gradient w.r.t. the final pre-activation outputs:
    the logits for the classifier (softmax is fused into the loss
    gradient) and the raw outputs for the regression head.
    """
    cfg: NetworkConfig = cache["cfg"]
    params = cache["params"]
    grads = {}
    dh1r = grad_out @ params["fc2_w"].T
    grads["fc2_w"] = cache["h1r"].T @ grad_out
    grads["fc2_b"] = grad_out.sum(axis=0)
    dh1 = dh1r * cache["h1_mask"]
    grads["fc1_w"] = cache["flat"].T @ dh1
    grads["fc1_b"] = dh1.sum(axis=0)
    dx = (dh1 @ params["fc1_w"].T).reshape(cache["conv_out_shape"])
    for i in range(len(cfg.conv_channels), 0, -1):
        c_conv, c_bn, relu_mask, c_pool = cache["blocks"][i - 1]
        dx = maxpool_backward(dx, c_pool)
        dx = dx * relu_mask
        if cfg.batch_norm:
            dx, dgamma, dbeta = bn_backward(dx, c_bn)
            grads[f"bn{i}_gamma"] = dgamma
            grads[f"bn{i}_beta"] = dbeta
        dx, dw = conv_backward(dx, c_conv)
        grads[f"conv{i}_w"] = dw
    return grads


def loss(outputs: np.ndarray, targets: np.ndarray, weights: np.ndarray | None = None,
         classification: bool | None = None) -> float:
    """Weighted cross-entropy (classification) or MSE (regression)."""
    if not np.all(np.isfinite(outputs)):
        raise ParameterError("non-finite network outputs")
    if classification is None:
        classification = outputs.ndim == 2 and outputs.shape[1] > 1
    if classification:
        targets = np.asarray(targets, dtype=int)
        n = outputs.shape[0]
        p = np.clip(outputs[np.arange(n), targets], 1e-300, None)
        w = np.ones(outputs.shape[1]) if weights is None else np.asarray(weights)
        return float(np.mean(w[targets] * -np.log(p)))
    diff = outputs.reshape(-1) - np.asarray(targets, dtype=outputs.dtype).reshape(-1)
    return float(np.mean(diff * diff))


def loss_gradient(outputs: np.ndarray, targets: np.ndarray,
                  weights: np.ndarray | None = None,
                  classification: bool | None = None) -> np.ndarray:
    """Gradient of loss() w.r.t. the pre-activation outputs (see backward)."""
    if classification is None:
        classification = outputs.ndim == 2 and outputs.shape[1] > 1
    n = outputs.shape[0]
    if classification:
        targets = np.asarray(targets, dtype=int)
        onehot = np.zeros_like(outputs)
        onehot[np.arange(n), targets] = 1.0
        w = np.ones(outputs.shape[1]) if weights is None else np.asarray(weights)
        return (outputs - onehot) * w[targets][:, None].astype(outputs.dtype) / n
    diff = outputs.reshape(n, -1) - np.asarray(targets, dtype=outputs.dtype).reshape(n, -1)
    return 2.0 * diff / n


def class_weights(counts) -> np.ndarray:
    """w_k = N_total / (K * n_k), from per-class training counts."""
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts <= 0):
        raise ParameterError(f"all class counts must be > 0, got {counts.tolist()}")
    return counts.sum() / (counts.size * counts)


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainResult:
    cfg: NetworkConfig
    params: dict
    bn_state: dict
    history: list          # per epoch: {"epoch", "train_loss", "val_loss"}
    best_epoch: int


def _batched_outputs(cfg, params, bn_state, x, batch_size=256):
    outs = []
    for lo in range(0, x.shape[0], batch_size):
        out, _ = forward(cfg, params, x[lo : lo + batch_size], bn_state, training=False)
        outs.append(out)
    return np.concatenate(outs, axis=0)


def evaluate_loss(cfg, params, bn_state, x, targets, weights=None) -> float:
    outputs = _batched_outputs(cfg, params, bn_state, x)
    return loss(outputs, targets, weights, classification=cfg.is_classifier)


def train(model_kind: str, train_data, val_data, tc: TrainConfig,
          cfg: NetworkConfig | None = None, dtype=np.float32, verbose: bool = False) -> TrainResult:
    """ADAM training with early stopping; returns best-validation params.

    model_kind is "class" or "orient"; train_data and val_data are
    (inputs, targets) with inputs shaped (N, 1, 40, 106). Classification
    targets are integer labels, orientation targets are degrees (scaled
    by 1/60 internally). Deterministic for a fixed seed.
    """
    if model_kind not in ("class", "orient"):
        raise ParameterError(f"model_kind must be 'class' or 'orient', got {model_kind!r}")
    classification = model_kind == "class"
    if cfg is None:
        cfg = NetworkConfig(output_units=N_CLASSES if classification else 1)
    elif cfg.is_classifier != classification:
        raise ParameterError("network config output_units does not match model_kind")

    x_train, y_train = train_data
    x_val, y_val = val_data
    if x_train.shape[0] == 0 or x_val.shape[0] == 0:
        raise ParameterError("training and validation sets must be non-empty")
    x_train = np.ascontiguousarray(x_train, dtype=dtype)
    x_val = np.ascontiguousarray(x_val, dtype=dtype)
    if classification:
        t_train = np.asarray(y_train, dtype=int)
        t_val = np.asarray(y_val, dtype=int)
        weights = None if tc.class_weights is None else np.asarray(tc.class_weights)
    else:
        t_train = np.asarray(y_train, dtype=dtype) / GAMMA_SCALE
        t_val = np.asarray(y_val, dtype=dtype) / GAMMA_SCALE
        weights = None

    params = init_params(cfg, tc.seed, dtype=dtype)
    bn_state = init_bn_state(cfg, dtype=dtype)
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(vv) for k, vv in params.items()}
    rng = np.random.default_rng(np.random.SeedSequence((0xADA, tc.seed)))

    history = []
    best_val = np.inf
    best_epoch = -1
    best_params = {k: p.copy() for k, p in params.items()}
    best_bn = {k: s.copy() for k, s in bn_state.items()}
    stall = 0
    step = 0
    for epoch in range(tc.max_epochs):
        order = rng.permutation(x_train.shape[0])
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, order.size, tc.batch_size):
            idx = order[lo : lo + tc.batch_size]
            xb, tb = x_train[idx], t_train[idx]
            outputs, cache = forward(cfg, params, xb, bn_state, training=True)
            batch_loss = loss(outputs, tb, weights, classification)
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(epoch)
            grad = loss_gradient(outputs, tb, weights, classification)
            grads = backward(cache, grad)
            step += 1
            _adam_update(params, grads, m, v, step, tc)
            epoch_loss += batch_loss
            n_batches += 1
        val_loss = evaluate_loss(cfg, params, bn_state, x_val, t_val, weights)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(epoch)
        history.append({
            "epoch": epoch,
            "train_loss": epoch_loss / n_batches,
            "val_loss": float(val_loss),
        })
        if verbose:
            print(f"epoch {epoch:3d}  train {epoch_loss / n_batches:.5f}  val {val_loss:.5f}")
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = {k: p.copy() for k, p in params.items()}
            best_bn = {k: s.copy() for k, s in bn_state.items()}
            stall = 0
        else:
            stall += 1
            if stall >= max(tc.patience, 1):
                break
    return TrainResult(cfg, best_params, best_bn, history, best_epoch)


def _adam_update(params, grads, m, v, step, tc: TrainConfig):
    b1c = 1.0 - tc.beta1**step
    b2c = 1.0 - tc.beta2**step
    for k in params:
        g = grads[k]
        m[k] = tc.beta1 * m[k] + (1.0 - tc.beta1) * g
        v[k] = tc.beta2 * v[k] + (1.0 - tc.beta2) * (g * g)
        params[k] -= tc.lr * (m[k] / b1c) / (np.sqrt(v[k] / b2c) + tc.eps)


# ---------------------------------------------------------------------------
# inference helpers

def predict_proba(result: TrainResult, x: np.ndarray) -> np.ndarray:
    return _batched_outputs(result.cfg, result.params, result.bn_state,
                            np.ascontiguousarray(x, dtype=np.float32))


def predict_classes(result: TrainResult, x: np.ndarray) -> np.ndarray:
    return predict_proba(result, x).argmax(axis=1)


def predict_gamma_deg(result: TrainResult, x: np.ndarray) -> np.ndarray:
    out = _batched_outputs(result.cfg, result.params, result.bn_state,
                           np.ascontiguousarray(x, dtype=np.float32))
    return out.reshape(-1) * GAMMA_SCALE


# ---------------------------------------------------------------------------
# checkpoint format: b"SMK1" | u32 header length | JSON header | f32 arrays

def save_checkpoint(path, result: TrainResult) -> None:
    entries = [{"name": k, "shape": list(v.shape), "kind": "param"}
               for k, v in result.params.items()]
    entries += [{"name": k, "shape": list(v.shape), "kind": "state"}
                for k, v in result.bn_state.items()]
    header = {
        "version": 1,
        "config": asdict(result.cfg),
        "best_epoch": result.best_epoch,
        "entries": entries,
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(np.uint32(len(blob)).tobytes())
        fh.write(blob)
        for k, _ in ((e["name"], e) for e in entries):
            src = result.params.get(k, result.bn_state.get(k))
            fh.write(np.ascontiguousarray(src, dtype="<f4").tobytes())


def load_checkpoint(path, expected_cfg: NetworkConfig | None = None) -> TrainResult:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"not a checkpoint file: bad magic {raw[:4]!r}")
    header_len = int(np.frombuffer(raw[4:8], dtype="<u4")[0])
    header = json.loads(raw[8 : 8 + header_len].decode())
    cfg_dict = dict(header["config"])
    for key in ("conv_channels", "input_shape"):
        cfg_dict[key] = tuple(cfg_dict[key])
    cfg = NetworkConfig(**cfg_dict)
    if expected_cfg is not None and cfg != expected_cfg:
        raise ConfigMismatchError(f"checkpoint config {cfg} != expected {expected_cfg}")
    params, bn_state = {}, {}
    offset = 8 + header_len
    for entry in header["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        end = offset + 4 * count
        if end > len(raw):
            raise TruncatedFileError(f"checkpoint truncated in entry {entry['name']}")
        arr = np.frombuffer(raw[offset:end], dtype="<f4").reshape(shape).copy()
        (params if entry["kind"] == "param" else bn_state)[entry["name"]] = arr
        offset = end
    return TrainResult(cfg, params, bn_state, history=[], best_epoch=header.get("best_epoch", -1))
