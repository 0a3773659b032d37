"""LeNet5-style detector/classifier over 42x42x2 binary patches.

Layer plan (default architecture)::

    conv 5x5, 2->6, tanh     42 -> 38
    maxpool 2x2              38 -> 19
    conv 5x5, 6->16, tanh    19 -> 15
    maxpool 2x2 (floor)      15 -> 7
    dense 784 -> 120, tanh
    dense 120 -> 84, tanh
    dense 84 -> C+5          sigmoid on the C class outputs, linear on the rest

Output order is ``[o_0 .. o_{C-1}, bb_conf, t_x, t_y, t_w, t_h]``.
Weights are a plain ``dict`` of numpy arrays keyed ``"<layer>.w"`` /
``"<layer>.b"``; conv kernels are ``(out, in, k, k)``, dense matrices are
``(in, out)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CLASS_NAMES = ("background", "car/van", "bus", "bike", "truck")


@dataclass(frozen=True)
class Architecture:
    in_channels: int = 2
    side: int = 42
    kernel: int = 5
    conv: tuple = (6, 16)
    hidden: tuple = (120, 84)
    n_classes: int = 5

    @property
    def n_outputs(self) -> int:
        return self.n_classes + 5

    def spatial(self) -> list[int]:
        """Spatial side after each conv and pool stage."""
        sizes, s = [], self.side
        for _ in self.conv:
            s = s - self.kernel + 1
            sizes.append(s)
            s = s // 2
            sizes.append(s)
        return sizes

    @property
    def flat(self) -> int:
        return self.conv[-1] * self.spatial()[-1] ** 2

    def layer_names(self) -> list[str]:
        names = [f"conv{i + 1}" for i in range(len(self.conv))]
        names += [f"fc{i + 1}" for i in range(len(self.hidden))]
        return names + ["out"]

    def shapes(self) -> dict[str, tuple]:
        shapes = {}
        cin = self.in_channels
        for i, f in enumerate(self.conv):
            shapes[f"conv{i + 1}.w"] = (f, cin, self.kernel, self.kernel)
            shapes[f"conv{i + 1}.b"] = (f,)
            cin = f
        fin = self.flat
        for i, h in enumerate(self.hidden):
            shapes[f"fc{i + 1}.w"] = (fin, h)
            shapes[f"fc{i + 1}.b"] = (h,)
            fin = h
        shapes["out.w"] = (fin, self.n_outputs)
        shapes["out.b"] = (self.n_outputs,)
        return shapes


DEFAULT_ARCH = Architecture()
TINY_ARCH = Architecture(conv=(2, 4), hidden=(8,))


def param_count(weights_or_arch) -> int:
    if isinstance(weights_or_arch, Architecture):
        return int(sum(np.prod(s) for s in weights_or_arch.shapes().values()))
    return int(sum(v.size for v in weights_or_arch.values()))


def inference_ops(arch: Architecture = DEFAULT_ARCH) -> int:
    """Multiplies + adds for one patch: each of the k inputs of a neuron
    costs one multiply and one add onto the bias-initialised accumulator."""
    ops, cin = 0, arch.in_channels
    sizes = arch.spatial()
    for i, f in enumerate(arch.conv):
        out = sizes[2 * i]
        ops += 2 * out * out * f * cin * arch.kernel ** 2
        cin = f
    fin = arch.flat
    for h in tuple(arch.hidden) + (arch.n_outputs,):
        ops += 2 * fin * h
        fin = h
    return ops


def init_weights(arch: Architecture = DEFAULT_ARCH, seed: int = 0,
                 dtype=np.float64) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in arch.shapes().items():
        if name.endswith(".b"):
            weights[name] = np.zeros(shape, dtype=dtype)
            continue
        if len(shape) == 4:
            rf = shape[2] * shape[3]
            fan_in, fan_out = shape[1] * rf, shape[0] * rf
        else:
            fan_in, fan_out = shape
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        weights[name] = rng.uniform(-lim, lim, size=shape).astype(dtype)
    return weights


def zero_weights(arch: Architecture = DEFAULT_ARCH, dtype=np.float64) -> dict[str, np.ndarray]:
    return {name: np.zeros(shape, dtype=dtype) for name, shape in arch.shapes().items()}


def infer_architecture(weights: dict, side: int = 42) -> Architecture:
    """Recover the layer plan from weight shapes (input side is not encoded
    in the shapes and defaults to 42)."""
    convs = sorted(k for k in weights if k.startswith("conv") and k.endswith(".w"))
    fcs = sorted(k for k in weights if k.startswith("fc") and k.endswith(".w"))
    c1 = weights[convs[0]]
    arch = Architecture(
        in_channels=c1.shape[1], side=side, kernel=c1.shape[2],
        conv=tuple(weights[k].shape[0] for k in convs),
        hidden=tuple(weights[k].shape[1] for k in fcs),
        n_classes=weights["out.w"].shape[1] - 5)
    check_weights(weights, arch)
    return arch


def check_weights(weights: dict, arch: Architecture) -> None:
    expected = arch.shapes()
    if set(weights) - {k for k in weights if k.startswith("meta.")} != set(expected):
        raise ValueError(f"weight names {sorted(weights)} do not match {sorted(expected)}")
    for name, shape in expected.items():
        if weights[name].shape != shape:
            raise ValueError(f"{name}: shape {weights[name].shape}, expected {shape}")


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

class Outputs(NamedTuple):
    raw: np.ndarray         # (N, C+5) pre-activation outputs
    class_conf: np.ndarray  # (N, C) sigmoid confidences
    bb_conf: np.ndarray     # (N,)
    t: np.ndarray           # (N, 4) t_x, t_y, t_w, t_h


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def split_outputs(z: np.ndarray, n_classes: int) -> Outputs:
    return Outputs(z, sigmoid(z[:, :n_classes]), z[:, n_classes], z[:, n_classes + 1:n_classes + 5])


def _conv(x, w, b):
    k = w.shape[-1]
    cols = sliding_window_view(x, (k, k), axis=(2, 3))          # N, C, H', W', k, k
    N, C, Ho, Wo = cols.shape[:4]
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * k * k)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.reshape(N, Ho, Wo, -1).transpose(0, 3, 1, 2), cols


def _conv_backward(dout, cols, x_shape, w, need_dx):
    N, F, Ho, Wo = dout.shape
    k = w.shape[-1]
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, F)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    C = x_shape[1]
    dcols = (d2 @ w.reshape(F, -1)).reshape(N, Ho, Wo, C, k, k)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + Ho, j:j + Wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dx, dw, db


def _pool(a):
    N, C, H, W = a.shape
    h, w = H // 2, W // 2
    win = a[:, :, :2 * h, :2 * w].reshape(N, C, h, 2, w, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(N, C, h, w, 4)
    arg = win.argmax(axis=-1)  # first maximum in scan order
    return np.take_along_axis(win, arg[..., None], axis=-1)[..., 0], arg


def _pool_backward(dout, arg, in_shape):
    N, C, H, W = in_shape
    h, w = dout.shape[2:]
    dwin = np.zeros((N, C, h, w, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dwin = dwin.reshape(N, C, h, w, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, 2 * h, 2 * w)
    da = np.zeros(in_shape, dtype=dout.dtype)
    da[:, :, :2 * h, :2 * w] = dwin
    return da


def forward(weights: dict, patches: np.ndarray, arch: Architecture | None = None,
            keep_cache: bool = False, counter=None):
    """Run the network on ``patches`` of shape (N, 2, side, side) (a single
    (2, side, side) patch is accepted too).

    Returns :class:`Outputs`, plus the activation cache when ``keep_cache``.
    ``counter`` (an ``OpCounters``) is charged the multiply/add count derived
    from the actual layer shapes.
    """
    arch = arch or infer_architecture(weights)
    dtype = weights["out.w"].dtype
    x = np.asarray(patches, dtype=dtype)
    if x.ndim == 3:
        x = x[None]
    if x.shape[1:] != (arch.in_channels, arch.side, arch.side):
        raise ValueError(f"patch shape {x.shape[1:]} does not match the network input")
    cache = {"x": x}
    ops = 0
    a = x
    for i in range(len(arch.conv)):
        name = f"conv{i + 1}"
        w = weights[name + ".w"]
        z, cols = _conv(a, w, weights[name + ".b"])
        ops += 2 * cols.shape[0] * cols.shape[1] * w.shape[0]
        h = np.tanh(z)
        p, arg = _pool(h)
        cache[name] = (a.shape, cols, h, arg)
        a = p
    N = x.shape[0]
    cache["flat_shape"] = a.shape
    a = a.reshape(N, -1)
    for i in range(len(arch.hidden)):
        name = f"fc{i + 1}"
        w = weights[name + ".w"]
        ops += 2 * N * w.size
        cache[name] = a
        a = np.tanh(a @ w + weights[name + ".b"])
    cache["out"] = a
    ops += 2 * N * weights["out.w"].size
    z = a @ weights["out.w"] + weights["out.b"]
    if counter is not None:
        counter.add("nndc", ops)
    out = split_outputs(z, arch.n_classes)
    return (out, cache) if keep_cache else out


def backward(weights: dict, cache: dict, dz: np.ndarray, arch: Architecture | None = None) -> dict:
    """Back-propagate ``dz`` = dLoss/d(raw outputs) through the network."""
    arch = arch or infer_architecture(weights)
    grads = {}
    a = cache["out"]
    grads["out.w"] = a.T @ dz
    grads["out.b"] = dz.sum(axis=0)
    da = dz @ weights["out.w"].T
    for i in reversed(range(len(arch.hidden))):
        name = f"fc{i + 1}"
        dpre = da * (1.0 - a * a)              # a = tanh output of this layer
        a_in = cache[name]
        grads[name + ".w"] = a_in.T @ dpre
        grads[name + ".b"] = dpre.sum(axis=0)
        da = dpre @ weights[name + ".w"].T
        a = a_in
    dp = da.reshape(cache["flat_shape"])
    for i in reversed(range(len(arch.conv))):
        name = f"conv{i + 1}"
        in_shape, cols, h, arg = cache[name]
        dh = _pool_backward(dp, arg, h.shape)
        dzc = dh * (1.0 - h * h)
        dx, dw, db = _conv_backward(dzc, cols, in_shape, weights[name + ".w"], need_dx=i > 0)
        grads[name + ".w"] = dw
        grads[name + ".b"] = db
        dp = dx
    return grads
