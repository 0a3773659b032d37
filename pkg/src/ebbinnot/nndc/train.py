"""Training targets, the detector loss with its gradient, and Adam training."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ..eval import iou_matrix
from ..framegen import extract_patch
from .detect import BACKGROUND, AnchorSet, corrected_boxes
from .network import Architecture, DEFAULT_ARCH, backward, forward, init_weights, sigmoid

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# samples
# ---------------------------------------------------------------------------

@dataclass
class SampleSet:
    """Column-wise training samples.

    ``target_box`` rows are only meaningful where ``target_bb > 0``.
    """
    patches: np.ndarray      # (N, 2, side, side) uint8
    rp_box: np.ndarray       # (N, 4) proposal x, y, w, h (full resolution)
    target_class: np.ndarray  # (N,) int, 0 = background
    target_bb: np.ndarray    # (N,) IoU with the matched GT box, or 0
    target_box: np.ndarray   # (N, 4)

    def __post_init__(self):
        n = len(self.patches)
        if not (len(self.rp_box) == len(self.target_class) == len(self.target_bb) == len(self.target_box) == n):
            raise ValueError("sample columns differ in length")
        if np.any((self.target_bb < 0) | (self.target_bb > 1)):
            raise ValueError("target_bb must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.patches)

    def subset(self, idx) -> "SampleSet":
        return SampleSet(self.patches[idx], self.rp_box[idx], self.target_class[idx],
                         self.target_bb[idx], self.target_box[idx])

    @classmethod
    def empty(cls, side: int = 42) -> "SampleSet":
        return cls(np.zeros((0, 2, side, side), np.uint8), np.zeros((0, 4)), np.zeros(0, int),
                   np.zeros(0), np.zeros((0, 4)))

    @classmethod
    def concat(cls, sets) -> "SampleSet":
        sets = list(sets)
        if not sets:
            return cls.empty()
        return cls(*(np.concatenate([getattr(s, f) for s in sets])
                     for f in ("patches", "rp_box", "target_class", "target_bb", "target_box")))

    def save(self, path) -> None:
        np.savez_compressed(path, patches=self.patches, rp_box=self.rp_box, target_class=self.target_class,
                            target_bb=self.target_bb, target_box=self.target_box)

    @classmethod
    def load(cls, path) -> "SampleSet":
        with np.load(path) as z:
            return cls(z["patches"], z["rp_box"], z["target_class"], z["target_bb"], z["target_box"])


class Target(NamedTuple):
    class_id: int
    bb_conf: float
    box: tuple | None


def assign_targets(rp_boxes, gt_rows, iou_th: float = 0.1) -> list[Target]:
    """Match each proposal to the GT box of maximal IoU (first on ties);
    matches above ``iou_th`` become positives, the rest background."""
    if len(rp_boxes) == 0:
        return []
    if len(gt_rows) == 0:
        return [Target(BACKGROUND, 0.0, None) for _ in rp_boxes]
    m = iou_matrix([tuple(b) for b in rp_boxes], [tuple(g.box) for g in gt_rows])
    out = []
    for i in range(len(rp_boxes)):
        j = int(np.argmax(m[i]))
        v = float(m[i, j])
        if v > iou_th:
            g = gt_rows[j]
            out.append(Target(int(g.class_id), v, tuple(g.box)))
        else:
            out.append(Target(BACKGROUND, 0.0, None))
    return out


def build_samples(dual: np.ndarray, rp_boxes, gt_rows, iou_th: float = 0.1, side: int = 42) -> SampleSet:
    """Patches and targets for one frame's proposals."""
    targets = assign_targets(rp_boxes, gt_rows, iou_th)
    if not targets:
        return SampleSet.empty(side)
    patches = np.stack([extract_patch(dual, b, side) for b in rp_boxes]).astype(np.uint8)
    rp = np.asarray([tuple(b) for b in rp_boxes], dtype=np.float64)
    cls = np.array([t.class_id for t in targets], dtype=int)
    bb = np.array([t.bb_conf for t in targets])
    box = np.array([t.box if t.box is not None else (0, 0, 0, 0) for t in targets], dtype=np.float64)
    return SampleSet(patches, rp, cls, bb, box)


# ---------------------------------------------------------------------------
# loss and gradient
# ---------------------------------------------------------------------------

class LossParts(NamedTuple):
    total: float
    loss1: float
    loss2: float
    loss3: float


BOX_GATE = 0.1


def loss_terms(out, batch: SampleSet, anchors: AnchorSet, lam: float, geometry: tuple[int, int],
               n_classes: int):
    """Per-sample losses and dLoss/d(raw outputs) for the mean total loss.

    The corrected box uses the anchor of the predicted (argmax) class, as at
    inference time but without the objectness rejection; clipping passes the
    gradient straight through inside its bounds and blocks it at saturation.
    """
    A, B = geometry
    N = len(batch)
    z = out.raw.astype(np.float64)
    C = n_classes
    o_hat = sigmoid(z[:, :C])
    onehot = np.zeros((N, C))
    onehot[np.arange(N), batch.target_class] = 1.0
    l1 = ((onehot - o_hat) ** 2).sum(axis=1)
    bb_hat = z[:, C]
    l2 = (batch.target_bb - bb_hat) ** 2

    t = z[:, C + 1:C + 5]
    j = np.argmax(o_hat, axis=1)
    anchor_wh = anchors.sizes[j]
    box, raw = corrected_boxes(t, batch.rp_box[:, :2], anchor_wh, A, B)
    norm = np.array([A - 1, B - 1, A, B], dtype=np.float64)
    gate = (batch.target_bb > BOX_GATE).astype(np.float64)
    err = (batch.target_box - box) / norm
    l3 = gate * (err ** 2).sum(axis=1)
    total = l1 + l2 + lam * l3

    dz = np.zeros_like(z)
    dz[:, :C] = 2 * (o_hat - onehot) * o_hat * (1 - o_hat)
    dz[:, C] = 2 * (bb_hat - batch.target_bb)
    hi = np.array([A - 1, B - 1, A, B], dtype=np.float64)
    inside = ((raw >= 0) & (raw <= hi)).astype(np.float64)
    dbox = -2 * err / norm * gate[:, None] * lam
    dbox_draw = dbox * inside
    th = np.tanh(t[:, :2])
    dz[:, C + 1] = dbox_draw[:, 0] * (1 - th[:, 0] ** 2) * (A - 1)
    dz[:, C + 2] = dbox_draw[:, 1] * (1 - th[:, 1] ** 2) * (B - 1)
    dz[:, C + 3] = dbox_draw[:, 2] * raw[:, 2]
    dz[:, C + 4] = dbox_draw[:, 3] * raw[:, 3]
    return (total, l1, l2, l3), dz / N


def loss_and_grad(weights: dict, batch: SampleSet, anchors: AnchorSet, lam: float = 5.0,
                  geometry: tuple[int, int] = (240, 180), arch: Architecture = DEFAULT_ARCH,
                  need_grad: bool = True):
    out, cache = forward(weights, batch.patches, arch, keep_cache=True)
    (total, l1, l2, l3), dz = loss_terms(out, batch, anchors, lam, geometry, arch.n_classes)
    parts = LossParts(float(total.mean()), float(l1.mean()), float(l2.mean()), float(l3.mean()))
    if not need_grad:
        return parts, None
    grads = backward(weights, cache, dz.astype(weights["out.w"].dtype), arch)
    return parts, grads


def loss(weights, batch, anchors, lam=5.0, geometry=(240, 180), arch=DEFAULT_ARCH) -> LossParts:
    return loss_and_grad(weights, batch, anchors, lam, geometry, arch, need_grad=False)[0]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    batch_size: int = 128
    epochs: int = 20
    learning_rate: float = 0.01
    lam: float = 5.0
    patience: int = 3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    thr: float = 0.1
    thr_ns: float = 0.3
    val_fraction: float = 0.2
    seed: int = 0
    early_stop: bool = True
    dtype: str = "float32"
    lr_decay: float = 1.0     # learning rate multiplier applied after every epoch

    def __post_init__(self):
        for name in ("batch_size", "epochs", "learning_rate", "patience", "eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        for name in ("thr", "thr_ns", "beta1", "beta2"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")


class Adam:
    def __init__(self, weights: dict, lr: float, beta1: float, beta2: float, eps: float):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in weights.items()}
        self.v = {k: np.zeros_like(v) for k, v in weights.items()}
        self.t = 0

    def step(self, weights: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k in sorted(weights):
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            weights[k] -= (self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)).astype(weights[k].dtype)


def predict_classes(weights: dict, patches: np.ndarray, arch: Architecture = DEFAULT_ARCH,
                    chunk: int = 512) -> np.ndarray:
    out = []
    for i in range(0, len(patches), chunk):
        out.append(np.argmax(forward(weights, patches[i:i + chunk], arch).class_conf, axis=1))
    return np.concatenate(out) if out else np.zeros(0, int)


@dataclass
class TrainResult:
    weights: dict
    history: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False


def split_indices(n: int, val_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_val = int(round(n * val_fraction))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train(samples: SampleSet, anchors: AnchorSet, config: TrainConfig = TrainConfig(),
          geometry: tuple[int, int] = (240, 180), arch: Architecture = DEFAULT_ARCH,
          weights: dict | None = None, callback=None) -> TrainResult:
    """Adam over shuffled mini-batches; keeps the weights of the epoch with
    the best validation (unbalanced) accuracy and stops after ``patience``
    epochs without improvement."""
    if len(samples) == 0:
        raise ValueError("empty training set")
    if not np.any(samples.target_bb > 0):
        raise ValueError("training set has no positive sample")
    rng = np.random.default_rng(config.seed)
    tr_idx, va_idx = split_indices(len(samples), config.val_fraction, rng)
    train_set = samples.subset(tr_idx)
    val_set = samples.subset(va_idx) if len(va_idx) else train_set
    dtype = np.dtype(config.dtype)
    w = init_weights(arch, seed=config.seed, dtype=dtype) if weights is None else \
        {k: v.astype(dtype).copy() for k, v in weights.items()}
    opt = Adam(w, config.learning_rate, config.beta1, config.beta2, config.eps)
    result = TrainResult(copy.deepcopy(w))
    best, since = -np.inf, 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_set))
        losses = []
        for i in range(0, len(order), config.batch_size):
            batch = train_set.subset(order[i:i + config.batch_size])
            parts, grads = loss_and_grad(w, batch, anchors, config.lam, geometry, arch)
            opt.step(w, grads)
            losses.append((parts, len(batch)))
        n = sum(k for _, k in losses)
        mean = LossParts(*(sum(getattr(p, f) * k for p, k in losses) / n for f in LossParts._fields))
        opt.lr *= config.lr_decay
        acc = float(np.mean(predict_classes(w, val_set.patches, arch) == val_set.target_class))
        result.history.append({"epoch": epoch, **mean._asdict(), "val_accuracy": acc})
        log.info("epoch %d loss %.4f val_acc %.4f", epoch, mean.total, acc)
        if callback is not None:
            callback(epoch, mean, acc)
        if acc > best:
            best, since = acc, 0
            result.weights = copy.deepcopy(w)
            result.best_epoch = epoch
        else:
            since += 1
            if config.early_stop and since >= config.patience:
                result.stopped_early = True
                break
    if not config.early_stop:
        result.weights = copy.deepcopy(w)
        result.best_epoch = len(result.history) - 1
    return result
