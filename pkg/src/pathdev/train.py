"""Losses, optimizers, a linear readout and the training loop.

A model is ``readout(flatten(z_N))`` for classification, or for the ``se2``
head the SE(2) element ``z_N`` applied to the last observed position.
Series inside a batch are padded to a common length by repeating their last
sample; zero increments develop to the identity, so padding is exact.
"""

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .devlayer import backward_arrays, forward_arrays
from .errors import InvalidArgument, TrainingDiverged
from .liealg import DevWeights, Family, project, random_init
from .sigpath import TimeSeries, add_time

log = logging.getLogger(__name__)

HEADS = ("linear", "se2")
INPUT_MODES = ("raw", "add_time")
SPLITS = ("train", "val", "test")


# ---------------------------------------------------------------- losses


def softmax_xent(logits, label):
    """Cross entropy of one sample; returns ``(loss, dlogits)``."""
    logits = np.asarray(logits, dtype=float)
    shift = logits - logits.max()
    lse = np.log(np.exp(shift).sum())
    probs = np.exp(shift - lse)
    loss = lse - shift[label]
    grad = probs.copy()
    grad[label] -= 1.0
    return float(loss), grad


def mse(pred, target):
    pred = np.asarray(pred, dtype=float)
    diff = pred - np.asarray(target, dtype=float)
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


# ---------------------------------------------------------------- data


@dataclass(eq=False)
class Dataset:
    series: list
    targets: np.ndarray
    split: np.ndarray
    task: str = "classification"
    n_classes: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.series) != len(self.targets) or len(self.series) != len(self.split):
            raise InvalidArgument("series, targets and split tags differ in length")
        dims = {s.dim for s in self.series}
        if len(dims) > 1:
            raise InvalidArgument(f"inconsistent series dimensions {sorted(dims)}")
        if self.task not in ("classification", "regression"):
            raise InvalidArgument(f"unknown task {self.task!r}")
        self.targets = np.asarray(self.targets)
        self.split = np.asarray(self.split)
        if self.task == "classification" and not self.n_classes and len(self.targets):
            self.n_classes = int(self.targets.max()) + 1

    def __len__(self):
        return len(self.series)

    @property
    def dim(self):
        return self.series[0].dim if self.series else 0

    def subset(self, split):
        idx = np.flatnonzero(self.split == split)
        return self.take(idx)

    def take(self, idx):
        return Dataset(
            [self.series[i] for i in idx],
            self.targets[idx],
            self.split[idx],
            self.task,
            self.n_classes,
            dict(self.meta),
        )


def _split_tags(n, splits, rng):
    if splits is None:
        return np.array(["train"] * n)
    total = sum(splits.values())
    if total != n:
        raise InvalidArgument(f"split sizes sum to {total}, expected {n}")
    tags = np.concatenate([[name] * size for name, size in splits.items()])
    return tags


def gen_rotation_dataset(n, noise=0.0, seed=0, splits=None, length=(20, 40)):
    """Planar circular arcs, label 1 if traversed counter-clockwise.

    Radius, centre, start angle, sweep and the number of samples are random;
    sample times are drawn from a random non-uniform speed profile.
    """
    if n < 2:
        raise InvalidArgument("need at least two samples")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    rng.shuffle(labels)
    series = []
    for lab in labels:
        n_pts = int(rng.integers(length[0], length[1] + 1))
        speed = rng.exponential(size=n_pts - 1)
        u = np.concatenate([[0.0], np.cumsum(speed)])
        u /= u[-1]
        centre = rng.normal(size=2)
        radius = rng.uniform(0.5, 1.5)
        start = rng.uniform(0.0, 2 * np.pi)
        sweep = rng.uniform(np.pi / 3, 1.5 * np.pi)
        sign = 1.0 if lab == 1 else -1.0
        ang = start + sign * sweep * u
        pts = centre + radius * np.column_stack([np.cos(ang), np.sin(ang)])
        pts = pts + noise * rng.normal(size=pts.shape)
        series.append(TimeSeries(pts))
    meta = {"generator": "rotation", "n": n, "noise": noise, "seed": seed}
    return Dataset(series, labels, _split_tags(n, splits, rng), "classification", 2, meta)


def gen_rigid_motion_dataset(
    n, k, seed=0, noise=0.05, n_obs=20, speed=(0.5, 1.5), turn=0.05, splits=None
):
    """A point moved by a fixed planar rigid motion per sample.

    Each step rotates the velocity by an angle drawn from ``[-turn, turn]``,
    which is the orbit of one rigid motion. Inputs are ``n_obs`` noisy
    positions; the target is the noiseless position ``k`` steps after the
    last observation.
    """
    if n < 1 or k < 1 or n_obs < 2:
        raise InvalidArgument("need n >= 1, k >= 1 and n_obs >= 2")
    rng = np.random.default_rng(seed)
    series, targets = [], []
    steps = np.arange(n_obs - 1 + k)
    for _ in range(n):
        s = rng.uniform(*speed)
        heading = rng.uniform(0.0, 2 * np.pi)
        omega = rng.uniform(-turn, turn)
        vel = s * np.column_stack([np.cos(heading + omega * steps), np.sin(heading + omega * steps)])
        path = np.vstack([rng.normal(size=(1, 2)) * 2.0, vel]).cumsum(axis=0)
        obs = path[:n_obs] + noise * rng.normal(size=(n_obs, 2))
        series.append(TimeSeries(obs))
        targets.append(path[n_obs - 1 + k])
    meta = {
        "generator": "rigid_motion",
        "n": n,
        "k": k,
        "seed": seed,
        "noise": noise,
        "n_obs": n_obs,
        "speed": list(speed),
        "turn": turn,
    }
    return Dataset(series, np.array(targets), _split_tags(n, splits, rng), "regression", 0, meta)


# ---------------------------------------------------------------- model


@dataclass(eq=False)
class Model:
    dev: DevWeights
    W: np.ndarray
    b: np.ndarray
    input_mode: str = "raw"
    head: str = "linear"

    def __post_init__(self):
        if self.input_mode not in INPUT_MODES:
            raise InvalidArgument(f"input_mode must be one of {INPUT_MODES}")
        if self.head not in HEADS:
            raise InvalidArgument(f"head must be one of {HEADS}")
        if self.head == "se2" and self.dev.spec.family is not Family.SE2:
            raise InvalidArgument("the se2 head needs SE2 development weights")
        m = self.dev.order
        self.W = np.asarray(self.W, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.head == "linear" and (self.W.ndim != 2 or self.W.shape[1] != m * m):
            raise InvalidArgument(f"readout must have shape (C, {m * m}), got {self.W.shape}")
        if self.b.shape != self.W.shape[:1]:
            raise InvalidArgument("bias length does not match readout rows")

    @property
    def n_inputs(self):
        return self.dev.dim_in - (1 if self.input_mode == "add_time" else 0)

    def copy(self):
        return Model(self.dev, self.W.copy(), self.b.copy(), self.input_mode, self.head)

    def to_dict(self):
        return {
            "dev": self.dev.to_dict(),
            "readout": {"W": self.W.tolist(), "b": self.b.tolist()},
            "input_mode": self.input_mode,
            "head": self.head,
        }

    @classmethod
    def from_dict(cls, doc):
        ro = doc.get("readout", {"W": [], "b": []})
        W = np.asarray(ro["W"], dtype=float)
        if W.size == 0:
            W = np.zeros((0, 0))
        return cls(
            DevWeights.from_dict(doc["dev"]),
            W,
            np.asarray(ro["b"], dtype=float),
            doc.get("input_mode", "raw"),
            doc.get("head", "linear"),
        )


def init_model(spec, n_inputs, n_out=2, head="linear", input_mode="raw", seed=0, scale=1.0):
    d = n_inputs + (1 if input_mode == "add_time" else 0)
    dev = random_init(spec, d, scale=scale, seed=seed)
    m = spec.order
    if head == "se2":
        return Model(dev, np.zeros((0, 0)), np.zeros(0), input_mode, head)
    rng = np.random.default_rng([seed, 1])
    W = rng.normal(scale=1.0 / m, size=(n_out, m * m))
    return Model(dev, W, np.zeros(n_out), input_mode, head)


def prepare_batch(series, input_mode):
    """Stack series into ``(B, N+1, d)``, padding by repeating the last sample."""
    if input_mode == "add_time":
        series = [add_time(s) for s in series]
    n_max = max(len(s) for s in series)
    out = np.empty((len(series), n_max, series[0].dim))
    for i, s in enumerate(series):
        out[i, : len(s)] = s.values
        out[i, len(s) :] = s.values[-1]
    return out


def _last_positions(X, input_mode):
    return X[:, -1, 1:3] if input_mode == "add_time" else X[:, -1, :2]


def model_forward(model, X):
    """Returns ``(outputs, cache)``; outputs are logits or predicted positions."""
    incr = np.diff(X, axis=1)
    states, exps = forward_arrays(model.dev.theta, incr)
    zN = states[:, -1]
    if model.head == "linear":
        out = zN.reshape(len(X), -1) @ model.W.T + model.b
    else:
        p = _last_positions(X, model.input_mode)
        out = np.einsum("bij,bj->bi", zN[:, :2, :2], p) + zN[:, :2, 2]
    return out, (incr, states, exps)


def readout_backward(model, X, cache, dout):
    """Gradients ``(dW, db, dz_N)`` of the head given ``dL/doutputs``."""
    incr, states, _ = cache
    zN = states[:, -1]
    B, m = len(X), model.dev.order
    if model.head == "linear":
        feats = zN.reshape(B, -1)
        dW = dout.T @ feats
        db = dout.sum(axis=0)
        dz = (dout @ model.W).reshape(B, m, m)
        return dW, db, dz
    p = _last_positions(X, model.input_mode)
    dz = np.zeros((B, 3, 3))
    dz[:, :2, :2] = dout[:, :, None] * p[:, None, :]
    dz[:, :2, 2] = dout
    return np.zeros_like(model.W), np.zeros_like(model.b), dz


def batch_loss(model, X, targets, task):
    """Mean loss over the batch and its gradients ``(loss, grads, outputs)``."""
    out, cache = model_forward(model, X)
    B = len(X)
    dout = np.empty_like(out)
    total = 0.0
    for i in range(B):
        if task == "classification":
            li, gi = softmax_xent(out[i], int(targets[i]))
        else:
            li, gi = mse(out[i], targets[i])
        total += li
        dout[i] = gi / B
    if not np.isfinite(total):
        raise TrainingDiverged("non-finite loss")
    dW, db, dz = readout_backward(model, X, cache, dout)
    incr, states, exps = cache
    partials = np.zeros_like(states)
    partials[:, -1] = dz
    dtheta, _ = backward_arrays(model.dev.theta, incr, states, partials, exps)
    grads = {
        "theta": project(model.dev.spec, dtheta.sum(axis=0)),
        "W": dW,
        "b": db,
    }
    return total / B, grads, out


# ---------------------------------------------------------------- optimizers


class Optimizer:
    """SGD or Adam over a dict of arrays; ``theta`` is re-projected after each step."""

    def __init__(self, kind="adam", betas=(0.9, 0.999), eps=1e-8):
        if kind not in ("sgd", "adam"):
            raise InvalidArgument(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads, lr, spec=None):
        self.t += 1
        out = {}
        b1, b2 = self.betas
        for name, value in params.items():
            g = grads[name]
            if self.kind == "sgd":
                new = value - lr * g
            else:
                m = self.m.get(name, np.zeros_like(value))
                v = self.v.get(name, np.zeros_like(value))
                m = b1 * m + (1 - b1) * g
                v = b2 * v + (1 - b2) * g * g
                self.m[name], self.v[name] = m, v
                mhat = m / (1 - b1**self.t)
                vhat = v / (1 - b2**self.t)
                new = value - lr * mhat / (np.sqrt(vhat) + self.eps)
            if name == "theta" and spec is not None:
                new = project(spec, new)
            out[name] = new
        return out


def apply_step(opt, model, grads, lr):
    params = {"theta": np.array(model.dev.theta), "W": model.W, "b": model.b}
    new = opt.step(params, grads, lr, model.dev.spec)
    return Model(model.dev.replace_theta(new["theta"]), new["W"], new["b"], model.input_mode, model.head)


# ---------------------------------------------------------------- loop


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    lr_decay: float = 0.997
    batch_size: int = 32
    epochs: int = 150
    seed: int = 0
    patience: int = 50
    optimizer: str = "adam"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InvalidArgument("learning_rate must be non-negative")
        if not 0 < self.lr_decay <= 1:
            raise InvalidArgument("lr_decay must lie in (0, 1]")
        for name in ("batch_size", "epochs", "patience"):
            if int(getattr(self, name)) < 1:
                raise InvalidArgument(f"{name} must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidArgument(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainResult:
    history: list
    best_model: Model
    final_model: Model
    best_epoch: int


def evaluate(model, data):
    """Accuracy for classification, mean squared error for regression."""
    if len(data) == 0:
        raise InvalidArgument("cannot evaluate on an empty dataset")
    X = prepare_batch(data.series, model.input_mode)
    out, _ = model_forward(model, X)
    if data.task == "classification":
        return float(np.mean(np.argmax(out, axis=1) == data.targets))
    return float(np.mean((out - data.targets) ** 2))


def static_baseline_mse(data):
    """MSE of predicting that the point stays at its last observed position."""
    if len(data) == 0 or data.task != "regression":
        raise InvalidArgument("the static baseline needs a non-empty regression dataset")
    last = np.array([s.values[-1, :2] for s in data.series])
    return float(np.mean((last - data.targets) ** 2))


def _mean_loss(model, data, batch_size):
    total = 0.0
    for start in range(0, len(data), batch_size):
        idx = np.arange(start, min(start + batch_size, len(data)))
        X = prepare_batch([data.series[i] for i in idx], model.input_mode)
        loss, _, _ = batch_loss(model, X, data.targets[idx], data.task)
        total += loss * len(idx)
    return total / len(data)


def _better(task, new, best):
    if best is None:
        return True
    return new > best if task == "classification" else new < best


def train_loop(config, dataset, model, on_epoch=None):
    """Deterministic minibatch training with best-checkpoint selection.

    ``on_epoch(record, wall_ms)`` is called after every epoch. The validation
    split is used for checkpointing when present, the training split
    otherwise.
    """
    train = dataset.subset("train")
    if len(train) == 0:
        raise InvalidArgument("training split is empty")
    val = dataset.subset("val")
    if len(val) == 0:
        val = train
    rng = np.random.default_rng(config.seed)
    opt = Optimizer(config.optimizer)
    history = []
    best_metric, best_model, best_epoch, stale = None, model.copy(), 0, 0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        lr = config.learning_rate * config.lr_decay ** (epoch - 1)
        order = rng.permutation(len(train))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            X = prepare_batch([train.series[i] for i in idx], model.input_mode)
            where = f"epoch {epoch}, batch starting {start}, lr {lr:g}"
            try:
                loss, grads, _ = batch_loss(model, X, train.targets[idx], train.task)
            except TrainingDiverged:
                raise TrainingDiverged(f"non-finite loss at {where}") from None
            total += loss * len(idx)
            model = apply_step(opt, model, grads, lr)
            if not all(np.all(np.isfinite(a)) for a in (model.dev.theta, model.W, model.b)):
                raise TrainingDiverged(f"non-finite parameters after the step at {where}")
        val_loss = _mean_loss(model, val, config.batch_size)
        val_metric = evaluate(model, val)
        record = {
            "epoch": epoch,
            "train_loss": total / len(train),
            "val_loss": val_loss,
            "val_metric": val_metric,
            "lr": lr,
        }
        history.append(record)
        if on_epoch is not None:
            on_epoch(record, (time.perf_counter() - t0) * 1e3)
        log.debug("epoch %d: %s", epoch, record)
        if _better(train.task, val_metric, best_metric):
            best_metric, best_model, best_epoch, stale = val_metric, model.copy(), epoch, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return TrainResult(history, best_model, model, best_epoch)


def metrics_line(record):
    return json.dumps(record, sort_keys=False)
