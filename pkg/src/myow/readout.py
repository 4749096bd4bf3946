"""Linear readouts on frozen representations and the decoding metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from myow.nn import AdamW, Linear
from myow.tensor import Rng, Tensor, log_softmax, tsum

N_DIRECTIONS = 8
SCALE = 4.0 / math.pi  # radians -> direction units
WD_SWEEP = tuple(float(v) for v in np.geomspace(2.0 ** -10, 2.0 ** 10, 20))


def scaled_angle(x, y) -> np.ndarray:
    """``(4/pi) * (atan2(y, x) mod 2pi)``, in [0, 8)."""
    ang = np.mod(np.arctan2(y, x), 2 * np.pi)
    return np.mod(SCALE * ang, N_DIRECTIONS)


def reach_label(x, y):
    """Nearest of the 8 reach directions (round half away from zero, mod 8)."""
    x_arr, y_arr = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if np.any((x_arr == 0) & (y_arr == 0)):
        raise ValueError("reach_label is undefined at (0, 0)")
    lab = np.mod(np.floor(scaled_angle(x_arr, y_arr) + 0.5), N_DIRECTIONS).astype(np.int64)
    return int(lab) if lab.ndim == 0 else lab


def circular_gap(scaled, labels) -> np.ndarray:
    d = np.abs(np.asarray(scaled) - np.asarray(labels)) % N_DIRECTIONS
    return np.minimum(d, N_DIRECTIONS - d)


def accuracy_metrics(xy: np.ndarray, labels) -> dict[str, float]:
    """Acc and delta-Acc: scaled angle within 1.0 / 1.5 of the label, circularly."""
    xy = np.asarray(xy, dtype=np.float64)
    gap = circular_gap(scaled_angle(xy[:, 0], xy[:, 1]), labels)
    return {"acc": float(np.mean(gap < 1.0)), "delta_acc": float(np.mean(gap < 1.5))}


def macro_f1(pred, true, n_classes: int | None = None) -> float:
    """Unweighted mean per-class F1 over the classes present in ``true`` or ``pred``."""
    pred, true = np.asarray(pred), np.asarray(true)
    classes = np.arange(n_classes) if n_classes is not None else np.union1d(pred, true)
    scores = []
    for c in classes:
        tp = np.sum((pred == c) & (true == c))
        fp = np.sum((pred == c) & (true != c))
        fn = np.sum((pred != c) & (true == c))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def direction_targets(labels) -> np.ndarray:
    theta = np.asarray(labels) * (2 * np.pi / N_DIRECTIONS)
    return np.stack([np.cos(theta), np.sin(theta)], axis=1)


@dataclass(frozen=True)
class ReadoutSpec:
    task: str = "reach-angle"  # or "multiclass"
    epochs: int = 100
    lr: float = 0.01
    weight_decays: tuple[float, ...] = WD_SWEEP
    standardize: bool = True
    seed: int = 0


@dataclass
class LinearReadout:
    weight: np.ndarray
    bias: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    task: str

    def raw(self, reps: np.ndarray) -> np.ndarray:
        return ((reps - self.mean) / self.std) @ self.weight.T + self.bias

    def predict(self, reps: np.ndarray) -> np.ndarray:
        out = self.raw(reps)
        if self.task == "reach-angle":
            return out
        return out.argmax(axis=1)


@dataclass
class DecodeResult:
    accuracy: float
    delta_accuracy: float
    macro_f1: float
    weight_decay: float
    per_class: dict[int, int] = field(default_factory=dict)
    val_score: float = float("nan")


def train_linear_readout(reps: np.ndarray, targets: np.ndarray, spec: ReadoutSpec,
                         weight_decay: float, n_classes: int | None = None) -> LinearReadout:
    """Full-batch AdamW on a single linear layer over frozen representations."""
    reps = np.asarray(reps, dtype=np.float64)
    targets = np.asarray(targets)
    if spec.task == "multiclass":
        n_classes = n_classes or int(targets.max()) + 1
        if len(np.unique(targets)) < 2:
            raise ValueError("readout training split contains a single class")
        n_out = n_classes
    else:
        if len(np.unique(targets)) < 2:
            raise ValueError("readout training split contains a single direction")
        n_out = 2
    if spec.standardize:
        mean, std = reps.mean(axis=0), np.maximum(reps.std(axis=0), 1e-8)
    else:
        mean, std = np.zeros(reps.shape[1]), np.ones(reps.shape[1])
    x = Tensor((reps - mean) / std)
    layer = Linear(reps.shape[1], n_out, Rng(spec.seed))
    opt = AdamW(lr=spec.lr, weight_decay=weight_decay)
    if spec.task == "multiclass":
        onehot = Tensor(np.eye(n_out)[targets])
    else:
        goal = Tensor(direction_targets(targets))
    params = list(layer.named_parameters())
    n = len(reps)
    for _ in range(spec.epochs):
        layer.zero_grad()
        out = layer(x)
        if spec.task == "multiclass":
            loss = -tsum(log_softmax(out) * onehot) * (1.0 / n)
        else:
            diff = out - goal
            loss = tsum(diff * diff) * (1.0 / n)
        loss.backward()
        opt.step(params)
    return LinearReadout(layer.weight.data.copy(), layer.bias.data.copy(), mean, std, spec.task)


def score(readout: LinearReadout, reps: np.ndarray, labels: np.ndarray, n_classes: int | None = None) -> dict[str, float]:
    out = readout.predict(reps)
    if not np.all(np.isfinite(out)):
        return {"acc": 0.0, "delta_acc": 0.0, "macro_f1": 0.0}
    if readout.task == "reach-angle":
        m = accuracy_metrics(out, labels)
        lab = np.mod(np.floor(scaled_angle(out[:, 0], out[:, 1]) + 0.5), N_DIRECTIONS).astype(int)
        m["macro_f1"] = macro_f1(lab, labels, N_DIRECTIONS)
        return m
    acc = float(np.mean(out == labels))
    return {"acc": acc, "delta_acc": acc, "macro_f1": macro_f1(out, labels, n_classes)}


def evaluate_readout(train: tuple[np.ndarray, np.ndarray], val: tuple[np.ndarray, np.ndarray],
                     test: tuple[np.ndarray, np.ndarray], spec: ReadoutSpec = ReadoutSpec()) -> DecodeResult:
    """Sweep weight decay on validation, report the chosen readout on test.

    Selection metric is accuracy for the reach task and macro-F1 otherwise;
    ties go to the smaller weight decay.
    """
    n_classes = int(max(train[1].max(), val[1].max(), test[1].max())) + 1 if spec.task == "multiclass" else None
    key = "acc" if spec.task == "reach-angle" else "macro_f1"
    best = None
    for wd in sorted(spec.weight_decays):
        ro = train_linear_readout(train[0], train[1], spec, wd, n_classes)
        val_score = score(ro, val[0], val[1], n_classes)[key]
        if best is None or val_score > best[0]:
            best = (val_score, wd, ro)
    val_score, wd, ro = best
    m = score(ro, test[0], test[1], n_classes)
    pred = ro.predict(test[0])
    if spec.task == "reach-angle":
        pred = np.mod(np.floor(scaled_angle(pred[:, 0], pred[:, 1]) + 0.5), N_DIRECTIONS).astype(int)
    counts = {int(c): int(n) for c, n in zip(*np.unique(pred, return_counts=True))}
    return DecodeResult(accuracy=m["acc"], delta_accuracy=m["delta_acc"], macro_f1=m["macro_f1"],
                        weight_decay=wd, per_class=counts, val_score=val_score)


def write_metrics(result: DecodeResult, seed: int, path) -> str:
    """CSV ``metric,value,wd,seed`` followed by a readable summary (returned)."""
    rows = ["metric,value,wd,seed"]
    for name, val in (("accuracy", result.accuracy), ("delta_accuracy", result.delta_accuracy),
                      ("macro_f1", result.macro_f1)):
        rows.append(f"{name},{val!r},{result.weight_decay!r},{seed}")
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")
    return (f"accuracy       {100 * result.accuracy:6.2f}%\n"
            f"delta-accuracy {100 * result.delta_accuracy:6.2f}%\n"
            f"macro-F1       {100 * result.macro_f1:6.2f}%\n"
            f"weight decay   {result.weight_decay:.4g}")
