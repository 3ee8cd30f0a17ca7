"""Mini-batch training, prediction, and evaluation for the classifier."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dataio import WindowedDataset
from .tft import TftModel


class TrainError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"          # adam | sgd-momentum
    momentum: float = 0.9
    seed: int = 0
    class_weighting: bool = False

    def validate(self):
        if self.epochs < 1:
            raise TrainError("E >= 1 required")
        if self.batch_size < 1:
            raise TrainError("batch size must be >= 1")
        if self.optimizer not in ("adam", "sgd-momentum"):
            raise TrainError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2)
            fh.write("\n")


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray            # rows true, cols predicted
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_f1: float
    n_samples: int
    history: TrainHistory | None = None

    def to_dict(self) -> dict:
        out = {
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "macro_f1": self.macro_f1,
            "n_samples": self.n_samples,
        }
        if self.history is not None:
            out["history"] = asdict(self.history)
        return out

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def confusion_to_csv(self, path):
        k = self.confusion.shape[0]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["true\\pred"] + [f"pred_{j}" for j in range(k)])
            for i in range(k):
                writer.writerow([f"true_{i}"] + self.confusion[i].tolist())


class Adam:
    def __init__(self, params: list[Tensor], lr: float,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1 ** self.t)
            vhat = self.v[i] / (1 - b2 ** self.t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class SgdMomentum:
    def __init__(self, params: list[Tensor], lr: float, momentum=0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self):
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.v[i] = self.momentum * self.v[i] + g
            p.data -= self.lr * self.v[i]


def make_optimizer(config: TrainConfig, params: list[Tensor]):
    if config.optimizer == "adam":
        return Adam(params, config.learning_rate)
    return SgdMomentum(params, config.learning_rate, config.momentum)


def cross_entropy(probs: Tensor, labels: np.ndarray,
                  sample_weights: np.ndarray | None = None) -> Tensor:
    nll = ad.neg(ad.log(ad.gather_last(probs, labels)))
    if sample_weights is None:
        return ad.tmean(nll)
    w = np.asarray(sample_weights, dtype=np.float64)
    return ad.tsum(nll * Tensor(w)) * Tensor(1.0 / w.sum())


def class_weights(labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Inverse-frequency weights, normalized to mean 1."""
    counts = np.bincount(labels, minlength=n_classes).astype(float)
    w = np.where(counts > 0, len(labels) / np.maximum(counts, 1.0), 0.0)
    nz = w[w > 0]
    return w / nz.mean() if nz.size else np.ones(n_classes)


def train(model: TftModel, train_set: WindowedDataset, config: TrainConfig,
          val_set: WindowedDataset | None = None) -> TrainHistory:
    """Seeded epoch loop; mutates model parameters in place and returns
    the per-epoch curves. Aborts on a non-finite loss, naming the batch."""
    config.validate()
    k = model.config.n_classes
    y = train_set.labels
    if y.min() < 0 or y.max() >= k:
        raise TrainError(f"labels outside [0,{k})")
    rng = np.random.default_rng(config.seed)
    opt = make_optimizer(config, model.param_list())
    weights = class_weights(y, k) if config.class_weighting else None
    history = TrainHistory()
    m = train_set.n_samples

    for epoch in range(config.epochs):
        order = rng.permutation(m)
        total_loss = 0.0
        correct = 0
        for start in range(0, m, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb = train_set.samples[idx]
            yb = y[idx]
            for p in model.param_list():
                p.grad = None
            out = model.forward(xb, train_flag=True, rng=rng, record_graph=True)
            sw = weights[yb] if weights is not None else None
            loss = cross_entropy(out.probs, yb, sw)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise TrainError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}"
                )
            loss.backward()
            opt.step()
            total_loss += loss_val * len(idx)
            correct += int((np.argmax(out.probs.data, axis=1) == yb).sum())
        history.train_loss.append(total_loss / m)
        history.train_accuracy.append(correct / m)
        if val_set is not None:
            vl, va = _eval_loss_accuracy(model, val_set)
            history.val_loss.append(vl)
            history.val_accuracy.append(va)
    return history


def _eval_loss_accuracy(model: TftModel, ds: WindowedDataset):
    probs = model.predict_proba(ds.samples)
    picked = probs[np.arange(len(ds.labels)), ds.labels]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    acc = float((np.argmax(probs, axis=1) == ds.labels).mean())
    return loss, acc


def predict(model: TftModel, dataset: WindowedDataset,
            batch_size: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    """Class predictions plus the mean variable-selection importance
    (normalized to sum to 1). Argmax ties go to the lowest class id."""
    yhat = np.empty(dataset.n_samples, dtype=np.int64)
    vsn_sum = np.zeros(model.config.n_features)
    x = dataset.samples
    for start in range(0, x.shape[0], batch_size):
        out = model.forward(x[start:start + batch_size])
        yhat[start:start + batch_size] = np.argmax(out.probs.data, axis=1)
        vsn_sum += out.vsn_weights.data.mean(axis=1).sum(axis=0)
    importance = vsn_sum / x.shape[0]
    return yhat, importance / importance.sum()


def evaluate(y_pred, y_true, n_classes: int | None = None,
             history: TrainHistory | None = None) -> EvalReport:
    """Confusion matrix and per-class rates. F1 is defined as 0 when
    precision + recall is 0."""
    y_pred = np.asarray(y_pred, dtype=np.int64)
    y_true = np.asarray(y_true, dtype=np.int64)
    if y_pred.shape != y_true.shape:
        raise TrainError(
            f"length mismatch: {y_pred.shape} vs {y_true.shape}"
        )
    k = int(max(y_pred.max(), y_true.max())) + 1 if n_classes is None else n_classes
    if y_pred.min() < 0 or y_true.min() < 0 or \
            y_pred.max() >= k or y_true.max() >= k:
        raise TrainError(f"labels outside [0,{k})")
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    diag = np.diag(confusion).astype(float)
    col = confusion.sum(axis=0).astype(float)
    row = confusion.sum(axis=1).astype(float)
    precision = np.divide(diag, col, out=np.zeros(k), where=col > 0)
    recall = np.divide(diag, row, out=np.zeros(k), where=row > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(k),
                   where=denom > 0)
    return EvalReport(
        accuracy=float((y_pred == y_true).mean()),
        confusion=confusion,
        precision=precision,
        recall=recall,
        f1=f1,
        macro_f1=float(f1.mean()),
        n_samples=len(y_true),
        history=history,
    )


def curves_svg(history: TrainHistory) -> tuple[str, str]:
    """(accuracy chart, loss chart) as SVG strings."""
    from . import charts
    acc = {"train": history.train_accuracy}
    loss = {"train": history.train_loss}
    if history.val_accuracy:
        acc["validation"] = history.val_accuracy
        loss["validation"] = history.val_loss
    return (charts.line_chart_svg(acc, "Accuracy per epoch"),
            charts.line_chart_svg(loss, "Loss per epoch"))
