"""Desk-scale training and evaluation for the micro CNN.

Classical momentum SGD: weight decay enters as an additive L2 term on the
raw gradient, the momentum buffer starts at zero, and the learning rate
steps down by a fixed factor at configured epoch milestones. Everything is
deterministic given the config seed.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import NumericalAbort
from .net import Network
from .tensor import Tensor, no_grad, softmax_cross_entropy


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_decay_factor: float = 0.1
    lr_milestones: tuple[int, ...] = (15, 25)
    seed: int = 0


class SGD:
    """Momentum SGD with L2 weight decay folded into the gradient."""

    def __init__(self, params, lr, momentum=0.9, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._buffers = {name: np.zeros_like(p.data) for name, p in self.params}

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self):
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            buf = self._buffers[name]
            buf *= self.momentum
            buf += g
            # rebind rather than mutate: tensors stay immutable after construction
            p.data = p.data - self.lr * buf


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    decays = sum(1 for m in cfg.lr_milestones if epoch >= m)
    return cfg.lr * cfg.lr_decay_factor**decays


@dataclass(frozen=True)
class EvalMetrics:
    loss: float
    top1: float
    top5: float | None


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)

    @property
    def final(self) -> EpochStats:
        return self.epochs[-1]

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("epoch,lr,train_loss,train_acc,val_loss,val_acc\n")
        for e in self.epochs:
            out.write(
                f"{e.epoch},{e.lr:.12g},{e.train_loss:.12g},{e.train_acc:.12g},"
                f"{e.val_loss:.12g},{e.val_acc:.12g}\n"
            )
        return out.getvalue()


def _batches(n, batch_size, order=None):
    idx = np.arange(n) if order is None else order
    for lo in range(0, n, batch_size):
        yield idx[lo:lo + batch_size]


def evaluate(network: Network, dataset: Dataset, batch_size: int = 200) -> EvalMetrics:
    """Mean loss, top-1 and (when there are at least 5 classes) top-5 accuracy."""
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    loss_sum = 0.0
    top1 = 0
    top5 = 0
    want_top5 = dataset.num_classes >= 5
    with no_grad():
        for idx in _batches(n, batch_size):
            labels = dataset.labels[idx]
            logits = network.forward(Tensor(dataset.images[idx]))
            loss_sum += float(softmax_cross_entropy(logits, labels).data) * len(idx)
            z = logits.data
            top1 += int((z.argmax(axis=1) == labels).sum())
            if want_top5:
                best5 = np.argpartition(-z, 4, axis=1)[:, :5]
                top5 += int((best5 == labels[:, None]).any(axis=1).sum())
    return EvalMetrics(
        loss=loss_sum / n,
        top1=top1 / n,
        top5=(top5 / n) if want_top5 else None,
    )


def train(network: Network, train_set: Dataset, val_set: Dataset, cfg: TrainConfig) -> TrainReport:
    """Run the full schedule, returning per-epoch train/val loss and accuracy.

    Aborts with :class:`NumericalAbort` the moment a batch loss goes
    non-finite.
    """
    if len(train_set) == 0:
        raise ValueError("empty dataset")
    opt = SGD(
        network.parameters(),
        lr=cfg.lr,
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
    )
    rng = np.random.default_rng(cfg.seed)
    report = TrainReport()
    for epoch in range(cfg.epochs):
        opt.lr = lr_at_epoch(cfg, epoch)
        order = rng.permutation(len(train_set))
        loss_sum = 0.0
        correct = 0
        for step, idx in enumerate(_batches(len(train_set), cfg.batch_size, order)):
            labels = train_set.labels[idx]
            logits = network.forward(Tensor(train_set.images[idx]))
            loss = softmax_cross_entropy(logits, labels)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericalAbort(f"non-finite loss {value} at epoch {epoch}, step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_sum += value * len(idx)
            correct += int((logits.data.argmax(axis=1) == labels).sum())
        val = evaluate(network, val_set)
        report.epochs.append(
            EpochStats(
                epoch=epoch,
                lr=opt.lr,
                train_loss=loss_sum / len(train_set),
                train_acc=correct / len(train_set),
                val_loss=val.loss,
                val_acc=val.top1,
            )
        )
    return report


# ---------------------------------------------------------------------------
# channel-weight export
# ---------------------------------------------------------------------------

def export_channel_weights(network: Network, dataset: Dataset, batch_size: int = 200):
    """Mean attention gate per (site, class, channel), plus an 'all' row set.

    Returns rows ``(site, class_label, channel, weight)`` where class_label
    is the class index as a string or ``"all"`` for the dataset-wide mean.
    Row count is sum over sites of C_site * (num_classes + 1).
    """
    if dataset.labels is None:
        raise ValueError("dataset lacking labels")
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset lacking labels")
    sites = network.attention_sites()
    if not sites:
        return []
    k = dataset.num_classes
    sums = {site: np.zeros((k, c)) for site, c in sites}
    counts = np.zeros(k)
    with no_grad():
        for idx in _batches(n, batch_size):
            labels = dataset.labels[idx]
            gates: list = []
            network.forward(Tensor(dataset.images[idx]), gates=gates)
            np.add.at(counts, labels, 1.0)
            for site, omega in gates:
                np.add.at(sums[site], labels, omega.data)

    rows = []
    for site, c in sites:
        per_class = sums[site] / np.maximum(counts[:, None], 1.0)
        overall = sums[site].sum(axis=0) / n
        for cls in range(k):
            for ch in range(c):
                rows.append((site, str(cls), ch, per_class[cls, ch]))
        for ch in range(c):
            rows.append((site, "all", ch, overall[ch]))
    return rows


def channel_weights_csv(rows) -> str:
    out = io.StringIO()
    out.write("site,class,channel,weight\n")
    for site, cls, ch, w in rows:
        out.write(f"{site},{cls},{ch},{w:.12g}\n")
    return out.getvalue()
