"""Training loop, per-step logging, and evaluation over a sample set."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import SegmentationSample
from .errors import TrainingDivergedError
from .losses import LossConfig, combined_loss
from .metrics import MetricsSummary, dsc_metric, summarize
from .network import Network
from .optim import AdamW, cosine_lr
from .rng import Rng, split
from .tensor import Tape, add, backward, scale


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    steps: int = 2000
    batch: int = 2
    lam: float = 0.6
    weight_decay: float = 0.05
    seed: int = 0


@dataclass
class LogRow:
    step: int
    lr: float
    loss: float
    dsc: float


@dataclass
class TrainLog:
    rows: list[LogRow] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["step,lr,loss,dsc"]
        for r in self.rows:
            lines.append(f"{r.step},{r.lr:.12g},{r.loss:.12g},{r.dsc:.12g}")
        return "\n".join(lines) + "\n"


def _foreground_dsc(pred: np.ndarray, label: np.ndarray, num_classes: int) -> float:
    values = [dsc_metric(pred, label, c) for c in range(1, num_classes)]
    return float(np.mean(values)) if values else float("nan")


def train(net: Network, samples: list[SegmentationSample], cfg: TrainConfig) -> TrainLog:
    """Train in place; deterministic in (net seed, cfg.seed, samples).

    Aborts with a diagnostic naming the step if the loss goes non-finite.
    """
    if not samples:
        raise TrainingDivergedError("cannot train on an empty dataset")
    opt = AdamW(net.parameters(), weight_decay=cfg.weight_decay)
    order = Rng(split(cfg.seed, "batches"))
    loss_cfg = LossConfig(cfg.lam)
    log = TrainLog()
    num_classes = net.cfg.num_classes
    for step in range(cfg.steps):
        lr = cosine_lr(cfg.lr, step, cfg.steps)
        idx = [order.integers(len(samples)) for _ in range(cfg.batch)]
        net.zero_grad()
        batch_dscs = []
        with Tape() as tape:
            loss = None
            for i in idx:
                sample = samples[i]
                out = net.forward(sample.image)
                term = combined_loss(out.logits, out.aux_logits, sample.label, loss_cfg)
                loss = term if loss is None else add(loss, term)
                pred = out.logits.data.argmax(axis=0)
                batch_dscs.append(_foreground_dsc(pred, sample.label, num_classes))
            loss = scale(loss, 1.0 / cfg.batch)
            loss_value = loss.item()
            if not math.isfinite(loss_value):
                raise TrainingDivergedError(f"non-finite loss at step {step}")
            backward(tape, loss)
        opt.step(lr)
        log.rows.append(LogRow(step=step, lr=lr, loss=loss_value,
                               dsc=float(np.mean(batch_dscs))))
    return log


def predict(net: Network, sample: SegmentationSample) -> np.ndarray:
    """Argmax class mask at input resolution (no gradient recording)."""
    return net.forward(sample.image).logits.data.argmax(axis=0)


def evaluate(net: Network, samples: list[SegmentationSample]) -> MetricsSummary:
    preds = [predict(net, s) for s in samples]
    labels = [s.label for s in samples]
    return summarize(preds, labels, net.cfg.num_classes)
