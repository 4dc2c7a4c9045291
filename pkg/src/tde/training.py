"""Loss, Adam, the mini-batch loop with early stopping, and the softmax ablation."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from tde import autodiff as ad
from tde.autodiff import Tape, Tensor
from tde.data import Dataset
from tde.errors import ConfigError, ContractError, NumericError
from tde.metrics import EvalReport, auprc, auroc, evaluate_scores

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
_clamp_events = 0


def clamp_events() -> int:
    """How many true-class probabilities were floored at ``PROB_FLOOR`` so far."""
    return _clamp_events


def nll_loss(probs: Tensor, labels, class_weight: Optional[Sequence[float]] = None) -> Tensor:
    """Mean negative log probability of the true class.

    With ``class_weight`` the mean is weighted by the weight of each row's
    class (an extension; the unweighted form is the default).
    """
    global _clamp_events
    probs = ad.as_tensor(probs)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] != labels.size:
        raise ContractError("probabilities must be batch x classes, one row per label")
    if np.any(np.abs(probs.data.sum(axis=1) - 1.0) > 1e-9):
        raise ContractError("probability rows must sum to 1")
    onehot = np.zeros(probs.shape)
    onehot[np.arange(labels.size), labels] = 1.0
    p_true = (probs * Tensor._wrap(onehot, False)).sum(axis=1)
    n_floor = int(np.sum(p_true.data <= PROB_FLOOR))
    if n_floor:
        _clamp_events += n_floor
        log.warning("clamped %d true-class probabilities at %g", n_floor, PROB_FLOOR)
    nll = -ad.log(ad.clamp_min(p_true, PROB_FLOOR))
    if class_weight is None:
        return nll.mean()
    w = np.asarray(class_weight, dtype=np.float64)[labels]
    return (nll * Tensor._wrap(w / w.sum(), False)).sum()


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls(m=[np.zeros(p.shape) for p in params], v=[np.zeros(p.shape) for p in params])


def adam_step(params: Sequence[Tensor], grads: Sequence, state: AdamState, lr: float) -> Sequence[Tensor]:
    """Bias-corrected Adam update, applied in place to ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractError("params, grads and optimizer state must align")
    grads = [np.zeros(p.shape) if g is None else np.asarray(g, dtype=np.float64) for p, g in zip(params, grads)]
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for k, (p, g) in enumerate(zip(params, grads)):
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = state.m[k] / c1
        v_hat = state.v[k] / c2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


@dataclass
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 0.001
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    class_weight: Optional[tuple] = None
    eval_batch_size: int = 512

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_auroc: float
    val_auprc: float
    sec_per_epoch: float


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without a strictly better score."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_score = -np.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, score: float) -> bool:
        """Record one epoch; returns True when training should stop."""
        if score > self.best_score:
            self.best_score = score
            self.best_epoch = epoch
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass
class History:
    records: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,train_loss,val_auroc,val_auprc,sec_per_epoch\n")
            for r in self.records:
                fh.write(f"{r.epoch},{r.train_loss!r},{r.val_auroc!r},{r.val_auprc!r},{r.sec_per_epoch!r}\n")

    def __len__(self) -> int:
        return len(self.records)


def batch_loss(model, batch, rng=None, class_weight=None) -> Tensor:
    return nll_loss(model.predict_batch(batch, rng), batch.labels, class_weight)


def train_step(model, batch, state: AdamState, lr: float, rng=None, class_weight=None) -> float:
    """Forward, backward and one Adam update on a prepared batch; returns the loss."""
    params = model.parameters()
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = batch_loss(model, batch, rng, class_weight)
    if not np.isfinite(loss.item()):
        raise NumericError("loss is not finite")
    tape.backward(loss)
    adam_step(params, [p.grad for p in params], state, lr)
    return loss.item()


def predict_scores(model, ds: Dataset, batch_size: int = 512) -> np.ndarray:
    """Probability of class 1 (binary) or the full probability matrix."""
    items = [model.prepare(inst) for inst in ds]
    chunks = []
    for start in range(0, len(items), batch_size):
        batch = model.collate(items[start : start + batch_size])
        chunks.append(model.predict_batch(batch).data)
    probs = np.vstack(chunks) if chunks else np.zeros((0, model.config.n_classes))
    return probs[:, 1] if probs.shape[1] == 2 else probs


def evaluate(model, ds: Dataset, n_bootstrap: int = 1000, seed: int = 0, batch_size: int = 512) -> EvalReport:
    return evaluate_scores(predict_scores(model, ds, batch_size), ds.labels, n_bootstrap, seed)


def train(model, train_ds: Dataset, val_ds: Dataset, config: TrainConfig, on_epoch=None):
    """Mini-batch Adam with early stopping on validation AUROC.

    Returns ``(model, history)``; the model carries the parameters of the best
    validation epoch.  ``on_epoch(record)`` is called after every epoch.
    """
    train_ids = {i.id for i in train_ds}
    if any(i.id in train_ids for i in val_ds):
        raise ContractError("training and validation splits overlap")
    items = [model.prepare(inst) for inst in train_ds]
    shuffle_rng = np.random.default_rng([config.seed, 1])
    dropout_rng = np.random.default_rng([config.seed, 2])
    state = AdamState.for_params(model.parameters())
    stopper = EarlyStopping(config.patience)
    history = History()
    best_state = model.state()
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(items))
        start_time = time.perf_counter()
        losses, sizes = [], []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = model.collate([items[k] for k in idx])
            losses.append(train_step(model, batch, state, config.learning_rate,
                                     dropout_rng, config.class_weight))
            sizes.append(len(idx))
        elapsed = time.perf_counter() - start_time
        scores = predict_scores(model, val_ds, config.eval_batch_size)
        y = val_ds.labels
        rec = EpochRecord(
            epoch=epoch,
            train_loss=float(np.average(losses, weights=sizes)),
            val_auroc=auroc(scores, y),
            val_auprc=auprc(scores, y),
            sec_per_epoch=elapsed,
        )
        history.records.append(rec)
        log.info("epoch %d loss %.4f val auroc %.4f auprc %.4f (%.2fs)", epoch,
                 rec.train_loss, rec.val_auroc, rec.val_auprc, elapsed)
        if on_epoch is not None:
            on_epoch(rec)
        stop = stopper.update(epoch, rec.val_auroc)
        if stopper.best_epoch == epoch:
            best_state = model.state()
        if stop:
            history.stopped_early = True
            break
    history.best_epoch = stopper.best_epoch
    model.load_state(best_state)
    return model, history


@dataclass
class AblationArm:
    name: str
    report: EvalReport
    history: History


def run_ablation(train_ds, val_ds, test_ds, model_config, train_config: TrainConfig,
                 model_seed: int = 0, n_bootstrap: int = 1000):
    """Train the softmax and non-softmax attention arms from identical initial
    parameters and report paired test metrics."""
    from tde.model import TdeModel

    if model_config.mode != "attention":
        raise ConfigError("the softmax ablation needs attention mode")
    arms = []
    for name, flag in (("softmax", True), ("non-softmax", False)):
        cfg = dataclasses.replace(model_config, attention_softmax=flag)
        model = TdeModel(cfg, seed=model_seed)
        model, hist = train(model, train_ds, val_ds, train_config)
        report = evaluate(model, test_ds, n_bootstrap, seed=train_config.seed)
        arms.append(AblationArm(name, report, hist))
    return arms


def ablation_report(arms) -> dict:
    return {
        "arms": [
            {"attention": a.name, "best_epoch": a.history.best_epoch, **a.report.to_dict()}
            for a in arms
        ]
    }
