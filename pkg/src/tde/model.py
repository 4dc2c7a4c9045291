"""Temporal Dynamic Embedding network.

For one instance, observations are grouped by unique timestamp.  Each group
becomes a *local status*: the value-weighted aggregate of the embeddings of the
variables observed at that time plus a learned embedding of the time itself.
A GRU consumes local statuses in time order (the *global status*) and a small
classifier reads the last hidden state.

All instances of a batch are packed together: per-observation arrays carry the
index of their (instance, time) group, and sums over a group are segment sums.
The recurrence runs over the longest sequence with a per-instance step mask, so
shorter instances keep their state once their own steps are exhausted.
"""

from __future__ import annotations

import csv
import dataclasses
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from tde import autodiff as ad
from tde import nn
from tde.autodiff import Tensor
from tde.data import Dataset, Instance
from tde.errors import ConfigError, ContractError, DataError, DimensionError


@dataclass
class TdeConfig:
    """Architecture hyperparameters.

    ``qk_dim`` and ``v_dim`` default to ``var_dim // heads``.  ``agg_dim``
    defaults to ``var_dim`` and must equal it in mean mode.
    """

    D: int
    D_static: int = 0
    n_classes: int = 2
    mode: str = "attention"
    attention_softmax: bool = False
    var_dim: int = 16
    static_dim: int = 4
    time_dim: int = 16
    agg_dim: Optional[int] = None
    hidden: int = 32
    heads: int = 1
    qk_dim: Optional[int] = None
    v_dim: Optional[int] = None
    f_hidden: Optional[int] = None
    clf_hidden: int = 32
    dropout: float = 0.0

    def __post_init__(self):
        if self.agg_dim is None:
            self.agg_dim = self.var_dim
        if self.qk_dim is None:
            self.qk_dim = max(1, self.var_dim // self.heads)
        if self.v_dim is None:
            self.v_dim = max(1, self.var_dim // self.heads)
        if self.f_hidden is None:
            self.f_hidden = self.agg_dim
        self.validate()

    def validate(self) -> None:
        if self.mode not in ("mean", "attention"):
            raise ConfigError(f"mode must be 'mean' or 'attention', got {self.mode!r}")
        if self.mode == "mean" and self.agg_dim != self.var_dim:
            raise ConfigError("mean aggregation needs agg_dim == var_dim")
        if self.D < 1 or self.D_static < 0 or self.n_classes < 2:
            raise ConfigError("need D >= 1, D_static >= 0, n_classes >= 2")
        for name in ("var_dim", "static_dim", "time_dim", "agg_dim", "hidden", "heads",
                     "qk_dim", "v_dim", "f_hidden", "clf_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class TdeModel:
    """Parameters of the TDE network, keyed by name in a fixed order."""

    kind = "tde"

    def __init__(self, config: TdeConfig, seed: int = 0, params: Optional[dict] = None):
        self.config = config
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        self.params: "OrderedDict[str, Tensor]" = OrderedDict(params)

    def _init_params(self, rng: np.random.Generator) -> "OrderedDict[str, Tensor]":
        c = self.config
        init = nn.init_uniform
        p = OrderedDict()
        p["W_e"] = init(rng, (c.var_dim, c.D), 1)
        p["b_e"] = init(rng, (c.var_dim,), 1)
        if c.D_static:
            p["W_s"] = init(rng, (c.static_dim, c.D_static), 1)
            p["b_s"] = init(rng, (c.static_dim,), 1)
            p["W_h0"] = init(rng, (c.hidden, c.static_dim), c.static_dim)
        p["omega"] = init(rng, (c.time_dim,), 1)
        p["beta"] = init(rng, (c.time_dim,), 1)
        if c.time_dim != c.agg_dim:
            p["W_t"] = init(rng, (c.agg_dim, c.time_dim), c.time_dim)
        if c.mode == "attention":
            p["W_q"] = init(rng, (c.heads * c.qk_dim, c.var_dim), c.var_dim)
            p["W_k"] = init(rng, (c.heads * c.qk_dim, c.var_dim), c.var_dim)
            p["W_v"] = init(rng, (c.heads * c.v_dim, c.var_dim), c.var_dim)
            p["f_W1"] = init(rng, (c.f_hidden, c.heads * c.v_dim), c.heads * c.v_dim)
            p["f_b1"] = init(rng, (c.f_hidden,), c.heads * c.v_dim)
            p["f_W2"] = init(rng, (c.agg_dim, c.f_hidden), c.f_hidden)
            p["f_b2"] = init(rng, (c.agg_dim,), c.f_hidden)
        p.update(nn.gru_params(rng, c.agg_dim, c.hidden))
        p.update(nn.classifier_params(rng, c.hidden, c.clf_hidden, c.n_classes))
        return p

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def n_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    def copy(self) -> "TdeModel":
        params = OrderedDict((k, Tensor(v.data, requires_grad=True)) for k, v in self.params.items())
        return type(self)(dataclasses.replace(self.config), params=params)

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in self.params.items():
            if state[k].shape != v.shape:
                raise DimensionError(f"parameter {k}: shape {state[k].shape} != {v.shape}")
            v.data = np.array(state[k], dtype=np.float64)

    def save(self, path, extra: Optional[dict] = None) -> None:
        nn.save_checkpoint(path, self.kind, self.config.to_dict(), self.params, extra)

    @classmethod
    def from_checkpoint(cls, blob: dict) -> "TdeModel":
        config = TdeConfig(**blob["config"])
        params = OrderedDict((k, Tensor(v, requires_grad=True)) for k, v in blob["params"].items())
        return cls(config, params=params)

    # training protocol: per-instance preparation, batch collation, probabilities
    def prepare(self, inst: Instance) -> Instance:
        return inst

    def collate(self, items: Sequence[Instance]) -> "PackedBatch":
        return pack(items)

    def predict_batch(self, batch: "PackedBatch", rng=None) -> Tensor:
        return forward_batch(self, batch, rng).probs


# -- packing ------------------------------------------------------------------


@dataclass
class PackedBatch:
    """Index arrays describing a batch of instances (no parameters involved)."""

    n: int
    var: np.ndarray
    val: np.ndarray
    group: np.ndarray
    group_time: np.ndarray
    group_count: np.ndarray
    group_instance: np.ndarray
    steps: np.ndarray
    n_steps: np.ndarray
    static_var: np.ndarray
    static_val: np.ndarray
    static_owner: np.ndarray
    static_count: np.ndarray
    labels: np.ndarray
    ids: list = field(default_factory=list)

    @property
    def n_groups(self) -> int:
        return int(self.group_time.size)


def pack(instances: Sequence[Instance]) -> PackedBatch:
    var, val, group = [], [], []
    g_time, g_count, g_inst = [], [], []
    s_var, s_val, s_owner = [], [], []
    n_steps = np.zeros(len(instances), dtype=np.int64)
    offset = 0
    for b, inst in enumerate(instances):
        if len(inst) == 0 and inst.static_vars.size == 0:
            raise DataError(f"instance {inst.id} has neither observations nor statics")
        times, local = np.unique(inst.times, return_inverse=True)
        var.append(inst.variables)
        val.append(inst.values)
        group.append(local.reshape(-1) + offset)
        g_time.append(times)
        g_count.append(np.bincount(local.reshape(-1), minlength=times.size))
        g_inst.append(np.full(times.size, b))
        n_steps[b] = times.size
        offset += times.size
        s_var.append(inst.static_vars)
        s_val.append(inst.static_values)
        s_owner.append(np.full(inst.static_vars.size, b))
    T = int(n_steps.max()) if len(instances) else 0
    steps = np.full((len(instances), T), -1, dtype=np.int64)
    start = 0
    for b, k in enumerate(n_steps):
        steps[b, :k] = np.arange(start, start + k)
        start += k

    def cat(parts, dtype):
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype)

    owner = cat(s_owner, np.int64)
    return PackedBatch(
        n=len(instances),
        var=cat(var, np.int64),
        val=cat(val, np.float64),
        group=cat(group, np.int64),
        group_time=cat(g_time, np.float64),
        group_count=cat(g_count, np.float64),
        group_instance=cat(g_inst, np.int64),
        steps=steps,
        n_steps=n_steps,
        static_var=cat(s_var, np.int64),
        static_val=cat(s_val, np.float64),
        static_owner=owner,
        static_count=np.bincount(owner, minlength=len(instances)).astype(np.float64),
        labels=np.array([i.label for i in instances], dtype=np.int64),
        ids=[i.id for i in instances],
    )


# -- components ---------------------------------------------------------------


def embed_variables(model: TdeModel, variables: np.ndarray) -> Tensor:
    """ReLU(W_e d_i + b_e) for each indicator in ``variables`` (rows)."""
    W_e = model.params["W_e"]
    variables = np.asarray(variables, dtype=np.int64)
    if variables.size and (variables.min() < 0 or variables.max() >= model.config.D):
        raise DimensionError(f"variable index out of range [0, {model.config.D})")
    return ad.relu(ad.gather_rows(ad.transpose(W_e), variables) + model.params["b_e"])


def embed_times(model: TdeModel, times: np.ndarray) -> Tensor:
    """Rows of [w0 t + b0, sin(w_i t + b_i) for i >= 1]."""
    times = np.asarray(times, dtype=np.float64).reshape(-1, 1)
    pre = Tensor._wrap(times, False) * model.params["omega"] + model.params["beta"]
    if model.config.time_dim == 1:
        return pre
    return ad.concat([pre[:, :1], ad.sin(pre[:, 1:])], axis=1)


def time_term(model: TdeModel, times: np.ndarray) -> Tensor:
    phi = embed_times(model, times)
    if "W_t" in model.params:
        return phi @ ad.transpose(model.params["W_t"])
    return phi


def _column(x: np.ndarray) -> Tensor:
    return Tensor._wrap(np.asarray(x, dtype=np.float64).reshape(-1, 1), False)


def _mean_values(model, E, batch: PackedBatch) -> Tensor:
    alpha = batch.val / batch.group_count[batch.group]
    return ad.segment_sum(E * _column(alpha), batch.group, batch.n_groups)


def _block_ones(heads: int, width: int) -> Tensor:
    return Tensor._wrap(np.kron(np.eye(heads), np.ones((width, 1))), False)


def attention_scores(model: TdeModel, E: Tensor, batch: PackedBatch) -> Tensor:
    """Per observation i and head h: sum_j x_j Q_i.K_j / sqrt(D_k) over its group,
    normalised over the group by softmax when the ablation arm is active."""
    c = model.config
    Q = E @ ad.transpose(model.params["W_q"])
    K = E @ ad.transpose(model.params["W_k"])
    key_sum = ad.segment_sum(K * _column(batch.val), batch.group, batch.n_groups)
    scores = (Q * ad.gather_rows(key_sum, batch.group)) @ _block_ones(c.heads, c.qk_dim)
    scores = scores * (1.0 / np.sqrt(c.qk_dim))
    if not c.attention_softmax:
        return scores
    # shift by the per-(group, head) max; the shift cancels in the ratio
    shift = np.full((batch.n_groups, c.heads), -np.inf)
    np.maximum.at(shift, batch.group, scores.data)
    ex = ad.exp(scores - Tensor._wrap(shift[batch.group], False))
    denom = ad.gather_rows(ad.segment_sum(ex, batch.group, batch.n_groups), batch.group)
    return ex / denom


def _attention_values(model, E, batch: PackedBatch, rng=None, pre_f: bool = False) -> Tensor:
    c = model.config
    alpha = attention_scores(model, E, batch)
    V = E @ ad.transpose(model.params["W_v"])
    weighted = (alpha @ ad.transpose(_block_ones(c.heads, c.v_dim))) * V
    heads = ad.segment_sum(weighted, batch.group, batch.n_groups)
    if pre_f:
        return heads
    p = model.params
    hidden = ad.relu(heads @ ad.transpose(p["f_W1"]) + p["f_b1"])
    hidden = ad.dropout(hidden, c.dropout, rng)
    return hidden @ ad.transpose(p["f_W2"]) + p["f_b2"]


def local_status(model: TdeModel, batch: PackedBatch, rng=None) -> Tensor:
    """One aggregated row per (instance, time) group."""
    if batch.n_groups == 0:
        return Tensor._wrap(np.zeros((0, model.config.agg_dim)), False)
    E = embed_variables(model, batch.var)
    if model.config.mode == "mean":
        agg = _mean_values(model, E, batch)
    else:
        agg = _attention_values(model, E, batch, rng)
    return agg + time_term(model, batch.group_time)


def initial_state(model: TdeModel, batch: PackedBatch) -> Tensor:
    """tanh(W_h0 . value-weighted mean static embedding); zero without statics."""
    c = model.config
    if c.D_static == 0 or batch.static_var.size == 0:
        return Tensor._wrap(np.zeros((batch.n, c.hidden)), False)
    p = model.params
    if batch.static_var.max() >= c.D_static:
        raise DimensionError("static index out of range")
    E = ad.relu(ad.gather_rows(ad.transpose(p["W_s"]), batch.static_var) + p["b_s"])
    weight = batch.static_val / batch.static_count[batch.static_owner]
    pooled = ad.segment_sum(E * _column(weight), batch.static_owner, batch.n)
    return ad.tanh(pooled @ ad.transpose(p["W_h0"]))


@dataclass
class BatchOutput:
    local: Tensor
    hidden: list
    final: Tensor
    logits: Tensor
    probs: Tensor
    h0: Tensor


def forward_batch(model: TdeModel, batch: PackedBatch, rng=None, keep_hidden: bool = False) -> BatchOutput:
    """Differentiable forward pass over a packed batch.

    ``rng`` enables dropout (training mode); pass None for evaluation.
    """
    c = model.config
    S = local_status(model, batch, rng)
    h = initial_state(model, batch)
    h0 = h
    cell = nn.GruCell(model.params)
    hidden = []
    T = batch.steps.shape[1]
    for k in range(T):
        idx = batch.steps[:, k]
        active = idx >= 0
        s_k = ad.gather_rows(S, np.where(active, idx, 0))
        h_new = cell.step(h, s_k)
        if active.all():
            h = h_new
        else:
            m = _column(active.astype(np.float64))
            h = h_new * m + h * (1.0 - m)
        if keep_hidden:
            hidden.append(h)
    logits = nn.classifier_logits(h, model.params, c.dropout, rng)
    return BatchOutput(S, hidden, h, logits, ad.softmax(logits, axis=1), h0)


# -- single-instance API --------------------------------------------------------


@dataclass
class TimeStepGroup:
    time: float
    variables: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.variables = np.asarray(self.variables, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.variables.size == 0:
            raise ContractError("a time-step group needs at least one observation")
        if np.unique(self.variables).size != self.variables.size:
            raise ContractError("variables within a time-step group must be distinct")

    def as_batch(self) -> PackedBatch:
        inst = Instance.from_arrays("group", np.full(self.variables.size, self.time),
                                    self.values, self.variables)
        return pack([inst])


@dataclass
class ForwardTrace:
    times: np.ndarray
    local: np.ndarray
    hidden: np.ndarray
    h0: np.ndarray
    logits: np.ndarray
    probabilities: np.ndarray


def variable_embed(i: int, model: TdeModel) -> np.ndarray:
    return embed_variables(model, np.array([i])).data[0].copy()


def time_embed(t: float, model: TdeModel) -> np.ndarray:
    return embed_times(model, np.array([t])).data[0].copy()


def aggregate_mean(group: TimeStepGroup, model: TdeModel) -> np.ndarray:
    if model.config.mode != "mean" and model.config.agg_dim != model.config.var_dim:
        raise ConfigError("mean aggregation needs agg_dim == var_dim")
    batch = group.as_batch()
    E = embed_variables(model, batch.var)
    return (_mean_values(model, E, batch) + time_term(model, batch.group_time)).data[0].copy()


def aggregate_attention(group: TimeStepGroup, model: TdeModel) -> np.ndarray:
    if "W_q" not in model.params:
        raise ConfigError("model has no attention parameters")
    batch = group.as_batch()
    E = embed_variables(model, batch.var)
    return (_attention_values(model, E, batch) + time_term(model, batch.group_time)).data[0].copy()


def attention_weights(group: TimeStepGroup, model: TdeModel) -> np.ndarray:
    """Weights (observations x heads) the attention arm puts on each value vector,
    rows in the order of ``group.variables``."""
    batch = group.as_batch()
    scores = attention_scores(model, embed_variables(model, batch.var), batch).data
    out = np.empty_like(scores)
    out[np.argsort(group.variables, kind="stable")] = scores
    return out


def head_outputs(group: TimeStepGroup, model: TdeModel) -> np.ndarray:
    """Concatenated head outputs before the map f."""
    batch = group.as_batch()
    E = embed_variables(model, batch.var)
    return _attention_values(model, E, batch, pre_f=True).data[0].copy()


def forward(inst: Instance, model: TdeModel) -> ForwardTrace:
    batch = pack([inst])
    out = forward_batch(model, batch, keep_hidden=True)
    hidden = (
        np.vstack([h.data for h in out.hidden])
        if out.hidden
        else np.zeros((0, model.config.hidden))
    )
    return ForwardTrace(
        times=batch.group_time.copy(),
        local=out.local.data.copy(),
        hidden=hidden,
        h0=out.h0.data[0].copy(),
        logits=out.logits.data[0].copy(),
        probabilities=out.probs.data[0].copy(),
    )


def predict_online(inst: Instance, model: TdeModel) -> list:
    """Class probabilities after each unique timestep.

    For binary tasks each entry is ``(time, P(class 1))``; otherwise the full
    probability vector.  Step k only sees observations up to its own time.
    """
    batch = pack([inst])
    out = forward_batch(model, batch, keep_hidden=True)
    result = []
    for t, h in zip(batch.group_time, out.hidden):
        probs = ad.softmax(nn.classifier_logits(h, model.params), axis=1).data[0]
        result.append((float(t), float(probs[1]) if probs.size == 2 else probs.copy()))
    return result


def export_embeddings(ds: Dataset, model: TdeModel, out_path, which: str = "global",
                      batch_size: int = 256) -> int:
    """Write local statuses (one row per instance and time) or final hidden
    states (one row per instance) as CSV; returns the number of data rows."""
    if which not in ("local", "global"):
        raise ValueError("which must be 'local' or 'global'")
    width = model.config.agg_dim if which == "local" else model.config.hidden
    rows = 0
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", "time", "label"] + [f"dim_{k}" for k in range(width)])
        for start in range(0, len(ds), batch_size):
            chunk = ds.instances[start : start + batch_size]
            batch = pack(chunk)
            out = forward_batch(model, batch)
            if which == "local":
                for g in range(batch.n_groups):
                    b = batch.group_instance[g]
                    w.writerow([chunk[b].id, repr(float(batch.group_time[g])), chunk[b].label]
                               + [repr(float(v)) for v in out.local.data[g]])
                    rows += 1
            else:
                for b, inst in enumerate(chunk):
                    last = batch.group_time[batch.steps[b, batch.n_steps[b] - 1]] if batch.n_steps[b] else 0.0
                    w.writerow([inst.id, repr(float(last)), inst.label]
                               + [repr(float(v)) for v in out.final.data[b]])
                    rows += 1
    return rows
