"""GRU over fixed-width time bins with zero imputation.

Each instance is discretized into a ``T_bins x D`` grid (empty cells are 0);
the static vector is appended to every row, a linear map projects the row to
the GRU input width, and the GRU runs over all bins.
"""

from __future__ import annotations

import dataclasses
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from tde import autodiff as ad
from tde import nn
from tde.autodiff import Tensor
from tde.data import Instance, StructuredGrid, discretize, n_bins_for
from tde.errors import ConfigError, DimensionError


@dataclass
class GruBaselineConfig:
    D: int
    D_static: int = 0
    n_classes: int = 2
    bin_hours: float = 1.0
    horizon_hours: float = 48.0
    input_dim: int = 32
    hidden: int = 32
    clf_hidden: int = 32
    dropout: float = 0.0

    def __post_init__(self):
        if self.D < 1 or self.D_static < 0 or self.n_classes < 2:
            raise ConfigError("need D >= 1, D_static >= 0, n_classes >= 2")
        n_bins_for(self.bin_hours, self.horizon_hours)
        for name in ("input_dim", "hidden", "clf_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    @property
    def n_bins(self) -> int:
        return n_bins_for(self.bin_hours, self.horizon_hours)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class GridBatch:
    values: np.ndarray  # B x T x D
    statics: np.ndarray  # B x D_static
    labels: np.ndarray
    ids: list


class StructuredGruModel:
    kind = "gru-baseline"

    def __init__(self, config: GruBaselineConfig, seed: int = 0, params: Optional[dict] = None):
        self.config = config
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        self.params: "OrderedDict[str, Tensor]" = OrderedDict(params)

    def _init_params(self, rng) -> "OrderedDict[str, Tensor]":
        c = self.config
        width = c.D + c.D_static
        p = OrderedDict()
        p["W_in"] = nn.init_uniform(rng, (c.input_dim, width), width)
        p["b_in"] = nn.init_uniform(rng, (c.input_dim,), width)
        p.update(nn.gru_params(rng, c.input_dim, c.hidden))
        p.update(nn.classifier_params(rng, c.hidden, c.clf_hidden, c.n_classes))
        return p

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

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
    def from_checkpoint(cls, blob: dict) -> "StructuredGruModel":
        config = GruBaselineConfig(**blob["config"])
        params = OrderedDict((k, Tensor(v, requires_grad=True)) for k, v in blob["params"].items())
        return cls(config, params=params)

    def statics_vector(self, inst: Instance) -> np.ndarray:
        out = np.zeros(self.config.D_static)
        if inst.static_vars.size:
            if inst.static_vars.max() >= self.config.D_static:
                raise DimensionError("static index out of range")
            out[inst.static_vars] = inst.static_values
        return out

    def prepare(self, inst: Instance):
        c = self.config
        grid = discretize(inst, c.bin_hours, c.horizon_hours, c.D)
        return grid, self.statics_vector(inst), inst.label, inst.id

    def collate(self, items: Sequence) -> GridBatch:
        c = self.config
        return GridBatch(
            values=np.stack([g.values for g, _, _, _ in items]) if items else np.zeros((0, c.n_bins, c.D)),
            statics=np.stack([s for _, s, _, _ in items]) if items else np.zeros((0, c.D_static)),
            labels=np.array([y for _, _, y, _ in items], dtype=np.int64),
            ids=[i for _, _, _, i in items],
        )

    def predict_batch(self, batch: GridBatch, rng=None) -> Tensor:
        return _forward_grid(self, batch.values, batch.statics, rng)


def _forward_grid(model: StructuredGruModel, values: np.ndarray, statics: np.ndarray, rng=None) -> Tensor:
    c = model.config
    B, T, D = values.shape
    if D != c.D or statics.shape != (B, c.D_static):
        raise DimensionError(f"grid width {D} + statics {statics.shape[-1]} != {c.D} + {c.D_static}")
    rows = np.concatenate([values, np.repeat(statics[:, None, :], T, axis=1)], axis=2)
    p = model.params
    # project every (instance, bin) row at once; row b*T + k is bin k of instance b
    S = Tensor._wrap(rows.reshape(B * T, -1), False) @ ad.transpose(p["W_in"]) + p["b_in"]
    cell = nn.GruCell(p)
    h = Tensor._wrap(np.zeros((B, c.hidden)), False)
    base = np.arange(B) * T
    for k in range(T):
        h = cell.step(h, ad.gather_rows(S, base + k))
    logits = nn.classifier_logits(h, p, c.dropout, rng)
    return ad.softmax(logits, axis=1)


def baseline_forward(grid: StructuredGrid, statics, model: StructuredGruModel) -> np.ndarray:
    """Class probabilities for one discretized instance."""
    c = model.config
    if not np.isclose(grid.bin_hours, c.bin_hours, rtol=0, atol=1e-12):
        raise ConfigError(f"grid bin width {grid.bin_hours} != model bin width {c.bin_hours}")
    if grid.n_bins != c.n_bins:
        raise ConfigError(f"grid has {grid.n_bins} bins, model expects {c.n_bins}")
    statics = np.asarray(statics, dtype=np.float64).reshape(1, -1)
    values = np.where(grid.mask > 0, grid.values, 0.0)[None]
    return _forward_grid(model, values, statics).data[0].copy()
