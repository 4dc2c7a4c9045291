"""Building blocks shared by the TDE model and the structured GRU baseline."""

from __future__ import annotations

import base64
import json
from collections import OrderedDict
from pathlib import Path
from typing import Optional

import numpy as np

from tde import autodiff as ad
from tde.autodiff import Tensor
from tde.errors import ConfigError

CHECKPOINT_FORMAT = "tde-checkpoint/1"


def init_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> Tensor:
    """uniform(-a, a) with a = 1/sqrt(fan_in)."""
    a = 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-a, a, size=shape), requires_grad=True)


def gru_params(rng: np.random.Generator, input_dim: int, hidden: int) -> "OrderedDict[str, Tensor]":
    p = OrderedDict()
    for gate in ("r", "z", "h"):
        p[f"W_{gate}"] = init_uniform(rng, (hidden, input_dim), input_dim)
    for gate in ("r", "z", "h"):
        p[f"U_{gate}"] = init_uniform(rng, (hidden, hidden), hidden)
    for gate in ("r", "z", "h"):
        p[f"b_{gate}"] = init_uniform(rng, (hidden,), input_dim)
    return p


class GruCell:
    """GRU update with weights stored as (hidden x input).

    Transposes are taken once per forward pass so each step costs only the
    gate arithmetic.
    """

    def __init__(self, params: dict):
        self.Wr, self.Wz, self.Wh = (ad.transpose(params[k]) for k in ("W_r", "W_z", "W_h"))
        self.Ur, self.Uz, self.Uh = (ad.transpose(params[k]) for k in ("U_r", "U_z", "U_h"))
        self.br, self.bz, self.bh = params["b_r"], params["b_z"], params["b_h"]

    def step(self, h_prev: Tensor, s: Tensor) -> Tensor:
        r = ad.sigmoid(s @ self.Wr + h_prev @ self.Ur + self.br)
        z = ad.sigmoid(s @ self.Wz + h_prev @ self.Uz + self.bz)
        h_tilde = ad.tanh(s @ self.Wh + (r * h_prev) @ self.Uh + self.bh)
        return z * h_tilde + (1.0 - z) * h_prev


def gru_step(h_prev, s_t, params: dict) -> Tensor:
    """One recurrence step on row-stacked states (B x hidden) and inputs (B x input)."""
    h_prev, s_t = ad.as_tensor(h_prev), ad.as_tensor(s_t)
    squeeze = h_prev.ndim == 1
    if squeeze:
        h_prev, s_t = h_prev.reshape(1, -1), s_t.reshape(1, -1)
    h = GruCell(params).step(h_prev, s_t)
    return h.reshape(-1) if squeeze else h


def classifier_params(rng: np.random.Generator, hidden: int, width: int, n_classes: int):
    p = OrderedDict()
    p["c_W1"] = init_uniform(rng, (width, hidden), hidden)
    p["c_b1"] = init_uniform(rng, (width,), hidden)
    p["c_W2"] = init_uniform(rng, (n_classes, width), width)
    p["c_b2"] = init_uniform(rng, (n_classes,), width)
    return p


def classifier_logits(h: Tensor, params: dict, dropout: float = 0.0, rng=None) -> Tensor:
    """One hidden-layer classifier; dropout acts on its input."""
    h = ad.dropout(h, dropout, rng)
    hidden = ad.relu(h @ ad.transpose(params["c_W1"]) + params["c_b1"])
    return hidden @ ad.transpose(params["c_W2"]) + params["c_b2"]


def _encode(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode(text: str, shape) -> np.ndarray:
    return np.frombuffer(base64.b64decode(text), dtype="<f8").reshape(shape).astype(np.float64)


def save_checkpoint(path, kind: str, config: dict, params: dict, extra: Optional[dict] = None) -> None:
    """Write a JSON container; float payloads are base64 little-endian f64."""
    blob = {
        "format": CHECKPOINT_FORMAT,
        "kind": kind,
        "config": config,
        "params": {
            name: {"shape": list(t.shape), "data": _encode(t.data)} for name, t in params.items()
        },
    }
    if extra:
        blob.update(extra)
    Path(path).write_text(json.dumps(blob, indent=1))


def load_checkpoint(path) -> dict:
    blob = json.loads(Path(path).read_text())
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: unsupported checkpoint format {blob.get('format')!r}")
    blob["params"] = OrderedDict(
        (name, _decode(p["data"], p["shape"])) for name, p in blob["params"].items()
    )
    return blob
