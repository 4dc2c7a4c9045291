"""Temporal dynamic embedding for irregularly sampled multivariate time series."""

from tde.autodiff import Tape, Tensor
from tde.baseline import GruBaselineConfig, StructuredGruModel
from tde.data import Dataset, Instance, Schema, load_events
from tde.metrics import EvalReport, auprc, auroc
from tde.model import TdeConfig, TdeModel, forward, predict_online
from tde.training import TrainConfig, train

__version__ = "0.1.0"
