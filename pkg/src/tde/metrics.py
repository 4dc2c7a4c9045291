"""Ranking metrics for imbalanced binary classification."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy.stats import rankdata

from tde.errors import MetricError

MAX_REDRAWS = 100


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise MetricError(f"{s.size} scores but {y.size} labels")
    if not np.all(np.isin(y, (0, 1))):
        raise MetricError("labels must be binary 0/1")
    if not np.all(np.isfinite(s)):
        raise MetricError("scores must be finite")
    return s, y.astype(np.int64)


def auroc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), via the rank-sum statistic."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC needs both classes present")
    ranks = rankdata(s)  # average ranks; tie groups share half-integer ranks
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Average precision: sum over distinct thresholds of (R_k - R_{k-1}) * P_k."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricError("AUPRC needs at least one positive")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each block of equal scores
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[last].astype(np.float64)
    total = (last + 1).astype(np.float64)
    d_tp = np.diff(np.r_[0.0, tp])
    terms = (d_tp / n_pos) * (tp / total)
    return float(math.fsum(terms.tolist()))


def bootstrap_ci(
    scores,
    labels,
    metric: Callable,
    n_bootstrap: int = 1000,
    seed: int = 0,
    level: float = 0.95,
) -> tuple[float, float]:
    """Percentile interval of ``metric`` over resamples drawn with replacement.

    A resample missing either class is redrawn, at most ``MAX_REDRAWS`` times.
    """
    if n_bootstrap < 100:
        raise MetricError("n_bootstrap must be at least 100")
    if not 0.0 < level < 1.0:
        raise MetricError("level must lie in (0, 1)")
    s, y = _check(scores, labels)
    rng = np.random.default_rng(seed)
    n = s.size
    values = np.empty(n_bootstrap)
    for b in range(n_bootstrap):
        for _ in range(MAX_REDRAWS + 1):
            idx = rng.integers(0, n, size=n)
            yb = y[idx]
            if 0 < yb.sum() < n:
                break
        else:
            raise MetricError("could not draw a resample containing both classes")
        values[b] = metric(s[idx], yb)
    tail = (1.0 - level) / 2.0 * 100.0
    lo, hi = np.percentile(values, [tail, 100.0 - tail])
    return float(lo), float(hi)


@dataclass
class EvalReport:
    auroc: float
    auprc: float
    auroc_ci: tuple
    auprc_ci: tuple
    n_bootstrap: int
    n_instances: int
    positive_rate: float
    ci_level: float = 0.95
    ci_method: str = "percentile-bootstrap"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["auroc_ci"] = list(self.auroc_ci)
        d["auprc_ci"] = list(self.auprc_ci)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["auroc_ci"] = tuple(d["auroc_ci"])
        d["auprc_ci"] = tuple(d["auprc_ci"])
        return cls(**d)


def evaluate_scores(scores, labels, n_bootstrap: int = 1000, seed: int = 0,
                    level: float = 0.95) -> EvalReport:
    """Point estimates plus bootstrap intervals.

    Intervals are widened to contain the point estimate when the percentile
    interval happens to exclude it.
    """
    s, y = _check(scores, labels)
    point_roc, point_prc = auroc(s, y), auprc(s, y)
    roc_ci = bootstrap_ci(s, y, auroc, n_bootstrap, seed, level)
    prc_ci = bootstrap_ci(s, y, auprc, n_bootstrap, seed, level)
    roc_ci = (min(roc_ci[0], point_roc), max(roc_ci[1], point_roc))
    prc_ci = (min(prc_ci[0], point_prc), max(prc_ci[1], point_prc))
    return EvalReport(
        auroc=point_roc,
        auprc=point_prc,
        auroc_ci=roc_ci,
        auprc_ci=prc_ci,
        n_bootstrap=n_bootstrap,
        n_instances=int(s.size),
        positive_rate=float(y.mean()),
        ci_level=level,
    )
