"""Seeded synthetic ICU-like event streams with a known class signal.

Recipe (per instance, horizon 48 h, times rounded to whole minutes):

* label ~ Bernoulli(class_balance).
* statics: ``age`` ~ N(60 + 5*label, 12); ``sex`` categorical {F, M}, uniform.
* charting visits: a Poisson process with rate ``VISIT_RATE`` per hour.  At
  each visit variable 0 and 1 are measured with probability ``P_SIGNAL`` and
  every variable >= 3 with probability ``P_NOISE``.
* variable 0 ("trend"): ``BASE[0] + SCALE * (noise + TREND_SHIFT * label * t / 48)``.
* variable 1 ("level"): ``BASE[1] + SCALE * (noise + LEVEL_SHIFT * label)``.
* variable 2 ("rate"): its own Poisson process with rate ``RATE_LOW`` per hour
  for class 0 and ``RATE_LOW * RATE_RATIO`` for class 1; values are pure
  noise, so the class signal is in how often it is sampled.
* variables >= 3: per-instance random-walk noise with no class dependence.

Noise terms are standard normal.  Variable ``d`` has raw offset
``BASE[d] = 40 + 10 d`` and scale ``SCALE`` so normalization has real work to do.
"""

from __future__ import annotations

import numpy as np

from tde.data import Dataset, Instance, Schema, VariableSpec
from tde.errors import ConfigError

HORIZON_HOURS = 48.0
VISIT_RATE = 0.4
P_SIGNAL = 0.5
P_NOISE = 0.3
TREND_SHIFT = 0.7
LEVEL_SHIFT = 0.2
RATE_LOW = 0.2
RATE_RATIO = 2.0
SCALE = 5.0
AGE_SHIFT = 5.0


def synth_schema(D: int) -> Schema:
    specs = [
        VariableSpec("age", "numerical", static=True),
        VariableSpec("sex", "categorical", static=True, categories=("F", "M")),
    ]
    names = ["trend", "level", "rate"] + [f"noise{d}" for d in range(3, D)]
    specs += [VariableSpec(n, "numerical") for n in names]
    return Schema(specs=tuple(specs), n_classes=2)


def _poisson_times(rng: np.random.Generator, rate: float) -> np.ndarray:
    n = rng.poisson(rate * HORIZON_HOURS)
    t = np.sort(rng.uniform(0.0, HORIZON_HOURS, size=n))
    t = np.round(t * 60.0) / 60.0
    t = np.unique(t)
    return t[t < HORIZON_HOURS]


def synth_instance(rng: np.random.Generator, iid: str, label: int, D: int) -> Instance:
    base = 40.0 + 10.0 * np.arange(D)
    times, values, variables = [], [], []

    visits = _poisson_times(rng, VISIT_RATE)
    walk = np.cumsum(rng.normal(scale=0.3, size=(visits.size, D)), axis=0)
    for k, t in enumerate(visits):
        if rng.random() < P_SIGNAL:
            x = rng.normal() + TREND_SHIFT * label * t / HORIZON_HOURS
            times.append(t), values.append(base[0] + SCALE * x), variables.append(0)
        if rng.random() < P_SIGNAL:
            x = rng.normal() + LEVEL_SHIFT * label
            times.append(t), values.append(base[1] + SCALE * x), variables.append(1)
        for d in range(3, D):
            if rng.random() < P_NOISE:
                x = walk[k, d] + rng.normal()
                times.append(t), values.append(base[d] + SCALE * x), variables.append(d)

    rate = RATE_LOW * (RATE_RATIO if label == 1 else 1.0)
    for t in _poisson_times(rng, rate):
        times.append(t), values.append(base[2] + SCALE * rng.normal()), variables.append(2)

    age = 60.0 + AGE_SHIFT * label + 12.0 * rng.normal()
    sex = int(rng.integers(2))
    statics = [(0, age), (1 + sex, 1.0)]
    return Instance.from_arrays(iid, times, values, variables, [s[0] for s in statics],
                                [s[1] for s in statics], label)


def synth_generate(n_instances: int, D: int = 8, class_balance: float = 0.5, seed: int = 0) -> Dataset:
    """Generate a reproducible labeled dataset (see module docstring for the recipe)."""
    if D < 4:
        raise ConfigError(f"synthetic data needs D >= 4, got {D}")
    if not 0.0 < class_balance < 1.0:
        raise ConfigError("class_balance must lie strictly between 0 and 1")
    if n_instances < 1:
        raise ConfigError("n_instances must be positive")
    rng = np.random.default_rng(seed)
    labels = (rng.random(n_instances) < class_balance).astype(int)
    width = len(str(n_instances - 1))
    instances = [
        synth_instance(rng, f"s{n:0{width}d}", int(labels[n]), D) for n in range(n_instances)
    ]
    return Dataset(instances, synth_schema(D))
