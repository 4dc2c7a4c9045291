"""Irregularly sampled multivariate time series: data model and I/O.

An :class:`Instance` is a labeled set of ``(time, value, variable)`` triples
plus optional static (time-independent) measurements.  Categorical variables
are expanded into one binary indicator variable per category, observed with
value 1.0, so every observation carries a float value.

Event CSV layout::

    instance_id,time,variable,value
    p001,1.5,HR,80
    p001,,static:Age,63

Static rows leave ``time`` empty and prefix the variable name with
``static:``.  Labels live in a second CSV with header ``instance_id,label``.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from tde.errors import ConfigError, DataError, SchemaError, StateError

STATIC_PREFIX = "static:"
SCHEMA_FORMAT = "tde-schema/1"


@dataclass(frozen=True)
class Observation:
    time: float
    value: float
    variable: int


class Instance:
    """One labeled case: time-sorted observations plus statics.

    Observations are stored column-wise (``times``, ``values``, ``variables``)
    sorted by time, ties broken by variable index.
    """

    __slots__ = ("id", "times", "values", "variables", "static_vars", "static_values", "label")

    def __init__(
        self,
        id: str,
        observations: Iterable[Observation | tuple] = (),
        statics: Iterable[tuple[int, float]] = (),
        label: int = 0,
    ):
        obs = [o if isinstance(o, Observation) else Observation(*o) for o in observations]
        times = np.array([o.time for o in obs], dtype=np.float64)
        values = np.array([o.value for o in obs], dtype=np.float64)
        variables = np.array([o.variable for o in obs], dtype=np.int64)
        st = list(statics)
        self._init_arrays(
            str(id),
            times,
            values,
            variables,
            np.array([s[0] for s in st], dtype=np.int64),
            np.array([s[1] for s in st], dtype=np.float64),
            int(label),
        )

    @classmethod
    def from_arrays(cls, id, times, values, variables, static_vars=(), static_values=(), label=0):
        inst = cls.__new__(cls)
        inst._init_arrays(
            str(id),
            np.asarray(times, dtype=np.float64),
            np.asarray(values, dtype=np.float64),
            np.asarray(variables, dtype=np.int64),
            np.asarray(static_vars, dtype=np.int64),
            np.asarray(static_values, dtype=np.float64),
            int(label),
        )
        return inst

    def _init_arrays(self, id, times, values, variables, static_vars, static_values, label):
        if not (times.shape == values.shape == variables.shape) or times.ndim != 1:
            raise DataError(f"instance {id}: observation arrays differ in length")
        if static_vars.shape != static_values.shape:
            raise DataError(f"instance {id}: static arrays differ in length")
        if times.size == 0 and static_vars.size == 0:
            raise DataError(f"instance {id} has neither observations nor statics")
        if times.size and (not np.all(np.isfinite(times)) or times.min() < 0):
            raise DataError(f"instance {id}: times must be finite and non-negative")
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(static_values))):
            raise DataError(f"instance {id}: values must be finite")
        if variables.size and variables.min() < 0:
            raise DataError(f"instance {id}: negative variable index")
        order = np.lexsort((variables, times))
        times, values, variables = times[order], values[order], variables[order]
        if times.size > 1:
            dup = (np.diff(times) == 0) & (np.diff(variables) == 0)
            if dup.any():
                k = int(np.argmax(dup))
                raise DataError(
                    f"instance {id}: variable {variables[k]} observed twice at time {times[k]}"
                )
        if len(set(static_vars.tolist())) != static_vars.size:
            raise DataError(f"instance {id}: duplicate static variable")
        for arr in (times, values, variables, static_vars, static_values):
            arr.setflags(write=False)
        self.id = id
        self.times = times
        self.values = values
        self.variables = variables
        self.static_vars = static_vars
        self.static_values = static_values
        self.label = label

    @property
    def observations(self) -> list[Observation]:
        return [
            Observation(float(t), float(x), int(d))
            for t, x, d in zip(self.times, self.values, self.variables)
        ]

    @property
    def statics(self) -> list[tuple[int, float]]:
        return [(int(d), float(x)) for d, x in zip(self.static_vars, self.static_values)]

    @property
    def unique_times(self) -> np.ndarray:
        return np.unique(self.times)

    def __len__(self) -> int:
        return int(self.times.size)

    def replace(self, **changes) -> "Instance":
        fields = dict(
            id=self.id,
            times=self.times,
            values=self.values,
            variables=self.variables,
            static_vars=self.static_vars,
            static_values=self.static_values,
            label=self.label,
        )
        fields.update(changes)
        return Instance.from_arrays(**fields)

    def truncate(self, until: float) -> "Instance":
        """Keep only observations with ``time <= until`` (statics are kept)."""
        keep = self.times <= until
        return self.replace(
            times=self.times[keep], values=self.values[keep], variables=self.variables[keep]
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Instance):
            return NotImplemented
        return (
            self.id == other.id
            and self.label == other.label
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.variables, other.variables)
            and np.array_equal(self.static_vars, other.static_vars)
            and np.array_equal(self.static_values, other.static_values)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return (
            f"Instance(id={self.id!r}, n_obs={len(self)}, "
            f"n_statics={self.static_vars.size}, label={self.label})"
        )


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str = "numerical"
    static: bool = False
    categories: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.kind not in ("numerical", "categorical"):
            raise SchemaError(f"variable {self.name}: unknown kind {self.kind!r}")
        if self.categories is not None:
            object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))

    def expanded(self) -> list[tuple[str, str]]:
        """Names and kinds ("numerical" / "indicator") after one-hot expansion."""
        if self.kind == "numerical":
            return [(self.name, "numerical")]
        if self.categories is None:
            raise SchemaError(f"categorical variable {self.name} has no categories")
        return [(f"{self.name}={c}", "indicator") for c in self.categories]


@dataclass(frozen=True, eq=False)
class NormStats:
    """Per-variable z-score statistics over the expanded variable lists."""

    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray
    static_mean: np.ndarray
    static_std: np.ndarray
    static_constant: np.ndarray


@dataclass(frozen=True, eq=False)
class Schema:
    """Variable inventory for a dataset.

    ``specs`` holds the source variables as listed (statics and time series);
    indicator indices used by the model refer to the expanded lists
    :attr:`variables` and :attr:`statics`.
    """

    specs: tuple[VariableSpec, ...]
    n_classes: int = 2
    stats: Optional[NormStats] = None

    def __post_init__(self):
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate variable names in schema")
        if self.n_classes < 2:
            raise SchemaError("need at least two classes")

    @cached_property
    def _expanded(self):
        ts, ts_kind, st, st_kind = [], [], [], []
        for spec in self.specs:
            for name, kind in spec.expanded():
                if spec.static:
                    st.append(name)
                    st_kind.append(kind)
                else:
                    ts.append(name)
                    ts_kind.append(kind)
        return tuple(ts), tuple(ts_kind), tuple(st), tuple(st_kind)

    @property
    def variables(self) -> tuple[str, ...]:
        return self._expanded[0]

    @property
    def variable_kinds(self) -> tuple[str, ...]:
        return self._expanded[1]

    @property
    def statics(self) -> tuple[str, ...]:
        return self._expanded[2]

    @property
    def static_kinds(self) -> tuple[str, ...]:
        return self._expanded[3]

    @property
    def D(self) -> int:
        return len(self.variables)

    @property
    def D_static(self) -> int:
        return len(self.statics)

    @property
    def n_source_variables(self) -> int:
        return len(self.specs)

    @cached_property
    def variable_index(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.variables)}

    @cached_property
    def static_index(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.statics)}

    @cached_property
    def spec_by_name(self) -> dict[str, VariableSpec]:
        return {s.name: s for s in self.specs}

    def with_stats(self, stats: Optional[NormStats]) -> "Schema":
        return dataclasses.replace(self, stats=stats)

    def to_dict(self) -> dict:
        out = {
            "format": SCHEMA_FORMAT,
            "n_classes": self.n_classes,
            "variables": [
                {
                    "name": s.name,
                    "kind": s.kind,
                    "static": s.static,
                    **({"categories": list(s.categories)} if s.categories is not None else {}),
                }
                for s in self.specs
            ],
        }
        if self.stats is not None:
            st = self.stats
            out["normalization"] = {
                "mean": st.mean.tolist(),
                "std": st.std.tolist(),
                "constant": st.constant.tolist(),
                "static_mean": st.static_mean.tolist(),
                "static_std": st.static_std.tolist(),
                "static_constant": st.static_constant.tolist(),
            }
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "Schema":
        try:
            specs = tuple(
                VariableSpec(
                    name=v["name"],
                    kind=v.get("kind", "numerical"),
                    static=bool(v.get("static", False)),
                    categories=v.get("categories"),
                )
                for v in obj["variables"]
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema: {exc}") from None
        schema = cls(specs=specs, n_classes=int(obj.get("n_classes", 2)))
        norm = obj.get("normalization")
        if norm is not None:
            stats = NormStats(
                **{k: np.asarray(norm[k], dtype=bool if "constant" in k else np.float64) for k in norm}
            )
            schema = schema.with_stats(stats)
        return schema

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "Schema":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from None


class Dataset:
    """An immutable sequence of instances sharing one schema."""

    def __init__(self, instances: Sequence[Instance], schema: Schema):
        self.instances = tuple(instances)
        self.schema = schema
        for inst in self.instances:
            if inst.variables.size and inst.variables.max() >= schema.D:
                raise SchemaError(f"instance {inst.id}: variable index beyond D={schema.D}")
            if inst.static_vars.size and inst.static_vars.max() >= schema.D_static:
                raise SchemaError(f"instance {inst.id}: static index beyond {schema.D_static}")
            if not 0 <= inst.label < schema.n_classes:
                raise DataError(f"instance {inst.id}: label {inst.label} outside [0, C)")

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self) -> Iterator[Instance]:
        return iter(self.instances)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return Dataset(self.instances[k], self.schema)
        return self.instances[k]

    @property
    def labels(self) -> np.ndarray:
        return np.array([i.label for i in self.instances], dtype=np.int64)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset([self.instances[i] for i in indices], self.schema)

    def with_schema(self, schema: Schema) -> "Dataset":
        return Dataset(self.instances, schema)

    def n_observations(self) -> int:
        return sum(len(i) for i in self.instances)

    def fingerprint(self) -> str:
        """SHA-256 over instance content in order (ids, labels, arrays)."""
        h = hashlib.sha256()
        for inst in self.instances:
            h.update(inst.id.encode())
            h.update(np.int64(inst.label).tobytes())
            for arr in (inst.times, inst.values, inst.variables, inst.static_vars, inst.static_values):
                h.update(np.ascontiguousarray(arr).tobytes())
                h.update(b"|")
        return h.hexdigest()

    def __repr__(self) -> str:
        return f"Dataset(n={len(self)}, D={self.schema.D}, D_static={self.schema.D_static})"


# -- CSV ingestion ------------------------------------------------------------


def _parse_float(text: str, where: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"{where}: cannot parse {text!r} as a number") from None
    if not math.isfinite(v):
        raise DataError(f"{where}: non-finite value {text!r}")
    return v


def _is_number(text: str) -> bool:
    try:
        return math.isfinite(float(text))
    except ValueError:
        return False


def _read_csv(path, header: list[str]) -> list[dict]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != header:
            raise DataError(f"{path}: expected header {','.join(header)}, got {reader.fieldnames}")
        return [{k.strip(): (v or "").strip() for k, v in row.items()} for row in reader]


def infer_schema(rows: list[dict], labels: dict[str, int]) -> Schema:
    """Build a schema from raw event rows: numeric columns are numerical,
    anything else categorical with sorted categories."""
    seen: dict[tuple[str, bool], list[str]] = {}
    for row in rows:
        var = row["variable"]
        static = var.startswith(STATIC_PREFIX)
        name = var[len(STATIC_PREFIX):] if static else var
        seen.setdefault((name, static), []).append(row["value"])
    specs = []
    for (name, static), vals in sorted(seen.items(), key=lambda kv: (not kv[0][1], kv[0][0])):
        if all(_is_number(v) for v in vals):
            specs.append(VariableSpec(name, "numerical", static))
        else:
            specs.append(VariableSpec(name, "categorical", static, tuple(sorted(set(vals)))))
    n_classes = max(2, max(labels.values(), default=0) + 1)
    return Schema(specs=tuple(specs), n_classes=n_classes)


def _resolve_categories(schema: Schema, rows: list[dict]) -> Schema:
    """Fill in categories left open in the schema from the observed values."""
    open_vars = {s.name for s in schema.specs if s.kind == "categorical" and s.categories is None}
    if not open_vars:
        return schema
    found: dict[str, set] = {n: set() for n in open_vars}
    for row in rows:
        var = row["variable"]
        name = var[len(STATIC_PREFIX):] if var.startswith(STATIC_PREFIX) else var
        if name in found:
            found[name].add(_category_key(row["value"]))
    specs = tuple(
        dataclasses.replace(s, categories=tuple(sorted(found[s.name]))) if s.name in found else s
        for s in schema.specs
    )
    return dataclasses.replace(schema, specs=specs)


def _category_key(text: str) -> str:
    # "1" and "1.0" denote the same category
    if _is_number(text):
        v = float(text)
        return str(int(v)) if v.is_integer() else repr(v)
    return text


def load_events(events_path, labels_path, schema_path=None, schema: Optional[Schema] = None) -> Dataset:
    """Load an event CSV and a label CSV into a :class:`Dataset`.

    Rows of one instance must appear in non-decreasing time order.  When no
    schema is given it is inferred from the events.
    """
    label_rows = _read_csv(labels_path, ["instance_id", "label"])
    labels: dict[str, int] = {}
    for k, row in enumerate(label_rows, start=2):
        iid = row["instance_id"]
        if iid in labels:
            raise DataError(f"{labels_path}:{k}: duplicate instance {iid}")
        lab = _parse_float(row["label"], f"{labels_path}:{k}")
        if not lab.is_integer() or lab < 0:
            raise DataError(f"{labels_path}:{k}: label must be a non-negative integer")
        labels[iid] = int(lab)

    rows = _read_csv(events_path, ["instance_id", "time", "variable", "value"])
    if schema is None and schema_path is not None:
        schema = Schema.load(schema_path)
    if schema is None:
        schema = infer_schema(rows, labels)
    schema = _resolve_categories(schema, rows)
    if max(labels.values(), default=0) >= schema.n_classes:
        raise DataError(f"label outside [0, {schema.n_classes})")

    obs: dict[str, list] = {iid: [] for iid in labels}
    stat: dict[str, list] = {iid: [] for iid in labels}
    last_time: dict[str, float] = {}
    for k, row in enumerate(rows, start=2):
        where = f"{events_path}:{k}"
        iid = row["instance_id"]
        if iid not in labels:
            raise DataError(f"{where}: instance {iid!r} has no label")
        var = row["variable"]
        static = var.startswith(STATIC_PREFIX)
        name = var[len(STATIC_PREFIX):] if static else var
        spec = schema.spec_by_name.get(name)
        if spec is None or spec.static != static:
            raise SchemaError(f"{where}: unknown {'static ' if static else ''}variable {name!r}")
        if spec.kind == "categorical":
            key = _category_key(row["value"])
            if key not in spec.categories:
                raise SchemaError(f"{where}: unknown category {row['value']!r} for {name}")
            expanded, value = f"{name}={key}", 1.0
        else:
            expanded, value = name, _parse_float(row["value"], where)
        if static:
            if row["time"] != "":
                raise DataError(f"{where}: static rows must leave time empty")
            stat[iid].append((schema.static_index[expanded], value))
            continue
        t = _parse_float(row["time"], where)
        if t < 0:
            raise DataError(f"{where}: negative time {t}")
        if t < last_time.get(iid, 0.0):
            raise DataError(f"{where}: times of instance {iid} are not sorted")
        last_time[iid] = t
        obs[iid].append(Observation(t, value, schema.variable_index[expanded]))

    instances = [Instance(iid, obs[iid], stat[iid], labels[iid]) for iid in labels]
    return Dataset(instances, schema)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_events(ds: Dataset, events_path, labels_path, schema_path=None) -> None:
    """Write ``ds`` in the event/label CSV layout (lossless for float values)."""
    schema = ds.schema
    ts_names, st_names = schema.variables, schema.statics
    ts_kinds, st_kinds = schema.variable_kinds, schema.static_kinds

    def encode(name: str, kind: str, value: float) -> tuple[str, str]:
        if kind == "indicator":
            base, cat = name.split("=", 1)
            return base, cat
        return name, _fmt(value)

    with Path(events_path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", "time", "variable", "value"])
        for inst in ds:
            for d, x in zip(inst.static_vars, inst.static_values):
                var, val = encode(st_names[d], st_kinds[d], x)
                w.writerow([inst.id, "", STATIC_PREFIX + var, val])
            for t, x, d in zip(inst.times, inst.values, inst.variables):
                var, val = encode(ts_names[d], ts_kinds[d], x)
                w.writerow([inst.id, _fmt(t), var, val])
    with Path(labels_path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", "label"])
        for inst in ds:
            w.writerow([inst.id, inst.label])
    if schema_path is not None:
        schema.save(schema_path)


# -- normalization ------------------------------------------------------------


def _zstats(values: np.ndarray, idx: np.ndarray, n: int, numeric: np.ndarray):
    count = np.bincount(idx, minlength=n).astype(np.float64)
    total = np.bincount(idx, weights=values, minlength=n)
    mean = np.divide(total, count, out=np.zeros(n), where=count > 0)
    sq = np.bincount(idx, weights=(values - mean[idx]) ** 2, minlength=n)
    var = np.divide(sq, count, out=np.zeros(n), where=count > 0)
    std = np.sqrt(var)
    constant = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    std = np.where(constant, 1.0, std)
    # indicator variables pass through untouched
    mean = np.where(numeric, mean, 0.0)
    std = np.where(numeric, std, 1.0)
    constant = np.where(numeric, constant, False)
    return mean, std, constant


def fit_normalizer(train: Dataset) -> Schema:
    """Fit z-score statistics on ``train`` and return the schema carrying them.

    Population standard deviation is used; a variable with zero variance (or
    never observed) is marked constant and gets std 1.
    """
    schema = train.schema
    vals = np.concatenate([i.values for i in train] or [np.zeros(0)])
    idx = np.concatenate([i.variables for i in train] or [np.zeros(0, np.int64)])
    numeric = np.array([k == "numerical" for k in schema.variable_kinds], dtype=bool)
    mean, std, const = _zstats(vals, idx, schema.D, numeric)
    svals = np.concatenate([i.static_values for i in train] or [np.zeros(0)])
    sidx = np.concatenate([i.static_vars for i in train] or [np.zeros(0, np.int64)])
    snumeric = np.array([k == "numerical" for k in schema.static_kinds], dtype=bool)
    smean, sstd, sconst = _zstats(svals, sidx, schema.D_static, snumeric)
    return schema.with_stats(NormStats(mean, std, const, smean, sstd, sconst))


def apply_normalizer(ds: Dataset, schema: Schema) -> Dataset:
    """Replace numerical values by ``(x - mean) / std`` using fitted ``schema``."""
    st = schema.stats
    if st is None:
        raise StateError("schema has no fitted normalization statistics")
    out = []
    for inst in ds:
        v = (inst.values - st.mean[inst.variables]) / st.std[inst.variables]
        sv = (inst.static_values - st.static_mean[inst.static_vars]) / st.static_std[inst.static_vars]
        out.append(inst.replace(values=v, static_values=sv))
    return Dataset(out, schema)


# -- structured representation -----------------------------------------------


@dataclass(frozen=True, eq=False)
class StructuredGrid:
    """Fixed-bin view of one instance: ``values`` and ``mask`` are T_bins x D."""

    values: np.ndarray
    mask: np.ndarray
    bin_hours: float

    @property
    def n_bins(self) -> int:
        return self.values.shape[0]


def n_bins_for(bin_hours: float, horizon_hours: float) -> int:
    if bin_hours <= 0:
        raise ConfigError("bin_hours must be positive")
    if horizon_hours <= 0:
        raise ConfigError("horizon_hours must be positive")
    return int(math.ceil(horizon_hours / bin_hours - 1e-9))


def discretize(inst: Instance, bin_hours: float, horizon_hours: float, n_variables: int) -> StructuredGrid:
    """Average observations into ``[k*bin, (k+1)*bin)`` bins; empty cells are 0.

    Observations at or after ``horizon_hours`` are dropped.
    """
    n = n_bins_for(bin_hours, horizon_hours)
    keep = inst.times < horizon_hours
    bins = np.minimum((inst.times[keep] / bin_hours).astype(np.int64), n - 1)
    var = inst.variables[keep]
    if var.size and var.max() >= n_variables:
        raise DataError(f"instance {inst.id}: variable index beyond {n_variables}")
    flat = bins * n_variables + var
    total = np.bincount(flat, weights=inst.values[keep], minlength=n * n_variables)
    count = np.bincount(flat, minlength=n * n_variables)
    values = np.divide(total, count, out=np.zeros(n * n_variables), where=count > 0)
    return StructuredGrid(
        values=values.reshape(n, n_variables),
        mask=(count > 0).reshape(n, n_variables).astype(np.float64),
        bin_hours=float(bin_hours),
    )


# -- splitting ----------------------------------------------------------------


def _allocate(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder allocation of n items with at least one per split."""
    raw = [n * r for r in ratios]
    counts = [int(math.floor(x)) for x in raw]
    order = sorted(range(len(ratios)), key=lambda k: (-(raw[k] - counts[k]), k))
    for k in order[: n - sum(counts)]:
        counts[k] += 1
    for k in range(len(counts)):
        if ratios[k] > 0 and counts[k] == 0:
            donor = max(range(len(counts)), key=lambda j: counts[j])
            counts[donor] -= 1
            counts[k] += 1
    return counts


def split(
    ds: Dataset,
    ratios: Sequence[float] = (0.6, 0.2, 0.2),
    seed: int = 0,
    stratified: bool = True,
) -> tuple[Dataset, ...]:
    """Random disjoint split; stratified splits keep per-class proportions."""
    ratios = [float(r) for r in ratios]
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be non-negative and sum to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    labels = ds.labels
    parts: list[list[int]] = [[] for _ in ratios]
    need = sum(1 for r in ratios if r > 0)
    pools = (
        [np.flatnonzero(labels == c) for c in np.unique(labels)]
        if stratified
        else [np.arange(len(ds))]
    )
    for pool in pools:
        if pool.size < need:
            raise DataError(f"class with {pool.size} members cannot fill {need} splits")
        pool = rng.permutation(pool)
        start = 0
        for k, c in enumerate(_allocate(pool.size, ratios)):
            parts[k].extend(pool[start : start + c].tolist())
            start += c
    return tuple(ds.subset(sorted(p)) for p in parts)
