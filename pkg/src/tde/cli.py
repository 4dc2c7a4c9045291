"""Command-line entry point: ``tde <command> [options]``.

Every command writes its outputs plus a ``manifest.json`` into a fresh run
directory ``<out>/<timestamp>-<tag>/`` and prints that directory on stdout.
Errors end the process with status 2 and one ``error:`` line on stderr.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import datetime as dt
import json
import logging
import os
import platform
import subprocess
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from tde.baseline import GruBaselineConfig, StructuredGruModel
from tde.data import Dataset, Schema, apply_normalizer, fit_normalizer, load_events, split, write_events
from tde.errors import TdeError
from tde.metrics import EvalReport
from tde.model import TdeConfig, TdeModel, export_embeddings, predict_online
from tde.nn import load_checkpoint
from tde.synth import synth_generate
from tde.training import TrainConfig, ablation_report, evaluate, run_ablation, train

log = logging.getLogger("tde")

MODEL_KINDS = {TdeModel.kind: TdeModel, StructuredGruModel.kind: StructuredGruModel}


def package_version() -> str:
    from importlib.metadata import PackageNotFoundError, version

    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


def git_stamp() -> Optional[str]:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             timeout=5, cwd=Path(__file__).resolve().parent)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None


# -- run directories ------------------------------------------------------------


class Run:
    """A run directory with its manifest; timings accumulate via :meth:`timed`."""

    def __init__(self, base, tag: str, command: str, args: argparse.Namespace):
        stamp = dt.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
        path = Path(base) / f"{stamp}-{tag}"
        suffix = 1
        while path.exists():
            path = Path(base) / f"{stamp}-{tag}-{suffix}"
            suffix += 1
        path.mkdir(parents=True)
        self.path = path
        self.manifest = {
            "command": command,
            "config": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
            "seed": getattr(args, "seed", None),
            "version": package_version(),
            "git": git_stamp(),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "datasets": {},
            "timings": {},
            "outputs": [],
        }

    @contextlib.contextmanager
    def timed(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.manifest["timings"][name] = time.perf_counter() - start

    def dataset(self, name: str, ds: Dataset) -> None:
        self.manifest["datasets"][name] = {
            "instances": len(ds),
            "observations": ds.n_observations(),
            "positives": int(ds.labels.sum()),
            "sha256": ds.fingerprint(),
        }

    def output(self, name: str) -> Path:
        self.manifest["outputs"].append(name)
        return self.path / name

    def write_json(self, name: str, obj) -> Path:
        path = self.output(name)
        path.write_text(json.dumps(obj, indent=2) + "\n")
        return path

    def close(self) -> None:
        (self.path / "manifest.json").write_text(json.dumps(self.manifest, indent=2, default=str) + "\n")


# -- shared argument groups -------------------------------------------------------


def add_data_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--events", required=required, help="events CSV (instance_id,time,variable,value)")
    p.add_argument("--labels", required=required, help="labels CSV (instance_id,label)")
    p.add_argument("--schema", help="schema JSON; inferred from the events when omitted")


def add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=["tde", "gru"], default="tde")
    p.add_argument("--mode", choices=["mean", "attention"], default="attention")
    p.add_argument("--softmax", action=argparse.BooleanOptionalAction, default=False,
                   help="normalize attention weights with softmax (ablation arm)")
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--var-dim", type=int, default=16)
    p.add_argument("--time-dim", type=int, default=16)
    p.add_argument("--static-dim", type=int, default=4)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--clf-hidden", type=int, default=32)
    p.add_argument("--input-dim", type=int, default=16, help="GRU baseline input projection width")
    p.add_argument("--bin-hours", type=float, default=1.0, help="GRU baseline bin width")
    p.add_argument("--horizon-hours", type=float, default=48.0)
    p.add_argument("--dropout", type=float, default=0.0)


def add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-seed", type=int, default=None, help="defaults to --seed")
    p.add_argument("--bootstrap", type=int, default=1000)


def tde_config(args, schema: Schema, mode: Optional[str] = None) -> TdeConfig:
    return TdeConfig(
        D=schema.D, D_static=schema.D_static, n_classes=schema.n_classes,
        mode=mode or args.mode, attention_softmax=args.softmax, heads=args.heads,
        var_dim=args.var_dim, time_dim=args.time_dim, static_dim=args.static_dim,
        hidden=args.hidden, clf_hidden=args.clf_hidden, dropout=args.dropout,
    )


def gru_config(args, schema: Schema) -> GruBaselineConfig:
    return GruBaselineConfig(
        D=schema.D, D_static=schema.D_static, n_classes=schema.n_classes,
        bin_hours=args.bin_hours, horizon_hours=args.horizon_hours, input_dim=args.input_dim,
        hidden=args.hidden, clf_hidden=args.clf_hidden, dropout=args.dropout,
    )


def build_model(args, schema: Schema, kind: Optional[str] = None):
    kind = kind or ("gru-baseline" if args.model == "gru" else "tde-" + args.mode)
    if kind == "gru-baseline":
        return StructuredGruModel(gru_config(args, schema), seed=args.seed)
    return TdeModel(tde_config(args, schema, mode=kind.split("-", 1)[1]), seed=args.seed)


def train_config(args) -> TrainConfig:
    return TrainConfig(batch_size=args.batch, learning_rate=args.lr, max_epochs=args.epochs,
                       patience=args.patience, seed=args.seed)


def load_data(args, run: Run) -> Dataset:
    with run.timed("load"):
        ds = load_events(args.events, args.labels, schema_path=args.schema)
    run.dataset("input", ds)
    return ds


def prepared_splits(args, run: Run, ds: Dataset):
    """Stratified 6:2:2 split, normalizer fitted on the training part only."""
    seed = args.seed if args.split_seed is None else args.split_seed
    parts = split(ds, seed=seed)
    schema = fit_normalizer(parts[0])
    parts = tuple(apply_normalizer(p, schema) for p in parts)
    for name, p in zip(("train", "val", "test"), parts):
        run.dataset(name, p)
    return schema, parts


def load_model(path):
    blob = load_checkpoint(path)
    cls = MODEL_KINDS.get(blob["kind"])
    if cls is None:
        raise TdeError(f"{path}: unknown model kind {blob['kind']!r}")
    if "schema" not in blob:
        raise TdeError(f"{path}: checkpoint carries no normalization schema")
    return cls.from_checkpoint(blob), Schema.from_dict(blob["schema"]), blob


def checkpoint_data(args, run: Run, schema: Schema, blob: dict) -> Dataset:
    with run.timed("load"):
        ds = load_events(args.events, args.labels, schema=schema.with_stats(None))
    ds = apply_normalizer(ds, schema)
    subset = getattr(args, "subset", "all")
    if subset != "all":
        ids = set(blob.get("split", {}).get(subset, ()))
        if not ids:
            raise TdeError(f"checkpoint records no {subset!r} split")
        ds = ds.subset([k for k, inst in enumerate(ds) if inst.id in ids])
    run.dataset(subset, ds)
    return ds


# -- commands -------------------------------------------------------------------


def cmd_synth(args, run: Run) -> None:
    with run.timed("generate"):
        ds = synth_generate(args.n, D=args.dims, class_balance=args.balance, seed=args.seed)
    write_events(ds, run.output("events.csv"), run.output("labels.csv"), run.output("schema.json"))
    run.dataset("synthetic", ds)


def cmd_train(args, run: Run) -> None:
    ds = load_data(args, run)
    schema, (tr, va, te) = prepared_splits(args, run, ds)
    model = build_model(args, schema)
    with run.timed("train"):
        model, history = train(model, tr, va, train_config(args))
    history.to_csv(run.output("history.csv"))
    report = evaluate(model, te, args.bootstrap, seed=args.seed)
    run.output("metrics.json").write_text(report.to_json() + "\n")
    model.save(run.output("model.json"), extra={
        "schema": schema.to_dict(),
        "split": {"train": [i.id for i in tr], "val": [i.id for i in va], "test": [i.id for i in te]},
        "best_epoch": history.best_epoch,
    })
    run.manifest["best_epoch"] = history.best_epoch
    run.manifest["timings"]["sec_per_epoch"] = [r.sec_per_epoch for r in history.records]


def cmd_eval(args, run: Run) -> None:
    model, schema, blob = load_model(args.checkpoint)
    ds = checkpoint_data(args, run, schema, blob)
    with run.timed("evaluate"):
        report = evaluate(model, ds, args.bootstrap, seed=args.seed)
    run.output("metrics.json").write_text(report.to_json() + "\n")


def cmd_predict_online(args, run: Run) -> None:
    model, schema, blob = load_model(args.checkpoint)
    if not isinstance(model, TdeModel):
        raise TdeError("online prediction needs a TDE checkpoint")
    ds = checkpoint_data(args, run, schema, blob)
    with run.timed("predict"), open(run.output("online.csv"), "w") as fh:
        fh.write("instance_id,time,probability\n")
        for inst in ds:
            for t, p in predict_online(inst, model):
                fh.write(f"{inst.id},{t!r},{float(p)!r}\n")


def cmd_export_emb(args, run: Run) -> None:
    model, schema, blob = load_model(args.checkpoint)
    if not isinstance(model, TdeModel):
        raise TdeError("embedding export needs a TDE checkpoint")
    ds = checkpoint_data(args, run, schema, blob)
    with run.timed("export"):
        rows = export_embeddings(ds, model, run.output(f"embeddings_{args.which}.csv"), args.which)
    run.manifest["rows"] = rows


def cmd_ablate(args, run: Run) -> None:
    ds = load_data(args, run)
    schema, (tr, va, te) = prepared_splits(args, run, ds)
    cfg = tde_config(args, schema, mode="attention")
    with run.timed("ablation"):
        arms = run_ablation(tr, va, te, cfg, train_config(args), model_seed=args.seed,
                            n_bootstrap=args.bootstrap)
    run.write_json("ablation.json", ablation_report(arms))


BENCH_MODELS = ("tde-mean", "tde-attn", "gru-baseline")


def cmd_bench_epoch(args, run: Run) -> None:
    if args.events:
        ds = load_data(args, run)
    else:
        ds = synth_generate(args.synth_n, D=args.dims, seed=args.seed)
        run.dataset("synthetic", ds)
    schema, (tr, va, _) = prepared_splits(args, run, ds)
    cfg = TrainConfig(batch_size=args.batch, learning_rate=args.lr, max_epochs=args.k,
                      patience=args.k, seed=args.seed)
    results = {}
    for name in BENCH_MODELS:
        kind = {"tde-attn": "tde-attention"}.get(name, name)
        model = build_model(args, schema, kind)
        _, history = train(model, tr, va, cfg)
        secs = np.array([r.sec_per_epoch for r in history.records])
        results[name] = {"mean": float(secs.mean()), "sd": float(secs.std(ddof=1)) if secs.size > 1 else 0.0,
                         "epochs": int(secs.size), "n_parameters": model.n_parameters()}
        print(f"{name:13s} {results[name]['mean']:.3f} +- {results[name]['sd']:.3f} s/epoch")
    results["ratio_tde_mean_to_gru"] = results["tde-mean"]["mean"] / results["gru-baseline"]["mean"]
    run.write_json("bench.json", results)


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tde", description="Temporal dynamic embedding toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--out", default="runs", help="parent directory for run directories")
        p.add_argument("--tag", default=name)
        p.set_defaults(func=func)
        return p

    p = command("synth", cmd_synth, "generate a seeded synthetic dataset")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--dims", type=int, default=8)
    p.add_argument("--balance", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)

    p = command("train", cmd_train, "train on a 6:2:2 split and evaluate on its test part")
    add_data_args(p)
    add_model_args(p)
    add_train_args(p)

    for name, func, help in (
        ("eval", cmd_eval, "evaluate a checkpoint"),
        ("predict-online", cmd_predict_online, "per-timestep risk for each instance"),
        ("export-emb", cmd_export_emb, "write local or global embeddings"),
    ):
        p = command(name, func, help)
        p.add_argument("--checkpoint", required=True)
        add_data_args(p)
        p.add_argument("--subset", choices=["all", "train", "val", "test"], default="all",
                       help="restrict to a split recorded in the checkpoint")
        p.add_argument("--seed", type=int, default=0)
        if name == "eval":
            p.add_argument("--bootstrap", type=int, default=1000)
        if name == "export-emb":
            p.add_argument("--which", choices=["global", "local"], default="global")

    p = command("ablate", cmd_ablate, "softmax vs non-softmax attention from the same seed")
    add_data_args(p)
    add_model_args(p)
    add_train_args(p)

    p = command("bench-epoch", cmd_bench_epoch, "seconds per training epoch for each model")
    add_data_args(p, required=False)
    add_model_args(p)
    add_train_args(p)
    p.add_argument("--k", type=int, default=3, help="epochs to time")
    p.add_argument("--synth-n", type=int, default=1000)
    p.add_argument("--dims", type=int, default=8)
    return parser


@contextlib.contextmanager
def thread_cap():
    raw = os.environ.get("TDE_THREADS")
    if not raw:
        yield
        return
    try:
        n = int(raw)
    except ValueError:
        raise TdeError(f"TDE_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise TdeError("TDE_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with thread_cap():
            run = Run(args.out, args.tag, args.command, args)
            try:
                with run.timed("total"):
                    args.func(args, run)
            finally:
                run.close()
    except (TdeError, OSError, ValueError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 2
    print(run.path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
