"""Command line front end.

Exit codes: 0 ok, 2 input error, 3 constraint violation, 4 resource limit,
5 training diverged, 1 failed gradient check.
"""

import functools
import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import io as fio
from .config import materialize
from .devlayer import backward_arrays, develop_forward, forward_arrays
from .errors import ConstraintViolation, InvalidArgument, ResourceLimit, TrainingDiverged
from .gradcheck import GRAD_RTOL, sweep
from .liealg import AlgebraSpec, DevWeights, Family, group_residual, in_group, random_init
from .sigpath import add_time, signature
from .train import (
    Dataset,
    Model,
    TrainConfig,
    evaluate,
    gen_rigid_motion_dataset,
    gen_rotation_dataset,
    init_model,
    static_baseline_mse,
    train_loop,
)

FAMILIES = click.Choice([f.value for f in Family], case_sensitive=False)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (InvalidArgument, ConstraintViolation, ResourceLimit, TrainingDiverged) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)
        except OSError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(InvalidArgument.exit_code)

    return wrapper


def _read_text(path):
    return Path(path).read_text()


def _emit(text, output):
    if output:
        Path(output).write_text(text)
    else:
        click.echo(text, nl=False)


@click.group()
def main():
    """Path development layers on matrix Lie groups."""


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--algebra", type=FAMILIES, default=None)
@click.option("--order", type=int, default=None)
@click.option("--weights", "weights_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--scale", type=float, default=1.0, show_default=True)
@click.option("--mode", type=click.Choice(["seq", "last"]), default="last", show_default=True)
@click.option("--add-time", "with_time", is_flag=True)
@click.option("--json", "as_json", is_flag=True)
@click.option("--output", type=click.Path(dir_okay=False))
@handle_errors
def develop(input_path, algebra, order, weights_path, seed, scale, mode, with_time, as_json, output):
    """Develop every series of a CSV into group elements."""
    items = fio.read_series_csv(_read_text(input_path))
    if with_time:
        items = [(sid, add_time(ts)) for sid, ts in items]
    d = items[0][1].dim
    if weights_path:
        weights = DevWeights.loads(_read_text(weights_path))
        if algebra and Family(algebra.upper()) is not weights.spec.family:
            raise InvalidArgument("--algebra disagrees with the weights file")
        if order and order != weights.order:
            raise InvalidArgument("--order disagrees with the weights file")
    else:
        if not algebra or not order:
            raise InvalidArgument("give --weights or both --algebra and --order")
        weights = random_init(AlgebraSpec(algebra, order), d, scale=scale, seed=seed)
    records = []
    for sid, ts in items:
        z = develop_forward(weights, ts, "sequence" if mode == "seq" else "last")
        steps = range(len(ts)) if mode == "seq" else [len(ts) - 1]
        records.extend((sid, n, z.states[n]) for n in steps)
    if as_json:
        doc = {
            "family": weights.spec.family.value,
            "order": weights.order,
            "matrices": [
                {"series_id": sid, "step": n, "z": Z.tolist()} for sid, n, Z in records
            ],
        }
        _emit(json.dumps(doc) + "\n", output)
    else:
        _emit(fio.write_matrices_csv(records, weights.order), output)


@main.command("check-group")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--algebra", type=FAMILIES, required=True)
@click.option("--tol", type=float, default=1e-8, show_default=True)
@click.option("--json", "as_json", is_flag=True)
@handle_errors
def check_group(input_path, algebra, tol, as_json):
    """Check that every matrix in a develop CSV lies in the group."""
    records, m = fio.read_matrices_csv(_read_text(input_path))
    spec = AlgebraSpec(algebra, m)
    bad = []
    for sid, step, Z in records:
        if not in_group(spec, Z, tol * (step + 1)):
            bad.append({"series_id": sid, "step": step, "residual": float(group_residual(spec, Z))})
    if as_json:
        click.echo(json.dumps({"checked": len(records), "failed": bad}))
    else:
        click.echo(f"checked {len(records)} matrices, {len(bad)} outside {spec.family.value}")
        for b in bad:
            click.echo(f"  {b['series_id']} step {b['step']}: residual {b['residual']:.3g}")
    if bad:
        sys.exit(ConstraintViolation.exit_code)


@main.command("signature")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--depth", type=int, required=True)
@click.option("--include-constant/--exclude-constant", default=True, show_default=True)
@click.option("--output", type=click.Path(dir_okay=False))
@handle_errors
def signature_cmd(input_path, depth, include_constant, output):
    """Truncated signature of every series, one row per series."""
    items = fio.read_series_csv(_read_text(input_path))
    rows = [(sid, signature(ts, depth).flatten(include_constant)) for sid, ts in items]
    width = len(rows[0][1])
    lines = ["series_id," + ",".join(f"s{i}" for i in range(width))]
    lines += [",".join([sid] + [fio.fmt(v) for v in feats]) for sid, feats in rows]
    _emit("\n".join(lines) + "\n", output)


@main.command()
@click.option("--algebra", "families", type=FAMILIES, multiple=True, help="repeatable; default all")
@click.option("--order", type=int, default=None)
@click.option("--dim", type=int, default=None)
@click.option("--len", "length", type=int, default=None)
@click.option("--trials", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--json", "as_json", is_flag=True)
@handle_errors
def gradcheck(families, order, dim, length, trials, seed, as_json):
    """Compare backward-pass gradients with central differences."""
    if trials < 0:
        raise InvalidArgument("--trials must be non-negative")
    fams = [f.upper() for f in families] or [f.value for f in Family]
    report = {}
    for i, fam in enumerate(fams):
        if trials == 0:
            continue
        recs = sweep(trials, seed=seed + i, family=fam, order=order, dim=dim, length=length)
        report[fam] = {
            "trials": len(recs),
            "max_theta_rel_err": float(max(r.theta_err for r in recs)),
            "max_input_rel_err": float(max(r.input_err for r in recs)),
        }
    worst = max(
        (max(v["max_theta_rel_err"], v["max_input_rel_err"]) for v in report.values()),
        default=0.0,
    )
    ok = bool(worst < GRAD_RTOL)
    if as_json:
        click.echo(json.dumps({"families": report, "tolerance": GRAD_RTOL, "pass": ok}))
    else:
        for fam, v in report.items():
            click.echo(
                f"{fam:8s} trials={v['trials']:3d}  theta {v['max_theta_rel_err']:.2e}"
                f"  input {v['max_input_rel_err']:.2e}"
            )
        click.echo(f"{'PASS' if ok else 'FAIL'} (tolerance {GRAD_RTOL:g})")
    if not ok:
        sys.exit(1)


def _load_split(data, split):
    csv_key, lab_key = f"{split}_csv", f"{split}_labels"
    if not data[csv_key]:
        return None
    items = fio.read_series_csv(_read_text(data[csv_key]))
    ids = [sid for sid, _ in items]
    targets, task = fio.read_labels_csv(_read_text(data[lab_key]), ids)
    return ids, [ts for _, ts in items], targets, task


def build_dataset(data):
    gen = data["generator"]
    if gen is not None:
        if gen["name"] == "rotation":
            return gen_rotation_dataset(gen["n"], gen["noise"], gen["seed"], gen["splits"])
        return gen_rigid_motion_dataset(
            gen["n"],
            gen["k"],
            gen["seed"],
            gen["noise"],
            gen["n_obs"],
            tuple(gen["speed"]),
            gen["turn"],
            gen["splits"],
        )
    series, targets, tags, task = [], [], [], None
    for split in ("train", "val", "test"):
        loaded = _load_split(data, split)
        if loaded is None:
            continue
        _, s, t, task = loaded
        series += s
        targets += list(t)
        tags += [split] * len(s)
    return Dataset(series, np.asarray(targets), np.asarray(tags), task)


def _write_split(out_dir, ds, split):
    part = ds.subset(split)
    if len(part) == 0:
        return
    ids = [f"{split}{i}" for i in range(len(part))]
    (out_dir / f"{split}.csv").write_text(fio.write_series_csv(list(zip(ids, part.series))))
    (out_dir / f"{split}_labels.csv").write_text(fio.write_labels_csv(ids, part.targets, part.task))


def save_model(path, model, ds):
    doc = model.to_dict()
    doc["task"] = ds.task
    doc["n_classes"] = ds.n_classes
    Path(path).write_text(json.dumps(doc) + "\n")


def load_model(path):
    try:
        doc = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"model file is not valid JSON: {exc}") from None
    return Model.from_dict(doc), doc.get("task", "classification")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--output-dir", default=None, help="overrides output_dir from the config")
@handle_errors
def train(config_path, output_dir):
    """Train a development model; writes metrics, models and the effective config."""
    try:
        doc = json.loads(_read_text(config_path))
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"config is not valid JSON: {exc}") from None
    cfg = materialize(doc)
    if output_dir:
        cfg["output_dir"] = output_dir
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")

    ds = build_dataset(cfg["data"])
    spec = AlgebraSpec(cfg["algebra"]["family"], cfg["algebra"]["order"])
    mc = cfg["model"]
    n_out = ds.n_classes if ds.task == "classification" else ds.targets.shape[1]
    model = init_model(spec, ds.dim, n_out, mc["head"], mc["input_mode"], mc["seed"], mc["init_scale"])
    tc = TrainConfig(**cfg["train"])
    if cfg["data"]["generator"] is not None:
        for split in ("val", "test"):
            _write_split(out, ds, split)

    with open(out / "metrics.jsonl", "w", newline="\n") as mf, open(
        out / "timing.jsonl", "w", newline="\n"
    ) as tf:

        def on_epoch(record, wall_ms):
            mf.write(json.dumps(record) + "\n")
            tf.write(json.dumps({"epoch": record["epoch"], "wall_ms": wall_ms}) + "\n")

        result = train_loop(tc, ds, model, on_epoch=on_epoch)
    save_model(out / "model.json", result.best_model, ds)
    save_model(out / "final_model.json", result.final_model, ds)
    summary = {
        "best_epoch": result.best_epoch,
        "best_val_metric": result.history[result.best_epoch - 1]["val_metric"],
        "epochs_run": len(result.history),
    }
    test = ds.subset("test")
    if len(test):
        summary["test_metric"] = evaluate(result.best_model, test)
        if ds.task == "regression":
            summary["test_static_baseline_mse"] = static_baseline_mse(test)
    (out / "summary.json").write_text(json.dumps(summary) + "\n")
    click.echo(json.dumps(summary))


@main.command("eval")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
@handle_errors
def eval_cmd(model_path, input_path, labels_path, as_json):
    """Accuracy (classification) or MSE (regression) of a saved model."""
    model, _ = load_model(model_path)
    items = fio.read_series_csv(_read_text(input_path))
    ids = [sid for sid, _ in items]
    targets, task = fio.read_labels_csv(_read_text(labels_path), ids)
    ds = Dataset([ts for _, ts in items], targets, np.array(["test"] * len(ids)), task)
    metric = evaluate(model, ds)
    name = "accuracy" if task == "classification" else "mse"
    if as_json:
        click.echo(json.dumps({name: metric}))
    else:
        click.echo(f"{name} {metric!r}")


def bench_lengths(length):
    grid = sorted({max(1, length // f) for f in (8, 4, 2, 1)})
    return grid


@main.command()
@click.option("--algebra", type=FAMILIES, default="SO", show_default=True)
@click.option("--order", type=int, default=8, show_default=True)
@click.option("--dim", type=int, default=4, show_default=True)
@click.option("--len", "length", type=int, default=256, show_default=True)
@click.option("--batch", type=int, default=32, show_default=True)
@click.option("--repeats", type=int, default=3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--json", "as_json", is_flag=True)
@handle_errors
def bench(algebra, order, dim, length, batch, repeats, seed, as_json):
    """Time forward and backward passes over a grid of sequence lengths."""
    rows = run_bench(algebra, order, dim, length, batch, repeats, seed)
    slope, r2 = loglog_fit([r["len"] for r in rows], [r["forward_ms"] for r in rows])
    if as_json:
        click.echo(json.dumps({"rows": rows, "forward_loglog_slope": slope, "r2": r2}))
        return
    click.echo(f"{'len':>6} {'forward_ms':>12} {'backward_ms':>12} {'ratio':>7}")
    for r in rows:
        click.echo(f"{r['len']:6d} {r['forward_ms']:12.3f} {r['backward_ms']:12.3f} {r['ratio']:7.2f}")
    click.echo(f"forward log-log slope {slope:.3f} (R^2 {r2:.4f})")


def run_bench(algebra, order, dim, length, batch, repeats=3, seed=0):
    if length < 1 or batch < 1 or dim < 1:
        raise InvalidArgument("--len, --batch and --dim must be positive")
    spec = AlgebraSpec(algebra, order)
    weights = random_init(spec, dim, seed=seed)
    rng = np.random.default_rng(seed)
    rows = []
    for n in bench_lengths(length):
        incr = rng.normal(scale=0.3, size=(batch, n, dim))
        fwd, bwd = [], []
        for _ in range(repeats):
            t0 = time.perf_counter()
            states, exps = forward_arrays(weights.theta, incr)
            t1 = time.perf_counter()
            partials = np.zeros_like(states)
            partials[:, -1] = 1.0
            backward_arrays(weights.theta, incr, states, partials, exps)
            t2 = time.perf_counter()
            fwd.append(t1 - t0)
            bwd.append(t2 - t1)
        f, b = min(fwd) * 1e3, min(bwd) * 1e3
        rows.append({"len": n, "forward_ms": f, "backward_ms": b, "ratio": b / f})
    return rows


def loglog_fit(xs, ys):
    """Least-squares slope and R^2 of ``log y`` against ``log x``."""
    lx, ly = np.log(xs), np.log(ys)
    if len(lx) < 2:
        return float("nan"), float("nan")
    slope, icpt = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + icpt)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(r2)


if __name__ == "__main__":
    main()
