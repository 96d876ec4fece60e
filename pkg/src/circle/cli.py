"""Command-line interface: synth, train, eval, sweep and ablate.

Every command writes a ``manifest.json`` next to its outputs recording the
argv, the fully resolved configuration, seeds, paths, wall time and sha256
checksums of inputs and outputs.
"""

import csv
import hashlib
import json
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import click
import numpy as np

from . import __version__
from . import autoencoder as ae_mod
from .alignment import (
    alignment_rates,
    baseline_realign,
    concatenate_representations,
    encode_all,
    infer_alignment,
    pca_views,
    save_alignment_csv,
)
from .dataset import SynthSpec, apply_misalignment, load_dataset, restore_alignment, save_dataset, synthesize
from .errors import (
    CircleError,
    CompatibilityError,
    DatasetFormatError,
    PreconditionError,
    ShapeError,
)
from .evaluation import EvalConfig, clustering_scores, evaluate_representation
from .trainer import TrainConfig, fit, write_curve_csv

EXIT_DATA = 3
EXIT_NUMERIC = 4

DATA_ERRORS = (DatasetFormatError, CompatibilityError, PreconditionError, ShapeError, OSError)
SWEEP_AXES = ("unaligned", "lambda", "k", "dz", "batch")


class DataError(click.ClickException):
    exit_code = EXIT_DATA


class NumericError(click.ClickException):
    exit_code = EXIT_NUMERIC


class CircleGroup(click.Group):
    """Maps library exceptions onto the documented exit codes."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except DATA_ERRORS as e:
            raise DataError(f"{type(e).__name__}: {e}") from e
        except CircleError as e:
            raise NumericError(f"{type(e).__name__}: {e}") from e
        except FloatingPointError as e:
            raise NumericError(str(e)) from e


class NumberList(click.ParamType):
    name = "list"

    def __init__(self, kind=int):
        self.kind = kind

    def convert(self, value, param, ctx):
        if isinstance(value, (list, tuple)):
            return tuple(value)
        try:
            items = tuple(self.kind(s) for s in str(value).split(",") if s.strip())
        except ValueError:
            self.fail(f"{value!r} is not a comma-separated list of {self.kind.__name__}", param, ctx)
        if not items:
            self.fail("list is empty", param, ctx)
        return items


INTS = NumberList(int)
FLOATS = NumberList(float)


# ---------------------------------------------------------------- manifests

def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _checksums(paths):
    out = {}
    for p in sorted(Path(p) for p in paths):
        if p.is_dir():
            out.update(_checksums(q for q in p.iterdir() if q.is_file() and q.name != "manifest.json"))
        elif p.is_file():
            out[str(p)] = sha256(p)
    return out


def write_manifest(out_dir, command, config, seeds, inputs, outputs, started):
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": config,
        "seeds": list(seeds),
        "inputs": {"paths": [str(p) for p in inputs], "sha256": _checksums(inputs)},
        "outputs": {"paths": [str(p) for p in outputs], "sha256": _checksums(outputs)},
        "wall_time_s": time.perf_counter() - started,
        "versions": {
            "circle": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _prepare_out(out, inputs=()):
    out = Path(out)
    for src in inputs:
        if Path(src).resolve() == out.resolve():
            raise click.UsageError("--out must differ from the input directory", None)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- shared options

def training_options(f):
    opts = [
        click.option("--lambda", "lam", type=click.FloatRange(min=0.0), default=1e-2, show_default=True,
                     help="Weight of the contrastive term."),
        click.option("--k", type=click.IntRange(min=1), default=3, show_default=True,
                     help="Neighbours per view in the relation graph."),
        click.option("--dz", type=click.IntRange(min=1), default=32, show_default=True,
                     help="Representation width."),
        click.option("--hidden", type=INTS, default="128,64,64", show_default=True,
                     help="Three hidden widths of each encoder (decoder mirrors them)."),
        click.option("--batch-size", type=click.IntRange(min=1), default=256, show_default=True),
        click.option("--epochs", type=click.IntRange(min=1), default=500, show_default=True),
        click.option("--lr", type=click.FloatRange(min=0.0, min_open=True), default=1e-3, show_default=True),
        click.option("--temperature", type=click.FloatRange(min=0.0, min_open=True), default=1.0,
                     show_default=True),
        click.option("--weighting", type=click.Choice(["index", "uniform"]), default="index",
                     show_default=True, help="Neighbour weight profile."),
        click.option("--no-reconstruction", is_flag=True, help="Drop the reconstruction term."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _train_config(seed, lam, k, dz, hidden, batch_size, epochs, lr, temperature, weighting,
                  no_reconstruction):
    if len(hidden) != 3:
        raise click.BadParameter("expected three widths", param_hint="--hidden")
    if min(hidden) < 1:
        raise click.BadParameter("widths must be positive", param_hint="--hidden")
    return TrainConfig(
        lam=lam, k=k, dz=dz, hidden=tuple(hidden), batch_size=batch_size, epochs=epochs, lr=lr,
        seed=seed, temperature=temperature, reconstruction=not no_reconstruction, weighting=weighting,
    )


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------- commands

@click.group(cls=CircleGroup)
@click.version_option(__version__, "--version")
def main():
    """Clustering of multi-view data whose views are only partially aligned."""


@main.command()
@click.option("--views", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--clusters", type=click.IntRange(min=1), default=5, show_default=True)
@click.option("--per-cluster", type=click.IntRange(min=1), default=200, show_default=True)
@click.option("--dims", type=INTS, default="64,32,48", show_default=True)
@click.option("--latent-dim", type=click.IntRange(min=1), default=8, show_default=True)
@click.option("--noise", type=click.FloatRange(min=0.0), default=0.1, show_default=True)
@click.option("--cluster-std", type=click.FloatRange(min=0.0), default=0.6, show_default=True)
@click.option("--unaligned", type=click.FloatRange(0.0, 1.0, max_open=True), default=0.0,
              show_default=True, help="Fraction of rows shuffled across views (must be < 1).")
@click.option("--derangement", is_flag=True, help="Guarantee every shuffled row moves.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--binary", is_flag=True, help="Write views in the MVW binary format instead of CSV.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
def synth(views, clusters, per_cluster, dims, latent_dim, noise, cluster_std, unaligned, derangement,
          seed, binary, out):
    """Generate a synthetic multi-view dataset."""
    started = time.perf_counter()
    if len(dims) != views:
        raise click.BadParameter(f"{len(dims)} widths given for {views} views", param_hint="--dims")
    if min(dims) < 1:
        raise click.BadParameter("widths must be positive", param_hint="--dims")
    spec = SynthSpec(
        num_views=views, num_clusters=clusters, samples_per_cluster=per_cluster, latent_dim=latent_dim,
        dims=tuple(dims), noise_std=noise, cluster_std=cluster_std, unaligned_fraction=unaligned,
        seed=seed, derangement=derangement,
    )
    out = _prepare_out(out)
    paths = save_dataset(synthesize(spec), out, binary=binary)
    config = asdict(spec)
    config["binary"] = binary
    write_manifest(out, "synth", config, [seed], [], paths, started)
    click.echo(f"wrote {len(paths)} files to {out}")


@main.command()
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--seed", type=int, required=True)
@training_options
@click.option("--log-every", type=click.IntRange(min=0), default=50, show_default=True,
              help="Print losses every N epochs (0 disables).")
def train(data, out, seed, log_every, **train_flags):
    """Train the per-view autoencoders on a dataset directory."""
    started = time.perf_counter()
    config = _train_config(seed, **train_flags)
    out = _prepare_out(out, [data])
    dataset = load_dataset(data)

    def progress(r):
        if log_every and (r.epoch == 1 or r.epoch % log_every == 0 or r.epoch == config.epochs):
            click.echo(f"epoch {r.epoch}: L_REC={r.reconstruction:.6g} L_CGC={r.contrastive:.6g} "
                       f"total={r.total:.6g}", err=True)

    model, curve = fit(dataset, config, progress=progress)
    model_path, curve_path = out / "model.cir", out / "curve.csv"
    ae_mod.save_model(model, model_path)
    write_curve_csv(curve, curve_path)
    write_manifest(out, "train", config.to_dict(), [seed], [data], [model_path, curve_path], started)
    click.echo(f"final total loss {curve[-1].total:.6g}; wrote {model_path}")


@main.command(name="eval")
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--model", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Trained model; not needed with --baseline.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--align-mode", type=click.Choice(["bijective", "greedy"]), default="bijective",
              show_default=True)
@click.option("--keep-known/--no-keep-known", default=None,
              help="Keep rows marked aligned fixed during realignment "
                   "[default: on for models, off for the baseline].")
@click.option("--baseline", type=click.Choice(["pca-hungarian"]), default=None,
              help="Evaluate the raw-feature baseline instead of a model.")
@click.option("--pca-dim", type=click.IntRange(min=1), default=20, show_default=True)
@click.option("--seeds", type=INTS, default="0,1,2,3,4", show_default=True)
@click.option("--fractions", type=FLOATS, default="0.8,0.5,0.2", show_default=True,
              help="Training fractions for the linear classifier.")
@click.option("--restarts", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--dump-alignment", is_flag=True, help="Write alignment_<v>.csv files.")
def evaluate_cmd(data, model, out, align_mode, keep_known, baseline, pca_dim, seeds, fractions, restarts,
                 dump_alignment):
    """Realign, concatenate and score representations."""
    started = time.perf_counter()
    if any(not 0.0 < f < 1.0 for f in fractions):
        raise click.BadParameter("fractions must lie in (0, 1)", param_hint="--fractions")
    if baseline is None and model is None:
        raise click.UsageError("--model is required unless --baseline is given")
    if keep_known is None:
        keep_known = baseline is None
    out = _prepare_out(out, [data])
    dataset = load_dataset(data)
    cfg = EvalConfig(mode=align_mode, keep_known=keep_known, seeds=tuple(seeds),
                     train_fractions=tuple(fractions), restarts=restarts)
    inputs = [data]
    if baseline:
        reps = pca_views(dataset, pca_dim)
        alignment = baseline_realign(dataset, pca_dim, keep_known=keep_known, projections=reps)
    else:
        net = ae_mod.load_model(model)
        reps = encode_all(net, dataset)
        alignment = infer_alignment(net, dataset, align_mode, keep_known, reps=reps)
        inputs.append(model)
    z = concatenate_representations(reps, alignment)
    report = evaluate_representation(z, dataset, alignment, cfg)
    report_path = out / "report.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    outputs = [report_path]
    if dump_alignment:
        outputs += save_alignment_csv(alignment, out)
    config = asdict(cfg)
    config.update(baseline=baseline, pca_dim=pca_dim if baseline else None)
    if baseline:
        config.update(mode="bijective")
    write_manifest(out, "eval", config, seeds, inputs, outputs, started)
    click.echo(f"ACC={report.acc:.4f} NMI={report.nmi:.4f} ARI={report.ari:.4f} "
               f"instance={report.instance_rate:.4f} cluster={report.cluster_rate:.4f}")


# ---------------------------------------------------------------- sweep / ablate

METRICS = ("acc", "nmi", "ari", "instance_rate", "cluster_rate")


def run_cell(data_dir, config, seed, eval_cfg, cell_dir, unaligned=None):
    """Train and score one isolated (setting, seed) cell. Never raises."""
    try:
        dataset = load_dataset(data_dir)
        if unaligned is not None:
            dataset = apply_misalignment(restore_alignment(dataset), unaligned, seed=seed + 1)
        config = replace(config, seed=seed)
        model, curve = fit(dataset, config)
        Path(cell_dir).mkdir(parents=True, exist_ok=True)
        ae_mod.save_model(model, Path(cell_dir) / "model.cir")
        write_curve_csv(curve, Path(cell_dir) / "curve.csv")
        reps = encode_all(model, dataset)
        alignment = infer_alignment(model, dataset, eval_cfg.mode, eval_cfg.keep_known, reps=reps)
        z = concatenate_representations(reps, alignment)
        acc, nmi_v, ari_v = clustering_scores(z, dataset.labels, eval_cfg.seeds, eval_cfg.restarts)
        inst, clus = alignment_rates(alignment, dataset)
        return {"status": "ok", "acc": acc, "nmi": nmi_v, "ari": ari_v,
                "instance_rate": inst, "cluster_rate": clus}
    except Exception as e:  # a failed cell is recorded and the sweep goes on
        return {"status": f"failed: {type(e).__name__}: {e}"}


def _run_cells(cells, jobs):
    if jobs <= 1:
        return [run_cell(*c) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_cell, *zip(*cells)))


def _mean_row(results):
    ok = [r for r in results if r["status"] == "ok"]
    row = {"status": f"ok {len(ok)}/{len(results)}"}
    for m in METRICS:
        row[m] = float(np.mean([r[m] for r in ok])) if ok else float("nan")
    return row


def _fmt(row):
    return [row["status"]] + ["" if m not in row else repr(float(row[m])) for m in METRICS]


def _check_labels(data):
    d = load_dataset(data)
    if d.labels is None:
        raise PreconditionError(f"{data}: labels.csv is required for scoring")
    return d


@main.command()
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--axis", type=click.Choice(SWEEP_AXES), required=True)
@click.option("--values", type=str, required=True, help="Comma-separated settings for the axis.")
@click.option("--seeds", type=INTS, default="0,1,2,3,4", show_default=True)
@training_options
@click.option("--align-mode", type=click.Choice(["bijective", "greedy"]), default="bijective",
              show_default=True)
@click.option("--keep-known/--no-keep-known", default=True, show_default=True)
@click.option("--restarts", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True,
              help="Cells run concurrently in up to this many processes.")
def sweep(data, out, axis, values, seeds, align_mode, keep_known, restarts, jobs, **train_flags):
    """Retrain and score for each value of one hyperparameter."""
    started = time.perf_counter()
    kind = float if axis in ("unaligned", "lambda") else int
    parsed = NumberList(kind).convert(values, None, click.get_current_context())
    if axis == "unaligned" and any(not 0.0 <= x < 1.0 for x in parsed):
        raise click.BadParameter("unaligned fractions must lie in [0, 1)", param_hint="--values")
    if axis == "lambda" and min(parsed) < 0:
        raise click.BadParameter("lambda must be non-negative", param_hint="--values")
    if kind is int and min(parsed) < 1:
        raise click.BadParameter(f"{axis} values must be positive", param_hint="--values")
    base = _train_config(seeds[0], **train_flags)
    out = _prepare_out(out, [data])
    _check_labels(data)
    eval_cfg = EvalConfig(mode=align_mode, keep_known=keep_known, seeds=(0,), restarts=restarts)
    field = {"lambda": "lam", "k": "k", "dz": "dz", "batch": "batch_size"}.get(axis)

    cells, keys = [], []
    for value in parsed:
        cfg = base if field is None else replace(base, **{field: value})
        for s in seeds:
            cell_dir = out / "cells" / f"{axis}={value}" / f"seed={s}"
            cells.append((data, cfg, s, eval_cfg, str(cell_dir), value if axis == "unaligned" else None))
            keys.append((value, s))
    results = _run_cells(cells, jobs)

    rows = []
    for value in parsed:
        group = [r for (v, _), r in zip(keys, results) if v == value]
        rows += [[axis, value, s] + _fmt(r) for (v, s), r in zip(keys, results) if v == value]
        rows.append([axis, value, "mean"] + _fmt(_mean_row(group)))
    csv_path = out / "sweep.csv"
    _write_csv(csv_path, ["axis", "value", "seed", "status", *METRICS], rows)
    config = base.to_dict()
    config.update(axis=axis, values=list(parsed), eval=asdict(eval_cfg), jobs=jobs)
    write_manifest(out, "sweep", config, seeds, [data], [csv_path], started)
    failed = sum(r["status"] != "ok" for r in results)
    click.echo(f"{len(results)} cells, {failed} failed; wrote {csv_path}")


ABLATIONS = (
    ("REC-only", {"lam": 0.0}),
    ("CGC-only", {"reconstruction": False}),
    ("full", {}),
)


@main.command()
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--seeds", type=INTS, default="0,1,2,3,4", show_default=True)
@training_options
@click.option("--align-mode", type=click.Choice(["bijective", "greedy"]), default="bijective",
              show_default=True)
@click.option("--keep-known/--no-keep-known", default=True, show_default=True)
@click.option("--restarts", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True)
def ablate(data, out, seeds, align_mode, keep_known, restarts, jobs, **train_flags):
    """Compare reconstruction-only, contrastive-only and the full objective."""
    started = time.perf_counter()
    base = _train_config(seeds[0], **train_flags)
    out = _prepare_out(out, [data])
    _check_labels(data)
    eval_cfg = EvalConfig(mode=align_mode, keep_known=keep_known, seeds=(0,), restarts=restarts)
    cells = [
        (data, replace(base, **change), s, eval_cfg, str(out / "cells" / name / f"seed={s}"))
        for name, change in ABLATIONS for s in seeds
    ]
    results = _run_cells(cells, jobs)

    per_seed, summary = [], []
    for i, (name, _) in enumerate(ABLATIONS):
        group = results[i * len(seeds):(i + 1) * len(seeds)]
        per_seed += [[name, s] + _fmt(r) for s, r in zip(seeds, group)]
        summary.append([name] + _fmt(_mean_row(group)))
    summary_path, runs_path = out / "ablation.csv", out / "ablation_runs.csv"
    _write_csv(summary_path, ["variant", "status", *METRICS], summary)
    _write_csv(runs_path, ["variant", "seed", "status", *METRICS], per_seed)
    config = base.to_dict()
    config.update(variants={n: c for n, c in ABLATIONS}, eval=asdict(eval_cfg), jobs=jobs)
    write_manifest(out, "ablate", config, seeds, [data], [summary_path, runs_path], started)
    for row in summary:
        click.echo(f"{row[0]}: ACC={float(row[2]):.4f}")


if __name__ == "__main__":
    main()
