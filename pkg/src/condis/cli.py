"""Command line runner: closed-form tables, toy and paired-digit sweeps,
the independence counterexample search, and metric reports on checkpoints.

Every training run lands in its own directory holding the manifest, the
merged flag config, a line-delimited log, results.csv, plot.svg, and one
checkpoint per trained model.  Feeding the persisted config.json back in
via --config reproduces results.csv, plot.svg, and the checkpoints
byte for byte (single worker).
"""

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, runio
from .datagen import (
    OcclusionParams,
    digit_pools,
    load_mnist_splits,
    make_pair_batch,
    mnist_paths,
    sample_correlated_attributes,
    toy_observations,
)
from .errors import (
    ArityError,
    EmptyPool,
    Infeasible,
    InfeasibleCorrelation,
    MissingData,
    SchemaMismatch,
    SingularCovariance,
    SingularMixing,
)
from .evaluation import ShiftSweepReport, accuracy_sweep, metric_report
from .infotheory import independence_counterexample_search, mutual_information
from .linear_gaussian import (
    LinearGaussianModel,
    base_solution,
    cmi_constrained_solution,
    make_correlated_covariance,
    mi_constrained_solution,
    sweep_test_correlation,
    variance_explained,
)
from .plotting import Series, svg_line_plot, write_svg
from .presets import (
    NONNEG_RHOS,
    PRESETS,
    fit_toy_objective,
    get_preset,
    mnist_train_config,
    toy_batch_generator,
)
from .training import LabeledBatch, encode, load_models, predict, save_models, train

DATA_ROOT_ENV = "CONDIS_DATA_ROOT"
MANIFEST_SCHEMA = "run-manifest.v1"

# objective_tag -> name used in reports and plots
DISPLAY = {"Base": "Base", "BaseMI": "Base+MI", "BaseCMI": "Base+CMI"}
_SOLVERS = {
    "Base": base_solution,
    "BaseMI": mi_constrained_solution,
    "BaseCMI": cmi_constrained_solution,
}
_OBJECTIVE_ALIASES = {
    "base": "Base",
    "base+mi": "BaseMI",
    "basemi": "BaseMI",
    "mi": "BaseMI",
    "base+cmi": "BaseCMI",
    "basecmi": "BaseCMI",
    "cmi": "BaseCMI",
}

_MNIST_HELP = """\
Expected IDX files (ubyte format, decompressed):
  {root}/mnist/train-images.idx
  {root}/mnist/train-labels.idx
  {root}/mnist/test-images.idx
  {root}/mnist/test-labels.idx
Download the four MNIST archives from an official mirror, gunzip them, and
rename e.g. train-images-idx3-ubyte -> train-images.idx.  This tool never
touches the network.  Set {env} or pass --data-root to point elsewhere.\
"""


def _utc_now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _parse_objectives(tokens):
    """Map user spellings (base, base+mi, cmi, ...) to objective tags."""
    if not tokens:
        return None
    out = []
    for token in tokens:
        key = token.strip().lower()
        if key not in _OBJECTIVE_ALIASES:
            choices = "base, base+mi, base+cmi"
            raise ValueError(f"unknown objective {token!r}; choose from {choices}")
        tag = _OBJECTIVE_ALIASES[key]
        if tag not in out:
            out.append(tag)
    return tuple(out)


def _parse_seeds(text):
    seeds = tuple(int(tok) for tok in str(text).split(",") if tok.strip())
    if not seeds:
        raise ValueError(f"no seeds in {text!r}")
    return seeds


def _parse_grid(text):
    values = tuple(float(tok) for tok in str(text).split(",") if tok.strip())
    if not values or any(v <= 0 for v in values):
        raise ValueError(f"learning-rate grid must be positive floats, got {text!r}")
    return values


def _slug(tag):
    return DISPLAY[tag].lower().replace("+", "-")


def _file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# run-directory plumbing


def _open_run(args, preset_name, flag_config, extra=None):
    """Create the run dir and write manifest + merged config before any work."""
    cfg_hash = runio.config_hash(flag_config)
    if args.out:
        run_dir = Path(args.out)
        run_dir.mkdir(parents=True, exist_ok=True)
    else:
        run_dir = Path(runio.create_run_dir(args.out_dir, preset_name, cfg_hash))
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "subcommand": flag_config["command"],
        "preset": preset_name,
        "config": flag_config,
        "config_hash": cfg_hash,
        "version": __version__,
        "status": "running",
        "started": _utc_now(),
        "ended": None,
        "outputs": [],
    }
    if extra:
        manifest.update(extra)
    runio.write_manifest(run_dir, manifest)
    (run_dir / "config.json").write_text(
        json.dumps(flag_config, indent=2, sort_keys=True) + "\n"
    )
    return run_dir, manifest


def _close_run(run_dir, manifest, outputs=(), status="complete", error=None):
    manifest["status"] = status
    manifest["ended"] = _utc_now()
    manifest["outputs"] = sorted(set(outputs) | {"config.json"})
    if error is not None:
        manifest["error"] = error
    runio.write_manifest(run_dir, manifest)


def _run_and_close(args, preset_name, flag_config, work, extra=None):
    """Manifest bracket: written up front, marked failed if work raises."""
    run_dir, manifest = _open_run(args, preset_name, flag_config, extra=extra)
    try:
        outputs = work(run_dir)
    except BaseException as exc:
        _close_run(
            run_dir, manifest, status="failed", error=f"{type(exc).__name__}: {exc}"
        )
        raise
    _close_run(run_dir, manifest, outputs=outputs)
    print(f"run dir: {run_dir}")
    for name in sorted(set(outputs) | {"config.json", "manifest.json"}):
        print(f"  {name}")
    return 0


def _predictor(models):
    return lambda x: predict(models, x)


def _sweep_rows(tag, report):
    for row in report.rows():
        yield {
            "objective": DISPLAY[tag],
            "rho": f"{row['rho']:g}",
            "seed": row["seed"],
            "attribute": row["attribute"],
            "accuracy": f"{row['accuracy']:.6f}",
        }


def _sweep_series(tag, report):
    mean, half = report.mean, report.ci68
    return Series(
        label=DISPLAY[tag],
        x=np.asarray(report.rhos, dtype=float),
        y=mean,
        lo=mean - half,
        hi=mean + half,
    )


# ---------------------------------------------------------------------------
# analytic


def cmd_analytic(args):
    model = LinearGaussianModel(
        A=np.eye(2),
        C_s=make_correlated_covariance(args.rho, 2),
        C_n=args.sigma2 * np.eye(2),
    )
    rhos = get_preset("table1").eval_rhos
    entries = []
    for tag in ("Base", "BaseMI", "BaseCMI"):
        sol = _SOLVERS[tag](model)
        sweep = sweep_test_correlation(sol, model, rhos)
        entries.append(
            {
                "objective": DISPLAY[tag],
                "ve_train": variance_explained(sol, model, model.C_s),
                "ve_uncorrelated": variance_explained(sol, model, np.eye(model.K)),
                "M": sol.M.tolist(),
                "sweep": [{"rho": r, "ve": v} for r, v in sweep.ve_test_by_rho],
            }
        )

    print(
        f"closed-form linear-Gaussian readouts, "
        f"train rho {args.rho:g}, noise variance {args.sigma2:g}"
    )
    print(f"{'objective':<10} {'VE train':>9} {'VE rho=0':>9}  M")
    for e in entries:
        m = np.asarray(e["M"])
        m_text = "[" + ", ".join(
            "[" + ", ".join(f"{v: .3f}" for v in row) + "]" for row in m
        ) + "]"
        print(
            f"{e['objective']:<10} {e['ve_train']:8.1%} {e['ve_uncorrelated']:8.1%}"
            f"   {m_text}"
        )
    if args.out:
        doc = {
            "schema": "analytic-report.v1",
            "rho": args.rho,
            "sigma2": args.sigma2,
            "entries": entries,
        }
        out = Path(args.out)
        if out.parent != Path(""):
            out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# toy


def _toy_preset(args):
    if args.task == "reg":
        preset = get_preset("toy-reg")
    else:
        name = f"toy-cls-K{args.K}"
        if name in PRESETS:
            preset = get_preset(name)
        else:
            # any K: nonnegative grid, equicorrelation stays PSD for rho >= 0
            preset = replace(
                get_preset("toy-cls-K2"), name=name, K=args.K, eval_rhos=NONNEG_RHOS
            )
    updates = {}
    if args.task == "reg" and args.K != preset.K:
        updates["K"] = args.K
    if args.rho_train is not None:
        updates["rho_train"] = args.rho_train
    if args.noise is not None:
        updates["noise"] = args.noise
        if args.task == "reg":
            # the regression model is parameterized by the noise variance
            updates["sigma2"] = args.noise**2
    if args.label_fraction is not None:
        updates["label_fraction"] = args.label_fraction
    objectives = _parse_objectives(args.objective)
    if objectives:
        updates["objectives"] = objectives
    if args.seeds is not None:
        updates["seeds"] = _parse_seeds(args.seeds)
    elif args.seed is not None:
        updates["seeds"] = (args.seed,)
    return replace(preset, **updates) if updates else preset


def _run_toy_reg(run_dir, preset):
    model = LinearGaussianModel(
        A=np.eye(preset.K),
        C_s=make_correlated_covariance(preset.rho_train, preset.K),
        C_n=preset.sigma2 * np.eye(preset.K),
    )
    model0 = LinearGaussianModel(A=model.A, C_s=np.eye(preset.K), C_n=model.C_n)
    reference = variance_explained(base_solution(model0), model0, np.eye(preset.K))

    rows, series, records = [], [], []
    for tag in preset.objectives:
        sol = _SOLVERS[tag](model)
        sweep = sweep_test_correlation(sol, model, preset.eval_rhos)
        rows.extend(
            {
                "objective": DISPLAY[tag],
                "rho": f"{r:g}",
                "variance_explained": f"{v:.6f}",
            }
            for r, v in sweep.ve_test_by_rho
        )
        series.append(
            Series(
                label=DISPLAY[tag],
                x=np.asarray(preset.eval_rhos, dtype=float),
                y=np.array([v for _, v in sweep.ve_test_by_rho]),
            )
        )
        records.append(
            {
                "event": "closed_form",
                "objective": DISPLAY[tag],
                "ve_train": sweep.ve_train,
            }
        )

    runio.write_results_csv(
        run_dir / "results.csv", rows, fieldnames=["objective", "rho", "variance_explained"]
    )
    svg = svg_line_plot(
        series,
        xlabel="test correlation",
        ylabel="variance explained",
        title=f"closed-form readouts, train correlation {preset.rho_train:g}",
        vline=preset.rho_train,
        vline_label="train correlation",
        hline=reference,
        hline_label="uncorrelated-fit reference",
    )
    write_svg(run_dir / "plot.svg", svg)
    runio.append_log_records(run_dir / "log.ndjson", records)
    return ["results.csv", "plot.svg", "log.ndjson"]


def _uncorrelated_reference(preset, epochs):
    """Accuracy of the plain objective trained and tested without correlation."""
    generator = toy_batch_generator(preset.K, preset.noise)
    p0 = replace(preset, rho_train=0.0)
    accs = []
    for seed in preset.seeds:
        models, _, _ = fit_toy_objective(p0, "Base", seed, epochs=epochs)
        batch = generator(0.0, preset.noise, preset.n_eval, np.random.default_rng([9, int(seed)]))
        accs.append(float((predict(models, batch.x) == batch.labels).mean()))
    return float(np.mean(accs))


def _run_toy_cls(run_dir, preset, epochs, workers):
    generator = toy_batch_generator(preset.K, preset.noise)
    reference = _uncorrelated_reference(preset, epochs)

    outputs = ["results.csv", "plot.svg", "log.ndjson"]
    rows, series, records = [], [], []
    for tag in preset.objectives:
        grid = np.empty((len(preset.eval_rhos), len(preset.seeds), preset.K))
        for j, seed in enumerate(preset.seeds):
            models, config, log = fit_toy_objective(preset, tag, seed, epochs=epochs)
            report = accuracy_sweep(
                _predictor(models),
                generator,
                preset.eval_rhos,
                preset.noise,
                seeds=(seed,),
                n_test=preset.n_eval,
                train_rho=preset.rho_train,
                reference_accuracy=reference,
                workers=workers,
            )
            grid[:, j, :] = report.accuracies[:, 0, :]
            name = f"{_slug(tag)}-seed{seed}.npz"
            save_models(run_dir / name, models, config)
            outputs.append(name)
            records.append(
                {
                    "event": "fit",
                    "objective": DISPLAY[tag],
                    "seed": int(seed),
                    "config_hash": config.hash(),
                    "steps": len(log.steps) if log else 0,
                    "wall_time": log.wall_time if log else 0.0,
                }
            )
        combined = ShiftSweepReport(
            rhos=tuple(preset.eval_rhos),
            seeds=tuple(int(s) for s in preset.seeds),
            accuracies=grid,
            noise_level=preset.noise,
            train_rho=preset.rho_train,
            reference_accuracy=reference,
        )
        rows.extend(_sweep_rows(tag, combined))
        series.append(_sweep_series(tag, combined))

    runio.write_results_csv(
        run_dir / "results.csv",
        rows,
        fieldnames=["objective", "rho", "seed", "attribute", "accuracy"],
    )
    svg = svg_line_plot(
        series,
        xlabel="test correlation",
        ylabel="accuracy",
        title=f"accuracy under correlation shift, K={preset.K}",
        vline=preset.rho_train,
        vline_label="train correlation",
        hline=reference,
        hline_label="uncorrelated baseline",
    )
    write_svg(run_dir / "plot.svg", svg)
    runio.append_log_records(run_dir / "log.ndjson", records)
    return outputs


def cmd_toy(args):
    preset = _toy_preset(args)
    flag_config = {
        "command": "toy",
        "task": args.task,
        "K": args.K,
        "rho_train": args.rho_train,
        "noise": args.noise,
        "objective": list(args.objective) if args.objective else None,
        "seeds": args.seeds,
        "epochs": args.epochs,
        "label_fraction": args.label_fraction,
        "seed": args.seed,
    }
    if args.task == "reg":
        work = lambda run_dir: _run_toy_reg(run_dir, preset)
    else:
        work = lambda run_dir: _run_toy_cls(run_dir, preset, args.epochs, args.workers)
    return _run_and_close(
        args, preset.name, flag_config, work, extra={"resolved": preset.to_dict()}
    )


# ---------------------------------------------------------------------------
# paired digits


def _unit_pools(images, labels):
    """Digit pools scaled to [0, 1] once, so batch assembly never reconverts."""
    pools = digit_pools(images, labels)
    return {digit: pool.astype(np.float64) / 255.0 for digit, pool in pools.items()}


def _pair_generator(pools):
    """accuracy_sweep-compatible stream of paired-digit batches.

    noise is the occlusion level; labels are (left, right) class indices.
    """

    def generate(rho, noise, n, rng):
        occ = OcclusionParams(level=float(noise))
        pair = make_pair_batch(pools[3], pools[8], rho, occ, n, rng)
        x = pair.images.reshape(len(pair.images), -1)
        labels = np.stack([pair.left_labels, pair.right_labels], axis=1)
        return LabeledBatch(x=x, labels=labels, mask=np.ones_like(labels, dtype=bool))

    return generate


def _mnist_preset(args):
    preset = get_preset("mnist-3-8")
    updates = {}
    if args.rho_train is not None:
        updates["rho_train"] = args.rho_train
    if args.noise is not None:
        updates["noise"] = args.noise
    if args.epochs is not None:
        updates["epochs"] = args.epochs
    if args.lr_grid is not None:
        updates["lr_grid"] = _parse_grid(args.lr_grid)
    objectives = _parse_objectives(args.objective)
    if objectives:
        updates["objectives"] = objectives
    if args.seeds is not None:
        updates["seeds"] = _parse_seeds(args.seeds)
    elif args.seed is not None:
        updates["seeds"] = (args.seed,)
    return replace(preset, **updates) if updates else preset


def _fit_mnist_cell(preset, pools, tag, lr, seed, steps_per_epoch, eval_n):
    config = mnist_train_config(
        preset,
        tag,
        lr,
        lr_disc=None if tag == "Base" else 10.0 * lr,
        seed=seed,
        steps_per_epoch=steps_per_epoch,
    )
    train_gen = _pair_generator(pools["train"])
    data = lambda batch, rng: train_gen(preset.rho_train, preset.noise, batch, rng)
    models, log = train(data, config)
    val_gen = _pair_generator(pools["val"])
    val = val_gen(preset.rho_train, preset.noise, eval_n, np.random.default_rng([11, int(seed)]))
    val_acc = float((predict(models, val.x) == val.labels).mean())
    return models, config, log, val_acc


def _run_mnist(run_dir, preset, pools, steps_per_epoch, eval_n, workers):
    grid = preset.lr_grid or (1e-4,)
    cells = [
        (tag, lr, seed)
        for tag in preset.objectives
        for lr in grid
        for seed in preset.seeds
    ]

    def run_cell(cell):
        tag, lr, seed = cell
        return cell, _fit_mnist_cell(
            preset, pools, tag, lr, seed, steps_per_epoch, eval_n
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fitted = list(pool.map(run_cell, cells))
    else:
        fitted = [run_cell(cell) for cell in cells]

    records = [
        {
            "event": "grid_cell",
            "objective": DISPLAY[tag],
            "lr": lr,
            "seed": int(seed),
            "val_accuracy": round(val_acc, 6),
            "config_hash": config.hash(),
            "steps": len(log.steps),
            "wall_time": log.wall_time,
        }
        for (tag, lr, seed), (models, config, log, val_acc) in fitted
    ]

    # one lr per objective, chosen on validation accuracy averaged over seeds
    by_cell = {cell: fit for cell, fit in fitted}
    best_lr = {}
    for tag in preset.objectives:
        scores = [
            (np.mean([by_cell[(tag, lr, s)][3] for s in preset.seeds]), lr)
            for lr in grid
        ]
        score, lr = max(scores, key=lambda pair: (pair[0], -pair[1]))
        best_lr[tag] = lr
        records.append(
            {
                "event": "selected",
                "objective": DISPLAY[tag],
                "lr": lr,
                "val_accuracy": round(float(score), 6),
            }
        )

    outputs = ["results.csv", "plot.svg", "log.ndjson"]
    test_gen = _pair_generator(pools["test"])
    rows, series = [], []
    for tag in preset.objectives:
        acc = np.empty((len(preset.eval_rhos), len(preset.seeds), 2))
        for j, seed in enumerate(preset.seeds):
            models, config, _, _ = by_cell[(tag, best_lr[tag], seed)]
            report = accuracy_sweep(
                _predictor(models),
                test_gen,
                preset.eval_rhos,
                preset.noise,
                seeds=(seed,),
                n_test=eval_n,
                train_rho=preset.rho_train,
                workers=workers,
            )
            acc[:, j, :] = report.accuracies[:, 0, :]
            name = f"{_slug(tag)}-seed{seed}.npz"
            save_models(run_dir / name, models, config)
            outputs.append(name)
        combined = ShiftSweepReport(
            rhos=tuple(preset.eval_rhos),
            seeds=tuple(int(s) for s in preset.seeds),
            accuracies=acc,
            noise_level=preset.noise,
            train_rho=preset.rho_train,
        )
        rows.extend(_sweep_rows(tag, combined))
        series.append(_sweep_series(tag, combined))

    runio.write_results_csv(
        run_dir / "results.csv",
        rows,
        fieldnames=["objective", "rho", "seed", "attribute", "accuracy"],
    )
    svg = svg_line_plot(
        series,
        xlabel="test correlation",
        ylabel="accuracy",
        title=(
            f"paired digits 3 vs 8, occlusion {preset.noise:g}, "
            f"train correlation {preset.rho_train:g}"
        ),
        vline=preset.rho_train,
        vline_label="train correlation",
    )
    write_svg(run_dir / "plot.svg", svg)
    runio.append_log_records(run_dir / "log.ndjson", records)
    return outputs


def cmd_mnist(args):
    data_root = args.data_root or os.environ.get(DATA_ROOT_ENV) or "data"
    try:
        splits = load_mnist_splits(data_root)
    except MissingData as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(_MNIST_HELP.format(root=data_root, env=DATA_ROOT_ENV), file=sys.stderr)
        return 1
    preset = _mnist_preset(args)
    pools = {
        "train": _unit_pools(splits.train_images, splits.train_labels),
        "val": _unit_pools(splits.val_images, splits.val_labels),
        "test": _unit_pools(splits.test_images, splits.test_labels),
    }
    flag_config = {
        "command": "mnist",
        "rho_train": args.rho_train,
        "noise": args.noise,
        "objective": list(args.objective) if args.objective else None,
        "lr_grid": args.lr_grid,
        "seeds": args.seeds,
        "epochs": args.epochs,
        "steps_per_epoch": args.steps_per_epoch,
        "eval_n": args.eval_n,
        "seed": args.seed,
    }
    fingerprints = {
        name: _file_sha256(path) for name, path in mnist_paths(data_root).items()
    }
    work = lambda run_dir: _run_mnist(
        run_dir, preset, pools, args.steps_per_epoch, args.eval_n, args.workers
    )
    return _run_and_close(
        args,
        preset.name,
        flag_config,
        work,
        extra={"resolved": preset.to_dict(), "data_fingerprints": fingerprints},
    )


# ---------------------------------------------------------------------------
# counterexample search


def cmd_prop31(args):
    seed = 0 if args.seed is None else args.seed
    report = independence_counterexample_search(
        args.trials, rng_seed=seed, relaxed=args.relaxed
    )
    mode = "relaxed" if args.relaxed else "strict"
    print(
        f"{mode} search: {report.trials} trials, seed {seed}, "
        f"{report.n_correlated} candidate joints with dependent sources, "
        f"{len(report.counterexamples)} counterexample(s)"
    )
    for joint in report.counterexamples[:3]:
        i_ss = mutual_information(joint, ["s1"], ["s2"])
        i_zz = mutual_information(joint, ["z1"], ["z2"])
        print(f"  witness: I(s1;s2)={i_ss:.4f}, I(z1;z2)={i_zz:.4f}, lossless codes")
    return 1 if report.found else 0


# ---------------------------------------------------------------------------
# metrics


def _metric_eval_set(args, config):
    rho = args.rho
    rng = np.random.default_rng(0 if args.seed is None else args.seed)
    preset = get_preset(args.task)
    noise = preset.noise if args.noise is None else args.noise
    if args.task.startswith("toy"):
        if config.input_dim != preset.K:
            raise SchemaMismatch(
                f"checkpoint expects {config.input_dim}-dim inputs, "
                f"task {args.task} provides {preset.K}"
            )
        attrs = sample_correlated_attributes(preset.K, rho, args.n, rng)
        data = toy_observations(attrs, np.eye(preset.K), noise, rng)
        return data.x, attrs.s
    if config.input_dim != 32 * 64:
        raise SchemaMismatch(
            f"checkpoint expects {config.input_dim}-dim inputs, "
            f"task {args.task} provides {32 * 64}"
        )
    data_root = args.data_root or os.environ.get(DATA_ROOT_ENV) or "data"
    splits = load_mnist_splits(data_root)
    pools = _unit_pools(splits.test_images, splits.test_labels)
    batch = _pair_generator(pools)(rho, noise, args.n, rng)
    return batch.x, batch.labels


def cmd_metrics(args):
    if abs(args.rho) > 0 and not args.allow_correlated:
        print(
            "error: metrics on correlated data mix factor dependence into every "
            "score; pass --allow-correlated to proceed anyway",
            file=sys.stderr,
        )
        return 1
    path = Path(args.checkpoint)
    if not path.exists():
        print(f"error: checkpoint {path} does not exist", file=sys.stderr)
        return 1
    models, config = load_models(path)
    x, factors = _metric_eval_set(args, config)
    latents = encode(models, x)
    report = metric_report(
        latents,
        factors,
        bins=args.bins,
        descriptor={
            "task": args.task,
            "rho": args.rho,
            "checkpoint": str(path),
            "objective": DISPLAY.get(config.objective, config.objective),
        },
    )
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--out-dir", default="out", help="root for timestamped run directories"
    )
    common.add_argument(
        "--out", default=None, help="write to this exact directory (or file) instead"
    )
    common.add_argument("--workers", type=int, default=1, help="worker pool size")
    common.add_argument("--seed", type=int, default=None, help="single-seed override")
    common.add_argument(
        "--config",
        default=None,
        help="JSON file of flag defaults; explicit flags still win",
    )

    parser = argparse.ArgumentParser(
        prog="condis",
        description="Correlation-shift experiments with conditionally independent codes.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "analytic", parents=[common], help="closed-form linear-Gaussian table"
    )
    p.add_argument("--rho", type=float, default=0.8, help="training correlation")
    p.add_argument("--sigma2", type=float, default=0.1, help="noise variance")
    p.set_defaults(func=cmd_analytic)

    p = sub.add_parser(
        "toy", parents=[common], help="synthetic regression/classification sweep"
    )
    p.add_argument("--task", choices=("reg", "cls"), default="cls")
    p.add_argument("--K", type=int, default=2, help="number of attributes")
    p.add_argument("--rho-train", type=float, default=None)
    p.add_argument("--noise", type=float, default=None, help="noise std")
    p.add_argument(
        "--objective",
        nargs="+",
        default=None,
        metavar="OBJ",
        help="subset of: base base+mi base+cmi (default: preset's list)",
    )
    p.add_argument("--seeds", default=None, help="comma-separated seed list")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--label-fraction", type=float, default=None)
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser(
        "mnist", parents=[common], help="paired-digit correlation-shift sweep"
    )
    p.add_argument("--data-root", default=None, help=f"default ${DATA_ROOT_ENV} or ./data")
    p.add_argument("--rho-train", type=float, default=None)
    p.add_argument("--noise", type=float, default=None, help="occlusion level in [0, 1]")
    p.add_argument(
        "--objective", nargs="+", default=None, metavar="OBJ",
        help="subset of: base base+mi base+cmi",
    )
    p.add_argument("--lr-grid", default=None, help="comma-separated learning rates")
    p.add_argument("--seeds", default=None, help="comma-separated seed list")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--steps-per-epoch", type=int, default=500)
    p.add_argument("--eval-n", type=int, default=2000, help="pairs per evaluation cell")
    p.set_defaults(func=cmd_mnist)

    p = sub.add_parser(
        "prop31", parents=[common], help="independence counterexample search"
    )
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument(
        "--relaxed",
        action="store_true",
        help="drop the code-independence condition (witnesses are expected)",
    )
    p.set_defaults(func=cmd_prop31)

    p = sub.add_parser(
        "metrics", parents=[common], help="disentanglement metrics for a checkpoint"
    )
    p.add_argument("--checkpoint", required=True)
    p.add_argument(
        "--task",
        required=True,
        choices=("toy-cls-K2", "toy-cls-K4", "toy-cls-K10", "mnist-3-8"),
        help="evaluation data matching the checkpoint",
    )
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--allow-correlated", action="store_true")
    p.add_argument("--n", type=int, default=10_000, help="evaluation rows")
    p.add_argument("--noise", type=float, default=None, help="override task noise")
    p.add_argument("--data-root", default=None)
    p.set_defaults(func=cmd_metrics)

    return parser, sub


def _apply_config_file(parser, sub, argv):
    """First pass finds --config; its values become subparser defaults."""
    probe, _ = parser.parse_known_args(argv)
    if not getattr(probe, "config", None):
        return
    path = Path(probe.config)
    defaults = json.loads(path.read_text())
    if not isinstance(defaults, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    command = defaults.pop("command", probe.command)
    if command != probe.command:
        raise ValueError(
            f"config file {path} is for {command!r}, not {probe.command!r}"
        )
    subparser = sub.choices[probe.command]
    known = {
        action.dest for action in subparser._actions if action.dest != "help"
    }
    unknown = sorted(set(defaults) - known)
    if unknown:
        raise ValueError(f"config file {path} has unknown fields: {unknown}")
    subparser.set_defaults(**defaults)


def main(argv=None):
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, sub = build_parser()
    try:
        _apply_config_file(parser, sub, argv)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    args = parser.parse_args(argv)
    if args.command == "prop31" and args.trials < 1:
        parser.error("--trials must be at least 1")
    try:
        return args.func(args)
    except (
        ArityError,
        EmptyPool,
        FileNotFoundError,
        Infeasible,
        InfeasibleCorrelation,
        KeyError,
        MissingData,
        SchemaMismatch,
        SingularCovariance,
        SingularMixing,
        ValueError,
    ) as exc:
        message = exc.args[0] if exc.args else str(exc)
        print(f"error: {message}", file=sys.stderr)
        return 1


def run():
    raise SystemExit(main())


if __name__ == "__main__":
    run()
