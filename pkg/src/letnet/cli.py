"""Command-line harness: generate data, train, evaluate, sweep and export.

Exit codes: 0 on success, 2 for configuration problems, 3 for numerical
aborts during training or inversion.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ExperimentConfig, load_config
from .errors import ConfigError, DatasetCorruptError, DegenerateSignalError, DatasetFormatError, NotAttainedError, TrainingError
from .hfo import TrainResult, train, write_training_log
from .let import export_activation_csv
from .metrics import layerwise_curves, recon_snr_db, summarize_trials, write_curves_csv
from .nets import Arch, forward, init_params, load_checkpoint, predict, save_checkpoint
from .sensing import build_sensing_model, generate_dataset, load_dataset, save_dataset
from .solvers import SolverConfig, cross_validate_lambda, fista, ista, select_best

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def cell_seeds(master: int, trial: int, i_rho: int, i_snr: int) -> tuple[int, int]:
    """Sensing-matrix seed and data seed of one (trial, rho, snr) cell."""
    ss = np.random.SeedSequence(master, spawn_key=(trial, i_rho, i_snr))
    a, d = ss.generate_state(2, dtype=np.uint64)
    return int(a), int(d)


def cell_name(trial: int, rho: float, snr: float) -> str:
    return f"t{trial:02d}_rho{rho:g}_snr{snr:g}"


def _write_rows(path: Path, header: dict, columns: Sequence[str], rows: Sequence[Sequence[object]]) -> None:
    with open(path, "w", newline="") as fh:
        for key, val in header.items():
            fh.write(f"# {key}={val}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def cmd_gen(cfg: ExperimentConfig, out: Path) -> list[Path]:
    """One dataset file per (trial, rho, snr) cell."""
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in range(cfg.trials):
        for i, rho in enumerate(cfg.rho):
            for j, snr in enumerate(cfg.snr_db):
                a_seed, d_seed = cell_seeds(cfg.seed, t, i, j)
                model = build_sensing_model(cfg.m, cfg.n, a_seed)
                ds = generate_dataset(model, rho, snr, (cfg.n_train, cfg.n_val, cfg.n_test), d_seed)
                path = out / f"{cell_name(t, rho, snr)}.letd"
                save_dataset(ds, path)
                paths.append(path)
    return paths


def _fit_candidates(cfg: ExperimentConfig, model, train_split, val_split) -> tuple[float, TrainResult, list]:
    """Train one network per lambda candidate and keep the best on validation."""
    score_split = val_split if len(val_split) else train_split
    results: dict[float, TrainResult] = {}
    aborted: list[str] = []

    def score(lam: float) -> float:
        p0 = init_params(cfg.arch, cfg.L, cfg.K, lam * model.eta)
        try:
            res = train(
                p0, model, train_split, val_split, cfg.epochs, cfg.eps_cg, cfg.gamma0, cfg.cg_cap, cfg.literal_lm
            )
        except TrainingError as exc:
            aborted.append(str(exc))
            return -math.inf
        results[lam] = res
        xh = predict(res.params, model, score_split.b)
        return float(np.mean(recon_snr_db(xh, score_split.x)))

    lam, scores = select_best(cfg.net_grid, score)
    if lam not in results:
        raise TrainingError("; ".join(aborted) or "every candidate aborted")
    return lam, results[lam], list(zip(cfg.net_grid, scores))


def cmd_train(cfg: ExperimentConfig, dataset: Path, out: Path) -> tuple[Path, Path]:
    """Lambda selection plus Hessian-free training; writes checkpoint and log."""
    ds = _load_dataset(dataset)
    if ds.model.n != cfg.n or ds.model.m != cfg.m:
        cfg = ExperimentConfig(**{**cfg.to_dict(), "n": ds.model.n, "m": ds.model.m})
    out.mkdir(parents=True, exist_ok=True)
    train_split, val_split = ds.split("train"), ds.split("validation")
    if len(train_split) == 0:
        raise ConfigError("dataset has no training examples")
    lam, res, cv = _fit_candidates(cfg, ds.model, train_split, val_split)
    stem = f"{dataset.stem}_{cfg.arch}"
    ckpt = out / f"{stem}.letc"
    save_checkpoint(ckpt, res.params, lam, ds.model.n)
    header = cfg.header(dataset=dataset.name, lam=repr(lam))
    log = out / f"{stem}_log.csv"
    write_training_log(log, res.history, header)
    _write_rows(out / f"{stem}_cv.csv", header, ("lambda", "val_snr_db"), cv)
    return ckpt, log


def _load_dataset(path: Path):
    try:
        return load_dataset(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"dataset not found: {path}") from exc


def cmd_eval(cfg: ExperimentConfig, checkpoint: Path, dataset: Path, out: Path, timing: bool = False) -> Path:
    """Mean and spread of test SNR for ISTA, FISTA and the network."""
    ds = _load_dataset(dataset)
    try:
        ck = load_checkpoint(checkpoint)
    except FileNotFoundError as exc:
        raise ConfigError(f"checkpoint not found: {checkpoint}") from exc
    model = ds.model
    if ck.n and ck.n != model.n:
        raise ConfigError(f"checkpoint was trained for n={ck.n}, dataset has n={model.n}")
    test = ds.split("test")
    if len(test) == 0:
        raise ConfigError("dataset has no test examples")
    train_split = ds.split("train")
    cv_split = train_split if len(train_split) else test
    lam_opt = cross_validate_lambda(model, cv_split, cfg.ista_grid, ista, cfg.solver_iters)
    scfg = SolverConfig(lam_opt, cfg.solver_iters)
    params = ck.params
    init = init_params(params.arch, params.L, params.K, 3.0 * params.tau)
    rows = []
    results = {
        "ista": (lam_opt, ista(model, test.b, scfg, False)),
        "fista": (lam_opt, fista(model, test.b, scfg, False)),
        "network": (ck.lam, predict(params, model, test.b)),
        "network-init": (ck.lam, predict(init, model, test.b)),
    }
    for name, (lam, xh) in results.items():
        snr = recon_snr_db(xh, test.x)
        rows.append((name, float(lam), float(np.mean(snr)), float(np.std(snr)), len(test)))
    stem = f"{dataset.stem}_{params.arch.value}"
    out.mkdir(parents=True, exist_ok=True)
    header = cfg.header(dataset=dataset.name, checkpoint=checkpoint.name)
    report = out / f"{stem}_report.csv"
    _write_rows(report, header, ("method", "lambda", "mean_snr_db", "std_snr_db", "n_test"), rows)

    q = min(cfg.curve_example, len(test) - 1)
    net_hist = forward(params, model, test.b[q]).x[1:]
    fista_hist = fista(model, test.b[q], scfg)[1:]
    for name, hist in (("network", net_hist), ("fista", fista_hist)):
        snr, srm_vals = layerwise_curves(hist, test.x[q])
        write_curves_csv(out / f"{stem}_curves_{name}.csv", snr, srm_vals, {**header, "example": q})
    if timing:
        _write_timing(out / f"{stem}_timing.csv", params, model, test.b, scfg)
    return report


def _write_timing(path: Path, params, model, b, scfg: SolverConfig, repeats: int = 5) -> None:
    """Per-layer network cost relative to one ISTA iteration (not deterministic)."""

    def best(fn) -> float:
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        return min(times)

    per_iter = best(lambda: ista(model, b, scfg, False)) / max(scfg.max_iters, 1)
    per_layer = best(lambda: predict(params, model, b)) / params.L
    _write_rows(path, {}, ("method", "relative_time_per_layer"), [("ista", 1.0), (params.arch.value, per_layer / per_iter)])


def _run_cell(args: tuple) -> tuple[str, float, float, dict[str, float]]:
    cfg_dict, t, i, j, out = args
    cfg = ExperimentConfig(**cfg_dict)
    rho, snr = cfg.rho[i], cfg.snr_db[j]
    name = cell_name(t, rho, snr)
    a_seed, d_seed = cell_seeds(cfg.seed, t, i, j)
    model = build_sensing_model(cfg.m, cfg.n, a_seed)
    ds = generate_dataset(model, rho, snr, (cfg.n_train, cfg.n_val, cfg.n_test), d_seed)
    data = Path(out) / "data" / f"{name}.letd"
    data.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, data)
    ckpt, _ = cmd_train(cfg, data, Path(out) / "models")
    report = cmd_eval(cfg, ckpt, data, Path(out) / "reports")
    means = {}
    with open(report) as fh:
        for row in csv.DictReader(line for line in fh if not line.startswith("#")):
            means[row["method"]] = float(row["mean_snr_db"])
    return name, rho, snr, means


def cmd_sweep(cfg: ExperimentConfig, out: Path) -> Path:
    """Every (trial, rho, snr) cell end to end, then a per-(rho, snr) summary."""
    out.mkdir(parents=True, exist_ok=True)
    jobs = [
        (cfg.to_dict(), t, i, j, str(out))
        for t in range(cfg.trials)
        for i in range(len(cfg.rho))
        for j in range(len(cfg.snr_db))
    ]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(job) for job in jobs]
    rows = []
    for rho in cfg.rho:
        for snr in cfg.snr_db:
            cell = [r[3] for r in results if r[1] == rho and r[2] == snr]
            for method in cell[0]:
                mean, std = summarize_trials([c[method] for c in cell])
                rows.append((float(rho), float(snr), method, mean, std, len(cell)))
    summary = out / "summary.csv"
    _write_rows(summary, cfg.header(), ("rho", "snr_db", "method", "mean_snr_db", "std_over_trials", "trials"), rows)
    return summary


def parse_layers(text: str | None, L: int) -> list[int]:
    """``"8-14"`` or ``"3"`` to a list of 1-based layers; None means all."""
    if text is None:
        return list(range(1, L + 1))
    try:
        lo, _, hi = text.partition("-")
        first, last = int(lo), int(hi or lo)
    except ValueError:
        raise ConfigError(f"bad layer range {text!r}") from None
    if not 1 <= first <= last <= L:
        raise ConfigError(f"layer range {text!r} outside 1..{L}")
    return list(range(first, last + 1))


def parse_grid(text: str | None) -> np.ndarray | None:
    if text is None:
        return None
    try:
        lo, hi, count = text.split(",")
        grid = np.linspace(float(lo), float(hi), int(count))
    except ValueError:
        raise ConfigError(f"bad grid {text!r}; expected lo,hi,count") from None
    return grid


def cmd_export_activations(checkpoint: Path, layers: str | None, out: Path, grid: str | None = None) -> list[Path]:
    """``u, psi, psi_prime, g`` CSV per requested layer."""
    try:
        params = load_checkpoint(checkpoint).params
    except FileNotFoundError as exc:
        raise ConfigError(f"checkpoint not found: {checkpoint}") from exc
    chosen = parse_layers(layers, params.L)
    u = parse_grid(grid)
    out.mkdir(parents=True, exist_ok=True)
    nu = 3.0 * params.tau
    paths = []
    for t in chosen:
        path = out / f"{checkpoint.stem}_layer{t:03d}.csv"
        export_activation_csv(path, params.activation(t), nu, u)
        paths.append(path)
    return paths


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat JSON config; {} means defaults")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--arch", choices=[a.value for a in Arch])
    common.add_argument("--scale", choices=["paper", "desk"])

    parser = argparse.ArgumentParser(prog="letnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    sub.add_parser("gen", parents=[common], help="generate datasets")
    p = sub.add_parser("train", parents=[common], help="train a network on a dataset")
    p.add_argument("--dataset", type=Path, required=True)
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--timing", action="store_true", help="also write relative run-time ratios")
    sub.add_parser("sweep", parents=[common], help="gen, train and eval every cell")
    p = sub.add_parser("export-activations", parents=[common], help="dump learned activations")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--layers", help="layer range such as 8-14")
    p.add_argument("--grid", help="sampling grid lo,hi,count (default -3,3,2001)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.scale, {"seed": args.seed, "arch": args.arch})
        if args.verb == "gen":
            for path in cmd_gen(cfg, args.out):
                print(path)
        elif args.verb == "train":
            for path in cmd_train(cfg, args.dataset, args.out):
                print(path)
        elif args.verb == "eval":
            print(cmd_eval(cfg, args.checkpoint, args.dataset, args.out, args.timing))
        elif args.verb == "sweep":
            print(cmd_sweep(cfg, args.out))
        else:
            for path in cmd_export_activations(args.checkpoint, args.layers, args.out, args.grid):
                print(path)
    except (ConfigError, DatasetFormatError, DatasetCorruptError, DegenerateSignalError, OSError) as exc:
        print(f"letnet: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, NotAttainedError, FloatingPointError) as exc:
        print(f"letnet: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
