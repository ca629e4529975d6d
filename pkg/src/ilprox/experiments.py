"""Config-driven batch experiments: training runs, stability sweeps, and
CSV emission.

Configs are declarative INI files (see ``configs/``).  Every run is fully
determined by (config, seed): data order, parameter init and evaluation
subsets all derive from explicit seeds, and floats are printed with 17
significant digits so repeated invocations produce byte-identical CSVs.
"""

from __future__ import annotations

import configparser
import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset, iterate, load_cifar10_binary, load_idx, teacher_student_dataset
from .learners import (
    ADAM_ALGOS,
    PROX_ALGOS,
    AdamState,
    AlgorithmKind,
    TrainConfig,
    train_batch,
)
from .nn import Activation, LossKind, feedforward, init_params


class ConfigError(Exception):
    """Invalid configuration or missing data (CLI exit code 2)."""


STABILITY_LRS = (0.01, 0.1, 1.0, 2.5, 10.0, 100.0)
DIVERGENCE_ACCURACY = 0.12  # below this a sweep cell counts as divergent


@dataclass
class ExperimentConfig:
    name: str
    algo: AlgorithmKind
    dims: list
    lr: float
    seeds: list
    iterations: int
    eval_every: int = 50
    batch_size: int = 1
    test_subset: int = 1000
    loss: LossKind = LossKind.SOFTMAX_CE
    activation: Activation = Activation.RELU
    epsilon: float = 0.0
    gamma_bot: float = 0.015
    gamma_top: float = 0.015
    beta: float = 1.0
    steps: int | None = None
    data: dict = field(default_factory=dict)
    sweep_lrs: list = field(default_factory=lambda: list(STABILITY_LRS))
    sweep_algos: list = field(default_factory=list)

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if len(self.dims) < 2 or any(int(d) < 1 for d in self.dims):
            raise ConfigError(f"invalid network dims {self.dims}")

    def train_config(self, algo: AlgorithmKind | None = None,
                     lr: float | None = None,
                     epsilon: float | None = None) -> TrainConfig:
        return TrainConfig(
            algo=algo if algo is not None else self.algo,
            lr=lr if lr is not None else self.lr,
            loss=self.loss,
            activation=self.activation,
            epsilon=epsilon if epsilon is not None else self.epsilon,
            gamma_bot=self.gamma_bot,
            gamma_top=self.gamma_top,
            beta=self.beta,
            steps=self.steps,
        )


def _parse_list(text: str, cast) -> list:
    return [cast(tok.strip()) for tok in text.split(",") if tok.strip()]


def load_config(path) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    cp.read(path)
    try:
        exp = cp["experiment"]
        net = cp["network"]
        algo = AlgorithmKind(exp["algo"].strip())
        loss = LossKind(exp.get("loss", "softmax_ce").strip())
        act = Activation(exp.get("activation", "relu").strip())
        inf = cp["inference"] if cp.has_section("inference") else {}
        sweep = cp["sweep"] if cp.has_section("sweep") else {}
        cfg = ExperimentConfig(
            name=exp.get("name", os.path.splitext(os.path.basename(path))[0]),
            algo=algo,
            dims=_parse_list(net["dims"], int),
            lr=float(exp["lr"]),
            seeds=_parse_list(exp.get("seeds", "0"), int),
            iterations=int(exp["iterations"]),
            eval_every=int(exp.get("eval_every", "50")),
            batch_size=int(exp.get("batch_size", "1")),
            test_subset=int(exp.get("test_subset", "1000")),
            loss=loss,
            activation=act,
            epsilon=float(inf.get("epsilon", "0.0")),
            gamma_bot=float(inf.get("gamma_bot", "0.015")),
            gamma_top=float(inf.get("gamma_top", "0.015")),
            beta=float(inf.get("beta", "1.0")),
            steps=int(inf["steps"]) if "steps" in inf else None,
            data=dict(cp["data"]) if cp.has_section("data") else {},
            sweep_lrs=_parse_list(sweep.get("lrs", ""), float) or list(STABILITY_LRS),
            sweep_algos=[AlgorithmKind(a) for a in _parse_list(sweep.get("algos", ""), str)],
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad config {path}: {exc}") from exc
    return cfg


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Train and test datasets per the config's [data] section.

    Raised errors (missing files, bad formats, arch mismatch) surface
    before any training starts.
    """
    data = cfg.data
    kind = data.get("kind", "synthetic")
    if kind == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if key not in data:
                raise ConfigError(f"[data] missing {key}")
            if not os.path.exists(data[key]):
                raise ConfigError(f"data file not found: {data[key]}")
        train = load_idx(data["train_images"], data["train_labels"])
        test = load_idx(data["test_images"], data["test_labels"])
    elif kind == "cifar10":
        paths = _parse_list(data.get("train_batches", ""), str)
        test_paths = _parse_list(data.get("test_batches", ""), str)
        if not paths or not test_paths:
            raise ConfigError("[data] cifar10 needs train_batches and test_batches")
        for p in paths + test_paths:
            if not os.path.exists(p):
                raise ConfigError(f"data file not found: {p}")
        train = load_cifar10_binary(paths)
        test = load_cifar10_binary(test_paths)
    elif kind == "synthetic":
        t_dims = _parse_list(data.get("teacher_dims", "10,5,5,5,5"), int)
        data_seed = int(data.get("data_seed", "0"))
        n_train = int(data.get("n_train", "2000"))
        n_test = int(data.get("n_test", "500"))
        train = teacher_student_dataset(data_seed, n_train, t_dims)
        test = teacher_student_dataset(data_seed + 1, n_test, t_dims)
    else:
        raise ConfigError(f"unknown data kind {kind!r}")
    if cfg.dims[0] != train.input_dim or cfg.dims[-1] != train.target_dim:
        raise ConfigError(
            f"network dims {cfg.dims} do not match data "
            f"({train.input_dim} -> {train.target_dim})")
    return train, test


@dataclass
class EvalRow:
    iteration: int
    train_loss: float
    test_accuracy: float
    update_norm: float


def _test_indices(test: Dataset, subset: int) -> np.ndarray:
    n = min(subset, len(test))
    return np.random.default_rng(0).permutation(len(test))[:n]


def evaluate_accuracy(params, act: Activation, test: Dataset,
                      idx: np.ndarray) -> float:
    correct = 0
    for i in idx:
        out = feedforward(params, act, test.inputs[i])[-1]
        if not np.all(np.isfinite(out)):
            return 0.0
        correct += int(np.argmax(out) == np.argmax(test.targets[i]))
    return correct / len(idx)


def run_single(cfg: ExperimentConfig, seed: int, train: Dataset, test: Dataset,
               tcfg: TrainConfig | None = None) -> list:
    """One training run; returns the evaluation rows.

    A run that produces non-finite parameters is marked diverged: training
    stops and the remaining evaluation rows report accuracy 0.
    """
    tcfg = tcfg if tcfg is not None else cfg.train_config()
    params = init_params(cfg.dims, seed=seed)
    adam = AdamState.for_params(params) if tcfg.algo in ADAM_ALGOS else None
    test_idx = _test_indices(test, cfg.test_subset)
    rows: list = []
    window_loss: list = []
    window_norm: list = []
    eval_points = set(range(cfg.eval_every, cfg.iterations + 1, cfg.eval_every))
    eval_points.add(cfg.iterations)
    iteration = 0
    epoch = 0
    diverged = False
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        while iteration < cfg.iterations and not diverged:
            for x, y in iterate(train, cfg.batch_size, seed=seed, epoch=epoch):
                iteration += 1
                params, rec = train_batch(tcfg.algo, params, adam, tcfg, x, y,
                                          iteration)
                if not (np.isfinite(rec.loss) and np.isfinite(rec.update_norm)):
                    diverged = True
                else:
                    window_loss.append(rec.loss)
                    window_norm.append(rec.update_norm)
                if iteration in eval_points or diverged:
                    acc = 0.0 if diverged else evaluate_accuracy(
                        params, cfg.activation, test, test_idx)
                    rows.append(EvalRow(
                        iteration=iteration,
                        train_loss=float(np.mean(window_loss)) if window_loss else float("nan"),
                        test_accuracy=acc,
                        update_norm=float(np.mean(window_norm)) if window_norm else float("nan"),
                    ))
                    window_loss, window_norm = [], []
                if iteration >= cfg.iterations or diverged:
                    break
            epoch += 1
    if diverged:
        # freeze the remaining schedule at zero accuracy
        done = {r.iteration for r in rows}
        for it in sorted(eval_points):
            if it not in done and it > iteration:
                rows.append(EvalRow(it, float("nan"), 0.0, float("nan")))
    return rows


def _fmt(v: float) -> str:
    return format(v, ".17g")


CSV_HEADER = ["iteration", "train_loss", "test_accuracy", "update_norm"]
BEST_ROW_ITERATION = -1  # sentinel: summary row carrying the best test accuracy


def write_rows(path, rows: list) -> None:
    """Evaluation series plus a final best-test-accuracy summary row
    (iteration = -1)."""
    best = max((r.test_accuracy for r in rows), default=float("nan"))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in rows:
            writer.writerow([r.iteration, _fmt(r.train_loss),
                             _fmt(r.test_accuracy), _fmt(r.update_norm)])
        writer.writerow([BEST_ROW_ITERATION, _fmt(float("nan")), _fmt(best),
                         _fmt(float("nan"))])


def average_rows(per_seed: list) -> list:
    """Seed-average the evaluation series (aligned on iteration)."""
    iters = [r.iteration for r in per_seed[0]]
    for rows in per_seed[1:]:
        if [r.iteration for r in rows] != iters:
            raise ValueError("evaluation schedules differ across seeds")
    out = []
    for i, it in enumerate(iters):
        out.append(EvalRow(
            iteration=it,
            train_loss=float(np.mean([rows[i].train_loss for rows in per_seed])),
            test_accuracy=float(np.mean([rows[i].test_accuracy for rows in per_seed])),
            update_norm=float(np.mean([rows[i].update_norm for rows in per_seed])),
        ))
    return out


def run_experiment(cfg: ExperimentConfig, out_dir, threads: int = 1) -> dict:
    """Run every seed, write per-seed and seed-averaged CSVs, and return
    a summary with the best seed-averaged test accuracy."""
    train, test = load_data(cfg)
    os.makedirs(out_dir, exist_ok=True)
    per_seed = _run_seeds(cfg, cfg.train_config(), train, test, threads)
    stem = f"{cfg.name}_{cfg.algo.value}_lr{cfg.lr:g}"
    for seed, rows in zip(cfg.seeds, per_seed):
        write_rows(os.path.join(out_dir, f"{stem}_seed{seed}.csv"), rows)
    avg = average_rows(per_seed)
    write_rows(os.path.join(out_dir, f"{stem}_avg.csv"), avg)
    final_acc = [rows[-1].test_accuracy for rows in per_seed]
    summary = {
        "name": cfg.name,
        "algo": cfg.algo.value,
        "lr": cfg.lr,
        "best_test_accuracy": max(r.test_accuracy for r in avg),
        "final_test_accuracy_mean": float(np.mean(final_acc)),
        "final_test_accuracy_std": float(np.std(final_acc)),
        "update_norm_mean": float(np.nanmean(
            [r.update_norm for rows in per_seed for r in rows])),
    }
    return summary


def _run_seeds(cfg, tcfg, train, test, threads: int) -> list:
    if threads <= 1 or len(cfg.seeds) == 1:
        return [run_single(cfg, s, train, test, tcfg) for s in cfg.seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(run_single, cfg, s, train, test, tcfg)
                   for s in cfg.seeds]
        return [f.result() for f in futures]  # seed order, not completion order


def stability_sweep(cfg: ExperimentConfig, out_dir, lrs=None, algos=None,
                    threads: int = 1) -> list:
    """Grid of (algo x learning rate) final accuracies, mean +- std over
    seeds.  Normalized-rule algorithms run with epsilon = 0; cells whose
    mean end-of-training accuracy falls below 12% are marked divergent.
    """
    train, test = load_data(cfg)
    os.makedirs(out_dir, exist_ok=True)
    lrs = list(lrs) if lrs is not None else cfg.sweep_lrs
    algos = list(algos) if algos is not None else (cfg.sweep_algos or [cfg.algo])
    results = []
    for algo in algos:
        for lr in lrs:
            eps = 0.0 if algo in PROX_ALGOS else cfg.epsilon
            tcfg = cfg.train_config(algo=algo, lr=lr, epsilon=eps)
            per_seed = _run_seeds(cfg, tcfg, train, test, threads)
            finals = [rows[-1].test_accuracy for rows in per_seed]
            mean = float(np.mean(finals))
            results.append({
                "algo": algo.value,
                "lr": lr,
                "final_accuracy_mean": mean,
                "final_accuracy_std": float(np.std(finals)),
                "divergent": mean < DIVERGENCE_ACCURACY,
            })
    path = os.path.join(out_dir, f"{cfg.name}_stability.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["algo", "lr", "final_accuracy_mean",
                         "final_accuracy_std", "divergent"])
        for r in results:
            writer.writerow([r["algo"], _fmt(r["lr"]),
                             _fmt(r["final_accuracy_mean"]),
                             _fmt(r["final_accuracy_std"]),
                             int(r["divergent"])])
    return results


def _read_csv(path) -> tuple[list, list]:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in row] for row in reader if row]
    except (OSError, StopIteration, ValueError) as exc:
        raise ConfigError(f"malformed CSV {path}: {exc}") from exc
    if header != CSV_HEADER or any(len(r) != len(header) for r in rows):
        raise ConfigError(f"malformed CSV {path}: unexpected schema")
    return header, rows


def emit_plot_data(csv_in, kind: str, out_path, stride: int = 1) -> None:
    """Produce plot-ready CSV.

    kind "aggregate": mean/std across several per-seed series (best-rows
    dropped); kind "downsample": keep every stride-th row of one series.
    """
    paths = [csv_in] if isinstance(csv_in, (str, os.PathLike)) else list(csv_in)
    series = []
    for p in paths:
        _, rows = _read_csv(p)
        series.append([r for r in rows if r[0] != BEST_ROW_ITERATION])
    if kind == "downsample":
        if len(series) != 1:
            raise ConfigError("downsample expects exactly one input CSV")
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for row in series[0][::max(stride, 1)]:
                writer.writerow([int(row[0])] + [_fmt(v) for v in row[1:]])
        return
    if kind != "aggregate":
        raise ConfigError(f"unknown plotdata kind {kind!r}")
    iters = [r[0] for r in series[0]]
    for s in series[1:]:
        if [r[0] for r in s] != iters:
            raise ConfigError("aggregate inputs have different iteration grids")
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["iteration"]
        for col in CSV_HEADER[1:]:
            header += [f"{col}_mean", f"{col}_std"]
        writer.writerow(header)
        data = np.array(series)  # (n_series, n_rows, n_cols)
        for i, it in enumerate(iters[::max(stride, 1)]):
            ridx = i * max(stride, 1)
            row = [int(it)]
            for c in range(1, len(CSV_HEADER)):
                vals = data[:, ridx, c]
                row += [_fmt(float(vals.mean())), _fmt(float(vals.std()))]
            writer.writerow(row)
