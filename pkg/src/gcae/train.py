"""Adagrad, mini-batch training, cross-validated early stopping and the
repeated-run evaluation protocol."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import statistics
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .data import Example
from .model import ModelDims, ModelParams, ModelVariant, SparseRows, forward, loss_and_grad
from .numeric import NonFiniteError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    batch_size: int = 32
    max_epochs: int = 30
    widths: tuple[int, ...] = (3, 4, 5)
    filters_per_width: int = 100
    folds: int = 5
    runs: int = 5
    seed: int = 0
    adagrad_epsilon: float = 1e-6
    class_count: int = 4
    embedding_dim: int = 300
    term_width: int = 3
    term_filters: int = 100
    early_stopping: bool = True
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        problems = self.problems()
        if problems:
            raise ValueError("invalid TrainConfig: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        for name in (
            "learning_rate", "batch_size", "max_epochs", "filters_per_width", "runs",
            "adagrad_epsilon", "embedding_dim", "term_width", "term_filters", "workers",
        ):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be positive")
        if self.folds < 2:
            out.append("folds must be at least 2")
        if self.class_count < 2:
            out.append("class_count must be at least 2")
        if not self.widths or min(self.widths) < 1:
            out.append("widths must be a nonempty list of positive ints")
        if self.seed < 0:
            out.append("seed must be nonnegative")
        return out

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["widths"] = list(self.widths)
        return d


class ModelFactory:
    """Builds freshly initialised parameters for one variant and data shape."""

    def __init__(self, variant: ModelVariant, dims: ModelDims, embeddings: np.ndarray | None = None):
        self.variant, self.dims, self.embeddings = variant, dims, embeddings

    @classmethod
    def from_config(cls, variant, config: TrainConfig, vocab_size: int, n_aspects: int = 0, embeddings=None):
        dims = ModelDims(
            vocab_size=vocab_size,
            embed_dim=config.embedding_dim,
            n_classes=config.class_count,
            widths=config.widths,
            filters=config.filters_per_width,
            n_aspects=n_aspects,
            term_width=config.term_width,
            term_filters=config.term_filters,
        )
        return cls(variant, dims, embeddings)

    def __call__(self, seed: int) -> ModelParams:
        return ModelParams.init(self.variant, self.dims, seed, self.embeddings)


class AdagradState:
    def __init__(self, params: ModelParams):
        self.accum = {name: np.zeros_like(arr) for name, arr in params.arrays.items()}


def adagrad_step(params: ModelParams, grads: dict, state: AdagradState, lr: float, eps: float):
    """In place: ``accum += g**2; p -= lr * g / (sqrt(accum) + eps)``. Frozen rows stay put."""
    for name, g in grads.items():
        p, acc = params.arrays[name], state.accum[name]
        frozen = ModelParams.FROZEN_ROWS.get(name)
        if isinstance(g, SparseRows):
            rows, vals = g.rows, g.values
            if frozen is not None:
                keep = rows != frozen
                rows, vals = rows[keep], vals[keep]
            acc[rows] += vals * vals
            p[rows] -= lr * vals / (np.sqrt(acc[rows]) + eps)
        else:
            if frozen is not None:
                g = g.copy()
                g[frozen] = 0.0
            acc += g * g
            p -= lr * g / (np.sqrt(acc) + eps)
    return params, state


def _mean_grads(per_example: Sequence[dict]) -> dict:
    n = len(per_example)
    out = {}
    for name in per_example[0]:
        first = per_example[0][name]
        if isinstance(first, SparseRows):
            rows = np.concatenate([g[name].rows for g in per_example])
            vals = np.concatenate([g[name].values for g in per_example])
            uniq, inverse = np.unique(rows, return_inverse=True)
            total = np.zeros((len(uniq), first.shape[1]))
            np.add.at(total, inverse, vals)
            out[name] = SparseRows(uniq, total / n, first.shape)
        else:
            total = first.copy()
            for g in per_example[1:]:
                total += g[name]
            out[name] = total / n
    return out


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def batch_gradient(params: ModelParams, batch: Sequence[Example], workers: int = 1):
    """Mean loss and mean gradient over ``batch``.

    Per-example results are reduced in batch order, so ``workers > 1`` gives
    bit-identical output to the serial path.
    """
    results = _map(lambda ex: loss_and_grad(params, ex.token_ids, ex.aspect, ex.label), batch, workers)
    losses = [r[0] for r in results]
    return float(np.mean(losses)), _mean_grads([r[1] for r in results]), losses


def train_epochs(
    params: ModelParams,
    examples: Sequence[Example],
    config: TrainConfig,
    epoch_callback: Callable[[int, ModelParams], float | None] | None = None,
    n_epochs: int | None = None,
    state: AdagradState | None = None,
) -> list[dict]:
    """Train in place; returns ``[{"epoch", "loss", "val_acc", "seconds"}, ...]``.

    Batches come from a permutation drawn each epoch from an rng seeded with
    ``config.seed``; the last short batch is kept. ``epoch_callback(epoch,
    params)`` may return a validation accuracy to record.
    """
    n_epochs = config.max_epochs if n_epochs is None else n_epochs
    state = state or AdagradState(params)
    rng = np.random.default_rng(config.seed)
    history = []
    for epoch in range(1, n_epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(examples))
        losses = []
        for lo in range(0, len(order), config.batch_size):
            batch = [examples[i] for i in order[lo : lo + config.batch_size]]
            _, grads, batch_losses = batch_gradient(params, batch, config.workers)
            if not np.all(np.isfinite(batch_losses)):
                raise NonFiniteError(f"non-finite loss in epoch {epoch}, batch starting at {lo}")
            losses.extend(batch_losses)
            adagrad_step(params, grads, state, config.learning_rate, config.adagrad_epsilon)
        val = epoch_callback(epoch, params) if epoch_callback else None
        history.append(
            {"epoch": epoch, "loss": float(np.mean(losses)), "val_acc": val, "seconds": time.perf_counter() - start}
        )
    return history


def predictions(params: ModelParams, examples: Sequence[Example], workers: int = 1) -> np.ndarray:
    probs = _map(lambda ex: forward(params, ex.token_ids, ex.aspect)[0], examples, workers)
    # np.argmax breaks ties toward the lowest class index
    return np.array([int(np.argmax(p)) for p in probs], dtype=np.int64)


def evaluate(params: ModelParams, examples: Sequence[Example], workers: int = 1) -> float:
    if len(examples) == 0:
        raise ValueError("accuracy is undefined on an empty set")
    labels = np.array([ex.label for ex in examples])
    return float(np.mean(predictions(params, examples, workers) == labels))


def kfold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    if not 2 <= folds <= n:
        raise ValueError(f"need 2 <= folds <= {n}, got {folds}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


@dataclass
class CVResult:
    best_epoch: int
    mean_val_acc: list[float]
    fold_val_acc: list[list[float]]


def select_epoch_by_cv(examples: Sequence[Example], config: TrainConfig, make_params: Callable[[int], ModelParams]) -> CVResult:
    """Pick the epoch with the best mean validation accuracy over the folds
    (earliest on ties)."""
    curves = []
    for k, val_idx in enumerate(kfold_indices(len(examples), config.folds, config.seed)):
        val_set = set(val_idx.tolist())
        val = [examples[i] for i in val_idx]
        train = [ex for i, ex in enumerate(examples) if i not in val_set]
        if len({ex.label for ex in val}) < 2:
            logger.warning("fold %d validation set has a single class", k)
        params = make_params(config.seed)
        hist = train_epochs(params, train, config, lambda _e, p: evaluate(p, val, config.workers))
        curves.append([h["val_acc"] for h in hist])
    mean = np.mean(np.array(curves), axis=0)
    return CVResult(int(np.argmax(mean)) + 1, mean.tolist(), curves)


def version_string() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--tags", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}-{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _std(values: Sequence[float]) -> float:
    # exact arithmetic: identical runs give exactly 0.0
    return float(statistics.stdev(values)) if len(values) > 1 else 0.0


@dataclass
class RunReport:
    variant: dict
    config: dict
    accuracies: list[float]
    hard_accuracies: list[float]
    best_epochs: list[int]
    histories: list[list[dict]] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    version: str = ""

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return _std(self.accuracies)

    @property
    def hard_mean(self) -> float | None:
        return float(np.mean(self.hard_accuracies)) if self.hard_accuracies else None

    @property
    def hard_std(self) -> float | None:
        return _std(self.hard_accuracies) if self.hard_accuracies else None

    def to_json(self, include_timing: bool = True) -> dict:
        out = {
            "variant": self.variant,
            "config": self.config,
            "version": self.version,
            "runs": [
                {
                    "accuracy": acc,
                    "hard_accuracy": self.hard_accuracies[i] if self.hard_accuracies else None,
                    "best_epoch": self.best_epochs[i],
                }
                for i, acc in enumerate(self.accuracies)
            ],
            "mean": self.mean,
            "std": self.std,
            "hard_mean": self.hard_mean,
            "hard_std": self.hard_std,
            "train_loss": [[h["loss"] for h in hist] for hist in self.histories],
        }
        if include_timing:
            out["timing"] = {
                "seconds_to_convergence": self.seconds,
                "mean_seconds": float(np.mean(self.seconds)) if self.seconds else None,
            }
        return out

    def dumps(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_json(include_timing), indent=2, sort_keys=True) + "\n"


def run_protocol(
    variant: ModelVariant,
    datasets: dict[str, Sequence[Example]],
    config: TrainConfig,
    make_params: Callable[[int], ModelParams],
    on_run: Callable[[int, ModelParams, list[dict]], None] | None = None,
) -> RunReport:
    """Repeat ``config.runs`` times: reseed, choose the epoch count by CV on
    ``datasets["train"]``, retrain on all of it, score ``test`` and ``hard``."""
    train, test, hard = datasets["train"], datasets["test"], datasets.get("hard") or []
    report = RunReport(
        variant={"name": variant.name, "task": variant.task.value, "gate": variant.gate.value,
                 "baseline": variant.baseline.value},
        config=config.to_json(),
        accuracies=[], hard_accuracies=[], best_epochs=[],
        version=version_string(),
    )
    for run in range(config.runs):
        cfg = dataclasses.replace(config, seed=config.seed + run)
        best = select_epoch_by_cv(train, cfg, make_params).best_epoch if cfg.early_stopping else cfg.max_epochs
        start = time.perf_counter()
        params = make_params(cfg.seed)
        history = train_epochs(params, train, cfg, n_epochs=best)
        report.seconds.append(time.perf_counter() - start)
        report.best_epochs.append(best)
        report.histories.append(history)
        report.accuracies.append(evaluate(params, test, cfg.workers))
        if hard:
            report.hard_accuracies.append(evaluate(params, hard, cfg.workers))
        if on_run is not None:
            on_run(run, params, history)
    return report


def write_history_csv(path, history: Sequence[dict]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "val_acc"])
        for h in history:
            writer.writerow([h["epoch"], repr(h["loss"]), "" if h["val_acc"] is None else repr(h["val_acc"])])
    return path


def bench(
    variant: ModelVariant,
    datasets: dict[str, Sequence[Example]],
    config: TrainConfig,
    make_params: Callable[[int], ModelParams],
    load_seconds: float = 0.0,
    fanout_workers: int = 2,
) -> dict:
    """Wall-clock breakdown of one training run, plus serial vs fan-out evaluation."""
    total_start = time.perf_counter()
    best = select_epoch_by_cv(datasets["train"], config, make_params).best_epoch if config.early_stopping else config.max_epochs
    cv_seconds = time.perf_counter() - total_start
    params = make_params(config.seed)
    train_start = time.perf_counter()
    history = train_epochs(params, datasets["train"], config, n_epochs=best)
    train_seconds = time.perf_counter() - train_start
    total = time.perf_counter() - total_start

    test = datasets["test"]
    modes = {}
    preds = {}
    for mode, workers in (("serialized", 1), ("fanout", fanout_workers)):
        start = time.perf_counter()
        preds[mode] = predictions(params, test, workers)
        labels = np.array([ex.label for ex in test])
        modes[mode] = {
            "workers": workers,
            "eval_seconds": time.perf_counter() - start,
            "accuracy": float(np.mean(preds[mode] == labels)),
        }
    return {
        "variant": variant.name,
        "gate": variant.gate.value,
        "best_epoch": best,
        "load_seconds": load_seconds,
        "cv_seconds": cv_seconds,
        "epoch_seconds": [h["seconds"] for h in history],
        "train_seconds": train_seconds,
        "total_seconds": total,
        "modes": modes,
        "fanout_matches_serialized": bool(np.array_equal(preds["serialized"], preds["fanout"])),
        "version": version_string(),
    }
