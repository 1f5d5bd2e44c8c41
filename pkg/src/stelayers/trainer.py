"""Minibatch training with validation holdout and best-epoch restore, experiments, and branch analysis."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .checkpoint import Checkpoint
from .core import SHUFFLE_STREAM, RngBank
from .data import Dataset, split
from .layers import STELayer, _branch_outputs
from .network import ModelSpec, Network
from .objective import softmax_xent, top1_accuracy
from .optimizer import OptState, TrainConfig, lr_at, nesterov_step

log = logging.getLogger(__name__)


class NumericAbort(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch: int, detail: str = ""):
        self.epoch, self.batch = epoch, batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}{': ' + detail if detail else ''}")


@dataclass
class RunResult:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    lr: List[float] = field(default_factory=list)
    test_loss: float = float("nan")
    test_acc: float = float("nan")
    best_epoch: int = -1
    wall_time: float = 0.0

    def history_rows(self, first_epoch: int = 0):
        for i, (tl, vl, lr) in enumerate(zip(self.train_loss, self.val_loss, self.lr)):
            yield first_epoch + i, tl, vl, lr


@dataclass
class TrainOutcome:
    model: Network
    result: RunResult
    best: Optional[Checkpoint]
    last: Optional[Checkpoint]


def _snapshot(net: Network, state: OptState, bank: RngBank, epoch: int, val_loss: float) -> Checkpoint:
    return Checkpoint(net.copy(), OptState([v.copy() for v in state.velocity], state.n),
                      epoch, val_loss, bank.state(), bank.seed)


def _check_data(net: Network, ds: Dataset, what: str) -> None:
    if ds.n_features != net.input_dim:
        raise ValueError(f"{what} data has {ds.n_features} features, model expects {net.input_dim}")
    if len(ds) and ds.y.max() >= net.n_classes:
        raise ValueError(f"{what} data has label {ds.y.max()} but the model has {net.n_classes} classes")


def train(spec: ModelSpec, cfg: TrainConfig, data: Dataset, test: Optional[Dataset] = None,
          resume: Optional[Checkpoint] = None) -> TrainOutcome:
    """Train a network built from ``spec`` on ``data``.

    ``cfg.val_fraction`` of ``data`` is held out (split seeded by ``cfg.seed``).
    After every epoch the held-out loss is computed in eval mode; the model
    returned is the one from the epoch with the lowest such loss (earliest on
    ties). ``resume`` continues from a checkpoint taken at the end of an epoch.
    """
    t0 = time.perf_counter()
    fit, val = split(data, cfg.val_fraction, cfg.seed)
    if len(val) == 0:
        raise ValueError(f"val_fraction {cfg.val_fraction} leaves no validation examples out of {len(data)}")
    bank = RngBank(cfg.seed)
    if resume is None:
        net = Network.build(spec, cfg.seed)
        state = OptState.zeros_like(net.params())
        start, best, best_loss = 0, None, np.inf
    else:
        net = resume.network.copy()
        state = OptState([v.copy() for v in resume.opt.velocity], resume.opt.n)
        bank.set_state(resume.rng_state)
        start, best, best_loss = resume.epoch + 1, resume, resume.val_loss
    _check_data(net, data, "training")
    params = net.params()
    result = RunResult()
    last = resume
    n = len(fit)
    for epoch in range(start, cfg.epochs):
        order = bank.get(SHUFFLE_STREAM).permutation(n)
        total, lr = 0.0, cfg.lr
        for b, s in enumerate(range(0, n, cfg.batch_size)):
            idx = order[s:s + cfg.batch_size]
            Xb, yb = fit.X[idx], fit.y[idx]
            masks = net.sample_masks(len(idx), bank)
            if cfg.momentum:
                saved = [p.copy() for p in params]
                for p, v in zip(params, state.velocity):
                    p += cfg.momentum * v
            with np.errstate(invalid="ignore", over="ignore"):
                logits, caches = net.forward_train(Xb, masks)
                losses, dlogits = softmax_xent(logits, yb)
            batch_loss = float(losses.mean())
            if not np.isfinite(batch_loss):
                bad = np.flatnonzero(~np.isfinite(Xb).all(axis=1))
                detail = (f"non-finite features in batch rows {bad.tolist()}" if bad.size
                          else "inputs are finite, parameters or activations diverged")
                raise NumericAbort(epoch, b, detail)
            grads = net.backward(caches, dlogits / len(idx))
            if cfg.momentum:
                for p, keep in zip(params, saved):
                    p[...] = keep
            lr = lr_at(cfg, state.n)
            nesterov_step(params, grads, state, lr, cfg.momentum)
            total += batch_loss * len(idx)
        val_loss, _ = evaluate(net, val)
        result.train_loss.append(total / n)
        result.val_loss.append(val_loss)
        result.lr.append(lr)
        log.debug("epoch %d train %.4f val %.4f lr %.3g", epoch, total / n, val_loss, lr)
        last = _snapshot(net, state, bank, epoch, val_loss)
        if val_loss < best_loss:
            best_loss, best = val_loss, last
    if best is not None:
        net = best.network.copy()
        result.best_epoch = best.epoch
    if test is not None:
        result.test_loss, result.test_acc = evaluate(net, test)
    result.wall_time = time.perf_counter() - t0
    return TrainOutcome(net, result, best, last)


def evaluate(model: Network, data: Dataset, batch_size: int = 4096):
    """Eval-mode mean cross-entropy and top-1 accuracy (percent) over ``data``."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    _check_data(model, data, "evaluation")
    logits = np.concatenate([model.forward_eval(data.X[s:s + batch_size])
                             for s in range(0, len(data), batch_size)])
    losses, _ = softmax_xent(logits, data.y)
    return float(losses.mean()), top1_accuracy(logits, data.y)


# --- experiments -------------------------------------------------------------


@dataclass
class ExperimentRow:
    dataset: str
    config: str
    losses: List[float]
    accs: List[float]

    @property
    def n(self) -> int:
        return len(self.losses)

    @staticmethod
    def _stats(v):
        v = np.asarray(v, dtype=np.float64)
        std = float(v.std(ddof=1)) if v.size > 1 else 0.0
        return float(v.mean()), std

    @property
    def loss(self):
        return self._stats(self.losses)

    @property
    def acc(self):
        return self._stats(self.accs)


@dataclass
class SummaryRow:
    """Mean and sample standard deviation of test loss/accuracy for one (dataset, config) cell."""

    dataset: str
    config: str
    n: int
    loss_mean: float
    loss_std: float
    acc_mean: float
    acc_std: float

    @classmethod
    def from_runs(cls, row: ExperimentRow) -> "SummaryRow":
        return cls(row.dataset, row.config, row.n, *row.loss, *row.acc)


CSV_COLUMNS = ("dataset", "config", "n", "loss_mean", "loss_std", "acc_mean", "acc_std", "flag")


def _num(x: float) -> str:
    return f"{x:.6g}"


def table_csv(rows: Sequence[SummaryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([r.dataset, r.config, r.n, _num(r.loss_mean), _num(r.loss_std),
                    _num(r.acc_mean), _num(r.acc_std), "n=1" if r.n == 1 else ""])
    return buf.getvalue()


def table_text(rows: Sequence[SummaryRow]) -> str:
    """Aligned table: one line per dataset, a Loss/Accuracy column pair per configuration."""
    configs = list(dict.fromkeys(r.config for r in rows))
    datasets = list(dict.fromkeys(r.dataset for r in rows))
    cell = {(r.dataset, r.config): r for r in rows}
    header = ["Dataset"] + [f"{c} {m}" for c in configs for m in ("Loss", "Accuracy")]
    lines = []
    for d in datasets:
        line = [d]
        for c in configs:
            r = cell.get((d, c))
            if r is None:
                line += ["-", "-"]
                continue
            flag = " (n=1)" if r.n == 1 else ""
            line += [f"{r.loss_mean:.3f} ± {r.loss_std:.3f}{flag}", f"{r.acc_mean:.1f} ± {r.acc_std:.2f}{flag}"]
        lines.append(line)
    widths = [max(len(row[i]) for row in [header] + lines) for i in range(len(header))]
    fmt = lambda row: " | ".join(s.ljust(w) for s, w in zip(row, widths)).rstrip()
    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([fmt(header), sep] + [fmt(l) for l in lines]) + "\n"


@dataclass
class ExperimentTable:
    runs: List[ExperimentRow]
    results: Dict[tuple, RunResult] = field(default_factory=dict)
    models: Dict[tuple, Network] = field(default_factory=dict)  # best-epoch model per (config, seed)

    @property
    def summary(self) -> List[SummaryRow]:
        return [SummaryRow.from_runs(r) for r in self.runs]

    def to_csv(self) -> str:
        return table_csv(self.summary)

    def to_text(self) -> str:
        return table_text(self.summary)

    def row(self, config: str, dataset: Optional[str] = None) -> ExperimentRow:
        for r in self.runs:
            if r.config == config and (dataset is None or r.dataset == dataset):
                return r
        raise KeyError(config)


def run_experiment(specs: Dict[str, ModelSpec], cfg: TrainConfig, data: Dataset, test: Dataset,
                   seeds: Sequence[int], dataset_name: str = "data") -> ExperimentTable:
    """Train every named configuration once per seed and collect test loss/accuracy."""
    if not seeds:
        raise ValueError("run_experiment needs at least one seed")
    runs, results, models = [], {}, {}
    for name, spec in specs.items():
        row = ExperimentRow(dataset_name, name, [], [])
        for seed in seeds:
            run_cfg = TrainConfig(cfg.lr, cfg.decay, cfg.momentum, cfg.batch_size, cfg.epochs,
                                  cfg.val_fraction, seed)
            out = train(spec, run_cfg, data, test)
            row.losses.append(out.result.test_loss)
            row.accs.append(out.result.test_acc)
            results[(name, seed)] = out.result
            models[(name, seed)] = out.model
            log.info("%s seed %d: test loss %.4f acc %.2f (best epoch %d, %.1fs)", name, seed,
                     out.result.test_loss, out.result.test_acc, out.result.best_epoch, out.result.wall_time)
        runs.append(row)
    return ExperimentTable(runs, results, models)


# --- branch analysis ---------------------------------------------------------


@dataclass
class ActivationAnalysis:
    branch: np.ndarray  # (n_inputs, A, N) noise-free branch outputs before averaging
    corr: np.ndarray  # (A, A) Pearson correlation over the N units, averaged over inputs

    @property
    def mean_offdiag(self) -> float:
        A = self.corr.shape[0]
        if A < 2:
            return float("nan")
        return float(self.corr[~np.eye(A, dtype=bool)].mean())

    @property
    def max_offdiag(self) -> float:
        A = self.corr.shape[0]
        return float(self.corr[~np.eye(A, dtype=bool)].max()) if A > 1 else float("nan")


def branch_correlation(Z: np.ndarray) -> np.ndarray:
    """Mean over inputs of the A x A correlation between branch activation vectors; ``Z`` is ``(n, A, N)``."""
    Zc = Z - Z.mean(axis=2, keepdims=True)
    norms = np.sqrt(np.einsum("kan,kan->ka", Zc, Zc))
    cov = np.einsum("kan,kbn->kab", Zc, Zc)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = cov / (norms[:, :, None] * norms[:, None, :])
    return corr.mean(axis=0)


def analyze_activations(model: Network, inputs: np.ndarray, layer_index: int) -> ActivationAnalysis:
    """Per-branch ``W_i x + b_i`` of one STE layer (no noise, no averaging) and their correlations."""
    if not 0 <= layer_index < len(model.layers) or not isinstance(model.layers[layer_index], STELayer):
        raise ValueError(f"layer {layer_index} is not an STE layer")
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    h = model.forward_eval(inputs, upto=layer_index)
    Z = _branch_outputs(model.layers[layer_index], h)
    return ActivationAnalysis(Z, branch_correlation(Z))
