"""Command-line entry point.

Every command reads a flat ``key = value`` config file (``#`` starts a
comment). Exit codes: 0 success, 1 config error, 2 data or checkpoint error,
3 numeric abort during training, 4 collapse verification failed.

Config keys
-----------
model:    input_dim, hidden (comma list), n_classes, config, A, p, p_out
training: lr, lr.<config>, decay, momentum, batch_size, epochs, val_fraction, seed
data:     format (idx | csv), train_images, train_labels, test_images, test_labels,
          train_csv, test_csv, label_column, header, normalize, dataset_name
experiment: configs (comma list)
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .collapse import collapse_network, count_parameters, format_millions, verify_network_collapse
from .data import DataError, Dataset, load_csv, load_idx, normalize
from .network import CONFIG_NAMES, ModelSpec, mlp_spec
from .optimizer import TrainConfig
from .trainer import ExperimentTable, NumericAbort, analyze_activations, evaluate, run_experiment, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    pass


_MODEL_KEYS = {"input_dim", "hidden", "n_classes", "config", "A", "p", "p_out"}
_TRAIN_KEYS = {"lr", "decay", "momentum", "batch_size", "epochs", "val_fraction", "seed"}
_DATA_KEYS = {"format", "train_images", "train_labels", "test_images", "test_labels", "train_csv",
              "test_csv", "label_column", "header", "normalize", "dataset_name"}
_KNOWN = _MODEL_KEYS | _TRAIN_KEYS | _DATA_KEYS | {"configs"} | {f"lr.{c}" for c in CONFIG_NAMES}


@dataclass
class Config:
    values: Dict[str, str]
    base: Path

    @classmethod
    def read(cls, path) -> "Config":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            if key not in _KNOWN:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate config key {key!r}")
            values[key] = value
        return cls(values, path.parent)

    def get(self, key: str, default=None, kind=str):
        if key not in self.values:
            if default is None:
                raise ConfigError(f"missing required config key {key!r}")
            return default
        raw = self.values[key]
        try:
            if kind is bool:
                if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(raw)
                return raw.lower() in ("true", "1", "yes")
            return kind(raw)
        except ValueError:
            raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind.__name__}") from None

    def path(self, key: str) -> Path:
        p = Path(self.get(key))
        p = p if p.is_absolute() else self.base / p
        if not p.exists():
            raise DataError(f"config key {key!r}: no such file {p}")
        return p

    def has(self, key: str) -> bool:
        return key in self.values

    # --- derived objects ---

    def model_spec(self, config: Optional[str] = None) -> ModelSpec:
        config = config or self.get("config", "ste-dropout")
        hidden = [int(h) for h in self.get("hidden").split(",") if h.strip()]
        p_out_raw = self.get("p_out", "0.5")
        p_out = None if p_out_raw.lower() == "none" else float(p_out_raw)
        try:
            return mlp_spec(self.get("input_dim", kind=int), hidden, self.get("n_classes", kind=int), config,
                            A=self.get("A", 8, int), p=self.get("p", 0.5, float), p_out=p_out)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def train_config(self, seed: Optional[int] = None, config: Optional[str] = None) -> TrainConfig:
        config = config or self.get("config", "ste-dropout")
        lr = self.get(f"lr.{config}", self.get("lr", 1e-2, float), float)
        try:
            return TrainConfig(lr=lr, decay=self.get("decay", 1e-4, float),
                               momentum=self.get("momentum", 0.9, float),
                               batch_size=self.get("batch_size", 128, int), epochs=self.get("epochs", 128, int),
                               val_fraction=self.get("val_fraction", 0.10, float),
                               seed=self.get("seed", 0, int) if seed is None else seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def _load(self, which: str) -> Dataset:
        fmt = self.get("format", "idx")
        if fmt == "idx":
            return load_idx(self.path(f"{which}_images"), self.path(f"{which}_labels"))
        if fmt == "csv":
            label = self.get("label_column", "-1")
            try:
                label = int(label)
            except ValueError:
                pass
            return load_csv(self.path(f"{which}_csv"), label, self.get("header", False, bool))
        raise ConfigError(f"config key 'format': expected idx or csv, got {fmt!r}")

    def has_test(self) -> bool:
        keys = ("test_images", "test_labels") if self.get("format", "idx") == "idx" else ("test_csv",)
        return all(self.has(k) for k in keys)

    def datasets(self, need_test: bool = False):
        """Training data and (if configured) test data, normalised with training statistics."""
        train_ds = self._load("train")
        test_ds = self._load("test") if (need_test or self.has_test()) else None
        if self.get("normalize", True, bool):
            train_ds, *rest = normalize(train_ds, *([test_ds] if test_ds is not None else []))
            test_ds = rest[0] if rest else None
        return train_ds, test_ds


# --- commands ----------------------------------------------------------------


def _write_history(path: Path, result, first_epoch: int) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for row in result.history_rows(first_epoch):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def cmd_train(args) -> int:
    cfg_file = Config.read(args.config)
    spec, cfg = cfg_file.model_spec(), cfg_file.train_config(args.seed)
    data, test = cfg_file.datasets()
    resume = load_checkpoint(args.resume) if args.resume else None
    if spec.input_dim != data.n_features:
        raise DataError(f"data has {data.n_features} features but input_dim = {spec.input_dim}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outcome = train(spec, cfg, data, test, resume=resume)
    res = outcome.result
    if outcome.best is not None:
        save_checkpoint(out_dir / "best.stec", outcome.best)
        save_checkpoint(out_dir / "last.stec", outcome.last)
    _write_history(out_dir / "history.csv", res, 0 if resume is None else resume.epoch + 1)
    metrics = {
        "config": cfg_file.get("config", "ste-dropout"),
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "best_epoch": res.best_epoch,
        "best_val_loss": repr(min(res.val_loss)) if res.val_loss else "nan",
        "test_loss": repr(res.test_loss),
        "test_acc": repr(res.test_acc),
        # the only value that differs between identical reruns; always the last line
        "wall_time": f"{res.wall_time:.3f}",
    }
    with (out_dir / "metrics.txt").open("w") as fh:
        fh.writelines(f"{k} = {v}\n" for k, v in metrics.items())
    print(f"best epoch {res.best_epoch}, test loss {res.test_loss:.4f}, test acc {res.test_acc:.2f}%")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg_file = Config.read(args.config)
    net = load_checkpoint(args.checkpoint).network
    data, test = cfg_file.datasets(need_test=args.split == "test")
    ds = test if args.split == "test" else data
    loss, acc = evaluate(net, ds)
    print(f"loss = {loss!r}\naccuracy = {acc!r}")
    return EXIT_OK


def cmd_collapse(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    dense = collapse_network(ckpt.network)
    save_checkpoint(args.out, Checkpoint(dense, None, ckpt.epoch, ckpt.val_loss, {}, ckpt.seed))
    counts = count_parameters(ckpt.network)
    print(f"collapsed {counts.trained} trained parameters into {counts.collapsed}")
    return EXIT_OK


def cmd_verify(args) -> int:
    net = load_checkpoint(args.checkpoint).network
    collapsed = load_checkpoint(args.collapsed).network if args.collapsed else collapse_network(net)
    try:
        report = verify_network_collapse(net, collapsed, args.trials, args.tol,
                                         np.random.default_rng(args.seed))
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    print(report)
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_count_params(args) -> int:
    counts = count_parameters(Config.read(args.config).model_spec())
    for lc in counts.layers:
        print(f"layer {lc.index} {lc.kind:5s} {lc.n_in}->{lc.n_out} A={lc.A}: "
              f"trained {lc.trained}, collapsed {lc.collapsed}")
    print(f"as-trained {counts.trained} ({format_millions(counts.trained)})")
    print(f"collapsed {counts.collapsed} ({format_millions(counts.collapsed)})")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg_file = Config.read(args.config)
    names = [c.strip() for c in cfg_file.get("configs", ",".join(CONFIG_NAMES)).split(",") if c.strip()]
    for name in names:
        if name not in CONFIG_NAMES:
            raise ConfigError(f"config key 'configs': unknown configuration {name!r}")
    data, test = cfg_file.datasets(need_test=True)
    seeds = list(range(args.seeds))
    dataset_name = cfg_file.get("dataset_name", "data")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tables = []
    for name in names:
        spec = cfg_file.model_spec(name)
        if spec.input_dim != data.n_features:
            raise DataError(f"data has {data.n_features} features but input_dim = {spec.input_dim}")
        tables.append(run_experiment({name: spec}, cfg_file.train_config(config=name), data, test, seeds,
                                     dataset_name))
    runs = [r for t in tables for r in t.runs]
    table = ExperimentTable(runs)
    (out / "summary.csv").write_text(table.to_csv())
    (out / "summary.txt").write_text(table.to_text())
    with (out / "runs.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "config", "seed", "test_loss", "test_acc"])
        for r in runs:
            for seed, loss, acc in zip(seeds, r.losses, r.accs):
                w.writerow([r.dataset, r.config, seed, repr(loss), repr(acc)])
    print(table.to_text(), end="")
    return EXIT_OK


def _read_inputs(path: Path) -> np.ndarray:
    try:
        X = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    return X


def cmd_analyze(args) -> int:
    net = load_checkpoint(args.checkpoint).network
    X = _read_inputs(Path(args.inputs))
    if X.shape[1] != net.input_dim:
        raise DataError(f"{args.inputs}: rows have {X.shape[1]} values, model expects {net.input_dim}")
    try:
        res = analyze_activations(net, X, args.layer)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    A = res.corr.shape[0]
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["branch"] + [f"b{j}" for j in range(A)])
        for i in range(A):
            w.writerow([f"b{i}"] + [repr(float(v)) for v in res.corr[i]])
    dump = out.with_name(out.stem + "_branches.csv")
    with dump.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["input", "branch"] + [f"u{k}" for k in range(res.branch.shape[2])])
        for n, per_input in enumerate(res.branch):
            for i, z in enumerate(per_input):
                w.writerow([n, i] + [repr(float(v)) for v in z])
    print(f"mean off-diagonal correlation {res.mean_offdiag:.4f}, max {res.max_offdiag:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stelayers", description="Train, collapse and inspect STE-layer networks.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model and write its best checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="continue from a last.stec checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="loss and accuracy of a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("collapse", help="fold every STE layer into a dense layer")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collapse)

    p = sub.add_parser("verify", help="check that the collapsed network matches eval mode")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--collapsed", help="collapsed checkpoint to check (default: collapse in memory)")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("count-params", help="as-trained and collapsed parameter totals")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("experiment", help="train each configuration over several seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("analyze", help="branch activations and their correlations for one STE layer")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--inputs", required=True, help="CSV of input rows, one example per line")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
