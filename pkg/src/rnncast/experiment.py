"""Experiment configs and batch runners behind the command-line front end.

A run is described by one JSON file; every artifact it writes embeds the
fully resolved config and master seed so results are self-describing.
"""

import csv
import json
import logging
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .evalsearch import (
    ARCHITECTURES,
    HyperSpace,
    best_test_predictions,
    run_search,
    search_report,
)
from .presets import (
    DEFAULT_LENGTH,
    FINAL_EPOCHS,
    FIXED_CONFIGS,
    SEARCH_EPOCHS,
    SEARCH_SPACES,
    TASK_HORIZONS,
    load_csv_task,
    make_dataset,
)
from .timeseries import (
    FLAG_OK,
    RawSeries,
    gen_mackey_glass,
    gen_mso,
    gen_narma,
    write_csv,
)
from .numerics import RngStream

log = logging.getLogger(__name__)

SYNTHETIC_TASKS = tuple(TASK_HORIZONS)  # mg, narma, mso

# keys accepted in an experiment config file; anything else is a typo
_CONFIG_KEYS = {
    "task", "architecture", "n", "horizon", "csv", "pipeline", "space",
    "fixed", "budget", "epochs", "final_epochs", "restarts", "master_seed",
    "workers", "out",
}


class ConfigError(Exception):
    """Invalid experiment configuration; the CLI maps this to exit 2."""


@dataclass
class ExperimentConfig:
    task: str
    architecture: str
    n: int = DEFAULT_LENGTH
    horizon: int = None
    csv_spec: dict = None
    space: HyperSpace = None
    fixed: dict = None
    budget: int = 50
    epochs: int = None
    final_epochs: int = None
    restarts: int = 10
    master_seed: int = 0
    workers: int = 1
    out: str = None
    source: str = None  # config file path, recorded in artifacts

    def resolved(self) -> dict:
        """JSON-able view embedded in every artifact."""
        d = {
            "task": self.task,
            "architecture": self.architecture,
            "n": self.n,
            "horizon": self.horizon,
            "budget": self.budget,
            "epochs": self.epochs,
            "final_epochs": self.final_epochs,
            "restarts": self.restarts,
            "master_seed": self.master_seed,
            "workers": self.workers,
            "out": self.out,
        }
        if self.csv_spec is not None:
            d["csv"] = self.csv_spec
        if self.space is not None:
            d["space"] = {k: list(v) for k, v in self.space.params.items()}
        if self.fixed is not None:
            d["fixed"] = self.fixed
        if self.source is not None:
            d["source"] = self.source
        return d


def _parse_space(architecture: str, raw) -> HyperSpace:
    if isinstance(raw, str):
        if raw not in SEARCH_SPACES:
            raise ConfigError(f"unknown search space {raw!r}")
        if raw != architecture:
            raise ConfigError(
                f"space tag {raw!r} does not match architecture "
                f"{architecture!r}")
        return SEARCH_SPACES[raw]
    if not isinstance(raw, dict):
        raise ConfigError("space must be a name or a parameter mapping")
    params = {}
    for key, dist in raw.items():
        if not (isinstance(dist, (list, tuple)) and len(dist) >= 2):
            raise ConfigError(f"space entry {key!r}: malformed distribution")
        kind = dist[0]
        if kind == "set":
            params[key] = ("set", tuple(dist[1]))
        elif kind in ("uniform", "loguniform"):
            if len(dist) != 3:
                raise ConfigError(f"space entry {key!r}: expected [kind, "
                                  "low, high]")
            params[key] = (kind, float(dist[1]), float(dist[2]))
        else:
            raise ConfigError(f"space entry {key!r}: unknown kind {kind!r}")
    try:
        return HyperSpace(architecture, params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_fixed(architecture: str, raw) -> dict:
    if isinstance(raw, str):
        if raw not in FIXED_CONFIGS:
            raise ConfigError(f"unknown fixed config {raw!r}")
        cfg = dict(FIXED_CONFIGS[raw])
    elif isinstance(raw, dict):
        cfg = dict(raw)
    else:
        raise ConfigError("fixed must be a preset name or a mapping")
    arch = cfg.get("architecture")
    if arch != architecture:
        raise ConfigError(
            f"fixed config architecture {arch!r} does not match "
            f"{architecture!r}")
    return cfg


def _positive(blob: dict, key: str, default, minimum: int) -> int:
    value = blob.get(key, default)
    if value is None:
        return None
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool) \
            or value < minimum:
        raise ConfigError(f"{key} must be an integer >= {minimum}")
    return int(value)


def parse_experiment(blob: dict, source: str = None) -> ExperimentConfig:
    """Validate a raw config mapping into an ExperimentConfig."""
    if not isinstance(blob, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(blob) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    task = blob.get("task")
    if not isinstance(task, str):
        raise ConfigError("task is required")
    csv_spec = None
    if task.startswith("csv:"):
        schema_path = Path(task[4:])
        if not schema_path.is_file():
            raise ConfigError(f"schema file not found: {schema_path}")
        with open(schema_path) as fh:
            csv_spec = json.load(fh)
        task = "csv"
    elif task == "csv":
        csv_spec = blob.get("csv")
        if not isinstance(csv_spec, dict):
            raise ConfigError("task csv requires a csv spec object")
    elif task not in SYNTHETIC_TASKS:
        raise ConfigError(f"unknown task {task!r}")
    if csv_spec is not None:
        data_path = csv_spec.get("path")
        if not data_path or not Path(data_path).is_file():
            raise ConfigError(f"csv data file not found: {data_path!r}")
        if "tf" not in csv_spec or "split" not in csv_spec:
            raise ConfigError("csv spec requires tf and split")
    arch = blob.get("architecture")
    if arch not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture {arch!r}")
    cfg = ExperimentConfig(
        task=task,
        architecture=arch,
        n=_positive(blob, "n", DEFAULT_LENGTH, 1),
        horizon=_positive(blob, "horizon", None, 1),
        csv_spec=csv_spec,
        budget=_positive(blob, "budget", 50, 1),
        epochs=_positive(blob, "epochs", SEARCH_EPOCHS[arch], 0),
        final_epochs=_positive(blob, "final_epochs", FINAL_EPOCHS[arch], 0),
        restarts=_positive(blob, "restarts", 10, 1),
        master_seed=_positive(blob, "master_seed", 0, 0),
        workers=_positive(blob, "workers", 1, 1),
        out=blob.get("out"),
        source=source,
    )
    if "space" in blob:
        cfg.space = _parse_space(arch, blob["space"])
    if "fixed" in blob:
        cfg.fixed = _parse_fixed(arch, blob["fixed"])
    return cfg


def load_experiment(path, seed=None, workers=None, budget=None,
                    out=None) -> ExperimentConfig:
    """Read a JSON config file, applying command-line overrides."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(p) as fh:
            blob = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    cfg = parse_experiment(blob, source=str(p))
    if seed is not None:
        cfg.master_seed = int(seed)
    if workers is not None:
        if workers < 1:
            raise ConfigError("workers must be an integer >= 1")
        cfg.workers = int(workers)
    if budget is not None:
        if budget < 1:
            raise ConfigError("budget must be an integer >= 1")
        cfg.budget = int(budget)
    if out is not None:
        cfg.out = str(out)
    if cfg.out is None:
        raise ConfigError("out directory is required (config key or --out)")
    return cfg


def build_dataset(cfg: ExperimentConfig):
    if cfg.task == "csv":
        return load_csv_task(cfg.csv_spec)
    return make_dataset(cfg.task, n=cfg.n, seed=cfg.master_seed,
                        tf=cfg.horizon)


# ---------------------------------------------------------------------------
# commands

_EPOCH_ORIGIN = datetime(2000, 1, 1)


def run_generate(task: str, n: int, seed: int, out) -> Path:
    """Write a synthetic series as a standard-schema CSV; deterministic
    for a given (task, n, seed)."""
    if task not in SYNTHETIC_TASKS:
        raise ConfigError(f"unknown task {task!r}")
    if n < 1:
        raise ConfigError("n must be an integer >= 1")
    exog, exog_names = None, ()
    if task == "mg":
        values = gen_mackey_glass(n)
    elif task == "mso":
        values = gen_mso(n)
    else:
        x, values = gen_narma(n, 10, RngStream(seed).child(0))
        exog, exog_names = x[:, None], ("input",)
    stamps = [_EPOCH_ORIGIN + timedelta(hours=i) for i in range(n)]
    series = RawSeries(timestamps=stamps, values=values,
                       flags=np.full(n, FLAG_OK, dtype=np.int8),
                       exog=exog, exog_names=exog_names)
    out = Path(out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    meta = {"command": "generate", "task": task, "n": n,
            "master_seed": seed}
    write_csv(out, series, meta=meta)
    log.info("wrote %d rows to %s", n, out)
    return out


def run_search_cmd(cfg: ExperimentConfig, resume: bool = False) -> dict:
    """Random search driven by a config; writes report.json,
    best_config.json, and the per-trial trials.jsonl append log."""
    if cfg.space is None:
        cfg.space = SEARCH_SPACES[cfg.architecture]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(cfg)
    log_path = out / "trials.jsonl"
    if not resume and log_path.exists():
        log_path.unlink()
    log.info("search: %s on %s, budget %d, workers %d",
             cfg.architecture, cfg.task, cfg.budget, cfg.workers)
    trials = run_search(cfg.space, dataset, cfg.budget, cfg.workers,
                        cfg.master_seed, cfg.epochs, log_path=log_path,
                        resume=resume)
    report = search_report(trials, cfg.space, cfg.master_seed, cfg.budget,
                           cfg.epochs)
    report["resolved_config"] = cfg.resolved()
    _dump_json(out / "report.json", report)
    ok = [t for t in trials if t.status == "ok"]
    if not ok:
        raise RuntimeError("search: every trial diverged")
    best = {"architecture": cfg.architecture,
            "master_seed": cfg.master_seed,
            "valid_nrmse": ok[0].valid_nrmse,
            "config": ok[0].config,
            "resolved_config": cfg.resolved()}
    _dump_json(out / "best_config.json", best)
    log.info("search: best valid NRMSE %.6f", ok[0].valid_nrmse)
    return report


def run_eval_cmd(cfg: ExperimentConfig) -> dict:
    """Restart protocol on the test split; writes metrics.json plus
    raw-scale predictions.csv and residuals.csv for plotting."""
    if cfg.fixed is None:
        key = f"{cfg.architecture}-{cfg.task}"
        if key not in FIXED_CONFIGS:
            raise ConfigError(
                f"eval needs a fixed config ({key!r} has no preset)")
        cfg.fixed = dict(FIXED_CONFIGS[key])
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(cfg)
    log.info("eval: %s on %s, %d restarts", cfg.architecture, cfg.task,
             cfg.restarts)
    report, preds, truth = best_test_predictions(
        cfg.fixed, dataset, cfg.restarts, cfg.master_seed,
        cfg.final_epochs)
    report["resolved_config"] = cfg.resolved()
    _dump_json(out / "metrics.json", report)
    meta = {"command": "eval", "master_seed": cfg.master_seed,
            "resolved_config": cfg.resolved()}
    start = dataset.test_label_start()
    preds = preds.ravel()
    truth = truth.ravel()
    residuals = truth - preds
    _dump_table(out / "predictions.csv", meta,
                ("step", "truth", "prediction"),
                zip(range(start, start + preds.shape[0]), truth, preds))
    _dump_table(out / "residuals.csv", meta, ("step", "residual"),
                zip(range(start, start + preds.shape[0]), residuals))
    log.info("eval: best test NRMSE %.6f", report["test_nrmse_best"])
    return report


def _dump_json(path: Path, blob: dict) -> None:
    with open(path, "w") as fh:
        json.dump(blob, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _dump_table(path: Path, meta: dict, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([x if isinstance(x, int) else repr(float(x))
                        for x in row])
