"""Metrics, random hyperparameter search, and the restart test protocol.

Search determinism contract: trial i derives every random draw from
master.child(0).child(i) (config from sub-stream 0, training from 1), so
the ranked result list is identical for any worker count. Final evaluation
restart r draws from master.child(1).child(r).
"""

import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import bptt, esn, narx
from .numerics import RngStream
from .timeseries import invert_pipeline

GRADIENT_KINDS = ("ernn", "lstm", "gru")
ARCHITECTURES = GRADIENT_KINDS + ("narx", "esn")


# ---------------------------------------------------------------------------
# metrics


def nrmse(y, ystar) -> float:
    """sqrt(mean |y - y*|^2 / mean |y* - mean(y*)|^2), columnwise means."""
    y = np.asarray(y, dtype=float)
    ystar = np.asarray(ystar, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if ystar.ndim == 1:
        ystar = ystar[:, None]
    if y.shape != ystar.shape or y.shape[0] < 2:
        raise ValueError("nrmse: need equal shapes with at least 2 rows")
    denom = float(np.mean(np.sum((ystar - ystar.mean(axis=0)) ** 2, axis=1)))
    if denom == 0.0:
        raise ValueError("nrmse: constant ground truth, metric undefined")
    num = float(np.mean(np.sum((y - ystar) ** 2, axis=1)))
    return float(np.sqrt(num / denom))


def accuracy_psi(y, ystar) -> float:
    """Prediction accuracy: 1 - NRMSE."""
    return 1.0 - nrmse(y, ystar)


# ---------------------------------------------------------------------------
# hyperparameter spaces


# sampled fields per architecture; eta0 for gradient nets is drawn from
# the optimizer-dependent LR_EXPONENTS ranges instead of the space
_SPACE_KEYS = {
    "gradient": frozenset(
        {"nh", "tau_f", "optimizer", "lambda1", "lambda2", "p_drop"}),
    "narx": frozenset({"tdl", "nh", "nl", "eta0", "lambda2"}),
    "esn": frozenset({"nh", "rho", "rc", "xi_var", "omega_i", "omega_o",
                      "omega_f", "lambda2"}),
}


@dataclass(frozen=True)
class HyperSpace:
    """Per-architecture sampling distributions.

    Supported distribution forms: ("set", values), ("uniform", lo, hi),
    ("loguniform", lo, hi) on base-10 exponents of the bounds.
    """

    architecture: str
    params: dict

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(
                f"HyperSpace: unknown architecture {self.architecture!r}")
        kind = ("gradient" if self.architecture in GRADIENT_KINDS
                else self.architecture)
        expected = _SPACE_KEYS[kind]
        if set(self.params) != expected:
            raise ValueError(
                f"HyperSpace: {self.architecture} space must define exactly "
                f"{sorted(expected)}, got {sorted(self.params)}")


def _draw(dist, gen) -> float:
    kind = dist[0]
    if kind == "set":
        values = dist[1]
        return values[int(gen.integers(len(values)))]
    if kind == "uniform":
        return float(gen.uniform(dist[1], dist[2]))
    if kind == "loguniform":
        return float(10.0 ** gen.uniform(np.log10(dist[1]),
                                         np.log10(dist[2])))
    raise ValueError(f"unknown distribution {dist!r}")


def in_support(dist, value) -> bool:
    if dist[0] == "set":
        return value in dist[1]
    return dist[1] <= value <= dist[2]


# learning-rate exponent ranges per optimizer: eta = 10^c
LR_EXPONENTS = {"sgd": (-3.0, -1.0), "nesterov": (-4.0, -2.0),
                "adam": (-4.0, -2.0)}


def sample_config(space: HyperSpace, rng) -> dict:
    """One configuration, every field inside its declared support.

    Gradient architectures couple fields: tau_b = 2 tau_f, the learning
    rate range depends on the sampled optimizer, and a nonzero dropout
    forces a nonzero L2 weight.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    p = space.params
    cfg = {"architecture": space.architecture}
    if space.architecture in GRADIENT_KINDS:
        cfg["nh"] = int(_draw(p["nh"], gen))
        cfg["tau_f"] = int(_draw(p["tau_f"], gen))
        cfg["tau_b"] = 2 * cfg["tau_f"]
        cfg["optimizer"] = _draw(p["optimizer"], gen)
        lo, hi = LR_EXPONENTS[cfg["optimizer"]]
        cfg["eta0"] = float(10.0 ** gen.uniform(lo, hi))
        cfg["lambda1"] = float(_draw(p["lambda1"], gen))
        cfg["lambda2"] = float(_draw(p["lambda2"], gen))
        cfg["p_drop"] = float(_draw(p["p_drop"], gen))
        while cfg["p_drop"] > 0 and cfg["lambda2"] == 0.0:
            cfg["lambda2"] = float(_draw(p["lambda2"], gen))
        # slow fractional decay stabilizes the plain-gradient optimizers
        if cfg["optimizer"] in ("sgd", "nesterov"):
            cfg["schedule"] = "fractional"
            cfg["alpha"] = 1e-6
        else:
            cfg["schedule"] = "constant"
            cfg["alpha"] = 0.0
    elif space.architecture == "narx":
        cfg["tdl"] = int(_draw(p["tdl"], gen))
        cfg["nh"] = int(_draw(p["nh"], gen))
        cfg["nl"] = int(_draw(p["nl"], gen))
        cfg["eta0"] = float(_draw(p["eta0"], gen))
        cfg["lambda2"] = float(_draw(p["lambda2"], gen))
    else:  # esn
        cfg["nh"] = int(_draw(p["nh"], gen))
        cfg["rho"] = float(_draw(p["rho"], gen))
        cfg["rc"] = float(_draw(p["rc"], gen))
        cfg["xi_var"] = float(_draw(p["xi_var"], gen))
        cfg["omega_i"] = float(_draw(p["omega_i"], gen))
        cfg["omega_o"] = float(_draw(p["omega_o"], gen))
        cfg["omega_f"] = float(_draw(p["omega_f"], gen))
        cfg["lambda2"] = float(_draw(p["lambda2"], gen))
    return cfg


# ---------------------------------------------------------------------------
# fitting and prediction per architecture


class Diverged(Exception):
    pass


@dataclass
class _View:
    train_x: np.ndarray
    train_y: np.ndarray
    valid_x: np.ndarray
    valid_y: np.ndarray


def _as_cols(a):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def fit_predict(config: dict, fit_x, fit_y, seg_x, rng: RngStream,
                epochs: int) -> np.ndarray:
    """Train on (fit_x, fit_y), then predict the segment that follows it.

    The model is warmed over the fit region (teacher forcing where the
    architecture has feedback) and continues over seg_x with its own state.
    Raises Diverged when training fails or predictions go non-finite.
    """
    arch = config["architecture"]
    fit_x, fit_y, seg_x = _as_cols(fit_x), _as_cols(fit_y), _as_cols(seg_x)
    if arch in GRADIENT_KINDS:
        tc = bptt.TrainConfig(
            nh=int(config["nh"]), tau_f=int(config["tau_f"]),
            tau_b=int(config["tau_b"]), epochs=epochs,
            optimizer=config["optimizer"], eta0=config["eta0"],
            schedule=config.get("schedule", "constant"),
            alpha=config.get("alpha", 0.0),
            lambda1=config.get("lambda1", 0.0),
            lambda2=config.get("lambda2", 0.0),
            p_drop=config.get("p_drop", 0.0),
        )
        ds = _View(fit_x, fit_y, seg_x, np.zeros((seg_x.shape[0],
                                                  fit_y.shape[1])))
        model, history = bptt.train(arch, ds, tc, rng)
        if history.failed:
            raise Diverged("training loss went non-finite")
        _, cache = bptt.model_forward(model, fit_x)
        preds = bptt.predict_continue(model, cache, seg_x)
    elif arch == "narx":
        tdl = int(config["tdl"])
        p0 = narx.init_narx(nx=fit_x.shape[1], ny=fit_y.shape[1],
                            dx=tdl, dy=tdl, nh=int(config["nh"]),
                            nl=int(config["nl"]), rng=rng.child(0))
        p, _ = narx.train_series_parallel(
            p0, _View(fit_x, fit_y, None, None), config["lambda2"],
            config["eta0"], epochs)
        full = narx.closed_loop_predict(
            p, np.vstack([fit_x, seg_x]), warmup=fit_y)
        preds = full[fit_x.shape[0]:]
    elif arch == "esn":
        r = esn.build_reservoir(
            int(config["nh"]), config["rho"], config["rc"],
            config["omega_i"], config["omega_f"], config["xi_var"],
            rng.child(0), n_in=fit_x.shape[1], n_out=fit_y.shape[1],
            omega_o=config["omega_o"])
        sm = esn.harvest_states(r, fit_x, fit_y, washout=esn.WASHOUT,
                                rng=rng.child(1))
        readout = esn.ridge_fit(sm, config["lambda2"])
        full = esn.esn_predict(r, readout, np.vstack([fit_x, seg_x]),
                               y_warm=fit_y)
        preds = full[fit_x.shape[0]:]
    else:
        raise ValueError(f"fit_predict: unknown architecture {arch!r}")
    if not np.all(np.isfinite(preds)):
        raise Diverged("non-finite predictions")
    return preds


# ---------------------------------------------------------------------------
# random search


@dataclass
class TrialResult:
    index: int
    config: dict
    valid_nrmse: float
    status: str  # "ok" | "diverged"
    seconds: float
    test_nrmse: float = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrialResult":
        return cls(**d)


def run_trial(space: HyperSpace, dataset, index: int, master_seed: int,
              epochs: int) -> TrialResult:
    """One search trial: sample, train on the training split, score the
    validation split. Fully determined by (space, dataset, index, seed)."""
    stream = RngStream(master_seed).child(0).child(index)
    config = sample_config(space, stream.child(0))
    start = time.perf_counter()
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            preds = fit_predict(config, dataset.train_x, dataset.train_y,
                                dataset.valid_x, stream.child(1), epochs)
            score = nrmse(preds, _as_cols(dataset.valid_y))
        if not np.isfinite(score):
            raise Diverged("non-finite validation score")
        status = "ok"
    except (Diverged, FloatingPointError, np.linalg.LinAlgError):
        score, status = float("inf"), "diverged"
    return TrialResult(index=index, config=config, valid_nrmse=float(score),
                       status=status, seconds=time.perf_counter() - start)


_POOL_CTX = {}


def _pool_init(space, dataset, master_seed, epochs):
    _POOL_CTX["args"] = (space, dataset, master_seed, epochs)


def _pool_trial(index: int) -> dict:
    space, dataset, master_seed, epochs = _POOL_CTX["args"]
    return run_trial(space, dataset, index, master_seed, epochs).to_dict()


def _rank(trials: list[TrialResult]) -> list[TrialResult]:
    return sorted(trials, key=lambda t: (t.valid_nrmse, t.index))


def run_search(space: HyperSpace, dataset, budget: int, workers: int,
               master_seed: int, epochs: int,
               log_path=None, resume: bool = False) -> list[TrialResult]:
    """Evaluate `budget` sampled configs; rank by (valid NRMSE, index).

    With `log_path`, every finished trial is appended as a JSON line;
    `resume` skips indices already present in that file. Results are
    identical for any worker count.
    """
    if budget < 1:
        raise ValueError("run_search: budget must be >= 1")
    if workers < 1:
        raise ValueError("run_search: workers must be >= 1")
    done: dict[int, TrialResult] = {}
    if resume and log_path is not None:
        try:
            with open(log_path) as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        t = TrialResult.from_dict(json.loads(line))
                        if 0 <= t.index < budget:
                            done[t.index] = t
        except FileNotFoundError:
            pass
    todo = [i for i in range(budget) if i not in done]
    log_fh = open(log_path, "a") if log_path is not None else None

    def record(t: TrialResult):
        done[t.index] = t
        if log_fh is not None:
            log_fh.write(json.dumps(t.to_dict()) + "\n")
            log_fh.flush()

    try:
        if workers == 1 or len(todo) <= 1:
            for i in todo:
                record(run_trial(space, dataset, i, master_seed, epochs))
        else:
            with ProcessPoolExecutor(
                    max_workers=workers, initializer=_pool_init,
                    initargs=(space, dataset, master_seed, epochs)) as pool:
                for d in pool.map(_pool_trial, todo):
                    record(TrialResult.from_dict(d))
    finally:
        if log_fh is not None:
            log_fh.close()
    return _rank(list(done.values()))


def search_report(trials: list[TrialResult], space: HyperSpace,
                  master_seed: int, budget: int, epochs: int) -> dict:
    return {
        "architecture": space.architecture,
        "master_seed": master_seed,
        "budget": budget,
        "epochs": epochs,
        "trials": [t.to_dict() for t in trials],
        "best_config": trials[0].config if trials else None,
        "best_valid_nrmse": trials[0].valid_nrmse if trials else None,
    }


# ---------------------------------------------------------------------------
# final evaluation protocol


def _invert_test(dataset, values) -> np.ndarray:
    """Undo the dataset pipeline over the test-label window."""
    if dataset.pipeline is None:
        return np.asarray(values, dtype=float)
    flat = np.asarray(values, dtype=float).ravel()
    raw = invert_pipeline(dataset.pipeline, flat,
                          dataset.test_label_start())
    return raw.reshape(np.asarray(values).shape)


def final_eval(config: dict, dataset, restarts: int = 10,
               master_seed: int = 0, epochs: int = 2000) -> dict:
    """Best-of-`restarts` test protocol.

    Each restart trains on train+validation with its own derived stream and
    scores the test split on the original scale (predictions are walked
    back through the dataset pipeline first). Reports the best score, with
    mean/std alongside.
    """
    if restarts < 1:
        raise ValueError("final_eval: restarts must be >= 1")
    fit_x = np.vstack([_as_cols(dataset.train_x), _as_cols(dataset.valid_x)])
    fit_y = np.vstack([_as_cols(dataset.train_y), _as_cols(dataset.valid_y)])
    test_y_raw = _invert_test(dataset, _as_cols(dataset.test_y))
    master = RngStream(master_seed)
    scores, entries = [], []
    for r in range(restarts):
        start = time.perf_counter()
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                preds = fit_predict(config, fit_x, fit_y, dataset.test_x,
                                    master.child(1).child(r), epochs)
                preds_raw = _invert_test(dataset, preds)
                score = nrmse(preds_raw, test_y_raw)
            if not np.isfinite(score):
                raise Diverged("non-finite test score")
            status = "ok"
        except (Diverged, FloatingPointError, np.linalg.LinAlgError):
            score, status = float("inf"), "diverged"
        scores.append(score)
        entries.append({"restart": r, "test_nrmse": float(score),
                        "status": status,
                        "seconds": time.perf_counter() - start})
    finite = [s for s in scores if np.isfinite(s)]
    if not finite:
        raise RuntimeError("final_eval: every restart diverged")
    best = float(min(finite))
    return {
        "config": config,
        "restarts": restarts,
        "master_seed": master_seed,
        "epochs": epochs,
        "test_nrmse_best": best,
        "psi_best": 1.0 - best,
        "test_nrmse_mean": float(np.mean(finite)),
        "test_nrmse_std": float(np.std(finite)),
        "diverged": int(len(scores) - len(finite)),
        "per_restart": entries,
    }


def best_test_predictions(config: dict, dataset, restarts: int,
                          master_seed: int, epochs: int):
    """Re-run the protocol keeping the raw-scale predictions of the best
    restart; returns (report, predictions_raw, truth_raw)."""
    report = final_eval(config, dataset, restarts, master_seed, epochs)
    best_r = min(
        (e for e in report["per_restart"] if e["status"] == "ok"),
        key=lambda e: e["test_nrmse"])["restart"]
    fit_x = np.vstack([_as_cols(dataset.train_x), _as_cols(dataset.valid_x)])
    fit_y = np.vstack([_as_cols(dataset.train_y), _as_cols(dataset.valid_y)])
    preds = fit_predict(config, fit_x, fit_y, dataset.test_x,
                        RngStream(master_seed).child(1).child(best_r),
                        epochs)
    return (report, _invert_test(dataset, preds),
            _invert_test(dataset, _as_cols(dataset.test_y)))
