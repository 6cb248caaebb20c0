"""Search spaces, shipped reference configurations, and task builders."""

from datetime import timedelta

import numpy as np

from .evalsearch import HyperSpace
from .numerics import RngStream
from .timeseries import (
    CsvSchema,
    PIPELINE_PRESETS,
    build_supervised,
    fit_pipeline,
    fraction_boundaries,
    gen_mackey_glass,
    gen_mso,
    gen_narma,
    impute_adjacent_weeks,
    impute_spline,
    load_csv,
    month_boundaries,
    zscore_apply,
    zscore_stats,
)

# ---------------------------------------------------------------------------
# hyperparameter search spaces

_GRADIENT_COMMON = {
    "tau_f": ("set", (10, 15, 20, 25, 30)),
    "optimizer": ("set", ("sgd", "nesterov", "adam")),
    "lambda1": ("uniform", 0.0, 0.1),
    "lambda2": ("uniform", 0.0, 0.1),
    "p_drop": ("set", (0.0, 0.1, 0.2, 0.3, 0.5)),
}

SEARCH_SPACES = {
    "ernn": HyperSpace("ernn", {"nh": ("set", (40, 60, 80, 100)),
                                **_GRADIENT_COMMON}),
    "lstm": HyperSpace("lstm", {"nh": ("set", (20, 30, 40, 50)),
                                **_GRADIENT_COMMON}),
    "gru": HyperSpace("gru", {"nh": ("set", (23, 35, 46, 58)),
                              **_GRADIENT_COMMON}),
    # hidden sizes/depths/rates bracket the reference optima; only the
    # delay-line set is pinned
    "narx": HyperSpace("narx", {
        "tdl": ("set", tuple(range(2, 11))),
        "nh": ("set", tuple(range(10, 21))),
        "nl": ("set", (1, 2, 3, 4, 5)),
        "eta0": ("loguniform", 1e-6, 1e-2),
        "lambda2": ("loguniform", 1e-3, 0.5),
    }),
    "esn": HyperSpace("esn", {
        "nh": ("set", tuple(range(400, 901, 50))),
        "rho": ("uniform", 0.5, 1.8),
        "rc": ("uniform", 0.15, 0.45),
        "xi_var": ("uniform", 0.0, 0.1),
        "omega_i": ("uniform", 0.1, 1.0),
        "omega_o": ("uniform", 0.1, 1.0),
        "omega_f": ("uniform", 0.0, 0.5),
        "lambda2": ("uniform", 0.001, 0.4),
    }),
}


# ---------------------------------------------------------------------------
# shipped reference configurations


def _grad(arch, tau_b, tau_f, nh, optimizer, eta0, p_drop, lambda1, lambda2):
    cfg = {"architecture": arch, "nh": nh, "tau_f": tau_f, "tau_b": tau_b,
           "optimizer": optimizer, "eta0": eta0, "p_drop": p_drop,
           "lambda1": lambda1, "lambda2": lambda2}
    if optimizer in ("sgd", "nesterov"):
        cfg["schedule"], cfg["alpha"] = "fractional", 1e-6
    else:
        cfg["schedule"], cfg["alpha"] = "constant", 0.0
    return cfg


def _narx(nh, nl, tdl, eta0, lambda2):
    return {"architecture": "narx", "nh": nh, "nl": nl, "tdl": tdl,
            "eta0": eta0, "lambda2": lambda2}


def _esn(nh, rho, rc, xi_var, omega_i, omega_o, omega_f, lambda2):
    return {"architecture": "esn", "nh": nh, "rho": rho, "rc": rc,
            "xi_var": xi_var, "omega_i": omega_i, "omega_o": omega_o,
            "omega_f": omega_f, "lambda2": lambda2}


FIXED_CONFIGS = {
    # synthetic tasks
    "narx-mg": _narx(15, 2, 6, 3.8e-6, 0.0209),
    "narx-narma": _narx(17, 2, 10, 2.4e-4, 0.4367),
    "narx-mso": _narx(12, 5, 2, 0.002, 0.446),
    "ernn-mg": _grad("ernn", 20, 10, 80, "adam", 0.00026, 0.0, 0.0, 0.00037),
    "ernn-narma": _grad("ernn", 50, 25, 80, "nesterov", 0.00056, 0.0, 0.0,
                        1e-5),
    "ernn-mso": _grad("ernn", 50, 25, 60, "adam", 0.00041, 0.0, 0.0,
                      0.00258),
    "lstm-mg": _grad("lstm", 50, 25, 40, "adam", 0.00051, 0.0, 0.0, 0.00065),
    "lstm-narma": _grad("lstm", 40, 20, 40, "adam", 0.00719, 0.0, 0.0,
                        0.00087),
    "lstm-mso": _grad("lstm", 50, 25, 20, "adam", 0.00091, 0.0, 0.0, 0.0012),
    "gru-mg": _grad("gru", 40, 20, 46, "sgd", 0.02253, 0.0, 0.0, 6.88e-6),
    "gru-narma": _grad("gru", 40, 20, 46, "adam", 0.00025, 0.0, 0.0,
                       0.00378),
    "gru-mso": _grad("gru", 50, 25, 35, "adam", 0.00333, 0.0, 0.0, 0.00126),
    "esn-mg": _esn(800, 1.334, 0.234, 0.001, 0.597, 0.969, 0.260, 0.066),
    "esn-narma": _esn(700, 0.932, 0.322, 0.013, 0.464, 0.115, 0.045, 0.343),
    "esn-mso": _esn(600, 1.061, 0.231, 0.002, 0.112, 0.720, 0.002, 0.177),
    # load-forecasting tasks
    "narx-orange": _narx(11, 4, 2, 1.9e-6, 0.082),
    "narx-acea": _narx(11, 3, 2, 1.9e-6, 0.0327),
    "narx-gefcom": _narx(18, 4, 9, 6.1e-5, 0.3136),
    "ernn-orange": _grad("ernn", 30, 15, 100, "sgd", 0.011, 0.0, 0.0,
                         0.0081),
    "ernn-acea": _grad("ernn", 60, 30, 80, "nesterov", 0.00036, 0.0, 0.0,
                       0.0015),
    "ernn-gefcom": _grad("ernn", 50, 25, 60, "adam", 0.0002, 0.0, 0.0,
                         0.0023),
    "lstm-orange": _grad("lstm", 40, 20, 50, "adam", 0.0013, 0.0, 0.0,
                         0.0036),
    "lstm-acea": _grad("lstm", 50, 25, 40, "adam", 0.0010, 0.1, 0.0, 0.0012),
    "lstm-gefcom": _grad("lstm", 50, 25, 20, "sgd", 0.0881, 0.0, 0.0,
                         0.0017),
    "gru-orange": _grad("gru", 40, 20, 46, "sgd", 0.0783, 0.0, 0.0133,
                        0.0004),
    "gru-acea": _grad("gru", 40, 20, 35, "adam", 0.0033, 0.0, 0.0, 0.0013),
    "gru-gefcom": _grad("gru", 60, 30, 23, "adam", 0.0005, 0.0, 0.0, 0.0043),
    "esn-orange": _esn(400, 0.5006, 0.3596, 0.0261, 0.2022, 0.4787, 0.1328,
                       0.3240),
    "esn-acea": _esn(800, 0.7901, 0.4099, 0.0025, 0.1447, 0.5306, 0.0604,
                     0.1297),
    "esn-gefcom": _esn(500, 1.7787, 0.4283, 0.0489, 0.7974, 0.9932, 0.0033,
                       0.2721),
}

# epoch budgets: gradient nets use 400 search / 2000 final epochs, the
# LM-trained NARX 1000 for both; ESN fitting has no epochs
SEARCH_EPOCHS = {"ernn": 400, "lstm": 400, "gru": 400, "narx": 1000,
                 "esn": 0}
FINAL_EPOCHS = {"ernn": 2000, "lstm": 2000, "gru": 2000, "narx": 1000,
                "esn": 0}

# forecast horizons per synthetic task
TASK_HORIZONS = {"mg": 12, "narma": 1, "mso": 10}
SYNTHETIC_SPLIT = (0.6, 0.2, 0.2)
DEFAULT_LENGTH = 15000


# ---------------------------------------------------------------------------
# dataset builders


def make_dataset(task: str, n: int = DEFAULT_LENGTH, seed: int = 0,
                 tf: int = None):
    """Synthetic TaskDataset: generated, standardized, split 60/20/20.

    mg and mso are deterministic; the seed drives the NARMA input draw.
    NARMA couples the generator's input as an exogenous channel
    (standardized with training statistics of its own).
    """
    if task not in TASK_HORIZONS:
        raise ValueError(f"make_dataset: unknown task {task!r}")
    tf = TASK_HORIZONS[task] if tf is None else tf
    exog = None
    if task == "mg":
        series = gen_mackey_glass(n)
    elif task == "mso":
        series = gen_mso(n)
    else:
        x, series = gen_narma(n, 10, RngStream(seed).child(0))
        exog = x
    b1, b2 = fraction_boundaries(n, SYNTHETIC_SPLIT)
    transformed, fp = fit_pipeline(series, PIPELINE_PRESETS["synthetic"], b1)
    if exog is not None:
        exog = zscore_apply(exog, zscore_stats(exog[:b1]))
    ds = build_supervised(transformed, exog, tf, (b1, b2))
    ds.pipeline = fp
    return ds


def dataset_from_raw(raw, spec: dict):
    """TaskDataset from an ingested RawSeries and a task spec dict.

    spec keys: impute (None | 'adjacent_weeks' | 'spline'),
    period_per_week, pipeline (step list or preset name), split
    ({'fractions': [a,b,c]} or {'months': [train, valid]}), tf,
    use_exogenous (bool).
    """
    impute = spec.get("impute")
    if impute == "adjacent_weeks":
        raw = impute_adjacent_weeks(raw, int(spec["period_per_week"]))
    elif impute == "spline":
        raw = impute_spline(raw)
    elif impute is not None:
        raise ValueError(f"dataset_from_raw: unknown imputer {impute!r}")
    split = spec["split"]
    if "fractions" in split:
        b1, b2 = fraction_boundaries(raw.values.shape[0],
                                     tuple(split["fractions"]))
    else:
        b1, b2 = month_boundaries(raw.timestamps, *split["months"])
    steps = spec.get("pipeline", "synthetic")
    if isinstance(steps, str):
        steps = PIPELINE_PRESETS[steps]
    transformed, fp = fit_pipeline(raw.values, steps, b1)
    off = fp.offset
    exog = None
    if spec.get("use_exogenous") and raw.exog is not None:
        cut = raw.exog[off:]
        cols = [zscore_apply(cut[:, j], zscore_stats(cut[:b1 - off, j]))
                for j in range(cut.shape[1])]
        exog = np.column_stack(cols)
    ds = build_supervised(transformed, exog, int(spec["tf"]),
                          (b1 - off, b2 - off))
    ds.pipeline = fp
    return ds


def load_csv_task(spec: dict):
    """Ingest and assemble a CSV-backed task from one spec dict."""
    schema = CsvSchema(
        timestamp=spec.get("timestamp", "timestamp"),
        target=spec.get("target", "value"),
        exogenous=tuple(spec.get("exogenous", ())),
        corrupted_marker=spec.get("corrupted_marker"),
        grid=(timedelta(hours=spec["grid_hours"])
              if spec.get("grid_hours") else None),
    )
    raw = load_csv(spec["path"], schema)
    return dataset_from_raw(raw, spec)
