"""Benchmark generators, data ingestion, preprocessing, dataset assembly.

Preprocessing pipelines are exactly invertible on the region where inversion
is defined: every seasonal difference stores the ground-truth series entering
that step, so a window of model predictions can be walked back to the
original scale using only past observations.
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np
from scipy.interpolate import CubicSpline

from .numerics import RngStream

log = logging.getLogger(__name__)

FLAG_OK = 0
FLAG_MISSING = 1
FLAG_CORRUPTED = 2


# ---------------------------------------------------------------------------
# synthetic generators


def mg_derivative(x_now: float, x_delayed: float, alpha: float = 0.2,
                  beta: float = 0.1) -> float:
    """Right-hand side of the Mackey-Glass delay differential equation."""
    return alpha * x_delayed / (1.0 + x_delayed ** 10) - beta * x_now


def gen_mackey_glass(n: int, tau_mg: float = 17.0, alpha: float = 0.2,
                     beta: float = 0.1, x0: float = 1.2, dt: float = 0.1,
                     sample_every: int = 10) -> np.ndarray:
    """Mackey-Glass series, RK4-integrated, one sample every `sample_every`
    integration steps (default: one time unit per sample).

    The history is constant x0 for t <= 0; delayed values at RK4 substages
    are read from the step grid by linear interpolation.
    """
    if n < 1 or dt <= 0 or sample_every < 1:
        raise ValueError("gen_mackey_glass: invalid size or step arguments")
    n_steps = (n - 1) * sample_every
    grid = np.empty(n_steps + 1)
    grid[0] = x0

    def delayed(t: float) -> float:
        if t <= 0.0:
            return x0
        pos = t / dt
        lo = int(np.floor(pos))
        hi = min(lo + 1, n_steps)
        frac = pos - lo
        return (1.0 - frac) * grid[lo] + frac * grid[hi] if frac else grid[lo]

    for i in range(n_steps):
        t = i * dt
        x = grid[i]
        k1 = mg_derivative(x, delayed(t - tau_mg), alpha, beta)
        k2 = mg_derivative(x + 0.5 * dt * k1, delayed(t + 0.5 * dt - tau_mg),
                           alpha, beta)
        k3 = mg_derivative(x + 0.5 * dt * k2, delayed(t + 0.5 * dt - tau_mg),
                           alpha, beta)
        k4 = mg_derivative(x + dt * k3, delayed(t + dt - tau_mg), alpha, beta)
        grid[i + 1] = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return grid[::sample_every].copy()


NARMA_DIVERGENCE_LIMIT = 1e3
_NARMA_RETRIES = 32


def gen_narma(n: int, r: int = 10, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """r-th order NARMA system driven by uniform noise, zero initial history.

    y(t+1) = 0.3 y(t) + 0.05 y(t) sum_{i=0..r-1} y(t-i)
             + 1.5 x(t-r) x(t) + 0.1,   x ~ U[0, 0.5]

    The classic r-term/half-unit-drive convention: wider drives or an
    (r+1)-term sum push the mean-field recursion past its largest fixed
    point and every draw diverges within tens of steps. As defined here the
    recursion diverges only for rare input draws; such draws regenerate
    from the next derived stream.
    """
    if n <= r:
        raise ValueError("gen_narma: need n > r")
    if rng is None:
        raise ValueError("gen_narma: rng required")
    base = rng if isinstance(rng, RngStream) else None
    for attempt in range(_NARMA_RETRIES):
        gen = (base.child(attempt).generator() if base is not None else rng)
        x = gen.uniform(0.0, 0.5, size=n)
        y = np.zeros(n)
        ok = True
        for t in range(n - 1):
            acc = y[max(t - r + 1, 0):t + 1].sum()
            x_lag = x[t - r] if t >= r else 0.0
            y[t + 1] = (0.3 * y[t] + 0.05 * y[t] * acc
                        + 1.5 * x_lag * x[t] + 0.1)
            if abs(y[t + 1]) > NARMA_DIVERGENCE_LIMIT:
                ok = False
                break
        if ok:
            return x, y
        if base is None:
            raise ValueError("gen_narma: diverged and no stream to redraw")
    raise ValueError("gen_narma: exceeded divergence retries")


MSO_FREQUENCIES = (0.2, 0.311, 0.42, 0.51)


def gen_mso(n: int) -> np.ndarray:
    """Sum of four incommensurate sinusoids at integer time points."""
    if n < 1:
        raise ValueError("gen_mso: n must be positive")
    t = np.arange(n)
    return sum(np.sin(phi * t) for phi in MSO_FREQUENCIES)


# ---------------------------------------------------------------------------
# raw data ingestion


@dataclass
class RawSeries:
    timestamps: list  # datetime objects, strictly increasing
    values: np.ndarray
    flags: np.ndarray  # int8, FLAG_* codes
    exog: np.ndarray = None  # (T, k) or None
    exog_names: tuple = ()

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.flags = np.asarray(self.flags, dtype=np.int8)
        if len(self.timestamps) != self.values.shape[0]:
            raise ValueError("RawSeries: timestamp/value length mismatch")
        if self.values.shape[0] != self.flags.shape[0]:
            raise ValueError("RawSeries: value/flag length mismatch")
        if self.exog is not None:
            self.exog = np.asarray(self.exog, dtype=float)
            if self.exog.shape[0] != self.values.shape[0]:
                raise ValueError("RawSeries: exogenous length mismatch")


@dataclass(frozen=True)
class CsvSchema:
    timestamp: str
    target: str
    exogenous: tuple = ()
    corrupted_marker: float = None  # e.g. -1.0
    grid: timedelta = None  # expected spacing; gaps become missing rows


def load_csv(path, schema: CsvSchema) -> RawSeries:
    """Parse a header CSV into a flagged series on a regular grid.

    Corrupted-marker values get FLAG_CORRUPTED; rows absent from the
    declared grid are inserted as zeros with FLAG_MISSING. Malformed rows
    are reported with their line number.
    """
    with open(path, newline="") as fh:
        # an optional leading "# {...}" line carries run metadata
        first = fh.readline()
        skipped = 1 if first.startswith("#") else 0
        if not skipped:
            fh.seek(0)
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        try:
            t_col = header.index(schema.timestamp)
            v_col = header.index(schema.target)
            e_cols = [header.index(c) for c in schema.exogenous]
        except ValueError as exc:
            raise ValueError(f"{path}: missing column: {exc}") from exc
        times, vals, exogs = [], [], []
        for lineno, row in enumerate(reader, start=2 + skipped):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: ragged row")
            try:
                ts = datetime.fromisoformat(row[t_col])
            except ValueError as exc:
                raise ValueError(
                    f"{path}:{lineno}: bad timestamp {row[t_col]!r}") from exc
            try:
                v = float(row[v_col])
                e = [float(row[c]) for c in e_cols]
            except ValueError as exc:
                raise ValueError(
                    f"{path}:{lineno}: unparsable number") from exc
            if times and ts <= times[-1]:
                raise ValueError(
                    f"{path}:{lineno}: non-monotone timestamp {ts}")
            times.append(ts)
            vals.append(v)
            exogs.append(e)
    if not times:
        raise ValueError(f"{path}: no data rows")
    k = len(schema.exogenous)
    out_t, out_v, out_f, out_e = [], [], [], []

    def emit(ts, v, flag, e):
        out_t.append(ts)
        out_v.append(v)
        out_f.append(flag)
        out_e.append(e)

    for i, (ts, v, e) in enumerate(zip(times, vals, exogs)):
        if schema.grid is not None and i > 0:
            expect = out_t[-1] + schema.grid
            while expect < ts:
                emit(expect, 0.0, FLAG_MISSING, [0.0] * k)
                expect = expect + schema.grid
        corrupt = (schema.corrupted_marker is not None
                   and v == schema.corrupted_marker)
        emit(ts, v, FLAG_CORRUPTED if corrupt else FLAG_OK, e)
    exog = np.asarray(out_e) if k else None
    return RawSeries(timestamps=out_t, values=np.asarray(out_v),
                     flags=np.asarray(out_f, dtype=np.int8), exog=exog,
                     exog_names=tuple(schema.exogenous))


def write_csv(path, s: RawSeries, timestamp: str = "timestamp",
              target: str = "value", meta: dict = None) -> None:
    """Export in the same schema load_csv reads.

    meta, if given, is embedded as a leading comment line that load_csv
    skips, keeping the data rows round-trippable.
    """
    with open(path, "w", newline="") as fh:
        if meta is not None:
            fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow([timestamp, target, *s.exog_names])
        for i, ts in enumerate(s.timestamps):
            row = [ts.isoformat(), repr(float(s.values[i]))]
            if s.exog is not None:
                row += [repr(float(v)) for v in s.exog[i]]
            w.writerow(row)


# ---------------------------------------------------------------------------
# imputation


def impute_adjacent_weeks(s: RawSeries, period_per_week: int) -> RawSeries:
    """Replace corrupted values by the mean of the same slot one week
    before and after; boundary weeks use the single available neighbor.

    Slots whose both neighbors are also corrupted fall back to the mean of
    the clean samples (reported via logging).
    """
    if period_per_week < 1:
        raise ValueError("impute_adjacent_weeks: bad period")
    bad = s.flags == FLAG_CORRUPTED
    if not bad.any():
        return s
    values = s.values.copy()
    flags = s.flags.copy()
    clean_mean = float(values[~bad].mean()) if (~bad).any() else 0.0
    T = values.shape[0]
    for i in np.flatnonzero(bad):
        neighbors = []
        for j in (i - period_per_week, i + period_per_week):
            if 0 <= j < T and not bad[j]:
                neighbors.append(values[j])
        if neighbors:
            values[i] = float(np.mean(neighbors))
        else:
            log.warning("impute_adjacent_weeks: slot %d has no clean "
                        "weekly neighbor; using series mean", i)
            values[i] = clean_mean
        flags[i] = FLAG_OK
    return RawSeries(timestamps=s.timestamps, values=values, flags=flags,
                     exog=s.exog, exog_names=s.exog_names)


def impute_spline(s: RawSeries) -> RawSeries:
    """Natural cubic spline through clean samples, evaluated at corrupted
    positions. Sample index is the abscissa (regular grid assumed)."""
    bad = s.flags == FLAG_CORRUPTED
    if not bad.any():
        return s
    idx = np.arange(s.values.shape[0], dtype=float)
    clean = ~bad
    if clean.sum() < 4:
        raise ValueError("impute_spline: need at least 4 clean points")
    spline = CubicSpline(idx[clean], s.values[clean], bc_type="natural")
    values = s.values.copy()
    values[bad] = spline(idx[bad])
    flags = s.flags.copy()
    flags[bad] = FLAG_OK
    return RawSeries(timestamps=s.timestamps, values=values, flags=flags,
                     exog=s.exog, exog_names=s.exog_names)


# ---------------------------------------------------------------------------
# elementary transforms


def log_transform(x) -> np.ndarray:
    """log(x + 1); admits the zero-filled missing entries."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= -1.0):
        raise ValueError("log_transform: values must exceed -1")
    return np.log1p(x)


def invert_log(y) -> np.ndarray:
    return np.expm1(np.asarray(y, dtype=float))


def seasonal_difference(x, s: int) -> np.ndarray:
    """d[t] = x[t] - x[t-s], length len(x) - s."""
    x = np.asarray(x, dtype=float)
    if s < 1 or x.shape[0] <= s:
        raise ValueError("seasonal_difference: series shorter than lag")
    return x[s:] - x[:-s]


def invert_seasonal(d, prefix) -> np.ndarray:
    """Rebuild x from differences and the stored s-sample prefix."""
    d = np.asarray(d, dtype=float)
    prefix = np.asarray(prefix, dtype=float)
    s = prefix.shape[0]
    out = np.concatenate([prefix, np.empty_like(d)])
    for t in range(d.shape[0]):
        out[s + t] = d[t] + out[t]
    return out


def zscore_stats(x_train) -> tuple[float, float]:
    x = np.asarray(x_train, dtype=float)
    std = float(x.std())
    if std == 0.0:
        raise ValueError("zscore_stats: constant training split")
    return float(x.mean()), std


def zscore_apply(x, stats) -> np.ndarray:
    mean, std = stats
    return (np.asarray(x, dtype=float) - mean) / std


def zscore_invert(z, stats) -> np.ndarray:
    mean, std = stats
    return np.asarray(z, dtype=float) * std + mean


def autocorrelation(x, max_lag: int) -> np.ndarray:
    """Biased sample autocorrelation, acf[0] = 1."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] <= max_lag:
        raise ValueError("autocorrelation: series shorter than max_lag")
    c = x - x.mean()
    denom = float(c @ c)
    if denom == 0.0:
        raise ValueError("autocorrelation: constant series, acf undefined")
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for k in range(1, max_lag + 1):
        out[k] = float(c[:-k] @ c[k:]) / denom
    return out


# ---------------------------------------------------------------------------
# preprocessing pipeline


def normalize_steps(steps) -> list[tuple]:
    """Accept 'log', 'zscore', 'diff:s' strings or tuple forms."""
    out = []
    for step in steps:
        if isinstance(step, str):
            if step == "log":
                out.append(("log",))
            elif step == "zscore":
                out.append(("zscore",))
            elif step.startswith("diff:"):
                out.append(("diff", int(step.split(":", 1)[1])))
            else:
                raise ValueError(f"unknown pipeline step {step!r}")
        else:
            kind = step[0]
            if kind == "diff":
                out.append(("diff", int(step[1])))
            elif kind in ("log", "zscore"):
                out.append((kind,))
            else:
                raise ValueError(f"unknown pipeline step {step!r}")
    return out


PIPELINE_PRESETS = {
    "synthetic": ("zscore",),
    "orange": ("log", "diff:24", "zscore"),
    "acea": ("diff:144", "zscore"),
    "gefcom": ("diff:24", "zscore"),
}


@dataclass
class FittedPipeline:
    steps: list  # normalized tuples
    records: list  # per-step fitted state
    offset: int  # leading raw samples consumed by differencing


def fit_pipeline(x, steps, train_len: int):
    """Apply steps in order, fitting statistics on the training region only.

    `train_len` counts raw samples; statistics for any z-score step use the
    transformed values whose raw index falls inside the training split.
    Returns (transformed, FittedPipeline).
    """
    x = np.asarray(x, dtype=float)
    steps = normalize_steps(steps)
    if not 0 < train_len <= x.shape[0]:
        raise ValueError("fit_pipeline: train_len out of range")
    cur = x
    offset = 0
    records = []
    for step in steps:
        if step[0] == "log":
            cur = log_transform(cur)
            records.append({})
        elif step[0] == "diff":
            s = step[1]
            records.append({"s": s, "stage": cur.copy()})
            cur = seasonal_difference(cur, s)
            offset += s
        else:  # zscore
            n_train = train_len - offset
            if n_train < 2:
                raise ValueError(
                    "fit_pipeline: training split exhausted by differencing")
            stats = zscore_stats(cur[:n_train])
            records.append({"stats": stats})
            cur = zscore_apply(cur, stats)
    return cur, FittedPipeline(steps=steps, records=records, offset=offset)


def invert_pipeline(fp: FittedPipeline, values, start: int) -> np.ndarray:
    """Walk a window of transformed values back to the original scale.

    `start` indexes the window in final transformed coordinates. Seasonal
    differences are undone against the stored ground-truth stage series, so
    only past observations enter the reconstruction.
    """
    v = np.asarray(values, dtype=float).copy()
    pos = start
    for step, rec in zip(reversed(fp.steps), reversed(fp.records)):
        if step[0] == "zscore":
            v = zscore_invert(v, rec["stats"])
        elif step[0] == "diff":
            s = rec["s"]
            stage = rec["stage"]
            hi = pos + v.shape[0]
            if pos < 0 or hi > stage.shape[0] - s:
                raise ValueError("invert_pipeline: window outside history")
            v = v + stage[pos:hi]
            pos += s
        else:
            v = invert_log(v)
    return v


# ---------------------------------------------------------------------------
# splits and supervised assembly


def fraction_boundaries(n: int, fractions) -> tuple[int, int]:
    """Floor for train and validation, remainder to test."""
    f_tr, f_va, f_te = fractions
    if abs(f_tr + f_va + f_te - 1.0) > 1e-9:
        raise ValueError("fraction_boundaries: fractions must sum to 1")
    b1 = int(np.floor(f_tr * n))
    b2 = b1 + int(np.floor(f_va * n))
    if b1 == 0 or b2 == b1 or b2 >= n:
        raise ValueError("fraction_boundaries: empty split")
    return b1, b2


def month_boundaries(timestamps, train_months: int,
                     valid_months: int) -> tuple[int, int]:
    """Boundaries at calendar month changes counted from the first sample."""
    months = [ts.year * 12 + (ts.month - 1) for ts in timestamps]
    first = months[0]
    idx = np.asarray(months) - first
    b1 = int(np.searchsorted(idx, train_months, side="left"))
    b2 = int(np.searchsorted(idx, train_months + valid_months, side="left"))
    if b1 == 0 or b2 == b1 or b2 >= len(timestamps):
        raise ValueError("month_boundaries: empty split")
    return b1, b2


@dataclass
class TaskDataset:
    train_x: np.ndarray
    train_y: np.ndarray
    valid_x: np.ndarray
    valid_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    tf: int
    boundaries: tuple
    pipeline: FittedPipeline = None

    def test_label_start(self) -> int:
        """Transformed-coordinate index of the first test label."""
        return self.boundaries[1] + self.tf


def build_supervised(target, exog, tf: int, boundaries) -> TaskDataset:
    """Pairs (input at t, target at t + tf); inputs are [target, exog].

    Pairs belong to the split containing their input index, so inputs never
    read values after their own time step.
    """
    target = np.asarray(target, dtype=float)
    if target.ndim == 1:
        target = target[:, None]
    T = target.shape[0]
    if not 1 <= tf < T:
        raise ValueError("build_supervised: horizon out of range")
    chans = [target]
    if exog is not None:
        exog = np.asarray(exog, dtype=float)
        if exog.ndim == 1:
            exog = exog[:, None]
        if exog.shape[0] != T:
            raise ValueError("build_supervised: exogenous length mismatch")
        chans.append(exog)
    x_all = np.hstack(chans)[:T - tf]
    y_all = target[tf:]
    b1, b2 = boundaries
    if not 0 < b1 < b2 < T:
        raise ValueError("build_supervised: bad boundaries")
    return TaskDataset(
        train_x=x_all[:b1], train_y=y_all[:b1],
        valid_x=x_all[b1:b2], valid_y=y_all[b1:b2],
        test_x=x_all[b2:], test_y=y_all[b2:],
        tf=tf, boundaries=(b1, b2),
    )
