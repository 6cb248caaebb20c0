"""Loss, truncated backpropagation through time, optimizers, and training.

Training slices a sequence into consecutive blocks of tau_f steps. At the end
of each block (an "event") the squared error averaged over the block's
non-transient steps, plus the regularization penalty, is backpropagated at
most tau_b steps into the past with weights tied across time, and one
optimizer update is applied. `bptt_gradients` returns the mean of the
per-event gradients, so with tau_b = T and tau_f = 1 it reproduces the
gradient of the fully unrolled network exactly.

Models pair a recurrent cell with a linear readout. The ERNN already carries
its own readout (Who, bo); LSTM and GRU blocks get an external readout
y = (block_output + bout) @ Wout, mirroring the ERNN's pre-bias convention.

Backward passes are compiled with numba: the per-step matvec loops dominate
the runtime and plain numpy spends it on temporary allocations.
"""

import csv
import dataclasses
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from numba import njit

from .cells import (
    DropoutMasks,
    ErnnParams,
    GruParams,
    LstmParams,
    SequenceCache,
    _ernn_fwd,
    _gru_fwd,
    _lstm_fwd,
    ernn_forward,
    gru_forward,
    init_ernn,
    init_gru,
    init_lstm,
    init_weights,
    lstm_forward,
)
from .numerics import RngStream

# ---------------------------------------------------------------------------
# loss and regularization


def mse(y: np.ndarray, ystar: np.ndarray) -> float:
    """Mean of squared elementwise differences."""
    y = np.asarray(y, dtype=float)
    ystar = np.asarray(ystar, dtype=float)
    if y.shape != ystar.shape:
        raise ValueError(f"mse: shape mismatch {y.shape} vs {ystar.shape}")
    if y.size == 0:
        raise ValueError("mse: empty input")
    return float(np.mean((y - ystar) ** 2))


@dataclass(frozen=True)
class LossConfig:
    """Elastic-net weights and dropout probability for the training loss."""

    lambda1: float = 0.0
    lambda2: float = 0.0
    p_drop: float = 0.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("LossConfig: lambda1 and lambda2 must be >= 0")
        if not 0.0 <= self.p_drop < 1.0:
            raise ValueError("LossConfig: p_drop must lie in [0, 1)")


Tree = Union[np.ndarray, dict]


def _tmap(fn, *trees):
    if isinstance(trees[0], dict):
        return {k: fn(*(t[k] for t in trees)) for k in trees[0]}
    return fn(*trees)


def _tree_arrays(tree: Tree):
    return tree.values() if isinstance(tree, dict) else (tree,)


def reg_penalty(params: Tree, cfg: LossConfig) -> float:
    """lambda1 * sum|w| + lambda2 * sum w^2 over every array in `params`."""
    total = 0.0
    for a in _tree_arrays(params):
        a = np.asarray(a, dtype=float)
        if cfg.lambda1:
            total += cfg.lambda1 * np.abs(a).sum()
        if cfg.lambda2:
            total += cfg.lambda2 * np.square(a).sum()
    return float(total)


def reg_gradient(params: Tree, cfg: LossConfig) -> Tree:
    """Gradient of reg_penalty; subgradient sign(0) = 0 for the L1 term."""
    def one(a):
        a = np.asarray(a, dtype=float)
        return cfg.lambda1 * np.sign(a) + 2.0 * cfg.lambda2 * a

    return _tmap(one, params)


def sample_dropout_masks(dims: tuple[int, int], p_drop: float, rng) -> DropoutMasks:
    """Bernoulli keep-masks, one entry per input/recurrent unit.

    Entries are 0 (dropped) or 1/(1-p_drop) (kept, pre-scaled so inference
    runs unmasked). Masks stay fixed for every timestep of a sequence; the
    caller resamples once per epoch.
    """
    if not 0.0 <= p_drop < 1.0:
        raise ValueError("sample_dropout_masks: p_drop must lie in [0, 1)")
    ni, nh = dims
    if p_drop == 0.0:
        return DropoutMasks(np.ones(ni), np.ones(nh))
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    keep = 1.0 - p_drop
    im = (gen.random(ni) < keep).astype(float) / keep
    rm = (gen.random(nh) < keep).astype(float) / keep
    return DropoutMasks(im, rm)


# ---------------------------------------------------------------------------
# models: cell + linear readout


@dataclass
class LstmModel:
    cell: LstmParams
    Wout: np.ndarray  # (nh, no)
    bout: np.ndarray  # (nh,)


@dataclass
class GruModel:
    cell: GruParams
    Wout: np.ndarray
    bout: np.ndarray


TrainedModel = Union[ErnnParams, LstmModel, GruModel]

CELL_KINDS = ("ernn", "lstm", "gru")


def init_model(kind: str, ni: int, nh: int, no: int, rng) -> TrainedModel:
    """Fresh model with uniform [0, 1/sqrt(nh)] weights and zero biases."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    if kind == "ernn":
        return init_ernn(ni, nh, no, gen)
    if kind == "lstm":
        cell = init_lstm(ni, nh, gen)
    elif kind == "gru":
        cell = init_gru(ni, nh, gen)
    else:
        raise ValueError(f"unknown cell kind {kind!r}")
    Wout = init_weights((nh, no), nh, gen)
    bout = np.zeros(nh)
    cls = LstmModel if kind == "lstm" else GruModel
    return cls(cell=cell, Wout=Wout, bout=bout)


def model_kind(model: TrainedModel) -> str:
    if isinstance(model, ErnnParams):
        return "ernn"
    return "lstm" if isinstance(model, LstmModel) else "gru"


def model_forward(
    model: TrainedModel,
    x_seq: np.ndarray,
    masks: DropoutMasks | None = None,
) -> tuple[np.ndarray, SequenceCache]:
    """Readout-applied forward pass; returns (y (T, No), cell cache)."""
    if isinstance(model, ErnnParams):
        return ernn_forward(model, x_seq, masks=masks)
    if isinstance(model, LstmModel):
        yb, cache = lstm_forward(model.cell, x_seq, masks=masks)
        return (yb + model.bout) @ model.Wout, cache
    yb, cache = gru_forward(model.cell, x_seq, masks=masks)
    return (yb + model.bout) @ model.Wout, cache


def model_to_tree(model: TrainedModel) -> dict[str, np.ndarray]:
    """Named view of every trainable array (shared, not copied)."""
    if isinstance(model, ErnnParams):
        return {f.name: getattr(model, f.name) for f in dataclasses.fields(model)}
    tree = {f.name: getattr(model.cell, f.name) for f in dataclasses.fields(model.cell)}
    tree["Wout"] = model.Wout
    tree["bout"] = model.bout
    return tree


def tree_to_model(tree: dict[str, np.ndarray], kind: str) -> TrainedModel:
    if kind == "ernn":
        return ErnnParams(**tree)
    rest = {k: v for k, v in tree.items() if k not in ("Wout", "bout")}
    cell = LstmParams(**rest) if kind == "lstm" else GruParams(**rest)
    cls = LstmModel if kind == "lstm" else GruModel
    return cls(cell=cell, Wout=tree["Wout"], bout=tree["bout"])


def model_to_dict(model: TrainedModel) -> dict:
    return {
        "kind": model_kind(model),
        "arrays": {k: v.tolist() for k, v in model_to_tree(model).items()},
    }


def model_from_dict(d: dict) -> TrainedModel:
    tree = {k: np.asarray(v, dtype=float) for k, v in d["arrays"].items()}
    return tree_to_model(tree, d["kind"])


# ---------------------------------------------------------------------------
# training schedule and event layout


@dataclass(frozen=True)
class TrainSchedule:
    """Truncated-BPTT window geometry: backprop tau_b steps every tau_f steps."""

    tau_b: int
    tau_f: int
    epochs: int = 0
    clip_threshold: float | None = None
    transient_discard: int = 0

    def __post_init__(self):
        if self.tau_f < 1 or self.tau_b < self.tau_f:
            raise ValueError("TrainSchedule: need 1 <= tau_f <= tau_b")
        if self.transient_discard < 0 or self.epochs < 0:
            raise ValueError("TrainSchedule: negative epochs or transient_discard")
        if self.clip_threshold is not None and self.clip_threshold <= 0:
            raise ValueError("TrainSchedule: clip_threshold must be positive")


def _build_events(T: int, sched: TrainSchedule) -> np.ndarray:
    """Rows (window_start, inject_start, end) for each loss-carrying block."""
    rows = []
    s = 0
    while s < T:
        e = min(s + sched.tau_f, T)
        inj = max(s, sched.transient_discard)
        if inj < e:
            rows.append((max(0, e - sched.tau_b), inj, e))
        s = e
    return np.asarray(rows, dtype=np.int64).reshape(-1, 3)


# ---------------------------------------------------------------------------
# compiled backward kernels (one window per event, summed over events)


@njit(cache=True)
def _ernn_bwd(x, H, h0, Wih, Whh, Who, bi, bh, bo, im, rm, DY, events):
    ni, nh = Wih.shape
    no = Who.shape[1]
    gWih = np.zeros((ni, nh))
    gWhh = np.zeros((nh, nh))
    gWho = np.zeros((nh, no))
    gbi = np.zeros(ni)
    gbh = np.zeros(nh)
    gbo = np.zeros(nh)
    for ev in range(events.shape[0]):
        w0, inj, end = events[ev, 0], events[ev, 1], events[ev, 2]
        carry = np.zeros(nh)
        for t in range(end - 1, w0 - 1, -1):
            dh = carry.copy()
            if t >= inj:
                gy = DY[t]
                hb = H[t] + bo
                for i in range(nh):
                    for j in range(no):
                        gWho[i, j] += hb[i] * gy[j]
                back = np.dot(Who, gy)
                gbo += back
                dh += back
            dpre = dh * (1.0 - H[t] * H[t])
            h_prev = h0 if t == 0 else H[t - 1]
            a = (x[t] + bi) * im
            r = (h_prev + bh) * rm
            for i in range(ni):
                ai = a[i]
                if ai != 0.0:
                    for j in range(nh):
                        gWih[i, j] += ai * dpre[j]
            for i in range(nh):
                ri = r[i]
                if ri != 0.0:
                    for j in range(nh):
                        gWhh[i, j] += ri * dpre[j]
            gbi += np.dot(Wih, dpre) * im
            carry = np.dot(Whh, dpre) * rm
            gbh += carry
    return gWih, gWhh, gWho, gbi, gbh, gbo


@njit(cache=True)
def _lstm_bwd(x, F, U, O, G, C, Yb, h0, y0,
              Wf, Wh, Wu, Wo, Rf, Rh, Ru, Ro, im, rm, DYB, events):
    ni, nh = Wf.shape
    gWf = np.zeros((ni, nh)); gWh = np.zeros((ni, nh))
    gWu = np.zeros((ni, nh)); gWo = np.zeros((ni, nh))
    gRf = np.zeros((nh, nh)); gRh = np.zeros((nh, nh))
    gRu = np.zeros((nh, nh)); gRo = np.zeros((nh, nh))
    gbf = np.zeros(nh); gbh = np.zeros(nh)
    gbu = np.zeros(nh); gbo = np.zeros(nh)
    for ev in range(events.shape[0]):
        w0, inj, end = events[ev, 0], events[ev, 1], events[ev, 2]
        dy = np.zeros(nh)
        dc = np.zeros(nh)
        for t in range(end - 1, w0 - 1, -1):
            dyb = dy.copy()
            if t >= inj:
                dyb += DYB[t]
            q = np.tanh(C[t])
            c_prev = h0 if t == 0 else C[t - 1]
            y_prev = y0 if t == 0 else Yb[t - 1]
            do = dyb * q
            dcell = dyb * O[t] * (1.0 - q * q) + dc
            dg = dcell * U[t]
            du = dcell * G[t]
            df = dcell * c_prev
            dc = dcell * F[t]
            dpf = df * F[t] * (1.0 - F[t])
            dpu = du * U[t] * (1.0 - U[t])
            dpo = do * O[t] * (1.0 - O[t])
            dpg = dg * (1.0 - G[t] * G[t])
            a = x[t] * im
            rv = y_prev * rm
            for i in range(ni):
                ai = a[i]
                if ai != 0.0:
                    for j in range(nh):
                        gWf[i, j] += ai * dpf[j]
                        gWh[i, j] += ai * dpg[j]
                        gWu[i, j] += ai * dpu[j]
                        gWo[i, j] += ai * dpo[j]
            for i in range(nh):
                ri = rv[i]
                if ri != 0.0:
                    for j in range(nh):
                        gRf[i, j] += ri * dpf[j]
                        gRh[i, j] += ri * dpg[j]
                        gRu[i, j] += ri * dpu[j]
                        gRo[i, j] += ri * dpo[j]
            gbf += dpf; gbh += dpg; gbu += dpu; gbo += dpo
            dy = (np.dot(Rf, dpf) + np.dot(Rh, dpg)
                  + np.dot(Ru, dpu) + np.dot(Ro, dpo)) * rm
    return gWf, gWh, gWu, gWo, gRf, gRh, gRu, gRo, gbf, gbh, gbu, gbo


@njit(cache=True)
def _gru_bwd(x, R, U, Z, H, h0, Wr, Wz, Wu, Rr, Rz, Ru, im, rm, DH, events):
    nh = Wr.shape[0]
    ni = Rr.shape[0]
    gWr = np.zeros((nh, nh)); gWz = np.zeros((nh, nh)); gWu = np.zeros((nh, nh))
    gRr = np.zeros((ni, nh)); gRz = np.zeros((ni, nh)); gRu = np.zeros((ni, nh))
    gbr = np.zeros(nh); gbz = np.zeros(nh); gbu = np.zeros(nh)
    for ev in range(events.shape[0]):
        w0, inj, end = events[ev, 0], events[ev, 1], events[ev, 2]
        carry = np.zeros(nh)
        for t in range(end - 1, w0 - 1, -1):
            dh = carry.copy()
            if t >= inj:
                dh += DH[t]
            h_prev = h0 if t == 0 else H[t - 1]
            du = dh * (Z[t] - h_prev)
            dz = dh * U[t]
            dpz = dz * (1.0 - Z[t] * Z[t])
            dhr = np.dot(Wz, dpz) * rm
            dr = dhr * h_prev
            dpr = dr * R[t] * (1.0 - R[t])
            dpu = du * U[t] * (1.0 - U[t])
            carry = (dh * (1.0 - U[t]) + dhr * R[t]
                     + np.dot(Wr, dpr) * rm + np.dot(Wu, dpu) * rm)
            a = x[t] * im
            hm = h_prev * rm
            hrm = (h_prev * R[t]) * rm
            for i in range(nh):
                hi = hm[i]
                if hi != 0.0:
                    for j in range(nh):
                        gWr[i, j] += hi * dpr[j]
                        gWu[i, j] += hi * dpu[j]
                hri = hrm[i]
                if hri != 0.0:
                    for j in range(nh):
                        gWz[i, j] += hri * dpz[j]
            for i in range(ni):
                ai = a[i]
                if ai != 0.0:
                    for j in range(nh):
                        gRr[i, j] += ai * dpr[j]
                        gRz[i, j] += ai * dpz[j]
                        gRu[i, j] += ai * dpu[j]
            gbr += dpr; gbz += dpz; gbu += dpu
    return gWr, gWz, gWu, gRr, gRz, gRu, gbr, gbz, gbu


# ---------------------------------------------------------------------------
# gradient assembly


def _model_outputs(model: TrainedModel, cache: SequenceCache) -> np.ndarray:
    if isinstance(model, ErnnParams):
        return cache.outputs
    return (cache.outputs + model.bout) @ model.Wout


def _injection_rows(
    model: TrainedModel,
    cache: SequenceCache,
    targets: np.ndarray,
    events: np.ndarray,
) -> np.ndarray:
    """Per-step dL_event/dy rows: 2(y - y*)/(m * no) inside injected spans.

    Each step belongs to at most one event, so the rows computed for the
    full event set stay valid when the backward pass visits any subset.
    """
    outputs = _model_outputs(model, cache)
    no = outputs.shape[1]
    w = np.zeros(len(cache))
    for _, inj, end in events:
        w[inj:end] = 1.0 / (end - inj)
    return (2.0 / no) * (outputs - targets) * w[:, None]


def _raw_event_grads(
    model: TrainedModel,
    cache: SequenceCache,
    GY: np.ndarray,
    DYB: np.ndarray | None,
    events: np.ndarray,
) -> dict[str, np.ndarray]:
    """Sum over `events` of per-event gradients; no mean, no regularization.

    GY holds the loss derivative rows on each event's injected span. DYB is
    a (T, nh) scratch buffer for the readout backprojection (unused for the
    ERNN); only the injected spans of the passed events are (re)written.
    """
    im, rm = cache.input_mask, cache.recurrent_mask

    if isinstance(model, ErnnParams):
        parts = _ernn_bwd(cache.x, cache.states, cache.h0,
                          model.Wih, model.Whh, model.Who,
                          model.bi, model.bh, model.bo, im, rm, GY, events)
        names = ("Wih", "Whh", "Who", "bi", "bh", "bo")
        return dict(zip(names, parts))

    for _, inj, end in events:
        DYB[inj:end] = GY[inj:end] @ model.Wout.T
    if isinstance(model, LstmModel):
        c = model.cell
        g = cache.gates
        parts = _lstm_bwd(cache.x, g["f"], g["u"], g["o"], g["g"],
                          cache.states, cache.outputs, cache.h0, cache.y0,
                          c.Wf, c.Wh, c.Wu, c.Wo, c.Rf, c.Rh, c.Ru, c.Ro,
                          im, rm, DYB, events)
        names = ("Wf", "Wh", "Wu", "Wo", "Rf", "Rh", "Ru", "Ro",
                 "bf", "bh", "bu", "bo")
    else:
        c = model.cell
        g = cache.gates
        parts = _gru_bwd(cache.x, g["r"], g["u"], g["z"], cache.states,
                         cache.h0, c.Wr, c.Wz, c.Wu, c.Rr, c.Rz, c.Ru,
                         im, rm, DYB, events)
        names = ("Wr", "Wz", "Wu", "Rr", "Rz", "Ru", "br", "bz", "bu")
    grads = dict(zip(names, parts))
    yb_b = cache.outputs + model.bout
    gWout = np.zeros_like(model.Wout)
    gbout = np.zeros_like(model.bout)
    for _, inj, end in events:
        gWout += yb_b[inj:end].T @ GY[inj:end]
        gbout += DYB[inj:end].sum(axis=0)
    grads["Wout"] = gWout
    grads["bout"] = gbout
    return grads


def _grads_for_events(
    model: TrainedModel,
    cache: SequenceCache,
    targets: np.ndarray,
    cfg: LossConfig,
    events: np.ndarray,
    GY: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Mean over `events` of per-event gradients, plus regularization."""
    n_ev = events.shape[0]
    tree = model_to_tree(model)
    if n_ev == 0:
        return reg_gradient(tree, cfg)
    if GY is None:
        GY = _injection_rows(model, cache, targets, events)
    DYB = None
    if not isinstance(model, ErnnParams):
        DYB = np.zeros((len(cache), model.Wout.shape[0]))
    grads = _raw_event_grads(model, cache, GY, DYB, events)
    reg = reg_gradient(tree, cfg)
    return {k: grads[k] / n_ev + reg[k] for k in tree}


def bptt_gradients(
    model: TrainedModel,
    cache: SequenceCache,
    targets: np.ndarray,
    sched: TrainSchedule,
    cfg: LossConfig,
) -> dict[str, np.ndarray]:
    """Mean over events of the per-event truncated gradients, plus reg.

    With tau_b = T and tau_f = 1 this equals the exact gradient of
    mse(outputs[discard:], targets[discard:]) + reg_penalty.
    """
    T = len(cache)
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    if targets.shape[0] != T:
        raise ValueError("bptt_gradients: targets length must match cache")
    if sched.tau_b > T:
        raise ValueError("bptt_gradients: window exceeds available history")
    return _grads_for_events(model, cache, targets, cfg, _build_events(T, sched))


def bptt_loss(
    model: TrainedModel,
    x_seq: np.ndarray,
    targets: np.ndarray,
    sched: TrainSchedule,
    cfg: LossConfig,
    masks: DropoutMasks | None = None,
) -> float:
    """The scalar objective bptt_gradients differentiates (at tau_b >= T)."""
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    y, cache = model_forward(model, x_seq, masks=masks)
    events = _build_events(len(cache), sched)
    if events.shape[0] == 0:
        return reg_penalty(model_to_tree(model), cfg)
    per_event = [mse(y[inj:end], targets[inj:end]) for _, inj, end in events]
    return float(np.mean(per_event)) + reg_penalty(model_to_tree(model), cfg)


def gradient_norm_profile(
    model: TrainedModel,
    cache: SequenceCache,
    targets: np.ndarray,
) -> np.ndarray:
    """Norm of the loss gradient at the final step w.r.t. each past state.

    Entry j is ||dL[T-1]/d state[T-1-j]|| where the derivative flows through
    the state-to-state chain only, the quantity whose product of Jacobians
    vanishes or explodes with lag.
    """
    T = len(cache)
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    y = _model_outputs(model, cache)
    no = y.shape[1]
    gy = (2.0 / no) * (y[T - 1] - targets[T - 1])
    norms = np.empty(T)
    rm = cache.recurrent_mask

    if isinstance(model, ErnnParams):
        d = model.Who @ gy
        norms[0] = np.linalg.norm(d)
        for j in range(1, T):
            t = T - j  # step whose Jacobian we cross
            d = (model.Whh @ (d * (1.0 - cache.states[t] ** 2))) * rm
            norms[j] = np.linalg.norm(d)
    elif isinstance(model, LstmModel):
        q = np.tanh(cache.states[T - 1])
        d = (model.Wout @ gy) * cache.gates["o"][T - 1] * (1.0 - q * q)
        norms[0] = np.linalg.norm(d)
        for j in range(1, T):
            d = d * cache.gates["f"][T - j]
            norms[j] = np.linalg.norm(d)
    else:
        d = model.Wout @ gy
        norms[0] = np.linalg.norm(d)
        R, U, Z, H = (cache.gates["r"], cache.gates["u"], cache.gates["z"],
                      cache.states)
        c = model.cell
        for j in range(1, T):
            t = T - j
            h_prev = cache.h0 if t == 0 else H[t - 1]
            du = d * (Z[t] - h_prev)
            dpz = d * U[t] * (1.0 - Z[t] ** 2)
            dhr = (c.Wz @ dpz) * rm
            dpr = dhr * h_prev * R[t] * (1.0 - R[t])
            dpu = du * U[t] * (1.0 - U[t])
            d = (d * (1.0 - U[t]) + dhr * R[t]
                 + (c.Wr @ dpr) * rm + (c.Wu @ dpu) * rm)
            norms[j] = np.linalg.norm(d)
    return norms


def clip_gradient(g: Tree, threshold: float) -> Tree:
    """Rescale to global norm `threshold` when exceeded; direction kept."""
    if threshold <= 0:
        raise ValueError("clip_gradient: threshold must be positive")
    sq = sum(float(np.square(a).sum()) for a in _tree_arrays(g))
    norm = np.sqrt(sq)
    if norm <= threshold:
        return g
    scale = threshold / norm
    return _tmap(lambda a: a * scale, g)


# ---------------------------------------------------------------------------
# optimizers


@dataclass(frozen=True)
class OptimizerState:
    """Strategy tag plus every accumulator any of the update rules needs."""

    strategy: str
    eta0: float
    mu: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    delta: float = 0.01
    schedule: str = "constant"
    alpha: float = 0.0
    k: int = 0
    velocity: Tree | None = None
    sq: Tree | None = None
    m: Tree | None = None
    v: Tree | None = None


STRATEGIES = ("sgd", "momentum", "nesterov", "adagrad", "rmsprop", "adam")


def make_optimizer(strategy: str, eta0: float, schedule: str = "constant",
                   alpha: float = 0.0, **kw) -> OptimizerState:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown optimizer {strategy!r}")
    if eta0 <= 0:
        raise ValueError("learning rate must be positive")
    return OptimizerState(strategy=strategy, eta0=eta0,
                          schedule=schedule, alpha=alpha, **kw)


def lr_schedule(state: OptimizerState, k: int) -> float:
    """Learning rate after k parameter updates."""
    if state.schedule == "constant" or state.alpha == 0.0:
        return state.eta0
    if state.schedule == "fractional":
        return state.eta0 / (1.0 + state.alpha * k)
    if state.schedule == "exponential":
        return state.eta0 * np.exp(-state.alpha * k)
    raise ValueError(f"unknown schedule {state.schedule!r}")


def _check_finite(g: Tree):
    for a in _tree_arrays(g):
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite gradient")


def _zeros_like(g: Tree) -> Tree:
    return _tmap(np.zeros_like, g)


def sgd_step(state: OptimizerState, params: Tree, g: Tree):
    _check_finite(g)
    lr = lr_schedule(state, state.k)
    new = _tmap(lambda p, gg: p - lr * gg, params, g)
    return new, dataclasses.replace(state, k=state.k + 1)


def momentum_step(state: OptimizerState, params: Tree, g: Tree):
    _check_finite(g)
    lr = lr_schedule(state, state.k)
    vel = state.velocity if state.velocity is not None else _zeros_like(g)
    vel = _tmap(lambda v, gg: state.mu * v - lr * gg, vel, g)
    new = _tmap(lambda p, v: p + v, params, vel)
    return new, dataclasses.replace(state, k=state.k + 1, velocity=vel)


def nesterov_lookahead(state: OptimizerState, params: Tree) -> Tree:
    """Point where the Nesterov gradient must be evaluated: params + mu*V."""
    if state.velocity is None:
        return params
    return _tmap(lambda p, v: p + state.mu * v, params, state.velocity)


def nesterov_step(state: OptimizerState, params: Tree, g: Tree):
    """Same velocity update as momentum; `g` is taken at the lookahead point."""
    return momentum_step(state, params, g)


def adagrad_step(state: OptimizerState, params: Tree, g: Tree):
    _check_finite(g)
    lr = lr_schedule(state, state.k)
    sq = state.sq if state.sq is not None else _zeros_like(g)
    sq = _tmap(lambda s, gg: s + gg * gg, sq, g)
    new = _tmap(lambda p, gg, s: p - lr * gg / (np.sqrt(s) + state.eps),
                params, g, sq)
    return new, dataclasses.replace(state, k=state.k + 1, sq=sq)


def rmsprop_step(state: OptimizerState, params: Tree, g: Tree):
    _check_finite(g)
    lr = lr_schedule(state, state.k)
    sq = state.sq if state.sq is not None else _zeros_like(g)
    sq = _tmap(lambda s, gg: (1.0 - state.delta) * s + state.delta * gg * gg,
               sq, g)
    new = _tmap(lambda p, gg, s: p - lr * gg / (np.sqrt(s) + state.eps),
                params, g, sq)
    return new, dataclasses.replace(state, k=state.k + 1, sq=sq)


def adam_step(state: OptimizerState, params: Tree, g: Tree):
    _check_finite(g)
    lr = lr_schedule(state, state.k)
    k1 = state.k + 1
    m = state.m if state.m is not None else _zeros_like(g)
    v = state.v if state.v is not None else _zeros_like(g)
    m = _tmap(lambda a, gg: state.beta1 * a + (1.0 - state.beta1) * gg, m, g)
    v = _tmap(lambda a, gg: state.beta2 * a + (1.0 - state.beta2) * gg * gg, v, g)
    c1 = 1.0 - state.beta1 ** k1
    c2 = 1.0 - state.beta2 ** k1
    new = _tmap(
        lambda p, mm, vv: p - lr * (mm / c1) / np.sqrt(vv / c2 + state.eps),
        params, m, v)
    return new, dataclasses.replace(state, k=k1, m=m, v=v)


_STEP_FNS = {
    "sgd": sgd_step,
    "momentum": momentum_step,
    "nesterov": nesterov_step,
    "adagrad": adagrad_step,
    "rmsprop": rmsprop_step,
    "adam": adam_step,
}


def apply_update(state: OptimizerState, params: Tree, g: Tree):
    return _STEP_FNS[state.strategy](state, params, g)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    """Hyperparameters for one gradient-trained run."""

    nh: int
    tau_f: int = 15
    tau_b: int | None = None  # defaults to 2 * tau_f
    epochs: int = 2000
    optimizer: str = "adam"
    eta0: float = 1e-3
    schedule: str = "constant"
    alpha: float = 0.0
    lambda1: float = 0.0
    lambda2: float = 0.0
    p_drop: float = 0.0
    clip_threshold: float | None = None
    transient_discard: int = 50

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"TrainConfig: unknown keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainHistory:
    rows: list[dict] = field(default_factory=list)
    failed: bool = False

    COLUMNS = ("epoch", "train_mse", "valid_mse", "learning_rate", "grad_norm")

    @property
    def final_valid(self) -> float:
        if self.failed or not self.rows:
            return float("inf")
        return self.rows[-1]["valid_mse"]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.COLUMNS)
            w.writeheader()
            w.writerows(self.rows)


def _tree_norm(g: Tree) -> float:
    return float(np.sqrt(sum(float(np.square(a).sum()) for a in _tree_arrays(g))))


def _as_columns(a) -> np.ndarray:
    """Coerce a series to (T, dim), treating 1-d input as one column."""
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def train(
    cell_kind: str,
    dataset,
    config: TrainConfig,
    rng: RngStream,
) -> tuple[TrainedModel, TrainHistory]:
    """Truncated-BPTT training of one recurrent model.

    `dataset` must expose train_x, train_y, valid_x, valid_y arrays of shape
    (T, dim). One optimizer update fires per loss event; the sequence cache
    is refreshed once per epoch. Validation runs with the state warmed by a
    pass over the training inputs. A non-finite loss marks the run failed
    (final_valid = inf) instead of raising.
    """
    train_x = _as_columns(dataset.train_x)
    train_y = _as_columns(dataset.train_y)
    valid_x = _as_columns(dataset.valid_x)
    valid_y = _as_columns(dataset.valid_y)
    T = train_x.shape[0]
    ni, no = train_x.shape[1], train_y.shape[1]

    tau_f = min(config.tau_f, T)
    tau_b = min(config.tau_b if config.tau_b is not None else 2 * tau_f, T)
    sched = TrainSchedule(
        tau_b=tau_b, tau_f=tau_f, epochs=config.epochs,
        clip_threshold=config.clip_threshold,
        transient_discard=min(config.transient_discard, max(T - tau_f, 0)),
    )
    cfg = LossConfig(config.lambda1, config.lambda2, config.p_drop)

    model = init_model(cell_kind, ni, config.nh, no, rng.child(0))
    kind = model_kind(model)
    state = make_optimizer(config.optimizer, config.eta0,
                           schedule=config.schedule, alpha=config.alpha)
    history = TrainHistory()

    for epoch in range(config.epochs):
        masks = None
        if cfg.p_drop > 0:
            masks = sample_dropout_masks((ni, config.nh), cfg.p_drop,
                                         rng.child(1).child(epoch))
        # overflow inside a diverging run is handled by the finite checks,
        # not worth a warning per epoch
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                model, state, grad_norms = _stream_epoch(
                    model, kind, state, train_x, train_y, sched, cfg, masks)
            except FloatingPointError:
                history.failed = True
                break

            y_tr, cache_tr = model_forward(model, train_x)
            train_mse = mse(y_tr[sched.transient_discard:],
                            train_y[sched.transient_discard:])
            valid_mse = _warm_mse(model, cache_tr, valid_x, valid_y)
        if not (np.isfinite(train_mse) and np.isfinite(valid_mse)):
            history.failed = True
            break
        history.rows.append({
            "epoch": epoch,
            "train_mse": train_mse,
            "valid_mse": valid_mse,
            "learning_rate": lr_schedule(state, state.k),
            "grad_norm": float(np.mean(grad_norms)) if grad_norms else 0.0,
        })
    return model, history


def _stream_epoch(model, kind, state, train_x, train_y, sched, cfg, masks):
    """One pass of streaming truncated BPTT over the training sequence.

    The forward runs block by block with the latest parameters (the
    lookahead point for Nesterov), so every event's gradient is fresh;
    window history that predates the last update keeps its old activations,
    the usual online-BPTT compromise.
    """
    T, ni = train_x.shape
    no = train_y.shape[1]
    tree = model_to_tree(model)
    nh = tree["Wout"].shape[0] if "Wout" in tree else tree["Whh"].shape[0]
    if masks is None:
        im, rm = np.ones(ni), np.ones(nh)
    else:
        im, rm = masks.input_mask, masks.recurrent_mask

    h0 = np.zeros(nh)
    y0 = np.zeros(nh)
    states = np.zeros((T, nh))
    outputs = np.zeros((T, no if kind == "ernn" else nh))
    gate_names = {"ernn": (), "lstm": ("f", "u", "o", "g"), "gru": ("r", "u", "z")}
    gates = {name: np.zeros((T, nh)) for name in gate_names[kind]}
    GY = np.zeros((T, no))
    DYB = np.zeros((T, nh))
    h_run = h0
    y_run = y0
    grad_norms = []

    s = 0
    while s < T:
        e = min(s + sched.tau_f, T)
        if state.strategy == "nesterov":
            eval_tree = nesterov_lookahead(state, model_to_tree(model))
            eval_model = tree_to_model(eval_tree, kind)
        else:
            eval_model = model

        x_blk = train_x[s:e]
        if kind == "ernn":
            m = eval_model
            Hb, Yb = _ernn_fwd(x_blk, m.Wih, m.Whh, m.Who, m.bi, m.bh, m.bo,
                               h_run, im, rm)
            states[s:e], outputs[s:e] = Hb, Yb
            h_run = Hb[-1]
            y_blk = Yb
        elif kind == "lstm":
            c = eval_model.cell
            Fb, Ub, Ob, Gb, Cb, Ybb = _lstm_fwd(
                x_blk, c.Wf, c.Wh, c.Wu, c.Wo, c.Rf, c.Rh, c.Ru, c.Ro,
                c.bf, c.bh, c.bu, c.bo, h_run, y_run, im, rm)
            gates["f"][s:e], gates["u"][s:e] = Fb, Ub
            gates["o"][s:e], gates["g"][s:e] = Ob, Gb
            states[s:e], outputs[s:e] = Cb, Ybb
            h_run, y_run = Cb[-1], Ybb[-1]
            y_blk = (Ybb + eval_model.bout) @ eval_model.Wout
        else:
            c = eval_model.cell
            Rb, Ub, Zb, Hb = _gru_fwd(x_blk, c.Wr, c.Wz, c.Wu, c.Rr, c.Rz,
                                      c.Ru, c.br, c.bz, c.bu, h_run, im, rm)
            gates["r"][s:e], gates["u"][s:e], gates["z"][s:e] = Rb, Ub, Zb
            states[s:e], outputs[s:e] = Hb, Hb
            h_run = Hb[-1]
            y_blk = (Hb + eval_model.bout) @ eval_model.Wout

        inj = max(s, sched.transient_discard)
        if inj < e:
            event = np.array([[max(0, e - sched.tau_b), inj, e]], dtype=np.int64)
            GY[inj:e] = (2.0 / no) * (y_blk[inj - s:] - train_y[inj:e]) / (e - inj)
            cache = SequenceCache(kind, train_x, h0,
                                  y0 if kind == "lstm" else None,
                                  im, rm, states, outputs, gates)
            g = _raw_event_grads(eval_model, cache, GY, DYB, event)
            reg = reg_gradient(model_to_tree(eval_model), cfg)
            g = {k: g[k] + reg[k] for k in g}
            if sched.clip_threshold is not None:
                g = clip_gradient(g, sched.clip_threshold)
            grad_norms.append(_tree_norm(g))
            new_tree, state = apply_update(state, model_to_tree(model), g)
            model = tree_to_model(new_tree, kind)
        s = e
    return model, state, grad_norms


def _final_states(model: TrainedModel, cache: SequenceCache):
    """(h_end, y_end) to warm-start a continuation forward pass."""
    if isinstance(model, ErnnParams) or isinstance(model, GruModel):
        return cache.states[-1], None
    return cache.states[-1], cache.outputs[-1]


def predict_continue(
    model: TrainedModel,
    cache: SequenceCache,
    x_next: np.ndarray,
) -> np.ndarray:
    """Run the model over x_next starting from the cache's final state."""
    h_end, y_end = _final_states(model, cache)
    if isinstance(model, ErnnParams):
        y, _ = ernn_forward(model, x_next, h0=h_end)
        return y
    if isinstance(model, LstmModel):
        yb, _ = lstm_forward(model.cell, x_next, h0=h_end, y0=y_end)
    else:
        yb, _ = gru_forward(model.cell, x_next, h0=h_end)
    return (yb + model.bout) @ model.Wout


def _warm_mse(model, cache_train, valid_x, valid_y) -> float:
    y = predict_continue(model, cache_train, valid_x)
    return mse(y, valid_y)
