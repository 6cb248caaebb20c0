"""Recurrent cell dynamics: Elman (ERNN), LSTM and GRU forward passes.

Conventions used throughout:

* vectors are rows, weights are (in_dim, out_dim), application is ``v @ W``;
* the Elman cell adds biases to the *inputs* of each weight matrix,
  h[t] = tanh(Wih(x[t]+bi) + Whh(h[t-1]+bh)), y[t] = Who(h[t]+bo),
  with a linear output map;
* LSTM recurrent matrices consume the previous block output y[t-1], not the
  cell state;
* GRU matrices named W* multiply the previous state and R* multiply the
  input. This reverses the common convention but is kept deliberately;
  renaming them would silently swap semantics on anyone comparing formulas.

The per-timestep loops are compiled with numba; at the typical scale
(hidden size <= 100, sequences of thousands of steps) interpreter overhead
would otherwise dominate the runtime.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Union

import numpy as np
from numba import njit

from .numerics import RngStream

__all__ = [
    "ErnnParams",
    "LstmParams",
    "GruParams",
    "DropoutMasks",
    "SequenceCache",
    "init_weights",
    "init_ernn",
    "init_lstm",
    "init_gru",
    "ernn_forward",
    "lstm_forward",
    "gru_forward",
    "params_to_dict",
    "params_from_dict",
]


@dataclass
class ErnnParams:
    Wih: np.ndarray  # (Ni, Nh)
    Whh: np.ndarray  # (Nh, Nh)
    Who: np.ndarray  # (Nh, No)
    bi: np.ndarray   # (Ni,)
    bh: np.ndarray   # (Nh,)
    bo: np.ndarray   # (Nh,)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.Wih.shape[0], self.Whh.shape[0], self.Who.shape[1]


@dataclass
class LstmParams:
    # input weights (Ni, Nh), one per gate / candidate
    Wf: np.ndarray
    Wh: np.ndarray
    Wu: np.ndarray
    Wo: np.ndarray
    # recurrent weights (Nh, Nh) applied to the previous block output
    Rf: np.ndarray
    Rh: np.ndarray
    Ru: np.ndarray
    Ro: np.ndarray
    bf: np.ndarray
    bh: np.ndarray
    bu: np.ndarray
    bo: np.ndarray

    @property
    def dims(self) -> tuple[int, int]:
        return self.Wf.shape[0], self.Rf.shape[0]


@dataclass
class GruParams:
    # W* act on the previous state (Nh, Nh); R* act on the input (Ni, Nh)
    Wr: np.ndarray
    Wz: np.ndarray
    Wu: np.ndarray
    Rr: np.ndarray
    Rz: np.ndarray
    Ru: np.ndarray
    br: np.ndarray
    bz: np.ndarray
    bu: np.ndarray

    @property
    def dims(self) -> tuple[int, int]:
        return self.Rr.shape[0], self.Wr.shape[0]


@dataclass
class DropoutMasks:
    """Connection dropout masks, constant across the timesteps of a sequence.

    Entries are 0 (dropped) or 1/(1-p_drop) (retained, pre-scaled so that
    inference runs on the raw weights with no rescaling).
    """

    input_mask: np.ndarray      # (Ni,)
    recurrent_mask: np.ndarray  # (Nh,)


@dataclass
class SequenceCache:
    """Everything the backward pass needs to replay one forward pass."""

    kind: str                   # "ernn" | "lstm" | "gru"
    x: np.ndarray               # (T, Ni)
    h0: np.ndarray
    y0: np.ndarray | None
    input_mask: np.ndarray
    recurrent_mask: np.ndarray
    states: np.ndarray          # ERNN hidden / LSTM cell / GRU state, (T, Nh)
    outputs: np.ndarray         # ERNN y (T, No); LSTM block output; GRU state
    gates: dict[str, np.ndarray]

    def __len__(self) -> int:
        return self.x.shape[0]


CellParams = Union[ErnnParams, LstmParams, GruParams]


# ---------------------------------------------------------------------------
# initialization

def init_weights(shapes, nh: int, rng):
    """Draw parameters: uniform [0,1] scaled by 1/sqrt(nh) for matrices, zero biases.

    `shapes` is either a single shape tuple (returns one array) or a mapping
    of name -> shape (returns a dict, drawn in insertion order).
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    scale = 1.0 / np.sqrt(nh)

    def draw(shape: tuple[int, ...]) -> np.ndarray:
        if len(shape) >= 2:
            return gen.uniform(0.0, 1.0, size=shape) * scale
        return np.zeros(shape)

    if isinstance(shapes, dict):
        return {name: draw(shape) for name, shape in shapes.items()}
    return draw(tuple(shapes))


def init_ernn(ni: int, nh: int, no: int, rng) -> ErnnParams:
    w = init_weights(
        {"Wih": (ni, nh), "Whh": (nh, nh), "Who": (nh, no),
         "bi": (ni,), "bh": (nh,), "bo": (nh,)},
        nh, rng)
    return ErnnParams(**w)


def init_lstm(ni: int, nh: int, rng) -> LstmParams:
    shapes: dict[str, tuple[int, ...]] = {}
    for g in ("f", "h", "u", "o"):
        shapes[f"W{g}"] = (ni, nh)
        shapes[f"R{g}"] = (nh, nh)
        shapes[f"b{g}"] = (nh,)
    return LstmParams(**init_weights(shapes, nh, rng))


def init_gru(ni: int, nh: int, rng) -> GruParams:
    shapes: dict[str, tuple[int, ...]] = {}
    for g in ("r", "z", "u"):
        shapes[f"W{g}"] = (nh, nh)
        shapes[f"R{g}"] = (ni, nh)
        shapes[f"b{g}"] = (nh,)
    return GruParams(**init_weights(shapes, nh, rng))


def ones_masks(ni: int, nh: int) -> DropoutMasks:
    return DropoutMasks(np.ones(ni), np.ones(nh))


# ---------------------------------------------------------------------------
# compiled step loops

@njit(cache=True)
def _ernn_fwd(x, Wih, Whh, Who, bi, bh, bo, h0, im, rm):
    T = x.shape[0]
    nh = Whh.shape[0]
    no = Who.shape[1]
    H = np.empty((T, nh))
    Y = np.empty((T, no))
    h = h0.copy()
    for t in range(T):
        z = np.dot((x[t] + bi) * im, Wih) + np.dot((h + bh) * rm, Whh)
        h = np.tanh(z)
        H[t] = h
        Y[t] = np.dot(h + bo, Who)
    return H, Y


@njit(cache=True)
def _lstm_fwd(x, Wf, Wh, Wu, Wo, Rf, Rh, Ru, Ro, bf, bh, bu, bo, h0, y0, im, rm):
    T = x.shape[0]
    nh = Rf.shape[0]
    F = np.empty((T, nh))
    U = np.empty((T, nh))
    O = np.empty((T, nh))
    G = np.empty((T, nh))
    C = np.empty((T, nh))
    Yb = np.empty((T, nh))
    c = h0.copy()
    y = y0.copy()
    for t in range(T):
        a = x[t] * im
        r = y * rm
        f = 1.0 / (1.0 + np.exp(-(np.dot(a, Wf) + np.dot(r, Rf) + bf)))
        u = 1.0 / (1.0 + np.exp(-(np.dot(a, Wu) + np.dot(r, Ru) + bu)))
        o = 1.0 / (1.0 + np.exp(-(np.dot(a, Wo) + np.dot(r, Ro) + bo)))
        g = np.tanh(np.dot(a, Wh) + np.dot(r, Rh) + bh)
        c = u * g + f * c
        y = o * np.tanh(c)
        F[t] = f
        U[t] = u
        O[t] = o
        G[t] = g
        C[t] = c
        Yb[t] = y
    return F, U, O, G, C, Yb


@njit(cache=True)
def _gru_fwd(x, Wr, Wz, Wu, Rr, Rz, Ru, br, bz, bu, h0, im, rm):
    T = x.shape[0]
    nh = Wr.shape[0]
    R = np.empty((T, nh))
    U = np.empty((T, nh))
    Z = np.empty((T, nh))
    H = np.empty((T, nh))
    h = h0.copy()
    for t in range(T):
        a = x[t] * im
        hm = h * rm
        r = 1.0 / (1.0 + np.exp(-(np.dot(hm, Wr) + np.dot(a, Rr) + br)))
        u = 1.0 / (1.0 + np.exp(-(np.dot(hm, Wu) + np.dot(a, Ru) + bu)))
        z = np.tanh(np.dot((h * r) * rm, Wz) + np.dot(a, Rz) + bz)
        h = (1.0 - u) * h + u * z
        R[t] = r
        U[t] = u
        Z[t] = z
        H[t] = h
    return R, U, Z, H


# ---------------------------------------------------------------------------
# public forward passes

def _as_seq(x_seq: np.ndarray, ni: int, what: str) -> np.ndarray:
    x = np.ascontiguousarray(np.atleast_2d(np.asarray(x_seq, dtype=float)))
    if x.shape[1] != ni:
        raise ValueError(f"{what}: expected input width {ni}, got {x.shape[1]}")
    return x


def ernn_forward(
    p: ErnnParams,
    x_seq: np.ndarray,
    h0: np.ndarray | None = None,
    masks: DropoutMasks | None = None,
) -> tuple[np.ndarray, SequenceCache]:
    """Run the Elman cell over a sequence; returns (outputs (T, No), cache)."""
    ni, nh, _ = p.dims
    x = _as_seq(x_seq, ni, "ernn_forward")
    h0 = np.zeros(nh) if h0 is None else np.asarray(h0, dtype=float)
    if h0.shape != (nh,):
        raise ValueError(f"ernn_forward: h0 must have shape ({nh},)")
    m = masks or ones_masks(ni, nh)
    H, Y = _ernn_fwd(x, p.Wih, p.Whh, p.Who, p.bi, p.bh, p.bo,
                     h0, m.input_mask, m.recurrent_mask)
    cache = SequenceCache("ernn", x, h0, None, m.input_mask, m.recurrent_mask,
                          states=H, outputs=Y, gates={})
    return Y, cache


def lstm_forward(
    p: LstmParams,
    x_seq: np.ndarray,
    h0: np.ndarray | None = None,
    y0: np.ndarray | None = None,
    masks: DropoutMasks | None = None,
) -> tuple[np.ndarray, SequenceCache]:
    """Run the LSTM over a sequence; returns (block outputs (T, Nh), cache).

    h0 is the initial cell state, y0 the initial block output; both default
    to zeros.
    """
    ni, nh = p.dims
    x = _as_seq(x_seq, ni, "lstm_forward")
    h0 = np.zeros(nh) if h0 is None else np.asarray(h0, dtype=float)
    y0 = np.zeros(nh) if y0 is None else np.asarray(y0, dtype=float)
    if h0.shape != (nh,) or y0.shape != (nh,):
        raise ValueError(f"lstm_forward: h0/y0 must have shape ({nh},)")
    m = masks or ones_masks(ni, nh)
    F, U, O, G, C, Yb = _lstm_fwd(
        x, p.Wf, p.Wh, p.Wu, p.Wo, p.Rf, p.Rh, p.Ru, p.Ro,
        p.bf, p.bh, p.bu, p.bo, h0, y0, m.input_mask, m.recurrent_mask)
    cache = SequenceCache("lstm", x, h0, y0, m.input_mask, m.recurrent_mask,
                          states=C, outputs=Yb,
                          gates={"f": F, "u": U, "o": O, "g": G})
    return Yb, cache


def gru_forward(
    p: GruParams,
    x_seq: np.ndarray,
    h0: np.ndarray | None = None,
    masks: DropoutMasks | None = None,
) -> tuple[np.ndarray, SequenceCache]:
    """Run the GRU over a sequence; the state is fully exposed as the output."""
    ni, nh = p.dims
    x = _as_seq(x_seq, ni, "gru_forward")
    h0 = np.zeros(nh) if h0 is None else np.asarray(h0, dtype=float)
    if h0.shape != (nh,):
        raise ValueError(f"gru_forward: h0 must have shape ({nh},)")
    m = masks or ones_masks(ni, nh)
    R, U, Z, H = _gru_fwd(x, p.Wr, p.Wz, p.Wu, p.Rr, p.Rz, p.Ru,
                          p.br, p.bz, p.bu, h0, m.input_mask, m.recurrent_mask)
    cache = SequenceCache("gru", x, h0, None, m.input_mask, m.recurrent_mask,
                          states=H, outputs=H, gates={"r": R, "u": U, "z": Z})
    return H, cache


# ---------------------------------------------------------------------------
# serialization

_TAGS = {"ernn": ErnnParams, "lstm": LstmParams, "gru": GruParams}


def params_to_dict(p: CellParams) -> dict:
    """Flatten a parameter container to a JSON-friendly dict."""
    tag = next(t for t, cls in _TAGS.items() if isinstance(p, cls))
    arrays = {f.name: getattr(p, f.name).tolist() for f in fields(p)}
    return {"architecture": tag, "arrays": arrays}


def params_from_dict(d: dict) -> CellParams:
    cls = _TAGS[d["architecture"]]
    arrays = {k: np.asarray(v, dtype=float) for k, v in d["arrays"].items()}
    return cls(**arrays)
