"""Echo State Network: sparse random reservoir, ridge readout, free run.

The reservoir is never trained. States are harvested under teacher forcing
(the feedback path carries the scaled teacher signal), stacked next to the
inputs, and a linear readout is fit by ridge regression in either the primal
or dual form. Prediction reuses the same state update with the network's own
outputs in the feedback path and noise disabled.

Row convention throughout: h[t] = tanh(h[t-1] @ Wrr + x[t] @ Wir
+ (omega_o * y[t-1]) @ Wor + noise).
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .numerics import RngStream, rescale_to_radius, spectral_radius

WASHOUT = 50  # leading reservoir states discarded as transient

_REDRAW_LIMIT = 8


@dataclass(frozen=True)
class Reservoir:
    Wrr: np.ndarray  # (nh, nh), sparse by zeros
    Wir: np.ndarray  # (n_in, nh)
    Wor: np.ndarray  # (n_out, nh)
    rho: float
    rc: float
    xi_var: float
    omega_i: float
    omega_o: float
    omega_f: float


@dataclass(frozen=True)
class Readout:
    Wio: np.ndarray  # (n_in, n_out)
    Wro: np.ndarray  # (nh, n_out)
    lambda2: float = 0.0


@dataclass(frozen=True)
class StateMatrix:
    S: np.ndarray  # (kept, n_in + nh) rows [x[t], h[t]]
    ystar: np.ndarray  # (kept, n_out)
    washout: int
    n_input: int


def build_reservoir(nh: int, rho: float, rc: float, omega_i: float,
                    omega_f: float, xi_var: float, rng,
                    n_in: int = 1, n_out: int = 1,
                    omega_o: float = 1.0) -> Reservoir:
    """Random reservoir with exact connectivity and spectral radius.

    Wrr draws uniform [-1, 1] values on round(rc * nh^2) positions chosen
    without replacement, then rescales to spectral radius rho. A degenerate
    draw whose radius is numerically zero is redrawn a bounded number of
    times.
    """
    if nh < 1:
        raise ValueError("build_reservoir: nh must be positive")
    if not 0.0 < rc <= 1.0:
        raise ValueError("build_reservoir: rc must lie in (0, 1]")
    if rho <= 0:
        raise ValueError("build_reservoir: rho must be positive")
    if xi_var < 0:
        raise ValueError("build_reservoir: xi_var must be nonnegative")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    n_nonzero = int(round(rc * nh * nh))
    for _ in range(_REDRAW_LIMIT):
        w = np.zeros(nh * nh)
        idx = gen.choice(nh * nh, size=n_nonzero, replace=False)
        w[idx] = gen.uniform(-1.0, 1.0, size=n_nonzero)
        w = w.reshape(nh, nh)
        if spectral_radius(w) > 1e-12:
            break
    else:
        raise ValueError(
            "build_reservoir: repeated zero-radius draws; increase rc")
    wrr = rescale_to_radius(w, rho)
    wir = omega_i * gen.uniform(-1.0, 1.0, size=(n_in, nh))
    wor = omega_f * gen.uniform(-1.0, 1.0, size=(n_out, nh))
    return Reservoir(Wrr=wrr, Wir=wir, Wor=wor, rho=rho, rc=rc,
                     xi_var=xi_var, omega_i=omega_i, omega_o=omega_o,
                     omega_f=omega_f)


def _as_columns(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def harvest_states(r: Reservoir, x_seq, ystar_seq, washout: int = WASHOUT,
                   rng=None, h0=None) -> StateMatrix:
    """Teacher-forced state collection; first `washout` rows discarded.

    State noise (variance xi_var, inside the tanh argument) needs `rng`;
    `h0` defaults to zeros. The feedback path reads omega_o * y*[t-1] with
    y*[-1] = 0.
    """
    x = _as_columns(x_seq)
    ystar = _as_columns(ystar_seq)
    T = x.shape[0]
    if ystar.shape[0] != T:
        raise ValueError("harvest_states: input/teacher length mismatch")
    if not 0 <= washout < T:
        raise ValueError("harvest_states: washout out of range")
    nh = r.Wrr.shape[0]
    if r.xi_var > 0 and rng is None:
        raise ValueError("harvest_states: state noise requires an rng")
    gen = (rng.generator() if isinstance(rng, RngStream) else rng)
    h = np.zeros(nh) if h0 is None else np.asarray(h0, dtype=float).copy()
    sigma = np.sqrt(r.xi_var)
    H = np.empty((T, nh))
    y_prev = np.zeros(ystar.shape[1])
    for t in range(T):
        z = h @ r.Wrr + x[t] @ r.Wir + (r.omega_o * y_prev) @ r.Wor
        if sigma > 0:
            z = z + sigma * gen.standard_normal(nh)
        h = np.tanh(z)
        H[t] = h
        y_prev = ystar[t]
    S = np.hstack([x[washout:], H[washout:]])
    return StateMatrix(S=S, ystar=ystar[washout:].copy(), washout=washout,
                       n_input=x.shape[1])


def _split_readout(w: np.ndarray, n_input: int, lam2: float) -> Readout:
    return Readout(Wio=w[:n_input].copy(), Wro=w[n_input:].copy(),
                   lambda2=lam2)


def ridge_fit_primal(sm: StateMatrix, lam2: float) -> Readout:
    """W = (S'S + lam2 I)^-1 S' y*, solved by an SPD factorization."""
    if lam2 < 0:
        raise ValueError("ridge_fit_primal: lam2 must be nonnegative")
    S, y = sm.S, sm.ystar
    A = S.T @ S + lam2 * np.eye(S.shape[1])
    w = cho_solve(cho_factor(A, lower=True), S.T @ y)
    return _split_readout(w, sm.n_input, lam2)


def ridge_fit_dual(sm: StateMatrix, lam2: float) -> Readout:
    """W = S'(SS' + lam2 I)^-1 y*; cheaper when features outnumber rows."""
    if lam2 < 0:
        raise ValueError("ridge_fit_dual: lam2 must be nonnegative")
    S, y = sm.S, sm.ystar
    A = S @ S.T + lam2 * np.eye(S.shape[0])
    w = S.T @ cho_solve(cho_factor(A, lower=True), y)
    return _split_readout(w, sm.n_input, lam2)


def ridge_fit(sm: StateMatrix, lam2: float) -> Readout:
    """Primal normally, dual once features outnumber training rows."""
    if sm.S.shape[1] > sm.S.shape[0]:
        return ridge_fit_dual(sm, lam2)
    return ridge_fit_primal(sm, lam2)


def esn_predict(r: Reservoir, readout: Readout, x_seq, y_warm) -> np.ndarray:
    """Noise-free run; feedback switches from teacher to own outputs.

    For t <= len(y_warm) the feedback path carries the teacher samples in
    y_warm, afterwards the model's own predictions. The state starts at
    zero, so supply the training tail in y_warm to warm the reservoir up.
    """
    x = _as_columns(x_seq)
    y_warm = _as_columns(y_warm) if np.size(y_warm) else np.zeros((0, 1))
    T = x.shape[0]
    nh = r.Wrr.shape[0]
    n_out = readout.Wro.shape[1]
    h = np.zeros(nh)
    out = np.empty((T, n_out))
    w = y_warm.shape[0]
    y_prev = np.zeros(n_out)
    for t in range(T):
        h = np.tanh(h @ r.Wrr + x[t] @ r.Wir + (r.omega_o * y_prev) @ r.Wor)
        out[t] = x[t] @ readout.Wio + h @ readout.Wro
        y_prev = y_warm[t] if t < w else out[t]
    return out


def esn_to_dict(r: Reservoir, readout: Readout) -> dict:
    return {
        "architecture": "esn",
        "hyperparameters": {
            "nh": r.Wrr.shape[0], "rho": r.rho, "rc": r.rc,
            "xi_var": r.xi_var, "lambda2": readout.lambda2,
            "omega_i": r.omega_i, "omega_o": r.omega_o,
            "omega_f": r.omega_f,
        },
        "arrays": {
            "Wrr": r.Wrr.tolist(), "Wir": r.Wir.tolist(),
            "Wor": r.Wor.tolist(), "Wio": readout.Wio.tolist(),
            "Wro": readout.Wro.tolist(),
        },
    }


def esn_from_dict(d: dict) -> tuple[Reservoir, Readout]:
    hp = d["hyperparameters"]
    arr = {k: np.asarray(v, dtype=float) for k, v in d["arrays"].items()}
    r = Reservoir(Wrr=arr["Wrr"], Wir=arr["Wir"], Wor=arr["Wor"],
                  rho=hp["rho"], rc=hp["rc"], xi_var=hp["xi_var"],
                  omega_i=hp["omega_i"], omega_o=hp["omega_o"],
                  omega_f=hp["omega_f"])
    readout = Readout(Wio=arr["Wio"], Wro=arr["Wro"], lambda2=hp["lambda2"])
    return r, readout
