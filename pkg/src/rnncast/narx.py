"""NARX network: tapped delay lines, MLP core, Levenberg-Marquardt training.

Training runs in series-parallel mode: the output delay line is filled with
ground truth, which makes the network purely feedforward and lets the whole
sample batch be evaluated and differentiated with dense numpy matmuls.
Prediction closes the loop, feeding the output delay line with the network's
own outputs after a ground-truth warmup.

The LM iteration solves (J'J + (lam_lm + lam2) I) d = -(J'r + lam2 theta),
i.e. a damped Gauss-Newton step on G = (|r|^2 + lam2 |theta|^2) / 2. The
reported/monitored quantity `narx_loss` is the mean squared error plus
lam2 * sum(theta^2); G drives acceptance.
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .numerics import RngStream

TRANSIENT = 50  # leading outputs discarded from losses and residuals


# ---------------------------------------------------------------------------
# parameters


@dataclass
class NarxParams:
    """Input layer, optional deeper hidden layers, linear output layer."""

    Wi: np.ndarray  # (dx*nx + dy*ny, nh)
    bi: np.ndarray  # (nh,)
    Wh: list[np.ndarray] = field(default_factory=list)  # (nh, nh) each
    bh: list[np.ndarray] = field(default_factory=list)
    Wo: np.ndarray = None  # (nh, ny)
    bo: np.ndarray = None  # (ny,)
    dx: int = 1
    dy: int = 1

    @property
    def n_layers(self) -> int:
        return 1 + len(self.Wh)


def init_narx(nx: int, ny: int, dx: int, dy: int, nh: int, nl: int,
              rng) -> NarxParams:
    """Symmetric uniform +-1/sqrt(fan_in) weights, zero biases."""
    if min(nx, ny, dx, dy, nh, nl) < 1:
        raise ValueError("init_narx: all dimensions must be >= 1")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    din = dx * nx + dy * ny

    def draw(fan_in, shape):
        s = 1.0 / np.sqrt(fan_in)
        return gen.uniform(-s, s, size=shape)

    Wh = [draw(nh, (nh, nh)) for _ in range(nl - 1)]
    bh = [np.zeros(nh) for _ in range(nl - 1)]
    return NarxParams(
        Wi=draw(din, (din, nh)), bi=np.zeros(nh),
        Wh=Wh, bh=bh,
        Wo=draw(nh, (nh, ny)), bo=np.zeros(ny),
        dx=dx, dy=dy,
    )


def _param_arrays(p: NarxParams) -> list[tuple[str, np.ndarray]]:
    out = [("Wi", p.Wi), ("bi", p.bi)]
    for i, (w, b) in enumerate(zip(p.Wh, p.bh)):
        out.append((f"Wh{i}", w))
        out.append((f"bh{i}", b))
    out.append(("Wo", p.Wo))
    out.append(("bo", p.bo))
    return out


def params_vector(p: NarxParams) -> np.ndarray:
    return np.concatenate([a.ravel() for _, a in _param_arrays(p)])


def vector_to_params(vec: np.ndarray, template: NarxParams) -> NarxParams:
    out = dataclasses.replace(template)
    pos = 0
    arrays = {}
    for name, a in _param_arrays(template):
        arrays[name] = vec[pos:pos + a.size].reshape(a.shape).copy()
        pos += a.size
    out.Wi, out.bi = arrays["Wi"], arrays["bi"]
    out.Wh = [arrays[f"Wh{i}"] for i in range(len(template.Wh))]
    out.bh = [arrays[f"bh{i}"] for i in range(len(template.bh))]
    out.Wo, out.bo = arrays["Wo"], arrays["bo"]
    return out


def params_to_dict(p: NarxParams) -> dict:
    return {
        "architecture": "narx",
        "dx": p.dx, "dy": p.dy, "n_layers": p.n_layers,
        "arrays": {name: a.tolist() for name, a in _param_arrays(p)},
    }


def params_from_dict(d: dict) -> NarxParams:
    arr = {k: np.asarray(v, dtype=float) for k, v in d["arrays"].items()}
    n_hidden = d["n_layers"] - 1
    return NarxParams(
        Wi=arr["Wi"], bi=arr["bi"],
        Wh=[arr[f"Wh{i}"] for i in range(n_hidden)],
        bh=[arr[f"bh{i}"] for i in range(n_hidden)],
        Wo=arr["Wo"], bo=arr["bo"],
        dx=d["dx"], dy=d["dy"],
    )


# ---------------------------------------------------------------------------
# tapped delay lines


@dataclass
class TdlBuffer:
    """Delay-line view over an input series and an output feed.

    `x` is the full exogenous/input series (T, nx); `y` is whatever fills the
    output line: ground truth in series-parallel mode, the prediction feed in
    closed-loop mode.
    """

    dx: int
    dy: int
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        if self.dx < 1 or self.dy < 1:
            raise ValueError("TdlBuffer: delays must be >= 1")

    @property
    def min_t(self) -> int:
        return max(self.dx, self.dy)


def assemble_input(buf: TdlBuffer, t: int) -> np.ndarray:
    """[x[t-dx] ... x[t-1], y[t-dy] ... y[t-1]] flattened, target index t."""
    if t < buf.min_t:
        raise ValueError(
            f"assemble_input: need t >= {buf.min_t}, got {t}")
    if t > buf.x.shape[0] or t > buf.y.shape[0]:
        raise ValueError("assemble_input: t beyond stored history")
    return np.concatenate([
        buf.x[t - buf.dx:t].ravel(),
        buf.y[t - buf.dy:t].ravel(),
    ])


def build_design(x_series, y_series, dx: int, dy: int,
                 transient: int = TRANSIENT):
    """Teacher-forced sample matrix: rows assemble_input(t), targets y*[t].

    Returns (inputs (N, din), targets (N, ny), t_index (N,)) for
    t in [max(dx, dy) + transient, T).
    """
    buf = TdlBuffer(dx, dy, x_series, y_series)
    T = buf.x.shape[0]
    t_first = buf.min_t + transient
    ts = np.arange(t_first, T)
    if ts.size == 0:
        raise ValueError("build_design: series shorter than delays + transient")
    nx, ny = buf.x.shape[1], buf.y.shape[1]
    inputs = np.empty((ts.size, dx * nx + dy * ny))
    # sliding windows, vectorized over samples
    for j in range(dx):
        inputs[:, j * nx:(j + 1) * nx] = buf.x[ts - dx + j]
    off = dx * nx
    for j in range(dy):
        inputs[:, off + j * ny:off + (j + 1) * ny] = buf.y[ts - dy + j]
    return inputs, buf.y[ts], ts


# ---------------------------------------------------------------------------
# MLP forward and Jacobian


def _forward_batch(p: NarxParams, inputs: np.ndarray):
    """Activations per layer plus linear outputs for a sample batch."""
    acts = [inputs]
    h = np.tanh(inputs @ p.Wi + p.bi)
    acts.append(h)
    for w, b in zip(p.Wh, p.bh):
        h = np.tanh(h @ w + b)
        acts.append(h)
    return acts, h @ p.Wo + p.bo


def mlp_forward(p: NarxParams, i: np.ndarray) -> np.ndarray:
    """Single-vector forward pass; all layers evaluated in one time step."""
    i = np.asarray(i, dtype=float)
    if i.ndim != 1 or i.shape[0] != p.Wi.shape[0]:
        raise ValueError(
            f"mlp_forward: expected input of length {p.Wi.shape[0]}")
    _, y = _forward_batch(p, i[None, :])
    return y[0]


def batch_jacobian(p: NarxParams, inputs: np.ndarray):
    """Outputs and the residual Jacobian d y[n, k] / d theta.

    Rows are output-major: the first N rows differentiate output 0 over all
    samples, then output 1, matching residuals raveled in Fortran order.
    """
    acts, y = _forward_batch(p, inputs)
    N = inputs.shape[0]
    ny = p.Wo.shape[1]
    sizes = [a.size for _, a in _param_arrays(p)]
    P = sum(sizes)
    J = np.empty((N * ny, P))
    hidden = acts[1:]  # tanh layers
    weights = [p.Wi] + list(p.Wh)
    for k in range(ny):
        rows = slice(k * N, (k + 1) * N)
        # delta through the linear output into the last tanh layer
        deltas = [None] * len(hidden)
        deltas[-1] = (1.0 - hidden[-1] ** 2) * p.Wo[:, k]
        for l in range(len(hidden) - 2, -1, -1):
            deltas[l] = (deltas[l + 1] @ weights[l + 1].T) * (1.0 - hidden[l] ** 2)
        pos = 0
        for l, (w, d) in enumerate(zip(weights, deltas)):
            a_in = acts[l]
            J[rows, pos:pos + w.size] = np.einsum(
                "ni,nj->nij", a_in, d).reshape(N, -1)
            pos += w.size
            J[rows, pos:pos + d.shape[1]] = d
            pos += d.shape[1]
        # output layer: only the k-th column of Wo and k-th bias entry move
        wo_block = np.zeros((N, p.Wo.size))
        cols = np.arange(p.Wo.shape[0]) * ny + k
        wo_block[:, cols] = hidden[-1]
        J[rows, pos:pos + p.Wo.size] = wo_block
        pos += p.Wo.size
        bo_block = np.zeros((N, ny))
        bo_block[:, k] = 1.0
        J[rows, pos:pos + ny] = bo_block
    return y, J


# ---------------------------------------------------------------------------
# loss and training


def narx_loss(p: NarxParams, x_series, ystar, lam2: float,
              transient: int = TRANSIENT) -> float:
    """Series-parallel MSE after the transient plus lam2 * sum(theta^2)."""
    inputs, targets, _ = build_design(x_series, ystar, p.dx, p.dy, transient)
    _, y = _forward_batch(p, inputs)
    theta = params_vector(p)
    return float(np.mean((y - targets) ** 2) + lam2 * theta @ theta)


def _objective(r: np.ndarray, theta: np.ndarray, lam2: float) -> float:
    return 0.5 * (r @ r + lam2 * theta @ theta)


_CHUNK_ROWS = 100_000


def _normal_matrices(p, inputs, targets, lam2):
    """J'J, J'r, residuals and objective; chunked above the row threshold."""
    N = inputs.shape[0]
    ny = targets.shape[1]
    theta = params_vector(p)
    if N * ny <= _CHUNK_ROWS:
        y, J = batch_jacobian(p, inputs)
        r = (y - targets).ravel(order="F")
        return J.T @ J, J.T @ r, _objective(r, theta, lam2)
    P = theta.size
    JtJ = np.zeros((P, P))
    Jtr = np.zeros(P)
    sq = 0.0
    step = max(_CHUNK_ROWS // ny, 1)
    for s in range(0, N, step):
        yc, Jc = batch_jacobian(p, inputs[s:s + step])
        rc = (yc - targets[s:s + step]).ravel(order="F")
        JtJ += Jc.T @ Jc
        Jtr += Jc.T @ rc
        sq += rc @ rc
    return JtJ, Jtr, 0.5 * (sq + lam2 * theta @ theta)


def lm_delta(JtJ: np.ndarray, Jtr: np.ndarray, theta: np.ndarray,
             lam_lm: float, lam2: float) -> np.ndarray:
    """Solve (J'J + (lam_lm + lam2) I) d = -(J'r + lam2 theta)."""
    A = JtJ + (lam_lm + lam2) * np.eye(theta.size)
    rhs = -(Jtr + lam2 * theta)
    return cho_solve(cho_factor(A, lower=True), rhs)


MAX_INFLATIONS = 10


def train_series_parallel(
    p: NarxParams,
    dataset,
    lam2: float,
    eta0: float,
    epochs: int,
    transient: int = TRANSIENT,
) -> tuple[NarxParams, list[float]]:
    """Levenberg-Marquardt fit with the output delay line teacher-forced.

    `dataset` provides train_x and train_y series. The initial damping is
    1e-3 / eta0, so small preset rates mean conservative, gradient-like
    steps. Returns the fitted parameters and the accepted objective values
    (0.5 * (|r|^2 + lam2 |theta|^2), one entry per epoch).
    """
    if eta0 <= 0:
        raise ValueError("train_series_parallel: eta0 must be positive")
    inputs, targets, _ = build_design(dataset.train_x, dataset.train_y,
                                      p.dx, p.dy, transient)
    lam_lm = 1e-3 / eta0
    history: list[float] = []
    for _ in range(epochs):
        JtJ, Jtr, g_cur = _normal_matrices(p, inputs, targets, lam2)
        theta = params_vector(p)
        accepted = False
        for _ in range(MAX_INFLATIONS + 1):
            try:
                delta = lm_delta(JtJ, Jtr, theta, lam_lm, lam2)
            except np.linalg.LinAlgError:
                lam_lm *= 10.0
                continue
            cand = vector_to_params(theta + delta, p)
            _, y_new = _forward_batch(cand, inputs)
            r_new = (y_new - targets).ravel(order="F")
            g_new = _objective(r_new, theta + delta, lam2)
            if np.isfinite(g_new) and g_new < g_cur:
                p = cand
                g_cur = g_new
                lam_lm = max(lam_lm / 10.0, 1e-300)
                accepted = True
                break
            lam_lm *= 10.0
        history.append(g_cur)
        if not accepted and lam_lm > 1e12:
            break  # stalled: damping saturated without any acceptable step
    return p, history


# ---------------------------------------------------------------------------
# closed-loop prediction


def closed_loop_predict(p: NarxParams, x_seq, warmup) -> np.ndarray:
    """Free-running outputs, the delay line seeded with `warmup` truth.

    Positions before max(dx, dy) carry NaN (no full delay line yet); the
    first TRANSIENT valid outputs are conventionally discarded by callers.
    For t < len(warmup) the output line reads ground truth, afterwards it
    reads the network's own predictions.
    """
    x = np.asarray(x_seq, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    warmup = np.asarray(warmup, dtype=float)
    if warmup.ndim == 1:
        warmup = warmup[:, None]
    T = x.shape[0]
    ny = p.Wo.shape[1]
    t0 = max(p.dx, p.dy)
    if warmup.shape[0] < t0:
        raise ValueError(
            f"closed_loop_predict: warmup must cover {t0} samples")
    feed = np.empty((T, ny))
    w = min(warmup.shape[0], T)
    feed[:w] = warmup[:w]
    out = np.full((T, ny), np.nan)
    buf = TdlBuffer(p.dx, p.dy, x, feed)
    for t in range(t0, T):
        y = mlp_forward(p, assemble_input(buf, t))
        out[t] = y
        if t >= w:
            feed[t] = y
    return out
