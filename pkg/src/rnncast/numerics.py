"""Shared numerical primitives: activations, spectral radius, seedable RNG streams.

Everything here works on plain float64 numpy arrays. Gradient checking
elsewhere needs ~1e-5 relative accuracy, so no reduced-precision paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "logistic",
    "tanh_act",
    "spectral_radius",
    "rescale_to_radius",
    "RngStream",
]


def logistic(v: np.ndarray | float) -> np.ndarray | float:
    """Elementwise sigmoid 1 / (1 + exp(-v)), stable for large |v|."""
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out if out.ndim else float(out)


def tanh_act(v: np.ndarray | float) -> np.ndarray | float:
    """Elementwise hyperbolic tangent."""
    out = np.tanh(np.asarray(v, dtype=float))
    return out if out.ndim else float(out)


def spectral_radius(m: np.ndarray, max_iter: int = 2000, tol: float = 1e-8) -> float:
    """Largest eigenvalue magnitude of a square matrix, by iterated matvecs.

    Plain power-iteration growth ratios never settle when the dominant
    eigenvalues come as complex pairs of near-equal magnitude (the typical
    situation for random reservoir matrices), so the iterates are collected
    into an orthonormal Krylov basis and the dominant magnitude is read off
    the projected Hessenberg matrix. The basis grows until the estimate
    moves by less than `tol` (relative) between doubling checkpoints, an
    invariant subspace is hit, or the dimension cap min(n, max_iter, 512)
    is reached. Only matrix-vector products with `m` are used; the only
    dense eigensolve is on the small projection.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"spectral_radius needs a square matrix, got shape {m.shape}")
    n = m.shape[0]
    if n == 0 or not np.any(m):
        return 0.0
    if n == 1:
        return abs(float(m[0, 0]))

    k_max = int(min(n, max_iter, 512))
    Q = np.empty((k_max + 1, n))
    H = np.zeros((k_max + 1, k_max))
    # Fixed internal seed keeps the function pure and runs reproducible.
    v = np.random.default_rng(0x5EED).standard_normal(n)
    Q[0] = v / np.linalg.norm(v)

    estimate = 0.0
    checkpoint = 24
    for j in range(k_max):
        w = m @ Q[j]
        # Gram-Schmidt with one reorthogonalization pass; without it the
        # basis degrades and caps the Ritz accuracy near sqrt(eps).
        for _ in range(2):
            coeffs = Q[: j + 1] @ w
            H[: j + 1, j] += coeffs
            w -= coeffs @ Q[: j + 1]
        beta = float(np.linalg.norm(w))
        H[j + 1, j] = beta
        steps = j + 1
        if beta <= 1e-14 * max(np.abs(H).max(), 1e-300):
            # exact invariant subspace reached: Ritz values are exact
            ritz = np.linalg.eigvals(H[:steps, :steps])
            return float(np.abs(ritz).max())
        Q[j + 1] = w / beta
        if steps >= checkpoint or steps == k_max:
            ritz = np.linalg.eigvals(H[:steps, :steps])
            new_est = float(np.abs(ritz).max())
            if estimate > 0 and abs(new_est - estimate) <= tol * new_est:
                return new_est
            estimate = new_est
            checkpoint *= 2
    return float(estimate)


def rescale_to_radius(m: np.ndarray, target: float) -> np.ndarray:
    """Return m scaled so its spectral radius equals `target`."""
    if target <= 0:
        raise ValueError("target spectral radius must be positive")
    rho = spectral_radius(m)
    if rho == 0.0:
        raise ValueError("cannot rescale a matrix with zero spectral radius")
    return np.asarray(m, dtype=float) * (target / rho)


@dataclass(frozen=True)
class RngStream:
    """Splittable random stream addressed by (seed, derivation path).

    Equal (seed, path) pairs always yield the same draw sequence; distinct
    paths yield statistically independent sequences, so parallel search
    trials can derive their own streams from one master seed and the result
    does not depend on scheduling.
    """

    seed: int
    path: tuple[int, ...] = ()

    def child(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.path + (int(index),))

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.default_rng(ss)
