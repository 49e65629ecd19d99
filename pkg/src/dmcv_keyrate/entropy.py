"""Classical and quantum entropies in bits."""

from __future__ import annotations

import numpy as np

__all__ = [
    "binary_entropy",
    "shannon_entropy",
    "von_neumann_entropy",
    "xlog2x_trace",
    "log2m",
    "relative_entropy",
]


def binary_entropy(p: float) -> float:
    p = float(p)
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return float(-p * np.log2(p) - (1 - p) * np.log2(1 - p))


def shannon_entropy(p) -> float:
    p = np.asarray(p, dtype=float).ravel()
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def _eigvalsh(x: np.ndarray) -> np.ndarray:
    return np.linalg.eigvalsh((x + x.conj().T) / 2.0)


def xlog2x_trace(x: np.ndarray) -> float:
    """``Tr(x log2 x)`` for PSD ``x``, with ``0 log 0 = 0``."""
    w = _eigvalsh(x)
    w = w[w > 0]
    return float(np.sum(w * np.log2(w)))


def von_neumann_entropy(rho: np.ndarray) -> float:
    return -xlog2x_trace(rho)


def log2m(x: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Matrix base-2 logarithm of a positive definite Hermitian matrix.

    Eigenvalues are floored at ``floor`` first; with ``floor = 0`` the input
    must be strictly positive.
    """
    w, v = np.linalg.eigh((x + x.conj().T) / 2.0)
    w = np.maximum(w, floor)
    if np.any(w <= 0):
        raise ValueError("matrix logarithm of a singular matrix")
    return (v * np.log2(w)) @ v.conj().T


def relative_entropy(rho: np.ndarray, sigma: np.ndarray) -> float:
    """``D(rho || sigma) = Tr rho log2 rho - Tr rho log2 sigma`` in bits.

    Returns ``inf`` when the support of ``rho`` is not contained in that of
    ``sigma``.
    """
    wr, vr = np.linalg.eigh((rho + rho.conj().T) / 2.0)
    ws, vs = np.linalg.eigh((sigma + sigma.conj().T) / 2.0)
    tol = 1e-14 * max(1.0, float(np.abs(ws).max(initial=0.0)))
    keep_r = wr > 0
    term1 = float(np.sum(wr[keep_r] * np.log2(wr[keep_r])))
    # overlap[i, k] = |<r_i|s_k>|^2
    overlap = np.abs(vr.conj().T @ vs) ** 2
    mass = wr[keep_r] @ overlap[keep_r]
    null = ws <= tol
    if np.any(mass[null] > 1e-12):
        return float("inf")
    term2 = float(np.sum(mass[~null] * np.log2(ws[~null])))
    return term1 - term2
