"""Operators on the photon-number-truncated single-mode Fock space.

Every matrix here is the truncation ``P O P`` of the exact infinite-dimensional
operator ``O``, where ``P`` projects onto ``span{|0>, ..., |N_c>}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial, pi, sqrt

import numpy as np
from scipy import integrate, special

__all__ = [
    "FockDim",
    "TruncatedOperator",
    "annihilation_matrix",
    "build_observables",
    "coherent_fock_vector",
    "hermite_functions",
    "position_overlap",
    "interval_operators",
    "region_operators",
    "psd_sqrt",
    "EIG_TOL",
]

EIG_TOL = 1e-10
HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class FockDim:
    """Photon-number cutoff ``N_c``; the truncated space has ``N_c + 1`` levels."""

    cutoff: int

    def __post_init__(self):
        if int(self.cutoff) != self.cutoff or self.cutoff < 0:
            raise ValueError(f"cutoff must be a non-negative integer, got {self.cutoff!r}")
        object.__setattr__(self, "cutoff", int(self.cutoff))

    @property
    def dim(self) -> int:
        return self.cutoff + 1


def _as_dim(dim) -> FockDim:
    return dim if isinstance(dim, FockDim) else FockDim(int(dim))


@dataclass(frozen=True)
class TruncatedOperator:
    """An operator matrix on the truncated space.

    The matrix is copied and made read-only so instances can be shared freely.
    """

    matrix: np.ndarray
    hermitian: bool = False
    name: str = field(default="", compare=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"operator matrix must be square, got shape {m.shape}")
        if self.hermitian and not np.allclose(m, m.conj().T, rtol=0.0, atol=HERMITIAN_TOL):
            raise ValueError("matrix flagged hermitian is not Hermitian")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)


def annihilation_matrix(dim) -> TruncatedOperator:
    """Truncated annihilation operator, ``sqrt(n)`` on the ``(n-1, n)`` superdiagonal."""
    d = _as_dim(dim).dim
    a = np.diag(np.sqrt(np.arange(1, d, dtype=float)), k=1)
    return TruncatedOperator(a, hermitian=False, name="a")


def build_observables(dim) -> dict[str, TruncatedOperator]:
    """Truncated ``q, p, n, d`` with ``q = (a + a^+)/sqrt2``, ``p = i(a^+ - a)/sqrt2``
    and ``d = q^2 - p^2 = a^2 + (a^+)^2``.

    Matrix elements are taken from the exact ladder algebra, so ``d`` couples
    ``n <-> n+2`` with weight ``sqrt((n+1)(n+2))`` even at the cutoff edge.
    """
    d = _as_dim(dim).dim
    n = np.arange(d)
    a = np.diag(np.sqrt(n[1:].astype(float)), k=1)
    ad = a.T
    q = (a + ad) / sqrt(2.0)
    p = 1j * (ad - a) / sqrt(2.0)
    num = np.diag(n.astype(float))
    dd = np.zeros((d, d))
    if d > 2:
        off = np.sqrt((n[:-2] + 1.0) * (n[:-2] + 2.0))
        dd += np.diag(off, k=2) + np.diag(off, k=-2)
    return {
        "q": TruncatedOperator(q, hermitian=True, name="q"),
        "p": TruncatedOperator(p, hermitian=True, name="p"),
        "n": TruncatedOperator(num, hermitian=True, name="n"),
        "d": TruncatedOperator(dd, hermitian=True, name="d"),
    }


def coherent_fock_vector(amplitude: complex, dim) -> np.ndarray:
    """Fock amplitudes ``<n|amplitude>`` for ``n = 0..N_c``."""
    d = _as_dim(dim).dim
    amplitude = complex(amplitude)
    vec = np.empty(d, dtype=complex)
    vec[0] = np.exp(-abs(amplitude) ** 2 / 2.0)
    for k in range(1, d):
        vec[k] = vec[k - 1] * amplitude / sqrt(k)
    return vec


def hermite_functions(nmax: int, q) -> np.ndarray:
    """Normalised Hermite functions ``<q|n>`` for ``n = 0..nmax``.

    Returns an array of shape ``(nmax + 1,) + np.shape(q)``. Uses the
    normalised three-term recurrence, so no factorials appear.
    """
    q = np.asarray(q, dtype=float)
    out = np.empty((nmax + 1,) + q.shape)
    out[0] = pi ** -0.25 * np.exp(-q * q / 2.0)
    if nmax >= 1:
        out[1] = sqrt(2.0) * q * out[0]
    for n in range(1, nmax):
        out[n + 1] = sqrt(2.0 / (n + 1)) * q * out[n] - sqrt(n / (n + 1)) * out[n - 1]
    return out


def position_overlap(n: int, q: float) -> float:
    """``<q|n> = pi^(-1/4) (2^n n!)^(-1/2) exp(-q^2/2) H_n(q)``."""
    if n < 0:
        raise ValueError("photon number must be non-negative")
    return float(hermite_functions(n, q)[n])


def _q_max(d: int) -> float:
    # Hermite-function tails beyond this radius are below 1e-14 for n < d.
    return sqrt(2.0 * d + 1.0) + 8.0


def interval_operators(delta_c: float, dim, epsabs: float = 1e-13):
    """Truncated homodyne interval operators ``(I_0, I_1)``.

    ``I_0`` integrates ``|q><q|`` over ``[delta_c, inf)``, ``I_1`` over
    ``(-inf, -delta_c]``. ``I_1`` follows from ``I_0`` through the parity
    relation ``(I_1)_mn = (-1)^(m+n) (I_0)_mn``.
    """
    if delta_c < 0:
        raise ValueError(f"delta_c must be non-negative, got {delta_c}")
    d = _as_dim(dim).dim
    qmax = _q_max(d)
    if delta_c >= qmax:
        zero = np.zeros((d, d))
        return (TruncatedOperator(zero, True, "I0"), TruncatedOperator(zero, True, "I1"))

    def integrand(q):
        psi = hermite_functions(d - 1, q)
        return np.outer(psi, psi)

    i0, _ = integrate.quad_vec(integrand, delta_c, qmax, epsabs=epsabs, epsrel=0.0, norm="max")
    i0 = (i0 + i0.T) / 2.0
    n = np.arange(d)
    parity = (-1.0) ** (n[:, None] + n[None, :])
    return (
        TruncatedOperator(i0, hermitian=True, name="I0"),
        TruncatedOperator(parity * i0, hermitian=True, name="I1"),
    )


def _radial_factor(delta_a: float, d: int) -> np.ndarray:
    n = np.arange(d)
    s = n[:, None] + n[None, :]
    upper = special.gammaincc(s / 2.0 + 1.0, delta_a**2) * special.gamma(s / 2.0 + 1.0)
    fact = np.array([float(factorial(k)) for k in range(d)])
    return upper / (2.0 * pi * np.sqrt(fact[:, None] * fact[None, :]))


def region_operators(delta_a: float, delta_p: float, dim) -> tuple[TruncatedOperator, ...]:
    """Truncated heterodyne region operators ``(R_0, R_1, R_2, R_3)``.

    ``R_j`` integrates the coherent-state POVM over ``|gamma| >= delta_a`` and
    phases within ``pi/4 - delta_p`` of ``j pi/2``. Entries are closed form:
    an upper incomplete gamma function for the radial integral times the
    elementary angular integral of ``exp(i (m - n) theta)``.
    """
    if delta_a < 0:
        raise ValueError(f"delta_a must be non-negative, got {delta_a}")
    if not 0.0 <= delta_p <= pi / 4:
        raise ValueError(f"delta_p must lie in [0, pi/4], got {delta_p}")
    d = _as_dim(dim).dim
    radial = _radial_factor(delta_a, d)
    n = np.arange(d)
    k = n[:, None] - n[None, :]
    half = pi / 4 - delta_p
    with np.errstate(divide="ignore", invalid="ignore"):
        window = np.where(k == 0, 2.0 * half, 2.0 * np.sin(k * half) / np.where(k == 0, 1, k))
    ops = []
    for j in range(4):
        phase = np.exp(1j * k * j * pi / 2)
        r = phase * window * radial
        r = (r + r.conj().T) / 2.0
        ops.append(TruncatedOperator(r, hermitian=True, name=f"R{j}"))
    return tuple(ops)


def psd_sqrt(m, tol: float = EIG_TOL) -> TruncatedOperator:
    """Principal square root of a PSD operator.

    Eigenvalues in ``[-tol, 0)`` are clamped to zero; anything more negative
    means the input was not a valid POVM element.
    """
    mat = np.asarray(m.matrix if isinstance(m, TruncatedOperator) else m, dtype=complex)
    mat = (mat + mat.conj().T) / 2.0
    w, v = np.linalg.eigh(mat)
    if w.min() < -tol:
        raise ValueError(f"operator has eigenvalue {w.min():.3e} below -{tol:g}; not PSD")
    w = np.clip(w, 0.0, None)
    root = (v * np.sqrt(w)) @ v.conj().T
    return TruncatedOperator((root + root.conj().T) / 2.0, hermitian=True)
