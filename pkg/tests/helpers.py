"""Independent reference computations used as test oracles."""

from math import factorial, pi

import mpmath
import numpy as np
from scipy import integrate, linalg


def mp_hermite_function(n: int, q) -> mpmath.mpf:
    """``<q|n>`` from mpmath's Hermite polynomials."""
    return (mpmath.pi ** mpmath.mpf(-0.25) / mpmath.sqrt(mpmath.mpf(2) ** n * mpmath.factorial(n))
            * mpmath.exp(-mpmath.mpf(q) ** 2 / 2) * mpmath.hermite(n, q))


def mp_interval_entry(m: int, n: int, lo: float) -> float:
    """``int_lo^inf <m|q><q|n> dq`` in extended precision."""
    with mpmath.workdps(25):
        def f(q):
            return mp_hermite_function(m, q) * mp_hermite_function(n, q)
        return float(mpmath.quad(f, [lo, lo + 4, mpmath.inf]))


def region_quadrature(delta_a: float, delta_p: float, j: int, d: int) -> np.ndarray:
    """``(1/pi) int |g><g| d^2 g`` over region ``j`` by nested adaptive quadrature."""
    fact = np.sqrt([float(factorial(k)) for k in range(d)])
    ks = np.arange(d)
    lo, hi = j * pi / 2 - pi / 4 + delta_p, j * pi / 2 + pi / 4 - delta_p
    rmax = np.sqrt(2 * d + 1) + 9.0

    def radial(r):
        v = np.exp(-r * r / 2) * r ** ks / fact
        return r * np.outer(v, v) / pi

    rad, _ = integrate.quad_vec(radial, delta_a, rmax, epsabs=1e-13, epsrel=1e-13)

    def angular(theta):
        ph = np.exp(1j * ks * theta)
        m = np.outer(ph, ph.conj())
        return np.concatenate([m.real.ravel(), m.imag.ravel()])

    ang, _ = integrate.quad_vec(angular, lo, hi, epsabs=1e-13, epsrel=1e-13)
    ang = (ang[: d * d] + 1j * ang[d * d:]).reshape(d, d)
    return rad * ang


def displacement(alpha: complex, d: int) -> np.ndarray:
    a = np.diag(np.sqrt(np.arange(1, d, dtype=float)), k=1)
    return linalg.expm(alpha * a.T - np.conj(alpha) * a)


def thermal_loss_block(a: complex, b: complex, eta: float, nbar_env: float, d_out: int, d_big: int = 22) -> np.ndarray:
    """``E(|a><b|)`` for a beam splitter of transmittance ``eta`` mixing in a thermal mode.

    Built from an explicit two-mode unitary ``exp(theta (a b^+ - a^+ b))`` in an
    enlarged Fock space, then traced over the environment and truncated.
    """
    n = d_big
    a1 = np.diag(np.sqrt(np.arange(1, n, dtype=float)), k=1)
    eye = np.eye(n)
    am, be = np.kron(a1, eye), np.kron(eye, a1)
    theta = np.arccos(np.sqrt(eta))
    u = linalg.expm(theta * (am @ be.conj().T - am.conj().T @ be))
    vac = np.zeros(n)
    vac[0] = 1.0
    ka = displacement(a, n) @ vac
    kb = displacement(b, n) @ vac
    if nbar_env > 0:
        p = (nbar_env / (1 + nbar_env)) ** np.arange(n) / (1 + nbar_env)
        env = np.diag(p)
    else:
        env = np.diag(vac)
    big = u @ np.kron(np.outer(ka, kb.conj()), env) @ u.conj().T
    red = np.einsum("iaja->ij", big.reshape(n, n, n, n))
    return red[:d_out, :d_out]


def partial_trace_b(rho: np.ndarray, na: int, nb: int) -> np.ndarray:
    return np.einsum("iaja->ij", rho.reshape(na, nb, na, nb))


def random_density(n: int, rng, rank: int | None = None) -> np.ndarray:
    rank = n if rank is None else rank
    g = rng.normal(size=(n, rank)) + 1j * rng.normal(size=(n, rank))
    r = g @ g.conj().T
    return r / np.trace(r).real


def random_hermitian(n: int, rng) -> np.ndarray:
    h = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return (h + h.conj().T) / 2.0
