"""Simulated phase-invariant Gaussian channel and the classical statistics
(sifting probability, error rates, error-correction leakage) derived from it.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial, pi, sqrt

import numpy as np
from scipy import integrate, special

from .entropy import binary_entropy, shannon_entropy
from .fock_ops import FockDim, coherent_fock_vector, region_operators
from .protocol import HETERODYNE, HOMODYNE, ProtocolSpec, coherent_overlap

__all__ = [
    "ChannelModel",
    "SimulatedMoments",
    "HomodyneStatistics",
    "simulated_moments",
    "channel_output_block",
    "simulated_joint_state",
    "homodyne_statistics",
    "ppass_and_error_homodyne",
    "delta_ec_homodyne",
    "heterodyne_region_probs",
    "heterodyne_region_probs_fock",
    "delta_ec_heterodyne",
]

ATTENUATION_DB_PER_KM = 0.2


@dataclass(frozen=True)
class ChannelModel:
    """Loss ``eta`` and source-referenced excess noise ``xi`` (output noise ``eta * xi``)."""

    eta: float
    xi: float = 0.0
    distance_km: float | None = None
    eta_det: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"transmittance must lie in (0, 1], got {self.eta}")
        if self.xi < 0:
            raise ValueError(f"excess noise must be non-negative, got {self.xi}")
        if not 0.0 < self.eta_det <= 1.0:
            raise ValueError(f"detector efficiency must lie in (0, 1], got {self.eta_det}")

    @classmethod
    def from_distance(cls, distance_km: float, xi: float = 0.0, eta_det: float = 1.0) -> "ChannelModel":
        if distance_km < 0:
            raise ValueError("distance must be non-negative")
        eta = eta_det * 10.0 ** (-ATTENUATION_DB_PER_KM * distance_km / 10.0)
        return cls(eta=eta, xi=xi, distance_km=float(distance_km), eta_det=eta_det)

    @property
    def delta(self) -> float:
        """Excess noise referenced to Bob's input."""
        return self.eta * self.xi

    @property
    def thermal_mean(self) -> float:
        return self.eta * self.xi / 2.0


@dataclass(frozen=True)
class SimulatedMoments:
    """Per-signal expectation values of ``q, p, n, d`` at Bob."""

    q: np.ndarray
    p: np.ndarray
    n: np.ndarray
    d: np.ndarray


def simulated_moments(ch: ChannelModel, spec: ProtocolSpec) -> SimulatedMoments:
    a = spec.amplitudes
    eta = ch.eta
    return SimulatedMoments(
        q=np.sqrt(2 * eta) * a.real,
        p=np.sqrt(2 * eta) * a.imag,
        n=eta * np.abs(a) ** 2 + ch.thermal_mean,
        d=eta * 2.0 * (a * a).real,
    )


def channel_output_block(a: complex, b: complex, ch: ChannelModel, dim) -> np.ndarray:
    """Truncated Fock matrix of ``E(|a><b|)`` for the Gaussian channel ``E``.

    ``E`` is realised as a pure-loss channel of transmittance ``eta / g``
    followed by a quantum-limited amplifier of gain ``g = 1 + eta xi / 2``.
    Loss maps coherent outer products to coherent outer products; the
    amplifier's Kraus operators ``(a^+)^k g^(-n/2)`` only raise photon number,
    so each truncated matrix element is a finite sum and exact.
    """
    dim = dim if isinstance(dim, FockDim) else FockDim(int(dim))
    d = dim.dim
    g = 1.0 + ch.thermal_mean
    tau = ch.eta / g
    nu = (g - 1.0) / g
    pref = coherent_overlap(sqrt(1 - tau) * b, sqrt(1 - tau) * a)
    pref *= np.exp(-tau * (abs(a) ** 2 + abs(b) ** 2) * (1 - 1 / g) / 2.0) / g
    ca = coherent_fock_vector(sqrt(tau / g) * a, dim)
    cb = coherent_fock_vector(sqrt(tau / g) * b, dim)
    block = np.outer(ca, cb.conj())
    if nu > 0:
        m = np.arange(d)
        for k in range(1, d):
            # sqrt(m!/(m-k)!) <m-k|c> for m >= k, else 0
            ratio = np.zeros(d)
            ratio[k:] = [sqrt(factorial(mm) / factorial(mm - k)) for mm in m[k:]]
            va = np.zeros(d, dtype=complex)
            vb = np.zeros(d, dtype=complex)
            va[k:] = ratio[k:] * ca[: d - k]
            vb[k:] = ratio[k:] * cb[: d - k]
            block = block + nu**k / factorial(k) * np.outer(va, vb.conj())
    return pref * block


def simulated_joint_state(ch: ChannelModel, spec: ProtocolSpec, dim) -> np.ndarray:
    """Truncation of ``sum_ij sqrt(p_i p_j) |i><j| x E(|phi_i><phi_j|)``."""
    dim = dim if isinstance(dim, FockDim) else FockDim(int(dim))
    amps = spec.amplitudes
    sp = np.sqrt(spec.probs)
    nx, d = spec.n_states, dim.dim
    rho = np.zeros((nx * d, nx * d), dtype=complex)
    for i in range(nx):
        for j in range(i, nx):
            blk = sp[i] * sp[j] * channel_output_block(amps[i], amps[j], ch, dim)
            rho[i * d:(i + 1) * d, j * d:(j + 1) * d] = blk
            if j != i:
                rho[j * d:(j + 1) * d, i * d:(i + 1) * d] = blk.conj().T
    return (rho + rho.conj().T) / 2.0


@dataclass(frozen=True)
class HomodyneStatistics:
    p_pass: float
    error: float
    marginal: np.ndarray  # Bob's postselected key distribution P(z=0), P(z=1)


def _upper_tail(threshold: float, mean: float, width: float) -> float:
    # P(q >= threshold) for q ~ N(mean, width^2 / 2)
    return 0.5 * special.erfc((threshold - mean) / width)


def homodyne_statistics(ch: ChannelModel, spec: ProtocolSpec) -> HomodyneStatistics:
    if spec.detection != HOMODYNE:
        raise ValueError("homodyne statistics requested for a heterodyne protocol")
    width = sqrt(1.0 + ch.delta)
    key = spec.key_states
    w = spec.probs[list(key)]
    w = w / w.sum()
    dc = spec.delta_c
    joint = np.zeros((2, 2))  # [x, z]
    for row, x in enumerate(key):
        mu = sqrt(2 * ch.eta) * spec.constellation[x].real
        joint[row, 0] = w[row] * _upper_tail(dc, mu, width)
        joint[row, 1] = w[row] * _upper_tail(dc, -mu, width)
    p_pass = float(joint.sum())
    error = float(joint[0, 1] + joint[1, 0]) / p_pass if p_pass > 0 else 0.5
    marginal = joint.sum(axis=0) / p_pass if p_pass > 0 else np.full(2, 0.5)
    return HomodyneStatistics(p_pass, error, marginal)


def ppass_and_error_homodyne(ch: ChannelModel, spec: ProtocolSpec) -> tuple[float, float]:
    stats = homodyne_statistics(ch, spec)
    return stats.p_pass, stats.error


def delta_ec_homodyne(error: float, marginal, beta: float) -> float:
    """Leakage ``(1 - beta) H(Z) + beta h(e)`` in bits.

    ``marginal`` is Bob's postselected binary distribution, either as the
    pair ``(P(z=0), P(z=1))`` or as ``P(z=0)`` alone.
    """
    if not 0.0 <= error <= 1.0:
        raise ValueError("error probability must lie in [0, 1]")
    if not 0.0 < beta <= 1.0:
        raise ValueError("beta must lie in (0, 1]")
    marginal = np.atleast_1d(np.asarray(marginal, dtype=float))
    if marginal.size == 1:
        marginal = np.array([marginal[0], 1.0 - marginal[0]])
    return (1.0 - beta) * shannon_entropy(marginal) + beta * binary_entropy(error)


def _region_window(j: int, delta_p: float) -> tuple[float, float]:
    return ((2 * j - 1) * pi / 4 + delta_p, (2 * j + 1) * pi / 4 - delta_p)


def heterodyne_region_probs(ch: ChannelModel, spec: ProtocolSpec, tol: float = 1e-9) -> np.ndarray:
    """``P[j, k] = P(z=j | x=k)``, integrating the Husimi function over region ``j``.

    Entries are unnormalised: ``sum_j P[j, k]`` is the postselection
    acceptance of signal ``k``.
    """
    if spec.detection != HETERODYNE:
        raise ValueError("region probabilities requested for a homodyne protocol")
    width = 1.0 + ch.delta / 2.0
    n = spec.n_states
    probs = np.zeros((4, n))
    if spec.delta_p >= pi / 4:
        return probs
    for k in range(n):
        center = sqrt(ch.eta) * spec.constellation[k]
        rmax = abs(center) + 8.0 * sqrt(width)
        if spec.delta_a >= rmax:
            continue

        def density(theta, r, c=center):
            z = r * np.exp(1j * theta)
            return r * np.exp(-abs(z - c) ** 2 / width) / (pi * width)

        for j in range(4):
            lo, hi = _region_window(j, spec.delta_p)
            val, err = integrate.dblquad(density, spec.delta_a, rmax, lo, hi,
                                         epsabs=tol / 10, epsrel=1e-12)
            if err > tol:
                raise RuntimeError(f"region integral P(z={j}|x={k}) did not reach {tol:g}")
            probs[j, k] = val
    return probs


def heterodyne_region_probs_fock(rho_ab: np.ndarray, spec: ProtocolSpec, dim) -> np.ndarray:
    """``Tr(R_j rho_B^k)`` evaluated with the truncated region operators."""
    dim = dim if isinstance(dim, FockDim) else FockDim(int(dim))
    d = dim.dim
    regions = region_operators(spec.delta_a, spec.delta_p, dim)
    out = np.zeros((4, spec.n_states))
    for k in range(spec.n_states):
        rho_b = rho_ab[k * d:(k + 1) * d, k * d:(k + 1) * d] / spec.probs[k]
        for j, r in enumerate(regions):
            out[j, k] = np.vdot(r.matrix, rho_b).real
    return out


def delta_ec_heterodyne(region_probs, probabilities, beta: float) -> float:
    """Leakage ``(1 - beta) H(Z) + beta H(Z|X)`` for the quaternary key, in bits.

    ``region_probs[j, k]`` may be unnormalised; it is renormalised by the
    postselection probability before the entropies are taken.
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError("beta must lie in (0, 1]")
    cond = np.asarray(region_probs, dtype=float)
    px = np.asarray(probabilities, dtype=float)
    joint = cond * px[None, :]
    total = joint.sum()
    if total <= 0:
        raise ValueError("no signal passes postselection")
    joint = joint / total
    h_z = shannon_entropy(joint.sum(axis=1))
    h_zx = shannon_entropy(joint.ravel()) - shannon_entropy(joint.sum(axis=0))
    return (1.0 - beta) * h_z + beta * h_zx
