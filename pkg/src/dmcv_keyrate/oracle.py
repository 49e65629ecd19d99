"""Analytical key rate for the pure-loss channel without postselection.

Under a pure-loss channel of transmittance ``eta`` the adversary holds the
reflected coherent states ``|sqrt(1 - eta) alpha_x>``. These are pure and
independent of Bob's outcome given ``x``, so every state entering the
Holevo quantity is a mixture of at most four coherent states and its
spectrum follows from a weighted Gram matrix.
"""

from __future__ import annotations

from math import cosh, exp, sinh, sqrt

import numpy as np
from scipy import special

from .channel import ChannelModel, heterodyne_region_probs
from .entropy import binary_entropy, shannon_entropy
from .protocol import HOMODYNE, ProtocolSpec, coherent_overlap

__all__ = [
    "EveEnsemble",
    "eve_ensemble",
    "holevo_lossonly",
    "mutual_information_lossonly",
    "dw_rate_lossonly",
    "plob_bound",
    "mixture_entropy",
]


class EveEnsemble:
    """Adversary's conditional states and the joint ``P(x, z)`` of the key rounds.

    Attributes
    ----------
    gram : (k, k) complex ndarray
        ``<eps_i|eps_j>`` for the key-generating signals.
    joint : (k, nz) ndarray
        ``P(x, z)``, normalised to one.
    """

    def __init__(self, gram: np.ndarray, joint: np.ndarray):
        self.gram = np.asarray(gram, dtype=complex)
        self.joint = np.asarray(joint, dtype=float)

    @property
    def marginal_z(self) -> np.ndarray:
        return self.joint.sum(axis=0)

    @property
    def marginal_x(self) -> np.ndarray:
        return self.joint.sum(axis=1)


def _check_scope(spec: ProtocolSpec, eta: float) -> None:
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"transmittance must lie in (0, 1], got {eta}")
    if not spec.is_standard_quaternary():
        raise NotImplementedError("the analytical oracle covers the quaternary constellations only")
    if spec.delta_c or spec.delta_a or spec.delta_p:
        raise ValueError("the analytical oracle is restricted to zero postselection")


def mixture_entropy(weights, gram: np.ndarray) -> float:
    """Von Neumann entropy (bits) of ``sum_i w_i |e_i><e_i|`` from the Gram matrix ``<e_i|e_j>``.

    The nonzero spectrum equals that of ``sqrt(W) Gram sqrt(W)``.
    """
    sw = np.sqrt(np.asarray(weights, dtype=float))
    m = sw[:, None] * np.asarray(gram) * sw[None, :]
    w = np.linalg.eigvalsh((m + m.conj().T) / 2.0)
    return shannon_entropy(np.clip(w, 0.0, None))


def eve_ensemble(spec: ProtocolSpec, eta: float) -> EveEnsemble:
    _check_scope(spec, eta)
    key = list(spec.key_states)
    amps = spec.amplitudes[key] * sqrt(1.0 - eta)
    gram = coherent_overlap(amps[:, None], amps[None, :])
    px = spec.probs[key] / spec.probs[key].sum()
    if spec.detection == HOMODYNE:
        e = 0.5 * special.erfc(sqrt(2.0 * eta) * spec.alpha)
        cond = np.array([[1 - e, e], [e, 1 - e]])  # [x, z]
    else:
        cond = heterodyne_region_probs(ChannelModel(eta=eta), spec).T  # [x, z]
        cond = cond / cond.sum(axis=1, keepdims=True)
    return EveEnsemble(gram, px[:, None] * cond)


def _holevo_two_dim(spec: ProtocolSpec, eta: float, joint: np.ndarray) -> float:
    # |eps_pm> = c0 |e0> +- c1 |e1>
    g2 = (1.0 - eta) * spec.alpha**2
    c0 = exp(-g2 / 2.0) * sqrt(cosh(g2))
    c1 = exp(-g2 / 2.0) * sqrt(sinh(g2))
    vecs = np.array([[c0, c1], [c0, -c1]])

    def entropy(w):
        rho = (vecs.T * w) @ vecs
        return shannon_entropy(np.clip(np.linalg.eigvalsh(rho), 0.0, None))

    pz = joint.sum(axis=0)
    total = entropy(joint.sum(axis=1))
    cond = sum(pz[z] * entropy(joint[:, z] / pz[z]) for z in range(2) if pz[z] > 0)
    return max(total - cond, 0.0)


def holevo_lossonly(spec: ProtocolSpec, eta: float, xi: float = 0.0) -> float:
    """``chi(Z:E)`` in bits for the pure-loss channel and no postselection.

    Homodyne uses the two-dimensional representation of the reflected
    states; heterodyne uses Gram-matrix spectra of the four reflected states.

    Raises
    ------
    ValueError
        For excess noise, postselection or an invalid transmittance.
    """
    if xi != 0:
        raise ValueError("the analytical oracle applies to the pure-loss channel only (xi = 0)")
    ens = eve_ensemble(spec, eta)
    joint = ens.joint
    if spec.detection == HOMODYNE:
        return _holevo_two_dim(spec, eta, joint)
    pz = ens.marginal_z
    total = mixture_entropy(ens.marginal_x, ens.gram)
    cond = sum(pz[z] * mixture_entropy(joint[:, z] / pz[z], ens.gram)
               for z in range(joint.shape[1]) if pz[z] > 0)
    return max(total - cond, 0.0)


def mutual_information_lossonly(spec: ProtocolSpec, eta: float) -> float:
    ens = eve_ensemble(spec, eta)
    if spec.detection == HOMODYNE:
        e = ens.joint[0, 1] + ens.joint[1, 0]
        return 1.0 - binary_entropy(e)
    j = ens.joint
    return shannon_entropy(j.sum(axis=0)) + shannon_entropy(j.sum(axis=1)) - shannon_entropy(j)


def dw_rate_lossonly(spec: ProtocolSpec, eta: float, beta: float | None = None, xi: float = 0.0) -> float:
    """``max(0, beta I(X;Z) - chi(Z:E))`` per key-generation round, in bits."""
    if xi != 0:
        raise ValueError("the analytical oracle applies to the pure-loss channel only (xi = 0)")
    beta = spec.beta if beta is None else beta
    if not 0.0 < beta <= 1.0:
        raise ValueError("beta must lie in (0, 1]")
    return max(0.0, beta * mutual_information_lossonly(spec, eta) - holevo_lossonly(spec, eta))


def plob_bound(eta: float) -> float:
    """Repeaterless capacity ``-log2(1 - eta)`` of the pure-loss channel."""
    if not 0.0 < eta < 1.0:
        raise ValueError(f"transmittance must lie in (0, 1), got {eta}")
    return float(-np.log2(1.0 - eta))
