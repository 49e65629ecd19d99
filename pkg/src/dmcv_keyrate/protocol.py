"""Protocol definitions: constellations, source-replacement state, constraints
and the postprocessing maps ``G`` and ``Z`` for the two quaternary variants.

Register ordering is always ``R (key) x A (Alice) x B (Bob)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import pi
from typing import Sequence

import numpy as np

from .fock_ops import FockDim, build_observables, interval_operators, psd_sqrt, region_operators

__all__ = [
    "HOMODYNE",
    "HETERODYNE",
    "ProtocolSpec",
    "ConstraintSet",
    "PostprocessingMaps",
    "coherent_overlap",
    "alice_reduced_state",
    "build_constraints",
    "kraus_homodyne",
    "kraus_heterodyne",
    "postprocessing_maps",
    "apply_G",
    "apply_G_adjoint",
    "key_blocks",
    "apply_Z",
]

HOMODYNE = "homodyne"
HETERODYNE = "heterodyne"
MOMENT_NAMES = ("q", "p", "n", "d")


def _default_constellation(detection: str, alpha: float) -> tuple[complex, ...]:
    if detection == HOMODYNE:
        return (alpha, -alpha, 1j * alpha, -1j * alpha)
    return (alpha, 1j * alpha, -alpha, -1j * alpha)


@dataclass(frozen=True)
class ProtocolSpec:
    """Signal constellation, detection scheme and classical post-processing parameters.

    For homodyne detection the key is generated from the first two
    constellation entries (``+alpha`` and ``-alpha``) measured in ``q``; for
    heterodyne detection ``x = k`` is mapped to region ``j = k``.
    """

    detection: str
    alpha: float
    constellation: tuple[complex, ...] | None = None
    probabilities: tuple[float, ...] | None = None
    delta_c: float = 0.0
    delta_a: float = 0.0
    delta_p: float = 0.0
    beta: float = 0.95

    def __post_init__(self):
        if self.detection not in (HOMODYNE, HETERODYNE):
            raise ValueError(f"detection must be {HOMODYNE!r} or {HETERODYNE!r}, got {self.detection!r}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        const = self.constellation
        if const is None:
            const = _default_constellation(self.detection, float(self.alpha))
        const = tuple(complex(c) for c in const)
        probs = self.probabilities
        if probs is None:
            probs = (1.0 / len(const),) * len(const)
        probs = tuple(float(p) for p in probs)
        if len(probs) != len(const):
            raise ValueError("probabilities and constellation differ in length")
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError("probabilities must be non-negative and sum to 1")
        if self.delta_c < 0 or self.delta_a < 0:
            raise ValueError("postselection radii must be non-negative")
        if not 0.0 <= self.delta_p <= pi / 4:
            raise ValueError("delta_p must lie in [0, pi/4]")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        object.__setattr__(self, "constellation", const)
        object.__setattr__(self, "probabilities", probs)

    @property
    def n_states(self) -> int:
        return len(self.constellation)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array(self.constellation, dtype=complex)

    @property
    def probs(self) -> np.ndarray:
        return np.array(self.probabilities, dtype=float)

    @property
    def key_states(self) -> tuple[int, ...]:
        """Constellation indices that enter key generation."""
        return (0, 1) if self.detection == HOMODYNE else tuple(range(self.n_states))

    def is_standard_quaternary(self) -> bool:
        ref = _default_constellation(self.detection, float(self.alpha))
        return self.n_states == 4 and np.allclose(self.constellation, ref, atol=1e-14)


@dataclass(frozen=True)
class ConstraintSet:
    """Equality constraints ``Tr(rho Gamma_i) = gamma_i`` on ``rho_AB``."""

    observables: tuple[np.ndarray, ...]
    targets: np.ndarray
    rho_a: np.ndarray
    labels: tuple[str, ...] = ()
    trace_index: int = 0

    def __len__(self):
        return len(self.observables)

    def residuals(self, rho: np.ndarray) -> np.ndarray:
        """``Tr(rho Gamma_i) - gamma_i`` for every constraint."""
        vals = np.array([np.vdot(g, rho).real for g in self.observables])
        return vals - self.targets


@dataclass(frozen=True)
class PostprocessingMaps:
    """Single-Kraus map ``G(rho) = K rho K^+`` and pinching on the key register.

    ``key_weight`` is the probability, fixed by ``rho_A``, that Alice's
    register lies in the key-generating subspace. Objective values are
    reported per key-generation round by dividing by it.
    """

    kraus: np.ndarray
    key_dim: int
    input_dim: int
    key_weight: float = 1.0
    detection: str = ""

    @property
    def block_dim(self) -> int:
        return self.kraus.shape[0] // self.key_dim

    @property
    def output_dim(self) -> int:
        return self.kraus.shape[0]

    def projectors(self) -> list[np.ndarray]:
        """Explicit pinching projectors ``Z_j = |j><j|_R x 1_AB``."""
        eye = np.eye(self.block_dim)
        out = []
        for j in range(self.key_dim):
            e = np.zeros((self.key_dim, self.key_dim))
            e[j, j] = 1.0
            out.append(np.kron(e, eye))
        return out


def coherent_overlap(beta: complex, alpha: complex) -> complex:
    """``<beta|alpha>`` for coherent states."""
    return np.exp(-(abs(alpha) ** 2 + abs(beta) ** 2) / 2.0 + np.conj(beta) * alpha)


def alice_reduced_state(spec: ProtocolSpec) -> np.ndarray:
    """``rho_A = sum sqrt(p_x p_x') <phi_x'|phi_x> |x><x'|``."""
    amps = spec.amplitudes
    sp = np.sqrt(spec.probs)
    gram = coherent_overlap(amps[None, :], amps[:, None])
    rho = sp[:, None] * sp[None, :] * gram
    return (rho + rho.conj().T) / 2.0


def _hermitian_basis(n: int):
    """Orthogonal Hermitian basis of ``n x n`` matrices with labels."""
    for i in range(n):
        e = np.zeros((n, n), dtype=complex)
        e[i, i] = 1.0
        yield f"{i}{i}", e
    for i in range(n):
        for j in range(i + 1, n):
            re = np.zeros((n, n), dtype=complex)
            re[i, j] = re[j, i] = 1.0
            yield f"re{i}{j}", re
            im = np.zeros((n, n), dtype=complex)
            im[i, j], im[j, i] = 1j, -1j
            yield f"im{i}{j}", im


def build_constraints(spec: ProtocolSpec, moments, dim) -> ConstraintSet:
    """Assemble the coarse-grained moment constraints, normalisation and
    the fixed ``Tr_B rho_AB = rho_A`` condition as real scalar equalities.
    """
    dim = dim if isinstance(dim, FockDim) else FockDim(int(dim))
    nx = spec.n_states
    obs = build_observables(dim)
    probs = spec.probs
    table = {name: np.asarray(getattr(moments, name), dtype=float) for name in MOMENT_NAMES}
    for name, vals in table.items():
        if vals.shape != (nx,) or not np.all(np.isfinite(vals)):
            raise ValueError(f"moment <{name}> missing for some constellation index")

    eye_b = np.eye(dim.dim)
    gammas: list[np.ndarray] = [np.eye(nx * dim.dim, dtype=complex)]
    targets: list[float] = [1.0]
    labels: list[str] = ["trace"]
    for x in range(nx):
        proj = np.zeros((nx, nx))
        proj[x, x] = 1.0
        for name in MOMENT_NAMES:
            gammas.append(np.kron(proj, obs[name].matrix))
            targets.append(probs[x] * table[name][x])
            labels.append(f"{name}[{x}]")

    rho_a = alice_reduced_state(spec)
    for lab, h in _hermitian_basis(nx):
        gammas.append(np.kron(h, eye_b))
        targets.append(float(np.vdot(h, rho_a).real))
        labels.append(f"rhoA:{lab}")
    return ConstraintSet(tuple(gammas), np.array(targets), rho_a, tuple(labels), trace_index=0)


def _stack_kraus(blocks: Sequence[np.ndarray]) -> np.ndarray:
    return np.vstack(blocks)


def kraus_homodyne(spec: ProtocolSpec, dim) -> PostprocessingMaps:
    """``K = sum_z |z>_R x (|0><0| + |1><1|)_A x sqrt(I_z)_B``."""
    if spec.detection != HOMODYNE:
        raise ValueError("kraus_homodyne requires a homodyne protocol")
    if not spec.is_standard_quaternary():
        raise NotImplementedError("key maps exist only for the quaternary constellation")
    dim = dim if isinstance(dim, FockDim) else FockDim(int(dim))
    i0, i1 = interval_operators(spec.delta_c, dim)
    proj_a = np.diag([1.0 if x in spec.key_states else 0.0 for x in range(spec.n_states)])
    blocks = [np.kron(proj_a, psd_sqrt(op).matrix) for op in (i0, i1)]
    weight = float(sum(spec.probs[x] for x in spec.key_states))
    return PostprocessingMaps(_stack_kraus(blocks), 2, spec.n_states * dim.dim, weight, HOMODYNE)


def kraus_heterodyne(spec: ProtocolSpec, dim) -> PostprocessingMaps:
    """``K = sum_z |z>_R x 1_A x sqrt(R_z)_B``."""
    if spec.detection != HETERODYNE:
        raise ValueError("kraus_heterodyne requires a heterodyne protocol")
    if not spec.is_standard_quaternary():
        raise NotImplementedError("key maps exist only for the quaternary constellation")
    dim = dim if isinstance(dim, FockDim) else FockDim(int(dim))
    regions = region_operators(spec.delta_a, spec.delta_p, dim)
    eye_a = np.eye(spec.n_states)
    blocks = [np.kron(eye_a, psd_sqrt(r).matrix) for r in regions]
    return PostprocessingMaps(_stack_kraus(blocks), 4, spec.n_states * dim.dim, 1.0, HETERODYNE)


def postprocessing_maps(spec: ProtocolSpec, dim) -> PostprocessingMaps:
    if spec.detection == HOMODYNE:
        return kraus_homodyne(spec, dim)
    return kraus_heterodyne(spec, dim)


def apply_G(maps: PostprocessingMaps, rho: np.ndarray) -> np.ndarray:
    k = maps.kraus
    out = k @ rho @ k.conj().T
    return (out + out.conj().T) / 2.0


def apply_G_adjoint(maps: PostprocessingMaps, x: np.ndarray) -> np.ndarray:
    k = maps.kraus
    out = k.conj().T @ x @ k
    return (out + out.conj().T) / 2.0


def key_blocks(maps: PostprocessingMaps, sigma: np.ndarray) -> list[np.ndarray]:
    """Diagonal key-register blocks ``<j|_R sigma |j>_R``."""
    b = maps.block_dim
    return [sigma[j * b:(j + 1) * b, j * b:(j + 1) * b] for j in range(maps.key_dim)]


def apply_Z(maps: PostprocessingMaps, sigma: np.ndarray) -> np.ndarray:
    """Pinching ``sum_j Z_j sigma Z_j``: keeps only the diagonal key blocks."""
    out = np.zeros_like(sigma)
    b = maps.block_dim
    for j in range(maps.key_dim):
        sl = slice(j * b, (j + 1) * b)
        out[sl, sl] = sigma[sl, sl]
    return out
