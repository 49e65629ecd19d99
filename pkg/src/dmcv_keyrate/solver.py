"""Two-step key-rate solver.

Step 1 minimises ``f(rho) = D(G(rho) || Z(G(rho)))`` over the constraint set
with Frank-Wolfe iterations. Step 2 turns the resulting point into a
certified lower bound using the convexity tangent plane and a weak-duality
bound of the linearised problem over a slightly relaxed constraint set.

All entropies are in bits. Objective values are reported per key-generation
round, i.e. divided by :attr:`PostprocessingMaps.key_weight`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from .channel import (
    ChannelModel,
    delta_ec_heterodyne,
    delta_ec_homodyne,
    heterodyne_region_probs,
    homodyne_statistics,
    simulated_joint_state,
    simulated_moments,
)
from .fock_ops import FockDim
from .protocol import (
    HOMODYNE,
    ConstraintSet,
    PostprocessingMaps,
    ProtocolSpec,
    build_constraints,
    postprocessing_maps,
)
from .sdp import (
    DEFAULT_BACKEND,
    NATIVE_OPTIONS,
    LinearSdpProblem,
    SdpError,
    independent_rows,
    solve_linear_sdp,
)

__all__ = [
    "SolverOptions",
    "KeyRateProblem",
    "KeyRateReport",
    "FrankWolfeResult",
    "InfeasibleConstraintsError",
    "objective_value",
    "gradient",
    "feasible_initial_point",
    "frank_wolfe",
    "reliable_lower_bound",
    "build_problem",
    "key_rate",
]

LN2 = np.log(2.0)
NEG_EIG_TOL = 1e-8


class InfeasibleConstraintsError(ValueError):
    """No PSD operator meets the constraints within the requested tolerance."""


@dataclass(frozen=True)
class SolverOptions:
    """Solver knobs.

    ``eps_pert_scale`` is multiplied by the output dimension of ``G`` to give
    the spectral perturbation applied before matrix logarithms.
    """

    max_iters: int = 300
    gap_tol: float = 1e-6
    eps_pert_scale: float = 1e-12
    eps_viol: float = 1e-8
    line_search_tol: float = 1e-6
    init_tol: float = 1e-8
    backend: str = DEFAULT_BACKEND
    sdp_options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        for name in ("gap_tol", "eps_viol", "line_search_tol", "init_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.eps_pert_scale < 0:
            raise ValueError("eps_pert_scale must be non-negative")


@dataclass
class KeyRateProblem:
    spec: ProtocolSpec
    channel: ChannelModel
    dim: FockDim
    constraints: ConstraintSet
    maps: PostprocessingMaps
    options: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        n = self.spec.n_states * self.dim.dim
        if self.maps.input_dim != n:
            raise ValueError(f"maps act on dimension {self.maps.input_dim}, constraints on {n}")
        for g in self.constraints.observables:
            if g.shape != (n, n):
                raise ValueError("constraint observable has inconsistent shape")

    @property
    def eps_pert(self) -> float:
        return self.options.eps_pert_scale * self.maps.output_dim


@dataclass
class FrankWolfeResult:
    rho: np.ndarray
    value: float
    iterations: int
    gap: float
    converged: bool
    history: list[tuple[float, float, float]]  # (f, gap, step)
    status: str = "ok"


@dataclass
class KeyRateReport:
    """Outcome of one key-rate evaluation (values per key-generation round)."""

    step1_value: float
    lower_bound: float
    p_pass: float
    delta_ec: float
    key_rate: float
    iterations: int
    fw_gap: float
    max_residual: float
    cutoff: int
    status: str
    backend: str
    sdp_tolerance: float
    wall_time_s: float = 0.0
    history: list = field(default_factory=list, repr=False)


# ---------------------------------------------------------------------------
# objective and gradient


def _psd_factor(rho: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((rho + rho.conj().T) / 2.0)
    if w[0] < -NEG_EIG_TOL:
        raise ValueError(f"state has eigenvalue {w[0]:.3e} below -{NEG_EIG_TOL:g}")
    return v * np.sqrt(np.clip(w, 0.0, None))


def _xlogx(t: np.ndarray) -> float:
    t = t[t > 0]
    return float(np.sum(t * np.log(t)))


def _kraus_blocks(maps: PostprocessingMaps) -> list[np.ndarray]:
    b = maps.block_dim
    return [maps.kraus[j * b:(j + 1) * b] for j in range(maps.key_dim)]


def _spectra(maps: PostprocessingMaps, rho: np.ndarray, eps: float):
    """Perturbed spectra of ``G(rho)`` and of each pinched block; natural units."""
    k = maps.kraus
    chol = _psd_factor(rho)
    w_mat = k @ chol
    trace = float(np.real(np.vdot(w_mat, w_mat)))
    d = maps.output_dim
    c = eps * trace / d
    gram = w_mat.conj().T @ w_mat
    lam = np.clip(np.linalg.eigvalsh((gram + gram.conj().T) / 2.0), 0.0, None)
    full = np.concatenate([(1 - eps) * lam + c, np.full(max(d - lam.size, 0), c)])
    blocks = []
    for kj in _kraus_blocks(maps):
        wj = kj @ chol
        bj = wj @ wj.conj().T
        mu = np.clip(np.linalg.eigvalsh((bj + bj.conj().T) / 2.0), 0.0, None)
        blocks.append((1 - eps) * mu + c)
    return trace, full, blocks


def objective_value(maps: PostprocessingMaps, rho: np.ndarray, eps_pert: float | None = None) -> float:
    """``D(G(rho) || Z(G(rho)))`` in bits, with spectral perturbation.

    Both arguments are replaced by ``(1 - eps) X + eps Tr(X) 1/d`` before
    the logarithm. The perturbation commutes with the pinching and can only
    decrease the relative entropy, so bounds derived from it stay valid.
    The value is not divided by the key weight.

    Raises
    ------
    ValueError
        If ``rho`` has an eigenvalue below ``-1e-8``.
    """
    eps = 1e-12 * maps.output_dim if eps_pert is None else float(eps_pert)
    trace, full, blocks = _spectra(maps, rho, eps)
    if trace <= 0:
        return 0.0
    val = _xlogx(full) - sum(_xlogx(b) for b in blocks)
    return max(val / LN2, 0.0) if val > -1e-9 * LN2 else val / LN2


def gradient(maps: PostprocessingMaps, rho: np.ndarray, eps_pert: float | None = None) -> np.ndarray:
    """Hermitian gradient ``G^+[D^+(log2 G(rho) - log2 Z(G(rho)))]`` of :func:`objective_value`.

    ``D`` is the spectral perturbation and ``D^+(Y) = (1 - eps) Y + eps Tr(Y) 1/d``.
    """
    eps = 1e-12 * maps.output_dim if eps_pert is None else float(eps_pert)
    k = maps.kraus
    n = k.shape[1]
    d = maps.output_dim
    chol = _psd_factor(rho)
    w_mat = k @ chol
    trace = float(np.real(np.vdot(w_mat, w_mat)))
    if trace <= 0:
        return np.zeros((n, n), dtype=complex)
    c = eps * trace / d
    if c <= 0:
        raise ValueError("gradient needs a positive perturbation for rank-deficient G(rho)")
    kk = k.conj().T @ k
    log_c = np.log(c)

    # K^+ log X K with X = (1-eps) W W^+ + c 1
    u, s, _ = np.linalg.svd(w_mat, full_matrices=False)
    shift = np.log((1 - eps) * s**2 + c) - log_c
    ku = k.conj().T @ u
    term_full = log_c * kk + (ku * shift) @ ku.conj().T
    tr_full = d * log_c + float(np.sum(shift))

    term_blocks = np.zeros((n, n), dtype=complex)
    tr_blocks = 0.0
    for kj in _kraus_blocks(maps):
        wj = kj @ chol
        bj = wj @ wj.conj().T
        mu, v = np.linalg.eigh((bj + bj.conj().T) / 2.0)
        logs = np.log((1 - eps) * np.clip(mu, 0.0, None) + c)
        kv = kj.conj().T @ v
        term_blocks += (kv * logs) @ kv.conj().T
        tr_blocks += float(np.sum(logs))

    grad = (1 - eps) * (term_full - term_blocks) + (eps / d) * (tr_full - tr_blocks) * kk
    grad = grad / LN2
    return (grad + grad.conj().T) / 2.0


# ---------------------------------------------------------------------------
# feasibility


def feasible_initial_point(problem: KeyRateProblem, rho_sim: np.ndarray, tol: float | None = None,
                           max_rounds: int = 500) -> np.ndarray:
    """Nearest-feasible starting point via alternating projections.

    Alternates the Frobenius projection onto the affine constraint set with
    the projection onto the PSD cone, ending on a unit-trace PSD operator.

    Raises
    ------
    InfeasibleConstraintsError
        If the final residual exceeds ``tol`` (default ``options.init_tol``).
    """
    tol = problem.options.init_tol if tol is None else tol
    cs = problem.constraints
    keep = independent_rows(cs.observables)
    gam = np.array([cs.observables[i] for i in keep])
    targets = cs.targets[keep]
    flat = gam.reshape(len(keep), -1)
    gram = (flat.conj() @ flat.T).real
    gram_inv = np.linalg.pinv(gram)

    def affine(x):
        r = targets - (flat.conj() @ x.ravel()).real
        return x + np.tensordot(gram_inv @ r, gam, axes=1)

    def psd(x):
        w, v = np.linalg.eigh((x + x.conj().T) / 2.0)
        return (v * np.clip(w, 0.0, None)) @ v.conj().T

    def finish(x):
        x = psd(x)
        tr = np.trace(x).real
        if tr <= 0:
            raise InfeasibleConstraintsError("projection collapsed to the zero operator")
        tr_target = cs.targets[cs.trace_index]
        return (x + x.conj().T) / 2.0 * (tr_target / tr)

    x = np.asarray(rho_sim, dtype=complex)
    best, best_res = None, np.inf
    prev = np.inf
    for _ in range(max_rounds):
        cand = finish(x)
        res = float(np.max(np.abs(cs.residuals(cand))))
        if res < best_res:
            best, best_res = cand, res
        if res <= 1e-13 or res > prev * (1 - 1e-4) and res <= tol:
            break
        prev = res
        x = psd(affine(x))
    if best_res > tol:
        raise InfeasibleConstraintsError(
            f"constraints cannot be met by a PSD operator: residual {best_res:.3e} > {tol:g}")
    return best


# ---------------------------------------------------------------------------
# Frank-Wolfe and the certified bound


def _relaxation(problem: KeyRateProblem, rho: np.ndarray) -> np.ndarray:
    res = np.abs(problem.constraints.residuals(rho))
    return np.maximum(res, problem.options.eps_viol)


def _linear_subproblem(problem: KeyRateProblem, cost: np.ndarray, relaxation: np.ndarray):
    cs = problem.constraints
    sdp = LinearSdpProblem(cost, cs.observables, cs.targets, relaxation=relaxation,
                           trace_index=cs.trace_index, backend=problem.options.backend,
                           options=dict(problem.options.sdp_options))
    return solve_linear_sdp(sdp)


def frank_wolfe(problem: KeyRateProblem, rho0: np.ndarray) -> FrankWolfeResult:
    """Conditional-gradient descent with exact line search.

    The linear subproblems are solved over the constraint set relaxed by
    ``max(eps_viol, residual of rho0)`` per constraint, which contains
    ``rho0``; every iterate is a convex combination of points of that set.
    """
    opts = problem.options
    maps = problem.maps
    eps = problem.eps_pert
    relax = _relaxation(problem, rho0)
    rho = np.array(rho0, dtype=complex)
    f = objective_value(maps, rho, eps)
    history: list[tuple[float, float, float]] = []
    gap = np.inf
    converged = False
    status = "max_iters"
    it = 0
    for it in range(1, opts.max_iters + 1):
        grad = gradient(maps, rho, eps)
        sol = _linear_subproblem(problem, grad, relax)
        omega = sol.sigma
        direction = omega - rho
        gap = float(-np.vdot(grad, direction).real)
        if gap < opts.gap_tol:
            history.append((f, gap, 0.0))
            converged, status = True, "converged"
            break

        def phi(t):
            return objective_value(maps, rho + t * direction, eps)

        ls = optimize.minimize_scalar(phi, bounds=(0.0, 1.0), method="bounded",
                                      options={"xatol": opts.line_search_tol})
        t_best, f_best = float(ls.x), float(ls.fun)
        f_one = phi(1.0)
        if f_one < f_best:
            t_best, f_best = 1.0, f_one
        history.append((f, gap, t_best if f_best < f else 0.0))
        if not f_best < f:
            status = "stalled"
            break
        rho = rho + t_best * direction
        rho = (rho + rho.conj().T) / 2.0
        f = f_best
    return FrankWolfeResult(rho, f, it, gap, converged, history, status)


def reliable_lower_bound(problem: KeyRateProblem, rho: np.ndarray) -> tuple[float, str]:
    """Certified lower bound on the minimum of the (unnormalised) objective.

    ``f(rho) - <grad, rho> + dual`` where ``dual`` bounds
    ``min <grad, sigma>`` over the constraint set relaxed by
    ``max(eps_viol, |residual of rho|)``. Returns ``(0, reason)`` when no
    certificate can be produced.
    """
    maps = problem.maps
    eps = problem.eps_pert
    try:
        f = objective_value(maps, rho, eps)
        grad = gradient(maps, rho, eps)
        sol = _linear_subproblem(problem, grad, _relaxation(problem, rho))
    except (SdpError, ValueError, np.linalg.LinAlgError) as exc:
        return 0.0, f"no_certificate: {exc}"
    if not np.isfinite(sol.dual_value):
        return 0.0, "no_certificate: unbounded dual"
    bound = f - float(np.vdot(grad, rho).real) + sol.dual_value
    return max(bound, 0.0), "ok"


# ---------------------------------------------------------------------------
# orchestration


def postselection_statistics(spec: ProtocolSpec, ch: ChannelModel) -> tuple[float, float]:
    """``(p_pass, delta_EC)`` per key-generation round."""
    if spec.detection == HOMODYNE:
        stats = homodyne_statistics(ch, spec)
        if stats.p_pass <= 0:
            return 0.0, 0.0
        return stats.p_pass, delta_ec_homodyne(stats.error, stats.marginal, spec.beta)
    probs = heterodyne_region_probs(ch, spec)
    p_pass = float(probs.sum(axis=0) @ spec.probs)
    if p_pass <= 0:
        return 0.0, 0.0
    return p_pass, delta_ec_heterodyne(probs, spec.probs, spec.beta)


def build_problem(spec: ProtocolSpec, ch: ChannelModel, dim, options: SolverOptions | None = None) -> KeyRateProblem:
    dim = dim if isinstance(dim, FockDim) else FockDim(int(dim))
    moments = simulated_moments(ch, spec)
    return KeyRateProblem(spec, ch, dim, build_constraints(spec, moments, dim),
                          postprocessing_maps(spec, dim), options or SolverOptions())


def key_rate(spec: ProtocolSpec, ch: ChannelModel, dim=10, options: SolverOptions | None = None) -> KeyRateReport:
    """Asymptotic key rate ``max(0, lower - p_pass * delta_EC)`` for one configuration.

    Solver failures do not raise; they yield ``key_rate = 0`` with the reason
    in ``status``. Invalid configurations and infeasible statistics raise.
    """
    start = time.perf_counter()
    problem = build_problem(spec, ch, dim, options)
    opts = problem.options
    tol = float(opts.sdp_options.get("tol", NATIVE_OPTIONS["tol"]))
    weight = problem.maps.key_weight
    p_pass, delta_ec = postselection_statistics(spec, ch)
    rho0 = feasible_initial_point(problem, simulated_joint_state(ch, spec, problem.dim))
    status = "ok"
    try:
        fw = frank_wolfe(problem, rho0)
        rho, iters, gap, hist = fw.rho, fw.iterations, fw.gap, fw.history
        step1 = fw.value / weight
        if not fw.converged:
            status = fw.status
    except (SdpError, ValueError, np.linalg.LinAlgError) as exc:
        rho, iters, gap, hist = rho0, 0, float("nan"), []
        step1 = objective_value(problem.maps, rho0, problem.eps_pert) / weight
        status = f"fw_failed: {exc}"
    lower, lb_status = reliable_lower_bound(problem, rho)
    lower /= weight
    if lb_status != "ok":
        status = lb_status
    rate = max(0.0, lower - p_pass * delta_ec) if lb_status == "ok" else 0.0
    max_res = float(np.max(np.abs(problem.constraints.residuals(rho))))
    return KeyRateReport(
        step1_value=step1, lower_bound=lower, p_pass=p_pass, delta_ec=delta_ec, key_rate=rate,
        iterations=iters, fw_gap=gap, max_residual=max_res, cutoff=problem.dim.cutoff,
        status=status, backend=opts.backend, sdp_tolerance=tol,
        wall_time_s=time.perf_counter() - start, history=hist,
    )


def with_options(options: SolverOptions, **changes) -> SolverOptions:
    return replace(options, **changes)
