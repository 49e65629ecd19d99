"""Linear SDP subproblem over complex density matrices.

Solves::

    minimize    Re Tr(C sigma)
    subject to  |Tr(Gamma_i sigma) - gamma_i| <= eps_i   (eps_i = 0: equality)
                sigma >= 0

Two backends are provided:

``"native"`` (default)
    A primal-dual path-following interior-point method working directly on
    complex Hermitian matrices (HKM search direction, Mehrotra
    predictor-corrector). Relaxed rows are handled by box-bounded slack
    variables. The Schur complement has one row per constraint, so an
    iteration costs ``O(m n^3)`` complex flops.
``"cvxopt"``
    CVXOPT's real cone solver on the real symmetric embedding
    ``[[Re X, -Im X], [Im X, Re X]]``. Slower; kept as an independent
    cross-check.

The dual bound is re-certified after every solve: for any multiplier vector
``y``, ``sum y_i gamma_i - sum eps_i |y_i| + min(0, lambda_min(C - sum y_i Gamma_i)) * t_max``
bounds the primal optimum from below whenever ``Tr sigma <= t_max`` on the
feasible set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

__all__ = [
    "LinearSdpProblem",
    "LinearSdpResult",
    "SdpError",
    "BACKENDS",
    "DEFAULT_BACKEND",
    "real_embedding",
    "independent_rows",
    "certified_dual_bound",
    "solve_linear_sdp",
]

DEFAULT_BACKEND = "native"
BACKENDS = ("native", "cvxopt")

NATIVE_OPTIONS = {"tol": 1e-9, "maxiters": 80, "step_fraction": 0.98}
INFEASIBLE_TOL = 1e-5
CVXOPT_OPTIONS = {"abstol": 1e-8, "reltol": 1e-8, "feastol": 1e-8, "maxiters": 100}


class SdpError(RuntimeError):
    """The backend returned neither a solution nor a usable certificate."""


@dataclass
class LinearSdpProblem:
    """Data of one linear SDP subproblem.

    Parameters
    ----------
    cost : (n, n) complex ndarray
        Hermitian cost observable ``C``.
    observables : sequence of (n, n) complex ndarray
        Hermitian constraint observables ``Gamma_i``.
    targets : (m,) ndarray
        Targets ``gamma_i``.
    relaxation : (m,) ndarray or None
        Per-constraint allowance ``eps_i >= 0``; ``None`` means equalities.
    trace_index : int or None
        Index of the constraint ``Gamma = 1``; used to bound ``Tr sigma``
        in the certified dual.
    backend : str
        ``"native"`` or ``"cvxopt"``.
    options : dict
        Backend options overriding the defaults.
    """

    cost: np.ndarray
    observables: tuple[np.ndarray, ...]
    targets: np.ndarray
    relaxation: np.ndarray | None = None
    trace_index: int | None = 0
    backend: str = DEFAULT_BACKEND
    options: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.cost.shape[0]

    def trace_bound(self) -> float:
        """Upper bound on ``Tr sigma`` implied by the (relaxed) trace constraint."""
        if self.trace_index is None:
            return float("inf")
        eps = 0.0 if self.relaxation is None else float(self.relaxation[self.trace_index])
        return float(self.targets[self.trace_index]) + eps


@dataclass
class LinearSdpResult:
    sigma: np.ndarray
    primal_value: float
    dual_value: float
    multipliers: np.ndarray
    status: str
    iterations: int = 0
    backend: str = DEFAULT_BACKEND

    @property
    def gap(self) -> float:
        return self.primal_value - self.dual_value


def real_embedding(x: np.ndarray) -> np.ndarray:
    """``[[Re X, -Im X], [Im X, Re X]]``; ``Tr`` of products doubles."""
    re, im = x.real, x.imag
    return np.block([[re, -im], [im, re]])


def _unembed(z: np.ndarray, n: int) -> np.ndarray:
    # projection of a real symmetric 2n x 2n matrix onto the embedded subspace
    re = (z[:n, :n] + z[n:, n:]) / 2.0
    im = (z[n:, :n] - z[:n, n:]) / 2.0
    out = re + 1j * im
    return (out + out.conj().T) / 2.0


def _herm(x: np.ndarray) -> np.ndarray:
    return (x + x.conj().T) / 2.0


def certified_dual_bound(problem: LinearSdpProblem, y: np.ndarray) -> float:
    """Weak-duality lower bound for an arbitrary multiplier vector ``y``."""
    y = np.asarray(y, dtype=float)
    slack = problem.cost.astype(complex).copy()
    for yi, g in zip(y, problem.observables):
        slack -= yi * g
    lam = float(np.linalg.eigvalsh(_herm(slack))[0])
    value = float(y @ problem.targets)
    if problem.relaxation is not None:
        value -= float(np.abs(y) @ problem.relaxation)
    if lam < 0:
        tmax = problem.trace_bound()
        if not np.isfinite(tmax):
            return float("-inf")
        value += lam * tmax
    return value


def independent_rows(observables, tol: float = 1e-10) -> np.ndarray:
    """Indices of a maximal linearly independent subset of the observables."""
    mat = np.array([np.concatenate([g.real.ravel(), g.imag.ravel()]) for g in observables]).T
    _, r, piv = linalg.qr(mat, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > tol * diag[0]))
    return np.sort(piv[:rank])


def solve_linear_sdp(problem: LinearSdpProblem) -> LinearSdpResult:
    """Solve the subproblem; raises :class:`SdpError` when nothing usable comes back.

    Linearly dependent constraints are dropped before the solve (their
    multipliers are zero). The returned ``dual_value`` is always the
    certified bound of :func:`certified_dual_bound` evaluated on the
    original problem, never the backend's own estimate.
    """
    if problem.backend not in BACKENDS:
        raise ValueError(f"unknown SDP backend {problem.backend!r}; choose from {BACKENDS}")
    keep = independent_rows(problem.observables)
    observables = [np.asarray(problem.observables[i], dtype=complex) for i in keep]
    targets = np.asarray(problem.targets, dtype=float)[keep]
    if problem.relaxation is None:
        eps = np.zeros(len(keep))
    else:
        eps = np.asarray(problem.relaxation, dtype=float)[keep]
        if np.any(eps < 0):
            raise ValueError("relaxation must be non-negative")
    cost = _herm(np.asarray(problem.cost, dtype=complex))
    if problem.backend == "native":
        sigma, y_kept, status, iters = _solve_native(cost, observables, targets, eps, problem.options)
    else:
        sigma, y_kept, status, iters = _solve_cvxopt(cost, observables, targets, eps, problem.options)
    y = np.zeros(len(problem.observables))
    y[keep] = y_kept
    viol = np.abs(np.array([np.vdot(g, sigma).real for g in observables]) - targets) - eps
    if np.max(viol, initial=0.0) > INFEASIBLE_TOL * (1.0 + np.linalg.norm(targets)):
        raise SdpError(f"no feasible point found (constraint violation {np.max(viol):.3e}, status {status})")
    primal = float(np.vdot(problem.cost, sigma).real)
    dual = certified_dual_bound(problem, y)
    return LinearSdpResult(sigma, primal, dual, y, status, iters, problem.backend)


# ---------------------------------------------------------------------------
# native interior-point backend


def _max_step(x: np.ndarray, dx: np.ndarray) -> float:
    """Largest ``t`` with ``x + t dx >= 0`` for Hermitian PD ``x``."""
    chol = np.linalg.cholesky(x)
    inv = linalg.solve_triangular(chol, np.eye(x.shape[0]), lower=True)
    lam = np.linalg.eigvalsh(_herm(inv @ dx @ inv.conj().T))[0]
    return np.inf if lam >= 0 else -1.0 / lam


def _max_step_lp(x: np.ndarray, dx: np.ndarray) -> float:
    neg = dx < 0
    return np.inf if not np.any(neg) else float(np.min(-x[neg] / dx[neg]))


def _solve_native(cost, observables, targets, eps, options):
    """Infeasible-start primal-dual IPM.

    Primal variables are ``X >= 0`` and, for every relaxed row ``r``, slacks
    ``u_r, v_r >= 0`` scaled so that ``u_r + v_r = 2``::

        Re<Gamma_i, X> + eps_i u_i = gamma_i + eps_i      (relaxed rows)
        Re<Gamma_i, X>             = gamma_i              (equality rows)
        u_r + v_r                  = 2

    The dual multipliers of the first block are the ``y`` of the original
    problem.
    """
    opts = dict(NATIVE_OPTIONS)
    opts.update(options)
    tol, maxiters, tau = float(opts["tol"]), int(opts["maxiters"]), float(opts["step_fraction"])
    n = cost.shape[0]
    m = len(observables)
    rel = np.flatnonzero(eps > 0)
    k = rel.size
    gam = np.array(observables)  # (m, n, n)
    gam_flat = gam.reshape(m, -1)
    b = np.concatenate([targets + eps, np.full(k, 2.0)])
    # LP block: x_l = [u, v], constraint matrix (m + k, 2k)
    a_l = np.zeros((m + k, 2 * k))
    a_l[rel, np.arange(k)] = eps[rel]
    a_l[m + np.arange(k), np.arange(k)] = 1.0
    a_l[m + np.arange(k), k + np.arange(k)] = 1.0

    def a_op(x):
        return np.concatenate([(gam_flat.conj() @ x.ravel()).real, np.zeros(k)])

    def a_adj(y):
        return np.tensordot(y[:m], gam, axes=1)

    bnorm = 1.0 + np.linalg.norm(b)
    cnorm = 1.0 + np.linalg.norm(cost)
    trace_guess = max(1.0, float(np.max(np.abs(targets))))
    x = np.eye(n, dtype=complex) * (trace_guess / n)
    s = np.eye(n, dtype=complex) * max(1.0, np.linalg.norm(cost, 2))
    y = np.zeros(m + k)
    x_l = np.ones(2 * k)
    s_l = np.ones(2 * k) * max(1.0, np.linalg.norm(cost, 2))
    nu = n + 2 * k

    status = "unknown"
    best = None
    it = 0
    for it in range(1, maxiters + 1):
        r_p = b - a_op(x) - a_l @ x_l
        r_d = _herm(cost - a_adj(y) - s)
        r_dl = -a_l.T @ y - s_l
        mu = (np.vdot(x, s).real + x_l @ s_l) / nu
        pobj = np.vdot(cost, x).real
        dobj = b @ y
        relp = np.linalg.norm(r_p) / bnorm
        reld = np.sqrt(np.linalg.norm(r_d) ** 2 + np.linalg.norm(r_dl) ** 2) / cnorm
        relg = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        score = max(relp, reld, relg)
        if best is None or score < best[0]:
            best = (score, x.copy(), y.copy())
        if relp < tol and reld < tol and relg < tol:
            status = "optimal"
            break

        try:
            s_inv = np.linalg.inv(s)
            s_inv = _herm(s_inv)
            # Schur complement
            t_stack = x @ gam @ s_inv  # (m, n, n)
            m_s = (gam_flat.conj() @ t_stack.reshape(m, -1).T).real
            schur = np.zeros((m + k, m + k))
            schur[:m, :m] = (m_s + m_s.T) / 2.0
            ratio = x_l / s_l if k else np.zeros(0)
            schur += (a_l * ratio) @ a_l.T
            cho = linalg.cho_factor(schur)
        except (np.linalg.LinAlgError, linalg.LinAlgError):
            status = "numerical_error"
            break

        xrs = x @ r_d @ s_inv

        def direction(hc, hc_l):
            rhs = r_p - a_op(hc - xrs) - a_l @ (hc_l - ratio * r_dl)
            dy = linalg.cho_solve(cho, rhs)
            ds = _herm(r_d - a_adj(dy))
            dx = _herm(hc - x @ ds @ s_inv)
            ds_l = r_dl - a_l.T @ dy
            dx_l = hc_l - ratio * ds_l
            return dx, dy, ds, dx_l, ds_l

        def steps(dx, ds, dx_l, ds_l):
            try:
                ap = min(_max_step(x, dx), _max_step_lp(x_l, dx_l))
                ad = min(_max_step(s, ds), _max_step_lp(s_l, ds_l))
            except np.linalg.LinAlgError:
                return None
            return min(1.0, tau * ap), min(1.0, tau * ad)

        # predictor
        pred = direction(-x, -x_l)
        st = steps(pred[0], pred[2], pred[3], pred[4])
        if st is None:
            status = "numerical_error"
            break
        ap, ad = st
        mu_aff = (np.vdot(x + ap * pred[0], s + ad * pred[2]).real
                  + (x_l + ap * pred[3]) @ (s_l + ad * pred[4])) / nu
        sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0
        # corrector
        hc = sigma * mu * s_inv - x - pred[0] @ pred[2] @ s_inv
        hc_l = (sigma * mu - pred[3] * pred[4]) / s_l - x_l if k else np.zeros(0)
        dx, dy, ds, dx_l, ds_l = direction(hc, hc_l)
        st = steps(dx, ds, dx_l, ds_l)
        if st is None:
            status = "numerical_error"
            break
        ap, ad = st
        x = _herm(x + ap * dx)
        x_l = x_l + ap * dx_l
        y = y + ad * dy
        s = _herm(s + ad * ds)
        s_l = s_l + ad * ds_l

    if status != "optimal":
        _, x, y = best
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
        raise SdpError("interior-point iterates diverged")
    w, v = np.linalg.eigh(x)
    sigma_out = _herm((v * np.clip(w, 0.0, None)) @ v.conj().T)
    return sigma_out, y[:m], status, it


# ---------------------------------------------------------------------------
# cvxopt backend


def _solve_cvxopt(cost, observables, targets, eps, options):
    from cvxopt import matrix, solvers

    n = cost.shape[0]
    m = len(observables)
    nn = 2 * n
    relaxed = bool(np.any(eps > 0))

    # cvxopt's primal is over the multipliers:  min -2 gamma'y (+ 2 eps't)
    # s.t.  sum y_i Gamma_i <= C  (embedded), |y_i| <= t_i.
    # Its multiplier on the SDP block is the embedded sigma.
    g_sdp = np.empty((nn * nn, m))
    for i, gam in enumerate(observables):
        g_sdp[:, i] = real_embedding(gam).ravel(order="F")
    h_sdp = real_embedding(cost).ravel(order="F")

    if relaxed:
        eye = np.eye(m)
        g_lin = np.block([[eye, -eye], [-eye, -eye]])
        g_full = np.vstack([g_lin, np.hstack([g_sdp, np.zeros((nn * nn, m))])])
        h_full = np.concatenate([np.zeros(2 * m), h_sdp])
        c = np.concatenate([-2.0 * targets, 2.0 * eps])
        dims = {"l": 2 * m, "q": [], "s": [nn]}
    else:
        g_full, h_full, c = g_sdp, h_sdp, -2.0 * targets
        dims = {"l": 0, "q": [], "s": [nn]}

    opts = dict(CVXOPT_OPTIONS)
    opts.update(options)
    opts.setdefault("show_progress", False)
    old = dict(solvers.options)
    solvers.options.clear()
    solvers.options.update(opts)
    try:
        sol = solvers.conelp(matrix(c), matrix(g_full), matrix(h_full), dims)
    except (ValueError, ArithmeticError) as exc:
        raise SdpError(f"backend failure: {exc}") from exc
    finally:
        solvers.options.clear()
        solvers.options.update(old)

    status = sol["status"]
    if sol["x"] is None or sol["z"] is None:
        raise SdpError(f"backend returned status {status!r} without a solution")
    if status not in ("optimal", "unknown"):
        raise SdpError(f"backend status {status!r}")
    x = np.array(sol["x"]).ravel()
    z = np.array(sol["z"]).ravel()
    zs = z[2 * m:] if relaxed else z
    zmat = zs.reshape((nn, nn), order="F")
    sigma = _unembed((zmat + zmat.T) / 2.0, n)
    w, v = np.linalg.eigh(sigma)
    sigma = _herm((v * np.clip(w, 0.0, None)) @ v.conj().T)
    return sigma, x[:m], status, int(sol.get("iterations", 0) or 0)
