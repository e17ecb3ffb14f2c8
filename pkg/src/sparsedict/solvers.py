"""Iterative shrinkage solvers for basis pursuit denoising.

Every solver minimises ``0.5 * ||D x - p||^2 + mu * ||x||_1``. Targets may be
a single vector of length ``m`` or an ``(m, K)`` matrix whose columns are
solved as independent problems: each column keeps its own iterate, step
length and stopping state, so a batched solve returns exactly what ``K``
separate solves would (up to floating point summation order).

Stopping rule, per column: ``||x_{k+1} - x_k|| <= eps * ||x_k||``; when
``x_k = 0`` the column stops only if ``x_{k+1} = 0`` as well.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .types import DimensionError, Dictionary, SolverError, SolverId, SolverSettings

# FPC-BB schedule
TAU_MIN, TAU_MAX = 1e-10, 1e10
CONTINUATION_ETA = 0.25
STAGE_TOL = 1e-3
# number of recent objectives a BB step may not exceed
BB_MEMORY = 10

# TwIST eigenvalue surrogate
TWIST_XI = 1e-3


def soft_threshold(v, t):
    """Componentwise ``sign(v) * max(|v| - t, 0)``.

    ``t`` may be a scalar or broadcastable against ``v`` (one threshold per
    column for batched problems). Entries below the threshold come out as
    exact ``0.0``.
    """
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _as_dictionary(D):
    if isinstance(D, Dictionary):
        return D
    return Dictionary(D, allow_undercomplete=True)


def lipschitz_constant(D, n_iter=50, rtol=1e-10):
    """Largest eigenvalue of ``D^T D`` by power iteration, cached on ``D``."""
    D = _as_dictionary(D)
    cached = D.__dict__.get("_lipschitz")
    if cached is not None:
        return cached
    A = D.atoms
    v = np.random.default_rng(0).standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(n_iter):
        w = A.T @ (A @ v)
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            lam_new = 0.0
            break
        v = w / nw
        if lam > 0 and abs(lam_new - lam) <= rtol * lam_new:
            lam = lam_new
            break
        lam = lam_new
    # all-zero dictionary: any step works, keep it finite
    lam = max(lam, np.finfo(float).tiny)
    D.__dict__["_lipschitz"] = lam
    return lam


@dataclass(frozen=True)
class BpdnProblem:
    """``min_x 0.5 ||D x - p||^2 + mu ||x||_1``.

    ``p`` is a length-``m`` vector, or an ``(m, K)`` matrix for ``K``
    independent targets sharing ``D`` and ``mu``.
    """

    D: Dictionary
    p: np.ndarray
    mu: float

    def __post_init__(self):
        D = _as_dictionary(self.D)
        p = np.array(self.p, dtype=np.float64)
        if p.ndim not in (1, 2) or p.shape[0] != D.atom_dim:
            raise DimensionError(f"target of shape {p.shape} does not match atom_dim {D.atom_dim}")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        p.setflags(write=False)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "p", p)

    @property
    def batched(self):
        return self.p.ndim == 2


@dataclass
class SolveTrace:
    """What happened during a solve.

    For batched problems ``iterations`` and ``terminated_by`` hold one entry
    per column and ``objective_history`` is not recorded.
    """

    iterations: object
    terminated_by: object
    objective_history: list | None = None
    monotone: bool = True


def _check_x(prob, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != prob.D.n_atoms or x.ndim != prob.p.ndim:
        raise DimensionError(f"code of shape {x.shape} does not match problem")
    if x.ndim == 2 and x.shape[1] != prob.p.shape[1]:
        raise DimensionError(f"code of shape {x.shape} does not match {prob.p.shape[1]} targets")
    return x


def bpdn_objective(prob, x):
    """``0.5 ||D x - p||^2 + mu ||x||_1``; one value per column when batched."""
    x = _check_x(prob, x)
    r = prob.D.atoms @ x - prob.p
    val = 0.5 * np.sum(r * r, axis=0) + prob.mu * np.sum(np.abs(x), axis=0)
    return float(val) if np.ndim(val) == 0 else val


def kkt_residual(prob, x):
    """Largest violation of the optimality conditions (0 iff ``x`` is optimal)."""
    x = _check_x(prob, x)
    D = prob.D.atoms
    g = D.T @ (D @ x - prob.p)
    viol = np.where(
        x != 0,
        np.abs(g + prob.mu * np.sign(x)),
        np.maximum(np.abs(g) - prob.mu, 0.0),
    )
    val = viol.max(axis=0)
    return float(val) if np.ndim(val) == 0 else val


class _Run:
    """Lays out a problem for the compiled kernels and packs the result.

    Kernels work on row-major copies: ``Dt`` is ``D^T`` and row ``k`` of
    ``Xt``/``Pt`` is column ``k`` of the code/target matrices.
    """

    def __init__(self, prob, x0, settings):
        self.single = not prob.batched
        P = prob.p[:, None] if self.single else prob.p
        K = P.shape[1]
        bad = np.flatnonzero(~np.all(np.isfinite(P), axis=0))
        if bad.size:
            raise SolverError("target contains non-finite values", index=int(bad[0]))
        if x0 is None:
            Xt = np.zeros((K, prob.D.n_atoms))
        else:
            X = _check_x(prob, x0)
            Xt = np.array((X[:, None] if self.single else X).T, dtype=np.float64, order="C")
        self.Dt = np.ascontiguousarray(prob.D.atoms.T)
        self.Pt = np.ascontiguousarray(P.T)
        self.Xt = Xt
        self.mu = float(prob.mu)
        self.eps = float(settings.eps_rel)
        self.max_iters = int(settings.max_iters)
        self.iters = np.zeros(K, dtype=np.int64)
        self.converged = np.zeros(K, dtype=np.bool_)
        record = settings.record_objective and self.single
        self.hist = np.full(self.max_iters + 1 if record else 0, np.nan)
        self.L = lipschitz_constant(prob.D)
        # 0 is the unique minimiser when ||D^T p||_inf <= mu; rounding in the
        # first threshold step could otherwise leave stray tiny entries
        self.zero = np.abs(self.Pt @ prob.D.atoms).max(axis=1) <= self.mu

    def result(self, status, monotone=True):
        if status >= 0:
            k = int(status)
            raise SolverError(f"non-finite iterate at iteration {self.iters[k]}", index=k)
        self.Xt[self.zero] = 0.0
        reason = np.where(self.converged, "rel_change", "max_iters")
        if self.single:
            hist = None
            if self.hist.size:
                hist = self.hist[: self.iters[0] + 1].tolist()
            trace = SolveTrace(int(self.iters[0]), str(reason[0]), hist, monotone)
            return self.Xt[0].copy(), trace
        return self.Xt.T.copy(), SolveTrace(self.iters, reason, None, monotone)


def solve_ista(prob, x0=None, settings=None):
    """Proximal gradient with fixed step ``1 / L``."""
    settings = settings or SolverSettings(prob.mu, solver_id=SolverId.ISTA)
    run = _Run(prob, x0, settings)
    status = _kernels.ista(
        run.Dt, run.Pt, run.Xt, run.mu, 1.0 / run.L, run.eps, run.max_iters,
        run.hist, run.iters, run.converged,
    )
    return run.result(status)


def solve_fista(prob, x0=None, settings=None):
    """Accelerated proximal gradient (momentum on the extrapolated point).

    The objective is not guaranteed to decrease monotonically; the trace's
    ``monotone`` flag is False.
    """
    settings = settings or SolverSettings(prob.mu, solver_id=SolverId.FISTA)
    run = _Run(prob, x0, settings)
    status = _kernels.fista(
        run.Dt, run.Pt, run.Xt, run.mu, 1.0 / run.L, run.eps, run.max_iters,
        run.hist, run.iters, run.converged,
    )
    return run.result(status, monotone=False)


def solve_fpc_bb(prob, x0=None, settings=None):
    """Fixed-point continuation with Barzilai-Borwein step lengths.

    Each column runs through thresholds ``max(mu, eta^j ||D^T p||_inf)``,
    ``j = 1, 2, ...``; intermediate stages stop at relative change ``1e-3``,
    the final stage (at ``mu``) at ``eps_rel``. Steps are clamped to
    ``[1e-10, 1e10]`` and a nonpositive ``s^T y`` falls back to ``1 / L``.
    A BB step whose stage objective exceeds all of the last ``BB_MEMORY``
    values is replaced by the ``1 / L`` step; unguarded BB steps can cycle.
    """
    settings = settings or SolverSettings(prob.mu, solver_id=SolverId.FPC_BB)
    run = _Run(prob, x0, settings)
    status = _kernels.fpc_bb(
        run.Dt, run.Pt, run.Xt, run.mu, 1.0 / run.L, run.eps, run.max_iters,
        run.hist, run.iters, run.converged,
        CONTINUATION_ETA, STAGE_TOL, TAU_MIN, TAU_MAX, BB_MEMORY,
    )
    return run.result(status, monotone=False)


def solve_twist(prob, x0=None, settings=None):
    """Two-step iterative shrinkage with a monotone safeguard.

    The denoising step is ``S(x + D^T (p - D x) / L, mu / L)`` so the method
    works for dictionaries of any spectral norm. A two-step update that would
    raise the objective is replaced by that plain shrinkage step.
    """
    settings = settings or SolverSettings(prob.mu, solver_id=SolverId.TWIST)
    run = _Run(prob, x0, settings)
    rho = (1.0 - math.sqrt(TWIST_XI)) / (1.0 + math.sqrt(TWIST_XI))
    alpha = rho * rho + 1.0
    beta = 2.0 * alpha / (1.0 + TWIST_XI)
    status = _kernels.twist(
        run.Dt, run.Pt, run.Xt, run.mu, 1.0 / run.L, run.eps, run.max_iters,
        run.hist, run.iters, run.converged, alpha, beta,
    )
    return run.result(status)


SOLVERS = {
    SolverId.ISTA: solve_ista,
    SolverId.FISTA: solve_fista,
    SolverId.FPC_BB: solve_fpc_bb,
    SolverId.TWIST: solve_twist,
}


def solve(prob, x0=None, settings=None):
    """Dispatch to the solver named by ``settings.solver_id``."""
    settings = settings or SolverSettings(prob.mu)
    try:
        fn = SOLVERS[SolverId.parse(settings.solver_id)]
    except KeyError:
        raise ValueError(f"unsupported solver {settings.solver_id!r}") from None
    return fn(prob, x0, settings)
