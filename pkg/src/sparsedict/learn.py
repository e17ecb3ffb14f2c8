"""Online dictionary learning with block-coordinate atom updates."""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .solvers import BpdnProblem, solve
from .types import (
    DimensionError,
    Dictionary,
    LearnAccumulators,
    SolverError,
    SolverSettings,
)

# |A_jj| below this counts as an unused atom
ATOM_SKIP_TOL = 1e-12


@dataclass(frozen=True)
class LearnConfig:
    n_patches: int
    settings: SolverSettings
    rng_seed: int = 0
    bcd_max_sweeps: int = 100
    bcd_tol: float = 1e-8

    def __post_init__(self):
        if self.n_patches < 1:
            raise ValueError(f"n_patches must be at least 1, got {self.n_patches}")
        if self.bcd_max_sweeps < 1 or not self.bcd_tol > 0:
            raise ValueError("bcd_max_sweeps and bcd_tol must be positive")


@dataclass
class LearnLog:
    """Per-iteration record of a learning run."""

    zeros: list = field(default_factory=list)
    surrogate: list = field(default_factory=list)
    solver_iterations: list = field(default_factory=list)
    bcd_sweeps: list = field(default_factory=list)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "zeros", "surrogate_objective", "solver_iterations", "bcd_sweeps"])
        for i, row in enumerate(
            zip(self.zeros, self.surrogate, self.solver_iterations, self.bcd_sweeps), start=1
        ):
            w.writerow([i, row[0], repr(float(row[1])), row[2], row[3]])
        return buf.getvalue()


def _atoms(D):
    return D.atoms if isinstance(D, Dictionary) else np.asarray(D, dtype=np.float64)


def surrogate_objective(D, acc):
    """``(1/k) * (0.5 Tr(D^T D A) - Tr(D^T B))``."""
    D = _atoms(D)
    if acc.k == 0:
        raise ValueError("surrogate objective is undefined for k = 0")
    if D.shape != acc.B.shape:
        raise DimensionError(f"dictionary {D.shape} does not match accumulators {acc.B.shape}")
    quad = np.sum((D @ acc.A) * D)
    lin = np.sum(D * acc.B)
    return float((0.5 * quad - lin) / acc.k)


def update_column(D, j, a_j, b_j, A_jj):
    """Minimise the surrogate over column ``j`` and project onto the unit ball."""
    D = _atoms(D)
    if abs(A_jj) < ATOM_SKIP_TOL:
        raise ValueError(f"A_jj = {A_jj} for atom {j}; unused atoms must be skipped")
    u = (b_j - D @ a_j) / A_jj + D[:, j]
    norm = np.linalg.norm(u)
    return u / norm if norm > 1.0 else u


def update_dictionary(D_warm, acc, bcd_max_sweeps=100, bcd_tol=1e-8, history=None):
    """Cyclic column updates until the largest column change is below ``bcd_tol``.

    Columns whose ``A_jj`` is zero (atoms never used so far) stay bitwise
    unchanged. When ``history`` is a list, the surrogate objective after each
    sweep is appended to it. Returns ``(Dictionary, n_sweeps)``.
    """
    D = np.array(_atoms(D_warm), dtype=np.float64)
    if acc.k < 1:
        raise ValueError("accumulators are empty (k = 0)")
    if acc.B.shape != D.shape:
        raise DimensionError(f"dictionary {D.shape} does not match accumulators {acc.B.shape}")
    Dt = np.ascontiguousarray(D.T)
    A = np.ascontiguousarray(acc.A)
    Bt = np.ascontiguousarray(acc.B.T)
    used = np.flatnonzero(np.abs(np.diag(A)) >= ATOM_SKIP_TOL).astype(np.int64)
    if history is None:
        sweeps = _kernels.bcd(Dt, A, Bt, used, bcd_max_sweeps, bcd_tol)
    else:
        sweeps = 0
        while sweeps < bcd_max_sweeps:
            before = Dt.copy()
            _kernels.bcd(Dt, A, Bt, used, 1, bcd_tol)
            sweeps += 1
            history.append(surrogate_objective(Dt.T, acc))
            if np.linalg.norm(Dt - before, axis=1).max(initial=0.0) <= bcd_tol:
                break
    D = Dt.T
    allow = isinstance(D_warm, Dictionary) and D_warm.allow_undercomplete
    return Dictionary(D, allow_undercomplete=allow or D.shape[1] < D.shape[0]), sweeps


def learn_dictionary(D0, patches, cfg, callback=None):
    """Online dictionary learning over a patch set.

    ``patches`` is an ``(m, |Gamma|)`` matrix of training patches. Each of the
    ``cfg.n_patches`` iterations draws one column uniformly (seeded, with
    replacement), codes it against the current dictionary from a zero start,
    folds it into the accumulators and re-optimises the dictionary starting
    from the previous one.

    Returns ``(Dictionary, LearnLog)``.
    """
    D0 = D0 if isinstance(D0, Dictionary) else Dictionary(D0, allow_undercomplete=True)
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 2 or patches.shape[0] != D0.atom_dim:
        raise DimensionError(
            f"patches of shape {patches.shape} do not match atom dimension {D0.atom_dim}"
        )
    if patches.shape[1] == 0:
        raise ValueError("patch set is empty")
    m, n = D0.shape
    rng = np.random.default_rng(cfg.rng_seed)
    draws = rng.integers(0, patches.shape[1], size=cfg.n_patches)

    D = D0
    acc = LearnAccumulators.zeros(m, n)
    log = LearnLog()
    settings = cfg.settings
    for k, idx in enumerate(draws, start=1):
        p = patches[:, idx]
        try:
            x, trace = solve(BpdnProblem(D, p, settings.mu), None, settings)
        except SolverError as exc:
            raise SolverError(f"sparse coding failed at learning iteration {k}: {exc}", index=k) from exc
        acc = acc.add(p, x)
        D, sweeps = update_dictionary(D, acc, cfg.bcd_max_sweeps, cfg.bcd_tol)
        log.zeros.append(int(np.count_nonzero(x == 0)))
        log.surrogate.append(surrogate_objective(D, acc))
        log.solver_iterations.append(int(trace.iterations))
        log.bcd_sweeps.append(sweeps)
        if callback is not None:
            callback(k, D, acc)
    return D, log
