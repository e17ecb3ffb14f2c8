"""scikit-learn style wrappers around sparse coding and dictionary learning.

Both estimators follow the scikit-learn convention of one sample per row:
``X`` is ``(n_samples, n_features)`` with ``n_features`` the atom dimension,
and codes come back as ``(n_samples, n_atoms)``.
"""

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .image import overcomplete_dct_dictionary, sparse_code_patches
from .learn import LearnConfig, learn_dictionary
from .types import DimensionError, Dictionary, SolverSettings


def _settings(est):
    return SolverSettings(
        mu=est.mu, eps_rel=est.eps_rel, max_iters=est.max_iters, solver_id=est.solver
    )


class ShrinkageCoder(TransformerMixin, BaseEstimator):
    """Sparse-code samples against a fixed dictionary.

    ``dictionary`` is an ``(n_features, n_atoms)`` atom matrix or a
    :class:`Dictionary`.
    """

    def __init__(self, dictionary=None, mu=2.0**-4, solver="fpcbb", eps_rel=None,
                 max_iters=50_000, n_threads=None):
        self.dictionary = dictionary
        self.mu = mu
        self.solver = solver
        self.eps_rel = eps_rel
        self.max_iters = max_iters
        self.n_threads = n_threads

    def fit(self, X=None, y=None):
        if self.dictionary is None:
            raise ValueError("ShrinkageCoder needs a dictionary")
        D = self.dictionary
        D = D if isinstance(D, Dictionary) else Dictionary(D, allow_undercomplete=True)
        self.dictionary_ = D
        self.settings_ = _settings(self)
        self.n_features_in_ = D.atom_dim
        if X is not None:
            validate_data(self, X, reset=False)
        return self

    def transform(self, X):
        check_is_fitted(self, "dictionary_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        codes, _ = sparse_code_patches(X.T, self.dictionary_, self.settings_, self.n_threads)
        return codes.T

    def inverse_transform(self, codes):
        check_is_fitted(self, "dictionary_")
        return np.asarray(codes, dtype=np.float64) @ self.dictionary_.atoms.T


class OnlineDictionaryLearning(TransformerMixin, BaseEstimator):
    """Learn a unit-ball dictionary online, one drawn sample per iteration.

    ``init`` is ``"dct"`` (needs a square number of features), ``"random"``
    (seeded Gaussian atoms scaled to unit norm) or an explicit
    ``(n_features, n_atoms)`` matrix. After fitting, ``components_`` holds
    the atoms as rows and ``log_`` the per-iteration learning record.
    """

    def __init__(self, n_atoms=256, mu=2.0**-4, solver="fpcbb", n_iter=2000, init="dct",
                 eps_rel=None, max_iters=50_000, bcd_max_sweeps=100, bcd_tol=1e-8,
                 random_state=0, n_threads=None):
        self.n_atoms = n_atoms
        self.mu = mu
        self.solver = solver
        self.n_iter = n_iter
        self.init = init
        self.eps_rel = eps_rel
        self.max_iters = max_iters
        self.bcd_max_sweeps = bcd_max_sweeps
        self.bcd_tol = bcd_tol
        self.random_state = random_state
        self.n_threads = n_threads

    def _initial(self, m):
        if isinstance(self.init, str) and self.init == "dct":
            side = math.isqrt(m)
            if side * side != m:
                raise ValueError(f"'dct' init needs a square feature count, got {m}")
            return overcomplete_dct_dictionary(side, self.n_atoms)
        if isinstance(self.init, str) and self.init == "random":
            rng = np.random.default_rng(self.random_state)
            D = rng.standard_normal((m, self.n_atoms))
            return Dictionary(D / np.linalg.norm(D, axis=0), allow_undercomplete=True)
        if isinstance(self.init, str):
            raise ValueError(f"unknown init {self.init!r}")
        D = self.init if isinstance(self.init, Dictionary) else Dictionary(self.init, allow_undercomplete=True)
        if D.shape != (m, self.n_atoms):
            raise DimensionError(f"init of shape {D.shape}, expected {(m, self.n_atoms)}")
        return D

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float64)
        cfg = LearnConfig(
            n_patches=self.n_iter,
            settings=_settings(self),
            rng_seed=self.random_state,
            bcd_max_sweeps=self.bcd_max_sweeps,
            bcd_tol=self.bcd_tol,
        )
        D, log = learn_dictionary(self._initial(X.shape[1]), X.T, cfg)
        self.dictionary_ = D
        self.components_ = D.atoms.T.copy()
        self.log_ = log
        return self

    def transform(self, X):
        check_is_fitted(self, "dictionary_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        codes, _ = sparse_code_patches(X.T, self.dictionary_, _settings(self), self.n_threads)
        return codes.T

    def inverse_transform(self, codes):
        check_is_fitted(self, "dictionary_")
        return np.asarray(codes, dtype=np.float64) @ self.components_
