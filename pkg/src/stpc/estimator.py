"""scikit-learn flavoured wrapper around an in-process secure controller session."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .controller import ControllerSpec, InProcessSession


class SecureLinearController(TransformerMixin, BaseEstimator):
    """Secret-shared linear controller: rows of measurements in, rows of inputs out.

    ``fit`` validates the parameters and runs the offline setup; ``transform``
    feeds each measurement row through one online step, so the controller
    state carries over between calls. ``reset`` restarts from ``x0``.

    >>> est = SecureLinearController(A=[[0]], B=[[1]], C=[[1]], D=[[0]], seed=1).fit()
    >>> est.transform([[1.0], [0.0]]).ravel().tolist()
    [0.0, 1.0]
    """

    def __init__(self, A=None, B=None, C=None, D=None, x0=None, k=64, ell=32, lam=80,
                 modulus=None, c=None, gamma=None, seed=None, audit=False):
        self.A = A
        self.B = B
        self.C = C
        self.D = D
        self.x0 = x0
        self.k = k
        self.ell = ell
        self.lam = lam
        self.modulus = modulus
        self.c = c
        self.gamma = gamma
        self.seed = seed
        self.audit = audit

    def fit(self, X=None, y=None):
        if any(M is None for M in (self.A, self.B, self.C, self.D)):
            raise ValueError("A, B, C and D are required")
        self.spec_ = ControllerSpec.from_values(
            self.A, self.B, self.C, self.D, self.x0, k=self.k, ell=self.ell, lam=self.lam,
            modulus=self.modulus, c=self.c, gamma=self.gamma)
        self.n_features_in_ = self.spec_.p
        self._open()
        return self

    def _open(self):
        old = getattr(self, "session_", None)
        if old is not None:
            old.close()
        self.session_ = InProcessSession(self.spec_, seed=self.seed, audit=self.audit)

    def reset(self):
        check_is_fitted(self, "session_")
        self._open()
        return self

    def transform(self, X):
        """One control step per row of ``X``; returns float inputs of shape ``(rows, m)``."""
        check_is_fitted(self, "session_")
        Y = check_array(X, dtype=None, ensure_2d=True)
        if Y.shape[1] != self.spec_.p:
            raise ValueError(f"expected {self.spec_.p} measurements per row, got {Y.shape[1]}")
        out = np.empty((Y.shape[0], self.spec_.m))
        for i, row in enumerate(Y):
            rec = self.session_.step(row.reshape(-1, 1))
            out[i] = [float(v) for v in rec.u.flat]
        return out

    def transform_exact(self, X) -> list:
        """Like ``transform`` but returns the exact rational inputs."""
        check_is_fitted(self, "session_")
        Y = check_array(X, dtype=None, ensure_2d=True)
        return [self.session_.step(row.reshape(-1, 1)).u.reshape(-1) for row in Y]
