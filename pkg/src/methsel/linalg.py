"""Symmetric banded systems with a dense trailing block.

The latent field precision is banded after interleaving the per-site field
components; the regression coefficients add a small dense border. Systems of
the form [[Q_u, C], [C^T, S0]] are factored with a banded Cholesky on Q_u and
a Schur complement on the border.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cho_solve_banded, cholesky_banded


class NumericalError(RuntimeError):
    """A factorization or optimization step failed."""


def lower_to_upper_ab(bands: np.ndarray) -> np.ndarray:
    """Convert lower-band storage (bands[k, i] = Q[i+k, i]) to scipy upper ab."""
    bw = bands.shape[0] - 1
    n = bands.shape[1]
    ab = np.zeros_like(bands)
    for k in range(bw + 1):
        if n - k > 0:
            ab[bw - k, k:] = bands[k, : n - k]
    return ab


def band_matvec(bands: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Multiply a symmetric banded matrix (lower storage) by a vector."""
    n = bands.shape[1]
    y = bands[0] * x
    for k in range(1, bands.shape[0]):
        if n - k <= 0:
            break
        y[: n - k] += bands[k, : n - k] * x[k:]
        y[k:] += bands[k, : n - k] * x[: n - k]
    return y


def band_quad(bands: np.ndarray, x: np.ndarray) -> float:
    return float(x @ band_matvec(bands, x))


def bands_to_dense(bands: np.ndarray) -> np.ndarray:
    n = bands.shape[1]
    out = np.zeros((n, n))
    for k in range(bands.shape[0]):
        for i in range(n - k):
            out[i + k, i] = bands[k, i]
            out[i, i + k] = bands[k, i]
    return out


def banded_cholesky_logdet(bands: np.ndarray) -> float:
    """Log determinant of an SPD banded matrix in lower storage."""
    cb = _cholesky_banded_checked(bands)
    return 2.0 * float(np.log(cb[-1]).sum())


def _cholesky_banded_checked(bands: np.ndarray):
    try:
        return cholesky_banded(lower_to_upper_ab(bands))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"banded Cholesky failed: {exc}")


class BorderedSpd:
    """Factorization of [[Q_u, C], [C^T, S0]] with banded SPD Q_u.

    Q_u may be absent (pure dense problem). The border S0 must be square and
    make the full matrix positive definite.
    """

    def __init__(self, bands: np.ndarray | None, C: np.ndarray | None, S0: np.ndarray):
        self.m = S0.shape[0]
        self.nu = 0 if bands is None else bands.shape[1]
        self._C = C
        if self.nu:
            self._cb = _cholesky_banded_checked(bands)
            self._logdet_u = 2.0 * float(np.log(self._cb[-1]).sum())
            if self.m:
                self._E = cho_solve_banded((self._cb, False), C)
                S = S0 - C.T @ self._E
            else:
                self._E = None
                S = S0
        else:
            self._cb = None
            self._E = None
            self._logdet_u = 0.0
            S = S0
        if self.m:
            try:
                self._S_cf = cho_factor(0.5 * (S + S.T), lower=True)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"border Cholesky failed: {exc}")
            self._logdet_S = 2.0 * float(np.log(np.diag(self._S_cf[0])).sum())
        else:
            self._S_cf = None
            self._logdet_S = 0.0
        self.logdet = self._logdet_u + self._logdet_S

    @property
    def n(self) -> int:
        return self.nu + self.m

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve the bordered system for one or many right-hand sides."""
        b = np.asarray(b, dtype=float)
        single = b.ndim == 1
        if single:
            b = b[:, None]
        bu, bb = b[: self.nu], b[self.nu :]
        if self.nu:
            w = cho_solve_banded((self._cb, False), bu)
            if self.m:
                xb = cho_solve(self._S_cf, bb - self._C.T @ w)
                xu = w - self._E @ xb
            else:
                xb = bb
                xu = w
        else:
            xb = cho_solve(self._S_cf, bb) if self.m else bb
            xu = bu
        out = np.vstack([xu, xb])
        return out[:, 0] if single else out
