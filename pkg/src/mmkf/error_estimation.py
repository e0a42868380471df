"""Innovation-based estimation of model-error covariances.

Per window and model, ``E[d d^T] = H (P^p + Q) H^T + R`` is rearranged for
``Q`` with the single-sample proxy ``d d^T``; the noisy estimates are
exponentially smoothed and kept positive semidefinite.
"""
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ._validation import check_matrix, check_square, check_vector
from .exceptions import InvalidInputError
from .filter import sample_covariance


@dataclass
class ModelErrorState:
    """Smoothed model-error covariance of one model at one lead time.

    Attributes
    ----------
    Q : ndarray, shape (n, n)
        Smoothed estimate, PSD after every update.
    bias : ndarray, shape (n,)
        Bias hook; draws are centred on ``-bias``. Zero unless set.
    delta : float
        Smoothing weight in (0, 1).
    basis : list of ndarray, optional
        Fixed matrices for the least-squares path (used when ``H`` is not
        invertible). ``None`` selects the diagonal basis.
    eps : float
        Eigenvalue floor applied when the smoothed estimate goes indefinite.
    """

    Q: np.ndarray
    bias: Optional[np.ndarray] = None
    delta: float = 1e-3
    basis: Optional[list] = None
    eps: float = 0.0
    repairs: int = 0
    _sqrt: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.Q = check_square(self.Q, "Q")
        n = self.Q.shape[0]
        self.bias = np.zeros(n) if self.bias is None else check_vector(self.bias, "bias", n)
        if not 0.0 < self.delta < 1.0:
            raise InvalidInputError("delta must lie in (0, 1)")

    @property
    def dim(self):
        return self.Q.shape[0]

    def sqrt(self):
        if self._sqrt is None:
            w, V = np.linalg.eigh(0.5 * (self.Q + self.Q.T))
            self._sqrt = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
        return self._sqrt


def innovation(y, H, mean_forecast):
    """Observation minus the forecast mean mapped to observation space."""
    y = check_vector(y, "y")
    H = check_matrix(H, "H", (y.shape[0], None))
    x = check_vector(mean_forecast, "mean_forecast", H.shape[1])
    return y - H @ x


def predictability_covariance(E):
    """Unbiased sample covariance of the unperturbed forecast ensemble."""
    return sample_covariance(E)


def _residual(d, R, Pp, H):
    d = check_vector(d, "d")
    p = d.shape[0]
    R = check_square(R, "R", p)
    H = check_matrix(H, "H", (p, None))
    Pp = check_square(Pp, "Pp", H.shape[1])
    return np.outer(d, d) - R - H @ Pp @ H.T, H


def estimate_Q_full_obs(d, R, Pp, H):
    """Model-error estimate for a square invertible ``H``.

    ``H^{-1} (d d^T - R - H Pp H^T) H^{-T}``. The result may be indefinite.
    """
    C, H = _residual(d, R, Pp, H)
    if H.shape[0] != H.shape[1]:
        raise InvalidInputError("H must be square for the full-observation estimate")
    if np.array_equal(H, np.eye(H.shape[0])):
        return 0.5 * (C + C.T)
    if np.linalg.cond(H) > 1e10:
        raise InvalidInputError("H is not invertible; use estimate_Q_least_squares")
    Hinv_C = np.linalg.solve(H, C)
    Q = np.linalg.solve(H, Hinv_C.T).T
    return 0.5 * (Q + Q.T)


def diagonal_basis(n):
    basis = []
    for i in range(n):
        B = np.zeros((n, n))
        B[i, i] = 1.0
        basis.append(B)
    return basis


def block_basis(n, size):
    """Block-constant diagonal basis: one identity block per run of ``size`` indices.

    A partially observed block still receives an estimate for its unobserved
    members. ``size=1`` is the diagonal basis and ``size=n`` a scalar multiple
    of the identity.
    """
    if size < 1:
        raise InvalidInputError("block size must be positive")
    basis = []
    for start in range(0, n, size):
        B = np.zeros((n, n))
        idx = np.arange(start, min(start + size, n))
        B[idx, idx] = 1.0
        basis.append(B)
    return basis


def estimate_Q_least_squares(d, R, Pp, H, basis=None, full_output=False):
    """Least-squares model-error estimate on a fixed matrix basis.

    Solves ``min_q || C - sum_p q_p H Q_p H^T ||_F`` with
    ``C = d d^T - R - H Pp H^T``. Rank-deficient systems get the
    minimum-norm solution.

    Returns
    -------
    q : ndarray
        Coefficients.
    Q : ndarray
        ``sum_p q_p Q_p``.
    info : dict
        Only with ``full_output``: ``rank`` and ``rank_deficient``.
    """
    C, H = _residual(d, R, Pp, H)
    n = H.shape[1]
    if basis is None:
        basis = diagonal_basis(n)
    if len(basis) == 0:
        raise InvalidInputError("basis must be nonempty")
    if _is_diagonal_basis(basis, n):
        # columns vec(H e_i e_i^T H^T) = vec(h_i h_i^T) without forming each product
        A = np.einsum("ai,bi->abi", H, H).reshape(-1, n)
    else:
        A = np.stack([(H @ B @ H.T).ravel() for B in basis], axis=1)
    if not np.any(A):
        raise InvalidInputError("all basis matrices are invisible through H")
    q, _, rank, _ = np.linalg.lstsq(A, C.ravel(), rcond=None)
    if _is_diagonal_basis(basis, n):
        Q = np.diag(q)
    else:
        Q = sum(qp * B for qp, B in zip(q, basis))
    Q = 0.5 * (Q + Q.T)
    if full_output:
        return q, Q, {"rank": int(rank), "rank_deficient": rank < len(basis)}
    return q, Q


def _is_diagonal_basis(basis, n):
    if len(basis) != n:
        return False
    for i, B in enumerate(basis):
        if B.shape != (n, n) or B[i, i] != 1.0 or np.count_nonzero(B) != 1:
            return False
    return True


def estimate_Q(d, R, Pp, H, basis=None):
    """Pick the closed form for invertible ``H`` and least squares otherwise."""
    H = check_matrix(H, "H")
    if basis is None and H.shape[0] == H.shape[1] and (
            np.array_equal(H, np.eye(H.shape[0])) or np.linalg.cond(H) < 1e10):
        return estimate_Q_full_obs(d, R, Pp, H)
    return estimate_Q_least_squares(d, R, Pp, H, basis)[1]


def smooth_Q(state, Q_hat):
    """Exponential smoothing ``delta * Q_hat + (1 - delta) * Q``, then PSD repair."""
    Q_hat = check_square(Q_hat, "Q_hat", state.dim)
    Q_new = state.delta * Q_hat + (1.0 - state.delta) * state.Q
    Q_new = 0.5 * (Q_new + Q_new.T)
    # one eigendecomposition serves both the PSD check and the sampling root
    w, V = np.linalg.eigh(Q_new)
    changed = bool(w.size) and w[0] < state.eps
    if changed:
        w = np.maximum(w, state.eps)
        Q_new = (V * w) @ V.T
        Q_new = 0.5 * (Q_new + Q_new.T)
    root = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    return replace(state, Q=Q_new, repairs=state.repairs + int(changed), _sqrt=root)


def update_model_error(state, E_forecast, y, R, H):
    """One smoothing step from an unperturbed forecast ensemble and an observation."""
    Pp = predictability_covariance(E_forecast)
    d = innovation(y, H, E_forecast.mean(axis=1))
    return smooth_Q(state, estimate_Q(d, R, Pp, H, state.basis))


def init_Q_lead(Q0, k):
    """Initial guess at lead ``k * tau``: quadratic growth ``k**2 * Q0``."""
    if int(k) != k or k < 1:
        raise InvalidInputError("k must be a positive integer")
    return check_square(Q0, "Q0") * float(k) ** 2


def sample_model_error(E, state, rng):
    """Add an independent draw from ``N(-bias, Q)`` to every member of ``E``."""
    E = np.asarray(E, dtype=float)
    if E.shape[0] != state.dim:
        raise InvalidInputError(f"ensemble dimension {E.shape[0]} does not match Q ({state.dim})")
    shift = -state.bias[:, None]
    if not np.any(state.Q):
        return E + shift if np.any(shift) else E.copy()
    z = rng.standard_normal(E.shape)
    return E + shift + state.sqrt() @ z
