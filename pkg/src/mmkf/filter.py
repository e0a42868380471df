"""Left-multiplied ensemble square-root analysis and multiplicative inflation.

Ensembles are ``(n, N)`` arrays with members in columns.
"""
from dataclasses import dataclass
import math

import numpy as np

from ._validation import check_ensemble, check_matrix, check_square, check_vector
from .exceptions import InvalidInputError, MisspecificationError, NumericalError
from .linalg import pseudoinverse, sqrt_and_pinv_sqrt, symmetric_sqrt

# gain solves switch to an eigendecomposition pseudo-solve above this condition number
COND_LIMIT = 1e12


@dataclass
class Observation:
    """Observation vector ``y`` with error covariance ``R`` and linear operator ``H``."""

    y: np.ndarray
    R: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        self.y = check_vector(self.y, "y")
        p = self.y.shape[0]
        self.R = check_square(self.R, "R", p)
        self.H = check_matrix(self.H, "H", (p, None))

    @property
    def size(self):
        return self.y.shape[0]


def ensemble_moments(E):
    """Ensemble mean and normalized anomalies ``(E - mean) / sqrt(N - 1)``."""
    E = check_ensemble(E)
    mean = E.mean(axis=1)
    X = (E - mean[:, None]) / math.sqrt(E.shape[1] - 1)
    return mean, X


def sample_covariance(E):
    _, X = ensemble_moments(E)
    return X @ X.T


def forecast_covariance(E, rho=None):
    """Sample covariance of ``E``, tapered elementwise by ``rho`` if given."""
    P = sample_covariance(E)
    if rho is None:
        return P
    rho = np.asarray(rho, dtype=float)
    if rho.shape != P.shape:
        raise InvalidInputError(f"localization has shape {rho.shape}, expected {P.shape}")
    return rho * P


def _innovation_inverse(S, name="innovation covariance"):
    """Inverse (or pseudo-inverse beyond COND_LIMIT) of an SPD innovation covariance."""
    S = 0.5 * (S + S.T)
    if not np.all(np.isfinite(S)):
        raise NumericalError(f"{name} has non-finite entries", matrix_name=name)
    w, V = np.linalg.eigh(S)
    top = np.max(np.abs(w)) if w.size else 0.0
    if top == 0.0:
        raise NumericalError(f"{name} is identically zero", matrix_name=name)
    if w[0] > top / COND_LIMIT:
        return (V / w) @ V.T
    keep = w > top / COND_LIMIT
    inv = np.zeros_like(w)
    inv[keep] = 1.0 / w[keep]
    return (V * inv) @ V.T


def esrf_analysis(E, obs, rho=None, background_cov=None, full_output=False):
    """Left-multiplied ensemble square-root filter analysis.

    Parameters
    ----------
    E : ndarray, shape (n, N)
        Forecast ensemble.
    obs : Observation
        Observation with linear operator ``obs.H`` of shape (p, n).
    rho : ndarray, shape (n, n), optional
        Localization matrix applied to the sample covariance.
    background_cov : ndarray, shape (n, n), optional
        Use this covariance instead of the ensemble estimate (static-B runs).
    full_output : bool
        Also return the analysis covariance and the gain.

    Returns
    -------
    Ea : ndarray, shape (n, N)
        Analysis ensemble. Its anomalies are ``T @ X`` with
        ``T = S (I - Z)^{1/2} S^+``, ``S = P^{1/2}`` and
        ``Z = S H^T (H P H^T + R)^{-1} H S``, which gives
        ``T P T^T = (I - K H) P``.
    Pa, K : ndarray
        Only when ``full_output`` is true.
    """
    E = check_ensemble(E)
    n, N = E.shape
    H = obs.H
    if H.shape[1] != n:
        raise InvalidInputError(f"H has {H.shape[1]} columns, ensemble dimension is {n}")
    mean, X = ensemble_moments(E)
    if background_cov is None:
        P = forecast_covariance(E, rho)
    else:
        P = check_square(background_cov, "background_cov", n)

    HP = H @ P
    innov_cov = HP @ H.T + obs.R
    innov_inv = _innovation_inverse(innov_cov)
    K = HP.T @ innov_inv
    mean_a = mean + K @ (obs.y - H @ mean)

    S, S_pinv = sqrt_and_pinv_sqrt(P, "forecast covariance")
    HS = H @ S
    Z = HS.T @ innov_inv @ HS
    w, V = np.linalg.eigh(np.eye(n) - 0.5 * (Z + Z.T))
    root = (V * np.sqrt(np.clip(w, 0.0, 1.0))) @ V.T
    T = S @ root @ S_pinv
    # columns of X outside range(S) (possible with static-B) are left untouched
    Xa = T @ X + (X - S @ (S_pinv @ X))
    Ea = mean_a[:, None] + math.sqrt(N - 1) * Xa
    if not full_output:
        return Ea
    Pa = P - K @ HP
    return Ea, 0.5 * (Pa + Pa.T), K


def kalman_gain(P, H, R):
    innov_inv = _innovation_inverse(H @ P @ H.T + R)
    return P @ H.T @ innov_inv


def compute_model_obs_operator(G, H):
    """Observation operator of a model whose space is reached from the reference by ``G``.

    Returns ``H @ pinv(G)`` of shape ``(p, n_m)``; for ``G = I`` this is ``H``.
    """
    G = check_matrix(G, "G")
    H = check_matrix(H, "H")
    if H.shape[1] != G.shape[1]:
        raise InvalidInputError(f"H has {H.shape[1]} columns but G maps from dimension {G.shape[1]}")
    return H @ pseudoinverse(G)


def estimate_inflation_factor(d, R, HPfHT):
    """Innovation-based multiplicative inflation estimate.

    ``(d.d - tr R) / tr(H P H^T)``; negative values are allowed.
    """
    d = check_vector(d, "d")
    denom = float(np.trace(np.atleast_2d(HPfHT)))
    if denom == 0.0 or not math.isfinite(denom):
        raise InvalidInputError("trace of H P H^T must be nonzero")
    return (float(d @ d) - float(np.trace(np.atleast_2d(R)))) / denom


@dataclass
class InflationState:
    """Smoothed multiplicative inflation factor and its smoothing weight."""

    value: float = 1.0
    gamma: float = 1e-2
    adaptive: bool = True

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise InvalidInputError("gamma must lie in (0, 1)")
        if not self.value > 0:
            raise InvalidInputError("inflation factor must be positive")


def smooth_inflation(state, estimate):
    """Convex update ``gamma * estimate + (1 - gamma) * value`` of the inflation factor."""
    if not 0.0 < state.gamma < 1.0:
        raise InvalidInputError("gamma must lie in (0, 1)")
    new = state.gamma * estimate + (1.0 - state.gamma) * state.value
    if not new > 0:
        raise MisspecificationError(
            f"smoothed inflation became {new:.4g}; error covariances are likely "
            f"misspecified or gamma={state.gamma} is too large"
        )
    return InflationState(value=new, gamma=state.gamma, adaptive=state.adaptive)


def apply_inflation(E, lam):
    """Scale ensemble anomalies by ``sqrt(lam)`` about the unchanged mean."""
    if not lam > 0:
        raise InvalidInputError("inflation factor must be positive")
    E = np.asarray(E, dtype=float)
    if lam == 1.0:
        return E.copy()
    mean = E.mean(axis=1, keepdims=True)
    return mean + math.sqrt(lam) * (E - mean)


def update_inflation(state, E, obs, rho=None):
    """Estimate inflation from the innovation of ``E`` and return the smoothed state.

    The estimate uses the uninflated covariance of ``E``.
    """
    if not state.adaptive:
        return state, float("nan")
    mean = E.mean(axis=1)
    d = obs.y - obs.H @ mean
    P = forecast_covariance(E, rho)
    lam_hat = estimate_inflation_factor(d, obs.R, obs.H @ P @ obs.H.T)
    return smooth_inflation(state, lam_hat), lam_hat


__all__ = [
    "Observation",
    "InflationState",
    "ensemble_moments",
    "sample_covariance",
    "forecast_covariance",
    "esrf_analysis",
    "kalman_gain",
    "compute_model_obs_operator",
    "estimate_inflation_factor",
    "smooth_inflation",
    "apply_inflation",
    "update_inflation",
    "symmetric_sqrt",
]
