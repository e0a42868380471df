"""Verification scores for ensemble forecasts."""
import numpy as np

from ._validation import check_matrix, check_vector
from .exceptions import InvalidInputError


def rmse(mean, truth):
    """Root-mean-square difference over state dimensions."""
    mean = check_vector(mean, "mean")
    truth = check_vector(truth, "truth", mean.shape[0])
    return float(np.sqrt(np.mean((mean - truth) ** 2)))


def _crps_sorted(x, y):
    # pair term sum_{i,j} |x_i - x_j| = 2 * sum_k (2k - N + 1) x_(k) for sorted x
    N = x.shape[-1]
    k = np.arange(N)
    spread = 2.0 * np.sum((2 * k - N + 1) * x, axis=-1) / N**2
    return np.mean(np.abs(x - y[..., None]), axis=-1) - 0.5 * spread


def crps_univariate(samples, truth):
    """CRPS of the empirical distribution of ``samples`` at ``truth``.

    Uses the plain estimator ``mean|X - y| - 0.5 * mean|X - X'|`` over all
    ``N**2`` ordered pairs.
    """
    x = np.sort(check_vector(samples, "samples"))
    if x.size == 0:
        raise InvalidInputError("need at least one sample")
    return float(_crps_sorted(x, np.asarray([float(truth)]))[0])


def crps_mean(E, truth):
    """Mean over state dimensions of the univariate CRPS.

    Parameters
    ----------
    E : ndarray, shape (n, N)
        Ensemble with members in columns.
    truth : ndarray, shape (n,)
    """
    E = check_matrix(E, "E")
    truth = check_vector(truth, "truth", E.shape[0])
    if E.shape[1] == 0:
        raise InvalidInputError("ensemble is empty")
    return float(np.mean(_crps_sorted(np.sort(E, axis=1), truth)))
