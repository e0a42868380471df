"""Input validation helpers shared across modules."""
import numpy as np

from .exceptions import InvalidInputError


def as_float_array(a, name, ndim=None):
    arr = np.asarray(a, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise InvalidInputError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


def check_vector(x, name="x", size=None):
    x = as_float_array(x, name)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.ndim != 1:
        raise InvalidInputError(f"{name} must be a vector, got shape {x.shape}")
    if size is not None and x.shape[0] != size:
        raise InvalidInputError(f"{name} has length {x.shape[0]}, expected {size}")
    return x


def check_matrix(A, name="A", shape=None):
    A = as_float_array(A, name)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    if A.ndim != 2:
        raise InvalidInputError(f"{name} must be a matrix, got shape {A.shape}")
    if shape is not None:
        rows, cols = shape
        if (rows is not None and A.shape[0] != rows) or (cols is not None and A.shape[1] != cols):
            raise InvalidInputError(f"{name} has shape {A.shape}, expected {shape}")
    return A


def check_square(A, name="A", size=None):
    A = check_matrix(A, name)
    if A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {A.shape}")
    if size is not None and A.shape[0] != size:
        raise InvalidInputError(f"{name} has shape {A.shape}, expected ({size}, {size})")
    return A


def check_symmetric(A, name="A", rtol=1e-10):
    A = check_square(A, name)
    scale = np.linalg.norm(A)
    if scale > 0 and np.linalg.norm(A - A.T) > rtol * scale:
        raise InvalidInputError(f"{name} is not symmetric")
    return 0.5 * (A + A.T)


def check_ensemble(E, name="E", n=None):
    """Return ``E`` as an ``(n, N)`` float array with ``N >= 2`` finite members."""
    E = check_matrix(E, name)
    if n is not None and E.shape[0] != n:
        raise InvalidInputError(f"{name} has state dimension {E.shape[0]}, expected {n}")
    if E.shape[1] < 2:
        raise InvalidInputError(f"{name} needs at least 2 members, got {E.shape[1]}")
    if not np.all(np.isfinite(E)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return E
