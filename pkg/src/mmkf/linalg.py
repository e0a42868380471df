"""Dense linear algebra for covariance matrices and localization.

Square roots, pseudo-inverses of symmetric matrices and PSD repair all go
through ``numpy.linalg.eigh`` so they share one tolerance policy.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from ._validation import check_matrix, check_square, check_symmetric
from .exceptions import InvalidInputError

# eigenvalues above -NEG_TOL * lambda_max are treated as roundoff and clamped
NEG_TOL = 1e-10


def _clamped_eigh(A, name):
    A = check_symmetric(A, name)
    w, V = np.linalg.eigh(A)
    top = max(w[-1], 0.0) if w.size else 0.0
    if w.size and w[0] < -NEG_TOL * top:
        raise InvalidInputError(
            f"{name} has a negative eigenvalue {w[0]:.3e} (largest {top:.3e})"
        )
    return np.clip(w, 0.0, None), V


def symmetric_sqrt(A, name="A"):
    """Symmetric square root of a positive semidefinite matrix.

    Parameters
    ----------
    A : ndarray, shape (n, n)
        Symmetric PSD matrix. Eigenvalues down to ``-1e-10 * lambda_max``
        are treated as zero.

    Returns
    -------
    S : ndarray, shape (n, n)
        Symmetric PSD matrix with ``S @ S == A``.
    """
    w, V = _clamped_eigh(A, name)
    return (V * np.sqrt(w)) @ V.T


def sqrt_and_pinv_sqrt(A, name="A", rcond=1e-8):
    """Return ``(S, S_pinv)`` for a PSD matrix from a single eigendecomposition."""
    w, V = _clamped_eigh(A, name)
    root = np.sqrt(w)
    cutoff = rcond * (root[-1] if root.size else 0.0)
    inv_root = np.zeros_like(root)
    keep = root > cutoff
    inv_root[keep] = 1.0 / root[keep]
    return (V * root) @ V.T, (V * inv_root) @ V.T


def pseudoinverse(A):
    """Moore-Penrose pseudoinverse of any real matrix."""
    A = check_matrix(A, "A")
    if A.size == 0 or not np.any(A):
        return np.zeros(A.T.shape)
    return np.linalg.pinv(A)


def symmetric_pinv(A, name="A", rcond=1e-12):
    """Pseudo-inverse of a symmetric matrix via eigendecomposition.

    Also returns the 2-norm condition number of ``A`` (``inf`` when singular).
    """
    A = check_symmetric(A, name)
    w, V = np.linalg.eigh(A)
    amax = np.max(np.abs(w)) if w.size else 0.0
    keep = np.abs(w) > rcond * amax
    inv = np.zeros_like(w)
    inv[keep] = 1.0 / w[keep]
    amin = np.min(np.abs(w)) if w.size else 0.0
    cond = amax / amin if amin > 0 else math.inf
    return (V * inv) @ V.T, cond


def nearest_psd(A, eps=0.0, return_changed=False):
    """Nearest matrix in Frobenius norm whose eigenvalues are all ``>= eps``.

    The input is symmetrized first. Matrices that already satisfy the bound
    are returned unchanged (as a symmetrized copy).
    """
    if eps < 0:
        raise InvalidInputError("eps must be nonnegative")
    A = check_square(A, "A")
    A = 0.5 * (A + A.T)
    w, V = np.linalg.eigh(A)
    if w.size == 0 or w[0] >= eps:
        return (A, False) if return_changed else A
    w = np.maximum(w, eps)
    out = (V * w) @ V.T
    out = 0.5 * (out + out.T)
    return (out, True) if return_changed else out


def gaspari_cohn(distance, radius):
    """Gaspari-Cohn fifth-order compactly supported correlation.

    ``radius`` is the half-width ``c``: the function is 1 at zero distance,
    ``5/24`` at ``c`` and vanishes from ``2c`` on. Accepts scalars or arrays
    of distances; ``radius=inf`` gives 1 everywhere.
    """
    r = np.asarray(distance, dtype=float)
    if np.any(r < 0) or np.any(np.isnan(r)):
        raise InvalidInputError("distance must be nonnegative")
    if not radius > 0:
        raise InvalidInputError("radius must be positive")
    if math.isinf(radius):
        out = np.ones_like(r)
        return out if out.ndim else float(out)
    z = r / radius
    out = np.zeros_like(z)
    inner = z <= 1.0
    outer = (z > 1.0) & (z < 2.0)
    a = z[inner]
    out[inner] = ((((-0.25 * a + 0.5) * a + 0.625) * a - 5.0 / 3.0) * a * a) + 1.0
    b = z[outer]
    out[outer] = (
        ((((b / 12.0 - 0.5) * b + 0.625) * b + 5.0 / 3.0) * b - 5.0) * b + 4.0 - 2.0 / (3.0 * b)
    )
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


def cyclic_distance(i, j, length):
    d = np.abs(np.asarray(i) - np.asarray(j))
    return np.minimum(d, length - d)


@dataclass(frozen=True)
class VariableLayout:
    """Assignment of state indices to variable classes on cyclic rings.

    Attributes
    ----------
    classes : tuple of str
        Class name of each state index.
    positions : ndarray of int
        Position of each index on its class ring.
    ring_lengths : dict
        Ring length per class.
    parents : ndarray of int
        Position on the parent-class ring that each index belongs to. For
        parent-class indices this equals ``positions``.
    parent_class : str
        Name of the coarse class that cross-class pairs are measured on.
    """

    classes: tuple
    positions: np.ndarray
    ring_lengths: dict
    parents: np.ndarray
    parent_class: str = "x"

    def __post_init__(self):
        n = len(self.classes)
        if len(self.positions) != n or len(self.parents) != n:
            raise InvalidInputError("layout arrays must all cover every state index")
        for cls, pos in zip(self.classes, self.positions):
            if cls not in self.ring_lengths:
                raise InvalidInputError(f"no ring length for class {cls!r}")
            if not 0 <= pos < self.ring_lengths[cls]:
                raise InvalidInputError(f"position {pos} outside ring of class {cls!r}")
        if self.parent_class in self.ring_lengths:
            plen = self.ring_lengths[self.parent_class]
            if np.any((np.asarray(self.parents) < 0) | (np.asarray(self.parents) >= plen)):
                raise InvalidInputError("parent positions outside the parent ring")

    @property
    def size(self):
        return len(self.classes)


def single_scale_layout(D):
    return VariableLayout(
        classes=("x",) * D,
        positions=np.arange(D),
        ring_lengths={"x": D},
        parents=np.arange(D),
    )


def two_scale_layout(D, d):
    """Layout of the vec-stacked two-scale state ``[x; y_1; ...; y_d]``.

    Block ``j`` holds ``y_{j,1..D}``. On the fast ring ``y_{j,i}`` sits at
    ``i*d + j`` (0-based), so ``y_{d,i}`` neighbours ``y_{1,i+1}``.
    """
    classes = ["x"] * D
    positions = list(range(D))
    parents = list(range(D))
    for j in range(d):
        for i in range(D):
            classes.append("y")
            positions.append(i * d + j)
            parents.append(i)
    return VariableLayout(
        classes=tuple(classes),
        positions=np.array(positions),
        ring_lengths={"x": D, "y": D * d} if d else {"x": D},
        parents=np.array(parents),
    )


@dataclass(frozen=True)
class LocalizationSpec:
    """Gaspari-Cohn half-widths per variable class (grid-index units).

    ``math.inf`` (or ``enabled=False``) switches localization off.
    """

    radii: dict = field(default_factory=lambda: {"x": 4.0})
    enabled: bool = True

    def __post_init__(self):
        for cls, r in self.radii.items():
            if not r > 0:
                raise InvalidInputError(f"radius for class {cls!r} must be positive")


def build_localization(spec, layout):
    """Localization matrix for a variable layout.

    Same-class pairs use the class radius on the class ring. Cross-class
    pairs use the parent-class radius on the distance between parents, so a
    fast variable and its own slow parent get weight 1. When the resulting
    matrix is indefinite it is projected onto the nearest PSD matrix and
    rescaled back to unit diagonal.
    """
    n = layout.size
    if not spec.enabled:
        return np.ones((n, n))
    classes = np.array(layout.classes)
    positions = np.asarray(layout.positions)
    parents = np.asarray(layout.parents)
    for cls in set(layout.classes):
        if cls not in spec.radii:
            raise InvalidInputError(f"no localization radius for class {cls!r}")
    parent_radius = spec.radii.get(layout.parent_class)
    plen = layout.ring_lengths.get(layout.parent_class)

    rho = np.empty((n, n))
    same = classes[:, None] == classes[None, :]
    for cls in set(layout.classes):
        idx = np.flatnonzero(classes == cls)
        dist = cyclic_distance(positions[idx, None], positions[None, idx], layout.ring_lengths[cls])
        rho[np.ix_(idx, idx)] = gaspari_cohn(dist, spec.radii[cls])
    if not np.all(same):
        if parent_radius is None:
            raise InvalidInputError("cross-class pairs need a parent-class radius")
        dist = cyclic_distance(parents[:, None], parents[None, :], plen)
        cross = gaspari_cohn(dist, parent_radius)
        rho = np.where(same, rho, cross)
        if np.linalg.eigvalsh(rho)[0] < -1e-10:
            rho = nearest_psd(rho, 0.0)
            scale = 1.0 / np.sqrt(np.diag(rho))
            rho = rho * scale[:, None] * scale[None, :]
            rho = 0.5 * (rho + rho.T)
    return rho
