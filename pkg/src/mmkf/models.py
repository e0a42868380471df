"""Lorenz96 dynamics, RK4 integration and inter-model maps."""
from dataclasses import dataclass, field
import functools
import math
from typing import Callable, Optional

import numpy as np

from ._validation import check_ensemble, check_matrix, check_vector
from .exceptions import InvalidInputError, NumericalBlowupError
from .linalg import (
    LocalizationSpec,
    VariableLayout,
    build_localization,
    single_scale_layout,
    two_scale_layout,
)

VARIANTS = ("conventional", "paper-literal")


@functools.lru_cache(maxsize=None)
def _ring_indices(D):
    i = np.arange(D)
    return (i - 1) % D, (i - 2) % D, (i + 1) % D


def _advection(x, variant):
    # x may be (D,) or (D, N); neighbours along the site axis, cyclic
    im1, im2, ip1 = _ring_indices(x.shape[0])
    xm1, xm2, xp1 = x[im1], x[im2], x[ip1]
    if variant == "conventional":
        return xm1 * (xp1 - xm2)
    if variant == "paper-literal":
        return -xm1 * (xm2 + xp1)
    raise InvalidInputError(f"unknown Lorenz96 variant {variant!r}; use one of {VARIANTS}")


def _forcing_column(F, D, ndim):
    if np.ndim(F) == 0:
        return float(F)
    F = np.asarray(F, dtype=float)
    return F if ndim == 1 else F[:, None]


def lorenz96_tendency(x, F, variant="conventional"):
    """Single-scale Lorenz96 tendency with per-site forcing.

    Parameters
    ----------
    x : ndarray, shape (D,) or (D, N)
        State, or an ensemble with members in columns. Indices are cyclic.
    F : float or array_like, shape (D,)
        Forcing per site.
    variant : {"conventional", "paper-literal"}
        ``conventional`` uses ``x[i-1] * (x[i+1] - x[i-2])``;
        ``paper-literal`` uses ``-x[i-1] * (x[i-2] + x[i+1])``.
    """
    x = np.asarray(x, dtype=float)
    D = x.shape[0]
    if D < 4:
        raise InvalidInputError(f"Lorenz96 needs at least 4 sites, got {D}")
    if np.ndim(F) and np.shape(F)[0] != D:
        raise InvalidInputError(f"forcing has length {np.shape(F)[0]}, state has {D}")
    return _advection(x, variant) - x + _forcing_column(F, D, x.ndim)


@dataclass(frozen=True)
class TwoScaleParams:
    """Parameters of the two-scale Lorenz96 system.

    The state is vec-stacked: ``D`` slow variables followed by ``d`` blocks
    of ``D`` fast variables, block ``j`` holding ``y_{j,1..D}``.
    """

    F: np.ndarray
    D: int = 20
    d: int = 10
    h: float = 1.0
    b: float = 10.0
    c: float = 10.0
    variant: str = "conventional"

    @property
    def coupling(self):
        return self.h * self.c / self.b

    @property
    def size(self):
        return (self.d + 1) * self.D


def lorenz96_two_scale_tendency(z, params):
    """Tendency of the two-scale Lorenz96 system in vec-stacked layout.

    Fast-variable boundaries follow ``y_{d+1,i} = y_{1,i+1}`` and
    ``y_{0,i} = y_{d,i-1}``; equivalently the fast variables form one ring
    ordered ``y_{1,1}, ..., y_{d,1}, y_{1,2}, ...``.
    """
    z = np.asarray(z, dtype=float)
    D, d = params.D, params.d
    if z.shape[0] != params.size:
        raise InvalidInputError(f"two-scale state must have length {params.size}, got {z.shape[0]}")
    x = z[:D]
    tail = z.shape[1:]
    # y[j, i] in vec layout -> fast ring of length d*D with y[j, i] at i*d + j
    y = z[D:].reshape((d, D) + tail)
    ring = np.swapaxes(y, 0, 1).reshape((D * d,) + tail)
    coupling = params.coupling

    dx = lorenz96_tendency(x, params.F, params.variant) - coupling * y.sum(axis=0)
    cb = params.c * params.b
    im1, _, ip1 = _ring_indices(D * d)
    ip2 = ip1[ip1]
    yp1, yp2, ym1 = ring[ip1], ring[ip2], ring[im1]
    parent = np.repeat(x, d, axis=0)
    dring = -cb * yp1 * (yp2 - ym1) - params.c * ring + coupling * parent
    dy = np.swapaxes(dring.reshape((D, d) + tail), 0, 1).reshape((D * d,) + tail)
    return np.concatenate([dx, dy], axis=0)


def _l96_fast(x, F, Fcol, variant):
    # validated once at model construction; skip per-call checks
    return _advection(x, variant) - x + (F if x.ndim == 1 else Fcol)


def rk4_step(f, x, dt):
    """One classical fourth-order Runge-Kutta step of ``dx/dt = f(x)``."""
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def n_steps(window, dt, tol=1e-9):
    steps = round(window / dt)
    if window < 0 or abs(steps * dt - window) > tol:
        raise InvalidInputError(f"window {window} is not a multiple of dt {dt}")
    return int(steps)


def x_projection_map(D, d):
    """Selection matrix ``[I_D | 0]`` picking the slow block of a two-scale state."""
    if D < 1 or d < 0:
        raise InvalidInputError("need D >= 1 and d >= 0")
    G = np.zeros((D, (d + 1) * D))
    G[:, :D] = np.eye(D)
    return G


@dataclass
class ModelSystem:
    """A forecast model together with its place in the multi-model setup.

    Attributes
    ----------
    name : str
    tendency : callable
        ``tendency(x)`` for states or ensembles (members in columns).
    dim : int
        State dimension ``n_m``.
    dt : float
        RK4 step.
    G : ndarray, shape (n_m, n_ref)
        Linear map from the reference space into this model's space.
    members : int
        Ensemble size used inside the multi-model filter.
    localization : ndarray, shape (n_m, n_m), optional
        Localization matrix in this model's space.
    obs_operator : ndarray, shape (p_m, n_m), optional
        Observation operator for this model. When omitted it is derived as
        ``H @ pinv(G)`` with observation rows the model cannot see dropped.
    noise_cov : ndarray, optional
        Covariance of an additive error drawn once per window and shared by
        every member (prescribed model error for twin experiments).
    """

    name: str
    tendency: Callable
    dim: int
    dt: float
    G: np.ndarray
    members: int = 20
    localization: Optional[np.ndarray] = None
    obs_operator: Optional[np.ndarray] = None
    noise_cov: Optional[np.ndarray] = None
    layout: Optional[VariableLayout] = None
    blocks: dict = field(default_factory=dict)

    def __post_init__(self):
        self.G = check_matrix(self.G, "G")
        if self.G.shape[0] != self.dim:
            raise InvalidInputError(f"G of model {self.name!r} must have {self.dim} rows")
        if self.members < 2:
            raise InvalidInputError("ensemble size must be at least 2")
        if not self.dt > 0:
            raise InvalidInputError("dt must be positive")
        if not self.blocks:
            self.blocks = {"all": np.arange(self.dim)}

    def step_count(self, window):
        return n_steps(window, self.dt)

    def advance(self, E, window):
        return integrate(self, E, window)


def integrate(model, E, window):
    """Advance every ensemble member by ``window`` time units with RK4."""
    E = np.asarray(E, dtype=float)
    steps = n_steps(window, model.dt)
    out = E.copy()
    for k in range(steps):
        out = rk4_step(model.tendency, out, model.dt)
        if not np.all(np.isfinite(out)):
            raise NumericalBlowupError(
                f"model {model.name!r} produced non-finite values at step {k + 1}", step=k + 1
            )
    return out


def lorenz96_model(name, F, D=40, dt=0.05, variant="conventional", members=20,
                   G=None, radius=4.0):
    """Single-scale Lorenz96 forecast model on a ring of ``D`` sites."""
    F = np.broadcast_to(np.asarray(F, dtype=float), (D,)).copy()
    layout = single_scale_layout(D)
    loc = LocalizationSpec({"x": radius}, enabled=not math.isinf(radius))
    return ModelSystem(
        name=name,
        tendency=functools.partial(_l96_fast, F=F, Fcol=F[:, None], variant=variant),
        dim=D,
        dt=dt,
        G=np.eye(D) if G is None else G,
        members=members,
        localization=build_localization(loc, layout),
        layout=layout,
    )


def lorenz96_two_scale_model(name, params, dt=0.005, members=20, G=None,
                             radius_x=4.0, radius_y=40.0):
    layout = two_scale_layout(params.D, params.d)
    loc = LocalizationSpec({"x": radius_x, "y": radius_y})
    D = params.D
    return ModelSystem(
        name=name,
        tendency=lambda z: lorenz96_two_scale_tendency(z, params),
        dim=params.size,
        dt=dt,
        G=np.eye(params.size) if G is None else G,
        members=members,
        localization=build_localization(loc, layout),
        layout=layout,
        blocks={"all": np.arange(params.size), "x": np.arange(D), "y": np.arange(D, params.size)},
    )


def check_state(x, n=None):
    x = check_vector(x, "x", n)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("state has non-finite entries")
    return x


def check_model_ensemble(model, E):
    return check_ensemble(E, f"ensemble of {model.name}", model.dim)
