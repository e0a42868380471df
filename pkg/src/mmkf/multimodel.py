"""Multi-model fusion: direct and iterative solutions and the MM-EnKF cycle.

Model ``m`` lives in its own space reached from the reference space by a
linear map ``G_m`` (``G_ref = I``). Forecasts of the other models enter the
reference ensemble as pseudo-observations ``(mean_m, P_m)`` with observation
operator ``G_m``; the real observations are assimilated last.
"""
from dataclasses import dataclass, field
import itertools
from typing import Optional, Sequence

import numpy as np

from ._validation import check_matrix, check_square, check_vector
from .error_estimation import sample_model_error, update_model_error
from .exceptions import ConfigurationError, InvalidInputError, MMKFError
from .filter import (
    InflationState,
    Observation,
    apply_inflation,
    esrf_analysis,
    estimate_inflation_factor,
    forecast_covariance,
    smooth_inflation,
)
from .linalg import pseudoinverse, symmetric_pinv
from .models import integrate


@dataclass
class GaussianSummary:
    """Mean and covariance of a Gaussian estimate."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = check_vector(self.mean, "mean")
        self.cov = check_square(self.cov, "cov", self.mean.shape[0])


def _inverse_spd(P, what):
    P = 0.5 * (P + P.T)
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise InvalidInputError(
            f"{what} is not positive definite; use the iterative solution instead"
        ) from None
    Linv = np.linalg.solve(L, np.eye(P.shape[0]))
    return Linv.T @ Linv


def direct_fusion(summaries, maps, obs=None):
    """Closed-form multi-model analysis (precision-weighted fusion).

    Parameters
    ----------
    summaries : sequence of GaussianSummary
        Forecast of each model in its own space.
    maps : sequence of ndarray
        ``G_m`` from the reference space into model ``m``'s space.
    obs : Observation, optional
        Without observations this is the multi-model forecast combination.

    Returns
    -------
    GaussianSummary
        Analysis in the reference space.
    """
    if len(summaries) != len(maps) or not summaries:
        raise InvalidInputError("need one map per summary and at least one summary")
    n = check_matrix(maps[0], "G").shape[1]
    precision = np.zeros((n, n))
    rhs = np.zeros(n)
    for m, (s, G) in enumerate(zip(summaries, maps)):
        G = check_matrix(G, "G", (s.mean.shape[0], n))
        Pinv = _inverse_spd(s.cov, f"forecast covariance of model {m}")
        precision += G.T @ Pinv @ G
        rhs += G.T @ Pinv @ s.mean
    if obs is not None:
        Rinv = _inverse_spd(obs.R, "observation covariance")
        precision += obs.H.T @ Rinv @ obs.H
        rhs += obs.H.T @ Rinv @ obs.y
    Pa = _inverse_spd(precision, "analysis precision")
    Pa = 0.5 * (Pa + Pa.T)
    return GaussianSummary(Pa @ rhs, Pa)


def blue_weights(covs, maps):
    """Weights of the minimum-variance linear unbiased combination.

    ``A_l = (sum_k G_k^T P_k^{-1} G_k)^{-1} G_l^T P_l^{-1}``; they satisfy
    ``sum_l A_l G_l = I``.
    """
    if len(covs) != len(maps) or not covs:
        raise InvalidInputError("need one map per covariance")
    precisions = [_inverse_spd(check_square(P, "P"), f"covariance {i}") for i, P in enumerate(covs)]
    maps = [check_matrix(G, "G") for G in maps]
    normal = sum(G.T @ Pinv @ G for G, Pinv in zip(maps, precisions))
    normal_inv = _inverse_spd(normal, "normal matrix")
    return [normal_inv @ G.T @ Pinv for G, Pinv in zip(maps, precisions)]


def kalman_step(background, y, R, H):
    """Exact Kalman update of a Gaussian summary, pseudo-inverse in the gain."""
    H = check_matrix(H, "H")
    P = background.cov
    innov = H @ P @ H.T + R
    innov_pinv, _ = symmetric_pinv(0.5 * (innov + innov.T), "innovation covariance")
    K = P @ H.T @ innov_pinv
    mean = background.mean + K @ (y - H @ background.mean)
    Pa = P - K @ H @ P
    return GaussianSummary(mean, 0.5 * (Pa + Pa.T))


def _summary_da_step(background, pseudo, G):
    return kalman_step(background, pseudo.mean, pseudo.cov, G)


def combine_iterative(items, maps, da_step=_summary_da_step):
    """Fold models ``2..M`` into model 1 by successive analysis steps.

    Parameters
    ----------
    items : sequence
        ``items[0]`` is the background (a GaussianSummary or an ensemble);
        ``items[1:]`` are GaussianSummary pseudo-observations.
    maps : sequence of ndarray
        ``maps[m]`` maps the background space into the space of item ``m``.
        ``maps[0]`` is ignored.
    da_step : callable
        ``da_step(background, pseudo_observation, G) -> background``. The
        default is the exact Kalman step for summaries.
    """
    if len(items) != len(maps):
        raise InvalidInputError("need one map per item")
    current = items[0]
    for m in range(1, len(items)):
        try:
            current = da_step(current, items[m], maps[m])
        except MMKFError as exc:
            raise type(exc)(f"while assimilating model {m}: {exc}") from exc
    return current


def esrf_da_step(rho=None):
    """Ensemble analysis step usable with :func:`combine_iterative`."""

    def step(E, pseudo, G):
        return esrf_analysis(E, Observation(pseudo.mean, pseudo.cov, G), rho)

    return step


def _is_identity(G):
    return G.shape[0] == G.shape[1] and np.array_equal(G, np.eye(G.shape[0]))


def apply_map(G, E):
    return E if _is_identity(G) else G @ E


def model_observation(model, H):
    """Observation rows visible to ``model`` and its operator restricted to them."""
    if model.obs_operator is not None:
        Hm = check_matrix(model.obs_operator, "obs_operator", (None, model.dim))
        if Hm.shape[0] != H.shape[0]:
            raise ConfigurationError("explicit obs_operator must cover all observation rows")
        return np.arange(H.shape[0]), Hm
    Hm = H if _is_identity(model.G) else H @ pseudoinverse(model.G)
    rows = np.flatnonzero(np.any(np.abs(Hm) > 1e-12, axis=1))
    return rows, Hm[rows]


@dataclass
class MultiModelState:
    """Everything a multi-model filter carries from one cycle to the next.

    Attributes
    ----------
    models : list of ModelSystem
    ensembles : list of ndarray
        Current ensemble of each model, in that model's space.
    error_states : list of ModelErrorState
        Model-error estimate per model (for the current lead).
    inflation : InflationState
    reference : int
        Index of the model whose space hosts the combined estimate.
    order : sequence of int, optional
        Assimilation order. Defaults to the reference model first, then the
        others in configuration order.
    static_covs : list of ndarray, optional
        Fixed forecast covariances replacing the ensemble estimates.
    """

    models: list
    ensembles: list
    error_states: list
    inflation: InflationState = field(default_factory=InflationState)
    reference: int = 0
    order: Optional[Sequence[int]] = None
    static_covs: Optional[list] = None
    estimate_error: bool = True

    def __post_init__(self):
        M = len(self.models)
        if M < 1 or len(self.ensembles) != M or len(self.error_states) != M:
            raise InvalidInputError("models, ensembles and error states must have equal length M >= 1")
        if not 0 <= self.reference < M:
            raise InvalidInputError("reference index out of range")
        if not _is_identity(self.models[self.reference].G):
            raise ConfigurationError("the reference model must have G = I")
        if self.order is None:
            self.order = [self.reference] + [m for m in range(M) if m != self.reference]
        self.order = list(self.order)
        if sorted(self.order) != list(range(M)):
            raise InvalidInputError("order must be a permutation of the model indices")

    @property
    def M(self):
        return len(self.models)

    @property
    def reference_model(self):
        return self.models[self.reference]


def _model_rng(rng, M):
    return rng.spawn(M)


def perturb_ensembles(ensembles, error_states, rngs):
    """Add model-error draws to each model's forecast ensemble."""
    return [sample_model_error(E, s, r) for E, s, r in zip(ensembles, error_states, rngs)]


def pseudo_observations(ensembles, models, static_covs=None):
    out = []
    for m, (E, model) in enumerate(zip(ensembles, models)):
        cov = forecast_covariance(E, model.localization) if static_covs is None else static_covs[m]
        out.append(GaussianSummary(E.mean(axis=1), cov))
    return out


def inverse_map(model):
    """``G_m^{-1}`` (cached on the model); configuration error if ``G_m`` is singular."""
    G = model.G
    cached = getattr(model, "_inverse_map", None)
    if cached is not None and cached[0] is G:
        return cached[1]
    if G.shape[0] != G.shape[1] or np.linalg.matrix_rank(G) < G.shape[0]:
        raise ConfigurationError(
            f"map of model {model.name!r} is not invertible; Method 2 and the MME need invertible maps"
        )
    inv = G if _is_identity(G) else np.linalg.inv(G)
    model._inverse_map = (G, inv)
    return inv


def combine_method1(perturbed, models, order, static_covs=None, pseudo=None):
    """Fold all model forecasts into the first model of ``order``.

    The background is ``perturbed[order[0]]``, which must be in the reference
    space. Returns the combined ensemble, the chained covariance (only with
    ``static_covs``) and the pseudo-observations used.
    """
    if pseudo is None:
        pseudo = pseudo_observations(perturbed, models, static_covs)
    first = order[0]
    E = perturbed[first]
    rho = models[first].localization
    P_chain = None if static_covs is None else static_covs[first]
    for m in order[1:]:
        obs = Observation(pseudo[m].mean, pseudo[m].cov, models[m].G)
        try:
            if P_chain is None:
                E = esrf_analysis(E, obs, rho)
            else:
                E, P_chain, _ = esrf_analysis(E, obs, background_cov=P_chain, full_output=True)
        except MMKFError as exc:
            raise type(exc)(f"while assimilating model {m} ({models[m].name}): {exc}") from exc
    return E, P_chain, pseudo


def combine_method2(perturbed, models, reference, pseudo=None):
    """Combine with every model as reference in turn and stack a superensemble.

    Returns the superensemble in the reference space and the column slice of
    each model.
    """
    M = len(models)
    if pseudo is None:
        pseudo = pseudo_observations(perturbed, models)
    inverses = [inverse_map(model) for model in models]
    blocks = []
    for m in range(M):
        order = [m] + [k for k in range(M) if k != m]
        E = perturbed[m]
        for k in order[1:]:
            # map from model m's space to model k's space
            G_mk = models[k].G @ inverses[m]
            obs = Observation(pseudo[k].mean, pseudo[k].cov, G_mk)
            try:
                E = esrf_analysis(E, obs, models[m].localization)
            except MMKFError as exc:
                raise type(exc)(f"while assimilating model {k} into model {m}: {exc}") from exc
        blocks.append(apply_map(inverses[m], E))
    slices, start = [], 0
    for E in blocks:
        slices.append(slice(start, start + E.shape[1]))
        start += E.shape[1]
    return np.concatenate(blocks, axis=1), slices


def distribute_method1(E_ref, models, rng):
    """Map the reference analysis into each model space, subsampling members."""
    N = E_ref.shape[1]
    out = []
    for model in models:
        E = apply_map(model.G, E_ref)
        if model.members > N:
            raise ConfigurationError(
                f"model {model.name!r} needs {model.members} members but the reference has {N}"
            )
        if model.members < N:
            cols = np.sort(rng.choice(N, size=model.members, replace=False))
            E = E[:, cols]
        out.append(E)
    return out


def split_superensemble(E_super, models, slices):
    return [apply_map(model.G, E_super[:, sl]) for model, sl in zip(models, slices)]


def _update_error_states(state, forecasts, obs):
    if not state.estimate_error:
        return
    for m, model in enumerate(state.models):
        rows, Hm = model_observation(model, obs.H)
        if rows.size == 0:
            continue
        R = obs.R[np.ix_(rows, rows)]
        state.error_states[m] = update_model_error(state.error_states[m], forecasts[m], obs.y[rows], R, Hm)


def _inflate_and_update(state, E, obs, rho, P_static=None):
    """Inflate with the current factor, then update it from this innovation."""
    lam = state.inflation.value
    lam_hat = float("nan")
    if state.inflation.adaptive:
        d = obs.y - obs.H @ E.mean(axis=1)
        P = forecast_covariance(E, rho) if P_static is None else P_static
        lam_hat = estimate_inflation_factor(d, obs.R, obs.H @ P @ obs.H.T)
        state.inflation = smooth_inflation(state.inflation, lam_hat)
    return apply_inflation(E, lam), lam, lam_hat


def _diagnostics(state, forecast, analysis, lam, lam_hat, pseudo):
    return {
        "forecast": forecast,
        "analysis": analysis,
        "lambda": lam,
        "lambda_hat": lam_hat,
        "q_trace": [float(np.trace(s.Q)) for s in state.error_states],
        "pseudo_covs": [p.cov for p in pseudo],
    }


def mm_enkf_step_method1(state, obs, rng):
    """One analysis cycle of the MM-EnKF with a single reference ensemble.

    ``state.ensembles`` holds the forecasts on entry and the per-model
    analyses on return. Model-error draws are added, the other models are
    folded into the reference ensemble in ``state.order``, the result is
    inflated, the observations are assimilated, and the analysis is mapped
    back into every model space.

    Returns
    -------
    analyses : list of ndarray
    diagnostics : dict
        ``forecast`` and ``analysis`` ensembles in the reference space,
        ``lambda`` applied, ``lambda_hat`` estimated, ``q_trace`` per model and
        the ``pseudo_covs`` used as model forecast covariances.
    """
    rngs = _model_rng(rng, state.M + 1)
    forecasts = state.ensembles
    perturbed = perturb_ensembles(forecasts, state.error_states, rngs[:-1])
    _update_error_states(state, forecasts, obs)
    first = state.order[0]
    if not _is_identity(state.models[first].G):
        raise ConfigurationError("Method 1 needs the first model in the order to live in the reference space")
    E, P_chain, pseudo = combine_method1(perturbed, state.models, state.order, state.static_covs)
    rho = state.models[first].localization
    Ef, lam, lam_hat = _inflate_and_update(state, E, obs, rho, P_chain)
    if P_chain is None:
        Ea = esrf_analysis(Ef, obs, rho)
    else:
        Ea = esrf_analysis(Ef, obs, background_cov=lam * P_chain)
    analyses = distribute_method1(Ea, state.models, rngs[-1])
    state.ensembles = analyses
    return analyses, _diagnostics(state, Ef, Ea, lam, lam_hat, pseudo)


def mm_enkf_step_method2(state, obs, rng):
    """One analysis cycle of the MM-EnKF built on a superensemble.

    Every model serves as reference in turn (order: itself first, then the
    others), the combined ensembles are stacked in the reference space,
    inflated, updated with the observations and split back so each model
    keeps its own members. All maps must be invertible.
    """
    rngs = _model_rng(rng, state.M)
    forecasts = state.ensembles
    perturbed = perturb_ensembles(forecasts, state.error_states, rngs)
    _update_error_states(state, forecasts, obs)
    E, slices = combine_method2(perturbed, state.models, state.reference)
    pseudo = pseudo_observations(perturbed, state.models)
    rho = state.reference_model.localization
    Ef, lam, lam_hat = _inflate_and_update(state, E, obs, rho)
    Ea = esrf_analysis(Ef, obs, rho)
    analyses = split_superensemble(Ea, state.models, slices)
    state.ensembles = analyses
    return analyses, _diagnostics(state, Ef, Ea, lam, lam_hat, pseudo)


def mme_step(state, obs, rng):
    """Unweighted multi-model ensemble: stack all members and assimilate once."""
    rngs = _model_rng(rng, state.M)
    forecasts = state.ensembles
    perturbed = perturb_ensembles(forecasts, state.error_states, rngs)
    _update_error_states(state, forecasts, obs)
    blocks = []
    for model, E in zip(state.models, perturbed):
        blocks.append(apply_map(inverse_map(model), E))
    slices, start = [], 0
    for B in blocks:
        slices.append(slice(start, start + B.shape[1]))
        start += B.shape[1]
    E = np.concatenate(blocks, axis=1)
    rho = state.reference_model.localization
    Ef, lam, lam_hat = _inflate_and_update(state, E, obs, rho)
    Ea = esrf_analysis(Ef, obs, rho)
    analyses = split_superensemble(Ea, state.models, slices)
    state.ensembles = analyses
    return analyses, _diagnostics(state, Ef, Ea, lam, lam_hat, [])


def combine_forecasts(state, perturbed, rng, method=1):
    """Combine already perturbed forecasts without observations.

    Returns the combined ensemble in the reference space and the per-model
    ensembles that seed the next leg.
    """
    if method == 1:
        E, _, _ = combine_method1(perturbed, state.models, state.order)
        return E, distribute_method1(E, state.models, rng)
    if method == 2:
        E, slices = combine_method2(perturbed, state.models, state.reference)
        return E, split_superensemble(E, state.models, slices)
    raise InvalidInputError(f"unknown method {method!r}")


def _lead_states(state, error_states):
    states = state.error_states if error_states is None else error_states
    if states is None or len(states) != state.M or any(s is None for s in states):
        raise ConfigurationError("a model-error estimate is required for every model at this lead")
    return states


def mm_forecast(state, lead, rng, error_states=None, method=1):
    """Multi-model forecast at ``lead``: integrate, add model error, combine.

    The current inflation factor is applied to the combined ensemble; no
    observations are used.
    """
    states = _lead_states(state, error_states)
    rngs = _model_rng(rng, state.M + 1)
    forecasts = [integrate(model, E, lead) for model, E in zip(state.models, state.ensembles)]
    perturbed = perturb_ensembles(forecasts, states, rngs[:-1])
    E, _ = combine_forecasts(state, perturbed, rngs[-1], method)
    return apply_inflation(E, state.inflation.value)


def recursive_forecast(state, tau, K, Q_schedule, rng, method=1):
    """Forecast to ``K * tau`` recombining the models after every leg.

    ``Q_schedule[k]`` lists the per-model model-error states for leg ``k + 1``.
    The combined ensemble seeds every model for the next leg.

    Returns
    -------
    list of ndarray
        Combined ensembles at leads ``tau, 2 tau, ..., K tau``.
    """
    if K < 1:
        raise InvalidInputError("K must be at least 1")
    if len(Q_schedule) < K:
        raise ConfigurationError(f"model-error schedule covers {len(Q_schedule)} legs, need {K}")
    ensembles = list(state.ensembles)
    out = []
    for k in range(K):
        states = _lead_states(state, Q_schedule[k])
        # same draws per leg as mm_forecast, so K = 1 reproduces it exactly
        rngs = _model_rng(rng, state.M + 1)
        forecasts = [integrate(model, E, tau) for model, E in zip(state.models, ensembles)]
        perturbed = perturb_ensembles(forecasts, states, rngs[:-1])
        E, ensembles = combine_forecasts(state, perturbed, rngs[-1], method)
        out.append(apply_inflation(E, state.inflation.value))
    return out


def all_orders(M):
    return [list(p) for p in itertools.permutations(range(M))]
