"""Twin experiments: truth and observations, filters, cycle loops."""
from dataclasses import dataclass, replace
import math
import zlib
from typing import List

import numpy as np

from ..error_estimation import ModelErrorState, init_Q_lead, sample_model_error, update_model_error
from ..exceptions import ConfigurationError, DivergenceError, MMKFError
from ..filter import InflationState, Observation, apply_inflation, esrf_analysis, estimate_inflation_factor, \
    forecast_covariance, smooth_inflation
from ..linalg import symmetric_sqrt
from ..metrics import crps_mean, rmse
from ..models import (
    ModelSystem,
    TwoScaleParams,
    integrate,
    lorenz96_model,
    lorenz96_two_scale_model,
    x_projection_map,
)
from ..multimodel import (
    MultiModelState,
    apply_map,
    combine_method1,
    combine_method2,
    distribute_method1,
    inverse_map,
    mm_enkf_step_method1,
    mm_enkf_step_method2,
    mme_step,
    model_observation,
    split_superensemble,
)
from .config import parse_order

# one independent random stream per purpose; never shared across purposes
PURPOSE = {"truth": 0, "obs": 1, "init": 2, "filter": 3, "fidelity": 4, "noise": 5,
           "init_da": 6, "init_obs": 7}
DIVERGENCE_FACTOR = 10.0
DIVERGENCE_CYCLES = 50
INIT_SPREAD = 0.1
# truth samples before this time are treated as transient for climatology
CLIMATE_TRANSIENT = 100.0
FORECAST_WARMUP = 100


def stream(seed, purpose, *keys):
    """Generator for ``purpose`` keyed by integers (method, cycle, model, ...)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(PURPOSE[purpose],) + tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def method_key(label):
    return zlib.crc32(label.encode("utf-8"))


@dataclass
class CycleRecord:
    cycle: int
    phase: str
    method: str
    lead: float
    block: str
    rmse: float
    crps: float
    lam: float
    qtrace: tuple


@dataclass
class TwinSetup:
    """Truth trajectory at analysis times, observations and climatology.

    ``truth[t]`` is the true state at time ``t * window``; ``observations[t]``
    observes it (index 0 is unused and ``None``).
    """

    truth: np.ndarray
    observations: list
    H: np.ndarray
    R: np.ndarray
    truth_model: ModelSystem
    climate_var: dict
    climate_spread: float


def _forcing(values, D):
    F = np.asarray(values, dtype=float)
    if F.size == 1:
        return np.full(D, float(F[0]))
    if F.size != D:
        raise ConfigurationError(f"forcing has {F.size} entries, need 1 or {D}")
    return F


def _two_scale_params(cfg, F):
    t = cfg.truth
    return TwoScaleParams(F=_forcing(F, t.D), D=t.D, d=t.d, h=t.h, b=t.b, c=t.c, variant=t.variant)


def build_truth_model(cfg):
    t, loc = cfg.truth, cfg.localization
    if t.model == "lorenz96":
        return lorenz96_model("truth", _forcing(t.F, t.D), D=t.D, dt=t.dt, variant=t.variant,
                              radius=loc.radius)
    return lorenz96_two_scale_model("truth", _two_scale_params(cfg, t.F), dt=t.dt,
                                    radius_x=loc.radius, radius_y=loc.radius_y)


def observed_indices(cfg, n):
    spec = cfg.obs.indices.strip()
    if spec == "all":
        return np.arange(n)
    if spec == "odd":
        # odd-numbered sites counting from 1 (x_1, x_3, ...), on the slow variables
        return np.arange(0, cfg.truth.D, 2)
    idx = np.array([int(v) for v in spec.split(",")])
    if idx.size == 0 or idx.min() < 0 or idx.max() >= n:
        raise ConfigurationError(f"observed indices out of range 0..{n - 1}")
    return idx


def _spin_up(cfg, model):
    """Run the truth from a perturbed constant state; return the end state and samples."""
    rng = stream(cfg.seed, "truth")
    t = cfg.truth
    x0 = np.zeros(model.dim)
    x0[:t.D] = _forcing(t.F, t.D)
    x0 += 0.01 * rng.standard_normal(model.dim)
    n_windows = int(round(t.spinup / cfg.window))
    # short spin-ups still keep their second half as climatology samples
    transient = min(int(round(CLIMATE_TRANSIENT / cfg.window)), n_windows // 2)
    samples = []
    x = x0[:, None]
    for w in range(n_windows):
        x = integrate(model, x, cfg.window)
        if w >= transient:
            samples.append(x[:, 0].copy())
    samples = np.array(samples) if samples else x.T
    return x[:, 0], samples


def build_truth_and_obs(cfg, n_times=None, rng=None):
    """Spin up the truth, run it for ``n_times`` windows and observe it.

    Parameters
    ----------
    cfg : ExperimentConfig
    n_times : int, optional
        Number of analysis times after the initial one; defaults to
        ``cfg.cycles``.
    rng : numpy.random.Generator, optional
        Observation-noise stream; by default derived from the seed.
    """
    model = build_truth_model(cfg)
    n_times = cfg.cycles if n_times is None else n_times
    x0, samples = _spin_up(cfg, model)
    var = samples.var(axis=0)
    climate_var = {name: float(var[idx].mean()) for name, idx in model.blocks.items()}
    idx = observed_indices(cfg, model.dim)
    H = np.eye(model.dim)[idx]
    if cfg.obs.r_scale is not None:
        r = np.full(idx.size, cfg.obs.r_scale)
    else:
        per_var = np.empty(model.dim)
        per_var[:] = climate_var.get("x", climate_var["all"])
        if "y" in model.blocks:
            per_var[model.blocks["y"]] = climate_var["y"]
        r = cfg.obs.r_climate_fraction * per_var[idx]
    R = np.diag(r)
    truth = np.empty((n_times + 1, model.dim))
    truth[0] = x0
    x = x0[:, None]
    for k in range(1, n_times + 1):
        x = integrate(model, x, cfg.window)
        truth[k] = x[:, 0]
    rng = stream(cfg.seed, "obs") if rng is None else rng
    noise = rng.standard_normal((n_times + 1, idx.size)) * np.sqrt(r)
    observations = [None] + [Observation(H @ truth[k] + noise[k], R, H) for k in range(1, n_times + 1)]
    spread = math.sqrt(float(np.mean(var)))
    return TwinSetup(truth, observations, H, R, model, climate_var, spread)


def fidelity_gram(cfg, rng=None):
    """``(B - shift J)(B - shift J)^T`` with ``B`` banded, entries U(0, 1) in the band."""
    D = cfg.truth.D
    spec = cfg.fidelity
    if spec.bandwidth > D:
        raise ConfigurationError("bandwidth cannot exceed D")
    rng = stream(cfg.seed, "fidelity") if rng is None else rng
    i, j = np.indices((D, D))
    B = np.where(np.abs(i - j) <= spec.bandwidth, rng.uniform(0.0, 1.0, (D, D)), 0.0)
    A = B - spec.shift * np.ones((D, D))
    return A @ A.T


def build_models(cfg, truth_model=None, rng=None):
    """Forecast models of the configuration, in configuration order."""
    truth_model = build_truth_model(cfg) if truth_model is None else truth_model
    t, loc = cfg.truth, cfg.localization
    gram = None
    models = []
    for spec in cfg.models:
        dt = spec.dt if spec.dt is not None else t.dt
        if spec.map == "x_projection":
            if t.model != "two_scale":
                raise ConfigurationError("x_projection maps need a two-scale truth")
            G = x_projection_map(t.D, t.d)
        else:
            G = None
        if spec.model == "lorenz96":
            F = spec.F if spec.F is not None else t.F
            m = lorenz96_model(spec.name, _forcing(F, t.D), D=t.D, dt=dt, variant=t.variant,
                               members=spec.members, G=G, radius=loc.radius)
            if G is not None:
                m.blocks = {"all": np.arange(t.D), "x": np.arange(t.D)}
        elif spec.model == "two_scale":
            if t.model != "two_scale":
                raise ConfigurationError("two-scale forecast models need a two-scale truth")
            F = spec.F if spec.F is not None else t.F
            m = lorenz96_two_scale_model(spec.name, _two_scale_params(cfg, F), dt=dt,
                                         members=spec.members, G=G, radius_x=loc.radius,
                                         radius_y=loc.radius_y)
        else:
            noise = None
            if spec.noise_scale > 0:
                if cfg.fidelity is None:
                    raise ConfigurationError("noise_scale needs a [fidelity] section")
                if gram is None:
                    gram = fidelity_gram(cfg, rng)
                noise = spec.noise_scale * gram
            m = replace(truth_model, name=spec.name, members=spec.members,
                        G=truth_model.G if G is None else G, noise_cov=noise)
        models.append(m)
    return models


def build_fidelity_models(cfg, rng=None):
    """Models sharing the truth dynamics plus additive per-window noise."""
    return build_models(cfg, rng=rng)


def advance(model, E, window, seed, key):
    """Integrate and add the model's prescribed error (one draw for all members)."""
    E = integrate(model, E, window)
    if model.noise_cov is not None:
        eta = symmetric_sqrt(model.noise_cov) @ stream(seed, "noise", *key).standard_normal(model.dim)
        E = E + eta[:, None]
    return E


def _initial_q(cfg, model):
    return ModelErrorState(cfg.init_q * np.eye(model.dim), delta=cfg.delta, basis=cfg.q_basis_for(model.dim))


def _single_members(cfg, model):
    return model.members if cfg.single_members == "own" else int(cfg.single_members)


def _offsets(models):
    out, start = [], 0
    for m in models:
        out.append(start)
        start += m.members
    return out


class _Runner:
    """Common plumbing for filters driven over the cycle loop."""

    label = ""

    def records(self, cycle, phase, lead, E, truth, lam, qtrace):
        out = []
        x = apply_map(self.truth_map, truth[:, None])[:, 0]
        for block, idx in self.blocks.items():
            out.append(CycleRecord(cycle, phase, self.label, lead, block,
                                   rmse(E[idx].mean(axis=1), x[idx]), crps_mean(E[idx], x[idx]),
                                   lam, qtrace))
        return out


class SingleModelFilter(_Runner):
    """One forecast model with its own ensemble and Q estimate, no inflation."""

    def __init__(self, cfg, model, index, n_models, E0):
        self.label = f"single:{model.name}"
        self.index, self.n_models = index, n_models
        self.model = model
        own = replace(model, G=np.eye(model.dim), members=E0.shape[1], obs_operator=None)
        self.truth_map = model.G
        self.blocks = model.blocks
        self.state = MultiModelState([own], [E0], [_initial_q(cfg, model)],
                                     InflationState(adaptive=False), estimate_error=cfg.estimate_q)
        self.seed = cfg.seed
        self.config_index = index

    def restrict(self, obs):
        return Observation(*_restricted(self.model, obs))

    def forecast(self, window, cycle):
        E = self.state.ensembles[0]
        self.state.ensembles = [advance(self.model, E, window, self.seed, (self.config_index, cycle, 0))]

    def analyse(self, obs, cycle, truth):
        rng = stream(self.seed, "filter", method_key(self.label), cycle)
        _, diag = mm_enkf_step_method1(self.state, self.restrict(obs), rng)
        q = [math.nan] * self.n_models
        q[self.index] = diag["q_trace"][0]
        q = tuple(q)
        return (self.records(cycle, "forecast", None, diag["forecast"], truth, 1.0, q)
                + self.records(cycle, "analysis", 0.0, diag["analysis"], truth, 1.0, q))


class _MultiFilter(_Runner):
    def __init__(self, cfg, models, ensembles, label, order=None):
        self.label = label
        self.rng_label = label
        self.models = models
        self.seed = cfg.seed
        self.truth_map = np.eye(models[0].dim)
        ref = 0 if order is None else order[0]
        self.blocks = models[ref].blocks
        self.state = MultiModelState(models, ensembles, [_initial_q(cfg, m) for m in models],
                                     InflationState(gamma=cfg.gamma), reference=0, order=order,
                                     estimate_error=cfg.estimate_q)

    def forecast(self, window, cycle):
        self.state.ensembles = [advance(m, E, window, self.seed, (k, cycle, 0))
                                for k, (m, E) in enumerate(zip(self.models, self.state.ensembles))]

    def step(self, obs, rng):
        raise NotImplementedError

    def analyse(self, obs, cycle, truth):
        rng = stream(self.seed, "filter", method_key(self.rng_label), cycle)
        diag = self.step(obs, rng, cycle)
        q = tuple(diag["q_trace"])
        lam = diag["lambda"]
        return (self.records(cycle, "forecast", None, diag["forecast"], truth, lam, q)
                + self.records(cycle, "analysis", 0.0, diag["analysis"], truth, lam, q))


class MMEFilter(_MultiFilter):
    """All model ensembles stacked and assimilated as one, with inflation.

    With a single model this is that model's own filter: same random stream
    and no inflation, so it reproduces the single-model baseline.
    """

    def __init__(self, cfg, models, ensembles):
        super().__init__(cfg, models, ensembles, "mme")
        if len(models) == 1:
            self.rng_label = f"single:{models[0].name}"
            self.state.inflation = InflationState(adaptive=False)

    def step(self, obs, rng, cycle):
        return mme_step(self.state, obs, rng)[1]


class MMEnKFFilter(_MultiFilter):
    """MM-EnKF with Method 1 or 2, optionally with static model covariances.

    With ``static`` the filter runs flow-dependent until ``switch``,
    averages the model forecast covariances over the preceding ``average``
    cycles and uses those fixed matrices from then on.
    """

    def __init__(self, cfg, models, ensembles, method=1, static=False, order=None, label=None):
        if label is None:
            label = "static" if static else f"method{method}"
        super().__init__(cfg, models, ensembles, label, order)
        self.method = method
        self.static = static
        self.switch = cfg.static_switch_cycle
        self.average = cfg.static_average
        self._acc = None
        self._count = 0
        if static and method != 1:
            raise ConfigurationError("the static-covariance variant is built on Method 1")
        if static and self.switch < self.average:
            raise ConfigurationError("static_switch must leave room for static_average cycles")

    def step(self, obs, rng, cycle):
        if self.method == 2:
            return mm_enkf_step_method2(self.state, obs, rng)[1]
        _, diag = mm_enkf_step_method1(self.state, obs, rng)
        if self.static and self.state.static_covs is None:
            if cycle > self.switch - self.average:
                covs = diag["pseudo_covs"]
                if self._acc is None:
                    self._acc = [np.zeros_like(P) for P in covs]
                for acc, P in zip(self._acc, covs):
                    acc += P
                self._count += 1
            if cycle >= self.switch:
                self.state.static_covs = [acc / self._count for acc in self._acc]
        return diag


def _initial_pool(cfg, truth0, size):
    rng = stream(cfg.seed, "init")
    return truth0[:, None] + math.sqrt(INIT_SPREAD) * rng.standard_normal((truth0.size, size))


def make_filters(cfg, setup, models):
    """Filters for every configured method, all seeded from one perturbation pool."""
    N_single = [_single_members(cfg, m) for m in models]
    offsets = _offsets(models)
    total = sum(m.members for m in models)
    own = cfg.single_members == "own"
    pool = _initial_pool(cfg, setup.truth[0], max([total] + ([] if own else N_single)))
    ensembles = [apply_map(m.G, pool[:, o:o + m.members]) for m, o in zip(models, offsets)]
    filters = []
    for method in cfg.methods:
        if method == "single":
            for k, m in enumerate(models):
                cols = slice(offsets[k], offsets[k] + m.members) if own else slice(0, N_single[k])
                filters.append(SingleModelFilter(cfg, m, k, len(models), apply_map(m.G, pool[:, cols])))
        elif method == "mme":
            filters.append(MMEFilter(cfg, models, [E.copy() for E in ensembles]))
        elif method in ("method1", "method2"):
            filters.append(MMEnKFFilter(cfg, models, [E.copy() for E in ensembles], int(method[-1])))
        elif method == "static":
            filters.append(MMEnKFFilter(cfg, models, [E.copy() for E in ensembles], 1, static=True))
    for order in cfg.orders:
        perm = parse_order(order)
        filters.append(MMEnKFFilter(cfg, models, [E.copy() for E in ensembles], 1, order=perm,
                                    label=f"method1[{order.strip()}]"))
    return filters


def _divergence_check(run, cycle, analysis_rmse, threshold, streak):
    streak = streak + 1 if analysis_rmse > threshold else 0
    if streak >= DIVERGENCE_CYCLES:
        raise DivergenceError(
            f"{run.label}: analysis RMSE above {threshold:.3g} for {streak} consecutive cycles",
            cycle=cycle, method=run.label,
        )
    return streak


@dataclass
class ExperimentResult:
    config: object
    records: List[CycleRecord]
    n_models: int
    climate_spread: float = math.nan


def run_twin_experiment(cfg, setup=None, progress=None):
    """Cycle every configured method over the same truth and observations.

    Records per cycle: the forecast entering the observation update (lead
    equal to the window) and the analysis, for every variable block.
    """
    setup = build_truth_and_obs(cfg) if setup is None else setup
    models = build_models(cfg, setup.truth_model)
    filters = make_filters(cfg, setup, models)
    threshold = DIVERGENCE_FACTOR * setup.climate_spread
    records = []
    for run in filters:
        streak = 0
        for cycle in range(1, cfg.cycles + 1):
            try:
                run.forecast(cfg.window, cycle)
                recs = run.analyse(setup.observations[cycle], cycle, setup.truth[cycle])
            except DivergenceError:
                raise
            except MMKFError as exc:
                raise type(exc)(f"{run.label}, cycle {cycle}: {exc}") from exc
            for r in recs:
                if r.lead is None:
                    r.lead = cfg.window
            records.extend(recs)
            a = next(r for r in recs if r.phase == "analysis" and r.block == "all")
            streak = _divergence_check(run, cycle, a.rmse, threshold, streak)
        if progress:
            progress(run.label)
    return ExperimentResult(cfg, records, len(models), setup.climate_spread)


# ---------------------------------------------------------------- forecasts


class _LeadInflation:
    def __init__(self, gamma, leads):
        self.states = {k: InflationState(gamma=gamma) for k in leads}

    def apply(self, k, E, obs, rho):
        """Inflate with the current lead-``k`` factor, then update it."""
        state = self.states[k]
        lam = state.value
        d = obs.y - obs.H @ E.mean(axis=1)
        lam_hat = estimate_inflation_factor(d, obs.R, obs.H @ forecast_covariance(E, rho) @ obs.H.T)
        self.states[k] = smooth_inflation(state, lam_hat)
        return apply_inflation(E, lam), lam


def _restricted(model, obs):
    rows, Hm = model_observation(model, obs.H)
    return obs.y[rows], obs.R[np.ix_(rows, rows)], Hm


def _update_q(cfg, state, model, E, obs):
    if not cfg.estimate_q:
        return state
    y, R, Hm = _restricted(model, obs)
    if y.size == 0:
        return state
    return update_model_error(state, E, y, R, Hm)


def _stack_reference(models, ensembles):
    return np.concatenate([apply_map(inverse_map(m), E) for m, E in zip(models, ensembles)], axis=1)


def _initial_analyses(cfg, setup, n_members, n_cycles):
    """Continuously cycling perfect-model ESRF with observation error ``init_r * I``.

    Yields the analysis ensemble at every analysis time index ``t`` in
    ``[FORECAST_WARMUP, FORECAST_WARMUP + n_cycles)``.
    """
    model = setup.truth_model
    rng = stream(cfg.seed, "init_obs")
    n = model.dim
    H = np.eye(n)
    if cfg.obs.r_climate_fraction is None:
        R = cfg.forecast.init_r * np.eye(n)
    else:
        # relative to climatology, like the main observations
        per_var = np.full(n, setup.climate_var.get("x", setup.climate_var["all"]))
        if "y" in model.blocks:
            per_var[model.blocks["y"]] = setup.climate_var["y"]
        R = np.diag(cfg.forecast.init_r * per_var)
    sd = np.sqrt(np.diag(R))
    E = setup.truth[0][:, None] + math.sqrt(INIT_SPREAD) * stream(cfg.seed, "init_da").standard_normal((n, n_members))
    infl = InflationState(gamma=cfg.gamma)
    for t in range(1, FORECAST_WARMUP + n_cycles):
        E = integrate(model, E, cfg.window)
        obs = Observation(setup.truth[t] + sd * rng.standard_normal(n), R, H)
        d = obs.y - E.mean(axis=1)
        P = forecast_covariance(E, model.localization)
        infl = smooth_inflation(infl, estimate_inflation_factor(d, R, P))
        E = esrf_analysis(apply_inflation(E, infl.value), obs, model.localization)
        if t >= FORECAST_WARMUP:
            yield t, E


class _ForecastGroup:
    """Per-model, per-lead model-error states for one family of forecasts."""

    def __init__(self, cfg, models, leads, recursive=False):
        Q0 = [cfg.init_q * np.eye(m.dim) for m in models]
        self.states = {
            k: [ModelErrorState(Q0[i] if recursive else init_Q_lead(Q0[i], k), delta=cfg.delta,
                                basis=cfg.q_basis_for(m.dim))
                for i, m in enumerate(models)]
            for k in leads
        }


def run_forecast_experiment(cfg, setup=None, progress=None):
    """Forecast cycles from cycling analyses, to every lead ``k * window``.

    Single models and the MME integrate straight to each lead and add the
    lead's model-error draw. ``method1``/``method2`` combine those same
    perturbed ensembles once (one-shot). ``recursive1``/``recursive2``
    recombine after every window and seed the next leg with the result.
    """
    leads = sorted(set(cfg.forecast.leads))
    K = leads[-1]
    n_times = FORECAST_WARMUP + cfg.cycles + K
    setup = build_truth_and_obs(cfg, n_times=n_times) if setup is None else setup
    models = build_models(cfg, setup.truth_model)
    M = len(models)
    offsets = _offsets(models)
    own = cfg.single_members == "own"
    N_single = [_single_members(cfg, m) for m in models]
    n_init = max([sum(m.members for m in models)] + ([] if own else N_single))
    n_init = max(n_init, cfg.forecast.init_members)
    leg_set = list(range(1, K + 1))
    singles = _ForecastGroup(cfg, models, leg_set) if "single" in cfg.methods else None
    multi = _ForecastGroup(cfg, models, leg_set)
    rec_methods = [m for m in cfg.methods if m.startswith("recursive")]
    rec = {m: _ForecastGroup(cfg, models, leg_set, recursive=True) for m in rec_methods}
    infl = {m: _LeadInflation(cfg.gamma, leads) for m in cfg.methods if m in ("mme", "method1", "method2")}
    infl.update({m: _LeadInflation(cfg.gamma, leg_set) for m in rec_methods})
    ref = models[0]
    rho = ref.localization
    blocks = ref.blocks
    records = []
    threshold = DIVERGENCE_FACTOR * setup.climate_spread
    streaks = {}

    def emit(cycle, label, k, E, truth, lam, q, truth_map=None):
        x = truth if truth_map is None else apply_map(truth_map, truth[:, None])[:, 0]
        blk = blocks if truth_map is None else label_blocks[label]
        for block, idx in blk.items():
            records.append(CycleRecord(cycle, "forecast", label, k * cfg.window, block,
                                       rmse(E[idx].mean(axis=1), x[idx]), crps_mean(E[idx], x[idx]),
                                       lam, q))
        r = rmse(E.mean(axis=1), x)
        if k == leads[0]:
            streaks[label] = _divergence_check(_Label(label), cycle, r, threshold, streaks.get(label, 0))

    label_blocks = {f"single:{m.name}": m.blocks for m in models}

    for cycle, (t0, Ea) in enumerate(_initial_analyses(cfg, setup, n_init, cfg.cycles), start=1):
        truth_at = lambda k: setup.truth[t0 + k]
        obs_at = lambda k: setup.observations[t0 + k]
        inits = [apply_map(m.G, Ea[:, o:o + m.members]) for m, o in zip(models, offsets)]

        if singles is not None:
            for i, m in enumerate(models):
                cols = slice(offsets[i], offsets[i] + m.members) if own else slice(0, N_single[i])
                E = apply_map(m.G, Ea[:, cols])
                label = f"single:{m.name}"
                for k in leg_set:
                    E = advance(m, E, cfg.window, cfg.seed, (i, cycle, k))
                    if k in leads:
                        rng = stream(cfg.seed, "filter", method_key(label), cycle, k)
                        Ep = sample_model_error(E, singles.states[k][i], rng)
                        q = [math.nan] * M
                        q[i] = float(np.trace(singles.states[k][i].Q))
                        emit(cycle, label, k, Ep, truth_at(k), 1.0, tuple(q), truth_map=m.G)
                    singles.states[k][i] = _update_q(cfg, singles.states[k][i], m, E, obs_at(k))

        one_shot = [m for m in ("mme", "method1", "method2") if m in cfg.methods]
        if one_shot:
            ensembles = [E.copy() for E in inits]
            for k in leg_set:
                ensembles = [advance(m, E, cfg.window, cfg.seed, (i, cycle, k))
                             for i, (m, E) in enumerate(zip(models, ensembles))]
                if k in leads:
                    rng = stream(cfg.seed, "filter", method_key("multi"), cycle, k)
                    rngs = rng.spawn(M + 1)
                    perturbed = [sample_model_error(E, s, r)
                                 for E, s, r in zip(ensembles, multi.states[k], rngs[:M])]
                    q = tuple(float(np.trace(s.Q)) for s in multi.states[k])
                    obs = obs_at(k)
                    for label in one_shot:
                        if label == "mme":
                            E = _stack_reference(models, perturbed)
                        elif label == "method1":
                            E = combine_method1(perturbed, models, list(range(M)))[0]
                        else:
                            E = combine_method2(perturbed, models, 0)[0]
                        lam = infl[label].states[k].value
                        E, _ = infl[label].apply(k, E, obs, rho)
                        emit(cycle, label, k, E, truth_at(k), lam, q)
                for i, m in enumerate(models):
                    multi.states[k][i] = _update_q(cfg, multi.states[k][i], m, ensembles[i], obs_at(k))

        for label in rec_methods:
            method = int(label[-1])
            group = rec[label]
            ensembles = [E.copy() for E in inits]
            for k in leg_set:
                forecasts = [advance(m, E, cfg.window, cfg.seed, (i, cycle, k))
                             for i, (m, E) in enumerate(zip(models, ensembles))]
                rng = stream(cfg.seed, "filter", method_key(label), cycle, k)
                rngs = rng.spawn(M + 1)
                perturbed = [sample_model_error(E, s, r)
                             for E, s, r in zip(forecasts, group.states[k], rngs[:M])]
                q = tuple(float(np.trace(s.Q)) for s in group.states[k])
                for i, m in enumerate(models):
                    group.states[k][i] = _update_q(cfg, group.states[k][i], m, forecasts[i], obs_at(k))
                if method == 1:
                    E = combine_method1(perturbed, models, list(range(M)))[0]
                else:
                    E, slices = combine_method2(perturbed, models, 0)
                # the inflated combination is this leg's analysis and seeds the next leg
                lam = infl[label].states[k].value
                E, _ = infl[label].apply(k, E, obs_at(k), rho)
                if method == 1:
                    ensembles = distribute_method1(E, models, rngs[M])
                else:
                    ensembles = split_superensemble(E, models, slices)
                if k in leads:
                    emit(cycle, label, k, E, truth_at(k), lam, q)
        if progress and cycle % 500 == 0:
            progress(f"cycle {cycle}")
    return ExperimentResult(cfg, records, M, setup.climate_spread)


@dataclass
class _Label:
    label: str


def run_experiment(cfg, progress=None):
    if cfg.kind == "forecast":
        return run_forecast_experiment(cfg, progress=progress)
    return run_twin_experiment(cfg, progress=progress)
