"""Random linear-Gaussian fusion instances and cross-checks between solvers.

Three independent routes to the same multi-model estimate are compared:
the closed-form precision-weighted fusion, the iterative exact Kalman
chain, and the best linear unbiased estimator built from explicit weights.
"""
import itertools

import numpy as np

from .filter import Observation
from .multimodel import GaussianSummary, blue_weights, combine_iterative, direct_fusion, kalman_step


def random_spd(rng, n, floor=0.2):
    A = rng.standard_normal((n, n))
    return A @ A.T / n + floor * np.eye(n)


def random_map(rng, rows, cols, max_cond=50.0):
    """Random full-column-rank matrix with bounded condition number."""
    while True:
        G = rng.standard_normal((rows, cols))
        if np.linalg.cond(G) < max_cond:
            return G


def random_instance(rng, n_max=8, M_max=4, square=False, with_obs=None):
    """One fusion problem in a reference space of dimension ``n``.

    Model 0 is the reference (``G = I``). The others see the reference
    state through random full-column-rank maps, square when ``square``.
    """
    n = int(rng.integers(1, n_max + 1))
    M = int(rng.integers(1, M_max + 1))
    maps, summaries = [np.eye(n)], []
    for _ in range(1, M):
        rows = n if square else int(rng.integers(n, n_max + 1))
        maps.append(random_map(rng, rows, n))
    for G in maps:
        k = G.shape[0]
        summaries.append(GaussianSummary(rng.standard_normal(k), random_spd(rng, k)))
    if with_obs is None:
        with_obs = bool(rng.integers(0, 2))
    obs = None
    if with_obs:
        p = int(rng.integers(1, n + 1))
        obs = Observation(rng.standard_normal(p), random_spd(rng, p), rng.standard_normal((p, n)))
    return summaries, maps, obs


def random_blue_instance(rng, **kwargs):
    """Instance with at least two estimates, so the weights are not forced to I."""
    while True:
        summaries, maps, obs = random_instance(rng, **kwargs)
        if len(summaries) + (obs is not None) >= 2:
            return summaries, maps, obs


def rel_dev(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def iterative_solution(summaries, maps, obs=None, order=None):
    """Exact Kalman chain in ``order``; the result is expressed in the reference space.

    The first model in ``order`` is the background. When it is not the
    reference its map must be invertible, and the other maps are composed
    with its inverse.
    """
    M = len(summaries)
    order = list(range(M)) if order is None else list(order)
    first = order[0]
    Ginv = np.linalg.inv(maps[first]) if first != 0 else np.eye(maps[0].shape[1])
    items = [summaries[m] for m in order]
    chain_maps = [None] + [maps[m] @ Ginv for m in order[1:]]
    combined = combine_iterative(items, chain_maps)
    if obs is not None:
        combined = kalman_step(combined, obs.y, obs.R, obs.H @ Ginv)
    if first != 0:
        combined = GaussianSummary(Ginv @ combined.mean, Ginv @ combined.cov @ Ginv.T)
    return combined


def blue_with_obs(summaries, maps, obs):
    """BLUE with the observation taken as one more estimate of the state."""
    covs = [s.cov for s in summaries]
    means = [s.mean for s in summaries]
    G = list(maps)
    if obs is not None:
        covs.append(obs.R)
        means.append(obs.y)
        G.append(obs.H)
    A = blue_weights(covs, G)
    mean = sum(a @ x for a, x in zip(A, means))
    cov = sum(a @ P @ a.T for a, P in zip(A, covs))
    return GaussianSummary(mean, 0.5 * (cov + cov.T)), A


def weighted_error_trace(A, covs):
    return float(sum(np.trace(a @ P @ a.T) for a, P in zip(A, covs)))


def perturbed_weights(rng, A, G, scale=0.1):
    """Random weights that still satisfy ``sum_l A_l G_l = I``."""
    D = [scale * np.linalg.norm(a) / np.sqrt(a.size) * rng.standard_normal(a.shape) for a in A]
    V = sum(d @ g for d, g in zip(D, G))
    return [a + d - V @ a for a, d in zip(A, D)]


def run_oracle(instances=200, seed=0):
    """Max deviations of the three checks over random instances."""
    rng = np.random.default_rng(seed)
    eq_mean = eq_cov = order_dev = blue_dev = 0.0
    blue_margin = np.inf
    for _ in range(instances):
        summaries, maps, obs = random_instance(rng)
        direct = direct_fusion(summaries, maps, obs)
        it = iterative_solution(summaries, maps, obs)
        eq_mean = max(eq_mean, rel_dev(it.mean, direct.mean))
        eq_cov = max(eq_cov, rel_dev(it.cov, direct.cov))

        summaries, maps, obs = random_instance(rng, square=True)
        results = [iterative_solution(summaries, maps, obs, order)
                   for order in itertools.permutations(range(len(summaries)))]
        for a, b in itertools.combinations(results, 2):
            order_dev = max(order_dev, rel_dev(a.mean, b.mean), rel_dev(a.cov, b.cov))

        summaries, maps, obs = random_blue_instance(rng)
        direct = direct_fusion(summaries, maps, obs)
        blue, A = blue_with_obs(summaries, maps, obs)
        blue_dev = max(blue_dev, rel_dev(blue.mean, direct.mean), rel_dev(blue.cov, direct.cov))
        covs = [s.cov for s in summaries] + ([obs.R] if obs is not None else [])
        G = list(maps) + ([obs.H] if obs is not None else [])
        best = weighted_error_trace(A, covs)
        for _ in range(10):
            other = weighted_error_trace(perturbed_weights(rng, A, G), covs)
            blue_margin = min(blue_margin, other - best)
    report = {
        "instances": instances,
        "direct_vs_iterative_mean": eq_mean,
        "direct_vs_iterative_cov": eq_cov,
        "order_independence": order_dev,
        "direct_vs_blue": blue_dev,
        "blue_min_margin": float(blue_margin),
    }
    report["passed"] = bool(max(eq_mean, eq_cov, order_dev) < 1e-8 and blue_dev < 1e-10 and blue_margin > 0)
    return report
