"""Cross-entropy construction of an importance-sampling distribution.

Each iteration draws from the current member ``f_theta_s`` of an independent
product family, weights the draws by ``I(x) f(x) / f_theta_s(x)`` and moves
every coordinate to its weighted maximum-likelihood parameter. There is no
elite-quantile step: the indicator itself selects the samples.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .distributions import (
    Exponential,
    GaussianUV,
    Pareto,
    components,
    format_distribution,
    log_likelihood_ratio,
    with_components,
)
from .streams import as_stream, run_blocks

ZERO_HIT_RETRY_FACTOR = 4


class NoEliteSamples(ValueError):
    pass


def ce_weights(indicator_values, f, f_theta_s, samples) -> np.ndarray:
    """``I(x_i) * f(x_i) / f_theta_s(x_i)``; indicator values may be soft, in ``[0, 1]``."""
    ind = np.asarray(indicator_values, dtype=float).reshape(-1)
    logw = log_likelihood_ratio(f, f_theta_s, samples)
    if ind.shape != logw.shape:
        raise ValueError(f"{ind.size} indicator values for {logw.size} samples")
    w = np.zeros_like(ind)
    hit = ind > 0
    w[hit] = ind[hit] * np.exp(logw[hit])
    return w


def _check_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if not np.sum(w) > 0:
        raise NoEliteSamples("no elite samples; increase n or start closer")
    return w


def ce_update_exponential(samples, weights) -> float:
    w = _check_weights(weights)
    x = np.asarray(samples, dtype=float)
    wx = float(np.sum(w * x))
    if not wx > 0:
        raise ValueError("weighted sample sum must be positive")
    return float(np.sum(w)) / wx


def ce_update_pareto(samples, weights, scale: float) -> float:
    w = _check_weights(weights)
    x = np.asarray(samples, dtype=float)
    if np.any(x[w > 0] < scale):
        raise ValueError("weighted samples below the Pareto scale")
    wl = float(np.sum(w * np.log(np.where(w > 0, x, scale) / scale)))
    if not wl > 0:
        raise ValueError("weighted log-excess over the scale must be positive")
    return float(np.sum(w)) / wl


def ce_update_gaussian(samples, weights, update_sd: bool = False) -> tuple[float, float | None]:
    """Weighted mean, and weighted sd when ``update_sd``.

    The sd is held fixed by default: a CE-shrunk sd gives a lighter tail
    than the target and an infinite-variance importance weight.
    """
    w = _check_weights(weights)
    x = np.asarray(samples, dtype=float)
    mu = float(np.sum(w * x) / np.sum(w))
    if not update_sd:
        return mu, None
    sd = float(np.sqrt(np.sum(w * (x - mu) ** 2) / np.sum(w)))
    return mu, sd


def _tilted(comp) -> np.ndarray:
    if isinstance(comp, Exponential):
        return np.array([comp.rate])
    if isinstance(comp, Pareto):
        return np.array([comp.shape])
    if isinstance(comp, GaussianUV):
        return np.array([comp.mu, comp.sd])
    raise TypeError(f"no cross-entropy update for {type(comp).__name__}")


def parameter_vector(dist) -> np.ndarray:
    return np.concatenate([_tilted(c) for c in components(dist)])


def ce_objective(weights, samples, dist) -> float:
    """Sampled CE objective ``mean(w_i * log f_theta(x_i))``."""
    w = np.asarray(weights, dtype=float)
    lf = dist.log_density(samples)
    hit = w > 0
    if np.any(np.isneginf(lf[hit])):
        return -np.inf
    return float(np.sum(w[hit] * lf[hit]) / w.size)


def ce_step(dist, samples, weights, smoothing: float = 1.0, update_gaussian_sd: bool = False):
    """Closed-form coordinate-wise update, blended as ``s*new + (1-s)*old``."""
    x = np.asarray(samples, dtype=float)
    comps = components(dist)
    cols = x.reshape(x.shape[0], -1) if len(comps) > 1 else x.reshape(-1, 1)
    new = []
    for j, comp in enumerate(comps):
        xj = cols[:, j]
        if isinstance(comp, Exponential):
            rate = ce_update_exponential(xj, weights)
            new.append(Exponential(smoothing * rate + (1 - smoothing) * comp.rate))
        elif isinstance(comp, Pareto):
            shape = ce_update_pareto(xj, weights, comp.scale)
            new.append(Pareto(comp.scale, smoothing * shape + (1 - smoothing) * comp.shape))
        elif isinstance(comp, GaussianUV):
            mu, sd = ce_update_gaussian(xj, weights, update_gaussian_sd)
            sd = comp.sd if sd is None else smoothing * sd + (1 - smoothing) * comp.sd
            new.append(GaussianUV(smoothing * mu + (1 - smoothing) * comp.mu, sd))
        else:
            raise TypeError(f"no cross-entropy update for {type(comp).__name__}")
    return with_components(dist, new)


@dataclass
class CEStep:
    iteration: int
    theta: object
    objective: float
    objective_before: float
    hits: int
    n_samples: int


@dataclass
class CEState:
    theta_s: object
    iteration: int
    n_per_iter: int
    history: list = field(default_factory=list)
    converged: bool = False
    source: str = "true"
    indicator_calls: int = 0

    def write_history(self, path) -> None:
        params = [c for c in _param_names(self.theta_s)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", *params, "objective", "hits", "n_samples"])
            for h in self.history:
                w.writerow(
                    [h.iteration, *(repr(float(v)) for v in parameter_vector(h.theta)),
                     repr(float(h.objective)), h.hits, h.n_samples]
                )


def _param_names(dist) -> list[str]:
    names = []
    for j, c in enumerate(components(dist), start=1):
        if isinstance(c, Exponential):
            names.append(f"x{j}_rate")
        elif isinstance(c, Pareto):
            names.append(f"x{j}_shape")
        elif isinstance(c, GaussianUV):
            names += [f"x{j}_mean", f"x{j}_sd"]
    return names


def _draw(dist, indicator, n, stream, workers):
    def block(rng, size):
        x = dist.sample(rng, size)
        return x, np.asarray(indicator(x), dtype=float).reshape(-1)

    parts = run_blocks(block, stream, n, workers)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def ce_iterate(
    indicator,
    f,
    theta_0,
    n_per_iter: int,
    max_iter: int,
    tol: float,
    stream,
    smoothing: float = 0.7,
    source: str = "true",
    workers: int = 1,
    update_gaussian_sd: bool = False,
) -> CEState:
    """Iterate CE updates from ``theta_0`` until the relative parameter change drops below ``tol``.

    ``indicator`` maps an array of points to values in ``[0, 1]`` (a simulator
    or a surrogate). An iteration without hits is retried once with
    ``4 * n_per_iter`` samples before :class:`NoEliteSamples` is raised.
    """
    if n_per_iter < 1:
        raise ValueError("n_per_iter must be >= 1")
    if not 0 < smoothing <= 1:
        raise ValueError("smoothing must be in (0, 1]")
    stream = as_stream(stream)
    state = CEState(theta_s=theta_0, iteration=0, n_per_iter=n_per_iter, source=source)
    for it in range(1, max_iter + 1):
        current = state.theta_s
        sub = stream.split(f"iter-{it}")
        x, ind = _draw(current, indicator, n_per_iter, sub, workers)
        state.indicator_calls += len(ind)
        w = ce_weights(ind, f, current, x)
        if not np.any(w > 0):
            x, ind = _draw(current, indicator, ZERO_HIT_RETRY_FACTOR * n_per_iter, sub.split("retry"), workers)
            state.indicator_calls += len(ind)
            w = ce_weights(ind, f, current, x)
            if not np.any(w > 0):
                raise NoEliteSamples(
                    f"no elite samples in iteration {it} after retry with "
                    f"{ZERO_HIT_RETRY_FACTOR * n_per_iter} draws; increase n or start closer"
                )
        new = ce_step(current, x, w, smoothing, update_gaussian_sd)
        state.history.append(
            CEStep(it, new, ce_objective(w, x, new), ce_objective(w, x, current), int(np.count_nonzero(w)), len(w))
        )
        state.theta_s = new
        state.iteration = it
        old_p, new_p = parameter_vector(current), parameter_vector(new)
        rel = np.max(np.abs(new_p - old_p) / np.maximum(np.maximum(np.abs(old_p), np.abs(new_p)), 1e-12))
        if rel < tol:
            state.converged = True
            break
    return state


def describe(state: CEState) -> str:
    return format_distribution(state.theta_s)
