"""Design-point selection for Kriging construction.

Point-optimal criteria score a candidate by how uncertain the surrogate's
verdict is there. Objective-optimal criteria score it by the expected squared
change in the probability estimate if the candidate were observed, with the
outer expectation over the unknown response done by Gauss-Hermite quadrature
and the inner integrals over a fixed pool of input draws.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import ndtr

from .estimation import EventSpec, event_prob_pointwise
from .kriging import KrigingModel, _as_points
from .streams import as_stream

log = logging.getLogger(__name__)

CRITERIA = ("pnt1", "pnt2", "obj1", "obj2")
DEFAULT_QUAD_NODES = 15
DEFAULT_POOL_SIZE = 1000


@dataclass
class SelectionResult:
    chosen_index: int
    criterion_values: np.ndarray
    criterion: str


def argmax_lowest(values, exclude=None) -> int:
    """Index of the maximum, ties to the lowest index; ``exclude`` masks candidates out."""
    v = np.asarray(values, dtype=float).copy()
    if exclude is not None:
        v[np.asarray(exclude, dtype=bool)] = -np.inf
    if np.all(np.isneginf(v)):
        raise ValueError("no selectable candidate")
    return int(np.argmax(v))


def flip_probability(model: KrigingModel, x, spec: EventSpec):
    """``Phi(-|gamma - mu| / sigma)``: chance that observing ``x`` flips the plug-in verdict."""
    mean, var = model.predict(x)
    sd = np.sqrt(var)
    gap = np.abs(spec.gamma - mean)
    with np.errstate(divide="ignore", invalid="ignore"):
        soft = ndtr(-gap / np.where(sd > 0, sd, 1.0))
    return np.where(sd > 0, soft, np.where(gap == 0, 0.5, 0.0))


def bernoulli_variance(model: KrigingModel, x, spec: EventSpec):
    mean, var = model.predict(x)
    p = event_prob_pointwise(mean, var, spec.gamma)
    return p - p * p


def select_pnt1(model, candidates, spec, exclude=None) -> SelectionResult:
    vals = np.atleast_1d(flip_probability(model, candidates, spec))
    return SelectionResult(argmax_lowest(vals, exclude), vals, "pnt1")


def select_pnt2(model, candidates, spec, exclude=None) -> SelectionResult:
    vals = np.atleast_1d(bernoulli_variance(model, candidates, spec))
    return SelectionResult(argmax_lowest(vals, exclude), vals, "pnt2")


def _pool_probability(mean, var, gamma, variant):
    if variant == "obj1":
        return np.mean(mean >= gamma)
    return np.mean(event_prob_pointwise(mean, var, gamma))


def expected_objective_change(
    model: KrigingModel,
    x_candidate,
    spec: EventSpec,
    F_pool,
    variant: str = "obj1",
    quad_nodes: int = DEFAULT_QUAD_NODES,
) -> float:
    """``E_n[(P_n - P_{n+1})^2]`` for observing the response at ``x_candidate``.

    ``P`` is the pool average of the plug-in indicator (``obj1``) or of the
    expected indicator (``obj2``). For each quadrature node the model is
    extended by the candidate with that node's response. The extended factor
    does not depend on the response, so it is built once and the node means
    follow from the linear dependence of the predictor on the new response.
    """
    if variant not in ("obj1", "obj2"):
        raise ValueError(f"unknown objective variant {variant!r}")
    if quad_nodes < 3:
        raise ValueError("quad_nodes must be >= 3")
    pool = _as_points(F_pool, model.d)
    if pool.shape[0] == 0:
        raise ValueError("F_pool is empty")
    x = np.reshape(np.asarray(x_candidate, dtype=float), (1, model.d))
    if model.params.nugget == 0 and np.any(np.all(model.design.X == x, axis=1)):
        return 0.0
    mu_x, var_x = model.predict(x)
    mu_x, var_x = float(mu_x[0]), float(var_x[0])
    if var_x <= 0:
        return 0.0
    gamma = spec.gamma
    mean_n, var_n = model.predict(pool)
    p_n = _pool_probability(mean_n, var_n, gamma, variant)

    ext = model.update(x, mu_x)
    mean_ext, var_ext = ext.predict(pool)
    unit = np.zeros(ext.n)
    unit[-1] = 1.0
    # d(mean at pool)/d(new response) = k_pool^T R^{-1} e_last
    slope = ext.cross_correlation(pool) @ cho_solve((ext.factor, True), unit, check_finite=False)

    nodes, weights = np.polynomial.hermite.hermgauss(quad_nodes)
    weights = weights / math.sqrt(math.pi)
    shifts = math.sqrt(2.0 * var_x) * nodes
    total = 0.0
    for w, dy in zip(weights, shifts):
        p_next = _pool_probability(mean_ext + dy * slope, var_ext, gamma, variant)
        total += w * (p_n - p_next) ** 2
    return float(total)


def select_obj(
    model, candidates, spec, F_pool, variant: str = "obj1",
    quad_nodes: int = DEFAULT_QUAD_NODES, exclude=None,
) -> SelectionResult:
    cands = _as_points(candidates, model.d)
    vals = np.array(
        [expected_objective_change(model, c, spec, F_pool, variant, quad_nodes) for c in cands]
    )
    return SelectionResult(argmax_lowest(vals, exclude), vals, variant)


def select(criterion: str, model, candidates, spec, F_pool=None, quad_nodes=DEFAULT_QUAD_NODES, exclude=None):
    if criterion == "pnt1":
        return select_pnt1(model, candidates, spec, exclude)
    if criterion == "pnt2":
        return select_pnt2(model, candidates, spec, exclude)
    if criterion in ("obj1", "obj2"):
        if F_pool is None:
            raise ValueError(f"{criterion} needs a pool of input draws")
        return select_obj(model, candidates, spec, F_pool, criterion, quad_nodes, exclude)
    raise ValueError(f"unknown criterion {criterion!r}; expected one of {CRITERIA}")


# -- candidate generation


def grid_candidates(lower, upper, points_per_dim: int) -> Callable:
    """Fixed tensor grid over a box, the same every iteration."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    axes = [np.linspace(lo, hi, points_per_dim) for lo, hi in zip(lower, upper)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))

    def gen(iteration: int, rng: np.random.Generator) -> np.ndarray:
        return grid

    return gen


def distribution_candidates(F, n: int) -> Callable:
    """Fresh draws from ``F`` each iteration."""

    def gen(iteration: int, rng: np.random.Generator) -> np.ndarray:
        x = F.sample(rng, n)
        return x.reshape(n, -1)

    return gen


# -- the sequential loop


@dataclass
class AuditEntry:
    iteration: int
    criterion: str
    candidates: np.ndarray
    values: np.ndarray
    chosen_index: int
    point: np.ndarray
    response: float
    design_size: int


@dataclass
class AdaptiveResult:
    model: KrigingModel
    audit: list = field(default_factory=list)
    failures: int = 0

    @property
    def chosen_points(self) -> np.ndarray:
        return np.array([a.point for a in self.audit])

    def write_audit(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            d = self.model.d
            w.writerow(
                ["iteration", "criterion", "candidate", *[f"x{i}" for i in range(1, d + 1)],
                 "value", "chosen", "response", "design_size"]
            )
            for a in self.audit:
                for i, (c, v) in enumerate(zip(a.candidates, a.values)):
                    chosen = i == a.chosen_index
                    w.writerow(
                        [a.iteration, a.criterion, i, *(repr(float(t)) for t in c), repr(float(v)),
                         int(chosen), repr(float(a.response)) if chosen else "", a.design_size]
                    )


def adaptive_loop(
    model: KrigingModel,
    candidate_generator: Callable,
    criterion: str,
    budget: int,
    simulator: Callable,
    spec: EventSpec,
    stream,
    F=None,
    F_pool_size: int = DEFAULT_POOL_SIZE,
    quad_nodes: int = DEFAULT_QUAD_NODES,
    max_failures: int = 100,
) -> AdaptiveResult:
    """Select, simulate and add ``budget`` design points one at a time.

    Candidates that coincide with a design row (nugget 0) or whose simulation
    failed are never selected; a failed simulation does not use up budget.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}")
    stream = as_stream(stream)
    pool = None
    if criterion in ("obj1", "obj2"):
        if F is None:
            raise ValueError(f"{criterion} needs the input distribution F")
        pool = F.sample(stream.split("pool").generator(), F_pool_size)
    result = AdaptiveResult(model)
    failed: set = set()
    it = 0
    while it < budget:
        cands = _as_points(candidate_generator(it, stream.split(f"candidates-{it}").generator()), model.d)
        exclude = np.array([tuple(c) in failed for c in cands])
        if model.params.nugget == 0:
            exclude |= (cands[:, None, :] == model.design.X[None, :, :]).all(axis=2).any(axis=1)
        while True:
            if exclude.all():
                log.warning("no selectable candidates left at iteration %d", it)
                return result
            sel = select(criterion, model, cands, spec, pool, quad_nodes, exclude)
            x = cands[sel.chosen_index]
            try:
                y = float(np.asarray(simulator(x.reshape(1, -1))).reshape(-1)[0])
                if not np.isfinite(y):
                    raise ValueError(f"non-finite response {y}")
                break
            except Exception as err:  # simulator failures are logged and skipped
                log.warning("simulation failed at %s: %s", x.tolist(), err)
                result.failures += 1
                failed.add(tuple(x))
                exclude[sel.chosen_index] = True
                if result.failures >= max_failures:
                    raise RuntimeError(f"{result.failures} simulator failures; giving up") from err
        model = model.update(x, y)
        it += 1
        result.audit.append(
            AuditEntry(it, criterion, cands, sel.criterion_values, sel.chosen_index, x.copy(), y, model.n)
        )
        result.model = model
    return result
