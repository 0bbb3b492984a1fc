"""Event-probability estimators built on a Kriging model.

Two surrogate indicators are supported: the plug-in indicator
``I{mu(x) >= gamma}`` and the expected indicator ``P(y(x) >= gamma)``
under the Kriging predictive distribution. Integrals over the input
distribution are sample means on a caller-supplied stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtr

from .streams import RandomStream, as_stream, run_blocks

METHODS = ("crude", "plugin", "expected", "is-crude", "is-plugin", "is-expected")


@dataclass(frozen=True)
class EventSpec:
    """Event threshold on the response; the convention is ``I{y >= gamma}``."""

    gamma: float = 0.5

    def indicator(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) >= self.gamma).astype(float)


@dataclass
class ProbEstimate:
    value: float
    std_error: float
    n_samples: int
    method: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method tag {self.method!r}")

    @classmethod
    def from_summands(cls, summands: np.ndarray, method: str, **diagnostics) -> "ProbEstimate":
        summands = np.asarray(summands, dtype=float)
        n = summands.size
        value = float(np.mean(summands))
        sd = float(np.std(summands, ddof=1)) if n > 1 else 0.0
        diagnostics.setdefault("summand_variance", sd * sd)
        return cls(value, sd / math.sqrt(n), n, method, diagnostics)

    def within(self, truth: float, k: float = 3.0) -> bool:
        return abs(self.value - truth) <= k * self.std_error


def event_prob_pointwise(mean, variance, gamma: float):
    """``P(y >= gamma)`` for ``y ~ N(mean, variance)``; hard indicator where variance is 0.

    Works elementwise on arrays.
    """
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    sd = np.sqrt(np.maximum(variance, 0.0))
    hard = (mean >= gamma).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        soft = ndtr((mean - gamma) / np.where(sd > 0, sd, 1.0))
    out = np.where(sd > 0, soft, hard)
    return float(out) if out.ndim == 0 else out


def plugin_indicator(model, spec: EventSpec) -> Callable[[np.ndarray], np.ndarray]:
    def fn(x):
        return spec.indicator(model.predict_mean(x))

    return fn


def expected_indicator(model, spec: EventSpec) -> Callable[[np.ndarray], np.ndarray]:
    def fn(x):
        mean, var = model.predict(x)
        return event_prob_pointwise(mean, var, spec.gamma)

    return fn


def surrogate_indicator(model, spec: EventSpec, mode: str) -> Callable[[np.ndarray], np.ndarray]:
    if mode == "plugin":
        return plugin_indicator(model, spec)
    if mode == "expected":
        return expected_indicator(model, spec)
    raise ValueError(f"unknown surrogate mode {mode!r}")


def _mc(integrand, F, n: int, stream, workers: int, method: str) -> ProbEstimate:
    stream = as_stream(stream)

    def block(rng: np.random.Generator, size: int) -> np.ndarray:
        return np.asarray(integrand(F.sample(rng, size)), dtype=float)

    summands = np.concatenate(run_blocks(block, stream, n, workers))
    return ProbEstimate.from_summands(summands, method)


def crude_mc(indicator, F, n: int, stream: RandomStream | int, workers: int = 1) -> ProbEstimate:
    """Plain Monte Carlo of a black-box 0/1 indicator under ``F``."""
    return _mc(indicator, F, n, stream, workers, "crude")


def estimate_prob_plugin(model, spec: EventSpec, F, n: int, stream, workers: int = 1) -> ProbEstimate:
    return _mc(plugin_indicator(model, spec), F, n, stream, workers, "plugin")


def estimate_prob_expected(model, spec: EventSpec, F, n: int, stream, workers: int = 1) -> ProbEstimate:
    return _mc(expected_indicator(model, spec), F, n, stream, workers, "expected")
