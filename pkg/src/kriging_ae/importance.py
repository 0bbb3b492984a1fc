"""Importance sampling with a true, plug-in or expected-indicator integrand."""

from __future__ import annotations

import csv

import numpy as np

from .distributions import log_likelihood_ratio
from .estimation import EventSpec, ProbEstimate, surrogate_indicator
from .streams import as_stream, run_blocks

# a run whose largest log likelihood ratio exceeds this is flagged, not rejected
UNSTABLE_LOG_RATIO = 30.0


def _is(integrand, f, f_star, n: int, stream, workers: int, method: str, trace_path=None) -> ProbEstimate:
    stream = as_stream(stream)

    def block(rng: np.random.Generator, size: int):
        x = f_star.sample(rng, size)
        logw = log_likelihood_ratio(f, f_star, x)
        ind = np.asarray(integrand(x), dtype=float)
        w = np.exp(logw)
        return ind * w, logw, x, ind

    parts = run_blocks(block, stream, n, workers)
    summands = np.concatenate([p[0] for p in parts])
    logw = np.concatenate([p[1] for p in parts])
    max_log_ratio = float(np.max(logw))
    if trace_path is not None:
        _write_trace(trace_path, parts)
    return ProbEstimate.from_summands(
        summands,
        method,
        max_log_ratio=max_log_ratio,
        max_ratio=float(np.exp(max_log_ratio)),
        unstable=max_log_ratio > UNSTABLE_LOG_RATIO,
        hits=int(np.count_nonzero(summands)),
    )


def _write_trace(path, parts) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        d = parts[0][2].shape[1] if parts[0][2].ndim == 2 else 1
        w.writerow([f"x{i}" for i in range(1, d + 1)] + ["indicator", "log_ratio"])
        for _, logw, x, ind in parts:
            x = x.reshape(len(ind), d)
            for row, i_val, lw in zip(x, ind, logw):
                w.writerow([repr(float(v)) for v in row] + [repr(float(i_val)), repr(float(lw))])


def is_estimate(indicator, f, f_star, n: int, stream, workers: int = 1, trace_path=None) -> ProbEstimate:
    """Mean of ``indicator(x) * f(x)/f_star(x)`` over ``x ~ f_star``."""
    return _is(indicator, f, f_star, n, stream, workers, "is-crude", trace_path)


def is_estimate_plugin(model, spec: EventSpec, f, f_star, n: int, stream, workers: int = 1, trace_path=None):
    return _is(surrogate_indicator(model, spec, "plugin"), f, f_star, n, stream, workers, "is-plugin", trace_path)


def is_estimate_expected(model, spec: EventSpec, f, f_star, n: int, stream, workers: int = 1, trace_path=None):
    return _is(surrogate_indicator(model, spec, "expected"), f, f_star, n, stream, workers, "is-expected", trace_path)
