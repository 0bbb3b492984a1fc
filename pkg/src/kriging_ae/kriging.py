"""Ordinary Kriging with a constant mean and an isotropic Gaussian correlation.

The correlation between two points is ``prod_i exp(-theta * (x_i - x'_i)**2)``
with a single ``theta`` shared across dimensions. Inputs may be mapped to the
unit box before the kernel is applied; the map is stored on the model and
applied to every query.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, lapack, solve_triangular

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
VARIANCE_CLAMP_TOL = 1e-10
AUTO_NUGGET = 1e-8
AUTO_NUGGET_RETRIES = 3


class FactorizationError(ValueError):
    """Cholesky factorization failed; ``pivot`` is the 1-based failing leading minor."""

    def __init__(self, message: str, pivot: int):
        super().__init__(message)
        self.pivot = pivot


@dataclass(frozen=True)
class KernelParams:
    beta: float
    tau2: float
    theta: float
    nugget: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.beta):
            raise ValueError("beta must be finite")
        if not self.tau2 > 0:
            raise ValueError("tau2 must be positive")
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if not self.nugget >= 0:
            raise ValueError("nugget must be non-negative")


@dataclass(frozen=True)
class DesignSet:
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        Y = np.asarray(self.Y, dtype=float).reshape(-1)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError("design needs at least one row")
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"design has {X.shape[0]} rows but {Y.shape[0]} responses")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("design contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def has_duplicates(self) -> bool:
        return np.unique(self.X, axis=0).shape[0] < self.n

    def append(self, x, y) -> "DesignSet":
        return DesignSet(np.vstack([self.X, np.reshape(x, (1, -1))]), np.append(self.Y, float(y)))


@dataclass(frozen=True)
class Prediction:
    mean: float
    variance: float


def load_design(path) -> DesignSet:
    """Read a design CSV with columns ``x1..xd, y``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty design file") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    d = len(header) - 1
    if d < 1 or header != [f"x{i}" for i in range(1, d + 1)] + ["y"]:
        raise ValueError(f"{path}: header must be x1..xd,y; got {','.join(header)}")
    data = np.array([[float(c) for c in r] for r in rows], dtype=float)
    if data.size == 0:
        raise ValueError(f"{path}: design has no rows")
    if data.shape[1] != d + 1:
        raise ValueError(f"{path}: ragged rows")
    return DesignSet(data[:, :d], data[:, d])


def save_design(design: DesignSet, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(1, design.d + 1)] + ["y"])
        for x, y in zip(design.X, design.Y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])


def _as_points(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, 1) if d == 1 else x.reshape(1, -1)
    if x.shape[1] != d:
        raise ValueError(f"expected points of dimension {d}, got shape {x.shape}")
    return x


def correlation(x, x_prime, theta: float) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != x_prime.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x_prime.shape}")
    if not theta > 0:
        raise ValueError("theta must be positive")
    diff = x - x_prime
    return float(np.exp(-theta * np.dot(diff, diff)))


def correlation_matrix(A: np.ndarray, B: np.ndarray, theta: float) -> np.ndarray:
    """Pairwise correlations between rows of ``A`` (m x d) and ``B`` (n x d)."""
    # per-dimension differences: exact zeros on coincident points, m x n memory
    sq = np.zeros((A.shape[0], B.shape[0]))
    for k in range(A.shape[1]):
        diff = A[:, k, None] - B[None, :, k]
        sq += diff * diff
    return np.exp(-theta * sq)


def _exact_corr(X: np.ndarray, theta: float) -> np.ndarray:
    return correlation_matrix(X, X, theta)


def _cholesky(A: np.ndarray) -> np.ndarray:
    L, info = lapack.dpotrf(A, lower=1, clean=1)
    if info > 0:
        raise FactorizationError(
            f"matrix is not positive definite (failing leading minor {info}); increase the nugget",
            int(info),
        )
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    return L


def fit_mean(Y) -> float:
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if Y.size == 0:
        raise ValueError("cannot fit the mean of an empty response vector")
    return float(np.mean(Y))


def log_likelihood(params: KernelParams, design: DesignSet) -> float:
    """Gaussian log likelihood of the responses under ``params``, via Cholesky."""
    n = design.n
    R = _exact_corr(design.X, params.theta) + params.nugget * np.eye(n)
    L = _cholesky(R)
    resid = design.Y - params.beta
    w = solve_triangular(L, resid, lower=True)
    logdet = n * math.log(params.tau2) + 2.0 * float(np.sum(np.log(np.diag(L))))
    return -0.5 * (n * LOG_2PI + logdet + float(w @ w) / params.tau2)


@dataclass
class MLEResult:
    params: KernelParams
    log_likelihood: float
    at_bound: bool
    n_evaluations: int
    grid_best: float = field(default=-math.inf)


def _golden(fn, a: float, b: float, tol: float = 1e-6, max_iter: int = 200):
    """Maximise a unimodal ``fn`` on ``[a, b]``; returns (x, f(x))."""
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max_iter):
        if abs(b - a) < tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = fn(d)
    return (c, fc) if fc >= fd else (d, fd)


def fit_mle(
    design: DesignSet,
    nugget: float = 0.0,
    bounds=None,
    theta_range: tuple[float, float] = (1e-2, 1e4),
    tau2_range: tuple[float, float] = (1e-8, 1e4),
    grid: int = 25,
    sweeps: int = 3,
) -> MLEResult:
    """Maximum-likelihood ``tau2`` and ``theta`` with ``beta`` fixed at the sample mean.

    A ``grid x grid`` log-spaced grid is followed by golden-section
    refinement of each coordinate in turn. Points where the correlation
    matrix cannot be factorized score ``-inf``. ``bounds`` maps inputs to
    the unit box first, as :func:`build` does.
    """
    if design.n < 2:
        raise ValueError("maximum likelihood needs at least two design points")
    lower, scale = _resolve_bounds(bounds, design.X)
    work = DesignSet((design.X - lower) / scale, design.Y)
    beta = fit_mean(design.Y)
    evals = 0

    def ll(log_theta: float, log_tau2: float) -> float:
        nonlocal evals
        evals += 1
        try:
            return log_likelihood(KernelParams(beta, 10.0**log_tau2, 10.0**log_theta, nugget), work)
        except FactorizationError:
            return -math.inf

    lt = np.linspace(math.log10(theta_range[0]), math.log10(theta_range[1]), grid)
    ls = np.linspace(math.log10(tau2_range[0]), math.log10(tau2_range[1]), grid)
    best = (-math.inf, lt[0], ls[0])
    for a in lt:
        for b in ls:
            val = ll(a, b)
            if val > best[0]:
                best = (val, a, b)
    grid_best = best[0]
    if not np.isfinite(grid_best):
        raise FactorizationError("no grid point admits a factorization; increase the nugget", 0)
    step_t, step_s = lt[1] - lt[0], ls[1] - ls[0]
    val, a, b = best
    for _ in range(sweeps):
        lo, hi = max(lt[0], a - step_t), min(lt[-1], a + step_t)
        a_new, v_new = _golden(lambda t: ll(t, b), lo, hi)
        if v_new > val:
            a, val = a_new, v_new
        lo, hi = max(ls[0], b - step_s), min(ls[-1], b + step_s)
        b_new, v_new = _golden(lambda s: ll(a, s), lo, hi)
        if v_new > val:
            b, val = b_new, v_new
    edge = 1e-3
    at_bound = bool(
        min(a - lt[0], lt[-1] - a) < edge or min(b - ls[0], ls[-1] - b) < edge
    )
    if at_bound:
        log.warning("MLE hit the search box: theta=%.3g tau2=%.3g", 10.0**a, 10.0**b)
    return MLEResult(KernelParams(beta, float(10.0**b), float(10.0**a), nugget), float(val), at_bound, evals, float(grid_best))


def design_bounds(X) -> tuple[np.ndarray, np.ndarray]:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return X.min(axis=0), X.max(axis=0)


def _resolve_bounds(bounds, X: np.ndarray):
    d = X.shape[1]
    if bounds is None:
        return np.zeros(d), np.ones(d)
    if isinstance(bounds, str):
        if bounds != "design":
            raise ValueError(f"unknown bounds mode {bounds!r}")
        bounds = design_bounds(X)
    lower = np.broadcast_to(np.asarray(bounds[0], dtype=float), (d,)).copy()
    upper = np.broadcast_to(np.asarray(bounds[1], dtype=float), (d,)).copy()
    scale = upper - lower
    if np.any(scale < 0):
        raise ValueError("upper bound below lower bound")
    scale[scale == 0] = 1.0
    return lower, scale


class KrigingModel:
    """A fitted Kriging predictor. Treat as immutable; :meth:`update` returns a new model."""

    def __init__(self, params, design, lower, scale, factor, alpha):
        self.params = params
        self.design = design
        self.lower = lower
        self.scale = scale
        self.factor = factor
        self.alpha = alpha
        self._Z = (design.X - lower) / scale
        self.n_variance_clamps = 0

    @property
    def d(self) -> int:
        return self.design.d

    @property
    def n(self) -> int:
        return self.design.n

    def _normalize(self, x) -> np.ndarray:
        return (_as_points(x, self.d) - self.lower) / self.scale

    def cross_correlation(self, x) -> np.ndarray:
        return correlation_matrix(self._normalize(x), self._Z, self.params.theta)

    def predict(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Predictive mean and variance at the rows of ``x``."""
        k = self.cross_correlation(x)
        mean = self.params.beta + k @ self.alpha
        v = solve_triangular(self.factor, k.T, lower=True, check_finite=False)
        var = self.params.tau2 * (1.0 - np.einsum("ij,ij->j", v, v))
        neg = var < 0
        if np.any(neg):
            if np.min(var) < -VARIANCE_CLAMP_TOL:
                raise FloatingPointError(
                    f"predicted variance {np.min(var):.3e} is negative beyond round-off; factorization is unreliable"
                )
            self.n_variance_clamps += int(np.count_nonzero(neg))
            var = np.where(neg, 0.0, var)
        return mean, var

    def predict_mean(self, x) -> np.ndarray:
        return self.params.beta + self.cross_correlation(x) @ self.alpha

    def predict_point(self, x) -> Prediction:
        mean, var = self.predict(np.reshape(np.asarray(x, dtype=float), (1, self.d)))
        return Prediction(float(mean[0]), float(var[0]))

    def update(self, x_new, y_new: float) -> "KrigingModel":
        """Condition on one more observation by extending the Cholesky factor."""
        x_new = np.reshape(np.asarray(x_new, dtype=float), (1, self.d))
        if self.params.nugget == 0 and np.any(np.all(self.design.X == x_new, axis=1)):
            raise ValueError(f"design point {x_new[0].tolist()} is already present (nugget is 0)")
        k = self.cross_correlation(x_new)[0]
        l = solve_triangular(self.factor, k, lower=True, check_finite=False)
        d2 = 1.0 + self.params.nugget - float(l @ l)
        design = self.design.append(x_new[0], y_new)
        if not d2 > 1e-12:
            # numerically singular extension: refactor with the build-time nugget policy
            log.info("rank-one extension is near singular (%.2e); rebuilding", d2)
            return build(design, self.params, bounds=(self.lower, self.lower + self.scale))
        n = self.n
        L = np.zeros((n + 1, n + 1))
        L[:n, :n] = self.factor
        L[n, :n] = l
        L[n, n] = math.sqrt(d2)
        alpha = cho_solve((L, True), design.Y - self.params.beta, check_finite=False)
        return KrigingModel(self.params, design, self.lower, self.scale, L, alpha)

    # -- persistence

    def to_dict(self) -> dict:
        p = self.params
        return {
            "params": {"beta": p.beta, "tau2": p.tau2, "theta": p.theta, "nugget": p.nugget},
            "lower": self.lower.tolist(),
            "upper": (self.lower + self.scale).tolist(),
            "X": self.design.X.tolist(),
            "Y": self.design.Y.tolist(),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, data: dict) -> "KrigingModel":
        params = KernelParams(**data["params"])
        design = DesignSet(np.asarray(data["X"], dtype=float), np.asarray(data["Y"], dtype=float))
        return build(design, params, bounds=(data["lower"], data["upper"]))

    @classmethod
    def load(cls, path) -> "KrigingModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build(design: DesignSet, params: KernelParams, bounds=None) -> KrigingModel:
    """Factorize the correlation matrix and cache the solved residual vector.

    ``bounds`` is ``None`` (use inputs as given), ``"design"`` (the design's
    bounding box) or a ``(lower, upper)`` pair. If the factorization fails,
    the nugget is raised (1e-8 at first, then x10) up to three times.
    """
    if params.nugget == 0 and design.has_duplicates():
        raise ValueError("design has duplicate rows; use a positive nugget")
    lower, scale = _resolve_bounds(bounds, design.X)
    Z = (design.X - lower) / scale
    R = _exact_corr(Z, params.theta)
    eye = np.eye(design.n)
    nugget = params.nugget
    for attempt in range(AUTO_NUGGET_RETRIES + 1):
        try:
            L = _cholesky(R + nugget * eye)
            break
        except FactorizationError as err:
            if attempt == AUTO_NUGGET_RETRIES:
                raise FactorizationError(
                    f"correlation matrix not positive definite even with nugget {nugget:.1e} "
                    f"(failing leading minor {err.pivot}); increase the nugget",
                    err.pivot,
                ) from None
            nugget = AUTO_NUGGET if nugget == 0 else nugget * 10.0
            log.info("factorization failed; retrying with nugget %.1e", nugget)
    if nugget != params.nugget:
        params = replace(params, nugget=nugget)
    alpha = cho_solve((L, True), design.Y - params.beta, check_finite=False)
    return KrigingModel(params, design, lower, scale, L, alpha)
