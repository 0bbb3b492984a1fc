"""Parametric families used as natural, importance and cross-entropy distributions.

Univariate families take and return arrays of shape ``(n,)``; a
:class:`Product` works on ``(n, d)`` arrays, one column per component.
Densities are evaluated in log space and exponentiated on demand.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import special

from .streams import RandomStream, as_stream


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return value


@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        _positive("rate", self.rate)

    dim = 1

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(x >= 0, np.log(self.rate) - self.rate * x, -np.inf)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, -np.expm1(-self.rate * np.maximum(x, 0)), 0.0)

    def ppf(self, u):
        return -np.log1p(-np.asarray(u, dtype=float)) / self.rate

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.ppf(rng.random(n))

    def mean(self) -> float:
        return 1.0 / self.rate


@dataclass(frozen=True)
class Pareto:
    """Classic Pareto on ``[scale, inf)`` with density ``shape * scale**shape / x**(shape+1)``."""

    scale: float
    shape: float

    def __post_init__(self):
        _positive("scale", self.scale)
        _positive("shape", self.shape)

    dim = 1

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        inside = x >= self.scale
        safe = np.where(inside, x, self.scale)
        logpdf = np.log(self.shape) + self.shape * np.log(self.scale) - (self.shape + 1.0) * np.log(safe)
        return np.where(inside, logpdf, -np.inf)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        safe = np.maximum(x, self.scale)
        return np.where(x >= self.scale, 1.0 - (self.scale / safe) ** self.shape, 0.0)

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        return self.scale * np.exp(-np.log1p(-u) / self.shape)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.ppf(rng.random(n))

    def mean(self) -> float:
        return self.shape * self.scale / (self.shape - 1.0) if self.shape > 1 else np.inf


@dataclass(frozen=True)
class GaussianUV:
    mu: float
    sd: float

    def __post_init__(self):
        if not np.isfinite(self.mu):
            raise ValueError("mean must be finite")
        _positive("sd", self.sd)

    dim = 1

    def log_density(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.sd
        return -0.5 * z * z - np.log(self.sd) - 0.5 * np.log(2 * np.pi)

    def cdf(self, x):
        return special.ndtr((np.asarray(x, dtype=float) - self.mu) / self.sd)

    def ppf(self, u):
        return self.mu + self.sd * special.ndtri(np.asarray(u, dtype=float))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mu + self.sd * rng.standard_normal(n)

    def mean(self) -> float:
        return self.mu


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def __post_init__(self):
        if not self.high > self.low:
            raise ValueError("uniform needs low < high")

    dim = 1

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.low) & (x <= self.high)
        return np.where(inside, -np.log(self.high - self.low), -np.inf)

    def cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.low) / (self.high - self.low), 0.0, 1.0)

    def ppf(self, u):
        return self.low + (self.high - self.low) * np.asarray(u, dtype=float)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.ppf(rng.random(n))

    def mean(self) -> float:
        return 0.5 * (self.low + self.high)


Univariate = Union[Exponential, Pareto, GaussianUV, Uniform]


@dataclass(frozen=True)
class Product:
    """Independent product of univariate components; points are rows of an ``(n, d)`` array."""

    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("product needs at least one component")
        if any(isinstance(c, Product) for c in comps):
            raise ValueError("nested products are not supported")
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        return len(self.components)

    def _columns(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(1, -1) if x.shape[0] == self.dim and self.dim > 1 else x.reshape(-1, 1)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got shape {x.shape}")
        return x

    def log_density(self, x):
        x = self._columns(x)
        out = np.zeros(x.shape[0])
        for j, comp in enumerate(self.components):
            out = out + comp.log_density(x[:, j])
        return out

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.column_stack([comp.sample(rng, n) for comp in self.components])

    def with_component(self, j: int, comp) -> "Product":
        comps = list(self.components)
        comps[j] = comp
        return Product(tuple(comps))


Distribution = Union[Exponential, Pareto, GaussianUV, Uniform, Product]


def density(dist: Distribution, x) -> np.ndarray:
    return np.exp(dist.log_density(x))


def log_density(dist: Distribution, x) -> np.ndarray:
    return dist.log_density(x)


def sample(dist: Distribution, stream: "RandomStream | int", n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return dist.sample(as_stream(stream).generator(), n)


def log_likelihood_ratio(f: Distribution, f_star: Distribution, x) -> np.ndarray:
    """``log f(x) - log f_star(x)``; ``-inf`` where ``f`` vanishes.

    Raises ``ValueError`` if ``f_star`` vanishes where ``f`` does not.
    """
    lf = np.atleast_1d(f.log_density(x))
    ls = np.atleast_1d(f_star.log_density(x))
    bad = np.isneginf(ls) & ~np.isneginf(lf)
    if np.any(bad):
        pts = np.asarray(x, dtype=float)
        first = pts[np.flatnonzero(bad)[0]] if pts.ndim >= 1 and pts.shape[0] == bad.shape[0] else pts
        raise ValueError(f"importance density is zero at {first!r} where the target density is positive")
    out = np.full(lf.shape, -np.inf)
    ok = ~np.isneginf(lf)
    out[ok] = lf[ok] - ls[ok]
    return out


def likelihood_ratio(f: Distribution, f_star: Distribution, x) -> np.ndarray:
    return np.exp(log_likelihood_ratio(f, f_star, x))


# -- text form: "exponential rate=0.8", "pareto scale=0.02 shape=2.5",
#    "normal mean=0 sd=1", "uniform low=0 high=1", "product [ a, b ]"

_FAMILIES = {
    "exponential": (Exponential, {"rate": "rate"}),
    "pareto": (Pareto, {"scale": "scale", "shape": "shape"}),
    "normal": (GaussianUV, {"mean": "mu", "sd": "sd"}),
    "gaussian": (GaussianUV, {"mean": "mu", "sd": "sd"}),
    "uniform": (Uniform, {"low": "low", "high": "high"}),
}


def parse_distribution(text: str) -> Distribution:
    """Parse the config-file form of a distribution.

    >>> parse_distribution("product [exponential rate=2, pareto scale=0.005 shape=2.5]")
    Product(components=(Exponential(rate=2.0), Pareto(scale=0.005, shape=2.5)))
    """
    text = text.strip()
    m = re.fullmatch(r"product\s*\[(.*)\]", text, flags=re.S)
    if m:
        parts = [p for p in m.group(1).split(",") if p.strip()]
        return Product(tuple(parse_distribution(p) for p in parts))
    tokens = text.split()
    if not tokens:
        raise ValueError("empty distribution entry")
    family = tokens[0].lower()
    if family not in _FAMILIES:
        raise ValueError(f"unknown distribution family {tokens[0]!r}")
    cls, names = _FAMILIES[family]
    kwargs = {}
    for tok in tokens[1:]:
        key, sep, val = tok.partition("=")
        if not sep or key not in names:
            raise ValueError(f"bad parameter {tok!r} for {family}")
        kwargs[names[key]] = float(val)
    missing = set(names.values()) - set(kwargs)
    if missing:
        raise ValueError(f"{family} is missing parameter(s) {sorted(missing)}")
    return cls(**kwargs)


def format_distribution(dist: Distribution) -> str:
    if isinstance(dist, Product):
        return "product [" + ", ".join(format_distribution(c) for c in dist.components) + "]"
    if isinstance(dist, Exponential):
        return f"exponential rate={dist.rate!r}"
    if isinstance(dist, Pareto):
        return f"pareto scale={dist.scale!r} shape={dist.shape!r}"
    if isinstance(dist, GaussianUV):
        return f"normal mean={dist.mu!r} sd={dist.sd!r}"
    if isinstance(dist, Uniform):
        return f"uniform low={dist.low!r} high={dist.high!r}"
    raise TypeError(f"cannot format {type(dist).__name__}")


def components(dist: Distribution) -> tuple:
    return dist.components if isinstance(dist, Product) else (dist,)


def with_components(dist: Distribution, comps) -> Distribution:
    comps = tuple(comps)
    return Product(comps) if isinstance(dist, Product) else comps[0]


__all__ = [
    "Exponential", "Pareto", "GaussianUV", "Uniform", "Product", "Distribution",
    "density", "log_density", "sample", "likelihood_ratio", "log_likelihood_ratio",
    "parse_distribution", "format_distribution", "components", "with_components",
]
