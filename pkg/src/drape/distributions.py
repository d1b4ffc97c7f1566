"""Standardized (mean 0, variance 1) noise families used by the simulator.

Every family exposes its density, score ``(log p)'`` and score derivative in
closed form. The mixtures are written in ``tanh`` form so that the score is
exactly odd in floating point.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.typing import ArrayLike, NDArray

LIPSCHITZ_GRID = np.linspace(-20.0, 20.0, 100_001)


class NoiseFamily:
    name: str = ""

    def sample(self, n: int, seed) -> NDArray[np.float64]:
        return self._draw(n, np.random.default_rng(seed))

    def _draw(self, n: int, rng: np.random.Generator) -> NDArray[np.float64]:
        raise NotImplementedError

    def log_density(self, eps: ArrayLike) -> NDArray[np.float64]:
        raise NotImplementedError

    def density(self, eps: ArrayLike) -> NDArray[np.float64]:
        return np.exp(self.log_density(eps))

    def score(self, eps: ArrayLike) -> NDArray[np.float64]:
        raise NotImplementedError

    def score_derivative(self, eps: ArrayLike) -> NDArray[np.float64]:
        raise NotImplementedError

    def lipschitz_constant(self) -> float:
        """``sup |score'|`` by maximisation over :data:`LIPSCHITZ_GRID`."""
        return float(np.max(np.abs(self.score_derivative(LIPSCHITZ_GRID))))

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r})"


class Normal(NoiseFamily):
    name = "normal"

    def _draw(self, n, rng):
        return rng.standard_normal(n)

    def log_density(self, eps):
        e = np.asarray(eps, dtype=float)
        return -0.5 * e * e - 0.5 * math.log(2 * math.pi)

    def score(self, eps):
        return -np.asarray(eps, dtype=float)

    def score_derivative(self, eps):
        return np.full(np.shape(eps), -1.0)

    def lipschitz_constant(self) -> float:
        return 1.0


class SymmetricMixture(NoiseFamily):
    """Equiprobable mixture of ``N(-mu, s2)`` and ``N(mu, s2)``."""

    def __init__(self, name: str, mu: float, s2: float) -> None:
        self.name = name
        self.mu = mu
        self.s2 = s2

    def _draw(self, n, rng):
        sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        return sign * self.mu + math.sqrt(self.s2) * rng.standard_normal(n)

    def log_density(self, eps):
        e = np.asarray(eps, dtype=float)
        a = self.mu * e / self.s2
        # log(cosh a) computed stably
        log_cosh = np.abs(a) + np.log1p(np.exp(-2 * np.abs(a))) - math.log(2)
        return (
            -(e * e + self.mu**2) / (2 * self.s2)
            + log_cosh
            - 0.5 * math.log(2 * math.pi * self.s2)
        )

    def score(self, eps):
        e = np.asarray(eps, dtype=float)
        return (self.mu * np.tanh(self.mu * e / self.s2) - e) / self.s2

    def score_derivative(self, eps):
        e = np.asarray(eps, dtype=float)
        sech2 = 1.0 / np.cosh(self.mu * e / self.s2) ** 2
        return (self.mu**2 / self.s2 * sech2 - 1.0) / self.s2


class Logistic(NoiseFamily):
    name = "logistic"
    scale = math.sqrt(3) / math.pi

    def _draw(self, n, rng):
        return rng.logistic(0.0, self.scale, n)

    def log_density(self, eps):
        u = np.abs(np.asarray(eps, dtype=float)) / self.scale
        return -u - 2 * np.log1p(np.exp(-u)) - math.log(self.scale)

    def score(self, eps):
        e = np.asarray(eps, dtype=float)
        return -np.tanh(e / (2 * self.scale)) / self.scale

    def score_derivative(self, eps):
        e = np.asarray(eps, dtype=float)
        return -1.0 / (2 * self.scale**2 * np.cosh(e / (2 * self.scale)) ** 2)

    def lipschitz_constant(self) -> float:
        return 1.0 / (2 * self.scale**2)


class ScaledT4(NoiseFamily):
    """Student-t with 4 degrees of freedom divided by sqrt(2)."""

    name = "t4"
    _log_norm = math.log(math.sqrt(2) * 3 / 8)

    def _draw(self, n, rng):
        return rng.standard_t(4, n) / math.sqrt(2)

    def log_density(self, eps):
        e = np.asarray(eps, dtype=float)
        return self._log_norm - 2.5 * np.log1p(0.5 * e * e)

    def score(self, eps):
        e = np.asarray(eps, dtype=float)
        return -5 * e / (2 + e * e)

    def score_derivative(self, eps):
        e2 = np.asarray(eps, dtype=float) ** 2
        return -5 * (2 - e2) / (2 + e2) ** 2

    def lipschitz_constant(self) -> float:
        # |score'| peaks at the origin
        return 2.5


# mix3 uses means +-sqrt(2/3): with component variance 1/3 this is the
# parameterisation giving unit variance.
FAMILIES: dict[str, NoiseFamily] = {
    "normal": Normal(),
    "mix2": SymmetricMixture("mix2", math.sqrt(0.5), 0.5),
    "mix3": SymmetricMixture("mix3", math.sqrt(2 / 3), 1 / 3),
    "logistic": Logistic(),
    "t4": ScaledT4(),
}


def get_family(name: str | NoiseFamily) -> NoiseFamily:
    if isinstance(name, NoiseFamily):
        return name
    try:
        return FAMILIES[name]
    except KeyError:
        raise ValueError(
            f"unknown noise family {name!r}; choose from {sorted(FAMILIES)}"
        ) from None
