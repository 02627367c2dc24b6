"""Prior settings, MCMC configuration and the posterior draw container."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError

CONSTANT = "constant"
LINEAR = "linear"
MODELS = (CONSTANT, LINEAR)

PARAMS = {
    CONSTANT: ("mu", "sigma2"),
    LINEAR: ("mu", "sigma2", "slope_mean", "slope_var"),
}


@dataclass(frozen=True)
class Priors:
    """Hyperparameters shared by the constant and linear bias models.

    Variances, not standard deviations. ``precision_upper`` is the upper end
    of the Uniform(0, upper) prior on ``1 / sigma2``, which bounds
    ``sigma2`` below by ``1 / precision_upper``.
    """

    mu_mean: float = 0.0
    mu_var: float = 50.0
    precision_upper: float = 100.0
    slope_mean_var: float = 50.0
    slope_var_var: float = 50.0
    theta0_var: float = 50.0

    def __post_init__(self):
        for name in ("mu_var", "precision_upper", "slope_mean_var", "slope_var_var", "theta0_var"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"prior {name} must be > 0")

    @property
    def sigma2_min(self) -> float:
        return 1.0 / self.precision_upper


@dataclass(frozen=True)
class McmcConfig:
    chains: int = 3
    burn_in: int = 1000
    samples: int = 1000
    thinning: int = 1
    seed: int = 0
    init_sd: float = 1.0
    workers: int = 1

    def __post_init__(self):
        if self.chains < 1 or self.samples < 1 or self.thinning < 1 or self.burn_in < 0:
            raise ValidationError(
                "need chains >= 1, samples >= 1, thinning >= 1 and burn_in >= 0"
            )
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")

    @property
    def kept_per_chain(self) -> int:
        return self.samples // self.thinning

    def chain_rng(self, chain: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(chain,)))


@dataclass
class PosteriorSamples:
    """Retained draws, one ``(chains, kept)`` array per parameter."""

    model: str
    draws: dict[str, np.ndarray]
    config: McmcConfig = field(default_factory=McmcConfig)
    priors: Priors = field(default_factory=Priors)
    diagnostics: object | None = None
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValidationError(f"unknown model {self.model!r}")
        missing = [p for p in PARAMS[self.model] if p not in self.draws]
        if missing:
            raise ValidationError(f"{self.model} draws missing parameters {missing}")
        shapes = {np.shape(v) for v in self.draws.values()}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2:
            raise ValidationError(f"draw arrays must share one (chains, n) shape, got {shapes}")
        self.draws = {k: np.asarray(v, dtype=float) for k, v in self.draws.items()}
        if np.any(self.draws["sigma2"] < 0):
            raise ValidationError("sigma2 draws must be non-negative")

    @property
    def n_chains(self) -> int:
        return next(iter(self.draws.values())).shape[0]

    @property
    def n_draws(self) -> int:
        return int(np.prod(next(iter(self.draws.values())).shape))

    @property
    def param_names(self) -> tuple[str, ...]:
        return PARAMS[self.model]

    def flat(self, name: str) -> np.ndarray:
        """All retained draws of ``name``, chains concatenated in order."""
        return self.draws[name].reshape(-1)

    def mean(self, name: str) -> float:
        return float(np.mean(self.draws[name]))
