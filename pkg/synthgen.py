"""
Seeded synthetic problems.

All draws go through numpy's Generator on a PCG64 bit generator
(np.random.Generator(np.random.PCG64(seed))); normals come from
Generator.standard_normal (ziggurat). The same seed and numpy version give the
same dataset byte for byte.
"""

import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from dataset import CLASSIFICATION, NUMERIC, REGRESSION, Column, Dataset

logger = logging.getLogger(__name__)

DEFAULT_SIGMA = 0.25


class ParityConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    d: int = Field(3, ge=1)
    n: int = Field(800, ge=1)
    sigma: float = Field(DEFAULT_SIGMA, ge=0.0)
    seed: int = 0


class Friedman1Config(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int = Field(500, ge=1)
    d: int = Field(10, ge=5)
    noise_sd: float = Field(1.0, ge=0.0)
    seed: int = 0


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _numeric_columns(X: np.ndarray) -> tuple:
    return tuple(Column(f"x{j + 1}", NUMERIC, X[:, j].copy()) for j in range(X.shape[1]))


def gen_noisy_parity(cfg: ParityConfig) -> Dataset:
    """
    Latent centers C ~ Unif({-1, 1}^d), features X = C + sigma * N(0, I),
    label Y = prod_j C_j. No proper subset of features carries signal.
    """
    rng = _rng(cfg.seed)
    centers = rng.integers(0, 2, size=(cfg.n, cfg.d)) * 2 - 1
    X = centers + cfg.sigma * rng.standard_normal((cfg.n, cfg.d))
    y = np.prod(centers, axis=1).astype(np.float64)
    logger.info(f"Generated noisy parity: d={cfg.d} n={cfg.n} sigma={cfg.sigma} seed={cfg.seed}")
    return Dataset(_numeric_columns(X), y, CLASSIFICATION)


def friedman1_target(X: np.ndarray) -> np.ndarray:
    return (10.0 * np.sin(np.pi * X[:, 0] * X[:, 1]) + 20.0 * (X[:, 2] - 0.5) ** 2
            + 10.0 * X[:, 3] + 5.0 * X[:, 4])


def gen_friedman1(cfg: Friedman1Config) -> Dataset:
    """Regression on Unif[0,1]^d; features beyond the fifth are noise"""
    rng = _rng(cfg.seed)
    X = rng.uniform(0.0, 1.0, size=(cfg.n, cfg.d))
    y = friedman1_target(X) + cfg.noise_sd * rng.standard_normal(cfg.n)
    logger.info(f"Generated friedman1: d={cfg.d} n={cfg.n} noise_sd={cfg.noise_sd} seed={cfg.seed}")
    return Dataset(_numeric_columns(X), y, REGRESSION)
