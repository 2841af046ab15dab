"""Noise stability of periodized sets.

Monte Carlo estimators draw samples in fixed-size blocks; block ``b`` uses
its own generator seeded from ``SeedSequence(seed, spawn_key=(b,))``.  Counts
are integers pooled exactly, so an estimate depends only on
``(inputs, seed, samples)`` and not on how many workers ran the blocks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .periodic_sets import PhaseFunction, membership

__all__ = [
    "StabilityEstimate",
    "NOISE_SLACK",
    "ou_noise_stability_mc",
    "ou_noise_stability_oracle_halfspace",
    "uniform_noise_stability_mc",
    "surface_limit_check",
    "gaussian_expansion_check",
    "uniform_expansion_check",
    "residuals_decreasing",
    "dilation_discrepancy_mc",
    "stable_arccos",
]

#: additive slack in the weak noise-stability comparison with the half space
NOISE_SLACK = 3e-9

BLOCK = 1 << 18
SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class StabilityEstimate:
    probability: float
    std_error: float
    samples: int
    seed: int
    parameter: float
    variant: str  # "gaussian_ou" or "uniform_heat"

    @classmethod
    def from_count(cls, hits: int, samples: int, seed: int, parameter: float, variant: str):
        p = hits / samples
        return cls(p, math.sqrt(p * (1.0 - p) / samples), samples, seed, float(parameter), variant)


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(block,)))


def _pooled_count(draw: Callable[[np.random.Generator, int], int], samples: int, seed: int, n_jobs: int = 1) -> int:
    sizes = [BLOCK] * (samples // BLOCK)
    if samples % BLOCK:
        sizes.append(samples % BLOCK)

    def run(b):
        return draw(_block_rng(seed, b), sizes[b])

    if n_jobs > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return int(sum(pool.map(run, range(len(sizes)))))
    return int(sum(run(b) for b in range(len(sizes))))


def _check_samples(samples, minimum=10_000):
    samples = int(samples)
    if samples < minimum:
        raise ValueError(f"samples must be at least {minimum}")
    return samples


def ou_noise_stability_mc(
    f: PhaseFunction, rho: float, samples: int = 1_000_000, seed: int = 0, n_jobs: int = 1
) -> StabilityEstimate:
    """Estimate ``P(X in Omega, rho X + sqrt(1 - rho^2) Y in Omega)``."""
    rho = float(rho)
    if not -1.0 < rho < 1.0:
        raise ValueError("rho must lie in (-1, 1)")
    samples = _check_samples(samples)
    n = f.dimension
    c = math.sqrt(1.0 - rho * rho)

    def draw(rng, m):
        x = rng.standard_normal((m, n))
        y = rng.standard_normal((m, n))
        return int(np.count_nonzero(membership(f, x) & membership(f, rho * x + c * y)))

    hits = _pooled_count(draw, samples, seed, n_jobs)
    return StabilityEstimate.from_count(hits, samples, seed, rho, "gaussian_ou")


def _coupled_mc(f, eta, samples, seed, n_jobs):
    # X sqrt(1 - eta^2) + eta Y, allowing eta = 0 (identity coupling)
    n = f.dimension
    a = math.sqrt(1.0 - eta * eta)

    def draw(rng, m):
        x = rng.standard_normal((m, n))
        y = rng.standard_normal((m, n))
        return int(np.count_nonzero(membership(f, x) & membership(f, a * x + eta * y)))

    hits = _pooled_count(draw, samples, seed, n_jobs)
    return StabilityEstimate.from_count(hits, samples, seed, eta, "gaussian_ou")


def uniform_noise_stability_mc(
    f: PhaseFunction, epsilon: float, samples: int = 1_000_000, seed: int = 0, n_jobs: int = 1
) -> StabilityEstimate:
    """Estimate ``P(X in Omega, X + eps Y in Omega)`` with X uniform on [-1/2, 1/2]^n."""
    epsilon = float(epsilon)
    if not 0.0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 1/2)")
    return _uniform_mc(f, epsilon, _check_samples(samples), seed, n_jobs)


def _uniform_mc(f, epsilon, samples, seed, n_jobs):
    n = f.dimension

    def draw(rng, m):
        x = rng.random((m, n)) - 0.5
        y = rng.standard_normal((m, n))
        return int(np.count_nonzero(membership(f, x) & membership(f, x + epsilon * y)))

    hits = _pooled_count(draw, samples, seed, n_jobs)
    return StabilityEstimate.from_count(hits, samples, seed, epsilon, "uniform_heat")


def dilation_discrepancy_mc(f: PhaseFunction, epsilon: float, samples: int = 1_000_000, seed: int = 0) -> StabilityEstimate:
    """Estimate ``P(f(X) != f((1 + eps) X))``; informational only."""
    samples = _check_samples(samples)
    n = f.dimension

    def draw(rng, m):
        x = rng.standard_normal((m, n))
        return int(np.count_nonzero(membership(f, x) != membership(f, (1.0 + epsilon) * x)))

    hits = _pooled_count(draw, samples, seed)
    return StabilityEstimate.from_count(hits, samples, seed, epsilon, "dilation")


def ou_noise_stability_oracle_halfspace(rho: float, n: int, quad_points: int = 400) -> float:
    """Noise stability of a periodized half space by deterministic quadrature.

    Membership depends only on ``S = <eps, X>``, and ``(S, S')`` is bivariate
    normal with variance ``n`` and covariance ``rho n``.  Conditionally on
    ``S`` the band probability of ``S'`` is a sum of normal CDF differences,
    so only the outer integral over the bands ``S in [2k, 2k+1]`` is done
    numerically, with ``quad_points`` Gauss-Legendre nodes per band split
    into panels.
    """
    rho = float(rho)
    if not -1.0 < rho < 1.0:
        raise ValueError("rho must lie in (-1, 1)")
    if quad_points < 200:
        raise ValueError("quad_points must be at least 200")
    sd = math.sqrt(n)
    cond_sd = math.sqrt(n * (1.0 - rho * rho))
    kmax = int(math.ceil(9.0 * sd / 2.0)) + 1

    panels = 8
    g, w = np.polynomial.legendre.leggauss(int(quad_points) // panels)
    edges = np.linspace(0.0, 1.0, panels + 1)
    nodes = np.concatenate([lo + (hi - lo) * 0.5 * (g + 1.0) for lo, hi in zip(edges[:-1], edges[1:])])
    weights = np.concatenate([(hi - lo) * 0.5 * w for lo, hi in zip(edges[:-1], edges[1:])])

    s = (2.0 * np.arange(-kmax, kmax + 1)[:, None] + nodes[None, :]).ravel()
    ws = np.tile(weights, 2 * kmax + 1)
    density = np.exp(-0.5 * (s / sd) ** 2) / (sd * SQRT_2PI)

    mean = rho * s
    lmax = int(math.ceil((abs(rho) * s.max() + 12.0 * cond_sd) / 2.0)) + 1
    band = np.zeros_like(s)
    for l in range(-lmax, lmax + 1):
        band += ndtr((2 * l + 1 - mean) / cond_sd) - ndtr((2 * l - mean) / cond_sd)
    return float(np.sum(ws * density * band))


def stable_arccos(rho: float) -> float:
    """``arccos(rho)`` using the series about 1 when ``1 - rho < 1e-4``."""
    d = 1.0 - rho
    if d < 1e-4:
        return math.sqrt(2.0 * d) * (1.0 + d / 12.0 + 3.0 * d * d / 160.0)
    return math.acos(rho)


@dataclass(frozen=True)
class LimitRow:
    rho: float
    normalized_deficit: float
    predicted: float
    std_error: float


def surface_limit_check(
    f: PhaseFunction,
    mesh_perimeter: float,
    rho_list: Sequence[float],
    samples: int = 1_000_000,
    seed: int = 0,
    n_jobs: int = 1,
) -> list[LimitRow]:
    """Normalized deficit ``sqrt(2 pi)/arccos(rho) * (1/2 - NS)`` per rho.

    As rho -> 1 the deficit tends to the Gaussian surface area, which is
    passed in as ``mesh_perimeter``.
    """
    samples = _check_samples(samples, 1_000_000)
    rows = []
    for rho in rho_list:
        if not 0.9 < rho < 1.0:
            raise ValueError("each rho must lie in (0.9, 1)")
        est = ou_noise_stability_mc(f, rho, samples, seed, n_jobs)
        scale = SQRT_2PI / stable_arccos(rho)
        rows.append(LimitRow(rho, scale * (0.5 - est.probability), float(mesh_perimeter), scale * est.std_error))
    return rows


@dataclass(frozen=True)
class ExpansionRow:
    parameter: float
    estimate: float
    std_error: float
    predicted: float

    @property
    def residual(self) -> float:
        return self.estimate - self.predicted

    @property
    def normalized_residual(self) -> float:
        return abs(self.residual) / self.parameter if self.parameter else float("nan")


def gaussian_expansion_check(
    f: PhaseFunction,
    gaussian_perimeter: float,
    eta_list: Sequence[float],
    samples: int = 1_000_000,
    seed: int = 0,
    n_jobs: int = 1,
) -> list[ExpansionRow]:
    """First-order check of ``P(X in Omega, X sqrt(1-eta^2) + eta Y in Omega)``.

    The prediction is ``1/2 - eta / sqrt(2 pi) * gaussian_perimeter``.
    """
    samples = _check_samples(samples, 1_000_000)
    rows = []
    for eta in eta_list:
        if not 0.0 <= eta < 1.0:
            raise ValueError("eta must lie in [0, 1)")
        est = _coupled_mc(f, float(eta), samples, seed, n_jobs)
        pred = 0.5 - eta / SQRT_2PI * gaussian_perimeter
        rows.append(ExpansionRow(float(eta), est.probability, est.std_error, pred))
    return rows


def uniform_expansion_check(
    f: PhaseFunction,
    lebesgue_perimeter: float,
    eps_list: Sequence[float],
    samples: int = 1_000_000,
    seed: int = 0,
    n_jobs: int = 1,
) -> list[ExpansionRow]:
    """First-order check of the uniform-start stability, ``1/2 - eps/sqrt(2 pi) * L``."""
    samples = _check_samples(samples, 1_000_000)
    rows = []
    for eps in eps_list:
        est = uniform_noise_stability_mc(f, eps, samples, seed, n_jobs)
        rows.append(ExpansionRow(float(eps), est.probability, est.std_error, 0.5 - eps / SQRT_2PI * lebesgue_perimeter))
    return rows


def residuals_decreasing(rows: Sequence[ExpansionRow], z: float = 3.0) -> bool:
    """``|r|/p`` shrinks down a decreasing parameter ladder, within ``z`` std errors."""
    ladder = sorted(rows, key=lambda r: -r.parameter)
    for big, small in zip(ladder, ladder[1:]):
        err = math.hypot(big.std_error, small.std_error)
        if not small.normalized_residual < big.normalized_residual + z * err / small.parameter:
            return False
    return True
