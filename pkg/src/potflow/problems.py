"""Benchmark source/target pairs, analytic transport oracles, and metrics.

The two quantitative problems have closed-form optimal maps: axis-aligned
Gaussians mapped by (x, y) -> (2x, y/2), and concentric rings mapped by a
radial shift of 1.5.  The extra pairs are documented built-ins used by the
qualitative modes (no analytic maps; figure problems elsewhere are not
recoverable in closed form, so these are substitutes, flagged as such in
reports).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class ProblemSpec:
    name: str
    dim: int
    sample_mu: Callable[[int, np.random.Generator], np.ndarray]
    sample_nu: Callable[[int, np.random.Generator], np.ndarray]
    log_density_mu: Callable[[np.ndarray], np.ndarray] | None = None
    score_mu: Callable[[np.ndarray], np.ndarray] | None = None
    analytic_map: Callable[[np.ndarray], np.ndarray] | None = None
    analytic_cost: float | None = None
    substitute: bool = False   # built-in stand-in, not a published benchmark pair


@dataclass
class RunReport:
    """Evaluation metrics for one trained (or frozen) map.

    Metrics are None when a run diverged before they could be computed;
    a finished run always carries finite values.
    """
    problem: str
    seed: int
    std_axes: list[float] | None
    mean_norm: float | None
    sw_distance: float | None
    map_error: float | None = None
    nll: float | None = None
    hj_residual: float | None = None
    steps_done: int = 0
    diverged_at: int | None = None
    wall_time: float = 0.0  # kept out of the serialized report (bit-reproducibility)

    def to_json_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "wall_time"}
        return d


def _gauss_log_density(X: np.ndarray, variances: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(X)
    return (-0.5 * np.sum(X * X / variances, axis=1)
            - 0.5 * np.sum(np.log(2.0 * np.pi * variances)))


def gaussian_problem() -> ProblemSpec:
    """Axis-aligned Gaussian pair; optimal map (x, y) -> (2x, y/2)."""
    var_mu = np.array([0.25, 1.0])
    var_nu = np.array([1.0, 0.25])

    def sample_mu(n, rng):
        return rng.normal(size=(n, 2)) * np.sqrt(var_mu)

    def sample_nu(n, rng):
        return rng.normal(size=(n, 2)) * np.sqrt(var_nu)

    def analytic_map(X):
        X = np.atleast_2d(X)
        return X * np.array([2.0, 0.5])

    return ProblemSpec(
        name="gaussian", dim=2, sample_mu=sample_mu, sample_nu=sample_nu,
        log_density_mu=lambda X: _gauss_log_density(X, var_mu),
        score_mu=lambda X: -np.atleast_2d(X) / var_mu,
        analytic_map=analytic_map, analytic_cost=0.5)


def ring_problem() -> ProblemSpec:
    """Concentric rings: radius uniform on [0.5, 1] to [2, 2.5]; the optimal
    map adds 1.5 to the radius and keeps the angle."""

    def sample_ring(n, rng, lo, hi):
        r = rng.uniform(lo, hi, size=n)
        th = rng.uniform(0.0, 2.0 * np.pi, size=n)
        return np.stack([r * np.cos(th), r * np.sin(th)], axis=1)

    def log_density_mu(X):
        # radius uniform and angle uniform give density proportional to 1/r
        X = np.atleast_2d(X)
        r = np.linalg.norm(X, axis=1)
        out = np.where((r >= 0.5) & (r <= 1.0), -np.log(np.maximum(r, 1e-300)),
                       -np.inf)
        return out

    def analytic_map(X):
        X = np.atleast_2d(X)
        r = np.linalg.norm(X, axis=1, keepdims=True)
        return X * (1.0 + 1.5 / np.maximum(r, 1e-300))

    return ProblemSpec(
        name="ring", dim=2,
        sample_mu=lambda n, rng: sample_ring(n, rng, 0.5, 1.0),
        sample_nu=lambda n, rng: sample_ring(n, rng, 2.0, 2.5),
        log_density_mu=log_density_mu,
        score_mu=lambda X: -np.atleast_2d(X) / np.maximum(
            np.sum(np.atleast_2d(X) ** 2, axis=1, keepdims=True), 1e-300),
        analytic_map=analytic_map, analytic_cost=2.25)


class GaussianMixture:
    """Isotropic Gaussian mixture with exact log density and score."""

    def __init__(self, centers: np.ndarray, sigma: float,
                 weights: np.ndarray | None = None):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
        self.sigma = float(sigma)
        k = self.centers.shape[0]
        self.weights = (np.full(k, 1.0 / k) if weights is None
                        else np.asarray(weights, dtype=np.float64) / np.sum(weights))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(len(self.weights), size=n, p=self.weights)
        return self.centers[idx] + self.sigma * rng.normal(
            size=(n, self.centers.shape[1]))

    def _log_comps(self, X):
        X = np.atleast_2d(X)
        d = X.shape[1]
        d2 = np.sum((X[:, None, :] - self.centers[None, :, :]) ** 2, axis=2)
        return (np.log(self.weights)[None, :] - d2 / (2 * self.sigma ** 2)
                - 0.5 * d * np.log(2 * np.pi * self.sigma ** 2))

    def log_density(self, X) -> np.ndarray:
        lc = self._log_comps(X)
        m = lc.max(axis=1, keepdims=True)
        return (m + np.log(np.sum(np.exp(lc - m), axis=1, keepdims=True)))[:, 0]

    def score(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        lc = self._log_comps(X)
        m = lc.max(axis=1, keepdims=True)
        w = np.exp(lc - m)
        w /= w.sum(axis=1, keepdims=True)
        return np.einsum("bk,bkd->bd",
                         w, (self.centers[None, :, :] - X[:, None, :])) / self.sigma ** 2


def target_mixture(name: str) -> GaussianMixture:
    """The mixture behind an extra problem's target (also used by the
    density-normalization checks)."""
    if name == "gauss-to-ring8":
        angles = np.arange(8) * (2.0 * np.pi / 8.0)
        return GaussianMixture(4.0 * np.stack([np.cos(angles), np.sin(angles)], 1),
                               sigma=0.5)
    if name == "gauss-to-moons":
        t = np.linspace(0.0, np.pi, 12)
        moon_a = np.stack([np.cos(t), np.sin(t) - 0.25], 1)
        moon_b = np.stack([1.0 - np.cos(t), 0.25 - np.sin(t)], 1)
        return GaussianMixture(2.0 * np.vstack([moon_a, moon_b]), sigma=0.2)
    raise KeyError(name)


def extra_problems() -> list[ProblemSpec]:
    """Configurable built-in pairs for the qualitative modes."""
    std_normal_ld = lambda X: _gauss_log_density(X, np.array([1.0, 1.0]))
    std_normal_score = lambda X: -np.atleast_2d(X)
    ring8 = target_mixture("gauss-to-ring8")
    moons = target_mixture("gauss-to-moons")

    def sample_annulus(n, rng):
        r = rng.uniform(0.5, 1.0, size=n)
        th = rng.uniform(0.0, 2.0 * np.pi, size=n)
        return np.stack([r * np.cos(th), r * np.sin(th)], axis=1)

    return [
        ProblemSpec(
            name="gauss-to-ring8", dim=2,
            sample_mu=lambda n, rng: rng.normal(size=(n, 2)),
            sample_nu=lambda n, rng: ring8.sample(n, rng),
            log_density_mu=std_normal_ld, score_mu=std_normal_score,
            substitute=True),
        ProblemSpec(
            name="gauss-to-moons", dim=2,
            sample_mu=lambda n, rng: rng.normal(size=(n, 2)),
            sample_nu=lambda n, rng: moons.sample(n, rng),
            log_density_mu=std_normal_ld, score_mu=std_normal_score,
            substitute=True),
        ProblemSpec(
            name="annulus-to-gauss", dim=2,
            sample_mu=sample_annulus,
            sample_nu=lambda n, rng: 0.5 * rng.normal(size=(n, 2)),
            log_density_mu=ring_problem().log_density_mu,
            score_mu=ring_problem().score_mu,
            substitute=True),
    ]


def problem_by_name(name: str) -> ProblemSpec:
    if name == "gaussian":
        return gaussian_problem()
    if name == "ring":
        return ring_problem()
    for p in extra_problems():
        if p.name == name:
            return p
    raise KeyError(f"unknown problem {name!r}; known: gaussian, ring, "
                   + ", ".join(p.name for p in extra_problems()))


# -- metrics -------------------------------------------------------------------


def _psd_sqrt(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    if not np.allclose(S, S.T, atol=1e-10):
        raise ValueError("covariance must be symmetric")
    w, V = np.linalg.eigh(S)
    if np.any(w < -1e-10):
        raise ValueError(f"covariance not positive semidefinite (min eig {w.min()})")
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def gelbrich_cost(m1, S1, m2, S2) -> float:
    """Squared Wasserstein-2 distance between two Gaussians:
    |m1 - m2|^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2)."""
    m1 = np.asarray(m1, dtype=np.float64)
    m2 = np.asarray(m2, dtype=np.float64)
    S1 = np.asarray(S1, dtype=np.float64)
    S2 = np.asarray(S2, dtype=np.float64)
    r1 = _psd_sqrt(S1)
    cross = _psd_sqrt(r1 @ S2 @ r1)
    return float(np.sum((m1 - m2) ** 2) + np.trace(S1 + S2 - 2.0 * cross))


def map_error(map_fn, problem: ProblemSpec, num_samples: int, seed: int) -> float:
    """Mean Euclidean distance between the map and the analytic optimal map
    over fresh source samples."""
    if problem.analytic_map is None:
        raise ValueError(f"problem {problem.name!r} has no analytic map")
    rng = np.random.Generator(np.random.PCG64(seed))
    X = problem.sample_mu(num_samples, rng)
    return float(np.mean(np.linalg.norm(map_fn(X) - problem.analytic_map(X), axis=1)))


def export_samples_csv(path, X: np.ndarray) -> None:
    X = np.atleast_2d(X)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"x{i + 1}" for i in range(X.shape[1])])
        for row in X:
            w.writerow([repr(float(v)) for v in row])
