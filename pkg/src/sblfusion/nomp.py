"""Matching-pursuit baseline with continuous refinement over the same
parameterized dictionary, for head-to-head comparison against the Bayesian
solver. Noise covariance is assumed fully known. Single sensor only."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.linalg import cho_solve

from .arrays import DegenerateGeometryError, RadarGeometry
from .engine import GridCache
from .numerics import (
    BoundedMaxProblem,
    DegenerateStatsError,
    build_factor_cache,
    cholesky_hermitian,
    maximize_2d,
    stats_from_cache,
    stats_from_cache_batch,
)


@dataclass
class NompConfig:
    """Detection threshold (linear), candidate grid and refinement schedule."""

    tau: float
    grid: np.ndarray
    bounds: Optional[tuple] = None
    refine_rounds: int = 3
    max_components: int = 20
    optimizer_tol: float = 1e-6
    optimizer_max_evals: int = 500

    def __post_init__(self):
        self.grid = np.atleast_2d(np.asarray(self.grid, dtype=float))
        if self.tau <= 0.0:
            raise ValueError("tau must be positive (linear scale)")
        if self.grid.shape[0] == 0:
            raise ValueError("grid must be nonempty")
        if self.bounds is None:
            lo = self.grid.min(axis=0)
            hi = self.grid.max(axis=0)
            pad = 0.05 * np.maximum(hi - lo, 1.0)
            self.bounds = ((lo[0] - pad[0], hi[0] + pad[0]),
                           (lo[1] - pad[1], hi[1] + pad[1]))


def tau_from_db(threshold_db: float) -> float:
    return 10.0 ** (threshold_db / 10.0)


@dataclass
class NompEstimate:
    locations: np.ndarray        # (K, 2)
    amplitudes: np.ndarray       # (K,) complex
    residual_power: float        # whitened residual power at exit


def _whitened(vec, lam, env):
    return lam * vec if env is None else lam * (env @ vec)


def _statistic_objective(geom, residual, lam, env):
    """Whitened matched-filter statistic |psi^H W y_res|^2 / (psi^H W psi);
    identical to the Bayesian component SNR under an empty model."""
    cache = build_factor_cache(np.zeros((residual.size, 0), dtype=complex),
                               np.zeros(0), lam, env, residual)

    def objective(theta):
        try:
            s, mu = stats_from_cache(cache, geom.atom(theta))
        except (DegenerateStatsError, DegenerateGeometryError):
            return -1e30
        return abs(mu) ** 2 / s

    return cache, objective


def _least_squares_fit(atoms, snapshot, lam, env):
    """Whitened least-squares amplitudes and the resulting residual."""
    if atoms.shape[1] == 0:
        return np.zeros(0, dtype=complex), snapshot.copy()
    weighted = _whitened(atoms, lam, env)
    gram = atoms.conj().T @ weighted
    chol = cholesky_hermitian(gram)
    amps = cho_solve((chol, True), weighted.conj().T @ snapshot)
    return amps, snapshot - atoms @ amps


def nomp_run(snapshot, geometry: RadarGeometry, config: NompConfig,
             noise_precision: float = 1.0,
             noise_envelope: Optional[np.ndarray] = None,
             grid_cache: Optional[GridCache] = None) -> NompEstimate:
    """Greedy detection: grid-search the whitened matched-filter statistic on
    the residual, refine continuously, accept while the statistic exceeds
    tau, least-squares re-fit all amplitudes, and cyclically re-refine the
    accepted components."""
    snapshot = np.asarray(snapshot, dtype=complex).ravel()
    lam, env = noise_precision, noise_envelope
    if grid_cache is None:
        grid_cache = GridCache(config.grid, [geometry], [env])
    grid_atoms = grid_cache.atoms[0]
    grid_quads = grid_cache.noise_quads[0]

    locations: List[np.ndarray] = []
    atoms = np.zeros((snapshot.size, 0), dtype=complex)
    amps = np.zeros(0, dtype=complex)
    residual = snapshot.copy()

    def best_on_grid(res):
        cache, objective = _statistic_objective(geometry, res, lam, env)
        s, mu, valid = stats_from_cache_batch(cache, grid_atoms, grid_quads)
        stat = np.where(valid, np.abs(mu) ** 2 / np.where(valid, s, 1.0), -np.inf)
        idx = int(np.argmax(stat))
        return grid_cache.grid[idx], float(stat[idx]), objective

    def refine(init, objective):
        try:
            theta, value = maximize_2d(BoundedMaxProblem(
                objective=objective, bounds=config.bounds, init=init,
                tolerance=config.optimizer_tol,
                max_evals=config.optimizer_max_evals))
            return theta, value
        except ValueError:
            return np.asarray(init, dtype=float), float(objective(init))

    while len(locations) < config.max_components:
        init, stat, objective = best_on_grid(residual)
        if not np.isfinite(stat):
            break
        theta, value = refine(init, objective)
        if value <= config.tau:
            break
        locations.append(theta)
        atoms = np.column_stack([atoms, geometry.atom(theta)])
        amps, residual = _least_squares_fit(atoms, snapshot, lam, env)
        for _ in range(config.refine_rounds):
            for i in range(len(locations)):
                partial = residual + atoms[:, i] * amps[i]
                _, objective_i = _statistic_objective(geometry, partial, lam, env)
                locations[i], _ = refine(locations[i], objective_i)
                atoms[:, i] = geometry.atom(locations[i])
                amps, residual = _least_squares_fit(atoms, snapshot, lam, env)

    residual_power = float(np.real(np.vdot(residual, _whitened(residual, lam, env))))
    return NompEstimate(
        locations=np.array(locations).reshape(-1, 2),
        amplitudes=amps,
        residual_power=residual_power,
    )
