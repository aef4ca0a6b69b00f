"""Numerical kernels: bounded derivative-free 2-D maximization, real roots of
real polynomials, jittered Hermitian Cholesky, and the low-rank factor cache
used to evaluate leave-one-out component statistics in O(N K) per probe."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.linalg import cholesky as _scipy_cholesky
from scipy.linalg import LinAlgError, solve_triangular
from scipy.optimize import Bounds, minimize


class NumericalError(RuntimeError):
    """Factorization or root extraction failed beyond recovery."""


class DegenerateStatsError(RuntimeError):
    """Leave-one-out variance is non-positive; component undetectable."""


@dataclass
class BoundedMaxProblem:
    """Maximize a scalar function of an XY point over an axis-aligned box."""

    objective: Callable[[np.ndarray], float]
    bounds: tuple  # ((xmin, xmax), (ymin, ymax))
    init: np.ndarray
    tolerance: float = 1e-6
    max_evals: int = 500


def maximize_2d(problem: BoundedMaxProblem):
    """Bounded simplex search; never returns a value below the objective at
    the initial point.

    Returns
    -------
    argmax : ndarray, shape (2,)
    value : float
    """
    x0 = np.asarray(problem.init, dtype=float).reshape(2)
    f0 = float(problem.objective(x0))
    if not np.isfinite(f0):
        raise ValueError("objective is not finite at the initial point")
    (xlo, xhi), (ylo, yhi) = problem.bounds
    res = minimize(
        lambda x: -problem.objective(x),
        x0,
        method="Nelder-Mead",
        bounds=Bounds([xlo, ylo], [xhi, yhi]),
        options={
            "xatol": problem.tolerance,
            "fatol": 1e-10,
            "maxfev": problem.max_evals,
        },
    )
    value = -float(res.fun)
    if not np.isfinite(value) or value <= f0:
        return x0, f0
    return np.asarray(res.x, dtype=float), value


def _trim_polynomial(coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float).ravel()
    scale = np.max(np.abs(coeffs)) if coeffs.size else 0.0
    if scale == 0.0:
        raise ValueError("all-zero polynomial")
    keep = np.nonzero(np.abs(coeffs) > 1e-12 * scale)[0]
    return coeffs[: keep[-1] + 1]


def positive_real_roots(coeffs, imag_tol: float = 1e-8, pos_tol: float = 1e-12):
    """Positive real roots of a real polynomial given in ascending order.

    Roots come from the companion-matrix eigenvalues; nearly-real complex
    roots (|imag| <= imag_tol * (1 + |real|)) are projected onto the real
    axis, polished by a few Newton steps, deduplicated, and checked by a
    scaled residual.
    """
    coeffs = _trim_polynomial(coeffs)
    if coeffs.size <= 1:
        return []
    raw = np.roots(coeffs[::-1])
    candidates = []
    for root in raw:
        if abs(root.imag) <= imag_tol * (1.0 + abs(root.real)):
            candidates.append(root.real)
    roots = []
    for x in candidates:
        # Newton polish; companion-matrix output is usually already at
        # machine precision, this guards ill-conditioned clusters.
        for _ in range(3):
            p = npoly.polyval(x, coeffs)
            dp = npoly.polyval(x, npoly.polyder(coeffs))
            if dp == 0.0:
                break
            step = p / dp
            if not np.isfinite(step):
                break
            x -= step
        if x <= pos_tol:
            continue
        scale = npoly.polyval(abs(x), np.abs(coeffs))
        if abs(npoly.polyval(x, coeffs)) > 1e-6 * max(scale, 1e-300):
            continue
        if any(abs(x - r) <= 1e-8 * max(abs(x), abs(r)) for r in roots):
            continue
        roots.append(float(x))
    return sorted(roots)


def cholesky_hermitian(mat: np.ndarray, jitter: float = 0.0) -> np.ndarray:
    """Lower Cholesky factor of a Hermitian positive-definite matrix, with
    geometric jitter escalation up to 1e-6 * trace / n on failure."""
    mat = np.asarray(mat)
    n = mat.shape[0]
    if n == 0:
        return mat.reshape(0, 0)
    if not np.allclose(mat, mat.conj().T, rtol=1e-10, atol=1e-10 * max(1.0, abs(mat).max())):
        raise ValueError("matrix is not Hermitian")
    herm = 0.5 * (mat + mat.conj().T)
    scale = max(np.real(np.trace(herm)) / n, 1e-300)
    cap = 1e-6 * scale
    eye = np.eye(n, dtype=herm.dtype)
    current = jitter
    while True:
        try:
            return _scipy_cholesky(herm + current * eye, lower=True)
        except LinAlgError:
            nxt = max(current * 10.0, 1e-14 * scale)
            if current >= cap:
                raise NumericalError(
                    "matrix indefinite beyond jitter cap %.3e" % cap) from None
            current = min(nxt, cap)


@dataclass
class FactorCache:
    """Precomputed factors for leave-one-out statistics of one sensor.

    The whitened residual model satisfies
    ``lam * noise_env @ M = chol_noise @ chol_noise^H - lowrank @ lowrank^H``
    where M is the leave-one-out projection of the active components held in
    the cache. ``resid`` is ``lam * noise_env @ y - lowrank @ lowrank^H @ y``.
    """

    lam: float
    noise_env: Optional[np.ndarray]  # None means identity
    rt: np.ndarray                   # lowrank^H, shape (K, N)
    resid: np.ndarray                # shape (N,)
    chol_amp: np.ndarray             # shape (K, K)
    n: int

    @property
    def lowrank(self) -> np.ndarray:
        return self.rt.conj().T

    @property
    def chol_noise(self) -> np.ndarray:
        if self.noise_env is None:
            return np.sqrt(self.lam) * np.eye(self.n, dtype=complex)
        return cholesky_hermitian(self.lam * self.noise_env)

    def noise_quad(self, atoms: np.ndarray) -> np.ndarray:
        """atom^H (lam * noise_env) atom for one atom or for matrix columns."""
        if self.noise_env is None:
            if atoms.ndim == 1:
                return self.lam * float(np.real(np.vdot(atoms, atoms)))
            return self.lam * np.real(np.einsum("ij,ij->j", atoms.conj(), atoms))
        if atoms.ndim == 1:
            return self.lam * float(np.real(np.vdot(atoms, self.noise_env @ atoms)))
        return self.lam * np.real(
            np.einsum("ij,ij->j", atoms.conj(), self.noise_env @ atoms))


def build_factor_cache(active_atoms: np.ndarray, gammas: np.ndarray,
                       lam: float, noise_env: Optional[np.ndarray],
                       snapshot: np.ndarray) -> FactorCache:
    """Build the factor cache for one sensor from the active dictionary
    columns (N, K), their hyperparameters (K,), the noise precision scale and
    envelope, and the snapshot y.

    Cost is independent of how many positions are probed afterwards.
    """
    snapshot = np.asarray(snapshot).ravel()
    n = snapshot.size
    active_atoms = np.asarray(active_atoms).reshape(n, -1)
    gammas = np.asarray(gammas, dtype=float).ravel()
    k = active_atoms.shape[1]
    if noise_env is None:
        weighted = lam * active_atoms                       # lam*Lv @ Psi
        wy = lam * snapshot
    else:
        weighted = lam * (noise_env @ active_atoms)
        wy = lam * (noise_env @ snapshot)
    if k == 0:
        return FactorCache(lam=lam, noise_env=noise_env,
                           rt=np.zeros((0, n), dtype=complex),
                           resid=wy, chol_amp=np.zeros((0, 0), dtype=complex), n=n)
    amp_prec = active_atoms.conj().T @ weighted + np.diag(gammas)
    chol_amp = cholesky_hermitian(amp_prec)
    rt = solve_triangular(chol_amp, weighted.conj().T, lower=True)
    resid = wy - rt.conj().T @ (rt @ snapshot)
    return FactorCache(lam=lam, noise_env=noise_env, rt=np.ascontiguousarray(rt),
                       resid=resid, chol_amp=chol_amp, n=n)


def stats_from_cache(cache: FactorCache, atom: np.ndarray):
    """Leave-one-out statistics (s, mu) of a candidate atom against the cache.

    Raises
    ------
    DegenerateStatsError
        If the whitened variance denominator is numerically non-positive.
    """
    atom = np.asarray(atom).ravel()
    denom = cache.noise_quad(atom)
    if cache.rt.shape[0]:
        proj = cache.rt @ atom
        denom = denom - float(np.real(np.vdot(proj, proj)))
    if denom <= 1e-300:
        raise DegenerateStatsError("non-positive leave-one-out variance")
    s = 1.0 / denom
    mu = s * complex(np.vdot(atom, cache.resid))
    return s, mu


def stats_from_cache_batch(cache: FactorCache, atoms: np.ndarray,
                           noise_quads: Optional[np.ndarray] = None):
    """Vectorized ``stats_from_cache`` over atom columns.

    Returns (s, mu, valid) arrays; entries with non-positive denominator are
    flagged invalid and hold s = inf, mu = 0.
    """
    if noise_quads is None:
        noise_quads = cache.noise_quad(atoms)
    else:
        noise_quads = cache.lam * noise_quads
    denom = noise_quads.astype(float).copy()
    if cache.rt.shape[0]:
        proj = cache.rt @ atoms
        denom -= np.real(np.einsum("ij,ij->j", proj.conj(), proj))
    valid = denom > 1e-300
    safe = np.where(valid, denom, 1.0)
    s = np.where(valid, 1.0 / safe, np.inf)
    mu = np.where(valid, (atoms.conj().T @ cache.resid) / safe, 0.0)
    return s, mu, valid
