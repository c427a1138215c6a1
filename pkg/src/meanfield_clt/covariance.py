"""Fluctuation vectors, the complex covariance matrix and its Gaussian.

For observables O_1..O_k and the Bogoliubov pair (U, V) at time t

    g_j = U (O_j phi_t) + J (V (O_j phi_t))
    Sigma_ij = <g_i, g_j> - <g_i, phi_0> <phi_0, g_j>      (i <= j)

with Sigma_ji = Sigma_ij copied, not conjugated.  Re Sigma is positive
semidefinite; Im Sigma vanishes when the observables commute.

Fourier convention: f(x) = int fhat(tau) exp(i tau x) dtau, so that
E f(G) = int fhat(tau) E exp(i tau G) dtau.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .bogoliubov import BogoliubovPair, BogoliubovSeries
from .space import SingleParticleSpace

__all__ = [
    "CovarianceError",
    "FluctuationVector",
    "CovarianceMatrix",
    "GaussianExpectation",
    "fluctuation_vector",
    "covariance_matrix",
    "covariance_at",
    "covariance_series",
    "gaussian_charfn",
    "gaussian_density",
    "gaussian_expectation",
    "sqrt_det",
]

PSD_ABORT = -1e-8
DENSITY_MIN_EIG = 1e-10


class CovarianceError(ValueError):
    pass


@dataclass(frozen=True)
class FluctuationVector:
    g: np.ndarray
    O: np.ndarray
    t: float
    overlap: float  # real part of <phi_0, g>
    overlap_imag: float


def fluctuation_vector(space: SingleParticleSpace, pair: BogoliubovPair, phi_t, O, t: float | None = None) -> FluctuationVector:
    if t is not None and abs(t - pair.t) > 1e-12:
        raise CovarianceError(f"Bogoliubov pair is at t={pair.t}, fluctuation vector requested at t={t}")
    phi_t = np.asarray(phi_t, dtype=complex)
    if pair.phi_t is not None and np.max(np.abs(phi_t - pair.phi_t)) > 1e-12 * max(1.0, np.max(np.abs(phi_t))):
        raise CovarianceError("mean-field state does not belong to the time of the Bogoliubov pair")
    O = np.asarray(O, dtype=complex)
    h = O @ phi_t
    g = pair.U @ h + space.conj(pair.V @ h)
    ov = space.inner(pair.phi_0, g)
    return FluctuationVector(g, O, pair.t, ov.real, ov.imag)


@dataclass(frozen=True)
class CovarianceMatrix:
    sigma: np.ndarray
    t: float
    commuting: bool
    labels: tuple = field(default=())

    @property
    def k(self) -> int:
        return self.sigma.shape[0]

    @property
    def P(self) -> np.ndarray:
        return self.sigma.real

    @property
    def R(self) -> np.ndarray:
        return self.sigma.imag

    @property
    def eigs_P(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.P)

    def to_json(self) -> dict:
        return {
            "t": float(self.t),
            "k": int(self.k),
            "re": self.P.tolist(),
            "im": self.R.tolist(),
            "eigs_reP": self.eigs_P.tolist(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def _commute(O1, O2, tol=1e-12) -> bool:
    c = O1 @ O2 - O2 @ O1
    return bool(np.max(np.abs(c), initial=0.0) <= tol * max(1.0, np.max(np.abs(O1)) * np.max(np.abs(O2))))


def covariance_matrix(space: SingleParticleSpace, gs, phi_0, labels=()) -> CovarianceMatrix:
    gs = list(gs)
    if not gs:
        raise CovarianceError("need at least one fluctuation vector")
    t = gs[0].t
    if any(abs(x.t - t) > 1e-12 for x in gs):
        raise CovarianceError("fluctuation vectors belong to different times")
    k = len(gs)
    S = np.empty((k, k), dtype=complex)
    proj = [space.inner(x.g, phi_0) for x in gs]
    for i in range(k):
        for j in range(i, k):
            S[i, j] = space.inner(gs[i].g, gs[j].g) - proj[i] * np.conj(proj[j])
            S[j, i] = S[i, j]
    lo = np.linalg.eigvalsh(S.real).min()
    if lo < PSD_ABORT:
        raise CovarianceError(f"Re Sigma has eigenvalue {lo:.3e} < 0 at t={t}")
    commuting = all(_commute(a.O, b.O) for a, b in itertools.combinations(gs, 2))
    return CovarianceMatrix(S, t, commuting, tuple(labels))


def covariance_at(space: SingleParticleSpace, series: BogoliubovSeries, observables, t: float, labels=()) -> CovarianceMatrix:
    pair = series.pair(t)
    gs = [fluctuation_vector(space, pair, pair.phi_t, O) for O in observables]
    return covariance_matrix(space, gs, pair.phi_0, labels)


def covariance_series(space: SingleParticleSpace, series: BogoliubovSeries, observables) -> np.ndarray:
    """Sigma at every node of the Bogoliubov run, shape (n+1, k, k)."""
    return np.stack([covariance_at(space, series, observables, t).sigma for t in series.times])


# --------------------------------------------------------------------------
# limiting Gaussian
# --------------------------------------------------------------------------


def gaussian_charfn(sigma, tau) -> np.ndarray | complex:
    """exp(-1/2 tau^T Sigma tau); tau may carry leading batch axes."""
    S = np.atleast_2d(np.asarray(sigma, dtype=complex))
    tau = np.asarray(tau, dtype=float)
    if tau.ndim == 0:
        tau = tau[None]
    q = np.einsum("...i,ij,...j->...", tau, S, tau)
    out = np.exp(-0.5 * q)
    return complex(out) if out.ndim == 0 else out


def sqrt_det(sigma) -> complex:
    """sqrt(det Sigma) on the branch of the factorization

    Sigma = P^(1/2) (1 + i Kappa) P^(1/2),  Kappa = P^(-1/2) R P^(-1/2),

    i.e. sqrt(det P) * prod_j sqrt(1 + i kappa_j) with the principal root
    (each factor has real part 1, so no branch cut is ever crossed).
    """
    S = np.atleast_2d(np.asarray(sigma, dtype=complex))
    P, R = S.real, S.imag
    w, Q = np.linalg.eigh(P)
    if w.min() < DENSITY_MIN_EIG:
        raise CovarianceError(
            f"Re Sigma is not strictly positive (smallest eigenvalue {w.min():.3e}); "
            "use gaussian_charfn, which needs no inverse"
        )
    Pm = Q @ np.diag(w**-0.5) @ Q.T
    kappa = np.linalg.eigvalsh(Pm @ R @ Pm)
    return complex(np.sqrt(np.prod(w)) * np.prod(np.sqrt(1 + 1j * kappa)))


def gaussian_density(sigma, x) -> np.ndarray | complex:
    S = np.atleast_2d(np.asarray(sigma, dtype=complex))
    k = S.shape[0]
    root = sqrt_det(S)
    Sinv = np.linalg.inv(S)
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    q = np.einsum("...i,ij,...j->...", x, Sinv, x)
    out = np.exp(-0.5 * q) / (np.sqrt((2 * np.pi) ** k) * root)
    return complex(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class GaussianExpectation:
    value: complex
    error_estimate: float
    warnings: tuple


def _tensor_quadrature(S, tau, fhat) -> complex:
    k = len(fhat)
    grids = np.meshgrid(*([tau] * k), indexing="ij")
    pts = np.stack(grids, axis=-1)
    weights = np.full(tau.shape, tau[1] - tau[0])
    weights[0] *= 0.5
    weights[-1] *= 0.5
    integrand = gaussian_charfn(S, pts)
    for j, fj in enumerate(fhat):
        shape = [1] * k
        shape[j] = -1
        integrand = integrand * (fj * weights).reshape(shape)
    return complex(np.sum(integrand))


def gaussian_expectation(sigma, fhat, tau, tail_tol: float = 1e-8) -> GaussianExpectation:
    """int prod_j fhat_j(tau_j) exp(-1/2 tau^T Sigma tau) dtau on a uniform grid.

    ``tau`` is a uniform 1-d grid shared by all axes with an odd number of
    points; the error estimate is the difference to the same rule on every
    second grid point.
    """
    S = np.atleast_2d(np.asarray(sigma, dtype=complex))
    tau = np.asarray(tau, dtype=float)
    fhat = [np.asarray(f, dtype=complex) for f in fhat]
    if len(fhat) != S.shape[0]:
        raise CovarianceError("need one sampled transform per observable")
    if any(f.shape != tau.shape for f in fhat):
        raise CovarianceError("transforms must be sampled on the tau grid")
    if tau.size < 5 or tau.size % 2 == 0:
        raise CovarianceError("tau grid needs an odd number (>= 5) of points")
    if not np.allclose(np.diff(tau), tau[1] - tau[0], rtol=1e-10, atol=0):
        raise CovarianceError("tau grid must be uniform")
    warnings = []
    for j, f in enumerate(fhat):
        peak = np.max(np.abs(f))
        if peak > 0 and max(abs(f[0]), abs(f[-1])) > tail_tol * peak:
            warnings.append(f"transform {j} does not decay at the ends of the tau grid")
    fine = _tensor_quadrature(S, tau, fhat)
    coarse = _tensor_quadrature(S, tau[::2], [f[::2] for f in fhat])
    return GaussianExpectation(fine, float(abs(fine - coarse)), tuple(warnings))
