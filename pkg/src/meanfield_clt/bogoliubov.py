"""Bogoliubov transformation Theta(t;0) along a Hartree trajectory.

With D f = K f + (V * |phi|^2) f + (V * (conj(phi) f)) phi and
B f = (V * (conj(phi) f)) conj(phi) the generator is

    A(t) = [[D, -J B J], [B, -J D J]]

and Theta = [[U, J V J], [V, J U J]] solves  d/dt Theta = SIGN * i Theta A(t)
with Theta(0) = 1.  The sign is fixed by requiring both the free closed form
U(t;0) = exp(+i t K) and the pair identity U phi_t + J (V phi_t) = phi_0.
Differentiating the pair identity along the Hartree flow, the terms cancel
only for SIGN = +1; the tests check both consequences.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .hartree import HartreeTrajectory, steps_for
from .space import SingleParticleSpace

__all__ = [
    "BogoliubovError",
    "GeneratorBlocks",
    "BogoliubovPair",
    "BogoliubovSeries",
    "THETA_SIGN",
    "apply_D",
    "apply_B",
    "assemble_generator",
    "generator_matrix",
    "propagate_theta",
    "symplectic_residuals",
]

# +1 selects d/dt Theta = +i Theta A, i.e. i d/dt Theta = -Theta A.
THETA_SIGN = +1

INTEGRATORS = ("rk4", "midpoint-magnus", "magnus4")
# commutator-free fourth-order Magnus scheme on the Gauss-Legendre nodes
_GAUSS = (0.5 - np.sqrt(3) / 6, 0.5 + np.sqrt(3) / 6)
_CF4 = ((3 - 2 * np.sqrt(3)) / 12, (3 + 2 * np.sqrt(3)) / 12)

GENERATOR_TOL = 1e-8
R12_TOL = 1e-8
R3_TOL = 1e-6


class BogoliubovError(RuntimeError):
    pass


def _check_norm(space, phi):
    nrm = space.norm(phi)
    if abs(nrm - 1) > 1e-8:
        raise BogoliubovError(f"mean-field state not normalized (norm {nrm!r})")


def apply_D(space: SingleParticleSpace, phi, f) -> np.ndarray:
    _check_norm(space, phi)
    f = np.asarray(f, dtype=complex)
    return space.apply_kinetic(f) + space.mean_field(phi, phi, f) + space.mean_field(phi, f, phi)


def apply_B(space: SingleParticleSpace, phi, f) -> np.ndarray:
    _check_norm(space, phi)
    return space.mean_field(phi, np.asarray(f, dtype=complex), space.conj(phi))


@dataclass(frozen=True)
class GeneratorBlocks:
    D: np.ndarray
    B: np.ndarray
    t: float = 0.0


def assemble_generator(space: SingleParticleSpace, phi, t: float = 0.0, check: bool = True) -> GeneratorBlocks:
    eye = np.eye(space.dim, dtype=complex)
    D = apply_D(space, phi, eye)
    B = apply_B(space, phi, eye)
    if check:
        scale = max(1.0, np.max(np.abs(D)))
        herm = np.max(np.abs(D - D.conj().T))
        p = space.conj_perm
        sym = np.max(np.abs(B.T - B[np.ix_(p, p)]), initial=0.0)
        if herm > GENERATOR_TOL * scale or sym > GENERATOR_TOL * scale:
            raise BogoliubovError(
                f"generator invariants violated at t={t}: D hermiticity {herm:.3e}, B symmetry {sym:.3e}"
            )
    return GeneratorBlocks(D, B, t)


def generator_matrix(space: SingleParticleSpace, blocks: GeneratorBlocks) -> np.ndarray:
    D, B = blocks.D, blocks.B
    return np.block([[D, -space.conj_matrix(B)], [B, -space.conj_matrix(D)]])


@dataclass(frozen=True)
class BogoliubovPair:
    U: np.ndarray
    V: np.ndarray
    t: float
    phi_t: np.ndarray
    phi_0: np.ndarray
    residuals: dict


def symplectic_residuals(space: SingleParticleSpace, U, V, phi_t, phi_0) -> dict:
    m = U.shape[0]
    r1 = np.linalg.norm(U.conj().T @ U - V.conj().T @ V - np.eye(m))
    r2 = np.linalg.norm(U.conj().T @ space.conj_matrix(V) - V.conj().T @ space.conj_matrix(U))
    r3 = space.norm(U @ phi_t + space.conj(V @ phi_t) - phi_0)
    return {"r1": float(r1), "r2": float(r2), "r3": float(r3)}


@dataclass(frozen=True, eq=False)
class BogoliubovSeries:
    """Theta(t;0) at the output nodes t = 0, dt, 2 dt, ..."""

    traj: HartreeTrajectory
    times: np.ndarray
    U: np.ndarray  # (n+1, m, m)
    V: np.ndarray
    residuals: np.ndarray  # (n+1, 3)
    integrator: str

    def index_of(self, t: float) -> int:
        dt = self.times[1] - self.times[0] if len(self.times) > 1 else 1.0
        i = int(round(t / dt))
        if i < 0 or i >= len(self.times) or abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise BogoliubovError(f"t={t!r} is not an output node of the Bogoliubov run")
        return i

    def pair(self, t: float) -> BogoliubovPair:
        i = self.index_of(t)
        r = dict(zip(("r1", "r2", "r3"), map(float, self.residuals[i])))
        return BogoliubovPair(self.U[i], self.V[i], float(self.times[i]), self.traj.at(self.times[i]), self.traj.states[0], r)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "r1", "r2", "r3"])
            for t, r in zip(self.times, self.residuals):
                w.writerow([f"{x:.16e}" for x in (t, *r)])


def propagate_theta(traj: HartreeTrajectory, dt: float | None = None, integrator: str = "magnus4", check: bool = True) -> BogoliubovSeries:
    space = traj.space
    m = space.dim
    dt = traj.dt if dt is None else dt
    ratio = dt / traj.dt
    if ratio < 1 - 1e-9 or abs(ratio - round(ratio)) > 1e-9:
        raise BogoliubovError("Bogoliubov step must be an integer multiple of the trajectory step")
    n = steps_for(traj.T, dt)
    if integrator not in INTEGRATORS:
        raise BogoliubovError(f"unknown integrator {integrator!r}")

    def A(t):
        return 1j * THETA_SIGN * generator_matrix(space, assemble_generator(space, traj.at(t), t))

    theta = np.eye(2 * m, dtype=complex)
    Us = np.empty((n + 1, m, m), dtype=complex)
    Vs = np.empty((n + 1, m, m), dtype=complex)
    res = np.empty((n + 1, 3))
    phi0 = traj.states[0]
    A_left = A(0.0) if integrator == "rk4" else None
    for i in range(n + 1):
        t = i * dt
        if i > 0:
            t0 = (i - 1) * dt
            if integrator == "rk4":
                A_mid = A(t0 + 0.5 * dt)
                A_right = A(t)
                k1 = theta @ A_left
                k2 = (theta + 0.5 * dt * k1) @ A_mid
                k3 = (theta + 0.5 * dt * k2) @ A_mid
                k4 = (theta + dt * k3) @ A_right
                theta = theta + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                A_left = A_right
            elif integrator == "midpoint-magnus":
                theta = theta @ expm(dt * A(t0 + 0.5 * dt))
            else:
                A1 = A(t0 + _GAUSS[0] * dt)
                A2 = A(t0 + _GAUSS[1] * dt)
                # Theta' = Theta A: the earlier exponential multiplies first
                theta = theta @ expm(dt * (_CF4[1] * A1 + _CF4[0] * A2)) @ expm(dt * (_CF4[0] * A1 + _CF4[1] * A2))
        Us[i] = theta[:m, :m]
        Vs[i] = theta[m:, :m]
        r = symplectic_residuals(space, Us[i], Vs[i], traj.at(t), phi0)
        res[i] = (r["r1"], r["r2"], r["r3"])
        if check and (r["r1"] > 10 * R12_TOL or r["r2"] > 10 * R12_TOL or r["r3"] > 10 * R3_TOL):
            raise BogoliubovError(f"symplectic residuals {r} exceed 10x tolerance at t={t:.6g}")
    times = np.arange(n + 1) * dt
    return BogoliubovSeries(traj, times, Us, Vs, res, integrator)
