"""Time-dependent Hartree equation i d/dt phi = K phi + (V * |phi|^2) phi."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .space import GridSpace, SingleParticleSpace

__all__ = [
    "HartreeError",
    "HartreeTrajectory",
    "hartree_rhs",
    "hartree_energy",
    "evolve_hartree",
    "steps_for",
]

NORM_ABORT = 1e-6


class HartreeError(RuntimeError):
    pass


def hartree_rhs(space: SingleParticleSpace, c: np.ndarray) -> np.ndarray:
    """Time derivative -i (K c + (V * |c|^2) c)."""
    c = np.asarray(c, dtype=complex)
    return -1j * (space.apply_kinetic(c) + space.mean_field(c, c, c))


def hartree_energy(space: SingleParticleSpace, c: np.ndarray) -> float:
    """<c, K c> + 1/2 <|c|^2, V * |c|^2>."""
    c = np.asarray(c, dtype=complex)
    kin = space.inner(c, space.apply_kinetic(c)).real
    pot = space.inner(c, space.mean_field(c, c, c)).real
    return float(kin + 0.5 * pot)


def steps_for(T: float, dt: float) -> int:
    """Number of steps of size dt covering [0, T]; dt must divide T."""
    if dt <= 0:
        raise HartreeError("dt must be positive")
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise HartreeError(f"dt={dt!r} does not divide T={T!r}")
    return n


@dataclass(frozen=True, eq=False)
class HartreeTrajectory:
    space: SingleParticleSpace
    times: np.ndarray
    states: np.ndarray  # (n+1, m)
    energy: np.ndarray
    norm: np.ndarray
    method: str

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def index_of(self, t: float) -> int:
        i = int(round(t / self.dt))
        if i < 0 or i >= len(self.times) or abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise HartreeError(f"t={t!r} is not a trajectory node")
        return i

    def at(self, t: float) -> np.ndarray:
        """State at time t: exact at nodes, cubic Hermite in between."""
        if t < -1e-12 or t > self.T + 1e-12:
            raise HartreeError(f"t={t!r} outside the trajectory range [0, {self.T}]")
        s = t / self.dt
        i = int(round(s))
        if abs(s - i) < 1e-9:
            return self.states[min(max(i, 0), len(self.times) - 1)]
        i = min(int(np.floor(s)), len(self.times) - 2)
        theta = s - i
        p0, p1 = self.states[i], self.states[i + 1]
        m0 = self.dt * self.derivative(i)
        m1 = self.dt * self.derivative(i + 1)
        h00 = 2 * theta**3 - 3 * theta**2 + 1
        h10 = theta**3 - 2 * theta**2 + theta
        h01 = -2 * theta**3 + 3 * theta**2
        h11 = theta**3 - theta**2
        return h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1

    def derivative(self, i: int) -> np.ndarray:
        cache = self.__dict__.setdefault("_rhs", {})
        if i not in cache:
            cache[i] = hartree_rhs(self.space, self.states[i])
        return cache[i]

    def to_csv(self, path) -> None:
        m = self.states.shape[1]
        header = ["t"] + [f"re_phi_{a}" for a in range(m)] + [f"im_phi_{a}" for a in range(m)] + ["energy", "norm"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for t, s, e, n in zip(self.times, self.states, self.energy, self.norm):
                w.writerow([f"{x:.16e}" for x in [t, *s.real, *s.imag, e, n]])


def _rk4_step(space, c, dt):
    k1 = hartree_rhs(space, c)
    k2 = hartree_rhs(space, c + 0.5 * dt * k1)
    k3 = hartree_rhs(space, c + 0.5 * dt * k2)
    k4 = hartree_rhs(space, c + dt * k3)
    return c + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _strang_step(space: GridSpace, c, dt):
    c = space.kinetic_propagator(c, 0.5 * dt)
    # i d/dt c = (V*|c|^2) c with a real potential leaves |c(x)| fixed, hence
    # the potential is constant during the substep and the flow is exact.
    pot = space.convolve(np.abs(c) ** 2).real
    c = np.exp(-1j * dt * pot) * c
    return space.kinetic_propagator(c, 0.5 * dt)


def evolve_hartree(space: SingleParticleSpace, phi0, T: float, dt: float, method: str = "rk4") -> HartreeTrajectory:
    phi0 = np.asarray(phi0, dtype=complex)
    if phi0.shape != (space.dim,):
        raise HartreeError(f"initial state has shape {phi0.shape}, space has dim {space.dim}")
    if abs(space.norm(phi0) - 1) > 1e-10:
        raise HartreeError(f"initial state not normalized (norm {space.norm(phi0)!r})")
    if method == "strang":
        if not isinstance(space, GridSpace):
            raise HartreeError("strang splitting needs a grid space")
        step = _strang_step
    elif method == "rk4":
        step = _rk4_step
    else:
        raise HartreeError(f"unknown method {method!r}")
    n = steps_for(T, dt)
    states = np.empty((n + 1, space.dim), dtype=complex)
    energy = np.empty(n + 1)
    norm = np.empty(n + 1)
    states[0] = phi0
    energy[0] = hartree_energy(space, phi0)
    norm[0] = space.norm(phi0)
    c = phi0
    for i in range(1, n + 1):
        c = step(space, c, dt)
        states[i] = c
        norm[i] = space.norm(c)
        if abs(norm[i] - 1) > NORM_ABORT:
            raise HartreeError(f"norm drift {abs(norm[i] - 1):.3e} at t={i * dt:.6g}")
        energy[i] = hartree_energy(space, c)
    times = np.arange(n + 1) * dt
    return HartreeTrajectory(space, times, states, energy, norm, method)
