"""Finite-dimensional single-particle spaces.

Three backends share one interface:

* ``GridSpace``: values on a uniform position grid of a d-dimensional torus.
  Kinetic energy is the Fourier multiplier of -Laplacian, convolutions go
  through the FFT and the inner product carries the quadrature weight h**d.
* ``FourierModeSpace``: plane waves e_k(x) = exp(2 pi i k x / L) / sqrt(L),
  |k| <= k_max.  Complex conjugation maps e_k to e_{-k}.
* ``ModeSpace``: an abstract orthonormal basis described only by its kinetic
  matrix, its two-body tensor

      W[a, b, c, d] = int int conj(e_a(x)) conj(e_b(y)) V(x - y) e_c(x) e_d(y)

  and the permutation ``conj_perm`` describing complex conjugation.

On a finite-dimensional space every potential is bounded, so the operator
inequality V**2 <= D (1 - Laplacian) and the regularity conditions on the
observables hold automatically.  Units: hbar = 1 and the mass factor is
absorbed, so the kinetic energy of e_k is (2 pi k / L)**2.

All mode-space products such as (V * (conj(phi) f)) phi are evaluated by the
defining contraction of W (or an equivalent discrete convolution for plane
waves), never by a detour through a position grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "Kernel",
    "SingleParticleSpace",
    "GridSpace",
    "FourierModeSpace",
    "ModeSpace",
    "make_grid_space",
    "make_fourier_mode_space",
    "make_cosine_mode_space",
    "make_mode_space",
    "convolve_potential",
    "conjugate",
    "mean_field",
    "observable",
    "SpaceError",
]

HERMITIAN_RTOL = 1e-12


class SpaceError(ValueError):
    """Raised for inconsistent single-particle space input."""


# --------------------------------------------------------------------------
# interaction kernels
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Kernel:
    """A real, even pair potential on the torus.

    ``name`` is one of ``zero``, ``gaussian`` (``v0``, ``sigma``), ``cosine``
    (``v0``, ``n``) or ``tabulated`` (``samples`` on the lattice offsets
    ``j * L / M``, j = 0..M-1, one axis per dimension).
    """

    name: str = "zero"
    v0: float = 0.0
    sigma: float = 1.0
    n: int = 1
    samples: tuple | None = None

    def __post_init__(self):
        if self.name not in ("zero", "gaussian", "cosine", "tabulated"):
            raise SpaceError(f"unknown kernel {self.name!r}")
        if self.name == "tabulated":
            if self.samples is None:
                raise SpaceError("tabulated kernel needs samples")
            arr = np.asarray(self.samples, dtype=float)
            _check_even_samples(arr)
        if self.name == "gaussian" and self.sigma <= 0:
            raise SpaceError("gaussian kernel needs sigma > 0")

    @property
    def is_zero(self) -> bool:
        return self.name == "zero" or (self.name != "tabulated" and self.v0 == 0.0)

    def on_lattice(self, d: int, M: int, L: float) -> np.ndarray:
        """Sample V at the lattice offsets (shape (M,)*d), exactly even."""
        shape = (M,) * d
        if self.name == "zero":
            return np.zeros(shape)
        if self.name == "tabulated":
            arr = np.asarray(self.samples, dtype=float)
            if arr.shape != shape:
                raise SpaceError(f"tabulated kernel has shape {arr.shape}, grid needs {shape}")
            return arr.copy()
        # |signed offset| so that the samples at j and -j are computed by
        # identical floating-point operations
        offs = np.abs((np.arange(M) + M // 2) % M - M // 2)
        axes = np.meshgrid(*([offs * (L / M)] * d), indexing="ij")
        if self.name == "cosine":
            return self.v0 * sum(np.cos(2 * np.pi * self.n * x / L) for x in axes)
        total = np.zeros(shape)
        images = range(-3, 4)
        for shift in np.ndindex(*([len(images)] * d)):
            r2 = sum((x + images[s] * L) ** 2 for x, s in zip(axes, shift))
            total += np.exp(-r2 / (2 * self.sigma**2))
        return self.v0 * total

    def fourier(self, q: np.ndarray, L: float) -> np.ndarray:
        """Fourier coefficients int_0^L V(x) exp(-2 pi i q x / L) dx (1-d)."""
        q = np.asarray(q)
        if self.name == "zero":
            return np.zeros(q.shape)
        if self.name == "cosine":
            return np.where(np.abs(q) == self.n, self.v0 * L / 2, 0.0)
        if self.name == "gaussian":
            kq = 2 * np.pi * q / L
            return self.v0 * self.sigma * np.sqrt(2 * np.pi) * np.exp(-0.5 * (kq * self.sigma) ** 2)
        arr = np.asarray(self.samples, dtype=float)
        if arr.ndim != 1:
            raise SpaceError("mode spaces are one-dimensional; tabulated kernel must be 1-d")
        M = arr.size
        if np.any(np.abs(q) > M // 2 - 1):
            raise SpaceError(
                f"kernel Fourier coefficient needed at |q| = {int(np.max(np.abs(q)))}, "
                f"tabulated range covers |q| <= {M // 2 - 1}"
            )
        vhat = np.fft.fft(arr).real * (L / M)
        return vhat[np.asarray(q) % M]


def _check_even_samples(arr: np.ndarray) -> None:
    flipped = arr
    for ax in range(arr.ndim):
        flipped = np.roll(np.flip(flipped, axis=ax), 1, axis=ax)
    bad = np.argwhere(flipped != arr)
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        raise SpaceError(f"tabulated kernel is not even: first asymmetric sample at index {idx}")


# --------------------------------------------------------------------------
# spaces
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SingleParticleSpace:
    """Common interface.  Vectors ("fields") are complex numpy arrays."""

    kernel: Kernel
    kind: str = field(init=False, default="abstract")

    # concrete backends fill these in
    @property
    def dim(self) -> int:
        raise NotImplementedError

    @property
    def weight(self) -> float:
        """Quadrature weight of the inner product."""
        return 1.0

    @property
    def conj_perm(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def kinetic(self) -> np.ndarray:
        raise NotImplementedError

    def apply_kinetic(self, f: np.ndarray) -> np.ndarray:
        return self.kinetic @ f

    def inner(self, f: np.ndarray, g: np.ndarray) -> complex:
        return complex(self.weight * np.vdot(f, g))

    def norm(self, f: np.ndarray) -> float:
        return float(np.sqrt(self.weight * np.vdot(f, f).real))

    def normalize(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=complex)
        return f / self.norm(f)

    def conj(self, f: np.ndarray) -> np.ndarray:
        """Antilinear J: (Jf)_a = conj(f_{pi(a)}); works on columns too."""
        return np.conj(np.asarray(f)[self.conj_perm])

    def conj_matrix(self, X: np.ndarray) -> np.ndarray:
        """Matrix of J X J: rows and columns permuted by pi, then conjugated."""
        p = self.conj_perm
        return np.conj(X[np.ix_(p, p)])

    def basis_vector(self, a: int) -> np.ndarray:
        e = np.zeros(self.dim, dtype=complex)
        e[a] = 1.0 / np.sqrt(self.weight)
        return e

    def mean_field(self, u, v, w) -> np.ndarray:
        """Return (V * (conj(u) v)) w.  ``v`` or ``w`` may carry columns."""
        raise NotImplementedError


def _fft_axes(d: int) -> tuple[int, ...]:
    return tuple(range(d))


@dataclass(frozen=True, eq=False)
class GridSpace(SingleParticleSpace):
    d: int = 1
    M: int = 8
    L: float = 2 * np.pi

    def __post_init__(self):
        object.__setattr__(self, "kind", "grid")
        ks = 2 * np.pi / self.L * np.fft.fftfreq(self.M, d=1.0 / self.M)
        grids = np.meshgrid(*([ks] * self.d), indexing="ij")
        object.__setattr__(self, "_k2", sum(k**2 for k in grids))
        vlat = self.kernel.on_lattice(self.d, self.M, self.L)
        object.__setattr__(self, "_vlat", vlat)
        object.__setattr__(self, "_vfft", np.fft.fftn(vlat))

    @property
    def dim(self) -> int:
        return self.M**self.d

    @property
    def h(self) -> float:
        return self.L / self.M

    @property
    def weight(self) -> float:
        return self.h**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.M,) * self.d

    @property
    def conj_perm(self) -> np.ndarray:
        return np.arange(self.dim)

    @property
    def k2(self) -> np.ndarray:
        return self._k2

    @property
    def potential_samples(self) -> np.ndarray:
        return self._vlat

    @property
    def points(self) -> np.ndarray:
        x = np.arange(self.M) * self.h
        return np.stack(np.meshgrid(*([x] * self.d), indexing="ij"), axis=-1).reshape(-1, self.d)

    @property
    def kinetic(self) -> np.ndarray:
        cache = self.__dict__.get("_kin")
        if cache is None:
            cache = self.apply_kinetic(np.eye(self.dim, dtype=complex)).real
            cache = 0.5 * (cache + cache.T)
            object.__setattr__(self, "_kin", cache)
        return cache

    def _grid(self, f: np.ndarray) -> np.ndarray:
        return f.reshape(self.shape + f.shape[1:])

    def apply_kinetic(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f)
        g = self._grid(f)
        ax = _fft_axes(self.d)
        k2 = self._k2.reshape(self.shape + (1,) * (f.ndim - 1))
        return np.fft.ifftn(k2 * np.fft.fftn(g, axes=ax), axes=ax).reshape(f.shape)

    def kinetic_propagator(self, f: np.ndarray, tau: float) -> np.ndarray:
        """exp(-i tau K) f by the FFT."""
        ax = _fft_axes(self.d)
        g = np.fft.fftn(self._grid(f), axes=ax)
        return np.fft.ifftn(np.exp(-1j * tau * self._k2) * g, axes=ax).reshape(f.shape)

    def convolve(self, rho: np.ndarray) -> np.ndarray:
        """h**d sum_j V(x_i - x_j) rho_j, periodic, by FFT (columns allowed)."""
        rho = np.asarray(rho)
        ax = _fft_axes(self.d)
        vf = self._vfft.reshape(self.shape + (1,) * (rho.ndim - 1))
        out = np.fft.ifftn(vf * np.fft.fftn(self._grid(rho), axes=ax), axes=ax)
        return self.weight * out.reshape(rho.shape)

    def mean_field(self, u, v, w) -> np.ndarray:
        u, v, w = (np.asarray(x) for x in (u, v, w))
        if v.ndim == 2 and u.ndim == 1:
            u = u[:, None]
        pot = self.convolve(np.conj(u) * v)
        if pot.ndim == 2 and w.ndim == 1:
            w = w[:, None]
        elif pot.ndim == 1 and w.ndim == 2:
            pot = pot[:, None]
        return pot * w


@dataclass(frozen=True, eq=False)
class _TensorSpace(SingleParticleSpace):
    """Shared code of the two mode-space backends."""

    @property
    def W(self) -> np.ndarray:
        raise NotImplementedError

    def mean_field(self, u, v, w) -> np.ndarray:
        u, v, w = (np.asarray(x, dtype=complex) for x in (u, v, w))
        W = self.W
        if v.ndim == 1 and w.ndim == 1:
            return np.einsum("abcd,b,d,c->a", W, np.conj(u), v, w, optimize=True)
        if v.ndim == 2:
            return np.einsum("abcd,b,dn,c->an", W, np.conj(u), v, w, optimize=True)
        return np.einsum("abcd,b,d,cn->an", W, np.conj(u), v, w, optimize=True)


@dataclass(frozen=True, eq=False)
class FourierModeSpace(_TensorSpace):
    L: float = 2 * np.pi
    k_max: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", "fourier-modes")
        if self.k_max < 1:
            raise SpaceError("k_max must be >= 1")
        q = np.arange(-2 * self.k_max, 2 * self.k_max + 1)
        object.__setattr__(self, "_vhat", np.asarray(self.kernel.fourier(q, self.L), dtype=float))

    @property
    def dim(self) -> int:
        return 2 * self.k_max + 1

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.k_max, self.k_max + 1)

    @property
    def conj_perm(self) -> np.ndarray:
        return np.arange(self.dim)[::-1].copy()

    @property
    def kinetic(self) -> np.ndarray:
        return np.diag((2 * np.pi * self.modes / self.L) ** 2).astype(float)

    def vhat(self, q) -> np.ndarray:
        return self._vhat[np.asarray(q) + 2 * self.k_max]

    @property
    def W(self) -> np.ndarray:
        cache = self.__dict__.get("_W")
        if cache is None:
            k = self.modes
            k1, k2, k3, k4 = np.meshgrid(k, k, k, k, indexing="ij")
            conserve = (k1 + k2) == (k3 + k4)
            cache = np.where(conserve, self.vhat(k1 - k3) / self.L, 0.0).astype(complex)
            object.__setattr__(self, "_W", cache)
        return cache

    def mean_field(self, u, v, w) -> np.ndarray:
        # plane waves: the contraction with W is a pair of discrete convolutions
        u, v, w = (np.asarray(x, dtype=complex) for x in (u, v, w))
        m = self.dim
        uc = np.conj(u)[::-1]
        if v.ndim == 2 or w.ndim == 2:
            n = v.shape[1] if v.ndim == 2 else w.shape[1]
            cols = [
                self.mean_field(u, v[:, j] if v.ndim == 2 else v, w[:, j] if w.ndim == 2 else w)
                for j in range(n)
            ]
            return np.stack(cols, axis=1)
        rho = np.convolve(v, uc)  # index i <-> q = i - (m - 1)
        s = self._vhat[2 * self.k_max - (m - 1): 2 * self.k_max + m] * rho / self.L
        return np.convolve(s, w)[m - 1: 2 * m - 1]


@dataclass(frozen=True, eq=False)
class ModeSpace(_TensorSpace):
    kinetic_matrix: np.ndarray = None
    tensor: np.ndarray = None
    perm: np.ndarray = None
    label: str = "abstract"

    def __post_init__(self):
        object.__setattr__(self, "kind", "abstract")
        K = np.asarray(self.kinetic_matrix, dtype=complex)
        m = K.shape[0]
        if K.shape != (m, m):
            raise SpaceError("kinetic matrix must be square")
        W = np.zeros((m,) * 4, dtype=complex) if self.tensor is None else np.asarray(self.tensor, dtype=complex)
        if W.shape != (m,) * 4:
            raise SpaceError(f"interaction tensor must have shape {(m,) * 4}")
        p = np.arange(m) if self.perm is None else np.asarray(self.perm, dtype=int)
        if sorted(p.tolist()) != list(range(m)) or np.any(p[p] != np.arange(m)):
            raise SpaceError("conj_perm must be an involutive permutation")
        _check_hermitian(K, "kinetic")
        scale = max(np.max(np.abs(W)), 1.0)
        if np.max(np.abs(W - W.transpose(1, 0, 3, 2))) > 1e-12 * scale:
            raise SpaceError("interaction tensor violates W_abcd = W_badc")
        if np.max(np.abs(W - np.conj(W.transpose(2, 3, 0, 1)))) > 1e-12 * scale:
            raise SpaceError("interaction tensor violates W_abcd = conj(W_cdab)")
        object.__setattr__(self, "kinetic_matrix", K)
        object.__setattr__(self, "tensor", W)
        object.__setattr__(self, "perm", p)
        # J K J = K is required for a real kinetic energy
        if np.max(np.abs(np.conj(K[np.ix_(p, p)]) - K)) > HERMITIAN_RTOL * max(np.max(np.abs(K)), 1.0):
            raise SpaceError("kinetic matrix does not commute with complex conjugation")

    @property
    def dim(self) -> int:
        return self.kinetic_matrix.shape[0]

    @property
    def conj_perm(self) -> np.ndarray:
        return self.perm

    @property
    def kinetic(self) -> np.ndarray:
        return self.kinetic_matrix

    @property
    def W(self) -> np.ndarray:
        return self.tensor


def _check_hermitian(A: np.ndarray, what: str) -> None:
    scale = max(np.max(np.abs(A)), 1.0)
    if np.max(np.abs(A - A.conj().T)) > HERMITIAN_RTOL * scale:
        raise SpaceError(f"{what} matrix is not Hermitian")


# --------------------------------------------------------------------------
# constructors and free functions
# --------------------------------------------------------------------------


def _as_kernel(V) -> Kernel:
    if V is None:
        return Kernel()
    if isinstance(V, Kernel):
        return V
    if isinstance(V, dict):
        V = dict(V)
        if "samples" in V and V["samples"] is not None:
            V["samples"] = _to_tuple(V["samples"])
        return Kernel(**V)
    raise SpaceError(f"cannot interpret kernel {V!r}")


def _to_tuple(x):
    if isinstance(x, (list, tuple, np.ndarray)):
        return tuple(_to_tuple(y) for y in x)
    return float(x)


def make_grid_space(d: int = 1, M: int = 8, L: float = 2 * np.pi, V=None) -> GridSpace:
    if d not in (1, 2, 3):
        raise SpaceError("d must be 1, 2 or 3")
    if M < 4 or M & (M - 1):
        raise SpaceError("M must be a power of two and at least 4")
    if L <= 0:
        raise SpaceError("L must be positive")
    return GridSpace(kernel=_as_kernel(V), d=d, M=M, L=float(L))


def make_fourier_mode_space(L: float = 2 * np.pi, k_max: int = 1, V=None) -> FourierModeSpace:
    if L <= 0:
        raise SpaceError("L must be positive")
    return FourierModeSpace(kernel=_as_kernel(V), L=float(L), k_max=int(k_max))


def make_mode_space(kinetic, tensor=None, conj_perm=None, V=None, label="abstract") -> ModeSpace:
    return ModeSpace(kernel=_as_kernel(V), kinetic_matrix=kinetic, tensor=tensor, perm=conj_perm, label=label)


def make_cosine_mode_space(L: float = 2 * np.pi, n_max: int = 1, V=None, quad_points: int | None = None) -> ModeSpace:
    """Real basis 1/sqrt(L), sqrt(2/L) cos(2 pi n x / L) for n = 1..n_max.

    This is the even sector of the plane-wave space; with n_max = 1 it is the
    two-mode model used for the many-body studies.  The tensor W is evaluated
    by trapezoidal quadrature, which is exact for the trigonometric
    polynomials involved once the grid resolves all products.
    """
    kern = _as_kernel(V)
    m = n_max + 1
    M = quad_points or max(64, 8 * (n_max + 1))
    if kern.name == "tabulated":
        M = len(kern.samples)
    x = np.arange(M) * (L / M)
    basis = [np.full(M, 1 / np.sqrt(L))] + [np.sqrt(2 / L) * np.cos(2 * np.pi * n * x / L) for n in range(1, m)]
    E = np.array(basis)  # (m, M)
    grid = GridSpace(kernel=kern, d=1, M=M, L=float(L))
    h = L / M
    # W[a,b,c,d] = h * sum_x e_a e_c (x) * (V * (e_b e_d))(x)
    pair = E[:, None, :] * E[None, :, :]  # (b, d, x)
    conv = np.stack([grid.convolve(pair[b].T).T for b in range(m)])  # (b, d, x)
    W = h * np.einsum("acx,bdx->abcd", pair, conv.real)
    W = 0.5 * (W + W.transpose(1, 0, 3, 2))
    W = 0.5 * (W + W.transpose(2, 3, 0, 1))
    K = np.diag((2 * np.pi * np.arange(m) / L) ** 2)
    return ModeSpace(kernel=kern, kinetic_matrix=K, tensor=W, perm=None, label=f"cosine-modes(n_max={n_max})")


def conjugate(space: SingleParticleSpace, f: np.ndarray) -> np.ndarray:
    """J f = conj(f) expressed in the space's basis."""
    return space.conj(f)


def mean_field(space: SingleParticleSpace, u, v, w) -> np.ndarray:
    """(V * (conj(u) v)) w, projected on the space."""
    return space.mean_field(u, v, w)


def convolve_potential(space: SingleParticleSpace, rho, atol: float = 1e-10):
    """V * rho for a real density.

    On grids ``rho`` holds density values and the result is V * rho sampled on
    the grid.  On mode spaces a density is given by a Hermitian one-body
    matrix gamma (rho(x) = sum gamma_db e_d(x) conj(e_b(x))) and the result
    is the matrix of the multiplication operator V * rho in the mode basis.
    """
    rho = np.asarray(rho)
    if isinstance(space, GridSpace):
        if np.max(np.abs(np.imag(rho)), initial=0.0) > atol:
            raise SpaceError("density has an imaginary part; check normalization upstream")
        return space.convolve(np.real(rho)).real
    m = space.dim
    if rho.shape != (m, m):
        raise SpaceError(f"mode-space density must be an {m}x{m} one-body matrix")
    if np.max(np.abs(rho - rho.conj().T)) > atol:
        raise SpaceError("density matrix is not Hermitian (density not real)")
    return np.einsum("abcd,db->ac", space.W, rho)


def observable(matrix, label: str | None = None) -> np.ndarray:
    """Validate a Hermitian observable matrix and return it as complex array."""
    O = np.asarray(matrix, dtype=complex)
    if O.ndim != 2 or O.shape[0] != O.shape[1]:
        raise SpaceError(f"observable {label or ''} must be a square matrix")
    _check_hermitian(O, f"observable {label or ''}".strip())
    return O


def pauli(which: str) -> np.ndarray:
    return {
        "x": np.array([[0, 1], [1, 0]], dtype=complex),
        "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
        "z": np.array([[1, 0], [0, -1]], dtype=complex),
    }[which]


def hop_observable(m: int, a: int, b: int, kind: str = "x") -> np.ndarray:
    """e_a e_b^* + h.c. (kind x) or -i e_a e_b^* + h.c. (kind y)."""
    O = np.zeros((m, m), dtype=complex)
    c = 1.0 if kind == "x" else -1j
    O[a, b] += c
    O[b, a] += np.conj(c)
    return O


def number_observable(m: int, a: int) -> np.ndarray:
    O = np.zeros((m, m), dtype=complex)
    O[a, a] = 1.0
    return O


def multiplication_observable(space: GridSpace, values: Sequence[float]) -> np.ndarray:
    return np.diag(np.asarray(values, dtype=complex))
