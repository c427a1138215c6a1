"""Bosonic Fock space over a finite mode basis.

Occupation vectors are ordered by total particle number (ascending) and, within
a sector, in descending lexicographic order, so the vacuum comes first in a
truncated basis and |N, 0, ..., 0> first in a fixed-N basis.

Operators are scipy CSR matrices.  Ladder strings such as a*_a a*_b a_d a_c
are built by one vectorized pass over all basis states; states leaving a
truncated basis are dropped, so relations like the CCR hold exactly only
below the truncation edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.integrate import simpson
from scipy.special import gammaln

from .bogoliubov import _CF4, _GAUSS
from .hartree import HartreeTrajectory
from .krylov import expm_krylov
from .space import GridSpace, SingleParticleSpace

__all__ = [
    "FockError",
    "OccupationBasis",
    "SparseOperator",
    "ManyBodyState",
    "fixed_basis",
    "truncated_basis",
    "ladder",
    "ladder_string",
    "number_operator",
    "second_quantize",
    "two_body",
    "build_hamiltonian",
    "product_state",
    "coherent_state",
    "evolve_state",
    "weyl",
    "WeylOperator",
    "weyl_cutoff",
    "centered_observables",
    "joint_charfn",
    "joint_charfn_grid",
    "reduced_density",
    "fluctuation_state",
    "fluctuation_phase",
    "QuadraticGenerator",
    "quadratic_generator",
    "evolve_quadratic",
    "fluctuation_generator",
    "FULL_EIG_MAX",
]

FULL_EIG_MAX = 4000
HERMITIAN_SAMPLES = 100
HERMITIAN_TOL = 1e-12


class FockError(ValueError):
    pass


# --------------------------------------------------------------------------
# bases
# --------------------------------------------------------------------------


def _sector(m: int, n: int) -> np.ndarray:
    """All occupations of m modes with total n, descending lexicographic."""
    if m == 1:
        return np.array([[n]], dtype=np.int64)
    rows = []
    for first in range(n, -1, -1):
        rest = _sector(m - 1, n - first)
        rows.append(np.column_stack([np.full(len(rest), first, dtype=np.int64), rest]))
    return np.vstack(rows)


@dataclass(frozen=True, eq=False)
class OccupationBasis:
    m: int
    kind: str  # "fixed" or "truncated"
    n: int  # particle number (fixed) or n_max (truncated)
    states: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.states.shape[0]

    @property
    def radix(self) -> int:
        return self.n + 1

    @cached_property
    def _codes(self):
        codes = self.encode(self.states)
        order = np.argsort(codes, kind="stable")
        return codes[order], order

    def encode(self, occ: np.ndarray) -> np.ndarray:
        occ = np.asarray(occ, dtype=np.int64)
        weights = self.radix ** np.arange(self.m - 1, -1, -1, dtype=np.int64)
        return occ @ weights

    def lookup(self, occ: np.ndarray) -> np.ndarray:
        """Indices of occupation vectors; -1 where not in the basis."""
        occ = np.atleast_2d(np.asarray(occ, dtype=np.int64))
        valid = np.all(occ >= 0, axis=1) & np.all(occ <= self.n, axis=1)
        tot = occ.sum(axis=1)
        valid &= (tot == self.n) if self.kind == "fixed" else (tot <= self.n)
        out = np.full(len(occ), -1, dtype=np.int64)
        if np.any(valid):
            sorted_codes, order = self._codes
            c = self.encode(np.where(valid[:, None], occ, 0))
            pos = np.clip(np.searchsorted(sorted_codes, c), 0, len(sorted_codes) - 1)
            hit = valid & (sorted_codes[pos] == c)
            out[hit] = order[pos[hit]]
        return out

    def index(self, occ) -> int:
        i = int(self.lookup(np.asarray(occ)[None])[0])
        if i < 0:
            raise FockError(f"occupation {tuple(occ)} is not in the basis")
        return i

    @cached_property
    def totals(self) -> np.ndarray:
        return self.states.sum(axis=1)

    @cached_property
    def sector_slices(self) -> dict:
        out = {}
        for n in np.unique(self.totals):
            idx = np.nonzero(self.totals == n)[0]
            out[int(n)] = slice(int(idx[0]), int(idx[-1]) + 1)
        return out

    def same_as(self, other: "OccupationBasis") -> bool:
        return self is other or (self.m == other.m and self.kind == other.kind and self.n == other.n)

    def vacuum(self) -> np.ndarray:
        if self.kind != "truncated":
            raise FockError("the vacuum lives in a truncated Fock basis")
        v = np.zeros(self.dim, dtype=complex)
        v[0] = 1.0
        return v

    def basis_state(self, occ) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.index(occ)] = 1.0
        return v


def fixed_basis(m: int, N: int) -> OccupationBasis:
    if m < 1 or N < 0:
        raise FockError("need m >= 1 and N >= 0")
    return OccupationBasis(m, "fixed", N, _sector(m, N))


def truncated_basis(m: int, n_max: int) -> OccupationBasis:
    if m < 1 or n_max < 0:
        raise FockError("need m >= 1 and n_max >= 0")
    return OccupationBasis(m, "truncated", n_max, np.vstack([_sector(m, n) for n in range(n_max + 1)]))


# --------------------------------------------------------------------------
# operators
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SparseOperator:
    basis: OccupationBasis
    matrix: sp.csr_matrix
    hermitian: bool = False
    target: OccupationBasis | None = None

    def __post_init__(self):
        if self.target is None:
            object.__setattr__(self, "target", self.basis)
        if self.hermitian:
            self._verify_hermitian()

    def _verify_hermitian(self):
        A = self.matrix.tocoo()
        if A.shape[0] != A.shape[1]:
            raise FockError("hermitian operator must be square")
        if A.nnz == 0:
            return
        rng = np.random.default_rng(12345)
        pick = rng.choice(A.nnz, size=min(HERMITIAN_SAMPLES, A.nnz), replace=False)
        rows, cols, vals = A.row[pick], A.col[pick], A.data[pick]
        csr = self.matrix.tocsr()
        mirror = np.asarray(csr[cols, rows]).ravel()
        scale = max(1.0, np.max(np.abs(A.data)))
        if np.max(np.abs(vals - np.conj(mirror))) > HERMITIAN_TOL * scale:
            raise FockError("operator flagged hermitian fails A_ij = conj(A_ji)")

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, x):
        return self.matrix @ x

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def adjoint(self) -> "SparseOperator":
        return SparseOperator(self.target, self.matrix.conj().T.tocsr(), self.hermitian, self.basis)

    def __add__(self, other: "SparseOperator") -> "SparseOperator":
        return SparseOperator(self.basis, (self.matrix + other.matrix).tocsr(), self.hermitian and other.hermitian, self.target)

    def scaled(self, c) -> "SparseOperator":
        herm = self.hermitian and np.isreal(c)
        return SparseOperator(self.basis, (c * self.matrix).tocsr(), bool(herm), self.target)

    @cached_property
    def spectral(self):
        """Cached eigendecomposition (dense) of a hermitian operator."""
        if not self.hermitian:
            raise FockError("spectral decomposition needs a hermitian operator")
        if self.basis.dim > FULL_EIG_MAX:
            raise FockError(f"dimension {self.basis.dim} exceeds {FULL_EIG_MAX} for full diagonalization")
        return np.linalg.eigh(self.dense())

    def sector_spectral(self):
        """Per-sector eigendecompositions for number-conserving operators."""
        cache = self.__dict__.setdefault("_sector_eig", {})
        if not cache:
            M = self.matrix
            for n, sl in self.basis.sector_slices.items():
                block = M[sl, sl].toarray()
                cache[n] = (sl, *np.linalg.eigh(block))
        return cache


def ladder_string(basis: OccupationBasis, ops, target: OccupationBasis | None = None):
    """COO triplets of a product of ladder operators.

    ``ops`` lists (mode, +1 for create / -1 for annihilate) from left to right
    as written; they act right to left.
    """
    target = basis if target is None else target
    occ = basis.states.copy()
    # product of the integer factors, one square root at the end: a*_a a_a
    # then gives n_a exactly and the CCR hold bit for bit
    prod = np.ones(basis.dim)
    for mode, kind in reversed(list(ops)):
        if kind > 0:
            prod = prod * (occ[:, mode] + 1.0)
            occ[:, mode] += 1
        else:
            prod = prod * occ[:, mode]
            # states annihilated here carry zero weight; keep their occupation valid
            occ[:, mode] = np.maximum(occ[:, mode] - 1, 0)
    vals = np.sqrt(prod)
    alive = vals != 0
    cols = np.nonzero(alive)[0]
    rows = target.lookup(occ[alive])
    keep = rows >= 0
    return rows[keep], cols[keep], vals[alive][keep]


def _assemble(basis, terms, target=None, hermitian=False) -> SparseOperator:
    """Sum of coefficient * ladder string."""
    target = basis if target is None else target
    R, C, D = [], [], []
    for coef, ops in terms:
        if coef == 0:
            continue
        r, c, v = ladder_string(basis, ops, target)
        R.append(r)
        C.append(c)
        D.append(coef * v)
    shape = (target.dim, basis.dim)
    if not R:
        M = sp.csr_matrix(shape, dtype=complex)
    else:
        M = sp.csr_matrix(
            (np.concatenate(D).astype(complex), (np.concatenate(R), np.concatenate(C))), shape=shape
        )
        M.sum_duplicates()
        M.eliminate_zeros()
    return SparseOperator(basis, M, hermitian, target)


def ladder(basis: OccupationBasis, a: int, kind: str) -> SparseOperator:
    if not 0 <= a < basis.m:
        raise FockError(f"mode {a} out of range")
    if kind == "create":
        if basis.kind == "fixed":
            raise FockError("creation does not leave a fixed-N sector invariant; use a truncated basis")
        return _assemble(basis, [(1.0, [(a, +1)])])
    if kind == "annihilate":
        target = fixed_basis(basis.m, basis.n - 1) if basis.kind == "fixed" and basis.n > 0 else basis
        return _assemble(basis, [(1.0, [(a, -1)])], target)
    raise FockError(f"unknown ladder kind {kind!r}")


def field_annihilate(basis: OccupationBasis, f) -> SparseOperator:
    """a(f) = sum conj(f_a) a_a (antilinear in f)."""
    f = np.asarray(f, dtype=complex)
    target = fixed_basis(basis.m, basis.n - 1) if basis.kind == "fixed" else basis
    return _assemble(basis, [(np.conj(f[a]), [(a, -1)]) for a in range(basis.m)], target)


def field_create(basis: OccupationBasis, f) -> SparseOperator:
    f = np.asarray(f, dtype=complex)
    if basis.kind == "fixed":
        raise FockError("creation needs a truncated basis")
    return _assemble(basis, [(f[a], [(a, +1)]) for a in range(basis.m)])


def number_operator(basis: OccupationBasis) -> SparseOperator:
    tot = basis.totals.astype(complex)
    return SparseOperator(basis, sp.diags(tot).tocsr(), True)


def second_quantize(basis: OccupationBasis, O, hermitian: bool | None = None) -> SparseOperator:
    """dGamma(O) = sum_ab O_ab a*_a a_b."""
    O = np.asarray(O, dtype=complex)
    if O.shape != (basis.m, basis.m):
        raise FockError(f"observable has shape {O.shape}, basis has {basis.m} modes")
    if hermitian is None:
        hermitian = bool(np.allclose(O, O.conj().T, atol=1e-12, rtol=0))
    terms = [(O[a, b], [(a, +1), (b, -1)]) for a in range(basis.m) for b in range(basis.m)]
    return _assemble(basis, terms, hermitian=hermitian)


def two_body(basis: OccupationBasis, W, coef: float = 1.0) -> SparseOperator:
    """coef * sum W_abcd a*_a a*_b a_d a_c."""
    W = np.asarray(W, dtype=complex)
    idx = np.argwhere(np.abs(W) > 0)
    terms = [(coef * W[a, b, c, d], [(a, +1), (b, +1), (d, -1), (c, -1)]) for a, b, c, d in idx]
    return _assemble(basis, terms, hermitian=True)


def _require_mode_space(space: SingleParticleSpace, basis: OccupationBasis):
    if isinstance(space, GridSpace):
        raise FockError("many-body operators need a mode space (Fourier or abstract), not a grid")
    if space.dim != basis.m:
        raise FockError(f"space has {space.dim} modes, basis has {basis.m}")


def build_hamiltonian(space: SingleParticleSpace, N: int, basis: OccupationBasis) -> SparseOperator:
    """H_N = dGamma(K) + 1/(2N) sum W_abcd a*_a a*_b a_d a_c."""
    _require_mode_space(space, basis)
    if N < 1:
        raise FockError("N must be positive")
    H = second_quantize(basis, space.kinetic, hermitian=True)
    if not space.kernel.is_zero or np.any(space.W):
        H = H + two_body(basis, space.W, 1.0 / (2 * N))
    return H


# --------------------------------------------------------------------------
# states
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ManyBodyState:
    basis: OccupationBasis
    vector: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))


def _log_amplitudes(states, c, log_prefactor):
    """Coefficients exp(log_prefactor(n)) * prod c_a^n_a computed in logs."""
    c = np.asarray(c, dtype=complex)
    mag = np.abs(c)
    zero = mag == 0
    logmag = np.where(zero, 0.0, np.log(np.where(zero, 1.0, mag)))
    phase = np.angle(c)
    dead = np.any(states[:, zero] > 0, axis=1) if np.any(zero) else np.zeros(len(states), bool)
    logabs = log_prefactor + states @ logmag
    out = np.exp(logabs + 1j * (states @ phase))
    out[dead] = 0.0
    return out


def product_state(phi, N: int, basis: OccupationBasis, space: SingleParticleSpace | None = None) -> ManyBodyState:
    """phi^{(x)N}: coefficient sqrt(N!/prod n_a!) prod phi_a^n_a."""
    if basis.kind != "fixed" or basis.n != N:
        raise FockError("product states live in the fixed-N basis with the same N")
    phi = np.asarray(phi, dtype=complex)
    if phi.shape != (basis.m,):
        raise FockError("mean-field state has the wrong number of modes")
    nrm = space.norm(phi) if space is not None else float(np.linalg.norm(phi))
    if abs(nrm - 1) > 1e-8:
        raise FockError(f"projection defect {abs(nrm - 1):.3e} > 1e-8: phi is not normalized in the mode span")
    S = basis.states
    logpre = 0.5 * (gammaln(N + 1) - gammaln(S + 1).sum(axis=1))
    return ManyBodyState(basis, _log_amplitudes(S, phi, logpre))


def weyl_cutoff(f) -> int:
    """Smallest n_max with n_max >= ||f||^2 + 10 ||f|| + 20."""
    r = float(np.linalg.norm(f))
    return int(math.ceil(r * r + 10 * r + 20))


def _check_cutoff(basis, f):
    if basis.kind != "truncated":
        raise FockError("Weyl operators need a truncated Fock basis")
    need = weyl_cutoff(f)
    if basis.n < need:
        raise FockError(f"n_max={basis.n} too small for displacement of norm {np.linalg.norm(f):.4g}; need n_max >= {need}")


def coherent_state(basis: OccupationBasis, f) -> ManyBodyState:
    """W(f) Omega = exp(-||f||^2/2) sum_n prod f_a^n_a / sqrt(n_a!)."""
    f = np.asarray(f, dtype=complex)
    _check_cutoff(basis, f)
    S = basis.states
    logpre = -0.5 * np.vdot(f, f).real - 0.5 * gammaln(S + 1).sum(axis=1)
    return ManyBodyState(basis, _log_amplitudes(S, f, logpre))


def evolve_state(H: SparseOperator, psi, t: float, method: str = "auto", tol: float = 1e-10) -> ManyBodyState:
    """exp(-i t H) psi."""
    vec = psi.vector if isinstance(psi, ManyBodyState) else np.asarray(psi, dtype=complex)
    basis = H.basis
    if not H.hermitian:
        raise FockError("evolve_state needs a hermitian generator")
    if method == "auto":
        method = "full-eig" if basis.dim <= FULL_EIG_MAX or basis.kind == "truncated" else "krylov"
    if method == "full-eig":
        if basis.kind == "truncated" and _conserves_number(H):
            out = np.empty_like(vec)
            for sl, w, Q in H.sector_spectral().values():
                out[sl] = Q @ (np.exp(-1j * t * w) * (Q.conj().T @ vec[sl]))
        else:
            w, Q = H.spectral
            out = Q @ (np.exp(-1j * t * w) * (Q.conj().T @ vec))
    elif method == "krylov":
        out = expm_krylov(H.matrix, vec, t, tol=tol)
    else:
        raise FockError(f"unknown method {method!r}")
    return ManyBodyState(basis, out)


def _conserves_number(H: SparseOperator) -> bool:
    cache = H.__dict__.get("_conserves")
    if cache is None:
        A = H.matrix.tocoo()
        tot = H.basis.totals
        cache = bool(np.all(tot[A.row] == tot[A.col]))
        object.__setattr__(H, "_conserves", cache)
    return cache


# --------------------------------------------------------------------------
# Weyl operators
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WeylOperator:
    """W(f) = exp(a*(f) - a(f)) = exp(-i G), G = i (a*(f) - a(f)) hermitian."""

    basis: OccupationBasis
    f: np.ndarray
    generator: SparseOperator

    def apply(self, psi, tol: float = 1e-12) -> np.ndarray:
        if not np.any(self.f):
            return np.array(psi, dtype=complex)
        return expm_krylov(self.generator.matrix, np.asarray(psi, dtype=complex), 1.0, tol=tol)

    def apply_adjoint(self, psi, tol: float = 1e-12) -> np.ndarray:
        if not np.any(self.f):
            return np.array(psi, dtype=complex)
        return expm_krylov(self.generator.matrix, np.asarray(psi, dtype=complex), -1.0, tol=tol)

    def matrix(self) -> np.ndarray:
        w, Q = np.linalg.eigh(self.generator.dense())
        return (Q * np.exp(-1j * w)) @ Q.conj().T


def weyl(basis: OccupationBasis, f) -> WeylOperator:
    f = np.asarray(f, dtype=complex)
    _check_cutoff(basis, f)
    G = (field_create(basis, f).matrix - field_annihilate(basis, f).matrix) * 1j
    return WeylOperator(basis, f, SparseOperator(basis, G.tocsr(), True))


# --------------------------------------------------------------------------
# characteristic functions and reduced densities
# --------------------------------------------------------------------------


def centered_observables(basis: OccupationBasis, observables, phi_t, N: int):
    """N^{-1/2} dGamma(O_j - <phi_t, O_j phi_t>) on a fixed-N basis."""
    out = []
    for O in observables:
        O = np.asarray(O, dtype=complex)
        mean = np.vdot(phi_t, O @ phi_t).real
        Oc = O - mean * np.eye(basis.m)
        out.append(second_quantize(basis, Oc, hermitian=True).scaled(1.0 / np.sqrt(N)))
    return out


def joint_charfn(psi, observables, phi_t, tau, N: int, method: str = "krylov") -> complex:
    """<psi, e^{i tau_1 O_1} ... e^{i tau_k O_k} psi> with centered, rescaled O_j."""
    basis = psi.basis
    ops = centered_observables(basis, observables, phi_t, N)
    tau = np.asarray(tau, dtype=float)
    v = psi.vector
    for op, s in zip(reversed(ops), reversed(tau)):
        if method == "krylov":
            v = expm_krylov(op.matrix, v, -s, tol=1e-13)
        else:
            w, Q = op.spectral
            v = Q @ (np.exp(1j * s * w) * (Q.conj().T @ v))
    val = np.vdot(psi.vector, v)
    if abs(val) > 1 + 1e-9:
        raise FockError(f"characteristic function modulus {abs(val)} exceeds 1")
    return complex(val)


def joint_charfn_grid(psi, observables, phi_t, tau_axis, N: int) -> np.ndarray:
    """Characteristic function on the tensor grid tau_axis^k.

    Uses one cached eigendecomposition per observable and contracts the
    factors right to left, so the whole grid costs a few dense products.
    Returns an array of shape (len(tau_axis),) * k.
    """
    ops = centered_observables(psi.basis, observables, phi_t, N)
    tau_axis = np.asarray(tau_axis, dtype=float)
    k = len(ops)
    # V holds e^{i tau_j O_j} ... e^{i tau_k O_k} psi, trailing axes = (tau_j..tau_k)
    V = psi.vector.reshape(-1, 1)
    for op in reversed(ops):
        w, Q = op.spectral
        coeff = Q.conj().T @ V  # (dim, rest)
        phases = np.exp(1j * np.outer(w, tau_axis))  # (dim, n_tau)
        V = Q @ (coeff[:, None, :] * phases[:, :, None]).reshape(len(w), -1)
    vals = psi.vector.conj() @ V
    return vals.reshape((len(tau_axis),) * k)


def _expect(psi_vec, ops_terms, basis):
    M = _assemble(basis, ops_terms).matrix
    return np.vdot(psi_vec, M @ psi_vec)


def reduced_density(psi, k: int = 1) -> np.ndarray:
    """k-particle reduced density matrix (trace one) from ladder correlators.

    k=1: gamma_ab = <a*_b a_a> / N.
    k=2: gamma_(ab),(cd) = <a*_c a*_d a_b a_a> / (N (N-1)), an m^2 x m^2 matrix.
    """
    basis = psi.basis
    if basis.kind != "fixed":
        raise FockError("reduced densities are defined on a fixed-N basis")
    N, m, v = basis.n, basis.m, psi.vector
    if k == 1:
        g = np.empty((m, m), dtype=complex)
        for a in range(m):
            for b in range(m):
                g[a, b] = _expect(v, [(1.0, [(b, +1), (a, -1)])], basis) / N
        return g
    if k == 2:
        if N < 2:
            raise FockError("two-particle density needs N >= 2")
        g = np.empty((m * m, m * m), dtype=complex)
        for a in range(m):
            for b in range(m):
                for c in range(m):
                    for d in range(m):
                        g[a * m + b, c * m + d] = _expect(v, [(1.0, [(c, +1), (d, +1), (b, -1), (a, -1)])], basis)
        return g / (N * (N - 1))
    raise FockError("k must be 1 or 2")


# --------------------------------------------------------------------------
# fluctuation dynamics
# --------------------------------------------------------------------------


def _interaction_energy(space, phi):
    """<|phi|^2, V * |phi|^2>."""
    return space.inner(phi, space.mean_field(phi, phi, phi)).real


def fluctuation_phase(traj: HartreeTrajectory, N: int, t: float) -> float:
    """int_0^t -(N/2) <rho_s, V * rho_s> ds by Simpson's rule on the trajectory."""
    i = traj.index_of(t)
    if i == 0:
        return 0.0
    c = np.array([-0.5 * N * _interaction_energy(traj.space, traj.states[j]) for j in range(i + 1)])
    return float(simpson(c, x=traj.times[: i + 1]))


def fluctuation_state(space, traj: HartreeTrajectory, N: int, t: float, basis: OccupationBasis,
                      H: SparseOperator | None = None, phase: str = "generator") -> ManyBodyState:
    """U_N(t;0) Omega = W*(sqrt(N) phi_t) exp(-i H_N t) W(sqrt(N) phi_0) Omega.

    With ``phase="generator"`` the result is multiplied by exp(i int_0^t c),
    c(s) = -(N/2) <rho_s, V * rho_s>.  Conjugating H_N by the Weyl operators
    produces exactly this scalar besides the operator part, so the corrected
    vector is the one generated by the operator part alone; that is the
    object compared with the quadratic dynamics.  ``phase="weyl"`` returns the
    plain product.
    """
    _require_mode_space(space, basis)
    if basis.kind != "truncated":
        raise FockError("fluctuation dynamics need a truncated Fock basis")
    phi0 = traj.states[0]
    phit = traj.states[traj.index_of(t)]
    sq = np.sqrt(N)
    psi = coherent_state(basis, sq * phi0).vector
    _check_cutoff(basis, sq * phit)
    if t != 0:
        H = build_hamiltonian(space, N, basis) if H is None else H
        psi = evolve_state(H, psi, t, method="full-eig").vector
    psi = weyl(basis, sq * phit).apply_adjoint(psi)
    if phase == "generator":
        psi = psi * np.exp(1j * fluctuation_phase(traj, N, t))
    elif phase != "weyl":
        raise FockError(f"unknown phase convention {phase!r}")
    return ManyBodyState(basis, psi)


def pair_kernel(space: SingleParticleSpace, phi) -> np.ndarray:
    """P_ab = sum_cd W_abcd phi_c phi_d, the kernel of V(x-y) phi(x) phi(y)."""
    return np.einsum("abcd,c,d->ab", space.W, phi, phi)


class QuadraticGenerator:
    """Assembles L(t) = dGamma(D_t) + 1/2 sum (P_ab a*_a a*_b + h.c.) quickly.

    All m^2 + m^2 building blocks are laid out on one common sparsity pattern
    so that a new generator costs a single small matrix-vector product.
    """

    def __init__(self, space: SingleParticleSpace, basis: OccupationBasis):
        _require_mode_space(space, basis)
        self.space, self.basis = space, basis
        m = basis.m
        self.pairs = [(a, b) for a in range(m) for b in range(m)]
        blocks = [_assemble(basis, [(1.0, [(a, +1), (b, -1)])]).matrix for a, b in self.pairs]
        blocks += [_assemble(basis, [(1.0, [(a, +1), (b, +1)])]).matrix for a, b in self.pairs]
        blocks += [_assemble(basis, [(1.0, [(b, -1), (a, -1)])]).matrix for a, b in self.pairs]
        pattern = sum(abs(B) for B in blocks).tocsr()
        pattern.data[:] = 1.0
        pattern.sort_indices()
        self.pattern = pattern
        self.stack = np.vstack([self._on_pattern(B) for B in blocks])

    def _on_pattern(self, B):
        P = self.pattern
        ncol = P.shape[1]
        rows = np.repeat(np.arange(P.shape[0]), np.diff(P.indptr))
        keys = rows.astype(np.int64) * ncol + P.indices
        B = B.tocoo()
        pos = np.searchsorted(keys, B.row.astype(np.int64) * ncol + B.col)
        out = np.zeros(P.nnz, dtype=complex)
        np.add.at(out, pos, B.data)
        return out

    def coefficients(self, phi) -> np.ndarray:
        from .bogoliubov import assemble_generator

        D = assemble_generator(self.space, phi, check=False).D
        P = pair_kernel(self.space, phi)
        d = np.array([D[a, b] for a, b in self.pairs])
        p = np.array([0.5 * P[a, b] for a, b in self.pairs])
        return np.concatenate([d, p, np.conj(p)])

    def matrix(self, phi) -> sp.csr_matrix:
        M = self.pattern.copy().astype(complex)
        M.data = self.coefficients(phi) @ self.stack
        return M

    def operator(self, phi) -> SparseOperator:
        return SparseOperator(self.basis, self.matrix(phi), True)


def quadratic_generator(space, basis, phi) -> SparseOperator:
    return QuadraticGenerator(space, basis).operator(phi)


def evolve_quadratic(traj: HartreeTrajectory, basis: OccupationBasis, t: float, psi=None, dt: float | None = None,
                     generator: QuadraticGenerator | None = None, tol: float = 1e-12, norm_abort: float = 1e-5,
                     t0: float = 0.0) -> ManyBodyState:
    """U_inf(t;t0) psi (default psi = vacuum, t0 = 0) by a fourth-order
    commutator-free Magnus scheme; each exponential is applied by the Lanczos
    propagator."""
    gen = QuadraticGenerator(traj.space, basis) if generator is None else generator
    v = basis.vacuum() if psi is None else np.array(psi.vector if isinstance(psi, ManyBodyState) else psi, dtype=complex)
    v0 = np.linalg.norm(v)
    dt = traj.dt if dt is None else dt
    n = int(round((t - t0) / dt))
    if n < 0 or abs(n * dt - (t - t0)) > 1e-9 * max(1.0, t):
        raise FockError(f"dt={dt} does not divide t-t0={t - t0}")
    for i in range(n):
        s = t0 + i * dt
        L1 = gen.matrix(traj.at(s + _GAUSS[0] * dt))
        L2 = gen.matrix(traj.at(s + _GAUSS[1] * dt))
        v = expm_krylov(_CF4[1] * L1 + _CF4[0] * L2, v, dt, tol=tol)
        v = expm_krylov(_CF4[0] * L1 + _CF4[1] * L2, v, dt, tol=tol)
        drift = abs(np.linalg.norm(v) - v0)
        if drift > norm_abort:
            raise FockError(f"norm drift {drift:.3e} at t={s + dt:.4g}; raise n_max")
    return ManyBodyState(basis, v)


def fluctuation_generator(space, basis: OccupationBasis, phi, N: int) -> SparseOperator:
    """Operator part of the fluctuation generator at a given phi:

    L_inf + N^{-1/2} sum W_abcd (conj(phi_b) a*_a a_d a_c + phi_d a*_a a*_b a_c)
          + 1/(2N) sum W_abcd a*_a a*_b a_d a_c.
    """
    W = space.W
    L = quadratic_generator(space, basis, phi)
    idx = np.argwhere(np.abs(W) > 0)
    cubic = []
    for a, b, c, d in idx:
        w = W[a, b, c, d] / np.sqrt(N)
        cubic.append((w * np.conj(phi[b]), [(a, +1), (d, -1), (c, -1)]))
        cubic.append((w * phi[d], [(a, +1), (b, +1), (c, -1)]))
    C = _assemble(basis, cubic).matrix
    Q = two_body(basis, W, 1.0 / (2 * N)).matrix
    return SparseOperator(basis, (L.matrix + C + Q).tocsr(), True)
