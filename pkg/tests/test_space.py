import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meanfield_clt.space import (
    Kernel,
    SpaceError,
    conjugate,
    convolve_potential,
    make_cosine_mode_space,
    make_fourier_mode_space,
    make_grid_space,
    make_mode_space,
    mean_field,
)


def periodic_gaussian(x, L, v0, sigma, images=6):
    return v0 * sum(np.exp(-((x + n * L) ** 2) / (2 * sigma**2)) for n in range(-images, images + 1))


def brute_convolution(space, rho, V):
    """h sum_j V(x_i - x_j) rho_j with V evaluated pointwise."""
    x = space.points[:, 0]
    return space.h * np.array([np.sum(V(xi - x) * rho) for xi in x])


def test_free_grid_kinetic_spectrum():
    sp = make_grid_space(1, 8, 2 * np.pi)
    ev = np.sort(np.linalg.eigvalsh(sp.kinetic))
    assert np.allclose(ev, [0, 1, 1, 4, 4, 9, 9, 16], atol=1e-12)


def test_kinetic_hermitian():
    for sp in (make_grid_space(2, 8, 3.0), make_fourier_mode_space(2.0, 3), make_cosine_mode_space(n_max=3)):
        K = sp.kinetic
        assert np.max(np.abs(K - K.conj().T)) <= 1e-12 * np.max(np.abs(K))


def test_cosine_kernel_even_on_grid():
    sp = make_grid_space(1, 16, 2 * np.pi, {"name": "cosine", "v0": 1.0, "n": 1})
    v = sp.potential_samples
    assert np.array_equal(v, v[(-np.arange(16)) % 16])


def test_gaussian_kernel_even_in_2d():
    sp = make_grid_space(2, 8, 2.5, {"name": "gaussian", "v0": 1.3, "sigma": 0.4})
    v = sp.potential_samples
    idx = (-np.arange(8)) % 8
    assert np.array_equal(v, v[np.ix_(idx, idx)])


def test_grid_convolution_matches_direct_sum(rng):
    sp = make_grid_space(1, 8, 1.0, {"name": "gaussian", "v0": 1.0, "sigma": 0.2})
    rho = rng.normal(size=8)
    ref = brute_convolution(sp, rho, lambda x: periodic_gaussian(x, 1.0, 1.0, 0.2))
    assert np.max(np.abs(sp.convolve(rho) - ref)) < 1e-12


def test_convolve_potential_random_density(rng):
    sp = make_grid_space(1, 32, 2 * np.pi, {"name": "gaussian", "v0": 0.7, "sigma": 0.8})
    rho = rng.random(32)
    ref = brute_convolution(sp, rho, lambda x: periodic_gaussian(x, 2 * np.pi, 0.7, 0.8))
    assert np.max(np.abs(convolve_potential(sp, rho) - ref)) < 1e-12


def test_convolve_potential_zero_kernel(rng):
    sp = make_grid_space(1, 16, 2 * np.pi)
    assert np.all(convolve_potential(sp, rng.random(16)) == 0)


def test_cosine_kernel_kills_constant_density():
    sp = make_grid_space(1, 16, 2 * np.pi, {"name": "cosine", "v0": 1.0, "n": 1})
    out = convolve_potential(sp, np.full(16, 1 / (2 * np.pi)))
    assert np.max(np.abs(out)) < 1e-15


def test_convolve_potential_rejects_complex_density():
    sp = make_grid_space(1, 8)
    with pytest.raises(SpaceError, match="imaginary"):
        convolve_potential(sp, np.ones(8) + 1e-6j)


def test_mode_space_density_matrix():
    # gamma = |phi><phi| gives the matrix of multiplication by V*|phi|^2
    sp = make_fourier_mode_space(2 * np.pi, 2, {"name": "gaussian", "v0": 1.0, "sigma": 0.7})
    phi = sp.normalize(np.arange(1, 6) * np.exp(0.3j * np.arange(5)))
    M = convolve_potential(sp, np.outer(phi, phi.conj()))
    f = np.linspace(-1, 1, 5) + 0.2j
    assert np.allclose(M @ f, sp.mean_field(phi, phi, f), atol=1e-14)
    with pytest.raises(SpaceError, match="Hermitian"):
        convolve_potential(sp, np.triu(np.ones((5, 5))))


def test_free_fourier_space():
    sp = make_fourier_mode_space(2 * np.pi, 1)
    assert np.all(sp.W == 0)
    assert np.allclose(sp.kinetic, np.diag([1.0, 0.0, 1.0]))


def test_fourier_tensor_matches_double_integral():
    L, v0 = 2 * np.pi, 0.8
    sp = make_fourier_mode_space(L, 1, {"name": "cosine", "v0": v0, "n": 1})
    M = 32
    x = np.arange(M) * L / M
    X, Y = np.meshgrid(x, x, indexing="ij")
    Vxy = v0 * np.cos(X - Y)
    e = {k: np.exp(1j * k * x) / np.sqrt(L) for k in (-1, 0, 1)}
    ks = sp.modes
    h = L / M
    for a, b, c, d in np.ndindex(3, 3, 3, 3):
        k1, k2, k3, k4 = ks[[a, b, c, d]]
        integrand = np.conj(e[k1])[:, None] * np.conj(e[k2])[None, :] * Vxy * e[k3][:, None] * e[k4][None, :]
        ref = h * h * integrand.sum()
        assert abs(sp.W[a, b, c, d] - ref) < 1e-13
        if k1 + k2 != k3 + k4:
            assert sp.W[a, b, c, d] == 0


def test_fourier_tensor_symmetries():
    sp = make_fourier_mode_space(2 * np.pi, 2, {"name": "gaussian", "v0": 1.0, "sigma": 0.5})
    W = sp.W
    assert np.array_equal(W, W.transpose(1, 0, 3, 2))
    assert np.allclose(W, np.conj(W.transpose(2, 3, 0, 1)), atol=0)


def test_fourier_mean_field_matches_tensor_contraction(rng):
    sp = make_fourier_mode_space(2 * np.pi, 3, {"name": "gaussian", "v0": 1.2, "sigma": 0.6})
    u, v, w = (rng.normal(size=7) + 1j * rng.normal(size=7) for _ in range(3))
    ref = np.einsum("abcd,b,d,c->a", sp.W, np.conj(u), v, w)
    assert np.allclose(sp.mean_field(u, v, w), ref, atol=1e-14)
    cols = rng.normal(size=(7, 4)) + 0j
    ref_cols = np.einsum("abcd,b,dn,c->an", sp.W, np.conj(u), cols, w)
    assert np.allclose(sp.mean_field(u, cols, w), ref_cols, atol=1e-14)


def test_grid_mean_field_is_pointwise_product(rng):
    sp = make_grid_space(1, 16, 2 * np.pi, {"name": "gaussian", "v0": 1.0, "sigma": 1.0})
    u, v, w = (rng.normal(size=16) + 1j * rng.normal(size=16) for _ in range(3))
    ref = brute_convolution(sp, np.conj(u) * v, lambda x: periodic_gaussian(x, 2 * np.pi, 1.0, 1.0)) * w
    assert np.allclose(mean_field(sp, u, v, w), ref, atol=1e-12)


def test_cosine_modes_are_even_sector_of_plane_waves():
    V = {"name": "gaussian", "v0": 0.9, "sigma": 0.7}
    cos = make_cosine_mode_space(2 * np.pi, 2, V)
    fou = make_fourier_mode_space(2 * np.pi, 2, V)
    # cosine basis in plane-wave coordinates (k = -2..2)
    T = np.zeros((5, 3))
    T[2, 0] = 1.0
    for n in (1, 2):
        T[2 + n, n] = T[2 - n, n] = 1 / np.sqrt(2)
    W_ref = np.einsum("pqrs,pa,qb,rc,sd->abcd", fou.W, T, T, T, T)
    assert np.allclose(cos.W, W_ref, atol=1e-13)
    assert np.allclose(cos.kinetic, T.T @ fou.kinetic @ T, atol=1e-13)


def test_conjugation_on_grid_and_modes():
    g = make_grid_space(1, 8)
    f = np.linspace(0, 1, 8)
    assert np.array_equal(conjugate(g, f), f)
    sp = make_fourier_mode_space(2 * np.pi, 2)
    for a, k in enumerate(sp.modes):
        e = sp.basis_vector(a)
        assert np.array_equal(conjugate(sp, e), sp.basis_vector(int(np.where(sp.modes == -k)[0][0])))
    p = sp.conj_perm
    assert np.array_equal(p[p], np.arange(sp.dim))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_conjugation_is_antiunitary(seed):
    rng = np.random.default_rng(seed)
    for sp in (make_grid_space(1, 8, 1.7), make_fourier_mode_space(2 * np.pi, 2)):
        f, g = (rng.normal(size=sp.dim) + 1j * rng.normal(size=sp.dim) for _ in range(2))
        lhs = sp.inner(sp.conj(f), sp.conj(g))
        assert abs(lhs - np.conj(sp.inner(f, g))) < 1e-14 * max(1.0, abs(lhs))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mean_field_hermitian_structure(seed):
    # <w', (V*(conj u) u) w> is a Hermitian form in w for a real kernel
    rng = np.random.default_rng(seed)
    sp = make_fourier_mode_space(2 * np.pi, 2, {"name": "gaussian", "v0": 1.0, "sigma": 0.8})
    u, w1, w2 = (rng.normal(size=5) + 1j * rng.normal(size=5) for _ in range(3))
    a = sp.inner(w1, sp.mean_field(u, u, w2))
    b = np.conj(sp.inner(w2, sp.mean_field(u, u, w1)))
    assert abs(a - b) < 1e-12


def test_tabulated_kernel_rejects_asymmetry():
    s = np.array([1.0, 0.5, 0.2, 0.3])
    with pytest.raises(SpaceError, match=r"index \(1,\)"):
        Kernel("tabulated", samples=tuple(s))
    ok = Kernel("tabulated", samples=(1.0, 0.5, 0.2, 0.5))
    sp = make_grid_space(1, 4, 1.0, ok)
    assert np.array_equal(sp.potential_samples, [1.0, 0.5, 0.2, 0.5])


def test_mode_space_validation():
    K = np.diag([0.0, 1.0])
    W = np.zeros((2,) * 4)
    W[0, 1, 0, 0] = 1.0
    with pytest.raises(SpaceError, match="W_abcd = W_badc"):
        make_mode_space(K, W)
    with pytest.raises(SpaceError, match="involutive"):
        make_mode_space(np.eye(3), conj_perm=[1, 2, 0])
    with pytest.raises(SpaceError, match="Hermitian"):
        make_mode_space(np.array([[0, 1], [0, 0]]))


def test_constructor_validation():
    with pytest.raises(SpaceError):
        make_grid_space(4, 8)
    with pytest.raises(SpaceError):
        make_grid_space(1, 12)
    with pytest.raises(SpaceError):
        make_fourier_mode_space(-1.0, 1)
    with pytest.raises(SpaceError):
        Kernel("yukawa")
