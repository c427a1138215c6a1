"""Lanczos propagator exp(-i t H) v for Hermitian H with adaptive substeps."""

from __future__ import annotations

import numpy as np

__all__ = ["KrylovError", "expm_krylov"]


class KrylovError(RuntimeError):
    pass


def _lanczos(H, v, m):
    n = v.shape[0]
    m = min(m, n)
    Q = np.empty((m + 1, n), dtype=complex)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    Q[0] = v
    for j in range(m):
        w = H @ Q[j]
        alpha[j] = np.vdot(Q[j], w).real
        w = w - alpha[j] * Q[j] - (beta[j - 1] * Q[j - 1] if j > 0 else 0)
        # full reorthogonalization keeps the small basis numerically orthonormal
        w -= Q[: j + 1].T @ (Q[: j + 1].conj() @ w)
        beta[j] = np.linalg.norm(w)
        if beta[j] < 1e-13 * max(1.0, abs(alpha[j])):
            return Q[: j + 1], alpha[: j + 1], beta[: j], 0.0
        Q[j + 1] = w / beta[j]
    return Q[:m], alpha, beta[: m - 1], beta[m - 1]


def expm_krylov(H, v, t: float, tol: float = 1e-10, m: int = 30, max_substeps: int = 100000):
    """Return exp(-i t H) v.

    ``H`` needs only ``H @ x``.  Each substep builds an m-dimensional Krylov
    space and accepts the largest step (halving from the remaining time) whose
    a posteriori error estimate ||w|| beta_m |e_m^T exp(-i s T) e_1| is below
    ``tol``.  Raises KrylovError when the step size collapses.
    """
    w = np.array(v, dtype=complex)
    if t == 0 or not np.any(w):
        return w
    sign = np.sign(t)
    remaining = abs(t)
    step = remaining
    substeps = 0
    while remaining > 0:
        nrm = np.linalg.norm(w)
        Q, alpha, beta, beta_last = _lanczos(H, w / nrm, m)
        T = np.diag(alpha) + np.diag(beta, 1) + np.diag(beta, -1)
        evals, evecs = np.linalg.eigh(T)
        c0 = evecs[0].conj()
        step = min(step * 2, remaining)
        while True:
            y = evecs @ (np.exp(-1j * sign * step * evals) * c0)
            err = nrm * beta_last * abs(y[-1])
            if err <= tol or beta_last == 0.0:
                break
            step *= 0.5
            if step < 1e-14 * abs(t):
                raise KrylovError(
                    f"krylov step collapsed after {substeps} substeps at t={sign * (abs(t) - remaining):.6g} "
                    f"(error estimate {err:.3e})"
                )
        w = nrm * (Q.T @ y)
        remaining -= step
        if remaining < 1e-15 * abs(t):
            remaining = 0.0
        substeps += 1
        if substeps > max_substeps:
            raise KrylovError(f"krylov exceeded {max_substeps} substeps")
    return w
