"""Coefficients xi_N^(l) of the expansion used in the characteristic-function
estimate, their N -> infinity limit and the weighted norms that control them.

    xi_N^(l) = ((1 - l)/l) N^{-1/2} xi_N^(l-1) - (1/l) xi_N^(l-2),  xi^(0)=1, xi^(1)=0
    xi_inf^(2m) = (-1)^m / (2^m m!),  xi_inf^(2m+1) = 0

Values are stored as w_l = sqrt(l!) xi^(l), for which the recursion reads

    w_l = -((l - 1)/sqrt(l)) N^{-1/2} w_{l-1} - sqrt((l - 1)/l) w_{l-2}.

The generating function of xi_N is exp(-sqrt(N) z) (1 + z/sqrt(N))^N, so w_l
oscillates up to the turning point l ~ 4N and then decays faster than any
exponential.  Beyond the turning point the sought sequence is the minimal
solution of the recursion and plain forward iteration is unstable; there the
same recursion is solved as a two-point boundary value problem (w_L+1 = 0,
Olver's method), matched to the forward values below the turning point.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import factorial, lgamma, log, sqrt

import numpy as np
from scipy.linalg import solve_banded

__all__ = [
    "XiError",
    "XiCoefficients",
    "xi_recursion",
    "xi_closed_form",
    "xi_infinity",
    "xi_infinity_closed_form",
    "xi_norms",
    "log_d_N",
    "LMAX_CAP",
]

# support of w_N extends to l ~ 4N; N = 10^4 needs l beyond 4 * 10^4
LMAX_CAP = 2**18
TAIL_TOL = 1e-12
TAIL_PAD = 64


class XiError(ValueError):
    pass


@dataclass(frozen=True)
class XiCoefficients:
    N: float  # np.inf for the limit
    l_max: int
    w: np.ndarray
    method: str

    def xi(self, l: int) -> float:
        """Unscaled coefficient (may underflow/overflow for large l)."""
        return float(self.w[l] / sqrt(factorial(l)))


def _forward(N, l_stop, w):
    c = 1.0 / sqrt(N)
    for l in range(2, l_stop + 1):
        w[l] = -((l - 1) / sqrt(l)) * c * w[l - 1] - sqrt((l - 1) / l) * w[l - 2]


def _tail(N, l0, L, w):
    """Fill w[l0+1..L] from w[l0] with w[L+1] = 0 (minimal solution)."""
    n = L - l0
    if n <= 0:
        return
    l = np.arange(l0 + 2, L + 2, dtype=float)  # equations l = l0+2 .. L+1
    a = (l - 1) / np.sqrt(l * N)
    b = np.sqrt((l - 1) / l)
    # equation l: w_l + a_l w_{l-1} + b_l w_{l-2} = 0, unknowns w_{l0+1..L}
    ab = np.zeros((3, n))
    ab[0, 1:] = 1.0
    ab[1, :] = a
    ab[2, :-1] = b[1:]
    rhs = np.zeros(n)
    rhs[0] = -b[0] * w[l0]
    w[l0 + 1: L + 1] = solve_banded((1, 1), ab, rhs)


def xi_recursion(N: float, l_max: int) -> XiCoefficients:
    if N < 1:
        raise XiError("N must be >= 1")
    if l_max < 2:
        raise XiError("l_max must be >= 2")
    l_switch = min(l_max, max(2, int(3.5 * N)))
    # the artificial condition w_{L+1} = 0 disturbs the last few entries;
    # solving on a padded range pushes that disturbance out of the result
    L = l_max if l_switch == l_max else l_max + TAIL_PAD + l_max // 4
    w = np.zeros(L + 1)
    w[0] = 1.0
    _forward(N, l_switch, w)
    _tail(N, l_switch, L, w)
    method = "forward" if l_switch == l_max else "forward+boundary"
    return XiCoefficients(float(N), l_max, w[: l_max + 1].copy(), method)


def xi_closed_form(N: int, l: int) -> float:
    """sum_j (-1)^j N^{j - l/2} N! / ((N - l + j)! (l - j)! j!).

    The alternating terms cancel catastrophically, so the sum is formed in
    exact rational arithmetic and rounded once.
    """
    N, l = int(N), int(l)
    if l < 0 or N < 1:
        raise XiError("need N >= 1 and l >= 0")
    if l > N:
        raise XiError(f"closed form needs l <= N (got l={l}, N={N})")
    S = Fraction(0)
    falling = 1  # N! / (N - l + j)!, built up from j = l downward
    terms = []
    for j in range(l, -1, -1):
        terms.append((j, falling))
        falling *= N - l + j
    for j, fall in terms:
        S += Fraction((-1) ** j * N**j * fall, factorial(l - j) * factorial(j))
    half = l // 2
    value = float(S / N**half)
    return value / sqrt(N) if l % 2 else value


def xi_infinity(l_max: int) -> XiCoefficients:
    w = np.zeros(l_max + 1)
    w[0] = 1.0
    for l in range(2, l_max + 1, 2):
        w[l] = -sqrt((l - 1) / l) * w[l - 2]
    return XiCoefficients(np.inf, l_max, w, "limit-recursion")


def xi_infinity_closed_form(l: int) -> float:
    """Scaled value sqrt(l!) (-1)^m / (2^m m!) for l = 2m, zero for odd l."""
    if l % 2:
        return 0.0
    m = l // 2
    return (-1) ** m * float(np.exp(0.5 * lgamma(l + 1) - m * log(2) - lgamma(m + 1)))


def log_d_N(N: float) -> float:
    """log d_N with d_N = e^{N/2} N^{-N/2} sqrt(N!)."""
    return 0.5 * N - 0.5 * N * log(N) + 0.5 * lgamma(N + 1)


def _sums(w, winf):
    l = np.arange(len(w), dtype=float)
    apriori = w**2 / (l + 1)
    total = w**2
    diff5 = (w - winf) ** 2 / (l + 1) ** 5
    return apriori, total, diff5


def xi_norms(N: float, l_max: int | None = None) -> dict:
    """apriori = sum w_l^2/(l+1), total = sum w_l^2 (compared with d_N^2) and
    diff5 = sum (w_l(N) - w_l(inf))^2/(l+1)^5.  ``l_max`` is the starting
    cutoff; it is doubled until the upper quarter of every sum contributes
    less than 1e-12."""
    L = l_max or max(64, 1 << int(np.ceil(np.log2(5 * N + 100))))
    if L > LMAX_CAP:
        raise XiError(f"xi norms need l_max >= {L}, above the cap {LMAX_CAP}")
    while True:
        w = xi_recursion(N, L).w
        winf = xi_infinity(L).w
        parts = _sums(w, winf)
        cut = (3 * L) // 4
        tail = max(float(np.sum(p[cut:])) for p in parts)
        if tail < TAIL_TOL:
            break
        if 2 * L > LMAX_CAP:
            raise XiError(f"xi norms not converged by l_max={LMAX_CAP} (tail {tail:.3e})")
        L *= 2
    apriori, total, diff5 = (float(np.sum(p)) for p in parts)
    d2 = float(np.exp(2 * log_d_N(N)))
    return {
        "N": float(N),
        "l_max": int(L),
        "apriori": apriori,
        "total": total,
        "d_N_sq": d2,
        "ratio": total / d2,
        "diff5": diff5,
        "tail": tail,
    }
