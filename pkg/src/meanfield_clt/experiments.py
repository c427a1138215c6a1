"""Studies comparing exact many-body dynamics with the mean-field predictions.

Every study takes a resolved config (see ``config.resolve``), is
deterministic, parallelizes over N with results gathered in N order, and
returns a ``StudyResult`` holding CSV rows, rate fits and pass/fail checks.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import expm
from scipy.stats import linregress

from . import fock, xi
from .bogoliubov import BogoliubovSeries, propagate_theta
from .covariance import covariance_at, gaussian_charfn
from .hartree import HartreeTrajectory, evolve_hartree
from .space import (
    GridSpace,
    SingleParticleSpace,
    hop_observable,
    make_cosine_mode_space,
    make_fourier_mode_space,
    make_grid_space,
    number_observable,
    observable,
    pauli,
)

__all__ = [
    "StudyError",
    "RateFit",
    "StudyResult",
    "Model",
    "build_space",
    "build_model",
    "parse_observable",
    "fit_rate",
    "product_oracle_t0",
    "product_oracle_grid",
    "tau_axis",
    "clt_convergence_study",
    "berry_esseen_study",
    "density_matrix_rate_study",
    "fluctuation_growth_study",
    "bogoliubov_crosscheck",
    "run_parallel",
    "hartree_report",
    "bogoliubov_report",
    "covariance_report",
    "xi_report",
]


class StudyError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# model assembly
# --------------------------------------------------------------------------


def build_space(cfg_space: dict) -> SingleParticleSpace:
    kernel = {k: v for k, v in cfg_space["kernel"].items() if v is not None}
    kind = cfg_space["kind"]
    if kind == "cosine-modes":
        return make_cosine_mode_space(cfg_space["L"], cfg_space["n_max"], kernel)
    if kind == "fourier-modes":
        return make_fourier_mode_space(cfg_space["L"], cfg_space["k_max"], kernel)
    return make_grid_space(cfg_space["d"], cfg_space["M"], cfg_space["L"], kernel)


def initial_state(space: SingleParticleSpace, desc) -> np.ndarray:
    """'generic', 'plane-wave:k' or an explicit list of [re, im] pairs."""
    if isinstance(desc, list):
        arr = np.array([complex(re, im) for re, im in desc])
        if arr.shape != (space.dim,):
            raise StudyError(f"hartree.phi0 has {arr.size} entries, space has dim {space.dim}")
        return space.normalize(arr)
    if desc == "generic":
        if isinstance(space, GridSpace):
            x = space.points * (2 * np.pi / space.L)
            f = np.exp(np.cos(x).sum(axis=1)) * (1 + 0.3j * np.sin(2 * x).sum(axis=1))
            return space.normalize(f)
        if space.dim == 2:
            return np.array([np.cos(0.9), np.exp(0.3j) * np.sin(0.9)])
        a = np.arange(space.dim)
        return space.normalize((1.0 + 0.5 * a) * np.exp(0.4j * a * a) / (1.0 + a))
    if isinstance(desc, str) and desc.startswith("plane-wave:"):
        k = int(desc.split(":", 1)[1])
        if isinstance(space, GridSpace):
            x = space.points
            return space.normalize(np.exp(2j * np.pi * k * x.sum(axis=1) / space.L))
        if space.kind == "fourier-modes":
            e = np.zeros(space.dim, dtype=complex)
            e[k + space.k_max] = 1.0
            return e
        raise StudyError("plane-wave initial states need a grid or Fourier-mode space")
    raise StudyError(f"unknown initial state {desc!r}")


def parse_observable(space: SingleParticleSpace, desc) -> np.ndarray:
    m = space.dim
    if isinstance(desc, dict):
        re = np.asarray(desc.get("re", np.zeros((m, m))), dtype=float)
        im = np.asarray(desc.get("im", np.zeros((m, m))), dtype=float)
        return observable(re + 1j * im)
    name, _, arg = str(desc).partition(":")
    if name in ("pauli-x", "pauli-y", "pauli-z"):
        if m != 2:
            raise StudyError(f"{name} needs a two-mode space")
        return pauli(name[-1])
    if name == "identity":
        return np.eye(m, dtype=complex)
    if name == "number":
        return number_observable(m, int(arg))
    if name in ("hop-x", "hop-y"):
        a, b = (int(s) for s in arg.split(","))
        return hop_observable(m, a, b, name[-1])
    if name == "kinetic":
        return observable(space.kinetic)
    if name == "cos" and isinstance(space, GridSpace):
        n = int(arg)
        return np.diag(np.cos(2 * np.pi * n * space.points.sum(axis=1) / space.L)).astype(complex)
    raise StudyError(f"unknown observable {desc!r}")


@dataclass(eq=False)
class Model:
    cfg: dict
    space: SingleParticleSpace
    phi0: np.ndarray

    @cached_property
    def traj(self) -> HartreeTrajectory:
        h = self.cfg["hartree"]
        return evolve_hartree(self.space, self.phi0, h["T"], h["dt"], h["method"])

    @cached_property
    def theta(self) -> BogoliubovSeries:
        b = self.cfg["bogoliubov"]
        return propagate_theta(self.traj, b["dt"], b["integrator"])

    def observable_sets(self):
        return [(s.get("name", f"set{i}"), [parse_observable(self.space, o) for o in s["ops"]])
                for i, s in enumerate(self.cfg["observables"]["sets"])]


def build_model(cfg: dict) -> Model:
    space = build_space(cfg["space"])
    return Model(cfg, space, initial_state(space, cfg["hartree"]["phi0"]))


# --------------------------------------------------------------------------
# fits, results, parallel map
# --------------------------------------------------------------------------


@dataclass
class RateFit:
    """Least-squares fit log(err) = slope log(N) + intercept.

    ``residual`` is the root-mean-square deviation of the fitted line in
    natural-log units.
    """

    quantity: str
    N: list
    err: list
    slope: float
    intercept: float
    stderr: float
    residual: float
    window: list

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in ("quantity", "N", "err", "slope", "intercept", "stderr", "residual", "window")}


def fit_rate(N, err, quantity: str = "", min_N: float | None = None) -> RateFit:
    N = np.asarray(N, dtype=float)
    err = np.asarray(err, dtype=float)
    keep = N >= (min_N if min_N is not None else -np.inf)
    if keep.sum() < 3:
        raise StudyError(f"rate fit of {quantity!r} needs at least 3 points, window has {keep.sum()}")
    if not np.all(err[keep] > 0) or not np.all(np.isfinite(err[keep])):
        raise StudyError(f"rate fit of {quantity!r}: errors must be positive and finite")
    x, y = np.log(N[keep]), np.log(err[keep])
    r = linregress(x, y)
    resid = float(np.sqrt(np.mean((y - (r.slope * x + r.intercept)) ** 2)))
    return RateFit(quantity, N.tolist(), err.tolist(), float(r.slope), float(r.intercept), float(r.stderr), resid,
                   N[keep].tolist())


@dataclass
class StudyResult:
    name: str
    header: list
    rows: list
    fits: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)  # name -> {"value", "threshold", "pass"}
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks.values())

    def check(self, name, value, threshold, ok):
        self.checks[name] = {"value": value, "threshold": threshold, "pass": bool(ok)}


def run_parallel(func, items, workers: int = 1):
    """map(func, items) in item order; processes when workers > 1."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def tau_axis(study: dict) -> np.ndarray:
    return np.linspace(study["tau_min"], study["tau_max"], study["tau_points"])


# --------------------------------------------------------------------------
# product-state oracle
# --------------------------------------------------------------------------


def _centered(O, phi):
    O = np.asarray(O, dtype=complex)
    return O - np.vdot(phi, O @ phi).real * np.eye(O.shape[0])


def product_oracle_t0(phi, observables, tau, N: int) -> complex:
    """(<phi, prod_j exp(i tau_j O~_j / sqrt N) phi>)^N for the product state."""
    phi = np.asarray(phi, dtype=complex)
    v = phi
    for O, s in zip(reversed(observables), reversed(np.atleast_1d(tau))):
        v = expm(1j * s * _centered(O, phi) / np.sqrt(N)) @ v
    return complex(np.vdot(phi, v) ** N)


def product_oracle_grid(phi, observables, axis, N: int) -> np.ndarray:
    k = len(observables)
    out = np.empty((len(axis),) * k, dtype=complex)
    for idx in np.ndindex(*out.shape):
        out[idx] = product_oracle_t0(phi, observables, axis[list(idx)], N)
    return out


# --------------------------------------------------------------------------
# many-body helpers (module-level so they pickle into worker processes)
# --------------------------------------------------------------------------


def _evolved_states(space, phi0, N, times):
    """psi_{N,t} = exp(-i H_N t) phi0^{(x)N} for each t (full diagonalization)."""
    basis = fock.fixed_basis(space.dim, N)
    psi0 = fock.product_state(phi0, N, basis)
    if all(t == 0 for t in times):
        return basis, [psi0] * len(times)
    H = fock.build_hamiltonian(space, N, basis)
    return basis, [fock.evolve_state(H, psi0, t, method="full-eig") for t in times]


def _clt_worker(args):
    space, phi0, N, times, phis, sets, axis = args
    basis, states = _evolved_states(space, phi0, N, times)
    return [[fock.joint_charfn_grid(psi, obs, phi_t, axis, N) for obs in sets] for psi, phi_t in zip(states, phis)]


def clt_convergence_study(cfg: dict, workers: int = 1, model: Model | None = None) -> StudyResult:
    model = build_model(cfg) if model is None else model
    st = cfg["study"]
    times = [float(t) for t in st["times"]]
    axis = tau_axis(st)
    names, sets = zip(*model.observable_sets())
    phis = [model.traj.states[model.traj.index_of(t)] for t in times]
    sigmas = [[covariance_at(model.space, model.theta, obs, t).sigma for obs in sets] for t in times]
    jobs = [(model.space, model.phi0, N, times, phis, list(sets), axis) for N in st["N"]]
    charfns = run_parallel(_clt_worker, jobs, workers)

    res = StudyResult("clt", ["set", "N", "t", "tau_index", "re_many_body", "im_many_body", "re_gaussian", "im_gaussian", "err_abs"], [])
    errs = {}
    for N, per_t in zip(st["N"], charfns):
        for ti, t in enumerate(times):
            for si, name in enumerate(names):
                k = len(sets[si])
                grid = np.stack(np.meshgrid(*([axis] * k), indexing="ij"), axis=-1)
                G = gaussian_charfn(sigmas[ti][si], grid)
                E = per_t[ti][si]
                diff = np.abs(E - G)
                errs.setdefault((name, t), []).append(float(diff.max()))
                for flat, (e, g, d) in enumerate(zip(E.ravel(), np.ravel(G), diff.ravel())):
                    res.rows.append([name, N, t, flat, e.real, e.imag, g.real, g.imag, d])
    th = st["thresholds"]
    for (name, t), e in errs.items():
        f = fit_rate(st["N"], e, f"charfn_err[{name},t={t}]", st["fit_min_N"])
        res.fits.append(f)
        res.check(f"slope[{name},t={t}]", f.slope, th["max_slope"], f.slope <= th["max_slope"])
        res.check(f"residual[{name},t={t}]", f.residual, th["max_residual"], f.residual < th["max_residual"])
    res.extra["sigma"] = {f"{n},t={t}": {"re": sigmas[ti][si].real.tolist(), "im": sigmas[ti][si].imag.tolist()}
                          for ti, t in enumerate(times) for si, n in enumerate(names)}
    return res


def _berry_worker(args):
    space, phi0, N, times, phis, O, interval = args
    basis, states = _evolved_states(space, phi0, N, times)
    out = []
    for psi, phi_t in zip(states, phis):
        (op,) = fock.centered_observables(basis, [O], phi_t, N)
        w, Q = op.spectral
        weights = np.abs(Q.conj().T @ psi.vector) ** 2
        a, b = interval
        inside = (w >= a - 1e-12) & (w <= b + 1e-12)
        out.append(float(np.sum(weights[inside])))
    return out


def gaussian_interval_probability(var: float, interval) -> float:
    a, b = interval
    if var < 1e-12:
        raise StudyError("degenerate Gaussian (variance 0): the observable has no fluctuations")
    s = math.sqrt(2 * var)
    lo = -1.0 if a == -math.inf else math.erf(a / s)
    hi = 1.0 if b == math.inf else math.erf(b / s)
    return 0.5 * (hi - lo)


def berry_esseen_study(cfg: dict, workers: int = 1, model: Model | None = None) -> StudyResult:
    model = build_model(cfg) if model is None else model
    st = cfg["study"]
    m = model.space.dim
    if math.comb(max(st["N"]) + m - 1, m - 1) > fock.FULL_EIG_MAX:
        raise StudyError("fixed-N sector too large for full diagonalization; use m=2 and N <= 3999")
    O = parse_observable(model.space, st["observable"])
    times = [float(t) for t in st["times"]]
    interval = [float(x) for x in st["interval"]]
    phis = [model.traj.states[model.traj.index_of(t)] for t in times]
    var = [covariance_at(model.space, model.theta, [O], t).sigma[0, 0].real for t in times]
    gauss = [gaussian_interval_probability(v, interval) for v in var]
    jobs = [(model.space, model.phi0, N, times, phis, O, interval) for N in st["N"]]
    probs = run_parallel(_berry_worker, jobs, workers)
    res = StudyResult("berry-esseen", ["N", "t", "p_many_body", "p_gaussian", "err_abs"], [])
    for ti, t in enumerate(times):
        errs = []
        for N, p in zip(st["N"], probs):
            e = abs(p[ti] - gauss[ti])
            errs.append(e)
            res.rows.append([N, t, p[ti], gauss[ti], e])
        f = fit_rate(st["N"], errs, f"interval_err[t={t}]", st["fit_min_N"])
        res.fits.append(f)
        res.check(f"slope[t={t}]", f.slope, st["thresholds"]["max_slope"], f.slope <= st["thresholds"]["max_slope"])
    res.extra["variance"] = dict(zip(map(str, times), var))
    return res


def _density_worker(args):
    space, phi0, N, t, phi_t, O = args
    basis, (psi,) = _evolved_states(space, phi0, N, [t])
    gamma = fock.reduced_density(psi, 1)
    diff = gamma - np.outer(phi_t, phi_t.conj())
    trace_norm = float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))
    A = fock.second_quantize(basis, O, hermitian=True).matrix / N
    v = psi.vector
    Av = A @ v
    mean = np.vdot(v, Av).real
    var = np.vdot(Av, Av).real - mean**2
    return trace_norm, float(N * var)


def density_matrix_rate_study(cfg: dict, workers: int = 1, model: Model | None = None) -> StudyResult:
    model = build_model(cfg) if model is None else model
    st = cfg["study"]
    t = float(st["time"])
    phi_t = model.traj.states[model.traj.index_of(t)]
    O = parse_observable(model.space, st["observable"])
    jobs = [(model.space, model.phi0, N, t, phi_t, O) for N in st["N"]]
    out = run_parallel(_density_worker, jobs, workers)
    res = StudyResult("density-rate", ["N", "t", "trace_distance", "N_times_variance"], [])
    for N, (d, nv) in zip(st["N"], out):
        res.rows.append([N, t, d, nv])
    f = fit_rate(st["N"], [d for d, _ in out], f"trace_distance[t={t}]", st["fit_min_N"])
    res.fits.append(f)
    th = st["thresholds"]
    res.check("slope", f.slope, [th["slope_min"], th["slope_max"]], th["slope_min"] <= f.slope <= th["slope_max"])
    res.extra["lln_N_var_max"] = max(nv for _, nv in out)
    return res


def _fluctuation_worker(args):
    space, traj, N, times, dt, extra = args
    n_max = fock.weyl_cutoff(np.sqrt(N) * traj.states[0]) + extra
    basis = fock.truncated_basis(space.dim, n_max)
    H = fock.build_hamiltonian(space, N, basis)
    gen = fock.QuadraticGenerator(space, basis)
    num = basis.totals.astype(float)
    rows = []
    q = basis.vacuum()
    t_prev = 0.0
    for t in times:
        u = fock.fluctuation_state(space, traj, N, t, basis, H=H).vector
        q = fock.evolve_quadratic(traj, basis, t, q, dt=dt, generator=gen, t0=t_prev).vector
        t_prev = t
        p = np.abs(u) ** 2
        rows.append({
            "t": t,
            "n_max": n_max,
            "norm_loss": abs(np.linalg.norm(u) - 1),
            "number": float(p @ num),
            "number_sq": float(p @ num**2),
            "number_inf": float(np.abs(q) ** 2 @ num),
            "difference": float(np.linalg.norm(u - q)),
        })
    return rows


def fluctuation_growth_study(cfg: dict, workers: int = 1, model: Model | None = None) -> StudyResult:
    model = build_model(cfg) if model is None else model
    st = cfg["study"]
    times = sorted({float(t) for t in st["times"]} | {float(st["time"])})
    jobs = [(model.space, model.traj, N, times, st["dt"], st["extra_n_max"]) for N in st["N"]]
    out = run_parallel(_fluctuation_worker, jobs, workers)
    res = StudyResult("fluctuation", ["N", "t", "n_max", "norm_loss", "number", "number_sq", "number_inf", "difference"], [])
    th = st["thresholds"]
    for N, rows in zip(st["N"], out):
        for r in rows:
            if r["norm_loss"] > th["norm_loss"]:
                raise StudyError(f"truncation norm loss {r['norm_loss']:.2e} at N={N}, t={r['t']}; raise extra_n_max")
            res.rows.append([N, r["t"], r["n_max"], r["norm_loss"], r["number"], r["number_sq"], r["number_inf"], r["difference"]])
    t_fit = float(st["time"])
    diffs = [next(r["difference"] for r in rows if r["t"] == t_fit) for rows in out]
    f = fit_rate(st["N"], diffs, f"fluctuation_difference[t={t_fit}]", st["fit_min_N"])
    res.fits.append(f)
    res.check("slope", f.slope, th["max_slope"], f.slope <= th["max_slope"])
    for t in times:
        if t == 0:
            continue
        nums = [next(r["number"] for r in rows if r["t"] == t) for rows in out]
        ratio = max(nums) / min(nums)
        res.check(f"number_ratio[t={t}]", ratio, th["number_ratio"], ratio <= th["number_ratio"])
    return res


def _low_states(basis, n_probe):
    return [i for i in range(basis.dim) if basis.totals[i] <= n_probe]


def crosscheck_deviation(model: Model, t: float, n_max: int, n_probe: int, dt: float) -> float:
    """max |<U chi, a(f) U chi'> - <chi, (a(U f) + a*(J V f)) chi'>| over
    basis vectors f and occupation states chi, chi' with at most n_probe
    particles, U = U_inf(t;0)."""
    space = model.space
    basis = fock.truncated_basis(space.dim, n_max)
    gen = fock.QuadraticGenerator(space, basis)
    pair = model.theta.pair(t)
    low = _low_states(basis, n_probe)
    evolved = []
    for i in low:
        e = np.zeros(basis.dim, dtype=complex)
        e[i] = 1.0
        evolved.append(fock.evolve_quadratic(model.traj, basis, t, e, dt=dt, generator=gen).vector)
    Ue = np.array(evolved).T  # columns U chi
    worst = 0.0
    for a in range(space.dim):
        f = np.zeros(space.dim, dtype=complex)
        f[a] = 1.0
        lhs = Ue.conj().T @ (fock.field_annihilate(basis, f).matrix @ Ue)
        rhs_op = fock.field_annihilate(basis, pair.U @ f).matrix + fock.field_create(basis, space.conj(pair.V @ f)).matrix
        rhs = rhs_op[np.ix_(low, low)].toarray()
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def bogoliubov_crosscheck(cfg: dict, workers: int = 1, model: Model | None = None) -> StudyResult:
    model = build_model(cfg) if model is None else model
    st = cfg["study"]
    t = float(st["time"])
    levels = list(st["n_max"])
    devs = run_parallel(_crosscheck_worker, [(model, t, n, st["probe_max_n"], st["dt"]) for n in levels], workers)
    res = StudyResult("crosscheck", ["n_max", "t", "max_deviation"], [[n, t, d] for n, d in zip(levels, devs)])
    th = st["thresholds"]["max_deviation"]
    res.check("deviation_at_largest_n_max", devs[-1], th, devs[-1] <= th)
    decreasing = all(b <= a for a, b in zip(devs, devs[1:]))
    res.check("decreasing_under_refinement", decreasing, True, decreasing)
    return res


def _crosscheck_worker(args):
    model, t, n, probe, dt = args
    return crosscheck_deviation(model, t, n, probe, dt)


# --------------------------------------------------------------------------
# mean-field-only studies used by the CLI
# --------------------------------------------------------------------------


def hartree_report(cfg: dict, model: Model | None = None) -> StudyResult:
    model = build_model(cfg) if model is None else model
    tr = model.traj
    m = tr.states.shape[1]
    header = ["t"] + [f"re_phi_{a}" for a in range(m)] + [f"im_phi_{a}" for a in range(m)] + ["energy", "norm"]
    rows = [[t, *s.real, *s.imag, e, n] for t, s, e, n in zip(tr.times, tr.states, tr.energy, tr.norm)]
    res = StudyResult("hartree", header, rows)
    th = cfg["study"]["thresholds"]
    nd = float(np.max(np.abs(tr.norm - 1)))
    ed = float(np.max(np.abs(tr.energy - tr.energy[0])) / max(abs(tr.energy[0]), 1e-300))
    res.check("norm", nd, th["norm"], nd <= th["norm"])
    res.check("energy_rel", ed, th["energy_rel"], ed <= th["energy_rel"])
    return res


def bogoliubov_report(cfg: dict, model: Model | None = None) -> StudyResult:
    model = build_model(cfg) if model is None else model
    th_series = model.theta
    res = StudyResult("bogoliubov", ["t", "r1", "r2", "r3"], [[t, *r] for t, r in zip(th_series.times, th_series.residuals)])
    th = cfg["study"]["thresholds"]
    for j, key in enumerate(("r1", "r2", "r3")):
        v = float(th_series.residuals[:, j].max())
        res.check(key, v, th[key], v <= th[key])
    return res


def covariance_report(cfg: dict, model: Model | None = None) -> StudyResult:
    model = build_model(cfg) if model is None else model
    series = model.theta
    times = series.times if cfg["study"]["times"] is None else np.array(cfg["study"]["times"], dtype=float)
    res = StudyResult("covariance", ["set", "t", "i", "j", "re", "im"], [])
    exports = []
    th = cfg["study"]["thresholds"]["imag_commuting"]
    for name, obs in model.observable_sets():
        worst_imag = 0.0
        commuting = None
        for t in times:
            C = covariance_at(model.space, series, obs, float(t))
            commuting = C.commuting
            worst_imag = max(worst_imag, float(np.max(np.abs(C.R))))
            for i in range(C.k):
                for j in range(C.k):
                    res.rows.append([name, float(t), i, j, C.sigma[i, j].real, C.sigma[i, j].imag])
            exports.append({"set": name, **C.to_json()})
        if commuting:
            res.check(f"imag_max[{name}]", worst_imag, th, worst_imag <= th)
    res.extra["sigma"] = exports
    return res


def xi_report(cfg: dict) -> StudyResult:
    """Recursion/closed-form agreement, the weighted norms per N and the
    rate of the (N+1)^{-5/2}-weighted distance to the limit coefficients."""
    st = cfg["study"]
    th = st["thresholds"]
    lc = int(st["l_check"])
    res = StudyResult("xi", ["N", "l", "w_N", "w_inf"], [])
    Ns = sorted(set(st["N"]) | set(st["fit_N"]))
    worst = 0.0
    for N in Ns:
        w = xi.xi_recursion(N, lc).w
        winf = xi.xi_infinity(lc).w
        for l in range(lc + 1):
            res.rows.append([N, l, float(w[l]), float(winf[l])])
        for l in range(min(lc, N) + 1):
            exact = xi.xi_closed_form(N, l) * math.sqrt(math.factorial(l))
            worst = max(worst, abs(w[l] - exact))
    res.check("recursion_vs_closed_form", worst, th["agreement"], worst <= th["agreement"])
    norms = {N: xi.xi_norms(N) for N in Ns}
    res.extra["norms"] = [norms[N] for N in Ns]
    for N in st["N"]:
        a, r = norms[N]["apriori"], norms[N]["ratio"]
        res.check(f"apriori[N={N}]", a, th["apriori_max"], a <= th["apriori_max"])
        res.check(f"ratio[N={N}]", r, [1 - th["ratio_tol"], 1 + th["ratio_tol"]], abs(r - 1) <= th["ratio_tol"])
    f = fit_rate(st["fit_N"], [norms[N]["diff5"] for N in st["fit_N"]], "diff5")
    res.fits.append(f)
    res.check("diff5_slope", f.slope, th["diff5_max_slope"], f.slope <= th["diff5_max_slope"])
    return res
