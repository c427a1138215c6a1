import math

import numpy as np
import pytest

from meanfield_clt import fock
from meanfield_clt.config import resolve
from meanfield_clt.experiments import (
    StudyError,
    _berry_worker,
    _density_worker,
    _fluctuation_worker,
    berry_esseen_study,
    bogoliubov_crosscheck,
    build_model,
    clt_convergence_study,
    covariance_report,
    fit_rate,
    gaussian_interval_probability,
    initial_state,
    parse_observable,
    product_oracle_t0,
    run_parallel,
    xi_report,
)
from meanfield_clt.space import make_cosine_mode_space, pauli

FREE = {"space": {"kernel": {"name": "zero"}}}


def test_fit_rate_exact_power_law():
    N = [16, 32, 64, 128]
    f = fit_rate(N, [3.0 * n**-0.5 for n in N], "x")
    assert abs(f.slope + 0.5) < 1e-12 and f.residual < 1e-12
    g = fit_rate(N, [n**-1.0 for n in N], "y", min_N=32)
    assert g.window == [32.0, 64.0, 128.0]
    with pytest.raises(StudyError, match="at least 3"):
        fit_rate(N, [1, 1, 1, 1], "z", min_N=100)
    with pytest.raises(StudyError, match="positive"):
        fit_rate(N, [1, 0, 1, 1], "z")


def test_product_oracle_limits():
    phi = np.array([1.0, 0.0], dtype=complex)
    assert product_oracle_t0(phi, [pauli("x")], [0.0], 10) == 1
    # O phi orthogonal to phi with unit norm: Sigma(0) = 1
    for tau in (0.5, 1.5, 2.5):
        err = [abs(product_oracle_t0(phi, [pauli("x")], [tau], N) - math.exp(-tau**2 / 2)) for N in (10**2, 10**4, 10**6)]
        assert err[-1] < 1e-5 and err[0] > err[1] > err[2]


def test_interval_probability():
    assert gaussian_interval_probability(0.7, [-math.inf, math.inf]) == 1.0
    assert abs(gaussian_interval_probability(1.0, [-1, 1]) - 0.6826894921370859) < 1e-15
    with pytest.raises(StudyError, match="degenerate"):
        gaussian_interval_probability(0.0, [-1, 1])


def test_whole_line_probability_is_one():
    sp = make_cosine_mode_space(n_max=1, V={"name": "cosine", "v0": 1.0, "n": 1})
    phi = initial_state(sp, "generic")
    (p,) = _berry_worker((sp, phi, 20, [0.0], [phi], pauli("x"), [-math.inf, math.inf]))
    assert abs(p - 1) < 1e-12


def test_berry_esseen_refuses_identity():
    cfg = resolve({"study": {"observable": "identity", "N": [64, 128, 256]}}, "berry-esseen")
    with pytest.raises(StudyError, match="degenerate"):
        berry_esseen_study(cfg)


def test_berry_esseen_initial_time_rate():
    cfg = resolve({"study": {"times": [0.0]}}, "berry-esseen")
    res = berry_esseen_study(cfg)
    assert res.fits[0].slope <= -0.4


def test_density_rate_trivial_cases():
    sp = make_cosine_mode_space(n_max=1, V={"name": "cosine", "v0": 1.0, "n": 1})
    phi = initial_state(sp, "generic")
    d0, _ = _density_worker((sp, phi, 32, 0.0, phi, pauli("x")))
    assert d0 < 1e-12
    model = build_model(resolve(FREE, "density-rate"))
    phi_t = model.traj.states[model.traj.index_of(1.0)]
    d1, _ = _density_worker((model.space, model.phi0, 32, 1.0, phi_t, pauli("x")))
    assert d1 <= 1e-10


def test_fluctuation_trivial_cases():
    model = build_model(resolve({"hartree": {"T": 0.5}}, "fluctuation"))
    rows = _fluctuation_worker((model.space, model.traj, 4, [0.0], 0.01, 10))
    assert rows[0]["difference"] < 1e-12
    free = build_model(resolve({**FREE, "hartree": {"T": 0.5}}, "fluctuation"))
    rows = _fluctuation_worker((free.space, free.traj, 8, [0.5], 0.01, 10))
    assert rows[0]["difference"] <= 1e-8 and rows[0]["number"] < 1e-8


def test_fluctuation_difference_slope_small_window():
    from meanfield_clt.experiments import fluctuation_growth_study

    res = fluctuation_growth_study(resolve({"hartree": {"T": 0.5}, "study": {"N": [2, 4, 8, 16]}}, "fluctuation"))
    assert -0.7 <= res.fits[0].slope <= -0.3


def test_crosscheck_free_case():
    res = bogoliubov_crosscheck(resolve({**FREE, "hartree": {"T": 0.5}, "study": {"n_max": [4, 8]}}, "crosscheck"))
    assert max(r[2] for r in res.rows) <= 1e-8


def test_clt_free_case_rate():
    cfg = resolve({**FREE, "study": {"N": [16, 32, 64, 128, 256], "times": [0.0, 0.5]}}, "clt")
    res = clt_convergence_study(cfg)
    assert all(f.slope <= -0.4 for f in res.fits)
    # at t = 1 the tau-grid corners keep the non-commuting pair pre-asymptotic
    # up to N ~ 100, so the rate is read off a later window
    cfg = resolve({**FREE, "study": {"N": [128, 256, 512, 1024], "times": [1.0]}}, "clt")
    res = clt_convergence_study(cfg)
    assert all(f.slope <= -0.4 for f in res.fits)


def test_clt_initial_time_structure():
    cfg = resolve({"study": {"N": [16, 64, 256], "times": [0.0]}}, "clt")
    res = clt_convergence_study(cfg)
    commuting = np.array(res.extra["sigma"]["commuting,t=0.0"]["im"])
    noncommuting = np.array(res.extra["sigma"]["noncommuting,t=0.0"]["im"])
    assert np.max(np.abs(commuting)) == 0 and abs(noncommuting[0, 1]) > 0.1
    # imaginary part of the many-body charfn tracks the complex Gaussian
    rows = [r for r in res.rows if r[0] == "noncommuting"]
    im_err = {}
    for r in rows:
        im_err[r[1]] = max(im_err.get(r[1], 0.0), abs(r[5] - r[7]))
    assert max(abs(r[7]) for r in rows) > 0.05
    assert im_err[16] > im_err[64] > im_err[256]


def test_covariance_report_commuting_real():
    res = covariance_report(resolve({}, "covariance"))
    assert res.passed and res.checks["imag_max[commuting]"]["value"] <= 1e-9


def test_xi_report_passes():
    res = xi_report(resolve({}, "xi"))
    assert res.passed and res.fits[0].slope <= -0.9


def test_observable_parsing():
    sp = make_cosine_mode_space(n_max=2, V=None)
    assert np.array_equal(parse_observable(sp, "number:1"), np.diag([0, 1, 0]).astype(complex))
    assert np.array_equal(parse_observable(sp, {"re": np.eye(3).tolist()}), np.eye(3))
    with pytest.raises(StudyError):
        parse_observable(sp, "pauli-x")
    with pytest.raises(StudyError):
        parse_observable(sp, "spin")
    with pytest.raises(StudyError):
        initial_state(sp, [[1, 0]])


def _square(x):
    return x * x


def test_run_parallel_preserves_order():
    assert run_parallel(_square, range(7), workers=3) == [x * x for x in range(7)]
    assert run_parallel(_square, range(7), workers=1) == [x * x for x in range(7)]


def test_large_sector_rejected():
    cfg = resolve({"space": {"n_max": 2}, "study": {"observable": "number:0", "N": [64, 128, 256]}}, "berry-esseen")
    with pytest.raises(StudyError, match="too large"):
        berry_esseen_study(cfg)
