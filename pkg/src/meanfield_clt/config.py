"""Run configuration: JSON documents with a strict schema.

A config has up to five sections (space, hartree, bogoliubov, observables,
study).  Missing keys take the defaults below; unknown keys are errors that
name the offending key path.  The resolved document is hashed (sha256 of its
canonical JSON) and the hash is echoed into every output.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from pathlib import Path

__all__ = [
    "ConfigError",
    "DEFAULTS",
    "STUDY_DEFAULTS",
    "resolve",
    "load_config",
    "config_hash",
    "canonical_json",
]

TWO_PI = 2 * math.pi


class ConfigError(ValueError):
    pass


# Every key a section may contain, with its default.  ``None`` means "derived
# from other settings" and is documented next to the key.
DEFAULTS = {
    "space": {
        "kind": "cosine-modes",  # cosine-modes | fourier-modes | grid
        "L": TWO_PI,
        "n_max": 1,  # cosine-modes: cos(2 pi n x / L), n = 0..n_max
        "k_max": 1,  # fourier-modes
        "d": 1,  # grid
        "M": 16,  # grid
        "kernel": {"name": "cosine", "v0": 1.0, "sigma": 1.0, "n": 1, "samples": None},
    },
    "hartree": {
        "phi0": "generic",  # "generic", "plane-wave:k" or a list of [re, im] pairs
        "T": 1.0,
        "dt": 1e-3,
        "method": "rk4",  # rk4 | strang (grid only)
    },
    "bogoliubov": {
        "integrator": "magnus4",  # magnus4 | rk4 | midpoint-magnus
        "dt": None,  # None: the Hartree step
    },
    "observables": {
        "sets": [
            {"name": "commuting", "ops": ["pauli-z", "number:0"]},
            {"name": "noncommuting", "ops": ["pauli-x", "pauli-y"]},
        ],
    },
    "study": {},
}

# study keys per subcommand (all optional)
STUDY_DEFAULTS = {
    "hartree": {"thresholds": {"norm": 1e-9, "energy_rel": 1e-7}},
    "bogoliubov": {"thresholds": {"r1": 1e-8, "r2": 1e-8, "r3": 1e-6}},
    "covariance": {"times": None, "thresholds": {"imag_commuting": 1e-9}},
    "clt": {
        "N": [16, 32, 64, 128, 256, 512, 1024],
        "times": [0.0, 0.5, 1.0],
        "tau_min": -3.0,
        "tau_max": 3.0,
        "tau_points": 13,
        "fit_min_N": 16,
        "thresholds": {"max_slope": -0.4, "max_residual": 0.15},
    },
    "berry-esseen": {
        # log-spaced so the fit averages over the lattice sawtooth phase
        "N": [64, 76, 91, 108, 128, 152, 181, 215, 256, 304, 362, 431, 512, 609, 724, 861, 1024, 1218, 1448, 1722, 2048],
        "times": [0.0, 1.0],
        "observable": "pauli-x",
        "interval": [-1.0, 1.0],
        "fit_min_N": 64,
        "thresholds": {"max_slope": -0.3},
    },
    "density-rate": {
        "N": [16, 32, 64, 128, 256, 512],
        "time": 1.0,
        "observable": "pauli-x",
        "fit_min_N": 16,
        "thresholds": {"slope_min": -1.3, "slope_max": -0.7},
    },
    "fluctuation": {
        "N": [2, 4, 8, 16, 32],
        "times": [0.0, 0.25, 0.5],
        "time": 0.5,
        "dt": 0.01,
        "extra_n_max": 10,
        "fit_min_N": 2,
        "thresholds": {"max_slope": -0.4, "number_ratio": 2.0, "norm_loss": 1e-5},
    },
    "crosscheck": {
        "time": 0.5,
        "n_max": [4, 8, 16],
        "probe_max_n": 2,
        "dt": 0.01,
        "thresholds": {"max_deviation": 1e-5},
    },
    "xi": {
        "N": [2, 10, 100, 1000, 10000],
        "fit_N": [10, 100, 1000, 10000],
        "l_check": 60,
        "thresholds": {"agreement": 1e-10, "apriori_max": 10.0, "ratio_tol": 1e-3, "diff5_max_slope": -0.9},
    },
}

SUBCOMMANDS = tuple(STUDY_DEFAULTS)


def _merge(defaults, given, path):
    if not isinstance(given, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        kp = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown key {kp!r}")
        if isinstance(defaults[key], dict) and key not in ("thresholds",) and defaults[key]:
            out[key] = _merge(defaults[key], val, kp)
        elif key == "thresholds":
            if not isinstance(val, dict):
                raise ConfigError(f"{kp}: expected an object")
            for tk in val:
                if tk not in defaults[key]:
                    raise ConfigError(f"unknown key {kp}.{tk!r}")
            out[key].update(val)
        else:
            out[key] = val
    return out


def resolve(doc: dict | None, subcommand: str) -> dict:
    """Validate ``doc`` against the schema and fill in defaults."""
    if subcommand not in STUDY_DEFAULTS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    doc = {} if doc is None else doc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    schema = copy.deepcopy(DEFAULTS)
    schema["study"] = copy.deepcopy(STUDY_DEFAULTS[subcommand])
    out = _merge(schema, doc, "")
    _check(out, subcommand)
    return out


def _check(cfg, sub):
    sp = cfg["space"]
    if sp["kind"] not in ("cosine-modes", "fourier-modes", "grid"):
        raise ConfigError(f"space.kind: unknown kind {sp['kind']!r}")
    if sp["kernel"]["name"] not in ("zero", "gaussian", "cosine", "tabulated"):
        raise ConfigError(f"space.kernel.name: unknown kernel {sp['kernel']['name']!r}")
    if cfg["hartree"]["method"] not in ("rk4", "strang"):
        raise ConfigError("hartree.method: must be rk4 or strang")
    if cfg["bogoliubov"]["integrator"] not in ("magnus4", "rk4", "midpoint-magnus"):
        raise ConfigError("bogoliubov.integrator: must be magnus4, rk4 or midpoint-magnus")
    sets = cfg["observables"]["sets"]
    if not isinstance(sets, list) or not sets:
        raise ConfigError("observables.sets: expected a non-empty list")
    for i, s in enumerate(sets):
        if not isinstance(s, dict) or set(s) - {"name", "ops"} or "ops" not in s:
            raise ConfigError(f"observables.sets[{i}]: expected keys 'name' and 'ops'")
    st = cfg["study"]
    if "N" in st:
        Ns = st["N"]
        if not all(isinstance(n, int) and n >= 1 for n in Ns):
            raise ConfigError("study.N: expected positive integers")
        if any(b <= a for a, b in zip(Ns, Ns[1:])):
            raise ConfigError("study.N: must be strictly increasing")
        if sub not in ("xi",) and len(Ns) < 3:
            raise ConfigError("study.N: a rate fit needs at least 3 values")


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(resolved: dict) -> str:
    return hashlib.sha256(canonical_json(resolved).encode()).hexdigest()


def load_config(path, subcommand: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    return resolve(doc, subcommand)
