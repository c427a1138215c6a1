"""Quantum fluctuations of many-body dynamics around the mean-field (Hartree)
flow: exact Fock-space dynamics, Bogoliubov transformations, the limiting
complex covariance and convergence-rate studies."""

from . import bogoliubov, config, covariance, experiments, fock, hartree, krylov, space, xi
from .bogoliubov import propagate_theta
from .covariance import covariance_at, covariance_matrix, gaussian_charfn
from .hartree import evolve_hartree
from .space import Kernel, make_cosine_mode_space, make_fourier_mode_space, make_grid_space, make_mode_space

__version__ = "0.1.0"

__all__ = [
    "bogoliubov",
    "config",
    "covariance",
    "experiments",
    "fock",
    "hartree",
    "krylov",
    "space",
    "xi",
    "Kernel",
    "make_grid_space",
    "make_fourier_mode_space",
    "make_mode_space",
    "make_cosine_mode_space",
    "evolve_hartree",
    "propagate_theta",
    "covariance_matrix",
    "covariance_at",
    "gaussian_charfn",
]
