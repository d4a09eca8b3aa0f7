"""Estimate linear data-driven BRDF weights from a single HDR reflectance map.

A target material seen on a sphere under known distant lighting is written
as a weighted sum of measured basis BRDFs.  The basis is split into material
classes by a Gaussian mixture over its leading singular subspace; every
class yields a regularized least-squares candidate and the best-fitting
candidate wins.
"""

__version__ = "0.1.0"

from .brdf import BasisSet, BrdfGrid, combine, load_merl, read_merl, save_merl, write_merl
from .envlight import EnvironmentMap, load_probe
from .estimate import EstimatorConfig, estimate_rgb, naive_ls, single_class_estimate, solve_class
from .gmm import GmmModel, assign, em_fit
from .render import SphereGeometry, build_transport, render_basis, tonemap
from .subspace import Subspace, fit_subspace, project

__all__ = [
    "__version__",
    "BasisSet",
    "BrdfGrid",
    "combine",
    "load_merl",
    "read_merl",
    "save_merl",
    "write_merl",
    "EnvironmentMap",
    "load_probe",
    "EstimatorConfig",
    "estimate_rgb",
    "naive_ls",
    "single_class_estimate",
    "solve_class",
    "GmmModel",
    "assign",
    "em_fit",
    "SphereGeometry",
    "build_transport",
    "render_basis",
    "tonemap",
    "Subspace",
    "fit_subspace",
    "project",
]
