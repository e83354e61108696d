"""kcmlab: a deterministic, seed-reproducible laboratory for kinetically
constrained models, cooperative contact processes, closure dynamics,
last-passage growth, and the exact couplings between them."""

__version__ = "0.1.0"

from .backend import BACKEND, HAVE_COMPILED  # noqa: F401
from .clocks import ClockField  # noqa: F401
from .lattice import Domain, FamilyClass, UpdateFamily, UpdateRule, classify  # noqa: F401
