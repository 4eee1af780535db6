"""Small-time control synthesis for bilinear magnetic Schroedinger equations."""
from .core import (
    Grid,
    GaussianParams,
    ScalarField,
    VectorField,
    WaveFunction,
    boundary_mass,
    fit_gaussian,
    gaussian_state,
    inner_product,
    make_grid,
    projective_distance,
    sample,
)
from .hamiltonian import ControlSystem, apply_hamiltonian, assemble, system_from_descriptor
from .propagator import Schedule, Segment, evolve_constant, execute

__version__ = "0.1.0"
