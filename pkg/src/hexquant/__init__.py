"""Quantization energies of deformed hexagonal lattices, their continuum limit and gradient flows."""

__version__ = "0.1.0"

from .errors import (DomainError, GeometryError, HexQuantError, ModeViolationError, RegimeError,  # noqa: E402
                     SingularMatrixError, StagnationError)
from .geometry import ConvexPolygon, clip_halfplane, polygon_second_moment, right_triangle_moment, rotation_pi_3  # noqa: E402,E501
from .lattice import (DeformationField, FourierField, GridField, HexLattice, identity_field,  # noqa: E402
                      random_fourier_field, recenter, sample_points, trig_field, validate_properties)
from .continuum import (A_tensor, ConvexifiedEnergy, F0, dphi, energy_density, energy_functional,  # noqa: E402
                        grad_F, grad_F0, phi, phi_closed_form_e1, polynomial_P, q_plus_minus, taylor_F,
                        variational_gradient)
from .discrete import (VoronoiDiagram, ball_average, cell_energy, cell_energy_triangles,  # noqa: E402
                       optimal_masses, quantization_energy, voronoi_periodic)
from .flows import (FlowTrace, ParticleState, PdeState, decay_report, particle_rhs, particle_step,  # noqa: E402
                    pde_rhs, pde_step, run_particle_flow, run_pde_flow)
