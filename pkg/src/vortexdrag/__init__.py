"""Exterior-flow drag diagnostics toolkit.

Builds the potential/rotational decomposition of 2D incompressible flow
past a solid body, verifies the instantaneous equality of drag power
and interaction-energy transfer on viscous solutions, and probes the
near-wall coarse-graining limits behind that identity with finite
filter-scale scans.
"""

__version__ = "0.1.0"

from .errors import (AmbiguousProjectionError, DomainError, NumericalError,
                     UnsupportedFormatError, ValidationError, VortexDragError)
from .geometry import (Circle, ExteriorGrid, SplineBody, build_grid,
                       measure_reach, project_to_wall, signed_distance)
from .potential import (CirclePotential, GridPotential, PanelPotential,
                        analytic_circle_potential, bernoulli_pressure,
                        dalembert_drag, solve_neumann_bem)
from .snapshots import (FlowSnapshot, rigid_rotation_snapshot,
                        snapshot_from_potential)
from .solver import (SolverConfig, control_volume_drag, dissipation_field,
                     drag_force, interpolate_snapshot, kato_strip_dissipation,
                     kinetic_energy_budget, run_collect, run_to_steady,
                     simulate, steadiness, total_dissipation, wall_stress)
from .decomposition import (BalanceResidual, JAReport, RotationalState,
                            decompose, interaction_residual, ja_verify,
                            relative_energy_audit, relative_energy_residual,
                            rotational_residual, transfer_rate)
from .filtering import (Extension, FilterBank, FilterSpec, PairingReport,
                        WallTestFunction, cet_identity_gap, cumulant,
                        extend_ext0, filter_state, inertial_dissipation,
                        interaction_flux, mollify, momentum_wall_flux,
                        no_flow_through_profile, rotational_flux,
                        skin_friction_pairing_viscous, wall_limit_scan,
                        wall_pairing, window, window_gradient,
                        windowed_interaction_residual,
                        windowed_rotational_residual)
from .config import RunConfig
from .io import (load_potential, load_snapshot, save_potential,
                 save_snapshot, write_csv)
