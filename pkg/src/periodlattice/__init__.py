"""Period lattices, monodromy and Maslov indices of integrable systems."""

from .exceptions import *  # noqa: F401,F403
from .flow import DEFAULT_TOLERANCES, FlowResult, Tolerances, flow, flow_batch, track_fiber_point
from .latalg import (
    CircleActionSection,
    RhoFunctional,
    SublatticeChain,
    free_circle_action,
    gl2z_conjugacy_invariant,
    kernel_chain,
    mapping_torus_check,
    primitive_section,
    smith_normal_form,
    verify_rho_invariance,
)
from .lattice import (
    BasisTrajectory,
    LatticeBasis,
    LoopPath,
    MonodromyMatrix,
    circle_loop,
    continue_basis,
    detect_lattice_basis,
    monodromy,
)
from .maslov import MaslovVector, SymplecticStructure, lagrangian_frame, maslov_index, maslov_vector
from .systems import (
    BUILTIN_NAMES,
    IntegrableSystem,
    builtin_system,
    eval_generators,
    eval_integral_map,
)

__version__ = "0.1.0"
