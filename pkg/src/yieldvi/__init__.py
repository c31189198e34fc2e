"""Threshold-type variational inequalities of the second kind and their optimal control.

Submodules
----------
mesh          grids, stiffness operator, discrete V / L2 / V' norms
smoothing     local and global smoothings of ``beta |x|``
vi            forward solver, multiplier recovery, set classification, cone VI
bingham       radial pipe and square-duct viscoplastic flow
control       regularize-then-optimize control solver
stationarity  weak / C- / strong stationarity reports
sensitivity   Lipschitz and directional-derivative probes
cli           command-line driver
"""

__version__ = "0.1.0"

from .errors import (
    CycleDetected,
    GridError,
    LineSearchFailure,
    NewtonNonconvergence,
    SolverError,
    YieldVIError,
)
from .mesh import (
    EllipticOperator,
    Grid,
    assemble_stiffness,
    build_grid,
    gradient_magnitude,
    inner_l2,
    norm_dual,
    norm_v,
    solve_spd,
)
from .smoothing import Smoothing, phi, phi_prime, phi_second
from .vi import (
    Cone,
    SetMask,
    VISolution,
    classify_sets,
    continuation_solve,
    critical_cone,
    default_schedule,
    extract_multiplier,
    solve_regularized,
    solve_vi_first_kind,
)
from .bingham import DuctProblem, PipeProblem, detect_plug, mosolov_exact, solve_duct, solve_radial
from .control import ControlProblem, adjoint_solve, optimize, reduced_gradient, reduced_objective
from .stationarity import check_clarke, check_strong, check_structural, check_weak, recover_xi
from .sensitivity import DerivativeProbe, LipschitzProbe, directional_derivative, fd_compare, lipschitz_probe
