"""Second-order differential equations on chart-level Lie algebroids and
groupoids: flows, exponential and exact retraction maps, shooting boundary
solvers with certified step bounds, SODE lifting through the source-vertical
morphism, and the homogeneous-quadratic toolkit."""

from .algebroid import (
    AlgebroidModel, ChartBox, FibrationModel, SodeField, Trajectory,
    admissibility_defect, anchor_apply, flow, flow_end, homogeneity_defect,
    quadratic_rescale_defect, sode_rhs, spray_from_coefficients,
    tangent_algebroid,
)
from .expmap import (
    BvpSolution, CertificateConfig, GroupoidTrajectory, H0Certificate,
    RetractionPair, bvp_shoot, exp_mid, exp_one, exp_pair, exp_point,
    fibration_exp, groupoid_bvp, groupoid_exp, groupoid_flow,
    groupoid_zero_section_jacobian, h0_certificate, retraction_pair,
    variational_jacobian, zero_section_jacobian,
)
from .expressions import ScalarField
from .groupoid import (
    AlgebroidPath, GroupoidModel, LiftedSode, VerticalVector,
    groupoid_anchor_check, groupoid_axiom_defects, left_translate, lift_sode,
    psi_apply, psi_defect,
)
from .instances import InstanceBundle, InstanceSpec, build_model, get, list_instances
from .numerics import (
    IntegratorConfig, NewtonConfig, fd_jacobian, integrate_ivp, newton_solve,
    seeded_rng,
)

__version__ = "0.1.0"
