//! Model fitting: the proposal-agreement objective and particle swarm
//! fitters over the hand model's 27 parameters.

mod fit;
mod objective;
mod proposals;
mod pso;

pub use fit::{
    fit_fallback, fit_frames, joint_fit, read_joints_csv, regression_only, stepwise_fit, write_fit_csv,
    write_joints_csv, Budget, EstimatedJoints, FitContext, FitError, FitOutput, FitSettings,
    FitterRegistry, Joint, PoseFitter, RegressionOnly, Stepwise,
};
pub use objective::{clamped_distance, joint_term, objective, Objective};
pub use proposals::{Proposal, ProposalError, ProposalSet};
pub use pso::{normalize_quaternion, pso_optimize, Hypothesis, PsoConfig, PsoResult, SearchSpace, QUAT_DIMS};
