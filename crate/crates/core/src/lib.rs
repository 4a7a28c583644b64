//! Polar-coordinate CLF-CBF quadratic-program navigation for a bipedal robot
//! abstracted as a planar planning model, with an ALIP footstep layer.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alip;
pub mod cbf;
pub mod clf;
pub mod error;
pub mod io;
pub mod model;
pub mod qp;
pub mod runner;

pub use alip::{AlipParams, AlipState};
pub use cbf::{certify_and_select_kappas, Obstacle, ObstacleField};
pub use clf::{ClfParams, TurnRowForm};
pub use error::{NavError, Result};
pub use model::{ControlInput, GoalPosition, PlanningState, WorldPose};
pub use qp::{assemble, solve, CaseTag, QpProblem, QpSolution, QpWeights};
pub use runner::{run, Integrator, RunnerConfig, Scenario, TerminalStatus, TrajectoryRecord};
