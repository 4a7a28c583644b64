use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NavError {
    /// The polar model is singular (r at or below the guard) or the robot sits
    /// exactly at an obstacle center, where the barrier gradient vanishes.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("pose coincides with the goal (r = {r:e})")]
    DegenerateGoal { r: f64 },

    #[error("obstacles {i} and {j} are not a positive distance apart (gap {gap})")]
    OverlappingObstacles { i: usize, j: usize, gap: f64 },

    #[error("invalid obstacle: {0}")]
    InvalidObstacle(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("both-active KKT system is singular (det = {det:e}, |a|^2 = {a_norm_sq:e}, |d|^2 = {d_norm_sq:e})")]
    Infeasible2x2 { det: f64, a_norm_sq: f64, d_norm_sq: f64 },

    #[error("no KKT active-set case satisfied the optimality conditions")]
    NoValidCase,

    #[error("no clear intermediate goal on the segment toward the final goal")]
    NoValidIntermediateGoal,

    #[error("scenario error: {0}")]
    Scenario(String),
}

pub type Result<T> = std::result::Result<T, NavError>;
