//! Polar planning model.
//!
//! The robot is described relative to a goal by `(r, delta, theta)`: range to
//! the goal, bearing error between heading and line of sight, and heading. The
//! control `(v_x, v_y, omega)` is expressed in the robot frame and enters the
//! driftless system `x' = g(x) u`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{NavError, Result};

/// Singular guard on the range: `g(x)` carries `1/r` entries.
pub const R_MIN: f64 = 1e-6;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let w = angle.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanningState {
    pub r: f64,
    pub delta: f64,
    pub theta: f64,
}

impl PlanningState {
    pub fn new(r: f64, delta: f64, theta: f64) -> Self {
        Self {
            r,
            delta: wrap_angle(delta),
            theta: wrap_angle(theta),
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.r, self.delta, self.theta]
    }

    pub(crate) fn check_domain(&self) -> Result<()> {
        if !(self.r > R_MIN) || !self.r.is_finite() {
            return Err(NavError::Domain(format!(
                "range r = {:e} must exceed {R_MIN:e}",
                self.r
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub v_x: f64,
    pub v_y: f64,
    pub omega: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput {
        v_x: 0.0,
        v_y: 0.0,
        omega: 0.0,
    };

    pub fn new(v_x: f64, v_y: f64, omega: f64) -> Self {
        Self { v_x, v_y, omega }
    }

    pub fn from_array(u: [f64; 3]) -> Self {
        Self::new(u[0], u[1], u[2])
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.v_x, self.v_y, self.omega]
    }

    pub fn norm(&self) -> f64 {
        (self.v_x * self.v_x + self.v_y * self.v_y + self.omega * self.omega).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.v_x.is_finite() && self.v_y.is_finite() && self.omega.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl WorldPose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalPosition {
    pub x: f64,
    pub y: f64,
}

impl GoalPosition {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance_to(&self, pose: &WorldPose) -> f64 {
        (self.x - pose.x).hypot(self.y - pose.y)
    }
}

/// `g(x)` of the driftless control system, row-major.
pub fn control_matrix(state: &PlanningState) -> Result<[[f64; 3]; 3]> {
    state.check_domain()?;
    let (s, c) = state.delta.sin_cos();
    let r = state.r;
    Ok([[-c, -s, 0.0], [s / r, -c / r, 1.0], [0.0, 0.0, -1.0]])
}

/// `f(x) + g(x) u` with `f = 0`.
pub fn state_derivative(state: &PlanningState, u: &ControlInput) -> Result<[f64; 3]> {
    let g = control_matrix(state)?;
    let u = u.as_array();
    Ok([dot3(&g[0], &u), dot3(&g[1], &u), dot3(&g[2], &u)])
}

/// Robot pose reconstructed from the polar state relative to `goal`.
pub fn world_from_state(state: &PlanningState, goal: &GoalPosition) -> WorldPose {
    let (s, c) = (state.delta + state.theta).sin_cos();
    WorldPose {
        x: goal.x - state.r * c,
        y: goal.y - state.r * s,
        theta: wrap_angle(state.theta),
    }
}

/// Inverse of [`world_from_state`]: the bearing error is the line-of-sight
/// angle minus the heading, so the reconstruction recovers the pose exactly.
pub fn state_from_world(pose: &WorldPose, goal: &GoalPosition) -> Result<PlanningState> {
    let dx = goal.x - pose.x;
    let dy = goal.y - pose.y;
    let r = dx.hypot(dy);
    if !(r >= R_MIN) {
        return Err(NavError::DegenerateGoal { r });
    }
    let line_of_sight = dy.atan2(dx);
    Ok(PlanningState {
        r,
        delta: wrap_angle(line_of_sight - pose.theta),
        theta: wrap_angle(pose.theta),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: PlanningState,
    /// Set when the range would have dropped below `R_MIN`; the state is
    /// clamped at the guard.
    pub reached_goal: bool,
}

/// One classical RK4 step of the polar dynamics with `u` held constant.
pub fn integrate_step(state: &PlanningState, u: &ControlInput, dt: f64) -> Result<StepOutcome> {
    if !(dt > 0.0) {
        return Err(NavError::InvalidParams(format!("dt = {dt} must be positive")));
    }
    state.check_domain()?;

    let eval = |x: [f64; 3]| -> Option<[f64; 3]> {
        let s = PlanningState {
            r: x[0],
            delta: x[1],
            theta: x[2],
        };
        state_derivative(&s, u).ok()
    };
    let x0 = state.as_array();
    let clamped = || StepOutcome {
        state: PlanningState {
            r: R_MIN,
            delta: state.delta,
            theta: state.theta,
        },
        reached_goal: true,
    };

    let Some(k1) = eval(x0) else { return Ok(clamped()) };
    let Some(k2) = eval(axpy(0.5 * dt, &k1, &x0)) else {
        return Ok(clamped());
    };
    let Some(k3) = eval(axpy(0.5 * dt, &k2, &x0)) else {
        return Ok(clamped());
    };
    let Some(k4) = eval(axpy(dt, &k3, &x0)) else {
        return Ok(clamped());
    };

    let mut x = x0;
    for i in 0..3 {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    if !(x[0] > R_MIN) {
        let mut out = clamped();
        out.state.delta = wrap_angle(x[1]);
        out.state.theta = wrap_angle(x[2]);
        return Ok(out);
    }
    Ok(StepOutcome {
        state: PlanningState::new(x[0], x[1], x[2]),
        reached_goal: false,
    })
}

/// Advances `duration` seconds in `substeps` equal RK4 steps.
pub fn integrate_interval(
    state: &PlanningState,
    u: &ControlInput,
    duration: f64,
    substeps: usize,
) -> Result<StepOutcome> {
    let n = substeps.max(1);
    let dt = duration / n as f64;
    let mut out = StepOutcome {
        state: *state,
        reached_goal: false,
    };
    for _ in 0..n {
        out = integrate_step(&out.state, u, dt)?;
        if out.reached_goal {
            break;
        }
    }
    Ok(out)
}

pub(crate) fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn axpy(a: f64, x: &[f64; 3], y: &[f64; 3]) -> [f64; 3] {
    [y[0] + a * x[0], y[1] + a * x[1], y[2] + a * x[2]]
}
