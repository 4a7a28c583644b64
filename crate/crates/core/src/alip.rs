//! Angular-momentum linear inverted pendulum, step to step.
//!
//! Each axis evolves over one swing of duration `tau` as
//!
//! ```text
//! [x; xd]+ = [[cosh xi, sinh xi / rho], [rho sinh xi, cosh xi]] [x; xd] + [1 - cosh xi; -rho sinh xi] p
//! ```
//!
//! with `rho = sqrt(g / H)`, `xi = rho tau`, `x` the CoM coordinate and `p` the
//! stance-foot placement. The robot is modelled with one averaged axis per
//! body direction; left/right alternation is not represented.

use serde::{Deserialize, Serialize};

use crate::error::{NavError, Result};
use crate::model::{wrap_angle, ControlInput, WorldPose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlipParams {
    pub gravity: f64,
    pub com_height: f64,
    /// Swing duration, also the control interval.
    pub tau: f64,
}

impl Default for AlipParams {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            com_height: 1.0,
            tau: 0.3,
        }
    }
}

impl AlipParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gravity", self.gravity),
            ("com_height", self.com_height),
            ("tau", self.tau),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(NavError::InvalidParams(format!("alip.{name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    /// Natural frequency `sqrt(g / H)`.
    pub fn rho(&self) -> f64 {
        (self.gravity / self.com_height).sqrt()
    }

    /// Dimensionless swing duration `rho * tau`.
    pub fn xi(&self) -> f64 {
        self.rho() * self.tau
    }

    pub fn transition_matrix(&self) -> [[f64; 2]; 2] {
        let (rho, xi) = (self.rho(), self.xi());
        [[xi.cosh(), xi.sinh() / rho], [rho * xi.sinh(), xi.cosh()]]
    }

    pub fn input_column(&self) -> [f64; 2] {
        let (rho, xi) = (self.rho(), self.xi());
        [1.0 - xi.cosh(), -rho * xi.sinh()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AlipAxisState {
    pub pos: f64,
    pub vel: f64,
}

impl AlipAxisState {
    pub fn new(pos: f64, vel: f64) -> Self {
        Self { pos, vel }
    }
}

/// Evaluated relative to the placement, which is the same map as the matrix
/// form but keeps the standing fixed point `(p, 0)` bit-exact.
pub fn axis_step(state: &AlipAxisState, placement: f64, params: &AlipParams) -> AlipAxisState {
    let a = params.transition_matrix();
    let off = state.pos - placement;
    AlipAxisState {
        pos: placement + a[0][0] * off + a[0][1] * state.vel,
        vel: a[1][0] * off + a[1][1] * state.vel,
    }
}

/// Placement that makes the axis velocity equal `v_des` after one step.
pub fn placement_for_velocity(state: &AlipAxisState, v_des: f64, params: &AlipParams) -> f64 {
    let (rho, xi) = (params.rho(), params.xi());
    let rs = rho * xi.sinh();
    (rs * state.pos + xi.cosh() * state.vel - v_des) / rs
}

/// Sagittal and lateral axes, expressed in the current body frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AlipState {
    pub sagittal: AlipAxisState,
    pub lateral: AlipAxisState,
}

/// Advances the robot by one swing. Both axes are re-centred on the CoM, a
/// deadbeat placement targets the commanded body velocity, the CoM travel is
/// applied in the world frame and then the heading turns by `-omega * tau`.
/// The carried velocities are re-expressed in the turned body frame.
pub fn alip_step(pose: &WorldPose, state: &AlipState, u: &ControlInput, params: &AlipParams) -> (WorldPose, AlipState) {
    let step_axis = |vel: f64, v_des: f64| {
        let start = AlipAxisState::new(0.0, vel);
        let p = placement_for_velocity(&start, v_des, params);
        axis_step(&start, p, params)
    };
    let sag = step_axis(state.sagittal.vel, u.v_x);
    let lat = step_axis(state.lateral.vel, u.v_y);

    let (s, c) = pose.theta.sin_cos();
    let x = pose.x + c * sag.pos - s * lat.pos;
    let y = pose.y + s * sag.pos + c * lat.pos;
    let turn = u.omega * params.tau;
    let theta = wrap_angle(pose.theta - turn);

    let (ts, tc) = turn.sin_cos();
    let next = AlipState {
        sagittal: AlipAxisState::new(sag.pos, tc * sag.vel - ts * lat.vel),
        lateral: AlipAxisState::new(lat.pos, ts * sag.vel + tc * lat.vel),
    };
    (WorldPose { x, y, theta }, next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn default_constants() {
        let p = AlipParams::default();
        assert_abs_diff_eq!(p.rho(), 3.1321, epsilon = 1e-4);
        assert_abs_diff_eq!(p.xi(), 0.939628, epsilon = 1e-6);
        assert_abs_diff_eq!(p.xi().cosh(), 1.474901, epsilon = 1e-6);
    }

    #[test]
    fn standing_fixed_point_is_exact() {
        let params = AlipParams::default();
        for p in [0.0, 0.5, -2.0, 1e-3] {
            let s = axis_step(&AlipAxisState::new(p, 0.0), p, &params);
            assert_eq!((s.pos, s.vel), (p, 0.0));
        }
    }

    #[test]
    fn transition_is_area_preserving() {
        for tau in [0.05, 0.3, 1.0] {
            let a = AlipParams {
                tau,
                ..Default::default()
            }
            .transition_matrix();
            assert_abs_diff_eq!(a[0][0] * a[1][1] - a[0][1] * a[1][0], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn offset_form_matches_matrix_form() {
        let params = AlipParams::default();
        let a = params.transition_matrix();
        let b = params.input_column();
        let (x, v, p) = (0.3, -0.7, 0.45);
        let s = axis_step(&AlipAxisState::new(x, v), p, &params);
        assert_abs_diff_eq!(s.pos, a[0][0] * x + a[0][1] * v + b[0] * p, epsilon = 1e-14);
        assert_abs_diff_eq!(s.vel, a[1][0] * x + a[1][1] * v + b[1] * p, epsilon = 1e-14);
    }

    #[test]
    fn placement_round_trip() {
        let params = AlipParams::default();
        let start = AlipAxisState::new(0.1, -0.3);
        for v in [-1.0, 0.0, 0.25, 2.0] {
            let p = placement_for_velocity(&start, v, &params);
            assert_abs_diff_eq!(axis_step(&start, p, &params).vel, v, epsilon = 1e-12);
        }
        assert_eq!(placement_for_velocity(&AlipAxisState::default(), 0.0, &params), 0.0);
        assert_abs_diff_eq!(
            placement_for_velocity(&AlipAxisState::new(0.4, 0.0), 0.0, &params),
            0.4,
            epsilon = 1e-15
        );
    }

    #[test]
    fn zero_command_from_rest_stays_put() {
        let pose = WorldPose::new(1.0, -2.0, 0.3);
        let (next, st) = alip_step(
            &pose,
            &AlipState::default(),
            &ControlInput::ZERO,
            &AlipParams::default(),
        );
        assert_eq!(next, pose);
        assert_eq!(st, AlipState::default());
    }

    #[test]
    fn steady_gait_displacement() {
        let params = AlipParams::default();
        let v = 0.8;
        let state = AlipState {
            sagittal: AlipAxisState::new(0.0, v),
            ..Default::default()
        };
        let theta = 0.7;
        let (next, st) = alip_step(
            &WorldPose::new(0.0, 0.0, theta),
            &state,
            &ControlInput::new(v, 0.0, 0.0),
            &params,
        );
        let expected = 2.0 * v * (params.xi() / 2.0).tanh() / params.rho();
        assert_abs_diff_eq!(next.x, expected * theta.cos(), epsilon = 1e-12);
        assert_abs_diff_eq!(next.y, expected * theta.sin(), epsilon = 1e-12);
        assert_abs_diff_eq!(expected / (v * params.tau), 1.0, epsilon = 0.07);
        assert_abs_diff_eq!(st.sagittal.vel, v, epsilon = 1e-12);
    }

    #[test]
    fn full_revolution() {
        let params = AlipParams::default();
        let pose = WorldPose::new(0.0, 0.0, 0.4);
        let (next, _) = alip_step(
            &pose,
            &AlipState::default(),
            &ControlInput::new(0.0, 0.0, 2.0 * PI / params.tau),
            &params,
        );
        assert_abs_diff_eq!(next.theta, 0.4, epsilon = 1e-12);
    }

    #[test]
    fn velocity_follows_the_turning_frame() {
        // After a quarter turn the old forward velocity appears on the lateral axis.
        let params = AlipParams::default();
        let omega = -(PI / 2.0) / params.tau;
        let (next, st) = alip_step(
            &WorldPose::new(0.0, 0.0, 0.0),
            &AlipState::default(),
            &ControlInput::new(0.5, 0.0, omega),
            &params,
        );
        assert_abs_diff_eq!(next.theta, PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(st.sagittal.vel, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(st.lateral.vel, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn validation() {
        assert!(AlipParams::default().validate().is_ok());
        assert!(AlipParams {
            tau: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
