//! Biped-shaped control Lyapunov function and its closed-form reference
//! controller.
//!
//! `V = (r^2 + gamma^2 sin^2(beta delta)) / 2`. The reference control drives
//! the range with `r' = -v_r` and the bearing with `delta' = v_delta`, so `V`
//! decreases along it whenever `r > 0`.

use serde::{Deserialize, Serialize};

use crate::error::{NavError, Result};
use crate::model::{ControlInput, PlanningState};

/// Which power of `gamma` multiplies the turn-rate entry of `L_gV`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnRowForm {
    /// `beta gamma^2 sin(2 beta delta) / 2`, the exact derivative of `V`.
    #[default]
    Consistent,
    /// `beta gamma sin(2 beta delta) / 2`, with a single factor of `gamma`.
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClfParams {
    pub gamma: f64,
    pub beta: f64,
    pub alpha: f64,
    pub k_r1: f64,
    pub k_r2: f64,
    pub k_d1: f64,
    pub k_d2: f64,
    pub turn_row: TurnRowForm,
}

impl Default for ClfParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            beta: 0.5,
            alpha: 1.0,
            k_r1: 1.0,
            k_r2: 1.0,
            k_d1: 1.0,
            k_d2: 1.0,
            turn_row: TurnRowForm::Consistent,
        }
    }
}

impl ClfParams {
    /// Rejects non-positive constants. Returns warnings for values that keep
    /// `V` well defined but void the sign arguments of the equilibrium
    /// analysis (`|beta delta| <= pi/2` needs `beta <= 1/2`).
    pub fn validate(&self) -> Result<Vec<String>> {
        let named = [
            ("gamma", self.gamma),
            ("beta", self.beta),
            ("alpha", self.alpha),
            ("k_r1", self.k_r1),
            ("k_r2", self.k_r2),
            ("k_d1", self.k_d1),
            ("k_d2", self.k_d2),
        ];
        for (name, v) in named {
            if !(v > 0.0) || !v.is_finite() {
                return Err(NavError::InvalidParams(format!("clf.{name} = {v} must be positive")));
            }
        }
        let mut warnings = Vec::new();
        if self.beta > 0.5 {
            let msg = format!(
                "clf.beta = {} exceeds 1/2; equilibrium sign guarantees no longer apply",
                self.beta
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        Ok(warnings)
    }
}

/// `L_gV = (a_x, a_y, a_omega)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClfRow {
    pub a_x: f64,
    pub a_y: f64,
    pub a_omega: f64,
}

impl ClfRow {
    pub fn as_array(&self) -> [f64; 3] {
        [self.a_x, self.a_y, self.a_omega]
    }
}

pub fn lyapunov(state: &PlanningState, p: &ClfParams) -> f64 {
    let s = (p.beta * state.delta).sin();
    0.5 * (state.r * state.r + p.gamma * p.gamma * s * s)
}

pub fn clf_row(state: &PlanningState, p: &ClfParams) -> Result<ClfRow> {
    state.check_domain()?;
    let r = state.r;
    let (sd, cd) = state.delta.sin_cos();
    let s2 = (2.0 * p.beta * state.delta).sin();
    let shaped = p.beta * p.gamma * p.gamma * s2;
    let a_omega = match p.turn_row {
        TurnRowForm::Consistent => shaped / 2.0,
        TurnRowForm::AsPrinted => p.beta * p.gamma * s2 / 2.0,
    };
    Ok(ClfRow {
        a_x: -r * cd + shaped * sd / (2.0 * r),
        a_y: -r * sd - shaped * cd / (2.0 * r),
        a_omega,
    })
}

/// Range and bearing feedback `(v_r, v_delta)`.
pub fn feedback_rates(state: &PlanningState, p: &ClfParams) -> (f64, f64) {
    let r = state.r;
    let v_r = p.k_r1 * r / (p.k_r2 + r);
    let v_delta = -(2.0 / p.beta) * p.k_d1 * r / (p.k_d2 + r) * (2.0 * p.beta * state.delta).sin();
    (v_r, v_delta)
}

pub fn reference_control(state: &PlanningState, p: &ClfParams) -> Result<ControlInput> {
    state.check_domain()?;
    let r = state.r;
    let (sd, cd) = state.delta.sin_cos();
    let (v_r, v_delta) = feedback_rates(state, p);
    let den = p.alpha + r * r * cd * cd;
    let omega = r * cd * (r * v_delta * cd - v_r * sd) / den;
    let v_y = p.alpha * (v_r * sd - r * v_delta * cd) / den;
    let v_x = (v_r * cd * r * r + p.alpha * v_delta * sd * r + p.alpha * v_r * cd) / den;
    Ok(ControlInput { v_x, v_y, omega })
}
