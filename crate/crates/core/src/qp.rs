//! The CLF-CBF quadratic program
//!
//! ```text
//! min  1/2 (u - u_ref)^T H (u - u_ref) + 1/2 p s^2
//! s.t. a.u - s + mu V <= 0        (CLF, softened by s)
//!      d.u - eta B    <= 0        (CBF)
//! ```
//!
//! solved exactly by enumerating the four active sets of its KKT conditions.
//! `H` is diagonal, so every case has a closed form.

use serde::{Deserialize, Serialize};

use crate::cbf::{CbfRow, ObstacleField};
use crate::clf::{clf_row, lyapunov, reference_control, ClfParams, ClfRow};
use crate::error::{NavError, Result};
use crate::model::{dot3, ControlInput, GoalPosition, PlanningState};

/// Primal and dual feasibility tolerance used for case selection and for the
/// KKT certificate.
pub const KKT_TOL: f64 = 1e-8;
/// Singularity threshold on the determinant of the both-active system.
pub const SINGULAR_DET: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QpWeights {
    /// Diagonal of `H`, weights on `(v_x, v_y, omega)`.
    pub h: [f64; 3],
    /// Slack weight.
    pub p: f64,
    /// CLF decay rate.
    pub mu: f64,
    /// CBF decay rate.
    pub eta: f64,
}

impl Default for QpWeights {
    fn default() -> Self {
        // Sagittal motion cheap, lateral motion expensive.
        Self {
            h: [1.0, 4.0, 2.0],
            p: 100.0,
            mu: 0.2,
            eta: 1.0,
        }
    }
}

impl QpWeights {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("h1", self.h[0]),
            ("h2", self.h[1]),
            ("h3", self.h[2]),
            ("p", self.p),
            ("mu", self.mu),
            ("eta", self.eta),
        ];
        for (name, v) in named {
            if !(v > 0.0) || !v.is_finite() {
                return Err(NavError::InvalidParams(format!("qp.{name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    /// `x^T H^-1 y`.
    fn inv_h_dot(&self, x: &[f64; 3], y: &[f64; 3]) -> f64 {
        x[0] * y[0] / self.h[0] + x[1] * y[1] / self.h[1] + x[2] * y[2] / self.h[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseTag {
    BothInactive,
    CbfOnly,
    ClfOnly,
    BothActive,
}

impl CaseTag {
    pub const ALL: [CaseTag; 4] = [
        CaseTag::BothInactive,
        CaseTag::CbfOnly,
        CaseTag::ClfOnly,
        CaseTag::BothActive,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CaseTag::BothInactive => "both_inactive",
            CaseTag::CbfOnly => "cbf_only",
            CaseTag::ClfOnly => "clf_only",
            CaseTag::BothActive => "both_active",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl std::fmt::Display for CaseTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Constraint data at one state. The drift terms `L_fV`, `L_fB` vanish for the
/// driftless planning model and do not appear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    pub clf_row: ClfRow,
    pub v: f64,
    pub cbf_row: CbfRow,
    pub b: f64,
    pub u_ref: ControlInput,
}

impl QpProblem {
    pub fn with_reference(mut self, u_ref: ControlInput) -> Self {
        self.u_ref = u_ref;
        self
    }

    /// `a.u - s + mu V`; feasible when `<= 0`.
    pub fn clf_residual(&self, w: &QpWeights, u: &ControlInput, s: f64) -> f64 {
        dot3(&self.clf_row.as_array(), &u.as_array()) - s + w.mu * self.v
    }

    /// `d.u - eta B`; feasible when `<= 0`.
    pub fn cbf_residual(&self, w: &QpWeights, u: &ControlInput) -> f64 {
        dot3(&self.cbf_row.as_array(), &u.as_array()) - w.eta * self.b
    }

    pub fn objective(&self, w: &QpWeights, u: &ControlInput, s: f64) -> f64 {
        let e = [
            u.v_x - self.u_ref.v_x,
            u.v_y - self.u_ref.v_y,
            u.omega - self.u_ref.omega,
        ];
        0.5 * (w.h[0] * e[0] * e[0] + w.h[1] * e[1] * e[1] + w.h[2] * e[2] * e[2]) + 0.5 * w.p * s * s
    }
}

pub fn assemble(
    state: &PlanningState,
    goal: &GoalPosition,
    field: &ObstacleField,
    clf: &ClfParams,
) -> Result<QpProblem> {
    Ok(QpProblem {
        clf_row: clf_row(state, clf)?,
        v: lyapunov(state, clf),
        cbf_row: field.product_row(state, goal)?,
        b: field.product_barrier(state, goal),
        u_ref: reference_control(state, clf)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub u_star: ControlInput,
    pub s_star: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub case_tag: CaseTag,
}

struct Candidate {
    u: [f64; 3],
    s: f64,
    lambda1: f64,
    lambda2: f64,
}

/// Solves the QP by trying the active sets in the order
/// both-inactive, CBF-only, CLF-only, both-active and returning the first
/// candidate that satisfies primal and dual feasibility.
pub fn solve(problem: &QpProblem, w: &QpWeights) -> Result<QpSolution> {
    let a = problem.clf_row.as_array();
    let d = problem.cbf_row.as_array();
    let u_ref = problem.u_ref.as_array();
    let clf_offset = w.mu * problem.v;
    let cbf_offset = w.eta * problem.b;

    let a_h_a = w.inv_h_dot(&a, &a);
    let d_h_d = w.inv_h_dot(&d, &d);
    let a_h_d = w.inv_h_dot(&a, &d);
    let a_uref = dot3(&a, &u_ref);
    let d_uref = dot3(&d, &u_ref);
    // With d = 0 the CBF row cannot be active; it is either slack (B >= 0) or
    // the problem is infeasible.
    let cbf_degenerate = !(d_h_d > 0.0);

    let shift = |l1: f64, l2: f64| -> [f64; 3] {
        let mut u = u_ref;
        for k in 0..3 {
            u[k] -= (l1 * a[k] + l2 * d[k]) / w.h[k];
        }
        u
    };
    let accept = |c: &Candidate| -> bool {
        let u = ControlInput::from_array(c.u);
        c.lambda1 >= -KKT_TOL
            && c.lambda2 >= -KKT_TOL
            && problem.clf_residual(w, &u, c.s) <= KKT_TOL
            && problem.cbf_residual(w, &u) <= KKT_TOL
    };

    let mut tried = Vec::with_capacity(4);
    for tag in CaseTag::ALL {
        let cand = match tag {
            CaseTag::BothInactive => Candidate {
                u: u_ref,
                s: 0.0,
                lambda1: 0.0,
                lambda2: 0.0,
            },
            CaseTag::CbfOnly => {
                if cbf_degenerate {
                    continue;
                }
                let l2 = (d_uref - cbf_offset) / d_h_d;
                Candidate {
                    u: shift(0.0, l2),
                    s: 0.0,
                    lambda1: 0.0,
                    lambda2: l2,
                }
            }
            CaseTag::ClfOnly => {
                let l1 = w.p * (clf_offset + a_uref) / (w.p * a_h_a + 1.0);
                Candidate {
                    u: shift(l1, 0.0),
                    s: l1 / w.p,
                    lambda1: l1,
                    lambda2: 0.0,
                }
            }
            CaseTag::BothActive => {
                if cbf_degenerate {
                    continue;
                }
                // [a_h_a + 1/p, a_h_d; a_h_d, d_h_d] [l1; l2] = [a.u_ref + mu V; d.u_ref - eta B]
                let m11 = a_h_a + 1.0 / w.p;
                let det = m11 * d_h_d - a_h_d * a_h_d;
                if det.abs() <= SINGULAR_DET {
                    return Err(NavError::Infeasible2x2 {
                        det,
                        a_norm_sq: dot3(&a, &a),
                        d_norm_sq: dot3(&d, &d),
                    });
                }
                let r1 = a_uref + clf_offset;
                let r2 = d_uref - cbf_offset;
                let l1 = (r1 * d_h_d - a_h_d * r2) / det;
                let l2 = (m11 * r2 - a_h_d * r1) / det;
                Candidate {
                    u: shift(l1, l2),
                    s: l1 / w.p,
                    lambda1: l1,
                    lambda2: l2,
                }
            }
        };
        if accept(&cand) {
            return Ok(QpSolution {
                u_star: ControlInput::from_array(cand.u),
                s_star: cand.s,
                lambda1: cand.lambda1.max(0.0),
                lambda2: cand.lambda2.max(0.0),
                case_tag: tag,
            });
        }
        tried.push(tag);
    }
    log::debug!("no KKT case accepted after {tried:?}: {problem:?}");
    Err(NavError::NoValidCase)
}

/// Residuals of every KKT condition at a solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktCertificate {
    /// `max_k |h_k (u*_k - u_ref_k) + lambda1 a_k + lambda2 d_k|`.
    pub stationarity: f64,
    /// `|p s* - lambda1|`.
    pub slack_stationarity: f64,
    pub clf_residual: f64,
    pub cbf_residual: f64,
    pub clf_complementarity: f64,
    pub cbf_complementarity: f64,
    pub min_multiplier: f64,
}

impl KktCertificate {
    pub fn holds(&self, tol: f64) -> bool {
        self.stationarity <= tol
            && self.slack_stationarity <= tol
            && self.clf_residual <= tol
            && self.cbf_residual <= tol
            && self.clf_complementarity <= tol
            && self.cbf_complementarity <= tol
            && self.min_multiplier >= -tol
    }
}

pub fn kkt_certificate(problem: &QpProblem, w: &QpWeights, sol: &QpSolution) -> KktCertificate {
    let a = problem.clf_row.as_array();
    let d = problem.cbf_row.as_array();
    let u = sol.u_star.as_array();
    let u_ref = problem.u_ref.as_array();
    let stationarity = (0..3)
        .map(|k| (w.h[k] * (u[k] - u_ref[k]) + sol.lambda1 * a[k] + sol.lambda2 * d[k]).abs())
        .fold(0.0, f64::max);
    let clf_residual = problem.clf_residual(w, &sol.u_star, sol.s_star);
    let cbf_residual = problem.cbf_residual(w, &sol.u_star);
    KktCertificate {
        stationarity,
        slack_stationarity: (w.p * sol.s_star - sol.lambda1).abs(),
        clf_residual,
        cbf_residual,
        clf_complementarity: (sol.lambda1 * clf_residual).abs(),
        cbf_complementarity: (sol.lambda2 * cbf_residual).abs(),
        min_multiplier: sol.lambda1.min(sol.lambda2),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumThresholds {
    pub u_eps: f64,
    pub r_goal: f64,
}

impl Default for EquilibriumThresholds {
    fn default() -> Self {
        Self {
            u_eps: 1e-6,
            r_goal: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub is_equilibrium: bool,
    pub u_norm: f64,
    pub b_value: f64,
    pub delta: f64,
    pub d_x: f64,
    pub d_y: f64,
}

/// Flags a QP-induced equilibrium: vanishing optimal control away from the goal.
pub fn detect_equilibrium(
    sol: &QpSolution,
    state: &PlanningState,
    problem: &QpProblem,
    thresholds: &EquilibriumThresholds,
) -> EquilibriumReport {
    let u_norm = sol.u_star.norm();
    EquilibriumReport {
        is_equilibrium: u_norm <= thresholds.u_eps && state.r > thresholds.r_goal,
        u_norm,
        b_value: problem.b,
        delta: state.delta,
        d_x: problem.cbf_row.d_x,
        d_y: problem.cbf_row.d_y,
    }
}

/// Adds `epsilon` to the reference turn rate.
pub fn perturb_reference(u_ref: &ControlInput, epsilon: f64) -> ControlInput {
    ControlInput {
        omega: u_ref.omega + epsilon,
        ..*u_ref
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cbf::{certify_and_select_kappas, Obstacle};
    use crate::model::{state_from_world, WorldPose};
    use approx::assert_abs_diff_eq;

    fn setup(pose: WorldPose, obstacles: &[Obstacle]) -> (PlanningState, QpProblem) {
        let goal = GoalPosition::new(0.0, 0.0);
        let state = state_from_world(&pose, &goal).unwrap();
        let field = certify_and_select_kappas(obstacles).unwrap();
        let problem = assemble(&state, &goal, &field, &ClfParams::default()).unwrap();
        (state, problem)
    }

    #[test]
    fn far_obstacle_small_decay_returns_reference() {
        let (_, problem) = setup(WorldPose::new(-1.0, -0.5, 0.2), &[Obstacle::circle(30.0, 30.0, 1.0)]);
        let w = QpWeights {
            mu: 0.01,
            ..Default::default()
        };
        let sol = solve(&problem, &w).unwrap();
        assert_eq!(sol.case_tag, CaseTag::BothInactive);
        assert_eq!(sol.u_star, problem.u_ref);
        assert_eq!((sol.s_star, sol.lambda1, sol.lambda2), (0.0, 0.0, 0.0));
    }

    #[test]
    fn equilibrium_geometry_gives_zero_control() {
        // Robot on the boundary of an obstacle that sits between it and the goal.
        let (state, problem) = setup(WorldPose::new(-4.0, 0.0, 0.0), &[Obstacle::circle(-3.0, 0.0, 1.0)]);
        assert_eq!(problem.b, 0.0);
        assert_eq!(problem.cbf_row.d_y, 0.0);
        assert!(problem.cbf_row.d_x > 0.0);
        let w = QpWeights::default();
        let sol = solve(&problem, &w).unwrap();
        assert_eq!(sol.case_tag, CaseTag::BothActive);
        assert!(sol.u_star.norm() < 1e-12);
        assert_abs_diff_eq!(sol.lambda1, w.p * w.mu * problem.v, epsilon = 1e-9);
        let expected_l2 =
            (w.h[0] * problem.u_ref.v_x - w.p * w.mu * problem.v * problem.clf_row.a_x) / problem.cbf_row.d_x;
        assert_abs_diff_eq!(sol.lambda2, expected_l2, epsilon = 1e-9);

        let report = detect_equilibrium(&sol, &state, &problem, &EquilibriumThresholds::default());
        assert!(report.is_equilibrium);
        assert_eq!(report.b_value, 0.0);
        assert_eq!(report.delta, 0.0);
    }

    #[test]
    fn off_axis_bearing_never_stalls() {
        let (state, problem) = setup(WorldPose::new(-4.0, 0.0, -0.3), &[Obstacle::circle(-3.0, 0.0, 1.0)]);
        assert!(state.delta > 0.0);
        let sol = solve(&problem, &QpWeights::default()).unwrap();
        assert!(sol.u_star.omega < 0.0);
        let report = detect_equilibrium(&sol, &state, &problem, &EquilibriumThresholds::default());
        assert!(!report.is_equilibrium);
    }

    #[test]
    fn assembled_rows() {
        let (_, problem) = setup(WorldPose::new(-6.0, 0.0, 0.0), &[Obstacle::circle(-3.0, 0.0, 1.0)]);
        assert!(problem.cbf_row.d_x > 0.0);
        assert_eq!(problem.cbf_row.d_y, 0.0);
        assert_eq!(problem.clf_row.as_array(), [-6.0, 0.0, 0.0]);

        let (_, far) = setup(WorldPose::new(-6.0, 0.0, 0.0), &[Obstacle::circle(60.0, 40.0, 1.0)]);
        let w = QpWeights::default();
        assert!(far.b > 1000.0);
        assert!(far.cbf_residual(&w, &far.u_ref) < -1000.0);
    }

    #[test]
    fn solutions_carry_a_kkt_certificate() {
        let w = QpWeights::default();
        for (pose, ob) in [
            (WorldPose::new(-6.0, 0.5, 0.1), Obstacle::circle(-4.0, 0.0, 1.0)),
            (WorldPose::new(-8.0, -2.0, 1.0), Obstacle::circle(-7.0, -0.5, 1.0)),
            (WorldPose::new(-2.0, 3.0, -2.0), Obstacle::circle(-1.0, 1.0, 0.8)),
            (WorldPose::new(-0.3, 0.2, 2.0), Obstacle::circle(5.0, 5.0, 0.8)),
        ] {
            let (_, problem) = setup(pose, &[ob]);
            let sol = solve(&problem, &w).unwrap();
            let cert = kkt_certificate(&problem, &w, &sol);
            assert!(cert.holds(KKT_TOL), "{cert:?}");
            assert_abs_diff_eq!(sol.s_star, sol.lambda1 / w.p, epsilon = 1e-15);
        }
    }

    #[test]
    fn empty_field_never_activates_the_barrier() {
        let goal = GoalPosition::new(0.0, 0.0);
        let state = state_from_world(&WorldPose::new(-3.0, 1.0, 0.5), &goal).unwrap();
        let problem = assemble(&state, &goal, &ObstacleField::empty(), &ClfParams::default()).unwrap();
        assert_eq!(problem.cbf_row.as_array(), [0.0; 3]);
        let sol = solve(&problem, &QpWeights::default()).unwrap();
        assert!(matches!(sol.case_tag, CaseTag::BothInactive | CaseTag::ClfOnly));
    }

    #[test]
    fn degenerate_infeasible_barrier_is_reported() {
        let problem = QpProblem {
            clf_row: ClfRow {
                a_x: -1.0,
                a_y: 0.0,
                a_omega: 0.0,
            },
            v: 0.5,
            cbf_row: CbfRow::default(),
            b: -1.0,
            u_ref: ControlInput::new(0.5, 0.0, 0.0),
        };
        assert_eq!(solve(&problem, &QpWeights::default()), Err(NavError::NoValidCase));
    }

    #[test]
    fn perturbation() {
        let u = ControlInput::new(0.3, -0.2, 0.1);
        assert_eq!(perturb_reference(&u, 0.0), u);
        let p = perturb_reference(&u, 1e-4);
        assert_eq!((p.v_x, p.v_y), (u.v_x, u.v_y));
        assert_eq!(p.omega, 0.1 + 1e-4);
    }

    #[test]
    fn weights_validation() {
        assert!(QpWeights::default().validate().is_ok());
        assert!(QpWeights {
            p: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(QpWeights {
            h: [1.0, -1.0, 1.0],
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn case_tag_names_round_trip() {
        for tag in CaseTag::ALL {
            assert_eq!(CaseTag::parse(tag.as_str()), Some(tag));
        }
        assert_eq!(CaseTag::parse("nope"), None);
    }
}
