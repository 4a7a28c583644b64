//! Quadratic obstacle barriers and their smooth product composition.
//!
//! A single obstacle contributes `B = (p - c)^T Q (p - c) - r_o^2` where `p` is
//! the robot position reconstructed from the polar state. Several obstacles
//! that are a positive distance apart are composed as
//!
//! ```text
//! B_M = kappa * prod_i sigma(B_i / kappa)
//! ```
//!
//! with the C^1 saturation `sigma` and a common scale `kappa` small enough that
//! every factor is saturated at 1 inside any other obstacle. The leading
//! `kappa` is a positive constant: it leaves the QP's feasible set and optimal
//! control unchanged and makes `B_M` coincide with `B_i` inside obstacle `i`.

use serde::{Deserialize, Serialize};

use crate::error::{NavError, Result};
use crate::model::{world_from_state, GoalPosition, PlanningState, WorldPose};

const IDENTITY: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];

fn identity() -> [[f64; 2]; 2] {
    IDENTITY
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
    #[serde(default = "identity")]
    pub q: [[f64; 2]; 2],
}

impl Obstacle {
    pub fn circle(x: f64, y: f64, radius: f64) -> Self {
        Self {
            center: [x, y],
            radius,
            q: IDENTITY,
        }
    }

    pub fn new(center: [f64; 2], q: [[f64; 2]; 2], radius: f64) -> Result<Self> {
        let ob = Self { center, radius, q };
        ob.validate()?;
        Ok(ob)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(NavError::InvalidObstacle(format!(
                "radius {} must be positive",
                self.radius
            )));
        }
        if !self.center.iter().all(|v| v.is_finite()) {
            return Err(NavError::InvalidObstacle("center must be finite".into()));
        }
        let q = &self.q;
        if (q[0][1] - q[1][0]).abs() > 1e-12 * (1.0 + q[0][1].abs()) {
            return Err(NavError::InvalidObstacle(format!(
                "shape matrix {q:?} is not symmetric"
            )));
        }
        if !(self.lambda_min() > 0.0) {
            return Err(NavError::InvalidObstacle(format!(
                "shape matrix {q:?} is not positive definite"
            )));
        }
        Ok(())
    }

    /// Smallest eigenvalue of the (symmetric) shape matrix.
    pub fn lambda_min(&self) -> f64 {
        let [[a, b], [_, c]] = self.q;
        let mean = 0.5 * (a + c);
        let half_diff = 0.5 * (a - c);
        mean - (half_diff * half_diff + b * b).sqrt()
    }

    /// Radius of the smallest center-aligned circle containing the unsafe set.
    pub fn effective_radius(&self) -> f64 {
        self.radius / self.lambda_min().sqrt()
    }

    pub fn barrier_at(&self, position: [f64; 2]) -> f64 {
        let e = [position[0] - self.center[0], position[1] - self.center[1]];
        let qe = [
            self.q[0][0] * e[0] + self.q[0][1] * e[1],
            self.q[1][0] * e[0] + self.q[1][1] * e[1],
        ];
        e[0] * qe[0] + e[1] * qe[1] - self.radius * self.radius
    }

    /// `a(x) = 2 (p - c)^T Q`, the gradient of the barrier in world position.
    pub fn position_gradient(&self, position: [f64; 2]) -> [f64; 2] {
        let e = [position[0] - self.center[0], position[1] - self.center[1]];
        [
            2.0 * (e[0] * self.q[0][0] + e[1] * self.q[1][0]),
            2.0 * (e[0] * self.q[0][1] + e[1] * self.q[1][1]),
        ]
    }

    fn check_not_at_center(&self, position: [f64; 2]) -> Result<()> {
        if position[0] == self.center[0] && position[1] == self.center[1] {
            return Err(NavError::Domain(format!(
                "robot at obstacle center {:?}: barrier gradient vanishes",
                self.center
            )));
        }
        Ok(())
    }
}

pub fn barrier(obstacle: &Obstacle, pose: &WorldPose) -> f64 {
    obstacle.barrier_at(pose.position())
}

/// `(d_x, d_y)` with `(d_x, d_y, 0) = -L_gB`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CbfRow {
    pub d_x: f64,
    pub d_y: f64,
}

impl CbfRow {
    pub fn as_array(&self) -> [f64; 3] {
        [self.d_x, self.d_y, 0.0]
    }

    pub fn norm_sq(&self) -> f64 {
        self.d_x * self.d_x + self.d_y * self.d_y
    }
}

/// `L_gB = a(x) b(x) g(x)` for a barrier whose world-position gradient is `a`.
///
/// `b(x)` is the Jacobian of the reconstructed position with respect to
/// `(r, delta, theta)`; its last two columns coincide, so the turn-rate entry
/// of the product is exactly zero.
pub fn lie_derivative_row(position_gradient: [f64; 2], state: &PlanningState) -> Result<[f64; 3]> {
    let g = crate::model::control_matrix(state)?;
    let r = state.r;
    let (sp, cp) = (state.delta + state.theta).sin_cos();
    let b = [[-cp, r * sp, r * sp], [-sp, -r * cp, -r * cp]];
    let ab = [
        position_gradient[0] * b[0][0] + position_gradient[1] * b[1][0],
        position_gradient[0] * b[0][1] + position_gradient[1] * b[1][1],
        position_gradient[0] * b[0][2] + position_gradient[1] * b[1][2],
    ];
    let mut row = [0.0; 3];
    for (j, out) in row.iter_mut().enumerate() {
        *out = ab[0] * g[0][j] + ab[1] * g[1][j] + ab[2] * g[2][j];
    }
    debug_assert!(
        row[2].abs() <= 1e-12 * (1.0 + ab[1].abs()),
        "turn-rate entry of L_gB = {}",
        row[2]
    );
    Ok(row)
}

fn row_from_gradient(gradient: [f64; 2], state: &PlanningState) -> Result<CbfRow> {
    let lgb = lie_derivative_row(gradient, state)?;
    Ok(CbfRow {
        d_x: -lgb[0],
        d_y: -lgb[1],
    })
}

pub fn cbf_row(obstacle: &Obstacle, state: &PlanningState, goal: &GoalPosition) -> Result<CbfRow> {
    state.check_domain()?;
    let p = world_from_state(state, goal).position();
    obstacle.check_not_at_center(p)?;
    row_from_gradient(obstacle.position_gradient(p), state)
}

/// C^1 saturation: identity below zero, a cubic blend on `(0, 1)`, one above.
pub fn saturate(s: f64) -> f64 {
    if s <= 0.0 {
        s
    } else if s < 1.0 {
        s * (1.0 + s - s * s)
    } else {
        1.0
    }
}

pub fn saturate_deriv(s: f64) -> f64 {
    if s <= 0.0 {
        1.0
    } else if s < 1.0 {
        1.0 + 2.0 * s - 3.0 * s * s
    } else {
        0.0
    }
}

/// A certified set of obstacles that are pairwise a positive distance apart,
/// together with their saturation scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleField {
    obstacles: Vec<Obstacle>,
    kappas: Vec<f64>,
    pairwise_gaps: Vec<Vec<f64>>,
    warnings: Vec<String>,
}

impl ObstacleField {
    pub fn empty() -> Self {
        Self {
            obstacles: Vec::new(),
            kappas: Vec::new(),
            pairwise_gaps: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    /// Per-obstacle saturation scale; infinite when there is nothing to
    /// separate from (a single obstacle is never saturated).
    pub fn kappas(&self) -> &[f64] {
        &self.kappas
    }

    /// `Delta_ij`, infinite on the diagonal.
    pub fn pairwise_gaps(&self) -> &[Vec<f64>] {
        &self.pairwise_gaps
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn len(&self) -> usize {
        self.obstacles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obstacles.is_empty()
    }

    fn saturating(&self) -> bool {
        self.obstacles.len() >= 2
    }

    /// The common saturation scale, if the field saturates at all.
    pub fn kappa(&self) -> Option<f64> {
        if self.saturating() {
            Some(self.kappas[0])
        } else {
            None
        }
    }

    /// `sigma_{kappa_i}(B_i)` for each obstacle at a world position.
    pub fn factors_at(&self, position: [f64; 2]) -> Vec<f64> {
        self.obstacles
            .iter()
            .zip(&self.kappas)
            .map(|(ob, &k)| {
                let b = ob.barrier_at(position);
                if self.saturating() {
                    saturate(b / k)
                } else {
                    b
                }
            })
            .collect()
    }

    /// `prod_i sigma_{kappa_i}(B_i)` without the leading scale.
    pub fn saturated_product_at(&self, position: [f64; 2]) -> f64 {
        self.factors_at(position).iter().product()
    }

    fn saturated_product_gradient_at(&self, position: [f64; 2]) -> [f64; 2] {
        let factors = self.factors_at(position);
        let mut grad = [0.0; 2];
        for (i, ob) in self.obstacles.iter().enumerate() {
            let slope = if self.saturating() {
                let k = self.kappas[i];
                saturate_deriv(ob.barrier_at(position) / k) / k
            } else {
                1.0
            };
            if slope == 0.0 {
                continue;
            }
            let others: f64 = factors
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, f)| f)
                .product();
            let gi = ob.position_gradient(position);
            grad[0] += others * slope * gi[0];
            grad[1] += others * slope * gi[1];
        }
        grad
    }

    fn scale(&self) -> f64 {
        self.kappa().unwrap_or(1.0)
    }

    /// Composite barrier at a world position. An empty field evaluates to the
    /// empty product, 1.
    pub fn barrier_at(&self, position: [f64; 2]) -> f64 {
        self.scale() * self.saturated_product_at(position)
    }

    pub fn barrier_gradient_at(&self, position: [f64; 2]) -> [f64; 2] {
        let g = self.saturated_product_gradient_at(position);
        let s = self.scale();
        [s * g[0], s * g[1]]
    }

    fn position_checked(&self, state: &PlanningState, goal: &GoalPosition) -> Result<[f64; 2]> {
        state.check_domain()?;
        let p = world_from_state(state, goal).position();
        for ob in &self.obstacles {
            ob.check_not_at_center(p)?;
        }
        Ok(p)
    }

    pub fn product_barrier(&self, state: &PlanningState, goal: &GoalPosition) -> f64 {
        self.barrier_at(world_from_state(state, goal).position())
    }

    pub fn product_row(&self, state: &PlanningState, goal: &GoalPosition) -> Result<CbfRow> {
        let p = self.position_checked(state, goal)?;
        row_from_gradient(self.barrier_gradient_at(p), state)
    }

    /// Row of the unscaled product `prod_i sigma_{kappa_i}(B_i)`.
    pub fn saturated_product_row(&self, state: &PlanningState, goal: &GoalPosition) -> Result<CbfRow> {
        let p = self.position_checked(state, goal)?;
        row_from_gradient(self.saturated_product_gradient_at(p), state)
    }
}

/// Certifies that the obstacles are pairwise a positive distance apart and
/// picks the common saturation scale `kappa = min_i Delta_i^2`.
///
/// Gaps are measured between bounding circles of radius `r_o / sqrt(lambda_min(Q))`.
/// The scale must stay below `m_i = lambda_min(Q_i) ((r_i + Delta_i)^2 - r_i^2)`,
/// the smallest value `B_i` takes a distance `Delta_i` outside its bounding
/// circle; otherwise it is shrunk to `0.9 min_i m_i`.
pub fn certify_and_select_kappas(obstacles: &[Obstacle]) -> Result<ObstacleField> {
    for ob in obstacles {
        ob.validate()?;
    }
    let m = obstacles.len();
    let radii: Vec<f64> = obstacles.iter().map(Obstacle::effective_radius).collect();
    let mut gaps = vec![vec![f64::INFINITY; m]; m];
    for i in 0..m {
        for j in (i + 1)..m {
            let (ci, cj) = (obstacles[i].center, obstacles[j].center);
            let gap = (ci[0] - cj[0]).hypot(ci[1] - cj[1]) - radii[i] - radii[j];
            if !(gap > 0.0) {
                return Err(NavError::OverlappingObstacles { i, j, gap });
            }
            gaps[i][j] = gap;
            gaps[j][i] = gap;
        }
    }

    let mut warnings = Vec::new();
    let kappa = if m >= 2 {
        let nearest: Vec<f64> = gaps
            .iter()
            .map(|row| row.iter().copied().fold(f64::INFINITY, f64::min))
            .collect();
        let mut kappa = nearest.iter().map(|d| d * d).fold(f64::INFINITY, f64::min);
        let bound = (0..m)
            .map(|i| {
                let (re, d) = (radii[i], nearest[i]);
                obstacles[i].lambda_min() * ((re + d) * (re + d) - re * re)
            })
            .fold(f64::INFINITY, f64::min);
        if kappa >= bound {
            let shrunk = 0.9 * bound;
            let msg = format!("kappa {kappa} not admissible (bound {bound}); using {shrunk}");
            log::warn!("{msg}");
            warnings.push(msg);
            kappa = shrunk;
        }
        kappa
    } else {
        f64::INFINITY
    };

    Ok(ObstacleField {
        obstacles: obstacles.to_vec(),
        kappas: vec![kappa; m],
        pairwise_gaps: gaps,
        warnings,
    })
}
