//! Shared test support: a brute-force QP oracle, random instance generation
//! and central finite differences.

#![allow(dead_code)]

use cbfnav::cbf::{certify_and_select_kappas, Obstacle, ObstacleField};
use cbfnav::clf::{lyapunov, ClfParams};
use cbfnav::model::{control_matrix, world_from_state, GoalPosition, PlanningState};
use cbfnav::qp::{assemble, QpProblem, QpWeights};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

pub fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

pub fn random_weights(rng: &mut ChaCha8Rng) -> QpWeights {
    QpWeights {
        h: [
            log_uniform(rng, 0.1, 10.0),
            log_uniform(rng, 0.1, 10.0),
            log_uniform(rng, 0.1, 10.0),
        ],
        p: log_uniform(rng, 1.0, 1000.0),
        mu: log_uniform(rng, 0.01, 1.0),
        eta: log_uniform(rng, 0.1, 10.0),
    }
}

pub fn random_state(rng: &mut ChaCha8Rng) -> PlanningState {
    PlanningState::new(
        log_uniform(rng, 0.1, 20.0),
        rng.gen_range(-PI..PI),
        rng.gen_range(-PI..PI),
    )
}

/// One to three circular obstacles, the first within about 2 m of the robot's
/// boundary distance so the barrier constraint is often relevant.
pub fn random_field(rng: &mut ChaCha8Rng, state: &PlanningState, goal: &GoalPosition) -> ObstacleField {
    let p = world_from_state(state, goal).position();
    loop {
        let m = rng.gen_range(1..=3);
        let mut obs = Vec::with_capacity(m);
        for k in 0..m {
            let radius = rng.gen_range(0.3..2.0);
            let ang = rng.gen_range(-PI..PI);
            let dist = if k == 0 {
                radius + rng.gen_range(0.0..2.0)
            } else {
                radius + rng.gen_range(0.5..10.0)
            };
            obs.push(Obstacle::circle(
                p[0] + dist * ang.cos(),
                p[1] + dist * ang.sin(),
                radius,
            ));
        }
        if let Ok(field) = certify_and_select_kappas(&obs) {
            return field;
        }
    }
}

pub struct Instance {
    pub state: PlanningState,
    pub goal: GoalPosition,
    pub field: ObstacleField,
    pub weights: QpWeights,
    pub problem: QpProblem,
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let goal = GoalPosition::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
    let state = random_state(rng);
    let field = random_field(rng, &state, &goal);
    let weights = random_weights(rng);
    let problem = assemble(&state, &goal, &field, &ClfParams::default()).expect("instance in domain");
    Instance {
        state,
        goal,
        field,
        weights,
        problem,
    }
}

/// Minimises a convex function of one variable over `[lo, hi]` by a uniform
/// grid followed by golden-section refinement around the best grid point.
fn minimize_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    const GRID: usize = 400;
    let step = (hi - lo) / GRID as f64;
    let mut best = (lo, f(lo));
    for i in 1..=GRID {
        let t = lo + i as f64 * step;
        let v = f(t);
        if v < best.1 {
            best = (t, v);
        }
    }
    let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
    let g = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    for (t, v) in [(c, fc), (d, fd)] {
        if v < best.1 {
            best = (t, v);
        }
    }
    best
}

/// Brute-force optimum of the CLF-CBF QP, independent of its KKT conditions.
///
/// With `z = H^{1/2} (u - u_ref)` and the slack eliminated analytically as
/// `s = max(0, a.u + mu V)` the problem is
/// `min 1/2 |z|^2 + p/2 max(0, a^.z + c)^2  s.t.  d^.z <= b~`.
/// Its minimiser lies either on the ray along `a^` (when that point is
/// feasible) or on the boundary line `z0 + t e` with `e` the part of `a^`
/// orthogonal to `d^`; each is a convex one-dimensional search.
pub fn oracle(problem: &QpProblem, w: &QpWeights) -> (f64, [f64; 3]) {
    let a = problem.clf_row.as_array();
    let d = problem.cbf_row.as_array();
    let u_ref = problem.u_ref.as_array();
    let sq: Vec<f64> = w.h.iter().map(|h| h.sqrt()).collect();
    let ah: [f64; 3] = std::array::from_fn(|k| a[k] / sq[k]);
    let dh: [f64; 3] = std::array::from_fn(|k| d[k] / sq[k]);
    let dot = |x: &[f64; 3], y: &[f64; 3]| x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
    let c = dot(&a, &u_ref) + w.mu * problem.v;
    let bt = w.eta * problem.b - dot(&d, &u_ref);
    let obj = |z: &[f64; 3]| {
        let s = (dot(&ah, z) + c).max(0.0);
        0.5 * dot(z, z) + 0.5 * w.p * s * s
    };
    let feasible = |z: &[f64; 3]| dot(&dh, z) <= bt + 1e-9 * (1.0 + bt.abs());

    let mut best: Option<(f64, [f64; 3])> = None;
    let mut consider = |z: [f64; 3]| {
        if feasible(&z) {
            let v = obj(&z);
            if best.is_none_or(|(bv, _)| v < bv) {
                best = Some((v, z));
            }
        }
    };

    // Unconstrained minimiser along a^.
    let an = dot(&ah, &ah).sqrt();
    if an > 0.0 {
        let dir: [f64; 3] = std::array::from_fn(|k| ah[k] / an);
        let at = |t: f64| -> [f64; 3] { std::array::from_fn(|k| t * dir[k]) };
        let (t, _) = minimize_1d(|t| obj(&at(t)), -(c.abs() / an + 1.0), 1.0);
        consider(at(t));
    }
    consider([0.0; 3]);

    // Minimiser on the constraint boundary.
    let dn2 = dot(&dh, &dh);
    if dn2 > 0.0 {
        let z0: [f64; 3] = std::array::from_fn(|k| bt * dh[k] / dn2);
        let proj = dot(&ah, &dh) / dn2;
        let e: [f64; 3] = std::array::from_fn(|k| ah[k] - proj * dh[k]);
        let en = dot(&e, &e).sqrt();
        if en > 1e-300 {
            let dir: [f64; 3] = std::array::from_fn(|k| e[k] / en);
            let at = |t: f64| -> [f64; 3] { std::array::from_fn(|k| z0[k] + t * dir[k]) };
            let c0 = dot(&ah, &z0) + c;
            let (t, _) = minimize_1d(|t| obj(&at(t)), -(c0.abs() / en + 1.0), 1.0);
            consider(at(t));
        }
        consider(z0);
    }

    let (v, z) = best.expect("QP instance is feasible");
    let u = std::array::from_fn(|k| u_ref[k] + z[k] / sq[k]);
    (v, u)
}

/// Central finite-difference gradient in the planning state.
pub fn fd_state_gradient(f: impl Fn(&PlanningState) -> f64, x: &PlanningState) -> [f64; 3] {
    let base = x.as_array();
    std::array::from_fn(|k| {
        let h = 1e-6 * base[k].abs().max(1.0);
        let mut plus = base;
        let mut minus = base;
        plus[k] += h;
        minus[k] -= h;
        // Bypass angle wrapping so the perturbation is exact.
        let sp = PlanningState {
            r: plus[0],
            delta: plus[1],
            theta: plus[2],
        };
        let sm = PlanningState {
            r: minus[0],
            delta: minus[1],
            theta: minus[2],
        };
        (f(&sp) - f(&sm)) / (2.0 * h)
    })
}

/// `grad^T g(x)`: a Lie-derivative row from a state gradient.
pub fn row_from_state_gradient(grad: [f64; 3], x: &PlanningState) -> [f64; 3] {
    let g = control_matrix(x).expect("state in domain");
    std::array::from_fn(|j| (0..3).map(|i| grad[i] * g[i][j]).sum())
}

pub fn fd_clf_row(x: &PlanningState, p: &ClfParams) -> [f64; 3] {
    row_from_state_gradient(fd_state_gradient(|s| lyapunov(s, p), x), x)
}

pub fn fd_barrier_row(f: impl Fn([f64; 2]) -> f64, x: &PlanningState, goal: &GoalPosition) -> [f64; 3] {
    let grad = fd_state_gradient(|s| f(world_from_state(s, goal).position()), x);
    row_from_state_gradient(grad, x)
}

pub fn max_abs_diff(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max)
}

pub fn max_abs(a: &[f64; 3]) -> f64 {
    a.iter().map(|v| v.abs()).fold(0.0, f64::max)
}
