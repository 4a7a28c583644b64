//! Python bindings for the cbfnav planner.

use std::collections::HashMap;

use cbfnav::alip::{alip_step as step_alip, AlipAxisState, AlipParams, AlipState};
use cbfnav::cbf::{certify_and_select_kappas, Obstacle as CoreObstacle, ObstacleField as CoreField};
use cbfnav::clf::ClfParams;
use cbfnav::io::{parse_scenario, scenario_to_json, write_trajectory_csv, RunSummary};
use cbfnav::model::{state_from_world as to_state, world_from_state as to_world};
use cbfnav::qp::{assemble, solve, QpWeights};
use cbfnav::{ControlInput, GoalPosition, Integrator, PlanningState, Scenario as CoreScenario, WorldPose};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

create_exception!(
    pycbfnav,
    NavError,
    PyValueError,
    "Raised for invalid inputs and solver failures."
);

fn err(e: impl std::fmt::Display) -> PyErr {
    NavError::new_err(e.to_string())
}

type Pose = (f64, f64, f64);
type Point = (f64, f64);

fn pose_tuple(p: &WorldPose) -> Pose {
    (p.x, p.y, p.theta)
}

/// A circular or ellipsoidal obstacle. `q` defaults to the identity.
#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
struct Obstacle {
    inner: CoreObstacle,
}

#[pymethods]
impl Obstacle {
    #[new]
    #[pyo3(signature = (x, y, radius, q = None))]
    fn new(x: f64, y: f64, radius: f64, q: Option<[[f64; 2]; 2]>) -> PyResult<Self> {
        let mut inner = CoreObstacle::circle(x, y, radius);
        if let Some(q) = q {
            inner.q = q;
        }
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn center(&self) -> Point {
        (self.inner.center[0], self.inner.center[1])
    }

    #[getter]
    fn radius(&self) -> f64 {
        self.inner.radius
    }

    /// Barrier value at a world position; negative inside.
    fn barrier(&self, x: f64, y: f64) -> f64 {
        self.inner.barrier_at([x, y])
    }

    fn __repr__(&self) -> String {
        format!(
            "Obstacle(x={}, y={}, radius={})",
            self.inner.center[0], self.inner.center[1], self.inner.radius
        )
    }
}

/// A certified set of disjoint obstacles combined into one barrier.
#[pyclass(frozen)]
struct ObstacleField {
    inner: CoreField,
}

#[pymethods]
impl ObstacleField {
    #[new]
    fn new(obstacles: Vec<Obstacle>) -> PyResult<Self> {
        let obs: Vec<CoreObstacle> = obstacles.into_iter().map(|o| o.inner).collect();
        Ok(Self {
            inner: certify_and_select_kappas(&obs).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn kappas(&self) -> Vec<f64> {
        self.inner.kappas().to_vec()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings().to_vec()
    }

    /// Composite barrier at a world position.
    fn barrier(&self, x: f64, y: f64) -> f64 {
        self.inner.barrier_at([x, y])
    }
}

#[pyclass(frozen, get_all)]
struct QpSolution {
    u: Pose,
    slack: f64,
    lambda1: f64,
    lambda2: f64,
    case: String,
    u_ref: Pose,
}

#[pymethods]
impl QpSolution {
    fn __repr__(&self) -> String {
        format!("QpSolution(u={:?}, slack={}, case={:?})", self.u, self.slack, self.case)
    }
}

/// Solves the CLF-CBF QP at planning state `(r, delta, theta)`.
#[pyfunction]
#[pyo3(signature = (state, goal, field, h = (1.0, 4.0, 2.0), p = 100.0, mu = 0.2, eta = 1.0))]
fn solve_qp(
    state: Pose,
    goal: Point,
    field: &ObstacleField,
    h: (f64, f64, f64),
    p: f64,
    mu: f64,
    eta: f64,
) -> PyResult<QpSolution> {
    let weights = QpWeights {
        h: [h.0, h.1, h.2],
        p,
        mu,
        eta,
    };
    weights.validate().map_err(err)?;
    let x = PlanningState::new(state.0, state.1, state.2);
    let problem = assemble(
        &x,
        &GoalPosition::new(goal.0, goal.1),
        &field.inner,
        &ClfParams::default(),
    )
    .map_err(err)?;
    let sol = solve(&problem, &weights).map_err(err)?;
    let u = sol.u_star;
    let r = problem.u_ref;
    Ok(QpSolution {
        u: (u.v_x, u.v_y, u.omega),
        slack: sol.s_star,
        lambda1: sol.lambda1,
        lambda2: sol.lambda2,
        case: sol.case_tag.as_str().to_owned(),
        u_ref: (r.v_x, r.v_y, r.omega),
    })
}

/// World pose `(x, y, theta)` to planning state `(r, delta, theta)`.
#[pyfunction]
fn state_from_world(pose: Pose, goal: Point) -> PyResult<Pose> {
    let s = to_state(
        &WorldPose::new(pose.0, pose.1, pose.2),
        &GoalPosition::new(goal.0, goal.1),
    )
    .map_err(err)?;
    Ok((s.r, s.delta, s.theta))
}

#[pyfunction]
fn world_from_state(state: Pose, goal: Point) -> Pose {
    pose_tuple(&to_world(
        &PlanningState::new(state.0, state.1, state.2),
        &GoalPosition::new(goal.0, goal.1),
    ))
}

/// One ALIP swing. Axis states are `(position, velocity)` in the body frame.
/// Returns the new pose and the new sagittal and lateral axis states.
#[pyfunction]
#[pyo3(signature = (pose, sagittal, lateral, u, gravity = 9.81, com_height = 1.0, tau = 0.3))]
fn alip_step(
    pose: Pose,
    sagittal: Point,
    lateral: Point,
    u: Pose,
    gravity: f64,
    com_height: f64,
    tau: f64,
) -> PyResult<(Pose, Point, Point)> {
    let params = AlipParams {
        gravity,
        com_height,
        tau,
    };
    params.validate().map_err(err)?;
    let state = AlipState {
        sagittal: AlipAxisState::new(sagittal.0, sagittal.1),
        lateral: AlipAxisState::new(lateral.0, lateral.1),
    };
    let (p, s) = step_alip(
        &WorldPose::new(pose.0, pose.1, pose.2),
        &state,
        &ControlInput::new(u.0, u.1, u.2),
        &params,
    );
    Ok((
        pose_tuple(&p),
        (s.sagittal.pos, s.sagittal.vel),
        (s.lateral.pos, s.lateral.vel),
    ))
}

/// Result of a closed-loop run.
#[pyclass(frozen)]
struct Trajectory {
    inner: cbfnav::TrajectoryRecord,
}

#[pymethods]
impl Trajectory {
    #[getter]
    fn status(&self) -> &'static str {
        self.inner.status.as_str()
    }

    fn __len__(&self) -> usize {
        self.inner.steps.len()
    }

    #[getter]
    fn final_pose(&self) -> Pose {
        pose_tuple(&self.inner.final_pose)
    }

    #[getter]
    fn final_distance(&self) -> f64 {
        self.inner.final_distance
    }

    #[getter]
    fn min_barrier(&self) -> Option<f64> {
        self.inner.min_barrier
    }

    #[getter]
    fn equilibrium_breaks(&self) -> usize {
        self.inner.equilibrium_breaks
    }

    /// Per-step columns keyed by name; `case` holds strings, the rest floats.
    fn columns(&self, py: Python<'_>) -> PyResult<HashMap<&'static str, Py<PyAny>>> {
        let s = &self.inner.steps;
        let col = |f: &dyn Fn(&cbfnav::runner::StepRecord) -> f64| s.iter().map(f).collect::<Vec<f64>>();
        let mut out: HashMap<&'static str, Py<PyAny>> = HashMap::new();
        let floats: [(&'static str, Vec<f64>); 16] = [
            ("t", col(&|r| r.t)),
            ("x_r", col(&|r| r.pose.x)),
            ("y_r", col(&|r| r.pose.y)),
            ("theta", col(&|r| r.pose.theta)),
            ("r", col(&|r| r.state.r)),
            ("delta", col(&|r| r.state.delta)),
            ("v_x", col(&|r| r.u.v_x)),
            ("v_y", col(&|r| r.u.v_y)),
            ("omega", col(&|r| r.u.omega)),
            ("s", col(&|r| r.s)),
            ("lambda1", col(&|r| r.lambda1)),
            ("lambda2", col(&|r| r.lambda2)),
            ("B_M", col(&|r| r.b_m)),
            ("V", col(&|r| r.v)),
            ("goal_x", col(&|r| r.goal.x)),
            ("goal_y", col(&|r| r.goal.y)),
        ];
        for (name, values) in floats {
            out.insert(name, values.into_pyobject(py)?.into_any().unbind());
        }
        let cases: Vec<&str> = s.iter().map(|r| r.case_tag.as_str()).collect();
        out.insert("case", cases.into_pyobject(py)?.into_any().unbind());
        Ok(out)
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        write_trajectory_csv(&self.inner, &mut buf).map_err(err)?;
        String::from_utf8(buf).map_err(err)
    }

    fn summary_json(&self) -> PyResult<String> {
        serde_json::to_string(&RunSummary::from(&self.inner)).map_err(err)
    }
}

/// A navigation problem with every planner parameter.
#[pyclass]
struct Scenario {
    inner: CoreScenario,
}

#[pymethods]
impl Scenario {
    #[new]
    #[pyo3(signature = (start, goal, obstacles = Vec::new()))]
    fn new(start: Pose, goal: Point, obstacles: Vec<Obstacle>) -> PyResult<Self> {
        let inner = CoreScenario::new(
            WorldPose::new(start.0, start.1, start.2),
            GoalPosition::new(goal.0, goal.1),
            obstacles.into_iter().map(|o| o.inner).collect(),
        );
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    /// Parses a JSON scenario document.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: parse_scenario(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        scenario_to_json(&self.inner).map_err(err)
    }

    #[getter]
    fn get_epsilon_break(&self) -> f64 {
        self.inner.runner.epsilon_break
    }

    #[setter]
    fn set_epsilon_break(&mut self, eps: f64) {
        self.inner.runner.epsilon_break = eps;
    }

    #[getter]
    fn get_integrator(&self) -> &'static str {
        match self.inner.runner.integrator {
            Integrator::Kinematic => "kinematic",
            Integrator::Alip => "alip",
        }
    }

    #[setter]
    fn set_integrator(&mut self, name: &str) -> PyResult<()> {
        self.inner.runner.integrator = name.parse().map_err(err)?;
        Ok(())
    }

    #[getter]
    fn get_seed(&self) -> u64 {
        self.inner.runner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.runner.seed = seed;
    }

    #[getter]
    fn get_noisy(&self) -> bool {
        self.inner.runner.noisy
    }

    #[setter]
    fn set_noisy(&mut self, noisy: bool) {
        self.inner.runner.noisy = noisy;
    }

    /// Runs the closed loop, releasing the GIL meanwhile.
    fn run(&self, py: Python<'_>) -> PyResult<Trajectory> {
        let sc = self.inner.clone();
        let inner = py.detach(move || cbfnav::run(&sc)).map_err(err)?;
        Ok(Trajectory { inner })
    }
}

#[pymodule]
fn pycbfnav(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NavError", m.py().get_type::<NavError>())?;
    m.add_class::<Obstacle>()?;
    m.add_class::<ObstacleField>()?;
    m.add_class::<QpSolution>()?;
    m.add_class::<Trajectory>()?;
    m.add_class::<Scenario>()?;
    m.add_function(wrap_pyfunction!(solve_qp, m)?)?;
    m.add_function(wrap_pyfunction!(state_from_world, m)?)?;
    m.add_function(wrap_pyfunction!(world_from_state, m)?)?;
    m.add_function(wrap_pyfunction!(alip_step, m)?)?;
    Ok(())
}
