//! Closed-loop simulation: local map windowing, intermediate goals, one QP per
//! control interval, equilibrium handling and termination.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alip::{alip_step, AlipParams, AlipState};
use crate::cbf::{certify_and_select_kappas, Obstacle};
use crate::clf::ClfParams;
use crate::error::{NavError, Result};
use crate::model::{
    integrate_interval, state_from_world, world_from_state, ControlInput, GoalPosition, PlanningState, WorldPose,
};
use crate::qp::{assemble, detect_equilibrium, perturb_reference, solve, CaseTag, EquilibriumThresholds, QpWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    /// RK4 on the planning model.
    #[default]
    Kinematic,
    /// One ALIP step per control interval.
    Alip,
}

impl std::str::FromStr for Integrator {
    type Err = NavError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kinematic" => Ok(Self::Kinematic),
            "alip" => Ok(Self::Alip),
            other => Err(NavError::InvalidParams(format!(
                "unknown integrator {other:?} (expected kinematic or alip)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunnerConfig {
    pub integrator: Integrator,
    pub local_map_radius: f64,
    pub step_budget: usize,
    /// Turn-rate offset used to leave a detected equilibrium; 0 disables it.
    pub epsilon_break: f64,
    pub seed: u64,
    pub r_goal: f64,
    pub u_eps: f64,
    pub collision_tol: f64,
    /// RK4 sub-steps per control interval.
    pub substeps: usize,
    /// Perceive obstacles through bounded per-step jitter.
    pub noisy: bool,
    pub noise_bound: f64,
    /// Cap on the applied translational speed; `None` applies the QP output as is.
    pub max_speed: Option<f64>,
    /// Cap on the applied turn rate.
    pub max_turn_rate: Option<f64>,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        Self {
            integrator: Integrator::Kinematic,
            local_map_radius: 10.0,
            step_budget: 2000,
            epsilon_break: 1e-4,
            seed: 0,
            r_goal: 0.05,
            u_eps: 1e-6,
            collision_tol: 1e-3,
            substeps: 10,
            noisy: false,
            noise_bound: 0.05,
            max_speed: Some(1.5),
            max_turn_rate: Some(1.0),
        }
    }
}

impl RunnerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("local_map_radius", self.local_map_radius),
            ("r_goal", self.r_goal),
            ("u_eps", self.u_eps),
            ("collision_tol", self.collision_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(NavError::InvalidParams(format!("runner.{name} = {v} must be positive")));
            }
        }
        if !(self.epsilon_break >= 0.0) || !self.epsilon_break.is_finite() {
            return Err(NavError::InvalidParams(format!(
                "runner.epsilon_break = {} must be non-negative",
                self.epsilon_break
            )));
        }
        if !(self.noise_bound >= 0.0) || !self.noise_bound.is_finite() {
            return Err(NavError::InvalidParams(format!(
                "runner.noise_bound = {} must be non-negative",
                self.noise_bound
            )));
        }
        for (name, cap) in [("max_speed", self.max_speed), ("max_turn_rate", self.max_turn_rate)] {
            if let Some(v) = cap {
                if !(v > 0.0) {
                    return Err(NavError::InvalidParams(format!("runner.{name} = {v} must be positive")));
                }
            }
        }
        if self.step_budget == 0 {
            return Err(NavError::InvalidParams("runner.step_budget must be positive".into()));
        }
        if self.substeps == 0 {
            return Err(NavError::InvalidParams("runner.substeps must be positive".into()));
        }
        Ok(())
    }

    /// Scales the translational part and the turn rate of `u` independently so
    /// they respect the caps. The barrier row has no turn-rate entry, so a
    /// scaled command still satisfies `d.u <= eta B` whenever `B >= 0`.
    pub fn limit_command(&self, u: &ControlInput) -> ControlInput {
        let mut out = *u;
        if let Some(cap) = self.max_speed {
            let speed = u.v_x.hypot(u.v_y);
            if speed > cap {
                let c = cap / speed;
                out.v_x *= c;
                out.v_y *= c;
            }
        }
        if let Some(cap) = self.max_turn_rate {
            out.omega = out.omega.clamp(-cap, cap);
        }
        out
    }

    fn thresholds(&self) -> EquilibriumThresholds {
        EquilibriumThresholds {
            u_eps: self.u_eps,
            r_goal: self.r_goal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub start: WorldPose,
    pub goal: GoalPosition,
    pub obstacles: Vec<Obstacle>,
    pub clf: ClfParams,
    pub qp: QpWeights,
    pub alip: AlipParams,
    pub runner: RunnerConfig,
}

impl Scenario {
    pub fn new(start: WorldPose, goal: GoalPosition, obstacles: Vec<Obstacle>) -> Self {
        Self {
            start,
            goal,
            obstacles,
            clf: ClfParams::default(),
            qp: QpWeights::default(),
            alip: AlipParams::default(),
            runner: RunnerConfig::default(),
        }
    }

    /// Checks parameters, obstacle validity, pairwise separation and that the
    /// goal is clear. Returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = self.clf.validate()?;
        self.qp.validate()?;
        self.alip.validate()?;
        self.runner.validate()?;
        let field = certify_and_select_kappas(&self.obstacles)?;
        warnings.extend(field.warnings().iter().cloned());
        let goal = [self.goal.x, self.goal.y];
        for (i, ob) in self.obstacles.iter().enumerate() {
            if ob.barrier_at(goal) <= 0.0 {
                return Err(NavError::Scenario(format!("goal lies inside obstacle {i}")));
            }
        }
        if self.goal.distance_to(&self.start) <= self.runner.r_goal {
            warnings.push("start is already within the goal tolerance".into());
        }
        Ok(warnings)
    }

    /// Indices of obstacles whose unsafe set contains the start.
    pub fn recovery_obstacles(&self) -> Vec<usize> {
        let p = self.start.position();
        (0..self.obstacles.len())
            .filter(|&i| self.obstacles[i].barrier_at(p) < 0.0)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalStatus {
    ReachedGoal,
    Collision,
    StepBudgetExhausted,
    /// Stalled at an induced equilibrium with breaking disabled.
    Equilibrium,
    NoValidIntermediateGoal,
}

impl TerminalStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ReachedGoal => "reached_goal",
            Self::Collision => "collision",
            Self::StepBudgetExhausted => "step_budget_exhausted",
            Self::Equilibrium => "equilibrium",
            Self::NoValidIntermediateGoal => "no_valid_intermediate_goal",
        }
    }
}

impl std::fmt::Display for TerminalStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub pose: WorldPose,
    pub state: PlanningState,
    pub u: ControlInput,
    pub s: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub case_tag: CaseTag,
    /// Composite barrier of the perceived local field.
    pub b_m: f64,
    pub v: f64,
    pub goal: GoalPosition,
    /// Smallest true barrier over all obstacles at this pose (infinite when
    /// there are none).
    pub b_true_min: f64,
    pub perturbed: bool,
    /// Command sent to the integrator after the speed and turn-rate caps.
    pub applied: ControlInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub steps: Vec<StepRecord>,
    pub status: TerminalStatus,
    pub final_pose: WorldPose,
    pub final_distance: f64,
    /// Smallest true barrier over the run, ignoring obstacles the run started
    /// inside until it has left them.
    pub min_barrier: Option<f64>,
    pub recovery: bool,
    pub equilibrium_breaks: usize,
    pub warnings: Vec<String>,
}

/// Picks the point the planning state is built against. The final goal if it
/// is inside the window, otherwise the window boundary on the line toward it,
/// pulled back toward the robot in steps of `radius / 20` until it is clear of
/// every obstacle.
pub fn select_intermediate_goal(
    pose: &WorldPose,
    final_goal: &GoalPosition,
    obstacles: &[Obstacle],
    radius: f64,
) -> Result<GoalPosition> {
    if !(radius > 0.0) {
        return Err(NavError::InvalidParams(format!(
            "local map radius {radius} must be positive"
        )));
    }
    let dist = final_goal.distance_to(pose);
    if dist <= radius {
        return Ok(*final_goal);
    }
    let dir = [(final_goal.x - pose.x) / dist, (final_goal.y - pose.y) / dist];
    const DECREMENTS: usize = 20;
    for k in 0..DECREMENTS {
        let reach = radius * (DECREMENTS - k) as f64 / DECREMENTS as f64;
        let p = [pose.x + reach * dir[0], pose.y + reach * dir[1]];
        if obstacles.iter().all(|ob| ob.barrier_at(p) > 0.0) {
            return Ok(GoalPosition::new(p[0], p[1]));
        }
    }
    Err(NavError::NoValidIntermediateGoal)
}

fn in_window(ob: &Obstacle, pose: &WorldPose, radius: f64) -> bool {
    let d = (ob.center[0] - pose.x).hypot(ob.center[1] - pose.y);
    d - ob.effective_radius() <= radius
}

fn lambda_max(ob: &Obstacle) -> f64 {
    let [[a, b], [_, c]] = ob.q;
    let half_diff = 0.5 * (a - c);
    0.5 * (a + c) + (half_diff * half_diff + b * b).sqrt()
}

/// Perceived copy of an obstacle: the center moves by at most `bound` and the
/// radius grows enough that the perceived unsafe set still contains the true one.
fn jitter(ob: &Obstacle, bound: f64, rng: &mut ChaCha8Rng) -> Obstacle {
    if bound == 0.0 {
        return *ob;
    }
    let mag = bound * rng.gen::<f64>().sqrt();
    let ang = rng.gen_range(0.0..std::f64::consts::TAU);
    let n = [mag * ang.cos(), mag * ang.sin()];
    Obstacle {
        center: [ob.center[0] + n[0], ob.center[1] + n[1]],
        radius: ob.radius + lambda_max(ob).sqrt() * mag + bound * rng.gen::<f64>(),
        q: ob.q,
    }
}

fn goal_is_clear(goal: &GoalPosition, obstacles: &[Obstacle]) -> bool {
    obstacles.iter().all(|ob| ob.barrier_at([goal.x, goal.y]) > 0.0)
}

/// Runs the closed loop until the goal is reached, a collision occurs, the
/// step budget is spent, or the robot stalls with breaking disabled.
pub fn run(scenario: &Scenario) -> Result<TrajectoryRecord> {
    let mut warnings = scenario.validate()?;
    let cfg = &scenario.runner;
    let tau = scenario.alip.tau;
    let thresholds = cfg.thresholds();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut pose = scenario.start;
    let mut alip_state = AlipState::default();
    let mut exempt = scenario.recovery_obstacles();
    let recovery = !exempt.is_empty();
    if recovery {
        warnings.push(format!(
            "start lies inside obstacles {exempt:?}; running in recovery mode"
        ));
    }

    let mut steps: Vec<StepRecord> = Vec::new();
    let mut min_barrier: Option<f64> = None;
    let mut intermediate: Option<GoalPosition> = None;
    let mut breaking = false;
    let mut breaks = 0;
    let mut status = TerminalStatus::StepBudgetExhausted;

    for k in 0..=cfg.step_budget {
        // Safety bookkeeping against the true obstacles.
        let p = pose.position();
        let mut b_true_min = f64::INFINITY;
        let mut collided = false;
        for (i, ob) in scenario.obstacles.iter().enumerate() {
            let b = ob.barrier_at(p);
            b_true_min = b_true_min.min(b);
            if exempt.contains(&i) {
                if b >= 0.0 {
                    exempt.retain(|&j| j != i);
                } else {
                    continue;
                }
            }
            min_barrier = Some(min_barrier.map_or(b, |m: f64| m.min(b)));
            if b < -cfg.collision_tol {
                collided = true;
            }
        }
        if collided {
            status = TerminalStatus::Collision;
            break;
        }
        if scenario.goal.distance_to(&pose) <= cfg.r_goal {
            status = TerminalStatus::ReachedGoal;
            break;
        }
        if k == cfg.step_budget {
            break;
        }

        let perceived: Vec<Obstacle> = scenario
            .obstacles
            .iter()
            .filter(|ob| in_window(ob, &pose, cfg.local_map_radius))
            .map(|ob| {
                if cfg.noisy {
                    jitter(ob, cfg.noise_bound, &mut rng)
                } else {
                    *ob
                }
            })
            .collect();
        let field = certify_and_select_kappas(&perceived)?;

        let stale = match intermediate {
            None => true,
            Some(g) => g.distance_to(&pose) <= cfg.r_goal || !goal_is_clear(&g, &perceived),
        };
        if stale {
            match select_intermediate_goal(&pose, &scenario.goal, &perceived, cfg.local_map_radius) {
                Ok(g) => intermediate = Some(g),
                Err(NavError::NoValidIntermediateGoal) => {
                    status = TerminalStatus::NoValidIntermediateGoal;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let goal = intermediate.expect("intermediate goal selected above");

        let state = state_from_world(&pose, &goal)?;
        let problem = assemble(&state, &goal, &field, &scenario.clf)?;
        let base = solve(&problem, &scenario.qp)?;
        let report = detect_equilibrium(&base, &state, &problem, &thresholds);
        if breaking && base.u_star.norm() > 10.0 * cfg.u_eps {
            breaking = false;
        }
        let mut stalled = false;
        if report.is_equilibrium {
            if cfg.epsilon_break > 0.0 {
                if !breaking {
                    breaks += 1;
                    log::debug!("equilibrium at step {k}: {report:?}; applying turn offset");
                }
                breaking = true;
            } else {
                stalled = true;
            }
        }
        let sol = if breaking {
            solve(
                &problem.with_reference(perturb_reference(&problem.u_ref, cfg.epsilon_break)),
                &scenario.qp,
            )?
        } else {
            base
        };

        let applied = cfg.limit_command(&sol.u_star);
        steps.push(StepRecord {
            t: k as f64 * tau,
            pose,
            state,
            u: sol.u_star,
            s: sol.s_star,
            lambda1: sol.lambda1,
            lambda2: sol.lambda2,
            case_tag: sol.case_tag,
            b_m: problem.b,
            v: problem.v,
            goal,
            b_true_min,
            perturbed: breaking,
            applied,
        });
        if stalled {
            status = TerminalStatus::Equilibrium;
            break;
        }

        pose = match cfg.integrator {
            Integrator::Kinematic => {
                let out = integrate_interval(&state, &applied, tau, cfg.substeps)?;
                if out.reached_goal {
                    WorldPose::new(goal.x, goal.y, out.state.theta)
                } else {
                    world_from_state(&out.state, &goal)
                }
            }
            Integrator::Alip => {
                let (next, st) = alip_step(&pose, &alip_state, &applied, &scenario.alip);
                alip_state = st;
                next
            }
        };
    }

    Ok(TrajectoryRecord {
        steps,
        status,
        final_distance: scenario.goal.distance_to(&pose),
        final_pose: pose,
        min_barrier,
        recovery,
        equilibrium_breaks: breaks,
        warnings,
    })
}

/// Runs `f` on a rayon pool with at most `workers` threads (all cores when `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match workers {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(f),
            Err(e) => {
                log::warn!("could not build a {n}-thread pool ({e}); using the global pool");
                f()
            }
        },
        None => f(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellOutcome {
    /// The obstacle would cover the start or the goal.
    Excluded,
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub x_o: f64,
    pub y_o: f64,
    pub outcome: CellOutcome,
    pub status: Option<TerminalStatus>,
    pub steps: usize,
    pub min_barrier: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub radius: f64,
    pub spacing: f64,
    pub cells: Vec<SweepCell>,
}

impl SweepGrid {
    pub fn count(&self, outcome: CellOutcome) -> usize {
        self.cells.iter().filter(|c| c.outcome == outcome).count()
    }

    pub fn all_succeeded(&self) -> bool {
        self.count(CellOutcome::Failure) == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepBounds {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Default for SweepBounds {
    fn default() -> Self {
        Self {
            x: [-16.0, 1.0],
            y: [-16.0, 1.0],
        }
    }
}

fn grid_axis(range: [f64; 2], spacing: f64) -> Vec<f64> {
    let n = ((range[1] - range[0]) / spacing + 1e-9).floor() as usize;
    (0..=n).map(|i| range[0] + i as f64 * spacing).collect()
}

/// One run per obstacle placement on a regular grid. The obstacles of `base`
/// are replaced by the single swept obstacle.
pub fn liveness_sweep(base: &Scenario, radius: f64, spacing: f64, bounds: SweepBounds) -> Result<SweepGrid> {
    use rayon::prelude::*;
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(NavError::InvalidParams(format!(
            "sweep spacing {spacing} must be positive"
        )));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(NavError::InvalidParams(format!(
            "sweep radius {radius} must be positive"
        )));
    }
    let xs = grid_axis(bounds.x, spacing);
    let ys = grid_axis(bounds.y, spacing);
    let placements: Vec<(f64, f64)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
    let cells = placements
        .par_iter()
        .map(|&(x_o, y_o)| -> Result<SweepCell> {
            let ob = Obstacle::circle(x_o, y_o, radius);
            let excluded =
                ob.barrier_at(base.start.position()) <= 0.0 || ob.barrier_at([base.goal.x, base.goal.y]) <= 0.0;
            if excluded {
                return Ok(SweepCell {
                    x_o,
                    y_o,
                    outcome: CellOutcome::Excluded,
                    status: None,
                    steps: 0,
                    min_barrier: None,
                });
            }
            let scenario = Scenario {
                obstacles: vec![ob],
                ..base.clone()
            };
            let rec = run(&scenario)?;
            let ok = rec.status == TerminalStatus::ReachedGoal;
            Ok(SweepCell {
                x_o,
                y_o,
                outcome: if ok { CellOutcome::Success } else { CellOutcome::Failure },
                status: Some(rec.status),
                steps: rec.steps.len(),
                min_barrier: rec.min_barrier,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepGrid { radius, spacing, cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapGenParams {
    pub width: f64,
    pub height: f64,
    pub obstacles: usize,
    pub radius_range: [f64; 2],
    /// Minimum clearance between obstacle boundaries.
    pub min_gap: f64,
    /// Minimum clearance of start and goal from every obstacle boundary.
    pub endpoint_clearance: f64,
    pub min_start_goal_distance: f64,
    pub max_attempts: usize,
}

impl Default for MapGenParams {
    fn default() -> Self {
        Self {
            width: 50.0,
            height: 30.0,
            obstacles: 20,
            radius_range: [0.5, 1.5],
            min_gap: 2.0,
            endpoint_clearance: 1.0,
            min_start_goal_distance: 20.0,
            max_attempts: 100_000,
        }
    }
}

impl MapGenParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.width > 0.0
            && self.height > 0.0
            && self.radius_range[0] > 0.0
            && self.radius_range[1] >= self.radius_range[0]
            && self.min_gap > 0.0
            && self.endpoint_clearance >= 0.0
            && self.min_start_goal_distance >= 0.0
            && self.max_attempts > 0;
        if ok {
            Ok(())
        } else {
            Err(NavError::InvalidParams(format!(
                "invalid map generator parameters {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedMap {
    pub obstacles: Vec<Obstacle>,
    pub pairs: Vec<(WorldPose, GoalPosition)>,
}

fn clear_of(obstacles: &[Obstacle], p: [f64; 2], clearance: f64) -> bool {
    obstacles.iter().all(|ob| {
        let d = (p[0] - ob.center[0]).hypot(p[1] - ob.center[1]);
        d - ob.effective_radius() >= clearance
    })
}

/// Rejection-samples circular obstacles in a `width x height` rectangle with
/// the lower-left corner at the origin, then start/goal pairs clear of them.
pub fn generate_map(gen: &MapGenParams, pairs: usize, seed: u64) -> Result<GeneratedMap> {
    gen.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obstacles: Vec<Obstacle> = Vec::with_capacity(gen.obstacles);
    let mut attempts = 0;
    while obstacles.len() < gen.obstacles {
        attempts += 1;
        if attempts > gen.max_attempts {
            return Err(NavError::Scenario(format!(
                "could not place {} obstacles with gap {} after {} attempts",
                gen.obstacles, gen.min_gap, gen.max_attempts
            )));
        }
        let r = if gen.radius_range[1] > gen.radius_range[0] {
            rng.gen_range(gen.radius_range[0]..gen.radius_range[1])
        } else {
            gen.radius_range[0]
        };
        let c = [rng.gen_range(r..gen.width - r), rng.gen_range(r..gen.height - r)];
        if clear_of(&obstacles, c, r + gen.min_gap) {
            obstacles.push(Obstacle::circle(c[0], c[1], r));
        }
    }

    let mut out = Vec::with_capacity(pairs);
    let mut attempts = 0;
    while out.len() < pairs {
        attempts += 1;
        if attempts > gen.max_attempts {
            return Err(NavError::Scenario("could not place start/goal pairs".into()));
        }
        let s = [rng.gen_range(0.0..gen.width), rng.gen_range(0.0..gen.height)];
        let g = [rng.gen_range(0.0..gen.width), rng.gen_range(0.0..gen.height)];
        let theta = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        if (s[0] - g[0]).hypot(s[1] - g[1]) < gen.min_start_goal_distance {
            continue;
        }
        if clear_of(&obstacles, s, gen.endpoint_clearance) && clear_of(&obstacles, g, gen.endpoint_clearance) {
            out.push((WorldPose::new(s[0], s[1], theta), GoalPosition::new(g[0], g[1])));
        }
    }
    Ok(GeneratedMap { obstacles, pairs: out })
}

/// Which maps of a campaign perceive obstacles through noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSelection {
    None,
    /// The first half of the maps noise-free, the rest noisy.
    #[default]
    Split,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub maps: usize,
    pub runs_per_map: usize,
    pub noise: NoiseSelection,
    pub seed: u64,
    pub generator: MapGenParams,
    /// Parameters shared by every run; its start, goal and obstacles are ignored.
    pub base: Scenario,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        let mut base = Scenario::new(WorldPose::new(0.0, 0.0, 0.0), GoalPosition::new(1.0, 0.0), Vec::new());
        base.runner.integrator = Integrator::Alip;
        Self {
            maps: 4,
            runs_per_map: 6,
            noise: NoiseSelection::Split,
            seed: 0,
            generator: MapGenParams::default(),
            base,
        }
    }
}

impl CampaignConfig {
    fn map_is_noisy(&self, map: usize) -> bool {
        match self.noise {
            NoiseSelection::None => false,
            NoiseSelection::All => true,
            NoiseSelection::Split => map >= self.maps / 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRun {
    pub map: usize,
    pub run: usize,
    pub noisy: bool,
    pub start: WorldPose,
    pub goal: GoalPosition,
    pub record: TrajectoryRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub total: usize,
    pub reached: usize,
    pub collisions: usize,
    pub min_barrier: Option<f64>,
    pub mean_steps: f64,
    pub max_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub maps: Vec<GeneratedMap>,
    pub runs: Vec<CampaignRun>,
    pub summary: CampaignSummary,
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F).rotate_left(17)
}

/// Generates the maps and runs every start/goal pair on them. Results are
/// ordered by (map, run) regardless of worker scheduling.
pub fn campaign(cfg: &CampaignConfig) -> Result<CampaignResult> {
    use rayon::prelude::*;
    let maps = (0..cfg.maps)
        .map(|m| generate_map(&cfg.generator, cfg.runs_per_map, mix_seed(cfg.seed, m as u64 + 1, 0)))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.maps)
        .flat_map(|m| (0..cfg.runs_per_map).map(move |r| (m, r)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(m, r)| -> Result<CampaignRun> {
            let (start, goal) = maps[m].pairs[r];
            let noisy = cfg.map_is_noisy(m);
            let mut scenario = Scenario {
                start,
                goal,
                obstacles: maps[m].obstacles.clone(),
                ..cfg.base.clone()
            };
            scenario.runner.noisy = noisy;
            scenario.runner.seed = mix_seed(cfg.seed, m as u64 + 1, r as u64 + 1);
            let record = run(&scenario)?;
            Ok(CampaignRun {
                map: m,
                run: r,
                noisy,
                start,
                goal,
                record,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&runs);
    Ok(CampaignResult { maps, runs, summary })
}

fn summarize(runs: &[CampaignRun]) -> CampaignSummary {
    let total = runs.len();
    let count = |s: TerminalStatus| runs.iter().filter(|r| r.record.status == s).count();
    let steps: Vec<usize> = runs.iter().map(|r| r.record.steps.len()).collect();
    CampaignSummary {
        total,
        reached: count(TerminalStatus::ReachedGoal),
        collisions: count(TerminalStatus::Collision),
        min_barrier: runs
            .iter()
            .filter_map(|r| r.record.min_barrier)
            .fold(None, |acc: Option<f64>, b| Some(acc.map_or(b, |a| a.min(b)))),
        mean_steps: if total == 0 {
            0.0
        } else {
            steps.iter().sum::<usize>() as f64 / total as f64
        },
        max_steps: steps.iter().copied().max().unwrap_or(0),
    }
}
