//! Scenario files, trajectory CSV and run summaries.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::alip::AlipParams;
use crate::cbf::Obstacle;
use crate::clf::ClfParams;
use crate::error::{NavError, Result};
use crate::model::{GoalPosition, WorldPose};
use crate::qp::{CaseTag, QpWeights};
use crate::runner::{RunnerConfig, Scenario, StepRecord, TerminalStatus, TrajectoryRecord};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsSection {
    pub clf: ClfParams,
    pub qp: QpWeights,
    pub alip: AlipParams,
}

/// On-disk scenario. Every section except `version`, `start` and `goal` may be
/// omitted and falls back to its defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub version: u32,
    pub start: WorldPose,
    pub goal: GoalPosition,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub params: ParamsSection,
    #[serde(default)]
    pub runner: RunnerConfig,
}

impl From<&Scenario> for ScenarioFile {
    fn from(sc: &Scenario) -> Self {
        Self {
            version: SCENARIO_VERSION,
            start: sc.start,
            goal: sc.goal,
            obstacles: sc.obstacles.clone(),
            params: ParamsSection {
                clf: sc.clf,
                qp: sc.qp,
                alip: sc.alip,
            },
            runner: sc.runner,
        }
    }
}

impl ScenarioFile {
    pub fn into_scenario(self) -> Scenario {
        Scenario {
            // Normalise the heading into (-pi, pi].
            start: WorldPose::new(self.start.x, self.start.y, self.start.theta),
            goal: self.goal,
            obstacles: self.obstacles,
            clf: self.params.clf,
            qp: self.params.qp,
            alip: self.params.alip,
            runner: self.runner,
        }
    }
}

/// Parses and validates a scenario document. Schema errors name the offending
/// path together with line and column.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        NavError::Scenario(format!(
            "at `{}` (line {}, column {}): {}",
            e.path(),
            inner.line(),
            inner.column(),
            inner
        ))
    })?;
    if file.version != SCENARIO_VERSION {
        return Err(NavError::Scenario(format!(
            "unsupported scenario version {} (expected {SCENARIO_VERSION})",
            file.version
        )));
    }
    let scenario = file.into_scenario();
    for w in scenario.validate()? {
        log::warn!("{w}");
    }
    Ok(scenario)
}

pub fn scenario_to_json(scenario: &Scenario) -> Result<String> {
    serde_json::to_string_pretty(&ScenarioFile::from(scenario)).map_err(|e| NavError::Scenario(e.to_string()))
}

pub const CSV_HEADER: [&str; 17] = [
    "t", "x_r", "y_r", "theta", "r", "delta", "v_x", "v_y", "omega", "s", "lambda1", "lambda2", "case", "B_M", "V",
    "goal_x", "goal_y",
];

/// One trajectory row; field order is the column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub t: f64,
    pub x_r: f64,
    pub y_r: f64,
    pub theta: f64,
    pub r: f64,
    pub delta: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub omega: f64,
    pub s: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    #[serde(rename = "case")]
    pub case_tag: CaseTag,
    #[serde(rename = "B_M")]
    pub b_m: f64,
    #[serde(rename = "V")]
    pub v: f64,
    pub goal_x: f64,
    pub goal_y: f64,
}

impl From<&StepRecord> for CsvRow {
    fn from(s: &StepRecord) -> Self {
        Self {
            t: s.t,
            x_r: s.pose.x,
            y_r: s.pose.y,
            theta: s.pose.theta,
            r: s.state.r,
            delta: s.state.delta,
            v_x: s.u.v_x,
            v_y: s.u.v_y,
            omega: s.u.omega,
            s: s.s,
            lambda1: s.lambda1,
            lambda2: s.lambda2,
            case_tag: s.case_tag,
            b_m: s.b_m,
            v: s.v,
            goal_x: s.goal.x,
            goal_y: s.goal.y,
        }
    }
}

fn csv_err(e: csv::Error) -> NavError {
    NavError::Scenario(format!("trajectory csv: {e}"))
}

/// Writes one row per control step. Floats use shortest round-trip
/// formatting, which is locale independent.
pub fn write_trajectory_csv<W: Write>(record: &TrajectoryRecord, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if record.steps.is_empty() {
        w.write_record(CSV_HEADER).map_err(csv_err)?;
    }
    for step in &record.steps {
        w.serialize(CsvRow::from(step)).map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| NavError::Scenario(format!("trajectory csv: {e}")))
}

pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(NavError::Scenario(format!("unexpected trajectory header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: TerminalStatus,
    pub steps: usize,
    pub min_barrier: Option<f64>,
    pub final_distance: f64,
    pub final_pose: WorldPose,
    pub recovery: bool,
    pub equilibrium_breaks: usize,
    pub warnings: Vec<String>,
}

impl From<&TrajectoryRecord> for RunSummary {
    fn from(rec: &TrajectoryRecord) -> Self {
        Self {
            status: rec.status,
            steps: rec.steps.len(),
            min_barrier: rec.min_barrier,
            final_distance: rec.final_distance,
            final_pose: rec.final_pose,
            recovery: rec.recovery,
            equilibrium_breaks: rec.equilibrium_breaks,
            warnings: rec.warnings.clone(),
        }
    }
}
