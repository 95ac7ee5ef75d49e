//! Gradient-descent anchor regression toward a fixed target.
//!
//! Each step moves the four anchor corners against the analytic loss
//! gradient. The recorded area ratio (current anchor area over initial
//! anchor area) exposes anchors that grow instead of converging.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::losses::{self, iou, Bbox, LossError, LossId, LossParams, WiouState};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("failed to write trajectory to {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("trajectory csv line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub loss: LossId,
    /// When false, `piou` descends on its penalty term alone.
    pub attention_enabled: bool,
    pub init_box: Bbox,
    pub target_box: Bbox,
    pub learning_rate: f64,
    pub steps: usize,
    pub loss_params: LossParams,
    pub record_every: usize,
}

/// Default anchor: a square of the target's size, offset by 1.5 widths
/// horizontally and one height vertically, so the boxes start disjoint.
pub const DEFAULT_INIT: Bbox = Bbox::new(0.15, 0.30, 0.35, 0.50);
/// Default target.
pub const DEFAULT_TARGET: Bbox = Bbox::new(0.45, 0.10, 0.65, 0.30);
pub const DEFAULT_LEARNING_RATE: f64 = 0.01;
pub const DEFAULT_STEPS: usize = 150;

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            loss: LossId::Piou,
            attention_enabled: false,
            init_box: DEFAULT_INIT,
            target_box: DEFAULT_TARGET,
            learning_rate: DEFAULT_LEARNING_RATE,
            steps: DEFAULT_STEPS,
            loss_params: LossParams::default(),
            record_every: 1,
        }
    }
}

impl SimConfig {
    pub fn with_loss(loss: LossId) -> Self {
        Self {
            loss,
            ..Self::default()
        }
    }

    /// What the run descends on. `piou` without attention is the penalty
    /// term `1 - exp(-P^2)`; every other choice is the named loss.
    pub fn objective(&self) -> Objective {
        match self.loss {
            LossId::Piou if !self.attention_enabled => Objective::PiouPenalty,
            other => Objective::Loss(other),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.steps < 1 {
            return Err(SimError::Config("steps must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SimError::Config(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.record_every < 1 {
            return Err(SimError::Config("record_every must be at least 1".into()));
        }
        self.loss_params.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Loss(LossId),
    PiouPenalty,
}

impl Objective {
    fn value_and_gradient(
        self,
        a: &Bbox,
        gt: &Bbox,
        p: &LossParams,
        state: &WiouState,
    ) -> Result<(f64, [f64; 4]), LossError> {
        match self {
            Objective::Loss(id) => losses::loss_value_and_gradient(id, a, gt, p, Some(state)),
            Objective::PiouPenalty => losses::piou_penalty_term(a, gt),
        }
    }

    fn value(
        self,
        a: &Bbox,
        gt: &Bbox,
        p: &LossParams,
        state: &WiouState,
    ) -> Result<f64, LossError> {
        match self {
            Objective::Loss(id) => losses::loss_value(id, a, gt, p, Some(state)),
            Objective::PiouPenalty => losses::piou_penalty_term(a, gt).map(|(v, _)| v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub bbox: Bbox,
    pub loss: f64,
    pub iou: f64,
    pub area_ratio: f64,
}

/// Where a run stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct Truncation {
    pub step: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub truncated: Option<Truncation>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&TrajectoryPoint> {
        self.points.last()
    }

    pub fn final_iou(&self) -> f64 {
        self.last().map_or(0.0, |p| p.iou)
    }

    pub fn max_area_ratio(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.area_ratio)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Runs plain gradient descent on the anchor corners. Corners that cross are
/// swapped back into order after every step. A non-finite or undefined
/// update ends the run with [`Trajectory::truncated`] set.
pub fn simulate(cfg: &SimConfig) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    let obj = cfg.objective();
    let gt = cfg.target_box;
    let p = &cfg.loss_params;
    let mut state = WiouState::default();
    let mut anchor = cfg.init_box;
    let area0 = anchor.area();

    let point = |step: usize, b: Bbox, loss: f64| TrajectoryPoint {
        step,
        bbox: b,
        loss,
        iou: iou(&b, &gt),
        area_ratio: b.area() / area0,
    };
    let initial_loss = obj.value(&anchor, &gt, p, &state)?;
    let mut traj = Trajectory {
        points: vec![point(0, anchor, initial_loss)],
        truncated: None,
    };

    for step in 1..=cfg.steps {
        let outcome = obj
            .value_and_gradient(&anchor, &gt, p, &state)
            .and_then(|(_, g)| {
                let c = anchor.to_array();
                let next =
                    Bbox::from_array(std::array::from_fn(|i| c[i] - cfg.learning_rate * g[i]))
                        .ordered();
                Ok((next, obj.value(&next, &gt, p, &state)?))
            });
        match outcome {
            Ok((next, loss)) if next.is_finite() && loss.is_finite() => {
                if obj == Objective::Loss(LossId::WiouV3) {
                    state.update(1.0 - iou(&anchor, &gt), p.wiou_momentum);
                }
                anchor = next;
                if step % cfg.record_every == 0 {
                    traj.points.push(point(step, anchor, loss));
                }
            }
            Ok(_) => {
                traj.truncated = Some(Truncation {
                    step,
                    reason: "non-finite anchor or loss".into(),
                });
                break;
            }
            Err(e) => {
                traj.truncated = Some(Truncation {
                    step,
                    reason: e.to_string(),
                });
                break;
            }
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnlargementReport {
    /// First recorded step whose area ratio exceeds the threshold.
    pub first_exceed_step: Option<usize>,
    pub max_area_ratio: f64,
    pub max_ratio_step: usize,
    pub final_iou: f64,
}

pub fn detect_enlargement(t: &Trajectory, threshold: f64) -> EnlargementReport {
    let mut report = EnlargementReport {
        first_exceed_step: None,
        max_area_ratio: f64::NEG_INFINITY,
        max_ratio_step: 0,
        final_iou: t.final_iou(),
    };
    for p in &t.points {
        if p.area_ratio > threshold && report.first_exceed_step.is_none() {
            report.first_exceed_step = Some(p.step);
        }
        if p.area_ratio > report.max_area_ratio {
            report.max_area_ratio = p.area_ratio;
            report.max_ratio_step = p.step;
        }
    }
    report
}

pub const TRAJECTORY_HEADER: &str = "step,x1,y1,x2,y2,loss,iou,area_ratio";

/// CSV text of a trajectory: fixed header, 9 significant digits, LF endings.
pub fn trajectory_csv(t: &Trajectory) -> String {
    let mut out = String::with_capacity(64 * (t.points.len() + 1));
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for p in &t.points {
        let _ = write!(out, "{}", p.step);
        for v in [
            p.bbox.x1,
            p.bbox.y1,
            p.bbox.x2,
            p.bbox.y2,
            p.loss,
            p.iou,
            p.area_ratio,
        ] {
            let _ = write!(out, ",{v:.8e}");
        }
        out.push('\n');
    }
    out
}

pub fn write_trajectory(t: &Trajectory, path: &Path) -> Result<(), SimError> {
    fs::write(path, trajectory_csv(t)).map_err(|source| SimError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_trajectory_csv(text: &str) -> Result<Trajectory, SimError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TRAJECTORY_HEADER => {}
        _ => {
            return Err(SimError::Parse {
                line: 1,
                message: format!("expected header '{TRAJECTORY_HEADER}'"),
            })
        }
    }
    let mut points = Vec::new();
    for (i, line) in lines {
        let err = |message: String| SimError::Parse {
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(err(format!("expected 8 columns, found {}", fields.len())));
        }
        let step = fields[0]
            .parse::<usize>()
            .map_err(|e| err(format!("step: {e}")))?;
        let mut v = [0.0; 7];
        for (k, f) in fields[1..].iter().enumerate() {
            v[k] = f
                .parse::<f64>()
                .map_err(|e| err(format!("column {}: {e}", k + 2)))?;
        }
        points.push(TrajectoryPoint {
            step,
            bbox: Bbox::new(v[0], v[1], v[2], v[3]),
            loss: v[4],
            iou: v[5],
            area_ratio: v[6],
        });
    }
    Ok(Trajectory {
        points,
        truncated: None,
    })
}
