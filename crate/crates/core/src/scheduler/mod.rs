//! Combining the main-task gradient with auxiliary-task gradients.
//!
//! The scheduled strategy keeps only the component of each auxiliary
//! gradient that lies along the main gradient:
//!
//! ```text
//! g_k' = (g_k · g_nct / |g_nct|²) g_nct
//! Δθ   = g_nct + α Σ_k g_k'
//! ```
//!
//! [`synthetic`] provides quadratic toy problems with known optima for
//! comparing strategies.

pub mod synthetic;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Serialize, Serializer};

use crate::diffcore::GradVector;
use crate::error::{Error, Result};
use crate::task::Task;

/// Below this squared norm the main gradient is treated as zero and all
/// projections vanish.
pub const DEGENERATE_NORM_SQ: f64 = 1e-24;

/// Inclusion probability of each auxiliary task under [`StrategyKind::Random`].
pub const RANDOM_INCLUDE_P: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    /// Plain weighted sum of all auxiliary gradients.
    Conventional,
    /// Conventional over an independently resampled subset each step.
    Random,
    /// Conventional over a fixed per-stage task set.
    PriorBased,
    /// Projection of every auxiliary gradient onto the main gradient.
    Sml,
    /// Projection, with projections that oppose the main gradient dropped.
    SmlNoInverse,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Conventional,
        StrategyKind::Random,
        StrategyKind::PriorBased,
        StrategyKind::Sml,
        StrategyKind::SmlNoInverse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Conventional => "conventional",
            StrategyKind::Random => "random",
            StrategyKind::PriorBased => "prior_based",
            StrategyKind::Sml => "sml",
            StrategyKind::SmlNoInverse => "sml_no_inverse",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::UnknownStrategy(s.to_string()))
    }
}

impl Serialize for StrategyKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

/// One task's gradient over the shared flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskGradient {
    pub task: Task,
    pub grad: GradVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub strategy: StrategyKind,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub total_steps: usize,
    pub rng_seed: u64,
    /// Tasks kept by [`StrategyKind::PriorBased`] in the current stage.
    pub prior_active_tasks: Vec<Task>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyKind::Sml,
            alpha_start: 1.0,
            alpha_end: 0.0,
            total_steps: 1,
            rng_seed: 0,
            prior_active_tasks: Task::AUXILIARY.to_vec(),
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be >= 1".into()));
        }
        if !(self.alpha_start >= self.alpha_end && self.alpha_end >= 0.0) {
            return Err(Error::Config(format!(
                "need alpha_start >= alpha_end >= 0, got {} and {}",
                self.alpha_start, self.alpha_end
            )));
        }
        Ok(())
    }
}

/// Linear decay from `alpha_start` at step 0 to `alpha_end` at
/// `total_steps`, clamped beyond.
pub fn alpha_at(step: usize, cfg: &ScheduleConfig) -> f64 {
    if step >= cfg.total_steps {
        return cfg.alpha_end;
    }
    let frac = step as f64 / cfg.total_steps as f64;
    cfg.alpha_start + (cfg.alpha_end - cfg.alpha_start) * frac
}

fn check_len(op: &'static str, a: &GradVector, b: &GradVector) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op,
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    Ok(())
}

/// `(g_k · g_nct / |g_nct|²) g_nct`, or zero when `g_nct` is degenerate.
pub fn project(g_k: &GradVector, g_nct: &GradVector) -> Result<GradVector> {
    check_len("project", g_k, g_nct)?;
    let nn = g_nct.norm_sq();
    if nn < DEGENERATE_NORM_SQ {
        return Ok(GradVector::zeros(g_nct.len()));
    }
    Ok(g_nct.scaled(g_k.dot(g_nct) / nn))
}

/// Auxiliary tasks whose gradients the strategy will use this step.
///
/// Only [`StrategyKind::Random`] consumes randomness, one draw per enabled
/// task in the given order.
pub fn select_tasks<R: Rng + ?Sized>(strategy: StrategyKind, enabled: &[Task], prior: &[Task], rng: &mut R) -> Vec<Task> {
    match strategy {
        StrategyKind::Random => enabled
            .iter()
            .copied()
            .filter(|_| rng.gen_bool(RANDOM_INCLUDE_P))
            .collect(),
        StrategyKind::PriorBased => enabled.iter().copied().filter(|t| prior.contains(t)).collect(),
        _ => enabled.to_vec(),
    }
}

/// Update direction from gradients already filtered by [`select_tasks`].
pub fn combine_selected(g_nct: &GradVector, aux: &[TaskGradient], alpha: f64, strategy: StrategyKind) -> Result<GradVector> {
    let mut out = g_nct.clone();
    for tg in aux {
        check_len("combine", &tg.grad, g_nct)?;
        match strategy {
            StrategyKind::Conventional | StrategyKind::Random | StrategyKind::PriorBased => out.axpy(alpha, &tg.grad),
            StrategyKind::Sml => out.axpy(alpha, &project(&tg.grad, g_nct)?),
            StrategyKind::SmlNoInverse => {
                if tg.grad.dot(g_nct) >= 0.0 {
                    out.axpy(alpha, &project(&tg.grad, g_nct)?);
                }
            }
        }
    }
    Ok(out)
}

/// Update direction `Δθ` for one step under `cfg.strategy`.
pub fn combine<R: Rng + ?Sized>(
    g_nct: &GradVector,
    aux: &[TaskGradient],
    alpha: f64,
    cfg: &ScheduleConfig,
    rng: &mut R,
) -> Result<GradVector> {
    let enabled: Vec<Task> = aux.iter().map(|t| t.task).collect();
    let keep = select_tasks(cfg.strategy, &enabled, &cfg.prior_active_tasks, rng);
    let chosen: Vec<TaskGradient> = aux.iter().filter(|t| keep.contains(&t.task)).cloned().collect();
    combine_selected(g_nct, &chosen, alpha, cfg.strategy)
}

pub(crate) fn cosine(a: &GradVector, b: &GradVector) -> f64 {
    let d = a.norm() * b.norm();
    if d == 0.0 {
        0.0
    } else {
        a.dot(b) / d
    }
}
