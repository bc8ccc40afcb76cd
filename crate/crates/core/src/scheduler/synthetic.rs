//! Quadratic multi-task problems with closed-form optima.
//!
//! The main task is `L0(θ) = ½|θ − θ*|²`. Auxiliary task `k` is
//! `½ Σ_i w_i (θ_i − o_i)²` with non-negative diagonal weights `w`.
//! Starting points lie on the line `θ* + r e0`, which keeps every
//! projected update on that line.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{combine, cosine, ScheduleConfig, StrategyKind, TaskGradient};
use crate::diffcore::GradVector;
use crate::error::{Error, Result};
use crate::task::Task;

/// How an auxiliary task relates to the main task at the starting point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// Gradient has a positive dot product with the main gradient.
    Aligned,
    /// Gradient has a negative dot product with the main gradient.
    Conflicting,
    /// Gradient is orthogonal to the main gradient along the whole line.
    Orthogonal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticTask {
    pub weights: Vec<f64>,
    pub optimum: Vec<f64>,
    pub relation: Relation,
}

impl QuadraticTask {
    pub fn gradient(&self, theta: &[f64]) -> GradVector {
        GradVector(
            theta
                .iter()
                .zip(&self.optimum)
                .zip(&self.weights)
                .map(|((t, o), w)| w * (t - o))
                .collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticTaskSet {
    pub optimum: Vec<f64>,
    pub start: Vec<f64>,
    pub aux: Vec<QuadraticTask>,
}

impl QuadraticTaskSet {
    pub fn dim(&self) -> usize {
        self.optimum.len()
    }

    pub fn main_gradient(&self, theta: &[f64]) -> GradVector {
        GradVector(theta.iter().zip(&self.optimum).map(|(t, o)| t - o).collect())
    }

    pub fn distance(&self, theta: &[f64]) -> f64 {
        theta.iter().zip(&self.optimum).map(|(t, o)| (t - o).powi(2)).sum::<f64>().sqrt()
    }

    /// Signed offset `r` of the starting point along `e0`.
    pub fn start_offset(&self) -> f64 {
        self.start[0] - self.optimum[0]
    }
}

struct Builder {
    rng: ChaCha8Rng,
    dim: usize,
    optimum: Vec<f64>,
    r0: f64,
}

impl Builder {
    fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Invalid(format!("quadratic benchmark needs dim >= 2, got {dim}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let optimum = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r0 = rng.gen_range(1.0..2.0);
        Ok(Self { rng, dim, optimum, r0 })
    }

    /// Full weights, optimum `θ* + 2 r0 e0 + c e1`: opposes the main
    /// gradient at the start and pulls off the `e0` line.
    fn conflicting(&mut self) -> QuadraticTask {
        let mut optimum = self.optimum.clone();
        optimum[0] += 2.0 * self.r0;
        optimum[1] += self.rng.gen_range(0.5..1.5);
        QuadraticTask {
            weights: vec![1.0; self.dim],
            optimum,
            relation: Relation::Conflicting,
        }
    }

    /// Zero weight on `e0`, so its gradient never touches the main line.
    fn orthogonal(&mut self) -> QuadraticTask {
        let mut weights: Vec<f64> = (0..self.dim).map(|_| self.rng.gen_range(0.5..1.5)).collect();
        weights[0] = 0.0;
        let optimum = (0..self.dim).map(|_| self.rng.gen_range(-2.0..2.0)).collect();
        QuadraticTask {
            weights,
            optimum,
            relation: Relation::Orthogonal,
        }
    }

    /// Optimum close to `θ*` on the same side as the start.
    fn aligned(&mut self) -> QuadraticTask {
        let weights = (0..self.dim).map(|_| self.rng.gen_range(0.5..1.5)).collect();
        let optimum = self
            .optimum
            .iter()
            .map(|o| o + self.rng.gen_range(-0.1..0.1))
            .collect();
        QuadraticTask {
            weights,
            optimum,
            relation: Relation::Aligned,
        }
    }

    fn finish(self, aux: Vec<QuadraticTask>) -> QuadraticTaskSet {
        let mut start = self.optimum.clone();
        start[0] += self.r0;
        QuadraticTaskSet {
            optimum: self.optimum,
            start,
            aux,
        }
    }
}

/// An aligned, a conflicting and an orthogonal auxiliary task.
pub fn make_quadratic_tasks(dim: usize, seed: u64) -> Result<QuadraticTaskSet> {
    let mut b = Builder::new(dim, seed)?;
    let aux = vec![b.aligned(), b.conflicting(), b.orthogonal()];
    Ok(b.finish(aux))
}

/// A single conflicting auxiliary task.
pub fn single_conflicting(dim: usize, seed: u64) -> Result<QuadraticTaskSet> {
    let mut b = Builder::new(dim, seed)?;
    let aux = vec![b.conflicting()];
    Ok(b.finish(aux))
}

/// A single orthogonal auxiliary task.
pub fn single_orthogonal(dim: usize, seed: u64) -> Result<QuadraticTaskSet> {
    let mut b = Builder::new(dim, seed)?;
    let aux = vec![b.orthogonal()];
    Ok(b.finish(aux))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonConfig {
    pub steps: usize,
    pub lr: f64,
    /// Constant auxiliary weight; the benchmark does not decay it.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 0.05,
            alpha: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub strategy: StrategyKind,
    /// Distance to `θ*` after each update, `steps` entries.
    pub distances: Vec<f64>,
    /// Cosine between the summed auxiliary gradient and the main gradient
    /// at each step, before the update.
    pub cosines: Vec<f64>,
    pub final_theta: Vec<f64>,
}

impl Trajectory {
    pub fn final_distance(&self) -> f64 {
        *self.distances.last().unwrap_or(&f64::NAN)
    }
}

/// Fixed-step descent along `Δθ` for each strategy from the same start.
pub fn run_comparison(set: &QuadraticTaskSet, strategies: &[StrategyKind], cfg: &ComparisonConfig) -> Result<Vec<Trajectory>> {
    strategies.iter().map(|&s| run_strategy(set, Some(s), cfg)).collect()
}

/// Descent on the main task alone, recorded like a strategy run.
pub fn run_single_task(set: &QuadraticTaskSet, cfg: &ComparisonConfig) -> Result<Trajectory> {
    run_strategy(set, None, cfg)
}

fn run_strategy(set: &QuadraticTaskSet, strategy: Option<StrategyKind>, cfg: &ComparisonConfig) -> Result<Trajectory> {
    let tasks: Vec<Task> = (0..set.aux.len()).map(Task::Synthetic).collect();
    let schedule = ScheduleConfig {
        strategy: strategy.unwrap_or(StrategyKind::Conventional),
        alpha_start: cfg.alpha,
        alpha_end: cfg.alpha,
        total_steps: cfg.steps.max(1),
        rng_seed: cfg.seed,
        prior_active_tasks: tasks.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut theta = set.start.clone();
    let mut distances = Vec::with_capacity(cfg.steps);
    let mut cosines = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let g = set.main_gradient(&theta);
        let aux: Vec<TaskGradient> = set
            .aux
            .iter()
            .zip(&tasks)
            .map(|(q, &task)| TaskGradient {
                task,
                grad: q.gradient(&theta),
            })
            .collect();
        let mut sum = GradVector::zeros(theta.len());
        for a in &aux {
            sum.axpy(1.0, &a.grad);
        }
        cosines.push(cosine(&sum, &g));
        let delta = match strategy {
            Some(_) => combine(&g, &aux, cfg.alpha, &schedule, &mut rng)?,
            None => g,
        };
        for (t, d) in theta.iter_mut().zip(delta.as_slice()) {
            *t -= cfg.lr * d;
        }
        distances.push(set.distance(&theta));
    }
    Ok(Trajectory {
        strategy: schedule.strategy,
        distances,
        cosines,
        final_theta: theta,
    })
}

/// Writes `step,strategy,distance_to_optimum,cosine`, one row per step and
/// strategy, steps numbered from 1.
pub fn write_csv(w: &mut impl Write, trajectories: &[Trajectory]) -> Result<()> {
    writeln!(w, "step,strategy,distance_to_optimum,cosine")?;
    for tr in trajectories {
        for (i, (d, c)) in tr.distances.iter().zip(&tr.cosines).enumerate() {
            writeln!(w, "{},{},{:.17e},{:.17e}", i + 1, tr.strategy, d, c)?;
        }
    }
    Ok(())
}
