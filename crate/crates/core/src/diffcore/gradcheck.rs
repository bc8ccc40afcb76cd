use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Graph, ParamStore, Var};
use crate::error::Result;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Minimum number of coordinates compared (all of them if fewer exist).
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            samples: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst_param: String,
    pub worst_offset: usize,
    pub checked: usize,
    pub passed: bool,
}

/// Compares reverse-mode gradients of `loss_fn` with central differences.
///
/// At least one coordinate of every parameter tensor is checked; the rest
/// of the sample is drawn uniformly without replacement.
pub fn grad_check<F>(params: &ParamStore, loss_fn: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let loss = loss_fn(&mut g)?;
        g.backward(loss)?
    };

    let total = params.total_len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut coords: Vec<usize> = if total <= cfg.samples {
        (0..total).collect()
    } else {
        let mut c: Vec<usize> = params.offsets();
        c.extend(sample(&mut rng, total, cfg.samples).into_iter());
        c
    };
    coords.sort_unstable();
    coords.dedup();

    let eval = |p: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(p);
        let loss = loss_fn(&mut g)?;
        Ok(g.scalar(loss))
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_param: String::new(),
        worst_offset: 0,
        checked: coords.len(),
        passed: true,
    };
    for &i in &coords {
        let orig = params.get_flat(i).expect("coordinate in range");
        work.set_flat(i, orig + cfg.eps)?;
        let plus = eval(&work)?;
        work.set_flat(i, orig - cfg.eps)?;
        let minus = eval(&work)?;
        work.set_flat(i, orig)?;
        let numeric = (plus - minus) / (2.0 * cfg.eps);
        let a = analytic[i];
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
        report.max_abs_err = report.max_abs_err.max(abs);
        if report.worst_param.is_empty() || rel > report.max_rel_err {
            report.max_rel_err = rel;
            let (name, off) = params.locate(i).expect("coordinate in range");
            report.worst_param = name.to_owned();
            report.worst_offset = off;
        }
    }
    report.passed = report.max_rel_err <= cfg.tol;
    Ok(report)
}
