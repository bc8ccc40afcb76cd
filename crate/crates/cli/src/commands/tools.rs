use std::path::Path;

use anyhow::{bail, Context, Result};
use log::{error, info};
use serde_json::json;
use sml_core::diffcore::GradCheckConfig;
use sml_core::fsio::write_atomic;
use sml_core::model::NctConfig;
use sml_core::scheduler::synthetic::{
    make_quadratic_tasks, run_comparison, single_conflicting, single_orthogonal, write_csv, ComparisonConfig,
};
use sml_core::scheduler::StrategyKind;
use sml_core::task::Task;
use sml_core::trainer::{check_task_gradients, gradcheck_fixture};

use crate::manifest::{manifest_path_for_file, ManifestBuilder};
use crate::{GradcheckArgs, SchedDemoArgs};

const DEFAULT_GRADCHECK_VOCAB: usize = 50;

fn gradcheck_model(path: Option<&Path>) -> Result<NctConfig> {
    let Some(p) = path else {
        return Ok(NctConfig::tiny(DEFAULT_GRADCHECK_VOCAB));
    };
    let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
    let mut cfg = NctConfig::parse(&text)?;
    if cfg.vocab == 0 {
        cfg.vocab = DEFAULT_GRADCHECK_VOCAB;
    }
    // Finite differences need a deterministic loss.
    cfg.dropout = 0.0;
    cfg.validate()?;
    Ok(cfg)
}

/// Returns whether every loss passed.
pub fn gradcheck(args: &GradcheckArgs, seed: u64) -> Result<bool> {
    let mut manifest = ManifestBuilder::new("gradcheck");
    manifest.seed(seed);
    if let Some(p) = &args.model {
        manifest.config(p);
    }
    let cfg = gradcheck_model(args.model.as_deref())?;
    let (model, params, batch) = gradcheck_fixture(cfg, seed)?;
    let check = GradCheckConfig {
        eps: args.eps,
        tol: args.tol,
        samples: args.samples,
        seed,
    };
    let tasks = [Task::SentNmt, Task::Nct, Task::Mrg, Task::Xrg, Task::Nud, Task::Xnud];
    let reports = check_task_gradients(&model, &params, &batch, &tasks, &check)?;
    let mut passed = reports.len() == tasks.len();
    let mut rows = Vec::new();
    for (task, r) in &reports {
        if r.passed {
            info!("{task}: max rel err {:.3e} over {} coordinates", r.max_rel_err, r.checked);
        } else {
            error!("{task}: max rel err {:.3e} at {}[{}]", r.max_rel_err, r.worst_param, r.worst_offset);
        }
        passed &= r.passed;
        rows.push(json!({ "task": task, "report": r }));
    }
    let report = json!({ "passed": passed, "eps": args.eps, "tol": args.tol, "losses": rows });
    write_atomic(&args.out, format!("{}\n", serde_json::to_string_pretty(&report)?).as_bytes())?;
    manifest.output(&args.out).summary(json!({ "passed": passed }));
    manifest.finish(&manifest_path_for_file(&args.out))?;
    Ok(passed)
}

pub fn sched_demo(args: &SchedDemoArgs, seed: u64) -> Result<()> {
    let mut manifest = ManifestBuilder::new("sched-demo");
    manifest.seed(seed);
    let set = match args.tasks.as_str() {
        "mixed" => make_quadratic_tasks(args.dim, seed)?,
        "conflicting" => single_conflicting(args.dim, seed)?,
        "orthogonal" => single_orthogonal(args.dim, seed)?,
        other => bail!("unknown task set `{other}`; expected mixed, conflicting or orthogonal"),
    };
    let cfg = ComparisonConfig {
        steps: args.steps,
        lr: args.lr,
        alpha: args.alpha,
        seed,
    };
    let trajectories = run_comparison(&set, &StrategyKind::ALL, &cfg)?;
    let mut buf = Vec::new();
    write_csv(&mut buf, &trajectories)?;
    write_atomic(&args.out, &buf)?;
    let finals: serde_json::Map<String, serde_json::Value> = trajectories
        .iter()
        .map(|t| (t.strategy.name().to_owned(), json!(t.final_distance())))
        .collect();
    for (name, d) in &finals {
        info!("{name}: final distance {d}");
    }
    manifest.output(&args.out).summary(json!({ "config": cfg, "final_distance": finals }));
    manifest.finish(&manifest_path_for_file(&args.out))?;
    Ok(())
}
