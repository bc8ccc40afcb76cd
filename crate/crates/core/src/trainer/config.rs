use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kv;
use crate::scheduler::{ScheduleConfig, StrategyKind};
use crate::task::{parse_task_list, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    GeneralPretrain,
    IndomainPretrain,
    Finetune,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::GeneralPretrain, Stage::IndomainPretrain, Stage::Finetune];

    /// 1-based position in the training pipeline.
    pub fn number(self) -> u32 {
        match self {
            Stage::GeneralPretrain => 1,
            Stage::IndomainPretrain => 2,
            Stage::Finetune => 3,
        }
    }

    pub fn from_number(n: u32) -> Option<Self> {
        Stage::ALL.into_iter().find(|s| s.number() == n)
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::GeneralPretrain => "general_pretrain",
            Stage::IndomainPretrain => "indomain_pretrain",
            Stage::Finetune => "finetune",
        }
    }

    pub fn default_steps(self) -> usize {
        match self {
            Stage::GeneralPretrain | Stage::IndomainPretrain => 2000,
            Stage::Finetune => 500,
        }
    }

    pub fn default_tasks(self) -> Vec<Task> {
        match self {
            Stage::GeneralPretrain => vec![Task::SentNmt],
            _ => vec![Task::Nct, Task::Mrg, Task::Xrg, Task::Nud, Task::Xnud],
        }
    }

    /// Auxiliary tasks kept by the prior-based strategy.
    pub fn default_prior_tasks(self) -> Vec<Task> {
        match self {
            Stage::GeneralPretrain => Vec::new(),
            Stage::IndomainPretrain => Task::AUXILIARY.to_vec(),
            Stage::Finetune => vec![Task::Mrg, Task::Nud],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == t || st.number().to_string() == t)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// `lr(step) = scale · min(step^-0.5, step · warmup^-1.5)` for `step >= 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LrSchedule {
    pub warmup_steps: usize,
    pub scale: f64,
}

impl LrSchedule {
    /// Unit base rate scaled by `hidden^-0.5`.
    pub fn for_hidden(hidden: usize, warmup_steps: usize) -> Self {
        Self {
            warmup_steps,
            scale: (hidden as f64).powf(-0.5),
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup_steps.max(1) as f64;
        self.scale * s.powf(-0.5).min(s * w.powf(-1.5))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub stage: Stage,
    pub corpus_path: Option<PathBuf>,
    pub steps: usize,
    /// Source plus target tokens per batch; at least one example is drawn.
    pub batch_tokens: usize,
    pub tasks: Vec<Task>,
    pub schedule: ScheduleConfig,
    pub warmup_steps: usize,
    /// `None` means `hidden^-0.5`.
    pub lr_scale: Option<f64>,
    pub log_every: usize,
    pub max_ctx_tokens: usize,
}

impl StageConfig {
    pub fn new(stage: Stage) -> Self {
        let steps = stage.default_steps();
        let mut c = Self {
            stage,
            corpus_path: None,
            steps,
            batch_tokens: 256,
            tasks: stage.default_tasks(),
            schedule: ScheduleConfig {
                prior_active_tasks: stage.default_prior_tasks(),
                ..ScheduleConfig::default()
            },
            warmup_steps: 200,
            lr_scale: None,
            log_every: 50,
            max_ctx_tokens: 256,
        };
        c.sync_schedule();
        c
    }

    /// Sets the decay horizon so the first step sees `alpha_start` and the
    /// last step sees `alpha_end`.
    pub fn sync_schedule(&mut self) {
        self.schedule.total_steps = self.steps.saturating_sub(1).max(1);
    }

    pub fn lr_schedule(&self, hidden: usize) -> LrSchedule {
        let mut s = LrSchedule::for_hidden(hidden, self.warmup_steps);
        if let Some(scale) = self.lr_scale {
            s.scale = scale;
        }
        s
    }

    pub fn auxiliary_tasks(&self) -> Vec<Task> {
        self.tasks.iter().copied().filter(|t| t.is_auxiliary()).collect()
    }

    /// The task whose gradient the others are projected onto.
    pub fn main_task(&self) -> Task {
        if self.stage == Stage::GeneralPretrain {
            Task::SentNmt
        } else {
            Task::Nct
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self.stage {
            Stage::GeneralPretrain => {
                if self.tasks != [Task::SentNmt] {
                    return bad(format!("general_pretrain trains sent_nmt only, got {:?}", self.tasks));
                }
            }
            _ => {
                if !self.tasks.contains(&Task::Nct) {
                    return bad(format!("{} needs the nct task", self.stage));
                }
                if let Some(t) = self
                    .tasks
                    .iter()
                    .find(|t| !matches!(t, Task::Nct | Task::Mrg | Task::Xrg | Task::Nud | Task::Xnud))
                {
                    return bad(format!("task {t} is not allowed in {}", self.stage));
                }
            }
        }
        let mut seen = self.tasks.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.tasks.len() {
            return bad("duplicate task".into());
        }
        if self.batch_tokens == 0 || self.log_every == 0 || self.max_ctx_tokens == 0 {
            return bad("batch_tokens, log_every and max_ctx_tokens must be positive".into());
        }
        if self.warmup_steps == 0 {
            return bad("warmup_steps must be >= 1".into());
        }
        self.schedule.validate()
    }

    /// Reads a flat `key=value` stage file. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let map = kv::parse(text)?;
        let stage: Stage = map
            .get("stage")
            .ok_or_else(|| Error::Config("stage file needs `stage`".into()))?
            .parse()?;
        let mut c = Self::new(stage);
        c.apply(&map)?;
        Ok(c)
    }

    /// Overrides fields from a key/value map (config file or flags).
    pub fn apply(&mut self, map: &indexmap::IndexMap<String, String>) -> Result<()> {
        for (key, value) in map {
            match key.as_str() {
                "stage" => {
                    let s: Stage = value.parse()?;
                    if s != self.stage {
                        return Err(Error::Config(format!("cannot change stage {} to {s}", self.stage)));
                    }
                }
                "corpus" => self.corpus_path = Some(PathBuf::from(value)),
                "steps" => self.steps = parse_value(key, value)?,
                "batch_tokens" => self.batch_tokens = parse_value(key, value)?,
                "tasks" => self.tasks = parse_task_list(value)?,
                "strategy" => self.schedule.strategy = value.parse::<StrategyKind>()?,
                "alpha_start" => self.schedule.alpha_start = parse_value(key, value)?,
                "alpha_end" => self.schedule.alpha_end = parse_value(key, value)?,
                "prior_tasks" => self.schedule.prior_active_tasks = parse_task_list(value)?,
                "warmup_steps" => self.warmup_steps = parse_value(key, value)?,
                "lr_scale" => self.lr_scale = Some(parse_value(key, value)?),
                "log_every" => self.log_every = parse_value(key, value)?,
                "max_ctx_tokens" => self.max_ctx_tokens = parse_value(key, value)?,
                _ => return Err(Error::Config(format!("unknown stage key `{key}`"))),
            }
        }
        self.sync_schedule();
        Ok(())
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value for `{key}`: `{value}`")))
}
