use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::error::Error;

/// Training objectives. `Synthetic` tags tasks of the quadratic benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    SentNmt,
    Nct,
    Mrg,
    Xrg,
    Nud,
    Xnud,
    Synthetic(usize),
}

impl Task {
    pub const AUXILIARY: [Task; 4] = [Task::Mrg, Task::Xrg, Task::Nud, Task::Xnud];

    pub fn is_auxiliary(self) -> bool {
        matches!(self, Task::Mrg | Task::Xrg | Task::Nud | Task::Xnud | Task::Synthetic(_))
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::SentNmt => f.write_str("sent_nmt"),
            Task::Nct => f.write_str("nct"),
            Task::Mrg => f.write_str("mrg"),
            Task::Xrg => f.write_str("xrg"),
            Task::Nud => f.write_str("nud"),
            Task::Xnud => f.write_str("xnud"),
            Task::Synthetic(k) => write!(f, "synthetic_{k}"),
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "sent_nmt" | "sentnmt" | "sent-nmt" => Task::SentNmt,
            "nct" => Task::Nct,
            "mrg" => Task::Mrg,
            "xrg" => Task::Xrg,
            "nud" => Task::Nud,
            "xnud" => Task::Xnud,
            other => match other.strip_prefix("synthetic_").and_then(|k| k.parse().ok()) {
                Some(k) => Task::Synthetic(k),
                None => return Err(Error::UnknownTask(s.to_owned())),
            },
        })
    }
}

impl Serialize for Task {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Parses a comma-separated task list.
pub fn parse_task_list(s: &str) -> Result<Vec<Task>, Error> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(Task::from_str)
        .collect()
}
