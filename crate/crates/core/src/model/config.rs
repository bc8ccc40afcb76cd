use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv;

/// What happens to context positions in encoder layers above the first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextMode {
    /// Context states are copied forward from layer 1 unchanged.
    Freeze,
    /// Context positions keep updating but attend only to the context.
    SelfAttend,
}

/// How encoder position ids are assigned.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PositionScheme {
    /// Positions restart at 0 after CLS and after every SEP.
    Segment,
    /// Positions run 0..n over the whole window.
    Absolute,
}

impl FromStr for ContextMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "freeze" => Ok(Self::Freeze),
            "self_attend" => Ok(Self::SelfAttend),
            _ => Err(Error::Config(format!("unknown context_mode `{s}`"))),
        }
    }
}

impl FromStr for PositionScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "segment" => Ok(Self::Segment),
            "absolute" => Ok(Self::Absolute),
            _ => Err(Error::Config(format!("unknown position_scheme `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NctConfig {
    pub layers: usize,
    pub hidden: usize,
    pub ffn: usize,
    pub heads: usize,
    pub max_turns: usize,
    pub max_pos: usize,
    pub vocab: usize,
    pub label_smoothing: f64,
    pub dropout: f64,
    pub context_mode: ContextMode,
    pub position_scheme: PositionScheme,
}

impl Default for NctConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 64,
            ffn: 128,
            heads: 4,
            max_turns: 10,
            max_pos: 128,
            vocab: 0,
            label_smoothing: 0.1,
            dropout: 0.1,
            context_mode: ContextMode::Freeze,
            position_scheme: PositionScheme::Segment,
        }
    }
}

impl NctConfig {
    /// Two layers, `d = 16`, used for gradient checks.
    pub fn tiny(vocab: usize) -> Self {
        Self {
            layers: 2,
            hidden: 16,
            ffn: 32,
            heads: 2,
            max_turns: 10,
            max_pos: 64,
            vocab,
            label_smoothing: 0.1,
            dropout: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 {
            return bad("layers must be >= 1".into());
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return bad(format!("hidden {} not divisible by heads {}", self.hidden, self.heads));
        }
        if self.max_turns < 2 {
            return bad("max_turns must be >= 2".into());
        }
        if self.vocab <= crate::corpus::NUM_SPECIAL {
            return bad(format!("vocab size {} leaves no room for words", self.vocab));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) || !(0.0..1.0).contains(&self.dropout) {
            return bad("label_smoothing and dropout must lie in [0, 1)".into());
        }
        if self.max_pos == 0 || self.ffn == 0 {
            return bad("max_pos and ffn must be positive".into());
        }
        Ok(())
    }

    /// Reads a flat `key=value` file. `vocab` may be omitted and filled in
    /// from the vocabulary later.
    pub fn parse(text: &str) -> Result<Self> {
        let map = kv::parse(text)?;
        let mut c = Self::default();
        for key in map.keys() {
            if ![
                "layers",
                "hidden",
                "ffn",
                "heads",
                "max_turns",
                "max_pos",
                "vocab",
                "label_smoothing",
                "dropout",
                "context_mode",
                "position_scheme",
            ]
            .contains(&key.as_str())
            {
                return Err(Error::Config(format!("unknown model key `{key}`")));
            }
        }
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = kv::get_parsed(&map, stringify!($field))? {
                    c.$field = v;
                }
            };
        }
        take!(layers);
        take!(hidden);
        take!(ffn);
        take!(heads);
        take!(max_turns);
        take!(max_pos);
        take!(vocab);
        take!(label_smoothing);
        take!(dropout);
        if let Some(v) = map.get("context_mode") {
            c.context_mode = v.parse()?;
        }
        if let Some(v) = map.get("position_scheme") {
            c.position_scheme = v.parse()?;
        }
        Ok(c)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "layers={}", self.layers);
        let _ = writeln!(s, "hidden={}", self.hidden);
        let _ = writeln!(s, "heads={}", self.heads);
        let _ = writeln!(s, "ffn={}", self.ffn);
        let _ = writeln!(s, "max_turns={}", self.max_turns);
        let _ = writeln!(s, "max_pos={}", self.max_pos);
        let _ = writeln!(s, "vocab={}", self.vocab);
        let _ = writeln!(s, "label_smoothing={}", self.label_smoothing);
        let _ = writeln!(s, "dropout={}", self.dropout);
        let _ = writeln!(
            s,
            "context_mode={}",
            match self.context_mode {
                ContextMode::Freeze => "freeze",
                ContextMode::SelfAttend => "self_attend",
            }
        );
        let _ = writeln!(
            s,
            "position_scheme={}",
            match self.position_scheme {
                PositionScheme::Segment => "segment",
                PositionScheme::Absolute => "absolute",
            }
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut c = NctConfig::tiny(50);
        c.context_mode = ContextMode::SelfAttend;
        assert_eq!(NctConfig::parse(&c.to_kv()).unwrap(), c);
    }

    #[test]
    fn heads_must_divide_hidden() {
        let mut c = NctConfig::tiny(50);
        c.heads = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(NctConfig::parse("layers=2\nwidth=3").is_err());
    }
}
