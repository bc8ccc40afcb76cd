use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Stage;
use crate::diffcore::checkpoint::{
    read_exact, read_f64s, read_header, read_params, read_u32, read_u64, write_f64s, write_header, write_params,
    write_u32, write_u64,
};
use crate::diffcore::{GradVector, ParamStore};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::model::NctConfig;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.998;
pub const ADAM_EPS: f64 = 1e-9;

const STATE_MARKER: &[u8] = b"STATE\n";
const END_MARKER: &[u8] = b"END\n";

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: NctConfig,
    pub params: ParamStore,
    /// Stage the counters below refer to; `None` before any stage ran.
    pub stage: Option<Stage>,
    /// Updates taken in the current stage; also the Adam time step.
    pub step: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(model: NctConfig, params: ParamStore, seed: u64) -> Self {
        let n = params.total_len();
        Self {
            model,
            params,
            stage: None,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Starts `stage` with fresh optimizer moments, unless it is already
    /// the current stage.
    pub fn enter_stage(&mut self, stage: Stage) {
        if self.stage != Some(stage) {
            self.stage = Some(stage);
            self.step = 0;
            self.m.iter_mut().for_each(|x| *x = 0.0);
            self.v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// One Adam step along `delta` (a descent direction is subtracted).
    /// Returns `false` and leaves parameters and moments untouched when
    /// `delta` has non-finite entries; the step counter advances either way.
    pub fn adam_update(&mut self, delta: &GradVector, lr: f64) -> Result<bool> {
        let n = self.m.len();
        if delta.len() != n {
            return Err(Error::Shape {
                op: "adam_update",
                left: vec![delta.len()],
                right: vec![n],
            });
        }
        self.step += 1;
        if !delta.all_finite() {
            log::warn!("skipping step {}: non-finite update", self.step);
            return Ok(false);
        }
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let mut flat = self.params.flatten();
        for i in 0..n {
            let g = delta[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            flat[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
        self.params.unflatten(&flat)?;
        Ok(true)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        write_header(w)?;
        write_params(w, &self.params)?;
        w.write_all(STATE_MARKER)?;
        let cfg = self.model.to_kv();
        write_u32(w, cfg.len() as u32)?;
        w.write_all(cfg.as_bytes())?;
        write_u32(w, self.stage.map_or(0, Stage::number))?;
        write_u64(w, self.step as u64)?;
        write_u64(w, self.m.len() as u64)?;
        write_f64s(w, &self.m)?;
        write_f64s(w, &self.v)?;
        w.write_all(&self.rng.get_seed())?;
        write_u64(w, self.rng.get_stream())?;
        let pos = self.rng.get_word_pos();
        write_u64(w, pos as u64)?;
        write_u64(w, (pos >> 64) as u64)?;
        w.write_all(END_MARKER)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        read_header(r)?;
        let params = read_params(r)?;
        expect_marker(r, STATE_MARKER, "state marker")?;
        let len = read_u32(r)? as usize;
        let mut cfg = vec![0u8; len];
        read_exact(r, &mut cfg, "model config")?;
        let cfg = String::from_utf8(cfg).map_err(|_| Error::Checkpoint("model config is not UTF-8".into()))?;
        let model = NctConfig::parse(&cfg)?;
        let stage = match read_u32(r)? {
            0 => None,
            n => Some(Stage::from_number(n).ok_or_else(|| Error::Checkpoint(format!("bad stage number {n}")))?),
        };
        let step = read_u64(r)? as usize;
        let n = read_u64(r)? as usize;
        if n != params.total_len() {
            return Err(Error::Checkpoint(format!(
                "optimizer state has {n} entries for {} parameters",
                params.total_len()
            )));
        }
        let m = read_f64s(r, n)?;
        let v = read_f64s(r, n)?;
        let mut seed = [0u8; 32];
        read_exact(r, &mut seed, "rng seed")?;
        let stream = read_u64(r)?;
        let lo = read_u64(r)? as u128;
        let hi = read_u64(r)? as u128;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(lo | (hi << 64));
        expect_marker(r, END_MARKER, "end marker")?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after end marker".into()));
        }
        Ok(Self {
            model,
            params,
            stage,
            step,
            m,
            v,
            rng,
        })
    }
}

fn expect_marker(r: &mut impl Read, marker: &[u8], what: &str) -> Result<()> {
    let mut buf = vec![0u8; marker.len()];
    read_exact(r, &mut buf, what)?;
    if buf != marker {
        return Err(Error::Checkpoint(format!("missing {what}")));
    }
    Ok(())
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    state.write_to(&mut buf)?;
    write_atomic(path, &buf)
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let f = File::open(path).map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
    TrainState::read_from(&mut BufReader::new(f))
}

/// Writes only the parameter records, for tools that need no optimizer.
pub fn save_params(params: &ParamStore, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(Vec::new());
    write_header(&mut w)?;
    write_params(&mut w, params)?;
    let buf = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &buf)
}
