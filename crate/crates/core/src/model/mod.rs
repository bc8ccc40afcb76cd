//! Context-aware encoder-decoder with turn embeddings, and its task losses.
//!
//! Weights of linear layers are stored `[out, in]`, so `linear(x)` is
//! `x · Wᵀ + b`.

mod config;
mod losses;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use config::{ContextMode, NctConfig, PositionScheme};
pub use losses::{
    generation_loss, mrg_loss, nct_loss, nud_loss, sent_nmt_loss, xnud_loss, xrg_loss, ClsHead, GenExample,
    GenHead,
};

use crate::corpus::{ContextWindow, BOS};
use crate::diffcore::{Graph, Mask, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

const INIT_STD: f64 = 0.02;

/// Dropout applied to summed input embeddings during training.
pub struct Dropout {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn off() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn new(rate: f64, rng: ChaCha8Rng) -> Self {
        Self { rate, rng: Some(rng) }
    }

    fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_mut() else { return Ok(x) };
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let n = g.value(x).numel();
        let mask = (0..n)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        g.mul_const(x, mask)
    }
}

/// Extra attention restrictions used by ablation tests.
#[derive(Clone, Copy, Debug, Default)]
pub struct EncodeOptions {
    /// Forbid utterance queries from attending context keys in layer 1.
    pub cut_layer1_context: bool,
}

/// Encoder states for one window.
pub struct EncoderState {
    /// Residual stream after each layer (`layers[0]` is layer 1).
    pub layers: Vec<Var>,
    /// Final layer-normalised states, what the decoder and classifiers read.
    pub output: Var,
    pub context_len: usize,
    pub len: usize,
}

/// Attention mask of an encoder layer (1-based `layer`) for a window with
/// `ctx_len` context positions followed by `utt_len` utterance positions.
///
/// Layer 1 is unrestricted. Above it, utterance rows never see context
/// columns; under [`ContextMode::SelfAttend`] context rows also never see
/// utterance columns.
pub fn encoder_attention_mask(ctx_len: usize, utt_len: usize, layer: usize, mode: ContextMode) -> Mask {
    let n = ctx_len + utt_len;
    if layer <= 1 {
        return Mask::full(n, n);
    }
    Mask::from_fn(n, n, |i, j| {
        let row_ctx = i < ctx_len;
        let col_ctx = j < ctx_len;
        match (row_ctx, col_ctx) {
            (false, true) => false,
            (true, false) => mode == ContextMode::Freeze,
            _ => true,
        }
    })
}

/// Sinusoidal position table.
pub fn sinusoid(pos: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| {
            let k = (i / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * k / d as f64);
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct NctModel {
    config: NctConfig,
    pe: Vec<f64>,
}

impl NctModel {
    pub fn new(config: NctConfig) -> Result<Self> {
        config.validate()?;
        let d = config.hidden;
        let mut pe = Vec::with_capacity(config.max_pos * d);
        for p in 0..config.max_pos {
            pe.extend(sinusoid(p, d));
        }
        Ok(Self { config, pe })
    }

    pub fn config(&self) -> &NctConfig {
        &self.config
    }

    /// Name and shape of every parameter, in canonical order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = &self.config;
        let d = c.hidden;
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        let mut push = |name: String, shape: Vec<usize>| out.push((name, shape));
        let ln = |push: &mut dyn FnMut(String, Vec<usize>), prefix: String| {
            push(format!("{prefix}.g"), vec![d]);
            push(format!("{prefix}.b"), vec![d]);
        };
        let attn = |push: &mut dyn FnMut(String, Vec<usize>), prefix: String| {
            for m in ["q", "k", "v", "o"] {
                push(format!("{prefix}.w{m}"), vec![d, d]);
                push(format!("{prefix}.b{m}"), vec![d]);
            }
        };
        let ffn = |push: &mut dyn FnMut(String, Vec<usize>), prefix: String| {
            push(format!("{prefix}.w1"), vec![c.ffn, d]);
            push(format!("{prefix}.b1"), vec![c.ffn]);
            push(format!("{prefix}.w2"), vec![d, c.ffn]);
            push(format!("{prefix}.b2"), vec![d]);
        };

        push("embed.word".into(), vec![c.vocab, d]);
        push("embed.turn".into(), vec![c.max_turns, d]);
        for l in 0..c.layers {
            ln(&mut push, format!("enc.{l}.ln1"));
            attn(&mut push, format!("enc.{l}.attn"));
            ln(&mut push, format!("enc.{l}.ln2"));
            ffn(&mut push, format!("enc.{l}.ffn"));
        }
        ln(&mut push, "enc.ln".into());
        for l in 0..c.layers {
            ln(&mut push, format!("dec.{l}.ln1"));
            attn(&mut push, format!("dec.{l}.self"));
            ln(&mut push, format!("dec.{l}.ln2"));
            attn(&mut push, format!("dec.{l}.cross"));
            ln(&mut push, format!("dec.{l}.ln3"));
            ffn(&mut push, format!("dec.{l}.ffn"));
        }
        ln(&mut push, "dec.ln".into());
        for head in [GenHead::Nct, GenHead::Mrg, GenHead::Xrg] {
            let (w, b) = head.param_names();
            push(w.into(), vec![c.vocab, d]);
            push(b.into(), vec![c.vocab]);
        }
        for head in [ClsHead::Nud, ClsHead::Xnud] {
            push(head.param_name().into(), vec![2, 2 * d]);
        }
        out
    }

    /// Fresh parameters: normal(0, 0.02) weights, unit layer-norm gains,
    /// zero biases, zero turn embeddings.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let embed = Normal::new(0.0, (self.config.hidden as f64).powf(-0.5)).expect("valid std");
        let mut p = ParamStore::new();
        for (name, shape) in self.param_shapes() {
            let leaf = name.rsplit('.').next().unwrap_or("");
            let t = if name == "embed.turn" || (leaf.starts_with('b') && shape.len() == 1) {
                Tensor::zeros(shape)
            } else if leaf == "g" {
                Tensor::full(shape, 1.0)
            } else if name == "embed.word" {
                let n = shape.iter().product();
                Tensor::new(shape, (0..n).map(|_| embed.sample(rng)).collect()).expect("shape")
            } else {
                let n = shape.iter().product();
                Tensor::new(shape, (0..n).map(|_| normal.sample(rng)).collect()).expect("shape")
            };
            p.insert(name, t);
        }
        p
    }

    /// Checks that a parameter store matches this configuration.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        let expected = self.param_shapes();
        if expected.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for ((n1, s1), (n2, t2)) in expected.iter().zip(params.iter()) {
            if n1 != n2 || s1.as_slice() != t2.shape() {
                return Err(Error::Config(format!(
                    "parameter `{n2}` {:?} does not match expected `{n1}` {s1:?}",
                    t2.shape()
                )));
            }
        }
        Ok(())
    }

    fn linear(&self, g: &mut Graph, x: Var, w: &str, b: &str) -> Result<Var> {
        let w = g.param(w)?;
        let b = g.param(b)?;
        let y = g.matmul_t(x, w)?;
        g.add_bias(y, b)
    }

    fn layer_norm(&self, g: &mut Graph, x: Var, prefix: &str) -> Result<Var> {
        let gain = g.param(&format!("{prefix}.g"))?;
        let bias = g.param(&format!("{prefix}.b"))?;
        g.layer_norm(x, gain, bias)
    }

    fn attention(&self, g: &mut Graph, prefix: &str, q_in: Var, kv_in: Var, mask: Option<&Mask>) -> Result<Var> {
        let q = self.linear(g, q_in, &format!("{prefix}.wq"), &format!("{prefix}.bq"))?;
        let k = self.linear(g, kv_in, &format!("{prefix}.wk"), &format!("{prefix}.bk"))?;
        let v = self.linear(g, kv_in, &format!("{prefix}.wv"), &format!("{prefix}.bv"))?;
        let heads = self.config.heads;
        let dh = self.config.hidden / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * dh, dh)?,
                    g.slice_cols(k, h * dh, dh)?,
                    g.slice_cols(v, h * dh, dh)?,
                )
            };
            let s = g.matmul_t(qh, kh)?;
            let s = g.scale(s, scale)?;
            let p = g.masked_softmax(s, mask)?;
            outs.push(g.matmul(p, vh)?);
        }
        let o = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
        self.linear(g, o, &format!("{prefix}.wo"), &format!("{prefix}.bo"))
    }

    fn ffn(&self, g: &mut Graph, x: Var, prefix: &str) -> Result<Var> {
        let h = self.linear(g, x, &format!("{prefix}.w1"), &format!("{prefix}.b1"))?;
        let h = g.gelu(h)?;
        self.linear(g, h, &format!("{prefix}.w2"), &format!("{prefix}.b2"))
    }

    fn encoder_layer(&self, g: &mut Graph, l: usize, x: Var, mask: Option<&Mask>) -> Result<Var> {
        let h = self.layer_norm(g, x, &format!("enc.{l}.ln1"))?;
        let a = self.attention(g, &format!("enc.{l}.attn"), h, h, mask)?;
        let x = g.add(x, a)?;
        let h = self.layer_norm(g, x, &format!("enc.{l}.ln2"))?;
        let f = self.ffn(g, h, &format!("enc.{l}.ffn"))?;
        g.add(x, f)
    }

    /// Position id of every window token under the configured scheme.
    pub fn position_ids(&self, window: &ContextWindow) -> Result<Vec<usize>> {
        use crate::corpus::{CLS, SEP};
        let ids: Vec<usize> = match self.config.position_scheme {
            PositionScheme::Absolute => (0..window.len()).collect(),
            PositionScheme::Segment => {
                let mut next = 0;
                window
                    .token_ids
                    .iter()
                    .map(|&t| {
                        let p = next;
                        next = if t == CLS || t == SEP { 0 } else { next + 1 };
                        p
                    })
                    .collect()
            }
        };
        if let Some(&m) = ids.iter().max() {
            if m >= self.config.max_pos {
                return Err(Error::PositionOverflow {
                    len: m + 1,
                    max_pos: self.config.max_pos,
                });
            }
        }
        Ok(ids)
    }

    /// Word vectors scaled by `sqrt(d)` so they are comparable in size to
    /// the sinusoidal positions.
    fn word_embeddings(&self, g: &mut Graph, table: Var, ids: &[usize]) -> Result<Var> {
        let we = g.embedding_gather(table, ids)?;
        g.scale(we, (self.config.hidden as f64).sqrt())
    }

    fn positional(&self, g: &mut Graph, positions: &[usize]) -> Result<Var> {
        let d = self.config.hidden;
        let mut data = Vec::with_capacity(positions.len() * d);
        for &p in positions {
            data.extend_from_slice(&self.pe[p * d..(p + 1) * d]);
        }
        Ok(g.constant(Tensor::matrix(positions.len(), d, data)?))
    }

    pub fn encode(&self, g: &mut Graph, window: &ContextWindow, dropout: &mut Dropout) -> Result<EncoderState> {
        self.encode_with(g, window, dropout, EncodeOptions::default())
    }

    /// Layer 1 attends over the whole window. In higher layers utterance
    /// positions attend only to the utterance, and context positions follow
    /// the configured [`ContextMode`].
    pub fn encode_with(
        &self,
        g: &mut Graph,
        window: &ContextWindow,
        dropout: &mut Dropout,
        opts: EncodeOptions,
    ) -> Result<EncoderState> {
        let n = window.len();
        if n == 0 {
            return Err(Error::Invalid("empty encoder window".into()));
        }
        if window.turn_ids.len() != n {
            return Err(Error::Shape {
                op: "encode",
                left: vec![n],
                right: vec![window.turn_ids.len()],
            });
        }
        let positions = self.position_ids(window)?;
        let word_table = g.param("embed.word")?;
        let ids: Vec<usize> = window.token_ids.iter().map(|&t| t as usize).collect();
        let we = self.word_embeddings(g, word_table, &ids)?;
        let turn_table = g.param("embed.turn")?;
        let turns: Vec<usize> = window.turn_ids.iter().map(|&t| t as usize).collect();
        let te = g.embedding_gather(turn_table, &turns)?;
        let pe = self.positional(g, &positions)?;
        let x = g.add(we, pe)?;
        let x = g.add(x, te)?;
        let x = dropout.apply(g, x)?;

        let ctx = window.context_len();
        let utt = n - ctx;
        let mut layers = Vec::with_capacity(self.config.layers);
        let first_mask = if opts.cut_layer1_context && ctx > 0 {
            Some(Mask::from_fn(n, n, |i, j| !(i >= ctx && j < ctx)))
        } else {
            None
        };
        let mut h = self.encoder_layer(g, 0, x, first_mask.as_ref())?;
        layers.push(h);
        for l in 1..self.config.layers {
            h = if ctx == 0 {
                self.encoder_layer(g, l, h, None)?
            } else {
                match self.config.context_mode {
                    ContextMode::Freeze => {
                        let c = g.slice_rows(h, 0, ctx)?;
                        let u = g.slice_rows(h, ctx, utt)?;
                        let u = self.encoder_layer(g, l, u, None)?;
                        g.concat_rows(&[c, u])?
                    }
                    ContextMode::SelfAttend => {
                        let mask = encoder_attention_mask(ctx, utt, l + 1, ContextMode::SelfAttend);
                        self.encoder_layer(g, l, h, Some(&mask))?
                    }
                }
            };
            layers.push(h);
        }
        let output = self.layer_norm(g, h, "enc.ln")?;
        Ok(EncoderState {
            layers,
            output,
            context_len: ctx,
            len: n,
        })
    }

    /// Top-layer decoder states for the decoder input `inputs` (starting
    /// with BOS), attending causally over `inputs` and fully over `memory`.
    pub fn decode(&self, g: &mut Graph, memory: Var, inputs: &[u32], dropout: &mut Dropout) -> Result<Var> {
        let m = inputs.len();
        if m == 0 {
            return Err(Error::Invalid("empty decoder input".into()));
        }
        if m > self.config.max_pos {
            return Err(Error::PositionOverflow {
                len: m,
                max_pos: self.config.max_pos,
            });
        }
        let word_table = g.param("embed.word")?;
        let ids: Vec<usize> = inputs.iter().map(|&t| t as usize).collect();
        let we = self.word_embeddings(g, word_table, &ids)?;
        let positions: Vec<usize> = (0..m).collect();
        let pe = self.positional(g, &positions)?;
        let x = g.add(we, pe)?;
        let mut x = dropout.apply(g, x)?;
        let causal = Mask::causal(m);
        for l in 0..self.config.layers {
            let h = self.layer_norm(g, x, &format!("dec.{l}.ln1"))?;
            let a = self.attention(g, &format!("dec.{l}.self"), h, h, Some(&causal))?;
            x = g.add(x, a)?;
            let h = self.layer_norm(g, x, &format!("dec.{l}.ln2"))?;
            let a = self.attention(g, &format!("dec.{l}.cross"), h, memory, None)?;
            x = g.add(x, a)?;
            let h = self.layer_norm(g, x, &format!("dec.{l}.ln3"))?;
            let f = self.ffn(g, h, &format!("dec.{l}.ffn"))?;
            x = g.add(x, f)?;
        }
        self.layer_norm(g, x, "dec.ln")
    }

    pub fn generation_logits(&self, g: &mut Graph, states: Var, head: GenHead) -> Result<Var> {
        let (w, b) = head.param_names();
        self.linear(g, states, w, b)
    }

    /// Log-probabilities of the token after `prefix` (which excludes BOS),
    /// read from the given generation head.
    pub fn next_token_log_probs(&self, g: &mut Graph, memory: Var, prefix: &[u32], head: GenHead) -> Result<Vec<f64>> {
        let mut inputs = Vec::with_capacity(prefix.len() + 1);
        inputs.push(BOS);
        inputs.extend_from_slice(prefix);
        let states = self.decode(g, memory, &inputs, &mut Dropout::off())?;
        let last = g.slice_rows(states, inputs.len() - 1, 1)?;
        let logits = self.generation_logits(g, last, head)?;
        Ok(log_softmax(g.value(logits).data()))
    }

    /// `p(y_t | y_<t, window)` for the token after `prefix`.
    pub fn decode_step(&self, g: &mut Graph, memory: Var, prefix: &[u32], head: GenHead) -> Result<Vec<f64>> {
        Ok(self
            .next_token_log_probs(g, memory, prefix, head)?
            .into_iter()
            .map(f64::exp)
            .collect())
    }
}

pub(crate) fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

#[cfg(test)]
mod tests;
