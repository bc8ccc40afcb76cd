use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::corpus::{make_context, sample_nud, standalone, ContextLimits, Conversation, NudSample, Side, Utterance, CLS, EOS};
use crate::diffcore::{grad_check, GradCheckConfig};

const V: usize = 50;

fn utt(turn: usize, side: Side, tokens: &[u32]) -> Utterance {
    Utterance {
        turn_index: turn,
        language: side,
        tokens: tokens.to_vec(),
        raw_text: String::new(),
    }
}

fn conversation(src: &[&[u32]], tgt: &[&[u32]]) -> Conversation {
    Conversation {
        id: "c".into(),
        source: src.iter().enumerate().map(|(i, t)| utt(i + 1, Side::Source, t)).collect(),
        target: tgt.iter().enumerate().map(|(i, t)| utt(i + 1, Side::Target, t)).collect(),
    }
}

fn sample_conv() -> Conversation {
    conversation(
        &[&[10, 11, 12], &[13, 14], &[15, 16, 17, 18], &[19, 20]],
        &[&[30, 31], &[32, 33, 34], &[35, 36], &[37, 38, 39]],
    )
}

/// Tiny model with weights drawn wider than the default init so that
/// gradients and attention patterns are far from trivial.
fn model_and_params(seed: u64) -> (NctModel, ParamStore) {
    let model = NctModel::new(NctConfig::tiny(V)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = model.init_params(&mut rng);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let flat: Vec<f64> = params.flatten().iter().map(|v| v + noise.sample(&mut rng)).collect();
    params.unflatten(&flat).unwrap();
    (model, params)
}

fn set_zero(params: &mut ParamStore, name: &str) {
    params.get_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
}

fn rows(t: &Tensor, r: std::ops::Range<usize>) -> Vec<f64> {
    r.flat_map(|i| t.row(i).to_vec()).collect()
}

#[test]
fn mask_forbids_exactly_utterance_to_context() {
    let m = encoder_attention_mask(3, 2, 2, ContextMode::Freeze);
    for i in 0..5 {
        for j in 0..5 {
            assert_eq!(m.allowed(i, j), !(i >= 3 && j < 3), "({i},{j})");
        }
    }
    let first = encoder_attention_mask(3, 2, 1, ContextMode::Freeze);
    assert!((0..5).all(|i| (0..5).all(|j| first.allowed(i, j))));
    let sa = encoder_attention_mask(3, 2, 3, ContextMode::SelfAttend);
    assert!(!sa.allowed(0, 4) && !sa.allowed(4, 0) && sa.allowed(0, 2) && sa.allowed(4, 3));
}

#[test]
fn context_states_are_frozen_after_first_layer() {
    let (model, params) = model_and_params(1);
    let conv = sample_conv();
    let w = make_context(&conv, 3, Side::Source, &ContextLimits::default()).unwrap();
    let mut g = Graph::new(&params);
    let enc = model.encode(&mut g, &w, &mut Dropout::off()).unwrap();
    let ctx = enc.context_len;
    assert!(ctx > 0);
    let first = rows(g.value(enc.layers[0]), 0..ctx);
    for &l in &enc.layers[1..] {
        assert_eq!(rows(g.value(l), 0..ctx), first);
    }
}

#[test]
fn empty_context_is_a_plain_encoder() {
    let (model, params) = model_and_params(2);
    let conv = sample_conv();
    let w = make_context(&conv, 1, Side::Source, &ContextLimits::default()).unwrap();
    assert_eq!(w.context_len(), 0);
    let mut g = Graph::new(&params);
    let enc = model.encode(&mut g, &w, &mut Dropout::off()).unwrap();

    let mut g2 = Graph::new(&params);
    let pos = model.position_ids(&w).unwrap();
    let table = g2.param("embed.word").unwrap();
    let ids: Vec<usize> = w.token_ids.iter().map(|&t| t as usize).collect();
    let we = g2.embedding_gather(table, &ids).unwrap();
    let we = g2.scale(we, (model.config().hidden as f64).sqrt()).unwrap();
    let tt = g2.param("embed.turn").unwrap();
    let turns: Vec<usize> = w.turn_ids.iter().map(|&t| t as usize).collect();
    let te = g2.embedding_gather(tt, &turns).unwrap();
    let pe = model.positional(&mut g2, &pos).unwrap();
    let x = g2.add(we, pe).unwrap();
    let mut h = g2.add(x, te).unwrap();
    for l in 0..model.config().layers {
        h = model.encoder_layer(&mut g2, l, h, None).unwrap();
    }
    let out = model.layer_norm(&mut g2, h, "enc.ln").unwrap();
    assert_eq!(g.value(enc.output), g2.value(out));
}

#[test]
fn context_reaches_utterance_only_through_first_layer() {
    let (model, params) = model_and_params(3);
    let a = sample_conv();
    let mut b = a.clone();
    b.source[0].tokens[1] = 44;
    let limits = ContextLimits::default();
    let wa = make_context(&a, 3, Side::Source, &limits).unwrap();
    let wb = make_context(&b, 3, Side::Source, &limits).unwrap();
    let ctx = wa.context_len();
    let n = wa.len();

    let utterance_out = |w: &ContextWindow, cut: bool| {
        let mut g = Graph::new(&params);
        let opts = EncodeOptions { cut_layer1_context: cut };
        let enc = model.encode_with(&mut g, w, &mut Dropout::off(), opts).unwrap();
        rows(g.value(enc.output), ctx..n)
    };
    assert_eq!(utterance_out(&wa, true), utterance_out(&wb, true));
    assert_ne!(utterance_out(&wa, false), utterance_out(&wb, false));
}

#[test]
fn self_attend_mode_keeps_context_apart_from_utterance() {
    let (_, params) = model_and_params(4);
    let cfg = NctConfig {
        context_mode: ContextMode::SelfAttend,
        ..NctConfig::tiny(V)
    };
    let model = NctModel::new(cfg).unwrap();
    let a = sample_conv();
    let mut b = a.clone();
    b.source[2].tokens[0] = 44;
    let limits = ContextLimits::default();
    let wa = make_context(&a, 3, Side::Source, &limits).unwrap();
    let wb = make_context(&b, 3, Side::Source, &limits).unwrap();
    let ctx = wa.context_len();
    let out = |w: &ContextWindow| {
        let mut g = Graph::new(&params);
        let opts = EncodeOptions { cut_layer1_context: true };
        let enc = model.encode_with(&mut g, w, &mut Dropout::off(), opts).unwrap();
        rows(g.value(enc.output), 0..ctx)
    };
    // Changing the utterance only moves context states via layer 1, which the
    // cut does not block in this direction.
    assert_ne!(out(&wa), out(&wb));
}

#[test]
fn position_overflow_is_rejected() {
    let cfg = NctConfig {
        max_pos: 3,
        ..NctConfig::tiny(V)
    };
    let model = NctModel::new(cfg).unwrap();
    let params = model.init_params(&mut ChaCha8Rng::seed_from_u64(0));
    let w = standalone(&[10, 11, 12, 13], Side::Source);
    let mut g = Graph::new(&params);
    assert!(matches!(
        model.encode(&mut g, &w, &mut Dropout::off()),
        Err(Error::PositionOverflow { .. })
    ));
}

#[test]
fn decode_step_is_a_distribution() {
    let (model, params) = model_and_params(5);
    let w = standalone(&[10, 11, 12], Side::Source);
    let mut g = Graph::new(&params);
    let enc = model.encode(&mut g, &w, &mut Dropout::off()).unwrap();
    for prefix in [&[][..], &[30], &[30, 31, 32]] {
        let p = model.decode_step(&mut g, enc.output, prefix, GenHead::Nct).unwrap();
        assert_eq!(p.len(), V);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn zero_output_head_gives_uniform_distribution() {
    let (model, mut params) = model_and_params(6);
    set_zero(&mut params, "head.nct.w");
    set_zero(&mut params, "head.nct.b");
    let w = standalone(&[10, 11], Side::Source);
    let mut g = Graph::new(&params);
    let enc = model.encode(&mut g, &w, &mut Dropout::off()).unwrap();
    let p = model.decode_step(&mut g, enc.output, &[7, 8], GenHead::Nct).unwrap();
    assert!(p.iter().all(|&x| (x - 1.0 / V as f64).abs() < 1e-15));
}

#[test]
fn decoder_is_causal() {
    let (model, params) = model_and_params(7);
    let w = standalone(&[10, 11, 12], Side::Source);
    let mut g = Graph::new(&params);
    let enc = model.encode(&mut g, &w, &mut Dropout::off()).unwrap();
    let base = [BOS, 30, 31, 32, 33];
    let s0 = model.decode(&mut g, enc.output, &base, &mut Dropout::off()).unwrap();
    let l0 = model.generation_logits(&mut g, s0, GenHead::Nct).unwrap();
    let l0 = g.value(l0).clone();
    for t in 1..base.len() {
        let mut changed = base;
        for v in changed.iter_mut().skip(t) {
            *v = 45;
        }
        let s = model.decode(&mut g, enc.output, &changed, &mut Dropout::off()).unwrap();
        let l = model.generation_logits(&mut g, s, GenHead::Nct).unwrap();
        assert_eq!(rows(g.value(l), 0..t), rows(&l0, 0..t), "prefix {t}");
        assert_ne!(g.value(l).row(t), l0.row(t));
    }
}

fn gen_batch(conv: &Conversation, make: fn(&Conversation, usize, &ContextLimits) -> Result<GenExample>) -> Vec<GenExample> {
    let limits = ContextLimits::default();
    (1..=conv.len()).map(|u| make(conv, u, &limits).unwrap()).collect()
}

fn nud_batch(conv: &Conversation, cross: bool, seed: u64) -> (Vec<NudSample>, Vec<NudSample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limits = ContextLimits::default();
    (2..=conv.len()).map(|u| sample_nud(conv, u, &mut rng, cross, &limits).unwrap()).unzip()
}

type LossFn = Box<dyn Fn(&NctModel, &mut Graph) -> Result<Var>>;

fn all_losses() -> Vec<(&'static str, LossFn)> {
    let conv = sample_conv();
    let nct = gen_batch(&conv, GenExample::nct);
    let mrg = gen_batch(&conv, GenExample::mrg);
    let xrg = gen_batch(&conv, GenExample::xrg);
    let pairs: Vec<(Vec<u32>, Vec<u32>)> = vec![(vec![10, 11, 12], vec![30, 31]), (vec![13], vec![32, 33, 34])];
    let (np, nn) = nud_batch(&conv, false, 1);
    let (xp, xn) = nud_batch(&conv, true, 2);
    vec![
        ("nct", Box::new(move |m: &NctModel, g: &mut Graph| nct_loss(m, g, &nct, &mut Dropout::off()))),
        ("mrg", Box::new(move |m: &NctModel, g: &mut Graph| mrg_loss(m, g, &mrg, &mut Dropout::off()))),
        ("xrg", Box::new(move |m: &NctModel, g: &mut Graph| xrg_loss(m, g, &xrg, &mut Dropout::off()))),
        ("sent_nmt", Box::new(move |m: &NctModel, g: &mut Graph| sent_nmt_loss(m, g, &pairs, &mut Dropout::off()))),
        ("nud", Box::new(move |m: &NctModel, g: &mut Graph| nud_loss(m, g, &np, &nn, &mut Dropout::off()))),
        ("xnud", Box::new(move |m: &NctModel, g: &mut Graph| xnud_loss(m, g, &xp, &xn, &mut Dropout::off()))),
    ]
}

#[test]
fn all_losses_pass_gradient_check() {
    let (model, params) = model_and_params(8);
    for (name, f) in all_losses() {
        let cfg = GradCheckConfig {
            samples: 300,
            ..GradCheckConfig::default()
        };
        let report = grad_check(&params, |g| f(&model, g), &cfg).unwrap();
        assert!(report.passed, "{name}: {report:?}");
    }
}

#[test]
fn heads_are_isolated() {
    let (model, params) = model_and_params(9);
    let foreign: &[(&str, &[&str])] = &[
        ("nct", &["head.mrg", "head.xrg", "head.nud", "head.xnud"]),
        ("sent_nmt", &["head.mrg", "head.xrg", "head.nud", "head.xnud"]),
        ("mrg", &["head.nct", "head.xrg", "head.nud", "head.xnud"]),
        ("xrg", &["head.nct", "head.mrg", "head.nud", "head.xnud"]),
        ("nud", &["head.nct", "head.mrg", "head.xrg", "head.xnud", "dec."]),
        ("xnud", &["head.nct", "head.mrg", "head.xrg", "head.nud", "dec."]),
    ];
    for (name, f) in all_losses() {
        let mut g = Graph::new(&params);
        let loss = f(&model, &mut g).unwrap();
        let grad = g.backward(loss).unwrap();
        let prefixes = foreign.iter().find(|(n, _)| *n == name).unwrap().1;
        let mut own_nonzero = false;
        for (pname, _) in params.iter() {
            let s = grad.slice_for(&params, pname).unwrap();
            if prefixes.iter().any(|p| pname.starts_with(p)) {
                assert!(s.iter().all(|&v| v == 0.0), "{name} touches {pname}");
            } else if pname.starts_with("head.") && s.iter().any(|&v| v != 0.0) {
                own_nonzero = true;
            }
        }
        assert!(own_nonzero, "{name} leaves its own head untouched");
    }
}

#[test]
fn mrg_matches_nct_with_shared_head_and_input() {
    let (model, mut params) = model_and_params(10);
    let w = params.get("head.nct.w").unwrap().clone();
    let b = params.get("head.nct.b").unwrap().clone();
    params.insert("head.mrg.w", w);
    params.insert("head.mrg.b", b);
    let batch = gen_batch(&sample_conv(), GenExample::nct);
    let mut g = Graph::new(&params);
    let a = nct_loss(&model, &mut g, &batch, &mut Dropout::off()).unwrap();
    let c = mrg_loss(&model, &mut g, &batch, &mut Dropout::off()).unwrap();
    assert_eq!(g.scalar(a), g.scalar(c));
}

/// Smoothed cross entropy of every target token, recomputed from
/// independent per-prefix decoder runs.
fn summation_oracle(model: &NctModel, params: &ParamStore, ex: &GenExample, head: GenHead) -> f64 {
    let eps = model.config().label_smoothing;
    let mut g = Graph::new(params);
    let enc = model.encode(&mut g, &ex.window, &mut Dropout::off()).unwrap();
    let mut outputs = ex.target.clone();
    outputs.push(EOS);
    let mut total = 0.0;
    for (t, &y) in outputs.iter().enumerate() {
        let p = model.decode_step(&mut g, enc.output, &ex.target[..t], head).unwrap();
        for (k, pk) in p.iter().enumerate() {
            let q = eps / V as f64 + if k == y as usize { 1.0 - eps } else { 0.0 };
            total -= q * pk.ln();
        }
    }
    total
}

#[test]
fn generation_losses_match_summation_oracle() {
    let (model, params) = model_and_params(11);
    let conv = sample_conv();
    let limits = ContextLimits::default();
    type Make = fn(&Conversation, usize, &ContextLimits) -> Result<GenExample>;
    type Loss = fn(&NctModel, &mut Graph, &[GenExample], &mut Dropout) -> Result<Var>;
    let cases: [(Make, Loss, GenHead); 3] = [
        (GenExample::nct, nct_loss, GenHead::Nct),
        (GenExample::mrg, mrg_loss, GenHead::Mrg),
        (GenExample::xrg, xrg_loss, GenHead::Xrg),
    ];
    for (make, loss, head) in cases {
        let batch: Vec<GenExample> = (1..=4).map(|u| make(&conv, u, &limits).unwrap()).collect();
        let expected: f64 = batch.iter().map(|e| summation_oracle(&model, &params, e, head)).sum::<f64>() / 4.0;
        let mut g = Graph::new(&params);
        let l = loss(&model, &mut g, &batch, &mut Dropout::off()).unwrap();
        assert!((g.scalar(l) - expected).abs() < 1e-10, "{head:?}: {} vs {expected}", g.scalar(l));
    }

    let pairs = vec![(vec![10, 11], vec![30, 31, 32]), (vec![12, 13, 14], vec![33])];
    let expected: f64 = pairs
        .iter()
        .map(|(x, y)| summation_oracle(&model, &params, &GenExample::sentence(x, y), GenHead::Nct))
        .sum::<f64>()
        / 2.0;
    let mut g = Graph::new(&params);
    let l = sent_nmt_loss(&model, &mut g, &pairs, &mut Dropout::off()).unwrap();
    assert!((g.scalar(l) - expected).abs() < 1e-10);
}

#[test]
fn uniform_and_perfect_models_without_smoothing() {
    let cfg = NctConfig {
        label_smoothing: 0.0,
        ..NctConfig::tiny(V)
    };
    let model = NctModel::new(cfg).unwrap();
    let mut params = model.init_params(&mut ChaCha8Rng::seed_from_u64(12));
    set_zero(&mut params, "head.nct.w");
    set_zero(&mut params, "head.nct.b");
    let batch = vec![GenExample::sentence(&[10, 11], &[30, 31, 32])];
    let mut g = Graph::new(&params);
    let l = nct_loss(&model, &mut g, &batch, &mut Dropout::off()).unwrap();
    // Three target tokens plus the end marker.
    assert!((g.scalar(l) - 4.0 * (V as f64).ln()).abs() < 1e-12);

    // Only the end marker is predicted, and the bias makes it certain.
    params.get_mut("head.nct.b").unwrap().data_mut()[EOS as usize] = 1e3;
    let batch = vec![GenExample::sentence(&[10, 11], &[])];
    let mut g = Graph::new(&params);
    let l = nct_loss(&model, &mut g, &batch, &mut Dropout::off()).unwrap();
    assert_eq!(g.scalar(l), 0.0);
}

#[test]
fn sentence_loss_is_nct_on_context_free_windows() {
    let (model, params) = model_and_params(13);
    let pairs = vec![(vec![10, 11], vec![30, 31, 32])];
    let batch = vec![GenExample::sentence(&pairs[0].0, &pairs[0].1)];
    assert_eq!(batch[0].window.token_ids, vec![CLS, 10, 11]);
    let mut g = Graph::new(&params);
    let a = sent_nmt_loss(&model, &mut g, &pairs, &mut Dropout::off()).unwrap();
    let b = nct_loss(&model, &mut g, &batch, &mut Dropout::off()).unwrap();
    assert_eq!(g.scalar(a), g.scalar(b));
}

#[test]
fn empty_batches_are_errors() {
    let (model, params) = model_and_params(14);
    let mut g = Graph::new(&params);
    assert!(matches!(nct_loss(&model, &mut g, &[], &mut Dropout::off()), Err(Error::EmptyBatch)));
    let (p, n) = nud_batch(&sample_conv(), false, 0);
    assert!(nud_loss(&model, &mut g, &p, &n[1..], &mut Dropout::off()).is_err());
}

#[test]
fn zero_classifier_gives_two_log_two_per_pair() {
    let (model, mut params) = model_and_params(15);
    set_zero(&mut params, "head.nud.w");
    let (p, n) = nud_batch(&sample_conv(), false, 3);
    let mut g = Graph::new(&params);
    let l = nud_loss(&model, &mut g, &p, &n, &mut Dropout::off()).unwrap();
    assert!((g.scalar(l) - 2.0 * 2f64.ln()).abs() < 1e-14);
}

#[test]
fn swapping_labels_and_classifier_rows_is_symmetric() {
    let (model, mut params) = model_and_params(16);
    let (p, n) = nud_batch(&sample_conv(), false, 4);
    let mut g = Graph::new(&params);
    let l = nud_loss(&model, &mut g, &p, &n, &mut Dropout::off()).unwrap();
    let before = g.scalar(l);
    drop(g);

    let w = params.get_mut("head.nud.w").unwrap();
    let d2 = w.cols();
    let data = w.data_mut();
    let (r0, r1) = data.split_at_mut(d2);
    r0.swap_with_slice(r1);
    let relabel = |s: &[NudSample]| -> Vec<NudSample> {
        s.iter().map(|x| NudSample { label: 1 - x.label, ..x.clone() }).collect()
    };
    let (p2, n2) = (relabel(&n), relabel(&p));
    let mut g = Graph::new(&params);
    let l = nud_loss(&model, &mut g, &p2, &n2, &mut Dropout::off()).unwrap();
    assert!((g.scalar(l) - before).abs() < 1e-12);
}

#[test]
fn discrimination_matches_summation_oracle() {
    let (model, params) = model_and_params(17);
    let conv = sample_conv();
    for (cross, head) in [(false, ClsHead::Nud), (true, ClsHead::Xnud)] {
        let (p, n) = nud_batch(&conv, cross, 5);
        let w = params.get(head.param_name()).unwrap();
        let mut expected = 0.0;
        for s in p.iter().chain(&n) {
            let mut g = Graph::new(&params);
            let ctx = model.encode(&mut g, &s.context, &mut Dropout::off()).unwrap();
            let h_c = g.value(ctx.output).row(0).to_vec();
            let cand = model
                .encode(&mut g, &standalone(&s.candidate, Side::Target), &mut Dropout::off())
                .unwrap();
            let top = g.value(cand.output);
            let d = h_c.len();
            let mut feat: Vec<f64> = (0..d)
                .map(|j| (1..=s.candidate.len()).map(|i| top.row(i)[j]).sum::<f64>() / s.candidate.len() as f64)
                .collect();
            feat.extend(h_c);
            let z: Vec<f64> = (0..2).map(|r| w.row(r).iter().zip(&feat).map(|(a, b)| a * b).sum()).collect();
            expected -= log_softmax(&z)[s.label as usize];
        }
        expected /= p.len() as f64;
        let mut g = Graph::new(&params);
        let l = if cross {
            xnud_loss(&model, &mut g, &p, &n, &mut Dropout::off())
        } else {
            nud_loss(&model, &mut g, &p, &n, &mut Dropout::off())
        }
        .unwrap();
        assert!((g.scalar(l) - expected).abs() < 1e-10, "{head:?}");
    }
}

#[test]
fn teacher_forced_nll_decreases_monotonically() {
    let cfg = NctConfig {
        label_smoothing: 0.0,
        ..NctConfig::tiny(V)
    };
    let model = NctModel::new(cfg).unwrap();
    let mut params = model.init_params(&mut ChaCha8Rng::seed_from_u64(18));
    let batch = vec![GenExample::sentence(&[10, 11, 12], &[30, 31, 32])];
    let mut prev = f64::INFINITY;
    for step in 0..50 {
        let (loss, grad) = {
            let mut g = Graph::new(&params);
            let l = nct_loss(&model, &mut g, &batch, &mut Dropout::off()).unwrap();
            (g.scalar(l), g.backward(l).unwrap())
        };
        assert!(loss < prev, "step {step}: {loss} >= {prev}");
        prev = loss;
        let flat: Vec<f64> = params.flatten().iter().zip(grad.as_slice()).map(|(p, g)| p - 0.05 * g).collect();
        params.unflatten(&flat).unwrap();
    }
    assert!(prev < 4.0 * (V as f64).ln());
}

#[test]
fn dropout_is_deterministic_per_seed_and_off_by_default() {
    let (model, params) = model_and_params(19);
    let w = standalone(&[10, 11, 12], Side::Source);
    let run = |d: &mut Dropout| {
        let mut g = Graph::new(&params);
        let e = model.encode(&mut g, &w, d).unwrap();
        g.value(e.output).clone()
    };
    let a = run(&mut Dropout::new(0.3, ChaCha8Rng::seed_from_u64(1)));
    let b = run(&mut Dropout::new(0.3, ChaCha8Rng::seed_from_u64(1)));
    let c = run(&mut Dropout::off());
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn init_matches_check_params() {
    let model = NctModel::new(NctConfig::tiny(V)).unwrap();
    let params = model.init_params(&mut ChaCha8Rng::seed_from_u64(0));
    model.check_params(&params).unwrap();
    assert!(params.get("embed.turn").unwrap().data().iter().all(|&v| v == 0.0));
    assert_eq!(params.get("head.nud.w").unwrap().shape(), &[2, 32]);
    let other = NctModel::new(NctConfig::tiny(V + 1)).unwrap();
    assert!(other.check_params(&params).is_err());
}
