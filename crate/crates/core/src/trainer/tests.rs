use rand::SeedableRng;

use super::*;
use crate::corpus::{Side, Utterance};
use crate::diffcore::Graph;
use crate::model::{mrg_loss, nct_loss, nud_loss, xnud_loss, xrg_loss, NctConfig};
use crate::scheduler::StrategyKind;

const V: usize = 30;

fn toy_corpus(n: usize, seed: u64) -> Vec<Conversation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut src = Vec::new();
            let mut tgt = Vec::new();
            for u in 1..=3 {
                let len = rng.gen_range(1..4);
                let toks: Vec<u32> = (0..len).map(|_| rng.gen_range(6..V as u32)).collect();
                let mk = |side| Utterance {
                    turn_index: u,
                    language: side,
                    tokens: toks.clone(),
                    raw_text: String::new(),
                };
                src.push(mk(Side::Source));
                tgt.push(mk(Side::Target));
            }
            Conversation {
                id: format!("c{i}"),
                source: src,
                target: tgt,
            }
        })
        .collect()
}

fn setup(seed: u64) -> (NctModel, TrainState) {
    let model = NctModel::new(NctConfig::tiny(V)).unwrap();
    let params = model.init_params(&mut ChaCha8Rng::seed_from_u64(seed));
    let state = TrainState::new(model.config().clone(), params, seed);
    (model, state)
}

fn stage(stage: Stage, steps: usize, strategy: StrategyKind) -> StageConfig {
    let mut c = StageConfig::new(stage);
    c.steps = steps;
    c.batch_tokens = 12;
    c.warmup_steps = 10;
    c.log_every = 1;
    c.schedule.strategy = strategy;
    c.sync_schedule();
    c
}

fn run(model: &NctModel, cfg: &StageConfig, data: &[Conversation], state: &mut TrainState) -> Vec<LogEvent> {
    let mut events = Vec::new();
    run_stage(model, cfg, data, state, RunOptions::default(), &mut |e| events.push(e.clone())).unwrap();
    events
}

#[test]
fn lr_schedule_warms_up_then_decays() {
    let s = LrSchedule {
        warmup_steps: 100,
        scale: 2.0,
    };
    assert!((s.lr(1) - 2.0 * 1e-3).abs() < 1e-15);
    assert!((s.lr(100) - 2.0 * 0.1).abs() < 1e-15);
    assert!((s.lr(400) - 2.0 * 0.05).abs() < 1e-15);
    assert!(s.lr(50) < s.lr(100) && s.lr(200) < s.lr(100));
    assert_eq!(LrSchedule::for_hidden(64, 1).scale, 0.125);
}

#[test]
fn first_adam_step_has_closed_form() {
    let (_, mut state) = setup(0);
    let before = state.params.flatten();
    let g: Vec<f64> = (0..before.len()).map(|i| ((i % 7) as f64 - 3.0) * 0.1).collect();
    let lr = 0.01;
    assert!(state.adam_update(&GradVector(g.clone()), lr).unwrap());
    let after = state.params.flatten();
    for i in 0..g.len() {
        // Bias-corrected moments are g and g², so the step is lr·g/(|g|+eps).
        let expected = before[i] - lr * g[i] / (g[i].abs() + ADAM_EPS);
        assert!((after[i] - expected).abs() < 1e-15, "{i}");
    }
}

#[test]
fn zero_update_leaves_params_and_non_finite_update_is_skipped() {
    let (_, mut state) = setup(1);
    let before = state.params.clone();
    let n = before.total_len();
    assert!(state.adam_update(&GradVector::zeros(n), 0.5).unwrap());
    assert_eq!(state.params, before);
    let mut bad = GradVector(vec![1.0; n]);
    bad[3] = f64::NAN;
    assert!(!state.adam_update(&bad, 0.5).unwrap());
    assert_eq!(state.params, before);
    assert_eq!(state.step, 2);
    assert!(state.adam_update(&GradVector::zeros(n + 1), 0.5).is_err());
}

#[test]
fn stage_config_parsing_and_validation() {
    let c = StageConfig::parse("stage=finetune\nsteps=40\nstrategy=sml_no_inverse\ntasks=nct,mrg\n").unwrap();
    assert_eq!(c.stage, Stage::Finetune);
    assert_eq!(c.schedule.total_steps, 39);
    assert_eq!(c.schedule.strategy, StrategyKind::SmlNoInverse);
    assert_eq!(c.schedule.prior_active_tasks, vec![Task::Mrg, Task::Nud]);
    c.validate().unwrap();

    let c = StageConfig::parse("stage=general_pretrain\ntasks=sent_nmt,mrg").unwrap();
    assert!(c.validate().is_err());
    let c = StageConfig::parse("stage=2\ntasks=mrg").unwrap();
    assert!(c.validate().is_err());
    assert!(StageConfig::parse("stage=2\nbogus=1").is_err());
    assert!(StageConfig::parse("steps=3").is_err());
    assert!(matches!(
        StageConfig::parse("stage=2\nstrategy=pcgrad"),
        Err(Error::UnknownStrategy(_))
    ));
}

#[test]
fn zero_steps_only_update_bookkeeping() {
    let (model, mut state) = setup(2);
    let before = state.clone();
    let data = toy_corpus(4, 0);
    let cfg = stage(Stage::IndomainPretrain, 0, StrategyKind::Sml);
    assert!(run(&model, &cfg, &data, &mut state).is_empty());
    assert_eq!(state.params, before.params);
    assert_eq!(state.rng, before.rng);
    assert_eq!(state.stage, Some(Stage::IndomainPretrain));
}

#[test]
fn general_pretraining_never_touches_auxiliary_heads() {
    let (model, mut state) = setup(3);
    let before = state.params.clone();
    let data = toy_corpus(6, 1);
    let events = run(&model, &stage(Stage::GeneralPretrain, 5, StrategyKind::Sml), &data, &mut state);
    assert!(events.iter().all(|e| e.task == Task::SentNmt));
    for name in ["head.mrg.w", "head.mrg.b", "head.xrg.w", "head.xrg.b", "head.nud.w", "head.xnud.w"] {
        assert_eq!(state.params.get(name), before.get(name), "{name}");
    }
    assert_ne!(state.params.get("head.nct.w"), before.get("head.nct.w"));
}

#[test]
fn alpha_decays_from_one_to_zero_over_a_stage() {
    let (model, mut state) = setup(4);
    let data = toy_corpus(6, 2);
    let events = run(&model, &stage(Stage::IndomainPretrain, 6, StrategyKind::Sml), &data, &mut state);
    let alphas: Vec<f64> = events.iter().filter(|e| e.task == Task::Nct).map(|e| e.alpha).collect();
    assert_eq!(alphas.len(), 6);
    assert_eq!(alphas[0], 1.0);
    assert_eq!(*alphas.last().unwrap(), 0.0);
    assert!(alphas.windows(2).all(|w| w[1] < w[0]));
    let tasks: std::collections::BTreeSet<Task> = events.iter().map(|e| e.task).collect();
    assert!(tasks.contains(&Task::Xnud));
}

#[test]
fn conventional_update_is_gradient_of_combined_loss() {
    let (model, state) = setup(5);
    let data = toy_corpus(8, 3);
    let mut cfg = stage(Stage::IndomainPretrain, 10, StrategyKind::Conventional);
    cfg.batch_tokens = 30;
    let limits = context_limits(&model, &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let batch = Batch::sample(&data, &all_turns(&data), &cfg, &limits, &mut rng).unwrap();
    let alpha = 0.37;
    let update = compute_update(&model, &cfg, &state.params, &batch, alpha, &mut rng).unwrap();
    assert_eq!(update.aux.len(), 4);

    let mut g = Graph::new(&state.params);
    let off = &mut Dropout::off();
    let main = nct_loss(&model, &mut g, &batch.nct, off).unwrap();
    let parts = [
        mrg_loss(&model, &mut g, &batch.mrg, off).unwrap(),
        xrg_loss(&model, &mut g, &batch.xrg, off).unwrap(),
        nud_loss(&model, &mut g, &batch.nud.0, &batch.nud.1, off).unwrap(),
        xnud_loss(&model, &mut g, &batch.xnud.0, &batch.xnud.1, off).unwrap(),
    ];
    let mut aux = parts[0];
    for &p in &parts[1..] {
        aux = g.add(aux, p).unwrap();
    }
    let aux = g.scale(aux, alpha).unwrap();
    let total = g.add(main, aux).unwrap();
    let direct = g.backward(total).unwrap();
    let worst = direct
        .as_slice()
        .iter()
        .zip(update.delta.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-10, "{worst}");
}

#[test]
fn checkpoint_round_trip_is_byte_exact() {
    let (model, mut state) = setup(6);
    let data = toy_corpus(5, 4);
    run(&model, &stage(Stage::IndomainPretrain, 3, StrategyKind::Sml), &data, &mut state);
    let mut a = Vec::new();
    state.write_to(&mut a).unwrap();
    let back = TrainState::read_from(&mut a.as_slice()).unwrap();
    assert_eq!(back, state);
    let mut b = Vec::new();
    back.write_to(&mut b).unwrap();
    assert_eq!(a, b);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.ckpt");
    save_checkpoint(&state, &p).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), a);
    assert_eq!(load_checkpoint(&p).unwrap(), state);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let (_, state) = setup(7);
    let mut good = Vec::new();
    state.write_to(&mut good).unwrap();

    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(matches!(TrainState::read_from(&mut bad.as_slice()), Err(Error::Checkpoint(_))));

    let mut v2 = good.clone();
    v2[9] = b'2';
    let err = TrainState::read_from(&mut v2.as_slice()).unwrap_err().to_string();
    assert!(err.contains("version"), "{err}");

    let cut = &good[..good.len() - 20];
    let err = TrainState::read_from(&mut &cut[..]).unwrap_err().to_string();
    assert!(err.contains("truncated"), "{err}");

    let mut extra = good.clone();
    extra.push(0);
    assert!(TrainState::read_from(&mut extra.as_slice()).is_err());
}

#[test]
fn resume_matches_continuous_training() {
    let data = toy_corpus(6, 5);
    let cfg = stage(Stage::IndomainPretrain, 8, StrategyKind::Random);

    let (model, mut continuous) = setup(8);
    let log_a = run(&model, &cfg, &data, &mut continuous);

    let (_, mut first) = setup(8);
    let mut log_b = Vec::new();
    let opts = RunOptions { stop_after: Some(4) };
    run_stage(&model, &cfg, &data, &mut first, opts, &mut |e| log_b.push(e.clone())).unwrap();
    let mut bytes = Vec::new();
    first.write_to(&mut bytes).unwrap();
    let mut resumed = TrainState::read_from(&mut bytes.as_slice()).unwrap();
    let rest = run(&model, &cfg, &data, &mut resumed);
    log_b.extend(rest);

    assert_eq!(resumed, continuous);
    assert_eq!(log_a, log_b);
}

#[test]
fn identical_seeds_give_identical_runs() {
    let data = toy_corpus(6, 6);
    let cfg = stage(Stage::Finetune, 4, StrategyKind::Sml);
    let (model, mut a) = setup(9);
    let (_, mut b) = setup(9);
    assert_eq!(run(&model, &cfg, &data, &mut a), run(&model, &cfg, &data, &mut b));
    let (mut x, mut y) = (Vec::new(), Vec::new());
    a.write_to(&mut x).unwrap();
    b.write_to(&mut y).unwrap();
    assert_eq!(x, y);
}

#[test]
fn bad_inputs_fail_before_any_update() {
    let (model, mut state) = setup(10);
    let before = state.clone();
    let cfg = stage(Stage::IndomainPretrain, 3, StrategyKind::Sml);
    let mut data = toy_corpus(3, 7);
    data[1].target[0].tokens[0] = V as u32 + 4;
    let r = run_stage(&model, &cfg, &data, &mut state, RunOptions::default(), &mut |_| {});
    assert!(matches!(r, Err(Error::VocabMismatch(_))));
    assert!(matches!(
        run_stage(&model, &cfg, &[], &mut state, RunOptions::default(), &mut |_| {}),
        Err(Error::EmptyCorpus)
    ));
    assert_eq!(state, before);

    let vocab = crate::corpus::Vocabulary::specials_only();
    assert!(load_corpus(std::path::Path::new("/nonexistent/corpus.jsonl"), &vocab).is_err());
}

#[test]
fn loss_falls_on_a_repeated_corpus() {
    let (model, mut state) = setup(11);
    let data = toy_corpus(3, 8);
    let mut cfg = stage(Stage::IndomainPretrain, 60, StrategyKind::Sml);
    cfg.lr_scale = Some(0.1);
    let limits = context_limits(&model, &cfg);
    let before = evaluate_loss(&model, &state.params, &data, Task::Nct, &limits, 4).unwrap();
    run(&model, &cfg, &data, &mut state);
    let after = evaluate_loss(&model, &state.params, &data, Task::Nct, &limits, 4).unwrap();
    assert!(after < 0.7 * before, "{before} -> {after}");
}
