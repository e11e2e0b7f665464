mod common;

use avns_core::crn::Tap;
use avns_core::eval::ablation_grid;
use avns_core::model::{init_av_from_audio, ModelConfig, ModelParams, Subset, TensorTable};
use avns_core::optim::Adam;
use avns_core::train::{Stage, StepLog, TrainConfig, Trainer};

fn base(stage: Stage, steps: u64) -> TrainConfig {
    TrainConfig { stage, fusion: common::fusion(Tap::B), batch_size: 2, max_steps: steps, seed: 21, ..TrainConfig::default() }
}

fn audio_table(steps: u64) -> (TensorTable, StepLog) {
    let ex = common::examples(3, 0.25, 5);
    let model = ModelParams::<f32>::initialized(ModelConfig::audio_only(common::tiny_crn()), 21).unwrap();
    let mut t = Trainer::new(base(Stage::AudioOnly, steps), model).unwrap();
    t.run(&ex, &mut |_, _| Ok(())).unwrap();
    let full = TrainConfig { batch_size: 3, ..t.cfg.clone() };
    let eval = Trainer::new(full, t.model.clone()).unwrap().evaluate_loss(&ex).unwrap();
    (t.model.export(), eval)
}

fn av_model(table: &TensorTable, aed: bool) -> ModelParams<f32> {
    let cfg = ModelConfig::audio_visual(common::tiny_crn(), common::tiny_visual(), common::fusion(Tap::B), aed);
    init_av_from_audio(table, cfg, 21).unwrap()
}

fn run(stage: Stage, model: ModelParams<f32>, cfg: TrainConfig) -> (Vec<StepLog>, TensorTable) {
    let ex = common::examples(3, 0.25, 5);
    let mut t = Trainer::new(TrainConfig { stage, ..cfg }, model).unwrap();
    let mut logs = Vec::new();
    t.run(&ex, &mut |l, _| {
        logs.push(l.clone());
        Ok(())
    })
    .unwrap();
    (logs, t.model.export())
}

fn subset(table: &TensorTable, s: Subset) -> Vec<(&String, &Vec<f32>)> {
    table.iter().filter(|(k, _)| Subset::of(k) == Some(s)).map(|(k, v)| (k, &v.data)).collect()
}

#[test]
fn first_av_step_sees_the_audio_model_loss() {
    let (table, audio_eval) = audio_table(4);
    let cfg = TrainConfig { batch_size: 3, checkpoint_every: 1, ..base(Stage::AudioVisual, 1) };
    let (logs, _) = run(Stage::AudioVisual, av_model(&table, false), cfg);
    assert_eq!(logs[0].loss, audio_eval.loss);
}

#[test]
fn frozen_visual_encoder_stays_bit_identical() {
    let (table, _) = audio_table(2);
    let model = av_model(&table, true);
    let before = model.clone().export();
    let cfg = TrainConfig { freeze_visual_steps: 6, ..base(Stage::AudioVisualMtl, 6) };
    let (_, after) = run(Stage::AudioVisualMtl, model, cfg);
    assert_eq!(subset(&before, Subset::Visual), subset(&after, Subset::Visual));
    assert_ne!(subset(&before, Subset::Crn), subset(&after, Subset::Crn));
    assert_ne!(subset(&before, Subset::Aed), subset(&after, Subset::Aed));
}

#[test]
fn mtl_without_aed_weight_follows_the_av_trajectory() {
    let (table, _) = audio_table(2);
    let mut cfg = TrainConfig { checkpoint_every: 1, ..base(Stage::AudioVisual, 12) };
    cfg.loss_weights.alpha2 = 0.0;
    let (av_logs, av) = run(Stage::AudioVisual, av_model(&table, false), cfg.clone());
    let (mtl_logs, mtl) = run(Stage::AudioVisualMtl, av_model(&table, true), cfg);
    assert_eq!(av_logs, mtl_logs);
    for s in [Subset::Crn, Subset::Visual, Subset::Fusion] {
        assert_eq!(subset(&av, s), subset(&mtl, s));
    }
}

#[test]
fn resuming_from_exported_state_is_exact() {
    let (table, _) = audio_table(2);
    let cfg = base(Stage::AudioVisual, 6);
    let (_, straight) = run(Stage::AudioVisual, av_model(&table, false), cfg.clone());

    let ex = common::examples(3, 0.25, 5);
    let mut t = Trainer::new(TrainConfig { max_steps: 3, ..cfg.clone() }, av_model(&table, false)).unwrap();
    t.run(&ex, &mut |_, _| Ok(())).unwrap();
    let params = t.model.export();
    let moments = t.optimizer.export(&params);
    let state = t.state();
    let mut model = ModelParams::<f32>::new(t.model.config().clone()).unwrap();
    model.import(&params, &Subset::ALL).unwrap();
    let opt = Adam::import(cfg.optimizer, &moments).unwrap();
    let mut resumed = Trainer::resume(cfg, model, opt, state).unwrap();
    resumed.run(&ex, &mut |_, _| Ok(())).unwrap();
    assert_eq!(resumed.model.export(), straight);
}

#[test]
fn ablation_cells_share_their_starting_point() {
    let (table, _) = audio_table(3);
    let ex = common::examples(3, 0.25, 5);
    let model_cfg = ModelConfig::audio_visual(common::tiny_crn(), common::tiny_visual(), common::fusion(Tap::B), false);
    let cells = [common::fusion(Tap::A), common::fusion(Tap::D)];
    let r = ablation_grid::<f32>(&base(Stage::AudioVisual, 2), &model_cfg, &table, &ex, &cells).unwrap();
    assert_eq!(r.cells.len(), 2);
    for c in &r.cells {
        assert!(c.error.is_none() && c.mean_si_sdr_improvement.is_finite());
        assert_eq!(c.step0_si_sdr_improvement, r.audio_only_improvement);
        assert_eq!(c.steps_trained, 2);
    }
}
