use std::sync::OnceLock;

use cfo_core::{DeviceProfile, OfdmConfig};
use cfo_nn::{standard_architecture_hash, Checkpoint, TrainConfig};
use cfo_sim2real::{
    emulate_device, finetune, pretrain, stored_frame_config, FineTuneConfig, Sim2RealError, SimDatasetSpec,
    FROZEN_GROUP,
};

fn tiny_spec(seed: u64) -> SimDatasetSpec {
    SimDatasetSpec { n_train: 600, n_val: 100, seed, ..Default::default() }
}

fn tiny_train() -> TrainConfig {
    TrainConfig { epochs: 2, batch_size: 64, seed: 4, ..Default::default() }
}

fn pretrained() -> &'static Checkpoint {
    static CKPT: OnceLock<Checkpoint> = OnceLock::new();
    CKPT.get_or_init(|| pretrain(&tiny_spec(3), &OfdmConfig::default(), &tiny_train(), |_| {}).unwrap().checkpoint)
}

#[test]
fn pretrain_is_deterministic_and_tagged() {
    let cfg = OfdmConfig::default();
    let spec = SimDatasetSpec { n_train: 200, n_val: 50, seed: 9, ..Default::default() };
    let tc = TrainConfig { epochs: 1, batch_size: 50, ..Default::default() };
    let a = pretrain(&spec, &cfg, &tc, |_| {}).unwrap();
    let b = pretrain(&spec, &cfg, &tc, |_| {}).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(a.train_digest, b.train_digest);
    assert_eq!(a.checkpoint.arch_hash, standard_architecture_hash());
    assert_eq!(stored_frame_config(&a.checkpoint).unwrap(), cfg);
    assert_eq!(a.checkpoint.stats.dim(), 320);
}

#[test]
fn finetune_freezes_the_trunk_and_lowers_the_demod_loss() {
    let cfg = OfdmConfig::default();
    let ckpt = pretrained();
    let captures = [emulate_device(&DeviceProfile::lowcost(), 300, 10.0, &cfg, 5, 0).unwrap()];
    let mut epochs = 0;
    let out = finetune(ckpt, &captures, &FineTuneConfig::default(), |_| epochs += 1).unwrap();
    assert_eq!(epochs, 20);
    assert!(out.loss_after < out.loss_before, "{} -> {}", out.loss_before, out.loss_after);
    let before = ckpt.model().unwrap();
    let after = out.checkpoint.model().unwrap();
    assert_eq!(before.group_bytes(FROZEN_GROUP), after.group_bytes(FROZEN_GROUP));
    assert_ne!(before.group_bytes(cfo_nn::ParamGroup::Fc), after.group_bytes(cfo_nn::ParamGroup::Fc));
    assert_eq!(out.checkpoint.stats, ckpt.stats);
    assert_eq!(out.checkpoint.attributes["finetune.devices"], "lowcost");
}

#[test]
fn thousand_frame_protocol_is_accepted() {
    let cfg = OfdmConfig::default();
    let captures = [emulate_device(&DeviceProfile::stable(), 1000, 15.0, &cfg, 6, 0).unwrap()];
    let ft = FineTuneConfig { epochs: 1, ..Default::default() };
    let out = finetune(pretrained(), &captures, &ft, |_| {}).unwrap();
    assert_eq!(out.checkpoint.attributes["finetune.frames"], "1000");
}

#[test]
fn mismatched_or_empty_captures_are_refused() {
    let other = OfdmConfig::new(64, 16, 10, 1.92e6).unwrap();
    let captures = [emulate_device(&DeviceProfile::stable(), 4, 20.0, &other, 1, 0).unwrap()];
    let err = finetune(pretrained(), &captures, &FineTuneConfig::default(), |_| {}).unwrap_err();
    assert!(matches!(err, Sim2RealError::ConfigMismatch(_)), "{err}");
    let err = finetune(pretrained(), &[], &FineTuneConfig::default(), |_| {}).unwrap_err();
    assert!(matches!(err, Sim2RealError::EmptyCaptures), "{err}");
}
