//! End-to-end training behavior: losses descend, the optimizer honors
//! lr = 0, reruns are bit-identical, and the frozen backbone never
//! accumulates gradients or changes.

use pdt::backbone::Backbone;
use pdt::block::{PdtBlock, PdtConfig};
use pdt::data::{gen_dataset, Manifest, SynthSpec};
use pdt::trainer::{train, TrainConfig};

fn small_spec() -> SynthSpec {
    SynthSpec {
        n_identities: 10,
        samples_per_identity: 2,
        ..SynthSpec::default()
    }
}

fn small_dataset(tag: &str) -> Manifest {
    let dir = std::env::temp_dir().join(format!("pdt_test_pipeline_{tag}"));
    gen_dataset(&small_spec(), &dir).unwrap()
}

fn quick_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 8,
        ..TrainConfig::default()
    }
}

#[test]
fn training_reduces_loss() {
    let manifest = small_dataset("descent");
    let backbone = Backbone::toy(0, 32).unwrap();
    let block = PdtBlock::init(PdtConfig::default(), 7).unwrap();
    let out = std::env::temp_dir().join("pdt_test_pipeline_descent_run");
    let report = train(&block, &backbone, &manifest, &quick_cfg(), &out).unwrap();

    assert_eq!(report.train_losses.len(), 3);
    assert_eq!(report.val_losses.len(), 3);
    assert!(
        report.train_losses.last().unwrap() < report.train_losses.first().unwrap(),
        "train loss did not descend: {:?}",
        report.train_losses
    );
    assert!(report.checkpoint_path.is_file());
    assert!(out.join("train_log.csv").is_file());
}

#[test]
fn zero_lr_leaves_parameters_bit_exact() {
    let manifest = small_dataset("zerolr");
    let backbone = Backbone::toy(0, 32).unwrap();
    let block = PdtBlock::init(PdtConfig::default(), 7).unwrap();
    let before: Vec<Vec<u64>> = block
        .params()
        .iter()
        .map(|(_, p)| p.to_vec().iter().map(|v| v.to_bits()).collect())
        .collect();

    let cfg = TrainConfig {
        lr: 0.0,
        epochs: 2,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let out = std::env::temp_dir().join("pdt_test_pipeline_zerolr_run");
    train(&block, &backbone, &manifest, &cfg, &out).unwrap();

    for ((name, p), bits) in block.params().iter().zip(&before) {
        let after: Vec<u64> = p.to_vec().iter().map(|v| v.to_bits()).collect();
        assert_eq!(&after, bits, "parameter '{name}' moved with lr = 0");
    }
}

#[test]
fn reruns_are_bit_identical() {
    let manifest = small_dataset("determinism");
    let backbone = Backbone::toy(0, 32).unwrap();

    let run = |tag: &str| -> (Vec<u64>, Vec<f64>, Vec<u8>) {
        let block = PdtBlock::init(PdtConfig::default(), 7).unwrap();
        let out = std::env::temp_dir().join(format!("pdt_test_pipeline_det_{tag}"));
        let report = train(&block, &backbone, &manifest, &quick_cfg(), &out).unwrap();
        let bits = block
            .params()
            .iter()
            .flat_map(|(_, p)| p.to_vec().into_iter().map(f64::to_bits))
            .collect();
        let ckpt = std::fs::read(&report.checkpoint_path).unwrap();
        (bits, report.train_losses, ckpt)
    };

    let (bits_a, losses_a, ckpt_a) = run("a");
    let (bits_b, losses_b, ckpt_b) = run("b");
    assert_eq!(bits_a, bits_b, "parameters diverged between identical runs");
    let raw_a: Vec<u64> = losses_a.iter().map(|v| v.to_bits()).collect();
    let raw_b: Vec<u64> = losses_b.iter().map(|v| v.to_bits()).collect();
    assert_eq!(raw_a, raw_b, "loss trajectories diverged");
    assert_eq!(ckpt_a, ckpt_b, "checkpoint files differ byte-for-byte");
}

#[test]
fn backbone_stays_frozen() {
    let manifest = small_dataset("frozen");
    let backbone = Backbone::toy(0, 32).unwrap();
    let checksum = backbone.checksum();
    let before: Vec<Vec<u64>> = backbone
        .params()
        .iter()
        .map(|(_, p)| p.to_vec().iter().map(|v| v.to_bits()).collect())
        .collect();

    let block = PdtBlock::init(PdtConfig::default(), 7).unwrap();
    let out = std::env::temp_dir().join("pdt_test_pipeline_frozen_run");
    train(&block, &backbone, &manifest, &quick_cfg(), &out).unwrap();

    assert_eq!(backbone.checksum(), checksum, "backbone checksum changed");
    for ((name, p), bits) in backbone.params().iter().zip(&before) {
        let after: Vec<u64> = p.to_vec().iter().map(|v| v.to_bits()).collect();
        assert_eq!(&after, bits, "backbone parameter '{name}' changed");
        assert!(
            p.grad().is_none(),
            "backbone parameter '{name}' accumulated a gradient"
        );
    }
}

#[test]
fn best_epoch_checkpoint_round_trips() {
    let manifest = small_dataset("roundtrip");
    let backbone = Backbone::toy(0, 32).unwrap();
    let block = PdtBlock::init(PdtConfig::default(), 7).unwrap();
    let out = std::env::temp_dir().join("pdt_test_pipeline_roundtrip_run");
    let report = train(&block, &backbone, &manifest, &quick_cfg(), &out).unwrap();

    // the report's selected epoch is the argmin of the val trajectory,
    // earliest on ties
    let argmin = report
        .val_losses
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    assert_eq!(report.selected_epoch, argmin);

    // loading the checkpoint reproduces the in-memory (restored) parameters
    let loaded = PdtBlock::load_auto(&report.checkpoint_path).unwrap();
    for ((name, p), (_, q)) in block.params().iter().zip(loaded.params()) {
        let a: Vec<u64> = p.to_vec().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = q.to_vec().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b, "checkpoint mismatch for '{name}'");
    }
}
