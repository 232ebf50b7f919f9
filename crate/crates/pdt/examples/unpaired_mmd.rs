//! Unpaired supervision: train the PDT block with the MMD loss instead of
//! identity-labeled pairs.
//!
//! MMD only matches the *distributions* of the two domains, so it needs
//! no cross-domain identity correspondence. The ip placement aligns raw
//! pixels, op aligns embeddings, and ip_op sums both.

use pdt::backbone::Backbone;
use pdt::block::{PdtBlock, PdtConfig};
use pdt::data::{gen_dataset, SynthSpec};
use pdt::trainer::{train, Supervision, TrainConfig};

fn main() -> pdt::Result<()> {
    let spec = SynthSpec {
        n_identities: 10,
        samples_per_identity: 3,
        ..SynthSpec::default()
    };
    let dir = std::env::temp_dir().join("pdt_example_mmd");
    let manifest = gen_dataset(&spec, &dir.join("data"))?;
    let backbone = Backbone::toy(5, 64)?;

    for supervision in [Supervision::MmdIp, Supervision::MmdOp, Supervision::MmdIpOp] {
        let block = PdtBlock::init(PdtConfig::default(), 7)?;
        let cfg = TrainConfig {
            epochs: 2,
            supervision,
            ..TrainConfig::synthetic_experiment()
        };
        let run_dir = dir.join(format!("run_{}", supervision.as_str()));
        let report = train(&block, &backbone, &manifest, &cfg, &run_dir)?;
        println!(
            "{:9}: val loss {:.6} -> {:.6}",
            supervision.as_str(),
            report.val_losses.first().unwrap(),
            report.val_losses.last().unwrap()
        );
    }
    Ok(())
}
