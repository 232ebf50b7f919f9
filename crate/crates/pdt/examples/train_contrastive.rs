//! Train the PDT block with contrastive supervision on a small synthetic
//! dataset and watch the validation loss fall.
//!
//! The backbone stays frozen throughout; only the ~1.3K PDT parameters
//! move. The trainer keeps the checkpoint from the epoch with the best
//! validation loss.

use pdt::backbone::Backbone;
use pdt::block::{PdtBlock, PdtConfig};
use pdt::data::{gen_dataset, SynthSpec};
use pdt::trainer::{train, TrainConfig};

fn main() -> pdt::Result<()> {
    let spec = SynthSpec {
        n_identities: 10,
        samples_per_identity: 3,
        ..SynthSpec::default()
    };
    let dir = std::env::temp_dir().join("pdt_example_train");
    let manifest = gen_dataset(&spec, &dir.join("data"))?;

    let backbone = Backbone::toy(5, 64)?;
    let block = PdtBlock::init(PdtConfig::default(), 7)?;
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::synthetic_experiment()
    };

    let checksum = backbone.checksum();
    let report = train(&block, &backbone, &manifest, &cfg, &dir.join("run"))?;

    for (epoch, (t, v)) in report
        .train_losses
        .iter()
        .zip(&report.val_losses)
        .enumerate()
    {
        println!("epoch {epoch}: train {t:.6}  val {v:.6}");
    }
    println!(
        "best epoch {} -> {}",
        report.selected_epoch,
        report.checkpoint_path.display()
    );
    assert_eq!(checksum, backbone.checksum(), "backbone must stay frozen");
    println!("backbone checksum unchanged: {:#018x}", checksum);
    Ok(())
}
