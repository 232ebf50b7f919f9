//! How much labeled training data does the PDT block actually need?
//!
//! Train on shrinking identity subsets while evaluating on the fixed eval
//! split. The subset keeps ceil(fraction * n) train identities; eval rows
//! never change, so the numbers are comparable across rows.

use pdt::backbone::Backbone;
use pdt::block::{PdtBlock, PdtConfig};
use pdt::data::{gen_dataset, subset_train, Split, SynthSpec};
use pdt::eval::{evaluate_manifest, Direction};
use pdt::trainer::{train, TrainConfig};

fn main() -> pdt::Result<()> {
    let spec = SynthSpec {
        n_identities: 12,
        samples_per_identity: 3,
        ..SynthSpec::default()
    };
    let dir = std::env::temp_dir().join("pdt_example_sweep");
    let manifest = gen_dataset(&spec, &dir.join("data"))?;
    let backbone = Backbone::toy(5, 64)?;

    println!("fraction  ids  eer      rank1");
    for fraction in [0.5, 1.0] {
        let sub = if fraction < 1.0 {
            subset_train(&manifest, fraction, spec.seed)?
        } else {
            manifest.clone()
        };
        let block = PdtBlock::init(PdtConfig::default(), 7)?;
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::synthetic_experiment()
        };
        train(&block, &backbone, &sub, &cfg, &dir.join(format!("run_{fraction}")))?;
        let (report, _) =
            evaluate_manifest(&manifest, &backbone, Some(&block), Direction::SourceGallery)?;
        println!(
            "{fraction:<8}  {:<3}  {:.4}   {:.4}",
            sub.ids_in_split(Split::Train).len(),
            report.eer,
            report.rank1
        );
    }
    Ok(())
}
