//! Cross-domain verification metrics, with and without the PDT block.
//!
//! The gallery enrolls source-domain images and the probes come from the
//! target domain. Without any domain adaptation the toy backbone barely
//! separates genuine from impostor pairs; prepending even a briefly
//! trained PDT block moves the numbers.

use pdt::backbone::Backbone;
use pdt::block::{PdtBlock, PdtConfig};
use pdt::data::{gen_dataset, SynthSpec};
use pdt::eval::{evaluate_manifest, Direction};
use pdt::metrics::format_report;
use pdt::trainer::{train, TrainConfig};

fn main() -> pdt::Result<()> {
    let spec = SynthSpec {
        n_identities: 10,
        samples_per_identity: 3,
        ..SynthSpec::default()
    };
    let dir = std::env::temp_dir().join("pdt_example_eval");
    let manifest = gen_dataset(&spec, &dir.join("data"))?;
    let backbone = Backbone::toy(5, 64)?;

    let (baseline, _) =
        evaluate_manifest(&manifest, &backbone, None, Direction::SourceGallery)?;
    println!("--- baseline (raw target probes) ---");
    print!("{}", format_report(&baseline));

    let block = PdtBlock::init(PdtConfig::default(), 7)?;
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::synthetic_experiment()
    };
    train(&block, &backbone, &manifest, &cfg, &dir.join("run"))?;

    let (adapted, _) =
        evaluate_manifest(&manifest, &backbone, Some(&block), Direction::SourceGallery)?;
    println!("--- with PDT ({} params, 3 epochs) ---", block.param_count());
    print!("{}", format_report(&adapted));
    Ok(())
}
