//! Generate the synthetic two-domain dataset and show what it contains.
//!
//! Every identity gets source-domain (RGB blob portrait) and target-domain
//! (inverted, blurred, single-channel) renderings, split 60/20/20 into
//! train / val / eval identities. Generation is a pure function of the
//! spec, so rerunning produces byte-identical files.

use pdt::data::{gen_dataset, Container, Split, SynthSpec};

fn main() -> pdt::Result<()> {
    let spec = SynthSpec {
        n_identities: 10,
        samples_per_identity: 3,
        ..SynthSpec::default()
    };
    let out = std::env::temp_dir().join("pdt_example_dataset");
    let manifest = gen_dataset(&spec, &out)?;

    println!("dataset in {}", out.display());
    println!("rows: {}", manifest.rows.len());
    for split in [Split::Train, Split::Val, Split::EvalGallery, Split::EvalProbe] {
        println!(
            "  {:12} {:2} identities, {:3} rows",
            split.as_str(),
            manifest.ids_in_split(split).len(),
            manifest.rows_in(split).count()
        );
    }

    // each row points at a tensor container holding one image
    let row = &manifest.rows[0];
    let container = Container::read(&manifest.resolve(row))?;
    let image = container.get("image").expect("image entry");
    let mean = image.data.iter().sum::<f64>() / image.data.len() as f64;
    println!(
        "first row: id {} {} {} shape {:?} mean {:.4}",
        row.id,
        row.domain.as_str(),
        row.split.as_str(),
        image.shape,
        mean
    );
    Ok(())
}
