//! Verify the analytic gradients against central finite differences.
//!
//! Two levels: the PDT block alone on a small image (every parameter, a
//! smooth quadratic readout), and the full pipeline loss through the
//! frozen backbone at 112x112. The pipeline check conditions its test
//! point away from the ReLU kinks, where a finite difference would
//! measure the kink rather than the derivative.

use pdt::block::{PdtBlock, PdtConfig};
use pdt::gradcheck::{check_params, max_rel_err, pipeline_gradcheck};
use pdt::tensor::{self, ReduceKind, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn main() -> pdt::Result<()> {
    // block-level: sum of squared outputs on an 8x8 image
    let block = PdtBlock::init(PdtConfig::default(), 1)?;
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let x = Tensor::from_vec(
        vec![1, 3, 8, 8],
        (0..3 * 64).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )?;
    let reports = check_params(block.params(), 1e-5, || {
        let y = block.forward(&x).unwrap();
        let sq = tensor::mul(&y, &y).unwrap();
        tensor::reduce(&sq, ReduceKind::Sum, &[0, 1, 2, 3], false).unwrap()
    })?;
    println!("block-level (8x8, h=1e-5): max rel err {:.3e}", max_rel_err(&reports));

    // pipeline-level: contrastive loss through the frozen backbone
    let reports = pipeline_gradcheck(PdtConfig::default(), 5, 64, 0, 1e-3)?;
    for r in reports.iter().take(3) {
        println!(
            "  {:20} rel err {:.3e} (analytic {:+.6e}, numeric {:+.6e})",
            r.name, r.max_rel_err, r.analytic, r.numeric
        );
    }
    println!(
        "pipeline (112x112, h=1e-3): max rel err {:.3e} over {} parameters",
        max_rel_err(&reports),
        reports.len()
    );
    Ok(())
}
