//! Reference values for the two supervision losses.
//!
//! The contrastive loss pulls genuine pairs (label 0) together and pushes
//! impostor pairs (label 1) past the margin; the four canonical cases
//! below evaluate to 0, 0.5, 0.5, 0. The RBF-kernel MMD between {0} and
//! {1} with sigma = 1 has the closed form 2 - 2*exp(-1/2).

use pdt::losses::{
    contrastive_loss, mmd_loss, BandwidthMode, ContrastiveConfig, MmdConfig, MmdPlacement,
};
use pdt::tensor::Tensor;

fn pair(d: f64, y: f64, cfg: &ContrastiveConfig) -> f64 {
    // rows at distance d along the first axis
    let e_s = Tensor::from_vec(vec![1, 2], vec![0.0, 0.0]).unwrap();
    let e_t = Tensor::from_vec(vec![1, 2], vec![d, 0.0]).unwrap();
    contrastive_loss(&e_s, &e_t, &[y], cfg).unwrap().item()
}

fn main() -> pdt::Result<()> {
    let cfg = ContrastiveConfig { margin: 2.0 };
    println!("contrastive (margin 2):");
    println!("  genuine,  D=0   -> {:.6}", pair(0.0, 0.0, &cfg));
    println!("  genuine,  D=1   -> {:.6}", pair(1.0, 0.0, &cfg));
    println!("  impostor, D=1   -> {:.6}", pair(1.0, 1.0, &cfg));
    println!("  impostor, D=2.5 -> {:.6}", pair(2.5, 1.0, &cfg));

    let mmd_cfg = MmdConfig {
        bandwidth_mode: BandwidthMode::Fixed,
        fixed_sigma: 1.0,
        placement: MmdPlacement::Op,
    };
    let a = Tensor::from_vec(vec![2, 1], vec![0.0, 0.0])?;
    let b = Tensor::from_vec(vec![2, 1], vec![1.0, 1.0])?;
    let value = mmd_loss(&a, &b, &mmd_cfg)?.item();
    let expected = 2.0 - 2.0 * (-0.5f64).exp();
    println!("mmd^2({{0}}, {{1}}), sigma=1 -> {value:.6} (closed form {expected:.6})");

    // identical multisets: the discrepancy vanishes
    let same = mmd_loss(&a, &a, &mmd_cfg)?.item();
    println!("mmd^2(a, a)              -> {same:.2e}");
    Ok(())
}
