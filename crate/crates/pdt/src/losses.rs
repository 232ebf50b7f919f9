//! Training losses: the Siamese contrastive loss over embedding pairs and
//! a biased-V-statistic MMD^2 with an RBF kernel for unpaired supervision.

use crate::error::{Error, Result};
use crate::tensor::{self, ReduceKind, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveConfig {
    /// margin applied to impostor pairs
    pub margin: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig { margin: 2.0 }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) {
            return Err(Error::Config(format!(
                "contrastive margin must be nonnegative, got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

/// Keeps the distance gradient finite at zero without visibly changing
/// any distance of practical size.
const DIST_EPS: f64 = 1e-24;

/// Mean over the batch of
/// `(1 - y) * 0.5 * D^2  +  y * 0.5 * max(0, margin - D)^2`
/// where `D` is the per-row Euclidean distance between `e_s` and `e_t`
/// and `y = 0` marks a genuine (same-identity) pair.
pub fn contrastive_loss(
    e_s: &Tensor,
    e_t: &Tensor,
    y_p: &[f64],
    cfg: &ContrastiveConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    let (ss, ts) = (e_s.shape().to_vec(), e_t.shape().to_vec());
    if ss.len() != 2 || ss != ts {
        return Err(Error::Dimension(format!(
            "contrastive_loss expects matching [N,D] tensors, got {ss:?} and {ts:?}"
        )));
    }
    let n = ss[0];
    if y_p.len() != n {
        return Err(Error::Validation(format!(
            "label vector has {} entries for batch of {n}",
            y_p.len()
        )));
    }
    if n == 0 {
        return Err(Error::Validation("contrastive_loss on empty batch".into()));
    }
    for (i, &y) in y_p.iter().enumerate() {
        if y != 0.0 && y != 1.0 {
            return Err(Error::Validation(format!(
                "pair label {i} is {y}, must be 0 or 1"
            )));
        }
    }

    let diff = tensor::sub(e_s, e_t)?;
    let d2 = tensor::reduce(&tensor::mul(&diff, &diff)?, ReduceKind::Sum, &[1], false)?;
    let d = tensor::sqrt_eps(&d2, DIST_EPS); // [N]
    let genuine = tensor::scale(&d2, 0.5);
    let hinge = tensor::relu(&tensor::add_scalar(&tensor::scale(&d, -1.0), cfg.margin));
    let impostor = tensor::scale(&tensor::mul(&hinge, &hinge)?, 0.5);

    let y = Tensor::from_vec(vec![n], y_p.to_vec())?;
    let one_minus_y = Tensor::from_vec(vec![n], y_p.iter().map(|v| 1.0 - v).collect())?;
    let per_pair = tensor::add(
        &tensor::mul(&genuine, &one_minus_y)?,
        &tensor::mul(&impostor, &y)?,
    )?;
    tensor::reduce(&per_pair, ReduceKind::Mean, &[0], false)
}

/// Per-pair contrastive terms as plain numbers, for reporting.
pub fn contrastive_per_pair(d: f64, y: f64, margin: f64) -> f64 {
    (1.0 - y) * 0.5 * d * d + y * 0.5 * (margin - d).max(0.0).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandwidthMode {
    /// sigma = median pairwise distance of the pooled batch
    MedianHeuristic,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmdPlacement {
    /// input pixels only
    Ip,
    /// output embeddings only
    Op,
    /// unweighted sum of both
    IpOp,
}

impl MmdPlacement {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ip" => Ok(MmdPlacement::Ip),
            "op" => Ok(MmdPlacement::Op),
            "ip_op" => Ok(MmdPlacement::IpOp),
            _ => Err(Error::Config(format!(
                "unknown mmd placement '{s}' (expected ip, op, or ip_op)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MmdPlacement::Ip => "ip",
            MmdPlacement::Op => "op",
            MmdPlacement::IpOp => "ip_op",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdConfig {
    pub bandwidth_mode: BandwidthMode,
    /// used iff bandwidth_mode == Fixed
    pub fixed_sigma: f64,
    pub placement: MmdPlacement,
}

impl Default for MmdConfig {
    fn default() -> Self {
        MmdConfig {
            bandwidth_mode: BandwidthMode::MedianHeuristic,
            fixed_sigma: 1.0,
            placement: MmdPlacement::IpOp,
        }
    }
}

impl MmdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bandwidth_mode == BandwidthMode::Fixed && !(self.fixed_sigma > 0.0) {
            return Err(Error::Config(format!(
                "mmd fixed_sigma must be positive, got {}",
                self.fixed_sigma
            )));
        }
        Ok(())
    }
}

/// Median pairwise Euclidean distance over the pooled rows of `a` and `b`.
/// The bandwidth is treated as a constant (no gradient flows through it).
fn median_pairwise_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (na, nb) = (a.shape()[0], b.shape()[0]);
    let d = a.shape()[1];
    let ad = a.data();
    let bd = b.data();
    let row = |i: usize| -> &[f64] {
        if i < na {
            &ad[i * d..(i + 1) * d]
        } else {
            let j = i - na;
            &bd[j * d..(j + 1) * d]
        }
    };
    let n = na + nb;
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let (x, y) = (row(i), row(j));
            let s: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
            dists.push(s.sqrt());
        }
    }
    dists.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if median <= 0.0 {
        return Err(Error::NumericDegenerate(
            "median pairwise distance is zero; RBF bandwidth undefined".into(),
        ));
    }
    Ok(median)
}

/// Mean RBF kernel value between every row of `a` and every row of `b`,
/// using `||x - y||^2 = ||x||^2 + ||y||^2 - 2 x.y`.
fn mean_kernel(a: &Tensor, b: &Tensor, inv_two_sigma2: f64) -> Result<Tensor> {
    let (na, nb) = (a.shape()[0], b.shape()[0]);
    let g = tensor::matmul(a, &tensor::transpose2d(b)?)?; // [Na,Nb]
    let a2 = tensor::reduce(&tensor::mul(a, a)?, ReduceKind::Sum, &[1], true)?; // [Na,1]
    let b2 = tensor::reshape(
        &tensor::reduce(&tensor::mul(b, b)?, ReduceKind::Sum, &[1], false)?,
        vec![1, nb],
    )?;
    let d2 = tensor::sub(&tensor::add(&a2, &b2)?, &tensor::scale(&g, 2.0))?;
    let k = tensor::exp(&tensor::scale(&d2, -inv_two_sigma2));
    debug_assert_eq!(k.shape(), [na, nb]);
    tensor::reduce(&k, ReduceKind::Mean, &[0, 1], false)
}

/// Biased V-statistic squared MMD with an RBF kernel:
/// `mean k(a,a) + mean k(b,b) - 2 mean k(a,b)`.
pub fn mmd_loss(a: &Tensor, b: &Tensor, cfg: &MmdConfig) -> Result<Tensor> {
    cfg.validate()?;
    let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
        return Err(Error::Dimension(format!(
            "mmd_loss expects [Na,D] and [Nb,D], got {sa:?} and {sb:?}"
        )));
    }
    if sa[0] < 2 || sb[0] < 2 {
        return Err(Error::Validation(format!(
            "mmd_loss needs at least 2 rows per side, got {} and {}",
            sa[0], sb[0]
        )));
    }
    // the estimator is symmetric; canonicalize the argument order so
    // mmd(a, b) and mmd(b, a) run the identical sequence of additions
    let swap = {
        let (da, db) = (a.data(), b.data());
        match sa[0].cmp(&sb[0]) {
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Equal => da
                .iter()
                .map(|v| v.to_bits())
                .gt(db.iter().map(|v| v.to_bits())),
        }
    };
    let (a, b) = if swap { (b, a) } else { (a, b) };

    let sigma = match cfg.bandwidth_mode {
        BandwidthMode::Fixed => cfg.fixed_sigma,
        BandwidthMode::MedianHeuristic => median_pairwise_distance(a, b)?,
    };
    let inv = 1.0 / (2.0 * sigma * sigma);
    let kaa = mean_kernel(a, a, inv)?;
    let kbb = mean_kernel(b, b, inv)?;
    let kab = mean_kernel(a, b, inv)?;
    tensor::sub(&tensor::add(&kaa, &kbb)?, &tensor::scale(&kab, 2.0))
}

/// Flatten [N,C,H,W] (or any rank >= 2) to [N, rest].
fn flatten_rows(x: &Tensor) -> Result<Tensor> {
    let sh = x.shape().to_vec();
    if sh.len() < 2 {
        return Err(Error::Dimension(format!(
            "cannot flatten rank-{} tensor to rows",
            sh.len()
        )));
    }
    let rest: usize = sh[1..].iter().product();
    tensor::reshape(x, vec![sh[0], rest])
}

/// Unpaired MMD supervision at the configured placement: `ip` compares
/// source pixels against transformed-target pixels, `op` compares the two
/// embedding batches, `ip_op` is their unweighted sum.
pub fn composite_unpaired_loss(
    x_s: &Tensor,
    x_t_transformed: &Tensor,
    e_s: &Tensor,
    e_t: &Tensor,
    cfg: &MmdConfig,
) -> Result<Tensor> {
    match cfg.placement {
        MmdPlacement::Ip => mmd_loss(&flatten_rows(x_s)?, &flatten_rows(x_t_transformed)?, cfg),
        MmdPlacement::Op => mmd_loss(e_s, e_t, cfg),
        MmdPlacement::IpOp => tensor::add(
            &mmd_loss(&flatten_rows(x_s)?, &flatten_rows(x_t_transformed)?, cfg)?,
            &mmd_loss(e_s, e_t, cfg)?,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn t2(rows: &[&[f64]]) -> Tensor {
        let n = rows.len();
        let d = rows[0].len();
        Tensor::from_vec(vec![n, d], rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    #[test]
    fn contrastive_canonical_values() {
        let cfg = ContrastiveConfig::default();
        // genuine identical pair -> 0
        let e = t2(&[&[0.3, 0.4]]);
        let l = contrastive_loss(&e, &e, &[0.0], &cfg).unwrap();
        assert!(l.item() < 1e-10, "{}", l.item());

        // D = 1 genuine -> 0.5
        let a = t2(&[&[0.0, 0.0]]);
        let b = t2(&[&[1.0, 0.0]]);
        let l = contrastive_loss(&a, &b, &[0.0], &cfg).unwrap().item();
        assert!((l - 0.5).abs() < 1e-12, "{l}");

        // D = 1 impostor, margin 2 -> 0.5 * (2-1)^2 = 0.5
        let l = contrastive_loss(&a, &b, &[1.0], &cfg).unwrap().item();
        assert!((l - 0.5).abs() < 1e-12, "{l}");

        // D = 2 >= margin impostor -> 0
        let b = t2(&[&[2.0, 0.0]]);
        let l = contrastive_loss(&a, &b, &[1.0], &cfg).unwrap().item();
        assert!(l.abs() < 1e-12, "{l}");

        // mean over a mixed batch
        let a = t2(&[&[0.0, 0.0], &[0.0, 0.0]]);
        let b = t2(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let l = contrastive_loss(&a, &b, &[0.0, 1.0], &cfg).unwrap().item();
        assert!((l - 0.5).abs() < 1e-12, "{l}");
    }

    #[test]
    fn contrastive_rejects_bad_labels() {
        let e = t2(&[&[0.0, 1.0]]);
        let err = contrastive_loss(&e, &e, &[0.5], &ContrastiveConfig::default());
        assert!(matches!(err, Err(Error::Validation(_))));
        let err = contrastive_loss(&e, &e, &[0.0, 1.0], &ContrastiveConfig::default());
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn contrastive_nonnegative_random() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let cfg = ContrastiveConfig::default();
        for _ in 0..50 {
            let n = rng.gen_range(1..6);
            let d = rng.gen_range(1..5);
            let mk = |rng: &mut ChaCha12Rng| {
                Tensor::from_vec(
                    vec![n, d],
                    (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                )
                .unwrap()
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let y: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.5))).collect();
            let l = contrastive_loss(&a, &b, &y, &cfg).unwrap().item();
            assert!(l >= 0.0 && l.is_finite());
        }
    }

    #[test]
    fn contrastive_gradcheck_away_from_kinks() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let n = 4;
        let d = 3;
        let mk = |rng: &mut ChaCha12Rng, rg: bool| {
            let t = Tensor::from_vec(
                vec![n, d],
                (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            t.set_requires_grad(rg);
            t
        };
        let a = mk(&mut rng, true);
        let b = mk(&mut rng, true);
        let y = [0.0, 1.0, 0.0, 1.0];
        let cfg = ContrastiveConfig::default();
        let params = [("e_s".to_string(), a.clone()), ("e_t".to_string(), b.clone())];
        let reports = gradcheck::check_params(&params, 1e-5, || {
            contrastive_loss(&a, &b, &y, &cfg).unwrap()
        })
        .unwrap();
        let worst = gradcheck::max_rel_err(&reports);
        assert!(worst < 1e-4, "max rel err {worst}");
    }

    #[test]
    fn mmd_identical_multisets_zero() {
        let a = t2(&[&[0.1, 0.2], &[0.5, -0.3], &[1.0, 1.0]]);
        let cfg = MmdConfig {
            bandwidth_mode: BandwidthMode::Fixed,
            fixed_sigma: 0.7,
            ..MmdConfig::default()
        };
        let l = mmd_loss(&a, &a, &cfg).unwrap().item();
        assert!(l.abs() < 1e-12, "{l}");
    }

    #[test]
    fn mmd_closed_form_two_points() {
        // a = {0, 0}, b = {1, 1} in 1-D, sigma = 1:
        // each side identical points; kaa = kbb = 1, kab = e^{-1/2}
        let a = t2(&[&[0.0], &[0.0]]);
        let b = t2(&[&[1.0], &[1.0]]);
        let cfg = MmdConfig {
            bandwidth_mode: BandwidthMode::Fixed,
            fixed_sigma: 1.0,
            ..MmdConfig::default()
        };
        let l = mmd_loss(&a, &b, &cfg).unwrap().item();
        let expect = 1.0 + 1.0 - 2.0 * (-0.5f64).exp();
        assert!((l - expect).abs() < 1e-9, "{l} vs {expect}");
        assert!((expect - 0.786939).abs() < 1e-6);
    }

    #[test]
    fn mmd_symmetric_bit_exact() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..20 {
            let na = rng.gen_range(2..6);
            let nb = rng.gen_range(2..6);
            let d = rng.gen_range(1..4);
            let mk = |rng: &mut ChaCha12Rng, n: usize| {
                Tensor::from_vec(
                    vec![n, d],
                    (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
                .unwrap()
            };
            let a = mk(&mut rng, na);
            let b = mk(&mut rng, nb);
            for cfg in [
                MmdConfig::default(),
                MmdConfig {
                    bandwidth_mode: BandwidthMode::Fixed,
                    fixed_sigma: 0.9,
                    ..MmdConfig::default()
                },
            ] {
                let ab = mmd_loss(&a, &b, &cfg).unwrap().item();
                let ba = mmd_loss(&b, &a, &cfg).unwrap().item();
                assert_eq!(ab.to_bits(), ba.to_bits());
                assert!(ab >= -1e-12);
            }
        }
    }

    #[test]
    fn mmd_translation_invariant_fixed_sigma() {
        let a = t2(&[&[0.3, -0.2], &[0.9, 0.1], &[0.0, 0.4]]);
        let b = t2(&[&[1.1, 0.5], &[-0.4, 0.2]]);
        let cfg = MmdConfig {
            bandwidth_mode: BandwidthMode::Fixed,
            fixed_sigma: 1.3,
            ..MmdConfig::default()
        };
        let shift = |t: &Tensor| {
            let sh = t.shape().to_vec();
            let data = t
                .to_vec()
                .chunks(2)
                .flat_map(|r| [r[0] + 5.0, r[1] - 3.0])
                .collect();
            Tensor::from_vec(sh, data).unwrap()
        };
        let base = mmd_loss(&a, &b, &cfg).unwrap().item();
        let moved = mmd_loss(&shift(&a), &shift(&b), &cfg).unwrap().item();
        assert!((base - moved).abs() < 1e-12, "{base} vs {moved}");
    }

    #[test]
    fn mmd_degenerate_and_small_batches() {
        let a = t2(&[&[1.0], &[1.0]]);
        let err = mmd_loss(&a, &a, &MmdConfig::default());
        assert!(matches!(err, Err(Error::NumericDegenerate(_))));

        let one = t2(&[&[0.0]]);
        let err = mmd_loss(&one, &a, &MmdConfig::default());
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn mmd_gradcheck() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mk = |rng: &mut ChaCha12Rng, n: usize, d: usize| {
            let t = Tensor::from_vec(
                vec![n, d],
                (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            t.set_requires_grad(true);
            t
        };
        let a = mk(&mut rng, 3, 2);
        let b = mk(&mut rng, 4, 2);
        let cfg = MmdConfig {
            bandwidth_mode: BandwidthMode::Fixed,
            fixed_sigma: 1.1,
            ..MmdConfig::default()
        };
        let params = [("a".to_string(), a.clone()), ("b".to_string(), b.clone())];
        let reports = gradcheck::check_params(&params, 1e-5, || {
            mmd_loss(&a, &b, &cfg).unwrap()
        })
        .unwrap();
        let worst = gradcheck::max_rel_err(&reports);
        assert!(worst < 1e-4, "max rel err {worst}");
    }

    #[test]
    fn composite_placements() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let img = |rng: &mut ChaCha12Rng| {
            Tensor::from_vec(
                vec![3, 3, 2, 2],
                (0..36).map(|_| rng.gen_range(0.0..1.0)).collect(),
            )
            .unwrap()
        };
        let emb = |rng: &mut ChaCha12Rng| {
            Tensor::from_vec(vec![3, 4], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap()
        };
        let (xs, xt) = (img(&mut rng), img(&mut rng));
        let (es, et) = (emb(&mut rng), emb(&mut rng));
        let et_perturbed = emb(&mut rng);
        let fixed = |p| MmdConfig {
            bandwidth_mode: BandwidthMode::Fixed,
            fixed_sigma: 1.0,
            placement: p,
        };

        let ip = composite_unpaired_loss(&xs, &xt, &es, &et, &fixed(MmdPlacement::Ip))
            .unwrap()
            .item();
        let ip2 = composite_unpaired_loss(&xs, &xt, &es, &et_perturbed, &fixed(MmdPlacement::Ip))
            .unwrap()
            .item();
        assert_eq!(ip.to_bits(), ip2.to_bits(), "ip must ignore embeddings");

        let op = composite_unpaired_loss(&xs, &xt, &es, &et, &fixed(MmdPlacement::Op))
            .unwrap()
            .item();
        let op2 = composite_unpaired_loss(&xt, &xs, &es, &et, &fixed(MmdPlacement::Op))
            .unwrap()
            .item();
        assert_eq!(op.to_bits(), op2.to_bits(), "op must ignore pixels");

        let both = composite_unpaired_loss(&xs, &xt, &es, &et, &fixed(MmdPlacement::IpOp))
            .unwrap()
            .item();
        assert_eq!(both.to_bits(), (ip + op).to_bits(), "ip_op is the exact sum");
    }
}
