//! Finite-difference gradient verification.
//!
//! The checks here only ever run forward passes, so they stay independent
//! of the backward rules they validate.

use crate::tensor::{self, Tensor};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Worst relative error over one parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamReport {
    pub name: String,
    pub max_rel_err: f64,
    /// flat index of the worst element
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Central finite difference of `loss_fn` w.r.t. every element of `param`.
/// `loss_fn` must re-run the forward pass reading the current param values.
pub fn central_diff(param: &Tensor, h: f64, mut loss_fn: impl FnMut() -> f64) -> Vec<f64> {
    let base = param.to_vec();
    let mut grads = vec![0.0; base.len()];
    for i in 0..base.len() {
        let mut v = base.clone();
        v[i] = base[i] + h;
        param.set_data(v);
        let up = tensor::no_grad(&mut loss_fn);
        let mut v = base.clone();
        v[i] = base[i] - h;
        param.set_data(v);
        let down = tensor::no_grad(&mut loss_fn);
        grads[i] = (up - down) / (2.0 * h);
    }
    param.set_data(base);
    grads
}

/// rel err = |analytic - numeric| / max(1, |numeric|)
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Compare analytic gradients (one backward of `build_loss`) against central
/// differences for each named parameter. Parameter grads are cleared first.
pub fn check_params(
    params: &[(String, Tensor)],
    h: f64,
    mut build_loss: impl FnMut() -> Tensor,
) -> crate::Result<Vec<ParamReport>> {
    for (_, p) in params {
        p.zero_grad();
    }
    let loss = build_loss();
    tensor::backward(&loss)?;
    let mut reports = Vec::with_capacity(params.len());
    for (name, p) in params {
        let analytic = p
            .grad()
            .unwrap_or_else(|| vec![0.0; p.numel()]);
        let numeric = central_diff(p, h, || build_loss().item());
        let mut worst = ParamReport {
            name: name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
            let e = rel_err(a, n);
            if e >= worst.max_rel_err {
                worst.max_rel_err = e;
                worst.worst_index = i;
                worst.analytic = a;
                worst.numeric = n;
            }
        }
        reports.push(worst);
    }
    Ok(reports)
}

/// Convenience: worst error across all parameters.
pub fn max_rel_err(reports: &[ParamReport]) -> f64 {
    reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
}

/// Shift the bias entry behind each output channel of `preact` so the
/// channel's minimum preactivation becomes exactly `floor`.
fn lift_bias(block: &crate::block::PdtBlock, name: &str, preact: &Tensor, floor: f64) {
    let sh = preact.shape().to_vec();
    let (n, c, hw) = (sh[0], sh[1], sh[2] * sh[3]);
    let d = preact.to_vec();
    let b = block.param(name);
    let mut bv = b.to_vec();
    for ch in 0..c {
        let mut mn = f64::INFINITY;
        for img in 0..n {
            for i in 0..hw {
                mn = mn.min(d[(img * c + ch) * hw + i]);
            }
        }
        bv[ch] += floor - mn;
    }
    b.set_data(bv);
}

/// Move the block's parameter point away from every piecewise-linear kink
/// reachable from the constant test image `x_t`:
///
/// * every branch and channel-MLP preactivation is lifted to clear 0.5, so
///   no ReLU in the block sits near its kink;
/// * the spatial gate is saturated (logit ~ 50, which rounds to exactly
///   1.0 in f64), making the gate locally constant and its surroundings
///   smooth;
/// * the projection weights are scaled up so the frozen backbone's
///   preactivations dwarf the finite-difference window of every
///   parameter (the backbone is zero-bias, hence positively homogeneous).
fn condition_block(block: &crate::block::PdtBlock, x_t: &Tensor) -> crate::Result<()> {
    use crate::tensor::ReduceKind;
    tensor::no_grad(|| -> crate::Result<()> {
        let conv = |name: &str, input: &Tensor, pad: usize| {
            tensor::conv2d(
                input,
                block.param(&format!("{name}.weight")),
                block.param(&format!("{name}.bias")),
                1,
                pad,
            )
        };
        lift_bias(block, "b1.conv.bias", &conv("b1.conv", x_t, 0)?, 0.5);
        lift_bias(block, "b2.reduce.bias", &conv("b2.reduce", x_t, 0)?, 0.5);
        let r2 = tensor::relu(&conv("b2.reduce", x_t, 0)?);
        lift_bias(block, "b2.conv.bias", &conv("b2.conv", &r2, 1)?, 0.5);
        lift_bias(block, "b3.reduce.bias", &conv("b3.reduce", x_t, 0)?, 0.5);
        let r3 = tensor::relu(&conv("b3.reduce", x_t, 0)?);
        lift_bias(block, "b3.conv.bias", &conv("b3.conv", &r3, 2)?, 0.5);
        let pk = block.config.pool_kernel;
        let pooled = tensor::avg_pool2d(x_t, pk, 1, (pk - 1) / 2)?;
        lift_bias(block, "b4.conv.bias", &conv("b4.conv", &pooled, 0)?, 0.5);

        let w = block.param("cbam.spatial.weight");
        w.set_data(w.to_vec().iter().map(|v| v * 0.05).collect());
        block.param("cbam.spatial.bias").set_data(vec![50.0]);

        let f = tensor::concat_channels(&[
            tensor::relu(&conv("b1.conv", x_t, 0)?),
            tensor::relu(&conv("b2.conv", &r2, 1)?),
            tensor::relu(&conv("b3.conv", &r3, 2)?),
            tensor::relu(&conv("b4.conv", &pooled, 0)?),
        ])?;
        let fc1b = block.param("cbam.fc1.bias");
        let mut bv = fc1b.to_vec();
        for desc in [
            tensor::reduce(&f, ReduceKind::Mean, &[2, 3], false)?,
            tensor::reduce(&f, ReduceKind::Max, &[2, 3], false)?,
        ] {
            let pre = tensor::add(
                &tensor::matmul(&desc, block.param("cbam.fc1.weight"))?,
                fc1b,
            )?;
            let sh = pre.shape().to_vec();
            let pd = pre.to_vec();
            for j in 0..sh[1] {
                let mut mn = f64::INFINITY;
                for img in 0..sh[0] {
                    mn = mn.min(pd[img * sh[1] + j]);
                }
                if mn < 0.5 {
                    bv[j] += 0.5 - mn;
                }
            }
            fc1b.set_data(bv.clone());
        }

        let pw = block.param("proj.weight");
        pw.set_data(pw.to_vec().iter().map(|v| v * 10.0).collect());
        Ok(())
    })
}

/// Full-pipeline check: contrastive loss through the PDT block and the
/// frozen backbone at 112x112, finite-differenced over every PDT
/// parameter.
///
/// The composition is piecewise smooth, so like the ReLU-level checks the
/// test point is conditioned away from the kinks (see [`condition_block`]);
/// everywhere else central differences at `h` would measure the kink, not
/// the derivative. Constant test images keep the number of distinct
/// preactivation values small enough that the conditioning covers all of
/// them. The source embeddings depend on nothing trainable and are
/// computed once.
pub fn pipeline_gradcheck(
    pdt_config: crate::block::PdtConfig,
    backbone_seed: u64,
    embed_dim: usize,
    seed: u64,
    h: f64,
) -> crate::Result<Vec<ParamReport>> {
    use crate::backbone::{Backbone, INPUT_SIZE};
    use crate::block::PdtBlock;
    use crate::losses::{contrastive_loss, ContrastiveConfig};

    let backbone = Backbone::toy(backbone_seed, embed_dim)?;
    let block = PdtBlock::init(pdt_config, seed)?;
    let flat = |v: f64| {
        Tensor::from_vec(
            vec![1, 3, INPUT_SIZE, INPUT_SIZE],
            vec![v; 3 * INPUT_SIZE * INPUT_SIZE],
        )
        .expect("image shape")
    };
    let x_t = flat(0.5);
    condition_block(&block, &x_t)?;

    // one genuine and one impostor pair against the same transformed probe
    let e_s = {
        let a = tensor::no_grad(|| backbone.embed(&flat(0.7)))?;
        let b = tensor::no_grad(|| backbone.embed(&flat(0.9)))?;
        let mut d = a.to_vec();
        d.extend(b.to_vec());
        Tensor::from_vec(vec![2, a.shape()[1]], d)?
    };
    let ones = Tensor::from_vec(vec![2, 1], vec![1.0; 2])?;
    let y = [0.0, 1.0];
    let cfg = ContrastiveConfig::default();

    check_params(block.params(), h, || {
        let transformed = block.forward(&x_t).expect("pdt forward");
        let e_t = backbone.embed(&transformed).expect("backbone embed");
        let e_t = tensor::matmul(&ones, &e_t).expect("tile");
        contrastive_loss(&e_s, &e_t, &y, &cfg).expect("loss")
    })
}
