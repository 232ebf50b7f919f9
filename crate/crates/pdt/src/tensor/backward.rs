//! Backward rules, dispatched per recorded op during the reverse sweep.

use super::kernels::*;
use super::ops::{broadcast_strides, broadcast_zip, out_dim};
use super::{Op, Tensor};
use crate::error::Result;

fn kept_shape(ishape: &[usize], axes: &[usize]) -> Vec<usize> {
    let mut s = ishape.to_vec();
    for &ax in axes {
        s[ax] = 1;
    }
    s
}

/// Accumulate the grad contribution of `t`'s op into each parent that
/// requires grad. `gout` is d(loss)/d(t), already detached from `t`.
pub(super) fn dispatch(t: &Tensor, gout: &[f64]) -> Result<()> {
    let node = t.inner.node.borrow();
    let node = node.as_ref().expect("dispatch on leaf");
    let parents = &node.parents;
    match &node.op {
        Op::Conv2d { stride, padding } => {
            let (input, weight, bias) = (&parents[0], &parents[1], &parents[2]);
            let ish = input.shape().to_vec();
            let wsh = weight.shape().to_vec();
            let (n, cin, h, w) = (ish[0], ish[1], ish[2], ish[3]);
            let (cout, kh, kw) = (wsh[0], wsh[2], wsh[3]);
            let oh = out_dim(h, kh, *stride, *padding, "H")?;
            let ow = out_dim(w, kw, *stride, *padding, "W")?;
            let (ohw, ckk, hw) = (oh * ow, cin * kh * kw, h * w);
            let one_by_one = kh == 1 && kw == 1 && *stride == 1 && *padding == 0;

            let need_in = input.requires_grad();
            let need_w = weight.requires_grad();
            let need_b = bias.requires_grad();
            let mut din = if need_in { vec![0.0; n * cin * hw] } else { Vec::new() };
            let mut dw = if need_w { vec![0.0; cout * ckk] } else { Vec::new() };
            let mut db = if need_b { vec![0.0; cout] } else { Vec::new() };
            {
                let idata = input.data();
                let wdata = weight.data();
                let mut col = if one_by_one || !(need_w || need_in) {
                    Vec::new()
                } else {
                    vec![0.0; ckk * ohw]
                };
                let mut dcol = if one_by_one || !need_in { Vec::new() } else { vec![0.0; ckk * ohw] };
                for img in 0..n {
                    let g = &gout[img * cout * ohw..(img + 1) * cout * ohw];
                    if need_b {
                        for c in 0..cout {
                            db[c] += g[c * ohw..(c + 1) * ohw].iter().sum::<f64>();
                        }
                    }
                    if one_by_one {
                        let src = &idata[img * cin * hw..(img + 1) * cin * hw];
                        if need_w {
                            matmul_nt_acc(g, src, cout, ohw, ckk, &mut dw);
                        }
                        if need_in {
                            let d = &mut din[img * cin * hw..(img + 1) * cin * hw];
                            matmul_tn_acc(&wdata, g, ckk, cout, ohw, d);
                        }
                    } else {
                        if need_w || need_in {
                            let src = &idata[img * cin * hw..(img + 1) * cin * hw];
                            if need_w || need_in {
                                im2col(src, cin, h, w, kh, kw, *stride, *padding, oh, ow, &mut col);
                            }
                            if need_w {
                                matmul_nt_acc(g, &col, cout, ohw, ckk, &mut dw);
                            }
                            if need_in {
                                dcol.fill(0.0);
                                matmul_tn_acc(&wdata, g, ckk, cout, ohw, &mut dcol);
                                let d = &mut din[img * cin * hw..(img + 1) * cin * hw];
                                col2im_acc(&dcol, cin, h, w, kh, kw, *stride, *padding, oh, ow, d);
                            }
                        }
                    }
                }
            }
            if need_in {
                input.accumulate_grad(&din);
            }
            if need_w {
                weight.accumulate_grad(&dw);
            }
            if need_b {
                bias.accumulate_grad(&db);
            }
        }
        Op::AvgPool2d { k, stride, padding } => {
            let input = &parents[0];
            if input.requires_grad() {
                let ish = input.shape().to_vec();
                let (n, c, h, w) = (ish[0], ish[1], ish[2], ish[3]);
                let oh = out_dim(h, *k, *stride, *padding, "H")?;
                let ow = out_dim(w, *k, *stride, *padding, "W")?;
                let inv = 1.0 / (*k * *k) as f64;
                let mut din = vec![0.0; n * c * h * w];
                for plane in 0..n * c {
                    let g = &gout[plane * oh * ow..(plane + 1) * oh * ow];
                    let d = &mut din[plane * h * w..(plane + 1) * h * w];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = g[oy * ow + ox] * inv;
                            for ki in 0..*k {
                                let y = (oy * stride + ki) as isize - *padding as isize;
                                if y < 0 || y >= h as isize {
                                    continue;
                                }
                                for kj in 0..*k {
                                    let x = (ox * stride + kj) as isize - *padding as isize;
                                    if x >= 0 && x < w as isize {
                                        d[y as usize * w + x as usize] += gv;
                                    }
                                }
                            }
                        }
                    }
                }
                input.accumulate_grad(&din);
            }
        }
        Op::Relu => {
            let input = &parents[0];
            if input.requires_grad() {
                let idata = input.data();
                let din: Vec<f64> = gout
                    .iter()
                    .zip(idata.iter())
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                drop(idata);
                input.accumulate_grad(&din);
            }
        }
        Op::Sigmoid => {
            let input = &parents[0];
            if input.requires_grad() {
                let y = t.data();
                let din: Vec<f64> = gout.iter().zip(y.iter()).map(|(&g, &y)| g * y * (1.0 - y)).collect();
                drop(y);
                input.accumulate_grad(&din);
            }
        }
        Op::Exp => {
            let input = &parents[0];
            if input.requires_grad() {
                let y = t.data();
                let din: Vec<f64> = gout.iter().zip(y.iter()).map(|(&g, &y)| g * y).collect();
                drop(y);
                input.accumulate_grad(&din);
            }
        }
        Op::Sqrt => {
            let input = &parents[0];
            if input.requires_grad() {
                let y = t.data();
                let din: Vec<f64> = gout.iter().zip(y.iter()).map(|(&g, &y)| g * 0.5 / y).collect();
                drop(y);
                input.accumulate_grad(&din);
            }
        }
        Op::Scale { c } => {
            let input = &parents[0];
            if input.requires_grad() {
                let din: Vec<f64> = gout.iter().map(|&g| g * c).collect();
                input.accumulate_grad(&din);
            }
        }
        Op::AddScalar => {
            let input = &parents[0];
            if input.requires_grad() {
                input.accumulate_grad(gout);
            }
        }
        Op::Add | Op::Sub | Op::Mul => {
            let (a, b) = (&parents[0], &parents[1]);
            let out_shape = t.shape().to_vec();
            let sa = broadcast_strides(a.shape(), &out_shape);
            let sb = broadcast_strides(b.shape(), &out_shape);
            if a.requires_grad() {
                let mut da = vec![0.0; a.numel()];
                match &node.op {
                    Op::Mul => {
                        let bd = b.data();
                        broadcast_zip(&out_shape, &sa, &sb, |flat, ao, bo| {
                            da[ao] += gout[flat] * bd[bo];
                        });
                    }
                    _ => broadcast_zip(&out_shape, &sa, &sb, |flat, ao, _| {
                        da[ao] += gout[flat];
                    }),
                }
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                let mut db = vec![0.0; b.numel()];
                match &node.op {
                    Op::Mul => {
                        let ad = a.data();
                        broadcast_zip(&out_shape, &sa, &sb, |flat, ao, bo| {
                            db[bo] += gout[flat] * ad[ao];
                        });
                    }
                    Op::Sub => broadcast_zip(&out_shape, &sa, &sb, |flat, _, bo| {
                        db[bo] -= gout[flat];
                    }),
                    _ => broadcast_zip(&out_shape, &sa, &sb, |flat, _, bo| {
                        db[bo] += gout[flat];
                    }),
                }
                b.accumulate_grad(&db);
            }
        }
        Op::Matmul => {
            let (a, b) = (&parents[0], &parents[1]);
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            if a.requires_grad() {
                let mut da = vec![0.0; m * k];
                matmul_nt_acc(gout, &b.data(), m, n, k, &mut da);
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                let mut db = vec![0.0; k * n];
                matmul_tn_acc(&a.data(), gout, k, m, n, &mut db);
                b.accumulate_grad(&db);
            }
        }
        Op::Transpose2d => {
            let a = &parents[0];
            if a.requires_grad() {
                let (n, m) = (t.shape()[0], t.shape()[1]); // t is [N,M], a is [M,N]
                let mut da = vec![0.0; m * n];
                for i in 0..n {
                    for j in 0..m {
                        da[j * n + i] = gout[i * m + j];
                    }
                }
                a.accumulate_grad(&da);
            }
        }
        Op::Reshape => {
            let a = &parents[0];
            if a.requires_grad() {
                a.accumulate_grad(gout);
            }
        }
        Op::ConcatChannels { channels } => {
            let out_shape = t.shape().to_vec();
            let (n, ctot, hw) = (out_shape[0], out_shape[1], out_shape[2] * out_shape[3]);
            let mut coff = 0usize;
            for (p, &c) in parents.iter().zip(channels) {
                if p.requires_grad() {
                    let mut dp = vec![0.0; n * c * hw];
                    for img in 0..n {
                        let src = &gout[(img * ctot + coff) * hw..(img * ctot + coff + c) * hw];
                        dp[img * c * hw..(img + 1) * c * hw].copy_from_slice(src);
                    }
                    p.accumulate_grad(&dp);
                }
                coff += c;
            }
        }
        Op::ReduceSum { axes } | Op::ReduceMean { axes, .. } => {
            let input = &parents[0];
            if input.requires_grad() {
                let ishape = input.shape().to_vec();
                let kept = kept_shape(&ishape, axes);
                let sin = strides_of(&ishape);
                let sout = broadcast_strides(&kept, &ishape);
                let factor = match &node.op {
                    Op::ReduceMean { count, .. } => 1.0 / *count as f64,
                    _ => 1.0,
                };
                let mut din = vec![0.0; input.numel()];
                broadcast_zip(&ishape, &sin, &sout, |_, ioff, ooff| {
                    din[ioff] += gout[ooff] * factor;
                });
                input.accumulate_grad(&din);
            }
        }
        Op::ReduceMax { argmax } => {
            let input = &parents[0];
            if input.requires_grad() {
                let mut din = vec![0.0; input.numel()];
                for (j, &src) in argmax.iter().enumerate() {
                    din[src] += gout[j];
                }
                input.accumulate_grad(&din);
            }
        }
        Op::L2Normalize => {
            let input = &parents[0];
            if input.requires_grad() {
                let (n, d) = (input.shape()[0], input.shape()[1]);
                let x = input.data();
                let y = t.data();
                let mut din = vec![0.0; n * d];
                for r in 0..n {
                    let xr = &x[r * d..(r + 1) * d];
                    let yr = &y[r * d..(r + 1) * d];
                    let gr = &gout[r * d..(r + 1) * d];
                    let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let gy: f64 = gr.iter().zip(yr).map(|(&g, &y)| g * y).sum();
                    for ((o, &g), &yv) in din[r * d..(r + 1) * d].iter_mut().zip(gr).zip(yr) {
                        *o = (g - yv * gy) / norm;
                    }
                }
                drop(x);
                drop(y);
                input.accumulate_grad(&din);
            }
        }
    }
    Ok(())
}
