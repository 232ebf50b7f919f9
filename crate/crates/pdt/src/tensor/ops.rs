//! Forward implementations. Each op validates shapes, computes the result,
//! and records a backward rule when gradients are being tracked.

use super::kernels::*;
use super::{Op, ReduceKind, Tensor};
use crate::error::{Error, Result};

/// Cross-correlation with per-channel bias.
/// input [N,Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout].
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let ishape = input.shape().to_vec();
    let wshape = weight.shape().to_vec();
    if ishape.len() != 4 {
        return Err(Error::Dimension(format!(
            "conv2d input must be rank 4 [N,C,H,W], got {:?}",
            ishape
        )));
    }
    if wshape.len() != 4 {
        return Err(Error::Dimension(format!(
            "conv2d weight must be rank 4 [Cout,Cin,kh,kw], got {:?}",
            wshape
        )));
    }
    let (n, cin, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    let (cout, wcin, kh, kw) = (wshape[0], wshape[1], wshape[2], wshape[3]);
    if wcin != cin {
        return Err(Error::Dimension(format!(
            "conv2d channel axis mismatch: input C = {cin}, weight Cin = {wcin}"
        )));
    }
    if bias.shape() != [cout] {
        return Err(Error::Dimension(format!(
            "conv2d bias axis mismatch: expected [{cout}], got {:?}",
            bias.shape()
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::Config(format!("conv2d kernel dims must be odd, got {kh}x{kw}")));
    }
    if stride == 0 {
        return Err(Error::Config("conv2d stride must be positive".into()));
    }
    let oh = out_dim(h, kh, stride, padding, "H")?;
    let ow = out_dim(w, kw, stride, padding, "W")?;

    let ohw = oh * ow;
    let ckk = cin * kh * kw;
    let mut out = vec![0.0; n * cout * ohw];
    {
        let idata = input.data();
        let wdata = weight.data();
        let bdata = bias.data();
        let one_by_one = kh == 1 && kw == 1 && stride == 1 && padding == 0;
        let mut col = if one_by_one { Vec::new() } else { vec![0.0; ckk * ohw] };
        for img in 0..n {
            let src = &idata[img * cin * h * w..(img + 1) * cin * h * w];
            let dst = &mut out[img * cout * ohw..(img + 1) * cout * ohw];
            if one_by_one {
                matmul_nn_acc(&wdata, src, cout, ckk, ohw, dst);
            } else {
                im2col(src, cin, h, w, kh, kw, stride, padding, oh, ow, &mut col);
                matmul_nn_acc(&wdata, &col, cout, ckk, ohw, dst);
            }
            for c in 0..cout {
                let b = bdata[c];
                if b != 0.0 {
                    for v in &mut dst[c * ohw..(c + 1) * ohw] {
                        *v += b;
                    }
                }
            }
        }
    }
    Ok(Tensor::new_node(
        vec![n, cout, oh, ow],
        out,
        Op::Conv2d { stride, padding },
        vec![input.clone(), weight.clone(), bias.clone()],
    ))
}

pub(crate) fn out_dim(size: usize, k: usize, stride: usize, padding: usize, axis: &str) -> Result<usize> {
    let padded = size + 2 * padding;
    if padded < k {
        return Err(Error::Dimension(format!(
            "axis {axis}: padded size {padded} smaller than kernel {k}"
        )));
    }
    // floor semantics: trailing rows/cols that don't fill a stride step are dropped
    Ok((padded - k) / stride + 1)
}

/// Window mean with zero padding counted in the fixed divisor k*k.
pub fn avg_pool2d(input: &Tensor, k: usize, stride: usize, padding: usize) -> Result<Tensor> {
    let ishape = input.shape().to_vec();
    if ishape.len() != 4 {
        return Err(Error::Dimension(format!(
            "avg_pool2d input must be rank 4, got {:?}",
            ishape
        )));
    }
    if k == 0 || stride == 0 {
        return Err(Error::Config("avg_pool2d k and stride must be positive".into()));
    }
    let (n, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    let oh = out_dim(h, k, stride, padding, "H")?;
    let ow = out_dim(w, k, stride, padding, "W")?;
    let inv = 1.0 / (k * k) as f64;
    let mut out = vec![0.0; n * c * oh * ow];
    {
        let idata = input.data();
        for plane in 0..n * c {
            let src = &idata[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ki in 0..k {
                        let y = (oy * stride + ki) as isize - padding as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        let row = &src[y as usize * w..(y as usize + 1) * w];
                        for kj in 0..k {
                            let x = (ox * stride + kj) as isize - padding as isize;
                            if x >= 0 && x < w as isize {
                                acc += row[x as usize];
                            }
                        }
                    }
                    dst[oy * ow + ox] = acc * inv;
                }
            }
        }
    }
    Ok(Tensor::new_node(
        vec![n, c, oh, ow],
        out,
        Op::AvgPool2d { k, stride, padding },
        vec![input.clone()],
    ))
}

fn unary(input: &Tensor, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
    let data: Vec<f64> = input.data().iter().map(|&x| f(x)).collect();
    Tensor::new_node(input.shape().to_vec(), data, op, vec![input.clone()])
}

pub fn relu(input: &Tensor) -> Tensor {
    unary(input, Op::Relu, |x| if x > 0.0 { x } else { 0.0 })
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    // Split on sign so large |x| never overflows exp.
    unary(input, Op::Sigmoid, |x| {
        if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        }
    })
}

pub fn exp(input: &Tensor) -> Tensor {
    unary(input, Op::Exp, f64::exp)
}

/// y = sqrt(x + eps). A small positive eps keeps the derivative finite at 0.
pub fn sqrt_eps(input: &Tensor, eps: f64) -> Tensor {
    unary(input, Op::Sqrt, |x| (x + eps).sqrt())
}

pub fn scale(input: &Tensor, c: f64) -> Tensor {
    unary(input, Op::Scale { c }, |x| c * x)
}

pub fn add_scalar(input: &Tensor, c: f64) -> Tensor {
    unary(input, Op::AddScalar, |x| x + c)
}

/// Trailing-axis broadcast shape of two operands.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(Error::Dimension(format!(
                "broadcast mismatch on axis {i}: {da} vs {db} (shapes {a:?}, {b:?})"
            )));
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

/// Strides into an operand of `shape` when iterated over `out_shape`
/// (0 on broadcast axes).
pub(crate) fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let native = strides_of(shape);
    let mut s = vec![0usize; rank];
    let off = rank - shape.len();
    for i in 0..shape.len() {
        s[off + i] = if shape[i] == 1 { 0 } else { native[i] };
    }
    s
}

/// Iterate the odometer over `out_shape`, calling f(out_flat, a_off, b_off).
pub(crate) fn broadcast_zip(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let numel: usize = out_shape.iter().product();
    if numel == 0 {
        return;
    }
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut ao = 0usize;
    let mut bo = 0usize;
    for flat in 0..numel {
        f(flat, ao, bo);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            ao += sa[ax];
            bo += sb[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            ao -= sa[ax] * out_shape[ax];
            bo -= sb[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

fn binary(a: &Tensor, b: &Tensor, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    let numel: usize = out_shape.iter().product();
    let mut data = vec![0.0; numel];
    {
        let ad = a.data();
        let bd = b.data();
        if a.shape() == b.shape() {
            for ((o, &x), &y) in data.iter_mut().zip(ad.iter()).zip(bd.iter()) {
                *o = f(x, y);
            }
        } else {
            let sa = broadcast_strides(a.shape(), &out_shape);
            let sb = broadcast_strides(b.shape(), &out_shape);
            broadcast_zip(&out_shape, &sa, &sb, |flat, ao, bo| {
                data[flat] = f(ad[ao], bd[bo]);
            });
        }
    }
    Ok(Tensor::new_node(out_shape, data, op, vec![a.clone(), b.clone()]))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary(a, b, Op::Add, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary(a, b, Op::Sub, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary(a, b, Op::Mul, |x, y| x * y)
}

/// 2-D matrix product [M,K] x [K,N] -> [M,N].
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ash, bsh) = (a.shape().to_vec(), b.shape().to_vec());
    if ash.len() != 2 || bsh.len() != 2 {
        return Err(Error::Dimension(format!(
            "matmul expects rank-2 operands, got {ash:?} x {bsh:?}"
        )));
    }
    if ash[1] != bsh[0] {
        return Err(Error::Dimension(format!(
            "matmul inner axis mismatch: {} vs {}",
            ash[1], bsh[0]
        )));
    }
    let (m, k, n) = (ash[0], ash[1], bsh[1]);
    let mut out = vec![0.0; m * n];
    matmul_nn_acc(&a.data(), &b.data(), m, k, n, &mut out);
    Ok(Tensor::new_node(
        vec![m, n],
        out,
        Op::Matmul,
        vec![a.clone(), b.clone()],
    ))
}

pub fn transpose2d(a: &Tensor) -> Result<Tensor> {
    let sh = a.shape().to_vec();
    if sh.len() != 2 {
        return Err(Error::Dimension(format!("transpose2d expects rank 2, got {sh:?}")));
    }
    let (m, n) = (sh[0], sh[1]);
    let ad = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = ad[i * n + j];
        }
    }
    drop(ad);
    Ok(Tensor::new_node(vec![n, m], out, Op::Transpose2d, vec![a.clone()]))
}

pub fn reshape(a: &Tensor, new_shape: Vec<usize>) -> Result<Tensor> {
    let numel: usize = new_shape.iter().product();
    if numel != a.numel() {
        return Err(Error::Dimension(format!(
            "reshape {:?} -> {:?} changes element count",
            a.shape(),
            new_shape
        )));
    }
    Ok(Tensor::new_node(new_shape, a.to_vec(), Op::Reshape, vec![a.clone()]))
}

/// Channel-axis concatenation of rank-4 tensors sharing N,H,W.
pub fn concat_channels(parts: &[Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::Validation("concat_channels of zero parts".into()));
    }
    let first = parts[0].shape().to_vec();
    if first.len() != 4 {
        return Err(Error::Dimension(format!(
            "concat_channels expects rank-4 parts, got {first:?}"
        )));
    }
    let (n, h, w) = (first[0], first[2], first[3]);
    let mut channels = Vec::with_capacity(parts.len());
    for p in parts {
        let s = p.shape();
        if s.len() != 4 || s[0] != n || s[2] != h || s[3] != w {
            return Err(Error::Dimension(format!(
                "concat_channels part shape {s:?} incompatible with [N={n},_,H={h},W={w}]"
            )));
        }
        channels.push(s[1]);
    }
    let ctot: usize = channels.iter().sum();
    let hw = h * w;
    let mut out = vec![0.0; n * ctot * hw];
    for img in 0..n {
        let mut coff = 0usize;
        for (p, &c) in parts.iter().zip(&channels) {
            let pd = p.data();
            let src = &pd[img * c * hw..(img + 1) * c * hw];
            out[(img * ctot + coff) * hw..(img * ctot + coff + c) * hw].copy_from_slice(src);
            coff += c;
        }
    }
    Ok(Tensor::new_node(
        vec![n, ctot, h, w],
        out,
        Op::ConcatChannels { channels },
        parts.to_vec(),
    ))
}

/// Reduce over a set of axes. `keepdims` keeps reduced axes as size 1.
pub fn reduce(input: &Tensor, kind: ReduceKind, axes: &[usize], keepdims: bool) -> Result<Tensor> {
    let ishape = input.shape().to_vec();
    let rank = ishape.len();
    let mut reduced = vec![false; rank];
    for &ax in axes {
        if ax >= rank {
            return Err(Error::Dimension(format!(
                "reduce axis {ax} out of range for rank {rank}"
            )));
        }
        reduced[ax] = true;
    }
    let kept_shape: Vec<usize> = (0..rank)
        .map(|i| if reduced[i] { 1 } else { ishape[i] })
        .collect();
    let out_shape: Vec<usize> = if keepdims {
        kept_shape.clone()
    } else {
        let s: Vec<usize> = (0..rank).filter(|&i| !reduced[i]).map(|i| ishape[i]).collect();
        if s.is_empty() {
            vec![1]
        } else {
            s
        }
    };
    let out_numel: usize = kept_shape.iter().product();
    let count: usize = input.numel() / out_numel.max(1);

    // Map each input element to its output cell via broadcast strides of the
    // kept shape over the input shape.
    let sout = broadcast_strides(&kept_shape, &ishape);
    let sin = strides_of(&ishape);
    let sin_full: Vec<usize> = sin.clone();

    let idata = input.data();
    let result = match kind {
        ReduceKind::Sum | ReduceKind::Mean => {
            let mut acc = vec![0.0; out_numel];
            broadcast_zip(&ishape, &sin_full, &sout, |_, ioff, ooff| {
                acc[ooff] += idata[ioff];
            });
            if kind == ReduceKind::Mean {
                let inv = 1.0 / count as f64;
                for v in &mut acc {
                    *v *= inv;
                }
            }
            drop(idata);
            Tensor::new_node(
                out_shape,
                acc,
                if kind == ReduceKind::Sum {
                    Op::ReduceSum { axes: axes.to_vec() }
                } else {
                    Op::ReduceMean { axes: axes.to_vec(), count }
                },
                vec![input.clone()],
            )
        }
        ReduceKind::Max => {
            let mut acc = vec![f64::NEG_INFINITY; out_numel];
            let mut argmax = vec![usize::MAX; out_numel];
            broadcast_zip(&ishape, &sin_full, &sout, |_, ioff, ooff| {
                // strict > keeps the first index on ties
                if idata[ioff] > acc[ooff] {
                    acc[ooff] = idata[ioff];
                    argmax[ooff] = ioff;
                }
            });
            drop(idata);
            Tensor::new_node(out_shape, acc, Op::ReduceMax { argmax }, vec![input.clone()])
        }
    };
    Ok(result)
}

/// Row-wise L2 normalization of an [N,D] tensor.
pub fn l2_normalize(input: &Tensor) -> Result<Tensor> {
    let sh = input.shape().to_vec();
    if sh.len() != 2 {
        return Err(Error::Dimension(format!(
            "l2_normalize expects rank 2 [N,D], got {sh:?}"
        )));
    }
    let (n, d) = (sh[0], sh[1]);
    let idata = input.data();
    let mut out = vec![0.0; n * d];
    for r in 0..n {
        let row = &idata[r * d..(r + 1) * d];
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            return Err(Error::NumericDegenerate(format!(
                "l2_normalize: row {r} has norm {norm:e}"
            )));
        }
        for (o, &x) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
            *o = x / norm;
        }
    }
    drop(idata);
    Ok(Tensor::new_node(sh, out, Op::L2Normalize, vec![input.clone()]))
}
