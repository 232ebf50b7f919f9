//! Raw f64 compute kernels shared by the tensor ops.
//!
//! Loop orders are chosen so the innermost loop runs over contiguous
//! slices and autovectorizes.

/// out[m,n] += a[m,k] * b[k,n]
pub fn matmul_nn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[m,k] += a[m,n] * b[k,n]^T  (second operand used transposed)
pub fn matmul_nt_acc(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for (kk, o) in orow.iter_mut().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o += acc;
        }
    }
}

/// out[k,n] += a[m,k]^T * b[m,n]  (first operand used transposed)
pub fn matmul_tn_acc(a: &[f64], b: &[f64], k: usize, m: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Unfold one image [C,H,W] into col [C*kh*kw, OH*OW] for cross-correlation.
/// Out-of-bounds taps are zero.
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    img: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    col: &mut [f64],
) {
    debug_assert_eq!(img.len(), c * h * w);
    debug_assert_eq!(col.len(), c * kh * kw * oh * ow);
    col.fill(0.0);
    let ohw = oh * ow;
    for ch in 0..c {
        let plane = &img[ch * h * w..(ch + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let crow = &mut col[((ch * kh + ki) * kw + kj) * ohw..][..ohw];
                for oy in 0..oh {
                    let y = (oy * stride + ki) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let irow = &plane[y as usize * w..(y as usize + 1) * w];
                    let orow = &mut crow[oy * ow..(oy + 1) * ow];
                    for ox in 0..ow {
                        let x = (ox * stride + kj) as isize - pad as isize;
                        if x >= 0 && x < w as isize {
                            orow[ox] = irow[x as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-accumulate a col gradient [C*kh*kw, OH*OW] back onto the image.
#[allow(clippy::too_many_arguments)]
pub fn col2im_acc(
    col: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    img: &mut [f64],
) {
    debug_assert_eq!(img.len(), c * h * w);
    debug_assert_eq!(col.len(), c * kh * kw * oh * ow);
    let ohw = oh * ow;
    for ch in 0..c {
        let plane = &mut img[ch * h * w..(ch + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let crow = &col[((ch * kh + ki) * kw + kj) * ohw..][..ohw];
                for oy in 0..oh {
                    let y = (oy * stride + ki) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let irow = &mut plane[y as usize * w..(y as usize + 1) * w];
                    let orow = &crow[oy * ow..(oy + 1) * ow];
                    for ox in 0..ow {
                        let x = (ox * stride + kj) as isize - pad as isize;
                        if x >= 0 && x < w as isize {
                            irow[x as usize] += orow[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Row-major strides for a shape.
pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}
