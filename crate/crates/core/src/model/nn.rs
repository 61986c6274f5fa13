//! Dense CPU kernels used by the classifier: 3x3 "same" convolution through
//! im2col + SGEMM, ReLU, 2x2 max-pooling and global average pooling.
//!
//! Feature maps are stored channel-major (`C x H x W`, row-major inside a
//! channel) as flat `f32` slices.

/// Row-major `C = alpha * op(A) * op(B) + beta * C`.
///
/// `a` is `m x k` (or `k x m` when `trans_a`), `b` is `k x n` (or `n x k`
/// when `trans_b`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    trans_a: bool,
    b: &[f32],
    trans_b: bool,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above describe exactly the buffers whose lengths
    // are checked against m, k and n.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds a `c x h x w` map into a `(c*9) x (h*w)` column matrix for a 3x3
/// kernel with zero padding of one pixel.
pub(crate) fn im2col3(input: &[f32], c: usize, h: usize, w: usize, col: &mut [f32]) {
    let hw = h * w;
    debug_assert_eq!(col.len(), c * 9 * hw);
    for ch in 0..c {
        let plane = &input[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ch * 9 + ky * 3 + kx) * hw;
                let dst = &mut col[row..row + hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let out = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            out[0] = 0.0;
                            out[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => out.copy_from_slice(src),
                        _ => {
                            out[..w - 1].copy_from_slice(&src[1..]);
                            out[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col3`]: accumulates a column matrix back into a map.
pub(crate) fn col2im3(col: &[f32], c: usize, h: usize, w: usize, out: &mut [f32]) {
    let hw = h * w;
    out.fill(0.0);
    for ch in 0..c {
        let plane = &mut out[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ch * 9 + ky * 3 + kx) * hw;
                let src = &col[row..row + hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let s = &src[y * w..(y + 1) * w];
                    match kx {
                        0 => {
                            for x in 1..w {
                                dst[x - 1] += s[x];
                            }
                        }
                        1 => {
                            for x in 0..w {
                                dst[x] += s[x];
                            }
                        }
                        _ => {
                            for x in 0..w - 1 {
                                dst[x + 1] += s[x];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 3x3 same-padded convolution. `weight` is `c_out x (c_in*9)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3_forward(
    input: &[f32],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f32],
    bias: &[f32],
    c_out: usize,
    col: &mut Vec<f32>,
    out: &mut [f32],
) {
    let hw = h * w;
    col.resize(c_in * 9 * hw, 0.0);
    im2col3(input, c_in, h, w, col);
    for (o, b) in bias.iter().enumerate() {
        out[o * hw..(o + 1) * hw].fill(*b);
    }
    gemm(c_out, c_in * 9, hw, weight, false, col, false, 1.0, out);
}

/// Backward pass of [`conv3_forward`]. Accumulates into `grad_w` and
/// `grad_b`; writes the input gradient when `grad_input` is given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3_backward(
    input: &[f32],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f32],
    c_out: usize,
    grad_out: &[f32],
    grad_w: &mut [f32],
    grad_b: &mut [f32],
    grad_input: Option<&mut [f32]>,
    col: &mut Vec<f32>,
) {
    let hw = h * w;
    let k = c_in * 9;
    col.resize(k * hw, 0.0);
    im2col3(input, c_in, h, w, col);
    gemm(c_out, hw, k, grad_out, false, col, true, 1.0, grad_w);
    for (o, gb) in grad_b.iter_mut().enumerate() {
        *gb += grad_out[o * hw..(o + 1) * hw].iter().sum::<f32>();
    }
    if let Some(grad_input) = grad_input {
        gemm(k, c_out, hw, weight, true, grad_out, false, 0.0, col);
        col2im3(col, c_in, h, w, grad_input);
    }
}

/// ReLU followed by 2x2 max-pooling with stride 2 (`h`, `w` even). Returns
/// the pooled map and, per pooled cell, the flat index of the winning input.
pub(crate) fn relu_maxpool2(x: &[f32], c: usize, h: usize, w: usize) -> (Vec<f32>, Vec<u32>) {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = vec![0.0; c * ph * pw];
    let mut arg = vec![0u32; c * ph * pw];
    for ch in 0..c {
        let base = ch * h * w;
        for py in 0..ph {
            for px in 0..pw {
                let i0 = base + 2 * py * w + 2 * px;
                let cands = [i0, i0 + 1, i0 + w, i0 + w + 1];
                let mut best = cands[0];
                for &i in &cands[1..] {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                let o = ch * ph * pw + py * pw + px;
                // max(relu(v)) == relu(max(v))
                out[o] = x[best].max(0.0);
                arg[o] = best as u32;
            }
        }
    }
    (out, arg)
}

/// Routes pooled gradients back to the winning pre-activation cells,
/// dropping those that ReLU clipped.
pub(crate) fn relu_maxpool2_backward(pre: &[f32], arg: &[u32], grad_pooled: &[f32], grad_pre: &mut [f32]) {
    grad_pre.fill(0.0);
    for (g, &i) in grad_pooled.iter().zip(arg) {
        if pre[i as usize] > 0.0 {
            grad_pre[i as usize] += *g;
        }
    }
}

pub(crate) fn global_avg_pool(x: &[f32], c: usize, hw: usize) -> Vec<f32> {
    (0..c).map(|ch| x[ch * hw..(ch + 1) * hw].iter().sum::<f32>() / hw as f32).collect()
}

pub(crate) fn global_avg_pool_backward(grad: &[f32], c: usize, hw: usize) -> Vec<f32> {
    let mut out = vec![0.0; c * hw];
    for ch in 0..c {
        out[ch * hw..(ch + 1) * hw].fill(grad[ch] / hw as f32);
    }
    out
}
