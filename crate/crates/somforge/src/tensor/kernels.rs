//! Low-level kernels behind the autodiff primitives.
//!
//! Convolutions use per-sample im2col plus an axpy-form GEMM whose inner loop
//! runs over contiguous output columns; every accumulator is written by
//! exactly one task and accumulates in a fixed order, so results are
//! bit-stable under any thread count.

use rayon::prelude::*;

use crate::fft;
use crate::scalar::Scalar;

/// C[m,n] += A[m,k] * B[k,n], all row-major.
pub fn gemm_axpy<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &a_ik) in a_row.iter().enumerate() {
            if a_ik == T::ZERO {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_ik * bv;
            }
        }
    }
}

fn transpose<T: Scalar>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// Gather the receptive fields of one sample into col[k_sz, h*w].
/// Zero padding keeps the output the same spatial size; stride is 1.
fn im2col<T: Scalar>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    col: &mut [T],
) {
    let (ph, pw) = (kh / 2, kw / 2);
    let hw = h * w;
    let mut row = 0;
    for ci in 0..cin {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for u in 0..kh {
            for v in 0..kw {
                let dst = &mut col[row * hw..(row + 1) * hw];
                row += 1;
                for oy in 0..h {
                    let iy = oy as isize + u as isize - ph as isize;
                    let dst_row = &mut dst[oy * w..(oy + 1) * w];
                    if iy < 0 || iy >= h as isize {
                        for d in dst_row.iter_mut() {
                            *d = T::ZERO;
                        }
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..w {
                        let ix = ox as isize + v as isize - pw as isize;
                        dst_row[ox] = if ix < 0 || ix >= w as isize {
                            T::ZERO
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add of the column matrix back onto the (unpadded) input layout.
fn col2im_add<T: Scalar>(
    col: &[T],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    gx: &mut [T],
) {
    let (ph, pw) = (kh / 2, kw / 2);
    let hw = h * w;
    let mut row = 0;
    for ci in 0..cin {
        let plane = &mut gx[ci * hw..(ci + 1) * hw];
        for u in 0..kh {
            for v in 0..kw {
                let src = &col[row * hw..(row + 1) * hw];
                row += 1;
                for oy in 0..h {
                    let iy = oy as isize + u as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &src[oy * w..(oy + 1) * w];
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..w {
                        let ix = ox as isize + v as isize - pw as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += src_row[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Same-size stride-1 convolution, x:[b,cin,h,w] * weight:[cout,cin,kh,kw].
pub fn conv2d_fwd<T: Scalar>(
    x: &[T],
    weight: &[T],
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
) -> Vec<T> {
    let hw = h * w;
    let k_sz = cin * kh * kw;
    let sample_in = cin * hw;
    let sample_out = cout * hw;
    let outs: Vec<Vec<T>> = (0..b)
        .into_par_iter()
        .map(|s| {
            let mut col = vec![T::ZERO; k_sz * hw];
            im2col(&x[s * sample_in..(s + 1) * sample_in], cin, h, w, kh, kw, &mut col);
            let mut y = vec![T::ZERO; sample_out];
            gemm_axpy(&mut y, weight, &col, cout, k_sz, hw);
            y
        })
        .collect();
    let mut y = Vec::with_capacity(b * sample_out);
    for o in outs {
        y.extend_from_slice(&o);
    }
    y
}

/// Gradients of [`conv2d_fwd`] w.r.t. input and weights.
pub fn conv2d_bwd<T: Scalar>(
    x: &[T],
    weight: &[T],
    gy: &[T],
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
) -> (Vec<T>, Vec<T>) {
    let hw = h * w;
    let k_sz = cin * kh * kw;
    let sample_in = cin * hw;
    let sample_out = cout * hw;
    let wt = transpose(weight, cout, k_sz); // [k_sz, cout]

    let per_sample: Vec<(Vec<T>, Vec<T>)> = (0..b)
        .into_par_iter()
        .map(|s| {
            let xs = &x[s * sample_in..(s + 1) * sample_in];
            let gys = &gy[s * sample_out..(s + 1) * sample_out];

            // input gradient: col2im(W^T gy)
            let mut dcol = vec![T::ZERO; k_sz * hw];
            gemm_axpy(&mut dcol, &wt, gys, k_sz, cout, hw);
            let mut gxs = vec![T::ZERO; sample_in];
            col2im_add(&dcol, cin, h, w, kh, kw, &mut gxs);

            // weight gradient: gy * col^T
            let mut col = vec![T::ZERO; k_sz * hw];
            im2col(xs, cin, h, w, kh, kw, &mut col);
            let col_t = transpose(&col, k_sz, hw); // [hw, k_sz]
            let mut gws = vec![T::ZERO; cout * k_sz];
            gemm_axpy(&mut gws, gys, &col_t, cout, hw, k_sz);
            (gxs, gws)
        })
        .collect();

    let mut gx = Vec::with_capacity(b * sample_in);
    let mut gw = vec![T::ZERO; cout * k_sz];
    for (gxs, gws) in per_sample {
        gx.extend_from_slice(&gxs);
        for (acc, v) in gw.iter_mut().zip(&gws) {
            *acc += *v;
        }
    }
    (gx, gw)
}

/// x:[b,fin] * w:[fout,fin] -> y:[b,fout]
pub fn dense_fwd<T: Scalar>(x: &[T], weight: &[T], b: usize, fin: usize, fout: usize) -> Vec<T> {
    let wt = transpose(weight, fout, fin); // [fin, fout]
    let mut y = vec![T::ZERO; b * fout];
    gemm_axpy(&mut y, x, &wt, b, fin, fout);
    y
}

pub fn dense_bwd<T: Scalar>(
    x: &[T],
    weight: &[T],
    gy: &[T],
    b: usize,
    fin: usize,
    fout: usize,
) -> (Vec<T>, Vec<T>) {
    let mut gx = vec![T::ZERO; b * fin];
    gemm_axpy(&mut gx, gy, weight, b, fout, fin);
    let gyt = transpose(gy, b, fout); // [fout, b]
    let mut gw = vec![T::ZERO; fout * fin];
    gemm_axpy(&mut gw, &gyt, x, fout, b, fin);
    (gx, gw)
}

/// Nearest-neighbor 2x upsampling of [b,c,h,w].
pub fn upsample2x_fwd<T: Scalar>(x: &[T], bc: usize, h: usize, w: usize) -> Vec<T> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut y = vec![T::ZERO; bc * h2 * w2];
    for p in 0..bc {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut y[p * h2 * w2..(p + 1) * h2 * w2];
        for r in 0..h {
            for c in 0..w {
                let v = src[r * w + c];
                let o = 2 * r * w2 + 2 * c;
                dst[o] = v;
                dst[o + 1] = v;
                dst[o + w2] = v;
                dst[o + w2 + 1] = v;
            }
        }
    }
    y
}

pub fn upsample2x_bwd<T: Scalar>(gy: &[T], bc: usize, h: usize, w: usize) -> Vec<T> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut gx = vec![T::ZERO; bc * h * w];
    for p in 0..bc {
        let src = &gy[p * h2 * w2..(p + 1) * h2 * w2];
        let dst = &mut gx[p * h * w..(p + 1) * h * w];
        for r in 0..h {
            for c in 0..w {
                let o = 2 * r * w2 + 2 * c;
                dst[r * w + c] = src[o] + src[o + 1] + src[o + w2] + src[o + w2 + 1];
            }
        }
    }
    gx
}

/// 2x2 average pooling of [b,c,h,w]; h and w must be even.
pub fn avgpool2x_fwd<T: Scalar>(x: &[T], bc: usize, h: usize, w: usize) -> Vec<T> {
    let (h2, w2) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut y = vec![T::ZERO; bc * h2 * w2];
    for p in 0..bc {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut y[p * h2 * w2..(p + 1) * h2 * w2];
        for r in 0..h2 {
            for c in 0..w2 {
                let o = 2 * r * w + 2 * c;
                dst[r * w2 + c] = (src[o] + src[o + 1] + src[o + w] + src[o + w + 1]) * quarter;
            }
        }
    }
    y
}

pub fn avgpool2x_bwd<T: Scalar>(gy: &[T], bc: usize, h: usize, w: usize) -> Vec<T> {
    let (h2, w2) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut gx = vec![T::ZERO; bc * h * w];
    for p in 0..bc {
        let src = &gy[p * h2 * w2..(p + 1) * h2 * w2];
        let dst = &mut gx[p * h * w..(p + 1) * h * w];
        for r in 0..h2 {
            for c in 0..w2 {
                let g = src[r * w2 + c] * quarter;
                let o = 2 * r * w + 2 * c;
                dst[o] = g;
                dst[o + 1] = g;
                dst[o + w] = g;
                dst[o + w + 1] = g;
            }
        }
    }
    gx
}

/// Per-location feature normalization over channels of [b,c,h,w]:
/// y = x / sqrt(mean_c(x^2) + eps).
pub fn pixel_norm_fwd<T: Scalar>(x: &[T], b: usize, c: usize, hw: usize, eps: f64) -> Vec<T> {
    let eps = T::from_f64(eps);
    let inv_c = T::from_f64(1.0 / c as f64);
    let mut y = vec![T::ZERO; x.len()];
    for s in 0..b {
        let base = s * c * hw;
        for p in 0..hw {
            let mut m = T::ZERO;
            for ch in 0..c {
                let v = x[base + ch * hw + p];
                m += v * v;
            }
            let inv = T::ONE / (m * inv_c + eps).sqrt();
            for ch in 0..c {
                y[base + ch * hw + p] = x[base + ch * hw + p] * inv;
            }
        }
    }
    y
}

pub fn pixel_norm_bwd<T: Scalar>(
    x: &[T],
    gy: &[T],
    b: usize,
    c: usize,
    hw: usize,
    eps: f64,
) -> Vec<T> {
    let eps = T::from_f64(eps);
    let inv_c = T::from_f64(1.0 / c as f64);
    let mut gx = vec![T::ZERO; x.len()];
    for s in 0..b {
        let base = s * c * hw;
        for p in 0..hw {
            let mut m = T::ZERO;
            let mut dot = T::ZERO;
            for ch in 0..c {
                let i = base + ch * hw + p;
                m += x[i] * x[i];
                dot += gy[i] * x[i];
            }
            let d = m * inv_c + eps;
            let inv = T::ONE / d.sqrt();
            let inv3 = inv / d;
            for ch in 0..c {
                let i = base + ch * hw + p;
                gx[i] = gy[i] * inv - x[i] * inv3 * dot * inv_c;
            }
        }
    }
    gx
}

/// Appends one channel holding the batch-wide mean of per-location standard
/// deviations, the progressive-GAN minibatch statistic.
pub fn minibatch_stddev_fwd<T: Scalar>(x: &[T], b: usize, c: usize, hw: usize, eps: f64) -> Vec<T> {
    let chw = c * hw;
    let mut acc = 0.0f64;
    for i in 0..chw {
        let mut mean = 0.0f64;
        for s in 0..b {
            mean += x[s * chw + i].to_f64();
        }
        mean /= b as f64;
        let mut var = 0.0f64;
        for s in 0..b {
            let d = x[s * chw + i].to_f64() - mean;
            var += d * d;
        }
        var /= b as f64;
        acc += (var + eps).sqrt();
    }
    let stat = T::from_f64(acc / chw as f64);
    let out_chw = (c + 1) * hw;
    let mut y = vec![T::ZERO; b * out_chw];
    for s in 0..b {
        y[s * out_chw..s * out_chw + chw].copy_from_slice(&x[s * chw..(s + 1) * chw]);
        for v in &mut y[s * out_chw + chw..(s + 1) * out_chw] {
            *v = stat;
        }
    }
    y
}

pub fn minibatch_stddev_bwd<T: Scalar>(
    x: &[T],
    gy: &[T],
    b: usize,
    c: usize,
    hw: usize,
    eps: f64,
) -> Vec<T> {
    let chw = c * hw;
    let out_chw = (c + 1) * hw;
    let mut gx = vec![T::ZERO; b * chw];
    // passthrough part
    for s in 0..b {
        gx[s * chw..(s + 1) * chw].copy_from_slice(&gy[s * out_chw..s * out_chw + chw]);
    }
    // statistic part: S = mean_i sqrt(var_i + eps); dS/dx[s,i] = (x-mean)/(b*sigma*chw)
    let mut gs = 0.0f64;
    for s in 0..b {
        for v in &gy[s * out_chw + chw..(s + 1) * out_chw] {
            gs += v.to_f64();
        }
    }
    if gs != 0.0 {
        for i in 0..chw {
            let mut mean = 0.0f64;
            for s in 0..b {
                mean += x[s * chw + i].to_f64();
            }
            mean /= b as f64;
            let mut var = 0.0f64;
            for s in 0..b {
                let d = x[s * chw + i].to_f64() - mean;
                var += d * d;
            }
            var /= b as f64;
            let sigma = (var + eps).sqrt();
            let coef = gs / (b as f64 * sigma * chw as f64);
            for s in 0..b {
                let d = x[s * chw + i].to_f64() - mean;
                gx[s * chw + i] += T::from_f64(coef * d);
            }
        }
    }
    gx
}

/// Batched unitary 2D DFT of real images: [b,1,n,n] -> [b,2,n,n] planes.
pub fn dft2_batch<T: Scalar>(x: &[T], b: usize, n: usize) -> Vec<T> {
    let nn = n * n;
    let mut y = vec![T::ZERO; b * 2 * nn];
    for s in 0..b {
        let mut re = x[s * nn..(s + 1) * nn].to_vec();
        let mut im = vec![T::ZERO; nn];
        fft::dft2_inplace(&mut re, &mut im, n).expect("validated pow2 size");
        y[s * 2 * nn..s * 2 * nn + nn].copy_from_slice(&re);
        y[s * 2 * nn + nn..(s + 1) * 2 * nn].copy_from_slice(&im);
    }
    y
}

/// Batched real part of the unitary inverse 2D DFT: [b,2,n,n] -> [b,1,n,n].
pub fn idft2_real_batch<T: Scalar>(x: &[T], b: usize, n: usize) -> Vec<T> {
    let nn = n * n;
    let mut y = vec![T::ZERO; b * nn];
    for s in 0..b {
        let mut re = x[s * 2 * nn..s * 2 * nn + nn].to_vec();
        let mut im = x[s * 2 * nn + nn..(s + 1) * 2 * nn].to_vec();
        fft::idft2_inplace(&mut re, &mut im, n).expect("validated pow2 size");
        y[s * nn..(s + 1) * nn].copy_from_slice(&re);
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        let a = vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = vec![0.0; 4];
        gemm_axpy(&mut c, &a, &b, 2, 3, 2);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn avgpool_inverts_upsample_exactly() {
        let x: Vec<f32> = (0..2 * 3 * 4 * 4).map(|i| (i as f32) * 0.37 - 5.0).collect();
        let up = upsample2x_fwd(&x, 6, 4, 4);
        let back = avgpool2x_fwd(&up, 6, 8, 8);
        assert_eq!(x, back);
    }

    #[test]
    fn conv_identity_kernel_passthrough() {
        // 1x1 kernel with weight 1 reproduces the input
        let x: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let w = vec![1.0f64];
        let y = conv2d_fwd(&x, &w, 1, 1, 4, 4, 1, 1, 1);
        assert_eq!(x, y);
    }

    #[test]
    fn conv_shift_kernel_zero_pads() {
        // 3x3 kernel selecting the left neighbor: edge column becomes zero
        let x = vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let mut w = vec![0.0f64; 9];
        w[3] = 1.0; // (u=1, v=0): input pixel one to the left
        let y = conv2d_fwd(&x, &w, 1, 1, 3, 3, 1, 3, 3);
        assert_eq!(y, vec![0.0, 1.0, 2.0, 0.0, 4.0, 5.0, 0.0, 7.0, 8.0]);
    }
}
