//! Iterative radix-2 complex FFT over separate real/imaginary planes.
//!
//! Power-of-2 lengths only. The 2D transforms are unitarily normalized
//! (overall factor `1/n` for an `n x n` image), so `idft2` is the exact
//! adjoint of `dft2` and Parseval holds.

use crate::scalar::Scalar;
use crate::{Error, Result};

/// True when `n` is a power of two (and nonzero).
pub fn is_pow2(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

pub(crate) fn require_pow2(n: usize, what: &str) -> Result<()> {
    if !is_pow2(n) {
        return Err(Error::Shape(format!("{what}: size {n} is not a power of 2")));
    }
    Ok(())
}

/// In-place radix-2 transform of one complex line, no normalization.
/// `inverse` selects the conjugate-twiddle (adjoint) direction.
pub fn fft1d_inplace<T: Scalar>(re: &mut [T], im: &mut [T], inverse: bool) {
    let n = re.len();
    debug_assert_eq!(n, im.len());
    debug_assert!(is_pow2(n));
    if n <= 1 {
        return;
    }

    // bit-reversal permutation
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }

    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2usize;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let (w_re, w_im) = (T::from_f64(ang.cos()), T::from_f64(ang.sin()));
        let half = len / 2;
        let mut start = 0;
        while start < n {
            let mut cur_re = T::ONE;
            let mut cur_im = T::ZERO;
            for k in 0..half {
                let a = start + k;
                let b = a + half;
                let tr = cur_re * re[b] - cur_im * im[b];
                let ti = cur_re * im[b] + cur_im * re[b];
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] = re[a] + tr;
                im[a] = im[a] + ti;
                let nr = cur_re * w_re - cur_im * w_im;
                cur_im = cur_re * w_im + cur_im * w_re;
                cur_re = nr;
            }
            start += len;
        }
        len <<= 1;
    }
}

fn transform_2d<T: Scalar>(re: &mut [T], im: &mut [T], n: usize, inverse: bool) {
    // rows
    for r in 0..n {
        let s = r * n;
        fft1d_inplace(&mut re[s..s + n], &mut im[s..s + n], inverse);
    }
    // columns via gather/scatter scratch
    let mut cr = vec![T::ZERO; n];
    let mut ci = vec![T::ZERO; n];
    for c in 0..n {
        for r in 0..n {
            cr[r] = re[r * n + c];
            ci[r] = im[r * n + c];
        }
        fft1d_inplace(&mut cr, &mut ci, inverse);
        for r in 0..n {
            re[r * n + c] = cr[r];
            im[r * n + c] = ci[r];
        }
    }
    // unitary scale 1/n in either direction
    let scale = T::from_f64(1.0 / n as f64);
    for v in re.iter_mut() {
        *v = *v * scale;
    }
    for v in im.iter_mut() {
        *v = *v * scale;
    }
}

/// Unitary forward 2D DFT of an `n x n` complex plane pair, in place.
pub fn dft2_inplace<T: Scalar>(re: &mut [T], im: &mut [T], n: usize) -> Result<()> {
    require_pow2(n, "dft2")?;
    if re.len() != n * n || im.len() != n * n {
        return Err(Error::Shape(format!(
            "dft2: plane length {} / {} does not match {n}x{n}",
            re.len(),
            im.len()
        )));
    }
    transform_2d(re, im, n, false);
    Ok(())
}

/// Unitary inverse 2D DFT of an `n x n` complex plane pair, in place.
pub fn idft2_inplace<T: Scalar>(re: &mut [T], im: &mut [T], n: usize) -> Result<()> {
    require_pow2(n, "idft2")?;
    if re.len() != n * n || im.len() != n * n {
        return Err(Error::Shape(format!(
            "idft2: plane length {} / {} does not match {n}x{n}",
            re.len(),
            im.len()
        )));
    }
    transform_2d(re, im, n, true);
    Ok(())
}
