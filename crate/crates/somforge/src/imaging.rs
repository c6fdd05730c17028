//! The idealized MR measurement model `g = F(f) + n` and its inverse.
//!
//! `F` is the unitary 2D DFT, noise is i.i.d. complex Gaussian in k-space,
//! and reconstruction is the real part of the inverse DFT. With unitary
//! normalization the adjoint of the forward transform equals its inverse,
//! which keeps reconstruction noise white (variance `sigma_k^2` per pixel)
//! and makes gradient backpropagation through the pipeline exact.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::fft;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Real n-by-n raster of object properties; n must be a power of 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectImage<T: Scalar = f32> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> ObjectImage<T> {
    pub fn new(n: usize, data: Vec<T>) -> Result<Self> {
        fft::require_pow2(n, "ObjectImage")?;
        if n > 128 {
            return Err(Error::Shape(format!("ObjectImage: size {n} exceeds 128")));
        }
        if data.len() != n * n {
            return Err(Error::Shape(format!(
                "ObjectImage: data length {} != {n}x{n}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("ObjectImage: non-finite pixel".into()));
        }
        Ok(ObjectImage { n, data })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::new(n, vec![T::ZERO; n * n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }
}

/// Complex n-by-n k-space array stored as separate real/imaginary planes.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpace<T: Scalar = f32> {
    n: usize,
    re: Vec<T>,
    im: Vec<T>,
}

impl<T: Scalar> KSpace<T> {
    pub fn new(n: usize, re: Vec<T>, im: Vec<T>) -> Result<Self> {
        fft::require_pow2(n, "KSpace")?;
        if re.len() != n * n || im.len() != n * n {
            return Err(Error::Shape(format!(
                "KSpace: plane lengths {}/{} != {n}x{n}",
                re.len(),
                im.len()
            )));
        }
        if !re.iter().chain(im.iter()).all(|v| v.is_finite()) {
            return Err(Error::Numeric("KSpace: non-finite sample".into()));
        }
        Ok(KSpace { n, re, im })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn re(&self) -> &[T] {
        &self.re
    }

    pub fn im(&self) -> &[T] {
        &self.im
    }
}

/// Per-component standard deviation of the k-space noise (same for real and
/// imaginary parts).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    sigma_k: f64,
}

impl NoiseModel {
    pub fn new(sigma_k: f64) -> Result<Self> {
        if !(sigma_k >= 0.0) || !sigma_k.is_finite() {
            return Err(Error::Config(format!("sigma_k must be >= 0, got {sigma_k}")));
        }
        Ok(NoiseModel { sigma_k })
    }

    pub fn sigma_k(&self) -> f64 {
        self.sigma_k
    }
}

/// Unitary forward 2D DFT.
pub fn dft2<T: Scalar>(f: &ObjectImage<T>) -> KSpace<T> {
    let n = f.n;
    let mut re = f.data.clone();
    let mut im = vec![T::ZERO; n * n];
    fft::dft2_inplace(&mut re, &mut im, n).expect("ObjectImage guarantees pow2");
    KSpace { n, re, im }
}

/// Unitary inverse 2D DFT; returns (real plane, imaginary plane).
pub fn idft2<T: Scalar>(g: &KSpace<T>) -> (Vec<T>, Vec<T>) {
    let n = g.n;
    let mut re = g.re.clone();
    let mut im = g.im.clone();
    fft::idft2_inplace(&mut re, &mut im, n).expect("KSpace guarantees pow2");
    (re, im)
}

/// Simulate a measurement: `dft2(f)` plus i.i.d. Gaussian noise of standard
/// deviation `sigma_k` on each of the real and imaginary parts.
pub fn measure<T: Scalar>(f: &ObjectImage<T>, nm: &NoiseModel, rng: &mut Rng) -> KSpace<T> {
    let mut g = dft2(f);
    if nm.sigma_k > 0.0 {
        for i in 0..g.re.len() {
            let er: f64 = StandardNormal.sample(rng);
            let ei: f64 = StandardNormal.sample(rng);
            g.re[i] += T::from_f64(nm.sigma_k * er);
            g.im[i] += T::from_f64(nm.sigma_k * ei);
        }
    }
    g
}

/// Reconstruction used throughout the pipeline: real part of the inverse DFT.
pub fn reconstruct<T: Scalar>(g: &KSpace<T>) -> ObjectImage<T> {
    let (re, _) = idft2(g);
    ObjectImage { n: g.n, data: re }
}

/// A real-linear map with its adjoint, for inner-product verification.
/// Complex-valued measurement spaces are represented as stacked
/// `[re | im]` real vectors, so the pairing is the real part of the complex
/// inner product.
pub struct LinearOperator {
    pub name: String,
    pub in_len: usize,
    pub out_len: usize,
    pub apply: Box<dyn Fn(&[f64]) -> Vec<f64> + Sync>,
    pub adjoint: Box<dyn Fn(&[f64]) -> Vec<f64> + Sync>,
}

impl LinearOperator {
    /// The forward DFT as an operator from n^2 reals to 2n^2 stacked reals.
    pub fn dft2_operator(n: usize) -> Result<Self> {
        fft::require_pow2(n, "dft2_operator")?;
        Ok(LinearOperator {
            name: format!("dft2[{n}x{n}]"),
            in_len: n * n,
            out_len: 2 * n * n,
            apply: Box::new(move |x: &[f64]| {
                let f = ObjectImage::new(n, x.to_vec()).expect("caller provides n^2 reals");
                let g = dft2(&f);
                let mut out = g.re;
                out.extend_from_slice(&g.im);
                out
            }),
            adjoint: Box::new(move |y: &[f64]| {
                let g = KSpace::new(n, y[..n * n].to_vec(), y[n * n..].to_vec())
                    .expect("caller provides 2n^2 reals");
                reconstruct(&g).into_data()
            }),
        })
    }

    /// Reconstruction-after-DFT composite (identity on real images).
    pub fn recon_dft2_operator(n: usize) -> Result<Self> {
        fft::require_pow2(n, "recon_dft2_operator")?;
        Ok(LinearOperator {
            name: format!("reconstruct.dft2[{n}x{n}]"),
            in_len: n * n,
            out_len: n * n,
            apply: Box::new(move |x: &[f64]| {
                let f = ObjectImage::new(n, x.to_vec()).expect("n^2 reals");
                reconstruct(&dft2(&f)).into_data()
            }),
            adjoint: Box::new(move |y: &[f64]| {
                let f = ObjectImage::new(n, y.to_vec()).expect("n^2 reals");
                reconstruct(&dft2(&f)).into_data()
            }),
        })
    }

    pub fn scaled_identity(n_len: usize, scale: f64, adjoint_scale: f64) -> Self {
        LinearOperator {
            name: format!("{scale}*I (adjoint {adjoint_scale}*I)"),
            in_len: n_len,
            out_len: n_len,
            apply: Box::new(move |x: &[f64]| x.iter().map(|v| v * scale).collect()),
            adjoint: Box::new(move |y: &[f64]| y.iter().map(|v| v * adjoint_scale).collect()),
        }
    }
}

/// Max over random trials of |<Ax,y> - <x,A^T y>| / (||Ax|| * ||y||).
pub fn adjoint_check(op: &LinearOperator, trials: usize, rng: &mut Rng) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Config("adjoint_check: trials must be >= 1".into()));
    }
    let pair_err = |op: &LinearOperator, x: &[f64], y: &[f64]| -> f64 {
        let ax = (op.apply)(x);
        let aty = (op.adjoint)(y);
        let lhs: f64 = ax.iter().zip(y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        let norm_ax = ax.iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm_y = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let denom = norm_ax * norm_y;
        if denom == 0.0 {
            (lhs - rhs).abs()
        } else {
            (lhs - rhs).abs() / denom
        }
    };
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x: Vec<f64> = (0..op.in_len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..op.out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
        // a random pairing plus an aligned one (y = Ax); the aligned probe
        // is what exposes pure scale mismatches at full strength
        let e1 = pair_err(op, &x, &y);
        let e2 = pair_err(op, &x, &(op.apply)(&x));
        worst = worst.max(e1).max(e2);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn random_image(n: usize, seed: u64) -> ObjectImage<f64> {
        let mut rng = substream(seed, "img", 0);
        ObjectImage::new(n, (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn noiseless_measure_equals_dft2() {
        let f = random_image(16, 1);
        let nm = NoiseModel::new(0.0).unwrap();
        let mut rng = substream(1, "m", 0);
        let g = measure(&f, &nm, &mut rng);
        let g0 = dft2(&f);
        assert_eq!(g.re(), g0.re());
        assert_eq!(g.im(), g0.im());
    }

    #[test]
    fn measure_is_deterministic_given_seed() {
        let f = random_image(8, 2);
        let nm = NoiseModel::new(0.5).unwrap();
        let g1 = measure(&f, &nm, &mut substream(9, "m", 3));
        let g2 = measure(&f, &nm, &mut substream(9, "m", 3));
        assert_eq!(g1.re(), g2.re());
        assert_eq!(g1.im(), g2.im());
    }

    #[test]
    fn round_trip_f32_within_tolerance() {
        let mut rng = substream(4, "img", 0);
        let n = 32;
        let f = ObjectImage::<f32>::new(
            n,
            (0..n * n).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        )
        .unwrap();
        let r = reconstruct(&dft2(&f));
        for (a, b) in f.data().iter().zip(r.data()) {
            assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn reconstruction_is_linear_in_noise() {
        // real(idft2(dft2(f) + nk)) == f + real(idft2(nk)) up to f64 round-off
        let n = 8;
        let f = random_image(n, 5);
        let mut rng = substream(5, "nk", 0);
        let nk = KSpace::<f64>::new(
            n,
            (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let mut g = dft2(&f);
        for i in 0..n * n {
            g.re[i] += nk.re[i];
            g.im[i] += nk.im[i];
        }
        let lhs = reconstruct(&g);
        let noise_img = reconstruct(&nk);
        for i in 0..n * n {
            let rhs = f.data()[i] + noise_img.data()[i];
            assert!((lhs.data()[i] - rhs).abs() <= 1e-12);
        }
    }

    #[test]
    fn pure_imaginary_dc_reconstructs_to_zero() {
        let n = 8;
        let mut im = vec![0.0f64; n * n];
        im[0] = 1.0;
        let g = KSpace::new(n, vec![0.0; n * n], im).unwrap();
        let r = reconstruct(&g);
        for &v in r.data() {
            assert!(v.abs() <= 1e-15);
        }
    }

    #[test]
    fn reconstructed_noise_variance_matches_sigma_sq() {
        // f = 0: pixel variance of the reconstruction is sigma_k^2
        let n = 8;
        let sigma = 0.7;
        let nm = NoiseModel::new(sigma).unwrap();
        let f = ObjectImage::<f64>::zeros(n).unwrap();
        let mut rng = substream(11, "mc", 0);
        let draws = 2000; // n*n samples per draw -> 128k pixel samples
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut count = 0usize;
        for _ in 0..draws {
            let r = reconstruct(&measure(&f, &nm, &mut rng));
            for &v in r.data() {
                sum += v;
                sumsq += v * v;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let var = sumsq / count as f64 - mean * mean;
        let expected = sigma * sigma;
        assert!(
            (var - expected).abs() / expected < 0.05,
            "variance {var} vs {expected}"
        );
    }

    #[test]
    fn noise_whiteness_after_reconstruction() {
        // off-diagonal correlations of reconstruct(noise-only) stay small
        let n = 4;
        let nm = NoiseModel::new(1.0).unwrap();
        let f = ObjectImage::<f64>::zeros(n).unwrap();
        let mut rng = substream(13, "white", 0);
        let samples = 100_000;
        let d = n * n;
        let mut cov = vec![0.0f64; d * d];
        for _ in 0..samples {
            let r = reconstruct(&measure(&f, &nm, &mut rng));
            let v = r.data();
            for i in 0..d {
                for j in 0..=i {
                    cov[i * d + j] += v[i] * v[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                let c = cov[i * d + j] / samples as f64;
                let vi = cov[i * d + i] / samples as f64;
                let vj = cov[j * d + j] / samples as f64;
                let rho = c / (vi * vj).sqrt();
                assert!(rho.abs() <= 0.02, "rho[{i},{j}] = {rho}");
            }
        }
    }

    #[test]
    fn adjoint_check_identity_and_dft() {
        let mut rng = substream(17, "adj", 0);
        let id = LinearOperator::scaled_identity(16, 1.0, 1.0);
        assert_eq!(adjoint_check(&id, 5, &mut rng).unwrap(), 0.0);

        let dft = LinearOperator::dft2_operator(8).unwrap();
        assert!(adjoint_check(&dft, 10, &mut rng).unwrap() <= 1e-10);

        let recon = LinearOperator::recon_dft2_operator(8).unwrap();
        assert!(adjoint_check(&recon, 10, &mut rng).unwrap() <= 1e-10);
    }

    #[test]
    fn adjoint_check_catches_wrong_adjoint() {
        // apply = 2I with claimed adjoint I: relative error ~ 0.5
        let mut rng = substream(19, "adj", 1);
        let bad = LinearOperator::scaled_identity(32, 2.0, 1.0);
        let err = adjoint_check(&bad, 8, &mut rng).unwrap();
        assert!((err - 0.5).abs() < 1e-12, "err = {err}");
    }

    #[test]
    fn unitarity_norm_preserved() {
        let f = random_image(16, 23);
        let g = dft2(&f);
        let ef: f64 = f.data().iter().map(|v| v * v).sum();
        let eg: f64 = g.re().iter().chain(g.im()).map(|v| v * v).sum();
        assert!(((ef - eg) / ef).abs() <= 1e-10);
    }

    #[test]
    fn non_pow2_rejected() {
        assert!(ObjectImage::<f32>::new(6, vec![0.0; 36]).is_err());
    }
}
