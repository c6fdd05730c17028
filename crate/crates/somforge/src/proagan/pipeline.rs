//! The measurement stage between generator and discriminator, and the
//! matching down-scaling of real reconstructions.
//!
//! Synthetic images are always measured at the full dataset resolution:
//! upscale, DFT, add fresh k-space noise, reconstruct, then pool back down to
//! the current training level. Real reconstructions reach the discriminator
//! through the same pooling, so the noise statistics of both paths agree at
//! every level without per-level noise calibration.

use rand_distr::{Distribution, StandardNormal};

use crate::proagan::schedule::{level_of, resolution};
use crate::rng::Rng;
use crate::tensor::{kernels, Graph, NodeId, Op, Tensor};
use crate::{Error, Result};

/// Differentiable synthetic measurement path for generator output `f_hat`
/// (`[B, 1, r, r]` at some level): returns the reconstructed noisy batch at
/// the same level. Noise is re-drawn on every call.
pub fn synth_measurement_path(
    g: &mut Graph,
    f_hat: NodeId,
    full_level: usize,
    sigma_k: f64,
    rng: &mut Rng,
) -> Result<NodeId> {
    let shape = g.value(f_hat).shape().to_vec();
    if shape.len() != 4 || shape[1] != 1 || shape[2] != shape[3] {
        return Err(Error::Shape(format!(
            "synth_measurement_path: expected [B,1,r,r], got {shape:?}"
        )));
    }
    let (batch, r) = (shape[0], shape[2]);
    let level = level_of(r)?;
    if level > full_level {
        return Err(Error::Shape(format!(
            "synth_measurement_path: level {level} above dataset level {full_level}"
        )));
    }
    let n = resolution(full_level);

    // up to full resolution
    let mut h = f_hat;
    for _ in level..full_level {
        h = g.apply(Op::UpsampleNearest2x, &[h])?;
    }
    // measure: DFT plus fresh complex Gaussian noise
    let ks = g.apply(Op::Dft2, &[h])?;
    let noise: Vec<f32> = (0..batch * 2 * n * n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            (sigma_k * z) as f32
        })
        .collect();
    let noise_id = g.input(Tensor::from_f32(&[batch, 2, n, n], noise));
    let ksn = g.apply(Op::Add, &[ks, noise_id])?;
    // reconstruct and pool back down
    let mut rec = g.apply(Op::Idft2Real, &[ksn])?;
    for _ in level..full_level {
        rec = g.apply(Op::AvgPool2x, &[rec])?;
    }
    Ok(rec)
}

/// Per-level cache of down-scaled full-resolution reconstructions.
pub struct RealPyramid {
    n: usize,
    count: usize,
    full_level: usize,
    /// `levels[l]` holds `[count, r_l, r_l]` images.
    levels: Vec<Vec<f32>>,
}

impl RealPyramid {
    /// Build from full-resolution images `[count, n, n]`, pooling down to 4x4.
    pub fn new(full: Vec<f32>, n: usize, count: usize) -> Result<Self> {
        let full_level = level_of(n)?;
        if full.len() != count * n * n {
            return Err(Error::Shape(format!(
                "real_pyramid: {} values for {count} images of {n}x{n}",
                full.len()
            )));
        }
        let mut levels = vec![Vec::new(); full_level + 1];
        levels[full_level] = full;
        for lvl in (0..full_level).rev() {
            let r = resolution(lvl + 1);
            levels[lvl] = kernels::avgpool2x_fwd(&levels[lvl + 1], count, r, r);
        }
        Ok(RealPyramid { n, count, full_level, levels })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn full_level(&self) -> usize {
        self.full_level
    }

    /// All images at a level, `[count, r, r]` row-major.
    pub fn at_level(&self, level: usize) -> Result<&[f32]> {
        self.levels
            .get(level)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Shape(format!("real_pyramid: level {level} above {}", self.full_level)))
    }

    /// Gather a batch of images at a level into a `[B, 1, r, r]` tensor.
    pub fn batch(&self, level: usize, indices: &[usize]) -> Result<Tensor> {
        let imgs = self.at_level(level)?;
        let r = resolution(level);
        let rr = r * r;
        let mut data = Vec::with_capacity(indices.len() * rr);
        for &i in indices {
            if i >= self.count {
                return Err(Error::Shape(format!(
                    "real_pyramid: index {i} out of {} images",
                    self.count
                )));
            }
            data.extend_from_slice(&imgs[i * rr..(i + 1) * rr]);
        }
        Ok(Tensor::from_f32(&[indices.len(), 1, r, r], data))
    }

    pub fn resolution(&self) -> usize {
        self.n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng as _;

    fn rand_batch(b: usize, r: usize, seed: u64) -> Tensor {
        let mut rng = substream(seed, "x", 0);
        Tensor::from_f32(&[b, 1, r, r], (0..b * r * r).map(|_| rng.random_range(-1.0f32..1.0)).collect())
    }

    #[test]
    fn noiseless_path_is_identity_within_f32() {
        let mut g = Graph::new();
        let x = rand_batch(2, 8, 1);
        let xid = g.input(x.clone());
        let mut rng = substream(1, "n", 0);
        let out = synth_measurement_path(&mut g, xid, 3, 0.0, &mut rng).unwrap();
        for (a, b) in x.f32_data().iter().zip(g.value(out).f32_data()) {
            assert!((a - b).abs() <= 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn fresh_noise_differs_between_calls_same_stream_reproduces() {
        let x = rand_batch(1, 4, 2);
        let run = |rng: &mut Rng| {
            let mut g = Graph::new();
            let xid = g.input(x.clone());
            let out = synth_measurement_path(&mut g, xid, 2, 0.3, rng).unwrap();
            g.value(out).f32_data().to_vec()
        };
        let mut rng = substream(3, "n", 0);
        let a = run(&mut rng);
        let b = run(&mut rng); // same generator, advanced state: fresh noise
        assert_ne!(a, b);
        let mut rng2 = substream(3, "n", 0);
        let a2 = run(&mut rng2);
        assert_eq!(a, a2);
    }

    #[test]
    fn gradient_through_path_is_identity_on_ones() {
        // d/d f_hat of sum(out) = all-ones (linear path, independent of noise)
        let mut g = Graph::new();
        let x = rand_batch(1, 4, 4);
        let xid = g.input(x);
        let mut rng = substream(5, "n", 0);
        let out = synth_measurement_path(&mut g, xid, 3, 0.5, &mut rng).unwrap();
        let total = g.apply(Op::ReduceMean, &[out]).unwrap();
        let grads = g.backward(total).unwrap();
        let gx = grads.get(xid);
        let scale = 1.0 / 16.0; // reduce_mean over 16 outputs
        for &v in gx.f32_data() {
            assert!((v - scale).abs() < 1e-5, "{v} vs {scale}");
        }
    }

    #[test]
    fn pyramid_levels_and_constant_preservation() {
        let count = 3;
        let n = 16;
        let full = vec![0.7f32; count * n * n];
        let pyr = RealPyramid::new(full, n, count).unwrap();
        assert_eq!(pyr.full_level(), 2);
        for lvl in 0..=2 {
            let imgs = pyr.at_level(lvl).unwrap();
            let r = resolution(lvl);
            assert_eq!(imgs.len(), count * r * r);
            assert!(imgs.iter().all(|&v| v == 0.7));
        }
    }

    #[test]
    fn pyramid_top_level_is_identity() {
        let mut rng = substream(6, "p", 0);
        let n = 8;
        let full: Vec<f32> = (0..2 * n * n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let pyr = RealPyramid::new(full.clone(), n, 2).unwrap();
        assert_eq!(pyr.at_level(1).unwrap(), full.as_slice());
    }

    #[test]
    fn downscale_commutes_with_ensemble_mean() {
        // mean of pooled images equals pooled mean image (linearity)
        let mut rng = substream(7, "p", 0);
        let (count, n) = (5, 8);
        let full: Vec<f32> = (0..count * n * n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let pyr = RealPyramid::new(full.clone(), n, count).unwrap();

        let mean_full: Vec<f32> = (0..n * n)
            .map(|i| (0..count).map(|s| full[s * n * n + i]).sum::<f32>() / count as f32)
            .collect();
        let pooled_mean = kernels::avgpool2x_fwd(&mean_full, 1, n, n);

        let at0 = pyr.at_level(0).unwrap();
        let r = resolution(0);
        for i in 0..r * r {
            let m: f32 = (0..count).map(|s| at0[s * r * r + i]).sum::<f32>() / count as f32;
            assert!((m - pooled_mean[i]).abs() < 1e-5);
        }
    }
}
