//! Ground-truth stochastic object model and dataset generation.
//!
//! The lumpy background is a filtered-Poisson field: a Poisson-distributed
//! number of Gaussian blobs dropped uniformly on a torus. It is stationary by
//! construction and every ensemble statistic has a closed form, which is what
//! makes real-versus-learned comparisons exact at desk scale.

use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::Path;

use crate::imaging::{measure, reconstruct, NoiseModel, ObjectImage};
use crate::rng::{substream, Rng};
use crate::somt::{self, TensorEntry};
use crate::{Error, Result};

/// Parameters of the lumpy background model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LumpyParams {
    /// Expected blob count (Poisson mean).
    pub nbar: f64,
    /// Peak blob amplitude.
    pub amplitude: f64,
    /// Gaussian blob standard deviation in pixels.
    pub width: f64,
    /// Image side length (power of 2).
    pub n: usize,
}

impl LumpyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.nbar >= 0.0) {
            return Err(Error::Config(format!("nbar must be >= 0, got {}", self.nbar)));
        }
        if !(self.amplitude > 0.0) {
            return Err(Error::Config(format!("amplitude must be > 0, got {}", self.amplitude)));
        }
        if !(self.width > 0.0) {
            return Err(Error::Config(format!("width must be > 0, got {}", self.width)));
        }
        crate::fft::require_pow2(self.n, "LumpyParams.n")
    }

    /// Analytic mean pixel value: nbar * a * 2*pi*w^2 / n^2.
    pub fn mean_pixel(&self) -> f64 {
        self.nbar * self.amplitude * 2.0 * std::f64::consts::PI * self.width * self.width
            / (self.n * self.n) as f64
    }
}

/// Draw one lumpy object: N ~ Poisson(nbar) Gaussian blobs with continuous
/// centers uniform over the n-by-n torus (nearest-image wrap).
pub fn sample_lumpy(p: &LumpyParams, rng: &mut Rng) -> Result<ObjectImage<f64>> {
    p.validate()?;
    let n = p.n;
    let count = if p.nbar > 0.0 {
        Poisson::new(p.nbar)
            .map_err(|e| Error::Config(format!("Poisson({}) invalid: {e}", p.nbar)))?
            .sample(rng) as usize
    } else {
        0
    };
    let mut img = vec![0.0f64; n * n];
    let inv_2w2 = 1.0 / (2.0 * p.width * p.width);
    let half = n as f64 / 2.0;
    for _ in 0..count {
        let cy: f64 = rng.random_range(0.0..n as f64);
        let cx: f64 = rng.random_range(0.0..n as f64);
        for r in 0..n {
            let mut dy = (r as f64 - cy).abs();
            if dy > half {
                dy = n as f64 - dy;
            }
            let dy2 = dy * dy;
            let row = &mut img[r * n..(r + 1) * n];
            for (c, px) in row.iter_mut().enumerate() {
                let mut dx = (c as f64 - cx).abs();
                if dx > half {
                    dx = n as f64 - dx;
                }
                *px += p.amplitude * (-(dx * dx + dy2) * inv_2w2).exp();
            }
        }
    }
    ObjectImage::new(n, img)
}

/// Gaussian-blob detection signal rendered on a p-by-p patch (no wrap).
pub fn gaussian_signal(p: usize, amplitude: f64, width: f64, dy: f64, dx: f64) -> Vec<f64> {
    let c = (p as f64 - 1.0) / 2.0;
    let inv_2w2 = 1.0 / (2.0 * width * width);
    let mut s = vec![0.0; p * p];
    for r in 0..p {
        for q in 0..p {
            let ry = r as f64 - (c + dy);
            let rx = q as f64 - (c + dx);
            s[r * p + q] = amplitude * (-(rx * rx + ry * ry) * inv_2w2).exp();
        }
    }
    s
}

/// Everything recorded alongside the tensors of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub n: usize,
    pub count: usize,
    pub seed: u64,
    pub sigma_k: f64,
    pub lumpy: LumpyParams,
    /// Affine normalization applied to raw objects: f_norm = (f - mean)/rms.
    pub norm_mean: f64,
    pub norm_rms: f64,
    /// Amplitude range of the normalized objects (generator output range).
    pub amp_min: f64,
    pub amp_max: f64,
}

impl DatasetMeta {
    pub fn to_text(&self) -> String {
        // canonical key order; floats printed in shortest round-trip form
        let mut kv = BTreeMap::new();
        kv.insert("amp_max", format!("{:?}", self.amp_max));
        kv.insert("amp_min", format!("{:?}", self.amp_min));
        kv.insert("count", self.count.to_string());
        kv.insert("lumpy_amplitude", format!("{:?}", self.lumpy.amplitude));
        kv.insert("lumpy_nbar", format!("{:?}", self.lumpy.nbar));
        kv.insert("lumpy_width", format!("{:?}", self.lumpy.width));
        kv.insert("n", self.n.to_string());
        kv.insert("norm_mean", format!("{:?}", self.norm_mean));
        kv.insert("norm_rms", format!("{:?}", self.norm_rms));
        kv.insert("seed", self.seed.to_string());
        kv.insert("sigma_k", format!("{:?}", self.sigma_k));
        let mut out = String::new();
        for (k, v) in kv {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("dataset meta: bad line '{line}'")))?;
            kv.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<&String> {
            kv.get(k).ok_or_else(|| Error::Format(format!("dataset meta: missing key '{k}'")))
        };
        let f = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Format(format!("dataset meta: bad float '{k}'")))
        };
        let u = |k: &str| -> Result<u64> {
            get(k)?.parse().map_err(|_| Error::Format(format!("dataset meta: bad int '{k}'")))
        };
        Ok(DatasetMeta {
            n: u("n")? as usize,
            count: u("count")? as usize,
            seed: u("seed")?,
            sigma_k: f("sigma_k")?,
            lumpy: LumpyParams {
                nbar: f("lumpy_nbar")?,
                amplitude: f("lumpy_amplitude")?,
                width: f("lumpy_width")?,
                n: u("n")? as usize,
            },
            norm_mean: f("norm_mean")?,
            norm_rms: f("norm_rms")?,
            amp_min: f("amp_min")?,
            amp_max: f("amp_max")?,
        })
    }
}

/// A generated (or loaded) training dataset: aligned clean objects, k-space
/// measurements, and reconstructions, all row-major f32.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    /// `[count, n, n]` normalized clean objects.
    pub objects: Vec<f32>,
    /// `[count, 2, n, n]` k-space (re/im planes).
    pub kspace: Vec<f32>,
    /// `[count, n, n]` reconstructions (real part of IDFT of kspace).
    pub recons: Vec<f32>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.meta.n
    }

    pub fn count(&self) -> usize {
        self.meta.count
    }

    pub fn object(&self, i: usize) -> &[f32] {
        let nn = self.meta.n * self.meta.n;
        &self.objects[i * nn..(i + 1) * nn]
    }

    pub fn recon(&self, i: usize) -> &[f32] {
        let nn = self.meta.n * self.meta.n;
        &self.recons[i * nn..(i + 1) * nn]
    }
}

/// Generate `count` lumpy objects, normalize the ensemble to zero mean and
/// unit RMS, measure each with fresh per-sample noise sub-streams, and write
/// everything to `path` as a SOMT container.
pub fn gen_dataset(
    p: &LumpyParams,
    count: usize,
    nm: &NoiseModel,
    seed: u64,
    path: &Path,
) -> Result<Dataset> {
    let ds = build_dataset(p, count, nm, seed)?;
    save_dataset(path, &ds)?;
    Ok(ds)
}

/// Same as [`gen_dataset`] without the file write.
pub fn build_dataset(p: &LumpyParams, count: usize, nm: &NoiseModel, seed: u64) -> Result<Dataset> {
    p.validate()?;
    if count == 0 {
        return Err(Error::Config("dataset count must be >= 1".into()));
    }
    if count > u32::MAX as usize {
        return Err(Error::Config(format!("dataset count {count} overflows u32")));
    }
    let n = p.n;
    let nn = n * n;

    // pass 1: raw lumpy objects, per-sample sub-streams
    let raws: Vec<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, "lumpy", i as u64);
            sample_lumpy(p, &mut rng).map(ObjectImage::into_data)
        })
        .collect::<Result<_>>()?;

    // ensemble normalization to zero mean, unit RMS
    let total = (count * nn) as f64;
    let mean: f64 = raws.iter().flat_map(|v| v.iter()).sum::<f64>() / total;
    let ss: f64 = raws.iter().flat_map(|v| v.iter()).map(|&x| (x - mean) * (x - mean)).sum();
    let rms = (ss / total).sqrt();
    if rms == 0.0 {
        return Err(Error::Numeric(
            "dataset normalization: zero variance ensemble (nbar too small?)".into(),
        ));
    }

    let mut objects = Vec::with_capacity(count * nn);
    let mut amp_min = f64::INFINITY;
    let mut amp_max = f64::NEG_INFINITY;
    for raw in &raws {
        for &v in raw {
            let x = (v - mean) / rms;
            amp_min = amp_min.min(x);
            amp_max = amp_max.max(x);
            objects.push(x as f32);
        }
    }

    // pass 2: measure + reconstruct, per-sample noise sub-streams
    let per_sample: Vec<(Vec<f32>, Vec<f32>)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let f = ObjectImage::<f32>::new(n, objects[i * nn..(i + 1) * nn].to_vec())
                .expect("normalized object is finite");
            let mut rng = substream(seed, "noise", i as u64);
            let g = measure(&f, nm, &mut rng);
            let r = reconstruct(&g);
            let mut planes = Vec::with_capacity(2 * nn);
            planes.extend_from_slice(g.re());
            planes.extend_from_slice(g.im());
            (planes, r.into_data())
        })
        .collect();

    let mut kspace = Vec::with_capacity(count * 2 * nn);
    let mut recons = Vec::with_capacity(count * nn);
    for (g, r) in per_sample {
        kspace.extend_from_slice(&g);
        recons.extend_from_slice(&r);
    }

    Ok(Dataset {
        meta: DatasetMeta {
            n,
            count,
            seed,
            sigma_k: nm.sigma_k(),
            lumpy: *p,
            norm_mean: mean,
            norm_rms: rms,
            amp_min,
            amp_max,
        },
        objects,
        kspace,
        recons,
    })
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let (n, count) = (ds.meta.n, ds.meta.count);
    let tensors = vec![
        ("meta".to_string(), somt::encode_meta(&ds.meta.to_text(), 1)),
        (
            "objects".to_string(),
            TensorEntry::F32 { shape: vec![count, n, n], data: ds.objects.clone() },
        ),
        (
            "kspace".to_string(),
            TensorEntry::F32 { shape: vec![count, 2, n, n], data: ds.kspace.clone() },
        ),
        (
            "recons".to_string(),
            TensorEntry::F32 { shape: vec![count, n, n], data: ds.recons.clone() },
        ),
    ];
    somt::save_tensors(path, &tensors)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let tensors = somt::load_tensors(path)?;
    let meta = DatasetMeta::from_text(&somt::decode_meta(somt::find(&tensors, "meta")?)?)?;
    let (n, count) = (meta.n, meta.count);
    let want = |name: &str, shape: Vec<usize>| -> Result<Vec<f32>> {
        match somt::find(&tensors, name)? {
            TensorEntry::F32 { shape: s, data } if *s == shape => Ok(data.clone()),
            e => Err(Error::Format(format!(
                "dataset tensor '{name}': expected f32 {:?}, got {:?}",
                shape,
                e.shape()
            ))),
        }
    };
    Ok(Dataset {
        objects: want("objects", vec![count, n, n])?,
        kspace: want("kspace", vec![count, 2, n, n])?,
        recons: want("recons", vec![count, n, n])?,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize) -> LumpyParams {
        LumpyParams { nbar: 20.0, amplitude: 1.0, width: 1.5, n }
    }

    #[test]
    fn zero_nbar_gives_zero_image() {
        let p = LumpyParams { nbar: 0.0, ..params(8) };
        let mut rng = substream(1, "t", 0);
        let img = sample_lumpy(&p, &mut rng).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fixed_seed_reproduces_bitwise() {
        let p = params(16);
        let a = sample_lumpy(&p, &mut substream(5, "t", 1)).unwrap();
        let b = sample_lumpy(&p, &mut substream(5, "t", 1)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn mean_pixel_matches_analytic_expectation() {
        // Monte Carlo over 10^4 samples vs nbar*a*2*pi*w^2/n^2
        let p = params(16);
        let expected = p.mean_pixel();
        let samples = 10_000;
        let total: f64 = (0..samples)
            .map(|i| {
                let img = sample_lumpy(&p, &mut substream(77, "mc", i)).unwrap();
                img.data().iter().sum::<f64>() / (p.n * p.n) as f64
            })
            .sum();
        let mean = total / samples as f64;
        assert!(
            (mean - expected).abs() / expected < 0.05,
            "mean {mean} vs analytic {expected}"
        );
    }

    #[test]
    fn stationarity_of_pixel_means() {
        // toroidal placement: per-pixel means are position-independent.
        // chi-square-style check: normalized deviation of each pixel's mean
        // stays within 5 sigma of the MC error.
        let p = LumpyParams { nbar: 10.0, amplitude: 1.0, width: 1.2, n: 8 };
        let samples = 10_000usize;
        let nn = p.n * p.n;
        let mut acc = vec![0.0f64; nn];
        let mut acc2 = vec![0.0f64; nn];
        for i in 0..samples {
            let img = sample_lumpy(&p, &mut substream(31, "st", i as u64)).unwrap();
            for (a, (b, &v)) in acc.iter_mut().zip(acc2.iter_mut().zip(img.data())) {
                *a += v;
                *b += v * v;
            }
        }
        let grand = acc.iter().sum::<f64>() / (samples * nn) as f64;
        let mut worst_z = 0.0f64;
        for i in 0..nn {
            let m = acc[i] / samples as f64;
            let var = acc2[i] / samples as f64 - m * m;
            let se = (var / samples as f64).sqrt();
            let z = (m - grand) / se;
            worst_z = worst_z.max(z.abs());
        }
        assert!(worst_z < 5.0, "worst pixel-mean z-score {worst_z}");
    }

    #[test]
    fn dataset_reproducible_and_consistent() {
        let p = params(8);
        let nm = NoiseModel::new(0.1).unwrap();
        let a = build_dataset(&p, 5, &nm, 99).unwrap();
        let b = build_dataset(&p, 5, &nm, 99).unwrap();
        assert_eq!(a.objects, b.objects);
        assert_eq!(a.kspace, b.kspace);
        assert_eq!(a.recons, b.recons);

        // normalized ensemble is zero-mean unit-RMS
        let mean: f64 = a.objects.iter().map(|&v| v as f64).sum::<f64>() / a.objects.len() as f64;
        let rms: f64 = (a.objects.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>()
            / a.objects.len() as f64)
            .sqrt();
        assert!(mean.abs() < 1e-6);
        assert!((rms - 1.0).abs() < 1e-6);
    }

    #[test]
    fn stored_kspace_equals_redrawn_measurement() {
        // g is re-derivable from stored f and the recorded noise sub-stream
        let p = params(8);
        let nm = NoiseModel::new(0.25).unwrap();
        let ds = build_dataset(&p, 4, &nm, 7).unwrap();
        let nn = p.n * p.n;
        for i in 0..ds.count() {
            let f = ObjectImage::<f32>::new(p.n, ds.object(i).to_vec()).unwrap();
            let g = measure(&f, &nm, &mut substream(7, "noise", i as u64));
            assert_eq!(g.re(), &ds.kspace[i * 2 * nn..i * 2 * nn + nn]);
            assert_eq!(g.im(), &ds.kspace[i * 2 * nn + nn..(i + 1) * 2 * nn]);
        }
    }

    #[test]
    fn noiseless_recon_equals_object() {
        let p = params(8);
        let nm = NoiseModel::new(0.0).unwrap();
        let ds = build_dataset(&p, 3, &nm, 3).unwrap();
        for (o, r) in ds.objects.iter().zip(&ds.recons) {
            assert!((o - r).abs() <= 1e-5);
        }
    }

    #[test]
    fn dataset_file_round_trip_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.somt");
        let p2 = dir.path().join("b.somt");
        let p = params(8);
        let nm = NoiseModel::new(0.1).unwrap();
        gen_dataset(&p, 3, &nm, 11, &p1).unwrap();
        let ds = load_dataset(&p1).unwrap();
        save_dataset(&p2, &ds).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn signal_blob_is_centered_and_positive() {
        let s = gaussian_signal(9, 2.0, 1.5, 0.0, 0.0);
        assert!((s[4 * 9 + 4] - 2.0).abs() < 1e-12);
        assert!(s.iter().all(|&v| v >= 0.0));
        // symmetric about the center
        assert!((s[4 * 9 + 3] - s[4 * 9 + 5]).abs() < 1e-12);
    }
}
