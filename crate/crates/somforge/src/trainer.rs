//! The progressive adversarial training loop: scheduling, alternating
//! updates, checkpointing, and metrics logging.
//!
//! One optimizer cycle = `d_steps` discriminator updates followed by one
//! generator update; the images-shown counter advances by one batch per
//! cycle and drives both the fade coefficient and the phase schedule. All
//! randomness flows through a single checkpointable generator, so a run
//! resumed from a phase-boundary checkpoint reproduces the uninterrupted
//! run bit for bit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::objects::{load_dataset, Dataset};
use crate::pgm;
use crate::proagan::{
    loss_discriminator, loss_generator, synth_measurement_path, Discriminator, FadeState,
    Generator, LossVariant, NetConfig, ProgressiveSchedule, RealPyramid,
};
use crate::rng::{self, Rng};
use crate::somt::{self, TensorEntry};
use crate::tensor::{adam_step, AdamConfig, AdamState, Graph, Tensor};
use crate::{Error, Result};

/// Everything the training loop needs; every field is config-overridable.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub schedule: ProgressiveSchedule,
    /// Batch size per phase (aligned with `schedule.phases`).
    pub batch_per_phase: Vec<usize>,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    pub loss: LossVariant,
    pub adam: AdamConfig,
    /// Elementwise clip bound for wgan_clip discriminator weights.
    pub clip: f64,
    pub seed: u64,
    /// Extra checkpoints every this many optimizer cycles (0 = phase
    /// boundaries and final only).
    pub checkpoint_interval: u64,
    pub latent_dim: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub use_eqlr: bool,
    pub use_mbstd: bool,
    /// Zero the wall-time column so logs are byte-reproducible.
    pub deterministic: bool,
    /// Samples per growth snapshot grid (0 disables snapshots).
    pub snapshot_count: usize,
}

impl TrainConfig {
    /// ProGAN-style defaults at desk scale.
    pub fn desk_default(schedule: ProgressiveSchedule, loss: LossVariant, seed: u64) -> Self {
        let batch_per_phase =
            schedule.phases.iter().map(|p| if p.level <= 2 { 64 } else { 32 }).collect();
        TrainConfig {
            schedule,
            batch_per_phase,
            d_steps: loss.default_d_steps(),
            loss,
            adam: AdamConfig { lr: 1e-3, beta1: 0.0, beta2: 0.99, epsilon: 1e-8 },
            clip: 0.01,
            seed,
            checkpoint_interval: 0,
            latent_dim: 64,
            base_channels: 16,
            max_channels: 128,
            use_eqlr: false,
            use_mbstd: false,
            deterministic: true,
            snapshot_count: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_per_phase.len() != self.schedule.phases.len() {
            return Err(Error::Config(format!(
                "batch list has {} entries for {} phases",
                self.batch_per_phase.len(),
                self.schedule.phases.len()
            )));
        }
        if self.batch_per_phase.iter().any(|&b| b == 0) {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.d_steps == 0 {
            return Err(Error::Config("d_steps must be >= 1".into()));
        }
        Ok(())
    }

    fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("adam_beta1".into(), format!("{:?}", self.adam.beta1));
        m.insert("adam_beta2".into(), format!("{:?}", self.adam.beta2));
        m.insert("adam_epsilon".into(), format!("{:?}", self.adam.epsilon));
        m.insert("adam_lr".into(), format!("{:?}", self.adam.lr));
        m.insert(
            "batch".into(),
            self.batch_per_phase.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        );
        m.insert("base_channels".into(), self.base_channels.to_string());
        m.insert("checkpoint_interval".into(), self.checkpoint_interval.to_string());
        m.insert("clip".into(), format!("{:?}", self.clip));
        m.insert("d_steps".into(), self.d_steps.to_string());
        m.insert("deterministic".into(), self.deterministic.to_string());
        m.insert("latent_dim".into(), self.latent_dim.to_string());
        m.insert("loss".into(), self.loss.as_str().into());
        m.insert("max_channels".into(), self.max_channels.to_string());
        m.insert("schedule".into(), self.schedule.to_text());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("snapshot_count".into(), self.snapshot_count.to_string());
        m.insert("use_eqlr".into(), self.use_eqlr.to_string());
        m.insert("use_mbstd".into(), self.use_mbstd.to_string());
        m
    }
}

/// One log record per optimizer cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub level: usize,
    pub alpha: f64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub images_shown: u64,
    pub seconds: f64,
}

/// Append-only training log.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,level,alpha,loss_d,loss_g,images_shown,seconds\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{:?},{:?},{:?},{},{:.3}\n",
                r.step, r.level, r.alpha, r.loss_d, r.loss_g, r.images_shown, r.seconds
            ));
        }
        out
    }
}

/// Result of a training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub log: TrainLog,
    pub final_checkpoint: PathBuf,
}

/// Serializable training state: networks, optimizer moments, position in the
/// schedule, and the random stream.
pub struct Checkpoint {
    pub cfg: TrainConfig,
    pub gen: Generator,
    pub disc: Discriminator,
    pub adam_g: AdamState,
    pub adam_d: AdamState,
    pub rng: Rng,
    pub phase_idx: usize,
    pub in_phase_images: u64,
    pub images_total: u64,
    pub cycle: u64,
    pub dataset_n: usize,
    pub out_mid: f64,
    pub out_half: f64,
}

impl Checkpoint {
    /// Fade state implied by the stored schedule position.
    pub fn fade(&self) -> FadeState {
        let phase = self.cfg.schedule.phases[self.phase_idx.min(self.cfg.schedule.phases.len() - 1)];
        FadeState {
            level: phase.level,
            alpha: FadeState::alpha_at(self.in_phase_images, phase.fade_images),
        }
    }
}

fn net_config(cfg: &TrainConfig, max_level: usize, out_mid: f64, out_half: f64) -> NetConfig {
    NetConfig {
        latent_dim: cfg.latent_dim,
        base_channels: cfg.base_channels,
        max_channels: cfg.max_channels,
        max_level,
        leaky_slope: 0.2,
        pixel_norm_eps: 1e-8,
        use_eqlr: cfg.use_eqlr,
        use_mbstd: cfg.use_mbstd,
        out_mid,
        out_half,
    }
}

fn normal_batch(shape: &[usize], rng: &mut Rng) -> Tensor {
    let data: Vec<f32> = (0..shape.iter().product::<usize>())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z as f32
        })
        .collect();
    Tensor::from_f32(shape, data)
}

/// Train from scratch on the dataset at `data_path`, writing checkpoints,
/// growth snapshots, and the log CSV into `out_dir`.
pub fn train(cfg: &TrainConfig, data_path: &Path, out_dir: &Path) -> Result<TrainOutcome> {
    let ds = load_dataset(data_path)?;
    train_with_dataset(cfg, &ds, out_dir, None)
}

/// Resume a run from a checkpoint file; the config must match the one stored.
pub fn train_resume(
    cfg: &TrainConfig,
    data_path: &Path,
    out_dir: &Path,
    ckpt_path: &Path,
) -> Result<TrainOutcome> {
    let ds = load_dataset(data_path)?;
    let ckpt = load_checkpoint(ckpt_path)?;
    let stored = ckpt.cfg.echo();
    let given = cfg.echo();
    if stored != given {
        let diff: Vec<String> = given
            .iter()
            .filter(|(k, v)| stored.get(*k) != Some(v))
            .map(|(k, _)| k.clone())
            .collect();
        return Err(Error::Config(format!(
            "resume: config does not match checkpoint (differs in: {})",
            diff.join(", ")
        )));
    }
    train_with_dataset(cfg, &ds, out_dir, Some(ckpt))
}

/// Core loop, callable with an in-memory dataset (tests) or a resume state.
pub fn train_with_dataset(
    cfg: &TrainConfig,
    ds: &Dataset,
    out_dir: &Path,
    resume: Option<Checkpoint>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data_level = crate::proagan::level_of(ds.n())?;
    if cfg.schedule.top_level() > data_level {
        return Err(Error::Config(format!(
            "schedule top level {} exceeds dataset level {data_level}",
            cfg.schedule.top_level()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    // discriminator sees reconstructions; pyramid caches every level
    let pyramid = RealPyramid::new(ds.recons.clone(), ds.n(), ds.count())?;
    let sigma_k = ds.meta.sigma_k;
    let out_mid = 0.5 * (ds.meta.amp_max + ds.meta.amp_min);
    let out_half = 0.5 * (ds.meta.amp_max - ds.meta.amp_min);

    let mut state = match resume {
        Some(ckpt) => {
            if ckpt.dataset_n != ds.n() {
                return Err(Error::Config(format!(
                    "resume: checkpoint was trained at {}x{}, dataset is {}x{}",
                    ckpt.dataset_n,
                    ckpt.dataset_n,
                    ds.n(),
                    ds.n()
                )));
            }
            ckpt
        }
        None => {
            let ncfg = net_config(cfg, data_level, out_mid, out_half);
            let mut rng = rng::substream(cfg.seed, "train", 0);
            let gen = Generator::new(ncfg.clone(), 0, &mut rng)?;
            let disc = Discriminator::new(ncfg, 0, &mut rng)?;
            let adam_g = AdamState::new(cfg.adam, gen.params.tensors());
            let adam_d = AdamState::new(cfg.adam, disc.params.tensors());
            Checkpoint {
                cfg: cfg.clone(),
                gen,
                disc,
                adam_g,
                adam_d,
                rng,
                phase_idx: 0,
                in_phase_images: 0,
                images_total: 0,
                cycle: 0,
                dataset_n: ds.n(),
                out_mid,
                out_half,
            }
        }
    };

    let mut log = TrainLog::default();
    let started = Instant::now();

    while state.phase_idx < cfg.schedule.phases.len() {
        let phase = cfg.schedule.phases[state.phase_idx];
        let batch = cfg.batch_per_phase[state.phase_idx];
        let budget = phase.fade_images + phase.stabilize_images;

        // grow into this phase's level if the nets are still below it
        while state.gen.level < phase.level {
            state.gen.grow(&mut state.rng)?;
            state.disc.grow(&mut state.rng)?;
            state.adam_g.m.extend(
                state.gen.params.tensors()[state.adam_g.m.len()..]
                    .iter()
                    .map(|t| Tensor::zeros(t.shape(), t.dtype())),
            );
            state.adam_g.v.extend(
                state.gen.params.tensors()[state.adam_g.v.len()..]
                    .iter()
                    .map(|t| Tensor::zeros(t.shape(), t.dtype())),
            );
            state.adam_d.m.extend(
                state.disc.params.tensors()[state.adam_d.m.len()..]
                    .iter()
                    .map(|t| Tensor::zeros(t.shape(), t.dtype())),
            );
            state.adam_d.v.extend(
                state.disc.params.tensors()[state.adam_d.v.len()..]
                    .iter()
                    .map(|t| Tensor::zeros(t.shape(), t.dtype())),
            );
        }

        while state.in_phase_images < budget {
            let fade = FadeState {
                level: phase.level,
                alpha: FadeState::alpha_at(state.in_phase_images, phase.fade_images),
            };
            let dump_and_fail = |state: &Checkpoint, msg: String| -> Error {
                let dump = out_dir.join("ckpt_failure.somt");
                match save_checkpoint(&dump, state) {
                    Ok(()) => Error::Numeric(format!("{msg}; state dumped to {}", dump.display())),
                    Err(e) => Error::Numeric(format!("{msg}; failure dump also failed: {e}")),
                }
            };
            let (loss_d, loss_g) =
                match run_cycle(cfg, &mut state, &pyramid, sigma_k, &fade, batch) {
                    Ok(v) => v,
                    Err(Error::Numeric(msg)) => {
                        return Err(dump_and_fail(&state, format!(
                            "cycle {}: {msg}",
                            state.cycle
                        )))
                    }
                    Err(e) => return Err(e),
                };

            if !loss_d.is_finite() || !loss_g.is_finite() {
                return Err(dump_and_fail(
                    &state,
                    format!(
                        "non-finite loss at cycle {} (loss_d = {loss_d}, loss_g = {loss_g})",
                        state.cycle
                    ),
                ));
            }

            state.cycle += 1;
            state.in_phase_images += batch as u64;
            state.images_total += batch as u64;
            log.records.push(LogRecord {
                step: state.cycle,
                level: phase.level,
                alpha: fade.alpha,
                loss_d,
                loss_g,
                images_shown: state.images_total,
                seconds: if cfg.deterministic { 0.0 } else { started.elapsed().as_secs_f64() },
            });

            if cfg.checkpoint_interval > 0 && state.cycle % cfg.checkpoint_interval == 0 {
                save_checkpoint(&out_dir.join(format!("ckpt_step{}.somt", state.cycle)), &state)?;
            }
        }

        // phase boundary: checkpoint and growth snapshot
        save_checkpoint(&out_dir.join(format!("ckpt_phase{}.somt", state.phase_idx)), &state)?;
        if cfg.snapshot_count > 0 {
            write_snapshot(cfg, &state, out_dir, state.phase_idx, phase.level)?;
        }
        state.phase_idx += 1;
        state.in_phase_images = 0;
    }

    let final_path = out_dir.join("ckpt_final.somt");
    save_checkpoint(&final_path, &state)?;
    somt::atomic_write(&out_dir.join("log.csv"), log.to_csv().as_bytes())?;
    Ok(TrainOutcome { log, final_checkpoint: final_path })
}

/// One optimizer cycle: `d_steps` discriminator updates then one generator
/// update. Returns (last discriminator loss, generator loss).
fn run_cycle(
    cfg: &TrainConfig,
    state: &mut Checkpoint,
    pyramid: &RealPyramid,
    sigma_k: f64,
    fade: &FadeState,
    batch: usize,
) -> Result<(f64, f64)> {
    let full_level = pyramid.full_level();
    let mut last_loss_d = f64::NAN;

    for _ in 0..cfg.d_steps {
        // real batch
        let indices: Vec<usize> =
            (0..batch).map(|_| state.rng.random_range(0..pyramid.count())).collect();
        let real = pyramid.batch(fade.level, &indices)?;

        // fake batch through the measurement path, detached from G
        let z = normal_batch(&[batch, cfg.latent_dim], &mut state.rng);
        let fake = {
            let mut g = Graph::inference();
            let sp = state.gen.stage(&mut g);
            let zid = g.input(z);
            let img = state.gen.forward(&mut g, &sp, zid, fade)?;
            let rec = synth_measurement_path(&mut g, img, full_level, sigma_k, &mut state.rng)?;
            g.value(rec).clone()
        };

        // discriminator update
        let mut g = Graph::new();
        let sp = state.disc.stage(&mut g);
        let real_id = g.input(real);
        let fake_id = g.input(fake);
        let real_scores = state.disc.forward(&mut g, &sp, real_id, fade)?;
        let fake_scores = state.disc.forward(&mut g, &sp, fake_id, fade)?;
        let loss = loss_discriminator(&mut g, cfg.loss, real_scores, fake_scores)?;
        last_loss_d = g.value(loss).scalar_value()?;
        let grads = g.backward(loss)?;
        let grad_list: Vec<Tensor> = sp.ids.iter().map(|&id| grads.get(id)).collect();
        let names = state.disc.params.names().to_vec();
        adam_step(state.disc.params.tensors_mut(), &grad_list, &names, &mut state.adam_d)?;
        if cfg.loss == LossVariant::WganClip {
            for t in state.disc.params.tensors_mut() {
                t.clamp_inplace(cfg.clip);
            }
        }
    }

    // generator update
    let z = normal_batch(&[batch, cfg.latent_dim], &mut state.rng);
    let mut g = Graph::new();
    let spg = state.gen.stage(&mut g);
    let spd = state.disc.stage(&mut g);
    let zid = g.input(z);
    let img = state.gen.forward(&mut g, &spg, zid, fade)?;
    let rec = synth_measurement_path(&mut g, img, full_level, sigma_k, &mut state.rng)?;
    let fake_scores = state.disc.forward(&mut g, &spd, rec, fade)?;
    let loss = loss_generator(&mut g, cfg.loss, fake_scores)?;
    let loss_g = g.value(loss).scalar_value()?;
    let grads = g.backward(loss)?;
    let grad_list: Vec<Tensor> = spg.ids.iter().map(|&id| grads.get(id)).collect();
    let names = state.gen.params.names().to_vec();
    adam_step(state.gen.params.tensors_mut(), &grad_list, &names, &mut state.adam_g)?;

    Ok((last_loss_d, loss_g))
}

fn write_snapshot(
    cfg: &TrainConfig,
    state: &Checkpoint,
    out_dir: &Path,
    phase_idx: usize,
    level: usize,
) -> Result<()> {
    let res = crate::proagan::resolution(level);
    let mut zrng = rng::substream(cfg.seed, "snapshot", phase_idx as u64);
    let z = normal_batch(&[cfg.snapshot_count, cfg.latent_dim], &mut zrng);
    let imgs = state.gen.generate(&z, &FadeState::stabilized(level))?;
    let path = out_dir.join(format!("growth_phase{phase_idx}_{res}x{res}.pgm"));
    let provenance = format!("phase={phase_idx}\nlevel={level}\nseed={}\n", cfg.seed);
    pgm::write_grid(&path, imgs.f32_data(), res, cfg.snapshot_count, &provenance)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpoint persistence
// ---------------------------------------------------------------------------

fn meta_map_to_text(m: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (k, v) in m {
        out.push_str(k);
        out.push('=');
        out.push_str(v);
        out.push('\n');
    }
    out
}

fn text_to_meta_map(text: &str) -> Result<BTreeMap<String, String>> {
    let mut m = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("checkpoint meta: bad line '{line}'")))?;
        m.insert(k.to_string(), v.to_string());
    }
    Ok(m)
}

pub fn save_checkpoint(path: &Path, state: &Checkpoint) -> Result<()> {
    let mut meta = state.cfg.echo();
    meta.insert("ckpt_version".into(), "1".into());
    meta.insert("phase_idx".into(), state.phase_idx.to_string());
    meta.insert("in_phase_images".into(), state.in_phase_images.to_string());
    meta.insert("images_total".into(), state.images_total.to_string());
    meta.insert("cycle".into(), state.cycle.to_string());
    meta.insert("rng".into(), rng::state_to_hex(&state.rng));
    meta.insert("level".into(), state.gen.level.to_string());
    meta.insert("adam_g_t".into(), state.adam_g.t.to_string());
    meta.insert("adam_d_t".into(), state.adam_d.t.to_string());
    meta.insert("dataset_n".into(), state.dataset_n.to_string());
    meta.insert("out_mid".into(), format!("{:?}", state.out_mid));
    meta.insert("out_half".into(), format!("{:?}", state.out_half));

    let mut tensors: Vec<(String, TensorEntry)> =
        vec![("meta".into(), somt::encode_meta(&meta_map_to_text(&meta), 1))];
    let push_params = |tensors: &mut Vec<(String, TensorEntry)>, prefix: &str,
                       names: &[String], ts: &[Tensor]| {
        for (name, t) in names.iter().zip(ts) {
            tensors.push((
                format!("{prefix}{name}"),
                TensorEntry::F32 { shape: t.shape().to_vec(), data: t.f32_data().to_vec() },
            ));
        }
    };
    push_params(&mut tensors, "", state.gen.params.names(), state.gen.params.tensors());
    push_params(&mut tensors, "", state.disc.params.names(), state.disc.params.tensors());
    push_params(&mut tensors, "adam.m.", state.gen.params.names(), &state.adam_g.m);
    push_params(&mut tensors, "adam.v.", state.gen.params.names(), &state.adam_g.v);
    push_params(&mut tensors, "adam.m.", state.disc.params.names(), &state.adam_d.m);
    push_params(&mut tensors, "adam.v.", state.disc.params.names(), &state.adam_d.v);
    somt::save_tensors(path, &tensors)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let tensors = somt::load_tensors(path)?;
    let meta = text_to_meta_map(&somt::decode_meta(somt::find(&tensors, "meta")?)?)?;
    let get = |k: &str| -> Result<&String> {
        meta.get(k).ok_or_else(|| Error::Format(format!("checkpoint meta: missing '{k}'")))
    };
    let parse_u = |k: &str| -> Result<u64> {
        get(k)?.parse().map_err(|_| Error::Format(format!("checkpoint meta: bad int '{k}'")))
    };
    let parse_f = |k: &str| -> Result<f64> {
        get(k)?.parse().map_err(|_| Error::Format(format!("checkpoint meta: bad float '{k}'")))
    };

    let cfg = TrainConfig {
        schedule: ProgressiveSchedule::parse(get("schedule")?)?,
        batch_per_phase: get("batch")?
            .split(',')
            .map(|s| s.parse().map_err(|_| Error::Format("checkpoint meta: bad batch".into())))
            .collect::<Result<_>>()?,
        d_steps: parse_u("d_steps")? as usize,
        loss: LossVariant::parse(get("loss")?)?,
        adam: AdamConfig {
            lr: parse_f("adam_lr")?,
            beta1: parse_f("adam_beta1")?,
            beta2: parse_f("adam_beta2")?,
            epsilon: parse_f("adam_epsilon")?,
        },
        clip: parse_f("clip")?,
        seed: parse_u("seed")?,
        checkpoint_interval: parse_u("checkpoint_interval")?,
        latent_dim: parse_u("latent_dim")? as usize,
        base_channels: parse_u("base_channels")? as usize,
        max_channels: parse_u("max_channels")? as usize,
        use_eqlr: get("use_eqlr")? == "true",
        use_mbstd: get("use_mbstd")? == "true",
        deterministic: get("deterministic")? == "true",
        snapshot_count: parse_u("snapshot_count")? as usize,
    };
    let dataset_n = parse_u("dataset_n")? as usize;
    let out_mid = parse_f("out_mid")?;
    let out_half = parse_f("out_half")?;
    let level = parse_u("level")? as usize;
    let data_level = crate::proagan::level_of(dataset_n)?;

    // rebuild nets structurally, then overwrite every parameter by name
    let ncfg = net_config(&cfg, data_level, out_mid, out_half);
    let mut scratch = rng::substream(0, "ckpt-load", 0);
    let mut gen = Generator::new(ncfg.clone(), level, &mut scratch)?;
    let mut disc = Discriminator::new(ncfg, level, &mut scratch)?;

    let fetch = |name: &str| -> Result<Tensor> {
        match somt::find(&tensors, name)? {
            TensorEntry::F32 { shape, data } => Ok(Tensor::from_f32(shape, data.clone())),
            _ => Err(Error::Format(format!("checkpoint tensor '{name}' is not f32"))),
        }
    };
    for name in gen.params.names().to_vec() {
        gen.params.set(&name, fetch(&name)?)?;
    }
    for name in disc.params.names().to_vec() {
        disc.params.set(&name, fetch(&name)?)?;
    }
    let load_moments = |names: &[String]| -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let m = names.iter().map(|n| fetch(&format!("adam.m.{n}"))).collect::<Result<_>>()?;
        let v = names.iter().map(|n| fetch(&format!("adam.v.{n}"))).collect::<Result<_>>()?;
        Ok((m, v))
    };
    let (gm, gv) = load_moments(gen.params.names())?;
    let (dm, dv) = load_moments(disc.params.names())?;
    let adam_g = AdamState { cfg: cfg.adam, t: parse_u("adam_g_t")?, m: gm, v: gv };
    let adam_d = AdamState { cfg: cfg.adam, t: parse_u("adam_d_t")?, m: dm, v: dv };

    Ok(Checkpoint {
        rng: rng::state_from_hex(get("rng")?)?,
        phase_idx: parse_u("phase_idx")? as usize,
        in_phase_images: parse_u("in_phase_images")?,
        images_total: parse_u("images_total")?,
        cycle: parse_u("cycle")?,
        cfg,
        gen,
        disc,
        adam_g,
        adam_d,
        dataset_n,
        out_mid,
        out_half,
    })
}

/// Draw `count` samples from a checkpointed generator at its current level
/// with alpha forced to 1. Returns `[count, n, n]` images.
pub fn sample(ckpt: &Checkpoint, count: usize, seed: u64) -> Result<Tensor> {
    let level = ckpt.gen.level;
    let res = crate::proagan::resolution(level);
    let mut rng = rng::substream(seed, "sample", 0);
    let fade = FadeState::stabilized(level);
    let batch = 64.min(count.max(1));
    let mut out = Vec::with_capacity(count * res * res);
    let mut done = 0;
    while done < count {
        let b = batch.min(count - done);
        let z = normal_batch(&[b, ckpt.cfg.latent_dim], &mut rng);
        let imgs = ckpt.gen.generate(&z, &fade)?;
        out.extend_from_slice(imgs.f32_data());
        done += b;
    }
    Ok(Tensor::from_f32(&[count, res, res], out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::NoiseModel;
    use crate::objects::{build_dataset, LumpyParams};

    fn tiny_dataset(n: usize, count: usize, sigma_k: f64) -> Dataset {
        let p = LumpyParams { nbar: 8.0, amplitude: 1.0, width: 1.2, n };
        build_dataset(&p, count, &NoiseModel::new(sigma_k).unwrap(), 1234).unwrap()
    }

    fn tiny_config(schedule: &str, loss: LossVariant) -> TrainConfig {
        let schedule = ProgressiveSchedule::parse(schedule).unwrap();
        let batch_per_phase = vec![8; schedule.phases.len()];
        TrainConfig {
            schedule,
            batch_per_phase,
            d_steps: loss.default_d_steps().min(2),
            loss,
            adam: AdamConfig { lr: 1e-3, beta1: 0.0, beta2: 0.99, epsilon: 1e-8 },
            clip: 0.01,
            seed: 7,
            checkpoint_interval: 0,
            latent_dim: 8,
            base_channels: 4,
            max_channels: 16,
            use_eqlr: false,
            use_mbstd: false,
            deterministic: true,
            snapshot_count: 4,
        }
    }

    #[test]
    fn smoke_run_completes_and_accounts_images() {
        let ds = tiny_dataset(8, 16, 0.1);
        let cfg = tiny_config("4:0:32,8:16:16", LossVariant::LogisticNs);
        let dir = tempfile::tempdir().unwrap();
        let out = train_with_dataset(&cfg, &ds, dir.path(), None).unwrap();

        // images accounting: schedule total equals final counter
        let total = cfg.schedule.total_images();
        assert_eq!(out.log.records.last().unwrap().images_shown, total);

        // alpha trajectory within phase 1: shown/fade, clipped at 1
        for r in out.log.records.iter().filter(|r| r.level == 1) {
            assert!((0.0..=1.0).contains(&r.alpha));
        }
        // all losses finite
        assert!(out.log.records.iter().all(|r| r.loss_d.is_finite() && r.loss_g.is_finite()));

        // final generator emits at the top resolution
        let ckpt = load_checkpoint(&out.final_checkpoint).unwrap();
        let imgs = sample(&ckpt, 3, 5).unwrap();
        assert_eq!(imgs.shape(), &[3, 8, 8]);

        // growth snapshots exist per phase
        assert!(dir.path().join("growth_phase0_4x4.pgm").exists());
        assert!(dir.path().join("growth_phase1_8x8.pgm").exists());
    }

    #[test]
    fn deterministic_mode_reproduces_bitwise() {
        let ds = tiny_dataset(8, 12, 0.05);
        let cfg = tiny_config("4:0:24,8:8:8", LossVariant::LogisticNs);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        train_with_dataset(&cfg, &ds, d1.path(), None).unwrap();
        train_with_dataset(&cfg, &ds, d2.path(), None).unwrap();
        let a = std::fs::read(d1.path().join("log.csv")).unwrap();
        let b = std::fs::read(d2.path().join("log.csv")).unwrap();
        assert_eq!(a, b);
        let ca = std::fs::read(d1.path().join("ckpt_final.somt")).unwrap();
        let cb = std::fs::read(d2.path().join("ckpt_final.somt")).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn checkpoint_save_load_save_is_byte_identical() {
        let ds = tiny_dataset(8, 12, 0.05);
        let cfg = tiny_config("4:0:16", LossVariant::WganClip);
        let dir = tempfile::tempdir().unwrap();
        let out = train_with_dataset(&cfg, &ds, dir.path(), None).unwrap();
        let ckpt = load_checkpoint(&out.final_checkpoint).unwrap();
        let again = dir.path().join("resaved.somt");
        save_checkpoint(&again, &ckpt).unwrap();
        assert_eq!(
            std::fs::read(&out.final_checkpoint).unwrap(),
            std::fs::read(&again).unwrap()
        );
    }

    #[test]
    fn resume_from_phase_boundary_matches_uninterrupted_run() {
        let ds = tiny_dataset(8, 12, 0.05);
        let full_cfg = tiny_config("4:0:24,8:8:8", LossVariant::LogisticNs);

        // uninterrupted run
        let d_full = tempfile::tempdir().unwrap();
        let full = train_with_dataset(&full_cfg, &ds, d_full.path(), None).unwrap();

        // run the same schedule but resume from the phase-0 boundary
        let d_a = tempfile::tempdir().unwrap();
        train_with_dataset(&full_cfg, &ds, d_a.path(), None).unwrap();
        let boundary = load_checkpoint(&d_a.path().join("ckpt_phase0.somt")).unwrap();
        let d_b = tempfile::tempdir().unwrap();
        let resumed =
            train_with_dataset(&full_cfg, &ds, d_b.path(), Some(boundary)).unwrap();

        // continuation losses equal the uninterrupted run's phase-1 records
        let full_phase1: Vec<&LogRecord> =
            full.log.records.iter().filter(|r| r.level == 1).collect();
        let resumed_phase1: Vec<&LogRecord> =
            resumed.log.records.iter().filter(|r| r.level == 1).collect();
        assert_eq!(full_phase1.len(), resumed_phase1.len());
        for (a, b) in full_phase1.iter().zip(&resumed_phase1) {
            assert_eq!(a.loss_d, b.loss_d);
            assert_eq!(a.loss_g, b.loss_g);
            assert_eq!(a.alpha, b.alpha);
        }
        // and the final checkpoints agree byte for byte
        assert_eq!(
            std::fs::read(&full.final_checkpoint).unwrap(),
            std::fs::read(&resumed.final_checkpoint).unwrap()
        );
    }

    #[test]
    fn wgan_clip_bounds_discriminator_weights() {
        let ds = tiny_dataset(8, 12, 0.05);
        let cfg = tiny_config("4:0:16", LossVariant::WganClip);
        let dir = tempfile::tempdir().unwrap();
        let out = train_with_dataset(&cfg, &ds, dir.path(), None).unwrap();
        let ckpt = load_checkpoint(&out.final_checkpoint).unwrap();
        for t in ckpt.disc.params.tensors() {
            assert!(t.max_abs() <= cfg.clip + 1e-9);
        }
    }

    #[test]
    fn schedule_above_dataset_resolution_rejected() {
        let ds = tiny_dataset(8, 8, 0.05);
        let cfg = tiny_config("4:0:8,8:4:4,16:4:4", LossVariant::LogisticNs);
        let dir = tempfile::tempdir().unwrap();
        let err = train_with_dataset(&cfg, &ds, dir.path(), None).unwrap_err();
        assert!(err.to_string().contains("exceeds dataset level"));
    }

    #[test]
    fn nan_abort_dumps_failure_checkpoint() {
        let ds = tiny_dataset(8, 12, 0.05);
        let mut cfg = tiny_config("4:0:64", LossVariant::WganClip);
        cfg.adam.lr = 1e18; // force divergence
        cfg.clip = f64::INFINITY;
        let dir = tempfile::tempdir().unwrap();
        let err = train_with_dataset(&cfg, &ds, dir.path(), None);
        match err {
            Err(Error::Numeric(msg)) => {
                assert!(dir.path().join("ckpt_failure.somt").exists(), "{msg}");
            }
            other => panic!("expected numeric abort, got {other:?}"),
        }
    }

    #[test]
    fn sample_is_seed_deterministic_and_in_range() {
        let ds = tiny_dataset(8, 12, 0.05);
        let cfg = tiny_config("4:0:16", LossVariant::LogisticNs);
        let dir = tempfile::tempdir().unwrap();
        let out = train_with_dataset(&cfg, &ds, dir.path(), None).unwrap();
        let ckpt = load_checkpoint(&out.final_checkpoint).unwrap();
        let a = sample(&ckpt, 5, 11).unwrap();
        let b = sample(&ckpt, 5, 11).unwrap();
        assert_eq!(a.f32_data(), b.f32_data());
        let (lo, hi) = (
            (ckpt.out_mid - ckpt.out_half) as f32 - 1e-4,
            (ckpt.out_mid + ckpt.out_half) as f32 + 1e-4,
        );
        assert!(a.f32_data().iter().all(|&v| v >= lo && v <= hi));
    }
}
