//! Synthetic datasets of near-duplicate image groups plus distractors.
//!
//! Every group starts from a base image: keypoints drawn around a shared
//! pool of prototype descriptors (so visual words recur across images and
//! within an image), and 81 heavy-tailed context vectors. Members are the
//! base plus Gaussian noise on descriptors and contexts. Distractors are
//! independent base images.
//!
//! Independent random streams feed structure, descriptor noise and context
//! noise, so changing one noise level leaves the other draws untouched.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::datastore::{GroundTruth, ImageRecord, RawKeypoint};
use crate::error::{Error, Result};
use crate::{CONTEXT_SLOTS, DESC_DIM};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_groups: usize,
    pub group_size: usize,
    pub keypoints: usize,
    pub context_dim: usize,
    /// Standard deviation of member descriptor noise, in byte units.
    pub descriptor_noise: f64,
    /// Standard deviation of member context noise, relative to the RMS of
    /// the base context vector.
    pub context_noise: f64,
    pub distractors: usize,
    /// Size of the shared prototype pool.
    pub prototypes: usize,
    /// Spread of base keypoints around their prototype, in byte units.
    pub word_spread: f64,
    /// Probability that a keypoint reuses the previous keypoint's prototype.
    pub burst: f64,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_groups: 200,
            group_size: 4,
            keypoints: 20,
            context_dim: 64,
            descriptor_noise: 60.0,
            context_noise: 0.15,
            distractors: 500,
            prototypes: 24,
            word_spread: 40.0,
            burst: 0.15,
            width: 640,
            height: 480,
            seed: 2015,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_groups", self.n_groups),
            ("group_size", self.group_size),
            ("keypoints", self.keypoints),
            ("context_dim", self.context_dim),
            ("prototypes", self.prototypes),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("image extent must be positive".into()));
        }
        let noise_ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(noise_ok(self.descriptor_noise) && noise_ok(self.context_noise) && noise_ok(self.word_spread)) {
            return Err(Error::InvalidConfig("noise levels must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.burst) {
            return Err(Error::InvalidConfig("burst must be a probability".into()));
        }
        Ok(())
    }

    pub fn total_images(&self) -> usize {
        self.n_groups * self.group_size + self.distractors
    }
}

struct BaseImage {
    keypoints: Vec<(f32, f32, [f64; DESC_DIM])>,
    contexts: Vec<f64>,
    context_rms: Vec<f64>,
}

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn to_bytes(d: &[f64; DESC_DIM]) -> [u8; DESC_DIM] {
    let mut out = d.map(|x| x.round().clamp(0.0, 255.0) as u8);
    if out.iter().all(|&b| b == 0) {
        out[0] = 1;
    }
    out
}

/// Gaussian scaled by a log-normal factor: symmetric with heavy tails.
fn heavy_tailed(rng: &mut ChaCha20Rng) -> f64 {
    let g: f64 = StandardNormal.sample(rng);
    let s: f64 = StandardNormal.sample(rng);
    g * (0.5 * s).exp()
}

fn base_image(
    cfg: &SynthConfig,
    prototypes: &[[f64; DESC_DIM]],
    rng: &mut ChaCha20Rng,
    ctx_rng: &mut ChaCha20Rng,
) -> BaseImage {
    let spread = Normal::new(0.0, cfg.word_spread).expect("valid spread");
    let mut proto = rng.random_range(0..prototypes.len());
    let keypoints = (0..cfg.keypoints)
        .map(|_| {
            if rng.random::<f64>() >= cfg.burst {
                proto = rng.random_range(0..prototypes.len());
            }
            let x = rng.random::<f32>() * cfg.width as f32;
            let y = rng.random::<f32>() * cfg.height as f32;
            let desc = prototypes[proto].map(|p| p + spread.sample(rng));
            // f32 rounding can land exactly on the far edge.
            (x.min(cfg.width as f32).next_down().max(0.0), y.min(cfg.height as f32).next_down().max(0.0), desc)
        })
        .collect();
    let contexts: Vec<f64> = (0..CONTEXT_SLOTS * cfg.context_dim).map(|_| heavy_tailed(ctx_rng)).collect();
    let context_rms = contexts
        .chunks_exact(cfg.context_dim)
        .map(|c| (c.iter().map(|x| x * x).sum::<f64>() / c.len() as f64).sqrt())
        .collect();
    BaseImage { keypoints, contexts, context_rms }
}

fn realize(
    cfg: &SynthConfig,
    img_id: u32,
    base: &BaseImage,
    desc_noise: &mut ChaCha20Rng,
    ctx_noise: &mut ChaCha20Rng,
) -> ImageRecord {
    let keypoints = base
        .keypoints
        .iter()
        .map(|(x, y, d)| {
            let noisy = d.map(|v| {
                let z: f64 = StandardNormal.sample(desc_noise);
                v + cfg.descriptor_noise * z
            });
            RawKeypoint { x: *x, y: *y, descriptor: to_bytes(&noisy) }
        })
        .collect();
    let contexts = base
        .contexts
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let z: f64 = StandardNormal.sample(ctx_noise);
            let mut x = (v + cfg.context_noise * base.context_rms[i / cfg.context_dim] * z) as f32;
            if x == 0.0 {
                x = f32::MIN_POSITIVE;
            }
            x
        })
        .collect();
    ImageRecord { img_id, width: cfg.width, height: cfg.height, keypoints, context_dim: cfg.context_dim, contexts }
}

/// Generates the dataset and one ground-truth line per group member.
///
/// Group `g` member `m` gets id `g * group_size + m`; distractors follow.
pub fn generate(cfg: &SynthConfig) -> Result<(Vec<ImageRecord>, GroundTruth)> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, 0);
    let mut desc_noise = stream(cfg.seed, 1);
    let mut ctx_rng = stream(cfg.seed, 2);
    let mut ctx_noise = stream(cfg.seed, 3);

    let prototypes: Vec<[f64; DESC_DIM]> = (0..cfg.prototypes)
        .map(|_| {
            std::array::from_fn(|_| {
                let u: f64 = rng.random();
                u * u * 255.0
            })
        })
        .collect();

    let mut records = Vec::with_capacity(cfg.total_images());
    let mut truth = GroundTruth::default();
    for g in 0..cfg.n_groups {
        let base = base_image(cfg, &prototypes, &mut rng, &mut ctx_rng);
        let first = (g * cfg.group_size) as u32;
        let members: BTreeSet<u32> = (first..first + cfg.group_size as u32).collect();
        for &id in &members {
            records.push(realize(cfg, id, &base, &mut desc_noise, &mut ctx_noise));
            truth.queries.push((id, members.clone()));
        }
    }
    let offset = (cfg.n_groups * cfg.group_size) as u32;
    for i in 0..cfg.distractors {
        let base = base_image(cfg, &prototypes, &mut rng, &mut ctx_rng);
        records.push(realize(cfg, offset + i as u32, &base, &mut desc_noise, &mut ctx_noise));
    }
    Ok((records, truth))
}
