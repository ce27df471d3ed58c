#![allow(dead_code)]

use std::collections::HashMap;
use std::f64::consts::PI;

use deepembed::encode::{EncodedContexts, EncodedImage};
use deepembed::normalize::root_sift_f32;
use deepembed::scoring::RegionalRule;
use deepembed::synth::{generate, SynthConfig};
use deepembed::vocab::{train_kmeans, KMeansConfig};
use deepembed::{
    ContextMode, DeepIndex, Encoder, GroundTruth, HeModel, ImageRecord, IndexConfig, LshBank, QueryConfig, SrnConfig,
};

pub struct Fixture {
    pub records: Vec<ImageRecord>,
    pub truth: GroundTruth,
    pub encoder: Encoder,
}

pub fn small_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        n_groups: 6,
        distractors: 6,
        keypoints: 24,
        context_dim: 8,
        prototypes: 24,
        seed,
        ..Default::default()
    }
}

pub fn train_encoder(records: &[ImageRecord], words: usize, seed: u64) -> Encoder {
    train_encoder_sampled(records, words, seed, 1)
}

/// Trains on every `stride`-th descriptor.
pub fn train_encoder_sampled(records: &[ImageRecord], words: usize, seed: u64, stride: usize) -> Encoder {
    let points: Vec<[f32; 128]> = records
        .iter()
        .flat_map(|r| r.keypoints.iter().map(|k| root_sift_f32(&k.descriptor).unwrap()))
        .step_by(stride)
        .collect();
    let cfg = KMeansConfig { k: words, seed, max_iters: 20, tol: 1e-4 };
    let (vocab, _) = train_kmeans(&points, &cfg).unwrap();
    let he = HeModel::train(&vocab, &points, 128, seed).unwrap();
    let lsh = LshBank::new(records[0].context_dim, 128, seed).unwrap();
    Encoder::new(vocab, he, lsh, SrnConfig::default()).unwrap()
}

pub fn fixture(cfg: &SynthConfig, words: usize) -> Fixture {
    let (records, truth) = generate(cfg).unwrap();
    let encoder = train_encoder(&records, words, cfg.seed);
    Fixture { records, truth, encoder }
}

pub fn build_index(records: &[ImageRecord], encoder: &Encoder, mode: ContextMode) -> DeepIndex {
    let mut index = DeepIndex::new(encoder.vocab.len(), IndexConfig { mode });
    for r in records {
        index.index_image(r, encoder).unwrap();
    }
    index.finalize().unwrap();
    index
}

fn popcount(a: &[u64; 2], b: &[u64; 2]) -> u32 {
    (a[0] ^ b[0]).count_ones() + (a[1] ^ b[1]).count_ones()
}

fn context_distance(a: &EncodedContexts, sa: usize, b: &EncodedContexts, sb: usize) -> f64 {
    match (a, b) {
        (EncodedContexts::Binary(x), EncodedContexts::Binary(y)) => {
            let theta = PI * popcount(&x[sa], &y[sb]) as f64 / 128.0;
            (2.0 - 2.0 * theta.cos()).max(0.0).sqrt()
        }
        (EncodedContexts::Float { dim, values: x }, EncodedContexts::Float { values: y, .. }) => {
            let (u, v) = (&x[sa * dim..(sa + 1) * dim], &y[sb * dim..(sb + 1) * dim]);
            u.iter().zip(v).map(|(p, q)| (*p as f64 - *q as f64).powi(2)).sum::<f64>().sqrt()
        }
        _ => panic!("mixed context modes"),
    }
}

/// Scores every database image against the query by enumerating all
/// keypoint pairs, without an inverted file.
pub fn oracle_scores(query: &EncodedImage, db: &[EncodedImage], cfg: &QueryConfig) -> Vec<(u32, f64)> {
    let p = &cfg.params;
    let n = db.len() as f64;
    let mut df: HashMap<u32, u32> = HashMap::new();
    for img in db {
        let mut words: Vec<u32> = img.keypoints.iter().map(|k| k.assignments[0].0).collect();
        words.sort_unstable();
        words.dedup();
        for w in words {
            *df.entry(w).or_default() += 1;
        }
    }
    let mut out = Vec::new();
    for img in db {
        let mut tf: HashMap<u32, u32> = HashMap::new();
        for k in &img.keypoints {
            *tf.entry(k.assignments[0].0).or_default() += 1;
        }
        let global = (-(context_distance(&query.contexts, 0, &img.contexts, 0) / p.theta).powi(5)).exp();
        let mut total = 0.0;
        for qk in &query.keypoints {
            for &(word, qsig) in &qk.assignments {
                for dk in &img.keypoints {
                    let (dword, dsig) = dk.assignments[0];
                    if dword != word {
                        continue;
                    }
                    let h = popcount(&qsig, &dsig);
                    let mut s = 1.0;
                    if p.levels.local {
                        s *= if h < p.kappa { (-((h * h) as f64) / (p.sigma * p.sigma)).exp() } else { 0.0 };
                    }
                    if p.levels.regional {
                        let coarse = context_distance(
                            &query.contexts,
                            1 + qk.region.coarse(),
                            &img.contexts,
                            1 + dk.region.coarse(),
                        );
                        let fine = context_distance(
                            &query.contexts,
                            17 + qk.region.fine(),
                            &img.contexts,
                            17 + dk.region.fine(),
                        );
                        let rc = (-(coarse / p.gamma).powi(3)).exp();
                        let rf = (-(fine / p.gamma).powi(3)).exp();
                        s *= match p.regional_rule {
                            RegionalRule::Multiply => rc * rf,
                            RegionalRule::Mean => 0.5 * (rc + rf),
                            RegionalRule::CoarseOnly => rc,
                            RegionalRule::FineOnly => rf,
                        };
                    }
                    if p.levels.global {
                        s *= global;
                    }
                    let idf = if cfg.idf { (n / df[&word] as f64).ln() } else { 1.0 };
                    let burst = if cfg.burstiness { 1.0 / (tf[&word].min(255) as f64).sqrt() } else { 1.0 };
                    total += idf * idf * burst * s;
                }
            }
        }
        let norm = (query.keypoints.len() as f64 * img.keypoints.len() as f64).sqrt();
        if total > 0.0 {
            out.push((img.img_id, total / norm));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

/// Largest relative disagreement between two score lists, treating scores
/// below `floor` as absent.
pub fn max_relative_gap(a: &[(u32, f64)], b: &[(u32, f64)], floor: f64) -> f64 {
    let ma: HashMap<u32, f64> = a.iter().copied().filter(|e| e.1 >= floor).collect();
    let mb: HashMap<u32, f64> = b.iter().copied().filter(|e| e.1 >= floor).collect();
    let mut worst = 0.0f64;
    for id in ma.keys().chain(mb.keys()) {
        let (x, y) = (ma.get(id).copied().unwrap_or(0.0), mb.get(id).copied().unwrap_or(0.0));
        let gap = (x - y).abs() / x.abs().max(y.abs());
        worst = worst.max(gap);
    }
    worst
}
