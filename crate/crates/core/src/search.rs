//! Query pipeline over a finalized [`DeepIndex`].
//!
//! For a query `q` and an indexed image `d`:
//!
//! ```text
//! score(q, d) = sum over same-word keypoint pairs of
//!               idf(w)^2 * burst(tf_d) * combined(pair)
//!               / sqrt(k_q * k_d)
//! ```
//!
//! where `burst(tf) = 1 / sqrt(tf)` and `combined` is the product of the
//! enabled level similarities.

use std::io::Write;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::datastore::ImageRecord;
use crate::encode::{EncodedContexts, EncodedImage};
use crate::error::{Error, Result};
use crate::geometry::GLOBAL_SLOT;
use crate::index::DeepIndex;
use crate::scoring::{combine, s_global, s_local, ContextDistance};
use crate::sketch::hamming128;
use crate::MatchParams;

pub use crate::encode::Encoder;

const SKETCH_BITS: u32 = 128;
/// Query keypoints per work unit. Fixed so that the summation order does
/// not depend on the number of threads.
const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreNorm {
    /// Divide by `sqrt(k_q * k_d)`.
    #[default]
    Sqrt,
    None,
}

impl ScoreNorm {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "sqrt" => Ok(Self::Sqrt),
            "none" => Ok(Self::None),
            other => Err(Error::InvalidConfig(format!("unknown normalization {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryConfig {
    /// Words per query keypoint.
    pub ma: usize,
    pub burstiness: bool,
    /// Weight matches by squared IDF.
    pub idf: bool,
    pub norm: ScoreNorm,
    pub params: MatchParams,
    pub top_k: usize,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self { ma: 3, burstiness: true, idf: true, norm: ScoreNorm::Sqrt, params: MatchParams::default(), top_k: 1000 }
    }
}

impl QueryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ma == 0 || self.top_k == 0 {
            return Err(Error::InvalidConfig("ma and top_k must be at least 1".into()));
        }
        self.params.validate(SKETCH_BITS)
    }
}

pub fn burst_weight(tf: u32) -> f64 {
    1.0 / (tf as f64).sqrt()
}

/// Images by descending score; equal scores by ascending id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedList {
    pub entries: Vec<(u32, f64)>,
}

impl RankedList {
    /// Sorts by the ranking rule and keeps the first `top_k`.
    pub fn from_scores(mut entries: Vec<(u32, f64)>, top_k: usize) -> Self {
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        entries.truncate(top_k);
        Self { entries }
    }

    pub fn ids(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn score_of(&self, img_id: u32) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == img_id).map(|e| e.1)
    }

    /// `rank img_id score` lines, ranks from 1.
    pub fn write_text<W: Write + ?Sized>(&self, w: &mut W) -> Result<()> {
        for (i, (id, score)) in self.entries.iter().enumerate() {
            writeln!(w, "{} {} {}", i + 1, id, score)?;
        }
        Ok(())
    }

    pub fn write_csv<W: Write + ?Sized>(&self, query: u32, w: &mut W) -> Result<()> {
        for (i, (id, score)) in self.entries.iter().enumerate() {
            writeln!(w, "{query},{},{id},{score}", i + 1)?;
        }
        Ok(())
    }
}

/// Encodes `query` with multiple assignment and ranks the indexed images.
pub fn score_query(query: &ImageRecord, index: &DeepIndex, encoder: &Encoder, cfg: &QueryConfig) -> Result<RankedList> {
    check_index(index)?;
    cfg.validate()?;
    let encoded = encoder.encode(query, cfg.ma, index.mode())?;
    score_encoded(&encoded, index, cfg)
}

fn check_index(index: &DeepIndex) -> Result<()> {
    if !index.is_finalized() {
        return Err(Error::NotFinalized);
    }
    if index.n_images() == 0 {
        return Err(Error::EmptyIndex);
    }
    Ok(())
}

/// Ranks the indexed images against an already encoded query.
pub fn score_encoded(query: &EncodedImage, index: &DeepIndex, cfg: &QueryConfig) -> Result<RankedList> {
    check_index(index)?;
    cfg.validate()?;
    if query.contexts.mode() != index.mode() {
        return Err(Error::MissingContexts(format!(
            "query carries {} contexts, index holds {}",
            query.contexts.mode().name(),
            index.mode().name()
        )));
    }
    if let EncodedContexts::Float { dim, .. } = query.contexts {
        let indexed = index.context_vector_at(0, 0).map_or(dim, <[f32]>::len);
        if indexed != dim {
            return Err(Error::DimensionMismatch { expected: indexed, found: dim });
        }
    }
    let params = &cfg.params;
    let mask = params.levels;
    let n = index.n_images();
    let global_cache: Vec<OnceLock<f64>> = (0..n).map(|_| OnceLock::new()).collect();

    let distance = |q_slot: usize, image: usize, d_slot: usize| -> ContextDistance<f64> {
        match &query.contexts {
            EncodedContexts::Binary(sigs) => ContextDistance::Sketch {
                hamming: hamming128(&sigs[q_slot], index.context_sketch_at(image, d_slot)),
                bits: SKETCH_BITS,
            },
            EncodedContexts::Float { dim, values } => {
                let q = &values[q_slot * dim..(q_slot + 1) * dim];
                let d = index.context_vector_at(image, d_slot).expect("float index");
                ContextDistance::Euclidean(euclidean(q, d))
            }
        }
    };

    let partials: Vec<Vec<(usize, f64)>> = query
        .keypoints
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc: Vec<(usize, f64)> = Vec::new();
            let mut last_image: Option<(u32, usize)> = None;
            for kp in chunk {
                for &(word, q_sig) in &kp.assignments {
                    let list = index.postings(word);
                    if list.is_empty() {
                        continue;
                    }
                    let idf = if cfg.idf { index.idf(word).expect("word in range") } else { 1.0 };
                    let word_weight = idf * idf;
                    for p in list {
                        let local = hamming128(&q_sig, &p.signature);
                        if mask.local && s_local(local, params) == 0.0 {
                            continue;
                        }
                        let image = match last_image {
                            Some((id, slot)) if id == p.img_id => slot,
                            _ => {
                                let slot = index.image_slot(p.img_id).expect("posting image indexed");
                                last_image = Some((p.img_id, slot));
                                slot
                            }
                        };
                        let region = p.region();
                        let regional = if mask.regional {
                            [
                                distance(kp.region.coarse_slot(), image, region.coarse_slot()),
                                distance(kp.region.fine_slot(), image, region.fine_slot()),
                            ]
                        } else {
                            [ContextDistance::Euclidean(0.0); 2]
                        };
                        let mut score = combine(local, &regional, ContextDistance::Euclidean(0.0), params).combined;
                        if mask.global {
                            score *= *global_cache[image].get_or_init(|| {
                                s_global(distance(GLOBAL_SLOT, image, GLOBAL_SLOT).euclidean(), params)
                            });
                        }
                        let burst = if cfg.burstiness { burst_weight(p.tf as u32) } else { 1.0 };
                        acc.push((image, word_weight * burst * score));
                    }
                }
            }
            acc
        })
        .collect();

    let mut totals = vec![0.0f64; n];
    for partial in &partials {
        for &(image, v) in partial {
            totals[image] += v;
        }
    }

    let k_q = query.keypoints.len() as f64;
    let scores: Vec<(u32, f64)> = totals
        .into_iter()
        .enumerate()
        .filter(|&(_, s)| s > 0.0)
        .map(|(image, s)| {
            let s = match cfg.norm {
                ScoreNorm::Sqrt => s / (k_q * index.keypoints_at(image) as f64).sqrt(),
                ScoreNorm::None => s,
            };
            (index.id_at(image), s)
        })
        .collect();
    Ok(RankedList::from_scores(scores, cfg.top_k))
}

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burst_values() {
        assert_eq!(burst_weight(1), 1.0);
        assert_eq!(burst_weight(4), 0.5);
        assert!((burst_weight(255) - 0.06262242910851495).abs() < 1e-15);
        assert!((burst_weight(255) - 0.06262).abs() < 1e-5);
    }

    #[test]
    fn ranking_ties_by_id() {
        let r = RankedList::from_scores(vec![(5, 1.0), (2, 1.0), (9, 3.0), (1, 0.5)], 3);
        assert_eq!(r.ids(), vec![9, 2, 5]);
        let mut out = Vec::new();
        r.write_text(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "1 9 3\n2 2 1\n3 5 1\n");
    }

    #[test]
    fn config_validation() {
        assert!(QueryConfig::default().validate().is_ok());
        assert!(QueryConfig { ma: 0, ..Default::default() }.validate().is_err());
        assert!(QueryConfig { top_k: 0, ..Default::default() }.validate().is_err());
    }
}
