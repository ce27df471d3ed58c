//! Binary signatures: random-hyperplane sketches of context vectors, Hamming
//! embedding of local descriptors, and popcount distance kernels.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::datastore::{eof_as_truncated, expect_eof, read_magic};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vocab::Vocabulary;
use crate::DESC_DIM;

pub const LSH_MAGIC: [u8; 4] = *b"DLSH";
/// Signature length used for both local and context signatures.
pub const DEFAULT_BITS: usize = 128;

/// Packed bit string whose length is a multiple of 64.
///
/// Bit `j` lives in word `j / 64` at position `j % 64`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitSignature {
    words: Vec<u64>,
}

impl BitSignature {
    pub fn zeros(bits: usize) -> Result<Self> {
        if bits == 0 || !bits.is_multiple_of(64) {
            return Err(Error::InvalidConfig(format!("signature length {bits} is not a positive multiple of 64")));
        }
        Ok(Self { words: vec![0; bits / 64] })
    }

    pub fn from_words(words: Vec<u64>) -> Self {
        Self { words }
    }

    pub fn bits(&self) -> usize {
        self.words.len() * 64
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, j: usize) -> bool {
        self.words[j / 64] >> (j % 64) & 1 == 1
    }

    pub fn set(&mut self, j: usize, value: bool) {
        let mask = 1u64 << (j % 64);
        if value {
            self.words[j / 64] |= mask;
        } else {
            self.words[j / 64] &= !mask;
        }
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn complement(&self) -> Self {
        Self { words: self.words.iter().map(|w| !w).collect() }
    }

    /// Packed size in bytes.
    pub fn byte_len(&self) -> usize {
        self.words.len() * 8
    }

    /// Fixed-width view for 128-bit signatures.
    pub fn as_128(&self) -> Option<[u64; 2]> {
        self.words.as_slice().try_into().ok()
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.words.iter().flat_map(|w| w.to_le_bytes()).collect()
    }
}

/// Hamming distance between two signatures of equal length.
pub fn hamming(a: &BitSignature, b: &BitSignature) -> Result<u32> {
    if a.bits() != b.bits() {
        return Err(Error::LengthMismatch(a.bits(), b.bits()));
    }
    Ok(hamming_words(&a.words, &b.words))
}

#[inline]
pub fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[inline]
pub fn hamming128(a: &[u64; 2], b: &[u64; 2]) -> u32 {
    (a[0] ^ b[0]).count_ones() + (a[1] ^ b[1]).count_ones()
}

/// Bank of Gaussian random hyperplanes for sign-of-projection sketches.
#[derive(Debug, Clone, PartialEq)]
pub struct LshBank {
    dim: usize,
    bits: usize,
    seed: Option<u64>,
    hyperplanes: Vec<f64>,
}

impl LshBank {
    /// Draws `bits` hyperplanes from N(0, I) with a ChaCha20 stream seeded
    /// by `seed`, row by row.
    pub fn new(dim: usize, bits: usize, seed: u64) -> Result<Self> {
        BitSignature::zeros(bits)?;
        if dim == 0 {
            return Err(Error::InvalidConfig("LSH dimension must be positive".into()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let hyperplanes = (0..bits * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok(Self { dim, bits, seed: Some(seed), hyperplanes })
    }

    /// Bank with explicit hyperplanes. It cannot be saved, since the file
    /// only records the seed.
    pub fn from_hyperplanes(rows: &[Vec<f64>]) -> Result<Self> {
        let bits = rows.len();
        BitSignature::zeros(bits)?;
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim || r.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidConfig("hyperplanes must be finite and equally sized".into()));
        }
        Ok(Self { dim, bits, seed: None, hyperplanes: rows.concat() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn hyperplane(&self, j: usize) -> &[f64] {
        &self.hyperplanes[j * self.dim..(j + 1) * self.dim]
    }

    /// Bit `j` is set iff `r_j . v >= 0`.
    pub fn sketch<T: Scalar>(&self, v: &[T]) -> Result<BitSignature> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: v.len() });
        }
        let wide: Vec<f64> = v.iter().map(|x| x.to_f64_lossy()).collect();
        let mut sig = BitSignature::zeros(self.bits)?;
        for j in 0..self.bits {
            let dot: f64 = self.hyperplane(j).iter().zip(&wide).map(|(r, x)| r * x).sum();
            if dot >= 0.0 {
                sig.set(j, true);
            }
        }
        Ok(sig)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let seed =
            self.seed.ok_or_else(|| Error::InvalidConfig("bank built from explicit hyperplanes has no seed".into()))?;
        w.write_all(&LSH_MAGIC)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_u32::<LittleEndian>(self.bits as u32)?;
        w.write_u64::<LittleEndian>(seed)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        read_magic(r, LSH_MAGIC)?;
        let trunc = eof_as_truncated("LSH header");
        let dim = r.read_u32::<LittleEndian>().map_err(&trunc)? as usize;
        let bits = r.read_u32::<LittleEndian>().map_err(&trunc)? as usize;
        let seed = r.read_u64::<LittleEndian>().map_err(&trunc)?;
        expect_eof(r)?;
        Self::new(dim, bits, seed)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// Hamming-embedding model: an orthonormal projection of rootSIFT vectors
/// and per-word median thresholds on each projected component.
#[derive(Debug, Clone, PartialEq)]
pub struct HeModel {
    bits: usize,
    projection: Vec<f32>,
    thresholds: Vec<f32>,
}

/// Largest `f32` not above `v`, so that `v >= threshold` survives storage.
fn f32_at_or_below(v: f64) -> f32 {
    let t = v as f32;
    if (t as f64) > v {
        t.next_down()
    } else {
        t
    }
}

/// Row-orthonormal `rows x DESC_DIM` Gaussian matrix, rounded to `f32`.
fn orthonormal_projection(rows: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut m: Vec<Vec<f64>> =
        (0..rows).map(|_| (0..DESC_DIM).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    for i in 0..rows {
        // Two passes of modified Gram-Schmidt keep rows orthogonal to ~1e-15.
        for _ in 0..2 {
            for j in 0..i {
                let dot: f64 = m[i].iter().zip(&m[j]).map(|(a, b)| a * b).sum();
                let (head, tail) = m.split_at_mut(i);
                for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                    *a -= dot * b;
                }
            }
        }
        let norm = m[i].iter().map(|a| a * a).sum::<f64>().sqrt();
        m[i].iter_mut().for_each(|a| *a /= norm);
    }
    m.into_iter().flatten().map(|x| x as f32).collect()
}

fn median_upper(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}

impl HeModel {
    /// Trains thresholds on rootSIFT descriptors quantized to their nearest
    /// word. Each threshold is the upper median of its component, so exactly
    /// `ceil(n / 2)` of `n` distinct training values map to 1. Words without
    /// training data use the medians over all descriptors.
    pub fn train(vocab: &Vocabulary, training: &[[f32; DESC_DIM]], bits: usize, seed: u64) -> Result<Self> {
        if training.is_empty() {
            return Err(Error::NoTrainingData);
        }
        BitSignature::zeros(bits)?;
        if bits > DESC_DIM {
            return Err(Error::InvalidConfig(format!("at most {DESC_DIM} orthonormal projections, got {bits}")));
        }
        let mut model = Self { bits, projection: orthonormal_projection(bits, seed), thresholds: Vec::new() };

        let words: Vec<u32> = training.par_iter().map(|d| vocab.nearest(d).0).collect();
        let projected: Vec<Vec<f64>> = training.par_iter().map(|d| model.project(d)).collect();

        let k = vocab.len();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &w) in words.iter().enumerate() {
            members[w as usize].push(i);
        }
        let medians_of = |idx: &mut dyn Iterator<Item = usize>| -> Vec<f32> {
            let idx: Vec<usize> = idx.collect();
            (0..bits)
                .map(|j| {
                    let mut col: Vec<f64> = idx.iter().map(|&i| projected[i][j]).collect();
                    f32_at_or_below(median_upper(&mut col))
                })
                .collect()
        };
        let global = medians_of(&mut (0..training.len()));
        let mut thresholds = Vec::with_capacity(k * bits);
        for m in &members {
            if m.is_empty() {
                thresholds.extend_from_slice(&global);
            } else {
                thresholds.extend(medians_of(&mut m.iter().copied()));
            }
        }
        model.thresholds = thresholds;
        Ok(model)
    }

    pub fn from_parts(bits: usize, projection: Vec<f32>, thresholds: Vec<f32>) -> Result<Self> {
        BitSignature::zeros(bits)?;
        if projection.len() != bits * DESC_DIM || !thresholds.len().is_multiple_of(bits) {
            return Err(Error::DimensionMismatch { expected: bits * DESC_DIM, found: projection.len() });
        }
        if projection.iter().chain(&thresholds).any(|x| !x.is_finite()) {
            return Err(Error::InvalidRecord("non-finite HE parameters".into()));
        }
        Ok(Self { bits, projection, thresholds })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn word_count(&self) -> usize {
        self.thresholds.len() / self.bits
    }

    pub fn projection_row(&self, j: usize) -> &[f32] {
        &self.projection[j * DESC_DIM..(j + 1) * DESC_DIM]
    }

    pub fn thresholds(&self, word: u32) -> Option<&[f32]> {
        let w = word as usize;
        (w < self.word_count()).then(|| &self.thresholds[w * self.bits..(w + 1) * self.bits])
    }

    pub fn project(&self, d: &[f32; DESC_DIM]) -> Vec<f64> {
        (0..self.bits).map(|j| self.projection_row(j).iter().zip(d).map(|(p, x)| *p as f64 * *x as f64).sum()).collect()
    }

    /// Bit `j` is set iff the `j`-th projection reaches the word's threshold.
    pub fn signature(&self, d: &[f32; DESC_DIM], word: u32) -> Result<BitSignature> {
        let thresholds = self.thresholds(word).ok_or(Error::UnknownWord(word))?;
        let mut sig = BitSignature::zeros(self.bits)?;
        for (j, (v, t)) in self.project(d).into_iter().zip(thresholds).enumerate() {
            if v >= *t as f64 {
                sig.set(j, true);
            }
        }
        Ok(sig)
    }

    /// Appends `bits u32 | projection | thresholds` (all `f32`).
    pub fn write_payload<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_u32::<LittleEndian>(self.bits as u32)?;
        for &x in self.projection.iter().chain(&self.thresholds) {
            w.write_f32::<LittleEndian>(x)?;
        }
        Ok(())
    }

    pub fn read_payload<R: Read>(r: &mut R, words: usize) -> Result<Self> {
        let trunc = eof_as_truncated("HE payload");
        let bits = r.read_u32::<LittleEndian>().map_err(&trunc)? as usize;
        BitSignature::zeros(bits)?;
        let mut read_vec = |n: usize| -> Result<Vec<f32>> {
            let mut v = vec![0f32; n];
            r.read_f32_into::<LittleEndian>(&mut v).map_err(&trunc)?;
            Ok(v)
        };
        let projection = read_vec(bits * DESC_DIM)?;
        let thresholds = read_vec(words * bits)?;
        Self::from_parts(bits, projection, thresholds)
    }
}
