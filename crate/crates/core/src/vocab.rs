//! Visual vocabulary: Lloyd k-means training, nearest-word quantization with
//! optional multiple assignment, and document-frequency statistics.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::datastore::{eof_as_truncated, expect_eof, read_magic};
use crate::error::{Error, Result};
use crate::sketch::HeModel;
use crate::DESC_DIM;

pub const VOCAB_MAGIC: [u8; 4] = *b"DVOC";

pub type Descriptor = [f32; DESC_DIM];

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    centroids: Vec<Descriptor>,
    doc_freq: Vec<u32>,
    n_images: u32,
}

#[inline]
fn sq_dist(a: &Descriptor, b: &Descriptor) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum()
}

/// Classic inverse document frequency, `ln(N / max(df, 1))`.
pub fn idf_from_counts(n_images: u32, doc_freq: u32) -> f64 {
    (n_images as f64 / doc_freq.max(1) as f64).ln()
}

impl Vocabulary {
    pub fn new(centroids: Vec<Descriptor>) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::InvalidConfig("vocabulary needs at least one word".into()));
        }
        if centroids.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidRecord("non-finite centroid".into()));
        }
        let k = centroids.len();
        Ok(Self { centroids, doc_freq: vec![0; k], n_images: 0 })
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn centroid(&self, word: u32) -> Option<&Descriptor> {
        self.centroids.get(word as usize)
    }

    pub fn centroids(&self) -> &[Descriptor] {
        &self.centroids
    }

    pub fn doc_freq(&self) -> &[u32] {
        &self.doc_freq
    }

    pub fn n_images(&self) -> u32 {
        self.n_images
    }

    /// Replaces the per-word image counts.
    pub fn set_statistics(&mut self, doc_freq: Vec<u32>, n_images: u32) -> Result<()> {
        if doc_freq.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), found: doc_freq.len() });
        }
        if let Some(df) = doc_freq.iter().find(|&&df| df > n_images) {
            return Err(Error::InvalidRecord(format!("doc freq {df} exceeds image count {n_images}")));
        }
        self.doc_freq = doc_freq;
        self.n_images = n_images;
        Ok(())
    }

    /// Counts, for every word, the images in which it occurs.
    pub fn count_statistics<'a, I>(&mut self, images: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a [u32]>,
    {
        let mut df = vec![0u32; self.len()];
        let mut seen = vec![u32::MAX; self.len()];
        let mut n = 0u32;
        for (i, words) in images.into_iter().enumerate() {
            for &w in words {
                let slot = seen.get_mut(w as usize).ok_or(Error::UnknownWord(w))?;
                if *slot != i as u32 {
                    *slot = i as u32;
                    df[w as usize] += 1;
                }
            }
            n += 1;
        }
        self.set_statistics(df, n)
    }

    pub fn idf(&self, word: u32) -> Result<f64> {
        let df = *self.doc_freq.get(word as usize).ok_or(Error::UnknownWord(word))?;
        if self.n_images == 0 {
            return Err(Error::InvalidConfig("idf requires at least one counted image".into()));
        }
        Ok(idf_from_counts(self.n_images, df))
    }

    /// Nearest word and its squared distance; ties go to the lower index.
    pub fn nearest(&self, d: &Descriptor) -> (u32, f64) {
        let mut best = (0u32, f64::INFINITY);
        for (w, c) in self.centroids.iter().enumerate() {
            let dist = sq_dist(d, c);
            if dist < best.1 {
                best = (w as u32, dist);
            }
        }
        best
    }

    /// The `ma` nearest words with Euclidean distances, ascending; ties go to
    /// the lower word index.
    pub fn quantize(&self, d: &Descriptor, ma: usize) -> Result<Vec<(u32, f64)>> {
        if ma == 0 || ma > self.len() {
            return Err(Error::MaTooLarge { ma, k: self.len() });
        }
        let mut best: Vec<(f64, u32)> = Vec::with_capacity(ma + 1);
        for (w, c) in self.centroids.iter().enumerate() {
            let dist = sq_dist(d, c);
            if best.len() == ma && dist >= best[ma - 1].0 {
                continue;
            }
            // Insert after equal distances so lower indices stay first.
            let pos = best.partition_point(|&(bd, _)| bd <= dist);
            best.insert(pos, (dist, w as u32));
            best.truncate(ma);
        }
        Ok(best.into_iter().map(|(d2, w)| (w, d2.sqrt())).collect())
    }

    pub fn write_to<W: Write>(&self, he: &HeModel, w: &mut W) -> Result<()> {
        if he.word_count() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), found: he.word_count() });
        }
        w.write_all(&VOCAB_MAGIC)?;
        w.write_u32::<LittleEndian>(self.len() as u32)?;
        w.write_u32::<LittleEndian>(DESC_DIM as u32)?;
        for &x in self.centroids.iter().flatten() {
            w.write_f32::<LittleEndian>(x)?;
        }
        for &df in &self.doc_freq {
            w.write_u32::<LittleEndian>(df)?;
        }
        w.write_u32::<LittleEndian>(self.n_images)?;
        he.write_payload(w)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<(Self, HeModel)> {
        read_magic(r, VOCAB_MAGIC)?;
        let trunc = eof_as_truncated("vocabulary");
        let k = r.read_u32::<LittleEndian>().map_err(&trunc)? as usize;
        let dim = r.read_u32::<LittleEndian>().map_err(&trunc)? as usize;
        if dim != DESC_DIM {
            return Err(Error::DimensionMismatch { expected: DESC_DIM, found: dim });
        }
        let mut flat = vec![0f32; k * DESC_DIM];
        r.read_f32_into::<LittleEndian>(&mut flat).map_err(&trunc)?;
        let centroids = flat.chunks_exact(DESC_DIM).map(|c| c.try_into().expect("chunk of DESC_DIM")).collect();
        let mut doc_freq = vec![0u32; k];
        r.read_u32_into::<LittleEndian>(&mut doc_freq).map_err(&trunc)?;
        let n_images = r.read_u32::<LittleEndian>().map_err(&trunc)?;
        let mut vocab = Self::new(centroids)?;
        vocab.set_statistics(doc_freq, n_images)?;
        let he = HeModel::read_payload(r, k)?;
        expect_eof(r)?;
        Ok((vocab, he))
    }

    pub fn save(&self, he: &HeModel, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(he, &mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, HeModel)> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once the relative WCSS improvement falls below this.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { k: 256, seed: 0, max_iters: 50, tol: 1e-4 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KMeansReport {
    /// Within-cluster sum of squares after each assignment step; the first
    /// entry is for the seeded centroids.
    pub wcss: Vec<f64>,
    pub iterations: usize,
    /// Number of empty clusters re-seeded from far points.
    pub reseeded: usize,
}

fn distinct_count(points: &[Descriptor], cap: usize) -> usize {
    let mut keys: Vec<[u32; DESC_DIM]> = points.iter().map(|p| p.map(f32::to_bits)).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len().min(cap)
}

/// k-means++ seeding on a ChaCha20 stream.
fn seed_centroids(points: &[Descriptor], k: usize, rng: &mut ChaCha20Rng) -> Vec<[f64; DESC_DIM]> {
    let widen = |p: &Descriptor| p.map(|x| x as f64);
    let mut centroids = Vec::with_capacity(k);
    let first = rng.random_range(0..points.len());
    centroids.push(widen(&points[first]));
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in nearest.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave target at the very end of the mass.
            pick.unwrap_or_else(|| nearest.iter().rposition(|&d| d > 0.0).expect("positive mass"))
        } else {
            rng.random_range(0..points.len())
        };
        let chosen = points[pick];
        for (n, p) in nearest.iter_mut().zip(points) {
            *n = n.min(sq_dist(p, &chosen));
        }
        centroids.push(widen(&chosen));
    }
    centroids
}

fn assign(points: &[Descriptor], centroids: &[[f64; DESC_DIM]]) -> Vec<(usize, f64)> {
    points
        .par_iter()
        .map(|p| {
            let mut best = (0usize, f64::INFINITY);
            for (c, centroid) in centroids.iter().enumerate() {
                let d: f64 = p
                    .iter()
                    .zip(centroid)
                    .map(|(x, y)| {
                        let t = *x as f64 - y;
                        t * t
                    })
                    .sum();
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .collect()
}

/// Lloyd k-means with k-means++ seeding.
///
/// The assignment step runs in parallel, but sums are accumulated in point
/// order, so the result does not depend on the thread count.
pub fn train_kmeans(points: &[Descriptor], cfg: &KMeansConfig) -> Result<(Vocabulary, KMeansReport)> {
    let k = cfg.k;
    if k == 0 {
        return Err(Error::InvalidConfig("k must be positive".into()));
    }
    let distinct = distinct_count(points, k);
    if distinct < k {
        return Err(Error::TooFewPoints { needed: k, got: distinct });
    }

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut report = KMeansReport::default();

    let mut assignment = assign(points, &centroids);
    report.wcss.push(assignment.iter().map(|a| a.1).sum());

    while report.iterations < cfg.max_iters {
        let mut sums = vec![[0f64; DESC_DIM]; k];
        let mut counts = vec![0usize; k];
        for (p, &(c, _)) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += *x as f64;
            }
        }
        let mut donors: Vec<usize> = Vec::new();
        let mut next_donor = 0;
        for c in 0..k {
            if counts[c] > 0 {
                let n = counts[c] as f64;
                centroids[c] = sums[c].map(|s| s / n);
                continue;
            }
            if donors.is_empty() {
                donors = (0..points.len()).collect();
                donors.sort_by(|&a, &b| assignment[b].1.total_cmp(&assignment[a].1).then(a.cmp(&b)));
            }
            let p = donors[next_donor];
            next_donor += 1;
            log::warn!("k-means: cluster {c} emptied, re-seeded from point {p}");
            centroids[c] = points[p].map(|x| x as f64);
            report.reseeded += 1;
        }
        report.iterations += 1;

        assignment = assign(points, &centroids);
        let wcss: f64 = assignment.iter().map(|a| a.1).sum();
        let prev = *report.wcss.last().expect("seeded wcss");
        report.wcss.push(wcss);
        if wcss == 0.0 || prev - wcss <= cfg.tol * prev {
            break;
        }
    }

    let centroids = centroids.into_iter().map(|c| c.map(|x| x as f32)).collect();
    Ok((Vocabulary::new(centroids)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn random_points(n: usize, seed: u64) -> Vec<Descriptor> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..n).map(|_| std::array::from_fn(|_| rng.random::<f32>())).collect()
    }

    #[test]
    fn single_cluster_is_mean() {
        let pts = random_points(37, 1);
        let (vocab, _) = train_kmeans(&pts, &KMeansConfig { k: 1, ..Default::default() }).unwrap();
        for j in 0..DESC_DIM {
            let mean = pts.iter().map(|p| p[j] as f64).sum::<f64>() / pts.len() as f64;
            assert!((vocab.centroids()[0][j] as f64 - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn k_equals_n_recovers_points() {
        let pts = random_points(12, 2);
        let (vocab, report) = train_kmeans(&pts, &KMeansConfig { k: 12, ..Default::default() }).unwrap();
        assert_eq!(*report.wcss.last().unwrap(), 0.0);
        let mut got: Vec<_> = vocab.centroids().iter().map(|c| c.map(f32::to_bits)).collect();
        let mut want: Vec<_> = pts.iter().map(|c| c.map(f32::to_bits)).collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn too_few_distinct_points() {
        let mut pts = random_points(3, 3);
        pts.push(pts[0]);
        assert!(matches!(
            train_kmeans(&pts, &KMeansConfig { k: 4, ..Default::default() }),
            Err(Error::TooFewPoints { needed: 4, got: 3 })
        ));
    }

    #[test]
    fn wcss_never_increases_and_is_deterministic() {
        let pts = random_points(400, 4);
        let cfg = KMeansConfig { k: 9, seed: 42, max_iters: 30, tol: 0.0 };
        let (a, report) = train_kmeans(&pts, &cfg).unwrap();
        for w in report.wcss.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
        let (b, _) = train_kmeans(&pts, &cfg).unwrap();
        assert_eq!(a, b);
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let (c, _) = single.install(|| train_kmeans(&pts, &cfg)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn separated_blobs() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let noise = Normal::new(0.0f32, 0.05).unwrap();
        let means: [Descriptor; 2] = [[0.2; DESC_DIM], [0.8; DESC_DIM]];
        let pts: Vec<Descriptor> =
            (0..1000).map(|i| std::array::from_fn(|j| means[i % 2][j] + noise.sample(&mut rng))).collect();
        let (vocab, _) = train_kmeans(&pts, &KMeansConfig { k: 2, seed: 7, ..Default::default() }).unwrap();
        for m in &means {
            let closest = vocab.centroids().iter().map(|c| sq_dist(c, m).sqrt()).fold(f64::INFINITY, f64::min);
            assert!(closest < 0.1, "centroid {closest} away from blob mean");
        }
    }

    #[test]
    fn quantize_examples() {
        let pts = random_points(50, 6);
        let vocab = Vocabulary::new(pts.clone()).unwrap();
        let q = vocab.quantize(&pts[7], 1).unwrap();
        assert_eq!(q, vec![(7, 0.0)]);
        let all = vocab.quantize(&pts[7], 50).unwrap();
        assert_eq!(all.len(), 50);
        assert!(all.windows(2).all(|w| w[0].1 <= w[1].1));
        assert!(matches!(vocab.quantize(&pts[0], 51), Err(Error::MaTooLarge { .. })));
        assert!(vocab.quantize(&pts[0], 0).is_err());

        let single = Vocabulary::new(vec![pts[0]]).unwrap();
        assert_eq!(single.quantize(&pts[3], 1).unwrap()[0].0, 0);
    }

    #[test]
    fn quantize_ties_prefer_lower_index() {
        let c = [0.5f32; DESC_DIM];
        let vocab = Vocabulary::new(vec![[0.0; DESC_DIM], c, c, [1.0; DESC_DIM]]).unwrap();
        let q = vocab.quantize(&c, 3).unwrap();
        assert_eq!(q.iter().map(|x| x.0).collect::<Vec<_>>(), vec![1, 2, 0]);
    }

    #[test]
    fn idf_values() {
        let mut vocab = Vocabulary::new(random_points(3, 7)).unwrap();
        vocab.set_statistics(vec![100, 1, 0], 100).unwrap();
        assert_eq!(vocab.idf(0).unwrap(), 0.0);
        assert!((vocab.idf(1).unwrap() - 4.605170185988091).abs() < 1e-12);
        assert_eq!(vocab.idf(2).unwrap(), 100f64.ln());
        assert!(matches!(vocab.idf(3), Err(Error::UnknownWord(3))));
        assert!(vocab.set_statistics(vec![101, 0, 0], 100).is_err());
    }

    #[test]
    fn idf_monotone_in_doc_freq() {
        let n = 500;
        let mut last = f64::INFINITY;
        for df in 0..=n {
            let v = idf_from_counts(n, df);
            assert!(v <= last && v >= 0.0);
            last = v;
        }
    }

    #[test]
    fn statistics_count_distinct_images() {
        let mut vocab = Vocabulary::new(random_points(4, 8)).unwrap();
        let images: [&[u32]; 3] = [&[0, 0, 1], &[1, 2], &[]];
        vocab.count_statistics(images).unwrap();
        assert_eq!(vocab.doc_freq(), &[1, 2, 1, 0]);
        assert_eq!(vocab.n_images(), 3);
    }
}
