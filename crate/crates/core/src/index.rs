//! Inverted file with per-image context tables.
//!
//! Postings carry the image id, the word's term frequency in that image, the
//! keypoint's 128-bit embedding signature and a 10-bit region pointer. The
//! 81 context signatures of an image are stored once, outside the posting
//! lists, and are reached through the image id (global slot) and the region
//! pointer (regional slots).
//!
//! File layout (little-endian):
//!
//! ```text
//! "DIDX" | version u32 | mode u8 | N u32 | K u32 | [float mode: dim u32]
//! K posting lists: word u32 | count u32 | count x (img_id u32, tf u8, region u16, sig 16 bytes)
//! N context entries: img_id u32 | 81 x 16-byte sketches (binary) or 81 x dim f32 (float)
//! ```

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::datastore::{eof_as_truncated, expect_eof, read_magic, ImageRecord};
use crate::encode::{EncodedContexts, EncodedImage, Encoder, Sig128};
use crate::error::{Error, Result};
use crate::geometry::{RegionPointer, GLOBAL_SLOT};
use crate::vocab::idf_from_counts;
use crate::CONTEXT_SLOTS;

pub const INDEX_MAGIC: [u8; 4] = *b"DIDX";
pub const INDEX_VERSION: u32 = 1;

/// How context features are held in the per-image table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ContextMode {
    /// 128-bit sketches; distances are estimated from Hamming distance.
    #[default]
    Binary,
    /// Full normalized vectors with exact Euclidean distance.
    Float,
}

impl ContextMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "binary" => Ok(Self::Binary),
            "float" => Ok(Self::Float),
            other => Err(Error::InvalidConfig(format!("unknown context mode {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Binary => "binary",
            Self::Float => "float",
        }
    }

    fn code(self) -> u8 {
        match self {
            Self::Binary => 0,
            Self::Float => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IndexConfig {
    pub mode: ContextMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub img_id: u32,
    /// Occurrences of the word in the image, saturating at 255.
    pub tf: u8,
    region: u16,
    pub signature: Sig128,
}

impl Posting {
    pub fn region(&self) -> RegionPointer {
        RegionPointer::unpack(self.region).expect("validated on insert")
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ContextStore {
    Binary(Vec<[Sig128; CONTEXT_SLOTS]>),
    Float { dim: usize, values: Vec<f32> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ImageEntry {
    img_id: u32,
    keypoints: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepIndex {
    mode: ContextMode,
    lists: Vec<Vec<Posting>>,
    images: Vec<ImageEntry>,
    slot_of: HashMap<u32, usize>,
    contexts: ContextStore,
    doc_freq: Vec<u32>,
    finalized: bool,
}

impl DeepIndex {
    pub fn new(words: usize, cfg: IndexConfig) -> Self {
        let contexts = match cfg.mode {
            ContextMode::Binary => ContextStore::Binary(Vec::new()),
            ContextMode::Float => ContextStore::Float { dim: 0, values: Vec::new() },
        };
        Self {
            mode: cfg.mode,
            lists: vec![Vec::new(); words],
            images: Vec::new(),
            slot_of: HashMap::new(),
            contexts,
            doc_freq: vec![0; words],
            finalized: false,
        }
    }

    pub fn mode(&self) -> ContextMode {
        self.mode
    }

    pub fn word_count(&self) -> usize {
        self.lists.len()
    }

    pub fn n_images(&self) -> usize {
        self.images.len()
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    /// Quantizes, signs and locates every keypoint with a single
    /// assignment, and normalizes (and sketches) the image's contexts.
    pub fn index_image(&mut self, rec: &ImageRecord, encoder: &Encoder) -> Result<()> {
        self.check_insertable(rec.img_id)?;
        let encoded = encoder.encode(rec, 1, self.mode)?;
        self.insert_encoded(encoded)
    }

    fn check_insertable(&self, img_id: u32) -> Result<()> {
        if self.finalized {
            return Err(Error::Finalized);
        }
        if self.slot_of.contains_key(&img_id) {
            return Err(Error::DuplicateImage(img_id));
        }
        Ok(())
    }

    /// Inserts an image encoded elsewhere, e.g. by a parallel worker.
    pub fn insert_encoded(&mut self, image: EncodedImage) -> Result<()> {
        self.check_insertable(image.img_id)?;
        if image.contexts.mode() != self.mode {
            return Err(Error::InvalidConfig(format!(
                "image encoded for {} contexts, index holds {}",
                image.contexts.mode().name(),
                self.mode.name()
            )));
        }
        let words = self.lists.len();
        let mut tf: HashMap<u32, u32> = HashMap::new();
        for kp in &image.keypoints {
            let [(word, _)] = kp.assignments[..] else {
                return Err(Error::InvalidRecord("indexed keypoints carry exactly one word".into()));
            };
            if word as usize >= words {
                return Err(Error::UnknownWord(word));
            }
            *tf.entry(word).or_default() += 1;
        }

        match (&mut self.contexts, image.contexts) {
            (ContextStore::Binary(table), EncodedContexts::Binary(sigs)) => {
                let sigs: [Sig128; CONTEXT_SLOTS] = sigs
                    .try_into()
                    .map_err(|v: Vec<Sig128>| Error::DimensionMismatch { expected: CONTEXT_SLOTS, found: v.len() })?;
                table.push(sigs);
            }
            (ContextStore::Float { dim, values }, EncodedContexts::Float { dim: d, values: v }) => {
                if values.is_empty() {
                    *dim = d;
                }
                if d != *dim || v.len() != CONTEXT_SLOTS * d {
                    return Err(Error::DimensionMismatch { expected: CONTEXT_SLOTS * *dim, found: v.len() });
                }
                values.extend(v);
            }
            _ => unreachable!("mode checked above"),
        }

        for kp in &image.keypoints {
            let (word, signature) = kp.assignments[0];
            self.lists[word as usize].push(Posting {
                img_id: image.img_id,
                tf: tf[&word].min(255) as u8,
                region: kp.region.pack(),
                signature,
            });
        }
        self.slot_of.insert(image.img_id, self.images.len());
        self.images.push(ImageEntry { img_id: image.img_id, keypoints: image.keypoints.len() as u32 });
        Ok(())
    }

    /// Sorts images and postings by image id and computes document
    /// frequencies. A second call is a no-op.
    pub fn finalize(&mut self) -> Result<()> {
        if self.finalized {
            return Ok(());
        }
        if self.images.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let mut order: Vec<usize> = (0..self.images.len()).collect();
        order.sort_by_key(|&i| self.images[i].img_id);
        self.images = order.iter().map(|&i| self.images[i]).collect();
        self.contexts = match &self.contexts {
            ContextStore::Binary(t) => ContextStore::Binary(order.iter().map(|&i| t[i]).collect()),
            ContextStore::Float { dim, values } => ContextStore::Float {
                dim: *dim,
                values: order
                    .iter()
                    .flat_map(|&i| &values[i * CONTEXT_SLOTS * dim..(i + 1) * CONTEXT_SLOTS * dim])
                    .copied()
                    .collect(),
            },
        };
        self.rebuild_lookup();
        for list in &mut self.lists {
            // Stable: insertion order survives within an image.
            list.sort_by_key(|p| p.img_id);
        }
        self.finalized = true;
        Ok(())
    }

    fn rebuild_lookup(&mut self) {
        self.slot_of = self.images.iter().enumerate().map(|(i, e)| (e.img_id, i)).collect();
        self.doc_freq = self
            .lists
            .iter()
            .map(|list| {
                let mut n = 0;
                let mut last = None;
                for p in list {
                    if last != Some(p.img_id) {
                        n += 1;
                        last = Some(p.img_id);
                    }
                }
                n
            })
            .collect();
    }

    pub fn postings(&self, word: u32) -> &[Posting] {
        self.lists.get(word as usize).map_or(&[], Vec::as_slice)
    }

    pub fn doc_freq(&self) -> &[u32] {
        &self.doc_freq
    }

    pub fn idf(&self, word: u32) -> Result<f64> {
        let df = *self.doc_freq.get(word as usize).ok_or(Error::UnknownWord(word))?;
        if self.images.is_empty() {
            return Err(Error::EmptyIndex);
        }
        Ok(idf_from_counts(self.images.len() as u32, df))
    }

    pub fn image_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.images.iter().map(|e| e.img_id)
    }

    /// Dense position of an image, usable with the `*_at` accessors.
    pub fn image_slot(&self, img_id: u32) -> Option<usize> {
        self.slot_of.get(&img_id).copied()
    }

    pub fn keypoint_count(&self, img_id: u32) -> Option<u32> {
        self.image_slot(img_id).map(|s| self.images[s].keypoints)
    }

    pub(crate) fn keypoints_at(&self, slot: usize) -> u32 {
        self.images[slot].keypoints
    }

    pub(crate) fn id_at(&self, slot: usize) -> u32 {
        self.images[slot].img_id
    }

    pub fn context_sketch(&self, img_id: u32, slot: usize) -> Option<&Sig128> {
        match &self.contexts {
            ContextStore::Binary(t) => t.get(self.image_slot(img_id)?)?.get(slot),
            ContextStore::Float { .. } => None,
        }
    }

    pub fn context_vector(&self, img_id: u32, slot: usize) -> Option<&[f32]> {
        let image = self.image_slot(img_id)?;
        (slot < CONTEXT_SLOTS).then(|| self.context_vector_at(image, slot)).flatten()
    }

    pub(crate) fn context_sketch_at(&self, image: usize, slot: usize) -> &Sig128 {
        match &self.contexts {
            ContextStore::Binary(t) => &t[image][slot],
            ContextStore::Float { .. } => panic!("float index has no sketches"),
        }
    }

    pub(crate) fn context_vector_at(&self, image: usize, slot: usize) -> Option<&[f32]> {
        match &self.contexts {
            ContextStore::Float { dim, values } => {
                let start = (image * CONTEXT_SLOTS + slot) * dim;
                Some(&values[start..start + dim])
            }
            ContextStore::Binary(_) => None,
        }
    }

    pub fn global_sketch(&self, img_id: u32) -> Option<&Sig128> {
        self.context_sketch(img_id, GLOBAL_SLOT)
    }

    pub fn total_postings(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }

    /// Bytes actually held by postings and context tables, split by
    /// component. Region pointers occupy 2 bytes in memory.
    pub fn resident_bytes(&self) -> Vec<(&'static str, usize)> {
        let p = self.total_postings();
        let ctx = match &self.contexts {
            ContextStore::Binary(t) => t.len() * CONTEXT_SLOTS * 16,
            ContextStore::Float { values, .. } => values.len() * 4,
        };
        vec![("ImgID", 4 * p), ("TF", p), ("Local", 16 * p), ("Region pointers", 2 * p), ("Context table", ctx)]
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        if !self.finalized {
            return Err(Error::NotFinalized);
        }
        w.write_all(&INDEX_MAGIC)?;
        w.write_u32::<LittleEndian>(INDEX_VERSION)?;
        w.write_u8(self.mode.code())?;
        w.write_u32::<LittleEndian>(self.images.len() as u32)?;
        w.write_u32::<LittleEndian>(self.lists.len() as u32)?;
        if let ContextStore::Float { dim, .. } = &self.contexts {
            w.write_u32::<LittleEndian>(*dim as u32)?;
        }
        for (word, list) in self.lists.iter().enumerate() {
            w.write_u32::<LittleEndian>(word as u32)?;
            w.write_u32::<LittleEndian>(list.len() as u32)?;
            for p in list {
                w.write_u32::<LittleEndian>(p.img_id)?;
                w.write_u8(p.tf)?;
                w.write_u16::<LittleEndian>(p.region)?;
                write_sig(w, &p.signature)?;
            }
        }
        for (i, entry) in self.images.iter().enumerate() {
            w.write_u32::<LittleEndian>(entry.img_id)?;
            match &self.contexts {
                ContextStore::Binary(t) => {
                    for sig in &t[i] {
                        write_sig(w, sig)?;
                    }
                }
                ContextStore::Float { .. } => {
                    for s in 0..CONTEXT_SLOTS {
                        for &x in self.context_vector_at(i, s).expect("float store") {
                            w.write_f32::<LittleEndian>(x)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        read_magic(r, INDEX_MAGIC)?;
        let trunc = eof_as_truncated("index");
        let version = r.read_u32::<LittleEndian>().map_err(&trunc)?;
        if version != INDEX_VERSION {
            return Err(Error::VersionMismatch { expected: INDEX_VERSION, found: version });
        }
        let mode = match r.read_u8().map_err(&trunc)? {
            0 => ContextMode::Binary,
            1 => ContextMode::Float,
            m => return Err(Error::InvalidRecord(format!("unknown context mode {m}"))),
        };
        let n = r.read_u32::<LittleEndian>().map_err(&trunc)? as usize;
        let k = r.read_u32::<LittleEndian>().map_err(&trunc)? as usize;
        let dim = match mode {
            ContextMode::Float => r.read_u32::<LittleEndian>().map_err(&trunc)? as usize,
            ContextMode::Binary => 0,
        };

        let mut index = Self::new(k, IndexConfig { mode });
        let mut counts: HashMap<u32, u32> = HashMap::new();
        for expected_word in 0..k {
            let word = r.read_u32::<LittleEndian>().map_err(&trunc)? as usize;
            if word != expected_word {
                return Err(Error::InvalidRecord(format!("posting list {word} out of order")));
            }
            let count = r.read_u32::<LittleEndian>().map_err(&trunc)? as usize;
            let mut list = Vec::with_capacity(count.min(1 << 20));
            for _ in 0..count {
                let img_id = r.read_u32::<LittleEndian>().map_err(&trunc)?;
                let tf = r.read_u8().map_err(&trunc)?;
                let region = r.read_u16::<LittleEndian>().map_err(&trunc)?;
                let signature = read_sig(r).map_err(&trunc)?;
                RegionPointer::unpack(region)?;
                if tf == 0 {
                    return Err(Error::InvalidRecord("posting with zero term frequency".into()));
                }
                *counts.entry(img_id).or_default() += 1;
                list.push(Posting { img_id, tf, region, signature });
            }
            index.lists[word] = list;
        }

        let mut binary = Vec::new();
        let mut values = Vec::new();
        for _ in 0..n {
            let img_id = r.read_u32::<LittleEndian>().map_err(&trunc)?;
            if index.images.last().is_some_and(|e| e.img_id >= img_id) {
                return Err(Error::InvalidRecord("context table not sorted by image id".into()));
            }
            match mode {
                ContextMode::Binary => {
                    let mut sigs = [[0u64; 2]; CONTEXT_SLOTS];
                    for s in &mut sigs {
                        *s = read_sig(r).map_err(&trunc)?;
                    }
                    binary.push(sigs);
                }
                ContextMode::Float => {
                    let start = values.len();
                    values.resize(start + CONTEXT_SLOTS * dim, 0.0);
                    r.read_f32_into::<LittleEndian>(&mut values[start..]).map_err(&trunc)?;
                }
            }
            let keypoints = counts.remove(&img_id).unwrap_or(0);
            index.images.push(ImageEntry { img_id, keypoints });
        }
        if let Some(id) = counts.keys().min() {
            return Err(Error::UnknownId(*id));
        }
        expect_eof(r)?;

        index.contexts = match mode {
            ContextMode::Binary => ContextStore::Binary(binary),
            ContextMode::Float => ContextStore::Float { dim, values },
        };
        if index.images.is_empty() {
            return Err(Error::EmptyIndex);
        }
        index.rebuild_lookup();
        index.finalized = true;
        Ok(index)
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

fn write_sig<W: Write>(w: &mut W, sig: &Sig128) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(sig[0])?;
    w.write_u64::<LittleEndian>(sig[1])
}

fn read_sig<R: Read>(r: &mut R) -> std::io::Result<Sig128> {
    Ok([r.read_u64::<LittleEndian>()?, r.read_u64::<LittleEndian>()?])
}

/// One component of the memory accounting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryRow {
    pub component: &'static str,
    pub per_feature_bytes: f64,
    pub per_image_bytes: f64,
    pub dataset_gib: f64,
}

/// Memory cost of a binary-mode index over `n_images` images with
/// `avg_keypoints` keypoints each.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryReport {
    pub n_images: u64,
    pub avg_keypoints: f64,
    pub rows: Vec<MemoryRow>,
    pub total: MemoryRow,
    /// Region pointers are accounted at 1.25 bytes but held in a `u16`.
    pub resident_region_bytes: f64,
    /// Per-feature cost when every posting embeds its two regional and its
    /// global sketch instead of pointing into the per-image table.
    pub embedded_per_feature_bytes: f64,
    pub embedded_dataset_gib: f64,
}

const GIB: f64 = (1u64 << 30) as f64;
const SKETCH_BYTES: f64 = 16.0;

pub fn memstats(n_images: u64, avg_keypoints: f64, mode: ContextMode) -> Result<MemoryReport> {
    if mode != ContextMode::Binary {
        return Err(Error::InvalidConfig("memory accounting covers binary contexts only".into()));
    }
    if n_images == 0 || !(avg_keypoints > 0.0) || !avg_keypoints.is_finite() {
        return Err(Error::InvalidConfig("image and keypoint counts must be positive".into()));
    }
    let k = avg_keypoints;
    let regional_slots = (CONTEXT_SLOTS - 1) as f64;
    let row = |component, per_feature_bytes: f64, per_image_bytes: f64| MemoryRow {
        component,
        per_feature_bytes,
        per_image_bytes,
        dataset_gib: per_image_bytes * n_images as f64 / GIB,
    };
    let rows = vec![
        row("ImgID", 4.0, 4.0 * k),
        row("TF", 1.0, k),
        row("Local", SKETCH_BYTES, SKETCH_BYTES * k),
        row("Regional", 1.25, SKETCH_BYTES * regional_slots + 1.25 * k),
        row("Global", 0.0, SKETCH_BYTES),
    ];
    let total =
        row("Total", rows.iter().map(|r| r.per_feature_bytes).sum(), rows.iter().map(|r| r.per_image_bytes).sum());
    let embedded = 4.0 + 1.0 + SKETCH_BYTES + 3.0 * SKETCH_BYTES;
    Ok(MemoryReport {
        n_images,
        avg_keypoints,
        rows,
        total,
        resident_region_bytes: 2.0,
        embedded_per_feature_bytes: embedded,
        embedded_dataset_gib: embedded * k * n_images as f64 / GIB,
    })
}

impl fmt::Display for MemoryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>14} {:>16} {:>12}", "component", "per feature B", "per image B", "dataset GB")?;
        for r in self.rows.iter().chain(std::iter::once(&self.total)) {
            writeln!(
                f,
                "{:<10} {:>14.2} {:>16.2} {:>12.2}",
                r.component, r.per_feature_bytes, r.per_image_bytes, r.dataset_gib
            )?;
        }
        writeln!(f, "per image: {:.2} KB", self.total.per_image_bytes / 1024.0)?;
        writeln!(f, "region pointers: accounted 1.25 B, resident {:.0} B per posting", self.resident_region_bytes)?;
        write!(
            f,
            "embedded sketches per posting: {:.2} B per feature, {:.2} GB",
            self.embedded_per_feature_bytes, self.embedded_dataset_gib
        )
    }
}
