//! Dataset and ground-truth files.
//!
//! Dataset layout (little-endian):
//!
//! ```text
//! "DEMB" | version u32 = 1 | context dim u32 | image count u32
//! per image:
//!   img_id u32 | width u32 | height u32 | keypoint count u32
//!   keypoints: x f32 | y f32 | 128 descriptor bytes
//!   81 x dim f32 context vectors, in slot order
//! ```
//!
//! Context vectors are stored raw; normalization happens downstream.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::{CONTEXT_SLOTS, DESC_DIM};

pub const DATASET_MAGIC: [u8; 4] = *b"DEMB";
pub const DATASET_VERSION: u32 = 1;
/// Context dimension of the fc6-style features the format was sized for.
pub const DEFAULT_CONTEXT_DIM: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct RawKeypoint {
    pub x: f32,
    pub y: f32,
    pub descriptor: [u8; DESC_DIM],
}

impl RawKeypoint {
    pub fn new(x: f32, y: f32, descriptor: &[u8]) -> Result<Self> {
        let descriptor: [u8; DESC_DIM] =
            descriptor.try_into().map_err(|_| Error::DescriptorLength(descriptor.len()))?;
        Ok(Self { x, y, descriptor })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub img_id: u32,
    pub width: u32,
    pub height: u32,
    pub keypoints: Vec<RawKeypoint>,
    /// Dimension of each context vector.
    pub context_dim: usize,
    /// `81 * context_dim` raw values, slot-major.
    pub contexts: Vec<f32>,
}

impl ImageRecord {
    pub fn context(&self, slot: usize) -> &[f32] {
        &self.contexts[slot * self.context_dim..(slot + 1) * self.context_dim]
    }

    pub fn context_count(&self) -> usize {
        self.contexts.len().checked_div(self.context_dim).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidRecord(format!("image {} has zero extent", self.img_id)));
        }
        if self.context_dim == 0 || self.contexts.len() != CONTEXT_SLOTS * self.context_dim {
            return Err(Error::DimensionMismatch {
                expected: CONTEXT_SLOTS * self.context_dim,
                found: self.contexts.len(),
            });
        }
        for kp in &self.keypoints {
            let inside = kp.x >= 0.0 && kp.y >= 0.0 && kp.x < self.width as f32 && kp.y < self.height as f32;
            if !inside {
                return Err(Error::InvalidRecord(format!(
                    "keypoint ({}, {}) outside image {} ({}x{})",
                    kp.x, kp.y, self.img_id, self.width, self.height
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn eof_as_truncated(what: &'static str) -> impl Fn(io::Error) -> Error {
    move |e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::TruncatedFile(what)
        } else {
            Error::IoFailure(e)
        }
    }
}

pub(crate) fn read_magic<R: Read>(r: &mut R, expected: [u8; 4]) -> Result<()> {
    let mut found = [0u8; 4];
    r.read_exact(&mut found).map_err(eof_as_truncated("magic"))?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

pub(crate) fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let extra = io::copy(r, &mut io::sink())?;
    if extra != 0 {
        return Err(Error::TrailingData(extra));
    }
    Ok(())
}

/// Fails when records violate their invariants or reuse an id.
pub fn check_records(records: &[ImageRecord]) -> Result<usize> {
    let dim = records.first().map_or(0, |r| r.context_dim);
    let mut ids = HashSet::with_capacity(records.len());
    for rec in records {
        if rec.context_dim != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: rec.context_dim });
        }
        rec.validate()?;
        if !ids.insert(rec.img_id) {
            return Err(Error::DuplicateImageId(rec.img_id));
        }
    }
    Ok(dim)
}

pub fn write_dataset_to<W: Write>(records: &[ImageRecord], w: &mut W) -> Result<()> {
    let dim = check_records(records)?;
    w.write_all(&DATASET_MAGIC)?;
    w.write_u32::<LittleEndian>(DATASET_VERSION)?;
    w.write_u32::<LittleEndian>(dim as u32)?;
    w.write_u32::<LittleEndian>(records.len() as u32)?;
    for rec in records {
        w.write_u32::<LittleEndian>(rec.img_id)?;
        w.write_u32::<LittleEndian>(rec.width)?;
        w.write_u32::<LittleEndian>(rec.height)?;
        w.write_u32::<LittleEndian>(rec.keypoints.len() as u32)?;
        for kp in &rec.keypoints {
            w.write_f32::<LittleEndian>(kp.x)?;
            w.write_f32::<LittleEndian>(kp.y)?;
            w.write_all(&kp.descriptor)?;
        }
        for &v in &rec.contexts {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn write_dataset(records: &[ImageRecord], path: impl AsRef<Path>) -> Result<()> {
    // Validate before touching the filesystem.
    check_records(records)?;
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset_to(records, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset_from<R: Read>(r: &mut R) -> Result<Vec<ImageRecord>> {
    read_magic(r, DATASET_MAGIC)?;
    let header = eof_as_truncated("dataset header");
    let version = r.read_u32::<LittleEndian>().map_err(&header)?;
    if version != DATASET_VERSION {
        return Err(Error::VersionMismatch { expected: DATASET_VERSION, found: version });
    }
    let dim = r.read_u32::<LittleEndian>().map_err(&header)? as usize;
    let count = r.read_u32::<LittleEndian>().map_err(&header)? as usize;
    if dim == 0 && count > 0 {
        return Err(Error::DimensionMismatch { expected: 1, found: 0 });
    }

    let mut records = Vec::with_capacity(count.min(1 << 16));
    let mut ids = HashSet::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let rec = read_image(r, dim)?;
        if !ids.insert(rec.img_id) {
            return Err(Error::DuplicateImageId(rec.img_id));
        }
        records.push(rec);
    }
    expect_eof(r)?;
    Ok(records)
}

fn read_image<R: Read>(r: &mut R, dim: usize) -> Result<ImageRecord> {
    let header = eof_as_truncated("image header");
    let img_id = r.read_u32::<LittleEndian>().map_err(&header)?;
    let width = r.read_u32::<LittleEndian>().map_err(&header)?;
    let height = r.read_u32::<LittleEndian>().map_err(&header)?;
    let n_kp = r.read_u32::<LittleEndian>().map_err(&header)? as usize;

    let kp_err = eof_as_truncated("keypoints");
    let mut keypoints = Vec::with_capacity(n_kp.min(1 << 16));
    for _ in 0..n_kp {
        let x = r.read_f32::<LittleEndian>().map_err(&kp_err)?;
        let y = r.read_f32::<LittleEndian>().map_err(&kp_err)?;
        let mut descriptor = [0u8; DESC_DIM];
        r.read_exact(&mut descriptor).map_err(&kp_err)?;
        keypoints.push(RawKeypoint { x, y, descriptor });
    }

    let expected = CONTEXT_SLOTS * dim;
    let mut contexts = Vec::with_capacity(expected);
    let mut buf = [0u8; 4];
    for _ in 0..expected {
        match read_full(r, &mut buf)? {
            4 => contexts.push(f32::from_le_bytes(buf)),
            partial => {
                // A payload holding whole vectors, but fewer than 81 of them,
                // is a context-count error rather than a cut-off file.
                return Err(if partial == 0 && contexts.len() % dim == 0 {
                    Error::DimensionMismatch { expected, found: contexts.len() }
                } else {
                    Error::TruncatedFile("context vectors")
                });
            }
        }
    }

    let rec = ImageRecord { img_id, width, height, keypoints, context_dim: dim, contexts };
    rec.validate()?;
    Ok(rec)
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<ImageRecord>> {
    let mut r = BufReader::new(File::open(path)?);
    read_dataset_from(&mut r)
}

/// Relevance judgments, in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub queries: Vec<(u32, BTreeSet<u32>)>,
}

impl GroundTruth {
    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn relevant(&self, query: u32) -> Option<&BTreeSet<u32>> {
        self.queries.iter().find(|(q, _)| *q == query).map(|(_, s)| s)
    }

    /// Rejects ids that are not part of `records`.
    pub fn validate(&self, records: &[ImageRecord]) -> Result<()> {
        let known: HashSet<u32> = records.iter().map(|r| r.img_id).collect();
        for (q, rel) in &self.queries {
            for id in std::iter::once(q).chain(rel) {
                if !known.contains(id) {
                    return Err(Error::UnknownId(*id));
                }
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut queries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::ParseError { line: i + 1, msg };
            let (head, tail) = line.split_once(':').ok_or_else(|| err("missing ':'".into()))?;
            let query = head.trim().parse::<u32>().map_err(|e| err(format!("query id {:?}: {e}", head.trim())))?;
            let relevant = tail
                .split_whitespace()
                .map(|tok| tok.parse::<u32>().map_err(|e| err(format!("id {tok:?}: {e}"))))
                .collect::<Result<BTreeSet<u32>>>()?;
            queries.push((query, relevant));
        }
        Ok(Self { queries })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        for (q, rel) in &self.queries {
            write!(w, "{q}:")?;
            for id in rel {
                write!(w, " {id}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let mut text = String::new();
    BufReader::new(File::open(path)?).read_to_string(&mut text)?;
    GroundTruth::parse(&text)
}

/// Reads ground truth and checks every id against `records`.
pub fn read_ground_truth_checked(path: impl AsRef<Path>, records: &[ImageRecord]) -> Result<GroundTruth> {
    let gt = read_ground_truth(path)?;
    gt.validate(records)?;
    Ok(gt)
}

pub fn write_ground_truth(gt: &GroundTruth, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    gt.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(img_id: u32, n_kp: usize, dim: usize) -> ImageRecord {
        let keypoints = (0..n_kp)
            .map(|i| RawKeypoint {
                x: 10.0 + i as f32,
                y: 20.5,
                descriptor: std::array::from_fn(|j| ((i * 31 + j * 7) % 256) as u8),
            })
            .collect();
        let contexts = (0..CONTEXT_SLOTS * dim).map(|i| (i as f32 * 0.37).sin()).collect();
        ImageRecord { img_id, width: 64, height: 48, keypoints, context_dim: dim, contexts }
    }

    fn roundtrip(records: &[ImageRecord]) -> Vec<ImageRecord> {
        let mut buf = Vec::new();
        write_dataset_to(records, &mut buf).unwrap();
        read_dataset_from(&mut buf.as_slice()).unwrap()
    }

    #[test]
    fn empty_dataset() {
        assert!(roundtrip(&[]).is_empty());
    }

    #[test]
    fn single_image_roundtrip() {
        let rec = record(7, 2, 8);
        let back = roundtrip(std::slice::from_ref(&rec));
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].keypoints.len(), 2);
        assert_eq!(back[0].context_count(), 81);
        assert_eq!(back[0].context(80).len(), 8);
        assert_eq!(back[0], rec);
    }

    #[test]
    fn byte_layout() {
        let rec = record(3, 1, 2);
        let mut buf = Vec::new();
        write_dataset_to(&[rec], &mut buf).unwrap();
        assert_eq!(&buf[..4], b"DEMB");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 1);
        assert_eq!(buf.len(), 16 + 16 + (8 + 128) + 81 * 2 * 4);
    }

    #[test]
    fn eighty_context_vectors_rejected() {
        let dim = 4;
        let mut rec = record(1, 1, dim);
        assert!(matches!(
            ImageRecord { contexts: rec.contexts[..80 * dim].to_vec(), ..rec.clone() }.validate(),
            Err(Error::DimensionMismatch { .. })
        ));
        // Hand-write a file whose only image carries 80 vectors.
        let mut buf = Vec::new();
        write_dataset_to(std::slice::from_ref(&rec), &mut buf).unwrap();
        buf.truncate(buf.len() - dim * 4);
        assert!(matches!(
            read_dataset_from(&mut buf.as_slice()),
            Err(Error::DimensionMismatch { expected: 324, found: 320 })
        ));
        rec.contexts.pop();
        assert!(write_dataset_to(&[rec], &mut Vec::new()).is_err());
    }

    #[test]
    fn read_errors() {
        let mut buf = Vec::new();
        write_dataset_to(&[record(1, 3, 4)], &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_dataset_from(&mut bad.as_slice()), Err(Error::BadMagic { .. })));

        let cut = &buf[..40];
        assert!(matches!(read_dataset_from(&mut &cut[..]), Err(Error::TruncatedFile(_))));

        let mut odd = buf.clone();
        odd.truncate(buf.len() - 3);
        assert!(matches!(read_dataset_from(&mut odd.as_slice()), Err(Error::TruncatedFile(_))));

        let mut trailing = buf.clone();
        trailing.push(0);
        assert!(matches!(read_dataset_from(&mut trailing.as_slice()), Err(Error::TrailingData(1))));
    }

    #[test]
    fn duplicate_ids() {
        let recs = [record(1, 1, 2), record(1, 2, 2)];
        assert!(matches!(check_records(&recs), Err(Error::DuplicateImageId(1))));
        // Bypass the writer's check to exercise the reader.
        let mut buf = Vec::new();
        write_dataset_to(&recs[..1], &mut buf).unwrap();
        let mut single = Vec::new();
        write_dataset_to(&recs[1..], &mut single).unwrap();
        buf[12..16].copy_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&single[16..]);
        assert!(matches!(read_dataset_from(&mut buf.as_slice()), Err(Error::DuplicateImageId(1))));
    }

    #[test]
    fn short_descriptor_rejected() {
        assert!(matches!(RawKeypoint::new(0.0, 0.0, &[0u8; 127]), Err(Error::DescriptorLength(127))));
        assert!(RawKeypoint::new(0.0, 0.0, &[0u8; 128]).is_ok());
    }

    #[test]
    fn keypoint_outside_image() {
        let mut rec = record(1, 1, 2);
        rec.keypoints[0].x = 64.0;
        assert!(matches!(rec.validate(), Err(Error::InvalidRecord(_))));
    }

    #[test]
    fn ground_truth_parsing() {
        let gt = GroundTruth::parse("# comment\n5: 5 6 7 8\n\n9:\n").unwrap();
        assert_eq!(gt.len(), 2);
        assert_eq!(gt.relevant(5).unwrap(), &BTreeSet::from([5, 6, 7, 8]));
        assert!(gt.relevant(9).unwrap().is_empty());
        assert!(GroundTruth::parse("").unwrap().is_empty());
        assert!(matches!(GroundTruth::parse("5: x"), Err(Error::ParseError { line: 1, .. })));
        assert!(matches!(GroundTruth::parse("5 6"), Err(Error::ParseError { .. })));

        let mut out = Vec::new();
        gt.write_to(&mut out).unwrap();
        assert_eq!(GroundTruth::parse(std::str::from_utf8(&out).unwrap()).unwrap(), gt);
    }

    #[test]
    fn ground_truth_unknown_id() {
        let recs = [record(5, 0, 2), record(6, 0, 2)];
        assert!(GroundTruth::parse("5: 5 6").unwrap().validate(&recs).is_ok());
        assert!(matches!(GroundTruth::parse("5: 5 7").unwrap().validate(&recs), Err(Error::UnknownId(7))));
    }
}
