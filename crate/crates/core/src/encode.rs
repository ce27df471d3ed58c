//! Turns raw image records into quantized, signed keypoints and normalized
//! (optionally sketched) contexts.

use crate::datastore::ImageRecord;
use crate::error::{Error, Result};
use crate::geometry::RegionPointer;
use crate::index::ContextMode;
use crate::normalize::{root_sift_f32, srn_f32};
use crate::sketch::{HeModel, LshBank};
use crate::vocab::Vocabulary;
use crate::{SrnConfig, CONTEXT_SLOTS};

pub type Sig128 = [u64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedKeypoint {
    /// Assigned words, nearest first, each with the signature computed
    /// against that word's thresholds.
    pub assignments: Vec<(u32, Sig128)>,
    pub region: RegionPointer,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncodedContexts {
    /// One 128-bit sketch per slot.
    Binary(Vec<Sig128>),
    /// `81 * dim` normalized values.
    Float { dim: usize, values: Vec<f32> },
}

impl EncodedContexts {
    pub fn mode(&self) -> ContextMode {
        match self {
            Self::Binary(_) => ContextMode::Binary,
            Self::Float { .. } => ContextMode::Float,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedImage {
    pub img_id: u32,
    pub keypoints: Vec<EncodedKeypoint>,
    pub contexts: EncodedContexts,
}

/// Trained models needed to encode an image.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub vocab: Vocabulary,
    pub he: HeModel,
    pub lsh: LshBank,
    pub srn: SrnConfig,
}

impl Encoder {
    pub const SIGNATURE_BITS: usize = 128;

    pub fn new(vocab: Vocabulary, he: HeModel, lsh: LshBank, srn: SrnConfig) -> Result<Self> {
        if he.bits() != Self::SIGNATURE_BITS || lsh.bits() != Self::SIGNATURE_BITS {
            return Err(Error::InvalidConfig(format!(
                "index signatures are {} bits; HE has {}, LSH has {}",
                Self::SIGNATURE_BITS,
                he.bits(),
                lsh.bits()
            )));
        }
        if he.word_count() != vocab.len() {
            return Err(Error::DimensionMismatch { expected: vocab.len(), found: he.word_count() });
        }
        Ok(Self { vocab, he, lsh, srn })
    }

    pub fn context_dim(&self) -> usize {
        self.lsh.dim()
    }

    /// Encodes keypoints with `ma` words each and contexts for `mode`.
    pub fn encode(&self, rec: &ImageRecord, ma: usize, mode: ContextMode) -> Result<EncodedImage> {
        if rec.context_dim != self.lsh.dim() || rec.contexts.len() != CONTEXT_SLOTS * rec.context_dim {
            return Err(Error::MissingContexts(format!(
                "image {} has {} context values, expected {} x {}",
                rec.img_id,
                rec.contexts.len(),
                CONTEXT_SLOTS,
                self.lsh.dim()
            )));
        }
        let (w, h) = (rec.width as f64, rec.height as f64);
        let keypoints = rec
            .keypoints
            .iter()
            .map(|kp| {
                let region = RegionPointer::locate(kp.x as f64, kp.y as f64, w, h)?;
                let desc = root_sift_f32(&kp.descriptor)?;
                let assignments = self
                    .vocab
                    .quantize(&desc, ma)?
                    .into_iter()
                    .map(|(word, _)| {
                        let sig = self.he.signature(&desc, word)?;
                        Ok((word, sig.as_128().expect("128-bit HE")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(EncodedKeypoint { assignments, region })
            })
            .collect::<Result<Vec<_>>>()?;

        let dim = rec.context_dim;
        let contexts = match mode {
            ContextMode::Binary => EncodedContexts::Binary(
                (0..CONTEXT_SLOTS)
                    .map(|s| {
                        let v = srn_f32(rec.context(s), &self.srn)?;
                        Ok(self.lsh.sketch(&v)?.as_128().expect("128-bit LSH"))
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            ContextMode::Float => {
                let mut values = Vec::with_capacity(CONTEXT_SLOTS * dim);
                for s in 0..CONTEXT_SLOTS {
                    values.extend(srn_f32(rec.context(s), &self.srn)?);
                }
                EncodedContexts::Float { dim, values }
            }
        };
        Ok(EncodedImage { img_id: rec.img_id, keypoints, contexts })
    }
}
