//! Three-scale image partition and the context-slot layout.
//!
//! An image is covered by one global window, a 4x4 grid and an 8x8 grid of
//! regional windows. Each image carries one context vector per window, stored
//! in slot order: global, then the 4x4 grid row-major, then the 8x8 grid
//! row-major.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::CONTEXT_SLOTS;

/// Regional grid scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scale {
    /// 4x4 grid, 16 blocks.
    Coarse,
    /// 8x8 grid, 64 blocks.
    Fine,
}

impl Scale {
    pub const fn divisions(self) -> usize {
        match self {
            Scale::Coarse => 4,
            Scale::Fine => 8,
        }
    }

    pub const fn block_count(self) -> usize {
        self.divisions() * self.divisions()
    }
}

/// Kind of context window an image slot refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContextKind {
    Global,
    Regional(Scale),
}

impl ContextKind {
    fn name(self) -> &'static str {
        match self {
            ContextKind::Global => "global",
            ContextKind::Regional(Scale::Coarse) => "scale2",
            ContextKind::Regional(Scale::Fine) => "scale3",
        }
    }

    fn block_count(self) -> usize {
        match self {
            ContextKind::Global => 1,
            ContextKind::Regional(s) => s.block_count(),
        }
    }
}

pub const GLOBAL_SLOT: usize = 0;
const COARSE_BASE: usize = 1;
const FINE_BASE: usize = 1 + 16;

/// Block of the given grid that contains `(x, y)`.
///
/// Points on the right or bottom edge are clamped into the last row/column.
pub fn block_index<T: Scalar>(scale: Scale, x: T, y: T, width: T, height: T) -> Result<usize> {
    let in_range =
        width > T::zero() && height > T::zero() && x >= T::zero() && y >= T::zero() && x <= width && y <= height;
    if !in_range {
        return Err(Error::OutOfBounds {
            x: x.to_f64_lossy(),
            y: y.to_f64_lossy(),
            width: width.to_f64_lossy(),
            height: height.to_f64_lossy(),
        });
    }
    let n = scale.divisions();
    let cell = |v: T, extent: T| -> usize {
        let raw = (v * T::lit(n as f64) / extent).floor();
        raw.to_usize().unwrap_or(n - 1).min(n - 1)
    };
    Ok(cell(y, height) * n + cell(x, width))
}

/// Slot of a context window within an image's 81-entry context table.
pub fn context_slot(kind: ContextKind, block: usize) -> Result<usize> {
    if block >= kind.block_count() {
        return Err(Error::InvalidBlock { kind: kind.name(), block });
    }
    Ok(match kind {
        ContextKind::Global => GLOBAL_SLOT,
        ContextKind::Regional(Scale::Coarse) => COARSE_BASE + block,
        ContextKind::Regional(Scale::Fine) => FINE_BASE + block,
    })
}

/// Inverse of [`context_slot`].
pub fn slot_kind(slot: usize) -> Result<(ContextKind, usize)> {
    match slot {
        GLOBAL_SLOT => Ok((ContextKind::Global, 0)),
        s if s < FINE_BASE => Ok((ContextKind::Regional(Scale::Coarse), s - COARSE_BASE)),
        s if s < CONTEXT_SLOTS => Ok((ContextKind::Regional(Scale::Fine), s - FINE_BASE)),
        s => Err(Error::InvalidBlock { kind: "slot", block: s }),
    }
}

/// Location of a keypoint's two regional windows: a 4-bit coarse block and a
/// 6-bit fine block. Packs into the low 10 bits of a `u16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RegionPointer {
    coarse: u8,
    fine: u8,
}

impl RegionPointer {
    pub const BITS: u32 = 10;

    pub fn new(coarse: usize, fine: usize) -> Result<Self> {
        if coarse >= 16 {
            return Err(Error::InvalidBlock { kind: "scale2", block: coarse });
        }
        if fine >= 64 {
            return Err(Error::InvalidBlock { kind: "scale3", block: fine });
        }
        Ok(Self { coarse: coarse as u8, fine: fine as u8 })
    }

    /// Pointer for a keypoint at `(x, y)`.
    pub fn locate<T: Scalar>(x: T, y: T, width: T, height: T) -> Result<Self> {
        let coarse = block_index(Scale::Coarse, x, y, width, height)?;
        let fine = block_index(Scale::Fine, x, y, width, height)?;
        Self::new(coarse, fine)
    }

    pub fn coarse(self) -> usize {
        self.coarse as usize
    }

    pub fn fine(self) -> usize {
        self.fine as usize
    }

    pub fn coarse_slot(self) -> usize {
        COARSE_BASE + self.coarse as usize
    }

    pub fn fine_slot(self) -> usize {
        FINE_BASE + self.fine as usize
    }

    pub fn pack(self) -> u16 {
        (self.coarse as u16) | ((self.fine as u16) << 4)
    }

    pub fn unpack(raw: u16) -> Result<Self> {
        if raw >> Self::BITS != 0 {
            return Err(Error::InvalidRecord(format!("region pointer {raw:#x} uses more than 10 bits")));
        }
        Ok(Self { coarse: (raw & 0xF) as u8, fine: (raw >> 4) as u8 })
    }
}
