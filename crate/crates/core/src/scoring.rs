//! Match-strength kernels for the three evidence levels and their product.
//!
//! Each level maps a distance to a similarity through `exp(-(d / c)^p)`:
//! the local level uses the Hamming distance between embedding signatures
//! with `p = 2` and a hard cut-off, the regional and global levels use the
//! Euclidean distance between normalized context vectors with `p = 3` and
//! `p = 5`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which evidence levels take part in the product. Disabled levels
/// contribute a factor of one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LevelMask {
    pub local: bool,
    pub regional: bool,
    pub global: bool,
}

impl LevelMask {
    pub const ALL: Self = Self { local: true, regional: true, global: true };
    pub const NONE: Self = Self { local: false, regional: false, global: false };
    pub const LOCAL: Self = Self { local: true, regional: false, global: false };

    /// All eight combinations, in `lrg` bit order from none to all.
    pub fn combinations() -> impl Iterator<Item = Self> {
        (0u8..8).map(|b| Self { local: b & 4 != 0, regional: b & 2 != 0, global: b & 1 != 0 })
    }

    /// Parses a `+`/`,`-separated list of `local`, `regional`, `global`, or
    /// `all`/`none`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "all" => return Ok(Self::ALL),
            "none" | "" => return Ok(Self::NONE),
            _ => {}
        }
        let mut mask = Self::NONE;
        for part in s.split(['+', ',']) {
            match part.trim() {
                "local" | "l" => mask.local = true,
                "regional" | "r" => mask.regional = true,
                "global" | "g" => mask.global = true,
                other => return Err(Error::InvalidConfig(format!("unknown level {other:?}"))),
            }
        }
        Ok(mask)
    }

    pub fn label(&self) -> String {
        let parts: Vec<&str> = [(self.local, "local"), (self.regional, "regional"), (self.global, "global")]
            .into_iter()
            .filter_map(|(on, name)| on.then_some(name))
            .collect();
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

impl Default for LevelMask {
    fn default() -> Self {
        Self::ALL
    }
}

/// How the two regional scales of a keypoint pair fold into one factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum RegionalRule {
    #[default]
    Multiply,
    Mean,
    CoarseOnly,
    FineOnly,
}

impl RegionalRule {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "multiply" => Self::Multiply,
            "mean" => Self::Mean,
            "scale2" | "coarse" => Self::CoarseOnly,
            "scale3" | "fine" => Self::FineOnly,
            other => return Err(Error::InvalidConfig(format!("unknown regional rule {other:?}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Multiply => "multiply",
            Self::Mean => "mean",
            Self::CoarseOnly => "scale2",
            Self::FineOnly => "scale3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams<T> {
    /// Local weighting (Hamming units).
    pub sigma: T,
    /// Hamming cut-off; distances at or above it never match.
    pub kappa: u32,
    /// Regional scale.
    pub gamma: T,
    /// Global scale.
    pub theta: T,
    pub levels: LevelMask,
    pub regional_rule: RegionalRule,
}

impl<T: Scalar> Default for MatchParams<T> {
    fn default() -> Self {
        Self {
            sigma: T::lit(21.0),
            kappa: 60,
            gamma: T::lit(0.8),
            theta: T::lit(0.4),
            levels: LevelMask::ALL,
            regional_rule: RegionalRule::Multiply,
        }
    }
}

impl<T: Scalar> MatchParams<T> {
    pub fn validate(&self, signature_bits: u32) -> Result<()> {
        let positive = |v: T| v > T::zero() && v.is_finite();
        if !(positive(self.sigma) && positive(self.gamma) && positive(self.theta)) {
            return Err(Error::InvalidConfig("sigma, gamma and theta must be positive".into()));
        }
        if self.kappa == 0 || self.kappa > signature_bits {
            return Err(Error::InvalidConfig(format!("kappa must be in 1..={signature_bits}, got {}", self.kappa)));
        }
        Ok(())
    }

    pub fn with_levels(mut self, levels: LevelMask) -> Self {
        self.levels = levels;
        self
    }
}

/// Per-level similarities and their product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchScore<T> {
    pub local: T,
    pub regional: T,
    pub global: T,
    pub combined: T,
}

/// Distance between two context features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContextDistance<T> {
    /// Exact Euclidean distance between normalized vectors.
    Euclidean(T),
    /// Hamming distance between sketches of `bits` bits.
    Sketch { hamming: u32, bits: u32 },
}

impl<T: Scalar> ContextDistance<T> {
    pub fn euclidean(self) -> T {
        match self {
            Self::Euclidean(d) => d,
            Self::Sketch { hamming, bits } => sketch_to_euclidean(hamming, bits),
        }
    }
}

fn decay<T: Scalar>(d: T, scale: T, p: i32) -> T {
    (-(d / scale).powi(p)).exp()
}

/// `exp(-d^2 / sigma^2)` below the cut-off, zero at or above it.
pub fn s_local<T: Scalar>(hamming: u32, params: &MatchParams<T>) -> T {
    if hamming < params.kappa {
        decay(T::lit(hamming as f64), params.sigma, 2)
    } else {
        T::zero()
    }
}

/// `exp(-d^3 / gamma^3)`.
pub fn s_regional<T: Scalar>(d: T, params: &MatchParams<T>) -> T {
    decay(d, params.gamma, 3)
}

/// `exp(-d^5 / theta^5)`.
pub fn s_global<T: Scalar>(d: T, params: &MatchParams<T>) -> T {
    decay(d, params.theta, 5)
}

/// Euclidean distance between unit vectors whose angle is estimated from a
/// sketch Hamming distance as `pi * hamming / bits`.
pub fn sketch_to_euclidean<T: Scalar>(hamming: u32, bits: u32) -> T {
    let angle = PI * hamming as f64 / bits as f64;
    T::lit((2.0 - 2.0 * angle.cos()).max(0.0).sqrt())
}

/// Folds the coarse and fine regional distances into one similarity.
pub fn regional_similarity<T: Scalar>(
    coarse: ContextDistance<T>,
    fine: ContextDistance<T>,
    params: &MatchParams<T>,
) -> T {
    let sc = || s_regional(coarse.euclidean(), params);
    let sf = || s_regional(fine.euclidean(), params);
    match params.regional_rule {
        RegionalRule::Multiply => sc() * sf(),
        RegionalRule::Mean => (sc() + sf()) / T::lit(2.0),
        RegionalRule::CoarseOnly => sc(),
        RegionalRule::FineOnly => sf(),
    }
}

/// Product of the enabled level similarities for a same-word keypoint pair.
///
/// `regional` holds one or two distances; with two, they are folded by the
/// configured [`RegionalRule`].
pub fn combine<T: Scalar>(
    local: u32,
    regional: &[ContextDistance<T>],
    global: ContextDistance<T>,
    params: &MatchParams<T>,
) -> MatchScore<T> {
    let one = T::one();
    let mask = params.levels;
    let local = if mask.local { s_local(local, params) } else { one };
    let regional = if !mask.regional {
        one
    } else {
        match *regional {
            [single] => s_regional(single.euclidean(), params),
            [coarse, fine] => regional_similarity(coarse, fine, params),
            _ => panic!("one or two regional distances expected, got {}", regional.len()),
        }
    };
    let global = if mask.global { s_global(global.euclidean(), params) } else { one };
    MatchScore { local, regional, global, combined: local * regional * global }
}
