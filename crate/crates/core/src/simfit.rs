//! Fitting `exp(-(d / c)^p)` similarity curves to labeled distance samples.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Exponential decay `exp(-d^p / c^p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityCurve<T> {
    pub exponent: i32,
    pub scale: T,
}

impl<T: Scalar> SimilarityCurve<T> {
    /// Local level: Hamming distances, `sigma = 21`.
    pub fn local() -> Self {
        Self { exponent: 2, scale: T::lit(21.0) }
    }

    /// Regional level: `gamma = 0.8`.
    pub fn regional() -> Self {
        Self { exponent: 3, scale: T::lit(0.8) }
    }

    /// Global level: `theta = 0.4`.
    pub fn global() -> Self {
        Self { exponent: 5, scale: T::lit(0.4) }
    }

    pub fn eval(&self, d: T) -> T {
        (-(d / self.scale).powi(self.exponent)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledDistanceSample<T> {
    pub distance: T,
    pub is_match: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinProbability<T> {
    pub center: T,
    pub probability: T,
    pub count: usize,
}

/// Match rate per equal-width bin over `[0, max distance]`. Empty bins are
/// omitted.
pub fn empirical_match_probability<T: Scalar>(
    samples: &[LabeledDistanceSample<T>],
    n_bins: usize,
) -> Result<Vec<BinProbability<T>>> {
    if samples.is_empty() {
        return Err(Error::NoSamples);
    }
    if n_bins < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 bins, got {n_bins}")));
    }
    if samples.iter().any(|s| !(s.distance >= T::zero()) || !s.distance.is_finite()) {
        return Err(Error::InvalidRecord("distances must be finite and non-negative".into()));
    }
    let max = samples.iter().map(|s| s.distance).fold(T::zero(), T::max);
    let nb = T::lit(n_bins as f64);
    let width = max / nb;

    let mut matches = vec![0usize; n_bins];
    let mut totals = vec![0usize; n_bins];
    for s in samples {
        let bin =
            if max > T::zero() { (s.distance / max * nb).floor().to_usize().unwrap_or(0).min(n_bins - 1) } else { 0 };
        totals[bin] += 1;
        matches[bin] += s.is_match as usize;
    }
    Ok((0..n_bins)
        .filter(|&b| totals[b] > 0)
        .map(|b| BinProbability {
            center: width * (T::lit(b as f64) + T::lit(0.5)),
            probability: T::lit(matches[b] as f64) / T::lit(totals[b] as f64),
            count: totals[b],
        })
        .collect())
}

/// Weighted least-squares fit of the scale with the exponent fixed, in the
/// log domain: minimizes `sum w (ln prob + (d / c)^p)^2` with `w = prob^2`.
///
/// Noise of size `e` on a probability moves its logarithm by about
/// `e / prob`, so the weights keep sparse tail bins from dominating. With
/// `u = c^-p` the residuals are linear in `u` and the optimum is
/// `u = -sum(w ln prob d^p) / sum(w d^2p)`. Bins with probability 0 are
/// skipped since their logarithm is undefined.
pub fn fit_curve<T: Scalar>(bins: &[BinProbability<T>], exponent: i32) -> Result<SimilarityCurve<T>> {
    if exponent <= 0 {
        return Err(Error::InvalidConfig(format!("exponent must be positive, got {exponent}")));
    }
    let usable: Vec<(f64, f64)> = bins
        .iter()
        .map(|b| (b.center.to_f64_lossy(), b.probability.to_f64_lossy()))
        .filter(|&(_, p)| p > 0.0 && p <= 1.0)
        .collect();
    if usable.len() < 2 {
        return Err(Error::DegenerateFit("fewer than two bins with probability in (0, 1]"));
    }
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for &(d, p) in &usable {
        let (dp, w) = (d.powi(exponent), p * p);
        num -= w * p.ln() * dp;
        den += w * dp * dp;
    }
    if !(den > 0.0) {
        return Err(Error::DegenerateFit("all usable bins at distance zero"));
    }
    let u = num / den;
    if !(u > 0.0) || !u.is_finite() {
        return Err(Error::DegenerateFit("probabilities show no decay"));
    }
    Ok(SimilarityCurve { exponent, scale: T::lit(u.powf(-1.0 / exponent as f64)) })
}

/// Parses `distance,label` lines (label 0 or 1). Blank lines and lines
/// starting with `#` are skipped, as is a leading `distance,label` header.
pub fn read_samples<R: BufRead>(r: R) -> Result<Vec<LabeledDistanceSample<f64>>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("distance")) {
            continue;
        }
        let err = |msg: String| Error::ParseError { line: i + 1, msg };
        let (d, l) = line.split_once(',').ok_or_else(|| err("expected distance,label".into()))?;
        let distance: f64 = d.trim().parse().map_err(|e| err(format!("distance {d:?}: {e}")))?;
        if !distance.is_finite() || distance < 0.0 {
            return Err(err(format!("distance {distance} must be finite and non-negative")));
        }
        let is_match = match l.trim() {
            "1" => true,
            "0" => false,
            other => return Err(err(format!("label {other:?} must be 0 or 1"))),
        };
        out.push(LabeledDistanceSample { distance, is_match });
    }
    Ok(out)
}

pub fn write_samples<W: Write>(samples: &[LabeledDistanceSample<f64>], w: &mut W) -> Result<()> {
    writeln!(w, "distance,label")?;
    for s in samples {
        writeln!(w, "{},{}", s.distance, s.is_match as u8)?;
    }
    Ok(())
}

/// CSV of bins alongside a fitted curve, ready for plotting.
pub fn write_bins_csv<W: Write>(bins: &[BinProbability<f64>], curve: &SimilarityCurve<f64>, w: &mut W) -> Result<()> {
    writeln!(w, "center,probability,count,fitted")?;
    for b in bins {
        writeln!(w, "{},{},{},{}", b.center, b.probability, b.count, curve.eval(b.center))?;
    }
    Ok(())
}
