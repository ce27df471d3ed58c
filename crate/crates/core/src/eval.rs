//! Retrieval quality: average precision and the top-4 N-S score.

use std::collections::BTreeSet;
use std::io::Write;

use num_traits::Num;

use crate::error::{Error, Result};

/// Average precision of a ranking.
///
/// `AP = (1/R) * sum over relevant hits at rank i of (hits up to i) / i`;
/// relevant items missing from the ranking contribute 0. With `exclude_self`
/// the query is dropped from both the relevant set and the ranking before
/// ranks are counted.
///
/// Generic over the number type so that exact rationals can be used.
pub fn average_precision<T: Num + Clone>(
    ranked: &[u32],
    relevant: &BTreeSet<u32>,
    exclude_self: bool,
    query: u32,
) -> Result<T> {
    let keep = |id: &u32| !(exclude_self && *id == query);
    let r_count = relevant.iter().filter(|id| keep(id)).count();
    if r_count == 0 {
        return Err(Error::NoRelevant);
    }
    let mut rank = T::zero();
    let mut hits = T::zero();
    let mut total = T::zero();
    let mut found = 0usize;
    for id in ranked.iter().filter(|id| keep(id)) {
        rank = rank + T::one();
        if relevant.contains(id) {
            hits = hits + T::one();
            total = total + hits.clone() / rank.clone();
            found += 1;
            if found == r_count {
                break;
            }
        }
    }
    let mut r = T::zero();
    for _ in 0..r_count {
        r = r + T::one();
    }
    Ok(total / r)
}

/// Number of `group` members among the first four ranked ids.
pub fn ns_score(ranked: &[u32], group: &BTreeSet<u32>) -> Result<u32> {
    if group.len() != 4 {
        return Err(Error::BadGroup(group.len()));
    }
    Ok(ranked.iter().take(4).filter(|id| group.contains(id)).count() as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    MeanAveragePrecision,
    NsScore,
}

impl Metric {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "map" => Ok(Self::MeanAveragePrecision),
            "ns" | "n-s" => Ok(Self::NsScore),
            other => Err(Error::InvalidConfig(format!("unknown metric {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::MeanAveragePrecision => "mAP",
            Self::NsScore => "N-S",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metric: Metric,
    /// Per-query AP, or top-4 hit count.
    pub per_query: Vec<(u32, f64)>,
    pub mean: f64,
}

impl EvalReport {
    pub fn new(metric: Metric, per_query: Vec<(u32, f64)>) -> Self {
        let mean = if per_query.is_empty() {
            0.0
        } else {
            per_query.iter().map(|q| q.1).sum::<f64>() / per_query.len() as f64
        };
        Self { metric, per_query, mean }
    }

    pub fn len(&self) -> usize {
        self.per_query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_query.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "query,{}", self.metric.name())?;
        for (q, v) in &self.per_query {
            writeln!(w, "{q},{v}")?;
        }
        writeln!(w, "mean,{}", self.mean)?;
        Ok(())
    }
}

/// Scores every query with `rank` and aggregates the chosen metric.
pub fn evaluate<F>(truth: &crate::GroundTruth, metric: Metric, exclude_self: bool, mut rank: F) -> Result<EvalReport>
where
    F: FnMut(u32) -> Result<Vec<u32>>,
{
    let mut per_query = Vec::with_capacity(truth.len());
    for (query, relevant) in &truth.queries {
        let ranked = rank(*query)?;
        let value = match metric {
            Metric::MeanAveragePrecision => average_precision::<f64>(&ranked, relevant, exclude_self, *query)?,
            Metric::NsScore => {
                if exclude_self {
                    let without: Vec<u32> = ranked.into_iter().filter(|id| id != query).collect();
                    ns_score(&without, relevant)? as f64
                } else {
                    ns_score(&ranked, relevant)? as f64
                }
            }
        };
        per_query.push((*query, value));
    }
    Ok(EvalReport::new(metric, per_query))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    fn set(ids: &[u32]) -> BTreeSet<u32> {
        ids.iter().copied().collect()
    }

    #[test]
    fn perfect_ranking() {
        assert_eq!(average_precision::<f64>(&[1, 2], &set(&[1, 2]), false, 0).unwrap(), 1.0);
    }

    #[test]
    fn ranks_one_and_three() {
        let ap = average_precision::<Ratio<u64>>(&[1, 9, 2], &set(&[1, 2]), false, 0).unwrap();
        assert_eq!(ap, Ratio::new(5, 6));
        let ap = average_precision::<f64>(&[1, 9, 2], &set(&[1, 2]), false, 0).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn missing_relevant_contributes_zero() {
        let ap = average_precision::<Ratio<u64>>(&[1, 3, 4], &set(&[1, 2]), false, 0).unwrap();
        assert_eq!(ap, Ratio::new(1, 2));
    }

    #[test]
    fn self_exclusion() {
        // Query 5 at rank 1 is dropped; 6 moves to rank 1, 7 to rank 3.
        let ranked = [5, 6, 9, 7];
        let ap = average_precision::<Ratio<u64>>(&ranked, &set(&[5, 6, 7]), true, 5).unwrap();
        assert_eq!(ap, Ratio::new(5, 6));
        assert!(matches!(average_precision::<f64>(&ranked, &set(&[5]), true, 5), Err(Error::NoRelevant)));
        assert!(matches!(average_precision::<f64>(&ranked, &set(&[]), false, 5), Err(Error::NoRelevant)));
    }

    #[test]
    fn ns_examples() {
        let group = set(&[1, 2, 3, 4]);
        assert_eq!(ns_score(&[4, 3, 2, 1, 7], &group).unwrap(), 4);
        assert_eq!(ns_score(&[1, 8, 9, 2, 3], &group).unwrap(), 2);
        assert_eq!(ns_score(&[2], &group).unwrap(), 1);
        assert!(matches!(ns_score(&[1], &set(&[1, 2, 3])), Err(Error::BadGroup(3))));
    }

    #[test]
    fn ap_invariant_below_last_relevant() {
        let rel = set(&[1, 2]);
        let a = average_precision::<Ratio<u64>>(&[1, 7, 2, 8, 9, 10], &rel, false, 0).unwrap();
        let b = average_precision::<Ratio<u64>>(&[1, 7, 2, 10, 8, 9], &rel, false, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn report_csv() {
        let report = EvalReport::new(Metric::NsScore, vec![(1, 4.0), (2, 3.0)]);
        assert_eq!(report.mean, 3.5);
        let mut out = Vec::new();
        report.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "query,N-S\n1,4\n2,3\nmean,3.5\n");
    }
}
