//! Per-position metrics and distribution summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModuleId;
use crate::numerics::{cosine, Array};

/// Norm/denominator floor below which a row is excluded rather than divided.
pub const EXCLUSION_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Cosine,
    NormalizedError,
}

impl MetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Cosine => "cosine",
            MetricKind::NormalizedError => "normalized_error",
        }
    }

    /// Histogram range: cosine lives in [-1, 1]; normalized errors are
    /// clipped to [-1, 2] for binning.
    pub fn histogram_range(&self) -> (f64, f64) {
        match self {
            MetricKind::Cosine => (-1.0, 1.0),
            MetricKind::NormalizedError => (-1.0, 2.0),
        }
    }
}

/// One per-position measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRecord {
    pub utterance: u32,
    pub module: ModuleId,
    /// Index among the utterance's linguistic positions (phoneme order, or
    /// frame order for the decoder).
    pub position: usize,
    pub metric: MetricKind,
    pub value: f64,
    /// Distance to the nearest FP phoneme; `None` for FP-free utterances.
    pub fp_distance: Option<u32>,
}

/// Distance grouping used across reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceGroup {
    D1,
    D2,
    Far,
    NoFp,
}

impl DistanceGroup {
    pub const ALL: [DistanceGroup; 4] = [
        DistanceGroup::D1,
        DistanceGroup::D2,
        DistanceGroup::Far,
        DistanceGroup::NoFp,
    ];

    pub fn of(distance: Option<u32>) -> Self {
        match distance {
            Some(1) => DistanceGroup::D1,
            Some(2) => DistanceGroup::D2,
            Some(_) => DistanceGroup::Far,
            None => DistanceGroup::NoFp,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DistanceGroup::D1 => "d1",
            DistanceGroup::D2 => "d2",
            DistanceGroup::Far => "far",
            DistanceGroup::NoFp => "no_fp",
        }
    }
}

impl std::fmt::Display for DistanceGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-linguistic-position relative duration change:
/// `(d_fp[phone_map[j]] - d_nofp[j]) / d_nofp[j]`. Positions whose
/// denominator falls below the floor are excluded (`None`) and counted.
pub fn normalized_duration_error(
    d_fp: &[f64],
    d_nofp: &[f64],
    phone_map: &[usize],
) -> Result<(Vec<Option<f64>>, usize)> {
    if d_nofp.len() != phone_map.len() {
        return Err(Error::Analysis(format!(
            "normalized_duration_error: {} no-FP durations vs {} map entries",
            d_nofp.len(),
            phone_map.len()
        )));
    }
    if let Some(&bad) = phone_map.iter().find(|&&i| i >= d_fp.len()) {
        return Err(Error::Analysis(format!(
            "phone map index {} out of range {}",
            bad,
            d_fp.len()
        )));
    }
    let mut excluded = 0usize;
    let out = phone_map
        .iter()
        .zip(d_nofp)
        .map(|(&pos, &dn)| {
            if dn.abs() < EXCLUSION_FLOOR {
                excluded += 1;
                None
            } else {
                Some((d_fp[pos] - dn) / dn)
            }
        })
        .collect();
    Ok((out, excluded))
}

/// Row-wise cosine similarity between aligned representations:
/// row `j` of `h_nofp` against row `phone_map[j]` of `h_fp`. Rows with a
/// norm below the floor are excluded (`None`) and counted.
pub fn cosine_profile(
    h_fp: &Array,
    h_nofp: &Array,
    phone_map: &[usize],
) -> Result<(Vec<Option<f64>>, usize)> {
    if h_fp.row_width() != h_nofp.row_width() {
        return Err(Error::ShapeMismatch {
            op: "cosine_profile",
            left: h_fp.shape().to_vec(),
            right: h_nofp.shape().to_vec(),
        });
    }
    if h_nofp.rows() != phone_map.len() {
        return Err(Error::Analysis(format!(
            "cosine_profile: {} no-FP rows vs {} map entries",
            h_nofp.rows(),
            phone_map.len()
        )));
    }
    if let Some(&bad) = phone_map.iter().find(|&&i| i >= h_fp.rows()) {
        return Err(Error::Analysis(format!(
            "phone map index {} out of range {}",
            bad,
            h_fp.rows()
        )));
    }
    let mut excluded = 0usize;
    let out = phone_map
        .iter()
        .enumerate()
        .map(|(j, &pos)| {
            let c = cosine(h_fp.row(pos), h_nofp.row(j), EXCLUSION_FLOOR);
            if c.is_none() {
                excluded += 1;
            }
            c
        })
        .collect();
    Ok((out, excluded))
}

/// Histogram + quantiles + histogram modes of a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub n: usize,
    pub range_lo: f64,
    pub range_hi: f64,
    /// Fixed-width bin counts over `[range_lo, range_hi]` (values outside
    /// are clipped into the edge bins).
    pub counts: Vec<u64>,
    /// 5/25/50/75/95 percent quantiles of the raw (unclipped) values.
    pub quantiles: [f64; 5],
    /// Bin centers whose count exceeds both neighbors and 5% of the total.
    pub modes: Vec<f64>,
}

pub const HISTOGRAM_BINS: usize = 50;

impl DistributionSummary {
    pub fn build(values: &[f64], range: (f64, f64)) -> Self {
        Self::build_with_bins(values, range, HISTOGRAM_BINS)
    }

    pub fn build_with_bins(values: &[f64], (lo, hi): (f64, f64), bins: usize) -> Self {
        let mut counts = vec![0u64; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let idx = if v <= lo {
                0
            } else if v >= hi {
                bins - 1
            } else {
                (((v - lo) / width) as usize).min(bins - 1)
            };
            counts[idx] += 1;
        }
        let quantiles = if values.is_empty() {
            [f64::NAN; 5]
        } else {
            let mut sorted = values.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
            [0.05, 0.25, 0.50, 0.75, 0.95].map(|q| quantile_sorted(&sorted, q))
        };
        let total: u64 = counts.iter().sum();
        let mut modes = Vec::new();
        for i in 0..bins {
            let c = counts[i];
            if c == 0 || (c as f64) < 0.05 * total as f64 {
                continue;
            }
            let left = if i == 0 { 0 } else { counts[i - 1] };
            let right = if i + 1 == bins { 0 } else { counts[i + 1] };
            if c > left && c > right {
                modes.push(lo + width * (i as f64 + 0.5));
            }
        }
        DistributionSummary {
            n: values.len(),
            range_lo: lo,
            range_hi: hi,
            counts,
            quantiles,
            modes,
        }
    }

    pub fn median(&self) -> f64 {
        self.quantiles[2]
    }
}

/// Linear-interpolation quantile of a sorted sample.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Group records by distance-to-FP and summarize each group. All four groups
/// are present in the output; empty groups carry `n == 0`.
pub fn adjacency_breakdown(
    records: &[AnalysisRecord],
    metric: MetricKind,
) -> std::collections::BTreeMap<DistanceGroup, DistributionSummary> {
    let range = metric.histogram_range();
    let mut grouped: std::collections::BTreeMap<DistanceGroup, Vec<f64>> = DistanceGroup::ALL
        .iter()
        .map(|&grp| (grp, Vec::new()))
        .collect();
    for r in records {
        if r.metric == metric {
            grouped
                .get_mut(&DistanceGroup::of(r.fp_distance))
                .expect("all groups present")
                .push(r.value);
        }
    }
    grouped
        .into_iter()
        .map(|(group, values)| (group, DistributionSummary::build(&values, range)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalized_error_examples() {
        // d_fp (linguistic) [12, 8] vs d_nofp [10, 8] -> [0.2, 0.0]
        let (vals, excluded) =
            normalized_duration_error(&[12.0, 8.0], &[10.0, 8.0], &[0, 1]).unwrap();
        assert_eq!(excluded, 0);
        assert!((vals[0].unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(vals[1], Some(0.0));
        // Identical predictions -> all zeros.
        let (vals, _) = normalized_duration_error(&[5.0, 5.0], &[5.0, 5.0], &[0, 1]).unwrap();
        assert!(vals.iter().all(|v| v == &Some(0.0)));
        // Zero denominator excluded with a count.
        let (vals, excluded) = normalized_duration_error(&[5.0], &[0.0], &[0]).unwrap();
        assert_eq!(vals[0], None);
        assert_eq!(excluded, 1);
    }

    #[test]
    fn normalized_error_matches_brute_force_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let m = rng.random_range(1..12);
            let extra = rng.random_range(0..4);
            let d_fp: Vec<f64> = (0..m + extra).map(|_| rng.random_range(0.5..20.0)).collect();
            let d_no: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..20.0)).collect();
            let map: Vec<usize> = (0..m).map(|j| j + extra.min(1)).collect();
            let (vals, _) = normalized_duration_error(&d_fp, &d_no, &map).unwrap();
            for j in 0..m {
                let brute = (d_fp[map[j]] - d_no[j]) / d_no[j];
                assert!((vals[j].unwrap() - brute).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn cosine_examples() {
        let a = Array::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, -2.0, -3.0]).unwrap();
        let b = Array::matrix(2, 3, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]).unwrap();
        let (vals, excluded) = cosine_profile(&a, &b, &[0, 1]).unwrap();
        assert!((vals[0].unwrap() - 1.0).abs() < 1e-15);
        assert!((vals[1].unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(excluded, 0);
        // Zero-norm row excluded.
        let z = Array::matrix(1, 3, vec![0.0; 3]).unwrap();
        let o = Array::matrix(1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        let (vals, excluded) = cosine_profile(&z, &o, &[0]).unwrap();
        assert_eq!(vals[0], None);
        assert_eq!(excluded, 1);
    }

    #[test]
    fn cosine_matches_higher_precision_recomputation() {
        // Independent oracle: accumulate in two passes with explicit
        // normalization, checking agreement to 1e-12.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let d = rng.random_range(2..16);
            let u: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = Array::matrix(1, d, u.clone()).unwrap();
            let b = Array::matrix(1, d, v.clone()).unwrap();
            let (vals, _) = cosine_profile(&a, &b, &[0]).unwrap();
            let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let un: Vec<f64> = u.iter().map(|x| x / nu).collect();
            let vn: Vec<f64> = v.iter().map(|x| x / nv).collect();
            let oracle: f64 = un.iter().zip(&vn).map(|(x, y)| x * y).sum();
            let got = vals[0].unwrap();
            assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
            assert!((-1.0..=1.0).contains(&got.clamp(-1.0, 1.0)));
        }
    }

    fn record(value: f64, dist: Option<u32>) -> AnalysisRecord {
        AnalysisRecord {
            utterance: 0,
            module: ModuleId::Energy,
            position: 0,
            metric: MetricKind::Cosine,
            value,
            fp_distance: dist,
        }
    }

    #[test]
    fn breakdown_groups_match_brute_force_filter() {
        let records: Vec<AnalysisRecord> = vec![
            record(0.9, Some(1)),
            record(0.8, Some(1)),
            record(0.95, Some(2)),
            record(1.0, Some(7)),
            record(0.99, None),
        ];
        let groups = adjacency_breakdown(&records, MetricKind::Cosine);
        assert_eq!(groups[&DistanceGroup::D1].n, 2);
        assert_eq!(groups[&DistanceGroup::D2].n, 1);
        assert_eq!(groups[&DistanceGroup::Far].n, 1);
        assert_eq!(groups[&DistanceGroup::NoFp].n, 1);
        // Counts conserve the sample count.
        let total: usize = groups.values().map(|s| s.n).sum();
        assert_eq!(total, records.len());
        let bins: u64 = groups[&DistanceGroup::D1].counts.iter().sum();
        assert_eq!(bins, 2);
    }

    #[test]
    fn all_records_distance_one_leaves_other_groups_empty() {
        let records: Vec<AnalysisRecord> = (0..5).map(|_| record(0.5, Some(1))).collect();
        let groups = adjacency_breakdown(&records, MetricKind::Cosine);
        assert_eq!(groups[&DistanceGroup::D1].n, 5);
        assert_eq!(groups[&DistanceGroup::D2].n, 0);
        assert_eq!(groups[&DistanceGroup::Far].n, 0);
        assert_eq!(groups[&DistanceGroup::NoFp].n, 0);
    }

    #[test]
    fn summary_quantiles_and_modes() {
        let values: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let s = DistributionSummary::build(&values, (-1.0, 1.0));
        assert_eq!(s.n, 100);
        assert!((s.median() - 0.495).abs() < 1e-12);
        assert!((s.quantiles[0] - 0.0495).abs() < 1e-12);
        // A concentrated sample has a single histogram mode at its bin.
        let peaked = vec![0.5; 30];
        let s = DistributionSummary::build(&peaked, (-1.0, 1.0));
        assert_eq!(s.modes.len(), 1);
        assert!((s.modes[0] - 0.51).abs()ace 0.05);
    }
}
