use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PairRecord;

pub const HISTOGRAM_BINS: usize = 20;

/// Bin edges over `[-1, 1]`; edge `i` is exactly `(i - 10) / 10` in f64.
pub fn histogram_edges() -> [f64; HISTOGRAM_BINS + 1] {
    std::array::from_fn(|i| (i as f64 - 10.0) / 10.0)
}

/// Bins are lower-inclusive and upper-exclusive except the last, which is
/// closed. Values outside `[-1, 1]` clamp to the end bins.
pub fn bin_index(edges: &[f64; HISTOGRAM_BINS + 1], delta: f64) -> usize {
    edges[1..HISTOGRAM_BINS].partition_point(|&e| e <= delta)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelRate {
    pub pairs: usize,
    pub positive: usize,
    pub mean_positive: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionRateReport {
    pub pair_count: usize,
    pub positive_count: usize,
    /// Mean of the strictly positive deltas; `None` when there are none.
    pub arr: Option<f64>,
    pub mean_delta: Option<f64>,
    pub histogram_edges: Vec<f64>,
    pub histogram: Vec<u64>,
    pub per_level: BTreeMap<u8, LevelRate>,
}

pub fn reduction_rate(pairs: &[PairRecord]) -> ReductionRateReport {
    let edges = histogram_edges();
    let mut histogram = vec![0u64; HISTOGRAM_BINS];
    let (mut pos_sum, mut pos_n, mut all_sum) = (0.0f64, 0usize, 0.0f64);
    let mut levels: BTreeMap<u8, (usize, usize, f64)> = BTreeMap::new();
    for p in pairs {
        histogram[bin_index(&edges, p.delta)] += 1;
        all_sum += p.delta;
        let l = levels.entry(p.level).or_default();
        l.0 += 1;
        if p.delta > 0.0 {
            pos_sum += p.delta;
            pos_n += 1;
            l.1 += 1;
            l.2 += p.delta;
        }
    }
    ReductionRateReport {
        pair_count: pairs.len(),
        positive_count: pos_n,
        arr: (pos_n > 0).then(|| pos_sum / pos_n as f64),
        mean_delta: (!pairs.is_empty()).then(|| all_sum / pairs.len() as f64),
        histogram_edges: edges.to_vec(),
        histogram,
        per_level: levels
            .into_iter()
            .map(|(lv, (n, pn, s))| {
                (
                    lv,
                    LevelRate {
                        pairs: n,
                        positive: pn,
                        mean_positive: (pn > 0).then(|| s / pn as f64),
                    },
                )
            })
            .collect(),
    }
}
