//! Random-pair benchmark: geodesic, straight-line and piecewise-Euclidean
//! lengths over seeded node pairs, with normalized distances and timing.

use std::collections::HashSet;
use std::fmt;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::decoder::Decoder;
use crate::error::{Error, Result};
use crate::graph::LatentGraph;
use crate::search::{query_report, Heuristic};

/// Median, quartiles, 5/95 percentiles and mean of a sample.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p5: f64,
    pub p25: f64,
    pub p75: f64,
    pub p95: f64,
}

impl Stats {
    pub fn from_values(values: &[f64]) -> Stats {
        if values.is_empty() {
            return Stats::default();
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Stats {
            count: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median: percentile(&sorted, 50.0),
            p5: percentile(&sorted, 5.0),
            p25: percentile(&sorted, 25.0),
            p75: percentile(&sorted, 75.0),
            p95: percentile(&sorted, 95.0),
        }
    }
}

/// Linear interpolation between closest ranks of an ascending sample.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q / 100.0 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairRecord {
    pub start: usize,
    pub target: usize,
    pub reachable: bool,
    pub geodesic: Option<f64>,
    pub euclid: Option<f64>,
    pub piecewise: Option<f64>,
    /// Geodesic length over the mean straight-line length of reachable pairs.
    pub d_norm: Option<f64>,
    pub d_norm_euclid: Option<f64>,
    pub d_norm_piecewise: Option<f64>,
    pub path_nodes: Option<usize>,
    pub expansions: usize,
    #[serde(skip)]
    pub search_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Timing {
    pub mean_search_s: f64,
    pub std_search_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchSummary {
    pub format: &'static str,
    pub pairs: usize,
    pub reachable: usize,
    pub unreachable: usize,
    pub seed: u64,
    pub heuristic: Heuristic,
    pub geodesic: Stats,
    pub euclid: Stats,
    pub piecewise: Stats,
    pub d_norm: Stats,
    pub d_norm_euclid: Stats,
    pub d_norm_piecewise: Stats,
    pub mean_euclid: f64,
    pub per_pair: Vec<PairRecord>,
    /// Wall-clock search timing. Left out of JSON unless asked for, being
    /// the only nondeterministic field.
    #[serde(skip)]
    pub timing: Timing,
}

#[derive(Serialize)]
struct TimedSummary<'a> {
    #[serde(flatten)]
    summary: &'a BenchSummary,
    timing: &'a Timing,
}

pub const BENCH_FORMAT: &str = "geode-bench-v1";

impl BenchSummary {
    pub fn to_json_string(&self, include_timing: bool) -> String {
        let text = if include_timing {
            serde_json::to_string_pretty(&TimedSummary {
                summary: self,
                timing: &self.timing,
            })
        } else {
            serde_json::to_string_pretty(self)
        };
        text.expect("bench summary serializes")
    }
}

/// `count` distinct unordered pairs of distinct node ids, drawn uniformly.
pub fn sample_pairs(nodes: usize, count: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let available = nodes.saturating_mul(nodes.saturating_sub(1)) / 2;
    if count > available {
        return Err(Error::Config(format!(
            "{count} pairs requested but only {available} distinct pairs exist"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut pairs = Vec::with_capacity(count);
    while pairs.len() < count {
        let pick = index::sample(&mut rng, nodes, 2);
        let (a, b) = (pick.index(0), pick.index(1));
        if seen.insert((a.min(b), a.max(b))) {
            pairs.push((a, b));
        }
    }
    Ok(pairs)
}

/// Runs every pair (in parallel on the current rayon pool) and aggregates.
/// Output order and values depend only on the inputs and `seed`.
pub fn run_bench(
    graph: &LatentGraph,
    model: &dyn Decoder,
    pair_count: usize,
    seed: u64,
    heuristic: Heuristic,
) -> Result<BenchSummary> {
    let pairs = sample_pairs(graph.len(), pair_count, seed)?;
    let cfg = graph.metric_config();
    let reports = pairs
        .par_iter()
        .map(|&(s, t)| query_report(graph, model, s, t, heuristic, cfg))
        .collect::<Result<Vec<_>>>()?;

    let reachable: Vec<_> = reports.iter().flatten().collect();
    let mean_euclid = if reachable.is_empty() {
        0.0
    } else {
        reachable.iter().map(|r| r.euclid_length).sum::<f64>() / reachable.len() as f64
    };
    let norm = |v: f64| {
        if mean_euclid > 0.0 {
            v / mean_euclid
        } else {
            f64::NAN
        }
    };

    let per_pair: Vec<PairRecord> = pairs
        .iter()
        .zip(&reports)
        .map(|(&(start, target), report)| match report {
            Some(r) => PairRecord {
                start,
                target,
                reachable: true,
                geodesic: Some(r.geodesic.total_length),
                euclid: Some(r.euclid_length),
                piecewise: Some(r.piecewise_euclid.total_length),
                d_norm: Some(norm(r.geodesic.total_length)),
                d_norm_euclid: Some(norm(r.euclid_length)),
                d_norm_piecewise: Some(norm(r.piecewise_euclid.total_length)),
                path_nodes: Some(r.geodesic.node_ids.len()),
                expansions: r.geodesic.expansions,
                search_seconds: r.geodesic.elapsed,
            },
            None => PairRecord {
                start,
                target,
                reachable: false,
                geodesic: None,
                euclid: None,
                piecewise: None,
                d_norm: None,
                d_norm_euclid: None,
                d_norm_piecewise: None,
                path_nodes: None,
                expansions: 0,
                search_seconds: 0.0,
            },
        })
        .collect();

    let column = |f: &dyn Fn(&PairRecord) -> Option<f64>| -> Vec<f64> {
        per_pair.iter().filter_map(f).collect()
    };
    let seconds = column(&|p| p.reachable.then_some(p.search_seconds));
    let mean_s = if seconds.is_empty() {
        0.0
    } else {
        seconds.iter().sum::<f64>() / seconds.len() as f64
    };
    let std_s = if seconds.len() < 2 {
        0.0
    } else {
        (seconds.iter().map(|s| (s - mean_s).powi(2)).sum::<f64>() / (seconds.len() - 1) as f64)
            .sqrt()
    };

    Ok(BenchSummary {
        format: BENCH_FORMAT,
        pairs: pairs.len(),
        reachable: reachable.len(),
        unreachable: pairs.len() - reachable.len(),
        seed,
        heuristic,
        geodesic: Stats::from_values(&column(&|p| p.geodesic)),
        euclid: Stats::from_values(&column(&|p| p.euclid)),
        piecewise: Stats::from_values(&column(&|p| p.piecewise)),
        d_norm: Stats::from_values(&column(&|p| p.d_norm)),
        d_norm_euclid: Stats::from_values(&column(&|p| p.d_norm_euclid)),
        d_norm_piecewise: Stats::from_values(&column(&|p| p.d_norm_piecewise)),
        mean_euclid,
        per_pair,
        timing: Timing {
            mean_search_s: mean_s,
            std_search_s: std_s,
        },
    })
}

impl fmt::Display for BenchSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "pairs {}  reachable {}  unreachable {}  heuristic {}",
            self.pairs, self.reachable, self.unreachable, self.heuristic
        )?;
        writeln!(
            f,
            "{:<14} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
            "length", "mean", "median", "p5", "p25", "p75", "p95"
        )?;
        for (name, s) in [
            ("geodesic", &self.geodesic),
            ("euclidean", &self.euclid),
            ("piecewise", &self.piecewise),
            ("d_norm geod", &self.d_norm),
            ("d_norm eucl", &self.d_norm_euclid),
            ("d_norm piece", &self.d_norm_piecewise),
        ] {
            writeln!(
                f,
                "{:<14} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
                name, s.mean, s.median, s.p5, s.p25, s.p75, s.p95
            )?;
        }
        write!(
            f,
            "search time    mean {:.6} s  std {:.6} s",
            self.timing.mean_search_s, self.timing.std_search_s
        )
    }
}
