//! Geodesic queries on a [`LatentGraph`]: A* with pluggable heuristics, a
//! Dijkstra oracle, and the straight-line and piecewise-Euclidean baselines.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::decoder::Decoder;
use crate::error::{Error, Result};
use crate::graph::LatentGraph;
use crate::kdtree::squared_distance;
use crate::metric::{jacobian, segment_length, MetricConfig};

pub const PATH_FORMAT: &str = "geode-path-v1";

/// Sampling points used by the `latent_line` heuristic per evaluation.
pub const LATENT_LINE_SAMPLES: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heuristic {
    /// `h = 0`; A* degenerates to Dijkstra.
    Zero,
    /// Observation-space chord `||f(z_n) - f(z_target)||`. Admissible.
    #[default]
    ObsChord,
    /// Riemannian length of the straight latent line to the target.
    /// Not guaranteed admissible.
    LatentLine,
}

impl FromStr for Heuristic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Heuristic::Zero),
            "obs-chord" | "obs_chord" => Ok(Heuristic::ObsChord),
            "latent-line" | "latent_line" => Ok(Heuristic::LatentLine),
            _ => Err(Error::Config(format!("unknown heuristic \"{s}\""))),
        }
    }
}

impl fmt::Display for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Heuristic::Zero => "zero",
            Heuristic::ObsChord => "obs-chord",
            Heuristic::LatentLine => "latent-line",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeodesicPath {
    pub node_ids: Vec<usize>,
    pub latent_points: Vec<Vec<f64>>,
    pub edge_lengths: Vec<f64>,
    pub total_length: f64,
    pub expansions: usize,
    /// Wall-clock seconds spent in the search loop, heuristic evaluation included.
    pub elapsed: f64,
}

/// Result of a search. An unreachable target is an ordinary outcome: k-NN
/// graphs may be disconnected.
#[derive(Clone, Debug, PartialEq)]
pub enum SearchOutcome {
    Found(GeodesicPath),
    NoPath {
        /// Size of the connected component explored from the start node.
        explored: usize,
        expansions: usize,
        elapsed: f64,
    },
}

impl SearchOutcome {
    pub fn path(&self) -> Option<&GeodesicPath> {
        match self {
            SearchOutcome::Found(p) => Some(p),
            SearchOutcome::NoPath { .. } => None,
        }
    }

    pub fn into_path(self) -> Option<GeodesicPath> {
        match self {
            SearchOutcome::Found(p) => Some(p),
            SearchOutcome::NoPath { .. } => None,
        }
    }

    pub fn expansions(&self) -> usize {
        match self {
            SearchOutcome::Found(p) => p.expansions,
            SearchOutcome::NoPath { expansions, .. } => *expansions,
        }
    }
}

/// Open-list entry, popped by smallest `f`, then smallest `g`, then lowest id.
/// A provisional entry carries a lower bound on `f` because the node's
/// heuristic has not been evaluated yet.
#[derive(Clone, Copy, Debug)]
struct Frontier {
    f: f64,
    g: f64,
    id: usize,
    provisional: bool,
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap.
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.g.total_cmp(&self.g))
            .then_with(|| other.id.cmp(&self.id))
            .then_with(|| self.provisional.cmp(&other.provisional))
    }
}

struct RawPath {
    node_ids: Vec<usize>,
    total: f64,
}

enum RawOutcome {
    Found(RawPath),
    NoPath { explored: usize },
}

/// Best-first search with reopening: a node whose cost improves after
/// expansion is queued again, so admissible but inconsistent heuristics
/// still yield optimal paths.
///
/// With `lazy`, a newly reached node is queued under its parent's `f` (or
/// its own `g`, if larger) and its heuristic is evaluated only when that
/// entry reaches the front. The key is a lower bound whenever the heuristic
/// is consistent across the edge, as the decoded chord is under edge weights
/// that bound it.
fn best_first(
    graph: &LatentGraph,
    start: usize,
    target: usize,
    cost: impl Fn(usize, usize, f64) -> f64,
    mut heuristic: impl FnMut(usize) -> Result<f64>,
    lazy: bool,
    expansions: &mut usize,
) -> Result<RawOutcome> {
    let n = graph.len();
    let mut g = vec![f64::INFINITY; n];
    let mut h: Vec<Option<f64>> = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut discovered = 1;
    let mut open = BinaryHeap::new();
    g[start] = 0.0;
    let h_start = heuristic(start)?;
    h[start] = Some(h_start);
    open.push(Frontier {
        f: h_start,
        g: 0.0,
        id: start,
        provisional: false,
    });

    while let Some(entry) = open.pop() {
        let (gu, u) = (entry.g, entry.id);
        if gu > g[u] {
            continue;
        }
        if entry.provisional {
            let hu = heuristic(u)?;
            h[u] = Some(hu);
            open.push(Frontier {
                f: gu + hu,
                g: gu,
                id: u,
                provisional: false,
            });
            continue;
        }
        *expansions += 1;
        if u == target {
            let mut node_ids = vec![target];
            let mut cur = target;
            while cur != start {
                cur = parent[cur];
                node_ids.push(cur);
            }
            node_ids.reverse();
            return Ok(RawOutcome::Found(RawPath {
                node_ids,
                total: gu,
            }));
        }
        for &(v, w) in graph.neighbours(u) {
            let candidate = gu + cost(u, v, w);
            if candidate < g[v] {
                if g[v].is_infinite() {
                    discovered += 1;
                }
                g[v] = candidate;
                parent[v] = u;
                let next = match h[v] {
                    Some(hv) => Frontier {
                        f: candidate + hv,
                        g: candidate,
                        id: v,
                        provisional: false,
                    },
                    None if lazy => Frontier {
                        f: entry.f.max(candidate),
                        g: candidate,
                        id: v,
                        provisional: true,
                    },
                    None => {
                        let hv = heuristic(v)?;
                        h[v] = Some(hv);
                        Frontier {
                            f: candidate + hv,
                            g: candidate,
                            id: v,
                            provisional: false,
                        }
                    }
                };
                open.push(next);
            }
        }
    }
    Ok(RawOutcome::NoPath {
        explored: discovered,
    })
}

fn check_ids(graph: &LatentGraph, start: usize, target: usize) -> Result<()> {
    graph.node(start)?;
    graph.node(target)?;
    Ok(())
}

fn assemble(graph: &LatentGraph, raw: RawPath, expansions: usize, elapsed: f64) -> GeodesicPath {
    let edge_lengths = raw
        .node_ids
        .windows(2)
        .map(|p| {
            graph
                .edge_weight(p[0], p[1])
                .expect("path follows graph edges")
        })
        .collect();
    GeodesicPath {
        latent_points: raw
            .node_ids
            .iter()
            .map(|&id| graph.nodes()[id].z.clone())
            .collect(),
        node_ids: raw.node_ids,
        edge_lengths,
        total_length: raw.total,
        expansions,
        elapsed,
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// A* over Riemannian edge weights.
pub fn astar(
    graph: &LatentGraph,
    model: &dyn Decoder,
    start: usize,
    target: usize,
    heuristic: Heuristic,
    cfg: &MetricConfig,
) -> Result<SearchOutcome> {
    check_ids(graph, start, target)?;
    let began = Instant::now();
    let nodes = graph.nodes();
    let z_target = &nodes[target].z;
    let target_obs = match heuristic {
        Heuristic::ObsChord => Some(model.forward(z_target)?),
        _ => None,
    };
    let line_cfg = cfg.clone().with_curve_samples(LATENT_LINE_SAMPLES);

    let h = |id: usize| -> Result<f64> {
        Ok(match heuristic {
            Heuristic::Zero => 0.0,
            Heuristic::ObsChord => {
                let x = model.forward(&nodes[id].z)?;
                euclidean(&x, target_obs.as_ref().expect("target decoded"))
            }
            Heuristic::LatentLine => segment_length(model, &nodes[id].z, z_target, &line_cfg)?,
        })
    };

    let mut expansions = 0;
    let lazy = heuristic != Heuristic::Zero;
    let raw = best_first(graph, start, target, |_, _, w| w, h, lazy, &mut expansions)?;
    let elapsed = began.elapsed().as_secs_f64();
    Ok(match raw {
        RawOutcome::Found(p) => SearchOutcome::Found(assemble(graph, p, expansions, elapsed)),
        RawOutcome::NoPath { explored } => SearchOutcome::NoPath {
            explored,
            expansions,
            elapsed,
        },
    })
}

/// Textbook Dijkstra over Riemannian edge weights, kept separate from
/// [`astar`] as its optimality oracle. Pops by `(distance, id)`.
pub fn dijkstra(graph: &LatentGraph, start: usize, target: usize) -> Result<SearchOutcome> {
    check_ids(graph, start, target)?;
    let began = Instant::now();
    let n = graph.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    let mut reached = 1;
    let mut expansions = 0;
    dist[start] = 0.0;
    heap.push(Frontier {
        f: 0.0,
        g: 0.0,
        id: start,
        provisional: false,
    });
    while let Some(Frontier { g: d, id: u, .. }) = heap.pop() {
        if settled[u] {
            continue;
        }
        settled[u] = true;
        expansions += 1;
        if u == target {
            let mut ids = vec![u];
            while *ids.last().unwrap() != start {
                ids.push(parent[*ids.last().unwrap()]);
            }
            ids.reverse();
            let path = assemble(
                graph,
                RawPath {
                    node_ids: ids,
                    total: d,
                },
                expansions,
                began.elapsed().as_secs_f64(),
            );
            return Ok(SearchOutcome::Found(path));
        }
        for &(v, w) in graph.neighbours(u) {
            if settled[v] {
                continue;
            }
            let nd = d + w;
            if nd < dist[v] {
                if dist[v].is_infinite() {
                    reached += 1;
                }
                dist[v] = nd;
                parent[v] = u;
                heap.push(Frontier {
                    f: nd,
                    g: nd,
                    id: v,
                    provisional: false,
                });
            }
        }
    }
    Ok(SearchOutcome::NoPath {
        explored: reached,
        expansions,
        elapsed: began.elapsed().as_secs_f64(),
    })
}

/// Riemannian length of the straight latent line between the endpoints.
pub fn euclidean_baseline(
    model: &dyn Decoder,
    z_start: &[f64],
    z_target: &[f64],
    cfg: &MetricConfig,
) -> Result<f64> {
    segment_length(model, z_start, z_target, cfg)
}

/// Shortest path under latent Euclidean edge lengths (A* with the latent
/// straight-line heuristic), re-scored with the graph's Riemannian edge
/// weights. `total_length` is the Riemannian re-score.
pub fn piecewise_euclidean_baseline(
    graph: &LatentGraph,
    start: usize,
    target: usize,
) -> Result<SearchOutcome> {
    check_ids(graph, start, target)?;
    let began = Instant::now();
    let nodes = graph.nodes();
    let z_target = &nodes[target].z;
    let mut expansions = 0;
    let raw = best_first(
        graph,
        start,
        target,
        |u, v, _| euclidean(&nodes[u].z, &nodes[v].z),
        |id| Ok(euclidean(&nodes[id].z, z_target)),
        false,
        &mut expansions,
    )?;
    let elapsed = began.elapsed().as_secs_f64();
    Ok(match raw {
        RawOutcome::Found(p) => {
            let mut path = assemble(graph, p, expansions, elapsed);
            path.total_length = path.edge_lengths.iter().fold(0.0, |acc, w| acc + w);
            SearchOutcome::Found(path)
        }
        RawOutcome::NoPath { explored } => SearchOutcome::NoPath {
            explored,
            expansions,
            elapsed,
        },
    })
}

/// One decoded sample along a path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    /// Index of the edge the sample lies on.
    pub edge: usize,
    /// Position within that edge, in `[0, 1]`.
    pub t: f64,
    pub z: Vec<f64>,
    pub x: Vec<f64>,
    /// Riemannian velocity along the edge direction.
    pub phi: f64,
}

/// Samples `points_per_edge` equidistant latent points per edge (shared
/// endpoints emitted once, final node included) and decodes each.
pub fn interpolate_path(
    model: &dyn Decoder,
    path: &GeodesicPath,
    points_per_edge: usize,
    cfg: &MetricConfig,
) -> Result<Vec<PathSample>> {
    if points_per_edge == 0 {
        return Err(Error::Config("points_per_edge must be positive".into()));
    }
    let pts = &path.latent_points;
    let Some(last) = pts.last() else {
        return Err(Error::Config("path has no nodes".into()));
    };
    if pts.len() == 1 {
        return Ok(vec![PathSample {
            edge: 0,
            t: 0.0,
            z: last.clone(),
            x: model.forward(last)?,
            phi: 0.0,
        }]);
    }
    let mut samples = Vec::with_capacity((pts.len() - 1) * points_per_edge + 1);
    let edges = pts.len() - 1;
    for (e, pair) in pts.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        let dz: Vec<f64> = a.iter().zip(b).map(|(a, b)| b - a).collect();
        let steps = if e + 1 == edges {
            points_per_edge + 1
        } else {
            points_per_edge
        };
        for s in 0..steps {
            let t = s as f64 / points_per_edge as f64;
            let z: Vec<f64> = a.iter().zip(&dz).map(|(a, d)| a + t * d).collect();
            let phi = if dz.iter().all(|&d| d == 0.0) {
                0.0
            } else {
                let jac = jacobian(model, &z, &cfg.for_stream(samples.len() as u64))?;
                (0..jac.nrows())
                    .map(|r| {
                        let v = (0..jac.ncols()).fold(0.0, |acc, c| acc + jac[(r, c)] * dz[c]);
                        v * v
                    })
                    .sum::<f64>()
                    .sqrt()
            };
            samples.push(PathSample {
                edge: e,
                t,
                x: model.forward(&z)?,
                z,
                phi,
            });
        }
    }
    Ok(samples)
}

/// Writes `edge,t,z1..zNz,phi[,x1..xNx]`.
pub fn write_interpolation_csv<W: Write>(
    mut out: W,
    samples: &[PathSample],
    with_observations: bool,
) -> std::io::Result<()> {
    let nz = samples.first().map_or(0, |s| s.z.len());
    let nx = samples.first().map_or(0, |s| s.x.len());
    let mut header = String::from("edge,t");
    for d in 1..=nz {
        header.push_str(&format!(",z{d}"));
    }
    header.push_str(",phi");
    if with_observations {
        for d in 1..=nx {
            header.push_str(&format!(",x{d}"));
        }
    }
    writeln!(out, "{header}")?;
    for s in samples {
        let mut line = format!("{},{:.16e}", s.edge, s.t);
        for v in &s.z {
            line.push_str(&format!(",{v:.16e}"));
        }
        line.push_str(&format!(",{:.16e}", s.phi));
        if with_observations {
            for v in &s.x {
                line.push_str(&format!(",{v:.16e}"));
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct PathFile {
    format: String,
    node_ids: Vec<usize>,
    latent: Vec<Vec<f64>>,
    edge_lengths: Vec<f64>,
    total_length: f64,
    expansions: usize,
    elapsed_s: f64,
}

impl GeodesicPath {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&PathFile {
            format: PATH_FORMAT.into(),
            node_ids: self.node_ids.clone(),
            latent: self.latent_points.clone(),
            edge_lengths: self.edge_lengths.clone(),
            total_length: self.total_length,
            expansions: self.expansions,
            elapsed_s: self.elapsed,
        })
        .expect("path serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: PathFile =
            serde_json::from_str(text).map_err(|e| Error::schema("document", e.to_string()))?;
        if file.format != PATH_FORMAT {
            return Err(Error::schema(
                "format",
                format!("expected \"{PATH_FORMAT}\""),
            ));
        }
        if file.latent.len() != file.node_ids.len()
            || file.edge_lengths.len() + 1 != file.node_ids.len()
        {
            return Err(Error::schema("node_ids", "inconsistent path arrays"));
        }
        Ok(GeodesicPath {
            node_ids: file.node_ids,
            latent_points: file.latent,
            edge_lengths: file.edge_lengths,
            total_length: file.total_length,
            expansions: file.expansions,
            elapsed: file.elapsed_s,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }
}

/// Geodesic plus both baselines for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryReport {
    pub geodesic: GeodesicPath,
    pub euclid_length: f64,
    pub piecewise_euclid: GeodesicPath,
    /// Geodesic length over the mean straight-line length of a query set;
    /// filled in by benchmark aggregation.
    pub normalized_distance: Option<f64>,
}

/// Runs the geodesic search and both baselines. `None` when the target is
/// unreachable from the start.
pub fn query_report(
    graph: &LatentGraph,
    model: &dyn Decoder,
    start: usize,
    target: usize,
    heuristic: Heuristic,
    cfg: &MetricConfig,
) -> Result<Option<QueryReport>> {
    let Some(geodesic) = astar(graph, model, start, target, heuristic, cfg)?.into_path() else {
        return Ok(None);
    };
    let piecewise_euclid = piecewise_euclidean_baseline(graph, start, target)?
        .into_path()
        .expect("same adjacency reaches the target");
    let nodes = graph.nodes();
    let euclid_length = euclidean_baseline(model, &nodes[start].z, &nodes[target].z, cfg)?;
    Ok(Some(QueryReport {
        geodesic,
        euclid_length,
        piecewise_euclid,
        normalized_distance: None,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::AnalyticDecoder;
    use crate::graph::{build_graph, nodes_from_points};

    /// Four nodes on a unit square, identity decoder, k = 2.
    fn square() -> (LatentGraph, AnalyticDecoder) {
        let d = AnalyticDecoder::identity(2);
        let pts = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ];
        let g = build_graph(&d, nodes_from_points(pts), 2, &MetricConfig::default()).unwrap();
        (g, d)
    }

    #[test]
    fn start_equals_target() {
        let (g, d) = square();
        let p = astar(&g, &d, 2, 2, Heuristic::ObsChord, &MetricConfig::default())
            .unwrap()
            .into_path()
            .unwrap();
        assert_eq!(p.node_ids, vec![2]);
        assert_eq!(p.total_length, 0.0);
        assert!(p.expansions <= 1);
    }

    #[test]
    fn invalid_ids_are_errors() {
        let (g, d) = square();
        assert!(matches!(
            astar(&g, &d, 0, 9, Heuristic::Zero, &MetricConfig::default()),
            Err(Error::InvalidNode { id: 9, .. })
        ));
        assert!(dijkstra(&g, 7, 0).is_err());
    }

    #[test]
    fn square_paths() {
        let (g, d) = square();
        for h in [Heuristic::Zero, Heuristic::ObsChord, Heuristic::LatentLine] {
            let p = astar(&g, &d, 0, 3, h, &MetricConfig::default())
                .unwrap()
                .into_path()
                .unwrap();
            assert_eq!(p.node_ids.len(), 3);
            assert!((p.total_length - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn heuristic_parsing() {
        assert_eq!(
            "obs-chord".parse::<Heuristic>().unwrap(),
            Heuristic::ObsChord
        );
        assert_eq!("zero".parse::<Heuristic>().unwrap(), Heuristic::Zero);
        assert_eq!(
            "latent-line".parse::<Heuristic>().unwrap(),
            Heuristic::LatentLine
        );
        assert!("manhattan".parse::<Heuristic>().is_err());
        assert_eq!(Heuristic::default(), Heuristic::ObsChord);
    }

    #[test]
    fn interpolation_shapes() {
        let (g, d) = square();
        let cfg = MetricConfig::default();
        let p = astar(&g, &d, 0, 1, Heuristic::Zero, &cfg)
            .unwrap()
            .into_path()
            .unwrap();
        let s = interpolate_path(&d, &p, 2, &cfg).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[1].z, vec![0.5, 0.0]);
        assert_eq!(s[2].t, 1.0);

        let single = astar(&g, &d, 3, 3, Heuristic::Zero, &cfg)
            .unwrap()
            .into_path()
            .unwrap();
        assert_eq!(interpolate_path(&d, &single, 5, &cfg).unwrap().len(), 1);
    }

    #[test]
    fn interpolation_csv_header() {
        let (g, d) = square();
        let cfg = MetricConfig::default();
        let p = astar(&g, &d, 0, 3, Heuristic::Zero, &cfg)
            .unwrap()
            .into_path()
            .unwrap();
        let s = interpolate_path(&d, &p, 3, &cfg).unwrap();
        let mut buf = Vec::new();
        write_interpolation_csv(&mut buf, &s, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("edge,t,z1,z2,phi,x1,x2\n"));
        assert_eq!(text.lines().count(), 1 + 7);
        let mut buf = Vec::new();
        write_interpolation_csv(&mut buf, &s, false).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("edge,t,z1,z2,phi\n"));
    }

    #[test]
    fn path_json_round_trip() {
        let (g, d) = square();
        let p = astar(&g, &d, 0, 3, Heuristic::ObsChord, &MetricConfig::default())
            .unwrap()
            .into_path()
            .unwrap();
        let text = p.to_json_string();
        assert!(text.starts_with(r#"{"format":"geode-path-v1","node_ids":"#));
        assert_eq!(GeodesicPath::from_json_str(&text).unwrap(), p);
    }

    #[test]
    fn baselines_on_flat_metric() {
        let (g, d) = square();
        let cfg = MetricConfig::default();
        let r = query_report(&g, &d, 0, 3, Heuristic::ObsChord, &cfg)
            .unwrap()
            .unwrap();
        assert!((r.euclid_length - 2f64.sqrt()).abs() < 1e-9);
        assert_eq!(r.piecewise_euclid.node_ids, r.geodesic.node_ids);
        assert_eq!(r.piecewise_euclid.total_length, r.geodesic.total_length);
        assert_eq!(
            euclidean_baseline(&d, &[1.0, 2.0], &[1.0, 2.0], &cfg).unwrap(),
            0.0
        );
    }
}
