//! Latent graph: k-NN connectivity in latent space, Riemannian edge weights.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::Decoder;
use crate::error::{Error, Result};
use crate::kdtree::{KdTree, Neighbour};
use crate::metric::{segment_length, MetricConfig};

pub const GRAPH_FORMAT: &str = "geode-graph-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentNode {
    pub id: usize,
    pub z: Vec<f64>,
    #[serde(default)]
    pub tag: Option<String>,
}

impl LatentNode {
    pub fn new(id: usize, z: Vec<f64>) -> Self {
        LatentNode { id, z, tag: None }
    }
}

/// Nodes with ids `0..n` in order, built from bare coordinates.
pub fn nodes_from_points(points: Vec<Vec<f64>>) -> Vec<LatentNode> {
    points
        .into_iter()
        .enumerate()
        .map(|(id, z)| LatentNode::new(id, z))
        .collect()
}

/// The metric settings and decoder fingerprint an edge set was weighted with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightProvenance {
    #[serde(flatten)]
    pub config: MetricConfig,
    pub decoder_digest: String,
}

impl WeightProvenance {
    pub fn digest(&self) -> String {
        serde_json::to_string(self).expect("provenance serializes")
    }
}

#[derive(Clone, Debug)]
pub struct LatentGraph {
    dim: usize,
    k: usize,
    nodes: Vec<LatentNode>,
    /// Per node: `(neighbour, weight)` sorted by neighbour id.
    adjacency: Vec<Vec<(usize, f64)>>,
    provenance: WeightProvenance,
    tree: KdTree,
}

impl PartialEq for LatentGraph {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.k == other.k
            && self.nodes == other.nodes
            && self.provenance == other.provenance
            && self.adjacency.len() == other.adjacency.len()
            && self.adjacency.iter().zip(&other.adjacency).all(|(a, b)| {
                a.len() == b.len()
                    && a.iter()
                        .zip(b)
                        .all(|(x, y)| x.0 == y.0 && x.1.to_bits() == y.1.to_bits())
            })
    }
}

/// Validates nodes (non-empty, ids `0..n` in order, common finite dimension)
/// and indexes them.
pub fn build_tree(nodes: &[LatentNode]) -> Result<KdTree> {
    validate_nodes(nodes, None)?;
    KdTree::build(&nodes.iter().map(|n| n.z.clone()).collect::<Vec<_>>())
}

fn validate_nodes(nodes: &[LatentNode], dim: Option<usize>) -> Result<()> {
    let first = nodes
        .first()
        .ok_or_else(|| Error::schema("nodes", "node list is empty"))?;
    let dim = dim.unwrap_or(first.z.len());
    for (i, node) in nodes.iter().enumerate() {
        if node.id != i {
            return Err(Error::schema(
                format!("nodes[{i}]"),
                format!("id {} breaks the contiguous 0-based numbering", node.id),
            ));
        }
        if node.z.len() != dim {
            return Err(Error::dimension(format!("nodes[{i}]"), dim, node.z.len()));
        }
        if !node.z.iter().all(|v| v.is_finite()) {
            return Err(Error::schema(
                format!("nodes[{i}]"),
                "non-finite coordinate",
            ));
        }
    }
    Ok(())
}

fn edge_stream(i: usize, j: usize) -> u64 {
    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
    ((lo as u64) << 32) ^ hi as u64
}

fn weigh_edges(
    model: &dyn Decoder,
    points: &(dyn Fn(usize) -> Vec<f64> + Sync),
    pairs: &[(usize, usize)],
    cfg: &MetricConfig,
) -> Result<Vec<f64>> {
    pairs
        .par_iter()
        .map(|&(i, j)| {
            let w = segment_length(
                model,
                &points(i),
                &points(j),
                &cfg.for_stream(edge_stream(i, j)),
            )
            .map_err(|e| Error::Edge {
                i,
                j,
                source: Box::new(e),
            })?;
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Edge {
                    i,
                    j,
                    source: Box::new(Error::schema("weight", format!("invalid edge weight {w}"))),
                });
            }
            Ok(w)
        })
        .collect()
}

/// Connects every node to its `k` latent-Euclidean nearest neighbours and
/// weights each undirected edge, once, with the Riemannian length of the
/// straight latent segment between its endpoints.
pub fn build_graph(
    model: &dyn Decoder,
    nodes: Vec<LatentNode>,
    k: usize,
    cfg: &MetricConfig,
) -> Result<LatentGraph> {
    validate_nodes(&nodes, Some(model.input_dim()))?;
    cfg.validate(model.input_dim())?;
    if k == 0 || k >= nodes.len() {
        return Err(Error::Config(format!(
            "neighbour count {k} must be in 1..{}",
            nodes.len()
        )));
    }
    let tree = build_tree(&nodes)?;

    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for node in &nodes {
        let neighbours = tree.knn(&node.z, k + 1)?;
        for j in neighbours
            .iter()
            .map(|n| n.id)
            .filter(|&j| j != node.id)
            .take(k)
        {
            let key = (node.id.min(j), node.id.max(j));
            if seen.insert(key) {
                pairs.push((node.id, j));
            }
        }
    }

    let weights = weigh_edges(model, &|i| nodes[i].z.clone(), &pairs, cfg)?;

    let mut adjacency = vec![Vec::new(); nodes.len()];
    for (&(i, j), &w) in pairs.iter().zip(&weights) {
        adjacency[i].push((j, w));
        adjacency[j].push((i, w));
    }
    for list in &mut adjacency {
        list.sort_by_key(|&(j, _)| j);
    }

    Ok(LatentGraph {
        dim: model.input_dim(),
        k,
        nodes,
        adjacency,
        provenance: WeightProvenance {
            config: cfg.clone(),
            decoder_digest: model.digest(),
        },
        tree,
    })
}

impl LatentGraph {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[LatentNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> Result<&LatentNode> {
        self.nodes.get(id).ok_or(Error::InvalidNode {
            id,
            len: self.nodes.len(),
        })
    }

    pub fn neighbours(&self, id: usize) -> &[(usize, f64)] {
        &self.adjacency[id]
    }

    pub fn edge_weight(&self, i: usize, j: usize) -> Option<f64> {
        let list = self.adjacency.get(i)?;
        list.binary_search_by_key(&j, |&(n, _)| n)
            .ok()
            .map(|pos| list[pos].1)
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Undirected edges as `(i, j, w)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, list)| {
                list.iter()
                    .filter(move |&&(j, _)| i < j)
                    .map(move |&(j, w)| (i, j, w))
            })
            .collect()
    }

    pub fn provenance(&self) -> &WeightProvenance {
        &self.provenance
    }

    pub fn metric_config(&self) -> &MetricConfig {
        &self.provenance.config
    }

    /// Errors if `model` is not the decoder the edge weights were computed with.
    pub fn check_decoder(&self, model: &dyn Decoder) -> Result<()> {
        if model.input_dim() != self.dim {
            return Err(Error::dimension(
                "decoder input",
                self.dim,
                model.input_dim(),
            ));
        }
        let digest = model.digest();
        if digest != self.provenance.decoder_digest {
            return Err(Error::schema(
                "metric_cfg.decoder_digest",
                format!(
                    "graph was built with decoder {}, got {digest}",
                    self.provenance.decoder_digest
                ),
            ));
        }
        Ok(())
    }

    pub fn knn(&self, z: &[f64], k: usize) -> Result<Vec<Neighbour>> {
        self.tree.knn(z, k)
    }

    /// Adds `z` as a node wired to its `k` nearest existing nodes. A point
    /// that coincides exactly with an existing node returns that node's id
    /// and leaves the graph untouched.
    pub fn insert_node(
        &mut self,
        model: &dyn Decoder,
        z: &[f64],
        k: usize,
        cfg: &MetricConfig,
    ) -> Result<usize> {
        if z.len() != self.dim {
            return Err(Error::dimension("inserted point", self.dim, z.len()));
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::Config(
                "inserted point has non-finite coordinates".into(),
            ));
        }
        if let Some(hit) = self.tree.knn(z, 1)?.first() {
            if hit.distance == 0.0 && self.nodes[hit.id].z == z {
                return Ok(hit.id);
            }
        }
        let id = self.nodes.len();
        let neighbours = self.tree.knn(z, k)?;
        let pairs: Vec<(usize, usize)> = neighbours.iter().map(|n| (id, n.id)).collect();
        let weights = {
            let nodes = &self.nodes;
            weigh_edges(
                model,
                &|i| {
                    if i == id {
                        z.to_vec()
                    } else {
                        nodes[i].z.clone()
                    }
                },
                &pairs,
                cfg,
            )?
        };

        self.tree.insert(z)?;
        self.nodes.push(LatentNode::new(id, z.to_vec()));
        self.adjacency.push(Vec::with_capacity(k));
        for (&(_, j), &w) in pairs.iter().zip(&weights) {
            self.adjacency[id].push((j, w));
            // New id is the largest, so pushing keeps neighbour lists sorted.
            self.adjacency[j].push((id, w));
        }
        self.adjacency[id].sort_by_key(|&(j, _)| j);
        Ok(id)
    }

    pub fn to_json_string(&self) -> String {
        let file = GraphFile {
            format: GRAPH_FORMAT.to_string(),
            dim: self.dim,
            k: self.k,
            metric_cfg: self.provenance.clone(),
            nodes: self.nodes.clone(),
            edges: self
                .edges()
                .into_iter()
                .map(|(i, j, w)| EdgeRecord { i, j, w })
                .collect(),
        };
        serde_json::to_string(&file).expect("graph serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: GraphFile =
            serde_json::from_str(text).map_err(|e| Error::schema("document", e.to_string()))?;
        if file.format != GRAPH_FORMAT {
            return Err(Error::schema(
                "format",
                format!("expected \"{GRAPH_FORMAT}\", found \"{}\"", file.format),
            ));
        }
        let edges = file
            .edges
            .iter()
            .map(|e| (e.i, e.j, e.w))
            .collect::<Vec<_>>();
        Self::from_parts(file.dim, file.k, file.nodes, &edges, file.metric_cfg)
    }

    /// Assembles a graph from explicit edges `(i, j, w)`, each listed once
    /// with `i < j`. Used by the file loader and for hand-built graphs.
    pub fn from_parts(
        dim: usize,
        k: usize,
        nodes: Vec<LatentNode>,
        edges: &[(usize, usize, f64)],
        provenance: WeightProvenance,
    ) -> Result<Self> {
        validate_nodes(&nodes, Some(dim))?;
        let n = nodes.len();
        let mut adjacency = vec![Vec::new(); n];
        let mut seen = std::collections::HashMap::new();
        for (e, &(i, j, w)) in edges.iter().enumerate() {
            let loc = || format!("edges[{e}]");
            if i >= n || j >= n {
                return Err(Error::schema(
                    loc(),
                    format!("endpoint out of range 0..{n}"),
                ));
            }
            if i == j {
                return Err(Error::schema(loc(), "self-loop"));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::schema(loc(), format!("invalid weight {w}")));
            }
            let key = (i.min(j), i.max(j));
            if let Some(&(first, prev)) = seen.get(&key) {
                let message = if f64::to_bits(prev) != w.to_bits() {
                    format!(
                        "symmetry violation: edges[{first}] and edges[{e}] join {} and {} with different weights",
                        key.0, key.1
                    )
                } else {
                    format!("duplicate edge also listed at edges[{first}]")
                };
                return Err(Error::schema(loc(), message));
            }
            seen.insert(key, (e, w));
            if i > j {
                return Err(Error::schema(loc(), "edges must be listed once with i < j"));
            }
            adjacency[i].push((j, w));
            adjacency[j].push((i, w));
        }
        for list in &mut adjacency {
            list.sort_by_key(|&(j, _)| j);
        }
        let tree = build_tree(&nodes)?;
        Ok(LatentGraph {
            dim,
            k,
            nodes,
            adjacency,
            provenance,
            tree,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    format: String,
    dim: usize,
    k: usize,
    metric_cfg: WeightProvenance,
    nodes: Vec<LatentNode>,
    edges: Vec<EdgeRecord>,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeRecord {
    i: usize,
    j: usize,
    w: f64,
}

/// Reads latent nodes from CSV rows `id,z1,...,zNz[,tag]`.
///
/// With `has_header`, the tag column is recognised by its `tag` header;
/// without, a trailing non-numeric column is taken as the tag. Rows may
/// appear in any order but ids must cover `0..n` exactly once.
pub fn read_latents_csv(path: impl AsRef<Path>, has_header: bool) -> Result<Vec<LatentNode>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_latents_csv(file, has_header)
}

pub fn parse_latents_csv<R: std::io::Read>(input: R, has_header: bool) -> Result<Vec<LatentNode>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let tag_column = if has_header {
        let headers = reader
            .headers()
            .map_err(|e| Error::schema("header", e.to_string()))?;
        headers.iter().position(|h| h == "tag")
    } else {
        None
    };

    let mut nodes: Vec<LatentNode> = Vec::new();
    let mut dim = None;
    for (r, record) in reader.records().enumerate() {
        let row = r + 1 + has_header as usize;
        let loc = || format!("row {row}");
        let record = record.map_err(|e| Error::schema(loc(), e.to_string()))?;
        if record.is_empty() {
            continue;
        }
        let id: usize = record[0]
            .parse()
            .map_err(|_| Error::schema(loc(), format!("bad id \"{}\"", &record[0])))?;
        let mut z = Vec::new();
        let mut tag = None;
        for (c, field) in record.iter().enumerate().skip(1) {
            if Some(c) == tag_column {
                tag = (!field.is_empty()).then(|| field.to_string());
                continue;
            }
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => z.push(v),
                Ok(_) => {
                    return Err(Error::schema(
                        loc(),
                        format!("non-finite value in column {c}"),
                    ))
                }
                Err(_) if !has_header && c == record.len() - 1 && c > 1 => {
                    tag = Some(field.to_string())
                }
                Err(_) => {
                    return Err(Error::schema(
                        loc(),
                        format!("bad number \"{field}\" in column {c}"),
                    ))
                }
            }
        }
        let expected = *dim.get_or_insert(z.len());
        if z.len() != expected || z.is_empty() {
            return Err(Error::dimension(loc(), expected.max(1), z.len()));
        }
        nodes.push(LatentNode { id, z, tag });
    }
    if nodes.is_empty() {
        return Err(Error::schema("latents", "no rows"));
    }
    nodes.sort_by_key(|n| n.id);
    for (i, n) in nodes.iter().enumerate() {
        if n.id != i {
            return Err(Error::schema(
                "latents",
                format!(
                    "ids must be exactly 0..{}; found id {} at sorted position {i}",
                    nodes.len(),
                    n.id
                ),
            ));
        }
    }
    Ok(nodes)
}

/// Writes nodes as `id,z1,...,zNz,tag` with a header row.
pub fn write_latents_csv(path: impl AsRef<Path>, nodes: &[LatentNode]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("id");
    let dim = nodes.first().map_or(0, |n| n.z.len());
    for d in 1..=dim {
        text.push_str(&format!(",z{d}"));
    }
    text.push_str(",tag\n");
    for n in nodes {
        text.push_str(&n.id.to_string());
        for v in &n.z {
            text.push_str(&format!(",{v:?}"));
        }
        text.push(',');
        text.push_str(n.tag.as_deref().unwrap_or(""));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::AnalyticDecoder;

    fn cfg() -> MetricConfig {
        MetricConfig::default()
    }

    #[test]
    fn collinear_identity_graph() {
        let nodes = nodes_from_points(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![3.0, 0.0]]);
        let g = build_graph(&AnalyticDecoder::identity(2), nodes, 1, &cfg()).unwrap();
        assert_eq!(g.edge_count(), 2);
        assert!((g.edge_weight(0, 1).unwrap() - 1.0).abs() < 1e-9);
        assert!((g.edge_weight(1, 2).unwrap() - 2.0).abs() < 1e-9);
        assert_eq!(g.edge_weight(0, 2), None);
    }

    #[test]
    fn k_must_be_below_node_count() {
        let nodes = nodes_from_points(vec![vec![0.0, 0.0], vec![1.0, 0.0]]);
        assert!(build_graph(&AnalyticDecoder::identity(2), nodes.clone(), 2, &cfg()).is_err());
        assert!(build_graph(&AnalyticDecoder::identity(2), nodes, 0, &cfg()).is_err());
    }

    #[test]
    fn node_dimension_checked_against_decoder() {
        let nodes = nodes_from_points(vec![vec![0.0; 3], vec![1.0; 3]]);
        assert!(matches!(
            build_graph(&AnalyticDecoder::identity(2), nodes, 1, &cfg()),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn insert_existing_point_is_idempotent() {
        let pts: Vec<Vec<f64>> = (0..25)
            .map(|i| vec![(i % 5) as f64, (i / 5) as f64])
            .collect();
        let d = AnalyticDecoder::identity(2);
        let mut g = build_graph(&d, nodes_from_points(pts), 2, &cfg()).unwrap();
        let before = g.clone();
        assert_eq!(g.insert_node(&d, &[2.0, 3.0], 2, &cfg()).unwrap(), 17);
        assert_eq!(g, before);
    }

    #[test]
    fn insert_midpoint_connects_to_both() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![10.0, 0.0],
            vec![0.0, 10.0],
            vec![10.0, 10.0],
        ];
        let d = AnalyticDecoder::identity(2);
        let mut g = build_graph(&d, nodes_from_points(pts), 1, &cfg()).unwrap();
        let id = g.insert_node(&d, &[5.0, 0.0], 2, &cfg()).unwrap();
        assert_eq!(id, 4);
        let nbrs: Vec<usize> = g.neighbours(id).iter().map(|&(j, _)| j).collect();
        assert_eq!(nbrs, vec![0, 1]);
        assert!((g.edge_weight(0, 4).unwrap() - 5.0).abs() < 1e-9);
        assert_eq!(g.edge_weight(4, 1), g.edge_weight(1, 4));
        assert_eq!(g.knn(&[5.0, 0.1], 1).unwrap()[0].id, 4);
    }

    #[test]
    fn json_round_trip_small() {
        let mut nodes =
            nodes_from_points(vec![vec![0.0, 0.1], vec![0.7, -0.3], vec![1.0 / 3.0, 2.0]]);
        nodes[1].tag = Some("img-17".into());
        let g = build_graph(&AnalyticDecoder::Parabola { a: 1.0 }, nodes, 1, &cfg()).unwrap();
        let back = LatentGraph::from_json_str(&g.to_json_string()).unwrap();
        assert_eq!(g, back);
        assert_eq!(back.to_json_string(), g.to_json_string());
    }

    fn doc(edges: &str) -> String {
        format!(
            r#"{{"format":"geode-graph-v1","dim":1,"k":1,
            "metric_cfg":{{"jacobian_mode":"finite_difference","fd_step":1e-5,"stoch_sigma":1e-3,
              "stoch_samples":10,"curve_samples":8,"rng_seed":0,"decoder_digest":"x"}},
            "nodes":[{{"id":0,"z":[0.0],"tag":null}},{{"id":1,"z":[1.0],"tag":null}},{{"id":2,"z":[2.0],"tag":null}}],
            "edges":[{edges}]}}"#
        )
    }

    #[test]
    fn load_rejects_bad_edges() {
        assert!(LatentGraph::from_json_str(&doc(r#"{"i":0,"j":1,"w":1.0}"#)).is_ok());
        let err =
            LatentGraph::from_json_str(&doc(r#"{"i":0,"j":1,"w":1.0},{"i":1,"j":0,"w":2.0}"#))
                .unwrap_err();
        assert!(err.to_string().contains("symmetry violation"), "{err}");
        let err = LatentGraph::from_json_str(&doc(r#"{"i":1,"j":1,"w":1.0}"#)).unwrap_err();
        assert!(err.to_string().contains("self-loop"));
        let err = LatentGraph::from_json_str(&doc(r#"{"i":0,"j":9,"w":1.0}"#)).unwrap_err();
        assert!(err.to_string().contains("edges[0]"));
        let err = LatentGraph::from_json_str(&doc(r#"{"i":0,"j":1,"w":-1.0}"#)).unwrap_err();
        assert!(err.to_string().contains("invalid weight"));
    }

    #[test]
    fn latents_csv_with_header_and_tags() {
        let text = "id,z1,z2,tag\n1,0.5,0.25,b\n0,-1,2,a\n";
        let nodes = parse_latents_csv(text.as_bytes(), true).unwrap();
        assert_eq!(nodes[0].z, vec![-1.0, 2.0]);
        assert_eq!(nodes[1].tag.as_deref(), Some("b"));
    }

    #[test]
    fn latents_csv_headerless() {
        let nodes = parse_latents_csv("0,1,2,3\n1,4,5,6\n".as_bytes(), false).unwrap();
        assert_eq!(nodes[1].z, vec![4.0, 5.0, 6.0]);
        let nodes = parse_latents_csv("0,1,2,x\n1,4,5,y\n".as_bytes(), false).unwrap();
        assert_eq!(nodes[0].z, vec![1.0, 2.0]);
        assert_eq!(nodes[1].tag.as_deref(), Some("y"));
    }

    #[test]
    fn latents_csv_errors() {
        assert!(matches!(
            parse_latents_csv("0,1,2\n1,4\n".as_bytes(), false),
            Err(Error::Dimension { .. })
        ));
        assert!(parse_latents_csv("0,1\n2,4\n".as_bytes(), false).is_err());
        assert!(parse_latents_csv("".as_bytes(), false).is_err());
    }
}
