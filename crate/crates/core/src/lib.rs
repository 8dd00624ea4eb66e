//! Graph-based geodesics on the Riemannian manifold induced by a generative
//! model's decoder.
//!
//! Latent samples become nodes of a k-nearest-neighbour graph whose edges
//! carry the Riemannian length of the straight latent segment between their
//! endpoints, measured through the decoder's pullback metric `G = J^T J`.
//! Shortest paths in that graph, found with A*, approximate geodesics.
//!
//! ```
//! use geode::decoder::AnalyticDecoder;
//! use geode::graph::{build_graph, nodes_from_points};
//! use geode::metric::MetricConfig;
//! use geode::search::{astar, Heuristic};
//!
//! let decoder = AnalyticDecoder::Parabola { a: 1.0 };
//! let points = (0..50)
//!     .map(|i| vec![(i % 10) as f64 * 0.2 - 1.0, (i / 10) as f64 * 0.2])
//!     .collect();
//! let cfg = MetricConfig::default();
//! let graph = build_graph(&decoder, nodes_from_points(points), 4, &cfg).unwrap();
//! let path = astar(&graph, &decoder, 0, 49, Heuristic::ObsChord, &cfg)
//!     .unwrap()
//!     .into_path()
//!     .unwrap();
//! assert_eq!(path.node_ids.first(), Some(&0));
//! assert_eq!(path.node_ids.last(), Some(&49));
//! ```

pub mod bench;
pub mod cli;
pub mod decoder;
pub mod error;
pub mod graph;
pub mod kdtree;
pub mod metric;
pub mod search;

pub use error::{Error, Result};
