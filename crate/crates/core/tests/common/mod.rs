//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use geode::decoder::{Activation, AnalyticDecoder, DecoderModel, DenseLayer};
use geode::graph::{build_graph, nodes_from_points, LatentGraph};
use geode::metric::MetricConfig;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` points uniform in `[lo, hi]^dim`.
pub fn cloud(n: usize, dim: usize, lo: f64, hi: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| r.random_range(lo..hi)).collect())
        .collect()
}

pub fn random_layer(
    rows: usize,
    cols: usize,
    activation: Activation,
    r: &mut ChaCha8Rng,
) -> DenseLayer {
    let scale = 1.0 / (cols as f64).sqrt();
    DenseLayer {
        rows,
        cols,
        weights: (0..rows * cols)
            .map(|_| r.random_range(-scale..scale) * 2.0)
            .collect(),
        bias: (0..rows).map(|_| r.random_range(-0.5..0.5)).collect(),
        activation,
    }
}

/// `nz -> hidden (tanh) -> nx (sigmoid)`.
pub fn random_mlp(nz: usize, hidden: usize, nx: usize, seed: u64) -> DecoderModel {
    let mut r = rng(seed);
    let layers = vec![
        random_layer(hidden, nz, Activation::Tanh, &mut r),
        random_layer(nx, hidden, Activation::Sigmoid, &mut r),
    ];
    DecoderModel::new(nz, nx, layers).unwrap()
}

pub fn random_linear(nx: usize, nz: usize, seed: u64) -> AnalyticDecoder {
    let mut r = rng(seed);
    AnalyticDecoder::Linear(DMatrix::from_fn(nx, nz, |_, _| r.random_range(-2.0..2.0)))
}

pub fn analytic_decoders() -> Vec<(&'static str, AnalyticDecoder)> {
    vec![
        (
            "linear",
            AnalyticDecoder::linear(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.7, -1.1]),
        ),
        ("parabola", AnalyticDecoder::Parabola { a: 1.0 }),
        (
            "sine_ridge",
            AnalyticDecoder::SineRidge {
                amplitude: 1.0,
                frequency: 2.0,
            },
        ),
    ]
}

pub fn random_graph(
    model: &dyn geode::decoder::Decoder,
    n: usize,
    k: usize,
    curve_samples: usize,
    seed: u64,
) -> LatentGraph {
    let cfg = MetricConfig::default().with_curve_samples(curve_samples);
    let points = cloud(n, model.input_dim(), -2.0, 2.0, seed);
    build_graph(model, nodes_from_points(points), k, &cfg).unwrap()
}

/// Brute-force k nearest ids, ties broken by lower id.
pub fn brute_knn(points: &[Vec<f64>], q: &[f64], k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(), i))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, i)| i).collect()
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Hand-derived Jacobians, written independently of the library.
pub fn oracle_jacobian(name: &str, dec: &AnalyticDecoder, z: &[f64]) -> DMatrix<f64> {
    match (name, dec) {
        (_, AnalyticDecoder::Linear(w)) => w.clone(),
        (_, AnalyticDecoder::Parabola { a }) => {
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 2.0 * a * z[0], 0.0])
        }
        (
            _,
            AnalyticDecoder::SineRidge {
                amplitude,
                frequency,
            },
        ) => DMatrix::from_row_slice(
            3,
            2,
            &[
                1.0,
                0.0,
                0.0,
                1.0,
                amplitude * frequency * (frequency * z[0]).cos(),
                0.0,
            ],
        ),
    }
}

/// Arc length of `x -> (x, 0, x^2)` over `[-1, 1]`: `sqrt(5) + asinh(2) / 2`.
pub fn parabola_length_closed_form() -> f64 {
    5f64.sqrt() + 2f64.asinh() / 2.0
}

/// Midpoint sum of `sqrt(1 + 4 x^2) * 2` over `t in [0, 1]`, `x = 2t - 1`.
pub fn parabola_length_midpoint(n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        let x = 2.0 * ((i as f64 + 0.5) / n as f64) - 1.0;
        s += 2.0 * (1.0 + 4.0 * x * x).sqrt();
    }
    s / n as f64
}

/// Latent codes of data with two underlying factors: factors uniform in
/// `[-2, 2]^2`, embedded in `R^dim` through a random orthonormal map, plus
/// isotropic Gaussian noise of scale `noise`.
pub fn embedded_cloud(n: usize, dim: usize, noise: f64, seed: u64) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    let mut r = rng(seed);
    let raw = DMatrix::from_fn(dim, 2.min(dim), |_, _| -> f64 {
        StandardNormal.sample(&mut r)
    });
    let basis = raw.qr().q();
    (0..n)
        .map(|_| {
            let u = nalgebra::DVector::from_fn(basis.ncols(), |_, _| r.random_range(-2.0..2.0));
            let p: nalgebra::DVector<f64> = &basis * u;
            p.iter()
                .map(|v| {
                    v + noise * {
                        let e: f64 = StandardNormal.sample(&mut r);
                        e
                    }
                })
                .collect::<Vec<f64>>()
        })
        .collect()
}
