//! Pullback metric of a decoder: Jacobians, `G = J^T J`, Riemannian
//! velocities, discretized lengths of straight latent segments and the
//! magnification factor `sqrt(det G)`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::Decoder;
use crate::error::{Error, Result};

/// Largest latent dimension for which dense determinants are computed.
pub const MAX_DET_DIM: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// Central differences, `2 * Nz` decoder calls per Jacobian.
    FiniteDifference,
    /// Gaussian-perturbation estimate `E[(f(z+e) - f(z)) e^T] / sigma^2`.
    Stochastic,
    /// The decoder's closed-form Jacobian (analytic decoders only).
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub jacobian_mode: JacobianMode,
    pub fd_step: f64,
    pub stoch_sigma: f64,
    pub stoch_samples: usize,
    /// Sampling points per straight segment.
    pub curve_samples: usize,
    pub rng_seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            jacobian_mode: JacobianMode::FiniteDifference,
            fd_step: 1e-5,
            stoch_sigma: 1e-3,
            stoch_samples: 1000,
            curve_samples: 32,
            rng_seed: 0,
        }
    }
}

impl MetricConfig {
    pub fn with_curve_samples(mut self, n: usize) -> Self {
        self.curve_samples = n;
        self
    }

    pub fn with_mode(mut self, mode: JacobianMode) -> Self {
        self.jacobian_mode = mode;
        self
    }

    pub fn validate(&self, latent_dim: usize) -> Result<()> {
        if !(self.fd_step > 0.0 && self.fd_step < 1.0) {
            return Err(Error::Config(format!(
                "fd_step {} not in (0, 1)",
                self.fd_step
            )));
        }
        if !(self.stoch_sigma > 0.0 && self.stoch_sigma < 1.0) {
            return Err(Error::Config(format!(
                "stoch_sigma {} not in (0, 1)",
                self.stoch_sigma
            )));
        }
        if self.curve_samples == 0 {
            return Err(Error::Config("curve_samples must be at least 1".into()));
        }
        if self.jacobian_mode == JacobianMode::Stochastic && self.stoch_samples < latent_dim {
            return Err(Error::Config(format!(
                "stoch_samples {} below latent dimension {latent_dim}",
                self.stoch_samples
            )));
        }
        Ok(())
    }

    /// Config whose RNG seed is mixed with `stream`, so that independent
    /// evaluations draw independent, schedule-free random streams.
    pub fn for_stream(&self, stream: u64) -> MetricConfig {
        MetricConfig {
            rng_seed: splitmix64(self.rng_seed.wrapping_add(splitmix64(stream))),
            ..self.clone()
        }
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn check_dim(model: &dyn Decoder, what: &str, v: &[f64]) -> Result<()> {
    if v.len() != model.input_dim() {
        return Err(Error::dimension(what, model.input_dim(), v.len()));
    }
    Ok(())
}

/// Central-difference Jacobian, column `j` = `(f(z + h e_j) - f(z - h e_j)) / 2h`.
pub fn jacobian_fd(model: &dyn Decoder, z: &[f64], h: f64) -> Result<DMatrix<f64>> {
    check_dim(model, "z", z)?;
    let probes = fd_probes(z, h);
    let outputs = model.forward_batch(&probes)?;
    Ok(fd_from_outputs(&outputs, model.output_dim(), h))
}

fn fd_probes(z: &[f64], h: f64) -> Vec<Vec<f64>> {
    let mut probes = Vec::with_capacity(2 * z.len());
    for j in 0..z.len() {
        let mut plus = z.to_vec();
        plus[j] += h;
        let mut minus = z.to_vec();
        minus[j] -= h;
        probes.push(plus);
        probes.push(minus);
    }
    probes
}

fn fd_from_outputs(outputs: &[Vec<f64>], rows: usize, h: f64) -> DMatrix<f64> {
    let cols = outputs.len() / 2;
    DMatrix::from_fn(rows, cols, |r, c| {
        (outputs[2 * c][r] - outputs[2 * c + 1][r]) / (2.0 * h)
    })
}

/// Monte-Carlo Jacobian estimate from `cfg.stoch_samples` Gaussian
/// perturbations of scale `cfg.stoch_sigma`, seeded by `cfg.rng_seed`.
pub fn jacobian_stochastic(
    model: &dyn Decoder,
    z: &[f64],
    cfg: &MetricConfig,
) -> Result<DMatrix<f64>> {
    check_dim(model, "z", z)?;
    let nz = model.input_dim();
    let m = cfg.stoch_samples;
    if m < nz {
        return Err(Error::Config(format!(
            "stoch_samples {m} below latent dimension {nz}"
        )));
    }
    let sigma = cfg.stoch_sigma;
    let normal =
        Normal::new(0.0, sigma).map_err(|e| Error::Config(format!("stoch_sigma {sigma}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let noise: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..nz).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let probes: Vec<Vec<f64>> = noise
        .iter()
        .map(|eps| z.iter().zip(eps).map(|(a, e)| a + e).collect())
        .collect();
    let center = model.forward(z)?;
    let outputs = model.forward_batch(&probes)?;

    let nx = model.output_dim();
    let mut acc = DMatrix::<f64>::zeros(nx, nz);
    for (out, eps) in outputs.iter().zip(&noise) {
        for r in 0..nx {
            let diff = out[r] - center[r];
            for c in 0..nz {
                acc[(r, c)] += diff * eps[c];
            }
        }
    }
    Ok(acc / (m as f64 * sigma * sigma))
}

/// Jacobian under the configured mode.
pub fn jacobian(model: &dyn Decoder, z: &[f64], cfg: &MetricConfig) -> Result<DMatrix<f64>> {
    match cfg.jacobian_mode {
        JacobianMode::FiniteDifference => jacobian_fd(model, z, cfg.fd_step),
        JacobianMode::Stochastic => jacobian_stochastic(model, z, cfg),
        JacobianMode::Exact => {
            check_dim(model, "z", z)?;
            model
                .exact_jacobian(z)
                .ok_or_else(|| Error::Unsupported("decoder has no closed-form Jacobian".into()))
        }
    }
}

/// Symmetric positive semidefinite `G = J^T J`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricTensor(DMatrix<f64>);

/// `G = J^T J`, symmetrized as `(G + G^T) / 2`.
pub fn metric_tensor(jac: &DMatrix<f64>) -> MetricTensor {
    let g = jac.transpose() * jac;
    let sym = (&g + g.transpose()) * 0.5;
    MetricTensor(sym)
}

impl MetricTensor {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn determinant(&self) -> f64 {
        self.0.clone().determinant()
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        self.0.clone().symmetric_eigenvalues()
    }

    /// `v^T G v`
    pub fn inner(&self, v: &[f64]) -> f64 {
        let v = DVector::from_column_slice(v);
        (v.transpose() * &self.0 * &v)[(0, 0)]
    }
}

/// `||J dz||`, which equals `sqrt(dz^T G dz)` without forming `G`.
fn speed(jac: &DMatrix<f64>, dz: &[f64]) -> f64 {
    (0..jac.nrows())
        .map(|r| {
            let v = (0..jac.ncols()).fold(0.0, |acc, c| acc + jac[(r, c)] * dz[c]);
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Riemannian velocity `sqrt(dz^T G(z) dz)`.
pub fn velocity(model: &dyn Decoder, z: &[f64], dz: &[f64], cfg: &MetricConfig) -> Result<f64> {
    check_dim(model, "z", z)?;
    check_dim(model, "dz", dz)?;
    if dz.iter().all(|&d| d == 0.0) {
        return Ok(0.0);
    }
    Ok(speed(&jacobian(model, z, cfg)?, dz))
}

/// Straight latent segment `a -> b` sampled at `n` midpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveSegment {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub n: usize,
}

impl CurveSegment {
    pub fn new(a: Vec<f64>, b: Vec<f64>, n: usize) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::dimension("segment end", a.len(), b.len()));
        }
        if n == 0 {
            return Err(Error::Config(
                "segment needs at least one sampling point".into(),
            ));
        }
        Ok(CurveSegment { a, b, n })
    }

    /// Midpoint parameters `t_i = (i - 1/2) / n` for `i = 1..=n`.
    pub fn sample_times(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.n as f64;
        (0..self.n).map(move |i| (i as f64 + 0.5) / n)
    }

    pub fn point_at(&self, t: f64) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(a, b)| a + t * (b - a))
            .collect()
    }

    pub fn tangent(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(a, b)| b - a).collect()
    }
}

/// Discretized Riemannian length `(1/n) sum_i phi(t_i)` of the straight
/// segment. Decoder probes of all sampling points are fused into one batch.
pub fn curve_length(model: &dyn Decoder, seg: &CurveSegment, cfg: &MetricConfig) -> Result<f64> {
    check_dim(model, "segment start", &seg.a)?;
    check_dim(model, "segment end", &seg.b)?;
    if seg.n == 0 {
        return Err(Error::Config(
            "segment needs at least one sampling point".into(),
        ));
    }
    if seg.a == seg.b {
        return Ok(0.0);
    }
    let dz = seg.tangent();
    let points: Vec<Vec<f64>> = seg.sample_times().map(|t| seg.point_at(t)).collect();
    let total: f64 = match cfg.jacobian_mode {
        JacobianMode::FiniteDifference => {
            let h = cfg.fd_step;
            let nz = dz.len();
            let probes: Vec<Vec<f64>> = points.iter().flat_map(|p| fd_probes(p, h)).collect();
            let outputs = model.forward_batch(&probes)?;
            outputs
                .chunks_exact(2 * nz)
                .map(|chunk| speed(&fd_from_outputs(chunk, model.output_dim(), h), &dz))
                .sum()
        }
        JacobianMode::Stochastic | JacobianMode::Exact => {
            let mut sum = 0.0;
            for (i, p) in points.iter().enumerate() {
                let jac = jacobian(model, p, &cfg.for_stream(i as u64))?;
                sum += speed(&jac, &dz);
            }
            sum
        }
    };
    Ok(total / seg.n as f64)
}

/// Length of the straight segment `a -> b` using `cfg.curve_samples` points.
pub fn segment_length(
    model: &dyn Decoder,
    a: &[f64],
    b: &[f64],
    cfg: &MetricConfig,
) -> Result<f64> {
    curve_length(
        model,
        &CurveSegment::new(a.to_vec(), b.to_vec(), cfg.curve_samples)?,
        cfg,
    )
}

/// Local volume scaling `sqrt(det G(z))`; round-off negatives clamp to zero.
pub fn magnification_factor(model: &dyn Decoder, z: &[f64], cfg: &MetricConfig) -> Result<f64> {
    if model.input_dim() > MAX_DET_DIM {
        return Err(Error::Unsupported(format!(
            "magnification factor for latent dimension {} (max {MAX_DET_DIM})",
            model.input_dim()
        )));
    }
    let g = metric_tensor(&jacobian(model, z, cfg)?);
    Ok(g.determinant().max(0.0).sqrt())
}

/// Axis-aligned latent box `(xmin, xmax, ymin, ymax)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Bounds {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self> {
        let ok =
            [xmin, xmax, ymin, ymax].iter().all(|v| v.is_finite()) && xmin < xmax && ymin < ymax;
        if !ok {
            return Err(Error::Config(format!(
                "bounds ({xmin}, {xmax}, {ymin}, {ymax}) must be finite with min < max"
            )));
        }
        Ok(Bounds {
            xmin,
            xmax,
            ymin,
            ymax,
        })
    }
}

/// Magnification factor sampled at cell centres; `values` is row-major with
/// rows along `z2` and columns along `z1`.
#[derive(Clone, Debug, PartialEq)]
pub struct MfGrid {
    pub bounds: Bounds,
    pub resolution: usize,
    pub values: Vec<f64>,
}

impl MfGrid {
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        cell_center(&self.bounds, self.resolution, row, col)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.resolution + col]
    }

    /// CSV with header `z1,z2,mf`, one row per cell in row-major order,
    /// numbers printed with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "z1,z2,mf")?;
        for row in 0..self.resolution {
            for col in 0..self.resolution {
                let (x, y) = self.cell_center(row, col);
                writeln!(out, "{:.16e},{:.16e},{:.16e}", x, y, self.get(row, col))?;
            }
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

fn cell_center(b: &Bounds, res: usize, row: usize, col: usize) -> (f64, f64) {
    let dx = (b.xmax - b.xmin) / res as f64;
    let dy = (b.ymax - b.ymin) / res as f64;
    (
        b.xmin + (col as f64 + 0.5) * dx,
        b.ymin + (row as f64 + 0.5) * dy,
    )
}

/// Magnification factor over a `resolution x resolution` grid of a 2-D latent space.
pub fn mf_grid(
    model: &dyn Decoder,
    bounds: Bounds,
    resolution: usize,
    cfg: &MetricConfig,
) -> Result<MfGrid> {
    if model.input_dim() != 2 {
        return Err(Error::dimension(
            "mf grid latent dimension",
            2,
            model.input_dim(),
        ));
    }
    if resolution == 0 {
        return Err(Error::Config("resolution must be positive".into()));
    }
    let values = (0..resolution * resolution)
        .into_par_iter()
        .map(|cell| {
            let (x, y) = cell_center(&bounds, resolution, cell / resolution, cell % resolution);
            magnification_factor(model, &[x, y], &cfg.for_stream(cell as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MfGrid {
        bounds,
        resolution,
        values,
    })
}
