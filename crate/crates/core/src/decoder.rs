//! Decoders: deterministic maps from latent space to observation space.
//!
//! Two families are provided. [`DecoderModel`] is a feed-forward network
//! loaded from a `geode-decoder-v1` weight file. [`AnalyticDecoder`] holds a
//! few closed-form surfaces with exact Jacobians, used as test oracles and
//! for synthetic benchmarks.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DECODER_FORMAT: &str = "geode-decoder-v1";
pub const ANALYTIC_FORMAT: &str = "geode-analytic-v1";

/// A pure function `f: R^Nz -> R^Nx`.
///
/// Implementations must be deterministic and safe to evaluate concurrently.
pub trait Decoder: Send + Sync {
    fn input_dim(&self) -> usize;

    fn output_dim(&self) -> usize;

    fn forward(&self, z: &[f64]) -> Result<Vec<f64>>;

    /// Evaluates every row. Bit-identical to calling [`Decoder::forward`] per row.
    fn forward_batch(&self, zs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        for (r, z) in zs.iter().enumerate() {
            if z.len() != self.input_dim() {
                return Err(Error::dimension(
                    format!("row {r}"),
                    self.input_dim(),
                    z.len(),
                ));
            }
        }
        zs.iter().map(|z| self.forward(z)).collect()
    }

    /// Closed-form Jacobian (`Nx x Nz`), when the decoder has one.
    fn exact_jacobian(&self, _z: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Stable fingerprint of the decoder parameters, recorded in graph files
    /// so a graph is never searched with a different decoder than it was built with.
    fn digest(&self) -> String;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    Softplus,
}

impl Activation {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "identity" => Activation::Identity,
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            "softplus" => Activation::Softplus,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Softplus => "softplus",
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
        }
    }

    /// Largest slope of the activation; used for Lipschitz bounds.
    pub fn lipschitz(self) -> f64 {
        match self {
            Activation::Sigmoid => 0.25,
            _ => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Affine map followed by an elementwise activation. `weights` is row-major `rows x cols`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    fn validate(&self, index: usize) -> Result<()> {
        let loc = || format!("layers[{index}]");
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::schema(loc(), "rows and cols must be positive"));
        }
        if self.weights.len() != self.rows * self.cols {
            return Err(Error::schema(
                loc(),
                format!(
                    "weights has {} entries, expected rows*cols = {}",
                    self.weights.len(),
                    self.rows * self.cols
                ),
            ));
        }
        if self.bias.len() != self.rows {
            return Err(Error::schema(
                loc(),
                format!(
                    "bias has {} entries, expected {}",
                    self.bias.len(),
                    self.rows
                ),
            ));
        }
        if !self.weights.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(Error::schema(loc(), "non-finite parameter"));
        }
        Ok(())
    }

    fn apply_into(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.cols)
                .zip(&self.bias)
                .map(|(row, b)| self.activation.apply(b + dot(row, input))),
        );
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

/// Four independent accumulators so the adds pipeline. Fixed order, so the
/// result is reproducible.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (a4, a_rest) = a.split_at(a.len() - a.len() % 4);
    let (b4, b_rest) = b.split_at(a4.len());
    for (wa, wb) in a4.chunks_exact(4).zip(b4.chunks_exact(4)) {
        for lane in 0..4 {
            acc[lane] += wa[lane] * wb[lane];
        }
    }
    let tail: f64 = a_rest.iter().zip(b_rest).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Feed-forward decoder network, immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderModel {
    input_dim: usize,
    output_dim: usize,
    layers: Vec<DenseLayer>,
}

#[derive(Serialize)]
struct DecoderFile<'a> {
    format: &'a str,
    input_dim: usize,
    output_dim: usize,
    layers: &'a [DenseLayer],
}

impl DecoderModel {
    pub fn new(input_dim: usize, output_dim: usize, layers: Vec<DenseLayer>) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::schema(
                "header",
                "input_dim and output_dim must be positive",
            ));
        }
        if layers.is_empty() {
            return Err(Error::schema("layers", "decoder has no layers"));
        }
        let mut width = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            layer.validate(i)?;
            if layer.cols != width {
                return Err(Error::dimension(
                    format!("layers[{i}].cols"),
                    width,
                    layer.cols,
                ));
            }
            width = layer.rows;
        }
        if width != output_dim {
            return Err(Error::dimension(
                format!("layers[{}].rows", layers.len() - 1),
                output_dim,
                width,
            ));
        }
        Ok(DecoderModel {
            input_dim,
            output_dim,
            layers,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::schema("document", e.to_string()))?;
        Self::from_json_value(&value)
    }

    pub fn from_json_value(value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::schema("document", "expected a JSON object"))?;
        match obj.get("format").and_then(Value::as_str) {
            Some(DECODER_FORMAT) => {}
            Some(other) => {
                return Err(Error::schema(
                    "format",
                    format!("expected \"{DECODER_FORMAT}\", found \"{other}\""),
                ))
            }
            None => return Err(Error::schema("format", "missing format tag")),
        }
        let input_dim = read_dim(obj, "input_dim")?;
        let output_dim = read_dim(obj, "output_dim")?;
        let raw_layers = obj
            .get("layers")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::schema("layers", "missing or not an array"))?;
        let layers = raw_layers
            .iter()
            .enumerate()
            .map(|(i, raw)| parse_layer(i, raw))
            .collect::<Result<Vec<_>>>()?;
        Self::new(input_dim, output_dim, layers)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&DecoderFile {
            format: DECODER_FORMAT,
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            layers: &self.layers,
        })
        .expect("decoder serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    /// Product of per-layer Lipschitz bounds (Frobenius norm times activation slope).
    pub fn lipschitz_bound(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.frobenius_norm() * l.activation.lipschitz())
            .product()
    }
}

fn read_dim(obj: &Map<String, Value>, key: &str) -> Result<usize> {
    obj.get(key)
        .and_then(Value::as_u64)
        .map(|v| v as usize)
        .ok_or_else(|| Error::schema(key, "missing or not a non-negative integer"))
}

fn parse_layer(index: usize, raw: &Value) -> Result<DenseLayer> {
    let loc = format!("layers[{index}]");
    if let Some(name) = raw.get("activation").and_then(Value::as_str) {
        if Activation::parse(name).is_none() {
            return Err(Error::schema(loc, format!("unknown activation \"{name}\"")));
        }
    }
    DenseLayer::deserialize(raw).map_err(|e| Error::schema(loc, e.to_string()))
}

impl Decoder for DecoderModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.input_dim {
            return Err(Error::dimension("z", self.input_dim, z.len()));
        }
        let mut current = z.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.apply_into(&current, &mut next);
            std::mem::swap(&mut current, &mut next);
        }
        Ok(current)
    }

    fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json_string().as_bytes()))
    }
}

/// Closed-form decoders. `Parabola` and `SineRidge` map `R^2 -> R^3`;
/// `Linear` maps `R^Nz -> R^Nx` through `z -> W z`.
#[derive(Clone, Debug, PartialEq)]
pub enum AnalyticDecoder {
    Linear(DMatrix<f64>),
    /// `f(z1, z2) = (z1, z2, a * z1^2)`
    Parabola {
        a: f64,
    },
    /// `f(z1, z2) = (z1, z2, amplitude * sin(frequency * z1))`
    SineRidge {
        amplitude: f64,
        frequency: f64,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum AnalyticFile {
    Linear {
        rows: usize,
        cols: usize,
        weights: Vec<f64>,
    },
    Parabola {
        a: f64,
    },
    SineRidge {
        amplitude: f64,
        frequency: f64,
    },
}

impl AnalyticDecoder {
    pub fn identity(dim: usize) -> Self {
        AnalyticDecoder::Linear(DMatrix::identity(dim, dim))
    }

    pub fn linear(rows: usize, cols: usize, row_major: &[f64]) -> Self {
        AnalyticDecoder::Linear(DMatrix::from_row_slice(rows, cols, row_major))
    }

    /// Parses a `geode-analytic-v1` document, e.g.
    /// `{"format":"geode-analytic-v1","kind":"sine_ridge","amplitude":1,"frequency":2}`.
    pub fn from_json_value(value: &Value) -> Result<Self> {
        let mut obj = value
            .as_object()
            .cloned()
            .ok_or_else(|| Error::schema("document", "expected a JSON object"))?;
        match obj.remove("format").as_ref().and_then(Value::as_str) {
            Some(ANALYTIC_FORMAT) => {}
            _ => {
                return Err(Error::schema(
                    "format",
                    format!("expected \"{ANALYTIC_FORMAT}\""),
                ))
            }
        }
        let file: AnalyticFile = serde_json::from_value(Value::Object(obj))
            .map_err(|e| Error::schema("document", e.to_string()))?;
        Ok(match file {
            AnalyticFile::Linear {
                rows,
                cols,
                weights,
            } => {
                if rows == 0 || cols == 0 || weights.len() != rows * cols {
                    return Err(Error::schema("weights", "expected rows*cols entries"));
                }
                AnalyticDecoder::linear(rows, cols, &weights)
            }
            AnalyticFile::Parabola { a } => AnalyticDecoder::Parabola { a },
            AnalyticFile::SineRidge {
                amplitude,
                frequency,
            } => AnalyticDecoder::SineRidge {
                amplitude,
                frequency,
            },
        })
    }

    pub fn to_json_string(&self) -> String {
        let file = match self {
            AnalyticDecoder::Linear(w) => AnalyticFile::Linear {
                rows: w.nrows(),
                cols: w.ncols(),
                weights: w.transpose().as_slice().to_vec(),
            },
            AnalyticDecoder::Parabola { a } => AnalyticFile::Parabola { a: *a },
            AnalyticDecoder::SineRidge {
                amplitude,
                frequency,
            } => AnalyticFile::SineRidge {
                amplitude: *amplitude,
                frequency: *frequency,
            },
        };
        let mut value = serde_json::to_value(file).expect("analytic decoder serializes");
        value
            .as_object_mut()
            .expect("tagged enum is an object")
            .insert("format".into(), Value::from(ANALYTIC_FORMAT));
        value.to_string()
    }
}

impl Decoder for AnalyticDecoder {
    fn input_dim(&self) -> usize {
        match self {
            AnalyticDecoder::Linear(w) => w.ncols(),
            _ => 2,
        }
    }

    fn output_dim(&self) -> usize {
        match self {
            AnalyticDecoder::Linear(w) => w.nrows(),
            _ => 3,
        }
    }

    fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.input_dim() {
            return Err(Error::dimension("z", self.input_dim(), z.len()));
        }
        Ok(match self {
            AnalyticDecoder::Linear(w) => (0..w.nrows())
                .map(|r| (0..w.ncols()).fold(0.0, |acc, c| acc + w[(r, c)] * z[c]))
                .collect(),
            AnalyticDecoder::Parabola { a } => vec![z[0], z[1], a * z[0] * z[0]],
            AnalyticDecoder::SineRidge {
                amplitude,
                frequency,
            } => vec![z[0], z[1], amplitude * (frequency * z[0]).sin()],
        })
    }

    fn exact_jacobian(&self, z: &[f64]) -> Option<DMatrix<f64>> {
        if z.len() != self.input_dim() {
            return None;
        }
        Some(match self {
            AnalyticDecoder::Linear(w) => w.clone(),
            AnalyticDecoder::Parabola { a } => {
                DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 2.0 * a * z[0], 0.0])
            }
            AnalyticDecoder::SineRidge {
                amplitude,
                frequency,
            } => DMatrix::from_row_slice(
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
        })
    }

    fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json_string().as_bytes()))
    }
}

/// Loads either a `geode-decoder-v1` network or a `geode-analytic-v1` surface,
/// dispatching on the document's `format` tag.
pub fn load_decoder(path: impl AsRef<Path>) -> Result<Box<dyn Decoder>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| Error::schema("document", e.to_string()))?;
    match value.get("format").and_then(Value::as_str) {
        Some(ANALYTIC_FORMAT) => Ok(Box::new(AnalyticDecoder::from_json_value(&value)?)),
        _ => Ok(Box::new(DecoderModel::from_json_value(&value)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(rows: usize, cols: usize, weights: &[f64], act: Activation) -> DenseLayer {
        DenseLayer {
            rows,
            cols,
            weights: weights.to_vec(),
            bias: vec![0.0; rows],
            activation: act,
        }
    }

    #[test]
    fn identity_layer_passes_through() {
        let m = DecoderModel::new(
            2,
            2,
            vec![layer(2, 2, &[1., 0., 0., 1.], Activation::Identity)],
        )
        .unwrap();
        assert_eq!(m.forward(&[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn diagonal_layer_scales() {
        let m = DecoderModel::new(
            2,
            2,
            vec![layer(2, 2, &[1., 0., 0., 2.], Activation::Identity)],
        )
        .unwrap();
        assert_eq!(m.forward(&[1.0, 1.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn relu_clamps_negative() {
        let m = DecoderModel::new(2, 2, vec![layer(2, 2, &[1., 0., 0., 1.], Activation::Relu)])
            .unwrap();
        assert_eq!(m.forward(&[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn forward_rejects_wrong_length() {
        let m = DecoderModel::new(2, 2, vec![layer(2, 2, &[1., 0., 0., 1.], Activation::Relu)])
            .unwrap();
        assert!(matches!(
            m.forward(&[1.0]),
            Err(Error::Dimension {
                expected: 2,
                actual: 1,
                ..
            })
        ));
    }

    #[test]
    fn batch_reports_row() {
        let m = AnalyticDecoder::identity(2);
        let err = m.forward_batch(&[vec![0.0, 0.0], vec![1.0]]).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
        assert!(m.forward_batch(&[]).unwrap().is_empty());
    }

    #[test]
    fn two_layer_file_parses() {
        let text = r#"{"format":"geode-decoder-v1","input_dim":2,"output_dim":4,"extra":1,
            "layers":[
              {"rows":3,"cols":2,"weights":[1,0,0,1,1,1],"bias":[0,0,0],"activation":"tanh"},
              {"rows":4,"cols":3,"weights":[1,0,0,0,1,0,0,0,1,1,1,1],"bias":[0,0,0,0.5],"activation":"identity"}
            ]}"#;
        let m = DecoderModel::from_json_str(text).unwrap();
        assert_eq!((m.input_dim(), m.output_dim()), (2, 4));
        assert_eq!(m.forward(&[0.3, -0.2]).unwrap().len(), 4);
    }

    #[test]
    fn mismatched_layer_names_index() {
        let text = r#"{"format":"geode-decoder-v1","input_dim":2,"output_dim":2,"layers":[
              {"rows":2,"cols":2,"weights":[1,0,0,1],"bias":[0,0],"activation":"relu"},
              {"rows":2,"cols":3,"weights":[1,0,0,0,1,0],"bias":[0,0],"activation":"relu"}]}"#;
        let err = DecoderModel::from_json_str(text).unwrap_err();
        assert!(
            matches!(&err, Error::Dimension { location, .. } if location.starts_with("layers[1]"))
        );
    }

    #[test]
    fn empty_layers_is_schema_error() {
        let text = r#"{"format":"geode-decoder-v1","input_dim":2,"output_dim":2,"layers":[]}"#;
        assert!(matches!(
            DecoderModel::from_json_str(text),
            Err(Error::Schema { .. })
        ));
    }

    #[test]
    fn unknown_activation_and_layer_keys_rejected() {
        let bad_act = r#"{"format":"geode-decoder-v1","input_dim":1,"output_dim":1,"layers":[
              {"rows":1,"cols":1,"weights":[1],"bias":[0],"activation":"gelu"}]}"#;
        let err = DecoderModel::from_json_str(bad_act).unwrap_err();
        assert!(err.to_string().contains("gelu"));
        let bad_key = r#"{"format":"geode-decoder-v1","input_dim":1,"output_dim":1,"layers":[
              {"rows":1,"cols":1,"weights":[1],"bias":[0],"activation":"relu","dropout":0.1}]}"#;
        let err = DecoderModel::from_json_str(bad_key).unwrap_err();
        assert!(matches!(&err, Error::Schema { location, .. } if location == "layers[0]"));
    }

    #[test]
    fn weight_file_round_trip() {
        let m = DecoderModel::new(
            2,
            3,
            vec![
                layer(
                    4,
                    2,
                    &[0.1, -0.2, 0.3, 0.4, 0.5, -0.6, 0.7, 0.8],
                    Activation::Softplus,
                ),
                layer(3, 4, &[1.0 / 3.0; 12], Activation::Sigmoid),
            ],
        )
        .unwrap();
        let back = DecoderModel::from_json_str(&m.to_json_string()).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.digest(), back.digest());
    }

    #[test]
    fn analytic_file_round_trip() {
        for d in [
            AnalyticDecoder::linear(2, 3, &[1., 2., 3., 4., 5., 6.]),
            AnalyticDecoder::Parabola { a: 1.5 },
            AnalyticDecoder::SineRidge {
                amplitude: 1.0,
                frequency: 2.0,
            },
        ] {
            let value: Value = serde_json::from_str(&d.to_json_string()).unwrap();
            assert_eq!(AnalyticDecoder::from_json_value(&value).unwrap(), d);
        }
    }

    #[test]
    fn activations_are_stable_at_extremes() {
        assert_eq!(Activation::Sigmoid.apply(-1000.0), 0.0);
        assert_eq!(Activation::Sigmoid.apply(1000.0), 1.0);
        assert_eq!(Activation::Softplus.apply(1000.0), 1000.0);
        assert!(Activation::Softplus.apply(-1000.0) >= 0.0);
        assert!((Activation::Softplus.apply(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
