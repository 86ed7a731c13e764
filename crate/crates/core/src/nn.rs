//! Numeric plumbing shared by the encoder and the graph classifier:
//! parameter traversal, Adam, Glorot init and the tensor blob format.

use std::io::{Read, Write};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A set of named dense tensors stored in standard layout.
pub trait Params {
    /// `(name, shape)` in declaration order.
    fn shapes(&self) -> Vec<(String, Vec<usize>)>;
    fn slices(&self) -> Vec<&[f64]>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_scalars(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }
}

/// Models whose tensors are all matrices (vectors stored as `1 × n`).
pub trait TensorList: Clone {
    fn tensors(&self) -> Vec<(String, &Array2<f64>)>;
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }
}

impl<T: TensorList> Params for T {
    fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect()
    }
    fn slices(&self) -> Vec<&[f64]> {
        self.tensors()
            .into_iter()
            .map(|(_, t)| t.as_slice().expect("standard layout"))
            .collect()
    }
    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.tensors_mut()
            .into_iter()
            .map(|t| t.as_slice_mut().expect("standard layout"))
            .collect()
    }
}

pub fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-a..a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers mirror the parameter slices.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new<P: Params>(config: AdamConfig, params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params.slices().iter().map(|s| vec![0.0; s.len()]).collect();
        Adam {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step<P: Params>(&mut self, params: &mut P, grads: &P) {
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .slices_mut()
            .into_iter()
            .zip(grads.slices())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                p[i] -= c.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum BlobError {
    #[error("bad magic: expected {expected:?}")]
    Magic { expected: String },
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("tensor {name} has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("tensor list mismatch: {0}")]
    Tensors(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

/// Writes `magic`, a u32 LE header length, the JSON header (with the tensor
/// table appended under "tensors"), then every tensor as row-major f32 LE.
pub fn write_blob<W: Write, P: Params>(
    mut w: W,
    magic: &str,
    header: serde_json::Value,
    params: &P,
) -> Result<(), BlobError> {
    let mut header = header;
    let table: Vec<TensorInfo> = params
        .shapes()
        .into_iter()
        .map(|(name, shape)| TensorInfo { name, shape })
        .collect();
    header["tensors"] = serde_json::to_value(table)?;
    let bytes = serde_json::to_vec(&header)?;
    w.write_all(magic.as_bytes())?;
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(&bytes)?;
    for s in params.slices() {
        for &x in s {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads the header of a blob written by [`write_blob`].
pub fn read_blob_header<R: Read>(r: &mut R, magic: &str) -> Result<serde_json::Value, BlobError> {
    let mut m = vec![0u8; magic.len()];
    r.read_exact(&mut m)?;
    if m != magic.as_bytes() {
        return Err(BlobError::Magic {
            expected: magic.into(),
        });
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut bytes = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut bytes)?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Fills `params` (already shaped from the header's config) with the tensor
/// data following the header.
pub fn read_blob_tensors<R: Read, P: Params>(
    r: &mut R,
    header: &serde_json::Value,
    params: &mut P,
) -> Result<(), BlobError> {
    let table: Vec<TensorInfo> = serde_json::from_value(header["tensors"].clone())?;
    let expected = params.shapes();
    if table.len() != expected.len() {
        return Err(BlobError::Tensors(format!(
            "{} tensors stored, {} expected",
            table.len(),
            expected.len()
        )));
    }
    for (t, (name, shape)) in table.iter().zip(&expected) {
        if &t.name != name || &t.shape != shape {
            return Err(BlobError::Shape {
                name: t.name.clone(),
                found: t.shape.clone(),
                expected: shape.clone(),
            });
        }
    }
    let mut buf = [0u8; 4];
    for s in params.slices_mut() {
        for x in s.iter_mut() {
            r.read_exact(&mut buf)?;
            *x = f32::from_le_bytes(buf) as f64;
        }
    }
    Ok(())
}
