//! Linear-attention decomposition of a one-shot prompt.
//!
//! Layout is column-per-token: `X_ins` is `d_in × n_ins`, `X_test` is
//! `d_in × n_test`, and the projections `W_K`, `W_V`, `W_Q` are
//! `d_out × d_in`. With `Q = W_Q X_test`, `K = W_K [X_ins | X_test]` and
//! `V = W_V [X_ins | X_test]`:
//!
//! ```text
//! softmax attention = V · softmax_cols(Kᵀ Q / scale)
//! linear attention  = V Kᵀ Q / scale
//!                   = W_V X_test (W_K X_test)ᵀ Q / scale   (zero-shot term)
//!                   + W_V X_ins  (W_K X_ins)ᵀ  Q / scale   (demonstration term)
//! ```
//!
//! The split of the linear form is exact; [`softmax_gap`] measures how far
//! the softmax form is from it.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DualityError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix {0} has non-finite entries")]
    NonFinite(&'static str),
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionInstance {
    pub w_k: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
    pub w_q: DMatrix<f64>,
    pub x_ins: DMatrix<f64>,
    pub x_test: DMatrix<f64>,
}

impl AttentionInstance {
    pub fn new(
        w_k: DMatrix<f64>,
        w_v: DMatrix<f64>,
        w_q: DMatrix<f64>,
        x_ins: DMatrix<f64>,
        x_test: DMatrix<f64>,
    ) -> Result<Self, DualityError> {
        let (d_out, d_in) = w_k.shape();
        for (name, w) in [("W_V", &w_v), ("W_Q", &w_q)] {
            if w.shape() != (d_out, d_in) {
                return Err(DualityError::Shape(format!("{name} is {:?}, W_K is {:?}", w.shape(), (d_out, d_in))));
            }
        }
        if d_in == 0 || d_out == 0 {
            return Err(DualityError::Shape("d_in and d_out must be positive".into()));
        }
        if x_ins.nrows() != d_in || x_test.nrows() != d_in {
            return Err(DualityError::Shape(format!(
                "token vectors must have {d_in} rows (X_ins {}, X_test {})",
                x_ins.nrows(),
                x_test.nrows()
            )));
        }
        if x_test.ncols() == 0 {
            return Err(DualityError::Shape("X_test needs at least one token".into()));
        }
        for (name, m) in [("W_K", &w_k), ("W_V", &w_v), ("W_Q", &w_q), ("X_ins", &x_ins), ("X_test", &x_test)] {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(DualityError::NonFinite(name));
            }
        }
        Ok(AttentionInstance { w_k, w_v, w_q, x_ins, x_test })
    }

    /// Entries uniform in [-1, 1).
    pub fn random(seed: u64, d_in: usize, d_out: usize, n_ins: usize, n_test: usize) -> Result<Self, DualityError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        let (w_k, w_v, w_q) = (m(d_out, d_in), m(d_out, d_in), m(d_out, d_in));
        let (x_ins, x_test) = (m(d_in, n_ins), m(d_in, n_test));
        Self::new(w_k, w_v, w_q, x_ins, x_test)
    }

    pub fn d_in(&self) -> usize {
        self.w_k.ncols()
    }

    pub fn query(&self) -> DMatrix<f64> {
        &self.w_q * &self.x_test
    }

    /// `[X_ins | X_test]`
    pub fn tokens(&self) -> DMatrix<f64> {
        let (d_in, n_ins, n_test) = (self.d_in(), self.x_ins.ncols(), self.x_test.ncols());
        let mut x = DMatrix::zeros(d_in, n_ins + n_test);
        x.columns_mut(0, n_ins).copy_from(&self.x_ins);
        x.columns_mut(n_ins, n_test).copy_from(&self.x_test);
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub joint: DMatrix<f64>,
    pub zsl_part: DMatrix<f64>,
    pub iit_part: DMatrix<f64>,
}

impl Decomposition {
    /// `‖joint − zsl − iit‖_F / ‖joint‖_F` (0 when both are zero).
    pub fn relative_residual(&self) -> f64 {
        let r = (&self.joint - &self.zsl_part - &self.iit_part).norm();
        let j = self.joint.norm();
        if j == 0.0 { r } else { r / j }
    }
}

fn outer_term(w_v: &DMatrix<f64>, w_k: &DMatrix<f64>, x: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let v = w_v * x;
    let k = w_k * x;
    v * (k.transpose() * q)
}

/// Joint linear attention and its two additive parts, unscaled.
pub fn linear_decompose(instance: &AttentionInstance) -> Decomposition {
    linear_decompose_with_query(instance, &instance.query())
}

/// As [`linear_decompose`] with an explicit `d_out × n_test` query matrix.
pub fn linear_decompose_with_query(instance: &AttentionInstance, q: &DMatrix<f64>) -> Decomposition {
    let joint = outer_term(&instance.w_v, &instance.w_k, &instance.tokens(), q);
    let zsl_part = outer_term(&instance.w_v, &instance.w_k, &instance.x_test, q);
    let iit_part = outer_term(&instance.w_v, &instance.w_k, &instance.x_ins, q);
    Decomposition { joint, zsl_part, iit_part }
}

/// Column-wise softmax with max subtraction.
fn softmax_columns(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for mut col in m.column_iter_mut() {
        let max = col.max();
        col.apply(|x| *x = (*x - max).exp());
        let sum = col.sum();
        col /= sum;
    }
    m
}

pub fn softmax_attention(instance: &AttentionInstance, scale: f64) -> DMatrix<f64> {
    let x = instance.tokens();
    let k = &instance.w_k * &x;
    let v = &instance.w_v * &x;
    v * softmax_columns(k.transpose() * instance.query() / scale)
}

pub fn linear_attention(instance: &AttentionInstance, scale: f64) -> DMatrix<f64> {
    linear_decompose(instance).joint / scale
}

/// Distance between softmax and linear attention outputs, relative to the
/// softmax output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxGap {
    pub frobenius: f64,
    pub max_abs: f64,
}

pub fn default_scale(instance: &AttentionInstance) -> f64 {
    (instance.d_in() as f64).sqrt()
}

pub fn softmax_gap(instance: &AttentionInstance, scale: f64) -> Result<SoftmaxGap, DualityError> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(DualityError::InvalidScale(scale));
    }
    let s = softmax_attention(instance, scale);
    let diff = &s - linear_attention(instance, scale);
    let rel = |num: f64, den: f64| if den == 0.0 { num } else { num / den };
    Ok(SoftmaxGap {
        frobenius: rel(diff.norm(), s.norm()),
        max_abs: rel(diff.amax(), s.amax()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoParams {
    pub d_in: usize,
    pub d_out: usize,
    pub n_ins: usize,
    pub n_test: usize,
    pub seed: u64,
    pub instances: usize,
}

impl Default for DemoParams {
    fn default() -> Self {
        DemoParams { d_in: 16, d_out: 8, n_ins: 5, n_test: 7, seed: 0, instances: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub key_scale: f64,
    pub gap: SoftmaxGap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub params: DemoParams,
    pub max_relative_residual: f64,
    pub mean_relative_residual: f64,
    /// With no demonstration tokens the demonstration term is exactly zero.
    pub empty_demonstration_exact: bool,
    pub scale: f64,
    /// Gap as `W_K` is multiplied by `key_scale` (instance seeded with `seed`).
    pub gap_sweep: Vec<SweepPoint>,
}

pub const KEY_SCALES: [f64; 6] = [1.0, 0.5, 0.1, 0.01, 0.001, 0.0001];

/// Residuals over `params.instances` seeded instances plus a softmax-gap
/// sweep over key scales.
pub fn run_demo(params: &DemoParams) -> Result<DemoReport, DualityError> {
    let mut residuals = Vec::with_capacity(params.instances);
    for i in 0..params.instances {
        let inst = AttentionInstance::random(
            params.seed.wrapping_add(i as u64),
            params.d_in,
            params.d_out,
            params.n_ins,
            params.n_test,
        )?;
        residuals.push(linear_decompose(&inst).relative_residual());
    }
    let empty = AttentionInstance::random(params.seed, params.d_in, params.d_out, 0, params.n_test)?;
    let empty_demonstration_exact = linear_decompose(&empty).iit_part.iter().all(|&x| x == 0.0);

    let base = AttentionInstance::random(params.seed, params.d_in, params.d_out, params.n_ins, params.n_test)?;
    let scale = default_scale(&base);
    let gap_sweep = KEY_SCALES
        .iter()
        .map(|&key_scale| {
            let mut inst = base.clone();
            inst.w_k *= key_scale;
            Ok(SweepPoint { key_scale, gap: softmax_gap(&inst, scale)? })
        })
        .collect::<Result<_, DualityError>>()?;

    let n = residuals.len().max(1) as f64;
    Ok(DemoReport {
        params: *params,
        max_relative_residual: residuals.iter().copied().fold(0.0, f64::max),
        mean_relative_residual: residuals.iter().sum::<f64>() / n,
        empty_demonstration_exact,
        scale,
        gap_sweep,
    })
}
