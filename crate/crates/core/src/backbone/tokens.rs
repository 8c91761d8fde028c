use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::container::{Container, TAG_CONTEXT};
use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Standard deviation of freshly initialised context tokens.
pub const TOKEN_INIT_STD: f64 = 0.02;

/// Default number of context tokens per context.
pub const DEFAULT_TOKEN_COUNT: usize = 50;

/// The trainable `m × d` token matrix of one context. Values are stored as `f32`, so a
/// checkpoint written to disk reloads bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextTokens {
    pub context_id: String,
    m: usize,
    d: usize,
    values: Vec<f32>,
}

impl ContextTokens {
    pub fn new(context_id: impl Into<String>, m: usize, d: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != m * d {
            return Err(Error::Backbone(format!("token matrix {m}x{d} given {} values", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("context tokens".into()));
        }
        Ok(Self { context_id: context_id.into(), m, d, values })
    }

    /// Zero-row token matrix: the encoder reduces to the plain frozen backbone.
    pub fn empty(context_id: impl Into<String>, d: usize) -> Self {
        Self { context_id: context_id.into(), m: 0, d, values: Vec::new() }
    }

    /// Rounds a real-valued matrix onto the stored precision.
    pub fn from_mat(context_id: impl Into<String>, mat: &Mat) -> Result<Self> {
        Self::new(context_id, mat.rows(), mat.cols(), mat.as_slice().iter().map(|&v| v as f32).collect())
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_mat(&self) -> Mat {
        Mat::from_vec(self.m, self.d, self.values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(self.m, self.d, self.values.clone());
        c.push_section(TAG_CONTEXT, self.context_id.as_bytes().to_vec());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let id = c.text_section(TAG_CONTEXT)?.unwrap_or_default();
        Self::new(id, c.rows, c.dim, c.values.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

/// I.i.d. `N(0, 0.02²)` tokens drawn from a seeded stream.
pub fn init_context_tokens(context_id: &str, m: usize, d: usize, seed: u64) -> Result<ContextTokens> {
    if d == 0 {
        return Err(Error::Backbone("token width must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, TOKEN_INIT_STD).expect("finite std");
    let values = (0..m * d).map(|_| normal.sample(&mut rng) as f32).collect();
    ContextTokens::new(context_id, m, d, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seed_deterministic() {
        let a = init_context_tokens("color", 50, 64, 5).unwrap();
        let b = init_context_tokens("color", 50, 64, 5).unwrap();
        let c = init_context_tokens("color", 50, 64, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_sample_std_is_near_target() {
        let t = init_context_tokens("c", 50, 64, 0).unwrap();
        let v: Vec<f64> = t.values().iter().map(|&x| f64::from(x)).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        let std = var.sqrt();
        assert!((0.015..=0.025).contains(&std), "std {std}");
    }

    #[test]
    fn zero_tokens_is_empty() {
        let t = init_context_tokens("c", 0, 64, 0).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.to_mat().rows(), 0);
    }

    #[test]
    fn container_round_trip_is_bit_exact() {
        let t = init_context_tokens("shape", 3, 4, 1).unwrap();
        let back = ContextTokens::from_container(&Container::decode(&t.to_container().encode()).unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn non_finite_values_are_rejected() {
        assert!(ContextTokens::new("c", 1, 2, vec![0.0, f32::NAN]).is_err());
    }
}
