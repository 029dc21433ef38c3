//! r(x, y): a linear map or a D → H → 1 tanh perceptron over explicit features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::FeatureConfig;
use super::Parameters;
use crate::constraints::AugmentedPrompt;
use crate::corpus::TokenSequence;
use crate::error::{Error, Result};
use crate::numeric::all_finite;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerArch {
    Linear,
    Mlp { hidden: usize },
}

impl Default for ScorerArch {
    fn default() -> Self {
        ScorerArch::Mlp { hidden: 16 }
    }
}

impl ScorerArch {
    pub fn n_params(&self, input_dim: usize) -> usize {
        match *self {
            ScorerArch::Linear => input_dim + 1,
            ScorerArch::Mlp { hidden } => hidden * input_dim + 2 * hidden + 1,
        }
    }
}

/// Layout — linear: `[w (D), b]`; MLP: `[W1 (H×D, row-major), b1 (H), w2 (H), b2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    pub arch: ScorerArch,
    pub input_dim: usize,
    values: Vec<f64>,
}

impl Parameters for ScorerParams {
    fn values(&self) -> &[f64] {
        &self.values
    }

    fn values_mut(&mut self) -> Result<&mut [f64]> {
        Ok(&mut self.values)
    }
}

impl ScorerParams {
    pub fn zeros(arch: ScorerArch, input_dim: usize) -> Self {
        ScorerParams { arch, input_dim, values: vec![0.0; arch.n_params(input_dim)] }
    }

    /// Uniform in [−0.1, 0.1].
    pub fn init(arch: ScorerArch, input_dim: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "scorer-init", 0);
        let values = (0..arch.n_params(input_dim)).map(|_| r.random_range(-0.1..=0.1)).collect();
        ScorerParams { arch, input_dim, values }
    }

    pub fn from_values(arch: ScorerArch, input_dim: usize, values: Vec<f64>) -> Result<Self> {
        let want = arch.n_params(input_dim);
        if values.len() != want {
            return Err(Error::Domain(format!("scorer expects {want} parameters, got {}", values.len())));
        }
        Ok(ScorerParams { arch, input_dim, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Domain(format!("feature dim {} ≠ scorer input dim {}", x.len(), self.input_dim)));
        }
        if !all_finite(&self.values) {
            return Err(Error::Numeric("scorer parameters are not finite".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let d = self.input_dim;
        let v = &self.values;
        Ok(match self.arch {
            ScorerArch::Linear => dot(&v[..d], x) + v[d],
            ScorerArch::Mlp { hidden: h } => {
                let (b1, w2, b2) = (h * d, h * d + h, h * d + 2 * h);
                (0..h).map(|j| v[w2 + j] * (dot(&v[j * d..(j + 1) * d], x) + v[b1 + j]).tanh()).sum::<f64>() + v[b2]
            }
        })
    }

    /// Adds `coef · ∂score/∂params` into `out` and returns the score.
    pub fn accumulate_grad(&self, x: &[f64], coef: f64, out: &mut [f64]) -> Result<f64> {
        self.check(x)?;
        let d = self.input_dim;
        let v = &self.values;
        match self.arch {
            ScorerArch::Linear => {
                for k in 0..d {
                    out[k] += coef * x[k];
                }
                out[d] += coef;
                Ok(dot(&v[..d], x) + v[d])
            }
            ScorerArch::Mlp { hidden: h } => {
                let (b1, w2, b2) = (h * d, h * d + h, h * d + 2 * h);
                let mut s = v[b2];
                out[b2] += coef;
                for j in 0..h {
                    let a = (dot(&v[j * d..(j + 1) * d], x) + v[b1 + j]).tanh();
                    s += v[w2 + j] * a;
                    out[w2 + j] += coef * a;
                    let back = coef * v[w2 + j] * (1.0 - a * a);
                    out[b1 + j] += back;
                    for k in 0..d {
                        out[j * d + k] += back * x[k];
                    }
                }
                Ok(s)
            }
        }
    }

    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.len()];
        self.accumulate_grad(x, 1.0, &mut g)?;
        Ok(g)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Featurizer plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Scorer {
    pub features: FeatureConfig,
    pub params: ScorerParams,
}

impl Scorer {
    pub fn new(features: FeatureConfig, arch: ScorerArch, seed: u64) -> Self {
        let params = ScorerParams::init(arch, features.dim(), seed);
        Scorer { features, params }
    }

    pub fn score(&self, prompt: &AugmentedPrompt, response: &TokenSequence) -> Result<f64> {
        self.params.forward(&self.features.featurize(prompt, response)?)
    }

    pub fn score_grad(&self, prompt: &AugmentedPrompt, response: &TokenSequence) -> Result<Vec<f64>> {
        self.params.grad(&self.features.featurize(prompt, response)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(d: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, "x", 0);
        (0..d).map(|_| r.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn zero_network_scores_zero() {
        let p = ScorerParams::zeros(ScorerArch::default(), 7);
        assert_eq!(p.forward(&random_input(7, 1)).unwrap(), 0.0);
    }

    #[test]
    fn hand_set_single_feature() {
        // one hidden unit reading feature 2 through tanh, output weight w
        let (d, w, feat) = (3, 1.7, 0.4);
        let mut v = vec![0.0; ScorerArch::Mlp { hidden: 1 }.n_params(d)];
        v[2] = 1.0;
        v[d + 1] = w;
        let p = ScorerParams::from_values(ScorerArch::Mlp { hidden: 1 }, d, v).unwrap();
        assert!((p.forward(&[5.0, -1.0, feat]).unwrap() - w * feat.tanh()).abs() < 1e-15);
        let lin = ScorerParams::from_values(ScorerArch::Linear, d, vec![0.0, 0.0, w, 0.0]).unwrap();
        assert_eq!(lin.forward(&[5.0, -1.0, feat]).unwrap(), w * feat);
    }

    #[test]
    fn zero_input_leaves_first_layer_gradient_zero() {
        let p = ScorerParams::init(ScorerArch::Mlp { hidden: 5 }, 4, 3);
        let g = p.grad(&[0.0; 4]).unwrap();
        assert!(g[..20].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn output_bias_and_chain_rule_by_hand() {
        let p = ScorerParams::init(ScorerArch::Mlp { hidden: 3 }, 2, 9);
        let x = [0.3, -1.2];
        let g = p.grad(&x).unwrap();
        let v = p.values();
        assert_eq!(g[g.len() - 1], 1.0);
        // ∂s/∂b1_j = w2_j (1 − tanh²(a_j)), a_j = W1_j·x + b1_j
        for j in 0..3 {
            let a = v[2 * j] * x[0] + v[2 * j + 1] * x[1] + v[6 + j];
            let expect = v[9 + j] * (1.0 - a.tanh().powi(2));
            assert!((g[6 + j] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        for draw in 0..20 {
            for arch in [ScorerArch::Linear, ScorerArch::Mlp { hidden: 6 }] {
                let p = ScorerParams::init(arch, 5, draw);
                let x = random_input(5, draw + 100);
                let g = p.grad(&x).unwrap();
                for i in 0..p.len() {
                    let mut hi = p.clone();
                    hi.values[i] += 1e-5;
                    let mut lo = p.clone();
                    lo.values[i] -= 1e-5;
                    let fd = (hi.forward(&x).unwrap() - lo.forward(&x).unwrap()) / 2e-5;
                    let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
                    assert!(rel < 1e-5, "draw {draw} param {i}: {fd} vs {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn non_finite_parameters_are_rejected() {
        let mut p = ScorerParams::zeros(ScorerArch::Linear, 2);
        p.values_mut().unwrap()[0] = f64::NAN;
        assert!(matches!(p.forward(&[1.0, 1.0]), Err(Error::Numeric(_))));
    }
}
