//! Order-2 autoregressive policy: the next token depends on the previous two
//! (padded with a BOS row). Sequence log-probabilities are exact sums, so the
//! joint/conditional/marginal identities hold up to rounding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::corpus::EMPTY_TOKEN;
use crate::error::{Error, Result};
use crate::numeric::logsumexp;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Trainable,
    Reference,
}

/// Layout: `[E ((V+1)×d) | O1 (d×V) | O2 (d×V) | b (V)]`; row V of E is BOS.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub vocab: usize,
    pub dim: usize,
    role: Role,
    values: Vec<f64>,
}

impl Parameters for PolicyParams {
    fn values(&self) -> &[f64] {
        &self.values
    }

    fn values_mut(&mut self) -> Result<&mut [f64]> {
        match self.role {
            Role::Trainable => Ok(&mut self.values),
            Role::Reference => Err(Error::Contract("reference policy parameters are frozen".into())),
        }
    }
}

pub fn n_params(vocab: usize, dim: usize) -> usize {
    (vocab + 1) * dim + 2 * dim * vocab + vocab
}

impl PolicyParams {
    /// All-zero parameters: every next-token distribution is uniform.
    pub fn uniform(vocab: usize, dim: usize) -> Self {
        PolicyParams { vocab, dim, role: Role::Trainable, values: vec![0.0; n_params(vocab, dim)] }
    }

    pub fn init(vocab: usize, dim: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "policy-init", 0);
        let values = (0..n_params(vocab, dim)).map(|_| r.random_range(-0.1..=0.1)).collect();
        PolicyParams { vocab, dim, role: Role::Trainable, values }
    }

    pub fn from_values(vocab: usize, dim: usize, role: Role, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_params(vocab, dim) {
            return Err(Error::Domain(format!(
                "policy ({vocab}, {dim}) expects {} parameters, got {}",
                n_params(vocab, dim),
                values.len()
            )));
        }
        Ok(PolicyParams { vocab, dim, role, values })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// A frozen copy to serve as π_ref.
    pub fn snapshot(&self) -> Self {
        PolicyParams { role: Role::Reference, ..self.clone() }
    }

    /// A trainable copy, e.g. θ initialised at the reference.
    pub fn thaw(&self) -> Self {
        PolicyParams { role: Role::Trainable, ..self.clone() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let (v, d) = (self.vocab, self.dim);
        let o1 = (v + 1) * d;
        let o2 = o1 + d * v;
        (o1, o2, o2 + d * v)
    }

    fn check_tokens(&self, s: &[u32]) -> Result<()> {
        match s.iter().find(|&&t| t as usize >= self.vocab) {
            Some(t) => Err(Error::Domain(format!("token {t} outside policy vocabulary {}", self.vocab))),
            None => Ok(()),
        }
    }

    fn ctx_row(&self, s: &[u32], pos: isize) -> usize {
        if pos < 0 {
            self.vocab
        } else {
            s[pos as usize] as usize
        }
    }

    fn logits(&self, c2: usize, c1: usize) -> Vec<f64> {
        let (v, d) = (self.vocab, self.dim);
        let (o1, o2, b) = self.offsets();
        let p = &self.values;
        let mut z = p[b..b + v].to_vec();
        for i in 0..d {
            let (e1, e2) = (p[c1 * d + i], p[c2 * d + i]);
            let r1 = &p[o1 + i * v..o1 + (i + 1) * v];
            let r2 = &p[o2 + i * v..o2 + (i + 1) * v];
            for k in 0..v {
                z[k] += e1 * r1[k] + e2 * r2[k];
            }
        }
        z
    }

    fn log_softmax(z: &[f64]) -> Vec<f64> {
        let lse = logsumexp(z);
        z.iter().map(|x| x - lse).collect()
    }

    /// Next-token distribution after `prefix` (only its last two tokens matter).
    pub fn next_token_probs(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        self.check_tokens(prefix)?;
        let n = prefix.len() as isize;
        let z = self.logits(self.ctx_row(prefix, n - 2), self.ctx_row(prefix, n - 1));
        Ok(Self::log_softmax(&z).into_iter().map(f64::exp).collect())
    }

    /// Σ log p(s_t | s_{t−2}, s_{t−1}) over positions `from..s.len()`, optionally
    /// adding `coef ·` its gradient into `grad`.
    fn span_logprob(&self, s: &[u32], from: usize, mut grad: Option<(f64, &mut [f64])>) -> f64 {
        let (v, d) = (self.vocab, self.dim);
        let (o1, o2, b) = self.offsets();
        let mut terms = Vec::with_capacity(s.len() - from);
        for t in from..s.len() {
            let (c2, c1) = (self.ctx_row(s, t as isize - 2), self.ctx_row(s, t as isize - 1));
            let lp = Self::log_softmax(&self.logits(c2, c1));
            let y = s[t] as usize;
            terms.push(lp[y]);
            if let Some((coef, g)) = grad.as_mut() {
                let p = &self.values;
                let delta: Vec<f64> =
                    lp.iter().enumerate().map(|(k, l)| *coef * (f64::from(u8::from(k == y)) - l.exp())).collect();
                for k in 0..v {
                    g[b + k] += delta[k];
                }
                for i in 0..d {
                    let (e1, e2) = (p[c1 * d + i], p[c2 * d + i]);
                    let (mut s1, mut s2) = (0.0, 0.0);
                    for k in 0..v {
                        g[o1 + i * v + k] += e1 * delta[k];
                        g[o2 + i * v + k] += e2 * delta[k];
                        s1 += p[o1 + i * v + k] * delta[k];
                        s2 += p[o2 + i * v + k] * delta[k];
                    }
                    g[c1 * d + i] += s1;
                    g[c2 * d + i] += s2;
                }
            }
        }
        crate::numeric::pairwise_sum(&terms)
    }

    fn concat(x: &[u32], y: &[u32]) -> Vec<u32> {
        let mut s = Vec::with_capacity(x.len() + y.len());
        s.extend_from_slice(x);
        s.extend_from_slice(y);
        s
    }

    /// log π(x).
    pub fn logprob_marginal(&self, x: &[u32]) -> Result<f64> {
        self.check_tokens(x)?;
        Ok(self.span_logprob(x, 0, None))
    }

    /// log π(y | x).
    pub fn logprob_cond(&self, x: &[u32], y: &[u32]) -> Result<f64> {
        if y.is_empty() {
            return Err(Error::Domain("conditional log-probability of an empty response".into()));
        }
        self.check_tokens(x)?;
        self.check_tokens(y)?;
        Ok(self.span_logprob(&Self::concat(x, y), x.len(), None))
    }

    /// log π(x, y) = log π(x ++ y).
    pub fn logprob_joint(&self, x: &[u32], y: &[u32]) -> Result<f64> {
        self.check_tokens(x)?;
        self.check_tokens(y)?;
        Ok(self.span_logprob(&Self::concat(x, y), 0, None))
    }

    fn require_trainable(&self) -> Result<()> {
        match self.role {
            Role::Trainable => Ok(()),
            Role::Reference => Err(Error::Contract("gradients requested from a reference policy".into())),
        }
    }

    /// Adds `coef · ∇ log π(y | x)` into `grad`; returns log π(y | x).
    pub fn accumulate_cond_grad(&self, x: &[u32], y: &[u32], coef: f64, grad: &mut [f64]) -> Result<f64> {
        self.require_trainable()?;
        if y.is_empty() {
            return Err(Error::Domain("conditional log-probability of an empty response".into()));
        }
        self.check_tokens(x)?;
        self.check_tokens(y)?;
        Ok(self.span_logprob(&Self::concat(x, y), x.len(), Some((coef, grad))))
    }

    /// Adds `coef · ∇ log π(x, y)` into `grad`; returns log π(x, y).
    pub fn accumulate_joint_grad(&self, x: &[u32], y: &[u32], coef: f64, grad: &mut [f64]) -> Result<f64> {
        self.require_trainable()?;
        self.check_tokens(x)?;
        self.check_tokens(y)?;
        Ok(self.span_logprob(&Self::concat(x, y), 0, Some((coef, grad))))
    }

    /// ((log π(y|x), ∇), (log π(x,y), ∇)).
    pub fn logprob_grads(&self, x: &[u32], y: &[u32]) -> Result<((f64, Vec<f64>), (f64, Vec<f64>))> {
        let mut gc = vec![0.0; self.len()];
        let mut gj = vec![0.0; self.len()];
        let c = self.accumulate_cond_grad(x, y, 1.0, &mut gc)?;
        let j = self.accumulate_joint_grad(x, y, 1.0, &mut gj)?;
        Ok(((c, gc), (j, gj)))
    }

    /// Decodes after `prompt` until the stop token (token 0, not emitted) or
    /// `max_len` tokens.
    pub fn sample(&self, prompt: &[u32], cfg: &SamplerConfig, r: &mut impl Rng) -> Result<Vec<u32>> {
        let mut s = prompt.to_vec();
        let mut out = Vec::new();
        while out.len() < cfg.max_len {
            let p = self.next_token_probs(&s)?;
            let t = match cfg.temperature {
                None => argmax(&p),
                Some(temp) => {
                    let logits: Vec<f64> = p.iter().map(|q| q.ln() / temp).collect();
                    let w: Vec<f64> = Self::log_softmax(&logits).into_iter().map(f64::exp).collect();
                    let u: f64 = r.random();
                    let mut acc = 0.0;
                    w.iter().position(|q| {
                        acc += q;
                        u < acc
                    })
                    .unwrap_or(w.len() - 1)
                }
            } as u32;
            if t == EMPTY_TOKEN {
                break;
            }
            s.push(t);
            out.push(t);
        }
        Ok(out)
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding unless a temperature is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub max_len: usize,
    pub temperature: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { max_len: 200, temperature: None }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(seed: u64, n: usize, v: u32) -> Vec<u32> {
        let mut r = rng::stream(seed, "seq", 0);
        (0..n).map(|_| r.random_range(0..v)).collect()
    }

    #[test]
    fn uniform_policy_logprob() {
        let p = PolicyParams::uniform(8, 3);
        let lp = p.logprob_cond(&[1, 2], &[3, 4, 5, 6]).unwrap();
        assert!((lp + 4.0 * 8f64.ln()).abs() < 1e-12);
        assert!(p.logprob_cond(&[1], &[]).is_err());
        assert!(p.logprob_cond(&[9], &[1]).is_err());
    }

    #[test]
    fn next_token_distributions_normalise() {
        let p = PolicyParams::init(8, 4, 1);
        for c2 in 0..8 {
            for c1 in 0..8 {
                let s: f64 = p.next_token_probs(&[c2, c1]).unwrap().iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
        let s: f64 = p.next_token_probs(&[]).unwrap().iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bayes_identity_on_random_pairs() {
        let p = PolicyParams::init(8, 4, 2);
        for i in 0..100 {
            let x = seq(i, 1 + (i as usize % 4), 8);
            let y = seq(i + 1000, 1 + (i as usize % 5), 8);
            let joint = p.logprob_joint(&x, &y).unwrap();
            let split = p.logprob_marginal(&x).unwrap() + p.logprob_cond(&x, &y).unwrap();
            assert!((joint - split).abs() < 1e-9);
            assert!(joint <= 0.0);
        }
    }

    #[test]
    fn one_token_continuations_sum_to_one() {
        let p = PolicyParams::init(8, 4, 3);
        let total: f64 = (0..8).map(|t| p.logprob_cond(&[5, 1, 7], &[t]).unwrap().exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_gradient_is_count_weighted_softmax() {
        // zero params: ∂/∂b_k of Σ_t log p(y_t) = count_k − n/V
        let p = PolicyParams::uniform(8, 2);
        let y = [3, 3, 5, 3];
        let ((_, g), _) = p.logprob_grads(&[1], &y).unwrap();
        let b = n_params(8, 2) - 8;
        for k in 0..8 {
            let count = y.iter().filter(|&&t| t == k as u32).count() as f64;
            assert!((g[b + k] - (count - 4.0 / 8.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_rejects_gradients() {
        let r = PolicyParams::init(8, 2, 1).snapshot();
        assert!(matches!(r.logprob_grads(&[1], &[2]), Err(Error::Contract(_))));
        let mut r = r;
        assert!(r.values_mut().is_err());
    }

    #[test]
    fn gradients_match_central_differences() {
        for draw in 0..20u64 {
            let p = PolicyParams::init(6, 3, draw);
            let x = seq(draw, 2, 6);
            let y = seq(draw + 50, 3, 6);
            let ((_, gc), (_, gj)) = p.logprob_grads(&x, &y).unwrap();
            for i in 0..p.len() {
                let bump = |h: f64| {
                    let mut q = p.clone();
                    q.values[i] += h;
                    (q.logprob_cond(&x, &y).unwrap(), q.logprob_joint(&x, &y).unwrap())
                };
                let (hi, lo) = (bump(1e-5), bump(-1e-5));
                for (fd, g) in [((hi.0 - lo.0) / 2e-5, gc[i]), ((hi.1 - lo.1) / 2e-5, gj[i])] {
                    let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
                    assert!(rel < 1e-5, "draw {draw} param {i}: {fd} vs {g}");
                }
            }
        }
    }

    #[test]
    fn greedy_stops_and_respects_max_len() {
        let mut p = PolicyParams::uniform(8, 2);
        let b = n_params(8, 2) - 8;
        p.values_mut().unwrap()[b + 4] = 5.0;
        let mut r = rng::stream(0, "s", 0);
        let out = p.sample(&[1], &SamplerConfig { max_len: 7, temperature: None }, &mut r).unwrap();
        assert_eq!(out, vec![4; 7]);
        p.values_mut().unwrap()[b] = 9.0;
        assert!(p.sample(&[1], &SamplerConfig::default(), &mut r).unwrap().is_empty());
    }
}
