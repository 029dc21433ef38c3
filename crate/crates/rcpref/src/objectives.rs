//! Probabilities, losses and enumeration oracles for the BT / Rc-BT / DPO /
//! Rc-DPO family. Batch terms are computed in parallel and reduced with a fixed
//! tree, so values are bit-stable across thread counts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{Arm, RcExample};
use crate::corpus::{is_word, PreferenceExample};
use crate::error::{Error, Result};
use crate::models::{FeatureConfig, PolicyParams, Role, Scorer, ScorerParams};
use crate::numeric::{logsumexp, pairwise_sum, pairwise_sum_vecs, sigmoid, softplus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    pub beta: f64,
    pub lambda: f64,
    pub rdpo_alpha: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig { beta: 0.1, lambda: 1.0, rdpo_alpha: 0.0 }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) || !(self.rdpo_alpha >= 0.0 && self.rdpo_alpha.is_finite()) {
            return Err(Error::Config("lambda and rdpo_alpha must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn finite_pair(a: f64, b: f64) -> Result<()> {
    if a.is_finite() && b.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite scores ({a}, {b})")))
    }
}

/// P(y_w ≻ y_l | x) = σ(r_w − r_l).
pub fn bt_prob(score_w: f64, score_l: f64) -> Result<f64> {
    finite_pair(score_w, score_l)?;
    Ok(sigmoid(score_w - score_l))
}

/// P(x_w ≻ x_l | y): the same sigmoid, with prompts compared under a fixed response.
pub fn rc_prob(score_preferred_prompt: f64, score_dispreferred_prompt: f64) -> Result<f64> {
    bt_prob(score_preferred_prompt, score_dispreferred_prompt)
}

/// −log σ(z) and its derivative in z.
fn nll_sigmoid(z: f64) -> (f64, f64) {
    (softplus(-z), -sigmoid(-z))
}

/// Mean of per-example (loss, grad) terms with a fixed reduction tree.
fn mean_terms(terms: &[(f64, Vec<f64>)], dim: usize) -> (f64, Vec<f64>) {
    let n = terms.len() as f64;
    let values: Vec<f64> = terms.iter().map(|t| t.0).collect();
    let grads: Vec<Vec<f64>> = terms.iter().map(|t| t.1.clone()).collect();
    let mut g = pairwise_sum_vecs(&grads, dim);
    g.iter_mut().for_each(|x| *x /= n);
    (pairwise_sum(&values) / n, g)
}

fn finish(value: f64, grad: Vec<f64>) -> Result<LossValue> {
    if !value.is_finite() || !crate::numeric::all_finite(&grad) {
        return Err(Error::Numeric(format!("non-finite loss or gradient (value {value})")));
    }
    Ok(LossValue { value, grad })
}

// ---------------------------------------------------------------- scorer losses

/// Features of the two (prompt, response) inputs whose scores are compared:
/// (x, y_w) vs (x, y_l) for standard pairs, (x_w, y) vs (x_l, y) for Rc pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePair {
    pub preferred: Vec<f64>,
    pub dispreferred: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScorerItem {
    Pair(FeaturePair),
    Rc(FeaturePair, Arm),
}

impl ScorerItem {
    pub fn features(&self) -> &FeaturePair {
        match self {
            ScorerItem::Pair(p) | ScorerItem::Rc(p, _) => p,
        }
    }
}

pub fn pair_features(fc: &FeatureConfig, e: &PreferenceExample) -> Result<FeaturePair> {
    Ok(FeaturePair { preferred: fc.featurize(&e.prompt, &e.chosen)?, dispreferred: fc.featurize(&e.prompt, &e.rejected)? })
}

pub fn rc_features(fc: &FeatureConfig, e: &RcExample) -> Result<FeaturePair> {
    Ok(FeaturePair {
        preferred: fc.featurize(&e.preferred_prompt, &e.response)?,
        dispreferred: fc.featurize(&e.dispreferred_prompt, &e.response)?,
    })
}

fn pair_term(params: &ScorerParams, p: &FeaturePair, weight: f64) -> Result<(f64, Vec<f64>)> {
    let (sw, sl) = (params.forward(&p.preferred)?, params.forward(&p.dispreferred)?);
    let (loss, dz) = nll_sigmoid(sw - sl);
    let mut g = vec![0.0; params.len()];
    params.accumulate_grad(&p.preferred, weight * dz, &mut g)?;
    params.accumulate_grad(&p.dispreferred, -weight * dz, &mut g)?;
    Ok((weight * loss, g))
}

fn pair_terms(params: &ScorerParams, batch: &[&FeaturePair]) -> Result<Vec<(f64, Vec<f64>)>> {
    batch.par_iter().map(|p| pair_term(params, p, 1.0)).collect()
}

/// −mean log σ(r(x, y_w) − r(x, y_l)).
pub fn rm_loss_features(params: &ScorerParams, batch: &[&FeaturePair]) -> Result<LossValue> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let (v, g) = mean_terms(&pair_terms(params, batch)?, params.len());
    finish(v, g)
}

pub fn rm_loss(scorer: &Scorer, batch: &[PreferenceExample]) -> Result<LossValue> {
    let fs: Vec<FeaturePair> = batch.iter().map(|e| pair_features(&scorer.features, e)).collect::<Result<_>>()?;
    rm_loss_features(&scorer.params, &fs.iter().collect::<Vec<_>>())
}

/// mean_Chosen[−log σ(r(x, y_w) − r(x_l¹, y_w))] + λ · mean_Rejected[−log σ(r(x_l², y_l) − r(x, y_l))],
/// each mean over its own arm; an absent arm (or λ = 0) contributes nothing.
pub fn rc_rm_loss_features(params: &ScorerParams, batch: &[(&FeaturePair, Arm)], lambda: f64) -> Result<LossValue> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let arm = |a: Arm| batch.iter().filter(|(_, b)| *b == a).map(|(p, _)| *p).collect::<Vec<_>>();
    let (chosen, rejected) = (arm(Arm::Chosen), arm(Arm::Rejected));
    let dim = params.len();
    let c = (!chosen.is_empty()).then(|| pair_terms(params, &chosen).map(|t| mean_terms(&t, dim))).transpose()?;
    let r = (!rejected.is_empty() && lambda != 0.0)
        .then(|| pair_terms(params, &rejected).map(|t| mean_terms(&t, dim)))
        .transpose()?;
    let (value, grad) = match (c, r) {
        (Some(c), None) => c,
        (None, Some((rv, rg))) => (lambda * rv, rg.into_iter().map(|x| lambda * x).collect()),
        (Some((cv, cg)), Some((rv, rg))) => {
            (cv + lambda * rv, cg.iter().zip(&rg).map(|(a, b)| a + lambda * b).collect())
        }
        (None, None) => (0.0, vec![0.0; dim]),
    };
    finish(value, grad)
}

pub fn rc_rm_loss(scorer: &Scorer, batch: &[RcExample], cfg: &ObjectiveConfig) -> Result<LossValue> {
    cfg.validate()?;
    let fs: Vec<(FeaturePair, Arm)> =
        batch.iter().map(|e| Ok((rc_features(&scorer.features, e)?, e.arm))).collect::<Result<_>>()?;
    rc_rm_loss_features(&scorer.params, &fs.iter().map(|(p, a)| (p, *a)).collect::<Vec<_>>(), cfg.lambda)
}

/// Training objective over a mixed D_rm ∪ D_Rc stream: per-item mean of
/// −log σ terms, with RejectedArm items weighted by λ.
pub fn mixed_rm_loss_features(params: &ScorerParams, batch: &[&ScorerItem], lambda: f64) -> Result<LossValue> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let terms: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|it| {
            let w = match it {
                ScorerItem::Rc(_, Arm::Rejected) => lambda,
                _ => 1.0,
            };
            pair_term(params, it.features(), w)
        })
        .collect::<Result<_>>()?;
    let (v, g) = mean_terms(&terms, params.len());
    finish(v, g)
}

// ---------------------------------------------------------------- policy losses

/// A preference pair in policy token space.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenPair {
    pub prompt: Vec<u32>,
    pub chosen: Vec<u32>,
    pub rejected: Vec<u32>,
}

/// A response-conditioned pair in policy token space.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenRc {
    pub preferred: Vec<u32>,
    pub dispreferred: Vec<u32>,
    pub response: Vec<u32>,
    pub arm: Arm,
}

impl TokenPair {
    pub fn from_example(e: &PreferenceExample, vocab_size: u32) -> Result<Self> {
        Ok(TokenPair {
            prompt: e.prompt.serialize(vocab_size)?,
            chosen: e.chosen.tokens().to_vec(),
            rejected: e.rejected.tokens().to_vec(),
        })
    }
}

impl TokenRc {
    pub fn from_example(e: &RcExample, vocab_size: u32) -> Result<Self> {
        Ok(TokenRc {
            preferred: e.preferred_prompt.serialize(vocab_size)?,
            dispreferred: e.dispreferred_prompt.serialize(vocab_size)?,
            response: e.response.tokens().to_vec(),
            arm: e.arm,
        })
    }
}

fn words(s: &[u32]) -> f64 {
    s.iter().filter(|&&t| is_word(t)).count() as f64
}

fn check_roles(theta: &PolicyParams, reference: &PolicyParams) -> Result<()> {
    if reference.role() != Role::Reference {
        return Err(Error::Contract("reference policy must carry the Reference role".into()));
    }
    if theta.role() != Role::Trainable {
        return Err(Error::Contract("policy under training must carry the Trainable role".into()));
    }
    if (theta.vocab, theta.dim) != (reference.vocab, reference.dim) {
        return Err(Error::Contract("θ and reference differ in shape".into()));
    }
    Ok(())
}

fn dpo_term(theta: &PolicyParams, reference: &PolicyParams, p: &TokenPair, beta: f64, alpha: f64, weight: f64) -> Result<(f64, Vec<f64>)> {
    let dw = theta.logprob_cond(&p.prompt, &p.chosen)? - reference.logprob_cond(&p.prompt, &p.chosen)?;
    let dl = theta.logprob_cond(&p.prompt, &p.rejected)? - reference.logprob_cond(&p.prompt, &p.rejected)?;
    let z = beta * (dw - dl) - alpha * (words(&p.chosen) - words(&p.rejected));
    let (loss, dz) = nll_sigmoid(z);
    let mut g = vec![0.0; theta.len()];
    theta.accumulate_cond_grad(&p.prompt, &p.chosen, weight * beta * dz, &mut g)?;
    theta.accumulate_cond_grad(&p.prompt, &p.rejected, -weight * beta * dz, &mut g)?;
    Ok((weight * loss, g))
}

fn rc_dpo_term(theta: &PolicyParams, reference: &PolicyParams, e: &TokenRc, beta: f64, weight: f64) -> Result<(f64, Vec<f64>)> {
    let (loss, dz) = nll_sigmoid(rc_dpo_margin_joint(theta, reference, e, beta)?);
    let mut g = vec![0.0; theta.len()];
    theta.accumulate_joint_grad(&e.preferred, &e.response, weight * beta * dz, &mut g)?;
    theta.accumulate_joint_grad(&e.dispreferred, &e.response, -weight * beta * dz, &mut g)?;
    Ok((weight * loss, g))
}

fn dpo_family(
    theta: &PolicyParams,
    reference: &PolicyParams,
    batch: &[TokenPair],
    beta: f64,
    alpha: f64,
) -> Result<LossValue> {
    check_roles(theta, reference)?;
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let terms: Vec<(f64, Vec<f64>)> =
        batch.par_iter().map(|p| dpo_term(theta, reference, p, beta, alpha, 1.0)).collect::<Result<_>>()?;
    let (v, g) = mean_terms(&terms, theta.len());
    finish(v, g)
}

/// −mean log σ(β(Δ_w − Δ_l)), Δ = log π_θ(y|x) − log π_ref(y|x).
pub fn dpo_loss(theta: &PolicyParams, reference: &PolicyParams, batch: &[TokenPair], cfg: &ObjectiveConfig) -> Result<LossValue> {
    cfg.validate()?;
    dpo_family(theta, reference, batch, cfg.beta, 0.0)
}

/// DPO with the margin reduced by α(|y_w| − |y_l|) in words.
pub fn rdpo_loss(theta: &PolicyParams, reference: &PolicyParams, batch: &[TokenPair], cfg: &ObjectiveConfig) -> Result<LossValue> {
    cfg.validate()?;
    dpo_family(theta, reference, batch, cfg.beta, cfg.rdpo_alpha)
}

/// β[(log π_θ(x_w, y) − log π_ref(x_w, y)) − (log π_θ(x_l, y) − log π_ref(x_l, y))].
pub fn rc_dpo_margin_joint(theta: &PolicyParams, reference: &PolicyParams, e: &TokenRc, beta: f64) -> Result<f64> {
    let w = theta.logprob_joint(&e.preferred, &e.response)? - reference.logprob_joint(&e.preferred, &e.response)?;
    let l = theta.logprob_joint(&e.dispreferred, &e.response)? - reference.logprob_joint(&e.dispreferred, &e.response)?;
    Ok(beta * (w - l))
}

/// The same margin written with π(x | y), normalised over an enumerated prompt space.
pub fn rc_dpo_margin_conditional(
    theta: &PolicyParams,
    reference: &PolicyParams,
    e: &TokenRc,
    beta: f64,
    prompt_space: &[Vec<u32>],
) -> Result<f64> {
    let cond = |p: &PolicyParams, x: &[u32]| -> Result<f64> {
        let all: Vec<f64> = prompt_space.iter().map(|x| p.logprob_joint(x, &e.response)).collect::<Result<_>>()?;
        Ok(p.logprob_joint(x, &e.response)? - logsumexp(&all))
    };
    let w = cond(theta, &e.preferred)? - cond(reference, &e.preferred)?;
    let l = cond(theta, &e.dispreferred)? - cond(reference, &e.dispreferred)?;
    Ok(beta * (w - l))
}

/// −mean log σ(joint-probability margin) over the whole batch.
pub fn rc_dpo_loss(theta: &PolicyParams, reference: &PolicyParams, batch: &[TokenRc], cfg: &ObjectiveConfig) -> Result<LossValue> {
    cfg.validate()?;
    check_roles(theta, reference)?;
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let terms: Vec<(f64, Vec<f64>)> =
        batch.par_iter().map(|e| rc_dpo_term(theta, reference, e, cfg.beta, 1.0)).collect::<Result<_>>()?;
    let (v, g) = mean_terms(&terms, theta.len());
    finish(v, g)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyItem {
    Pair(TokenPair),
    Rc(TokenRc),
}

/// Training objective for policies over a mixed stream: DPO (or R-DPO with
/// α > 0) terms for pairs, joint-form Rc-DPO terms for Rc items with the
/// RejectedArm weighted by λ; per-item mean.
pub fn mixed_policy_loss(
    theta: &PolicyParams,
    reference: &PolicyParams,
    batch: &[&PolicyItem],
    cfg: &ObjectiveConfig,
) -> Result<LossValue> {
    cfg.validate()?;
    check_roles(theta, reference)?;
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let terms: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|it| match it {
            PolicyItem::Pair(p) => dpo_term(theta, reference, p, cfg.beta, cfg.rdpo_alpha, 1.0),
            PolicyItem::Rc(e) => {
                let w = if e.arm == Arm::Rejected { cfg.lambda } else { 1.0 };
                rc_dpo_term(theta, reference, e, cfg.beta, w)
            }
        })
        .collect::<Result<_>>()?;
    let (v, g) = mean_terms(&terms, theta.len());
    finish(v, g)
}

// ---------------------------------------------------------------- RL oracles

/// All sequences over `0..vocab` with lengths 1..=max_len, shortest first.
pub fn enumerate_sequences(vocab: u32, max_len: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut layer: Vec<Vec<u32>> = vec![vec![]];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|s| {
                (0..vocab).map(move |t| {
                    let mut n = s.clone();
                    n.push(t);
                    n
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

pub type Reward<'a> = &'a (dyn Fn(&[u32], &[u32]) -> f64 + Sync);

const MAX_SPACE: usize = 100_000;

fn check_space(space: &[Vec<u32>]) -> Result<()> {
    match space.len() {
        0 => Err(Error::Domain("empty enumeration space".into())),
        n if n > MAX_SPACE => Err(Error::Domain(format!("space of {n} elements is too large to enumerate"))),
        _ => Ok(()),
    }
}

/// log π(x | y) for every x in the space, normalising joint probabilities.
pub fn log_prompt_posterior(policy: &PolicyParams, response: &[u32], space: &[Vec<u32>]) -> Result<Vec<f64>> {
    check_space(space)?;
    let joint: Vec<f64> = space.par_iter().map(|x| policy.logprob_joint(x, response)).collect::<Result<_>>()?;
    let z = logsumexp(&joint);
    Ok(joint.into_iter().map(|j| j - z).collect())
}

/// log π(y | x) for every y in the space, renormalised over the space.
pub fn log_response_dist(policy: &PolicyParams, prompt: &[u32], space: &[Vec<u32>]) -> Result<Vec<f64>> {
    check_space(space)?;
    let cond: Vec<f64> = space.par_iter().map(|y| policy.logprob_cond(prompt, y)).collect::<Result<_>>()?;
    let z = logsumexp(&cond);
    Ok(cond.into_iter().map(|c| c - z).collect())
}

/// Σ π r − β KL(π ‖ π_ref) for explicit distributions (log π given).
pub fn rl_objective_dist(log_pi: &[f64], log_ref: &[f64], rewards: &[f64], beta: f64) -> f64 {
    let terms: Vec<f64> = log_pi
        .iter()
        .zip(log_ref)
        .zip(rewards)
        .map(|((lp, lr), r)| {
            let p = lp.exp();
            if p == 0.0 {
                0.0
            } else {
                p * (r - beta * (lp - lr))
            }
        })
        .collect();
    pairwise_sum(&terms)
}

/// E_{x∼π_θ(x|y)}[r(x, y)] − β KL(π_θ(·|y) ‖ π_ref(·|y)) by enumeration.
pub fn rl_objective_rc(
    theta: &PolicyParams,
    reference: &PolicyParams,
    reward: Reward,
    response: &[u32],
    cfg: &ObjectiveConfig,
    prompt_space: &[Vec<u32>],
) -> Result<f64> {
    cfg.validate()?;
    let lp = log_prompt_posterior(theta, response, prompt_space)?;
    let lr = log_prompt_posterior(reference, response, prompt_space)?;
    let r: Vec<f64> = prompt_space.iter().map(|x| reward(x, response)).collect();
    Ok(rl_objective_dist(&lp, &lr, &r, cfg.beta))
}

/// E_{y∼π_θ(y|x)}[r(x, y)] − β KL(π_θ(·|x) ‖ π_ref(·|x)) over an enumerated response space.
pub fn rl_objective_std(
    theta: &PolicyParams,
    reference: &PolicyParams,
    reward: Reward,
    prompt: &[u32],
    cfg: &ObjectiveConfig,
    response_space: &[Vec<u32>],
) -> Result<f64> {
    cfg.validate()?;
    let lp = log_response_dist(theta, prompt, response_space)?;
    let lr = log_response_dist(reference, prompt, response_space)?;
    let r: Vec<f64> = response_space.iter().map(|y| reward(prompt, y)).collect();
    Ok(rl_objective_dist(&lp, &lr, &r, cfg.beta))
}

/// log Z(y) = log Σ_x π_ref(x|y) exp(r(x, y)/β), accumulated in log space.
pub fn log_partition_function(
    reference: &PolicyParams,
    reward: Reward,
    response: &[u32],
    cfg: &ObjectiveConfig,
    prompt_space: &[Vec<u32>],
) -> Result<f64> {
    cfg.validate()?;
    let lr = log_prompt_posterior(reference, response, prompt_space)?;
    let terms: Vec<f64> = prompt_space.iter().zip(&lr).map(|(x, l)| l + reward(x, response) / cfg.beta).collect();
    Ok(logsumexp(&terms))
}

pub fn partition_function(
    reference: &PolicyParams,
    reward: Reward,
    response: &[u32],
    cfg: &ObjectiveConfig,
    prompt_space: &[Vec<u32>],
) -> Result<f64> {
    let z = log_partition_function(reference, reward, response, cfg, prompt_space)?.exp();
    if !z.is_finite() {
        return Err(Error::Numeric("Z(y) overflows f64; use log_partition_function".into()));
    }
    Ok(z)
}

/// log π*(x|y) = log π_ref(x|y) + r(x, y)/β − log Z(y).
pub fn log_optimal_policy(
    reference: &PolicyParams,
    reward: Reward,
    response: &[u32],
    cfg: &ObjectiveConfig,
    prompt_space: &[Vec<u32>],
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let lr = log_prompt_posterior(reference, response, prompt_space)?;
    let un: Vec<f64> = prompt_space.iter().zip(&lr).map(|(x, l)| l + reward(x, response) / cfg.beta).collect();
    let z = logsumexp(&un);
    Ok(un.into_iter().map(|u| u - z).collect())
}

pub fn optimal_policy(
    reference: &PolicyParams,
    reward: Reward,
    response: &[u32],
    cfg: &ObjectiveConfig,
    prompt_space: &[Vec<u32>],
) -> Result<Vec<f64>> {
    Ok(log_optimal_policy(reference, reward, response, cfg, prompt_space)?.into_iter().map(f64::exp).collect())
}
