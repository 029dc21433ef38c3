//! Deterministic mini-batch training: warmup + cosine schedule, SGD or Adam,
//! optional max-norm clipping, epoch-seeded shuffles.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::constraints::Arm;
use crate::error::{Error, Result};
use crate::models::{Parameters, PolicyParams, ScorerParams};
use crate::numeric::l2_norm;
use crate::objectives::{mixed_policy_loss, mixed_rm_loss_features, LossValue, ObjectiveConfig, PolicyItem, ScorerItem};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub const fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Whether batches mix standard and Rc items, or each batch draws from one group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Batching {
    #[default]
    Mixed,
    GroupSeparated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Fraction of D_Rc blended into the stream.
    pub mix_ratio: f64,
    pub max_grad_norm: Option<f64>,
    pub batching: Batching,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            warmup_steps: 10,
            epochs: 5,
            batch_size: 64,
            seed: 0,
            optimizer: Optimizer::adam(),
            mix_ratio: 1.0,
            max_grad_norm: None,
            batching: Batching::Mixed,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return bad("mix_ratio must lie in [0, 1]");
        }
        if let Some(m) = self.max_grad_norm {
            if !(m > 0.0 && m.is_finite()) {
                return bad("max_grad_norm must be positive");
            }
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return bad("Adam needs β1, β2 in [0, 1) and ε > 0");
            }
        }
        Ok(())
    }
}

/// Linear ramp over the warmup steps, then cosine decay reaching 0 at the final step.
pub fn lr_at(cfg: &TrainConfig, step: usize, total_steps: usize) -> Result<f64> {
    if step >= total_steps {
        return Err(Error::Domain(format!("step {step} outside [0, {total_steps})")));
    }
    let lr = cfg.learning_rate;
    if step < cfg.warmup_steps {
        return Ok(lr * step as f64 / cfg.warmup_steps as f64);
    }
    let span = (total_steps - 1).saturating_sub(cfg.warmup_steps);
    if span == 0 {
        return Ok(lr);
    }
    let progress = (step - cfg.warmup_steps) as f64 / span as f64;
    Ok(lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// All of `d_rm` plus a seeded ⌈ratio·|d_rc|⌉-subset of `d_rc`, shuffled.
pub fn mix_datasets<T: Clone>(d_rm: &[T], d_rc: &[T], ratio: f64, seed: u64) -> Result<Vec<T>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("mix ratio {ratio} outside [0, 1]")));
    }
    // the epsilon keeps 0.3 × 10 from rounding up to 4
    let k = ((ratio * d_rc.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut r = rng::stream(seed, "mix", 0);
    let mut idx: Vec<usize> = (0..d_rc.len()).collect();
    idx.shuffle(&mut r);
    idx.truncate(k);
    idx.sort_unstable();
    let mut out: Vec<T> = d_rm.to_vec();
    out.extend(idx.into_iter().map(|i| d_rc[i].clone()));
    out.shuffle(&mut r);
    Ok(out)
}

pub trait Objective: Sync {
    type Model: Parameters + Clone + Sync;
    type Item: Sync;

    fn loss(&self, model: &Self::Model, batch: &[&Self::Item]) -> Result<LossValue>;

    /// Batch group under `Batching::GroupSeparated`.
    fn group(&self, _item: &Self::Item) -> u8 {
        0
    }
}

/// BT / Rc-BT scorer objective over a mixed stream.
pub struct ScorerObjective {
    pub lambda: f64,
}

impl Objective for ScorerObjective {
    type Model = ScorerParams;
    type Item = ScorerItem;

    fn loss(&self, model: &ScorerParams, batch: &[&ScorerItem]) -> Result<LossValue> {
        mixed_rm_loss_features(model, batch, self.lambda)
    }

    fn group(&self, item: &ScorerItem) -> u8 {
        match item {
            ScorerItem::Pair(_) => 0,
            ScorerItem::Rc(_, Arm::Chosen) => 1,
            ScorerItem::Rc(_, Arm::Rejected) => 2,
        }
    }
}

/// DPO / R-DPO / Rc-DPO policy objective against a frozen reference.
pub struct PolicyObjective {
    pub reference: PolicyParams,
    pub cfg: ObjectiveConfig,
}

impl Objective for PolicyObjective {
    type Model = PolicyParams;
    type Item = PolicyItem;

    fn loss(&self, model: &PolicyParams, batch: &[&PolicyItem]) -> Result<LossValue> {
        mixed_policy_loss(model, &self.reference, batch, &self.cfg)
    }

    fn group(&self, item: &PolicyItem) -> u8 {
        match item {
            PolicyItem::Pair(_) => 0,
            PolicyItem::Rc(e) if e.arm == Arm::Chosen => 1,
            PolicyItem::Rc(_) => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    /// Shuffle seed of each epoch, for replay.
    pub epoch_seeds: Vec<(usize, u64)>,
    pub total_steps: usize,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .steps
            .iter()
            .map(|s| vec![s.step.to_string(), format!("{:e}", s.lr), format!("{:e}", s.loss), format!("{:e}", s.grad_norm)])
            .collect();
        crate::io::csv_string(&["step", "lr", "loss", "grad_norm"], &rows)
    }

    pub fn first_loss(&self) -> Option<f64> {
        self.steps.first().map(|s| s.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }
}

fn epoch_batches<O: Objective>(obj: &O, data: &[O::Item], cfg: &TrainConfig, epoch: usize) -> (u64, Vec<Vec<usize>>) {
    let seed = rng::derive_seed(cfg.seed, rng::TRAIN, epoch as u64);
    let mut r = rng::stream(cfg.seed, rng::TRAIN, epoch as u64);
    let mut perm: Vec<usize> = (0..data.len()).collect();
    perm.shuffle(&mut r);
    let batches = match cfg.batching {
        Batching::Mixed => perm.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect(),
        Batching::GroupSeparated => {
            let mut groups: std::collections::BTreeMap<u8, Vec<usize>> = Default::default();
            for i in perm {
                groups.entry(obj.group(&data[i])).or_default().push(i);
            }
            let mut bs: Vec<Vec<usize>> =
                groups.values().flat_map(|g| g.chunks(cfg.batch_size).map(<[usize]>::to_vec)).collect();
            bs.shuffle(&mut r);
            bs
        }
    };
    (seed, batches)
}

/// Steps per epoch for this dataset and configuration.
pub fn steps_per_epoch<O: Objective>(obj: &O, data: &[O::Item], cfg: &TrainConfig) -> usize {
    epoch_batches(obj, data, cfg, 0).1.len()
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Runs `cfg.epochs` epochs from scratch.
pub fn train<O: Objective>(model: O::Model, obj: &O, data: &[O::Item], cfg: &TrainConfig) -> Result<(O::Model, TrainLog)> {
    train_epochs(model, obj, data, cfg, 0, cfg.epochs)
}

/// Runs epochs `start..start + count` of a `cfg.epochs`-epoch schedule. Optimizer
/// moments start fresh, so resuming is exact only for SGD.
pub fn train_epochs<O: Objective>(
    mut model: O::Model,
    obj: &O,
    data: &[O::Item],
    cfg: &TrainConfig,
    start: usize,
    count: usize,
) -> Result<(O::Model, TrainLog)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Domain("training set is empty".into()));
    }
    if start + count > cfg.epochs {
        return Err(Error::Config(format!("epochs {start}..{} exceed the configured {}", start + count, cfg.epochs)));
    }
    let per_epoch = steps_per_epoch(obj, data, cfg);
    let total = per_epoch * cfg.epochs;
    let mut log = TrainLog { total_steps: total, ..Default::default() };
    let n = model.values().len();
    let mut adam = AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 };
    let mut step = start * per_epoch;
    for epoch in start..start + count {
        let (seed, batches) = epoch_batches(obj, data, cfg, epoch);
        log.epoch_seeds.push((epoch, seed));
        for b in batches {
            let items: Vec<&O::Item> = b.iter().map(|&i| &data[i]).collect();
            let LossValue { value, mut grad } = match obj.loss(&model, &items) {
                Ok(l) => l,
                Err(Error::Numeric(_)) => return Err(Error::NonFiniteLoss { step, value: f64::NAN }),
                Err(e) => return Err(e),
            };
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { step, value });
            }
            let grad_norm = l2_norm(&grad);
            if let Some(max) = cfg.max_grad_norm {
                if grad_norm > max {
                    let s = max / grad_norm;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
            }
            let lr = lr_at(cfg, step, total)?;
            let w = model.values_mut()?;
            match cfg.optimizer {
                Optimizer::Sgd => w.iter_mut().zip(&grad).for_each(|(w, g)| *w -= lr * g),
                Optimizer::Adam { beta1, beta2, eps } => {
                    adam.t += 1;
                    let (c1, c2) = (1.0 - beta1.powi(adam.t), 1.0 - beta2.powi(adam.t));
                    for i in 0..n {
                        adam.m[i] = beta1 * adam.m[i] + (1.0 - beta1) * grad[i];
                        adam.v[i] = beta2 * adam.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                        w[i] -= lr * (adam.m[i] / c1) / ((adam.v[i] / c2).sqrt() + eps);
                    }
                }
            }
            if !crate::numeric::all_finite(w) {
                return Err(Error::NonFiniteLoss { step, value });
            }
            log.steps.push(StepRecord { step, epoch, lr, loss: value, grad_norm });
            step += 1;
        }
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ScorerArch;
    use crate::objectives::{rm_loss_features, FeaturePair};
    use rand::Rng;

    /// f(w) = ½ a (w − c)², one item per batch element, for convergence checks.
    struct Quadratic {
        a: f64,
        c: f64,
    }

    #[derive(Clone)]
    struct Scalar(Vec<f64>);

    impl Parameters for Scalar {
        fn values(&self) -> &[f64] {
            &self.0
        }
        fn values_mut(&mut self) -> Result<&mut [f64]> {
            Ok(&mut self.0)
        }
    }

    impl Objective for Quadratic {
        type Model = Scalar;
        type Item = f64;

        fn loss(&self, m: &Scalar, batch: &[&f64]) -> Result<LossValue> {
            let w = m.0[0];
            let scale = batch.iter().map(|x| **x).sum::<f64>() / batch.len() as f64;
            let v = 0.5 * self.a * (w - self.c).powi(2) * scale;
            if !v.is_finite() {
                return Err(Error::Numeric("overflow".into()));
            }
            Ok(LossValue { value: v, grad: vec![self.a * (w - self.c) * scale] })
        }
    }

    fn cfg(lr: f64, warmup: usize, epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            warmup_steps: warmup,
            epochs,
            batch_size: 4,
            optimizer: Optimizer::Sgd,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_shape() {
        let c = cfg(0.1, 10, 1);
        assert_eq!(lr_at(&c, 0, 100).unwrap(), 0.0);
        assert_eq!(lr_at(&c, 5, 100).unwrap(), 0.05);
        assert_eq!(lr_at(&c, 10, 100).unwrap(), 0.1);
        assert!(lr_at(&c, 99, 100).unwrap().abs() < 1e-12);
        // midpoint of the cosine span
        let mid = 10 + 89 / 2;
        let p = (mid - 10) as f64 / 89.0;
        let want = 0.05 * (1.0 + (std::f64::consts::PI * p).cos());
        assert_eq!(lr_at(&c, mid, 100).unwrap(), want);
        assert!(lr_at(&c, 100, 100).is_err());
    }

    #[test]
    fn mixing_counts() {
        let rm: Vec<u32> = (0..30).collect();
        let rc: Vec<u32> = (100..200).collect();
        assert_eq!(mix_datasets(&rm, &rc, 0.0, 1).unwrap().len(), 30);
        let full = mix_datasets(&rm, &rc, 1.0, 1).unwrap();
        let mut sorted = full.clone();
        sorted.sort();
        assert_eq!(sorted, rm.iter().chain(&rc).copied().collect::<Vec<_>>());
        let part = mix_datasets(&rm, &rc, 0.4, 1).unwrap();
        assert_eq!(part.iter().filter(|&&x| x >= 100).count(), 40);
        assert_eq!(part.iter().filter(|&&x| x < 100).count(), 30);
        assert_eq!(mix_datasets(&rm, &rc[..10], 0.3, 2).unwrap().len(), 33);
        assert!(mix_datasets(&rm, &rc, 1.5, 1).is_err());
    }

    #[test]
    fn quadratic_converges_to_minimizer() {
        let obj = Quadratic { a: 2.0, c: 3.5 };
        let data = vec![1.0; 8];
        let (m, log) = train(Scalar(vec![-4.0]), &obj, &data, &cfg(0.3, 0, 40)).unwrap();
        assert!((m.0[0] - 3.5).abs() < 1e-6, "{}", m.0[0]);
        assert_eq!(log.steps.len(), 80);
        assert!(log.steps.windows(2).all(|w| w[1].step == w[0].step + 1));
    }

    #[test]
    fn zero_extra_epochs_leaves_params() {
        let obj = Quadratic { a: 1.0, c: 0.0 };
        let (m, log) = train_epochs(Scalar(vec![2.0]), &obj, &[1.0], &cfg(0.1, 0, 3), 3, 0).unwrap();
        assert_eq!(m.0, vec![2.0]);
        assert!(log.steps.is_empty());
    }

    #[test]
    fn nan_aborts_with_step() {
        let obj = Quadratic { a: 1.0, c: 0.0 };
        let data = vec![1.0, 1.0, 1.0, 1.0, f64::INFINITY];
        match train(Scalar(vec![1.0]), &obj, &data, &TrainConfig { batch_size: 1, ..cfg(0.1, 0, 1) }) {
            Err(Error::NonFiniteLoss { step, .. }) => assert!(step < 5),
            other => panic!("{:?}", other.map(|_| ())),
        }
    }

    fn scorer_data(n: usize) -> Vec<ScorerItem> {
        let mut r = rng::stream(5, "td", 0);
        (0..n)
            .map(|i| {
                let mut v = |s: f64| (0..6).map(|_| r.random_range(-1.0..1.0) + s).collect::<Vec<f64>>();
                let p = FeaturePair { preferred: v(0.3), dispreferred: v(-0.3) };
                match i % 3 {
                    0 => ScorerItem::Pair(p),
                    1 => ScorerItem::Rc(p, Arm::Chosen),
                    _ => ScorerItem::Rc(p, Arm::Rejected),
                }
            })
            .collect()
    }

    #[test]
    fn bit_identical_reruns_and_groups() {
        let data = scorer_data(50);
        let obj = ScorerObjective { lambda: 1.0 };
        let c = TrainConfig { learning_rate: 1e-2, batch_size: 8, epochs: 2, ..TrainConfig::default() };
        let init = ScorerParams::init(ScorerArch::Mlp { hidden: 4 }, 6, 1);
        let a = train(init.clone(), &obj, &data, &c).unwrap();
        let b = train(init.clone(), &obj, &data, &c).unwrap();
        assert_eq!(a.0.values(), b.0.values());
        assert_eq!(a.1, b.1);
        let sep = TrainConfig { batching: Batching::GroupSeparated, ..c };
        let (_, log) = train(init, &obj, &data, &sep).unwrap();
        // groups of 17, 17, 16 → 3 + 3 + 2 batches per epoch
        assert_eq!(log.steps.len(), 16);
    }

    #[test]
    fn frozen_batch_loss_non_increasing_for_small_sgd() {
        let data: Vec<ScorerItem> = scorer_data(30).into_iter().map(|i| ScorerItem::Pair(i.features().clone())).collect();
        let obj = ScorerObjective { lambda: 1.0 };
        let c = TrainConfig { batch_size: 30, epochs: 50, warmup_steps: 0, ..cfg(1e-2, 0, 50) };
        let mut m = ScorerParams::init(ScorerArch::Linear, 6, 3);
        let pairs: Vec<&FeaturePair> = data.iter().map(|i| i.features()).collect();
        let mut prev = rm_loss_features(&m, &pairs).unwrap().value;
        for e in 0..50 {
            m = train_epochs(m, &obj, &data, &c, e, 1).unwrap().0;
            let now = rm_loss_features(&m, &pairs).unwrap().value;
            assert!(now <= prev + 1e-15, "epoch {e}: {now} > {prev}");
            prev = now;
        }
    }
}
