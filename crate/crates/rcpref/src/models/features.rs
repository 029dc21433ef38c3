//! Bag-of-classes features for the scorer. Layout, for C content classes:
//! `[prompt class fractions (C) | response class counts (C) | co-occurrence (C×C)
//!   | word count | at_most, at_least, word_num, satisfied]`.

use serde::{Deserialize, Serialize};

use crate::constraints::{AugmentedPrompt, ConstraintKind};
use crate::corpus::{TokenSequence, Vocab};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureMask {
    pub prompt_counts: bool,
    pub response_counts: bool,
    pub cooccurrence: bool,
    pub word_count: bool,
    pub constraint_kind: bool,
    pub constraint_word_num: bool,
    pub satisfaction: bool,
}

impl Default for FeatureMask {
    fn default() -> Self {
        FeatureMask {
            prompt_counts: true,
            response_counts: true,
            cooccurrence: true,
            word_count: true,
            constraint_kind: true,
            constraint_word_num: true,
            satisfaction: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub vocab: Vocab,
    /// Divisor for word counts and word_num.
    pub length_scale: f64,
    /// Divisor for response class counts.
    pub count_scale: f64,
    /// Disabled groups are emitted as zeros; the dimension never changes.
    pub mask: FeatureMask,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { vocab: Vocab::default(), length_scale: 100.0, count_scale: 4.0, mask: FeatureMask::default() }
    }
}

pub type FeatureVector = Vec<f64>;

impl FeatureConfig {
    pub fn dim(&self) -> usize {
        let c = self.vocab.n_classes as usize;
        2 * c + c * c + 1 + 4
    }

    pub fn featurize(&self, prompt: &AugmentedPrompt, response: &TokenSequence) -> Result<FeatureVector> {
        let v = self.vocab;
        prompt.base.check_vocab(v.size)?;
        response.check_vocab(v.size)?;
        let c = v.n_classes as usize;
        let m = self.mask;
        let mut pc = vec![0.0; c];
        let mut rc = vec![0.0; c];
        let mut np = 0usize;
        for t in prompt.base.content() {
            pc[v.class_of(t)] += 1.0;
            np += 1;
        }
        if np > 0 {
            pc.iter_mut().for_each(|x| *x /= np as f64);
        }
        for t in response.content() {
            rc[v.class_of(t)] += 1.0 / self.count_scale;
        }
        let mut f = Vec::with_capacity(self.dim());
        let on = |flag: bool, x: f64| if flag { x } else { 0.0 };
        f.extend(pc.iter().map(|&x| on(m.prompt_counts, x)));
        f.extend(rc.iter().map(|&x| on(m.response_counts, x)));
        for a in &pc {
            f.extend(rc.iter().map(|b| on(m.cooccurrence, a * b)));
        }
        f.push(on(m.word_count, response.word_count() as f64 / self.length_scale));
        match prompt.constraint {
            None => f.extend([0.0; 4]),
            Some(con) => {
                let most = con.kind == ConstraintKind::AtMost;
                f.push(on(m.constraint_kind, if most { 1.0 } else { 0.0 }));
                f.push(on(m.constraint_kind, if most { 0.0 } else { 1.0 }));
                f.push(on(m.constraint_word_num, con.word_num as f64 / self.length_scale));
                f.push(on(m.satisfaction, if con.satisfies(response) { 1.0 } else { 0.0 }));
            }
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::LengthConstraint;
    use rand::seq::SliceRandom;

    fn words(n: usize) -> TokenSequence {
        TokenSequence::from((0..n as u32).map(|i| 8 + (i % 56)).collect::<Vec<_>>())
    }

    #[test]
    fn constraint_block() {
        let cfg = FeatureConfig::default();
        let d = cfg.dim();
        let p = AugmentedPrompt::plain(TokenSequence::from(vec![9, 10]));
        let f = cfg.featurize(&p, &words(80)).unwrap();
        assert_eq!(f.len(), d);
        assert_eq!(&f[d - 4..], &[0.0; 4]);
        let f = cfg.featurize(&p.with_constraint(Some(LengthConstraint::at_most(100))), &words(80)).unwrap();
        assert_eq!(&f[d - 4..], &[1.0, 0.0, 1.0, 1.0]);
        let f = cfg.featurize(&p.with_constraint(Some(LengthConstraint::at_least(100))), &words(80)).unwrap();
        assert_eq!(&f[d - 4..], &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(f[d - 5], 0.8);
    }

    #[test]
    fn counts_ignore_order() {
        let cfg = FeatureConfig::default();
        let p = AugmentedPrompt::plain(TokenSequence::from(vec![9, 30, 31]));
        let r = TokenSequence::from(vec![8, 4, 12, 3, 13, 40, 5, 41]);
        let mut shuffled = r.tokens().to_vec();
        shuffled.shuffle(&mut crate::rng::stream(1, "t", 0));
        assert_eq!(cfg.featurize(&p, &r).unwrap(), cfg.featurize(&p, &TokenSequence::from(shuffled)).unwrap());
        assert!(cfg.featurize(&p, &TokenSequence::from(vec![99])).is_err());
    }

    #[test]
    fn mask_zeroes_groups() {
        let cfg = FeatureConfig {
            mask: FeatureMask { satisfaction: false, word_count: false, ..FeatureMask::default() },
            ..FeatureConfig::default()
        };
        let p = AugmentedPrompt::plain(TokenSequence::from(vec![9])).with_constraint(Some(LengthConstraint::at_most(90)));
        let f = cfg.featurize(&p, &words(50)).unwrap();
        let d = cfg.dim();
        assert_eq!(f[d - 1], 0.0);
        assert_eq!(f[d - 5], 0.0);
        assert_eq!(f[d - 4], 1.0);
    }
}
