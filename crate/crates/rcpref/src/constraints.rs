//! Length constraints and every dataset derived from a base corpus: response-
//! conditioned pairs, LIFT-plus and its variants, and the evaluation sets.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    repad, sample_length_pair, LenRange, PreferenceExample, QualityOracle, TokenSequence, Vocab, AT_LEAST_TOKEN,
    AT_MOST_TOKEN,
};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    AtMost,
    AtLeast,
}

impl ConstraintKind {
    pub fn other(self) -> Self {
        match self {
            ConstraintKind::AtMost => ConstraintKind::AtLeast,
            ConstraintKind::AtLeast => ConstraintKind::AtMost,
        }
    }

    fn token(self) -> u32 {
        match self {
            ConstraintKind::AtMost => AT_MOST_TOKEN,
            ConstraintKind::AtLeast => AT_LEAST_TOKEN,
        }
    }
}

/// `word_num = 0` is representable (vacuous AtLeast, unsatisfiable AtMost) but
/// no builder emits it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LengthConstraint {
    pub kind: ConstraintKind,
    pub word_num: u32,
}

impl LengthConstraint {
    pub fn at_most(word_num: u32) -> Self {
        LengthConstraint { kind: ConstraintKind::AtMost, word_num }
    }

    pub fn at_least(word_num: u32) -> Self {
        LengthConstraint { kind: ConstraintKind::AtLeast, word_num }
    }

    pub fn satisfied_by_len(&self, words: usize) -> bool {
        match self.kind {
            ConstraintKind::AtMost => words <= self.word_num as usize,
            ConstraintKind::AtLeast => words >= self.word_num as usize,
        }
    }

    pub fn satisfies(&self, response: &TokenSequence) -> bool {
        self.satisfied_by_len(response.word_count())
    }
}

/// Base prompt plus optional constraint. Serialized as a 3-token header
/// `[kind, word_num / V, word_num % V]` followed by the base tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "PromptWire", into = "PromptWire")]
pub struct AugmentedPrompt {
    pub base: TokenSequence,
    pub constraint: Option<LengthConstraint>,
}

#[derive(Serialize, Deserialize)]
struct PromptWire {
    prompt: TokenSequence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    constraint: Option<LengthConstraint>,
}

impl TryFrom<PromptWire> for AugmentedPrompt {
    type Error = Error;
    fn try_from(w: PromptWire) -> Result<Self> {
        AugmentedPrompt::new(w.prompt, w.constraint)
    }
}

impl From<AugmentedPrompt> for PromptWire {
    fn from(p: AugmentedPrompt) -> Self {
        PromptWire { prompt: p.base, constraint: p.constraint }
    }
}

fn starts_with_kind(s: &TokenSequence) -> bool {
    matches!(s.tokens().first(), Some(&AT_MOST_TOKEN | &AT_LEAST_TOKEN))
}

impl AugmentedPrompt {
    /// A base that begins with a kind token would make the header ambiguous.
    pub fn new(base: TokenSequence, constraint: Option<LengthConstraint>) -> Result<Self> {
        if starts_with_kind(&base) {
            return Err(Error::Domain("base prompt may not begin with a constraint-kind token".into()));
        }
        Ok(AugmentedPrompt { base, constraint })
    }

    pub fn plain(base: TokenSequence) -> Self {
        debug_assert!(!starts_with_kind(&base));
        AugmentedPrompt { base, constraint: None }
    }

    pub fn empty() -> Self {
        AugmentedPrompt::plain(TokenSequence::empty_prompt())
    }

    pub fn with_constraint(&self, c: Option<LengthConstraint>) -> Self {
        AugmentedPrompt { base: self.base.clone(), constraint: c }
    }

    pub fn serialize(&self, vocab_size: u32) -> Result<Vec<u32>> {
        self.base.check_vocab(vocab_size)?;
        let mut out = Vec::with_capacity(self.base.len() + 3);
        if let Some(c) = self.constraint {
            let v = vocab_size as u64;
            if c.word_num as u64 >= v * v {
                return Err(Error::Domain(format!("word_num {} needs more than two base-{v} digits", c.word_num)));
            }
            out.extend([c.kind.token(), c.word_num / vocab_size, c.word_num % vocab_size]);
        }
        out.extend_from_slice(self.base.tokens());
        Ok(out)
    }

    pub fn parse(tokens: &[u32], vocab_size: u32) -> Result<Self> {
        if let Some(&t) = tokens.iter().find(|&&t| t >= vocab_size) {
            return Err(Error::Domain(format!("token {t} outside vocabulary of size {vocab_size}")));
        }
        let kind = match tokens.first() {
            Some(&AT_MOST_TOKEN) => ConstraintKind::AtMost,
            Some(&AT_LEAST_TOKEN) => ConstraintKind::AtLeast,
            _ => return Ok(AugmentedPrompt::plain(TokenSequence::from(tokens.to_vec()))),
        };
        if tokens.len() < 3 {
            return Err(Error::Domain("truncated constraint header".into()));
        }
        let word_num = tokens[1] * vocab_size + tokens[2];
        AugmentedPrompt::new(TokenSequence::from(tokens[3..].to_vec()), Some(LengthConstraint { kind, word_num }))
    }

    pub fn satisfied_by(&self, response: &TokenSequence) -> Option<bool> {
        self.constraint.map(|c| c.satisfies(response))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// (x, x_l^1, y_w): the bare prompt beats a constraint y_w violates.
    Chosen,
    /// (x_l^2, x, y_l): a constraint y_l satisfies beats the bare prompt.
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcExample {
    pub preferred_prompt: AugmentedPrompt,
    pub dispreferred_prompt: AugmentedPrompt,
    pub response: TokenSequence,
    pub arm: Arm,
}

impl RcExample {
    pub fn check(&self) -> Result<()> {
        let ok = match self.arm {
            Arm::Chosen => {
                self.preferred_prompt.constraint.is_none()
                    && self.dispreferred_prompt.satisfied_by(&self.response) == Some(false)
            }
            Arm::Rejected => {
                self.dispreferred_prompt.constraint.is_none()
                    && self.preferred_prompt.satisfied_by(&self.response) == Some(true)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("{:?}-arm invariant violated", self.arm)))
        }
    }
}

/// Knobs shared by the builders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub vocab: Vocab,
    /// Probability that a sampled constraint is AtMost.
    pub at_most_prob: f64,
    /// word_num is drawn within ±spread × the response length.
    pub spread: f64,
    /// Length range used when re-padding responses for evaluation sets.
    pub response_len_range: LenRange,
    pub punct_prob: f64,
    /// Semantic-equivalence tolerance as a fraction of the oracle's scale.
    pub quality_tolerance: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            vocab: Vocab::default(),
            at_most_prob: 0.5,
            spread: 0.5,
            response_len_range: LenRange::new(20, 160),
            punct_prob: 0.1,
            quality_tolerance: 0.01,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        self.vocab.validate()?;
        if !(0.0..=1.0).contains(&self.at_most_prob) || !(0.0..=1.0).contains(&self.punct_prob) {
            return Err(Error::Config("at_most_prob and punct_prob must lie in [0, 1]".into()));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) || !(self.quality_tolerance >= 0.0) {
            return Err(Error::Config("spread must be > 0 and quality_tolerance ≥ 0".into()));
        }
        if self.response_len_range.min == 0 || self.response_len_range.min >= self.response_len_range.max {
            return Err(Error::Config("response_len_range needs two distinct positive lengths".into()));
        }
        Ok(())
    }

    fn sample_kind(&self, r: &mut impl Rng) -> ConstraintKind {
        if r.random_bool(self.at_most_prob) {
            ConstraintKind::AtMost
        } else {
            ConstraintKind::AtLeast
        }
    }

    fn max_word_num(&self) -> usize {
        let v = self.vocab.size as usize;
        v * v - 1
    }
}

/// Builder output plus the number of inputs that could not be used.
#[derive(Debug, Clone, PartialEq)]
pub struct Built<T> {
    pub items: Vec<T>,
    pub skipped: usize,
}

type Interval = (usize, usize);

fn intersect(a: Interval, b: Interval) -> Option<Interval> {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    (lo <= hi).then_some((lo, hi))
}

fn window(len: usize, spread: f64) -> Interval {
    let lo = ((len as f64) * (1.0 - spread)).ceil().max(1.0) as usize;
    let hi = ((len as f64) * (1.0 + spread)).floor() as usize;
    (lo, hi)
}

/// word_num values of `kind` whose constraint the response of `len` words
/// satisfies (`want = true`) or violates, within the sampling window.
fn admissible(kind: ConstraintKind, len: usize, want: bool, spread: f64, cap: usize) -> Option<Interval> {
    let raw = match (kind, want) {
        (ConstraintKind::AtMost, true) => (len, cap),
        (ConstraintKind::AtMost, false) => (1, len.checked_sub(1)?),
        (ConstraintKind::AtLeast, true) => (1, len),
        (ConstraintKind::AtLeast, false) => (len + 1, cap),
    };
    intersect(intersect(raw, (1, cap))?, window(len, spread))
}

/// Sample a constraint with the wanted relation to `len`, trying the drawn kind
/// first and the other kind second.
fn draw_constraint(
    cfg: &AugmentConfig,
    len: usize,
    want: bool,
    cap: usize,
    r: &mut impl Rng,
) -> Option<LengthConstraint> {
    let first = cfg.sample_kind(r);
    [first, first.other()].into_iter().find_map(|kind| {
        let (lo, hi) = admissible(kind, len, want, cfg.spread, cap)?;
        Some(LengthConstraint { kind, word_num: r.random_range(lo..=hi) as u32 })
    })
}

fn constraint_cap(corpus: &[PreferenceExample], cfg: &AugmentConfig) -> usize {
    let longest = corpus.iter().map(|e| e.chosen.word_count().max(e.rejected.word_count())).max().unwrap_or(0);
    (2 * longest).min(cfg.max_word_num())
}

/// One ChosenArm and one RejectedArm example per triple, interleaved in input order.
pub fn build_rc_dataset(corpus: &[PreferenceExample], cfg: &AugmentConfig, seed: u64) -> Result<Built<RcExample>> {
    cfg.validate()?;
    let cap = constraint_cap(corpus, cfg);
    let per: Vec<[Option<RcExample>; 2]> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let mut r = rng::stream(seed, "rc", i as u64);
            let x = e.prompt.with_constraint(None);
            let chosen = draw_constraint(cfg, e.chosen.word_count(), false, cap, &mut r).map(|c| RcExample {
                preferred_prompt: x.clone(),
                dispreferred_prompt: x.with_constraint(Some(c)),
                response: e.chosen.clone(),
                arm: Arm::Chosen,
            });
            let rejected = draw_constraint(cfg, e.rejected.word_count(), true, cap, &mut r).map(|c| RcExample {
                preferred_prompt: x.with_constraint(Some(c)),
                dispreferred_prompt: x.clone(),
                response: e.rejected.clone(),
                arm: Arm::Rejected,
            });
            [chosen, rejected]
        })
        .collect();
    let mut items = Vec::with_capacity(2 * corpus.len());
    let mut skipped = 0;
    for ex in per.into_iter().flatten() {
        match ex {
            Some(ex) => items.push(ex),
            None => skipped += 1,
        }
    }
    Ok(Built { items, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftClass {
    /// Both responses satisfy; original order kept.
    Both,
    /// Only the original rejected response satisfies; order flipped.
    Reverse,
    /// Only the original chosen response satisfies.
    NoReverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftVariant {
    Reverse,
    NoReverse,
    EmptyPrompt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftItem {
    pub example: PreferenceExample,
    pub source: usize,
    pub class: LiftClass,
}

/// The satisfying response becomes chosen; `None` when neither satisfies.
pub fn apply_lift_rule(e: &PreferenceExample, c: LengthConstraint) -> Option<(PreferenceExample, LiftClass)> {
    let prompt = e.prompt.with_constraint(Some(c));
    let keep = PreferenceExample { prompt, ..e.clone() };
    match (c.satisfies(&e.chosen), c.satisfies(&e.rejected)) {
        (true, true) => Some((keep, LiftClass::Both)),
        (true, false) => Some((keep, LiftClass::NoReverse)),
        (false, true) => Some((keep.reversed(), LiftClass::Reverse)),
        (false, false) => None,
    }
}

/// LIFT-plus_less ∪ LIFT-plus_more: every triple is augmented once with an
/// AtMost and once with an AtLeast constraint; word_num is drawn from the
/// window spanning both response lengths.
pub fn build_lift_plus(corpus: &[PreferenceExample], cfg: &AugmentConfig, seed: u64) -> Result<Built<LiftItem>> {
    cfg.validate()?;
    let cap = constraint_cap(corpus, cfg);
    let per: Vec<[Option<LiftItem>; 2]> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let mut r = rng::stream(seed, "lift", i as u64);
            let (a, b) = (e.chosen.word_count(), e.rejected.word_count());
            let lo = window(a.min(b), cfg.spread).0;
            let hi = window(a.max(b), cfg.spread).1.min(cap);
            [ConstraintKind::AtMost, ConstraintKind::AtLeast].map(|kind| {
                if lo > hi {
                    return None;
                }
                let c = LengthConstraint { kind, word_num: r.random_range(lo..=hi) as u32 };
                apply_lift_rule(e, c).map(|(example, class)| LiftItem { example, source: i, class })
            })
        })
        .collect();
    let mut items = Vec::new();
    let mut skipped = 0;
    for it in per.into_iter().flatten() {
        match it {
            Some(it) => items.push(it),
            None => skipped += 1,
        }
    }
    Ok(Built { items, skipped })
}

pub fn build_lift_plus_variant(
    corpus: &[PreferenceExample],
    variant: LiftVariant,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<Built<PreferenceExample>> {
    let all = build_lift_plus(corpus, cfg, seed)?;
    let want = match variant {
        LiftVariant::Reverse => LiftClass::Reverse,
        LiftVariant::NoReverse | LiftVariant::EmptyPrompt => LiftClass::NoReverse,
    };
    let items = all
        .items
        .into_iter()
        .filter(|it| it.class == want)
        .map(|it| match variant {
            LiftVariant::EmptyPrompt => {
                let prompt = AugmentedPrompt { base: TokenSequence::empty_prompt(), ..it.example.prompt };
                PreferenceExample { prompt, quality: None, ..it.example }
            }
            _ => it.example,
        })
        .collect();
    Ok(Built { items, skipped: all.skipped })
}

/// D_eval^e: every prompt replaced by the canonical empty prompt.
pub fn build_eval_empty(eval: &[PreferenceExample]) -> Vec<PreferenceExample> {
    eval.iter()
        .map(|e| PreferenceExample { prompt: AugmentedPrompt::empty(), quality: None, ..e.clone() })
        .collect()
}

/// Uniform random derangement by rejection (≈ e attempts on average).
pub fn derangement(n: usize, r: &mut impl Rng) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::Config(format!("a derangement needs at least 2 items, got {n}")));
    }
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        p.shuffle(r);
        if p.iter().enumerate().all(|(i, &j)| i != j) {
            return Ok(p);
        }
    }
}

/// D_eval^r: example i receives the prompt of example σ(i), σ a derangement.
pub fn build_eval_random(eval: &[PreferenceExample], seed: u64) -> Result<Vec<PreferenceExample>> {
    let sigma = derangement(eval.len(), &mut rng::stream(seed, "derange", 0))?;
    Ok(eval
        .iter()
        .zip(&sigma)
        .map(|(e, &j)| PreferenceExample { prompt: eval[j].prompt.clone(), quality: None, ..e.clone() })
        .collect())
}

/// Length-balanced quality set: each triple is re-padded twice, once with the
/// rejected response longer and once with it shorter. Content, and therefore
/// oracle quality, is untouched.
pub fn build_eval_quality(
    eval: &[PreferenceExample],
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<Built<PreferenceExample>> {
    cfg.validate()?;
    let per: Vec<Result<[Option<PreferenceExample>; 2]>> = eval
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let mut r = rng::stream(seed, "quality", i as u64);
            let need = e.chosen.content().count().max(e.rejected.content().count());
            let mut row = |w_longer: bool| -> Result<Option<PreferenceExample>> {
                let (short, long) = sample_length_pair(cfg.response_len_range, &mut r);
                if short < need {
                    return Ok(None);
                }
                let (lw, ll) = if w_longer { (long, short) } else { (short, long) };
                Ok(Some(PreferenceExample {
                    chosen: repad(&e.chosen, lw, cfg.punct_prob, &mut r)?,
                    rejected: repad(&e.rejected, ll, cfg.punct_prob, &mut r)?,
                    ..e.clone()
                }))
            };
            Ok([row(false)?, row(true)?])
        })
        .collect();
    let mut items = Vec::new();
    let mut skipped = 0;
    for p in per {
        for it in p? {
            match it {
                Some(it) => items.push(it),
                None => skipped += 1,
            }
        }
    }
    Ok(Built { items, skipped })
}

/// D_eval^l: two length variants of the chosen response (same content), a
/// constraint strictly separating them, and the satisfying variant as chosen.
pub fn build_eval_length(
    eval: &[PreferenceExample],
    oracle: &QualityOracle,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<Built<PreferenceExample>> {
    cfg.validate()?;
    let tol = cfg.quality_tolerance * oracle.scale();
    let per: Vec<Result<Option<PreferenceExample>>> = eval
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let mut r = rng::stream(seed, "length", i as u64);
            let (short, long) = sample_length_pair(cfg.response_len_range, &mut r);
            if short < e.chosen.content().count() {
                return Ok(None);
            }
            let a = repad(&e.chosen, short, cfg.punct_prob, &mut r)?;
            let b = repad(&e.chosen, long, cfg.punct_prob, &mut r)?;
            let (qa, qb) = (oracle.score(&e.prompt.base, &a)?, oracle.score(&e.prompt.base, &b)?);
            if (qa - qb).abs() > tol {
                return Ok(None);
            }
            let (c, chosen, rejected) = match cfg.sample_kind(&mut r) {
                ConstraintKind::AtMost => (LengthConstraint::at_most(r.random_range(short..long) as u32), a, b),
                ConstraintKind::AtLeast => {
                    (LengthConstraint::at_least(r.random_range(short + 1..=long) as u32), b, a)
                }
            };
            Ok(Some(PreferenceExample { prompt: e.prompt.with_constraint(Some(c)), chosen, rejected, quality: None }))
        })
        .collect();
    let mut items = Vec::new();
    let mut skipped = 0;
    for p in per {
        match p? {
            Some(it) => items.push(it),
            None => skipped += 1,
        }
    }
    Ok(Built { items, skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLengthItem {
    pub prompt: AugmentedPrompt,
    /// Same content, strictly increasing word counts.
    pub variants: Vec<TokenSequence>,
}

/// D_eval^ml: `n_variants` re-paddings of each chosen response.
pub fn build_eval_multilength(
    eval: &[PreferenceExample],
    n_variants: usize,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<Vec<MultiLengthItem>> {
    cfg.validate()?;
    if n_variants == 0 {
        return Err(Error::Config("n_variants must be ≥ 1".into()));
    }
    eval.par_iter()
        .enumerate()
        .map(|(i, e)| {
            if n_variants == 1 {
                return Ok(MultiLengthItem { prompt: e.prompt.clone(), variants: vec![e.chosen.clone()] });
            }
            let range = LenRange::new(cfg.response_len_range.min.max(e.chosen.content().count()), cfg.response_len_range.max);
            if range.min > range.max || range.width() < n_variants {
                return Err(Error::Config(format!("cannot fit {n_variants} distinct lengths for example {i}")));
            }
            let mut r = rng::stream(seed, "multilength", i as u64);
            let mut lens = rand::seq::index::sample(&mut r, range.width(), n_variants).into_vec();
            lens.sort_unstable();
            let variants = lens
                .into_iter()
                .map(|l| repad(&e.chosen, range.min + l, cfg.punct_prob, &mut r))
                .collect::<Result<_>>()?;
            Ok(MultiLengthItem { prompt: e.prompt.clone(), variants })
        })
        .collect()
}

/// Offset between the outer sweep points.
pub const SWEEP_STEP: usize = 10;

/// The eight AtMost word_num values probing a pair with l_w < l_l:
/// two below l_w, l_w, two thirds between, l_l, two above.
pub fn mls_word_nums(l_w: usize, l_l: usize) -> Option<[usize; 8]> {
    let t = SWEEP_STEP;
    if l_w >= l_l || l_w <= 2 * t {
        return None;
    }
    let d = l_l - l_w;
    // nearest integer to d/3; a remainder of 1 rounds down, 2 rounds up, no exact halves
    let step = d / 3 + usize::from(d % 3 == 2);
    // d ≤ 2 would collide the interior points with l_l
    if step == 0 || 2 * step >= d {
        return None;
    }
    Some([l_w - 2 * t, l_w - t, l_w, l_w + step, l_w + 2 * step, l_l, l_l + t, l_l + 2 * t])
}

pub fn build_mls_sweep(base: &AugmentedPrompt, l_w: usize, l_l: usize) -> Option<Vec<AugmentedPrompt>> {
    let nums = mls_word_nums(l_w, l_l)?;
    Some(nums.iter().map(|&n| base.with_constraint(Some(LengthConstraint::at_most(n as u32)))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepItem {
    pub prompts: Vec<AugmentedPrompt>,
    /// The better response, strictly shorter than `rejected`.
    pub chosen: TokenSequence,
    pub rejected: TokenSequence,
}

/// D_eval^mls: sweeps for every triple whose chosen response is the shorter one.
pub fn build_eval_mls(eval: &[PreferenceExample]) -> Built<SweepItem> {
    let mut items = Vec::new();
    let mut skipped = 0;
    for e in eval {
        match build_mls_sweep(&e.prompt.with_constraint(None), e.chosen.word_count(), e.rejected.word_count()) {
            Some(prompts) => items.push(SweepItem { prompts, chosen: e.chosen.clone(), rejected: e.rejected.clone() }),
            None => skipped += 1,
        }
    }
    Built { items, skipped }
}
