//! Synthetic preference corpora and the ground-truth quality oracle.
//!
//! Token layout (ids below `CONTENT_START` are reserved):
//! `0` canonical empty prompt / stop, `1`/`2` constraint kinds, `3` punctuation,
//! `4..8` filler words, `8..V` content words. Word count = tokens with id ≥ 4.
//! Quality only looks at content tokens, so filler changes length and nothing else.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{AugmentedPrompt, LengthConstraint};
use crate::error::{Error, Result};
use crate::rng;

pub const EMPTY_TOKEN: u32 = 0;
pub const AT_MOST_TOKEN: u32 = 1;
pub const AT_LEAST_TOKEN: u32 = 2;
pub const PUNCT_TOKEN: u32 = 3;
pub const FILLER_START: u32 = 4;
pub const CONTENT_START: u32 = 8;

pub fn is_word(t: u32) -> bool {
    t >= FILLER_START
}

pub fn is_content(t: u32) -> bool {
    t >= CONTENT_START
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub size: u32,
    /// Content tokens are partitioned into this many classes (id − 8 mod n).
    pub n_classes: u32,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab { size: 64, n_classes: 4 }
    }
}

impl Vocab {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.size < CONTENT_START + self.n_classes {
            return Err(Error::Config(format!(
                "vocab size {} cannot hold {} content classes",
                self.size, self.n_classes
            )));
        }
        if self.size > 1 << 15 {
            return Err(Error::Config(format!("vocab size {} too large", self.size)));
        }
        Ok(())
    }

    pub fn n_content(&self) -> usize {
        (self.size - CONTENT_START) as usize
    }

    pub fn class_of(&self, t: u32) -> usize {
        ((t - CONTENT_START) % self.n_classes) as usize
    }
}

/// Tokens plus their derived word count.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<u32>", into = "Vec<u32>")]
pub struct TokenSequence {
    tokens: Vec<u32>,
    word_count: usize,
}

impl From<Vec<u32>> for TokenSequence {
    fn from(tokens: Vec<u32>) -> Self {
        let word_count = tokens.iter().filter(|&&t| is_word(t)).count();
        TokenSequence { tokens, word_count }
    }
}

impl From<TokenSequence> for Vec<u32> {
    fn from(s: TokenSequence) -> Self {
        s.tokens
    }
}

impl TokenSequence {
    pub fn new(tokens: Vec<u32>, vocab_size: u32) -> Result<Self> {
        let s = TokenSequence::from(tokens);
        s.check_vocab(vocab_size)?;
        Ok(s)
    }

    pub fn check_vocab(&self, vocab_size: u32) -> Result<()> {
        match self.tokens.iter().find(|&&t| t >= vocab_size) {
            Some(t) => Err(Error::Domain(format!("token {t} outside vocabulary of size {vocab_size}"))),
            None => Ok(()),
        }
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn word_count(&self) -> usize {
        self.word_count
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn content(&self) -> impl Iterator<Item = u32> + '_ {
        self.tokens.iter().copied().filter(|&t| is_content(t))
    }

    /// The single-token canonical empty prompt.
    pub fn empty_prompt() -> Self {
        TokenSequence::from(vec![EMPTY_TOKEN])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub seed: u64,
    /// Std-dev of per-token-pair weight noise on top of the class structure.
    pub noise: f64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec { seed: 11, noise: 3.0 }
    }
}

/// Quality = mean over (prompt content, response content) token pairs of a fixed
/// random weight. Weights have a class-level component shared by all tokens of a
/// class plus token-level noise.
#[derive(Debug, Clone)]
pub struct QualityOracle {
    vocab: Vocab,
    spec: OracleSpec,
    weights: Vec<f64>,
}

impl QualityOracle {
    pub fn new(vocab: Vocab, spec: OracleSpec) -> Result<Self> {
        vocab.validate()?;
        if !(spec.noise.is_finite() && spec.noise >= 0.0) {
            return Err(Error::Config(format!("oracle noise {} must be ≥ 0", spec.noise)));
        }
        let mut r = rng::stream(spec.seed, rng::ORACLE, 0);
        let c = vocab.n_classes as usize;
        let class_w: Vec<f64> = (0..c * c).map(|_| r.sample(StandardNormal)).collect();
        let n = vocab.n_content();
        let mut weights = Vec::with_capacity(n * n);
        for p in 0..n as u32 {
            for t in 0..n as u32 {
                let cp = vocab.class_of(p + CONTENT_START);
                let ct = vocab.class_of(t + CONTENT_START);
                let eps: f64 = r.sample(StandardNormal);
                weights.push(class_w[cp * c + ct] + spec.noise * eps);
            }
        }
        Ok(QualityOracle { vocab, spec, weights })
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn spec(&self) -> OracleSpec {
        self.spec
    }

    pub fn weight(&self, prompt_tok: u32, response_tok: u32) -> f64 {
        let n = self.vocab.n_content();
        self.weights[(prompt_tok - CONTENT_START) as usize * n + (response_tok - CONTENT_START) as usize]
    }

    /// RMS weight; the unit for quality tolerances.
    pub fn scale(&self) -> f64 {
        (self.weights.iter().map(|w| w * w).sum::<f64>() / self.weights.len() as f64).sqrt()
    }

    pub fn score(&self, prompt: &TokenSequence, response: &TokenSequence) -> Result<f64> {
        prompt.check_vocab(self.vocab.size)?;
        response.check_vocab(self.vocab.size)?;
        let n = self.vocab.n_content();
        let mut cx = vec![0u32; n];
        let mut cy = vec![0u32; n];
        for t in prompt.content() {
            cx[(t - CONTENT_START) as usize] += 1;
        }
        for t in response.content() {
            cy[(t - CONTENT_START) as usize] += 1;
        }
        let nx: u32 = cx.iter().sum();
        let ny: u32 = cy.iter().sum();
        if nx == 0 || ny == 0 {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for (p, &a) in cx.iter().enumerate().filter(|(_, &a)| a > 0) {
            let row = &self.weights[p * n..(p + 1) * n];
            for (t, &b) in cy.iter().enumerate().filter(|(_, &b)| b > 0) {
                total += (a * b) as f64 * row[t];
            }
        }
        Ok(total / (nx as f64 * ny as f64))
    }
}

/// Inclusive integer interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LenRange {
    pub min: usize,
    pub max: usize,
}

impl LenRange {
    pub const fn new(min: usize, max: usize) -> Self {
        LenRange { min, max }
    }

    pub fn sample(&self, r: &mut impl Rng) -> usize {
        r.random_range(self.min..=self.max)
    }

    pub fn width(&self) -> usize {
        self.max + 1 - self.min
    }
}

/// (prompt, chosen, rejected) with optional ground-truth qualities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ExampleWire", into = "ExampleWire")]
pub struct PreferenceExample {
    pub prompt: AugmentedPrompt,
    pub chosen: TokenSequence,
    pub rejected: TokenSequence,
    pub quality: Option<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct ExampleWire {
    prompt: TokenSequence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    constraint: Option<LengthConstraint>,
    chosen: TokenSequence,
    rejected: TokenSequence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q_l: Option<f64>,
}

impl TryFrom<ExampleWire> for PreferenceExample {
    type Error = Error;
    fn try_from(w: ExampleWire) -> Result<Self> {
        let quality = match (w.q_w, w.q_l) {
            (Some(a), Some(b)) => Some((a, b)),
            (None, None) => None,
            _ => return Err(Error::Domain("q_w and q_l must appear together".into())),
        };
        PreferenceExample::new(AugmentedPrompt::new(w.prompt, w.constraint)?, w.chosen, w.rejected, quality)
    }
}

impl From<PreferenceExample> for ExampleWire {
    fn from(e: PreferenceExample) -> Self {
        ExampleWire {
            prompt: e.prompt.base,
            constraint: e.prompt.constraint,
            chosen: e.chosen,
            rejected: e.rejected,
            q_w: e.quality.map(|q| q.0),
            q_l: e.quality.map(|q| q.1),
        }
    }
}

impl PreferenceExample {
    pub fn new(
        prompt: AugmentedPrompt,
        chosen: TokenSequence,
        rejected: TokenSequence,
        quality: Option<(f64, f64)>,
    ) -> Result<Self> {
        if let Some((qw, ql)) = quality {
            if !(qw > ql) {
                return Err(Error::Domain(format!("quality labels out of order: {qw} ≤ {ql}")));
            }
        }
        Ok(PreferenceExample { prompt, chosen, rejected, quality })
    }

    pub fn chosen_longer(&self) -> bool {
        self.chosen.word_count() > self.rejected.word_count()
    }

    /// Same pair with the preference flipped; quality labels cannot survive a flip.
    pub fn reversed(&self) -> Self {
        PreferenceExample {
            prompt: self.prompt.clone(),
            chosen: self.rejected.clone(),
            rejected: self.chosen.clone(),
            quality: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub n_examples: usize,
    pub chosen_longer_prob: f64,
    pub vocab: Vocab,
    /// Content tokens per prompt.
    pub prompt_len_range: LenRange,
    /// Word count per response.
    pub response_len_range: LenRange,
    /// Content tokens per response; the rest of the words are filler.
    pub content_len_range: LenRange,
    /// Chance of a punctuation token after each word.
    pub punct_prob: f64,
    pub oracle: OracleSpec,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_examples: 1000,
            chosen_longer_prob: 0.5978,
            vocab: Vocab::default(),
            prompt_len_range: LenRange::new(4, 8),
            response_len_range: LenRange::new(20, 160),
            content_len_range: LenRange::new(8, 12),
            punct_prob: 0.1,
            oracle: OracleSpec::default(),
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        self.vocab.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.chosen_longer_prob) {
            return bad("chosen_longer_prob must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.punct_prob) {
            return bad("punct_prob must lie in [0, 1]");
        }
        for (name, r) in [
            ("prompt_len_range", self.prompt_len_range),
            ("response_len_range", self.response_len_range),
            ("content_len_range", self.content_len_range),
        ] {
            if r.min > r.max || r.min == 0 {
                return Err(Error::Config(format!("{name} [{}, {}] is empty or starts at 0", r.min, r.max)));
            }
        }
        if self.response_len_range.max == self.response_len_range.min {
            return bad("response_len_range needs two distinct lengths");
        }
        if self.response_len_range.min < self.content_len_range.max {
            return bad("response_len_range.min must be ≥ content_len_range.max");
        }
        Ok(())
    }

    pub fn oracle(&self) -> Result<QualityOracle> {
        QualityOracle::new(self.vocab, self.oracle)
    }
}

fn content_tokens(vocab: Vocab, n: usize, r: &mut impl Rng) -> Vec<u32> {
    (0..n).map(|_| r.random_range(CONTENT_START..vocab.size)).collect()
}

/// Lays `content` out as a response of exactly `words` words: filler words fill
/// the gap, order is shuffled, punctuation is sprinkled between words.
pub fn realize(content: &[u32], words: usize, punct_prob: f64, r: &mut impl Rng) -> Result<TokenSequence> {
    if words < content.len() {
        return Err(Error::Domain(format!("{} content tokens do not fit in {words} words", content.len())));
    }
    let mut ws: Vec<u32> = content.to_vec();
    ws.extend((content.len()..words).map(|_| r.random_range(FILLER_START..CONTENT_START)));
    ws.shuffle(r);
    let mut out = Vec::with_capacity(words + words / 4);
    for w in ws {
        out.push(w);
        if r.random_bool(punct_prob) {
            out.push(PUNCT_TOKEN);
        }
    }
    Ok(TokenSequence::from(out))
}

/// Same content, new length: the oracle score is unchanged by construction.
pub fn repad(response: &TokenSequence, words: usize, punct_prob: f64, r: &mut impl Rng) -> Result<TokenSequence> {
    let content: Vec<u32> = response.content().collect();
    realize(&content, words, punct_prob, r)
}

/// Two distinct lengths from `range`, ascending; `range` must hold two values.
pub fn sample_length_pair(range: LenRange, r: &mut impl Rng) -> (usize, usize) {
    let a = range.sample(r);
    let mut b = range.min + r.random_range(0..range.width() - 1);
    if b >= a {
        b += 1;
    }
    (a.min(b), a.max(b))
}

fn generate_one(spec: &CorpusSpec, oracle: &QualityOracle, index: usize) -> Result<PreferenceExample> {
    let mut r = rng::stream(spec.seed, rng::CORPUS, index as u64);
    let prompt_n = spec.prompt_len_range.sample(&mut r);
    let prompt = TokenSequence::from(content_tokens(spec.vocab, prompt_n, &mut r));
    let na = spec.content_len_range.sample(&mut r);
    let a = content_tokens(spec.vocab, na, &mut r);
    let qa = oracle.score(&prompt, &TokenSequence::from(a.clone()))?;
    let (b, qb) = loop {
        let nb = spec.content_len_range.sample(&mut r);
        let b = content_tokens(spec.vocab, nb, &mut r);
        let qb = oracle.score(&prompt, &TokenSequence::from(b.clone()))?;
        if qb != qa {
            break (b, qb);
        }
    };
    let ((w, qw), (l, ql)) = if qa > qb { ((a, qa), (b, qb)) } else { ((b, qb), (a, qa)) };
    let (short, long) = sample_length_pair(spec.response_len_range, &mut r);
    let (lw, ll) = if r.random_bool(spec.chosen_longer_prob) { (long, short) } else { (short, long) };
    let chosen = realize(&w, lw, spec.punct_prob, &mut r)?;
    let rejected = realize(&l, ll, spec.punct_prob, &mut r)?;
    PreferenceExample::new(AugmentedPrompt::plain(prompt), chosen, rejected, Some((qw, ql)))
}

/// Each example draws from its own (seed, index) stream, so generation is
/// order-free and parallel.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<PreferenceExample>> {
    spec.validate()?;
    let oracle = spec.oracle()?;
    (0..spec.n_examples).into_par_iter().map(|i| generate_one(spec, &oracle, i)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub sft: f64,
    pub rm: f64,
    pub eval: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { sft: 0.27, rm: 0.63, eval: 0.10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits<T> {
    pub sft: Vec<T>,
    pub rm: Vec<T>,
    pub eval: Vec<T>,
}

/// Seeded shuffle, then cut at the rounded cumulative fractions.
pub fn split_corpus<T: Clone>(items: &[T], f: SplitFractions, seed: u64) -> Result<Splits<T>> {
    let fs = [f.sft, f.rm, f.eval];
    if fs.iter().any(|x| !(0.0..=1.0).contains(x)) || (fs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions {fs:?} must be in [0,1] and sum to 1")));
    }
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "split", 0));
    let cut1 = ((f.sft * n as f64).round() as usize).min(n);
    let cut2 = (((f.sft + f.rm) * n as f64).round() as usize).clamp(cut1, n);
    let take = |r: std::ops::Range<usize>| order[r].iter().map(|&i| items[i].clone()).collect();
    Ok(Splits { sft: take(0..cut1), rm: take(cut1..cut2), eval: take(cut2..n) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, p: f64, seed: u64) -> CorpusSpec {
        CorpusSpec { n_examples: n, chosen_longer_prob: p, seed, ..CorpusSpec::default() }
    }

    fn chosen_longer_fraction(c: &[PreferenceExample]) -> f64 {
        c.iter().filter(|e| e.chosen_longer()).count() as f64 / c.len() as f64
    }

    #[test]
    fn word_count_counts_word_class_only() {
        let s = TokenSequence::new(vec![0, 3, 4, 7, 8, 63, 3], 64).unwrap();
        assert_eq!(s.word_count(), 4);
        assert!(TokenSequence::new(vec![64], 64).is_err());
    }

    #[test]
    fn bias_statistic_is_reproduced() {
        let c = generate_corpus(&spec(1000, 0.5978, 7)).unwrap();
        assert_eq!(c.len(), 1000);
        let f = chosen_longer_fraction(&c);
        assert!((0.55..=0.65).contains(&f), "{f}");
        assert!((f - 0.5978).abs() <= 2.0 / (1000f64).sqrt());
    }

    #[test]
    fn zero_and_certain_cases() {
        assert!(generate_corpus(&spec(0, 0.5978, 1)).unwrap().is_empty());
        let c = generate_corpus(&spec(200, 1.0, 3)).unwrap();
        assert!(c.iter().all(|e| e.chosen_longer()));
    }

    #[test]
    fn oracle_ranks_every_pair() {
        let s = spec(300, 0.5978, 5);
        let oracle = s.oracle().unwrap();
        for e in generate_corpus(&s).unwrap() {
            let qw = oracle.score(&e.prompt.base, &e.chosen).unwrap();
            let ql = oracle.score(&e.prompt.base, &e.rejected).unwrap();
            assert!(qw > ql);
            assert_eq!(e.quality, Some((qw, ql)));
        }
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        for s in [
            spec(10, 1.5, 0),
            CorpusSpec { prompt_len_range: LenRange::new(5, 4), ..spec(10, 0.5, 0) },
            CorpusSpec { response_len_range: LenRange::new(5, 40), ..spec(10, 0.5, 0) },
        ] {
            assert!(matches!(generate_corpus(&s), Err(Error::Config(_))));
        }
    }

    #[test]
    fn oracle_is_deterministic_and_ignores_filler() {
        let oracle = QualityOracle::new(Vocab::default(), OracleSpec { seed: 11, noise: 3.0 }).unwrap();
        let p = TokenSequence::from(vec![9, 20, 33]);
        let r = TokenSequence::from(vec![8, 40, 41, 62]);
        let s = oracle.score(&p, &r).unwrap();
        assert_eq!(s, oracle.score(&p, &r).unwrap());
        let mut padded = r.tokens().to_vec();
        padded.extend((0..50).map(|i| FILLER_START + i % 4));
        assert_eq!(s, oracle.score(&p, &TokenSequence::from(padded)).unwrap());
        assert!(oracle.score(&p, &TokenSequence::from(vec![64])).is_err());
    }

    #[test]
    fn oracle_matches_positional_enumeration() {
        // Independent recount: loop over token positions instead of count tables.
        let oracle = QualityOracle::new(Vocab::default(), OracleSpec { seed: 11, noise: 3.0 }).unwrap();
        let p = TokenSequence::from(vec![12, 12, 30, 5, 45]);
        let cands = [vec![8, 9, 9, 4, 50, 3, 61], vec![13, 30, 30, 6, 7, 44]];
        let brute = |y: &[u32]| {
            let (xs, ys): (Vec<u32>, Vec<u32>) =
                (p.tokens().iter().copied().filter(|&t| t >= 8).collect(), y.iter().copied().filter(|&t| t >= 8).collect());
            let mut s = 0.0;
            for &a in &xs {
                for &b in &ys {
                    s += oracle.weight(a, b);
                }
            }
            s / (xs.len() * ys.len()) as f64
        };
        let fast: Vec<f64> = cands.iter().map(|y| oracle.score(&p, &TokenSequence::from(y.clone())).unwrap()).collect();
        let slow: Vec<f64> = cands.iter().map(|y| brute(y)).collect();
        for (f, s) in fast.iter().zip(&slow) {
            assert!((f - s).abs() < 1e-12);
        }
        assert_eq!(fast[0] > fast[1], slow[0] > slow[1]);
    }

    #[test]
    fn split_sizes_follow_fractions() {
        let xs: Vec<usize> = (0..100).collect();
        let s = split_corpus(&xs, SplitFractions::default(), 4).unwrap();
        assert_eq!((s.sft.len(), s.rm.len(), s.eval.len()), (27, 63, 10));
        let mut all: Vec<usize> = s.sft.iter().chain(&s.rm).chain(&s.eval).copied().collect();
        all.sort();
        assert_eq!(all, xs);
        assert_eq!(s, split_corpus(&xs, SplitFractions::default(), 4).unwrap());
        let only = split_corpus(&xs, SplitFractions { sft: 1.0, rm: 0.0, eval: 0.0 }, 4).unwrap();
        assert_eq!(only.sft.len(), 100);
        assert!(split_corpus(&xs, SplitFractions { sft: 0.5, rm: 0.6, eval: 0.0 }, 4).is_err());
    }

    #[test]
    fn quality_and_length_are_decoupled() {
        let c = generate_corpus(&spec(1000, 0.5, 21)).unwrap();
        let dq: Vec<f64> = c.iter().map(|e| e.quality.map(|(a, b)| a - b).unwrap()).collect();
        let dl: Vec<f64> = c.iter().map(|e| e.chosen.word_count() as f64 - e.rejected.word_count() as f64).collect();
        let r = crate::numeric::pearson(&dq, &dl).unwrap();
        assert!(r.abs() < 0.1, "{r}");
    }

    #[test]
    fn generation_is_byte_identical() {
        let a = serde_json::to_string(&generate_corpus(&spec(50, 0.6, 9)).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_corpus(&spec(50, 0.6, 9)).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn jsonl_shape() {
        let e = &generate_corpus(&spec(1, 0.6, 9)).unwrap()[0];
        let line = serde_json::to_string(e).unwrap();
        let pos: Vec<usize> =
            ["\"prompt\":[", "\"chosen\":[", "\"rejected\":[", "\"q_w\":", "\"q_l\":"].iter().map(|k| line.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{line}");
        assert!(!line.contains("constraint"));
        let back: PreferenceExample = serde_json::from_str(&line).unwrap();
        assert_eq!(&back, e);
    }
}
