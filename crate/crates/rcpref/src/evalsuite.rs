//! Evaluation metrics: pairwise accuracy, prompt-swap consistency,
//! length-score correlation, multi-length stability, the word_num sweep,
//! constraint compliance and oracle-judged win ratios.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{AugmentedPrompt, MultiLengthItem, SweepItem};
use crate::corpus::{PreferenceExample, QualityOracle, TokenSequence};
use crate::error::{Error, Result};
use crate::models::{PolicyParams, SamplerConfig, Scorer};
use crate::numeric::{ls_slope, pairwise_sum, pearson};
use crate::rng;

pub use crate::experiment::{run_ablation, AblationCell, AblationKind};

/// Anything that scores a (prompt, response) pair.
pub trait PairScore: Sync {
    fn score(&self, prompt: &AugmentedPrompt, response: &TokenSequence) -> Result<f64>;
}

impl PairScore for Scorer {
    fn score(&self, prompt: &AugmentedPrompt, response: &TokenSequence) -> Result<f64> {
        Scorer::score(self, prompt, response)
    }
}

/// The oracle judges content only; constraints are invisible to it.
impl PairScore for QualityOracle {
    fn score(&self, prompt: &AugmentedPrompt, response: &TokenSequence) -> Result<f64> {
        QualityOracle::score(self, &prompt.base, response)
    }
}

/// Adapts a closure into a scorer.
pub struct FnScore<F>(pub F);

impl<F> PairScore for FnScore<F>
where
    F: Fn(&AugmentedPrompt, &TokenSequence) -> f64 + Sync,
{
    fn score(&self, prompt: &AugmentedPrompt, response: &TokenSequence) -> Result<f64> {
        Ok((self.0)(prompt, response))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Chosen,
    Rejected,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub index: usize,
    pub score_chosen: f64,
    pub score_rejected: f64,
    pub choice: Choice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_id: String,
    pub n: usize,
    pub accuracy: f64,
    pub consistency: Option<f64>,
    pub mean_margin: f64,
    pub records: Vec<ExampleRecord>,
}

fn nonempty<T>(d: &[T]) -> Result<()> {
    if d.is_empty() {
        Err(Error::Domain("empty evaluation set".into()))
    } else {
        Ok(())
    }
}

fn records<S: PairScore + ?Sized>(scorer: &S, data: &[PreferenceExample]) -> Result<Vec<ExampleRecord>> {
    data.par_iter()
        .enumerate()
        .map(|(index, e)| {
            let (w, l) = (scorer.score(&e.prompt, &e.chosen)?, scorer.score(&e.prompt, &e.rejected)?);
            if !w.is_finite() || !l.is_finite() {
                return Err(Error::Numeric(format!("non-finite score on example {index}")));
            }
            let choice = if w > l {
                Choice::Chosen
            } else if w < l {
                Choice::Rejected
            } else {
                Choice::Tie
            };
            Ok(ExampleRecord { index, score_chosen: w, score_rejected: l, choice })
        })
        .collect()
}

/// (#wins + ½·#ties) / n.
pub fn eval_accuracy<S: PairScore + ?Sized>(scorer: &S, dataset_id: &str, data: &[PreferenceExample]) -> Result<EvalReport> {
    nonempty(data)?;
    let records = records(scorer, data)?;
    let credit: Vec<f64> = records
        .iter()
        .map(|r| match r.choice {
            Choice::Chosen => 1.0,
            Choice::Tie => 0.5,
            Choice::Rejected => 0.0,
        })
        .collect();
    let margins: Vec<f64> = records.iter().map(|r| r.score_chosen - r.score_rejected).collect();
    let n = data.len() as f64;
    Ok(EvalReport {
        dataset_id: dataset_id.to_string(),
        n: data.len(),
        accuracy: pairwise_sum(&credit) / n,
        consistency: None,
        mean_margin: pairwise_sum(&margins) / n,
        records,
    })
}

/// Fraction of aligned rows where the argmax choice agrees.
pub fn eval_consistency<S: PairScore + ?Sized>(scorer: &S, a: &[PreferenceExample], b: &[PreferenceExample]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!("datasets are not aligned ({} vs {} rows)", a.len(), b.len())));
    }
    nonempty(a)?;
    let (ra, rb) = (records(scorer, a)?, records(scorer, b)?);
    let agree = ra.iter().zip(&rb).filter(|(x, y)| x.choice == y.choice).count();
    Ok(agree as f64 / a.len() as f64)
}

/// Pearson correlation of word count and score over every response in the set.
pub fn length_score_correlation<S: PairScore + ?Sized>(scorer: &S, data: &[PreferenceExample]) -> Result<f64> {
    let recs = records(scorer, data)?;
    let mut xs = Vec::with_capacity(2 * data.len());
    let mut ys = Vec::with_capacity(2 * data.len());
    for (e, r) in data.iter().zip(&recs) {
        xs.extend([e.chosen.word_count() as f64, e.rejected.word_count() as f64]);
        ys.extend([r.score_chosen, r.score_rejected]);
    }
    let mut distinct = xs.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Domain("need at least 3 distinct response lengths".into()));
    }
    pearson(&xs, &ys).ok_or_else(|| Error::Numeric("correlation undefined: zero variance".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLengthReport {
    pub mean_scores: Vec<f64>,
    pub slope: f64,
}

/// Mean score per variant index and its least-squares slope against the index.
pub fn eval_multilength_stability<S: PairScore + ?Sized>(scorer: &S, data: &[MultiLengthItem]) -> Result<MultiLengthReport> {
    nonempty(data)?;
    let k = data[0].variants.len();
    if k < 2 || data.iter().any(|it| it.variants.len() != k) {
        return Err(Error::Domain("items need a common number (≥ 2) of variants".into()));
    }
    let rows: Vec<Vec<f64>> = data
        .par_iter()
        .map(|it| it.variants.iter().map(|v| scorer.score(&it.prompt, v)).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    let n = data.len() as f64;
    let mean_scores: Vec<f64> =
        (0..k).map(|j| pairwise_sum(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()) / n).collect();
    let xs: Vec<f64> = (0..k).map(|j| j as f64).collect();
    let slope = ls_slope(&xs, &mean_scores).ok_or_else(|| Error::Numeric("slope undefined".into()))?;
    Ok(MultiLengthReport { mean_scores, slope })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub position: usize,
    /// Mean word_num at this position across items.
    pub word_num: f64,
    pub mean_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepVerdict {
    pub peak_position: usize,
    pub prominence: f64,
    pub endpoint_gap: f64,
    pub peaked_in_middle: bool,
    pub returns: bool,
    pub rise_then_return: bool,
}

/// Endpoint tolerance as a fraction of peak prominence.
pub const SHAPE_TOLERANCE: f64 = 0.2;

impl SweepCurve {
    pub fn to_csv(&self) -> String {
        let rows: Vec<Vec<String>> =
            self.points.iter().map(|p| vec![format!("{}", p.word_num), format!("{:e}", p.mean_diff)]).collect();
        crate::io::csv_string(&["word_num", "mean_score_diff"], &rows)
    }

    /// Rise-then-return: positive prominence over both endpoints, peak at
    /// positions 3–5, and endpoints within 20% of the prominence of each other.
    pub fn verdict(&self) -> SweepVerdict {
        let d: Vec<f64> = self.points.iter().map(|p| p.mean_diff).collect();
        let (first, last) = (d[0], d[d.len() - 1]);
        let mut peak = 0;
        for (i, &x) in d.iter().enumerate() {
            if x > d[peak] {
                peak = i;
            }
        }
        let prominence = d[peak] - first.max(last);
        let endpoint_gap = (last - first).abs();
        let peaked_in_middle = prominence > 0.0 && (3..=5).contains(&(peak + 1));
        let returns = prominence > 0.0 && endpoint_gap <= SHAPE_TOLERANCE * prominence;
        SweepVerdict {
            peak_position: peak + 1,
            prominence,
            endpoint_gap,
            peaked_in_middle,
            returns,
            rise_then_return: peaked_in_middle && returns,
        }
    }
}

/// Mean s(x_i, y_w) − s(x_i, y_l) at each of the sweep positions.
pub fn eval_mls_sweep<S: PairScore + ?Sized>(scorer: &S, data: &[SweepItem]) -> Result<(SweepCurve, SweepVerdict)> {
    nonempty(data)?;
    let k = data[0].prompts.len();
    if k == 0 || data.iter().any(|it| it.prompts.len() != k) {
        return Err(Error::Domain("sweep items differ in length".into()));
    }
    let rows: Vec<Vec<f64>> = data
        .par_iter()
        .map(|it| {
            it.prompts
                .iter()
                .map(|p| Ok(scorer.score(p, &it.chosen)? - scorer.score(p, &it.rejected)?))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let n = data.len() as f64;
    let points = (0..k)
        .map(|j| {
            let wn: Vec<f64> = data
                .iter()
                .map(|it| it.prompts[j].constraint.map_or(0.0, |c| f64::from(c.word_num)))
                .collect();
            SweepPoint {
                position: j + 1,
                word_num: pairwise_sum(&wn) / n,
                mean_diff: pairwise_sum(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()) / n,
            }
        })
        .collect();
    let curve = SweepCurve { points };
    let verdict = curve.verdict();
    Ok((curve, verdict))
}

/// Produces a response token sequence for prompt `index`.
pub trait Responder: Sync {
    fn respond(&self, index: usize, prompt: &AugmentedPrompt, vocab_size: u32, sampler: &SamplerConfig, seed: u64) -> Result<Vec<u32>>;
}

impl Responder for PolicyParams {
    fn respond(&self, index: usize, prompt: &AugmentedPrompt, vocab_size: u32, sampler: &SamplerConfig, seed: u64) -> Result<Vec<u32>> {
        let mut r = rng::stream(seed, rng::EVAL, index as u64);
        self.sample(&prompt.serialize(vocab_size)?, sampler, &mut r)
    }
}

/// Fixed responses, one per prompt index.
pub struct FixedResponses(pub Vec<TokenSequence>);

impl Responder for FixedResponses {
    fn respond(&self, index: usize, _: &AugmentedPrompt, _: u32, _: &SamplerConfig, _: u64) -> Result<Vec<u32>> {
        self.0
            .get(index)
            .map(|s| s.tokens().to_vec())
            .ok_or_else(|| Error::Domain(format!("no fixed response for prompt {index}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthAccReport {
    pub accuracy: f64,
    pub samples: Vec<Vec<u32>>,
    pub satisfied: Vec<bool>,
}

/// Fraction of sampled responses meeting their prompt's constraint.
pub fn eval_length_acc<R: Responder + ?Sized>(
    policy: &R,
    prompts: &[AugmentedPrompt],
    vocab_size: u32,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<LengthAccReport> {
    nonempty(prompts)?;
    if let Some(i) = prompts.iter().position(|p| p.constraint.is_none()) {
        return Err(Error::Domain(format!("prompt {i} carries no constraint")));
    }
    let samples: Vec<Vec<u32>> = prompts
        .par_iter()
        .enumerate()
        .map(|(i, p)| policy.respond(i, p, vocab_size, sampler, seed))
        .collect::<Result<_>>()?;
    let satisfied: Vec<bool> = prompts
        .iter()
        .zip(&samples)
        .map(|(p, s)| p.satisfied_by(&TokenSequence::from(s.clone())).unwrap_or(false))
        .collect();
    let accuracy = satisfied.iter().filter(|&&b| b).count() as f64 / prompts.len() as f64;
    Ok(LengthAccReport { accuracy, samples, satisfied })
}

/// Fraction of prompts on which the oracle scores a's response strictly above b's.
pub fn eval_win_ratio<A: Responder + ?Sized, B: Responder + ?Sized>(
    a: &A,
    b: &B,
    prompts: &[AugmentedPrompt],
    oracle: &QualityOracle,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<f64> {
    nonempty(prompts)?;
    let v = oracle.vocab().size;
    let wins: Vec<f64> = prompts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let ya = TokenSequence::new(a.respond(i, p, v, sampler, seed)?, v)?;
            let yb = TokenSequence::new(b.respond(i, p, v, sampler, seed)?, v)?;
            let (qa, qb) = (oracle.score(&p.base, &ya)?, oracle.score(&p.base, &yb)?);
            Ok(if qa > qb { 1.0 } else { 0.0 })
        })
        .collect::<Result<_>>()?;
    Ok(pairwise_sum(&wins) / prompts.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{build_eval_empty, build_mls_sweep, LengthConstraint};
    use crate::corpus::{generate_corpus, CorpusSpec, OracleSpec, Vocab, FILLER_START};
    use crate::models::Parameters;
    use proptest::prelude::*;
    use rand::Rng;

    fn seq(words: usize, first: u32) -> TokenSequence {
        TokenSequence::from((0..words).map(|i| if i == 0 { first } else { FILLER_START }).collect::<Vec<_>>())
    }

    fn corpus(n: usize, seed: u64) -> Vec<PreferenceExample> {
        generate_corpus(&CorpusSpec { n_examples: n, seed, ..CorpusSpec::default() }).unwrap()
    }

    fn by_len() -> FnScore<impl Fn(&AugmentedPrompt, &TokenSequence) -> f64 + Sync> {
        FnScore(|_: &AugmentedPrompt, y: &TokenSequence| y.word_count() as f64)
    }

    #[test]
    fn accuracy_basics() {
        let data = corpus(60, 2);
        let zero = FnScore(|_: &AugmentedPrompt, _: &TokenSequence| 0.0);
        assert_eq!(eval_accuracy(&zero, "d", &data).unwrap().accuracy, 0.5);
        let oracle = CorpusSpec::default().oracle().unwrap();
        assert_eq!(eval_accuracy(&oracle, "d", &data).unwrap().accuracy, 1.0);
        assert!(eval_accuracy(&zero, "d", &[]).is_err());
    }

    #[test]
    fn accuracy_hand_case() {
        // scores by first token: rows (9 vs 8) win, (8 vs 8) tie, (8 vs 10) loss → 1.5 / 3
        let p = AugmentedPrompt::plain(TokenSequence::from(vec![9]));
        let row = |a, b| PreferenceExample { prompt: p.clone(), chosen: seq(3, a), rejected: seq(5, b), quality: None };
        let data = vec![row(9, 8), row(8, 8), row(8, 10)];
        let s = FnScore(|_: &AugmentedPrompt, y: &TokenSequence| f64::from(y.tokens()[0]));
        let r = eval_accuracy(&s, "hand", &data).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.mean_margin, (1.0 + 0.0 - 2.0) / 3.0);
    }

    #[test]
    fn consistency_cases() {
        let data = corpus(40, 3);
        let s = CorpusSpec::default().oracle().unwrap();
        assert_eq!(eval_consistency(&s, &data, &data).unwrap(), 1.0);
        let blind = by_len();
        assert_eq!(eval_consistency(&blind, &data, &build_eval_empty(&data)).unwrap(), 1.0);
        // one of five rows flipped
        let five: Vec<PreferenceExample> = data[..5].to_vec();
        let mut flipped = five.clone();
        flipped[2] = flipped[2].reversed();
        assert_eq!(eval_consistency(&blind, &five, &flipped).unwrap(), 0.8);
        assert!(eval_consistency(&blind, &five, &data[..4]).is_err());
    }

    #[test]
    fn correlation_cases() {
        let data = corpus(200, 4);
        assert!((length_score_correlation(&by_len(), &data).unwrap() - 1.0).abs() < 1e-12);
        let oracle = CorpusSpec::default().oracle().unwrap();
        let big = generate_corpus(&CorpusSpec { n_examples: 1000, chosen_longer_prob: 0.5, seed: 9, ..CorpusSpec::default() }).unwrap();
        assert!(length_score_correlation(&oracle, &big).unwrap().abs() < 0.1);
        let zero = FnScore(|_: &AugmentedPrompt, _: &TokenSequence| 1.0);
        assert!(matches!(length_score_correlation(&zero, &data), Err(Error::Numeric(_))));
        // 4 responses of lengths 1..4 scored (2, 4, 5, 9)
        let p = AugmentedPrompt::plain(TokenSequence::from(vec![9]));
        let rows = vec![
            PreferenceExample { prompt: p.clone(), chosen: seq(1, 8), rejected: seq(2, 9), quality: None },
            PreferenceExample { prompt: p.clone(), chosen: seq(3, 10), rejected: seq(4, 11), quality: None },
        ];
        let s = FnScore(|_: &AugmentedPrompt, y: &TokenSequence| [2.0, 4.0, 5.0, 9.0][(y.tokens()[0] - 8) as usize]);
        let r = length_score_correlation(&s, &rows).unwrap();
        assert!((r - 11.0 / 130f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn multilength_cases() {
        let p = AugmentedPrompt::plain(TokenSequence::from(vec![9]));
        let items = vec![MultiLengthItem { prompt: p.clone(), variants: vec![seq(20, 8), seq(35, 8)] }];
        let r = eval_multilength_stability(&by_len(), &items).unwrap();
        assert_eq!(r.slope, 15.0);
        let flat = FnScore(|_: &AugmentedPrompt, y: &TokenSequence| f64::from(y.tokens()[0]));
        assert_eq!(eval_multilength_stability(&flat, &items).unwrap().slope, 0.0);
    }

    fn sweep_items() -> Vec<SweepItem> {
        let p = AugmentedPrompt::plain(TokenSequence::from(vec![9, 10]));
        [(100, 160), (60, 90), (40, 121)]
            .iter()
            .map(|&(lw, ll)| SweepItem {
                prompts: build_mls_sweep(&p, lw, ll).unwrap(),
                chosen: seq(lw, 8),
                rejected: seq(ll, 9),
            })
            .collect()
    }

    #[test]
    fn sweep_cases() {
        let items = sweep_items();
        let blind = FnScore(|_: &AugmentedPrompt, y: &TokenSequence| f64::from(y.tokens()[0]));
        let (curve, v) = eval_mls_sweep(&blind, &items).unwrap();
        assert!(!v.rise_then_return);
        assert_eq!(curve.points[0].mean_diff, curve.points[7].mean_diff);
        assert!(curve.points.windows(2).all(|w| w[0].word_num < w[1].word_num));
        // satisfaction bit: diff is 1 exactly where y_w fits and y_l does not
        let sat = FnScore(|p: &AugmentedPrompt, y: &TokenSequence| if p.satisfied_by(y) == Some(true) { 1.0 } else { 0.0 });
        let (curve, v) = eval_mls_sweep(&sat, &items).unwrap();
        let diffs: Vec<f64> = curve.points.iter().map(|p| p.mean_diff).collect();
        assert_eq!(diffs, vec![0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        assert!(v.rise_then_return);
        assert_eq!(v.peak_position, 3);
        assert!(eval_mls_sweep(&sat, &[]).is_err());
    }

    fn word_policy(vocab: usize) -> PolicyParams {
        // b strongly prefers token 8, so sampling never stops early
        let mut p = PolicyParams::uniform(vocab, 2);
        let n = p.len();
        p.values_mut().unwrap()[n - vocab + 8] = 50.0;
        p
    }

    #[test]
    fn length_acc_cases() {
        let base = TokenSequence::from(vec![9]);
        let sampler = SamplerConfig { max_len: 5, temperature: None };
        let at_least0 = vec![AugmentedPrompt::new(base.clone(), Some(LengthConstraint::at_least(0))).unwrap(); 3];
        assert_eq!(eval_length_acc(&word_policy(16), &at_least0, 16, &sampler, 0).unwrap().accuracy, 1.0);
        let at_most0 = vec![AugmentedPrompt::new(base.clone(), Some(LengthConstraint::at_most(0))).unwrap(); 3];
        assert_eq!(eval_length_acc(&word_policy(16), &at_most0, 16, &sampler, 0).unwrap().accuracy, 0.0);
        assert!(eval_length_acc(&word_policy(16), &[AugmentedPrompt::plain(base.clone())], 16, &sampler, 0).is_err());
        // recount saved samples independently
        let hot = SamplerConfig { max_len: 12, temperature: Some(1.0) };
        let prompts: Vec<AugmentedPrompt> = (0..30)
            .map(|i| AugmentedPrompt::new(base.clone(), Some(LengthConstraint::at_most(i % 10))).unwrap())
            .collect();
        let pol = PolicyParams::init(16, 3, 2);
        let rep = eval_length_acc(&pol, &prompts, 16, &hot, 7).unwrap();
        let recount = prompts
            .iter()
            .zip(&rep.samples)
            .filter(|(p, s)| s.iter().filter(|&&t| t >= 4).count() <= p.constraint.unwrap().word_num as usize)
            .count();
        assert_eq!(rep.accuracy, recount as f64 / 30.0);
        assert_eq!(eval_length_acc(&pol, &prompts, 16, &hot, 7).unwrap(), rep);
    }

    #[test]
    fn win_ratio_cases() {
        let vocab = Vocab { size: 16, n_classes: 2 };
        let oracle = QualityOracle::new(vocab, OracleSpec::default()).unwrap();
        let sampler = SamplerConfig { max_len: 10, temperature: Some(1.0) };
        let mut r = rng::stream(1, "wr", 0);
        let prompts: Vec<AugmentedPrompt> = (0..200)
            .map(|_| AugmentedPrompt::plain(TokenSequence::from(vec![r.random_range(8..16u32), r.random_range(8..16u32)])))
            .collect();
        let pol = PolicyParams::init(16, 3, 5);
        assert_eq!(eval_win_ratio(&pol, &pol, &prompts, &oracle, &sampler, 3).unwrap(), 0.0);
        // best single content token per prompt, found by brute force
        let best = FixedResponses(
            prompts
                .iter()
                .map(|p| {
                    let t = (8..16u32)
                        .max_by(|&a, &b| {
                            let s = |t| oracle.score(&p.base, &TokenSequence::from(vec![t])).unwrap();
                            s(a).total_cmp(&s(b))
                        })
                        .unwrap();
                    TokenSequence::from(vec![t])
                })
                .collect(),
        );
        assert!(eval_win_ratio(&best, &pol, &prompts, &oracle, &sampler, 3).unwrap() >= 0.9);
        // 3-prompt hand case
        let three = &prompts[..3];
        let a = FixedResponses(vec![seq(1, 8), seq(1, 9), seq(1, 10)]);
        let b = FixedResponses(vec![seq(1, 11), seq(1, 9), seq(1, 12)]);
        let manual = (0..3)
            .filter(|&i| {
                let q = |f: &FixedResponses| oracle.score(&three[i].base, &f.0[i]).unwrap();
                q(&a) > q(&b)
            })
            .count() as f64
            / 3.0;
        assert_eq!(eval_win_ratio(&a, &b, three, &oracle, &sampler, 0).unwrap(), manual);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn order_invariance_and_antisymmetry(seed in 0u64..1000) {
            let data = corpus(25, seed);
            let s = FnScore(|p: &AugmentedPrompt, y: &TokenSequence| {
                (y.word_count() % 7) as f64 + p.base.len() as f64 * 0.5
            });
            let a = eval_accuracy(&s, "x", &data).unwrap().accuracy;
            let mut perm = data.clone();
            perm.reverse();
            perm.rotate_left((seed % 25) as usize);
            prop_assert_eq!(eval_accuracy(&s, "x", &perm).unwrap().accuracy, a);
            let swapped: Vec<PreferenceExample> = data.iter().map(PreferenceExample::reversed).collect();
            prop_assert!((eval_accuracy(&s, "x", &swapped).unwrap().accuracy - (1.0 - a)).abs() < 1e-12);
            prop_assert_eq!(eval_consistency(&s, &data, &data).unwrap(), 1.0);
        }
    }

    #[test]
    fn blind_scorer_sweep_endpoints_equal() {
        let data = corpus(80, 6);
        let items = crate::constraints::build_eval_mls(&data).items;
        assert!(!items.is_empty());
        // constraint header excluded from features → every position identical
        let s = FnScore(|p: &AugmentedPrompt, y: &TokenSequence| {
            p.base.tokens().iter().map(|&t| f64::from(t)).sum::<f64>() * 0.01 + y.word_count() as f64
        });
        let (curve, _) = eval_mls_sweep(&s, &items).unwrap();
        assert!((curve.points[0].mean_diff - curve.points[7].mean_diff).abs() < 1e-9);
    }
}
