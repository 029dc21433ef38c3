//! End-to-end scorer pipelines: corpus → splits → augmented datasets →
//! recipe-specific training streams → evaluation, plus ablation grids.

use serde::{Deserialize, Serialize};

use crate::constraints::{
    build_eval_empty, build_eval_length, build_eval_mls, build_eval_multilength, build_eval_quality, build_eval_random,
    build_lift_plus_variant, build_rc_dataset, AugmentConfig, Arm, LiftVariant, MultiLengthItem, RcExample, SweepItem,
};
use crate::corpus::{generate_corpus, split_corpus, CorpusSpec, PreferenceExample, QualityOracle, SplitFractions, Splits};
use crate::error::{Error, Result};
use crate::evalsuite::{
    eval_accuracy, eval_consistency, eval_mls_sweep, eval_multilength_stability, length_score_correlation, SweepCurve,
    SweepVerdict,
};
use crate::models::{FeatureConfig, Scorer, ScorerArch};
use crate::objectives::{pair_features, rc_features, ScorerItem};
use crate::training::{mix_datasets, train, ScorerObjective, TrainConfig, TrainLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Root seed; every stage derives its own named streams from it.
    pub seed: u64,
    pub corpus: CorpusSpec,
    pub splits: SplitFractions,
    pub augment: AugmentConfig,
    pub features: FeatureConfig,
    pub arch: ScorerArch,
    pub train: TrainConfig,
    /// Weight of the RejectedArm terms.
    pub lambda: f64,
    pub multilength_variants: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut features = FeatureConfig::default();
        // the satisfaction bit would hand the model the constraint outcome; the
        // scorer has to infer it from word count and word_num instead
        features.mask.satisfaction = false;
        // one unit per 20 words keeps word counts and word_num inside tanh's working range
        features.length_scale = 20.0;
        ExperimentConfig {
            seed: 0,
            corpus: CorpusSpec { n_examples: 4000, chosen_longer_prob: 0.5978, ..CorpusSpec::default() },
            splits: SplitFractions::default(),
            augment: AugmentConfig::default(),
            features,
            arch: ScorerArch::default(),
            train: TrainConfig { learning_rate: 1e-2, ..TrainConfig::default() },
            lambda: 1.0,
            multilength_variants: 3,
        }
    }
}

impl ExperimentConfig {
    /// Propagates the root seed and corpus vocabulary into every stage.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        c.corpus.seed = c.seed;
        c.train.seed = c.seed;
        c.augment.vocab = c.corpus.vocab;
        c.features.vocab = c.corpus.vocab;
        c.augment.response_len_range = c.corpus.response_len_range;
        c.augment.punct_prob = c.corpus.punct_prob;
        c.corpus.validate()?;
        c.augment.validate()?;
        c.train.validate()?;
        if !(c.lambda >= 0.0 && c.lambda.is_finite()) {
            return Err(Error::Config("lambda must be finite and ≥ 0".into()));
        }
        Ok(c)
    }
}

/// Every dataset an experiment touches, built from one root seed.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub oracle: QualityOracle,
    pub splits: Splits<PreferenceExample>,
    pub rc: Vec<RcExample>,
    pub lift_reverse: Vec<PreferenceExample>,
    pub eval_quality: Vec<PreferenceExample>,
    pub eval_length: Vec<PreferenceExample>,
    pub eval_empty: Vec<PreferenceExample>,
    pub eval_random: Vec<PreferenceExample>,
    pub eval_ml: Vec<MultiLengthItem>,
    pub eval_mls: Vec<SweepItem>,
}

pub fn build_datasets(cfg: &ExperimentConfig) -> Result<Datasets> {
    let cfg = cfg.resolved()?;
    let seed = cfg.seed;
    let oracle = cfg.corpus.oracle()?;
    let corpus = generate_corpus(&cfg.corpus)?;
    let splits = split_corpus(&corpus, cfg.splits, seed)?;
    let a = &cfg.augment;
    Ok(Datasets {
        rc: build_rc_dataset(&splits.rm, a, seed)?.items,
        lift_reverse: build_lift_plus_variant(&splits.rm, LiftVariant::Reverse, a, seed)?.items,
        eval_quality: build_eval_quality(&splits.eval, a, seed)?.items,
        eval_length: build_eval_length(&splits.eval, &oracle, a, seed)?.items,
        eval_empty: build_eval_empty(&splits.eval),
        eval_random: build_eval_random(&splits.eval, seed)?,
        eval_ml: build_eval_multilength(&splits.eval, cfg.multilength_variants, a, seed)?,
        eval_mls: build_eval_mls(&splits.eval).items,
        oracle,
        splits,
    })
}

/// Which training stream a scorer sees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "recipe", content = "value")]
pub enum Recipe {
    /// D_rm only.
    Baseline,
    /// D_rm ∪ D_Rc.
    RcRm,
    /// D_rm ∪ D_Rc^r.
    WithoutChosenArm,
    /// D_rm ∪ D_Rc^c.
    WithoutRejectedArm,
    /// D_rm ∪ the reverse LIFT-plus variant.
    LiftReverse,
    /// D_rm plus a fraction of D_Rc.
    RcRatio(f64),
    /// D_rm ∪ D_Rc with the given RejectedArm weight.
    Lambda(f64),
}

impl Recipe {
    pub fn label(&self) -> String {
        match self {
            Recipe::Baseline => "baseline".into(),
            Recipe::RcRm => "rc_rm".into(),
            Recipe::WithoutChosenArm => "without_chosen_arm".into(),
            Recipe::WithoutRejectedArm => "without_rejected_arm".into(),
            Recipe::LiftReverse => "lift_reverse".into(),
            Recipe::RcRatio(r) => format!("rc_ratio_{r}"),
            Recipe::Lambda(l) => format!("lambda_{l}"),
        }
    }
}

/// The (shuffled) training stream and the λ the objective should use.
pub fn training_stream(cfg: &ExperimentConfig, data: &Datasets, recipe: Recipe) -> Result<(Vec<ScorerItem>, f64)> {
    let fc = &cfg.features;
    let pairs = |v: &[PreferenceExample]| -> Result<Vec<ScorerItem>> {
        v.iter().map(|e| Ok(ScorerItem::Pair(pair_features(fc, e)?))).collect()
    };
    let rcs = |keep: &dyn Fn(Arm) -> bool| -> Result<Vec<ScorerItem>> {
        data.rc
            .iter()
            .filter(|e| keep(e.arm))
            .map(|e| Ok(ScorerItem::Rc(rc_features(fc, e)?, e.arm)))
            .collect()
    };
    let rm = pairs(&data.splits.rm)?;
    let seed = cfg.seed;
    let (extra, ratio, lambda) = match recipe {
        Recipe::Baseline => (vec![], 0.0, cfg.lambda),
        Recipe::RcRm => (rcs(&|_| true)?, 1.0, cfg.lambda),
        Recipe::WithoutChosenArm => (rcs(&|a| a == Arm::Rejected)?, 1.0, cfg.lambda),
        Recipe::WithoutRejectedArm => (rcs(&|a| a == Arm::Chosen)?, 1.0, cfg.lambda),
        Recipe::LiftReverse => (pairs(&data.lift_reverse)?, 1.0, cfg.lambda),
        Recipe::RcRatio(r) => (rcs(&|_| true)?, r, cfg.lambda),
        Recipe::Lambda(l) => (rcs(&|_| true)?, 1.0, l),
    };
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be finite and ≥ 0, got {lambda}")));
    }
    Ok((mix_datasets(&rm, &extra, ratio, seed)?, lambda))
}

pub fn train_scorer(cfg: &ExperimentConfig, data: &Datasets, recipe: Recipe) -> Result<(Scorer, TrainLog)> {
    let cfg = cfg.resolved()?;
    let (stream, lambda) = training_stream(&cfg, data, recipe)?;
    let init = Scorer::new(cfg.features.clone(), cfg.arch, cfg.seed);
    let (params, log) = train(init.params, &ScorerObjective { lambda }, &stream, &cfg.train)?;
    Ok((Scorer { features: cfg.features.clone(), params }, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerReport {
    pub eval_accuracy: f64,
    pub empty_accuracy: f64,
    pub random_accuracy: f64,
    pub consistency_empty: f64,
    pub consistency_random: f64,
    pub length_correlation: f64,
    pub quality_accuracy: f64,
    pub length_accuracy: f64,
    pub multilength_means: Vec<f64>,
    pub multilength_slope: f64,
    pub sweep: SweepCurve,
    pub verdict: SweepVerdict,
}

pub fn evaluate_scorer(scorer: &Scorer, data: &Datasets) -> Result<ScorerReport> {
    let eval = &data.splits.eval;
    let ml = eval_multilength_stability(scorer, &data.eval_ml)?;
    let (sweep, verdict) = eval_mls_sweep(scorer, &data.eval_mls)?;
    Ok(ScorerReport {
        eval_accuracy: eval_accuracy(scorer, "eval", eval)?.accuracy,
        empty_accuracy: eval_accuracy(scorer, "eval_empty", &data.eval_empty)?.accuracy,
        random_accuracy: eval_accuracy(scorer, "eval_random", &data.eval_random)?.accuracy,
        consistency_empty: eval_consistency(scorer, eval, &data.eval_empty)?,
        consistency_random: eval_consistency(scorer, eval, &data.eval_random)?,
        length_correlation: length_score_correlation(scorer, eval)?,
        quality_accuracy: eval_accuracy(scorer, "eval_quality", &data.eval_quality)?.accuracy,
        length_accuracy: eval_accuracy(scorer, "eval_length", &data.eval_length)?.accuracy,
        multilength_means: ml.mean_scores,
        multilength_slope: ml.slope,
        sweep,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AblationKind {
    /// Drop one Rc arm at a time.
    ArmAblation,
    /// Share of D_Rc from 0 to 1 in steps of `increment`.
    RcRatio { increment: f64 },
    LambdaSweep { values: Vec<f64> },
}

impl AblationKind {
    pub fn recipes(&self) -> Result<Vec<Recipe>> {
        match self {
            AblationKind::ArmAblation => Ok(vec![Recipe::WithoutChosenArm, Recipe::WithoutRejectedArm]),
            AblationKind::RcRatio { increment } => {
                if !(*increment > 0.0 && *increment <= 1.0) {
                    return Err(Error::Config(format!("ratio increment {increment} outside (0, 1]")));
                }
                let k = (1.0 / increment + 1e-9).floor() as usize;
                Ok((0..=k).map(|i| Recipe::RcRatio((i as f64 * increment).min(1.0))).collect())
            }
            AblationKind::LambdaSweep { values } => {
                if values.is_empty() {
                    return Err(Error::Config("lambda sweep needs at least one value".into()));
                }
                Ok(values.iter().map(|&l| Recipe::Lambda(l)).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub cell: String,
    pub quality_accuracy: f64,
    pub length_accuracy: f64,
}

/// Trains and evaluates one scorer per grid cell.
pub fn run_ablation(kind: &AblationKind, cfg: &ExperimentConfig, data: &Datasets) -> Result<Vec<AblationCell>> {
    kind.recipes()?
        .into_iter()
        .map(|recipe| {
            let cell = recipe.label();
            let run = || -> Result<AblationCell> {
                let (scorer, _) = train_scorer(cfg, data, recipe)?;
                Ok(AblationCell {
                    cell: cell.clone(),
                    quality_accuracy: eval_accuracy(&scorer, "eval_quality", &data.eval_quality)?.accuracy,
                    length_accuracy: eval_accuracy(&scorer, "eval_length", &data.eval_length)?.accuracy,
                })
            };
            run().map_err(|e| Error::Cell { cell: cell.clone(), source: Box::new(e) })
        })
        .collect()
}

pub fn ablation_csv(cells: &[AblationCell]) -> String {
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| vec![c.cell.clone(), format!("{:.6}", c.quality_accuracy), format!("{:.6}", c.length_accuracy)])
        .collect();
    crate::io::csv_string(&["cell", "quality_accuracy", "length_accuracy"], &rows)
}
