use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use rcpref::constraints::{
    build_eval_empty, build_eval_length, build_eval_mls, build_eval_multilength, build_eval_quality, build_eval_random,
    build_lift_plus, build_lift_plus_variant, build_rc_dataset, LiftVariant, MultiLengthItem, RcExample, SweepItem,
};
use rcpref::corpus::{generate_corpus, split_corpus, PreferenceExample};
use rcpref::evalsuite::{
    eval_accuracy, eval_consistency, eval_length_acc, eval_mls_sweep, eval_multilength_stability, eval_win_ratio,
    length_score_correlation,
};
use rcpref::experiment::{ablation_csv, build_datasets, run_ablation, AblationKind};
use rcpref::io::{csv_string, read_jsonl, to_jsonl, write_atomic};
use rcpref::models::checkpoint::{Checkpoint, Model};
use rcpref::models::{PolicyParams, Scorer};
use rcpref::objectives::{pair_features, rc_features, ObjectiveConfig, PolicyItem, ScorerItem, TokenPair, TokenRc};
use rcpref::training::{mix_datasets, train, PolicyObjective, ScorerObjective, TrainLog};
use rcpref::Error;
use serde::Serialize;

use crate::config::{self, RunConfig};
use crate::manifest::RunManifest;
use crate::{
    AblateArgs, AblationFlag, AugmentArgs, AugmentRecipe, Cli, Command, EvalArgs, GenArgs, Metric, ObjectiveKind,
    SweepArgs, TrainArgs,
};
use clap::{Parser, ValueEnum};

/// Tracks inputs and outputs of one command.
struct Ctx {
    out: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Ctx {
    fn write(&mut self, name: &str, bytes: &[u8]) -> rcpref::Result<()> {
        let p = self.out.join(name);
        write_atomic(&p, bytes)?;
        self.outputs.push(p);
        Ok(())
    }

    fn jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> rcpref::Result<()> {
        self.write(name, to_jsonl(items)?.as_bytes())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        Ok(self.write(name, s.as_bytes())?)
    }

    fn read<T: serde::de::DeserializeOwned>(&mut self, path: &Path) -> rcpref::Result<Vec<T>> {
        self.inputs.push(path.to_path_buf());
        read_jsonl(path)
    }

    fn checkpoint(&mut self, path: &Path) -> rcpref::Result<Checkpoint> {
        self.inputs.push(path.to_path_buf());
        let bytes = std::fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Checkpoint::from_bytes(&bytes)
    }
}

pub fn run(cli: &Cli, argv: Vec<String>) -> anyhow::Result<()> {
    if let Some(n) = cli.command.common().threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("thread pool")?;
    }
    match &cli.command {
        Command::Replay(r) => {
            let m = RunManifest::read(&r.manifest)?;
            let mut argv = strip_out(&m.argv);
            let out = match r.common.out.clone() {
                Some(o) => o,
                None => original_out(&m.argv),
            };
            argv.extend(["--out".to_string(), out.display().to_string()]);
            let inner = Cli::try_parse_from(std::iter::once("rcpref".to_string()).chain(argv.iter().cloned()))
                .map_err(|e| Error::Config(format!("manifest arguments do not parse: {e}")))?;
            if matches!(inner.command, Command::Replay(_)) {
                bail!(Error::Config("a manifest cannot replay another replay".into()));
            }
            execute(&inner.command, Some(m.config), argv)
        }
        cmd => execute(cmd, None, argv),
    }
}

fn strip_out(argv: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in argv {
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            out.push(a.clone());
        }
    }
    out
}

fn original_out(argv: &[String]) -> PathBuf {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--out" {
            if let Some(v) = it.next() {
                return PathBuf::from(v);
            }
        } else if let Some(v) = a.strip_prefix("--out=") {
            return PathBuf::from(v);
        }
    }
    PathBuf::from(crate::DEFAULT_OUT)
}

fn execute(cmd: &Command, fixed: Option<RunConfig>, argv: Vec<String>) -> anyhow::Result<()> {
    let start = Instant::now();
    let common = cmd.common();
    let mut cfg = match fixed {
        Some(c) => c,
        None => config::load(common.config.as_deref(), common.seed)?,
    };
    let mut ctx = Ctx { out: common.out.clone().unwrap_or_else(|| crate::DEFAULT_OUT.into()), inputs: vec![], outputs: vec![] };
    std::fs::create_dir_all(&ctx.out).map_err(|source| Error::Io { path: ctx.out.clone(), source })?;
    let name = match cmd {
        Command::Gen(a) => {
            gen(a, &mut cfg, &mut ctx)?;
            "gen"
        }
        Command::Augment(a) => {
            augment(a, &cfg, &mut ctx)?;
            "augment"
        }
        Command::Train(a) => {
            train_cmd(a, &mut cfg, &mut ctx)?;
            "train"
        }
        Command::Eval(a) => {
            eval_cmd(a, &cfg, &mut ctx)?;
            "eval"
        }
        Command::Sweep(a) => {
            sweep_cmd(a, &mut ctx)?;
            "sweep"
        }
        Command::Ablate(a) => {
            ablate(a, &cfg, &mut ctx)?;
            "ablate"
        }
        Command::Replay(_) => unreachable!("replay is resolved before execution"),
    };
    let manifest = RunManifest {
        command: name.to_string(),
        argv,
        seed: cfg.experiment.seed,
        config: cfg,
        inputs: ctx.inputs,
        outputs: ctx.outputs,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        duration_secs: start.elapsed().as_secs_f64(),
    };
    manifest.write(&ctx.out)?;
    Ok(())
}

fn gen(a: &GenArgs, cfg: &mut RunConfig, ctx: &mut Ctx) -> anyhow::Result<()> {
    if let Some(n) = a.n {
        cfg.experiment.corpus.n_examples = n;
        cfg.experiment = cfg.experiment.resolved()?;
    }
    let e = &cfg.experiment;
    let corpus = generate_corpus(&e.corpus)?;
    let splits = split_corpus(&corpus, e.splits, e.seed)?;
    ctx.jsonl("corpus.jsonl", &corpus)?;
    ctx.jsonl("sft.jsonl", &splits.sft)?;
    ctx.jsonl("rm.jsonl", &splits.rm)?;
    ctx.jsonl("eval.jsonl", &splits.eval)?;
    Ok(())
}

#[derive(Serialize)]
struct BuildSummary {
    recipe: String,
    input_rows: usize,
    output_rows: usize,
    skipped: usize,
}

fn augment(a: &AugmentArgs, cfg: &RunConfig, ctx: &mut Ctx) -> anyhow::Result<()> {
    let input: Vec<PreferenceExample> = ctx.read(&a.input)?;
    let (aug, seed) = (&cfg.experiment.augment, cfg.experiment.seed);
    let recipe = a.recipe.to_possible_value().expect("no skipped variants").get_name().to_string();
    let file = format!("{recipe}.jsonl");
    let lift = |v| build_lift_plus_variant(&input, v, aug, seed);
    let (rows, skipped) = match a.recipe {
        AugmentRecipe::Rc => {
            let b = build_rc_dataset(&input, aug, seed)?;
            ctx.jsonl(&file, &b.items)?;
            (b.items.len(), b.skipped)
        }
        AugmentRecipe::LiftPlus => {
            let b = build_lift_plus(&input, aug, seed)?;
            let items: Vec<PreferenceExample> = b.items.into_iter().map(|it| it.example).collect();
            ctx.jsonl(&file, &items)?;
            (items.len(), b.skipped)
        }
        AugmentRecipe::LiftReverse | AugmentRecipe::LiftNoreverse | AugmentRecipe::LiftEmpty => {
            let v = match a.recipe {
                AugmentRecipe::LiftReverse => LiftVariant::Reverse,
                AugmentRecipe::LiftNoreverse => LiftVariant::NoReverse,
                _ => LiftVariant::EmptyPrompt,
            };
            let b = lift(v)?;
            ctx.jsonl(&file, &b.items)?;
            (b.items.len(), b.skipped)
        }
        AugmentRecipe::EvalEmpty => {
            let items = build_eval_empty(&input);
            ctx.jsonl(&file, &items)?;
            (items.len(), 0)
        }
        AugmentRecipe::EvalRandom => {
            let items = build_eval_random(&input, seed)?;
            ctx.jsonl(&file, &items)?;
            (items.len(), 0)
        }
        AugmentRecipe::EvalQuality => {
            let b = build_eval_quality(&input, aug, seed)?;
            ctx.jsonl(&file, &b.items)?;
            (b.items.len(), b.skipped)
        }
        AugmentRecipe::EvalLength => {
            let b = build_eval_length(&input, &cfg.experiment.corpus.oracle()?, aug, seed)?;
            ctx.jsonl(&file, &b.items)?;
            (b.items.len(), b.skipped)
        }
        AugmentRecipe::EvalMultilength => {
            let items = build_eval_multilength(&input, cfg.experiment.multilength_variants, aug, seed)?;
            ctx.jsonl(&file, &items)?;
            (items.len(), 0)
        }
        AugmentRecipe::EvalMls => {
            let b = build_eval_mls(&input);
            ctx.jsonl(&file, &b.items)?;
            (b.items.len(), b.skipped)
        }
    };
    ctx.json("summary.json", &BuildSummary { recipe, input_rows: input.len(), output_rows: rows, skipped })
}

fn train_cmd(a: &TrainArgs, cfg: &mut RunConfig, ctx: &mut Ctx) -> anyhow::Result<()> {
    if let Some(e) = a.epochs {
        cfg.experiment.train.epochs = e;
        cfg.experiment = cfg.experiment.resolved()?;
    }
    let wants_rc = matches!(a.objective, ObjectiveKind::RcRm | ObjectiveKind::RcDpo);
    if wants_rc != a.rc.is_some() {
        bail!(Error::Config(if wants_rc {
            "this objective needs --rc".into()
        } else {
            "--rc only applies to rc-rm and rc-dpo".into()
        }));
    }
    if a.reference.is_some() && matches!(a.objective, ObjectiveKind::Rm | ObjectiveKind::RcRm) {
        bail!(Error::Config("--reference only applies to policy objectives".into()));
    }
    let pairs: Vec<PreferenceExample> = ctx.read(&a.data)?;
    let rc: Vec<RcExample> = match &a.rc {
        Some(p) => ctx.read(p)?,
        None => vec![],
    };
    let e = &cfg.experiment;
    let (model, log): (Model, TrainLog) = match a.objective {
        ObjectiveKind::Rm | ObjectiveKind::RcRm => {
            let fc = e.features;
            let rm: Vec<ScorerItem> =
                pairs.iter().map(|x| Ok(ScorerItem::Pair(pair_features(&fc, x)?))).collect::<rcpref::Result<_>>()?;
            let rcs: Vec<ScorerItem> =
                rc.iter().map(|x| Ok(ScorerItem::Rc(rc_features(&fc, x)?, x.arm))).collect::<rcpref::Result<_>>()?;
            let stream = mix_datasets(&rm, &rcs, e.train.mix_ratio, e.seed)?;
            let init = Scorer::new(fc, e.arch, e.seed);
            let (params, log) = train(init.params, &ScorerObjective { lambda: e.lambda }, &stream, &e.train)?;
            (Model::Scorer(Scorer { features: fc, params }), log)
        }
        ObjectiveKind::Dpo | ObjectiveKind::RDpo | ObjectiveKind::RcDpo => {
            let v = e.corpus.vocab.size;
            let init = PolicyParams::init(v as usize, cfg.policy.dim, e.seed);
            let reference = match &a.reference {
                Some(p) => match ctx.checkpoint(p)?.model {
                    Model::Policy(p) => p.snapshot(),
                    Model::Scorer(_) => bail!(Error::Contract("--reference must be a policy checkpoint".into())),
                },
                None => init.snapshot(),
            };
            let pi: Vec<PolicyItem> =
                pairs.iter().map(|x| Ok(PolicyItem::Pair(TokenPair::from_example(x, v)?))).collect::<rcpref::Result<_>>()?;
            let ri: Vec<PolicyItem> =
                rc.iter().map(|x| Ok(PolicyItem::Rc(TokenRc::from_example(x, v)?))).collect::<rcpref::Result<_>>()?;
            let stream = mix_datasets(&pi, &ri, e.train.mix_ratio, e.seed)?;
            let ocfg = ObjectiveConfig {
                lambda: e.lambda,
                rdpo_alpha: if a.objective == ObjectiveKind::RDpo { cfg.objective.rdpo_alpha } else { 0.0 },
                ..cfg.objective
            };
            let (params, log) = train(init, &PolicyObjective { reference, cfg: ocfg }, &stream, &e.train)?;
            (Model::Policy(params), log)
        }
    };
    let ckpt = Checkpoint { model, seed: e.seed };
    ctx.write(&format!("step_{}.ckpt", log.steps.len()), &ckpt.to_bytes())?;
    ctx.write("train_log.csv", log.to_csv().as_bytes())?;
    ctx.json("train_log.json", &log)
}

fn scorer_of(c: Checkpoint, metric: &str) -> rcpref::Result<Scorer> {
    match c.model {
        Model::Scorer(s) => Ok(s),
        Model::Policy(_) => Err(Error::Contract(format!("{metric} needs a scorer checkpoint"))),
    }
}

fn policy_of(c: Checkpoint, metric: &str) -> rcpref::Result<PolicyParams> {
    match c.model {
        Model::Policy(p) => Ok(p),
        Model::Scorer(_) => Err(Error::Contract(format!("{metric} needs a policy checkpoint"))),
    }
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn eval_cmd(a: &EvalArgs, cfg: &RunConfig, ctx: &mut Ctx) -> anyhow::Result<()> {
    let ckpt = ctx.checkpoint(&a.checkpoint)?;
    let seed = cfg.experiment.seed;
    let one = |name: &str, v: f64| csv_string(&["dataset", name], &[vec![stem(&a.data), format!("{v:.6}")]]);
    match a.metric {
        Metric::Accuracy => {
            let s = scorer_of(ckpt, "accuracy")?;
            let data: Vec<PreferenceExample> = ctx.read(&a.data)?;
            let rep = eval_accuracy(&s, &stem(&a.data), &data)?;
            let row = vec![rep.dataset_id.clone(), rep.n.to_string(), format!("{:.6}", rep.accuracy), format!("{:.6}", rep.mean_margin)];
            ctx.write("accuracy.csv", csv_string(&["dataset", "n", "accuracy", "mean_margin"], &[row]).as_bytes())?;
            ctx.json("accuracy.json", &rep)?;
        }
        Metric::Consistency => {
            let s = scorer_of(ckpt, "consistency")?;
            let Some(b) = &a.data_b else { bail!(Error::Config("consistency needs --data-b".into())) };
            let (da, db): (Vec<PreferenceExample>, Vec<PreferenceExample>) = (ctx.read(&a.data)?, ctx.read(b)?);
            ctx.write("consistency.csv", one("consistency", eval_consistency(&s, &da, &db)?).as_bytes())?;
        }
        Metric::Correlation => {
            let s = scorer_of(ckpt, "correlation")?;
            let data: Vec<PreferenceExample> = ctx.read(&a.data)?;
            ctx.write("correlation.csv", one("pearson", length_score_correlation(&s, &data)?).as_bytes())?;
        }
        Metric::Multilength => {
            let s = scorer_of(ckpt, "multilength")?;
            let data: Vec<MultiLengthItem> = ctx.read(&a.data)?;
            let rep = eval_multilength_stability(&s, &data)?;
            write_multilength(ctx, &rep)?;
        }
        Metric::Sweep => {
            let s = scorer_of(ckpt, "sweep")?;
            let data: Vec<SweepItem> = ctx.read(&a.data)?;
            write_sweep(ctx, &s, &data)?;
        }
        Metric::LengthAcc => {
            let p = policy_of(ckpt, "length-acc")?;
            let data: Vec<PreferenceExample> = ctx.read(&a.data)?;
            let prompts: Vec<_> = data.into_iter().map(|e| e.prompt).collect();
            let rep = eval_length_acc(&p, &prompts, cfg.experiment.corpus.vocab.size, &cfg.sampler, seed)?;
            ctx.write("length_acc.csv", one("length_accuracy", rep.accuracy).as_bytes())?;
            ctx.json("length_acc.json", &rep)?;
        }
        Metric::WinRatio => {
            let pa = policy_of(ckpt, "win-ratio")?;
            let Some(b) = &a.checkpoint_b else { bail!(Error::Config("win-ratio needs --checkpoint-b".into())) };
            let pb = policy_of(ctx.checkpoint(b)?, "win-ratio")?;
            let data: Vec<PreferenceExample> = ctx.read(&a.data)?;
            let prompts: Vec<_> = data.into_iter().map(|e| e.prompt).collect();
            let oracle = cfg.experiment.corpus.oracle()?;
            let w = eval_win_ratio(&pa, &pb, &prompts, &oracle, &cfg.sampler, seed)?;
            ctx.write("win_ratio.csv", one("win_ratio", w).as_bytes())?;
        }
    }
    Ok(())
}

fn write_multilength(ctx: &mut Ctx, rep: &rcpref::evalsuite::MultiLengthReport) -> anyhow::Result<()> {
    let rows: Vec<Vec<String>> =
        rep.mean_scores.iter().enumerate().map(|(i, m)| vec![i.to_string(), format!("{m:e}")]).collect();
    ctx.write("multilength.csv", csv_string(&["variant", "mean_score"], &rows).as_bytes())?;
    ctx.json("multilength.json", rep)
}

fn write_sweep(ctx: &mut Ctx, s: &Scorer, data: &[SweepItem]) -> anyhow::Result<()> {
    let (curve, verdict) = eval_mls_sweep(s, data)?;
    ctx.write("sweep_curve.csv", curve.to_csv().as_bytes())?;
    ctx.json("sweep.json", &serde_json::json!({ "curve": curve, "verdict": verdict }))
}

fn sweep_cmd(a: &SweepArgs, ctx: &mut Ctx) -> anyhow::Result<()> {
    let s = scorer_of(ctx.checkpoint(&a.checkpoint)?, "sweep")?;
    let data: Vec<SweepItem> = ctx.read(&a.mls)?;
    write_sweep(ctx, &s, &data)?;
    if let Some(ml) = &a.ml {
        let items: Vec<MultiLengthItem> = ctx.read(ml)?;
        write_multilength(ctx, &eval_multilength_stability(&s, &items)?)?;
    }
    Ok(())
}

fn ablate(a: &AblateArgs, cfg: &RunConfig, ctx: &mut Ctx) -> anyhow::Result<()> {
    let kind = match a.kind {
        AblationFlag::Arm => AblationKind::ArmAblation,
        AblationFlag::RcRatio => AblationKind::RcRatio { increment: a.increment },
        AblationFlag::Lambda => AblationKind::LambdaSweep {
            values: if a.lambdas.is_empty() { vec![0.0, 0.25, 0.5, 1.0] } else { a.lambdas.clone() },
        },
    };
    let data = build_datasets(&cfg.experiment)?;
    let cells = run_ablation(&kind, &cfg.experiment, &data)?;
    ctx.write("ablation.csv", ablation_csv(&cells).as_bytes())?;
    ctx.json("ablation.json", &serde_json::json!({ "kind": kind, "cells": cells }))
}
