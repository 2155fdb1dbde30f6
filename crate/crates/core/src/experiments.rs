//! Desk-scale study protocols: ablation variants, classifier compatibility,
//! the field-shuffle robustness study and one-knob sweeps.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierKind;
use crate::data::{permute_fields, DatasetSchema, Instance, Permutation, SchemaLayout};
use crate::error::{FgcnnError, Result};
use crate::model::{Model, ModelConfig, Variant};
use crate::nn::init::named_rng;
use crate::tensor::Real;
use crate::train::config::Dataset;
use crate::train::{evaluate, train, EpochRecord, Metrics, Precision, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub n_permutations: usize,
    /// Drives the shuffle study's permutation draws.
    pub permutation_seed: u64,
    /// Worker threads for independent runs; 0 picks the machine default.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: vec![1, 2, 3, 4, 5],
            n_permutations: 10,
            permutation_seed: 0,
            threads: 0,
        }
    }
}

/// One trained-and-evaluated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub study: String,
    /// Row label in rendered tables, e.g. `fgcnn+fm`.
    pub label: String,
    pub variant: Variant,
    pub classifier: ClassifierKind,
    pub seed: u64,
    pub config_digest: String,
    pub permutation: Option<Vec<usize>>,
    pub knob_value: Option<usize>,
    pub n_parameters: usize,
    pub final_train_loss: f64,
    pub test: Metrics,
    pub bayes_auc: Option<f64>,
}

pub fn build_variant<T: Real>(variant: Variant, base: &ModelConfig, layout: &SchemaLayout, seed: u64) -> Result<Model<T>> {
    Model::new(&base.with_variant(variant), layout, seed)
}

#[derive(Debug, Clone)]
pub struct Fit {
    pub history: Vec<EpochRecord>,
    pub test: Metrics,
    pub n_parameters: usize,
}

fn fit_at<T: Real>(cfg: &RunConfig, schema: &DatasetSchema, train_set: &[Instance], test: &[Instance], seed: u64) -> Result<Fit> {
    let mut model = Model::<T>::new(&cfg.model_config(), &schema.layout(), seed)?;
    let mut tc = cfg.train.clone();
    tc.seed = seed;
    // evaluation happens once below
    tc.eval_every = 0;
    let outcome = train(&mut model, train_set, None, &tc)?;
    Ok(Fit {
        history: outcome.history,
        test: evaluate(&model, test, tc.batch_size)?,
        n_parameters: model.num_parameters(),
    })
}

/// Trains `cfg`'s model on `train_set` with model and training seed `seed`
/// and scores `test`.
pub fn fit(cfg: &RunConfig, schema: &DatasetSchema, train_set: &[Instance], test: &[Instance], seed: u64) -> Result<Fit> {
    match cfg.train.precision {
        Precision::F32 => fit_at::<f32>(cfg, schema, train_set, test, seed),
        Precision::F64 => fit_at::<f64>(cfg, schema, train_set, test, seed),
    }
}

struct Job {
    label: String,
    cfg: RunConfig,
    seed: u64,
    permutation: Option<Permutation>,
    knob_value: Option<usize>,
}

fn run_job(study: &str, job: &Job, data: &Dataset) -> Result<RunRecord> {
    let permuted;
    let (schema, train_set, test) = match &job.permutation {
        Some(p) if !p.is_identity() => {
            let (tr, schema) = permute_fields(&data.train, p, &data.schema)?;
            let (te, _) = permute_fields(&data.test, p, &data.schema)?;
            permuted = (schema, tr, te);
            (&permuted.0, &permuted.1[..], &permuted.2[..])
        }
        _ => (&data.schema, &data.train[..], &data.test[..]),
    };
    let f = fit(&job.cfg, schema, train_set, test, job.seed)?;
    Ok(RunRecord {
        study: study.to_string(),
        label: job.label.clone(),
        variant: job.cfg.model.variant,
        classifier: job.cfg.classifier.kind,
        seed: job.seed,
        config_digest: job.cfg.digest()?,
        permutation: job.permutation.as_ref().map(|p| p.as_slice().to_vec()),
        knob_value: job.knob_value,
        n_parameters: f.n_parameters,
        final_train_loss: f.history.last().map_or(f64::NAN, |h| h.train_loss),
        test: f.test,
        bayes_auc: data.bayes_auc,
    })
}

/// Runs jobs in parallel; record order follows job order. Synthetic data is
/// drawn once per distinct seed given by `data_seed`.
fn run_jobs(study: &str, base: &RunConfig, jobs: Vec<Job>, data_seed: impl Fn(&Job) -> u64 + Sync) -> Result<Vec<RunRecord>> {
    let mut seeds: Vec<u64> = jobs.iter().map(&data_seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let sets: Vec<(u64, Dataset)> = seeds
        .into_iter()
        .map(|s| Ok((s, base.data.load(s)?)))
        .collect::<Result<_>>()?;
    let data_for = |job: &Job| {
        let s = data_seed(job);
        &sets.iter().find(|(k, _)| *k == s).expect("loaded").1
    };
    let go = || {
        jobs.par_iter()
            .map(|j| run_job(study, j, data_for(j)))
            .collect::<Result<Vec<_>>>()
    };
    if base.experiment.threads == 0 {
        go()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(base.experiment.threads)
            .build()
            .map_err(|e| FgcnnError::Config(format!("thread pool: {e}")))?
            .install(go)
    }
}

fn label_for(variant: Variant, kind: ClassifierKind) -> String {
    match variant {
        Variant::RemoveNew => kind.name().to_string(),
        Variant::Full => format!("fgcnn+{}", kind.name()),
        v => format!("fgcnn[{}]+{}", v.name(), kind.name()),
    }
}

/// Every variant of `base` under every configured seed.
pub fn run_ablation(base: &RunConfig, variants: &[Variant]) -> Result<Vec<RunRecord>> {
    let model = base.model_config();
    let jobs = variants
        .iter()
        .flat_map(|&v| {
            let model = &model;
            base.experiment.seeds.iter().map(move |&seed| Job {
                label: v.name().to_string(),
                cfg: base.with_model(&model.with_variant(v)),
                seed,
                permutation: None,
                knob_value: None,
            })
        })
        .collect();
    run_jobs("ablation", base, jobs, |j| j.seed)
}

/// Each classifier with and without feature generation under identical seeds.
pub fn run_compatibility(base: &RunConfig, kinds: &[ClassifierKind]) -> Result<Vec<RunRecord>> {
    let model = base.model_config();
    let mut jobs = Vec::new();
    for &kind in kinds {
        for variant in [Variant::RemoveNew, Variant::Full] {
            for &seed in &base.experiment.seeds {
                jobs.push(Job {
                    label: label_for(variant, kind),
                    cfg: base.with_model(&model.with_classifier(kind).with_variant(variant)),
                    seed,
                    permutation: None,
                    knob_value: None,
                });
            }
        }
    }
    run_jobs("compatibility", base, jobs, |j| j.seed)
}

/// `n` field orders over `n_fields` fields, the identity first.
pub fn draw_permutations(n_fields: usize, n: usize, seed: u64) -> Vec<Permutation> {
    let mut rng = named_rng(seed, "shuffle.permutations");
    let mut out = vec![Permutation::identity(n_fields)];
    while out.len() < n {
        let mut order: Vec<usize> = (0..n_fields).collect();
        order.shuffle(&mut rng);
        out.push(Permutation::new(order).expect("shuffled indices"));
    }
    out.truncate(n);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub variant: Variant,
    pub aucs: Vec<f64>,
    pub mean_auc: f64,
    pub std_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleStudyResult {
    pub permutations: Vec<Vec<usize>>,
    pub permutation_seed: u64,
    pub seed: u64,
    pub with_recombination: ArmSummary,
    pub without_recombination: ArmSummary,
    pub records: Vec<RunRecord>,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn arm(variant: Variant, records: &[RunRecord]) -> ArmSummary {
    let aucs: Vec<f64> = records
        .iter()
        .filter(|r| r.variant == variant)
        .map(|r| r.test.auc.unwrap_or(f64::NAN))
        .collect();
    let (mean_auc, std_auc) = mean_std(&aucs);
    ArmSummary {
        variant,
        aucs,
        mean_auc,
        std_auc,
    }
}

/// Both arms train on the same dataset under the same list of field orders,
/// with the first configured seed.
pub fn run_shuffle_study(base: &RunConfig) -> Result<ShuffleStudyResult> {
    let n = base.experiment.n_permutations;
    if n < 2 {
        return Err(FgcnnError::Config("the shuffle study needs at least 2 permutations".into()));
    }
    let seed = *base
        .experiment
        .seeds
        .first()
        .ok_or_else(|| FgcnnError::Config("experiment.seeds is empty".into()))?;
    let n_fields = base.data.load(seed)?.schema.n_fields();
    let perms = draw_permutations(n_fields, n, base.experiment.permutation_seed);
    let model = base.model_config();
    let mut jobs = Vec::new();
    for variant in [Variant::Full, Variant::NoRecombination] {
        for p in &perms {
            jobs.push(Job {
                label: variant.name().to_string(),
                cfg: base.with_model(&model.with_variant(variant)),
                seed,
                permutation: Some(p.clone()),
                knob_value: None,
            });
        }
    }
    let records = run_jobs("shuffle", base, jobs, |_| seed)?;
    Ok(ShuffleStudyResult {
        permutations: perms.iter().map(|p| p.as_slice().to_vec()).collect(),
        permutation_seed: base.experiment.permutation_seed,
        seed,
        with_recombination: arm(Variant::Full, &records),
        without_recombination: arm(Variant::NoRecombination, &records),
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knob {
    KernelHeight,
    NLayers,
    NewMaps,
}

impl Knob {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "kernel_height" => Ok(Knob::KernelHeight),
            "n_layers" => Ok(Knob::NLayers),
            "new_maps" => Ok(Knob::NewMaps),
            _ => Err(FgcnnError::Config(format!("unknown sweep knob `{s}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Knob::KernelHeight => "kernel_height",
            Knob::NLayers => "n_layers",
            Knob::NewMaps => "new_maps",
        }
    }

    /// `base` with this knob set to `value` in every round.
    pub fn apply(self, base: &ModelConfig, value: usize) -> ModelConfig {
        let mut c = base.clone();
        let fg = &mut c.feature_generation;
        match self {
            Knob::KernelHeight => fg.kernel_heights = vec![value; fg.n_rounds()],
            Knob::NewMaps => fg.new_maps = vec![value; fg.n_rounds()],
            Knob::NLayers => {
                fg.kernel_heights = vec![fg.kernel_heights[0]; value];
                fg.feature_maps = vec![fg.feature_maps[0]; value];
                fg.new_maps = vec![fg.new_maps[0]; value];
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub knob: Knob,
    pub points: Vec<RunRecord>,
    /// Values skipped as structurally invalid, with the reason.
    pub skipped: Vec<(usize, String)>,
}

/// One run per value under the first configured seed.
pub fn sweep(base: &RunConfig, knob: Knob, values: &[usize]) -> Result<SweepResult> {
    let seed = *base
        .experiment
        .seeds
        .first()
        .ok_or_else(|| FgcnnError::Config("experiment.seeds is empty".into()))?;
    let layout = base.data.load(seed)?.schema.layout();
    let model = base.model_config();
    let mut jobs = Vec::new();
    let mut skipped = Vec::new();
    for &v in values {
        let cfg = knob.apply(&model, v);
        match Model::<f32>::new(&cfg, &layout, seed) {
            Ok(_) => jobs.push(Job {
                label: format!("{}={v}", knob.name()),
                cfg: base.with_model(&cfg),
                seed,
                permutation: None,
                knob_value: Some(v),
            }),
            Err(e) => skipped.push((v, e.to_string())),
        }
    }
    Ok(SweepResult {
        knob,
        points: run_jobs("sweep", base, jobs, |_| seed)?,
        skipped,
    })
}

pub fn write_jsonl<S: Serialize>(items: &[S], path: &Path) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_curve(result: &SweepResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([result.knob.name(), "auc", "logloss", "n_parameters"])?;
    for p in &result.points {
        w.write_record([
            p.knob_value.map_or(String::new(), |v| v.to_string()),
            p.test.auc.map_or("nan".into(), |a| format!("{a:.6}")),
            format!("{:.6}", p.test.logloss),
            p.n_parameters.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-label mean ± std of test AUC and log loss over seeds, in first-seen
/// label order.
pub fn render_table(records: &[RunRecord]) -> String {
    let mut labels: Vec<&str> = Vec::new();
    for r in records {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "{:<34} {:>5} {:>18} {:>18}", "model", "runs", "auc", "logloss");
    for label in labels {
        let rs: Vec<&RunRecord> = records.iter().filter(|r| r.label == label).collect();
        let aucs: Vec<f64> = rs.iter().map(|r| r.test.auc.unwrap_or(f64::NAN)).collect();
        let losses: Vec<f64> = rs.iter().map(|r| r.test.logloss).collect();
        let (am, asd) = mean_std(&aucs);
        let (lm, lsd) = mean_std(&losses);
        let _ = writeln!(
            out,
            "{label:<34} {:>5} {am:>10.4} ±{asd:<7.4} {lm:>10.4} ±{lsd:<7.4}",
            rs.len()
        );
    }
    if let Some(b) = records.iter().find_map(|r| r.bayes_auc) {
        let _ = writeln!(out, "bayes-optimal auc (first seed): {b:.4}");
    }
    out
}
