use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use fgcnn::classifier::ClassifierKind;
use fgcnn::data::io::{write_probs, write_schema, write_table};
use fgcnn::data::{generate_synthetic, Instance};
use fgcnn::error::{FgcnnError, Result};
use fgcnn::experiments::{self, Knob};
use fgcnn::model::{Model, Variant};
use fgcnn::tensor::Real;
use fgcnn::train::checkpoint::stored_precision;
use fgcnn::train::{
    complexity_report, evaluate, load_checkpoint, save_checkpoint, train, EpochRecord, Metrics, Precision, RunConfig,
};
use fgcnn::verify::{self, CheckOutcome};

#[derive(Parser)]
#[command(name = "fgcnn", version, about = "FGCNN click-through-rate model and study harness")]
struct Cli {
    /// TOML run configuration; built-in desk defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed (studies then use this single seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the configured data, evaluate on its test split, save a checkpoint.
    Train,
    /// Score the configured test split with a saved checkpoint.
    Eval {
        /// Defaults to `<out>/model.fgcn`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write the configured synthetic dataset as delimited files.
    Synth,
    /// Train every structural variant.
    Ablate,
    /// Each classifier with and without feature generation.
    Compat,
    /// Field-order robustness with and without recombination.
    Shuffle,
    /// Vary one feature-generation knob.
    Sweep {
        #[arg(long, value_parser = ["kernel_height", "n_layers", "new_maps"])]
        knob: String,
        /// Comma-separated values; defaults cover the knob's natural range.
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
    },
    /// Parameter and multiply counts by formula and by allocation.
    Complexity,
    /// Finite-difference gradient checks of every layer and the full model.
    Gradcheck,
}

#[derive(Serialize)]
struct EpochLine<'a> {
    seed: u64,
    config_digest: &'a str,
    #[serde(flatten)]
    record: &'a EpochRecord,
}

#[derive(Serialize)]
struct TestLine<'a> {
    seed: u64,
    config_digest: &'a str,
    split: &'static str,
    #[serde(flatten)]
    metrics: &'a Metrics,
}

fn print_metrics(label: &str, m: &Metrics) {
    let auc = m.auc.map_or("undefined".to_string(), |a| format!("{a:.4}"));
    println!("{label:<8} auc {auc:>9}  logloss {:.4}  pos {}  neg {}", m.logloss, m.n_pos, m.n_neg);
}

fn train_at<T: Real>(cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let data = cfg.data.load(seed)?;
    let mut model = Model::<T>::new(&cfg.model_config(), &data.schema.layout(), seed)?;
    let mut tc = cfg.train.clone();
    tc.seed = seed;
    let outcome = train(&mut model, &data.train, Some(&data.test), &tc)?;
    let test = evaluate(&model, &data.test, tc.batch_size)?;
    let digest = cfg.digest()?;
    let mut lines = Vec::new();
    for r in &outcome.history {
        let auc = r.eval.as_ref().and_then(|m| m.auc).map_or("-".into(), |a| format!("{a:.4}"));
        println!("epoch {:>4}  train loss {:.5}  test auc {auc}", r.epoch, r.train_loss);
        lines.push(serde_json::to_string(&EpochLine {
            seed,
            config_digest: &digest,
            record: r,
        })?);
    }
    lines.push(serde_json::to_string(&TestLine {
        seed,
        config_digest: &digest,
        split: "test",
        metrics: &test,
    })?);
    print_metrics("test", &test);
    if let Some(b) = data.bayes_auc {
        println!("bayes-optimal test auc {b:.4}");
    }
    fs::write(out.join("metrics.jsonl"), lines.join("\n") + "\n")?;
    write_schema(&data.schema, &out.join("schema.json"))?;
    save_checkpoint(&model, Some(&outcome.optimizer), &out.join("model.fgcn"))?;
    Ok(())
}

fn eval_at<T: Real>(cfg: &RunConfig, seed: u64, path: &Path, out: &Path) -> Result<()> {
    let data = cfg.data.load(seed)?;
    let ckpt = load_checkpoint::<T>(path, Some(&data.schema.digest()))?;
    let m = evaluate(&ckpt.model, &data.test, cfg.train.batch_size)?;
    print_metrics("test", &m);
    let line = serde_json::to_string(&TestLine {
        seed,
        config_digest: &cfg.digest()?,
        split: "test",
        metrics: &m,
    })?;
    fs::write(out.join("eval.jsonl"), line + "\n")?;
    let probs = fgcnn::train::predict(&ckpt.model, &data.test, cfg.train.batch_size)?;
    write_probs(&probs, &out.join("test_probs.txt"))?;
    Ok(())
}

fn print_checks(checks: &[CheckOutcome]) -> bool {
    let mut ok = true;
    for c in checks {
        let status = if c.passed() { "ok  " } else { "FAIL" };
        ok &= c.passed();
        println!(
            "{status} {:<16} seed {:<4} max rel err {:.3e}  ({} coords, {} near kinks)",
            c.name, c.seed, c.max_rel_error, c.checked, c.skipped_kinks
        );
    }
    ok
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
        cfg.experiment.seeds = vec![s];
    }
    let seed = cfg.train.seed;
    let out = cli.out.as_path();
    let needs_out = !matches!(cli.command, Command::Gradcheck);
    if needs_out {
        fs::create_dir_all(out)?;
    }
    match cli.command {
        Command::Train => match cfg.train.precision {
            Precision::F32 => train_at::<f32>(&cfg, seed, out),
            Precision::F64 => train_at::<f64>(&cfg, seed, out),
        },
        Command::Eval { checkpoint } => {
            let path = checkpoint.unwrap_or_else(|| out.join("model.fgcn"));
            match stored_precision(&fs::read(&path)?)? {
                Precision::F32 => eval_at::<f32>(&cfg, seed, &path, out),
                Precision::F64 => eval_at::<f64>(&cfg, seed, &path, out),
            }
        }
        Command::Synth => {
            let s = &cfg.data.synthetic;
            let data = generate_synthetic(&s.spec(seed)?, s.n_train + s.n_test)?;
            let table = data.to_raw_table();
            let (tr, te) = table.rows.split_at(s.n_train);
            for (name, rows) in [("train.csv", tr), ("test.csv", te)] {
                let part = fgcnn::data::RawTable {
                    field_names: table.field_names.clone(),
                    rows: rows.to_vec(),
                };
                write_table(&part, &out.join(name))?;
            }
            write_probs(&data.probs[s.n_train..], &out.join("test_true_probs.txt"))?;
            let positives = data.instances.iter().filter(|i: &&Instance| i.label == 1).count();
            println!(
                "wrote {} train and {} test rows ({} positive overall) to {}",
                s.n_train,
                s.n_test,
                positives,
                out.display()
            );
            Ok(())
        }
        Command::Ablate => {
            let recs = experiments::run_ablation(&cfg, &Variant::ALL)?;
            print!("{}", experiments::render_table(&recs));
            experiments::write_jsonl(&recs, &out.join("ablation.jsonl"))
        }
        Command::Compat => {
            let recs = experiments::run_compatibility(&cfg, &ClassifierKind::ALL)?;
            print!("{}", experiments::render_table(&recs));
            experiments::write_jsonl(&recs, &out.join("compat.jsonl"))
        }
        Command::Shuffle => {
            let res = experiments::run_shuffle_study(&cfg)?;
            print!("{}", experiments::render_table(&res.records));
            for a in [&res.with_recombination, &res.without_recombination] {
                println!("{:<18} mean auc {:.4}  std {:.5}", a.variant.name(), a.mean_auc, a.std_auc);
            }
            experiments::write_jsonl(&res.records, &out.join("shuffle.jsonl"))?;
            fs::write(out.join("shuffle_summary.json"), serde_json::to_string_pretty(&res)?)?;
            Ok(())
        }
        Command::Sweep { knob, values } => {
            let knob = Knob::parse(&knob)?;
            let n_f = cfg.data.load(seed)?.schema.n_fields();
            let values = if values.is_empty() {
                match knob {
                    Knob::KernelHeight => (2..=n_f).collect(),
                    Knob::NLayers => (1..=4).collect(),
                    Knob::NewMaps => (1..=4).collect(),
                }
            } else {
                values
            };
            let res = experiments::sweep(&cfg, knob, &values)?;
            for (v, why) in &res.skipped {
                eprintln!("skipped {}={v}: {why}", knob.name());
            }
            print!("{}", experiments::render_table(&res.points));
            experiments::write_curve(&res, &out.join(format!("sweep_{}.csv", knob.name())))?;
            experiments::write_jsonl(&res.points, &out.join(format!("sweep_{}.jsonl", knob.name())))
        }
        Command::Complexity => {
            let layout = cfg.data.load(seed).map(|d| d.schema.layout()).or_else(|_| {
                // file-backed configs without readable files still get a report
                let s = &cfg.data.synthetic;
                s.spec(seed).map(|sp| sp.schema().layout())
            })?;
            let report = complexity_report(&cfg.model_config(), &layout)?;
            println!("{report}");
            fs::write(out.join("complexity.json"), serde_json::to_string_pretty(&report)?)?;
            if report.consistent() {
                Ok(())
            } else {
                Err(FgcnnError::Corrupt("formula and allocated counts disagree".into()))
            }
        }
        Command::Gradcheck => {
            let seeds = [seed, seed + 1, seed + 2];
            let checks = verify::full_suite(&seeds)?;
            if print_checks(&checks) {
                println!("all {} checks below {:e}", checks.len(), verify::GRAD_TOLERANCE);
                Ok(())
            } else {
                Err(FgcnnError::GradCheckFailed(checks.iter().filter(|c| !c.passed()).count()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
