//! `intent` — train, evaluate, and serve predictions from word-character
//! intent classification models.
//!
//! Exit codes: 0 success, 2 usage/config/data errors, 3 numeric divergence
//! during training.

mod config;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

use intent_core::embedding::load_word_vectors;
use intent_core::ensemble::{load_ensemble, save_ensemble, train_ensemble, EnsembleModel};
use intent_core::error::{Error, Result};
use intent_core::metrics::compute_metrics;
use intent_core::model::{predict_texts, ModelConfig};
use intent_core::serialize::{load_model, save_model};
use intent_core::text::{load_dataset, LabeledExample};
use intent_core::train::{
    evaluate, split_train_val, train_model, train_model_with_progress, EpochStats,
};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "intent",
    about = "Chinese intent classification with word-character embeddings",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a single model and write a model file
    Train(TrainArgs),
    /// Evaluate a model file against a labeled TSV
    Eval(EvalArgs),
    /// Classify queries, one per input line
    Predict(PredictArgs),
    /// Train E seeded members plus a voting manifest
    EnsembleTrain(EnsembleTrainArgs),
    /// Compare every embedding configuration and the ensembles on one split
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct CommonTrainArgs {
    /// Plain-text `key = value` config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the training seed
    #[arg(long)]
    seed: Option<u64>,
    /// Word-vector text file (`token v1 ... v_dw` per line) for
    /// pretrained word embeddings
    #[arg(long)]
    word_embeddings: Option<PathBuf>,
    /// Lexicon file for the dictionary-greedy tokenizer, one word per line
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Train the word-only baseline (skips the character module)
    #[arg(long)]
    baseline_word_only: bool,
}

impl CommonTrainArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut run = RunConfig::default();
        if let Some(path) = &self.config {
            run.apply_file(path)?;
        }
        if let Some(seed) = self.seed {
            run.seed = seed;
        }
        if let Some(path) = &self.word_embeddings {
            run.word_embeddings = Some(path.clone());
        }
        if let Some(path) = &self.lexicon {
            run.lexicon = Some(path.clone());
        }
        if self.baseline_word_only {
            run.baseline_word_only = true;
        }
        Ok(run)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training TSV: `label<TAB>text` per line
    #[arg(long)]
    train: PathBuf,
    /// Optional validation TSV; replaces the seeded eval split
    #[arg(long)]
    eval: Option<PathBuf>,
    /// Where to write the trained model
    #[arg(long, default_value = "model.bin")]
    model_out: PathBuf,
    #[command(flatten)]
    common: CommonTrainArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Model file written by `train`
    #[arg(long)]
    model: PathBuf,
    /// Labeled TSV to score
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["model", "ensemble"])))]
struct PredictArgs {
    /// Single model file
    #[arg(long)]
    model: Option<PathBuf>,
    /// Ensemble manifest (ensemble.json)
    #[arg(long)]
    ensemble: Option<PathBuf>,
    /// Text file with one query per line
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct EnsembleTrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    eval: Option<PathBuf>,
    /// Number of members (default 3, or the config file's `members`)
    #[arg(long)]
    members: Option<usize>,
    /// Directory for member files and the manifest
    #[arg(long)]
    out_dir: PathBuf,
    /// Train up to this many members in parallel
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    common: CommonTrainArgs,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    train: PathBuf,
    /// Held-out TSV every configuration is scored on
    #[arg(long)]
    test: PathBuf,
    /// Ensemble size for the two ensemble rows
    #[arg(long)]
    members: Option<usize>,
    #[command(flatten)]
    common: CommonTrainArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
        Command::EnsembleTrain(args) => cmd_ensemble_train(args),
        Command::Benchmark(args) => cmd_benchmark(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Diverged { .. } => 3,
        Error::Member { source, .. } => exit_code(source),
        _ => 2,
    }
}

fn load_pretrained(
    run: &RunConfig,
) -> Result<Option<HashMap<String, Vec<f64>>>> {
    match &run.word_embeddings {
        Some(path) => Ok(Some(load_word_vectors(path, run.word_dim)?)),
        None => Ok(None),
    }
}

fn epoch_line(stats: &EpochStats) {
    let mut line = format!("epoch={} train_loss={:.6}", stats.epoch, stats.train_loss);
    if let Some(acc) = stats.train_accuracy {
        line.push_str(&format!(" train_acc={acc:.4}"));
    }
    if let Some(f1) = stats.val_macro_f1 {
        line.push_str(&format!(" val_f1={f1:.4}"));
    }
    line.push_str(&format!(" seconds={:.2}", stats.seconds));
    println!("{line}");
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let run = args.common.resolve()?;
    let model_config = run.model_config()?;
    let train_config = run.train_config()?;
    let pretrained = load_pretrained(&run)?;

    let examples = load_dataset(&args.train)?;
    let (train_part, val_part): (Vec<LabeledExample>, Vec<LabeledExample>) = match &args.eval {
        Some(path) => (examples, load_dataset(path)?),
        None => split_train_val(&examples, train_config.eval_split, train_config.seed),
    };
    let val = if val_part.is_empty() { None } else { Some(val_part.as_slice()) };

    let outcome = train_model_with_progress(
        &train_part,
        val,
        None,
        &model_config,
        &train_config,
        pretrained.as_ref(),
        epoch_line,
    )?;
    save_model(&outcome.params, &args.model_out)?;
    if let Some(f1) = outcome.best_val_f1 {
        println!("best_val_f1={f1:.4}");
    }
    println!("model_saved={}", args.model_out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let params = load_model(&args.model)?;
    let data = load_dataset(&args.data)?;
    let report = evaluate(&params, &data)?;
    println!("{report}");
    Ok(())
}

fn read_queries(path: &Path) -> Result<Vec<String>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io_at(path, e))?;
    let content = String::from_utf8(bytes)
        .map_err(|_| Error::Encoding { path: path.display().to_string() })?;
    Ok(content
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let queries = read_queries(&args.input)?;
    if queries.is_empty() {
        return Ok(());
    }
    match (&args.model, &args.ensemble) {
        (Some(model_path), None) => {
            let params = load_model(model_path)?;
            let classes_per_chunk: Vec<(Vec<usize>, intent_core::Tensor)> = queries
                .chunks(64)
                .map(|chunk| predict_texts(&params, chunk))
                .collect::<Result<_>>()?;
            let k = params.num_classes();
            for (classes, probabilities) in classes_per_chunk {
                for (row, class) in classes.iter().enumerate() {
                    let label = params.labels.label(*class).unwrap_or("?");
                    let p = probabilities.data()[row * k + class];
                    println!("{label}\t{p:.4}");
                }
            }
        }
        (None, Some(manifest_path)) => {
            let ensemble = load_ensemble(manifest_path)?;
            let voted = ensemble.predict_texts(&queries)?;
            for (class, fraction) in voted {
                let label = ensemble.labels().label(class).unwrap_or("?");
                println!("{label}\t{fraction:.4}");
            }
        }
        _ => unreachable!("clap enforces exactly one source"),
    }
    Ok(())
}

fn cmd_ensemble_train(args: EnsembleTrainArgs) -> Result<()> {
    let mut run = args.common.resolve()?;
    if let Some(members) = args.members {
        run.members = members;
    }
    if let Some(jobs) = args.jobs {
        run.jobs = jobs;
    }
    let model_config = run.model_config()?;
    let train_config = run.train_config()?;
    let pretrained = load_pretrained(&run)?;

    let examples = load_dataset(&args.train)?;
    let eval_set = args.eval.as_ref().map(load_dataset).transpose()?;
    let ensemble = train_ensemble(
        &examples,
        eval_set.as_deref(),
        &model_config,
        &train_config,
        run.members,
        run.jobs,
        pretrained.as_ref(),
    )?;
    for (i, member) in ensemble.members.iter().enumerate() {
        println!("member={i} seed={} val_f1={:.4}", member.seed, member.validation_f1);
    }
    let manifest = save_ensemble(&ensemble, &args.out_dir)?;
    println!("manifest={}", manifest.display());
    Ok(())
}

fn ensemble_macro_f1(ensemble: &EnsembleModel, test: &[LabeledExample]) -> Result<f64> {
    let reference = &ensemble.members[0].params;
    let encoded: Vec<_> =
        test.iter().map(|e| reference.encode_example(e)).collect::<Result<_>>()?;
    let truth: Vec<usize> = encoded.iter().map(|e| e.label_id.expect("labeled")).collect();
    let voted: Vec<usize> =
        ensemble.predict_encoded(&encoded)?.into_iter().map(|(class, _)| class).collect();
    Ok(compute_metrics(&truth, &voted, ensemble.labels())?.macro_f1)
}

fn cmd_benchmark(args: BenchmarkArgs) -> Result<()> {
    let mut run = args.common.resolve()?;
    if let Some(members) = args.members {
        run.members = members;
    }
    let train_config = run.train_config()?;
    let pretrained = load_pretrained(&run)?;

    let examples = load_dataset(&args.train)?;
    let test = load_dataset(&args.test)?;
    let (train_part, val_part) =
        split_train_val(&examples, train_config.eval_split, train_config.seed);
    let val = if val_part.is_empty() { None } else { Some(val_part.as_slice()) };

    let config_for = |word_only: bool| -> Result<ModelConfig> {
        let mut run = run.clone();
        run.baseline_word_only = word_only;
        run.model_config()
    };

    let mut rows: Vec<(String, f64)> = Vec::new();
    let single_rows: [(&str, bool, bool); 4] = [
        ("1 pretrained word, recurrent baseline", true, true),
        ("2 random word, recurrent baseline", true, false),
        ("3 pretrained word + random char, word-char", false, true),
        ("4 random word and char, word-char", false, false),
    ];
    for (name, word_only, wants_pretrained) in single_rows {
        if wants_pretrained && pretrained.is_none() {
            continue; // needs --word-embeddings
        }
        let model_config = config_for(word_only)?;
        let outcome = train_model(
            &train_part,
            val,
            None,
            &model_config,
            &train_config,
            if wants_pretrained { pretrained.as_ref() } else { None },
        )?;
        let f1 = evaluate(&outcome.params, &test)?.macro_f1;
        rows.push((format!("single  {name}"), f1));
    }

    for (name, word_only) in
        [("word-char models", false), ("recurrent baselines", true)]
    {
        let model_config = config_for(word_only)?;
        let ensemble = train_ensemble(
            &examples,
            None,
            &model_config,
            &train_config,
            run.members,
            run.jobs,
            None,
        )?;
        let f1 = ensemble_macro_f1(&ensemble, &test)?;
        rows.push((format!("ensemble of {} {name}", run.members), f1));
    }

    println!("{:<52} macro_f1", "configuration");
    for (name, f1) in &rows {
        println!("{name:<52} {f1:.4}");
    }
    Ok(())
}
