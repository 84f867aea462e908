//! Command-line front end: social pretraining, training, evaluation,
//! sparsity analysis, gradient checking and loss-weight sweeps.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};
use serde_json::json;

use srhgnn::checkpoint::{matrix_document, model_document, model_from_document, Document};
use srhgnn::config::{Ablation, Config};
use srhgnn::data::{load_ratings, load_trust, split, RatingData, SplitSpec};
use srhgnn::eval::{interaction_counts, sparsity_report};
use srhgnn::gradcheck::check_fixture;
use srhgnn::model::GraphContext;
use srhgnn::social::SocialEncoderKind;
use srhgnn::tensor::Tensor;
use srhgnn::trainer::{
    evaluate, global_mean_baseline, phase_one, train, train_with_social, Dataset, StopReason,
    Trained,
};
use srhgnn::{Error, Scalar};

#[derive(Parser, Debug)]
#[command(
    name = "srhgnn",
    version,
    about = "Social recommender over a relation-typed user-item graph"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Key-value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "x-percent")]
    x_percent: Option<f64>,
    #[arg(long)]
    ablate: Option<Ablation>,
    #[arg(long = "social-encoder")]
    social_encoder: Option<SocialEncoderKind>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, value_enum, default_value = "f32")]
    precision: Precision,
}

impl Common {
    fn resolve(&self) -> srhgnn::Result<Config> {
        let mut config = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(x) = self.x_percent {
            config.x_percent = x;
        }
        if let Some(a) = self.ablate {
            config.ablate = a;
        }
        if let Some(k) = self.social_encoder {
            config.social_encoder = k;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{kv}` is not KEY=VALUE")))?;
            config.set(k.trim(), v)?;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Ratings file: user, item, rating per line.
    #[arg(long)]
    ratings: PathBuf,
    /// Trust file: user, user per line.
    #[arg(long)]
    trust: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Phase 1 only: trains the social encoder and writes H*.
    PretrainSocial {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Both phases; writes a checkpoint and a line-delimited report.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        /// Use a previously written H* instead of pretraining.
        #[arg(long = "social-matrix")]
        social_matrix: Option<PathBuf>,
    },
    /// Scores a checkpoint on one part of its split.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        part: Part,
    },
    /// Test metrics per group of users with similar training activity.
    SparsityReport {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 3)]
        buckets: usize,
    },
    /// Finite-difference check of all gradients on a built-in fixture.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Grid over the reconstruction loss weights, scored on validation RMSE.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.1")]
        grid: Vec<f64>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Part {
    Train,
    Validation,
    Test,
}

struct Loaded {
    ratings: RatingData,
    dataset: Dataset,
}

fn load(data: &DataArgs, config: &Config) -> srhgnn::Result<Loaded> {
    let ratings = load_ratings(&data.ratings, config.rating_levels)?;
    info!(
        "{}: {} users, {} items, {} ratings",
        data.ratings.display(),
        ratings.num_users(),
        ratings.num_items(),
        ratings.records.len()
    );
    let trust = load_trust(&data.trust, &ratings.users)?;
    let parts = split(
        &ratings.records,
        SplitSpec {
            x_percent: config.x_percent,
            seed: config.seed,
        },
    )?;
    let dataset = Dataset {
        num_users: ratings.num_users(),
        num_items: ratings.num_items(),
        split: parts,
        social: trust.graph,
    };
    Ok(Loaded { ratings, dataset })
}

fn write_lines(path: &Path, lines: &[serde_json::Value]) -> srhgnn::Result<()> {
    let mut f = fs::File::create(path)?;
    for l in lines {
        writeln!(f, "{l}")?;
    }
    Ok(())
}

fn print(value: &serde_json::Value) {
    println!("{value}");
}

fn pretrain_social<T: Scalar>(common: &Common, data: &DataArgs, out: &Path) -> srhgnn::Result<()> {
    let config = common.resolve()?;
    let loaded = load(data, &config)?;
    let pre = phase_one::<T>(&config, &loaded.dataset.social)?
        .ok_or_else(|| Error::Config("pretraining is disabled by --ablate no-social".into()))?;
    let doc = matrix_document(
        "h_star",
        &pre.h_star,
        &[
            ("seed", config.seed.to_string()),
            ("epochs", pre.epochs.to_string()),
            ("encoder", config.social_encoder.to_string()),
        ],
    );
    doc.save(out)?;
    print(&json!({
        "record": "pretrain-social",
        "epochs": pre.epochs,
        "final_loss": pre.losses.last(),
        "users": pre.h_star.rows(),
        "dim": pre.h_star.cols(),
    }));
    Ok(())
}

fn train_cmd<T: Scalar>(
    common: &Common,
    data: &DataArgs,
    out_dir: &Path,
    social_matrix: Option<&Path>,
) -> srhgnn::Result<StopReason> {
    let config = common.resolve()?;
    let loaded = load(data, &config)?;
    let trained: Trained<T> = match social_matrix {
        Some(path) => {
            let doc = Document::<T>::load(path)?;
            let h = doc.matrix("h_star").cloned().ok_or_else(|| {
                Error::Data(format!("{} holds no `h_star` matrix", path.display()))
            })?;
            train_with_social(&config, &loaded.dataset, config.uses_social().then_some(h))?
        }
        None => train(&config, &loaded.dataset)?,
    };
    fs::create_dir_all(out_dir)?;
    model_document(&trained.model).save(&out_dir.join("model.ckpt"))?;

    let test = evaluate(&trained.model, &trained.context, &loaded.dataset.split.test)?;
    let baseline = global_mean_baseline(&loaded.dataset.split.train, &loaded.dataset.split.test)?;
    let mut lines: Vec<serde_json::Value> = trained
        .report
        .epochs
        .iter()
        .map(|e| {
            let mut v = serde_json::to_value(e).expect("epoch record serializes");
            v["record"] = json!("epoch");
            v
        })
        .collect();
    let summary = json!({
        "record": "summary",
        "status": trained.report.status,
        "stopping_epoch": trained.report.stopping_epoch,
        "best_epoch": trained.report.best_epoch,
        "social_epochs": trained.report.social_epochs,
        "validation": trained.report.best_val,
        "rmse": test.rmse,
        "mae": test.mae,
        "count": test.count,
        "baseline_rmse": baseline.rmse,
        "precision": T::NAME,
        "seed": config.seed,
    });
    lines.push(summary.clone());
    write_lines(&out_dir.join("report.jsonl"), &lines)?;
    let timing = json!({
        "social_seconds": trained.report.social_seconds,
        "epoch_seconds": trained.report.epoch_seconds,
    });
    fs::write(out_dir.join("timing.json"), format!("{timing}\n"))?;
    fs::write(out_dir.join("config.txt"), config.to_kv_string())?;
    print(&summary);
    Ok(trained.report.status)
}

fn restore<T: Scalar>(
    data: &DataArgs,
    checkpoint: &Path,
) -> srhgnn::Result<(Loaded, srhgnn::model::SrHgnn<T>, GraphContext<T>)> {
    let model = model_from_document(&Document::<T>::load(checkpoint)?)?;
    let loaded = load(data, &model.config)?;
    if loaded.dataset.num_users != model.num_users || loaded.dataset.num_items != model.num_items {
        return Err(Error::Data(format!(
            "checkpoint expects {} users and {} items, data has {} and {}",
            model.num_users, model.num_items, loaded.dataset.num_users, loaded.dataset.num_items
        )));
    }
    let ctx = GraphContext::new(
        &loaded.dataset.split.train,
        model.num_users,
        model.num_items,
        model.config.graph_relations(),
        loaded.dataset.social.clone(),
    )?;
    Ok((loaded, model, ctx))
}

fn evaluate_cmd<T: Scalar>(data: &DataArgs, checkpoint: &Path, part: Part) -> srhgnn::Result<()> {
    let (loaded, model, ctx) = restore::<T>(data, checkpoint)?;
    let s = &loaded.dataset.split;
    let (name, records) = match part {
        Part::Train => ("train", &s.train),
        Part::Validation => ("validation", &s.validation),
        Part::Test => ("test", &s.test),
    };
    let m = evaluate(&model, &ctx, records)?;
    print(
        &json!({"record": "evaluate", "part": name, "rmse": m.rmse, "mae": m.mae, "count": m.count}),
    );
    Ok(())
}

fn sparsity_cmd<T: Scalar>(
    data: &DataArgs,
    checkpoint: &Path,
    buckets: usize,
) -> srhgnn::Result<()> {
    let (loaded, model, ctx) = restore::<T>(data, checkpoint)?;
    let s = &loaded.dataset.split;
    let pairs: Vec<_> = s.test.iter().map(|r| (r.user, r.item)).collect();
    let preds = model.predict(&ctx, &pairs)?;
    let counts = interaction_counts(&s.train, loaded.ratings.num_users());
    let report = sparsity_report(&s.test, &preds, &counts, buckets)?;
    let mut v = serde_json::to_value(&report).expect("report serializes");
    v["record"] = json!("sparsity-report");
    v["rmse"] = json!(report.overall.rmse);
    v["mae"] = json!(report.overall.mae);
    print(&v);
    Ok(())
}

fn gradcheck_cmd(seed: u64, tolerance: f64) -> srhgnn::Result<bool> {
    let mut ok = true;
    for (name, report) in check_fixture(seed)? {
        let pass = report.passes(tolerance);
        ok &= pass;
        print(&json!({
            "record": "gradcheck",
            "loss": name,
            "max_rel_error": report.max_rel_error(),
            "pass": pass,
            "params": report.params,
        }));
    }
    Ok(ok)
}

fn sweep_cmd<T: Scalar>(common: &Common, data: &DataArgs, grid: &[f64]) -> srhgnn::Result<()> {
    let base = common.resolve()?;
    let loaded = load(data, &base)?;
    let pre = phase_one::<T>(&base, &loaded.dataset.social)?;
    let h: Option<Tensor<T>> = pre.map(|p| p.h_star);
    let mut best: Option<(f64, f64, f64)> = None;
    for &w1 in grid {
        for &w2 in grid {
            let config = Config {
                w_interaction: w1,
                w_social: w2,
                ..base.clone()
            };
            let trained = train_with_social(&config, &loaded.dataset, h.clone())?;
            let val = trained
                .report
                .best_val
                .ok_or_else(|| Error::Numerical("no finite validation score".into()))?;
            print(&json!({
                "record": "sweep",
                "w_interaction": w1,
                "w_social": w2,
                "rmse": val.rmse,
                "mae": val.mae,
                "status": trained.report.status,
            }));
            if best.is_none_or(|b| val.rmse < b.2) {
                best = Some((w1, w2, val.rmse));
            }
        }
    }
    if let Some((w1, w2, rmse)) = best {
        print(&json!({"record": "sweep-best", "w_interaction": w1, "w_social": w2, "rmse": rmse}));
    }
    Ok(())
}

fn run(cli: Cli) -> srhgnn::Result<ExitCode> {
    macro_rules! by_precision {
        ($p:expr, $f:ident ( $($arg:expr),* )) => {
            match $p {
                Precision::F32 => $f::<f32>($($arg),*),
                Precision::F64 => $f::<f64>($($arg),*),
            }
        };
    }
    match &cli.command {
        Command::PretrainSocial { common, data, out } => {
            by_precision!(common.precision, pretrain_social(common, data, out))?
        }
        Command::Train {
            common,
            data,
            out_dir,
            social_matrix,
        } => {
            let status = by_precision!(
                common.precision,
                train_cmd(common, data, out_dir, social_matrix.as_deref())
            )?;
            if status == StopReason::Diverged {
                error!("training diverged; the checkpoint holds the last good parameters");
                return Ok(ExitCode::from(3));
            }
        }
        Command::Evaluate {
            data,
            checkpoint,
            part,
        } => by_precision!(
            checkpoint_precision(checkpoint)?,
            evaluate_cmd(data, checkpoint, *part)
        )?,
        Command::SparsityReport {
            data,
            checkpoint,
            buckets,
        } => by_precision!(
            checkpoint_precision(checkpoint)?,
            sparsity_cmd(data, checkpoint, *buckets)
        )?,
        Command::Gradcheck { seed, tolerance } => {
            if !gradcheck_cmd(*seed, *tolerance)? {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Sweep { common, data, grid } => {
            by_precision!(common.precision, sweep_cmd(common, data, grid))?
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Reads the `meta precision` line of a checkpoint.
fn checkpoint_precision(path: &Path) -> srhgnn::Result<Precision> {
    let text = fs::read_to_string(path)?;
    let line = text
        .lines()
        .find(|l| l.starts_with("meta precision "))
        .ok_or_else(|| Error::Data(format!("{} has no precision header", path.display())))?;
    match line.trim_start_matches("meta precision ").trim() {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        other => Err(Error::Data(format!("unknown precision `{other}`"))),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
