//! Command-line front-end: weight dumps, training runs, evaluation reports,
//! coarsening curves, dataset synthesis, and the verification suite.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::error::{Error, Result};
use crate::hierarchy::{parse_hierarchy, Hierarchy};
use crate::metrics::{format_curve_csv, format_report_json};
use crate::textfmt::fmt_f64;
use crate::trainer::{
    evaluate_model, format_checkpoint, format_dataset_csv, generate_synthetic, parse_checkpoint,
    parse_dataset_csv, split_holdout, train_with_history, LossKind, TrainConfig,
};
use crate::verify::{format_outcome, run_all, VerifyScale};
use crate::weighting::{exponential_weights, format_weight_dump, hxe_weights, WeightedHierarchy};

#[derive(Parser)]
#[command(
    name = "hierloss",
    version,
    about = "Hierarchical classification losses, metrics, and trainers on weighted label trees"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build node weights for a tree and write a weight dump
    Weights(WeightsArgs),
    /// Train a linear softmax classifier and report held-out metrics
    Train(TrainArgs),
    /// Score a saved checkpoint on a dataset
    Evaluate(EvaluateArgs),
    /// Emit the coarsening accuracy curve of a saved checkpoint
    Curve(CurveArgs),
    /// Run the brute-force verification checks
    Verify(VerifyArgs),
    /// Generate a synthetic dataset from a tree
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    Exponential,
    Hxe,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Ce,
    Hier,
    Hxe,
}

#[derive(Args)]
struct WeightsArgs {
    /// Tree file: JSON nodes or child<TAB>parent edge list
    #[arg(long)]
    tree: PathBuf,
    /// Weighting scheme
    #[arg(long, value_enum, default_value_t = Scheme::Exponential)]
    scheme: Scheme,
    /// Growth rate for the exponential scheme (default 1)
    #[arg(long)]
    q: Option<f64>,
    /// Discount for the hxe scheme (default 0.1)
    #[arg(long)]
    alpha: Option<f64>,
    /// Rescale hxe weights so every leaf path sums to 1/2
    #[arg(long)]
    renormalize: bool,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Print numbers at full precision instead of six decimals
    #[arg(long)]
    full_precision: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    tree: PathBuf,
    /// Training loss
    #[arg(long, value_enum)]
    loss: LossArg,
    /// Growth rate when --loss hier (default 0.9)
    #[arg(long)]
    q: Option<f64>,
    /// Discount when --loss hxe (default 0.1)
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Initial step size (cosine-annealed to zero)
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Dataset CSV; omit to train on synthetic data
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic samples per class
    #[arg(long, default_value_t = 5)]
    per_class: usize,
    /// Synthetic feature dimension
    #[arg(long, default_value_t = 3)]
    dim: usize,
    /// Synthetic within-class noise
    #[arg(long, default_value_t = 0.5)]
    spread: f64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long)]
    full_precision: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    tree: PathBuf,
    /// Checkpoint written by `train`
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Growth rate of the metric weighting (default 1)
    #[arg(long)]
    q: Option<f64>,
    /// Use the renormalized hxe weighting with this discount instead
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long)]
    full_precision: bool,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long)]
    full_precision: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Run reduced draw counts
    #[arg(long)]
    quick: bool,
    /// Additionally report the unit-weight counterexample minimizer
    #[arg(long)]
    include_naive: bool,
    /// Validate a deliberately corrupted weighting (must fail)
    #[arg(long, hide = true)]
    corrupt_weights: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long, default_value_t = 5)]
    per_class: usize,
    #[arg(long, default_value_t = 3)]
    dim: usize,
    #[arg(long, default_value_t = 0.5)]
    spread: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long)]
    full_precision: bool,
}

/// Parse arguments and run; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Weights(args) => cmd_weights(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Curve(args) => cmd_curve(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Synth(args) => cmd_synth(args),
    }
}

fn read_tree(path: &Path) -> Result<Hierarchy> {
    parse_hierarchy(&fs::read_to_string(path)?)
}

fn manifest_line(
    subcommand: &str,
    inputs: &[&Path],
    params: serde_json::Value,
    seed: Option<u64>,
    outputs: &[&str],
) -> String {
    let doc = json!({
        "subcommand": subcommand,
        "inputs": inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "params": params,
        "seed": seed,
        "outputs": outputs,
        "version": env!("CARGO_PKG_VERSION"),
    });
    format!("# manifest: {doc}")
}

fn write_artifact(dir: &Path, name: &str, manifest: &str, body: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut content = format!("{manifest}\n{body}");
    if !content.ends_with('\n') {
        content.push('\n');
    }
    fs::write(&path, content)?;
    Ok(path)
}

fn check_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        return Err(Error::InvalidParameter(
            "thread count must be at least 1".into(),
        ));
    }
    Ok(())
}

/// Weighting used by the evaluation metrics, selected by at most one of
/// `--q` and `--alpha`.
fn metric_weighting(
    h: &Hierarchy,
    q: Option<f64>,
    alpha: Option<f64>,
) -> Result<WeightedHierarchy> {
    match (q, alpha) {
        (Some(_), Some(_)) => Err(Error::InvalidParameter(
            "choose either --q or --alpha, not both".into(),
        )),
        (None, Some(alpha)) => hxe_weights(h, alpha, true),
        (Some(q), None) => exponential_weights(h, q),
        (None, None) => exponential_weights(h, 1.0),
    }
}

fn resolve_loss(loss: LossArg, q: Option<f64>, alpha: Option<f64>) -> Result<LossKind> {
    match loss {
        LossArg::Ce => {
            if q.is_some() || alpha.is_some() {
                return Err(Error::InvalidParameter(
                    "--loss ce takes neither --q nor --alpha".into(),
                ));
            }
            Ok(LossKind::CrossEntropy)
        }
        LossArg::Hier => {
            if alpha.is_some() {
                return Err(Error::InvalidParameter(
                    "--loss hier takes --q, not --alpha".into(),
                ));
            }
            Ok(LossKind::Hierarchical {
                q: q.unwrap_or(0.9),
            })
        }
        LossArg::Hxe => {
            if q.is_some() {
                return Err(Error::InvalidParameter(
                    "--loss hxe takes --alpha, not --q".into(),
                ));
            }
            Ok(LossKind::Hxe {
                alpha: alpha.unwrap_or(0.1),
            })
        }
    }
}

fn cmd_weights(args: WeightsArgs) -> Result<()> {
    let h = read_tree(&args.tree)?;
    let (wh, params) = match args.scheme {
        Scheme::Exponential => {
            if args.alpha.is_some() {
                return Err(Error::InvalidParameter(
                    "the exponential scheme takes --q, not --alpha".into(),
                ));
            }
            if args.renormalize {
                return Err(Error::InvalidParameter(
                    "only the hxe scheme supports --renormalize".into(),
                ));
            }
            let q = args.q.unwrap_or(1.0);
            if q == 0.0 {
                eprintln!(
                    "warning: q=0 pushes all weight to the top of the tree; deep leaves get zero"
                );
            }
            (
                exponential_weights(&h, q)?,
                json!({"scheme": "exponential", "q": q, "full_precision": args.full_precision}),
            )
        }
        Scheme::Hxe => {
            if args.q.is_some() {
                return Err(Error::InvalidParameter(
                    "the hxe scheme takes --alpha, not --q".into(),
                ));
            }
            let alpha = args.alpha.unwrap_or(0.1);
            (
                hxe_weights(&h, alpha, args.renormalize)?,
                json!({
                    "scheme": "hxe",
                    "alpha": alpha,
                    "renormalize": args.renormalize,
                    "full_precision": args.full_precision,
                }),
            )
        }
    };

    let manifest = manifest_line("weights", &[&args.tree], params, None, &["weights.csv"]);
    let body = format_weight_dump(&wh, args.full_precision);
    let path = write_artifact(&args.out_dir, "weights.csv", &manifest, &body)?;
    println!("wrote {}", path.display());

    let worst = (1..=h.leaf_count())
        .map(|leaf| (wh.cumulative_sum(leaf) - wh.balance_constant()).abs())
        .fold(0.0f64, f64::max);
    let violations = wh.validate_balanced(1e-9);
    if let Some(&leaf) = violations.first() {
        println!(
            "balance constant={} worst_deviation={worst:e} status=FAIL",
            wh.balance_constant()
        );
        return Err(Error::Unbalanced {
            leaf,
            sum: wh.cumulative_sum(leaf),
        });
    }
    println!(
        "balance constant={} worst_deviation={worst:e} status=ok",
        wh.balance_constant()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    check_threads(args.threads)?;
    let h = read_tree(&args.tree)?;
    let loss = resolve_loss(args.loss, args.q, args.alpha)?;
    let ds = match &args.data {
        Some(path) => parse_dataset_csv(&fs::read_to_string(path)?, &h)?,
        None => generate_synthetic(&h, args.per_class, args.dim, args.spread, args.seed)?,
    };
    let (train_ds, holdout) = split_holdout(&ds);
    let config = TrainConfig {
        loss,
        epochs: args.epochs,
        learning_rate: args.lr,
        batch_size: args.batch,
        seed: args.seed,
    };
    let (model, history) = train_with_history(&train_ds, &h, &config)?;

    // metrics use the weighting the loss was trained against, or q=1 for the
    // plain cross-entropy baseline
    let wh = match loss {
        LossKind::CrossEntropy => exponential_weights(&h, 1.0)?,
        LossKind::Hierarchical { q } => exponential_weights(&h, q)?,
        LossKind::Hxe { alpha } => hxe_weights(&h, alpha, true)?,
    };
    let eval_ds = if holdout.is_empty() { &train_ds } else { &holdout };
    let (report, curve) = evaluate_model(&model, eval_ds, &wh, args.threads)?;

    let (q_val, alpha_val) = match loss {
        LossKind::CrossEntropy => (None, None),
        LossKind::Hierarchical { q } => (Some(q), None),
        LossKind::Hxe { alpha } => (None, Some(alpha)),
    };
    let params = json!({
        "loss": loss.token(),
        "q": q_val,
        "alpha": alpha_val,
        "epochs": args.epochs,
        "lr": args.lr,
        "batch": args.batch,
        "threads": args.threads,
        "per_class": args.data.is_none().then_some(args.per_class),
        "dim": args.data.is_none().then_some(args.dim),
        "spread": args.data.is_none().then_some(args.spread),
        "full_precision": args.full_precision,
    });
    let mut inputs: Vec<&Path> = vec![&args.tree];
    if let Some(data) = &args.data {
        inputs.push(data);
    }
    let outputs = ["checkpoint.json", "report.json", "curve.csv"];
    let manifest = manifest_line("train", &inputs, params, Some(args.seed), &outputs);

    let checkpoint = write_artifact(
        &args.out_dir,
        "checkpoint.json",
        &manifest,
        &format_checkpoint(&model, &config),
    )?;
    let report_path = write_artifact(
        &args.out_dir,
        "report.json",
        &manifest,
        &format_report_json(&report, args.full_precision),
    )?;
    let curve_path = write_artifact(
        &args.out_dir,
        "curve.csv",
        &manifest,
        &format_curve_csv(&curve, args.full_precision),
    )?;
    println!("wrote {}", checkpoint.display());
    println!("wrote {}", report_path.display());
    println!("wrote {}", curve_path.display());
    println!(
        "training loss: first={} final={} ({} train / {} eval samples)",
        fmt_f64(history[0], args.full_precision),
        fmt_f64(*history.last().unwrap(), args.full_precision),
        train_ds.len(),
        eval_ds.len(),
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    check_threads(args.threads)?;
    let h = read_tree(&args.tree)?;
    let (model, _) = parse_checkpoint(&fs::read_to_string(&args.model)?)?;
    let ds = parse_dataset_csv(&fs::read_to_string(&args.data)?, &h)?;
    let wh = metric_weighting(&h, args.q, args.alpha)?;
    let (report, _) = evaluate_model(&model, &ds, &wh, args.threads)?;
    let params = json!({
        "q": args.q,
        "alpha": args.alpha,
        "threads": args.threads,
        "full_precision": args.full_precision,
    });
    let manifest = manifest_line(
        "evaluate",
        &[&args.tree, &args.model, &args.data],
        params,
        None,
        &["report.json"],
    );
    let path = write_artifact(
        &args.out_dir,
        "report.json",
        &manifest,
        &format_report_json(&report, args.full_precision),
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_curve(args: CurveArgs) -> Result<()> {
    check_threads(args.threads)?;
    let h = read_tree(&args.tree)?;
    let (model, _) = parse_checkpoint(&fs::read_to_string(&args.model)?)?;
    let ds = parse_dataset_csv(&fs::read_to_string(&args.data)?, &h)?;
    let wh = metric_weighting(&h, args.q, args.alpha)?;
    let (_, curve) = evaluate_model(&model, &ds, &wh, args.threads)?;
    let params = json!({
        "q": args.q,
        "alpha": args.alpha,
        "threads": args.threads,
        "full_precision": args.full_precision,
    });
    let manifest = manifest_line(
        "curve",
        &[&args.tree, &args.model, &args.data],
        params,
        None,
        &["curve.csv"],
    );
    let path = write_artifact(
        &args.out_dir,
        "curve.csv",
        &manifest,
        &format_curve_csv(&curve, args.full_precision),
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<()> {
    let scale = if args.quick {
        VerifyScale::quick()
    } else {
        VerifyScale::full()
    };
    let outcomes = run_all(&scale, args.seed, args.include_naive, args.corrupt_weights);
    let mut failed = 0usize;
    for o in &outcomes {
        println!("{}", format_outcome(o));
        if !o.passed {
            failed += 1;
        }
    }
    println!("verify: {} checks, {failed} failed", outcomes.len());
    if failed > 0 {
        let names: Vec<&str> = outcomes
            .iter()
            .filter(|o| !o.passed)
            .map(|o| o.name)
            .collect();
        return Err(Error::VerificationFailed(names.join(", ")));
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let h = read_tree(&args.tree)?;
    let ds = generate_synthetic(&h, args.per_class, args.dim, args.spread, args.seed)?;
    let params = json!({
        "per_class": args.per_class,
        "dim": args.dim,
        "spread": args.spread,
        "full_precision": args.full_precision,
    });
    let manifest = manifest_line(
        "synth",
        &[&args.tree],
        params,
        Some(args.seed),
        &["dataset.csv"],
    );
    let path = write_artifact(
        &args.out_dir,
        "dataset.csv",
        &manifest,
        &format_dataset_csv(&ds, args.full_precision),
    )?;
    println!("wrote {}", path.display());
    Ok(())
}
