//! Command-line front end: `generate`, `run`, `ablate` and `report`.
//!
//! Human-readable progress goes to stdout, artifacts only to the output
//! directory, and failures to stderr as one JSON line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Args, Parser, Subcommand};

use crate::config::{ablation_label, DatasetSource, ExperimentConfig};
use crate::dataio::{save_dataset, Dataset};
use crate::error::{Error, ErrorKind, Result};
use crate::eval::report::{self, METRICS_CSV, SCORES_CSV, SUMMARY_JSON};
use crate::eval::{aggregate, run_protocol, ExperimentReport, RunOptions, RunRow, Variant};

/// Copy of the effective config written next to the results.
pub const CONFIG_COPY: &str = "config.json";
pub const MODELS_DIR: &str = "models";

#[derive(Debug, Parser)]
#[command(name = "sphere-osr", version, about = "Open-set recognition experiments on sensor-array time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the configured synthetic dataset to disk.
    Generate(CommonArgs),
    /// Train and evaluate the configured model over every position and fold.
    Run(CommonArgs),
    /// Run the ablation matrix and the softmax baseline.
    Ablate(CommonArgs),
    /// Re-render ROC plots and the summary table from an existing result directory.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Overrides the config seed (and the synthetic generator seed).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Directory produced by `run` or `ablate`.
    pub dir: PathBuf,
    /// Where to write the plots; defaults to `dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Runtime => 4,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let kind = e.kind();
            let line = serde_json::json!({
                "error": format!("{kind:?}").to_lowercase(),
                "exit_code": exit_code(kind),
                "message": e.to_string(),
            });
            eprintln!("{line}");
            exit_code(kind)
        }
    }
}

pub fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Generate(a) => cmd_generate(a).map(|_| ()),
        Command::Run(a) => cmd_run(a).map(|_| ()),
        Command::Ablate(a) => cmd_ablate(a).map(|_| ()),
        Command::Report(a) => cmd_report(a),
    }
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.override_seed(seed);
    }
    if args.jobs == 0 {
        return Err(Error::Config("--jobs must be >= 1".into()));
    }
    Ok(cfg)
}

fn output_dir(args: &CommonArgs, cfg: &ExperimentConfig) -> Result<PathBuf> {
    args.out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))
}

/// Refuses a non-empty directory unless `force` is set.
fn check_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(Error::Config(format!("{} exists and is not a directory", dir.display())));
        }
        let non_empty = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Error::Config(format!(
                "refusing to write into non-empty {} (use --force)",
                dir.display()
            )));
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_generate(args: &CommonArgs) -> Result<Dataset> {
    let cfg = load_config(args)?;
    let DatasetSource::Synthetic(_) = &cfg.dataset else {
        return Err(Error::Config("generate needs a synthetic dataset source".into()));
    };
    let out = output_dir(args, &cfg)?;
    check_output_dir(&out, args.force)?;
    let dataset = cfg.resolve_dataset()?;
    create_dir(&out)?;
    let manifest = save_dataset(&dataset, &out)?;
    let (t, c) = dataset.map_shape().unwrap_or((0, 0));
    println!(
        "wrote {} samples ({} classes x {} positions, {t} x {c} maps) to {}",
        manifest.samples.len(),
        dataset.class_names.len(),
        dataset.positions.len(),
        out.display()
    );
    Ok(dataset)
}

pub fn cmd_run(args: &CommonArgs) -> Result<ExperimentReport> {
    let cfg = load_config(args)?;
    let variants = vec![cfg.variant()];
    execute(args, &cfg, &variants)
}

pub fn cmd_ablate(args: &CommonArgs) -> Result<ExperimentReport> {
    let cfg = load_config(args)?;
    let variants = cfg.ablation_variants();
    let report = execute(args, &cfg, &variants)?;
    println!("\n{}", report::summary_table(&report, ablation_label));
    Ok(report)
}

fn execute(args: &CommonArgs, cfg: &ExperimentConfig, variants: &[Variant]) -> Result<ExperimentReport> {
    let out = output_dir(args, cfg)?;
    check_output_dir(&out, args.force)?;
    let dataset = cfg.resolve_dataset()?;

    let n_positions = cfg.protocol.positions.as_ref().map_or(dataset.positions.len(), Vec::len);
    let total = n_positions * cfg.protocol.n_folds * variants.len();
    println!(
        "{}: {} samples, {total} runs ({n_positions} positions x {} folds x {} configs)",
        cfg.name,
        dataset.len(),
        cfg.protocol.n_folds,
        variants.len()
    );

    create_dir(&out)?;
    let models = out.join(MODELS_DIR);
    create_dir(&models)?;
    let copy = out.join(CONFIG_COPY);
    std::fs::write(&copy, cfg.to_json()).map_err(|e| Error::io(&copy, e))?;

    let done = AtomicUsize::new(0);
    let progress = |row: &RunRow| {
        let k = done.fetch_add(1, Ordering::SeqCst) + 1;
        println!(
            "[{k}/{total}] position {} fold {} {}: accuracy {:.4} tpr {:.4} auroc {:.4}",
            row.position, row.fold, row.config, row.accuracy, row.tpr, row.auroc
        );
    };
    let options = RunOptions {
        jobs: args.jobs,
        model_dir: Some(models),
    };
    let report = run_protocol(&dataset, &cfg.backbone, variants, &cfg.protocol, cfg.seed, &options, &progress)?;
    report::write_report(&report, &out, &dataset.positions, cfg.protocol.fpr)?;
    println!("results written to {}", out.display());
    Ok(report)
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let read = |name: &str| -> Result<String> {
        let path = args.dir.join(name);
        std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
    };
    let scores = report::parse_scores_csv(&read(SCORES_CSV)?).map_err(|e| Error::Load(vec![format!("{SCORES_CSV}: {e}")]))?;
    let rows = report::parse_metrics_csv(&read(METRICS_CSV)?).map_err(|e| Error::Load(vec![format!("{METRICS_CSV}: {e}")]))?;
    let positions: Vec<String> = match read(SUMMARY_JSON) {
        Ok(text) => serde_json::from_str::<serde_json::Value>(&text)
            .ok()
            .and_then(|v| serde_json::from_value(v["positions"].clone()).ok())
            .unwrap_or_default(),
        Err(_) => Vec::new(),
    };
    let mut names: Vec<String> = Vec::new();
    for r in &rows {
        if !names.contains(&r.config) {
            names.push(r.config.clone());
        }
    }

    let out = args.out.clone().unwrap_or_else(|| args.dir.clone());
    create_dir(&out)?;
    let written = report::write_roc_svgs(&scores, &out)?;
    let summary = aggregate(rows, scores, &names, &positions);
    println!("{}", report::summary_table(&summary, ablation_label));
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(exit_code(Error::Config("x".into()).kind()), 2);
        assert_eq!(exit_code(Error::Load(vec![]).kind()), 3);
        assert_eq!(exit_code(Error::Training("x".into()).kind()), 4);
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "sphere-osr", "run", "--config", "c.json", "--out", "o", "--force", "--jobs", "3", "--seed", "9",
        ])
        .unwrap();
        let Command::Run(a) = cli.command else { panic!() };
        assert_eq!(a.jobs, 3);
        assert_eq!(a.seed, Some(9));
        assert!(a.force);
        assert!(Cli::try_parse_from(["sphere-osr", "run"]).is_err());
    }

    #[test]
    fn non_empty_dir_is_refused_without_force() {
        let dir = tempfile::tempdir().unwrap();
        check_output_dir(dir.path(), false).unwrap();
        std::fs::write(dir.path().join("x"), "1").unwrap();
        assert!(matches!(check_output_dir(dir.path(), false), Err(Error::Config(_))));
        check_output_dir(dir.path(), true).unwrap();
        check_output_dir(&dir.path().join("missing"), false).unwrap();
    }
}
