//! Command-line front end. Every subcommand is also a plain function so it
//! can be driven from tests and examples without spawning a process.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{CapError, Result};
use crate::harness::{CalibrationSet, ToyModel};
use crate::io::{
    create_dir, layer_file, read_matrix, read_model_dir, report_tsv, write_calibration, write_matrix, write_model,
    write_string, JobConfig, CALIBRATION_FILE,
};
use crate::pipeline::{decompose_layers, run_with, sweep_lambda, threshold_with, CompressionOutcome, ThresholdVariant};
use crate::rpca::{decompose, RpcaResult};

#[derive(Debug, Parser)]
#[command(name = "cap", version, about = "Low-rank plus sparse compression with learned retention")]
pub struct Cli {
    /// Suppress the human-readable summary on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Job configuration (key = value lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides model.seed and pg.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a planted toy model and its calibration set.
    GenSynthetic {
        #[command(flatten)]
        common: Common,
    },
    /// Split one matrix file into low-rank and sparse parts.
    Decompose {
        matrix: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compress a model directory and write factors plus a report.
    Compress {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Stage-one diagnostics and final loss for several λ values.
    SweepLambda {
        /// Comma-separated values; `auto` selects 1/sqrt(max(m, n)).
        #[arg(long)]
        lambdas: String,
        /// Model directory; generated from the config when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Learned allocation against magnitude thresholding.
    AblateThreshold {
        #[arg(long, default_value = "0.25,0.5,0.75")]
        fractions: String,
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<JobConfig> {
    let cfg = match &common.config {
        Some(p) => JobConfig::load(p)?,
        None => JobConfig::default(),
    };
    Ok(match common.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn require_out(common: &Common) -> Result<&Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| CapError::Usage("--out DIR is required".into()))
}

fn model_and_calib(cfg: &JobConfig, dir: Option<&Path>) -> Result<(ToyModel, CalibrationSet)> {
    match dir {
        Some(d) => read_model_dir(d),
        None => cfg.generate(),
    }
}

/// Writes the planted model, its calibration set and the resolved config.
pub fn cmd_gen_synthetic(cfg: &JobConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let (model, calib) = cfg.generate()?;
    write_model(out, &model)?;
    write_calibration(out.join(CALIBRATION_FILE), &calib)?;
    write_string(&out.join("config.txt"), &cfg.to_text())?;
    let mut files: Vec<PathBuf> = (0..model.layers.len()).map(|l| out.join(layer_file(l))).collect();
    files.push(out.join(CALIBRATION_FILE));
    Ok(files)
}

/// Writes `L.capm`, `S.capm` and `diagnostics.txt` (`iter<TAB>residual`).
pub fn cmd_decompose(matrix: &Path, cfg: &JobConfig, out: &Path) -> Result<RpcaResult> {
    let w = read_matrix(matrix)?;
    let result = decompose(&w, &cfg.rpca_config())?;
    create_dir(out)?;
    write_matrix(out.join("L.capm"), &result.l)?;
    write_matrix(out.join("S.capm"), &result.s)?;
    let mut diag = String::from("iter\tresidual\n");
    for (i, r) in result.residual_history.iter().enumerate() {
        writeln!(diag, "{}\t{r:?}", i + 1).unwrap();
    }
    write_string(&out.join("diagnostics.txt"), &diag)?;
    Ok(result)
}

/// Runs the pipeline on a model directory. Per compressed layer `l` this
/// writes `layer_l.u.capm`, `layer_l.v.capm` and `layer_l.s.capm`, plus
/// `report.tsv` for the whole job.
pub fn cmd_compress(cfg: &JobConfig, model_dir: &Path, out: &Path) -> Result<CompressionOutcome> {
    let (model, calib) = read_model_dir(model_dir)?;
    let job = cfg.job(model, calib);
    let stage1 = decompose_layers(&job)?;
    let outcome = run_with(&job, &stage1)?;
    create_dir(out)?;
    for (l, c) in &outcome.compressed {
        write_matrix(out.join(format!("layer_{l}.u.capm")), &c.u_prime)?;
        write_matrix(out.join(format!("layer_{l}.v.capm")), &c.v_prime)?;
        write_matrix(out.join(format!("layer_{l}.s.capm")), &c.s_masked)?;
    }
    write_string(&out.join("report.tsv"), &report_tsv(&outcome.report))?;
    Ok(outcome)
}

/// `auto` or positive numbers, numeric entries in ascending order.
pub fn parse_lambdas(csv: &str) -> Result<Vec<Option<f64>>> {
    let items: Vec<&str> = csv.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(CapError::Usage("--lambdas needs at least one value".into()));
    }
    let lambdas = items
        .iter()
        .map(|&s| {
            if s == "auto" {
                return Ok(None);
            }
            match s.parse::<f64>() {
                Ok(v) if v > 0.0 && v.is_finite() => Ok(Some(v)),
                _ => Err(CapError::Usage(format!("bad lambda {s:?}"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let numeric: Vec<f64> = lambdas.iter().flatten().copied().collect();
    if numeric.windows(2).any(|w| w[0] > w[1]) {
        return Err(CapError::Usage("lambdas must be sorted ascending".into()));
    }
    Ok(lambdas)
}

fn parse_fractions(csv: &str) -> Result<Vec<f64>> {
    let out: Vec<f64> = csv
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| CapError::Usage(format!("bad fraction {s:?}"))))
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(CapError::Usage("--fractions needs at least one value".into()));
    }
    Ok(out)
}

fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NA".into()
    } else {
        format!("{x:?}")
    }
}

/// TSV with one row per λ; failed rows carry `NA`.
pub fn cmd_sweep_lambda(cfg: &JobConfig, lambdas: &[Option<f64>], model_dir: Option<&Path>) -> Result<String> {
    if lambdas.is_empty() {
        return Err(CapError::Usage("lambda list is empty".into()));
    }
    let (model, calib) = model_and_calib(cfg, model_dir)?;
    let rows = sweep_lambda(&cfg.job(model, calib), lambdas)?;
    let mut s = String::from("lambda\trank_l\tsparsity_s\tnnz_s\tfinal_loss\n");
    for r in rows {
        let failed = r.mean_rank_l.is_nan();
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            r.lambda.map_or("auto".to_string(), fmt_f64),
            fmt_f64(r.mean_rank_l),
            fmt_f64(r.mean_sparsity_s),
            if failed { "NA".to_string() } else { r.nnz_s.to_string() },
            r.final_loss.map_or("NA".to_string(), fmt_f64),
        )
        .unwrap();
    }
    Ok(s)
}

/// Four rows per fraction: learned, threshold, l_only, s_only.
pub fn cmd_ablate_threshold(cfg: &JobConfig, fractions: &[f64], model_dir: Option<&Path>) -> Result<String> {
    let (model, calib) = model_and_calib(cfg, model_dir)?;
    let base = cfg.job(model, calib);
    let stage1 = decompose_layers(&base)?;
    let mut s = String::from("fraction\tmethod\tbudget\tused_cost\tfinal_loss\n");
    for &f in fractions {
        let mut job = base.clone();
        job.budget_fraction = f;
        let mut reports = vec![("learned", run_with(&job, &stage1)?.report)];
        for v in [ThresholdVariant::Combined, ThresholdVariant::LowRankOnly, ThresholdVariant::SparseOnly] {
            reports.push((v.name(), threshold_with(&job, &stage1, v)?.report));
        }
        for (name, r) in reports {
            writeln!(s, "{f:?}\t{name}\t{}\t{}\t{}", r.budget, r.used_cost, fmt_f64(r.final_loss)).unwrap();
        }
    }
    Ok(s)
}

fn emit(text: &str, out: Option<&Path>, file: &str) -> Result<Option<PathBuf>> {
    match out {
        Some(dir) => {
            create_dir(dir)?;
            let path = dir.join(file);
            write_string(&path, text)?;
            Ok(Some(path))
        }
        None => {
            print!("{text}");
            Ok(None)
        }
    }
}

/// Executes a parsed command line and returns the summary to print.
pub fn execute(cli: &Cli) -> Result<String> {
    let mut msg = String::new();
    match &cli.command {
        Command::GenSynthetic { common } => {
            let cfg = load_config(common)?;
            let out = require_out(common)?;
            let files = cmd_gen_synthetic(&cfg, out)?;
            writeln!(msg, "wrote {} files to {}", files.len() + 2, out.display()).unwrap();
        }
        Command::Decompose { matrix, common } => {
            let cfg = load_config(common)?;
            let out = require_out(common)?;
            let r = cmd_decompose(matrix, &cfg, out)?;
            writeln!(
                msg,
                "converged in {} iterations, residual {:e}, rank(L) {}, nnz(S) {}",
                r.iterations,
                r.final_residual(),
                r.rank_l,
                r.nnz_s()
            )
            .unwrap();
        }
        Command::Compress { model, common } => {
            let cfg = load_config(common)?;
            let out = require_out(common)?;
            let o = cmd_compress(&cfg, model, out)?;
            let r = &o.report;
            if r.empty_warning {
                eprintln!("warning: budget {} is below the cheapest candidate; nothing retained", r.budget);
            }
            writeln!(
                msg,
                "K = {}, used {}, loss dense {:.6} rpca {:.6} final {:.6}, ranks {:?}",
                r.budget,
                r.used_cost,
                r.dense_loss,
                r.rpca_loss,
                r.final_loss,
                r.rank_distribution()
            )
            .unwrap();
        }
        Command::SweepLambda { lambdas, model, common } => {
            let cfg = load_config(common)?;
            let lambdas = parse_lambdas(lambdas)?;
            let tsv = cmd_sweep_lambda(&cfg, &lambdas, model.as_deref())?;
            if let Some(p) = emit(&tsv, common.out.as_deref(), "sweep.tsv")? {
                writeln!(msg, "wrote {}", p.display()).unwrap();
            }
        }
        Command::AblateThreshold { fractions, model, common } => {
            let cfg = load_config(common)?;
            let fractions = parse_fractions(fractions)?;
            let tsv = cmd_ablate_threshold(&cfg, &fractions, model.as_deref())?;
            if let Some(p) = emit(&tsv, common.out.as_deref(), "ablation.tsv")? {
                writeln!(msg, "wrote {}", p.display()).unwrap();
            }
        }
    }
    Ok(if cli.quiet { String::new() } else { msg })
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 success, 2 usage, 3 format, 4 non-convergence,
/// 5 I/O.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(msg) => {
            print!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_lists() {
        assert_eq!(parse_lambdas("auto").unwrap(), vec![None]);
        assert_eq!(
            parse_lambdas("0.001, auto,0.1,1").unwrap(),
            vec![Some(0.001), None, Some(0.1), Some(1.0)]
        );
        for bad in ["", " , ", "0.1,0.01", "-1", "x"] {
            assert!(matches!(parse_lambdas(bad), Err(CapError::Usage(_))), "{bad}");
        }
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(main_with(["cap", "no-such-command"]), 2);
        assert_eq!(main_with(["cap", "gen-synthetic"]), 2);
        assert_eq!(main_with(["cap", "sweep-lambda", "--lambdas", ""]), 2);
    }

    #[test]
    fn missing_matrix_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let code = main_with([
            "cap".as_ref(),
            "decompose".as_ref(),
            dir.path().join("absent.capm").as_os_str(),
            "--out".as_ref(),
            out.as_os_str(),
        ]);
        assert_eq!(code, 5);
    }
}
