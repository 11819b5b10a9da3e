//! On-disk formats.
//!
//! Matrices use a fixed little-endian binary layout:
//!
//! ```text
//! "CAPM" | u32 version = 1 | u64 rows | u64 cols | rows*cols f64, row-major
//! ```
//!
//! A model directory holds a `model.txt` manifest, one matrix file per layer
//! and `calib.capm`, whose rows are calibration samples laid out as
//! `[x | y]`. Job configuration is flat `key = value` text.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::allocator::PolicyGradientConfig;
use crate::error::{CapError, Result};
use crate::harness::{gen_calibration, Activation, CalibrationSet, ToyModel, ToyModelSpec, DEFAULT_CALIBRATION_SIZE};
use crate::linalg::DenseMatrix;
use crate::pipeline::{CompressionJob, CompressionReport, Mode};
use crate::rng::CapRng;
use crate::rpca::RpcaConfig;

pub const MAGIC: &[u8; 4] = b"CAPM";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8;

pub const MANIFEST_FILE: &str = "model.txt";
pub const CALIBRATION_FILE: &str = "calib.capm";

pub fn layer_file(layer: usize) -> String {
    format!("layer_{layer}.capm")
}

pub fn encode_matrix(m: &DenseMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for x in m.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// Parses a matrix file image; `path` only labels errors.
pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<DenseMatrix> {
    let bad = |reason: String| CapError::format(path, reason);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| bad(format!("{rows}x{cols} overflows")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != expected {
        return Err(bad(format!(
            "payload is {} bytes, {rows}x{cols} needs {expected}",
            payload.len()
        )));
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseMatrix::new(rows as usize, cols as usize, data).map_err(|e| bad(e.to_string()))
}

pub fn write_matrix(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_matrix(m)).map_err(|e| CapError::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CapError::io(path, e))?;
    decode_matrix(&bytes, path)
}

/// Shape line followed by one tab-separated row per line, every value in
/// shortest round-trip decimal.
pub fn matrix_to_text(m: &DenseMatrix) -> String {
    let mut out = format!("{} {}\n", m.rows(), m.cols());
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|x| format!("{x:?}")).collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CapError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CapError::io(path, e))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CapError::io(dir, e))
}

/// Writes the manifest and one matrix file per layer.
pub fn write_model(dir: impl AsRef<Path>, model: &ToyModel) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let mut manifest = format!("activation = {}\nlayers = {}\n", model.activation.name(), model.layers.len());
    for (l, w) in model.layers.iter().enumerate() {
        writeln!(manifest, "layer.{l} = {}x{}", w.rows(), w.cols()).unwrap();
        write_matrix(dir.join(layer_file(l)), w)?;
    }
    write_text(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn read_model(dir: impl AsRef<Path>) -> Result<ToyModel> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let pairs = parse_pairs(&read_text(&path)?).map_err(|e| CapError::format(&path, e))?;
    let mut activation = None;
    let mut count = None;
    let mut shapes = Vec::new();
    for (_, key, value) in &pairs {
        match key.as_str() {
            "activation" => {
                activation = Some(
                    Activation::parse(value)
                        .ok_or_else(|| CapError::format(&path, format!("unknown activation {value}")))?,
                )
            }
            "layers" => count = Some(value.parse::<usize>().map_err(|_| CapError::format(&path, "bad layer count"))?),
            k if k.starts_with("layer.") => {
                let shape = parse_shape(value).map_err(|e| CapError::format(&path, e))?;
                shapes.push((k.to_string(), shape));
            }
            other => return Err(CapError::format(&path, format!("unknown key {other}"))),
        }
    }
    let activation = activation.ok_or_else(|| CapError::format(&path, "missing activation"))?;
    let count = count.ok_or_else(|| CapError::format(&path, "missing layer count"))?;
    let mut layers = Vec::with_capacity(count);
    for l in 0..count {
        let file = dir.join(layer_file(l));
        let w = read_matrix(&file)?;
        let key = format!("layer.{l}");
        if let Some((_, shape)) = shapes.iter().find(|(k, _)| *k == key) {
            if *shape != w.shape() {
                return Err(CapError::format(&file, format!("manifest says {}x{}", shape.0, shape.1)));
            }
        }
        layers.push(w);
    }
    ToyModel::new(layers, activation)
}

pub fn write_calibration(path: impl AsRef<Path>, calib: &CalibrationSet) -> Result<()> {
    let (x, y) = (&calib.inputs, &calib.targets);
    let joined = DenseMatrix::from_fn(x.rows(), x.cols() + y.cols(), |r, c| {
        if c < x.cols() {
            x[(r, c)]
        } else {
            y[(r, c - x.cols())]
        }
    });
    write_matrix(path, &joined)
}

/// Splits each record into the first `input_dim` columns and the rest.
pub fn read_calibration(path: impl AsRef<Path>, input_dim: usize) -> Result<CalibrationSet> {
    let path = path.as_ref();
    let joined = read_matrix(path)?;
    if joined.cols() <= input_dim {
        return Err(CapError::format(
            path,
            format!("{} columns cannot hold {input_dim} inputs plus targets", joined.cols()),
        ));
    }
    let out = joined.cols() - input_dim;
    let x = DenseMatrix::from_fn(joined.rows(), input_dim, |r, c| joined[(r, c)]);
    let y = DenseMatrix::from_fn(joined.rows(), out, |r, c| joined[(r, input_dim + c)]);
    CalibrationSet::new(x, y)
}

/// Model plus calibration set from a directory written by [`write_model`]
/// and [`write_calibration`].
pub fn read_model_dir(dir: impl AsRef<Path>) -> Result<(ToyModel, CalibrationSet)> {
    let dir = dir.as_ref();
    let model = read_model(dir)?;
    let calib = read_calibration(dir.join(CALIBRATION_FILE), model.input_dim())?;
    if calib.targets.cols() != model.output_dim() {
        return Err(CapError::format(
            dir.join(CALIBRATION_FILE),
            format!("targets have {} columns, model outputs {}", calib.targets.cols(), model.output_dim()),
        ));
    }
    Ok((model, calib))
}

/// Flat job description. Every key has a default, so an empty file is a
/// valid config.
#[derive(Debug, Clone, PartialEq)]
pub struct JobConfig {
    pub model_seed: u64,
    /// `(in, out)` per layer.
    pub model_shapes: Vec<(usize, usize)>,
    pub model_ranks: Vec<usize>,
    pub model_outliers: f64,
    pub model_noise: f64,
    pub model_activation: Activation,
    pub calib_n: usize,
    pub calib_noise: f64,
    pub rpca_lambda: Option<f64>,
    pub rpca_tol: f64,
    pub rpca_max_iters: usize,
    pub pg_lr: f64,
    pub pg_beta: f64,
    pub pg_iterations: usize,
    pub pg_window: usize,
    pub pg_samples: usize,
    pub pg_seed: u64,
    pub budget_fraction: f64,
    pub mode: Mode,
    /// Layers to compress; empty means all.
    pub layers: Vec<usize>,
}

impl Default for JobConfig {
    fn default() -> Self {
        let spec = ToyModelSpec::default();
        let rpca = RpcaConfig::default();
        let pg = PolicyGradientConfig::default();
        Self {
            model_seed: 0,
            model_shapes: spec.shapes,
            model_ranks: spec.ranks,
            model_outliers: spec.outlier_fraction,
            model_noise: spec.noise,
            model_activation: spec.activation,
            calib_n: DEFAULT_CALIBRATION_SIZE,
            calib_noise: 0.0,
            rpca_lambda: rpca.lambda,
            rpca_tol: rpca.tol,
            rpca_max_iters: rpca.max_iters,
            pg_lr: pg.learning_rate,
            pg_beta: pg.baseline_beta,
            pg_iterations: pg.iterations,
            pg_window: pg.window,
            pg_samples: pg.samples_per_step,
            pg_seed: pg.seed,
            budget_fraction: 0.5,
            mode: Mode::Global,
            layers: Vec::new(),
        }
    }
}

/// `(line number, key, value)` for every non-blank, non-comment line.
fn parse_pairs(text: &str) -> std::result::Result<Vec<(usize, String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_shape(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once('x').ok_or_else(|| format!("bad shape {s:?}"))?;
    let a = a.trim().parse().map_err(|_| format!("bad shape {s:?}"))?;
    let b = b.trim().parse().map_err(|_| format!("bad shape {s:?}"))?;
    Ok((a, b))
}

fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| format!("bad list item {t:?}")))
        .collect()
}

impl JobConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let pairs = parse_pairs(text).map_err(CapError::InvalidConfig)?;
        for (line, key, value) in pairs {
            cfg.set(&key, &value)
                .map_err(|e| CapError::InvalidConfig(format!("line {line}: {key}: {e}")))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read_text(path.as_ref())?)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse {v:?}"))
        }
        match key {
            "model.seed" => self.model_seed = num(v)?,
            "model.shapes" => self.model_shapes = v.split(',').map(parse_shape).collect::<std::result::Result<_, _>>()?,
            "model.ranks" => self.model_ranks = parse_list(v)?,
            "model.outliers" => self.model_outliers = num(v)?,
            "model.noise" => self.model_noise = num(v)?,
            "model.activation" => {
                self.model_activation = Activation::parse(v).ok_or_else(|| format!("unknown activation {v:?}"))?
            }
            "calib.n" => self.calib_n = num(v)?,
            "calib.noise" => self.calib_noise = num(v)?,
            "rpca.lambda" => self.rpca_lambda = if v == "auto" { None } else { Some(num(v)?) },
            "rpca.tol" => self.rpca_tol = num(v)?,
            "rpca.max_iters" => self.rpca_max_iters = num(v)?,
            "pg.lr" => self.pg_lr = num(v)?,
            "pg.beta" => self.pg_beta = num(v)?,
            "pg.iterations" => self.pg_iterations = num(v)?,
            "pg.window" => self.pg_window = num(v)?,
            "pg.samples" => self.pg_samples = num(v)?,
            "pg.seed" => self.pg_seed = num(v)?,
            "budget.fraction" => self.budget_fraction = num(v)?,
            "mode" => {
                self.mode = match v {
                    "global" => Mode::Global,
                    "sequential" => Mode::Sequential,
                    _ => return Err(format!("unknown mode {v:?}")),
                }
            }
            "layers" => self.layers = if v == "all" { Vec::new() } else { parse_list(v)? },
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let shapes: Vec<String> = self.model_shapes.iter().map(|(a, b)| format!("{a}x{b}")).collect();
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let lambda = self.rpca_lambda.map_or("auto".to_string(), |l| format!("{l:?}"));
        let layers = if self.layers.is_empty() { "all".to_string() } else { join(&self.layers) };
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        put("model.seed", self.model_seed.to_string());
        put("model.shapes", shapes.join(","));
        put("model.ranks", join(&self.model_ranks));
        put("model.outliers", format!("{:?}", self.model_outliers));
        put("model.noise", format!("{:?}", self.model_noise));
        put("model.activation", self.model_activation.name().into());
        put("calib.n", self.calib_n.to_string());
        put("calib.noise", format!("{:?}", self.calib_noise));
        put("rpca.lambda", lambda);
        put("rpca.tol", format!("{:?}", self.rpca_tol));
        put("rpca.max_iters", self.rpca_max_iters.to_string());
        put("pg.lr", format!("{:?}", self.pg_lr));
        put("pg.beta", format!("{:?}", self.pg_beta));
        put("pg.iterations", self.pg_iterations.to_string());
        put("pg.window", self.pg_window.to_string());
        put("pg.samples", self.pg_samples.to_string());
        put("pg.seed", self.pg_seed.to_string());
        put("budget.fraction", format!("{:?}", self.budget_fraction));
        put("mode", self.mode.name().into());
        put("layers", layers);
        s
    }

    /// Overrides both the model and the policy-gradient seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.model_seed = seed;
        self.pg_seed = seed;
        self
    }

    pub fn model_spec(&self) -> ToyModelSpec {
        ToyModelSpec {
            shapes: self.model_shapes.clone(),
            ranks: self.model_ranks.clone(),
            outlier_fraction: self.model_outliers,
            noise: self.model_noise,
            activation: self.model_activation,
            ..ToyModelSpec::default()
        }
    }

    pub fn rpca_config(&self) -> RpcaConfig {
        RpcaConfig {
            lambda: self.rpca_lambda,
            tol: self.rpca_tol,
            max_iters: self.rpca_max_iters,
            ..RpcaConfig::default()
        }
    }

    pub fn pg_config(&self) -> PolicyGradientConfig {
        PolicyGradientConfig {
            learning_rate: self.pg_lr,
            baseline_beta: self.pg_beta,
            iterations: self.pg_iterations,
            window: self.pg_window,
            samples_per_step: self.pg_samples,
            seed: self.pg_seed,
            ..PolicyGradientConfig::default()
        }
    }

    /// Planted model and calibration set, both determined by `model.seed`.
    pub fn generate(&self) -> Result<(ToyModel, CalibrationSet)> {
        let mut rng = CapRng::seed_from(self.model_seed);
        let model = ToyModel::planted(&self.model_spec(), &mut rng)?;
        let calib = gen_calibration(&model, self.calib_n, self.calib_noise, &mut rng.split(1))?;
        Ok((model, calib))
    }

    pub fn job(&self, model: ToyModel, calib: CalibrationSet) -> CompressionJob {
        CompressionJob {
            rpca_config: self.rpca_config(),
            pg_config: self.pg_config(),
            budget_fraction: self.budget_fraction,
            layer_selection: self.layers.clone(),
            mode: self.mode,
            ..CompressionJob::new(model, calib)
        }
    }
}

/// Per-layer table, then a `key<TAB>value` summary block, then one line per
/// stage-two loss evaluation.
pub fn report_tsv(report: &CompressionReport) -> String {
    let mut s = String::from(
        "layer\trows\tcols\trank_l\tsparsity_s\trpca_iters\tcandidates\tretained_rank\tsparse_nnz\tcost\n",
    );
    for l in &report.layers {
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{:?}\t{}\t{}\t{}\t{}\t{}",
            l.layer,
            l.rows,
            l.cols,
            l.rank_l,
            l.sparsity_s,
            l.rpca_iterations,
            l.candidates,
            l.retained_rank,
            l.sparse_nnz,
            l.cost
        )
        .unwrap();
    }
    let ranks: Vec<String> = report.rank_distribution().iter().map(|r| r.to_string()).collect();
    s.push_str("\nkey\tvalue\n");
    writeln!(s, "mode\t{}", report.mode).unwrap();
    writeln!(s, "budget\t{}", report.budget).unwrap();
    writeln!(s, "used_cost\t{}", report.used_cost).unwrap();
    writeln!(s, "dense_loss\t{:?}", report.dense_loss).unwrap();
    writeln!(s, "rpca_loss\t{:?}", report.rpca_loss).unwrap();
    writeln!(s, "final_loss\t{:?}", report.final_loss).unwrap();
    writeln!(s, "empty_warning\t{}", report.empty_warning).unwrap();
    writeln!(s, "rank_distribution\t{}", ranks.join(",")).unwrap();
    s.push_str("\nstep\tloss\n");
    for (i, loss) in report.history.iter().enumerate() {
        writeln!(s, "{i}\t{loss:?}").unwrap();
    }
    s
}

/// Value of a key in the summary block of a report written by
/// [`report_tsv`].
pub fn report_value<'a>(tsv: &'a str, key: &str) -> Option<&'a str> {
    tsv.split("\n\n")
        .nth(1)?
        .lines()
        .find_map(|l| l.split_once('\t').filter(|(k, _)| *k == key).map(|(_, v)| v))
}

pub fn write_report(path: impl AsRef<Path>, report: &CompressionReport) -> Result<PathBuf> {
    let path = path.as_ref().to_path_buf();
    write_text(&path, &report_tsv(report))?;
    Ok(path)
}

pub(crate) fn write_string(path: &Path, text: &str) -> Result<()> {
    write_text(path, text)
}
