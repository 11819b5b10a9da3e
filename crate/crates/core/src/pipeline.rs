//! End-to-end compression: decompose every selected layer, pool the
//! candidates of all layers under one budget, learn retention
//! probabilities, pick the final masks and factorize.
//!
//! The magnitude-threshold baseline and the λ sweep share stage one with
//! [`run`] so their numbers are directly comparable.

use std::thread;

use log::warn;

use crate::allocator::{
    finalize_masks, greedy_select, init_state, sample_mask, MaskSample, PolicyGradientConfig,
};
use crate::error::{CapError, Result};
use crate::harness::{factorize, loss_with_weights, reconstruct, CalibrationSet, CompressedLayer, ToyModel};
use crate::linalg::DenseMatrix;
use crate::pool::{build_pool, CandidatePool};
use crate::rng::CapRng;
use crate::rpca::{decompose, RpcaConfig, RpcaResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// One retention state over the candidates of every layer.
    Global,
    /// Layers optimised one after another, each under its own share of K.
    Sequential,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Global => "global",
            Mode::Sequential => "sequential",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompressionJob {
    pub model: ToyModel,
    pub calib: CalibrationSet,
    pub rpca_config: RpcaConfig,
    pub pg_config: PolicyGradientConfig,
    /// K as a fraction of the dense parameters of the selected layers.
    pub budget_fraction: f64,
    /// Layers to compress; empty means all.
    pub layer_selection: Vec<usize>,
    pub mode: Mode,
}

impl CompressionJob {
    pub fn new(model: ToyModel, calib: CalibrationSet) -> Self {
        Self {
            model,
            calib,
            rpca_config: RpcaConfig::default(),
            pg_config: PolicyGradientConfig::default(),
            budget_fraction: 0.5,
            layer_selection: Vec::new(),
            mode: Mode::Global,
        }
    }

    pub fn selected_layers(&self) -> Vec<usize> {
        if self.layer_selection.is_empty() {
            (0..self.model.layers.len()).collect()
        } else {
            self.layer_selection.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return Err(CapError::InvalidBudget(format!(
                "budget fraction {} outside (0, 1]",
                self.budget_fraction
            )));
        }
        self.model.validate()?;
        self.rpca_config.validate()?;
        self.pg_config.validate()?;
        let layers = self.selected_layers();
        for (i, &l) in layers.iter().enumerate() {
            if l >= self.model.layers.len() || layers[..i].contains(&l) {
                return Err(CapError::InvalidConfig(format!("bad layer selection {layers:?}")));
            }
        }
        Ok(())
    }

    /// `floor(fraction × dense parameters of the selected layers)`.
    pub fn budget(&self) -> usize {
        let dense: usize = self.selected_layers().iter().map(|&l| self.model.layers[l].len()).sum();
        (self.budget_fraction * dense as f64).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    pub layer: usize,
    pub rows: usize,
    pub cols: usize,
    pub rank_l: usize,
    pub sparsity_s: f64,
    pub rpca_iterations: usize,
    pub candidates: usize,
    pub retained_rank: usize,
    pub sparse_nnz: usize,
    pub cost: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionReport {
    pub mode: String,
    pub layers: Vec<LayerReport>,
    pub budget: usize,
    pub used_cost: usize,
    pub dense_loss: f64,
    pub rpca_loss: f64,
    pub final_loss: f64,
    /// Set when K is below the cheapest candidate and nothing was kept.
    pub empty_warning: bool,
    /// Every loss evaluated during stage two, in order.
    pub history: Vec<f64>,
}

impl CompressionReport {
    pub fn rank_distribution(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.retained_rank).collect()
    }
}

#[derive(Debug, Clone)]
pub struct CompressionOutcome {
    pub report: CompressionReport,
    /// `(layer index, compressed layer)` per selected layer.
    pub compressed: Vec<(usize, CompressedLayer)>,
    pub pools: Vec<(usize, CandidatePool)>,
    /// Ranking scores over the concatenated candidates: learned retention
    /// probabilities for [`run`], magnitudes for the threshold baseline.
    pub scores: Vec<f64>,
}

/// Stage-one output for every selected layer.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub layers: Vec<usize>,
    pub rpca: Vec<RpcaResult>,
    pub pools: Vec<(usize, CandidatePool)>,
}

/// Decomposes the selected layers concurrently; results keep layer order.
pub fn decompose_layers(job: &CompressionJob) -> Result<Decomposition> {
    job.validate()?;
    let layers = job.selected_layers();
    let results: Vec<Result<(RpcaResult, CandidatePool)>> = thread::scope(|scope| {
        let handles: Vec<_> = layers
            .iter()
            .map(|&l| {
                let w = &job.model.layers[l];
                let cfg = &job.rpca_config;
                scope.spawn(move || -> Result<(RpcaResult, CandidatePool)> {
                    let r = decompose(w, cfg)?;
                    let pool = build_pool(format!("layer{l}"), &r)?;
                    Ok((r, pool))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("decomposition thread panicked"))
            .collect()
    });
    let mut rpca = Vec::with_capacity(layers.len());
    let mut pools = Vec::with_capacity(layers.len());
    for (&l, r) in layers.iter().zip(results) {
        let (res, pool) = r?;
        rpca.push(res);
        pools.push((l, pool));
    }
    Ok(Decomposition { layers, rpca, pools })
}

/// Evaluates losses for masks over a fixed set of pools, rebuilding only the
/// layers whose mask changed since the previous call.
struct MaskedEvaluator<'a> {
    job: &'a CompressionJob,
    weights: Vec<DenseMatrix>,
    slots: Vec<(usize, &'a CandidatePool, Vec<bool>)>,
}

impl<'a> MaskedEvaluator<'a> {
    fn new(job: &'a CompressionJob, pools: &[&'a (usize, CandidatePool)]) -> Self {
        Self {
            job,
            weights: job.model.layers.clone(),
            slots: pools.iter().map(|(l, p)| (*l, p, Vec::new())).collect(),
        }
    }

    /// Pins a layer to a fixed reconstruction outside the optimised set.
    fn fix_layer(&mut self, pool: &(usize, CandidatePool), mask: &[bool]) -> Result<()> {
        self.weights[pool.0] = reconstruct(&pool.1, mask)?;
        Ok(())
    }

    /// `bits` is the concatenation of per-slot masks.
    fn loss(&mut self, bits: &[bool]) -> Result<f64> {
        let mut offset = 0;
        for (layer, pool, last) in &mut self.slots {
            let mask = &bits[offset..offset + pool.len()];
            offset += pool.len();
            if last.as_slice() != mask {
                self.weights[*layer] = reconstruct(pool, mask)?;
                last.clear();
                last.extend_from_slice(mask);
            }
        }
        let refs: Vec<&DenseMatrix> = self.weights.iter().collect();
        loss_with_weights(&refs, self.job.model.activation, &self.job.calib)
    }
}

/// Learns retention probabilities over the given pools jointly under
/// `budget` and returns the concatenated final mask.
fn optimise(
    job: &CompressionJob,
    evaluator: &mut MaskedEvaluator<'_>,
    costs: &[usize],
    budget: usize,
    rng: &mut CapRng,
    history: &mut Vec<f64>,
) -> Result<(Vec<bool>, Vec<f64>)> {
    let total: usize = costs.iter().sum();
    if costs.is_empty() || budget >= total {
        return Ok((vec![true; costs.len()], vec![1.0; costs.len()]));
    }
    if budget == 0 || costs.iter().all(|&c| c > budget) {
        return Ok((vec![false; costs.len()], vec![0.0; costs.len()]));
    }
    let cfg = &job.pg_config;
    let scale = objective_scale(&job.calib);
    let initial = (budget as f64 / total as f64).min(1.0);
    let mut state = init_state(costs, budget, initial)?;
    let mut warmup = Vec::with_capacity(cfg.window.max(1));
    for _ in 0..cfg.window.max(1) {
        let bits = sample_mask(&state, rng);
        let loss = evaluator.loss(&bits)?;
        history.push(loss);
        warmup.push(loss / scale);
    }
    state.prime_baseline(&warmup);
    let steps_per_pass = job.calib.size();
    for _ in 0..cfg.iterations {
        for _ in 0..steps_per_pass {
            let mut samples = Vec::with_capacity(cfg.samples_per_step);
            for _ in 0..cfg.samples_per_step {
                let bits = sample_mask(&state, rng);
                let loss = evaluator.loss(&bits)?;
                history.push(loss);
                samples.push(MaskSample { bits, loss: loss / scale });
            }
            state.apply(&samples, cfg)?;
        }
    }
    Ok((finalize_masks(&state), state.probs))
}

/// Mean squared norm of the calibration targets, i.e. the loss of a model
/// that outputs zero. Stage two optimises the loss in these units.
pub fn objective_scale(calib: &CalibrationSet) -> f64 {
    let energy = crate::linalg::frobenius_norm(&calib.targets).powi(2) / calib.size().max(1) as f64;
    if energy > 0.0 {
        energy
    } else {
        1.0
    }
}

fn split_mask(pools: &[(usize, CandidatePool)], bits: &[bool]) -> Vec<Vec<bool>> {
    let mut offset = 0;
    pools
        .iter()
        .map(|(_, p)| {
            let m = bits[offset..offset + p.len()].to_vec();
            offset += p.len();
            m
        })
        .collect()
}

fn dense_loss(job: &CompressionJob) -> Result<f64> {
    loss_with_weights(&job.model.layers.iter().collect::<Vec<_>>(), job.model.activation, &job.calib)
}

fn masked_loss(job: &CompressionJob, pools: &[(usize, CandidatePool)], masks: &[Vec<bool>]) -> Result<f64> {
    let mut weights = job.model.layers.clone();
    for ((l, pool), mask) in pools.iter().zip(masks) {
        weights[*l] = reconstruct(pool, mask)?;
    }
    loss_with_weights(&weights.iter().collect::<Vec<_>>(), job.model.activation, &job.calib)
}

/// Builds the report and factors for a set of final masks.
fn assemble(
    job: &CompressionJob,
    stage1: &Decomposition,
    masks: Vec<Vec<bool>>,
    scores: Vec<f64>,
    history: Vec<f64>,
    mode: &str,
) -> Result<CompressionOutcome> {
    let budget = job.budget();
    let all_ones: Vec<Vec<bool>> = stage1.pools.iter().map(|(_, p)| vec![true; p.len()]).collect();
    let rpca_loss = masked_loss(job, &stage1.pools, &all_ones)?;
    let final_loss = masked_loss(job, &stage1.pools, &masks)?;

    let mut layers = Vec::new();
    let mut compressed = Vec::new();
    for (((l, pool), mask), r) in stage1.pools.iter().zip(&masks).zip(&stage1.rpca) {
        let c = factorize(pool, mask)?;
        layers.push(LayerReport {
            layer: *l,
            rows: pool.rows,
            cols: pool.cols,
            rank_l: r.rank_l,
            sparsity_s: r.sparsity_s,
            rpca_iterations: r.iterations,
            candidates: pool.len(),
            retained_rank: c.retained_rank,
            sparse_nnz: c.sparse_nnz(),
            cost: c.stored_params(),
        });
        compressed.push((*l, c));
    }
    let used_cost = layers.iter().map(|l| l.cost).sum();
    let cheapest = stage1
        .pools
        .iter()
        .flat_map(|(_, p)| p.candidates.iter().map(|c| c.cost))
        .min();
    let empty_warning = matches!(cheapest, Some(c) if c > budget);
    if empty_warning {
        warn!("budget {budget} is below the cheapest candidate; nothing retained");
    }
    Ok(CompressionOutcome {
        report: CompressionReport {
            mode: mode.to_string(),
            layers,
            budget,
            used_cost,
            dense_loss: dense_loss(job)?,
            rpca_loss,
            final_loss,
            empty_warning,
            history,
        },
        compressed,
        pools: stage1.pools.clone(),
        scores,
    })
}

/// Full two-stage compression.
pub fn run(job: &CompressionJob) -> Result<CompressionOutcome> {
    let stage1 = decompose_layers(job)?;
    run_with(job, &stage1)
}

/// Stage two on a precomputed decomposition.
pub fn run_with(job: &CompressionJob, stage1: &Decomposition) -> Result<CompressionOutcome> {
    job.validate()?;
    let budget = job.budget();
    if budget == 0 {
        return Err(CapError::InvalidBudget("budget rounds down to zero parameters".into()));
    }
    let mut rng = CapRng::seed_from(job.pg_config.seed);
    let mut history = Vec::new();
    let mut scores = Vec::new();
    let masks = match job.mode {
        Mode::Global => {
            let refs: Vec<&(usize, CandidatePool)> = stage1.pools.iter().collect();
            let mut evaluator = MaskedEvaluator::new(job, &refs);
            let costs: Vec<usize> = stage1.pools.iter().flat_map(|(_, p)| p.costs()).collect();
            let (bits, probs) = optimise(job, &mut evaluator, &costs, budget, &mut rng, &mut history)?;
            scores = probs;
            split_mask(&stage1.pools, &bits)
        }
        Mode::Sequential => {
            let mut masks: Vec<Vec<bool>> = Vec::new();
            for (k, entry) in stage1.pools.iter().enumerate() {
                let layer_budget = (job.budget_fraction * entry.1.dense_params() as f64).floor() as usize;
                let mut evaluator = MaskedEvaluator::new(job, &[entry]);
                for (done, mask) in stage1.pools[..k].iter().zip(&masks) {
                    evaluator.fix_layer(done, mask)?;
                }
                let mut layer_rng = rng.split(k as u64);
                let (mask, probs) = optimise(
                    job,
                    &mut evaluator,
                    &entry.1.costs(),
                    layer_budget,
                    &mut layer_rng,
                    &mut history,
                )?;
                masks.push(mask);
                scores.extend(probs);
            }
            masks
        }
    };
    assemble(job, stage1, masks, scores, history, job.mode.name())
}

/// Which candidate kinds the magnitude baseline may keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdVariant {
    Combined,
    LowRankOnly,
    SparseOnly,
}

impl ThresholdVariant {
    pub fn name(self) -> &'static str {
        match self {
            ThresholdVariant::Combined => "threshold",
            ThresholdVariant::LowRankOnly => "l_only",
            ThresholdVariant::SparseOnly => "s_only",
        }
    }
}

/// Magnitude baseline: σ for triplets and |Sᵢⱼ| for entries ranked globally
/// and kept greedily under the same budget, with no learning.
pub fn heuristic_threshold_baseline(job: &CompressionJob) -> Result<CompressionOutcome> {
    let stage1 = decompose_layers(job)?;
    threshold_with(job, &stage1, ThresholdVariant::Combined)
}

pub fn threshold_with(
    job: &CompressionJob,
    stage1: &Decomposition,
    variant: ThresholdVariant,
) -> Result<CompressionOutcome> {
    job.validate()?;
    let budget = job.budget();
    let mut scores = Vec::new();
    let mut costs = Vec::new();
    for (_, pool) in &stage1.pools {
        for c in &pool.candidates {
            let allowed = match variant {
                ThresholdVariant::Combined => true,
                ThresholdVariant::LowRankOnly => c.is_triplet(),
                ThresholdVariant::SparseOnly => !c.is_triplet(),
            };
            scores.push(c.magnitude);
            // Excluded candidates can never fit.
            costs.push(if allowed { c.cost } else { usize::MAX });
        }
    }
    let bits = greedy_select(&scores, &costs, budget);
    assemble(job, stage1, split_mask(&stage1.pools, &bits), scores, Vec::new(), variant.name())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// `None` is the automatic λ.
    pub lambda: Option<f64>,
    pub mean_rank_l: f64,
    pub mean_sparsity_s: f64,
    pub nnz_s: usize,
    /// `Err` carries the failure message for this row.
    pub final_loss: std::result::Result<f64, String>,
}

/// Stage one (and the full pipeline for the loss column) once per λ.
pub fn sweep_lambda(job: &CompressionJob, lambdas: &[Option<f64>]) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(CapError::Usage("lambda list is empty".into()));
    }
    if lambdas.iter().flatten().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(CapError::InvalidConfig("lambdas must be positive".into()));
    }
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut cell = job.clone();
        cell.rpca_config.lambda = lambda;
        let row = match decompose_layers(&cell) {
            Ok(stage1) => {
                let n = stage1.rpca.len().max(1) as f64;
                SweepRow {
                    lambda,
                    mean_rank_l: stage1.rpca.iter().map(|r| r.rank_l as f64).sum::<f64>() / n,
                    mean_sparsity_s: stage1.rpca.iter().map(|r| r.sparsity_s).sum::<f64>() / n,
                    nnz_s: stage1.rpca.iter().map(|r| r.nnz_s()).sum(),
                    final_loss: run_with(&cell, &stage1)
                        .map(|o| o.report.final_loss)
                        .map_err(|e| e.to_string()),
                }
            }
            Err(e) => SweepRow {
                lambda,
                mean_rank_l: f64::NAN,
                mean_sparsity_s: f64::NAN,
                nnz_s: 0,
                final_loss: Err(e.to_string()),
            },
        };
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{gen_calibration, ToyModelSpec};

    fn tiny_job(fraction: f64) -> CompressionJob {
        let spec = ToyModelSpec {
            shapes: vec![(8, 6), (6, 4)],
            ranks: vec![2],
            ..ToyModelSpec::default()
        };
        let mut rng = CapRng::seed_from(1);
        let model = ToyModel::planted(&spec, &mut rng).unwrap();
        let calib = gen_calibration(&model, 32, 0.0, &mut rng).unwrap();
        let mut job = CompressionJob::new(model, calib);
        job.budget_fraction = fraction;
        job
    }

    #[test]
    fn split_mask_follows_pool_order() {
        let stage1 = decompose_layers(&tiny_job(0.5)).unwrap();
        let total: usize = stage1.pools.iter().map(|(_, p)| p.len()).sum();
        let bits: Vec<bool> = (0..total).map(|k| k % 3 == 0).collect();
        let parts = split_mask(&stage1.pools, &bits);
        assert_eq!(parts.concat(), bits);
        for ((_, p), m) in stage1.pools.iter().zip(&parts) {
            assert_eq!(p.len(), m.len());
        }
    }

    #[test]
    fn budget_is_floored() {
        let mut job = tiny_job(0.3);
        assert_eq!(job.budget(), (0.3f64 * 72.0).floor() as usize);
        job.layer_selection = vec![1];
        assert_eq!(job.budget(), 7);
    }

    #[test]
    fn zero_budget_is_an_error() {
        let mut job = tiny_job(0.01);
        assert!(matches!(run(&job), Err(CapError::InvalidBudget(_))));
        job.budget_fraction = 1.5;
        assert!(matches!(job.validate(), Err(CapError::InvalidBudget(_))));
    }

    #[test]
    fn zero_targets_do_not_rescale() {
        let job = tiny_job(0.5);
        let zero = CalibrationSet::new(job.calib.inputs.clone(), DenseMatrix::zeros(32, 4)).unwrap();
        assert_eq!(objective_scale(&zero), 1.0);
    }
}
