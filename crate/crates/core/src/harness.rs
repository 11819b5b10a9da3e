//! Loss signal for stage two: a small feed-forward model, synthetic
//! calibration data, and weight reconstruction from candidate masks.
//!
//! Layers act on row vectors: a layer of shape `in × out` maps a batch
//! `X (n × in)` to `X·W (n × out)`. The activation is applied between layers,
//! never after the last one. The loss is `mean_x ‖f(x) − y‖²`.

use crate::error::{CapError, Result};
use crate::linalg::{matmul, DenseMatrix};
use crate::pool::{CandidateKind, CandidatePool};
use crate::rng::CapRng;
use crate::synthetic::{random_low_rank, random_support};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn apply(self, m: &mut DenseMatrix) {
        if self == Activation::Relu {
            *m = m.map(|x| x.max(0.0));
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub layers: Vec<DenseMatrix>,
    pub activation: Activation,
}

/// Recipe for a planted toy model: every layer is a low-rank product plus a
/// few large outliers plus small dense noise, rescaled so a standard normal
/// input keeps roughly unit variance through a rectifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModelSpec {
    /// `(in, out)` per layer.
    pub shapes: Vec<(usize, usize)>,
    /// Planted rank per layer; a single entry applies to all layers.
    pub ranks: Vec<usize>,
    pub outlier_fraction: f64,
    /// Outlier magnitude in units of the mean |entry| of the low-rank part.
    pub outlier_scale: f64,
    /// Dense noise standard deviation, relative to the low-rank entry scale.
    pub noise: f64,
    pub activation: Activation,
}

impl Default for ToyModelSpec {
    fn default() -> Self {
        Self {
            shapes: vec![(32, 24), (24, 24), (24, 16)],
            ranks: vec![3],
            outlier_fraction: 0.05,
            outlier_scale: 3.0,
            noise: 0.0,
            activation: Activation::Relu,
        }
    }
}

impl ToyModelSpec {
    pub fn rank_of(&self, layer: usize) -> usize {
        match self.ranks.as_slice() {
            [] => 1,
            [r] => *r,
            rs => rs[layer.min(rs.len() - 1)],
        }
    }
}

impl ToyModel {
    pub fn new(layers: Vec<DenseMatrix>, activation: Activation) -> Result<Self> {
        let model = Self { layers, activation };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(CapError::InvalidConfig("model has no layers".into()));
        }
        for pair in self.layers.windows(2) {
            if pair[0].cols() != pair[1].rows() {
                return Err(CapError::shape("toy model", (pair[0].cols(), 0), (pair[1].rows(), 0)));
            }
        }
        Ok(())
    }

    pub fn planted(spec: &ToyModelSpec, rng: &mut CapRng) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.shapes.len());
        for (k, &(fan_in, fan_out)) in spec.shapes.iter().enumerate() {
            let mut layer_rng = rng.split(k as u64);
            let rank = spec.rank_of(k).clamp(1, fan_in.min(fan_out));
            let low = random_low_rank(fan_in, fan_out, rank, &mut layer_rng).scale(1.0 / (rank as f64).sqrt());
            let typical = low.data().iter().map(|x| x.abs()).sum::<f64>() / low.len() as f64;
            let mut w = low;
            let count = (spec.outlier_fraction * (fan_in * fan_out) as f64).round() as usize;
            for pos in random_support(fan_in * fan_out, count, &mut layer_rng) {
                w[(pos / fan_out, pos % fan_out)] += layer_rng.sign() * spec.outlier_scale * typical;
            }
            if spec.noise > 0.0 {
                let scale = spec.noise * typical;
                for r in 0..fan_in {
                    for c in 0..fan_out {
                        w[(r, c)] += scale * layer_rng.standard_normal();
                    }
                }
            }
            let gain = match spec.activation {
                Activation::Relu => 2.0,
                Activation::Identity => 1.0,
            };
            let target = (gain * fan_out as f64).sqrt();
            let norm = crate::linalg::frobenius_norm(&w);
            if norm > 0.0 {
                w = w.scale(target / norm);
            }
            layers.push(w);
        }
        Self::new(layers, spec.activation)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.cols())
    }

    pub fn dense_params(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    /// Batched forward pass, one sample per row of `inputs`.
    pub fn forward(&self, inputs: &DenseMatrix) -> Result<DenseMatrix> {
        forward_with(&self.layers.iter().collect::<Vec<_>>(), self.activation, inputs)
    }
}

/// Forward pass through an explicit list of weights.
pub fn forward_with(layers: &[&DenseMatrix], activation: Activation, inputs: &DenseMatrix) -> Result<DenseMatrix> {
    let mut h = inputs.clone();
    for (k, w) in layers.iter().enumerate() {
        h = matmul(&h, w)?;
        if k + 1 < layers.len() {
            activation.apply(&mut h);
        }
    }
    Ok(h)
}

/// Calibration pairs stored one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub inputs: DenseMatrix,
    pub targets: DenseMatrix,
}

impl CalibrationSet {
    pub fn new(inputs: DenseMatrix, targets: DenseMatrix) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(CapError::LengthMismatch {
                expected: inputs.rows(),
                found: targets.rows(),
            });
        }
        Ok(Self { inputs, targets })
    }

    pub fn size(&self) -> usize {
        self.inputs.rows()
    }
}

pub const DEFAULT_CALIBRATION_SIZE: usize = 128;

/// Standard normal inputs and `y = f(x) + noise_sigma · N(0, 1)` targets.
pub fn gen_calibration(model: &ToyModel, n: usize, noise_sigma: f64, rng: &mut CapRng) -> Result<CalibrationSet> {
    if n == 0 {
        return Err(CapError::InvalidConfig("calibration size must be at least 1".into()));
    }
    let inputs = DenseMatrix::from_fn(n, model.input_dim(), |_, _| rng.standard_normal());
    let clean = model.forward(&inputs)?;
    let mut targets = clean;
    if noise_sigma > 0.0 {
        let (rows, cols) = targets.shape();
        for r in 0..rows {
            for c in 0..cols {
                targets[(r, c)] += noise_sigma * rng.standard_normal();
            }
        }
    }
    CalibrationSet::new(inputs, targets)
}

/// `mean_x ‖out(x) − y‖²`.
pub fn mean_squared_error(outputs: &DenseMatrix, targets: &DenseMatrix) -> Result<f64> {
    if outputs.shape() != targets.shape() {
        return Err(CapError::shape("loss", targets.shape(), outputs.shape()));
    }
    let total: f64 = outputs
        .data()
        .iter()
        .zip(targets.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(total / outputs.rows().max(1) as f64)
}

pub fn forward_loss(model: &ToyModel, calib: &CalibrationSet) -> Result<f64> {
    mean_squared_error(&model.forward(&calib.inputs)?, &calib.targets)
}

/// Loss with explicit weights in place of the model's own.
pub fn loss_with_weights(layers: &[&DenseMatrix], activation: Activation, calib: &CalibrationSet) -> Result<f64> {
    mean_squared_error(&forward_with(layers, activation, &calib.inputs)?, &calib.targets)
}

fn check_mask(pool: &CandidatePool, mask: &[bool]) -> Result<()> {
    if mask.len() != pool.len() {
        return Err(CapError::LengthMismatch {
            expected: pool.len(),
            found: mask.len(),
        });
    }
    Ok(())
}

/// Dense `U diag(σ ⊙ m_σ) Vᵀ + S ⊙ m_S`.
pub fn reconstruct(pool: &CandidatePool, mask: &[bool]) -> Result<DenseMatrix> {
    check_mask(pool, mask)?;
    let mut weights = vec![0.0; pool.svd.sigma.len()];
    let mut sparse = Vec::new();
    let mut sparse_pos = 0;
    for (cand, &keep) in pool.candidates.iter().zip(mask) {
        match cand.kind {
            CandidateKind::SingularTriplet { index } => {
                if keep {
                    weights[index] = pool.svd.sigma[index];
                }
            }
            CandidateKind::SparseEntry { .. } => {
                if keep {
                    sparse.push(pool.sparse_entries[sparse_pos]);
                }
                sparse_pos += 1;
            }
        }
    }
    let mut w = if weights.iter().any(|&x| x != 0.0) {
        pool.svd.recompose_with(&weights)
    } else {
        DenseMatrix::zeros(pool.rows, pool.cols)
    };
    for (row, col, v) in sparse {
        w[(row, col)] += v;
    }
    Ok(w)
}

/// Factorized form of a masked layer: `W̃ = U′ V′ᵀ + S_masked`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedLayer {
    /// m × r′, columns `√σᵢ uᵢ`.
    pub u_prime: DenseMatrix,
    /// n × r′, columns `√σᵢ vᵢ`.
    pub v_prime: DenseMatrix,
    pub s_masked: DenseMatrix,
    pub mask: Vec<bool>,
    pub retained_rank: usize,
}

impl CompressedLayer {
    pub fn dense(&self) -> DenseMatrix {
        let low = matmul(&self.u_prime, &self.v_prime.transpose()).expect("factor shapes compose");
        low.add(&self.s_masked).expect("same shape")
    }

    /// `r′ (m + n) + nnz(S_masked)`.
    pub fn stored_params(&self) -> usize {
        self.retained_rank * (self.u_prime.rows() + self.v_prime.rows()) + self.s_masked.count_nonzero()
    }

    pub fn sparse_nnz(&self) -> usize {
        self.s_masked.count_nonzero()
    }
}

pub fn factorize(pool: &CandidatePool, mask: &[bool]) -> Result<CompressedLayer> {
    check_mask(pool, mask)?;
    let (m, n) = (pool.rows, pool.cols);
    let mut u_cols = Vec::new();
    let mut v_cols = Vec::new();
    let mut s_masked = DenseMatrix::zeros(m, n);
    let mut sparse_pos = 0;
    for (cand, &keep) in pool.candidates.iter().zip(mask) {
        match cand.kind {
            CandidateKind::SingularTriplet { index } => {
                if keep {
                    let root = pool.svd.sigma[index].sqrt();
                    u_cols.push(pool.svd.u.column(index).iter().map(|x| root * x).collect::<Vec<_>>());
                    v_cols.push(pool.svd.v.column(index).iter().map(|x| root * x).collect::<Vec<_>>());
                }
            }
            CandidateKind::SparseEntry { row, col } => {
                if keep {
                    let (r, c, v) = pool.sparse_entries[sparse_pos];
                    debug_assert_eq!((r, c), (row, col));
                    s_masked[(row, col)] = v;
                }
                sparse_pos += 1;
            }
        }
    }
    Ok(CompressedLayer {
        retained_rank: u_cols.len(),
        u_prime: DenseMatrix::from_columns(m, &u_cols),
        v_prime: DenseMatrix::from_columns(n, &v_cols),
        s_masked,
        mask: mask.to_vec(),
    })
}

/// Loss of `model` with each listed layer replaced by its masked
/// reconstruction; other layers keep their dense weights.
pub fn loss_with_masks(
    model: &ToyModel,
    pools: &[(usize, CandidatePool)],
    masks: &[Vec<bool>],
    calib: &CalibrationSet,
) -> Result<f64> {
    if pools.len() != masks.len() {
        return Err(CapError::LengthMismatch {
            expected: pools.len(),
            found: masks.len(),
        });
    }
    let mut layers = model.layers.clone();
    for ((idx, pool), mask) in pools.iter().zip(masks) {
        let slot = layers.get_mut(*idx).ok_or_else(|| {
            CapError::InvalidConfig(format!("layer index {idx} out of range"))
        })?;
        let w = reconstruct(pool, mask)?;
        if w.shape() != slot.shape() {
            return Err(CapError::shape("loss_with_masks", slot.shape(), w.shape()));
        }
        *slot = w;
    }
    loss_with_weights(&layers.iter().collect::<Vec<_>>(), model.activation, calib)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::CandidatePool;
    use crate::synthetic::random_low_rank;

    fn pool_with_sparse(seed: u64) -> CandidatePool {
        let mut rng = CapRng::seed_from(seed);
        let l = random_low_rank(7, 5, 3, &mut rng);
        let mut s = DenseMatrix::zeros(7, 5);
        for pos in random_support(35, 6, &mut rng) {
            s[(pos / 5, pos % 5)] = rng.standard_normal() * 4.0;
        }
        CandidatePool::from_parts("p", &l, &s).unwrap()
    }

    #[test]
    fn reconstruct_all_and_nothing() {
        let mut rng = CapRng::seed_from(4);
        let l = random_low_rank(7, 5, 3, &mut rng);
        let s = DenseMatrix::from_fn(7, 5, |r, c| if (r + c) % 6 == 0 { 2.0 } else { 0.0 });
        let pool = CandidatePool::from_parts("p", &l, &s).unwrap();
        let all = reconstruct(&pool, &vec![true; pool.len()]).unwrap();
        assert!(all.max_abs_diff(&l.add(&s).unwrap()).unwrap() < 1e-12);
        let none = reconstruct(&pool, &vec![false; pool.len()]).unwrap();
        assert_eq!(none, DenseMatrix::zeros(7, 5));
        assert!(reconstruct(&pool, &[true]).is_err());
    }

    #[test]
    fn reconstruct_single_triplet_is_outer_product() {
        let pool = pool_with_sparse(5);
        let mut mask = vec![false; pool.len()];
        mask[1] = true;
        let w = reconstruct(&pool, &mask).unwrap();
        let sg = pool.svd.sigma[1];
        let (u, v) = (pool.svd.u.column(1), pool.svd.v.column(1));
        for r in 0..7 {
            for c in 0..5 {
                assert!((w[(r, c)] - sg * u[r] * v[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn factorize_without_triplets() {
        let pool = pool_with_sparse(6);
        let mut mask = vec![false; pool.len()];
        for m in mask.iter_mut().skip(pool.triplet_count()).step_by(2) {
            *m = true;
        }
        let c = factorize(&pool, &mask).unwrap();
        assert_eq!((c.u_prime.cols(), c.v_prime.cols(), c.retained_rank), (0, 0, 0));
        assert_eq!(c.dense(), c.s_masked);
        assert_eq!(c.dense(), reconstruct(&pool, &mask).unwrap());
    }

    #[test]
    fn factorize_scales_by_root_sigma() {
        let u = [0.6, 0.8];
        let v = [0.0, 1.0, 0.0];
        let l = DenseMatrix::outer(&u, &v).scale(4.0);
        let pool = CandidatePool::from_parts("one", &l, &DenseMatrix::zeros(2, 3)).unwrap();
        let c = factorize(&pool, &[true]).unwrap();
        assert!((c.u_prime[(1, 0)] - 1.6).abs() < 1e-12);
        assert!((c.v_prime[(1, 0)] - 2.0).abs() < 1e-12);
        assert!(c.dense().max_abs_diff(&l).unwrap() < 1e-12);
    }

    #[test]
    fn parameter_accounting() {
        let pool = pool_with_sparse(8);
        let mask: Vec<bool> = (0..pool.len()).map(|k| k % 3 != 1).collect();
        let c = factorize(&pool, &mask).unwrap();
        assert_eq!(
            c.stored_params(),
            crate::pool::param_count(&pool, &mask).unwrap()
        );
    }

    #[test]
    fn forward_loss_zero_cases() {
        let w = DenseMatrix::identity(4);
        let model = ToyModel::new(vec![w], Activation::Identity).unwrap();
        let x = DenseMatrix::from_fn(5, 4, |r, c| (r * 4 + c) as f64 * 0.1);
        let calib = CalibrationSet::new(x.clone(), x).unwrap();
        assert_eq!(forward_loss(&model, &calib).unwrap(), 0.0);

        let mut rng = CapRng::seed_from(2);
        let model = ToyModel::planted(&ToyModelSpec::default(), &mut rng).unwrap();
        let calib = gen_calibration(&model, 16, 0.0, &mut rng).unwrap();
        assert_eq!(forward_loss(&model, &calib).unwrap(), 0.0);
    }

    #[test]
    fn model_shape_checks() {
        let bad = ToyModel::new(
            vec![DenseMatrix::zeros(3, 4), DenseMatrix::zeros(5, 2)],
            Activation::Relu,
        );
        assert!(bad.is_err());
        let model = ToyModel::new(vec![DenseMatrix::zeros(3, 2)], Activation::Relu).unwrap();
        let calib = CalibrationSet::new(DenseMatrix::zeros(2, 4), DenseMatrix::zeros(2, 2)).unwrap();
        assert!(forward_loss(&model, &calib).is_err());
    }

    #[test]
    fn calibration_is_seeded() {
        let spec = ToyModelSpec::default();
        let model = ToyModel::planted(&spec, &mut CapRng::seed_from(1)).unwrap();
        let a = gen_calibration(&model, 32, 0.1, &mut CapRng::seed_from(77)).unwrap();
        let b = gen_calibration(&model, 32, 0.1, &mut CapRng::seed_from(77)).unwrap();
        assert_eq!(a, b);
        assert!(gen_calibration(&model, 0, 0.1, &mut CapRng::seed_from(77)).is_err());
    }
}
