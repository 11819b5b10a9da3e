//! Planted low-rank-plus-sparse instances with known ground truth.

use crate::linalg::{matmul, DenseMatrix};
use crate::rng::CapRng;

/// `W = L₀ + S₀` together with its parts.
#[derive(Debug, Clone)]
pub struct PlantedInstance {
    pub w: DenseMatrix,
    pub low_rank: DenseMatrix,
    pub sparse: DenseMatrix,
}

/// Random `rows × cols` matrix of rank `rank`: product of two standard
/// normal factors.
pub fn random_low_rank(rows: usize, cols: usize, rank: usize, rng: &mut CapRng) -> DenseMatrix {
    let a = DenseMatrix::from_fn(rows, rank, |_, _| rng.standard_normal());
    let b = DenseMatrix::from_fn(rank, cols, |_, _| rng.standard_normal());
    matmul(&a, &b).expect("factor shapes compose")
}

/// Picks `count` distinct flat positions out of `total`, returned sorted.
pub fn random_support(total: usize, count: usize, rng: &mut CapRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..total).collect();
    let count = count.min(total);
    for k in 0..count {
        let j = k + rng.below(total - k);
        idx.swap(k, j);
    }
    let mut chosen = idx[..count].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Rank-`rank` standard-normal product plus `round(outlier_fraction·m·n)`
/// outliers of magnitude `outlier_scale · mean|L₀|` and random sign.
pub fn planted(
    rows: usize,
    cols: usize,
    rank: usize,
    outlier_fraction: f64,
    outlier_scale: f64,
    rng: &mut CapRng,
) -> PlantedInstance {
    let low_rank = random_low_rank(rows, cols, rank, rng);
    let typical = low_rank.data().iter().map(|x| x.abs()).sum::<f64>() / low_rank.len().max(1) as f64;
    let count = (outlier_fraction * (rows * cols) as f64).round() as usize;
    let mut sparse = DenseMatrix::zeros(rows, cols);
    for k in random_support(rows * cols, count, rng) {
        sparse[(k / cols, k % cols)] = rng.sign() * outlier_scale * typical;
    }
    let w = low_rank.add(&sparse).expect("same shape");
    PlantedInstance { w, low_rank, sparse }
}
