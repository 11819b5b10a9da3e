//! Prunable units produced by a decomposition: one candidate per singular
//! triplet of `L` (costing `m + n` stored parameters) and one per nonzero
//! of `S` (costing one).

use crate::error::{CapError, Result};
use crate::linalg::{svd, DenseMatrix, SvdFactorization};
use crate::rpca::RpcaResult;

/// Singular values at or below this fraction of the largest are dropped.
pub const TRIPLET_REL_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CandidateKind {
    SingularTriplet { index: usize },
    SparseEntry { row: usize, col: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub kind: CandidateKind,
    /// σᵢ for a triplet, |Sᵢⱼ| for a sparse entry.
    pub magnitude: f64,
    pub cost: usize,
}

impl Candidate {
    pub fn is_triplet(&self) -> bool {
        matches!(self.kind, CandidateKind::SingularTriplet { .. })
    }
}

/// Candidates of one layer. Triplets come first in descending σ, then sparse
/// entries in descending |value| with ties broken by `(row, col)`.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    pub layer_id: String,
    pub rows: usize,
    pub cols: usize,
    /// SVD of the low-rank part.
    pub svd: SvdFactorization,
    /// `(row, col, value)` in candidate order.
    pub sparse_entries: Vec<(usize, usize, f64)>,
    pub candidates: Vec<Candidate>,
    pub total_cost: usize,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn costs(&self) -> Vec<usize> {
        self.candidates.iter().map(|c| c.cost).collect()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.magnitude).collect()
    }

    pub fn triplet_count(&self) -> usize {
        self.candidates.iter().filter(|c| c.is_triplet()).count()
    }

    pub fn sparse_count(&self) -> usize {
        self.len() - self.triplet_count()
    }

    /// Dense parameter count of the original layer.
    pub fn dense_params(&self) -> usize {
        self.rows * self.cols
    }

    /// Builds a pool straight from a low-rank and a sparse matrix.
    pub fn from_parts(layer_id: impl Into<String>, l: &DenseMatrix, s: &DenseMatrix) -> Result<Self> {
        if l.shape() != s.shape() {
            return Err(CapError::shape("build_pool", l.shape(), s.shape()));
        }
        let (rows, cols) = l.shape();
        let svd = svd(l)?;
        let top = svd.sigma.first().copied().unwrap_or(0.0);
        let mut candidates: Vec<Candidate> = svd
            .sigma
            .iter()
            .enumerate()
            .filter(|&(_, &sg)| top > 0.0 && sg > TRIPLET_REL_THRESHOLD * top)
            .map(|(index, &sg)| Candidate {
                kind: CandidateKind::SingularTriplet { index },
                magnitude: sg,
                cost: rows + cols,
            })
            .collect();

        let mut sparse_entries: Vec<(usize, usize, f64)> = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .filter_map(|(r, c)| {
                let v = s[(r, c)];
                (v != 0.0).then_some((r, c, v))
            })
            .collect();
        sparse_entries.sort_by(|a, b| {
            b.2.abs()
                .total_cmp(&a.2.abs())
                .then(a.0.cmp(&b.0))
                .then(a.1.cmp(&b.1))
        });
        candidates.extend(sparse_entries.iter().map(|&(row, col, v)| Candidate {
            kind: CandidateKind::SparseEntry { row, col },
            magnitude: v.abs(),
            cost: 1,
        }));

        let total_cost = candidates.iter().map(|c| c.cost).sum();
        Ok(Self {
            layer_id: layer_id.into(),
            rows,
            cols,
            svd,
            sparse_entries,
            candidates,
            total_cost,
        })
    }
}

/// Candidate pool for one decomposed layer.
pub fn build_pool(layer_id: impl Into<String>, rpca: &RpcaResult) -> Result<CandidatePool> {
    CandidatePool::from_parts(layer_id, &rpca.l, &rpca.s)
}

/// Stored parameters of the candidates a mask keeps.
pub fn param_count(pool: &CandidatePool, mask: &[bool]) -> Result<usize> {
    masked_cost(&pool.costs(), mask)
}

/// `Σ cost_k` over the set bits of `mask`.
pub fn masked_cost(costs: &[usize], mask: &[bool]) -> Result<usize> {
    if costs.len() != mask.len() {
        return Err(CapError::LengthMismatch {
            expected: costs.len(),
            found: mask.len(),
        });
    }
    Ok(costs.iter().zip(mask).filter(|(_, &m)| m).map(|(c, _)| c).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CapRng;
    use crate::synthetic::random_low_rank;

    #[test]
    fn zero_parts_give_empty_pool() {
        let z = DenseMatrix::zeros(5, 4);
        let p = CandidatePool::from_parts("z", &z, &z).unwrap();
        assert!(p.is_empty());
        assert_eq!(p.total_cost, 0);
    }

    fn rank2_pool() -> CandidatePool {
        let mut rng = CapRng::seed_from(1);
        let l = random_low_rank(10, 6, 2, &mut rng);
        let mut s = DenseMatrix::zeros(10, 6);
        for (k, &(r, c)) in [(0, 0), (1, 3), (2, 5), (4, 1), (7, 2), (9, 5), (8, 0)].iter().enumerate() {
            s[(r, c)] = if k % 2 == 0 { 1.0 + k as f64 } else { -(1.0 + k as f64) };
        }
        CandidatePool::from_parts("layer", &l, &s).unwrap()
    }

    #[test]
    fn cost_arithmetic() {
        let p = rank2_pool();
        assert_eq!(p.triplet_count(), 2);
        assert_eq!(p.sparse_count(), 7);
        assert!(p.candidates[..2].iter().all(|c| c.cost == 16));
        assert_eq!(p.total_cost, 39);
    }

    #[test]
    fn ordering_is_descending() {
        let p = rank2_pool();
        assert!(p.candidates[0].magnitude >= p.candidates[1].magnitude);
        let sparse: Vec<f64> = p.candidates[2..].iter().map(|c| c.magnitude).collect();
        assert!(sparse.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(sparse[0], 7.0);
    }

    #[test]
    fn ties_break_by_position() {
        let l = DenseMatrix::zeros(2, 2);
        let s = DenseMatrix::from_rows(&[&[0.0, -1.0], &[1.0, 1.0]]).unwrap();
        let p = CandidatePool::from_parts("t", &l, &s).unwrap();
        let pos: Vec<(usize, usize)> = p.sparse_entries.iter().map(|&(r, c, _)| (r, c)).collect();
        assert_eq!(pos, vec![(0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn param_count_cases() {
        let p = rank2_pool();
        assert_eq!(param_count(&p, &[false; 9]).unwrap(), 0);
        assert_eq!(param_count(&p, &[true; 9]).unwrap(), 39);
        let mut one = vec![false; 9];
        one[0] = true;
        assert_eq!(param_count(&p, &one).unwrap(), 16);
        assert!(param_count(&p, &[true]).is_err());
    }
}
