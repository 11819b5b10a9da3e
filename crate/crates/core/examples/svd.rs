//! Singular values and the norms built on them.

use cap_core::linalg::{frobenius_norm, l1_norm, nuclear_norm, spectral_norm, svd};
use cap_core::synthetic::random_low_rank;
use cap_core::{CapRng, DenseMatrix};

fn main() -> cap_core::Result<()> {
    let mut rng = CapRng::seed_from(1);
    let a = random_low_rank(6, 5, 2, &mut rng).add(&DenseMatrix::from_fn(6, 5, |_, _| 1e-3 * rng.standard_normal()))?;
    let f = svd(&a)?;
    println!("sigma       {:.4?}", f.sigma);
    println!("rank (tol)  {}", f.rank());
    println!("recon error {:.2e}", f.recompose().max_abs_diff(&a)?);

    // Keeping the two leading triplets drops only the noise floor.
    let mut weights = f.sigma.clone();
    weights[2..].iter_mut().for_each(|w| *w = 0.0);
    let trunc = f.recompose_with(&weights);
    println!("rank-2 err  {:.2e}", frobenius_norm(&a.sub(&trunc)?));

    println!("spectral    {:.4}", spectral_norm(&a));
    println!("frobenius   {:.4}", frobenius_norm(&a));
    println!("nuclear     {:.4}", nuclear_norm(&a)?);
    println!("l1          {:.4}", l1_norm(&a));
    Ok(())
}
