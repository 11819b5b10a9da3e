//! How λ trades rank in L against outliers in S, and what that does to the
//! compressed loss.

use cap_core::io::JobConfig;
use cap_core::pipeline::sweep_lambda;

fn main() -> cap_core::Result<()> {
    let cfg = JobConfig::default().with_seed(2);
    let (model, calib) = cfg.generate()?;
    let job = cfg.job(model, calib);
    let lambdas = [Some(0.01), Some(0.05), None, Some(0.5), Some(2.0)];
    println!("lambda\tmean_rank\tsparsity\tnnz\tfinal_loss");
    for row in sweep_lambda(&job, &lambdas)? {
        let lambda = row.lambda.map_or("auto".to_string(), |l| l.to_string());
        let loss = row.final_loss.map_or_else(|e| format!("failed: {e}"), |l| format!("{l:.5}"));
        println!(
            "{lambda}\t{:.2}\t\t{:.4}\t\t{}\t{loss}",
            row.mean_rank_l, row.mean_sparsity_s, row.nnz_s
        );
    }
    Ok(())
}
