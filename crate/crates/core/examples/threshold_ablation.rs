//! Learned retention against magnitude thresholding on the same
//! decomposition, including the low-rank-only and sparse-only variants.

use cap_core::io::JobConfig;
use cap_core::pipeline::{decompose_layers, run_with, threshold_with, ThresholdVariant};

fn main() -> cap_core::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    println!("fraction\tmethod\t\tused/K\t\tloss");
    for fraction in [0.1, 0.25, 0.5] {
        let cfg = JobConfig {
            budget_fraction: fraction,
            ..JobConfig::default()
        }
        .with_seed(seed);
        let (model, calib) = cfg.generate()?;
        let job = cfg.job(model, calib);
        let stage1 = decompose_layers(&job)?;
        let mut rows = vec![("learned", run_with(&job, &stage1)?)];
        for v in [ThresholdVariant::Combined, ThresholdVariant::LowRankOnly, ThresholdVariant::SparseOnly] {
            rows.push((v.name(), threshold_with(&job, &stage1, v)?));
        }
        for (name, o) in rows {
            let r = o.report;
            println!("{fraction}\t\t{name:<10}\t{}/{}\t{:.5}", r.used_cost, r.budget, r.final_loss);
        }
    }
    Ok(())
}
