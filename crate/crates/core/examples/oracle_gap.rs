//! On a single small layer the candidate pool is tiny, so the best feasible
//! mask can be found by enumeration and the learned mask measured against it.

use cap_core::harness::{gen_calibration, loss_with_masks, Activation, ToyModel, ToyModelSpec};
use cap_core::oracle::brute_force_best_mask;
use cap_core::pipeline::{decompose_layers, run_with, CompressionJob};
use cap_core::CapRng;

fn main() -> cap_core::Result<()> {
    let spec = ToyModelSpec {
        shapes: vec![(8, 6)],
        ranks: vec![2],
        outlier_fraction: 0.1,
        activation: Activation::Identity,
        ..ToyModelSpec::default()
    };
    println!("seed\tpool\tlearned\t\toptimum\t\tgap");
    for seed in 0..5u64 {
        let model = ToyModel::planted(&spec, &mut CapRng::seed_from(seed))?;
        let calib = gen_calibration(&model, 128, 0.0, &mut CapRng::seed_from(seed + 1000))?;
        let mut job = CompressionJob::new(model.clone(), calib.clone());
        job.rpca_config.lambda = Some(0.8);
        job.pg_config.seed = seed;
        let stage1 = decompose_layers(&job)?;
        let pools = &stage1.pools;
        let learned = run_with(&job, &stage1)?.report.final_loss;
        let best = brute_force_best_mask(&pools[0].1.costs(), job.budget(), |m| {
            loss_with_masks(&model, pools, &[m.to_vec()], &calib).unwrap_or(f64::INFINITY)
        })?;
        let gap = (learned - best.best_loss) / best.best_loss;
        println!(
            "{seed}\t{}\t{learned:.6}\t{:.6}\t{:.2}%",
            pools[0].1.len(),
            best.best_loss,
            100.0 * gap
        );
    }
    Ok(())
}
