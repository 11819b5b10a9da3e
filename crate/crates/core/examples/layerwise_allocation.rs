//! A global budget lets a redundant layer give parameters to a complex one.
//! Layer 0 is planted at rank 1 and layer 1 at rank 8.

use cap_core::harness::{gen_calibration, ToyModel, ToyModelSpec};
use cap_core::pipeline::{run, CompressionJob, Mode};
use cap_core::CapRng;

fn main() -> cap_core::Result<()> {
    let spec = ToyModelSpec {
        shapes: vec![(24, 24), (24, 24)],
        ranks: vec![1, 8],
        ..ToyModelSpec::default()
    };
    let model = ToyModel::planted(&spec, &mut CapRng::seed_from(0))?;
    let calib = gen_calibration(&model, 128, 0.0, &mut CapRng::seed_from(1000))?;
    for mode in [Mode::Global, Mode::Sequential] {
        let mut job = CompressionJob::new(model.clone(), calib.clone());
        job.mode = mode;
        let r = run(&job)?.report;
        println!("{} (K = {}, loss {:.5})", mode.name(), r.budget, r.final_loss);
        for l in &r.layers {
            println!(
                "  layer {}: rank(L) {} -> kept {}, outliers kept {}, cost {}",
                l.layer, l.rank_l, l.retained_rank, l.sparse_nnz, l.cost
            );
        }
    }
    Ok(())
}
