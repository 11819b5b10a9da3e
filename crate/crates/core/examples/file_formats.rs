//! The on-disk workflow without the binary: generate a model directory,
//! compress it, and read the factors back.

use cap_core::cli::{cmd_compress, cmd_gen_synthetic};
use cap_core::io::{read_matrix, read_model_dir, JobConfig};

fn main() -> cap_core::Result<()> {
    let root = std::env::temp_dir().join(format!("cap-example-{}", std::process::id()));
    let cfg = JobConfig::default().with_seed(5);
    for f in cmd_gen_synthetic(&cfg, &root.join("model"))? {
        println!("wrote {}", f.display());
    }
    let (model, calib) = read_model_dir(root.join("model"))?;
    println!("model: {} layers, calibration {} samples", model.layers.len(), calib.size());

    let outcome = cmd_compress(&cfg, &root.join("model"), &root.join("out"))?;
    for (l, _) in &outcome.compressed {
        let u = read_matrix(root.join("out").join(format!("layer_{l}.u.capm")))?;
        let s = read_matrix(root.join("out").join(format!("layer_{l}.s.capm")))?;
        println!("layer {l}: U' is {}x{}, {} sparse entries", u.rows(), u.cols(), s.count_nonzero());
    }
    println!("config used:\n{}", cfg.to_text());
    // Best effort; a leftover temp directory is harmless.
    let _ = std::fs::remove_dir_all(&root);
    Ok(())
}
