//! End-to-end compression of the default three-layer toy model.

use cap_core::io::{report_tsv, JobConfig};
use cap_core::pipeline::run;

fn main() -> cap_core::Result<()> {
    let fraction = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.25);
    let cfg = JobConfig {
        budget_fraction: fraction,
        ..JobConfig::default()
    };
    let (model, calib) = cfg.generate()?;
    let outcome = run(&cfg.job(model, calib))?;
    let r = &outcome.report;
    // The per-step history is long; print the table and summary only.
    let tsv = report_tsv(r);
    print!("{}", tsv.split("\nstep\t").next().unwrap_or(&tsv));
    println!("loss evaluations: {}", r.history.len());
    Ok(())
}
