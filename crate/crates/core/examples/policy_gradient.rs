//! REINFORCE over Bernoulli retention masks on a hand-built loss with a
//! known optimum, compared against exhaustive search.

use cap_core::allocator::{finalize_masks, init_state, sample_mask, MaskSample, PolicyGradientConfig};
use cap_core::oracle::brute_force_best_mask;
use cap_core::CapRng;

fn main() -> cap_core::Result<()> {
    let costs = [4, 3, 3, 2, 2, 1, 1, 1];
    let value = [5.0, 1.0, 3.5, 0.4, 2.2, 0.9, 0.1, 1.3];
    let budget = 8;
    // Dropping candidate k costs value[k]; keeping both 2 and 4 is redundant.
    let loss = |m: &[bool]| -> f64 {
        let dropped: f64 = m.iter().zip(&value).filter(|(k, _)| !**k).map(|(_, v)| v).sum();
        dropped + if m[2] && m[4] { 2.0 } else { 0.0 }
    };

    let config = PolicyGradientConfig {
        learning_rate: 0.005,
        ..PolicyGradientConfig::default()
    };
    let mut rng = CapRng::seed_from(3);
    let mut state = init_state(&costs, budget, 1.0)?;
    let warmup: Vec<f64> = (0..config.window).map(|_| loss(&sample_mask(&state, &mut rng))).collect();
    state.prime_baseline(&warmup);
    for step in 0..2000 {
        let bits = sample_mask(&state, &mut rng);
        let sample = MaskSample { loss: loss(&bits), bits };
        state.apply(&[sample], &config)?;
        if step % 500 == 0 {
            println!("step {step:4}  baseline {:.3}  s = {:.2?}", state.baseline, state.probs);
        }
    }

    let learned = finalize_masks(&state);
    let best = brute_force_best_mask(&costs, budget, loss)?;
    println!("learned mask {learned:?} loss {:.2}", loss(&learned));
    println!("optimum mask {:?} loss {:.2}", best.best_mask, best.best_loss);
    Ok(())
}
