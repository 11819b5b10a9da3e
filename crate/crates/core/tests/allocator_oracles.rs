use cap_core::allocator::{
    exact_expected_loss_grad, finalize_masks, greedy_select, init_state, project_to_budget, sample_mask,
};
use cap_core::oracle::exact_expected_loss;
use cap_core::CapRng;
use proptest::prelude::*;

/// Exact projection: the budget function `f(ν) = Σ c·clip(s − νc)` is
/// piecewise linear, so locate the segment containing `K` among the sorted
/// breakpoints and solve it in closed form.
fn projection_oracle(s: &[f64], c: &[usize], k: f64) -> Vec<f64> {
    let clip = |nu: f64| -> Vec<f64> { s.iter().zip(c).map(|(&x, &w)| (x - nu * w as f64).clamp(0.0, 1.0)).collect() };
    let f = |nu: f64| -> f64 { clip(nu).iter().zip(c).map(|(x, &w)| x * w as f64).sum() };
    if f(0.0) <= k {
        return clip(0.0);
    }
    let mut bps: Vec<f64> = s
        .iter()
        .zip(c)
        .flat_map(|(&x, &w)| [(x - 1.0) / w as f64, x / w as f64])
        .filter(|&b| b > 0.0)
        .collect();
    bps.push(0.0);
    bps.sort_by(f64::total_cmp);
    for pair in bps.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (fa, fb) = (f(a), f(b));
        if fa >= k && fb <= k {
            let nu = if fa == fb { a } else { a + (fa - k) * (b - a) / (fa - fb) };
            return clip(nu);
        }
    }
    clip(*bps.last().unwrap())
}

fn quadratic_loss(mask: &[bool]) -> f64 {
    // Non-separable: pairwise interactions make the gradient depend on all s.
    let x: Vec<f64> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let mut v = 0.0;
    for i in 0..x.len() {
        v += (i as f64 + 1.0) * (1.0 - x[i]);
        for j in i + 1..x.len() {
            v += 0.3 * ((i + 2 * j) % 5) as f64 * x[i] * x[j];
        }
    }
    v
}

#[test]
fn exact_gradient_matches_finite_differences() {
    let probs = [0.2, 0.55, 0.7, 0.35, 0.9];
    let grad = exact_expected_loss_grad(&probs, quadratic_loss).unwrap();
    let h = 1e-5;
    for k in 0..probs.len() {
        let mut up = probs;
        let mut dn = probs;
        up[k] += h;
        dn[k] -= h;
        let fd = (exact_expected_loss(&up, quadratic_loss).unwrap() - exact_expected_loss(&dn, quadratic_loss).unwrap())
            / (2.0 * h);
        assert!((fd - grad[k]).abs() < 1e-6, "k = {k}: {fd} vs {}", grad[k]);
    }
}

#[test]
fn bernoulli_frequency_and_variance() {
    let mut st = init_state(&[1, 1], 2, 1.0).unwrap();
    st.probs = vec![0.3, 0.5];
    let mut rng = CapRng::seed_from(17);
    let n = 100_000;
    let mut hits = [0usize; 2];
    for _ in 0..n {
        let bits = sample_mask(&st, &mut rng);
        for k in 0..2 {
            hits[k] += bits[k] as usize;
        }
    }
    let freq = hits[0] as f64 / n as f64;
    assert!((0.294..=0.306).contains(&freq), "{freq}");
    let p = hits[1] as f64 / n as f64;
    assert!((p * (1.0 - p) - 0.25).abs() <= 0.005);
}

#[test]
fn small_worked_examples() {
    let st = init_state(&[1, 1], 1, 1.0).unwrap();
    assert_eq!(st.probs, vec![0.5, 0.5]);
    let p = project_to_budget(&[0.8, 0.8, 0.8], &[1, 1, 1], 1.5).unwrap();
    for x in p {
        assert!((x - 0.5).abs() < 1e-9);
    }
}

#[test]
fn finalize_respects_budget_on_skewed_costs() {
    let mut st = init_state(&[7, 1, 1, 1, 5], 8, 1.0).unwrap();
    st.probs = vec![0.99, 0.2, 0.3, 0.4, 0.98];
    let mask = finalize_masks(&st);
    // 7 fits first; 5 no longer does, so the unit candidates fill what is left.
    assert_eq!(mask, vec![true, false, false, true, false]);
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<usize>, f64)> {
    (1usize..12).prop_flat_map(|n| {
        (
            prop::collection::vec(-0.5f64..1.5, n),
            prop::collection::vec(1usize..20, n),
            0.0f64..1.0,
        )
            .prop_map(|(s, c, frac)| {
                let total: usize = c.iter().sum();
                (s, c, frac * total as f64)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn projection_is_feasible_and_matches_oracle((s, c, k) in instance()) {
        let p = project_to_budget(&s, &c, k).unwrap();
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let spent: f64 = p.iter().zip(&c).map(|(x, &w)| x * w as f64).sum();
        prop_assert!(spent <= k + 1e-9);
        let oracle = projection_oracle(&s, &c, k);
        for (a, b) in p.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-6, "{:?} vs {:?}", p, oracle);
        }
    }

    #[test]
    fn greedy_never_exceeds_budget((s, c, k) in instance()) {
        let budget = k.floor() as usize;
        let mask = greedy_select(&s, &c, budget);
        let used: usize = mask.iter().zip(&c).filter(|(m, _)| **m).map(|(_, &w)| w).sum();
        prop_assert!(used <= budget);
    }

    #[test]
    fn greedy_is_invariant_to_positive_rescaling((s, c, k) in instance(), factor in 0.01f64..100.0) {
        let budget = k.floor() as usize;
        let scaled: Vec<f64> = s.iter().map(|x| x * factor).collect();
        prop_assert_eq!(greedy_select(&s, &c, budget), greedy_select(&scaled, &c, budget));
    }
}
