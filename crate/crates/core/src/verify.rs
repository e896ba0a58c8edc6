//! Self-checks that bind the fast implementations to their brute-force
//! counterparts. The CLI `verify` subcommand and the acceptance suite both
//! run these, so a regression shows up as a named failing check either way.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fixtures;
use crate::loss::{
    cross_entropy, hierarchical_loss, hierarchical_loss_grad, hxe_loss, Logits, Probs,
};
use crate::metrics::{coarsening_curve, evaluate, tree_wasserstein, tree_wasserstein_general};
use crate::oracle::{bfs_distance, minimize_expected_loss, ot_lp};
use crate::weighting::{exponential_weights, hxe_weights, WeightedHierarchy};

/// Result of one named check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// How much work each randomized check performs.
#[derive(Debug, Clone, Copy)]
pub struct VerifyScale {
    pub balance_trees: usize,
    pub scoring_targets: usize,
    pub equivalence_draws: usize,
    pub reduction_draws: usize,
    pub gradient_draws: usize,
    pub transport_pairs: usize,
}

impl VerifyScale {
    pub fn full() -> Self {
        VerifyScale {
            balance_trees: 200,
            scoring_targets: 20,
            equivalence_draws: 100,
            reduction_draws: 100,
            gradient_draws: 100,
            transport_pairs: 50,
        }
    }

    pub fn quick() -> Self {
        VerifyScale {
            balance_trees: 40,
            scoring_targets: 4,
            equivalence_draws: 20,
            reduction_draws: 20,
            gradient_draws: 20,
            transport_pairs: 10,
        }
    }
}

fn outcome(name: &'static str, run: Result<String>) -> CheckOutcome {
    match run {
        Ok(detail) => CheckOutcome {
            name,
            passed: true,
            detail,
        },
        Err(e) => CheckOutcome {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn fail(msg: String) -> Error {
    Error::VerificationFailed(msg)
}

/// One line per check: `ok name: detail` or `FAIL name: detail`.
pub fn format_outcome(o: &CheckOutcome) -> String {
    let status = if o.passed { "ok" } else { "FAIL" };
    format!("{status} {}: {}", o.name, o.detail)
}

/// Every root-to-leaf weight sum of the exponential scheme equals 1/2 within
/// 1e-12, across random trees and growth rates. With `corrupt` set, a
/// deliberately perturbed weighting is validated instead, so the check must
/// come back failing.
pub fn check_balance(scale: &VerifyScale, seed: u64, corrupt: bool) -> CheckOutcome {
    outcome("balance", (|| {
        if corrupt {
            let h = fixtures::seven_leaf();
            let mut weights = exponential_weights(&h, 1.0)?.weights().to_vec();
            weights[6] += 1e-6;
            let wh = WeightedHierarchy::from_weights(&h, weights, 0.5)?;
            let violations = wh.validate_balanced(1e-12);
            if violations.is_empty() {
                return Err(fail("injected corruption went undetected".into()));
            }
            let leaf = violations[0];
            return Err(fail(format!(
                "corrupted weighting: leaf {leaf} sums to {:.12}, expected 0.5",
                wh.cumulative_sum(leaf)
            )));
        }
        let rates = [0.25, 0.5, 0.9, 1.0, 1.2, 2.0, 5.0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB41A);
        let mut worst = 0.0f64;
        for _ in 0..scale.balance_trees {
            let h = fixtures::random_tree(&mut rng, 50);
            for &q in &rates {
                let wh = exponential_weights(&h, q)?;
                for leaf in 1..=h.leaf_count() {
                    worst = worst.max((wh.cumulative_sum(leaf) - 0.5).abs());
                }
                if let Some(&leaf) = wh.validate_balanced(1e-12).first() {
                    return Err(fail(format!(
                        "q={q}: leaf {leaf} sums to {:.15}",
                        wh.cumulative_sum(leaf)
                    )));
                }
            }
        }
        Ok(format!(
            "{} trees x {} rates, worst deviation {:.1e}",
            scale.balance_trees,
            rates.len(),
            worst
        ))
    })())
}

/// The seven-leaf example tree reproduces its closed-form weights at
/// q in {0.9, 1.0, 1.2} within 1e-12.
pub fn check_golden_weights() -> CheckOutcome {
    outcome("golden-weights", (|| {
        let h = fixtures::seven_leaf();
        let mut worst = 0.0f64;
        for &q in &[0.9, 1.0, 1.2] {
            let wh = exponential_weights(&h, q)?;
            let s2 = 2.0 * (1.0 + q);
            let s3 = 2.0 * (1.0 + q + q * q);
            let expected = [
                0.0,
                0.5,
                q / s2,
                q / s2,
                q / s2,
                q * (1.0 + q) / s3,
                q * q / s3,
                q * q / s3,
                1.0 / s2,
                q / s3,
                1.0 / s3,
            ];
            for (j, &want) in expected.iter().enumerate() {
                let gap = (wh.weight(j) - want).abs();
                worst = worst.max(gap);
                if gap > 1e-12 {
                    return Err(fail(format!(
                        "q={q}: node {j} weight {} differs from {want}",
                        wh.weight(j)
                    )));
                }
            }
        }
        Ok(format!("33 node weights at 3 rates, worst gap {worst:.1e}"))
    })())
}

fn ancestor_weight_sum(wh: &WeightedHierarchy, j: usize) -> Result<f64> {
    if j == 0 {
        return Ok(0.0);
    }
    Ok(wh
        .tree()
        .ancestors(j)?
        .iter()
        .map(|&a| wh.weight(a))
        .sum())
}

/// The four equivalent ways of writing the leaf-to-leaf tree distance,
/// recomputed from raw ancestor sets.
fn metric_forms(wh: &WeightedHierarchy, y: usize, y_hat: usize) -> Result<[f64; 4]> {
    let h = wh.tree();
    let lca = h.lca(y, y_hat)?;
    let common = ancestor_weight_sum(wh, lca)?;
    let sum_y = ancestor_weight_sum(wh, y)?;
    let sum_yh = ancestor_weight_sum(wh, y_hat)?;
    Ok([
        (sum_yh - common) + (sum_y - common),
        1.0 - 2.0 * common,
        2.0 * (sum_yh - common),
        2.0 * (sum_y - common),
    ])
}

/// All four closed forms of the tree distance agree with the shortest-path
/// oracle on every leaf pair, and the leaf-to-root distance is exactly 1/2
/// under the exponential scheme.
pub fn check_tree_metric(seed: u64) -> CheckOutcome {
    outcome("tree-metric", (|| {
        let trees = [
            fixtures::seven_leaf(),
            fixtures::flat(6),
            fixtures::chain(4),
            fixtures::perfect_binary(3),
            fixtures::random_tree_from_seed(seed ^ 0x7E11, 20),
        ];
        let mut worst = 0.0f64;
        let mut pairs = 0usize;
        for h in &trees {
            let mut weightings = Vec::new();
            for &q in &[0.9, 1.0, 1.2] {
                weightings.push((exponential_weights(h, q)?, true));
            }
            weightings.push((hxe_weights(h, 0.3, true)?, false));
            for (wh, exact) in &weightings {
                for leaf in 1..=h.leaf_count() {
                    let d = bfs_distance(wh, leaf, 0)?;
                    if *exact && d.to_bits() != 0.5f64.to_bits() {
                        return Err(fail(format!("leaf {leaf} to root is {d}, not 1/2")));
                    }
                    if (d - 0.5).abs() > 1e-12 {
                        return Err(fail(format!("leaf {leaf} to root is {d}")));
                    }
                }
                for y in 1..=h.leaf_count() {
                    for y_hat in 1..=h.leaf_count() {
                        let reference = bfs_distance(wh, y, y_hat)?;
                        let direct = wh.tree_distance(y, y_hat)?;
                        let mut gap = (direct - reference).abs();
                        for form in metric_forms(wh, y, y_hat)? {
                            gap = gap.max((form - reference).abs());
                        }
                        worst = worst.max(gap);
                        if gap > 1e-12 {
                            return Err(fail(format!(
                                "pair ({y},{y_hat}): forms deviate from shortest path by {gap:.2e}"
                            )));
                        }
                        pairs += 1;
                    }
                }
            }
        }
        Ok(format!(
            "{pairs} leaf pairs across {} trees, worst form gap {worst:.1e}",
            trees.len()
        ))
    })())
}

/// Minimizing the expected loss over the simplex recovers the target
/// distribution (sup-norm 1e-4) for every small tree shape and for the
/// seven-leaf example, under exponential and renormalized chained weights.
pub fn check_proper_scoring(scale: &VerifyScale, seed: u64) -> CheckOutcome {
    outcome("proper-scoring", (|| {
        let mut shapes = fixtures::enumerate_shapes(6);
        shapes.retain(|h| h.leaf_count() <= 4);
        shapes.push(fixtures::seven_leaf());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5C03);
        let mut worst = 0.0f64;
        let mut cases = 0usize;
        for h in &shapes {
            let k = h.leaf_count();
            let weightings = [
                exponential_weights(h, 0.9)?,
                exponential_weights(h, 1.2)?,
                hxe_weights(h, 0.1, true)?,
                hxe_weights(h, 0.5, true)?,
            ];
            for wh in &weightings {
                for _ in 0..scale.scoring_targets {
                    let target = fixtures::random_interior_target(&mut rng, k, 0.15);
                    let r = minimize_expected_loss(wh, &target, 1e-8)?;
                    if !r.converged {
                        return Err(fail(format!(
                            "minimization stalled at residual {:.2e} on a {k}-leaf tree",
                            r.gradient_norm_at_solution
                        )));
                    }
                    let sup = r
                        .minimizer
                        .as_slice()
                        .iter()
                        .zip(target.as_slice())
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0f64, f64::max);
                    worst = worst.max(sup);
                    if sup > 1e-4 {
                        return Err(fail(format!(
                            "minimizer misses the target by {sup:.2e} on a {k}-leaf tree"
                        )));
                    }
                    cases += 1;
                }
            }
        }
        Ok(format!(
            "{cases} minimizations over {} shapes, worst sup-norm gap {worst:.1e}",
            shapes.len()
        ))
    })())
}

/// With unit weights instead of balanced ones, the loss is not a proper
/// scoring rule: under a uniform 3-class target the minimizer sits at
/// (0.2, 0.4, 0.4), far from the target.
pub fn check_naive_counterexample() -> CheckOutcome {
    outcome("naive-counterexample", (|| {
        let h = fixtures::three_leaf();
        let wh = fixtures::unit_weights(&h);
        let target = Probs::uniform(3);
        let r = minimize_expected_loss(&wh, &target, 1e-8)?;
        let m = r.minimizer.as_slice();
        let expected = [0.2, 0.4, 0.4];
        let gap = m
            .iter()
            .zip(&expected)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if gap > 1e-4 {
            return Err(fail(format!(
                "unit-weight minimizer ({:.4}, {:.4}, {:.4}) is {gap:.2e} from (0.2, 0.4, 0.4)",
                m[0], m[1], m[2]
            )));
        }
        let from_target = m
            .iter()
            .map(|a| (a - 1.0 / 3.0).abs())
            .fold(0.0f64, f64::max);
        if from_target < 0.1 {
            return Err(fail(format!(
                "minimizer unexpectedly close to uniform ({from_target:.3})"
            )));
        }
        Ok(format!(
            "minimizer ({:.4}, {:.4}, {:.4}), {from_target:.3} away from the uniform target",
            m[0], m[1], m[2]
        ))
    })())
}

/// The chained conditional form of the loss equals the weighted form with
/// discount-derived weights, and every leaf's ancestor weights sum to
/// exp(-alpha).
pub fn check_hxe_equivalence(scale: &VerifyScale, seed: u64) -> CheckOutcome {
    outcome("hxe-equivalence", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x44E);
        let mut worst_loss = 0.0f64;
        let mut worst_sum = 0.0f64;
        for i in 0..scale.equivalence_draws {
            let (h, logits, y) =
                fixtures::random_loss_case(seed.wrapping_add(i as u64), 12);
            let alpha = rng.random_range(0.05..2.0);
            let direct = hxe_loss(&h, &logits, y, alpha)?;
            let wh = hxe_weights(&h, alpha, false)?;
            let weighted = hierarchical_loss(&wh, &logits, y)?;
            worst_loss = worst_loss.max((direct - weighted).abs());
            if (direct - weighted).abs() > 1e-10 {
                return Err(fail(format!(
                    "draw {i}: direct {direct} vs weighted {weighted}"
                )));
            }
            let want = (-alpha).exp();
            for leaf in 1..=h.leaf_count() {
                let gap = (wh.cumulative_sum(leaf) - want).abs();
                worst_sum = worst_sum.max(gap);
                if gap > 1e-12 {
                    return Err(fail(format!(
                        "draw {i}: leaf {leaf} ancestor sum off by {gap:.2e}"
                    )));
                }
            }
        }
        Ok(format!(
            "{} draws, worst loss gap {worst_loss:.1e}, worst ancestor-sum gap {worst_sum:.1e}",
            scale.equivalence_draws
        ))
    })())
}

/// On a flat tree the weighted loss is exactly half the cross-entropy.
pub fn check_flat_reduction(scale: &VerifyScale, seed: u64) -> CheckOutcome {
    outcome("flat-reduction", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF1A7);
        let mut worst = 0.0f64;
        for _ in 0..scale.reduction_draws {
            let k = rng.random_range(2..=10);
            let h = fixtures::flat(k);
            let wh = exponential_weights(&h, 1.0)?;
            let logits = fixtures::random_logits(&mut rng, k, 5.0);
            let y = rng.random_range(1..=k);
            let halved = hierarchical_loss(&wh, &logits, y)?;
            let ce = cross_entropy(&logits, y)?;
            let gap = (halved - 0.5 * ce).abs();
            worst = worst.max(gap);
            if gap > 1e-12 {
                return Err(fail(format!("k={k}: gap {gap:.2e}")));
            }
        }
        Ok(format!(
            "{} draws, worst gap {worst:.1e}",
            scale.reduction_draws
        ))
    })())
}

/// The analytic gradient matches central finite differences (step 1e-5)
/// within relative error 1e-5, including near-one-hot score vectors.
pub fn check_gradient(scale: &VerifyScale, seed: u64) -> CheckOutcome {
    outcome("gradient-check", (|| {
        let mut worst = 0.0f64;
        for i in 0..scale.gradient_draws {
            let (h, logits, y) =
                fixtures::random_loss_case(seed.wrapping_add(9000 + i as u64), 12);
            let q = [0.9, 1.2, 2.0][i % 3];
            let wh = exponential_weights(&h, q)?;
            let logits = if i % 4 == 3 {
                // saturate the true class to probe the vanishing-gradient end
                let mut values = logits.as_slice().to_vec();
                values[y - 1] += 15.0;
                Logits::new(values)?
            } else {
                logits
            };
            let grad = hierarchical_loss_grad(&wh, &logits, y)?;
            let fd = fixtures::central_difference(logits.as_slice(), 1e-5, |x| {
                hierarchical_loss(&wh, &Logits::new(x.to_vec()).unwrap(), y).unwrap()
            });
            let abs_gap = grad
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            let scale_ref = grad.iter().map(|g| g.abs()).fold(1.0f64, f64::max);
            let rel = abs_gap / scale_ref;
            worst = worst.max(rel);
            if rel > 1e-5 {
                return Err(fail(format!("draw {i}: relative gap {rel:.2e}")));
            }
        }
        Ok(format!(
            "{} draws, worst relative gap {worst:.1e}",
            scale.gradient_draws
        ))
    })())
}

/// The single-label transport form, the subtree-mass form, and the exact
/// min-cost-flow solution agree.
pub fn check_wasserstein(scale: &VerifyScale, seed: u64) -> CheckOutcome {
    outcome("wasserstein", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0077);
        let random = loop {
            let h = fixtures::random_tree(&mut rng, 12);
            if (2..=8).contains(&h.leaf_count()) {
                break h;
            }
        };
        let trees = [
            fixtures::seven_leaf(),
            fixtures::flat(5),
            fixtures::three_leaf(),
            fixtures::perfect_binary(3),
            random,
        ];
        let mut worst_general = 0.0f64;
        let mut worst_lp = 0.0f64;
        let mut pairs = 0usize;
        for (t, h) in trees.iter().enumerate() {
            let wh = exponential_weights(h, [0.9, 1.0, 1.2][t % 3])?;
            let k = h.leaf_count();
            let n = h.node_count();
            for _ in 0..scale.transport_pairs {
                let f = fixtures::random_interior_target(&mut rng, k, 0.05);
                let y = rng.random_range(1..=k);
                let closed = tree_wasserstein(&wh, &f, y)?;

                let mut mu = vec![0.0f64; n];
                mu[1..=k].copy_from_slice(f.as_slice());
                let mut nu = vec![0.0f64; n];
                nu[y] = 1.0;
                let general = tree_wasserstein_general(&wh, &mu, &nu)?;
                worst_general = worst_general.max((closed - general).abs());
                if (closed - general).abs() > 1e-12 {
                    return Err(fail(format!(
                        "tree {t}: closed {closed} vs subtree-mass {general}"
                    )));
                }

                let mut delta = vec![0.0f64; k];
                delta[y - 1] = 1.0;
                let lp = ot_lp(&wh, f.as_slice(), &delta)?;
                worst_lp = worst_lp.max((closed - lp).abs());
                if (closed - lp).abs() > 1e-8 {
                    return Err(fail(format!("tree {t}: closed {closed} vs flow {lp}")));
                }
                pairs += 1;
            }
        }
        Ok(format!(
            "{pairs} pairs on {} trees, worst gaps {worst_general:.1e} (subtree-mass) / {worst_lp:.1e} (flow)",
            trees.len()
        ))
    })())
}

/// Curve endpoints: the tau = 1/2 point reproduces the plain accuracy bit for
/// bit, the prepended tau -> 0 point is (0, 1, 1.0), and group counts never
/// decrease along the grid.
pub fn check_curve_endpoints(seed: u64) -> CheckOutcome {
    outcome("curve-endpoints", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC03E);
        for h in [fixtures::seven_leaf(), fixtures::flat(4)] {
            let wh = exponential_weights(&h, 1.0)?;
            let k = h.leaf_count();
            let preds: Vec<Probs> = (0..20)
                .map(|_| fixtures::random_interior_target(&mut rng, k, 0.02))
                .collect();
            let labels: Vec<usize> = (0..20).map(|_| rng.random_range(1..=k)).collect();
            let report = evaluate(&wh, &preds, &labels, 1)?;
            let curve = coarsening_curve(&wh, &preds, &labels, None)?;
            let first = &curve.points[0];
            if first.tau != 0.0 || first.group_count != 1 || first.accuracy != 1.0 {
                return Err(fail(format!(
                    "coarse endpoint is ({}, {}, {})",
                    first.tau, first.group_count, first.accuracy
                )));
            }
            let last = curve.points.last().unwrap();
            if last.tau != 0.5 || last.accuracy.to_bits() != report.accuracy.to_bits() {
                return Err(fail(format!(
                    "fine endpoint ({}, {}) disagrees with accuracy {}",
                    last.tau, last.accuracy, report.accuracy
                )));
            }
            if curve
                .points
                .windows(2)
                .any(|w| w[1].group_count < w[0].group_count)
            {
                return Err(fail("group count decreased along the grid".into()));
            }
        }
        Ok("endpoints and monotone group counts on 2 trees".into())
    })())
}

/// Run every check in a fixed order.
pub fn run_all(
    scale: &VerifyScale,
    seed: u64,
    include_naive: bool,
    corrupt: bool,
) -> Vec<CheckOutcome> {
    let mut outcomes = vec![
        check_balance(scale, seed, corrupt),
        check_golden_weights(),
        check_tree_metric(seed),
        check_proper_scoring(scale, seed),
        check_hxe_equivalence(scale, seed),
        check_flat_reduction(scale, seed),
        check_gradient(scale, seed),
        check_wasserstein(scale, seed),
        check_curve_endpoints(seed),
    ];
    if include_naive {
        outcomes.push(check_naive_counterexample());
    }
    outcomes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_scale_passes_everything() {
        let outcomes = run_all(&VerifyScale::quick(), 0, true, false);
        assert_eq!(outcomes.len(), 10);
        for o in &outcomes {
            assert!(o.passed, "{}", format_outcome(o));
        }
    }

    #[test]
    fn corruption_fails_the_balance_check() {
        let o = check_balance(&VerifyScale::quick(), 0, true);
        assert!(!o.passed);
        assert!(o.detail.contains("leaf"));
        let line = format_outcome(&o);
        assert!(line.starts_with("FAIL balance:"));
    }

    #[test]
    fn outcome_lines_are_stable() {
        let a = check_golden_weights();
        let b = check_golden_weights();
        assert_eq!(format_outcome(&a), format_outcome(&b));
        assert!(format_outcome(&a).starts_with("ok golden-weights:"));
    }

    #[test]
    fn metric_forms_match_the_direct_distance() {
        let h = fixtures::seven_leaf();
        let wh = exponential_weights(&h, 1.0).unwrap();
        let forms = metric_forms(&wh, 6, 7).unwrap();
        for form in forms {
            assert!((form - 1.0 / 3.0).abs() < 1e-15);
        }
    }
}
