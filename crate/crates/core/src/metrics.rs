//! Hierarchical evaluation: accuracy, mean LCA-height distance,
//! tree-Wasserstein distance of predicted distributions, and accuracy
//! curves under progressive label coarsening.

use crate::error::{Error, Result};
use crate::hierarchy::{prune, tau_grid, Hierarchy};
use crate::loss::{argmax_leaf, Probs};
use crate::parallel::run_chunks;
use crate::textfmt::fmt_f64;
use crate::weighting::WeightedHierarchy;

/// Aggregate quality of a batch of predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub accuracy: f64,
    pub mean_hier_distance: f64,
    pub mean_wasserstein: f64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub tau: f64,
    pub group_count: usize,
    pub accuracy: f64,
}

/// Accuracy as a function of the coarsening threshold, starting at the
/// conceptual single-group point (0, 1, 1.0) and ending at the full tree.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseningCurve {
    pub points: Vec<CurvePoint>,
}

/// Height of the lowest common ancestor of two leaves: 0 means equal, the
/// tree height means the mistake is as coarse as possible.
pub fn hier_distance(h: &Hierarchy, y: usize, y_hat: usize) -> Result<usize> {
    h.check_leaf(y)?;
    h.check_leaf(y_hat)?;
    h.height(h.lca(y, y_hat)?)
}

/// Transport cost of moving the predicted mass to the label: the sum of
/// `f_k` times the leaf metric from `y` to `k`.
pub fn tree_wasserstein(wh: &WeightedHierarchy, f: &Probs, y: usize) -> Result<f64> {
    let h = wh.tree();
    h.check_leaf(y)?;
    if f.len() != h.leaf_count() {
        return Err(Error::DimensionMismatch {
            expected: h.leaf_count(),
            actual: f.len(),
        });
    }
    let fv = f.as_slice();
    let mut acc = 0.0;
    for k in 1..=h.leaf_count() {
        if k != y && fv[k - 1] != 0.0 {
            acc += fv[k - 1] * wh.tree_distance(y, k)?;
        }
    }
    Ok(acc)
}

/// Transport distance between two distributions over *nodes*: the weighted
/// sum over nodes of the absolute difference in subtree mass.
pub fn tree_wasserstein_general(
    wh: &WeightedHierarchy,
    mu: &[f64],
    nu: &[f64],
) -> Result<f64> {
    let h = wh.tree();
    let n = h.node_count();
    let sub_mu = subtree_masses(h, mu)?;
    let sub_nu = subtree_masses(h, nu)?;
    let mut acc = 0.0;
    for j in 1..n {
        acc += wh.weight(j) * (sub_mu[j] - sub_nu[j]).abs();
    }
    Ok(acc)
}

fn subtree_masses(h: &Hierarchy, dist: &[f64]) -> Result<Vec<f64>> {
    let n = h.node_count();
    if dist.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: dist.len(),
        });
    }
    let mut total = 0.0;
    for &v in dist {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidDistribution(format!("node mass {v}")));
        }
        total += v;
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("mass sums to {total}")));
    }
    // children have strictly smaller height, so height order is bottom-up
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&j| h.height(j).unwrap());
    let mut sub = dist.to_vec();
    for j in order {
        for &c in h.children(j) {
            sub[j] += sub[c];
        }
    }
    Ok(sub)
}

/// Score a batch of predicted distributions against leaf labels. Per-chunk
/// partial sums are combined in chunk order; counts are integers, so
/// accuracy and the LCA-height mean do not depend on the thread count.
pub fn evaluate(
    wh: &WeightedHierarchy,
    predictions: &[Probs],
    labels: &[usize],
    threads: usize,
) -> Result<EvaluationReport> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: predictions.len(),
            actual: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::InvalidParameter("no samples to evaluate".into()));
    }
    let n = predictions.len();
    let partials = run_chunks(n, threads, |range| -> Result<(u64, u64, f64)> {
        let mut correct = 0u64;
        let mut height_sum = 0u64;
        let mut transport_sum = 0.0f64;
        for i in range {
            let label = labels[i];
            let pred = argmax_leaf(predictions[i].as_slice());
            correct += u64::from(pred == label);
            height_sum += hier_distance(wh.tree(), label, pred)? as u64;
            transport_sum += tree_wasserstein(wh, &predictions[i], label)?;
        }
        Ok((correct, height_sum, transport_sum))
    });
    let mut correct = 0u64;
    let mut height_sum = 0u64;
    let mut transport_sum = 0.0f64;
    for p in partials {
        let (c, hs, ts) = p?;
        correct += c;
        height_sum += hs;
        transport_sum += ts;
    }
    Ok(EvaluationReport {
        accuracy: correct as f64 / n as f64,
        mean_hier_distance: height_sum as f64 / n as f64,
        mean_wasserstein: transport_sum / n as f64,
        sample_count: n,
    })
}

/// Accuracy after collapsing labels at each threshold of `grid` (default:
/// every threshold where the partition changes). A sample is correct when
/// the group with the most predicted mass is the label's group; ties go to
/// the group containing the lowest leaf id.
pub fn coarsening_curve(
    wh: &WeightedHierarchy,
    predictions: &[Probs],
    labels: &[usize],
    grid: Option<&[f64]>,
) -> Result<CoarseningCurve> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: predictions.len(),
            actual: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::InvalidParameter("no samples to evaluate".into()));
    }
    let k = wh.tree().leaf_count();
    for p in predictions {
        if p.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: p.len(),
            });
        }
    }
    let default_grid;
    let taus: &[f64] = match grid {
        Some(g) => g,
        None => {
            default_grid = tau_grid(wh);
            &default_grid
        }
    };
    for &t in taus {
        if !(t > 0.0 && t <= 0.5) {
            return Err(Error::InvalidParameter(format!(
                "curve threshold must lie in (0, 1/2], got {t}"
            )));
        }
    }
    let mut sorted: Vec<f64> = taus.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();

    let mut points = vec![CurvePoint {
        tau: 0.0,
        group_count: 1,
        accuracy: 1.0,
    }];
    for &tau in &sorted {
        let partition = prune(wh, tau)?;
        let assign = partition.group_assignment();
        let groups = &partition.groups;
        let mut correct = 0usize;
        for (pred, &label) in predictions.iter().zip(labels) {
            let fv = pred.as_slice();
            let mut best_group = 0;
            let mut best_mass = f64::NEG_INFINITY;
            for (gi, group) in groups.iter().enumerate() {
                let mass: f64 = group.leaves.iter().map(|&l| fv[l - 1]).sum();
                if mass > best_mass {
                    best_mass = mass;
                    best_group = gi;
                }
            }
            let true_group = *assign
                .get(label)
                .filter(|&&g| g != usize::MAX)
                .ok_or(Error::NotALeaf(label))?;
            correct += usize::from(best_group == true_group);
        }
        points.push(CurvePoint {
            tau,
            group_count: groups.len(),
            accuracy: correct as f64 / predictions.len() as f64,
        });
    }
    Ok(CoarseningCurve { points })
}

/// Render a curve as `tau,group_count,accuracy` rows.
pub fn format_curve_csv(curve: &CoarseningCurve, full_precision: bool) -> String {
    let mut out = String::from("tau,group_count,accuracy\n");
    for p in &curve.points {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_f64(p.tau, full_precision),
            p.group_count,
            fmt_f64(p.accuracy, full_precision),
        ));
    }
    out
}

/// Render a report as a small JSON object with fixed key order.
pub fn format_report_json(report: &EvaluationReport, full_precision: bool) -> String {
    format!(
        "{{\n  \"accuracy\": {},\n  \"mean_hier_distance\": {},\n  \"mean_wasserstein\": {},\n  \"sample_count\": {}\n}}\n",
        fmt_f64(report.accuracy, full_precision),
        fmt_f64(report.mean_hier_distance, full_precision),
        fmt_f64(report.mean_wasserstein, full_precision),
        report.sample_count,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::loss::softmax;
    use crate::weighting::exponential_weights;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lca_height_examples() {
        let h = fixtures::seven_leaf();
        assert_eq!(hier_distance(&h, 6, 7).unwrap(), 1);
        assert_eq!(hier_distance(&h, 1, 5).unwrap(), 3);
        for k in 1..=7 {
            assert_eq!(hier_distance(&h, k, k).unwrap(), 0);
        }
        assert!(hier_distance(&h, 8, 1).is_err());
    }

    #[test]
    fn wasserstein_examples() {
        let h = fixtures::seven_leaf();
        let wh = exponential_weights(&h, 1.0).unwrap();

        let hot = Probs::one_hot(7, 4).unwrap();
        assert_eq!(tree_wasserstein(&wh, &hot, 4).unwrap(), 0.0);

        let mut split = vec![0.0; 7];
        split[5] = 0.5;
        split[6] = 0.5;
        let split = Probs::new(split).unwrap();
        let w = tree_wasserstein(&wh, &split, 6).unwrap();
        assert!((w - 1.0 / 6.0).abs() <= 1e-12);
    }

    #[test]
    fn general_form_examples() {
        let h = fixtures::seven_leaf();
        let wh = exponential_weights(&h, 1.0).unwrap();
        let n = h.node_count();

        let mut mu = vec![0.0; n];
        mu[3] = 1.0;
        assert_eq!(tree_wasserstein_general(&wh, &mu, &mu).unwrap(), 0.0);

        for a in 1..=7usize {
            for b in 1..=7usize {
                let mut da = vec![0.0; n];
                let mut db = vec![0.0; n];
                da[a] = 1.0;
                db[b] = 1.0;
                let general = tree_wasserstein_general(&wh, &da, &db).unwrap();
                let direct = wh.tree_distance(a, b).unwrap();
                assert!((general - direct).abs() <= 1e-12);
            }
        }

        // mass on internal nodes is allowed
        let mut m9 = vec![0.0; n];
        m9[9] = 1.0;
        let mut m10 = vec![0.0; n];
        m10[10] = 1.0;
        let d = tree_wasserstein_general(&wh, &m9, &m10).unwrap();
        assert!((d - wh.weight(9)).abs() <= 1e-15);

        let bad = vec![0.3; n];
        assert!(tree_wasserstein_general(&wh, &bad, &mu).is_err());
    }

    #[test]
    fn evaluate_perfect_predictions() {
        let h = fixtures::seven_leaf();
        let wh = exponential_weights(&h, 0.9).unwrap();
        let labels: Vec<usize> = (1..=7).collect();
        let preds: Vec<Probs> = labels
            .iter()
            .map(|&y| Probs::one_hot(7, y).unwrap())
            .collect();
        let report = evaluate(&wh, &preds, &labels, 1).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.mean_hier_distance, 0.0);
        assert_eq!(report.mean_wasserstein, 0.0);
        assert_eq!(report.sample_count, 7);
    }

    #[test]
    fn evaluate_two_sample_example() {
        let h = fixtures::seven_leaf();
        let wh = exponential_weights(&h, 1.0).unwrap();
        let labels = vec![6, 1];
        let preds = vec![Probs::one_hot(7, 7).unwrap(), Probs::one_hot(7, 1).unwrap()];
        let report = evaluate(&wh, &preds, &labels, 1).unwrap();
        assert_eq!(report.accuracy, 0.5);
        assert_eq!(report.mean_hier_distance, 0.5);
        assert!((report.mean_wasserstein - 1.0 / 6.0).abs() <= 1e-12);
    }

    #[test]
    fn flat_tree_distance_identity() {
        let h = fixtures::flat(5);
        let wh = exponential_weights(&h, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels: Vec<usize> = (0..40).map(|i| i % 5 + 1).collect();
        let preds: Vec<Probs> = (0..40)
            .map(|_| softmax(&fixtures::random_logits(&mut rng, 5, 2.0)))
            .collect();
        let report = evaluate(&wh, &preds, &labels, 1).unwrap();
        assert!((report.mean_hier_distance - (1.0 - report.accuracy)).abs() <= 1e-12);
    }

    #[test]
    fn evaluate_rejects_bad_input() {
        let h = fixtures::flat(2);
        let wh = exponential_weights(&h, 1.0).unwrap();
        let preds = vec![Probs::uniform(2)];
        assert!(evaluate(&wh, &preds, &[1, 2], 1).is_err());
        assert!(evaluate(&wh, &[], &[], 1).is_err());
    }

    #[test]
    fn curve_on_seven_leaf() {
        let h = fixtures::seven_leaf();
        let wh = exponential_weights(&h, 1.0).unwrap();
        // prediction spread over leaves 2..4 while the label sits at 6
        let mut spread = vec![0.0; 7];
        for k in 2..=4 {
            spread[k - 1] = 1.0 / 3.0;
        }
        let preds = vec![Probs::new(spread).unwrap()];
        let labels = vec![6];
        let curve = coarsening_curve(&wh, &preds, &labels, None).unwrap();

        assert_eq!(
            curve.points[0],
            CurvePoint { tau: 0.0, group_count: 1, accuracy: 1.0 }
        );
        let last = curve.points.last().unwrap();
        assert_eq!(last.tau, 0.5);
        assert_eq!(last.group_count, 7);
        assert_eq!(last.accuracy, 0.0);
        for w in curve.points.windows(2) {
            assert!(w[0].tau < w[1].tau);
            assert!(w[0].group_count <= w[1].group_count);
        }
        // at tau = 0.2 the partition is {1},{2,3,4},{5},{6,7}: the mass sits
        // in the second group while the label is in the fourth
        let mid = coarsening_curve(&wh, &preds, &labels, Some(&[0.2])).unwrap();
        assert_eq!(mid.points[1].group_count, 4);
        assert_eq!(mid.points[1].accuracy, 0.0);
    }

    #[test]
    fn curve_final_point_equals_fine_accuracy_exactly() {
        let h = fixtures::seven_leaf();
        let wh = exponential_weights(&h, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let labels: Vec<usize> = (0..25).map(|i| i % 7 + 1).collect();
        let preds: Vec<Probs> = (0..25)
            .map(|_| softmax(&fixtures::random_logits(&mut rng, 7, 4.0)))
            .collect();
        let report = evaluate(&wh, &preds, &labels, 1).unwrap();
        let curve = coarsening_curve(&wh, &preds, &labels, None).unwrap();
        assert_eq!(curve.points.last().unwrap().accuracy, report.accuracy);
    }

    #[test]
    fn curve_csv_layout() {
        let curve = CoarseningCurve {
            points: vec![
                CurvePoint { tau: 0.0, group_count: 1, accuracy: 1.0 },
                CurvePoint { tau: 0.5, group_count: 3, accuracy: 0.25 },
            ],
        };
        let csv = format_curve_csv(&curve, false);
        assert_eq!(csv, "tau,group_count,accuracy\n0.000000,1,1.000000\n0.500000,3,0.250000\n");
    }

    #[test]
    fn report_json_layout() {
        let report = EvaluationReport {
            accuracy: 0.5,
            mean_hier_distance: 0.5,
            mean_wasserstein: 1.0 / 6.0,
            sample_count: 2,
        };
        let text = format_report_json(&report, false);
        assert!(text.contains("\"accuracy\": 0.500000"));
        assert!(text.contains("\"mean_wasserstein\": 0.166667"));
        assert!(text.contains("\"sample_count\": 2"));
        assert!(text.ends_with("}\n"));
    }

    proptest! {
        #[test]
        fn order_invariance_of_evaluate(seed in 0u64..80) {
            let h = fixtures::seven_leaf();
            let wh = exponential_weights(&h, 1.2).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 17;
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(1..=7)).collect();
            let preds: Vec<Probs> = (0..n)
                .map(|_| softmax(&fixtures::random_logits(&mut rng, 7, 3.0)))
                .collect();
            let fwd = evaluate(&wh, &preds, &labels, 1).unwrap();
            let rev_preds: Vec<Probs> = preds.iter().rev().cloned().collect();
            let rev_labels: Vec<usize> = labels.iter().rev().copied().collect();
            let rev = evaluate(&wh, &rev_preds, &rev_labels, 1).unwrap();
            prop_assert_eq!(fwd.accuracy, rev.accuracy);
            prop_assert_eq!(fwd.mean_hier_distance, rev.mean_hier_distance);
            prop_assert!((fwd.mean_wasserstein - rev.mean_wasserstein).abs() <= 1e-12);
        }

        #[test]
        fn transport_lower_bound(seed in 0u64..120) {
            let (h, x, y) = fixtures::random_loss_case(seed, 10);
            let wh = exponential_weights(&h, 0.9).unwrap();
            let f = softmax(&x);
            let k = h.leaf_count();
            if k < 2 { return Ok(()); }
            let w = tree_wasserstein(&wh, &f, y).unwrap();
            let nearest = (1..=k)
                .filter(|&c| c != y)
                .map(|c| wh.tree_distance(y, c).unwrap())
                .fold(f64::INFINITY, f64::min);
            let off_mass = 1.0 - f.as_slice()[y - 1];
            prop_assert!(w >= off_mass * nearest - 1e-12);
        }

        #[test]
        fn general_and_leaf_forms_agree(seed in 0u64..120) {
            let (h, x, y) = fixtures::random_loss_case(seed, 12);
            let wh = exponential_weights(&h, 1.1).unwrap();
            let f = softmax(&x);
            let n = h.node_count();
            let mut mu = vec![0.0; n];
            for (k, &p) in f.as_slice().iter().enumerate() {
                mu[k + 1] = p;
            }
            let mut nu = vec![0.0; n];
            nu[y] = 1.0;
            let general = tree_wasserstein_general(&wh, &mu, &nu).unwrap();
            let leaf_form = tree_wasserstein(&wh, &f, y).unwrap();
            prop_assert!((general - leaf_form).abs() <= 1e-12);
        }
    }
}
