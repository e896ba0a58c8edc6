//! Hierarchical classification losses over a weighted tree, with exact
//! analytic gradients. Superclass probabilities are always handled in the
//! log domain: per-group log-sum-exp minus the global log-sum-exp.

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::parallel::run_chunks;
use crate::textfmt::{csv_field, fmt_f64};
use crate::weighting::WeightedHierarchy;

/// Floor applied to aggregated probabilities before taking a log in the
/// probability-domain paths (expected loss); keeps 0 * log(0) finite.
const PROB_FLOOR: f64 = 1e-300;

/// Pre-softmax scores, one per leaf class; entry `k-1` belongs to leaf `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    values: Vec<f64>,
}

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Logits> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("empty logit vector".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("logit {bad}")));
        }
        Ok(Logits { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// A point on the probability simplex; entry `k-1` belongs to leaf `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Probs {
    values: Vec<f64>,
}

impl Probs {
    pub fn new(values: Vec<f64>) -> Result<Probs> {
        if values.is_empty() {
            return Err(Error::InvalidDistribution("empty vector".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidDistribution(format!("entry {bad}")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDistribution(format!("mass sums to {sum}")));
        }
        Ok(Probs { values })
    }

    pub fn uniform(k: usize) -> Probs {
        Probs {
            values: vec![1.0 / k as f64; k],
        }
    }

    pub fn one_hot(k: usize, leaf: usize) -> Result<Probs> {
        if leaf == 0 || leaf > k {
            return Err(Error::UnknownNode(leaf));
        }
        let mut values = vec![0.0; k];
        values[leaf - 1] = 1.0;
        Ok(Probs { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Leaf membership of every node's subtree, indexed by node id.
#[derive(Debug, Clone)]
pub struct AggregationMap {
    sets: Vec<Vec<usize>>,
}

impl AggregationMap {
    /// Leaves under node `j`, ascending.
    pub fn members(&self, j: usize) -> &[usize] {
        &self.sets[j]
    }

    pub fn node_count(&self) -> usize {
        self.sets.len()
    }
}

/// Collect each node's descendant leaves bottom-up in one sweep.
pub fn build_aggregation(h: &Hierarchy) -> AggregationMap {
    let n = h.node_count();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&j| h.height(j).unwrap());
    let mut sets: Vec<Vec<usize>> = vec![Vec::new(); n];
    for j in order {
        if h.is_leaf(j) {
            sets[j] = vec![j];
        } else {
            let mut merged: Vec<usize> = h
                .children(j)
                .iter()
                .flat_map(|&c| sets[c].iter().copied())
                .collect();
            merged.sort_unstable();
            sets[j] = merged;
        }
    }
    AggregationMap { sets }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|&v| (v - m).exp()).sum();
    m + sum.ln()
}

/// Log-sum-exp over the logits of the given leaf ids.
fn log_sum_exp_members(logits: &[f64], members: &[usize]) -> f64 {
    let m = members
        .iter()
        .map(|&k| logits[k - 1])
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = members.iter().map(|&k| (logits[k - 1] - m).exp()).sum();
    m + sum.ln()
}

/// Numerically stable softmax.
pub fn softmax(logits: &Logits) -> Probs {
    let x = logits.as_slice();
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut values: Vec<f64> = x.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = values.iter().sum();
    for v in &mut values {
        *v /= sum;
    }
    Probs { values }
}

fn check_dims(wh_leaves: usize, logits: &Logits) -> Result<()> {
    if logits.len() != wh_leaves {
        return Err(Error::DimensionMismatch {
            expected: wh_leaves,
            actual: logits.len(),
        });
    }
    Ok(())
}

/// Weighted tree loss of a prediction for leaf label `y`: the weighted sum,
/// over the label's ancestor line, of the log-probability mass assigned to
/// each ancestor's leaf set, negated.
pub fn hierarchical_loss(wh: &WeightedHierarchy, logits: &Logits, y: usize) -> Result<f64> {
    let h = wh.tree();
    h.check_leaf(y)?;
    check_dims(h.leaf_count(), logits)?;
    let x = logits.as_slice();
    let agg = wh.aggregation();
    let lse_all = log_sum_exp(x);
    let mut acc = 0.0;
    for j in h.walk_up(y) {
        let lse_j = log_sum_exp_members(x, agg.members(j));
        acc += wh.weight(j) * (lse_j - lse_all);
    }
    Ok((-acc).max(0.0))
}

/// Exact gradient of `hierarchical_loss` with respect to the logits:
/// `d/dx_m = f_m * W - sum over path nodes containing m of w_j * f_m / F_j`,
/// where `W` is the total path weight and `F_j` the node's leaf-set mass.
pub fn hierarchical_loss_grad(
    wh: &WeightedHierarchy,
    logits: &Logits,
    y: usize,
) -> Result<Vec<f64>> {
    let h = wh.tree();
    h.check_leaf(y)?;
    check_dims(h.leaf_count(), logits)?;
    let x = logits.as_slice();
    let agg = wh.aggregation();
    let lse_all = log_sum_exp(x);
    let path_weight: f64 = h.walk_up(y).map(|j| wh.weight(j)).sum();
    let mut grad: Vec<f64> = x.iter().map(|&v| (v - lse_all).exp() * path_weight).collect();
    for j in h.walk_up(y) {
        let members = agg.members(j);
        let lse_j = log_sum_exp_members(x, members);
        for &k in members {
            grad[k - 1] -= wh.weight(j) * (x[k - 1] - lse_j).exp();
        }
    }
    Ok(grad)
}

/// Unweighted ancestor loss: every node on the label's path counts with
/// weight one. Kept for demonstrations; it is not a proper scoring rule.
pub fn naive_loss(h: &Hierarchy, logits: &Logits, y: usize) -> Result<f64> {
    h.check_leaf(y)?;
    check_dims(h.leaf_count(), logits)?;
    let x = logits.as_slice();
    let agg = build_aggregation(h);
    let lse_all = log_sum_exp(x);
    let mut acc = 0.0;
    for j in h.walk_up(y) {
        acc += log_sum_exp_members(x, agg.members(j)) - lse_all;
    }
    Ok((-acc).max(0.0))
}

/// Depth-discounted conditional log-likelihood along the label's path: each
/// step pays `exp(-alpha * depth)` times the log of the conditional mass of
/// the node given its parent (the root conditions on total mass 1).
pub fn hxe_loss(h: &Hierarchy, logits: &Logits, y: usize, alpha: f64) -> Result<f64> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "discount strength alpha must be finite and positive, got {alpha}"
        )));
    }
    h.check_leaf(y)?;
    check_dims(h.leaf_count(), logits)?;
    let x = logits.as_slice();
    let agg = build_aggregation(h);
    let lse_all = log_sum_exp(x);
    let mut acc = 0.0;
    for j in h.walk_up(y) {
        let lse_j = log_sum_exp_members(x, agg.members(j));
        let lse_parent = match h.parent(j) {
            Some(0) | None => lse_all,
            Some(p) => log_sum_exp_members(x, agg.members(p)),
        };
        let d = h.depth(j)? as f64;
        acc += (-alpha * d).exp() * (lse_j - lse_parent);
    }
    Ok((-acc).max(0.0))
}

/// Plain cross-entropy of the label under the softmax of the logits.
pub fn cross_entropy(logits: &Logits, y: usize) -> Result<f64> {
    let x = logits.as_slice();
    if y == 0 || y > x.len() {
        return Err(Error::NotALeaf(y));
    }
    Ok((log_sum_exp(x) - x[y - 1]).max(0.0))
}

/// Gradient of `cross_entropy`: softmax minus the one-hot label.
pub fn cross_entropy_grad(logits: &Logits, y: usize) -> Result<Vec<f64>> {
    let x = logits.as_slice();
    if y == 0 || y > x.len() {
        return Err(Error::NotALeaf(y));
    }
    let lse = log_sum_exp(x);
    let mut grad: Vec<f64> = x.iter().map(|&v| (v - lse).exp()).collect();
    grad[y - 1] -= 1.0;
    Ok(grad)
}

/// Expected tree loss of prediction `f` when labels are drawn from `target`:
/// sums `-w_j * target-mass(j) * log(f-mass(j))` over every non-root node.
pub fn expected_loss(wh: &WeightedHierarchy, f: &Probs, target: &Probs) -> Result<f64> {
    let h = wh.tree();
    let k = h.leaf_count();
    for p in [f, target] {
        if p.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: p.len(),
            });
        }
    }
    let agg = wh.aggregation();
    let fv = f.as_slice();
    let tv = target.as_slice();
    let mut acc = 0.0;
    for j in 1..h.node_count() {
        let members = agg.members(j);
        let f_mass: f64 = members.iter().map(|&m| fv[m - 1]).sum();
        let t_mass: f64 = members.iter().map(|&m| tv[m - 1]).sum();
        acc += wh.weight(j) * t_mass * f_mass.max(PROB_FLOOR).ln();
    }
    Ok((-acc).max(0.0))
}

/// Gradient of `expected_loss` in `f`:
/// `d/df_m = -sum over nodes containing m of w_j * target-mass(j) / f-mass(j)`.
pub fn expected_loss_grad(wh: &WeightedHierarchy, f: &Probs, target: &Probs) -> Result<Vec<f64>> {
    let h = wh.tree();
    let k = h.leaf_count();
    for p in [f, target] {
        if p.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: p.len(),
            });
        }
    }
    let agg = wh.aggregation();
    let fv = f.as_slice();
    let tv = target.as_slice();
    let mut grad = vec![0.0; k];
    for j in 1..h.node_count() {
        let members = agg.members(j);
        let f_mass: f64 = members.iter().map(|&m| fv[m - 1]).sum();
        let t_mass: f64 = members.iter().map(|&m| tv[m - 1]).sum();
        let coeff = wh.weight(j) * t_mass / f_mass.max(PROB_FLOOR);
        for &m in members {
            grad[m - 1] -= coeff;
        }
    }
    Ok(grad)
}

/// Mean hierarchical loss over a batch, optionally split across threads.
/// Per-chunk sums are combined in chunk order, so results are reproducible
/// for a fixed thread count.
pub fn batch_hierarchical_loss(
    wh: &WeightedHierarchy,
    batch: &[Logits],
    labels: &[usize],
    threads: usize,
) -> Result<f64> {
    if batch.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: batch.len(),
            actual: labels.len(),
        });
    }
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let partials = run_chunks(batch.len(), threads, |range| -> Result<f64> {
        let mut sum = 0.0;
        for i in range {
            sum += hierarchical_loss(wh, &batch[i], labels[i])?;
        }
        Ok(sum)
    });
    let mut total = 0.0;
    for p in partials {
        total += p?;
    }
    Ok(total / batch.len() as f64)
}

/// Per-sample table: `sample_id,label,loss,predicted,correct`.
pub fn format_loss_report(
    wh: &WeightedHierarchy,
    batch: &[Logits],
    labels: &[usize],
    full_precision: bool,
) -> Result<String> {
    if batch.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: batch.len(),
            actual: labels.len(),
        });
    }
    let h = wh.tree();
    let mut out = String::from("sample_id,label,loss,predicted,correct\n");
    for (i, (logits, &label)) in batch.iter().zip(labels).enumerate() {
        let loss = hierarchical_loss(wh, logits, label)?;
        let pred = argmax_leaf(logits.as_slice());
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            i,
            csv_field(h.original_id(label)),
            fmt_f64(loss, full_precision),
            csv_field(h.original_id(pred)),
            u8::from(pred == label),
        ));
    }
    Ok(out)
}

/// Leaf id with the highest score; ties go to the lowest id.
pub fn argmax_leaf(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = i;
        }
    }
    best + 1
}
