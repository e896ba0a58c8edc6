//! Node weightings over a hierarchy: the exponential scheme, the
//! entropy-discount scheme, user-supplied weights, balance validation, and
//! the induced tree metric between leaves.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::loss::{build_aggregation, AggregationMap};
use crate::textfmt::{csv_field, fmt_f64};

/// A hierarchy together with one nonnegative weight per node.
///
/// The root weight is always zero. A weighting is *balanced* when every
/// root-to-leaf weight sum equals `balance_constant`; the constructors here
/// produce balanced weightings with constant 1/2 unless stated otherwise.
#[derive(Debug, Clone)]
pub struct WeightedHierarchy {
    tree: Hierarchy,
    weights: Vec<f64>,
    balance_constant: f64,
    /// cumulative[j] = sum of weights on the path root..=j (0 at the root)
    cumulative: Vec<f64>,
    aggregation: OnceLock<AggregationMap>,
}

impl WeightedHierarchy {
    /// Wrap explicit per-node weights. The weights are not required to be
    /// balanced; use `validate_balanced` to check.
    pub fn from_weights(
        tree: &Hierarchy,
        weights: Vec<f64>,
        balance_constant: f64,
    ) -> Result<WeightedHierarchy> {
        if weights.len() != tree.node_count() {
            return Err(Error::DimensionMismatch {
                expected: tree.node_count(),
                actual: weights.len(),
            });
        }
        if weights[0] != 0.0 {
            return Err(Error::InvalidParameter(format!(
                "root weight must be 0, got {}",
                weights[0]
            )));
        }
        for (j, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "weight of node {j} must be finite and nonnegative, got {w}"
                )));
            }
        }
        if !(balance_constant.is_finite() && balance_constant > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "balance constant must be positive, got {balance_constant}"
            )));
        }
        let cumulative = cumulative_sums(tree, &weights);
        Ok(WeightedHierarchy {
            tree: tree.clone(),
            weights,
            balance_constant,
            cumulative,
            aggregation: OnceLock::new(),
        })
    }

    pub fn tree(&self) -> &Hierarchy {
        &self.tree
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    /// Sum of weights on the path from the root down to `j` inclusive.
    pub fn cumulative_sum(&self, j: usize) -> f64 {
        self.cumulative[j]
    }

    pub fn balance_constant(&self) -> f64 {
        self.balance_constant
    }

    /// Leaf members of every node's subtree, cached on first use.
    pub fn aggregation(&self) -> &AggregationMap {
        self.aggregation.get_or_init(|| build_aggregation(&self.tree))
    }

    /// Leaves whose root-to-leaf weight sum strays from the balance constant
    /// by more than `tol`. Empty means balanced.
    pub fn validate_balanced(&self, tol: f64) -> Vec<usize> {
        (1..=self.tree.leaf_count())
            .filter(|&k| (self.cumulative[k] - self.balance_constant).abs() > tol)
            .collect()
    }

    /// Metric distance between two leaves: 1 minus twice the weight shared
    /// by both ancestor paths (the sum over ancestors of the LCA, where the
    /// root contributes nothing).
    pub fn tree_distance(&self, y: usize, y_hat: usize) -> Result<f64> {
        self.tree.check_leaf(y)?;
        self.tree.check_leaf(y_hat)?;
        if y == y_hat {
            return Ok(0.0);
        }
        let meet = self.tree.lca(y, y_hat)?;
        Ok(1.0 - 2.0 * self.cumulative[meet])
    }
}

fn cumulative_sums(tree: &Hierarchy, weights: &[f64]) -> Vec<f64> {
    let mut cum = vec![0.0; tree.node_count()];
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for &c in tree.children(u) {
            cum[c] = cum[u] + weights[c];
            queue.push_back(c);
        }
    }
    cum
}

/// Exponentially discounted weights with ratio `q`, assigned top-down.
///
/// Each node takes a share of the mass remaining on its path, chosen so that
/// every root-to-leaf sum is exactly 1/2: the share factor is
/// `(1-q) / (1-q^(h+1))` for a node of height `h`, with the `q = 1` limit
/// `1/(h+1)`. Leaves (height 0) take the entire remainder, which keeps the
/// balance exact in floating point. Larger `q` pushes weight toward the
/// leaves; `q = 0` puts everything on the root's children.
pub fn exponential_weights(h: &Hierarchy, q: f64) -> Result<WeightedHierarchy> {
    if !q.is_finite() || q < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "weight ratio q must be finite and nonnegative, got {q}"
        )));
    }
    let n = h.node_count();
    let mut weights = vec![0.0; n];
    let mut cum = vec![0.0; n];
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for &c in h.children(u) {
            let height = h.height(c)?;
            let factor = share_factor(q, height);
            weights[c] = (0.5 - cum[u]) * factor;
            cum[c] = cum[u] + weights[c];
            queue.push_back(c);
        }
    }
    Ok(WeightedHierarchy {
        tree: h.clone(),
        weights,
        balance_constant: 0.5,
        cumulative: cum,
        aggregation: OnceLock::new(),
    })
}

/// Share of remaining path mass taken by a node of height `height`.
fn share_factor(q: f64, height: usize) -> f64 {
    if height == 0 {
        1.0
    } else if q == 1.0 {
        1.0 / (height as f64 + 1.0)
    } else if q > 1.0 {
        // same value as (1-q)/(1-q^(h+1)), stable when q^(h+1) overflows
        (q - 1.0) / (q.powi(height as i32 + 1) - 1.0)
    } else {
        (1.0 - q) / (1.0 - q.powi(height as i32 + 1))
    }
}

/// Depth-discounted weights `exp(-alpha * depth)` arranged so that deeper
/// mistakes cost less: a leaf at depth `d` carries `exp(-alpha*d)` and an
/// internal node the difference `exp(-alpha*d) - exp(-alpha*(d+1))`. Every
/// path then sums to `exp(-alpha)`. With `renormalize` the weights are
/// scaled to the usual 1/2 balance.
pub fn hxe_weights(h: &Hierarchy, alpha: f64, renormalize: bool) -> Result<WeightedHierarchy> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "discount strength alpha must be finite and positive, got {alpha}"
        )));
    }
    let n = h.node_count();
    let mut weights = vec![0.0; n];
    for j in 1..n {
        let d = h.depth(j)? as f64;
        weights[j] = if h.is_leaf(j) {
            (-alpha * d).exp()
        } else {
            (-alpha * d).exp() - (-alpha * (d + 1.0)).exp()
        };
    }
    let mut balance = (-alpha).exp();
    if renormalize {
        let scale = 0.5 / balance;
        for w in weights.iter_mut().skip(1) {
            *w *= scale;
        }
        balance = 0.5;
    }
    let cumulative = cumulative_sums(h, &weights);
    Ok(WeightedHierarchy {
        tree: h.clone(),
        weights,
        balance_constant: balance,
        cumulative,
        aggregation: OnceLock::new(),
    })
}

/// Tabular dump of a weighting, one row per node:
/// `node_id,original_id,parent,height,depth,weight,ancestor_sum`.
pub fn format_weight_dump(wh: &WeightedHierarchy, full_precision: bool) -> String {
    let h = wh.tree();
    let mut out = String::from("node_id,original_id,parent,height,depth,weight,ancestor_sum\n");
    for j in 0..h.node_count() {
        let parent = h.parent(j).map(|p| p.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            j,
            csv_field(h.original_id(j)),
            parent,
            h.height(j).unwrap(),
            h.depth(j).unwrap(),
            fmt_f64(wh.weight(j), full_precision),
            fmt_f64(wh.cumulative_sum(j), full_precision),
        ));
    }
    out
}
