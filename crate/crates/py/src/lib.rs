//! Python bindings: label trees, balanced weightings, the weighted loss and
//! its gradient, tree metrics, and the brute-force simplex oracle. Build as
//! a cdylib and load the shared object as module `hierloss_py`; see
//! `python/smoke_test.py` at the workspace root.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use hierloss::hierarchy::{self, Hierarchy};
use hierloss::loss::{self, Logits, Probs};
use hierloss::metrics;
use hierloss::oracle;
use hierloss::weighting::{self, WeightedHierarchy};

fn err(e: hierloss::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn logits(values: Vec<f64>) -> PyResult<Logits> {
    Logits::new(values).map_err(err)
}

fn probs(values: Vec<f64>) -> PyResult<Probs> {
    Probs::new(values).map_err(err)
}

/// A parsed label tree: leaves are 1..=leaf_count, the root is 0, and
/// internal nodes follow the leaves in height order.
#[pyclass(frozen)]
struct Tree {
    inner: Hierarchy,
}

#[pymethods]
impl Tree {
    /// Parse a JSON node list or a `child<TAB>parent` edge list.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Tree> {
        Ok(Tree {
            inner: hierarchy::parse_hierarchy(text).map_err(err)?,
        })
    }

    /// Build from a parent vector; entry 0 must be None.
    #[staticmethod]
    fn from_parents(parents: Vec<Option<usize>>) -> PyResult<Tree> {
        Ok(Tree {
            inner: Hierarchy::from_parents(&parents).map_err(err)?,
        })
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn leaf_count(&self) -> usize {
        self.inner.leaf_count()
    }

    fn is_leaf(&self, j: usize) -> bool {
        self.inner.is_leaf(j)
    }

    fn parent(&self, j: usize) -> Option<usize> {
        self.inner.parent(j)
    }

    fn children(&self, j: usize) -> Vec<usize> {
        self.inner.children(j).to_vec()
    }

    fn name(&self, j: usize) -> String {
        self.inner.name(j).to_string()
    }

    fn original_id(&self, j: usize) -> String {
        self.inner.original_id(j).to_string()
    }

    fn height(&self, j: usize) -> PyResult<usize> {
        self.inner.height(j).map_err(err)
    }

    fn depth(&self, j: usize) -> PyResult<usize> {
        self.inner.depth(j).map_err(err)
    }

    /// Ancestors of `j` from the node itself up to, but excluding, the root.
    fn ancestors(&self, j: usize) -> PyResult<Vec<usize>> {
        self.inner.ancestors(j).map_err(err)
    }

    fn lca(&self, a: usize, b: usize) -> PyResult<usize> {
        self.inner.lca(a, b).map_err(err)
    }

    fn descendant_leaves(&self, j: usize) -> PyResult<Vec<usize>> {
        self.inner.descendant_leaves(j).map_err(err)
    }

    fn lookup_leaf(&self, token: &str) -> PyResult<usize> {
        self.inner.lookup_leaf(token).map_err(err)
    }

    /// Height of the lowest common ancestor of a label and a prediction.
    fn lca_distance(&self, y: usize, y_hat: usize) -> PyResult<usize> {
        metrics::hier_distance(&self.inner, y, y_hat).map_err(err)
    }

    /// Exponentially graded weights with growth rate `q`.
    fn exponential_weights(&self, q: f64) -> PyResult<Weighting> {
        Ok(Weighting {
            inner: weighting::exponential_weights(&self.inner, q).map_err(err)?,
        })
    }

    /// Depth-discounted chain weights; renormalized they balance at 1/2.
    #[pyo3(signature = (alpha, renormalize = true))]
    fn hxe_weights(&self, alpha: f64, renormalize: bool) -> PyResult<Weighting> {
        Ok(Weighting {
            inner: weighting::hxe_weights(&self.inner, alpha, renormalize).map_err(err)?,
        })
    }

    fn to_text(&self) -> String {
        hierarchy::serialize_hierarchy(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "Tree(nodes={}, leaves={})",
            self.inner.node_count(),
            self.inner.leaf_count()
        )
    }
}

/// A tree with one nonnegative weight per non-root node; root-to-leaf sums
/// all equal the balance constant.
#[pyclass(frozen)]
struct Weighting {
    inner: WeightedHierarchy,
}

#[pymethods]
impl Weighting {
    #[getter]
    fn balance_constant(&self) -> f64 {
        self.inner.balance_constant()
    }

    fn weight(&self, j: usize) -> f64 {
        self.inner.weight(j)
    }

    fn weights(&self) -> Vec<f64> {
        (0..self.inner.tree().node_count())
            .map(|j| self.inner.weight(j))
            .collect()
    }

    /// Sum of weights on the path from `j` up to the root.
    fn ancestor_sum(&self, j: usize) -> f64 {
        self.inner.cumulative_sum(j)
    }

    /// Leaf ids whose root-to-leaf sum misses the balance constant by more
    /// than `tol`.
    #[pyo3(signature = (tol = 1e-9))]
    fn balance_violations(&self, tol: f64) -> Vec<usize> {
        self.inner.validate_balanced(tol)
    }

    /// Metric distance between two nodes (twice the weight above the lca,
    /// measured from both endpoints).
    fn tree_distance(&self, a: usize, b: usize) -> PyResult<f64> {
        self.inner.tree_distance(a, b).map_err(err)
    }

    /// The weighted ancestor loss of `logits` against leaf label `y`.
    fn loss(&self, values: Vec<f64>, y: usize) -> PyResult<f64> {
        loss::hierarchical_loss(&self.inner, &logits(values)?, y).map_err(err)
    }

    /// Exact gradient of `loss` with respect to the logits.
    fn loss_grad(&self, values: Vec<f64>, y: usize) -> PyResult<Vec<f64>> {
        loss::hierarchical_loss_grad(&self.inner, &logits(values)?, y).map_err(err)
    }

    /// Expected loss of predicted distribution `f` under label law `target`.
    fn expected_loss(&self, f: Vec<f64>, target: Vec<f64>) -> PyResult<f64> {
        loss::expected_loss(&self.inner, &probs(f)?, &probs(target)?).map_err(err)
    }

    /// Transport cost of moving predicted leaf mass `f` onto label `y`.
    fn wasserstein(&self, f: Vec<f64>, y: usize) -> PyResult<f64> {
        metrics::tree_wasserstein(&self.inner, &probs(f)?, y).map_err(err)
    }

    /// Transport distance between two distributions over all nodes.
    fn wasserstein_general(&self, mu: Vec<f64>, nu: Vec<f64>) -> PyResult<f64> {
        metrics::tree_wasserstein_general(&self.inner, &mu, &nu).map_err(err)
    }

    /// Collapse at threshold `tau`: list of (kept node, its leaves).
    fn prune(&self, tau: f64) -> PyResult<Vec<(usize, Vec<usize>)>> {
        let part = hierarchy::prune(&self.inner, tau).map_err(err)?;
        Ok(part
            .groups
            .into_iter()
            .map(|g| (g.supernode, g.leaves))
            .collect())
    }

    /// Accuracy/coarseness trade-off as (tau, group_count, accuracy) rows.
    fn coarsening_curve(
        &self,
        predictions: Vec<Vec<f64>>,
        labels: Vec<usize>,
    ) -> PyResult<Vec<(f64, usize, f64)>> {
        let preds = predictions
            .into_iter()
            .map(probs)
            .collect::<PyResult<Vec<_>>>()?;
        let curve = metrics::coarsening_curve(&self.inner, &preds, &labels, None).map_err(err)?;
        Ok(curve
            .points
            .into_iter()
            .map(|p| (p.tau, p.group_count, p.accuracy))
            .collect())
    }

    /// Score predicted distributions: (accuracy, mean lca height, mean
    /// transport cost, sample count).
    fn evaluate(
        &self,
        predictions: Vec<Vec<f64>>,
        labels: Vec<usize>,
    ) -> PyResult<(f64, f64, f64, usize)> {
        let preds = predictions
            .into_iter()
            .map(probs)
            .collect::<PyResult<Vec<_>>>()?;
        let r = metrics::evaluate(&self.inner, &preds, &labels, 1).map_err(err)?;
        Ok((
            r.accuracy,
            r.mean_hier_distance,
            r.mean_wasserstein,
            r.sample_count,
        ))
    }

    /// Brute-force minimizer of the expected loss over the simplex:
    /// (minimizer, value, residual, iterations, converged).
    #[pyo3(signature = (target, tol = 1e-8))]
    fn minimize_expected_loss(
        &self,
        target: Vec<f64>,
        tol: f64,
    ) -> PyResult<(Vec<f64>, f64, f64, usize, bool)> {
        let r = oracle::minimize_expected_loss(&self.inner, &probs(target)?, tol).map_err(err)?;
        Ok((
            r.minimizer.as_slice().to_vec(),
            r.value,
            r.gradient_norm_at_solution,
            r.iterations,
            r.converged,
        ))
    }

    fn __repr__(&self) -> String {
        format!(
            "Weighting(nodes={}, balance_constant={})",
            self.inner.tree().node_count(),
            self.inner.balance_constant()
        )
    }
}

/// Plain cross-entropy of logits against leaf label `y`.
#[pyfunction]
fn cross_entropy(values: Vec<f64>, y: usize) -> PyResult<f64> {
    loss::cross_entropy(&logits(values)?, y).map_err(err)
}

#[pyfunction]
fn cross_entropy_grad(values: Vec<f64>, y: usize) -> PyResult<Vec<f64>> {
    loss::cross_entropy_grad(&logits(values)?, y).map_err(err)
}

/// Chained conditional log-loss along the label's root path.
#[pyfunction]
fn hxe_loss(tree: &Tree, values: Vec<f64>, y: usize, alpha: f64) -> PyResult<f64> {
    loss::hxe_loss(&tree.inner, &logits(values)?, y, alpha).map_err(err)
}

/// Unweighted ancestor log-loss (not a proper scoring rule).
#[pyfunction]
fn naive_loss(tree: &Tree, values: Vec<f64>, y: usize) -> PyResult<f64> {
    loss::naive_loss(&tree.inner, &logits(values)?, y).map_err(err)
}

#[pyfunction]
fn softmax(values: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(loss::softmax(&logits(values)?).as_slice().to_vec())
}

#[pymodule]
fn hierloss_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Tree>()?;
    m.add_class::<Weighting>()?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy_grad, m)?)?;
    m.add_function(wrap_pyfunction!(hxe_loss, m)?)?;
    m.add_function(wrap_pyfunction!(naive_loss, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    Ok(())
}
