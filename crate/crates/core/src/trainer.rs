//! Mini-batch training of linear softmax classifiers on synthetic data
//! whose class structure follows a label hierarchy.

use std::f64::consts::PI;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::loss::{
    cross_entropy, cross_entropy_grad, hierarchical_loss, hierarchical_loss_grad, softmax, Logits,
};
use crate::metrics::{coarsening_curve, evaluate, CoarseningCurve, EvaluationReport};
use crate::textfmt::fmt_f64;
use crate::weighting::{exponential_weights, hxe_weights, WeightedHierarchy};

/// Labeled feature vectors, stored row-major.
#[derive(Clone, Debug)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    counts: Vec<usize>,
}

impl Dataset {
    /// Build a dataset of `labels.len()` rows over `k` classes, checking
    /// shapes, label range, and finiteness.
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, k: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "feature dimension must be at least 1".into(),
            ));
        }
        if labels.is_empty() {
            return Err(Error::InvalidParameter("dataset is empty".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                actual: features.len(),
            });
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("dataset feature".into()));
        }
        let mut counts = vec![0usize; k];
        for &y in &labels {
            if y == 0 || y > k {
                return Err(Error::UnknownLabel(y.to_string()));
            }
            counts[y - 1] += 1;
        }
        Ok(Dataset {
            features,
            dim,
            labels,
            counts,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Row `i` as a feature slice.
    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Per-class sample counts, indexed by leaf id minus one.
    pub fn class_counts(&self) -> &[usize] {
        &self.counts
    }
}

/// Which empirical risk the trainer minimizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossKind {
    CrossEntropy,
    Hierarchical { q: f64 },
    Hxe { alpha: f64 },
}

impl LossKind {
    pub fn token(&self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "ce",
            LossKind::Hierarchical { .. } => "hier",
            LossKind::Hxe { .. } => "hxe",
        }
    }

    /// Reassemble from a token plus optional parameters, as stored in
    /// checkpoints and accepted on the command line.
    pub fn from_parts(token: &str, q: Option<f64>, alpha: Option<f64>) -> Result<Self> {
        match token {
            "ce" => Ok(LossKind::CrossEntropy),
            "hier" => {
                let q = q.ok_or_else(|| {
                    Error::InvalidParameter("loss `hier` needs a growth rate q".into())
                })?;
                Ok(LossKind::Hierarchical { q })
            }
            "hxe" => {
                let alpha = alpha.ok_or_else(|| {
                    Error::InvalidParameter("loss `hxe` needs a discount alpha".into())
                })?;
                Ok(LossKind::Hxe { alpha })
            }
            other => Err(Error::InvalidParameter(format!(
                "unknown loss `{other}` (expected ce, hier, or hxe)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "step size must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "batch size must be positive".into(),
            ));
        }
        match self.loss {
            LossKind::Hierarchical { q } if !(q >= 0.0) || !q.is_finite() => Err(
                Error::InvalidParameter(format!("growth rate must be nonnegative, got {q}")),
            ),
            LossKind::Hxe { alpha } if !(alpha > 0.0) || !alpha.is_finite() => Err(
                Error::InvalidParameter(format!("discount must be positive, got {alpha}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Linear softmax classifier: logits are `W x + b` with one row per class.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    weights: Vec<f64>,
    biases: Vec<f64>,
    dim: usize,
}

impl LinearModel {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        LinearModel {
            weights: vec![0.0; classes * dim],
            biases: vec![0.0; classes],
            dim,
        }
    }

    pub fn classes(&self) -> usize {
        self.biases.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    fn raw_logits(&self, x: &[f64]) -> Vec<f64> {
        let k = self.classes();
        let mut z = self.biases.clone();
        for (c, zc) in z.iter_mut().enumerate().take(k) {
            let row = &self.weights[c * self.dim..(c + 1) * self.dim];
            *zc += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        z
    }

    /// Class scores for one sample, validated finite.
    pub fn logits(&self, x: &[f64]) -> Result<Logits> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Logits::new(self.raw_logits(x))
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    classes: usize,
    dim: usize,
    loss: String,
    q: Option<f64>,
    alpha: Option<f64>,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    seed: u64,
    biases: Vec<f64>,
    weights: Vec<Vec<f64>>,
}

/// Serialize a model plus the configuration that produced it. Parameters are
/// written at full precision.
pub fn format_checkpoint(model: &LinearModel, config: &TrainConfig) -> String {
    let (q, alpha) = match config.loss {
        LossKind::CrossEntropy => (None, None),
        LossKind::Hierarchical { q } => (Some(q), None),
        LossKind::Hxe { alpha } => (None, Some(alpha)),
    };
    let doc = CheckpointDoc {
        classes: model.classes(),
        dim: model.dim,
        loss: config.loss.token().to_string(),
        q,
        alpha,
        epochs: config.epochs,
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
        seed: config.seed,
        biases: model.biases.clone(),
        weights: (0..model.classes())
            .map(|c| model.weights[c * model.dim..(c + 1) * model.dim].to_vec())
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("checkpoint serialization cannot fail")
}

/// Parse a checkpoint, skipping any leading `#` header lines.
pub fn parse_checkpoint(text: &str) -> Result<(LinearModel, TrainConfig)> {
    let body: String = text
        .lines()
        .filter(|line| !line.trim_start().starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n");
    let doc: CheckpointDoc =
        serde_json::from_str(&body).map_err(|e| Error::Parse(format!("checkpoint: {e}")))?;
    if doc.biases.len() != doc.classes
        || doc.weights.len() != doc.classes
        || doc.weights.iter().any(|row| row.len() != doc.dim)
    {
        return Err(Error::Parse("checkpoint shape disagrees with dims".into()));
    }
    let mut flat = Vec::with_capacity(doc.classes * doc.dim);
    for row in &doc.weights {
        flat.extend_from_slice(row);
    }
    if flat.iter().chain(&doc.biases).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("checkpoint parameter".into()));
    }
    let model = LinearModel {
        weights: flat,
        biases: doc.biases,
        dim: doc.dim,
    };
    let config = TrainConfig {
        loss: LossKind::from_parts(&doc.loss, doc.q, doc.alpha)?,
        epochs: doc.epochs,
        learning_rate: doc.learning_rate,
        batch_size: doc.batch_size,
        seed: doc.seed,
    };
    Ok((model, config))
}

/// Write a dataset as CSV with a `f_1,...,f_m,label` header. Labels are the
/// normalized leaf ids.
pub fn format_dataset_csv(ds: &Dataset, full: bool) -> String {
    let mut out = String::new();
    for d in 0..ds.dim {
        out.push_str(&format!("f_{},", d + 1));
    }
    out.push_str("label\n");
    for i in 0..ds.len() {
        for v in ds.sample(i) {
            out.push_str(&fmt_f64(*v, full));
            out.push(',');
        }
        out.push_str(&format!("{}\n", ds.labels[i]));
    }
    out
}

/// Parse a dataset CSV against a hierarchy. `#` lines are skipped, a header
/// row is optional, and the label column accepts leaf ids, original ids, or
/// unique names.
pub fn parse_dataset_csv(text: &str, h: &Hierarchy) -> Result<Dataset> {
    let mut dim: Option<usize> = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::Parse(format!(
                "line {}: expected `f_1,...,f_m,label`",
                lineno + 1
            )));
        }
        if dim.is_none() && fields[0].parse::<f64>().is_err() {
            // header row
            dim = Some(fields.len() - 1);
            continue;
        }
        let m = *dim.get_or_insert(fields.len() - 1);
        if fields.len() != m + 1 {
            return Err(Error::Parse(format!(
                "line {}: expected {} columns, found {}",
                lineno + 1,
                m + 1,
                fields.len()
            )));
        }
        for field in &fields[..m] {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad number `{field}`", lineno + 1)))?;
            features.push(v);
        }
        labels.push(h.lookup_leaf(fields[m])?);
    }
    let dim = dim.unwrap_or(0);
    Dataset::new(features, dim, labels, h.leaf_count())
}

/// Draw a labeled dataset whose geometry mirrors the hierarchy: class means
/// follow a root-to-leaf random walk with Gaussian steps scaled by twice each
/// node's weight share (so closeness in the tree means closeness in feature
/// space), then `per_class` samples per leaf are drawn around the means with
/// standard deviation `spread`.
pub fn generate_synthetic(
    h: &Hierarchy,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if per_class == 0 {
        return Err(Error::InvalidParameter(
            "per_class must be at least 1".into(),
        ));
    }
    if dim < 2 {
        return Err(Error::InvalidParameter(format!(
            "feature dimension must be at least 2, got {dim}"
        )));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "spread must be nonnegative, got {spread}"
        )));
    }
    let wh = exponential_weights(h, 1.0)?;
    let n = h.node_count();
    let k = h.leaf_count();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);

    // offsets drawn in node-id order, then accumulated root-down
    let mut offsets = vec![vec![0.0f64; dim]; n];
    for (j, offset) in offsets.iter_mut().enumerate().skip(1) {
        let scale = 2.0 * wh.weight(j);
        for v in offset.iter_mut() {
            *v = scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut means = vec![vec![0.0f64; dim]; n];
    let mut queue = vec![0usize];
    let mut head = 0;
    while head < queue.len() {
        let u = queue[head];
        head += 1;
        for &c in h.children(u) {
            means[c] = means[u]
                .iter()
                .zip(&offsets[c])
                .map(|(m, o)| m + o)
                .collect();
            queue.push(c);
        }
    }

    let mut features = Vec::with_capacity(k * per_class * dim);
    let mut labels = Vec::with_capacity(k * per_class);
    for leaf in 1..=k {
        for _ in 0..per_class {
            for &m in &means[leaf] {
                features.push(m + spread * rng.sample::<f64, _>(StandardNormal));
            }
            labels.push(leaf);
        }
    }
    Dataset::new(features, dim, labels, k)
}

/// Split off the last fifth of each class as a holdout set (at least one
/// sample per class when the class has two or more). The holdout may be empty
/// for single-sample classes.
pub fn split_holdout(ds: &Dataset) -> (Dataset, Dataset) {
    let k = ds.counts.len();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in ds.labels.iter().enumerate() {
        by_class[y - 1].push(i);
    }
    let mut train_rows = Vec::new();
    let mut hold_rows = Vec::new();
    for rows in &by_class {
        let n = rows.len();
        let hold = if n >= 2 { (n / 5).max(1) } else { 0 };
        train_rows.extend_from_slice(&rows[..n - hold]);
        hold_rows.extend_from_slice(&rows[n - hold..]);
    }
    (ds.take_rows(&train_rows), ds.take_rows(&hold_rows))
}

impl Dataset {
    fn take_rows(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.dim);
        let mut labels = Vec::with_capacity(rows.len());
        let mut counts = vec![0usize; self.counts.len()];
        for &i in rows {
            features.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
            counts[self.labels[i] - 1] += 1;
        }
        Dataset {
            features,
            dim: self.dim,
            labels,
            counts,
        }
    }
}

enum LossContext {
    Plain,
    Weighted(WeightedHierarchy),
}

impl LossContext {
    fn build(h: &Hierarchy, kind: LossKind) -> Result<LossContext> {
        match kind {
            LossKind::CrossEntropy => Ok(LossContext::Plain),
            LossKind::Hierarchical { q } => Ok(LossContext::Weighted(exponential_weights(h, q)?)),
            // the direct form and the weighted form coincide, so training
            // reuses the weighted gradient
            LossKind::Hxe { alpha } => Ok(LossContext::Weighted(hxe_weights(h, alpha, false)?)),
        }
    }

    fn loss_and_grad(&self, z: &Logits, y: usize) -> Result<(f64, Vec<f64>)> {
        match self {
            LossContext::Plain => Ok((cross_entropy(z, y)?, cross_entropy_grad(z, y)?)),
            LossContext::Weighted(wh) => Ok((
                hierarchical_loss(wh, z, y)?,
                hierarchical_loss_grad(wh, z, y)?,
            )),
        }
    }
}

/// Train and additionally report the mean pre-update training loss of every
/// epoch.
pub fn train_with_history(
    ds: &Dataset,
    h: &Hierarchy,
    config: &TrainConfig,
) -> Result<(LinearModel, Vec<f64>)> {
    config.validate()?;
    let k = h.leaf_count();
    if ds.counts.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: ds.counts.len(),
        });
    }
    let context = LossContext::build(h, config.loss)?;
    let n = ds.len();
    let dim = ds.dim;

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_rng.set_stream(1);
    let mut model = LinearModel::zeros(k, dim);
    for w in model.weights.iter_mut() {
        *w = 0.01 * init_rng.sample::<f64, _>(StandardNormal);
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(2);
    let mut order: Vec<usize> = (0..n).collect();

    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.learning_rate
            * 0.5
            * (1.0 + (PI * epoch as f64 / config.epochs as f64).cos());
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grad_w = vec![0.0f64; k * dim];
            let mut grad_b = vec![0.0f64; k];
            let mut batch_loss = 0.0;
            for &i in batch {
                let x = ds.sample(i);
                let z = model.logits(x)?;
                let (loss, gz) = context.loss_and_grad(&z, ds.labels[i])?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
                }
                batch_loss += loss;
                for c in 0..k {
                    grad_b[c] += gz[c];
                    for d in 0..dim {
                        grad_w[c * dim + d] += gz[c] * x[d];
                    }
                }
            }
            epoch_loss += batch_loss;
            let scale = lr / batch.len() as f64;
            for (w, g) in model.weights.iter_mut().zip(&grad_w) {
                *w -= scale * g;
            }
            for (b, g) in model.biases.iter_mut().zip(&grad_b) {
                *b -= scale * g;
            }
        }
        history.push(epoch_loss / n as f64);
    }
    Ok((model, history))
}

/// Fit a linear softmax classifier by mini-batch gradient descent with a
/// cosine-annealed step size.
pub fn train(ds: &Dataset, h: &Hierarchy, config: &TrainConfig) -> Result<LinearModel> {
    train_with_history(ds, h, config).map(|(model, _)| model)
}

/// Score a model on a dataset: softmax outputs are fed to the evaluation
/// metrics and the coarsening curve.
pub fn evaluate_model(
    model: &LinearModel,
    ds: &Dataset,
    wh: &WeightedHierarchy,
    threads: usize,
) -> Result<(EvaluationReport, CoarseningCurve)> {
    if model.dim != ds.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            actual: ds.dim,
        });
    }
    if model.classes() != wh.tree().leaf_count() {
        return Err(Error::DimensionMismatch {
            expected: wh.tree().leaf_count(),
            actual: model.classes(),
        });
    }
    let mut preds = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let z = model.logits(ds.sample(i))?;
        preds.push(softmax(&z));
    }
    let report = evaluate(wh, &preds, ds.labels(), threads)?;
    let curve = coarsening_curve(wh, &preds, ds.labels(), None)?;
    Ok((report, curve))
}

/// Training accuracy of a model on a dataset (argmax, lowest index on ties).
pub fn model_accuracy(model: &LinearModel, ds: &Dataset) -> Result<f64> {
    let mut correct = 0usize;
    for i in 0..ds.len() {
        let z = model.logits(ds.sample(i))?;
        let probs = softmax(&z);
        if crate::loss::argmax_leaf(probs.as_slice()) == ds.labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn seven_leaf() -> Hierarchy {
        fixtures::seven_leaf()
    }

    #[test]
    fn synthetic_counts_and_label_blocks() {
        let h = seven_leaf();
        let ds = generate_synthetic(&h, 10, 3, 0.3, 7).unwrap();
        assert_eq!(ds.len(), 70);
        assert_eq!(ds.dim(), 3);
        assert_eq!(ds.class_counts(), &[10; 7]);
        for (i, &y) in ds.labels().iter().enumerate() {
            assert_eq!(y, i / 10 + 1);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let h = seven_leaf();
        let a = generate_synthetic(&h, 4, 5, 0.7, 123).unwrap();
        let b = generate_synthetic(&h, 4, 5, 0.7, 123).unwrap();
        assert_eq!(a.len(), b.len());
        for i in 0..a.len() {
            for (x, y) in a.sample(i).iter().zip(b.sample(i)) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let c = generate_synthetic(&h, 4, 5, 0.7, 124).unwrap();
        assert!((0..a.len()).any(|i| a.sample(i) != c.sample(i)));
    }

    #[test]
    fn zero_spread_collapses_classes_to_points() {
        let h = fixtures::flat(3);
        let ds = generate_synthetic(&h, 5, 2, 0.0, 9).unwrap();
        for class in 0..3 {
            let base = ds.sample(class * 5).to_vec();
            for i in 1..5 {
                assert_eq!(ds.sample(class * 5 + i), base.as_slice());
            }
        }
    }

    #[test]
    fn synthetic_rejects_degenerate_requests() {
        let h = seven_leaf();
        assert!(matches!(
            generate_synthetic(&h, 0, 3, 0.1, 1),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            generate_synthetic(&h, 3, 1, 0.1, 1),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            generate_synthetic(&h, 3, 3, -0.5, 1),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn holdout_takes_last_fifth_per_class() {
        let h = seven_leaf();
        let ds = generate_synthetic(&h, 5, 2, 0.2, 3).unwrap();
        let (train_ds, hold) = split_holdout(&ds);
        assert_eq!(train_ds.len(), 28);
        assert_eq!(hold.len(), 7);
        assert_eq!(hold.class_counts(), &[1; 7]);
        // the held-out rows are the final row of each class block
        for (c, &y) in hold.labels().iter().enumerate() {
            assert_eq!(y, c + 1);
            assert_eq!(hold.sample(c), ds.sample(c * 5 + 4));
        }
    }

    #[test]
    fn holdout_is_empty_for_singleton_classes() {
        let h = fixtures::flat(4);
        let ds = generate_synthetic(&h, 1, 2, 0.1, 5).unwrap();
        let (train_ds, hold) = split_holdout(&ds);
        assert_eq!(train_ds.len(), 4);
        assert!(hold.is_empty());
    }

    #[test]
    fn csv_roundtrip_is_exact_at_full_precision() {
        let h = seven_leaf();
        let ds = generate_synthetic(&h, 2, 3, 0.4, 11).unwrap();
        let text = format_dataset_csv(&ds, true);
        assert!(text.starts_with("f_1,f_2,f_3,label\n"));
        let back = parse_dataset_csv(&text, &h).unwrap();
        assert_eq!(back.len(), ds.len());
        assert_eq!(back.labels(), ds.labels());
        for i in 0..ds.len() {
            for (x, y) in ds.sample(i).iter().zip(back.sample(i)) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn csv_labels_resolve_names_and_original_ids() {
        let h = seven_leaf();
        let text = "# a comment\nf_1,f_2,label\n0.5,1.5,v6\n-1.0,2.0,2\n";
        let ds = parse_dataset_csv(text, &h).unwrap();
        assert_eq!(ds.labels(), &[6, 2]);
        let bad = "0.5,1.5,nosuch\n";
        assert!(parse_dataset_csv(bad, &h).is_err());
    }

    #[test]
    fn csv_shape_errors_are_reported() {
        let h = seven_leaf();
        assert!(matches!(
            parse_dataset_csv("", &h),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            parse_dataset_csv("0.5,1.0,6\n0.5,2\n", &h),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            parse_dataset_csv("0.5,abc,6\n", &h),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn separable_two_class_fit_reaches_full_accuracy() {
        let h = fixtures::flat(2);
        let ds = generate_synthetic(&h, 10, 2, 0.02, 4).unwrap();
        let config = TrainConfig {
            loss: LossKind::CrossEntropy,
            epochs: 200,
            learning_rate: 0.5,
            batch_size: 4,
            seed: 4,
        };
        let model = train(&ds, &h, &config).unwrap();
        assert_eq!(model_accuracy(&model, &ds).unwrap(), 1.0);

        let wh = exponential_weights(&h, 1.0).unwrap();
        let (report, curve) = evaluate_model(&model, &ds, &wh, 1).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.mean_hier_distance, 0.0);
        assert!(report.mean_wasserstein < 0.05);
        assert_eq!(curve.points.last().unwrap().accuracy, 1.0);
    }

    #[test]
    fn training_loss_does_not_diverge() {
        let h = seven_leaf();
        let ds = generate_synthetic(&h, 5, 3, 0.4, 2).unwrap();
        for loss in [
            LossKind::CrossEntropy,
            LossKind::Hierarchical { q: 0.9 },
            LossKind::Hxe { alpha: 0.1 },
        ] {
            let config = TrainConfig {
                loss,
                epochs: 60,
                learning_rate: 0.4,
                batch_size: 8,
                seed: 12,
            };
            let (_, history) = train_with_history(&ds, &h, &config).unwrap();
            assert!(history.last().unwrap() <= history.first().unwrap());
        }
    }

    #[test]
    fn flat_tree_trajectory_matches_cross_entropy_at_double_step() {
        let h = fixtures::flat(3);
        let ds = generate_synthetic(&h, 6, 2, 0.3, 8).unwrap();
        let ce = TrainConfig {
            loss: LossKind::CrossEntropy,
            epochs: 10,
            learning_rate: 0.25,
            batch_size: 4,
            seed: 31,
        };
        let hier = TrainConfig {
            loss: LossKind::Hierarchical { q: 1.0 },
            learning_rate: 0.5,
            ..ce
        };
        let m_ce = train(&ds, &h, &ce).unwrap();
        let m_h = train(&ds, &h, &hier).unwrap();
        let sup = m_ce
            .weights()
            .iter()
            .chain(m_ce.biases())
            .zip(m_h.weights().iter().chain(m_h.biases()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(sup < 1e-8, "sup-norm parameter gap {sup}");
    }

    #[test]
    fn huge_growth_rate_halves_the_cross_entropy_loss() {
        let h = seven_leaf();
        let ds = generate_synthetic(&h, 5, 3, 0.3, 21).unwrap();
        let ce = TrainConfig {
            loss: LossKind::CrossEntropy,
            epochs: 40,
            learning_rate: 0.3,
            batch_size: 8,
            seed: 5,
        };
        let hier = TrainConfig {
            loss: LossKind::Hierarchical { q: 1e6 },
            learning_rate: 0.6,
            ..ce
        };
        let (_, hist_ce) = train_with_history(&ds, &h, &ce).unwrap();
        let (_, hist_h) = train_with_history(&ds, &h, &hier).unwrap();
        let gap = (hist_h.last().unwrap() - 0.5 * hist_ce.last().unwrap()).abs();
        assert!(gap < 1e-3, "loss gap {gap}");
    }

    #[test]
    fn single_small_step_decreases_batch_loss() {
        let h = seven_leaf();
        let wh = exponential_weights(&h, 0.9).unwrap();
        for seed in [14u64, 15, 16] {
            let ds = generate_synthetic(&h, 2, 3, 0.5, seed).unwrap();
            let mut init = ChaCha8Rng::seed_from_u64(seed);
            init.set_stream(1);
            let mut model = LinearModel::zeros(7, 3);
            for w in model.weights.iter_mut() {
                *w = 0.3 * init.sample::<f64, _>(StandardNormal);
            }
            let batch_loss = |m: &LinearModel| -> f64 {
                (0..ds.len())
                    .map(|i| {
                        hierarchical_loss(&wh, &m.logits(ds.sample(i)).unwrap(), ds.labels()[i])
                            .unwrap()
                    })
                    .sum::<f64>()
                    / ds.len() as f64
            };
            let before = batch_loss(&model);
            let mut stepped = model.clone();
            for i in 0..ds.len() {
                let z = stepped.logits(ds.sample(i)).unwrap();
                let gz = hierarchical_loss_grad(&wh, &z, ds.labels()[i]).unwrap();
                let x = ds.sample(i);
                for c in 0..7 {
                    stepped.biases[c] -= 1e-4 / ds.len() as f64 * gz[c];
                    for d in 0..3 {
                        stepped.weights[c * 3 + d] -= 1e-4 / ds.len() as f64 * gz[c] * x[d];
                    }
                }
            }
            assert!(batch_loss(&stepped) < before);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let h = seven_leaf();
        let ds = generate_synthetic(&h, 3, 3, 0.4, 6).unwrap();
        let config = TrainConfig {
            loss: LossKind::Hierarchical { q: 1.2 },
            epochs: 15,
            learning_rate: 0.4,
            batch_size: 4,
            seed: 77,
        };
        let a = train(&ds, &h, &config).unwrap();
        let b = train(&ds, &h, &config).unwrap();
        for (x, y) in a
            .weights()
            .iter()
            .chain(a.biases())
            .zip(b.weights().iter().chain(b.biases()))
        {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn zero_model_predicts_the_first_class() {
        let h = fixtures::flat(4);
        let ds = generate_synthetic(&h, 6, 2, 0.5, 19).unwrap();
        let model = LinearModel::zeros(4, 2);
        let acc = model_accuracy(&model, &ds).unwrap();
        assert!((acc - 0.25).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let h = seven_leaf();
        let ds = generate_synthetic(&h, 2, 3, 0.3, 1).unwrap();
        let config = TrainConfig {
            loss: LossKind::Hxe { alpha: 0.1 },
            epochs: 5,
            learning_rate: 0.2,
            batch_size: 4,
            seed: 9,
        };
        let model = train(&ds, &h, &config).unwrap();
        let text = format_checkpoint(&model, &config);
        let (back, back_config) = parse_checkpoint(&text).unwrap();
        assert_eq!(back, model);
        assert_eq!(back_config.loss, config.loss);
        assert_eq!(back_config.epochs, config.epochs);
        assert_eq!(back_config.seed, config.seed);
        // header lines are tolerated
        let with_header = format!("# manifest: {{}}\n{text}");
        assert!(parse_checkpoint(&with_header).is_ok());
    }

    #[test]
    fn config_validation_rejects_bad_settings() {
        let h = fixtures::flat(2);
        let ds = generate_synthetic(&h, 2, 2, 0.1, 1).unwrap();
        let base = TrainConfig {
            loss: LossKind::CrossEntropy,
            epochs: 10,
            learning_rate: 0.1,
            batch_size: 2,
            seed: 0,
        };
        for config in [
            TrainConfig { epochs: 0, ..base },
            TrainConfig {
                learning_rate: 0.0,
                ..base
            },
            TrainConfig {
                batch_size: 0,
                ..base
            },
            TrainConfig {
                loss: LossKind::Hierarchical { q: -1.0 },
                ..base
            },
            TrainConfig {
                loss: LossKind::Hxe { alpha: 0.0 },
                ..base
            },
        ] {
            assert!(train(&ds, &h, &config).is_err());
        }
    }

    #[test]
    fn divergence_reports_non_finite() {
        // two identical huge samples with different labels: one is always
        // mispredicted, so the first update scales with the features and the
        // next epoch's logits overflow
        let h = fixtures::flat(2);
        let ds = Dataset::new(vec![1e154, 1e154, 1e154, 1e154], 2, vec![1, 2], 2).unwrap();
        let config = TrainConfig {
            loss: LossKind::CrossEntropy,
            epochs: 3,
            learning_rate: 1000.0,
            batch_size: 2,
            seed: 0,
        };
        assert!(matches!(
            train(&ds, &h, &config),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn loss_kind_parses_from_parts() {
        assert_eq!(
            LossKind::from_parts("ce", None, None).unwrap(),
            LossKind::CrossEntropy
        );
        assert_eq!(
            LossKind::from_parts("hier", Some(0.9), None).unwrap(),
            LossKind::Hierarchical { q: 0.9 }
        );
        assert_eq!(
            LossKind::from_parts("hxe", None, Some(0.1)).unwrap(),
            LossKind::Hxe { alpha: 0.1 }
        );
        assert!(LossKind::from_parts("hier", None, None).is_err());
        assert!(LossKind::from_parts("mystery", None, None).is_err());
    }

    #[test]
    fn dataset_validation_guards_labels_and_shapes() {
        assert!(matches!(
            Dataset::new(vec![0.0, 1.0], 2, vec![3], 2),
            Err(Error::UnknownLabel(_))
        ));
        assert!(matches!(
            Dataset::new(vec![0.0, 1.0, 2.0], 2, vec![1], 2),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            Dataset::new(vec![f64::NAN, 1.0], 2, vec![1], 2),
            Err(Error::NonFinite(_))
        ));
    }
}
