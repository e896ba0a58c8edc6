//! Reusable trees, random generators, and numeric helpers shared by the
//! test suites and the `verify` subcommand.

use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::hierarchy::{parse_hierarchy, Hierarchy};
use crate::loss::{Logits, Probs};
use crate::weighting::WeightedHierarchy;

/// Edge-list document for the running seven-leaf example: three leaves under
/// superclass A, one leaf and a two-leaf superclass C under B, plus one leaf
/// directly below the root.
pub fn seven_leaf_text() -> &'static str {
    "# running example tree, seven leaves\n\
     v1\troot\n\
     v2\tA\n\
     v3\tA\n\
     v4\tA\n\
     v5\tB\n\
     v6\tC\n\
     v7\tC\n\
     A\troot\n\
     B\troot\n\
     C\tB\n"
}

/// The running example, parsed: leaves 1..=7, internals A=8, C=9, B=10.
pub fn seven_leaf() -> Hierarchy {
    parse_hierarchy(seven_leaf_text()).expect("builtin tree parses")
}

/// Root with `k` leaf children.
pub fn flat(k: usize) -> Hierarchy {
    let mut parents = vec![Some(0); k + 1];
    parents[0] = None;
    Hierarchy::from_parents(&parents).expect("flat tree is valid")
}

/// A single path with `depth` edges; the unique leaf sits at that depth.
pub fn chain(depth: usize) -> Hierarchy {
    let parents: Vec<Option<usize>> = (0..=depth)
        .map(|i| if i == 0 { None } else { Some(i - 1) })
        .collect();
    Hierarchy::from_parents(&parents).expect("chain is valid")
}

/// Perfect binary tree of the given height (height 1 = root plus 2 leaves).
pub fn perfect_binary(height: u32) -> Hierarchy {
    let n = (1usize << (height + 1)) - 1;
    let parents: Vec<Option<usize>> = (0..n)
        .map(|i| if i == 0 { None } else { Some((i - 1) / 2) })
        .collect();
    Hierarchy::from_parents(&parents).expect("perfect tree is valid")
}

/// Three leaves grouped {1},{2,3}: one leaf under the root next to a
/// two-leaf superclass. The smallest tree on which the unweighted ancestor
/// loss stops being proper.
pub fn three_leaf() -> Hierarchy {
    Hierarchy::from_parents(&[None, Some(0), Some(4), Some(4), Some(0)])
        .expect("three-leaf tree is valid")
}

/// Uniform unit weights on all non-root nodes (nominal balance constant 1).
pub fn unit_weights(h: &Hierarchy) -> WeightedHierarchy {
    let mut w = vec![1.0; h.node_count()];
    w[0] = 0.0;
    WeightedHierarchy::from_weights(h, w, 1.0).expect("unit weights are valid")
}

/// Random tree with 2..=max_nodes nodes, each new node attached uniformly
/// at random below an earlier one.
pub fn random_tree(rng: &mut ChaCha8Rng, max_nodes: usize) -> Hierarchy {
    let n = rng.random_range(2..=max_nodes.max(2));
    let parents: Vec<Option<usize>> = (0..n)
        .map(|i| if i == 0 { None } else { Some(rng.random_range(0..i)) })
        .collect();
    Hierarchy::from_parents(&parents).expect("random parent vector is a tree")
}

pub fn random_tree_from_seed(seed: u64, max_nodes: usize) -> Hierarchy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_tree(&mut rng, max_nodes)
}

/// Uniformly random logits in [-scale, scale].
pub fn random_logits(rng: &mut ChaCha8Rng, k: usize, scale: f64) -> Logits {
    let values = (0..k).map(|_| rng.random_range(-scale..scale)).collect();
    Logits::new(values).expect("generated logits are finite")
}

pub fn random_logits_from_seed(seed: u64, k: usize, scale: f64) -> Logits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x10617);
    random_logits(&mut rng, k, scale)
}

/// A random tree with matching random logits and a random leaf label.
pub fn random_loss_case(seed: u64, max_nodes: usize) -> (Hierarchy, Logits, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = random_tree(&mut rng, max_nodes);
    let k = h.leaf_count();
    let x = random_logits(&mut rng, k, 3.0);
    let y = rng.random_range(1..=k);
    (h, x, y)
}

/// Strictly interior point of the simplex: a random draw mixed with the
/// uniform distribution so every coordinate is at least `floor / k`.
pub fn random_interior_target(rng: &mut ChaCha8Rng, k: usize, floor: f64) -> Probs {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    let values: Vec<f64> = raw
        .iter()
        .map(|v| (1.0 - floor) * v / sum + floor / k as f64)
        .collect();
    Probs::new(values).expect("mixture stays on the simplex")
}

/// Random distribution over all tree nodes (for the general transport form).
pub fn random_node_distribution(rng: &mut ChaCha8Rng, node_count: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..node_count).map(|_| rng.random_range(0.0..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|v| v / sum).collect()
}

/// Every distinct tree shape with at most `max_nodes` nodes (up to sibling
/// order), smallest first; useful for exhaustive desk-scale sweeps.
pub fn enumerate_shapes(max_nodes: usize) -> Vec<Hierarchy> {
    let mut seen: HashSet<String> = HashSet::new();
    let mut shapes = Vec::new();
    for n in 2..=max_nodes {
        let mut parents: Vec<usize> = vec![0; n - 1];
        loop {
            let full: Vec<Option<usize>> = std::iter::once(None)
                .chain(parents.iter().map(|&p| Some(p)))
                .collect();
            let h = Hierarchy::from_parents(&full).expect("parent vector is a tree");
            if seen.insert(canonical_shape(&h, 0)) {
                shapes.push(h);
            }
            // odometer over parent choices: digit i ranges over 0..=i
            let mut pos = parents.len();
            let mut advanced = false;
            while pos > 0 {
                pos -= 1;
                if parents[pos] < pos {
                    parents[pos] += 1;
                    for p in parents.iter_mut().skip(pos + 1) {
                        *p = 0;
                    }
                    advanced = true;
                    break;
                }
                parents[pos] = 0;
            }
            if !advanced {
                break;
            }
        }
    }
    shapes
}

fn canonical_shape(h: &Hierarchy, j: usize) -> String {
    let mut parts: Vec<String> = h
        .children(j)
        .iter()
        .map(|&c| canonical_shape(h, c))
        .collect();
    parts.sort();
    format!("({})", parts.concat())
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_difference<F>(x: &[f64], step: f64, f: F) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let hi = f(&probe);
        probe[i] = x[i] - step;
        let lo = f(&probe);
        probe[i] = x[i];
        grad.push((hi - lo) / (2.0 * step));
    }
    grad
}
