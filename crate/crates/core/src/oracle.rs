//! Independent brute-force verifiers: numeric minimization of the expected
//! loss over the simplex, exact optimal transport by min-cost flow, and
//! breadth-first shortest-path distances. These deliberately avoid the fast
//! closed forms they are used to check.

use crate::error::{Error, Result};
use crate::loss::{expected_loss, expected_loss_grad, Probs};
use crate::weighting::WeightedHierarchy;

/// Largest leaf count the oracles accept; they are meant for checking, not
/// for production sizes.
pub const ORACLE_LEAF_CAP: usize = 8;

const ITERATION_CAP: usize = 1_000_000;

/// Outcome of a simplex minimization.
#[derive(Debug, Clone)]
pub struct SimplexMinResult {
    pub minimizer: Probs,
    pub value: f64,
    /// Norm of the unit-step projected-gradient residual at the returned
    /// point; below the requested tolerance when `converged` is true.
    pub gradient_norm_at_solution: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut prefix = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        prefix += u;
        let candidate = (prefix - 1.0) / (i + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Minimize the expected loss over the simplex starting from the uniform
/// distribution.
pub fn minimize_expected_loss(
    wh: &WeightedHierarchy,
    target: &Probs,
    tol: f64,
) -> Result<SimplexMinResult> {
    let k = wh.tree().leaf_count();
    minimize_expected_loss_from(wh, target, &Probs::uniform(k), tol)
}

/// Minimize the expected loss over the simplex from an explicit start,
/// by projected gradient descent with a backtracking line search. The
/// stopping rule is the norm of the unit-step projected-gradient residual
/// `f - project(f - grad)`.
pub fn minimize_expected_loss_from(
    wh: &WeightedHierarchy,
    target: &Probs,
    start: &Probs,
    tol: f64,
) -> Result<SimplexMinResult> {
    let k = wh.tree().leaf_count();
    if k > ORACLE_LEAF_CAP {
        return Err(Error::SizeCap {
            limit: ORACLE_LEAF_CAP,
            actual: k,
        });
    }
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if target.as_slice().iter().any(|&p| p <= 0.0) {
        return Err(Error::InvalidParameter(
            "target distribution must be strictly positive".into(),
        ));
    }
    if start.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: start.len(),
        });
    }

    let mut f = start.as_slice().to_vec();
    let mut value = expected_loss(wh, &Probs::new(f.clone())?, target)?;
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut polishing = false;

    while iterations < ITERATION_CAP {
        let grad = expected_loss_grad(wh, &Probs::new(f.clone())?, target)?;
        let mapped = project_simplex(&sub(&f, &grad, 1.0));
        let residual = norm2(&sub_vec(&f, &mapped));
        if residual < tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut accepted = false;
        if !polishing {
            // Armijo backtracking along the projection arc
            for _ in 0..200 {
                let cand = project_simplex(&sub(&f, &grad, step));
                if cand == f {
                    step *= 0.5;
                    continue;
                }
                let cand_value = expected_loss(wh, &Probs::new(cand.clone())?, target)?;
                let slope: f64 = grad
                    .iter()
                    .zip(cand.iter().zip(&f))
                    .map(|(g, (c, x))| g * (c - x))
                    .sum();
                // strict decrease required: near the optimum the sufficient-
                // decrease bound rounds back to `value` itself, and accepting
                // bitwise-equal values lets the iterate wander a plateau
                // without ever tripping the stall detection below
                if cand_value < value && cand_value <= value + 1e-4 * slope {
                    f = cand;
                    value = cand_value;
                    step = (step * 2.0).min(1e6);
                    accepted = true;
                    break;
                }
                step *= 0.5;
                if step < 1e-18 {
                    break;
                }
            }
            if !accepted {
                // objective differences are below f64 resolution; finish the
                // descent on the gradient-mapping residual, which stays
                // meaningful far below the objective's rounding floor
                polishing = true;
                step = 1.0;
            }
        }
        if polishing {
            for _ in 0..200 {
                let cand = project_simplex(&sub(&f, &grad, step));
                if cand == f {
                    step *= 0.5;
                    continue;
                }
                let cand_grad = expected_loss_grad(wh, &Probs::new(cand.clone())?, target)?;
                let cand_mapped = project_simplex(&sub(&cand, &cand_grad, 1.0));
                let cand_residual = norm2(&sub_vec(&cand, &cand_mapped));
                if cand_residual < residual {
                    f = cand;
                    step = (step * 2.0).min(1e6);
                    accepted = true;
                    break;
                }
                step *= 0.5;
                if step < 1e-18 {
                    break;
                }
            }
            if !accepted {
                // no step reduces the residual any further
                break;
            }
        }
    }

    // report the objective and residual at the point actually returned
    value = expected_loss(wh, &Probs::new(f.clone())?, target)?;
    let grad = expected_loss_grad(wh, &Probs::new(f.clone())?, target)?;
    let mapped = project_simplex(&sub(&f, &grad, 1.0));
    let residual = norm2(&sub_vec(&f, &mapped));
    Ok(SimplexMinResult {
        minimizer: Probs::new(f)?,
        value,
        gradient_norm_at_solution: residual,
        iterations,
        converged,
    })
}

fn sub(x: &[f64], g: &[f64], step: f64) -> Vec<f64> {
    x.iter().zip(g).map(|(a, b)| a - step * b).collect()
}

fn sub_vec(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Exact transport cost between two leaf distributions under the tree
/// metric, solved as an integer-scaled min-cost flow on the bipartite
/// transport graph (successive shortest paths).
pub fn ot_lp(wh: &WeightedHierarchy, mu: &[f64], nu: &[f64]) -> Result<f64> {
    let h = wh.tree();
    let k = h.leaf_count();
    if k > ORACLE_LEAF_CAP {
        return Err(Error::SizeCap {
            limit: ORACLE_LEAF_CAP,
            actual: k,
        });
    }
    let supplies = integer_masses(mu, k)?;
    let demands = integer_masses(nu, k)?;

    // node layout: 0 = source, 1..=k suppliers, k+1..=2k consumers, 2k+1 = sink
    let sink = 2 * k + 1;
    let mut net = FlowNetwork::new(sink + 1);
    for i in 0..k {
        net.add_edge(0, 1 + i, supplies[i], 0.0);
        net.add_edge(1 + k + i, sink, demands[i], 0.0);
    }
    for i in 0..k {
        for j in 0..k {
            let cost = wh.tree_distance(i + 1, j + 1)?;
            net.add_edge(1 + i, 1 + k + j, MASS_SCALE, cost);
        }
    }
    let total = net.min_cost_max_flow(0, sink)?;
    Ok(total / MASS_SCALE as f64)
}

const MASS_SCALE: i64 = 1_000_000_000_000;

/// Round a distribution to integer masses summing exactly to the scale;
/// the rounding drift (at most a few units) lands on the largest entry.
fn integer_masses(dist: &[f64], k: usize) -> Result<Vec<i64>> {
    if dist.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: dist.len(),
        });
    }
    let mut sum = 0.0;
    for &v in dist {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidDistribution(format!("mass {v}")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("mass sums to {sum}")));
    }
    let mut ints: Vec<i64> = dist
        .iter()
        .map(|&v| (v * MASS_SCALE as f64).round() as i64)
        .collect();
    let drift: i64 = MASS_SCALE - ints.iter().sum::<i64>();
    let argmax = (0..k).max_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap()).unwrap();
    ints[argmax] += drift;
    if ints[argmax] < 0 {
        return Err(Error::InvalidDistribution(
            "rounding drift exceeded the largest mass".into(),
        ));
    }
    Ok(ints)
}

struct FlowEdge {
    to: usize,
    capacity: i64,
    cost: f64,
}

struct FlowNetwork {
    adjacency: Vec<Vec<usize>>,
    edges: Vec<FlowEdge>,
}

impl FlowNetwork {
    fn new(nodes: usize) -> FlowNetwork {
        FlowNetwork {
            adjacency: vec![Vec::new(); nodes],
            edges: Vec::new(),
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, capacity: i64, cost: f64) {
        self.adjacency[from].push(self.edges.len());
        self.edges.push(FlowEdge { to, capacity, cost });
        self.adjacency[to].push(self.edges.len());
        self.edges.push(FlowEdge {
            to: from,
            capacity: 0,
            cost: -cost,
        });
    }

    /// Successive shortest augmenting paths with Bellman-Ford (residual
    /// costs can be negative). Returns the total cost of the maximum flow.
    fn min_cost_max_flow(&mut self, source: usize, sink: usize) -> Result<f64> {
        let n = self.adjacency.len();
        let mut total_cost = 0.0;
        for _round in 0..100_000 {
            let mut dist = vec![f64::INFINITY; n];
            let mut incoming: Vec<Option<usize>> = vec![None; n];
            dist[source] = 0.0;
            for _ in 0..n {
                let mut changed = false;
                for u in 0..n {
                    if dist[u].is_infinite() {
                        continue;
                    }
                    for &eid in &self.adjacency[u] {
                        let e = &self.edges[eid];
                        if e.capacity > 0 && dist[u] + e.cost < dist[e.to] {
                            dist[e.to] = dist[u] + e.cost;
                            incoming[e.to] = Some(eid);
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            if dist[sink].is_infinite() {
                return Ok(total_cost);
            }
            let mut bottleneck = i64::MAX;
            let mut v = sink;
            while v != source {
                let eid = incoming[v].expect("path reaches the source");
                bottleneck = bottleneck.min(self.edges[eid].capacity);
                v = self.edges[eid ^ 1].to;
            }
            let mut v = sink;
            while v != source {
                let eid = incoming[v].expect("path reaches the source");
                self.edges[eid].capacity -= bottleneck;
                self.edges[eid ^ 1].capacity += bottleneck;
                v = self.edges[eid ^ 1].to;
            }
            total_cost += bottleneck as f64 * dist[sink];
        }
        Err(Error::NoConvergence(
            "min-cost flow exceeded its augmentation budget".into(),
        ))
    }
}

/// Shortest-path distance between any two nodes, walking the tree edge by
/// edge; node `j`'s weight acts as the length of its edge to its parent.
/// The walk starts from the lower-numbered endpoint.
pub fn bfs_distance(wh: &WeightedHierarchy, a: usize, b: usize) -> Result<f64> {
    let h = wh.tree();
    let n = h.node_count();
    if a >= n {
        return Err(Error::UnknownNode(a));
    }
    if b >= n {
        return Err(Error::UnknownNode(b));
    }
    if a == b {
        return Ok(0.0);
    }
    let (start, goal) = (a.min(b), a.max(b));
    let mut dist = vec![f64::INFINITY; n];
    let mut queue = std::collections::VecDeque::from([start]);
    dist[start] = 0.0;
    while let Some(u) = queue.pop_front() {
        if u == goal {
            break;
        }
        let relax = |v: usize, edge: f64, dist: &mut Vec<f64>, queue: &mut std::collections::VecDeque<usize>| {
            if dist[v].is_infinite() {
                dist[v] = dist[u] + edge;
                queue.push_back(v);
            }
        };
        if let Some(p) = h.parent(u) {
            relax(p, wh.weight(u), &mut dist, &mut queue);
        }
        for &c in h.children(u) {
            relax(c, wh.weight(c), &mut dist, &mut queue);
        }
    }
    Ok(dist[goal])
}
