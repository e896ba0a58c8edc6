//! Rooted class trees: parsing, index normalization, ancestor and LCA
//! queries, and threshold pruning into coarser label partitions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weighting::WeightedHierarchy;

/// A validated rooted tree over class labels.
///
/// Node ids are normalized on construction: the root is 0, leaves are
/// `1..=K` in input order, and internal nodes follow, ordered by height and
/// then input order. All per-node queries use normalized ids.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    names: Vec<String>,
    original_ids: Vec<String>,
    heights: Vec<usize>,
    depths: Vec<usize>,
    leaf_count: usize,
}

/// One group of a pruned tree: the surviving node and the leaves it absorbs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneGroup {
    pub supernode: usize,
    pub leaves: Vec<usize>,
}

/// A partition of the leaves induced by pruning at a threshold.
#[derive(Debug, Clone)]
pub struct PrunedPartition {
    pub threshold: f64,
    /// Groups ordered by their smallest member leaf.
    pub groups: Vec<PruneGroup>,
}

impl PrunedPartition {
    /// Map from leaf id to group index; entry 0 is unused.
    pub fn group_assignment(&self) -> Vec<usize> {
        let leaf_count: usize = self.groups.iter().map(|g| g.leaves.len()).sum();
        let mut assign = vec![usize::MAX; leaf_count + 1];
        for (gi, group) in self.groups.iter().enumerate() {
            for &leaf in &group.leaves {
                assign[leaf] = gi;
            }
        }
        assign
    }
}

struct RawNode {
    id: String,
    parent: Option<String>,
    name: String,
    leaf_flag: bool,
}

#[derive(Deserialize)]
struct TreeDoc {
    nodes: Vec<NodeEntry>,
}

#[derive(Deserialize)]
struct NodeEntry {
    id: JsonId,
    #[serde(default)]
    parent: Option<JsonId>,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    leaf: bool,
    // present in serialized output; accepted and ignored on input
    #[serde(default)]
    #[allow(dead_code)]
    original_id: Option<JsonId>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonId {
    Num(i64),
    Text(String),
}

impl JsonId {
    fn into_string(self) -> String {
        match self {
            JsonId::Num(n) => n.to_string(),
            JsonId::Text(s) => s,
        }
    }
}

#[derive(Serialize)]
struct NodeOut<'a> {
    id: usize,
    parent: Option<usize>,
    name: &'a str,
    original_id: &'a str,
}

/// Parse a tree document.
///
/// Two forms are accepted: a JSON object `{"nodes": [{id, parent, name?,
/// leaf?}, ...]}` where the root has a null or absent parent, and a
/// tab-separated `child<TAB>parent` edge list with `#` comments.
pub fn parse_hierarchy(text: &str) -> Result<Hierarchy> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        parse_json(text)
    } else {
        parse_edge_list(text)
    }
}

/// Serialize a hierarchy as a JSON tree document with normalized ids.
pub fn serialize_hierarchy(h: &Hierarchy) -> String {
    let nodes: Vec<NodeOut> = (0..h.node_count())
        .map(|j| NodeOut {
            id: j,
            parent: h.parent(j),
            name: h.name(j),
            original_id: h.original_id(j),
        })
        .collect();
    let mut doc = serde_json::Map::new();
    doc.insert(
        "nodes".to_string(),
        serde_json::to_value(nodes).expect("tree serialization cannot fail"),
    );
    serde_json::to_string_pretty(&serde_json::Value::Object(doc))
        .expect("tree serialization cannot fail")
}

fn parse_json(text: &str) -> Result<Hierarchy> {
    let doc: TreeDoc =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("tree document: {e}")))?;
    let raw = doc
        .nodes
        .into_iter()
        .map(|entry| RawNode {
            id: entry.id.into_string(),
            parent: entry.parent.map(JsonId::into_string),
            name: entry.name.unwrap_or_default(),
            leaf_flag: entry.leaf,
        })
        .collect();
    build_from_raw(raw)
}

fn parse_edge_list(text: &str) -> Result<Hierarchy> {
    let mut raw: Vec<RawNode> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let intern = |raw: &mut Vec<RawNode>, index: &mut HashMap<String, usize>, id: &str| {
        *index.entry(id.to_string()).or_insert_with(|| {
            raw.push(RawNode {
                id: id.to_string(),
                parent: None,
                name: String::new(),
                leaf_flag: false,
            });
            raw.len() - 1
        })
    };
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t').map(str::trim);
        let child = fields.next().unwrap_or("");
        let parent = fields.next().unwrap_or("");
        if child.is_empty() || parent.is_empty() || fields.next().is_some() {
            return Err(Error::Parse(format!(
                "line {}: expected `child<TAB>parent`",
                lineno + 1
            )));
        }
        let ci = intern(&mut raw, &mut index, child);
        let _ = intern(&mut raw, &mut index, parent);
        if raw[ci].parent.is_some() {
            return Err(Error::DuplicateId(child.to_string()));
        }
        raw[ci].parent = Some(parent.to_string());
    }
    build_from_raw(raw)
}

fn build_from_raw(raw: Vec<RawNode>) -> Result<Hierarchy> {
    let n = raw.len();
    let mut index: HashMap<&str, usize> = HashMap::with_capacity(n);
    for (i, node) in raw.iter().enumerate() {
        if index.insert(node.id.as_str(), i).is_some() {
            return Err(Error::DuplicateId(node.id.clone()));
        }
    }

    let roots: Vec<usize> = (0..n).filter(|&i| raw[i].parent.is_none()).collect();
    if roots.is_empty() {
        return Err(Error::NoRoot);
    }
    if roots.len() > 1 {
        return Err(Error::MultipleRoots(
            raw[roots[0]].id.clone(),
            raw[roots[1]].id.clone(),
        ));
    }
    let root = roots[0];
    if n < 2 {
        return Err(Error::TooSmall);
    }

    let mut parent_ix: Vec<Option<usize>> = vec![None; n];
    let mut kids: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, node) in raw.iter().enumerate() {
        if let Some(p) = &node.parent {
            let &pi = index.get(p.as_str()).ok_or_else(|| Error::Orphan {
                child: node.id.clone(),
                parent: p.clone(),
            })?;
            parent_ix[i] = Some(pi);
            kids[pi].push(i);
        }
    }

    // reachability from the root; anything missed sits on a cycle or island
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    visited[root] = true;
    order.push(root);
    let mut head = 0;
    while head < order.len() {
        let u = order[head];
        head += 1;
        for &c in &kids[u] {
            if !visited[c] {
                visited[c] = true;
                order.push(c);
            }
        }
    }
    if order.len() < n {
        let missing = (0..n).find(|&i| !visited[i]).unwrap();
        return Err(Error::Unreachable(raw[missing].id.clone()));
    }

    for (i, node) in raw.iter().enumerate() {
        if node.leaf_flag && !kids[i].is_empty() {
            return Err(Error::LeafWithChildren(node.id.clone()));
        }
    }

    let mut depth = vec![0usize; n];
    for &u in order.iter().skip(1) {
        depth[u] = depth[parent_ix[u].unwrap()] + 1;
    }
    let mut height = vec![0usize; n];
    for &u in order.iter().rev() {
        height[u] = kids[u].iter().map(|&c| height[c] + 1).max().unwrap_or(0);
    }

    let leaves: Vec<usize> = (0..n).filter(|&i| kids[i].is_empty()).collect();
    let mut internals: Vec<usize> = (0..n)
        .filter(|&i| i != root && !kids[i].is_empty())
        .collect();
    internals.sort_by_key(|&i| (height[i], i));

    let mut new_id = vec![0usize; n];
    for (k, &i) in leaves.iter().enumerate() {
        new_id[i] = k + 1;
    }
    for (t, &i) in internals.iter().enumerate() {
        new_id[i] = leaves.len() + 1 + t;
    }

    let mut h = Hierarchy {
        parent: vec![None; n],
        children: vec![Vec::new(); n],
        names: vec![String::new(); n],
        original_ids: vec![String::new(); n],
        heights: vec![0; n],
        depths: vec![0; n],
        leaf_count: leaves.len(),
    };
    for (i, node) in raw.iter().enumerate() {
        let j = new_id[i];
        h.parent[j] = parent_ix[i].map(|p| new_id[p]);
        h.children[j] = kids[i].iter().map(|&c| new_id[c]).collect();
        h.names[j] = node.name.clone();
        h.original_ids[j] = node.id.clone();
        h.heights[j] = height[i];
        h.depths[j] = depth[i];
    }
    Ok(h)
}

impl Hierarchy {
    /// Build directly from a parent array, where `parents[i]` names the
    /// parent of raw node `i` and exactly one entry is `None` (the root).
    /// Ids are normalized as in `parse_hierarchy`.
    pub fn from_parents(parents: &[Option<usize>]) -> Result<Hierarchy> {
        let raw = parents
            .iter()
            .enumerate()
            .map(|(i, p)| RawNode {
                id: i.to_string(),
                parent: p.map(|v| v.to_string()),
                name: String::new(),
                leaf_flag: false,
            })
            .collect();
        build_from_raw(raw)
    }

    pub fn node_count(&self) -> usize {
        self.parent.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn is_leaf(&self, j: usize) -> bool {
        (1..=self.leaf_count).contains(&j)
    }

    /// Parent of `j`, or `None` for the root. Panics on out-of-range ids.
    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parent[j]
    }

    /// Children of `j` in input order. Panics on out-of-range ids.
    pub fn children(&self, j: usize) -> &[usize] {
        &self.children[j]
    }

    pub fn name(&self, j: usize) -> &str {
        &self.names[j]
    }

    pub fn original_id(&self, j: usize) -> &str {
        &self.original_ids[j]
    }

    fn check_node(&self, j: usize) -> Result<()> {
        if j < self.node_count() {
            Ok(())
        } else {
            Err(Error::UnknownNode(j))
        }
    }

    pub fn check_leaf(&self, j: usize) -> Result<()> {
        self.check_node(j)?;
        if self.is_leaf(j) {
            Ok(())
        } else {
            Err(Error::NotALeaf(j))
        }
    }

    /// Path from `j` up to but excluding the root, `j` first.
    pub fn ancestors(&self, j: usize) -> Result<Vec<usize>> {
        self.check_node(j)?;
        if j == 0 {
            return Err(Error::RootHasNoAncestors);
        }
        Ok(self.walk_up(j).collect())
    }

    /// Same path as `ancestors`, without allocation or id validation.
    pub(crate) fn walk_up(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        debug_assert!(j != 0 && j < self.node_count());
        std::iter::successors(Some(j), move |&cur| {
            self.parent[cur].filter(|&p| p != 0)
        })
    }

    /// Deepest node that is an ancestor of both arguments (root included).
    pub fn lca(&self, a: usize, b: usize) -> Result<usize> {
        self.check_node(a)?;
        self.check_node(b)?;
        let (mut a, mut b) = (a, b);
        while self.depths[a] > self.depths[b] {
            a = self.parent[a].unwrap();
        }
        while self.depths[b] > self.depths[a] {
            b = self.parent[b].unwrap();
        }
        while a != b {
            a = self.parent[a].unwrap();
            b = self.parent[b].unwrap();
        }
        Ok(a)
    }

    /// Edges from `j` down to its deepest descendant leaf.
    pub fn height(&self, j: usize) -> Result<usize> {
        self.check_node(j)?;
        Ok(self.heights[j])
    }

    /// Edges from the root down to `j`.
    pub fn depth(&self, j: usize) -> Result<usize> {
        self.check_node(j)?;
        Ok(self.depths[j])
    }

    /// All leaves in the subtree rooted at `j`, ascending.
    pub fn descendant_leaves(&self, j: usize) -> Result<Vec<usize>> {
        self.check_node(j)?;
        let mut out = Vec::new();
        let mut stack = vec![j];
        while let Some(u) = stack.pop() {
            if self.is_leaf(u) {
                out.push(u);
            }
            stack.extend_from_slice(&self.children[u]);
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Resolve a label token to a leaf id: a normalized numeric id first,
    /// then an exact original-id match, then a unique name match.
    pub fn lookup_leaf(&self, token: &str) -> Result<usize> {
        if let Ok(k) = token.parse::<usize>() {
            if self.is_leaf(k) {
                return Ok(k);
            }
        }
        if let Some(j) = (0..self.node_count()).find(|&j| self.original_ids[j] == token) {
            self.check_leaf(j)?;
            return Ok(j);
        }
        let named: Vec<usize> = (1..=self.leaf_count)
            .filter(|&j| !self.names[j].is_empty() && self.names[j] == token)
            .collect();
        match named.as_slice() {
            [j] => Ok(*j),
            _ => Err(Error::UnknownLabel(token.to_string())),
        }
    }
}

// Threshold comparisons in `prune` shift both sides of the sandwich by this
// slack, so that thresholds taken from the weighting's own cumulative sums
// (and the exact 1/2 endpoint) behave as they would in exact arithmetic.
const PRUNE_SLACK: f64 = 1e-9;

/// Collapse the tree at threshold `tau`: keep the nodes furthest from the
/// root whose cumulative ancestor weight first reaches `tau`, grouping the
/// leaves below each one. The node `l` is kept when
/// `cum(parent(l)) < tau <= cum(l)`, which picks exactly one node per
/// root-to-leaf path.
pub fn prune(wh: &WeightedHierarchy, tau: f64) -> Result<PrunedPartition> {
    if !(tau > 0.0 && tau <= 0.5) || !tau.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "pruning threshold must lie in (0, 1/2], got {tau}"
        )));
    }
    let violations = wh.validate_balanced(1e-9);
    if let Some(&leaf) = violations.first() {
        return Err(Error::Unbalanced {
            leaf,
            sum: wh.cumulative_sum(leaf),
        });
    }
    let h = wh.tree();
    let reached = |v: usize| tau <= wh.cumulative_sum(v) + PRUNE_SLACK;
    let mut groups = Vec::new();
    for node in 1..h.node_count() {
        let parent_reached = match h.parent(node) {
            Some(0) | None => false,
            Some(p) => reached(p),
        };
        if reached(node) && !parent_reached {
            groups.push(PruneGroup {
                supernode: node,
                leaves: h.descendant_leaves(node)?,
            });
        }
    }
    groups.sort_by_key(|g| g.leaves[0]);
    debug_assert_eq!(
        groups.iter().map(|g| g.leaves.len()).sum::<usize>(),
        h.leaf_count()
    );
    Ok(PrunedPartition {
        threshold: tau,
        groups,
    })
}

/// All thresholds at which the pruned partition can change: the distinct
/// cumulative ancestor-weight sums, ending at exactly 1/2.
pub fn tau_grid(wh: &WeightedHierarchy) -> Vec<f64> {
    let h = wh.tree();
    let mut cums: Vec<f64> = (1..h.node_count())
        .map(|j| wh.cumulative_sum(j).min(0.5))
        .filter(|&c| c > 0.0)
        .collect();
    cums.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut grid: Vec<f64> = Vec::with_capacity(cums.len());
    for c in cums {
        if grid.last().is_none_or(|&prev| c - prev > 1e-12) {
            grid.push(c);
        }
    }
    match grid.last_mut() {
        Some(last) if (*last - 0.5).abs() <= 1e-12 => *last = 0.5,
        _ => grid.push(0.5),
    }
    grid
}
