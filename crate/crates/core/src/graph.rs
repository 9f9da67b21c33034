//! Label-relation graph, transitive closure, attribute imputation and
//! positive / negative context sampling.
//!
//! Edges are directed `parent → child` ("is-a") relations. Two nodes are
//! *related* when a directed path joins them in either direction. The prior
//! set `P` is every node without training images (unseen and internal
//! nodes); the optional `Root` node stands for the fixed N(0, I) prior and is
//! a positive context for everyone.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Seen,
    Unseen,
    Internal,
    Root,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Seen => "seen",
            NodeKind::Unseen => "unseen",
            NodeKind::Internal => "internal",
            NodeKind::Root => "root",
        }
    }

    /// Parses the kinds allowed in `nodes.tsv` (`root` is never stored on disk).
    pub fn parse_file_kind(s: &str) -> Option<Self> {
        match s {
            "seen" => Some(NodeKind::Seen),
            "unseen" => Some(NodeKind::Unseen),
            "internal" => Some(NodeKind::Internal),
            _ => None,
        }
    }

    /// Whether nodes of this kind carry a learned prior.
    pub fn in_prior_set(self) -> bool {
        matches!(self, NodeKind::Unseen | NodeKind::Internal)
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelNode {
    pub id: usize,
    pub name: String,
    pub kind: NodeKind,
    pub attributes: Option<Vec<f64>>,
}

impl LabelNode {
    pub fn new(id: usize, name: impl Into<String>, kind: NodeKind, attributes: Option<Vec<f64>>) -> Self {
        Self {
            id,
            name: name.into(),
            kind,
            attributes,
        }
    }
}

/// Name given to the synthetic root added by [`LabelGraph::with_root`] and
/// [`flat_graph`].
pub const ROOT_NAME: &str = "<root>";

#[derive(Debug, Clone, PartialEq)]
pub struct LabelGraph {
    nodes: Vec<LabelNode>,
    edges: Vec<(usize, usize)>,
    index: HashMap<usize, usize>,
}

impl LabelGraph {
    /// Builds a graph, checking id uniqueness, edge endpoints, attribute
    /// presence on class nodes, and that at most one root exists. Acyclicity
    /// is checked separately by [`validate_dag`].
    pub fn new(nodes: Vec<LabelNode>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(Error::Graph(format!("duplicate node id {}", n.id)));
            }
            if matches!(n.kind, NodeKind::Seen | NodeKind::Unseen) && n.attributes.is_none() {
                return Err(Error::MissingAttributes(n.id));
            }
            if n.kind == NodeKind::Root && n.attributes.is_some() {
                return Err(Error::Graph("root node must not carry attributes".into()));
            }
        }
        if nodes.iter().filter(|n| n.kind == NodeKind::Root).count() > 1 {
            return Err(Error::Graph("more than one root node".into()));
        }
        let dims: BTreeSet<usize> = nodes
            .iter()
            .filter_map(|n| n.attributes.as_ref().map(Vec::len))
            .collect();
        if dims.len() > 1 {
            return Err(Error::Graph(format!("inconsistent attribute dimensions {dims:?}")));
        }
        for &(p, c) in &edges {
            for id in [p, c] {
                if !index.contains_key(&id) {
                    return Err(Error::Graph(format!("edge references unknown node id {id}")));
                }
            }
        }
        Ok(Self {
            nodes,
            edges,
            index,
        })
    }

    pub fn nodes(&self) -> &[LabelNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> Option<&LabelNode> {
        self.index.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn node_by_name(&self, name: &str) -> Option<&LabelNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn root(&self) -> Option<usize> {
        self.nodes.iter().find(|n| n.kind == NodeKind::Root).map(|n| n.id)
    }

    pub fn attribute_dim(&self) -> Option<usize> {
        self.nodes.iter().find_map(|n| n.attributes.as_ref().map(Vec::len))
    }

    fn ids_of(&self, pred: impl Fn(NodeKind) -> bool) -> Vec<usize> {
        let mut ids: Vec<usize> = self.nodes.iter().filter(|n| pred(n.kind)).map(|n| n.id).collect();
        ids.sort_unstable();
        ids
    }

    pub fn seen_ids(&self) -> Vec<usize> {
        self.ids_of(|k| k == NodeKind::Seen)
    }

    pub fn unseen_ids(&self) -> Vec<usize> {
        self.ids_of(|k| k == NodeKind::Unseen)
    }

    /// Ids of the learned prior set `P` (unseen and internal nodes), ascending.
    pub fn prior_ids(&self) -> Vec<usize> {
        self.ids_of(NodeKind::in_prior_set)
    }

    /// Adds a root node above every parentless node.
    pub fn with_root(&self) -> Result<LabelGraph> {
        if self.root().is_some() {
            return Err(Error::Graph("graph already has a root".into()));
        }
        let has_parent: BTreeSet<usize> = self.edges.iter().map(|&(_, c)| c).collect();
        let root_id = self.nodes.iter().map(|n| n.id).max().map_or(0, |m| m + 1);
        let mut nodes = self.nodes.clone();
        let mut edges = self.edges.clone();
        let mut sources: Vec<usize> = self
            .nodes
            .iter()
            .filter(|n| !has_parent.contains(&n.id))
            .map(|n| n.id)
            .collect();
        sources.sort_unstable();
        edges.extend(sources.into_iter().map(|s| (root_id, s)));
        nodes.push(LabelNode::new(root_id, ROOT_NAME, NodeKind::Root, None));
        LabelGraph::new(nodes, edges)
    }

    fn children_index(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.nodes.len()];
        for &(p, c) in &self.edges {
            children[self.index[&p]].push(self.index[&c]);
        }
        for ch in &mut children {
            ch.sort_unstable();
            ch.dedup();
        }
        children
    }

    /// `desc[i][j]` is true when a directed path leads from node `i` to node
    /// `j` (positions, not ids). Requires a DAG.
    fn descendant_matrix(&self) -> Vec<Vec<bool>> {
        let n = self.nodes.len();
        let children = self.children_index();
        let mut desc = vec![vec![false; n]; n];
        for order in topo_order_reversed(&children) {
            let mut row = vec![false; n];
            for &c in &children[order] {
                row[c] = true;
                for (r, d) in row.iter_mut().zip(&desc[c]) {
                    *r |= *d;
                }
            }
            desc[order] = row;
        }
        desc
    }
}

/// Children-first ordering of an acyclic adjacency list.
fn topo_order_reversed(children: &[Vec<usize>]) -> Vec<usize> {
    let n = children.len();
    let mut visited = vec![false; n];
    let mut out = Vec::with_capacity(n);
    for start in 0..n {
        if visited[start] {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        visited[start] = true;
        while let Some(&mut (u, ref mut k)) = stack.last_mut() {
            if *k < children[u].len() {
                let c = children[u][*k];
                *k += 1;
                if !visited[c] {
                    visited[c] = true;
                    stack.push((c, 0));
                }
            } else {
                out.push(u);
                stack.pop();
            }
        }
    }
    out
}

/// Accepts iff the graph has no directed cycle; otherwise names one cycle.
pub fn validate_dag(g: &LabelGraph) -> Result<()> {
    #[derive(Clone, Copy, PartialEq)]
    enum Color {
        White,
        Gray,
        Black,
    }
    let children = g.children_index();
    let n = children.len();
    let mut color = vec![Color::White; n];
    for start in 0..n {
        if color[start] != Color::White {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        color[start] = Color::Gray;
        while let Some(&mut (u, ref mut k)) = stack.last_mut() {
            if *k < children[u].len() {
                let c = children[u][*k];
                *k += 1;
                match color[c] {
                    Color::White => {
                        color[c] = Color::Gray;
                        stack.push((c, 0));
                    }
                    Color::Gray => {
                        let pos = stack.iter().position(|&(v, _)| v == c).expect("gray on stack");
                        let cycle = stack[pos..].iter().map(|&(v, _)| g.nodes[v].id).collect();
                        return Err(Error::Cycle(cycle));
                    }
                    Color::Black => {}
                }
            } else {
                color[u] = Color::Black;
                stack.pop();
            }
        }
    }
    Ok(())
}

/// Symmetric "connected by a directed path" relation plus the context pools
/// derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationClosure {
    ids: Vec<usize>,
    kinds: HashMap<usize, NodeKind>,
    related: HashMap<usize, BTreeSet<usize>>,
    prior_nodes: Vec<usize>,
    root: Option<usize>,
}

impl RelationClosure {
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Every node sharing a directed path with `id` (either direction).
    pub fn related(&self, id: usize) -> Option<&BTreeSet<usize>> {
        self.related.get(&id)
    }

    pub fn is_related(&self, a: usize, b: usize) -> bool {
        self.related.get(&a).is_some_and(|s| s.contains(&b))
    }

    /// The members of `related(id)` that belong to the prior set `P`.
    pub fn related_priors(&self, id: usize) -> Vec<usize> {
        self.related
            .get(&id)
            .map(|s| {
                s.iter()
                    .copied()
                    .filter(|r| self.kinds[r].in_prior_set())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn prior_nodes(&self) -> &[usize] {
        &self.prior_nodes
    }

    pub fn root(&self) -> Option<usize> {
        self.root
    }

    /// Positive candidates: related prior nodes plus the root.
    pub fn positive_pool(&self, id: usize) -> Vec<usize> {
        let mut pool = self.related_priors(id);
        if let Some(r) = self.root {
            if r != id {
                pool.push(r);
            }
        }
        pool
    }

    /// Negative candidates: prior nodes that are neither `id` nor related to it.
    pub fn negative_pool(&self, id: usize) -> Vec<usize> {
        let rel = self.related.get(&id);
        self.prior_nodes
            .iter()
            .copied()
            .filter(|&p| p != id && !rel.is_some_and(|s| s.contains(&p)))
            .collect()
    }

    /// Draws one `(positive, negative)` context pair uniformly from the pools of `id`.
    pub fn sample_context<R: Rng + ?Sized>(&self, id: usize, rng: &mut R) -> Result<(usize, usize)> {
        if !self.related.contains_key(&id) {
            return Err(Error::Graph(format!("unknown node id {id}")));
        }
        let pos = self.positive_pool(id);
        if pos.is_empty() {
            return Err(Error::EmptyPositivePool(id));
        }
        let neg = self.negative_pool(id);
        if neg.is_empty() {
            return Err(Error::EmptyNegativePool(id));
        }
        let p = pos[rng.random_range(0..pos.len())];
        let n = neg[rng.random_range(0..neg.len())];
        Ok((p, n))
    }
}

/// Computes the symmetric path relation of a validated DAG.
pub fn transitive_closure(g: &LabelGraph) -> Result<RelationClosure> {
    validate_dag(g)?;
    let desc = g.descendant_matrix();
    let n = g.len();
    let mut related: HashMap<usize, BTreeSet<usize>> = g.nodes.iter().map(|x| (x.id, BTreeSet::new())).collect();
    for i in 0..n {
        for j in 0..n {
            if i != j && desc[i][j] {
                let (a, b) = (g.nodes[i].id, g.nodes[j].id);
                related.get_mut(&a).expect("node").insert(b);
                related.get_mut(&b).expect("node").insert(a);
            }
        }
    }
    let mut ids: Vec<usize> = g.nodes.iter().map(|x| x.id).collect();
    ids.sort_unstable();
    Ok(RelationClosure {
        ids,
        kinds: g.nodes.iter().map(|x| (x.id, x.kind)).collect(),
        related,
        prior_nodes: g.prior_ids(),
        root: g.root(),
    })
}

/// Fills every unattributed non-root node with the mean attribute vector of
/// its originally attributed descendants.
pub fn impute_attributes(g: &LabelGraph) -> Result<LabelGraph> {
    validate_dag(g)?;
    let desc = g.descendant_matrix();
    let dim = g.attribute_dim();
    let mut nodes = g.nodes.clone();
    for (i, node) in g.nodes.iter().enumerate() {
        if node.attributes.is_some() || node.kind == NodeKind::Root {
            continue;
        }
        let dim = dim.ok_or(Error::MissingAttributes(node.id))?;
        let mut sum = vec![0.0; dim];
        let mut count = 0usize;
        for (j, other) in g.nodes.iter().enumerate() {
            if let (true, Some(a)) = (desc[i][j], other.attributes.as_ref()) {
                for (s, v) in sum.iter_mut().zip(a) {
                    *s += v;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::MissingAttributes(node.id));
        }
        let mean = sum.into_iter().map(|s| s / count as f64).collect();
        nodes[i].attributes = Some(mean);
    }
    LabelGraph::new(nodes, g.edges.clone())
}

/// Uninformative baseline graph: a single root with an edge to every class.
pub fn flat_graph(seen: &[LabelNode], unseen: &[LabelNode]) -> Result<LabelGraph> {
    let seen_ids: BTreeSet<usize> = seen.iter().map(|n| n.id).collect();
    if let Some(dup) = unseen.iter().find(|n| seen_ids.contains(&n.id)) {
        return Err(Error::Graph(format!(
            "class id {} is both seen and unseen",
            dup.id
        )));
    }
    let mut nodes = Vec::with_capacity(seen.len() + unseen.len() + 1);
    for (list, kind) in [(seen, NodeKind::Seen), (unseen, NodeKind::Unseen)] {
        for n in list {
            nodes.push(LabelNode::new(n.id, n.name.clone(), kind, n.attributes.clone()));
        }
    }
    let root_id = nodes.iter().map(|n| n.id).max().map_or(0, |m| m + 1);
    let mut class_ids: Vec<usize> = nodes.iter().map(|n| n.id).collect();
    class_ids.sort_unstable();
    let edges = class_ids.into_iter().map(|c| (root_id, c)).collect();
    nodes.push(LabelNode::new(root_id, ROOT_NAME, NodeKind::Root, None));
    LabelGraph::new(nodes, edges)
}

/// Flat baseline over the classes of an existing graph.
pub fn flat_graph_of(g: &LabelGraph) -> Result<LabelGraph> {
    let pick = |k: NodeKind| -> Vec<LabelNode> {
        g.nodes.iter().filter(|n| n.kind == k).cloned().collect()
    };
    flat_graph(&pick(NodeKind::Seen), &pick(NodeKind::Unseen))
}
