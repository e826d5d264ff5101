//! Finite filtered probability spaces.
//!
//! A [`FilteredTree`] is a rooted tree whose depth-`t` cross-section is the
//! set of atoms of the σ-algebra at time `t`. Every node carries the
//! probability of being reached from its parent; the leaves, all at depth
//! `T`, are the outcomes. Processes on the tree are adapted by construction
//! because they assign one value per node.

mod lattice;
mod rules;

pub use lattice::{BinomialLattice, LatticeMoves};
pub use rules::{StoppingRule, StoppingRules, DEFAULT_RULE_CAP};

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Index of a node inside its tree. The root is always `0`.
pub type NodeId = usize;

/// Tolerance used by the optimal rule to decide that `h` attains the envelope.
pub const STOP_TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
struct Node<T> {
    time: usize,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    branch_prob: T,
    path_prob: T,
}

/// Incremental construction of a [`FilteredTree`]; validation happens in
/// [`TreeBuilder::build`].
#[derive(Debug, Clone)]
pub struct TreeBuilder<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for TreeBuilder<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> TreeBuilder<T> {
    pub fn new() -> Self {
        let root = Node {
            time: 0,
            parent: None,
            children: Vec::new(),
            branch_prob: T::one(),
            path_prob: T::one(),
        };
        Self { nodes: vec![root] }
    }

    pub fn root(&self) -> NodeId {
        0
    }

    /// Appends a child reached from `parent` with probability `prob`.
    pub fn add_child(&mut self, parent: NodeId, prob: T) -> Result<NodeId> {
        let Some(p) = self.nodes.get(parent) else {
            return Err(Error::InvalidTree(format!("parent {parent} does not exist")));
        };
        let id = self.nodes.len();
        let node = Node {
            time: p.time + 1,
            parent: Some(parent),
            children: Vec::new(),
            branch_prob: prob,
            path_prob: p.path_prob * prob,
        };
        self.nodes[parent].children.push(id);
        self.nodes.push(node);
        Ok(id)
    }

    pub fn build(self) -> Result<FilteredTree<T>> {
        FilteredTree::from_nodes(self.nodes)
    }
}

/// Exact finite filtration: atoms at time `t` are the nodes of depth `t`.
#[derive(Debug, Clone)]
pub struct FilteredTree<T> {
    nodes: Vec<Node<T>>,
    depth: usize,
    by_time: Vec<Vec<NodeId>>,
}

impl<T: Scalar> FilteredTree<T> {
    fn from_nodes(nodes: Vec<Node<T>>) -> Result<Self> {
        let tol = T::tolerance(1e-12);
        let depth = nodes.iter().map(|n| n.time).max().unwrap_or(0);
        let mut by_time = vec![Vec::new(); depth + 1];
        for (id, node) in nodes.iter().enumerate() {
            by_time[node.time].push(id);
            if id > 0 {
                let p = node.branch_prob;
                if !p.is_finite() || p <= T::zero() || p > T::one() + tol {
                    return Err(Error::InvalidTree(format!(
                        "node {id} has branch probability {p}, expected a value in (0, 1]"
                    )));
                }
                if node.path_prob <= T::zero() {
                    return Err(Error::InvalidTree(format!(
                        "node {id} has vanishing path probability"
                    )));
                }
            }
            if node.children.is_empty() {
                if node.time != depth {
                    return Err(Error::InvalidTree(format!(
                        "leaf {id} sits at time {} but the horizon is {depth}",
                        node.time
                    )));
                }
            } else {
                let total: T = node.children.iter().map(|&c| nodes[c].branch_prob).sum();
                if (total - T::one()).abs() > tol {
                    return Err(Error::InvalidTree(format!(
                        "children of node {id} carry total probability {total}"
                    )));
                }
            }
        }
        Ok(Self { nodes, depth, by_time })
    }

    /// A single deterministic path `0 -> 1 -> ... -> depth`.
    pub fn chain(depth: usize) -> Self {
        Self::uniform(depth, 1)
    }

    /// Complete tree with `branching` equally likely children per node.
    pub fn uniform(depth: usize, branching: usize) -> Self {
        assert!(branching >= 1, "branching must be positive");
        let mut b = TreeBuilder::new();
        let prob = T::one() / T::from_usize_lossy(branching);
        let mut frontier = vec![b.root()];
        for _ in 0..depth {
            let mut next = Vec::with_capacity(frontier.len() * branching);
            for &parent in &frontier {
                for _ in 0..branching {
                    next.push(b.add_child(parent, prob).expect("parent exists"));
                }
            }
            frontier = next;
        }
        b.build().expect("uniform tree is valid")
    }

    /// Symmetric ±1 random walk started at 0, together with its position
    /// process. Child 0 of every node is the up move.
    pub fn random_walk(depth: usize) -> (Self, AdaptedProcess<T>) {
        let tree = Self::uniform(depth, 2);
        let mut pos = vec![T::zero(); tree.len()];
        for id in 1..tree.len() {
            let parent = tree.parent(id).expect("non-root");
            let step = if tree.children(parent)[0] == id { T::one() } else { -T::one() };
            pos[id] = pos[parent] + step;
        }
        (tree, AdaptedProcess { values: pos })
    }

    /// Random tree of exactly `depth` levels where every internal node has
    /// between 1 and `max_branching` children with random positive
    /// probabilities (each at least `0.05 / branching`).
    pub fn random<R: Rng + ?Sized>(rng: &mut R, depth: usize, max_branching: usize) -> Self {
        assert!(max_branching >= 1, "branching must be positive");
        let mut b = TreeBuilder::new();
        let mut frontier = vec![b.root()];
        for _ in 0..depth {
            let mut next = Vec::new();
            for &parent in &frontier {
                let k = rng.random_range(1..=max_branching);
                let raw: Vec<f64> = (0..k).map(|_| 0.05 + rng.random::<f64>()).collect();
                let total: f64 = raw.iter().sum();
                let mut used = T::zero();
                for (i, w) in raw.iter().enumerate() {
                    // last child absorbs rounding so the family sums to one
                    let p = if i + 1 == k { T::one() - used } else { T::lit(w / total) };
                    used += p;
                    next.push(b.add_child(parent, p).expect("parent exists"));
                }
            }
            frontier = next;
        }
        b.build().expect("random tree is valid")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Horizon `T`: the common depth of all leaves.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn time(&self, id: NodeId) -> usize {
        self.nodes[id].time
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id].children
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id].children.is_empty()
    }

    pub fn branch_prob(&self, id: NodeId) -> T {
        self.nodes[id].branch_prob
    }

    /// Probability of the atom `id`: product of branch probabilities to the root.
    pub fn path_prob(&self, id: NodeId) -> T {
        self.nodes[id].path_prob
    }

    /// Atoms of the σ-algebra at time `t`.
    pub fn nodes_at(&self, t: usize) -> &[NodeId] {
        &self.by_time[t]
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.by_time[self.depth]
    }

    /// Ancestor of `id` at time `t <= time(id)` (the node itself when equal).
    pub fn ancestor_at(&self, mut id: NodeId, t: usize) -> NodeId {
        assert!(t <= self.time(id), "ancestor time after node time");
        while self.time(id) > t {
            id = self.parent(id).expect("non-root has a parent");
        }
        id
    }

    /// Nodes on the path from the root to `id`, root first.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = Vec::with_capacity(self.time(id) + 1);
        let mut cur = Some(id);
        while let Some(v) = cur {
            path.push(v);
            cur = self.parent(v);
        }
        path.reverse();
        path
    }

    fn check_len(&self, x: &AdaptedProcess<T>) -> Result<()> {
        if x.len() != self.len() {
            return Err(Error::LengthMismatch { expected: self.len(), got: x.len() });
        }
        Ok(())
    }

    /// `E[X_s | F_v]` for every node `v` with `time(v) <= s`; entries below
    /// depth `s` are left untouched in the returned buffer.
    fn expectations_of_time(&self, x: &AdaptedProcess<T>, s: usize) -> Vec<T> {
        let mut out = x.values.clone();
        for t in (0..s).rev() {
            for &v in self.nodes_at(t) {
                out[v] = self
                    .children(v)
                    .iter()
                    .map(|&c| self.branch_prob(c) * out[c])
                    .sum();
            }
        }
        out
    }

    /// Conditional expectation of the terminal value `X_T` given `F_t`.
    ///
    /// At nodes of depth at most `t` the result is `E[X_T | node]`; below
    /// depth `t` it is constant along each conditioning atom.
    pub fn conditional_expectation(&self, x: &AdaptedProcess<T>, t: usize) -> Result<AdaptedProcess<T>> {
        self.conditional_expectation_of(x, self.depth, t)
    }

    /// Conditional expectation of `X_s` given `F_t`, for `t <= s <= T`.
    pub fn conditional_expectation_of(
        &self,
        x: &AdaptedProcess<T>,
        s: usize,
        t: usize,
    ) -> Result<AdaptedProcess<T>> {
        self.check_len(x)?;
        if s > self.depth {
            return Err(Error::TimeOutOfRange { t: s, depth: self.depth });
        }
        if t > s {
            return Err(Error::TimeOutOfRange { t, depth: s });
        }
        let cond = self.expectations_of_time(x, s);
        let mut values = cond.clone();
        for (v, val) in values.iter_mut().enumerate() {
            if self.time(v) > t {
                *val = cond[self.ancestor_at(v, t)];
            }
        }
        Ok(AdaptedProcess { values })
    }

    /// Snell envelope of `h` by backward induction:
    /// `S_T = h_T`, `S_t = max(h_t, E[S_{t+1} | F_t])`.
    pub fn snell_envelope(&self, h: &AdaptedProcess<T>) -> Result<AdaptedProcess<T>> {
        self.check_len(h)?;
        let mut s = h.values.clone();
        for t in (0..self.depth).rev() {
            for &v in self.nodes_at(t) {
                let cont: T = self
                    .children(v)
                    .iter()
                    .map(|&c| self.branch_prob(c) * s[c])
                    .sum();
                s[v] = h.values[v].max(cont);
            }
        }
        Ok(AdaptedProcess { values: s })
    }

    /// `sup_τ E h_τ`, the root value of the Snell envelope.
    pub fn optimal_value(&self, h: &AdaptedProcess<T>) -> Result<T> {
        Ok(self.snell_envelope(h)?.values[0])
    }

    /// Stops at the first node where `h` reaches the envelope (ties stop).
    pub fn optimal_rule(&self, h: &AdaptedProcess<T>) -> Result<StoppingRule> {
        let s = self.snell_envelope(h)?;
        let tol = T::tolerance(STOP_TIE_TOLERANCE);
        let mut stop = vec![false; self.len()];
        let mut stopped_above = vec![false; self.len()];
        for v in 0..self.len() {
            let above = self.parent(v).is_some_and(|p| stopped_above[p]);
            if above {
                stopped_above[v] = true;
                continue;
            }
            let attains = h.values[v] >= s.values[v] - tol * T::one().max(s.values[v].abs());
            if attains || self.is_leaf(v) {
                stop[v] = true;
                stopped_above[v] = true;
            }
        }
        StoppingRule::new(self, stop)
    }

    /// `E h_τ`: path probability times payoff, summed over stop nodes.
    pub fn evaluate_stopped(&self, h: &AdaptedProcess<T>, rule: &StoppingRule) -> Result<T> {
        self.check_len(h)?;
        rule.check_tree(self)?;
        Ok(rule
            .stop_nodes()
            .map(|v| self.path_prob(v) * h.values[v])
            .sum())
    }
}

/// One real value per node of a [`FilteredTree`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess<T> {
    values: Vec<T>,
}

impl<T: Scalar> AdaptedProcess<T> {
    pub fn new(tree: &FilteredTree<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != tree.len() {
            return Err(Error::LengthMismatch { expected: tree.len(), got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("process value at node {i}")));
        }
        Ok(Self { values })
    }

    pub fn from_fn(tree: &FilteredTree<T>, f: impl FnMut(NodeId) -> T) -> Self {
        Self { values: (0..tree.len()).map(f).collect() }
    }

    pub fn constant(tree: &FilteredTree<T>, c: T) -> Self {
        Self { values: vec![c; tree.len()] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn get(&self, id: NodeId) -> T {
        self.values[id]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { values: self.values.iter().map(|&v| f(v)).collect() }
    }
}

impl<T> std::ops::Index<NodeId> for AdaptedProcess<T> {
    type Output = T;

    fn index(&self, id: NodeId) -> &T {
        &self.values[id]
    }
}
