use super::{FilteredTree, NodeId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default refusal threshold for [`FilteredTree::enumerate_stopping_rules`].
pub const DEFAULT_RULE_CAP: u128 = 1_000_000;

/// Stop/continue flag per node. Every root-to-leaf path meets exactly one
/// stop node, so the rule is a finite stopping time of the tree filtration.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StoppingRule {
    stop: Vec<bool>,
}

impl StoppingRule {
    pub fn new<T: Scalar>(tree: &FilteredTree<T>, stop: Vec<bool>) -> Result<Self> {
        let rule = Self { stop };
        rule.check_tree(tree)?;
        Ok(rule)
    }

    pub fn at_root<T: Scalar>(tree: &FilteredTree<T>) -> Self {
        Self::at_time(tree, 0)
    }

    pub fn at_leaves<T: Scalar>(tree: &FilteredTree<T>) -> Self {
        Self::at_time(tree, tree.depth())
    }

    /// Deterministic stopping at time `t`.
    pub fn at_time<T: Scalar>(tree: &FilteredTree<T>, t: usize) -> Self {
        assert!(t <= tree.depth(), "stopping time beyond horizon");
        let mut stop = vec![false; tree.len()];
        for &v in tree.nodes_at(t) {
            stop[v] = true;
        }
        Self { stop }
    }

    pub fn len(&self) -> usize {
        self.stop.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stop.is_empty()
    }

    pub fn stops_at(&self, id: NodeId) -> bool {
        self.stop[id]
    }

    pub fn flags(&self) -> &[bool] {
        &self.stop
    }

    pub fn stop_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.stop.iter().enumerate().filter(|(_, &s)| s).map(|(v, _)| v)
    }

    /// Validates the exactly-one-stop-per-path property against `tree`.
    pub fn check_tree<T: Scalar>(&self, tree: &FilteredTree<T>) -> Result<()> {
        if self.stop.len() != tree.len() {
            return Err(Error::LengthMismatch { expected: tree.len(), got: self.stop.len() });
        }
        let mut seen = vec![0u8; tree.len()];
        for v in 0..tree.len() {
            let above = tree.parent(v).map_or(0, |p| seen[p]);
            seen[v] = above + u8::from(self.stop[v]);
            if seen[v] > 1 {
                return Err(Error::InvalidRule(format!("node {v} stops below an earlier stop")));
            }
            if tree.is_leaf(v) && seen[v] == 0 {
                return Err(Error::InvalidRule(format!("path to leaf {v} never stops")));
            }
        }
        Ok(())
    }
}

impl<T: Scalar> FilteredTree<T> {
    /// Number of stopping rules on the subtree rooted at `id`:
    /// `N(leaf) = 1`, `N(v) = 1 + prod_children N(child)`. Saturates at `u128::MAX`.
    pub fn rule_count_at(&self, id: NodeId) -> u128 {
        self.rule_counts()[id]
    }

    /// Number of stopping rules on the whole tree.
    pub fn rule_count(&self) -> u128 {
        self.rule_counts()[0]
    }

    fn rule_counts(&self) -> Vec<u128> {
        let mut n = vec![1u128; self.len()];
        for t in (0..self.depth()).rev() {
            for &v in self.nodes_at(t) {
                let prod = self
                    .children(v)
                    .iter()
                    .fold(1u128, |acc, &c| acc.saturating_mul(n[c]));
                n[v] = prod.saturating_add(1);
            }
        }
        n
    }

    /// Every stopping rule exactly once, in a fixed order. Refuses when the
    /// count exceeds `cap`.
    pub fn enumerate_stopping_rules(&self, cap: u128) -> Result<StoppingRules<'_, T>> {
        let counts = self.rule_counts();
        let count = counts[0];
        if count > cap {
            return Err(Error::TooManyRules { count, cap });
        }
        Ok(StoppingRules { tree: self, counts, next: 0, count })
    }
}

/// Iterator over all stopping rules of a tree. Rule `k` is decoded by
/// reading `k` as "stop here" when zero and otherwise as a mixed-radix
/// number over the children's rule counts.
#[derive(Debug)]
pub struct StoppingRules<'a, T> {
    tree: &'a FilteredTree<T>,
    counts: Vec<u128>,
    next: u128,
    count: u128,
}

impl<T: Scalar> StoppingRules<'_, T> {
    pub fn total(&self) -> u128 {
        self.count
    }

    fn decode(&self, node: NodeId, index: u128, stop: &mut [bool]) {
        if index == 0 {
            stop[node] = true;
            return;
        }
        let mut rest = index - 1;
        for &c in self.tree.children(node) {
            let radix = self.counts[c];
            self.decode(c, rest % radix, stop);
            rest /= radix;
        }
    }
}

impl<T: Scalar> Iterator for StoppingRules<'_, T> {
    type Item = StoppingRule;

    fn next(&mut self) -> Option<StoppingRule> {
        if self.next >= self.count {
            return None;
        }
        let mut stop = vec![false; self.tree.len()];
        self.decode(0, self.next, &mut stop);
        self.next += 1;
        Some(StoppingRule { stop })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = usize::try_from(self.count - self.next).unwrap_or(usize::MAX);
        (left, Some(left))
    }
}
