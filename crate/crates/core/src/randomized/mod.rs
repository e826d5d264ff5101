//! Randomized stopping: plans on trees, intensities, distribution paths
//! and their pathwise payoff functionals.
//!
//! On a [`FilteredTree`] a randomized stopping time is a [`RandomizedPlan`]:
//! the conditional probability `p(v)` of stopping at node `v` given that
//! the path has not stopped before. The induced mass at `v` is
//! `ΔF(v) = p(v) ∏_{a < v} (1 - p(a))`, and the plan's payoff is
//! `E Σ_v ΔF(v) h(v)`. Leaves have `p = 1`, so all mass is spent by the
//! horizon.

mod cdf;
mod exponential;
mod intensity;

pub use cdf::{CdfPath, Density, Segment, QUAD_REL_TOL};
pub use exponential::{approximation_bound, exponential_approximation, ExpApproximation};
pub use intensity::IntensityPath;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tree::{AdaptedProcess, FilteredTree, NodeId, StoppingRule};

const PATH_MASS_TOL: f64 = 1e-12;

/// Conditional stopping probability per node.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizedPlan<T> {
    p: Vec<T>,
}

impl<T: Scalar> RandomizedPlan<T> {
    /// Validates `p ∈ [0, 1]` and `p = 1` on leaves.
    pub fn new(tree: &FilteredTree<T>, p: Vec<T>) -> Result<Self> {
        if p.len() != tree.len() {
            return Err(Error::LengthMismatch { expected: tree.len(), got: p.len() });
        }
        for (v, &pv) in p.iter().enumerate() {
            if !(pv >= T::zero() && pv <= T::one()) {
                return Err(Error::InvalidPlan(format!("p({v}) = {pv} outside [0, 1]")));
            }
            if tree.is_leaf(v) && pv != T::one() {
                return Err(Error::InvalidPlan(format!("leaf {v} has p = {pv}, expected 1")));
            }
        }
        Ok(Self { p })
    }

    /// Pure stopping as a degenerate plan: `p = 1` on stop nodes, `0` elsewhere.
    pub fn from_rule(tree: &FilteredTree<T>, rule: &StoppingRule) -> Result<Self> {
        rule.check_tree(tree)?;
        let p = (0..tree.len())
            .map(|v| if rule.stops_at(v) || tree.is_leaf(v) { T::one() } else { T::zero() })
            .collect();
        Ok(Self { p })
    }

    /// Independent uniform `p(v)` on internal nodes, `1` on leaves.
    pub fn random<R: Rng + ?Sized>(tree: &FilteredTree<T>, rng: &mut R) -> Self {
        let p = (0..tree.len())
            .map(|v| if tree.is_leaf(v) { T::one() } else { T::lit(rng.random::<f64>()) })
            .collect();
        Self { p }
    }

    /// Rebuilds the conditional probabilities from path increments.
    /// Nodes the plan never reaches get `p = 1`.
    pub fn from_increments(tree: &FilteredTree<T>, increments: &[T]) -> Result<Self> {
        if increments.len() != tree.len() {
            return Err(Error::LengthMismatch { expected: tree.len(), got: increments.len() });
        }
        if let Some(v) = increments.iter().position(|d| !(*d >= T::zero())) {
            return Err(Error::InvalidPlan(format!("negative increment at node {v}")));
        }
        let tol = T::tolerance(PATH_MASS_TOL);
        let mut spent = vec![T::zero(); tree.len()];
        let mut p = vec![T::one(); tree.len()];
        for v in 0..tree.len() {
            let before = tree.parent(v).map_or(T::zero(), |a| spent[a]);
            spent[v] = before + increments[v];
            let survival = T::one() - before;
            if !tree.is_leaf(v) && survival > tol {
                p[v] = (increments[v] / survival).min(T::one());
            }
            if tree.is_leaf(v) && (spent[v] - T::one()).abs() > tol {
                return Err(Error::InvalidPlan(format!(
                    "increments along the path to leaf {v} sum to {}",
                    spent[v]
                )));
            }
        }
        Ok(Self { p })
    }

    pub fn stop_probabilities(&self) -> &[T] {
        &self.p
    }

    pub fn p(&self, v: NodeId) -> T {
        self.p[v]
    }

    /// `ΔF(v) = p(v) ∏_{ancestors a} (1 - p(a))`.
    pub fn increments(&self, tree: &FilteredTree<T>) -> Vec<T> {
        let mut survival = vec![T::one(); tree.len()];
        let mut inc = vec![T::zero(); tree.len()];
        for v in 0..tree.len() {
            let s = tree.parent(v).map_or(T::one(), |a| survival[a] * (T::one() - self.p[a]));
            survival[v] = s;
            inc[v] = self.p[v] * s;
        }
        inc
    }

    /// Plan whose increments are `λ ΔF_a + (1 - λ) ΔF_b`.
    pub fn mix(tree: &FilteredTree<T>, a: &Self, b: &Self, lambda: T) -> Result<Self> {
        if !(lambda >= T::zero() && lambda <= T::one()) {
            return Err(Error::InvalidArgument(format!("mixing weight {lambda}")));
        }
        let ia = a.increments(tree);
        let ib = b.increments(tree);
        let inc: Vec<T> = ia
            .iter()
            .zip(&ib)
            .map(|(&x, &y)| lambda * x + (T::one() - lambda) * y)
            .collect();
        Self::from_increments(tree, &inc)
    }

    /// The randomized stopping time seen along the path to `leaf`, as a
    /// discrete distribution over the node times.
    pub fn path_cdf(&self, tree: &FilteredTree<T>, leaf: NodeId) -> Result<CdfPath<T>> {
        let inc = self.increments(tree);
        let jumps = tree
            .path_to(leaf)
            .into_iter()
            .map(|v| (T::from_usize_lossy(tree.time(v)), inc[v]))
            .collect();
        CdfPath::discrete(jumps)
    }
}

impl<T: Scalar> FilteredTree<T> {
    /// `E Σ_v ΔF(v) h(v)`, the payoff of a randomized plan.
    pub fn plan_value(&self, h: &AdaptedProcess<T>, plan: &RandomizedPlan<T>) -> Result<T> {
        if h.len() != self.len() || plan.p.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: if h.len() != self.len() { h.len() } else { plan.p.len() },
            });
        }
        Ok(plan
            .increments(self)
            .into_iter()
            .enumerate()
            .map(|(v, d)| self.path_prob(v) * d * h[v])
            .sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::DEFAULT_RULE_CAP;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn plan_value_examples() {
        let tree = FilteredTree::<f64>::uniform(1, 2);
        let h = AdaptedProcess::new(&tree, vec![0.0, 4.0, -2.0]).unwrap();
        let plan = RandomizedPlan::new(&tree, vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(tree.plan_value(&h, &plan).unwrap(), 0.0);
        let plan = RandomizedPlan::new(&tree, vec![0.25, 1.0, 1.0]).unwrap();
        assert!((tree.plan_value(&h, &plan).unwrap() - 0.75).abs() < 1e-15);

        let chain = FilteredTree::<f64>::chain(1);
        let h = AdaptedProcess::new(&chain, vec![0.0, 1.0]).unwrap();
        let plan = RandomizedPlan::new(&chain, vec![0.5, 1.0]).unwrap();
        assert_eq!(chain.plan_value(&h, &plan).unwrap(), 0.5);
    }

    #[test]
    fn plan_validation() {
        let tree = FilteredTree::<f64>::uniform(1, 2);
        assert!(RandomizedPlan::new(&tree, vec![0.5, 0.9, 1.0]).is_err());
        assert!(RandomizedPlan::new(&tree, vec![1.5, 1.0, 1.0]).is_err());
        assert!(RandomizedPlan::new(&tree, vec![0.5, 1.0]).is_err());
    }

    #[test]
    fn rule_plans() {
        let tree = FilteredTree::<f64>::uniform(2, 2);
        let at_root = RandomizedPlan::from_rule(&tree, &StoppingRule::at_root(&tree)).unwrap();
        assert_eq!(at_root.p(0), 1.0);
        let at_leaves = RandomizedPlan::from_rule(&tree, &StoppingRule::at_leaves(&tree)).unwrap();
        for v in 0..tree.len() {
            assert_eq!(at_leaves.p(v), if tree.is_leaf(v) { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn rule_plan_value_equals_stopped_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let tree = FilteredTree::<f64>::random(&mut rng, 3, 2);
            let h = AdaptedProcess::from_fn(&tree, |_| rng.random_range(-1.0..1.0));
            for rule in tree.enumerate_stopping_rules(DEFAULT_RULE_CAP).unwrap() {
                let plan = RandomizedPlan::from_rule(&tree, &rule).unwrap();
                let a = tree.plan_value(&h, &plan).unwrap();
                let b = tree.evaluate_stopped(&h, &rule).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn increments_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tree = FilteredTree::<f64>::random(&mut rng, 4, 3);
        let plan = RandomizedPlan::random(&tree, &mut rng);
        let inc = plan.increments(&tree);
        for &leaf in tree.leaves() {
            let total: f64 = tree.path_to(leaf).iter().map(|&v| inc[v]).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        let back = RandomizedPlan::from_increments(&tree, &inc).unwrap();
        for v in 0..tree.len() {
            assert!((back.p(v) - plan.p(v)).abs() < 1e-9);
        }
    }

    #[test]
    fn path_cdf_has_unit_mass() {
        let tree = FilteredTree::<f64>::uniform(3, 2);
        let plan = RandomizedPlan::random(&tree, &mut ChaCha8Rng::seed_from_u64(1));
        for &leaf in tree.leaves() {
            let f = plan.path_cdf(&tree, leaf).unwrap();
            assert!((f.value_at(3.0) - 1.0).abs() < 1e-12);
        }
    }
}
