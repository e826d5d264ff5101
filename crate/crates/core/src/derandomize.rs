//! Turning randomized stopping into pure stopping.
//!
//! Given payoffs `h_i` and adapted weights `p_i` summing to one over a
//! finite sequence of stages, [`partition_stages`] builds disjoint events
//! `A_i` (each an `F_{d_i}`-measurable union of atoms, together covering
//! every outcome) such that, atom by atom at the first stage,
//!
//! ```text
//! E[Σ h_i p_i | G_1] <= E[Σ h_i 1_{A_i} | G_1].
//! ```
//!
//! The construction is recursive. At the first stage the weight that is
//! not spent there is renormalized over the later stages; the first stage
//! is chosen wherever its payoff is at least the conditional average of
//! the later ones (ties choose it). Atoms that already put all mass on the
//! first stage are assigned to it outright. The remaining stages are then
//! handled the same way on the complement.

use crate::error::{Error, Result};
use crate::path::{LeftStepPath, SamplePath};
use crate::randomized::{CdfPath, RandomizedPlan};
use crate::scalar::Scalar;
use crate::tree::{AdaptedProcess, FilteredTree, NodeId, StoppingRule};

/// Remaining weight below which an atom counts as fully stopped at its stage.
pub const DEGENERATE_WEIGHT: f64 = 1e-14;
const WEIGHT_SUM_TOL: f64 = 1e-12;
/// Largest dyadic refinement level accepted by [`piecewise_discretize`].
pub const MAX_REFINEMENT: u32 = 24;

/// Stage payoffs and weights on cross-sections of a tree.
///
/// Stage `i` lives on the atoms of depth `depths[i]`. Per-stage vectors
/// are indexed by node id; only the entries of that stage's depth are read.
#[derive(Debug, Clone)]
pub struct StagePayoffs<'a, T> {
    tree: &'a FilteredTree<T>,
    depths: Vec<usize>,
    payoffs: Vec<Vec<T>>,
    weights: Vec<Vec<T>>,
}

impl<'a, T: Scalar> StagePayoffs<'a, T> {
    pub fn new(
        tree: &'a FilteredTree<T>,
        depths: Vec<usize>,
        payoffs: Vec<Vec<T>>,
        weights: Vec<Vec<T>>,
    ) -> Result<Self> {
        if depths.is_empty() {
            return Err(Error::InvalidStages("at least one stage is required".into()));
        }
        if payoffs.len() != depths.len() || weights.len() != depths.len() {
            return Err(Error::InvalidStages(format!(
                "{} stages but {} payoff and {} weight vectors",
                depths.len(),
                payoffs.len(),
                weights.len()
            )));
        }
        if depths.windows(2).any(|w| w[1] <= w[0]) || depths[depths.len() - 1] > tree.depth() {
            return Err(Error::InvalidStages(format!(
                "stage depths {depths:?} must increase within 0..={}",
                tree.depth()
            )));
        }
        for (i, &d) in depths.iter().enumerate() {
            if payoffs[i].len() != tree.len() || weights[i].len() != tree.len() {
                return Err(Error::LengthMismatch {
                    expected: tree.len(),
                    got: payoffs[i].len().min(weights[i].len()),
                });
            }
            for &v in tree.nodes_at(d) {
                if !payoffs[i][v].is_finite() {
                    return Err(Error::NonFinite(format!("payoff of stage {i} at node {v}")));
                }
                let w = weights[i][v];
                if !(w.is_finite() && w >= T::zero()) {
                    return Err(Error::InvalidStages(format!("weight {w} of stage {i} at node {v}")));
                }
            }
        }
        let tol = T::tolerance(WEIGHT_SUM_TOL);
        for &leaf in tree.leaves() {
            let total: T = depths
                .iter()
                .enumerate()
                .map(|(i, &d)| weights[i][tree.ancestor_at(leaf, d)])
                .sum();
            if (total - T::one()).abs() > tol {
                return Err(Error::InvalidStages(format!(
                    "weights along the path to leaf {leaf} sum to {total}"
                )));
            }
        }
        Ok(Self { tree, depths, payoffs, weights })
    }

    /// Builds stages from random variables given per leaf (outcome), checking
    /// that stage `i` values are constant on every atom of depth `depths[i]`.
    pub fn from_leaf_values(
        tree: &'a FilteredTree<T>,
        depths: Vec<usize>,
        payoffs: &[Vec<T>],
        weights: &[Vec<T>],
    ) -> Result<Self> {
        let leaves = tree.leaves();
        let lift = |name: &str, per_leaf: &[Vec<T>]| -> Result<Vec<Vec<T>>> {
            if per_leaf.len() != depths.len() {
                return Err(Error::InvalidStages(format!("{name}: wrong number of stages")));
            }
            let mut out = Vec::with_capacity(depths.len());
            for (i, (&d, vals)) in depths.iter().zip(per_leaf).enumerate() {
                if vals.len() != leaves.len() {
                    return Err(Error::LengthMismatch { expected: leaves.len(), got: vals.len() });
                }
                let mut node_vals: Vec<Option<T>> = vec![None; tree.len()];
                for (&leaf, &x) in leaves.iter().zip(vals) {
                    let a = d.min(tree.depth());
                    let atom = tree.ancestor_at(leaf, a);
                    match node_vals[atom] {
                        None => node_vals[atom] = Some(x),
                        Some(y) if y == x => {}
                        Some(_) => {
                            return Err(Error::InvalidStages(format!(
                                "{name} of stage {i} is not measurable at depth {d}: differs within atom {atom}"
                            )))
                        }
                    }
                }
                out.push(node_vals.into_iter().map(|v| v.unwrap_or_else(T::zero)).collect());
            }
            Ok(out)
        };
        let h = lift("payoff", payoffs)?;
        let p = lift("weight", weights)?;
        Self::new(tree, depths, h, p)
    }

    pub fn tree(&self) -> &FilteredTree<T> {
        self.tree
    }

    pub fn stage_count(&self) -> usize {
        self.depths.len()
    }

    pub fn depths(&self) -> &[usize] {
        &self.depths
    }

    /// `E[Σ_i h_i p_i | atom]` for an atom at the first stage's depth.
    pub fn randomized_value_at(&self, atom: NodeId) -> T {
        (0..self.stage_count())
            .map(|i| self.conditional_sum(atom, i, |v| self.payoffs[i][v] * self.weights[i][v]))
            .sum()
    }

    /// `E[Σ_i h_i 1_{A_i} | atom]` for an atom at the first stage's depth.
    pub fn stopped_value_at(&self, atom: NodeId, partition: &Partition) -> T {
        (0..self.stage_count())
            .map(|i| {
                self.conditional_sum(atom, i, |v| {
                    if partition.sets[i][v] { self.payoffs[i][v] } else { T::zero() }
                })
            })
            .sum()
    }

    /// `E[X | atom]` for a stage-`i` quantity `X`, `atom` at depth <= `depths[i]`.
    fn conditional_sum(&self, atom: NodeId, stage: usize, x: impl Fn(NodeId) -> T) -> T {
        let tree = self.tree;
        let base = tree.path_prob(atom);
        let ta = tree.time(atom);
        tree.nodes_at(self.depths[stage])
            .iter()
            .filter(|&&v| tree.ancestor_at(v, ta) == atom)
            .map(|&v| tree.path_prob(v) / base * x(v))
            .sum()
    }
}

/// Disjoint covering events, one per stage; `sets[i][v]` marks atom `v`
/// (at stage `i`'s depth) as part of `A_i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    sets: Vec<Vec<bool>>,
}

impl Partition {
    pub fn contains(&self, stage: usize, node: NodeId) -> bool {
        self.sets[stage][node]
    }

    /// Atoms making up `A_stage`.
    pub fn atoms(&self, stage: usize) -> impl Iterator<Item = NodeId> + '_ {
        self.sets[stage].iter().enumerate().filter(|(_, &b)| b).map(|(v, _)| v)
    }

    /// Stage whose event contains the outcome `leaf`.
    pub fn stage_of<T: Scalar>(&self, stages: &StagePayoffs<'_, T>, leaf: NodeId) -> Option<usize> {
        (0..self.sets.len())
            .find(|&i| self.sets[i][stages.tree.ancestor_at(leaf, stages.depths[i])])
    }

    /// Checks measurability (flags only on the stage's own atoms), and that
    /// every outcome lies in exactly one event.
    pub fn validate<T: Scalar>(&self, stages: &StagePayoffs<'_, T>) -> Result<()> {
        let tree = stages.tree;
        if self.sets.len() != stages.stage_count() {
            return Err(Error::InvalidStages("partition has the wrong number of events".into()));
        }
        for (i, set) in self.sets.iter().enumerate() {
            if let Some(v) = set.iter().enumerate().find(|(v, &b)| b && tree.time(*v) != stages.depths[i]) {
                return Err(Error::InvalidStages(format!(
                    "event {i} contains node {} off its stage depth",
                    v.0
                )));
            }
        }
        for &leaf in tree.leaves() {
            let hits = (0..self.sets.len())
                .filter(|&i| self.sets[i][tree.ancestor_at(leaf, stages.depths[i])])
                .count();
            if hits != 1 {
                return Err(Error::InvalidStages(format!("outcome {leaf} lies in {hits} events")));
            }
        }
        Ok(())
    }
}

/// Decision record for one atom at one stage of the recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace<T> {
    pub stage: usize,
    pub atom: NodeId,
    pub payoff: T,
    /// Weight the current stage puts on this atom.
    pub weight: T,
    /// Conditional average of the later stages; `None` when all weight
    /// sits on the current stage.
    pub continuation: Option<T>,
    pub chosen: bool,
}

/// Builds the partition; see the module docs.
pub fn partition_stages<T: Scalar>(stages: &StagePayoffs<'_, T>) -> Partition {
    partition_stages_traced(stages).0
}

/// [`partition_stages`] plus the per-atom decisions made at each stage.
pub fn partition_stages_traced<T: Scalar>(stages: &StagePayoffs<'_, T>) -> (Partition, Vec<StageTrace<T>>) {
    let mut trace = Vec::new();
    let sets = split_from(
        stages.tree,
        &stages.depths,
        0,
        stages.payoffs.clone(),
        stages.weights.clone(),
        &mut trace,
    );
    (Partition { sets }, trace)
}

fn split_from<T: Scalar>(
    tree: &FilteredTree<T>,
    depths: &[usize],
    k: usize,
    h: Vec<Vec<T>>,
    p: Vec<Vec<T>>,
    trace: &mut Vec<StageTrace<T>>,
) -> Vec<Vec<bool>> {
    let last = depths.len() - 1;
    let mut here = vec![false; tree.len()];
    let dk = depths[k];
    if k == last {
        for &a in tree.nodes_at(dk) {
            here[a] = true;
            trace.push(StageTrace {
                stage: k,
                atom: a,
                payoff: h[k][a],
                weight: p[k][a],
                continuation: None,
                chosen: true,
            });
        }
        let mut sets = vec![Vec::new(); depths.len()];
        sets[k] = here;
        return sets;
    }

    let remaining = T::from_usize_lossy(last - k);
    let threshold = T::lit(DEGENERATE_WEIGHT);
    let mut denom = vec![T::zero(); tree.len()];
    let mut in_b = vec![false; tree.len()];
    for &a in tree.nodes_at(dk) {
        let rest = T::one() - p[k][a];
        denom[a] = rest;
        in_b[a] = rest > threshold;
        let continuation = in_b[a].then(|| {
            let base = tree.path_prob(a);
            let mut acc = T::zero();
            for i in k + 1..=last {
                for &v in tree.nodes_at(depths[i]) {
                    if tree.ancestor_at(v, dk) == a {
                        acc += tree.path_prob(v) / base * h[i][v] * p[i][v];
                    }
                }
            }
            acc / rest
        });
        let chosen = match continuation {
            Some(c) => h[k][a] >= c,
            None => true,
        };
        here[a] = chosen;
        trace.push(StageTrace {
            stage: k,
            atom: a,
            payoff: h[k][a],
            weight: p[k][a],
            continuation,
            chosen,
        });
    }

    // renormalized later stages, payoffs cleared where stage k was chosen
    let mut h_next = h;
    let mut p_next = p;
    for i in k + 1..=last {
        for &v in tree.nodes_at(depths[i]) {
            let a = tree.ancestor_at(v, dk);
            if in_b[a] {
                p_next[i][v] /= denom[a];
                if here[a] {
                    h_next[i][v] = T::zero();
                }
            } else {
                p_next[i][v] = remaining.recip();
                h_next[i][v] = T::zero();
            }
        }
    }
    let mut sets = split_from(tree, depths, k + 1, h_next, p_next, trace);
    for i in k + 1..=last {
        for &v in tree.nodes_at(depths[i]) {
            let a = tree.ancestor_at(v, dk);
            sets[i][v] = sets[i][v] && in_b[a] && !here[a];
        }
    }
    sets[k] = here;
    sets
}

/// Stages of a plan on a tree: one per depth, payoff `h`, weight `ΔF`.
pub fn plan_stages<'a, T: Scalar>(
    tree: &'a FilteredTree<T>,
    h: &AdaptedProcess<T>,
    plan: &RandomizedPlan<T>,
) -> Result<StagePayoffs<'a, T>> {
    if h.len() != tree.len() {
        return Err(Error::LengthMismatch { expected: tree.len(), got: h.len() });
    }
    let inc = plan.increments(tree);
    let n = tree.depth() + 1;
    StagePayoffs::new(tree, (0..n).collect(), vec![h.values().to_vec(); n], vec![inc; n])
}

/// Pure stopping rule worth at least as much as `plan` for payoff `h`.
pub fn plan_to_rule<T: Scalar>(
    tree: &FilteredTree<T>,
    h: &AdaptedProcess<T>,
    plan: &RandomizedPlan<T>,
) -> Result<StoppingRule> {
    Ok(plan_to_rule_traced(tree, h, plan)?.0)
}

pub fn plan_to_rule_traced<T: Scalar>(
    tree: &FilteredTree<T>,
    h: &AdaptedProcess<T>,
    plan: &RandomizedPlan<T>,
) -> Result<(StoppingRule, Vec<StageTrace<T>>)> {
    let stages = plan_stages(tree, h, plan)?;
    let (partition, trace) = partition_stages_traced(&stages);
    let stop = (0..tree.len()).map(|v| partition.contains(tree.time(v), v)).collect();
    Ok((StoppingRule::new(tree, stop)?, trace))
}

/// Step approximation of a path on a dyadic grid and its `L¹(dF)` error.
#[derive(Debug, Clone)]
pub struct Discretization<T> {
    /// `h` sampled at the right end of each cell `(t_{j-1}, t_j]`.
    pub path: LeftStepPath<T>,
    /// `∫ |h - h^(n)| dF`
    pub discrepancy: T,
}

struct AbsDiff<'a, A: ?Sized, B> {
    a: &'a A,
    b: &'a B,
}

impl<T: Scalar, A: SamplePath<T> + ?Sized, B: SamplePath<T>> SamplePath<T> for AbsDiff<'_, A, B> {
    fn value(&self, t: T) -> T {
        (self.a.value(t) - self.b.value(t)).abs()
    }

    fn breakpoints(&self) -> Vec<T> {
        let mut all = self.a.breakpoints();
        all.extend(self.b.breakpoints());
        all.sort_by(|x, y| x.partial_cmp(y).expect("finite breakpoints"));
        all.dedup();
        all
    }

    fn constant_on(&self, lo: T, hi: T) -> Option<T> {
        Some((self.a.constant_on(lo, hi)? - self.b.constant_on(lo, hi)?).abs())
    }
}

/// Samples `h` on `2^level` equal cells of `[0, horizon of F]` refined by
/// the jump times of `F`, holding each cell's right-end value.
pub fn piecewise_discretize<T: Scalar, P: SamplePath<T> + ?Sized>(
    h: &P,
    cdf: &CdfPath<T>,
    level: u32,
) -> Result<Discretization<T>> {
    if level == 0 || level > MAX_REFINEMENT {
        return Err(Error::InvalidArgument(format!(
            "refinement level {level} outside 1..={MAX_REFINEMENT}"
        )));
    }
    let horizon = cdf.horizon();
    let cells = 1usize << level;
    let mut times: Vec<T> = (0..=cells)
        .map(|j| horizon * T::from_usize_lossy(j) / T::from_usize_lossy(cells))
        .collect();
    times.extend(cdf.jumps().iter().map(|j| j.0));
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
    times.dedup();
    let values: Vec<T> = times.iter().map(|&t| h.value(t)).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("path value at t = {}", times[i])));
    }
    let path = LeftStepPath::new(times, values)?;
    let discrepancy = cdf.stieltjes_integral(&AbsDiff { a: h, b: &path })?;
    Ok(Discretization { path, discrepancy })
}
