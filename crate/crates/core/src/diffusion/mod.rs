//! Monte Carlo for controlled diffusions with stopping.
//!
//! The state follows `dx = σ^α(t, x) dw + β^α(t, x) dt` from `(s, x)` up to
//! the horizon `T`, discounted by `φ_t = ∫ c^α`. Two payoffs are compared
//! on the same simulated paths:
//!
//! * stopped: `∫_0^τ f e^{-φ} dt + g(s+τ, x_τ) e^{-φ_τ}` for a feedback
//!   stopping region,
//! * randomized: `∫_0^{T-s} (f + r g) e^{-φ} e^{-∫r} dt + g_T e^{-φ_T - ∫r}`
//!   for a feedback intensity `r` bounded by a cap `n`.
//!
//! Noise for path `i` is drawn from a ChaCha stream keyed by `(seed, i)`
//! alone, so every policy sees identical increments and results do not
//! depend on how paths are scheduled across threads.

mod models;
mod simulate;

pub use models::{model_catalog, BmQuadratic, BuiltinModel, ControlledDrift, GbmPut, ORACLE_STEPS};
pub use simulate::{
    estimate_v_randomized, estimate_v_stop, evaluate_candidates, simulate_paths, value_search,
    Candidate, CandidateTable, Estimate, PathBundle, PathRecord, SearchRow, SimSettings,
};

use std::fmt;
use std::sync::Arc;

use crate::scalar::Scalar;

/// Growth constants of the coefficient bounds for controls in `A_n`:
/// `|σ| + |β| <= K_n (1 + |x|)`, Lipschitz constant `K_n`,
/// `|c| + |f| <= K_n (1 + |x|)^{m_n}`, `|g| <= K (1 + |x|)^m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthConstants<T> {
    pub k: T,
    pub m: T,
    pub k_n: T,
    pub m_n: T,
}

/// Coefficients of a controlled diffusion. Controls are points of `R^k`
/// (`k = control_dim()`, possibly zero); `A_n` is given by
/// [`DiffusionModel::in_control_set`].
pub trait DiffusionModel<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn horizon(&self) -> T;

    /// `σ^α(t, x)` written row-major into a `dim × noise_dim` buffer.
    fn diffusion(&self, control: &[T], t: T, x: &[T], out: &mut [T]);
    /// `β^α(t, x)`
    fn drift(&self, control: &[T], t: T, x: &[T], out: &mut [T]);
    /// `c^α(t, x)`
    fn discount_rate(&self, control: &[T], t: T, x: &[T]) -> T;
    /// `f^α(t, x)`
    fn running_reward(&self, control: &[T], t: T, x: &[T]) -> T;
    /// `g(t, x)`
    fn terminal_reward(&self, t: T, x: &[T]) -> T;

    fn growth(&self, level: usize) -> GrowthConstants<T>;
    /// Membership of `control` in `A_level`.
    fn in_control_set(&self, control: &[T], level: usize) -> bool;
}

type ControlFn<T> = dyn Fn(T, &[T], &mut [T]) + Send + Sync;
type RegionFn<T> = dyn Fn(T, &[T]) -> bool + Send + Sync;
type RateFn<T> = dyn Fn(T, &[T]) -> T + Send + Sync;

/// Markov feedback control `α(t, x)` declared to take values in `A_level`.
#[derive(Clone)]
pub struct ControlPolicy<T> {
    pub label: String,
    pub level: usize,
    rule: Arc<ControlFn<T>>,
}

impl<T: Scalar> ControlPolicy<T> {
    pub fn feedback(
        label: impl Into<String>,
        level: usize,
        rule: impl Fn(T, &[T], &mut [T]) + Send + Sync + 'static,
    ) -> Self {
        Self { label: label.into(), level, rule: Arc::new(rule) }
    }

    /// The same control value at every `(t, x)`.
    pub fn constant(label: impl Into<String>, level: usize, value: Vec<T>) -> Self {
        Self::feedback(label, level, move |_, _, out: &mut [T]| out.copy_from_slice(&value))
    }

    /// Policy for models without a control.
    pub fn uncontrolled() -> Self {
        Self::feedback("none", 1, |_, _, _| {})
    }

    pub fn apply(&self, t: T, x: &[T], out: &mut [T]) {
        (self.rule)(t, x, out)
    }
}

impl<T> fmt::Debug for ControlPolicy<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlPolicy").field("label", &self.label).field("level", &self.level).finish()
    }
}

/// Stop the first time `(t, x)` lies in `region`, and at the horizon otherwise.
#[derive(Clone)]
pub struct StopPolicy<T> {
    pub label: String,
    region: Arc<RegionFn<T>>,
}

impl<T: Scalar> StopPolicy<T> {
    pub fn when(label: impl Into<String>, region: impl Fn(T, &[T]) -> bool + Send + Sync + 'static) -> Self {
        Self { label: label.into(), region: Arc::new(region) }
    }

    pub fn at_horizon() -> Self {
        Self::when("horizon", |_, _| false)
    }

    pub fn stops(&self, t: T, x: &[T]) -> bool {
        (self.region)(t, x)
    }
}

impl<T> fmt::Debug for StopPolicy<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StopPolicy").field("label", &self.label).finish()
    }
}

/// Feedback stopping intensity `r(t, x) ∈ [0, cap]`.
#[derive(Clone)]
pub struct IntensityPolicy<T> {
    pub label: String,
    pub cap: T,
    rate: Arc<RateFn<T>>,
}

impl<T: Scalar> IntensityPolicy<T> {
    pub fn feedback(
        label: impl Into<String>,
        cap: T,
        rate: impl Fn(T, &[T]) -> T + Send + Sync + 'static,
    ) -> Self {
        Self { label: label.into(), cap, rate: Arc::new(rate) }
    }

    pub fn constant(rate: T, cap: T) -> Self {
        Self::feedback(format!("const:{rate}"), cap, move |_, _| rate)
    }

    pub fn zero() -> Self {
        Self::constant(T::zero(), T::zero())
    }

    /// `cap · 1{(t, x) ∈ region}`
    pub fn bang_bang(
        label: impl Into<String>,
        cap: T,
        region: impl Fn(T, &[T]) -> bool + Send + Sync + 'static,
    ) -> Self {
        Self::feedback(label, cap, move |t, x| if region(t, x) { cap } else { T::zero() })
    }

    pub fn rate(&self, t: T, x: &[T]) -> T {
        (self.rate)(t, x)
    }
}

impl<T> fmt::Debug for IntensityPolicy<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IntensityPolicy").field("label", &self.label).finish()
    }
}

/// Candidate policies searched by [`value_search`].
#[derive(Debug, Clone)]
pub struct Families<T> {
    pub controls: Vec<ControlPolicy<T>>,
    pub stops: Vec<StopPolicy<T>>,
    pub intensities: Vec<IntensityPolicy<T>>,
}

/// A violated coefficient bound found by [`check_growth_bounds`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoundViolation<T> {
    pub bound: &'static str,
    pub t: T,
    pub x: Vec<T>,
    pub lhs: T,
    pub rhs: T,
}

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&a| a * a).sum::<T>().sqrt()
}

/// Spot-checks the declared growth and Lipschitz bounds at the probe
/// points, for every given control in `A_level`. Lipschitz quotients are
/// taken between probes that share a time.
pub fn check_growth_bounds<T: Scalar, M: DiffusionModel<T> + ?Sized>(
    model: &M,
    level: usize,
    controls: &[Vec<T>],
    probes: &[(T, Vec<T>)],
) -> Vec<BoundViolation<T>> {
    let g = model.growth(level);
    let (d, dn) = (model.dim(), model.noise_dim());
    let slack = T::one() + T::lit(1e-12);
    let mut out = Vec::new();
    let mut sig = vec![T::zero(); d * dn];
    let mut drift = vec![T::zero(); d];
    let mut sig2 = sig.clone();
    let mut drift2 = drift.clone();
    for (t, x) in probes {
        let scale = T::one() + norm(x);
        let gv = model.terminal_reward(*t, x).abs();
        let rhs = g.k * scale.powf(g.m);
        if gv > rhs * slack {
            out.push(BoundViolation { bound: "|g| <= K(1+|x|)^m", t: *t, x: x.clone(), lhs: gv, rhs });
        }
        for a in controls.iter().filter(|a| model.in_control_set(a, level)) {
            model.diffusion(a, *t, x, &mut sig);
            model.drift(a, *t, x, &mut drift);
            let lhs = norm(&sig) + norm(&drift);
            let rhs = g.k_n * scale;
            if lhs > rhs * slack {
                out.push(BoundViolation { bound: "|σ|+|β| <= K_n(1+|x|)", t: *t, x: x.clone(), lhs, rhs });
            }
            let lhs = model.discount_rate(a, *t, x).abs() + model.running_reward(a, *t, x).abs();
            let rhs = g.k_n * scale.powf(g.m_n);
            if lhs > rhs * slack {
                out.push(BoundViolation { bound: "|c|+|f| <= K_n(1+|x|)^m_n", t: *t, x: x.clone(), lhs, rhs });
            }
            for (t2, y) in probes.iter().filter(|(s, y)| *s == *t && y != x) {
                model.diffusion(a, *t2, y, &mut sig2);
                model.drift(a, *t2, y, &mut drift2);
                let ds: Vec<T> = sig.iter().zip(&sig2).map(|(p, q)| *p - *q).collect();
                let db: Vec<T> = drift.iter().zip(&drift2).map(|(p, q)| *p - *q).collect();
                let dx: Vec<T> = x.iter().zip(y).map(|(p, q)| *p - *q).collect();
                let lhs = norm(&ds) + norm(&db);
                let rhs = g.k_n * norm(&dx);
                if lhs > rhs * slack {
                    out.push(BoundViolation { bound: "Lipschitz K_n", t: *t, x: x.clone(), lhs, rhs });
                }
            }
        }
    }
    out
}
