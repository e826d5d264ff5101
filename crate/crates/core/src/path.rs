//! Deterministic sample paths `t -> h_t` on `[0, ∞)`.
//!
//! Paths are what the pathwise integrals (`∫ h dF`, exponential
//! approximation, discretization) consume. Each path reports where it may
//! jump or kink so integrators can split there, and whether it is constant
//! on an interval so integrals against exponential densities can be taken
//! in closed form.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub trait SamplePath<T: Scalar> {
    fn value(&self, t: T) -> T;

    /// Points where the path may be discontinuous or non-smooth, sorted.
    fn breakpoints(&self) -> Vec<T>;

    /// `Some(c)` when the path equals `c` on the open interval `(a, b)`.
    fn constant_on(&self, _a: T, _b: T) -> Option<T> {
        None
    }
}

impl<T: Scalar, P: SamplePath<T> + ?Sized> SamplePath<T> for &P {
    fn value(&self, t: T) -> T {
        (**self).value(t)
    }

    fn breakpoints(&self) -> Vec<T> {
        (**self).breakpoints()
    }

    fn constant_on(&self, a: T, b: T) -> Option<T> {
        (**self).constant_on(a, b)
    }
}

fn check_knots<T: Scalar>(times: &[T], values: &[T]) -> Result<()> {
    if times.is_empty() || times.len() != values.len() {
        return Err(Error::InvalidArgument(format!(
            "step path needs matching non-empty knots, got {} times and {} values",
            times.len(),
            values.len()
        )));
    }
    if times[0] != T::zero() {
        return Err(Error::InvalidArgument("step path must start at t = 0".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("step path times must increase".into()));
    }
    if let Some(i) = values.iter().chain(times).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("step path knot {i}")));
    }
    Ok(())
}

/// Right-continuous step path: `values[k]` on `[times[k], times[k+1])`,
/// the last value extended to infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPath<T> {
    times: Vec<T>,
    values: Vec<T>,
}

impl<T: Scalar> StepPath<T> {
    pub fn new(times: Vec<T>, values: Vec<T>) -> Result<Self> {
        check_knots(&times, &values)?;
        Ok(Self { times, values })
    }

    pub fn constant(c: T) -> Self {
        Self { times: vec![T::zero()], values: vec![c] }
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    fn index(&self, t: T) -> usize {
        self.times.partition_point(|&s| s <= t).saturating_sub(1)
    }
}

impl<T: Scalar> SamplePath<T> for StepPath<T> {
    fn value(&self, t: T) -> T {
        self.values[self.index(t)]
    }

    fn breakpoints(&self) -> Vec<T> {
        self.times[1..].to_vec()
    }

    fn constant_on(&self, a: T, b: T) -> Option<T> {
        let k = self.index(a);
        let next = self.times.get(k + 1).copied();
        match next {
            Some(s) if s < b => None,
            _ => Some(self.values[k]),
        }
    }
}

/// Left-open, right-closed step path: `values[0]` at `t = 0`, `values[k]`
/// on `(times[k-1], times[k]]`, the last value extended to infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct LeftStepPath<T> {
    times: Vec<T>,
    values: Vec<T>,
}

impl<T: Scalar> LeftStepPath<T> {
    pub fn new(times: Vec<T>, values: Vec<T>) -> Result<Self> {
        check_knots(&times, &values)?;
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    fn index(&self, t: T) -> usize {
        self.times.partition_point(|&s| s < t).min(self.times.len() - 1)
    }
}

impl<T: Scalar> SamplePath<T> for LeftStepPath<T> {
    fn value(&self, t: T) -> T {
        self.values[self.index(t)]
    }

    fn breakpoints(&self) -> Vec<T> {
        self.times.clone()
    }

    fn constant_on(&self, a: T, b: T) -> Option<T> {
        // (a, b) inside (times[k-1], times[k]] or beyond the last knot
        let k = self.times.partition_point(|&s| s <= a);
        match self.times.get(k) {
            Some(&s) if s < b => None,
            Some(_) => Some(self.values[k]),
            None => Some(self.values[self.values.len() - 1]),
        }
    }
}

/// Path given by a closure, smooth away from the declared breakpoints.
pub struct FnPath<F> {
    f: F,
    breaks: Vec<f64>,
}

impl<F> FnPath<F> {
    pub fn new(f: F) -> Self {
        Self { f, breaks: Vec::new() }
    }

    pub fn with_breakpoints(f: F, mut breaks: Vec<f64>) -> Self {
        breaks.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
        Self { f, breaks }
    }
}

impl<T: Scalar, F: Fn(T) -> T> SamplePath<T> for FnPath<F> {
    fn value(&self, t: T) -> T {
        (self.f)(t)
    }

    fn breakpoints(&self) -> Vec<T> {
        self.breaks.iter().map(|&b| T::lit(b)).collect()
    }
}

/// Largest `|h|` over the path's breakpoints and a uniform probe grid on
/// `[0, horizon]`. Exact for step paths.
pub fn probe_sup<T: Scalar>(h: &impl SamplePath<T>, horizon: T, probes: usize) -> T {
    let mut sup = h.value(T::zero()).abs();
    for b in h.breakpoints() {
        sup = sup.max(h.value(b).abs());
    }
    let n = T::from_usize_lossy(probes.max(1));
    for i in 0..=probes {
        let t = horizon * T::from_usize_lossy(i) / n;
        sup = sup.max(h.value(t).abs());
    }
    sup
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_path_is_right_continuous() {
        let p = StepPath::new(vec![0.0, 1.0, 2.0], vec![5.0, 6.0, 7.0]).unwrap();
        assert_eq!(p.value(0.0), 5.0);
        assert_eq!(p.value(0.999), 5.0);
        assert_eq!(p.value(1.0), 6.0);
        assert_eq!(p.value(10.0), 7.0);
        assert_eq!(p.constant_on(0.2, 0.9), Some(5.0));
        assert_eq!(p.constant_on(0.0, 1.0), Some(5.0));
        assert_eq!(p.constant_on(0.5, 1.5), None);
        assert_eq!(p.constant_on(2.0, 9.0), Some(7.0));
    }

    #[test]
    fn left_step_path_is_left_continuous() {
        let p = LeftStepPath::new(vec![0.0, 1.0, 2.0], vec![5.0, 6.0, 7.0]).unwrap();
        assert_eq!(p.value(0.0), 5.0);
        assert_eq!(p.value(0.5), 6.0);
        assert_eq!(p.value(1.0), 6.0);
        assert_eq!(p.value(1.0001), 7.0);
        assert_eq!(p.value(4.0), 7.0);
        assert_eq!(p.constant_on(0.0, 1.0), Some(6.0));
        assert_eq!(p.constant_on(1.0, 2.0), Some(7.0));
        assert_eq!(p.constant_on(0.5, 1.5), None);
        assert_eq!(p.constant_on(3.0, 4.0), Some(7.0));
    }

    #[test]
    fn rejects_malformed_knots() {
        assert!(StepPath::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(StepPath::new(vec![0.5], vec![1.0]).is_err());
        assert!(StepPath::new(vec![0.0, 1.0], vec![1.0, f64::NAN]).is_err());
        assert!(LeftStepPath::<f64>::new(vec![], vec![]).is_err());
    }
}
