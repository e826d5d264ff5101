//! Approximation of a pure stopping time by the intensity that is zero
//! before the stopping time and `n` after it.

use super::cdf::{Density, Segment};
use crate::error::{Error, Result};
use crate::path::SamplePath;
use crate::scalar::Scalar;

/// Number of decay lengths `1/n` after which the exponential tail is cut;
/// the neglected mass is `e^{-45} < 3e-20`.
const TAIL_DECAY_LENGTHS: f64 = 45.0;

/// `∫ h dF^n` with `F^n_t = 1 - e^{-n (t - τ)}` for `t >= τ`, split on the
/// window `[τ, τ + δ]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpApproximation<T> {
    /// The full integral, computed independently of the split.
    pub value: T,
    /// `h_τ (1 - e^{-nδ})`
    pub at_stop: T,
    /// `∫_τ^{τ+δ} (h_t - h_τ) dF^n`
    pub window: T,
    /// `∫_{τ+δ}^∞ h_t dF^n`
    pub tail: T,
}

impl<T: Scalar> ExpApproximation<T> {
    pub fn split_sum(&self) -> T {
        self.at_stop + self.window + self.tail
    }
}

fn exp_segment<T: Scalar>(stop: T, rate: T, end: T) -> Segment<T> {
    Segment { start: stop, end, density: Density::Exponential { rate, weight: T::one() } }
}

/// `∫_a^∞ h dF^n` for `a >= τ`: quadrature up to the cut-off, the rest as
/// a point mass at the cut-off.
fn integrate_from<T: Scalar, P: SamplePath<T> + ?Sized>(h: &P, stop: T, rate: T, a: T) -> Result<T> {
    let end = stop + T::lit(TAIL_DECAY_LENGTHS) / rate;
    if a >= end {
        return Ok(h.value(a) * (-rate * (a - stop)).exp());
    }
    let seg = exp_segment(stop, rate, end);
    let body = seg.integrate(h, a, end)?;
    Ok(body + h.value(end) * (-rate * (end - stop)).exp())
}

pub fn exponential_approximation<T: Scalar, P: SamplePath<T> + ?Sized>(
    stop_time: T,
    rate: T,
    h: &P,
    window: T,
) -> Result<ExpApproximation<T>> {
    if !(window > T::zero()) {
        return Err(Error::InvalidArgument(format!("window δ = {window} must be positive")));
    }
    if !(rate >= T::one()) || !rate.is_finite() {
        return Err(Error::InvalidArgument(format!("intensity n = {rate} must be at least 1")));
    }
    if !(stop_time >= T::zero()) || !stop_time.is_finite() {
        return Err(Error::InvalidArgument(format!("stopping time {stop_time}")));
    }
    let h_stop = h.value(stop_time);
    if !h_stop.is_finite() {
        return Err(Error::NonFinite(format!("path value at t = {stop_time}")));
    }
    let value = integrate_from(h, stop_time, rate, stop_time)?;

    let edge = stop_time + window;
    let at_stop = -h_stop * (-rate * window).exp_m1();
    let shifted = Shifted { inner: h, by: h_stop };
    let window_part = exp_segment(stop_time, rate, edge).integrate(&shifted, stop_time, edge)?;
    let tail = integrate_from(h, stop_time, rate, edge)?;
    Ok(ExpApproximation { value, at_stop, window: window_part, tail })
}

/// Upper bound on `|value - h_τ|` for a path bounded by `bound` whose
/// oscillation on the window is at most `modulus`.
pub fn approximation_bound<T: Scalar>(rate: T, window: T, bound: T, modulus: T) -> T {
    T::lit(2.0) * bound * (-rate * window).exp() + modulus
}

struct Shifted<'a, P: ?Sized, T> {
    inner: &'a P,
    by: T,
}

impl<T: Scalar, P: SamplePath<T> + ?Sized> SamplePath<T> for Shifted<'_, P, T> {
    fn value(&self, t: T) -> T {
        self.inner.value(t) - self.by
    }

    fn breakpoints(&self) -> Vec<T> {
        self.inner.breakpoints()
    }

    fn constant_on(&self, a: T, b: T) -> Option<T> {
        self.inner.constant_on(a, b).map(|c| c - self.by)
    }
}
