use super::cdf::{CdfPath, Density, Segment};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Piecewise-constant stopping intensity with values in `[0, cap]`.
///
/// `rates[k]` applies on `[grid[k], grid[k+1])`. The grid ends at a finite
/// horizon; whatever survival probability remains there is stopped at the
/// horizon, which stands in for `∫_0^∞ r dt = ∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityPath<T> {
    grid: Vec<T>,
    rates: Vec<T>,
    cap: T,
}

impl<T: Scalar> IntensityPath<T> {
    pub fn new(grid: Vec<T>, rates: Vec<T>, cap: T) -> Result<Self> {
        if grid.len() < 2 || rates.len() + 1 != grid.len() {
            return Err(Error::InvalidIntensity(format!(
                "{} grid points need {} rates, got {}",
                grid.len(),
                grid.len().saturating_sub(1),
                rates.len()
            )));
        }
        if grid[0] != T::zero() {
            return Err(Error::InvalidIntensity("grid must start at 0".into()));
        }
        if grid.iter().any(|t| !t.is_finite()) || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidIntensity("grid must be finite and increasing".into()));
        }
        if !(cap.is_finite() && cap >= T::zero()) {
            return Err(Error::InvalidIntensity(format!("cap {cap}")));
        }
        if let Some((k, r)) = rates
            .iter()
            .enumerate()
            .find(|(_, r)| !(r.is_finite() && **r >= T::zero() && **r <= cap))
        {
            return Err(Error::InvalidIntensity(format!("rate {r} on cell {k} outside [0, {cap}]")));
        }
        Ok(Self { grid, rates, cap })
    }

    pub fn constant(rate: T, horizon: T, cap: T) -> Result<Self> {
        Self::new(vec![T::zero(), horizon], vec![rate], cap)
    }

    /// Zero before `switch` and `cap` from `switch` on.
    pub fn bang_bang(switch: T, cap: T, horizon: T) -> Result<Self> {
        if switch <= T::zero() {
            return Self::constant(cap, horizon, cap);
        }
        if switch >= horizon {
            return Self::constant(T::zero(), horizon, cap);
        }
        Self::new(vec![T::zero(), switch, horizon], vec![T::zero(), cap], cap)
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    pub fn rates(&self) -> &[T] {
        &self.rates
    }

    pub fn cap(&self) -> T {
        self.cap
    }

    pub fn horizon(&self) -> T {
        self.grid[self.grid.len() - 1]
    }

    /// `∫_0^t r_u du`, exact for the step rate.
    pub fn cumulative(&self, t: T) -> T {
        let mut acc = T::zero();
        for (k, &r) in self.rates.iter().enumerate() {
            let (a, b) = (self.grid[k], self.grid[k + 1]);
            if t <= a {
                break;
            }
            acc += r * (t.min(b) - a);
        }
        acc
    }

    /// `F = 1 - e^{-∫r}` with one exponential segment per positive-rate
    /// cell and the residual survival mass as a jump at the horizon.
    pub fn to_cdf(&self) -> Result<CdfPath<T>> {
        let mut segments = Vec::new();
        let mut log_survival = T::zero();
        for (k, &r) in self.rates.iter().enumerate() {
            let (a, b) = (self.grid[k], self.grid[k + 1]);
            if r > T::zero() {
                segments.push(Segment {
                    start: a,
                    end: b,
                    density: Density::Exponential { rate: r, weight: (-log_survival).exp() },
                });
            }
            log_survival += r * (b - a);
        }
        let horizon = self.horizon();
        CdfPath::new(horizon, vec![(horizon, (-log_survival).exp())], segments)
    }
}
