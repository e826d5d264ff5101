//! Recombining binomial lattices.
//!
//! A lattice is the Markov quotient of a binary tree: after `k` steps only
//! the number of up moves matters, so backward induction costs `O(steps²)`
//! instead of `O(2^steps)`. It is the oracle used for long horizons where a
//! full [`FilteredTree`](super::FilteredTree) cannot be materialized.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatticeMoves<T> {
    /// `x -> x ± dx`
    Additive { dx: T },
    /// `x -> x·up` or `x -> x·down`
    Multiplicative { up: T, down: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinomialLattice<T> {
    pub x0: T,
    pub steps: usize,
    pub dt: T,
    pub moves: LatticeMoves<T>,
    pub prob_up: T,
    /// Multiplicative discount applied to each one-step continuation value.
    pub step_discount: T,
}

impl<T: Scalar> BinomialLattice<T> {
    /// Scaled symmetric random walk approximating Brownian motion on `[0, horizon]`.
    pub fn brownian(x0: T, horizon: T, steps: usize) -> Self {
        let dt = horizon / T::from_usize_lossy(steps);
        Self {
            x0,
            steps,
            dt,
            moves: LatticeMoves::Additive { dx: dt.sqrt() },
            prob_up: T::lit(0.5),
            step_discount: T::one(),
        }
    }

    /// Cox–Ross–Rubinstein lattice for geometric Brownian motion under the
    /// pricing measure with short rate `rate`.
    pub fn crr(x0: T, rate: T, vol: T, horizon: T, steps: usize) -> Self {
        let dt = horizon / T::from_usize_lossy(steps);
        let up = (vol * dt.sqrt()).exp();
        let down = up.recip();
        let growth = (rate * dt).exp();
        Self {
            x0,
            steps,
            dt,
            moves: LatticeMoves::Multiplicative { up, down },
            prob_up: (growth - down) / (up - down),
            step_discount: growth.recip(),
        }
    }

    /// State after `k` steps with `j` up moves.
    pub fn state(&self, k: usize, j: usize) -> T {
        match self.moves {
            LatticeMoves::Additive { dx } => {
                self.x0 + (T::from_usize_lossy(2 * j) - T::from_usize_lossy(k)) * dx
            }
            LatticeMoves::Multiplicative { up, down } => {
                self.x0 * up.powi(j as i32) * down.powi((k - j) as i32)
            }
        }
    }

    /// Root value of the Snell envelope of `payoff(t, x)`.
    pub fn snell_value(&self, payoff: impl Fn(T, T) -> T) -> Result<T> {
        if self.steps == 0 {
            return Ok(payoff(T::zero(), self.x0));
        }
        if !(self.prob_up > T::zero() && self.prob_up < T::one()) {
            return Err(Error::InvalidArgument(format!(
                "lattice up-probability {} outside (0, 1)",
                self.prob_up
            )));
        }
        let p = self.prob_up;
        let q = T::one() - p;
        let n = self.steps;
        let t_end = self.dt * T::from_usize_lossy(n);
        let mut values: Vec<T> = (0..=n).map(|j| payoff(t_end, self.state(n, j))).collect();
        for k in (0..n).rev() {
            let t = self.dt * T::from_usize_lossy(k);
            for j in 0..=k {
                let cont = self.step_discount * (p * values[j + 1] + q * values[j]);
                values[j] = payoff(t, self.state(k, j)).max(cont);
            }
        }
        Ok(values[0])
    }
}
