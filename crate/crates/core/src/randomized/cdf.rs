//! Distribution functions of randomized stopping times along one path.

use crate::error::{Error, Result};
use crate::path::SamplePath;
use crate::quadrature::integrate_split;
use crate::scalar::Scalar;

/// Relative tolerance of every quadrature taken against a [`CdfPath`].
pub const QUAD_REL_TOL: f64 = 1e-11;
const QUAD_ABS_TOL: f64 = 1e-15;
const MASS_TOL: f64 = 1e-12;

/// Absolutely continuous part of `F` on one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Density<T> {
    /// `dF = weight · rate · e^{-rate (t - start)} dt`
    Exponential { rate: T, weight: T },
    /// `dF = density · dt`
    Uniform { density: T },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment<T> {
    pub start: T,
    pub end: T,
    pub density: Density<T>,
}

impl<T: Scalar> Segment<T> {
    /// Mass carried on `[start, min(t, end)]`.
    pub fn mass_until(&self, t: T) -> T {
        if t <= self.start {
            return T::zero();
        }
        let u = t.min(self.end) - self.start;
        match self.density {
            Density::Exponential { rate, weight } => -weight * (-rate * u).exp_m1(),
            Density::Uniform { density } => density * u,
        }
    }

    pub fn mass(&self) -> T {
        self.mass_until(self.end)
    }

    pub fn density_at(&self, t: T) -> T {
        match self.density {
            Density::Exponential { rate, weight } => weight * rate * (-rate * (t - self.start)).exp(),
            Density::Uniform { density } => density,
        }
    }

    /// Smallest `t` in the segment with `mass_until(t) >= m`.
    fn inverse(&self, m: T) -> T {
        let t = match self.density {
            Density::Exponential { rate, weight } => {
                self.start - (-(m / weight)).ln_1p() / rate
            }
            Density::Uniform { density } => self.start + m / density,
        };
        t.max(self.start).min(self.end)
    }

    /// `∫_a^b h dF` over `[a, b] ⊆ [start, end]`, closed form wherever `h`
    /// is constant and adaptive quadrature elsewhere.
    pub fn integrate<P: SamplePath<T> + ?Sized>(&self, h: &P, a: T, b: T) -> Result<T> {
        let mut cuts: Vec<T> = h.breakpoints().into_iter().filter(|&c| c > a && c < b).collect();
        cuts.push(b);
        let mut total = T::zero();
        let mut lo = a;
        for hi in cuts {
            if hi <= lo {
                continue;
            }
            total += match h.constant_on(lo, hi) {
                Some(c) => {
                    if !c.is_finite() {
                        return Err(Error::NonFinite(format!("path value on ({lo}, {hi})")));
                    }
                    c * (self.mass_until(hi) - self.mass_until(lo))
                }
                None => integrate_split(
                    |t| h.value(t) * self.density_at(t),
                    lo,
                    hi,
                    &[],
                    T::lit(QUAD_REL_TOL),
                    T::lit(QUAD_ABS_TOL),
                )?,
            };
            lo = hi;
        }
        Ok(total)
    }
}

/// Right-continuous nondecreasing `F` on `[0, horizon]` with `F(0-) = 0`
/// and `F(horizon) = 1`: point masses plus absolutely continuous segments.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfPath<T> {
    horizon: T,
    jumps: Vec<(T, T)>,
    segments: Vec<Segment<T>>,
}

enum Piece<'a, T> {
    Jump(T, T),
    Seg(&'a Segment<T>),
}

impl<T: Scalar> CdfPath<T> {
    /// Validates ordering, nonnegativity and unit total mass.
    pub fn new(horizon: T, jumps: Vec<(T, T)>, segments: Vec<Segment<T>>) -> Result<Self> {
        if !horizon.is_finite() || horizon < T::zero() {
            return Err(Error::InvalidCdf(format!("horizon {horizon}")));
        }
        let in_range = |t: T| t.is_finite() && t >= T::zero() && t <= horizon;
        for w in jumps.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidCdf("jump times must strictly increase".into()));
            }
        }
        for &(t, m) in &jumps {
            if !in_range(t) || !m.is_finite() || m < T::zero() {
                return Err(Error::InvalidCdf(format!("jump ({t}, {m})")));
            }
        }
        for (i, s) in segments.iter().enumerate() {
            if !in_range(s.start) || !in_range(s.end) || !(s.end > s.start) {
                return Err(Error::InvalidCdf(format!("segment {i} spans [{}, {}]", s.start, s.end)));
            }
            let ok = match s.density {
                Density::Exponential { rate, weight } => {
                    rate.is_finite() && rate > T::zero() && weight.is_finite() && weight >= T::zero()
                }
                Density::Uniform { density } => density.is_finite() && density >= T::zero(),
            };
            if !ok {
                return Err(Error::InvalidCdf(format!("segment {i} has invalid density")));
            }
            if i > 0 && s.start < segments[i - 1].end {
                return Err(Error::InvalidCdf("segments overlap or are unsorted".into()));
            }
            if jumps.iter().any(|&(t, _)| t > s.start && t < s.end) {
                return Err(Error::InvalidCdf(format!("jump inside segment {i}")));
            }
        }
        let cdf = Self { horizon, jumps, segments };
        let total = cdf.total_mass();
        if (total - T::one()).abs() > T::tolerance(MASS_TOL) {
            return Err(Error::InvalidCdf(format!("total mass {total}")));
        }
        Ok(cdf)
    }

    pub fn point_mass(t: T) -> Result<Self> {
        Self::new(t, vec![(t, T::one())], Vec::new())
    }

    /// Discrete distribution; `jumps` need not be sorted but times must be distinct.
    pub fn discrete(mut jumps: Vec<(T, T)>) -> Result<Self> {
        jumps.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite jump times"));
        let horizon = jumps.last().map_or(T::zero(), |j| j.0);
        Self::new(horizon, jumps, Vec::new())
    }

    /// Uniform distribution on `[a, b]`.
    pub fn uniform(a: T, b: T) -> Result<Self> {
        let seg = Segment { start: a, end: b, density: Density::Uniform { density: (b - a).recip() } };
        Self::new(b, Vec::new(), vec![seg])
    }

    /// Exponential law of rate `rate` started at `start`, truncated at
    /// `horizon` where the residual mass sits as a terminal jump.
    pub fn exponential(start: T, rate: T, horizon: T) -> Result<Self> {
        let seg = Segment { start, end: horizon, density: Density::Exponential { rate, weight: T::one() } };
        let tail = (-rate * (horizon - start)).exp();
        Self::new(horizon, vec![(horizon, tail)], vec![seg])
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    pub fn jumps(&self) -> &[(T, T)] {
        &self.jumps
    }

    pub fn segments(&self) -> &[Segment<T>] {
        &self.segments
    }

    pub fn total_mass(&self) -> T {
        self.jumps.iter().map(|j| j.1).sum::<T>() + self.segments.iter().map(|s| s.mass()).sum::<T>()
    }

    /// Jumps and segments merged in time order; a jump at a segment start
    /// precedes the segment.
    fn pieces(&self) -> Vec<Piece<'_, T>> {
        let mut out = Vec::with_capacity(self.jumps.len() + self.segments.len());
        let (mut i, mut j) = (0, 0);
        while i < self.jumps.len() || j < self.segments.len() {
            let take_jump = match (self.jumps.get(i), self.segments.get(j)) {
                (Some(&(t, _)), Some(s)) => t <= s.start,
                (Some(_), None) => true,
                _ => false,
            };
            if take_jump {
                out.push(Piece::Jump(self.jumps[i].0, self.jumps[i].1));
                i += 1;
            } else {
                out.push(Piece::Seg(&self.segments[j]));
                j += 1;
            }
        }
        out
    }

    /// `F(t)`, right-continuous.
    pub fn value_at(&self, t: T) -> T {
        let jumps: T = self.jumps.iter().filter(|j| j.0 <= t).map(|j| j.1).sum();
        jumps + self.segments.iter().map(|s| s.mass_until(t)).sum::<T>()
    }

    /// `F(t-)`.
    pub fn value_before(&self, t: T) -> T {
        let jumps: T = self.jumps.iter().filter(|j| j.0 < t).map(|j| j.1).sum();
        jumps + self.segments.iter().map(|s| s.mass_until(t)).sum::<T>()
    }

    /// Generalized inverse `β(r) = inf{t >= 0 : F(t) >= r}` for `r ∈ [0, 1)`.
    /// Flat stretches of `F` resolve to their left endpoint.
    pub fn time_change(&self, r: T) -> Result<T> {
        if !(r >= T::zero() && r < T::one()) {
            return Err(Error::InvalidArgument(format!("level {r} outside [0, 1)")));
        }
        if r == T::zero() {
            return Ok(T::zero());
        }
        let mut acc = T::zero();
        for piece in self.pieces() {
            match piece {
                Piece::Jump(t, m) => {
                    acc += m;
                    if acc >= r {
                        return Ok(t);
                    }
                }
                Piece::Seg(s) => {
                    let m = s.mass();
                    if acc + m >= r {
                        return Ok(s.inverse(r - acc));
                    }
                    acc += m;
                }
            }
        }
        // rounding left a sliver of mass below r
        Ok(self.horizon)
    }

    /// `∫ h dF`: exact sums over the jumps, segments in closed form where
    /// `h` is piecewise constant and by adaptive quadrature otherwise.
    pub fn stieltjes_integral<P: SamplePath<T> + ?Sized>(&self, h: &P) -> Result<T> {
        let mut total = T::zero();
        for &(t, m) in &self.jumps {
            let v = h.value(t);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("path value at t = {t}")));
            }
            total += m * v;
        }
        for s in &self.segments {
            total += s.integrate(h, s.start, s.end)?;
        }
        Ok(total)
    }

    /// `∫_0^1 h(β(r)) dr`, computed in the level variable through
    /// [`CdfPath::time_change`] alone.
    pub fn time_changed_integral<P: SamplePath<T> + ?Sized>(&self, h: &P) -> Result<T> {
        let mut levels = vec![T::zero(), T::one()];
        for &(t, _) in &self.jumps {
            levels.push(self.value_before(t));
            levels.push(self.value_at(t));
        }
        for s in &self.segments {
            levels.push(self.value_at(s.start));
            levels.push(self.value_before(s.end));
        }
        for b in h.breakpoints() {
            levels.push(self.value_at(b));
        }
        levels.retain(|l| *l >= T::zero() && *l <= T::one());
        levels.sort_by(|a, b| a.partial_cmp(b).expect("finite levels"));
        levels.dedup();

        let mut total = T::zero();
        for w in levels.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if !(hi > lo) {
                continue;
            }
            let mid = (lo + hi) * T::lit(0.5);
            // the midpoint of [1 - eps, 1] rounds up to 1
            let t = self.time_change(if mid < T::one() { mid } else { lo })?;
            let flat = self.value_before(t) <= lo && self.value_at(t) >= hi;
            if flat {
                let v = h.value(t);
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("path value at t = {t}")));
                }
                total += v * (hi - lo);
            } else {
                let top = if hi >= T::one() { T::one() - T::epsilon() } else { hi };
                total += integrate_split(
                    |r| h.value(self.time_change(r).unwrap_or(self.horizon)),
                    lo,
                    top,
                    &[],
                    T::lit(QUAD_REL_TOL),
                    T::lit(QUAD_ABS_TOL),
                )?;
            }
        }
        Ok(total)
    }
}
