use std::collections::BTreeMap;

use super::{ControlPolicy, DiffusionModel, Families, GrowthConstants, IntensityPolicy, StopPolicy};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tree::BinomialLattice;

/// Lattice steps used by the Snell-envelope oracles.
pub const ORACLE_STEPS: usize = 2000;

/// `dx = σ dw`, no discount, no running reward, `g = x²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BmQuadratic<T> {
    pub sigma: T,
    pub horizon: T,
}

impl<T: Scalar> DiffusionModel<T> for BmQuadratic<T> {
    fn name(&self) -> &str {
        "bm-quadratic"
    }
    fn dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        0
    }
    fn horizon(&self) -> T {
        self.horizon
    }
    fn diffusion(&self, _: &[T], _: T, _: &[T], out: &mut [T]) {
        out[0] = self.sigma;
    }
    fn drift(&self, _: &[T], _: T, _: &[T], out: &mut [T]) {
        out[0] = T::zero();
    }
    fn discount_rate(&self, _: &[T], _: T, _: &[T]) -> T {
        T::zero()
    }
    fn running_reward(&self, _: &[T], _: T, _: &[T]) -> T {
        T::zero()
    }
    fn terminal_reward(&self, _: T, x: &[T]) -> T {
        x[0] * x[0]
    }
    fn growth(&self, _: usize) -> GrowthConstants<T> {
        GrowthConstants { k: T::one(), m: T::lit(2.0), k_n: self.sigma.abs().max(T::one()), m_n: T::zero() }
    }
    fn in_control_set(&self, control: &[T], _: usize) -> bool {
        control.is_empty()
    }
}

/// Geometric Brownian motion under the pricing measure, discounted at the
/// short rate, with the American put payoff `(K - x)^+`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbmPut<T> {
    pub strike: T,
    pub rate: T,
    pub vol: T,
    pub horizon: T,
}

impl<T: Scalar> DiffusionModel<T> for GbmPut<T> {
    fn name(&self) -> &str {
        "gbm-put"
    }
    fn dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        0
    }
    fn horizon(&self) -> T {
        self.horizon
    }
    fn diffusion(&self, _: &[T], _: T, x: &[T], out: &mut [T]) {
        out[0] = self.vol * x[0];
    }
    fn drift(&self, _: &[T], _: T, x: &[T], out: &mut [T]) {
        out[0] = self.rate * x[0];
    }
    fn discount_rate(&self, _: &[T], _: T, _: &[T]) -> T {
        self.rate
    }
    fn running_reward(&self, _: &[T], _: T, _: &[T]) -> T {
        T::zero()
    }
    fn terminal_reward(&self, _: T, x: &[T]) -> T {
        (self.strike - x[0]).max(T::zero())
    }
    fn growth(&self, _: usize) -> GrowthConstants<T> {
        let k_n = (self.vol.abs() + self.rate.abs()).max(self.rate.abs());
        GrowthConstants { k: self.strike.abs().max(T::one()), m: T::one(), k_n, m_n: T::zero() }
    }
    fn in_control_set(&self, control: &[T], _: usize) -> bool {
        control.is_empty()
    }
}

/// `dx = α dt + dw` with running reward `-κ α²` and `g = x`;
/// `A_n = {|α| <= n · unit}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlledDrift<T> {
    pub kappa: T,
    pub unit: T,
    pub horizon: T,
}

impl<T: Scalar> ControlledDrift<T> {
    pub fn control_bound(&self, level: usize) -> T {
        T::from_usize_lossy(level) * self.unit
    }

    /// Maximizer of `α - κα²` over `A_level`.
    pub fn best_control(&self, level: usize) -> T {
        let free = if self.kappa > T::zero() { (T::lit(2.0) * self.kappa).recip() } else { T::infinity() };
        free.min(self.control_bound(level))
    }
}

impl<T: Scalar> DiffusionModel<T> for ControlledDrift<T> {
    fn name(&self) -> &str {
        "controlled-drift-1d"
    }
    fn dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn horizon(&self) -> T {
        self.horizon
    }
    fn diffusion(&self, _: &[T], _: T, _: &[T], out: &mut [T]) {
        out[0] = T::one();
    }
    fn drift(&self, a: &[T], _: T, _: &[T], out: &mut [T]) {
        out[0] = a[0];
    }
    fn discount_rate(&self, _: &[T], _: T, _: &[T]) -> T {
        T::zero()
    }
    fn running_reward(&self, a: &[T], _: T, _: &[T]) -> T {
        -self.kappa * a[0] * a[0]
    }
    fn terminal_reward(&self, _: T, x: &[T]) -> T {
        x[0]
    }
    fn growth(&self, level: usize) -> GrowthConstants<T> {
        let a = self.control_bound(level);
        let k_n = (T::one() + a).max(self.kappa.abs() * a * a);
        GrowthConstants { k: T::one(), m: T::one(), k_n, m_n: T::zero() }
    }
    fn in_control_set(&self, control: &[T], level: usize) -> bool {
        control.len() == 1 && control[0].abs() <= self.control_bound(level)
    }
}

/// The registry of models selectable by name.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BuiltinModel<T> {
    BmQuadratic(BmQuadratic<T>),
    GbmPut(GbmPut<T>),
    ControlledDrift(ControlledDrift<T>),
}

/// `(name, description)` of every registered model.
pub fn model_catalog() -> Vec<(&'static str, &'static str)> {
    vec![
        ("bm-quadratic", "dx = sigma dw, g = x^2; params sigma = 1, horizon = 1"),
        (
            "gbm-put",
            "dx = rate x dt + vol x dw, c = rate, g = (strike - x)^+; params strike = 1, rate = 0.05, vol = 0.2, horizon = 1",
        ),
        (
            "controlled-drift-1d",
            "dx = a dt + dw, f = -kappa a^2, g = x, |a| <= n unit; params kappa = 0.5, unit = 0.25, horizon = 1",
        ),
    ]
}

fn take<T: Scalar>(params: &mut BTreeMap<String, f64>, key: &str, default: f64) -> Result<T> {
    let v = params.remove(key).unwrap_or(default);
    if !v.is_finite() {
        return Err(Error::Config(format!("model parameter `{key}` = {v} is not finite")));
    }
    Ok(T::lit(v))
}

fn positive<T: Scalar>(key: &str, v: T) -> Result<T> {
    if v > T::zero() {
        Ok(v)
    } else {
        Err(Error::Config(format!("model parameter `{key}` must be positive, got {v}")))
    }
}

impl<T: Scalar> BuiltinModel<T> {
    /// Looks up `name` and fills in the parameters, rejecting unknown keys.
    pub fn from_name(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let mut p = params.clone();
        let model = match name {
            "bm-quadratic" => Self::BmQuadratic(BmQuadratic {
                sigma: take(&mut p, "sigma", 1.0)?,
                horizon: positive("horizon", take(&mut p, "horizon", 1.0)?)?,
            }),
            "gbm-put" => Self::GbmPut(GbmPut {
                strike: positive("strike", take(&mut p, "strike", 1.0)?)?,
                rate: take(&mut p, "rate", 0.05)?,
                vol: positive("vol", take(&mut p, "vol", 0.2)?)?,
                horizon: positive("horizon", take(&mut p, "horizon", 1.0)?)?,
            }),
            "controlled-drift-1d" => Self::ControlledDrift(ControlledDrift {
                kappa: positive("kappa", take(&mut p, "kappa", 0.5)?)?,
                unit: positive("unit", take(&mut p, "unit", 0.25)?)?,
                horizon: positive("horizon", take(&mut p, "horizon", 1.0)?)?,
            }),
            other => return Err(Error::UnknownModel(other.to_string())),
        };
        if let Some(key) = p.keys().next() {
            return Err(Error::Config(format!("unknown parameter `{key}` for model `{name}`")));
        }
        Ok(model)
    }

    fn inner(&self) -> &dyn DiffusionModel<T> {
        match self {
            Self::BmQuadratic(m) => m,
            Self::GbmPut(m) => m,
            Self::ControlledDrift(m) => m,
        }
    }

    /// Reference value `w_level(s, x)`: a binomial Snell envelope with
    /// [`ORACLE_STEPS`] steps, or the closed form for the drift model.
    pub fn oracle(&self, start_time: T, x: &[T], level: usize) -> Result<T> {
        let span = self.horizon() - start_time;
        if !(span > T::zero()) || x.len() != 1 {
            return Err(Error::InvalidArgument("oracle needs s < T and a scalar state".into()));
        }
        let x0 = x[0];
        match self {
            Self::BmQuadratic(m) => {
                let sigma = m.sigma;
                BinomialLattice::brownian(T::zero(), span, ORACLE_STEPS).snell_value(|_, w| {
                    let y = x0 + sigma * w;
                    y * y
                })
            }
            Self::GbmPut(m) => BinomialLattice::crr(x0, m.rate, m.vol, span, ORACLE_STEPS)
                .snell_value(|_, s| (m.strike - s).max(T::zero())),
            Self::ControlledDrift(m) => {
                let a = m.best_control(level);
                Ok(x0 + span * (a - m.kappa * a * a).max(T::zero()))
            }
        }
    }

    /// Candidate families for [`value_search`](super::value_search): stopping
    /// regions plus, for every cap, bang-bang and constant intensities.
    pub fn default_families(&self, caps: &[usize]) -> Families<T> {
        let horizon = self.horizon();
        let mut stops = vec![StopPolicy::at_horizon()];
        let mut intensities = vec![IntensityPolicy::zero()];
        let mut controls = vec![ControlPolicy::uncontrolled()];
        let thetas = [0.5, 0.9];
        let add_time_switches = |intensities: &mut Vec<IntensityPolicy<T>>, cap: T, n: usize| {
            for th in thetas {
                let switch = T::lit(th) * horizon;
                intensities.push(IntensityPolicy::bang_bang(format!("n{n}:t>={th}T"), cap, move |t, _| {
                    t >= switch
                }));
            }
            intensities.push(IntensityPolicy::constant(cap, cap));
        };
        match self {
            Self::BmQuadratic(_) => {
                let levels = [0.25, 0.5, 1.0, 2.0];
                for b in levels {
                    let lb = T::lit(b);
                    stops.push(StopPolicy::when(format!("x^2>={b}"), move |_, x| x[0] * x[0] >= lb));
                }
                for &n in caps {
                    let cap = T::from_usize_lossy(n);
                    for b in levels {
                        let lb = T::lit(b);
                        intensities.push(IntensityPolicy::bang_bang(format!("n{n}:x^2>={b}"), cap, move |_, x| {
                            x[0] * x[0] >= lb
                        }));
                    }
                    add_time_switches(&mut intensities, cap, n);
                }
            }
            Self::GbmPut(m) => {
                let levels = [0.7, 0.8, 0.9, 0.95];
                for b in levels {
                    let lb = T::lit(b) * m.strike;
                    stops.push(StopPolicy::when(format!("x<={b}K"), move |_, x| x[0] <= lb));
                }
                for &n in caps {
                    let cap = T::from_usize_lossy(n);
                    for b in levels {
                        let lb = T::lit(b) * m.strike;
                        intensities.push(IntensityPolicy::bang_bang(format!("n{n}:x<={b}K"), cap, move |_, x| {
                            x[0] <= lb
                        }));
                    }
                    add_time_switches(&mut intensities, cap, n);
                }
            }
            Self::ControlledDrift(m) => {
                controls.clear();
                controls.push(ControlPolicy::constant("a=0", 1, vec![T::zero()]));
                for &n in caps {
                    let best = m.best_control(n);
                    controls.push(ControlPolicy::constant(format!("a={best}"), n, vec![best]));
                    let edge = m.control_bound(n);
                    if edge != best {
                        controls.push(ControlPolicy::constant(format!("a={edge}"), n, vec![edge]));
                    }
                    add_time_switches(&mut intensities, T::from_usize_lossy(n), n);
                }
                let half = T::lit(0.5) * horizon;
                stops.push(StopPolicy::when("t>=T/2", move |t, _| t >= half));
            }
        }
        Families { controls, stops, intensities }
    }
}

impl<T: Scalar> DiffusionModel<T> for BuiltinModel<T> {
    fn name(&self) -> &str {
        self.inner().name()
    }
    fn dim(&self) -> usize {
        self.inner().dim()
    }
    fn noise_dim(&self) -> usize {
        self.inner().noise_dim()
    }
    fn control_dim(&self) -> usize {
        self.inner().control_dim()
    }
    fn horizon(&self) -> T {
        self.inner().horizon()
    }
    fn diffusion(&self, a: &[T], t: T, x: &[T], out: &mut [T]) {
        self.inner().diffusion(a, t, x, out)
    }
    fn drift(&self, a: &[T], t: T, x: &[T], out: &mut [T]) {
        self.inner().drift(a, t, x, out)
    }
    fn discount_rate(&self, a: &[T], t: T, x: &[T]) -> T {
        self.inner().discount_rate(a, t, x)
    }
    fn running_reward(&self, a: &[T], t: T, x: &[T]) -> T {
        self.inner().running_reward(a, t, x)
    }
    fn terminal_reward(&self, t: T, x: &[T]) -> T {
        self.inner().terminal_reward(t, x)
    }
    fn growth(&self, level: usize) -> GrowthConstants<T> {
        self.inner().growth(level)
    }
    fn in_control_set(&self, control: &[T], level: usize) -> bool {
        self.inner().in_control_set(control, level)
    }
}
