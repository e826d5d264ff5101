use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{ControlPolicy, DiffusionModel, Families, IntensityPolicy, StopPolicy};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Paths per parallel work item. Fixed so that the partial results, and
/// the order in which they are combined, never depend on the worker count.
const CHUNK: usize = 512;

/// Start point and discretization of a simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings<T> {
    /// Start time `s`; paths run over `[0, T - s]`.
    pub start_time: T,
    pub start_state: Vec<T>,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    /// Worker threads; `0` uses the global rayon pool.
    pub workers: usize,
    /// Abort when the moment guard exceeds this value.
    pub moment_bound: Option<T>,
}

impl<T: Scalar> SimSettings<T> {
    pub fn new(start_state: Vec<T>, steps: usize, paths: usize, seed: u64) -> Self {
        Self { start_time: T::zero(), start_state, steps, paths, seed, workers: 0, moment_bound: None }
    }

    fn check<M: DiffusionModel<T> + ?Sized>(&self, model: &M) -> Result<T> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("step count must be at least 1".into()));
        }
        if self.paths == 0 {
            return Err(Error::InvalidArgument("path count must be at least 1".into()));
        }
        if self.start_state.len() != model.dim() {
            return Err(Error::LengthMismatch { expected: model.dim(), got: self.start_state.len() });
        }
        if self.start_state.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("start state".into()));
        }
        let span = model.horizon() - self.start_time;
        if !(span > T::zero()) || !span.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "start time {} must lie before the horizon {}",
                self.start_time,
                model.horizon()
            )));
        }
        Ok(span)
    }
}

/// One simulated path on the grid `t_k = k (T - s) / steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord<T> {
    /// `x_k`, row-major `(steps + 1) × dim`.
    pub states: Vec<T>,
    /// `φ_k`, accumulated by the left-endpoint rule.
    pub discount: Vec<T>,
    /// `f^α(s + t_k, x_k)` for `k < steps`.
    pub running: Vec<T>,
    /// `g(s + t_k, x_k)` for every grid point.
    pub reward: Vec<T>,
    /// Brownian increments, row-major `steps × noise_dim`.
    pub increments: Vec<T>,
}

/// Sample mean and its standard error. With a single path the standard
/// error is undefined and reported as NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<T> {
    pub mean: T,
    pub std_err: T,
    pub paths: usize,
}

impl<T: Scalar> Estimate<T> {
    pub fn from_samples(xs: &[T]) -> Self {
        let n = T::from_usize_lossy(xs.len());
        let mean = xs.iter().copied().sum::<T>() / n;
        let std_err = if xs.len() < 2 {
            T::nan()
        } else {
            let ss: T = xs.iter().map(|&x| (x - mean) * (x - mean)).sum();
            (ss / (n - T::one()) / n).sqrt()
        };
        Self { mean, std_err, paths: xs.len() }
    }

    /// `sqrt(se_a² + se_b²)`, the standard error of a difference when the
    /// two estimates are treated as independent.
    pub fn combined_se(&self, other: &Self) -> T {
        self.std_err.hypot(other.std_err)
    }
}

/// Shared grid facts needed to evaluate payoffs on a [`PathRecord`].
#[derive(Debug, Clone, Copy)]
struct Grid<T> {
    start: T,
    span: T,
    steps: usize,
    dim: usize,
}

impl<T: Scalar> Grid<T> {
    fn time(&self, k: usize) -> T {
        self.span * T::from_usize_lossy(k) / T::from_usize_lossy(self.steps)
    }

    fn dt(&self) -> T {
        self.span / T::from_usize_lossy(self.steps)
    }

    fn state<'a>(&self, rec: &'a PathRecord<T>, k: usize) -> &'a [T] {
        &rec.states[k * self.dim..(k + 1) * self.dim]
    }

    /// Left-endpoint rates `r(s + t_k, x_k)`, checked against the cap.
    fn rates(&self, rec: &PathRecord<T>, r: &IntensityPolicy<T>) -> Result<Vec<T>> {
        (0..self.steps)
            .map(|k| {
                let t = self.start + self.time(k);
                let x = self.state(rec, k);
                let v = r.rate(t, x);
                if v.is_finite() && v >= T::zero() && v <= r.cap {
                    Ok(v)
                } else {
                    Err(Error::Simulation(format!(
                        "intensity `{}` gave {v} outside [0, {}] at t = {t}, x = {x:?}",
                        r.label, r.cap
                    )))
                }
            })
            .collect()
    }

    /// `∫_0^τ f e^{-φ} dt + g_τ e^{-φ_τ}` with `τ` the first grid time in the region.
    fn stopped(&self, rec: &PathRecord<T>, stop: &StopPolicy<T>) -> T {
        let dt = self.dt();
        let mut acc = T::zero();
        for k in 0..self.steps {
            let disc = (-rec.discount[k]).exp();
            if stop.stops(self.start + self.time(k), self.state(rec, k)) {
                return acc + rec.reward[k] * disc;
            }
            acc += rec.running[k] * disc * dt;
        }
        acc + rec.reward[self.steps] * (-rec.discount[self.steps]).exp()
    }

    /// The randomized payoff with exact per-step survival factors.
    fn randomized(&self, rec: &PathRecord<T>, rates: &[T]) -> T {
        let dt = self.dt();
        let mut survival = T::one();
        let mut acc = T::zero();
        for (k, &r) in rates.iter().enumerate() {
            let disc = (-rec.discount[k]).exp();
            let a = r * dt;
            // 1 - e^{-rΔ}
            let stopped = -(-a).exp_m1();
            let f_weight = if r > T::zero() { stopped / r } else { dt };
            acc += survival * disc * (rec.running[k] * f_weight + rec.reward[k] * stopped);
            survival *= (-a).exp();
        }
        acc + survival * (-rec.discount[self.steps]).exp() * rec.reward[self.steps]
    }

    /// `∫ (∫_0^t f ds + g_t) r_t e^{-∫r} dt` plus the terminal jump, evaluated
    /// step by step in closed form.
    fn by_parts(&self, rec: &PathRecord<T>, rates: &[T]) -> T {
        let dt = self.dt();
        let mut survival = T::one();
        let mut running_total = T::zero();
        let mut acc = T::zero();
        for (k, &r) in rates.iter().enumerate() {
            let disc = (-rec.discount[k]).exp();
            let f = rec.running[k] * disc;
            let g = rec.reward[k] * disc;
            let a = r * dt;
            if r > T::zero() {
                let e = (-a).exp();
                let lin = (T::one() - e * (T::one() + a)) / r;
                acc += survival * ((running_total + g) * (-(-a).exp_m1()) + f * lin);
                survival *= e;
            }
            running_total += f * dt;
        }
        let g_end = rec.reward[self.steps] * (-rec.discount[self.steps]).exp();
        acc + (running_total + g_end) * survival
    }
}

fn simulate_one<T: Scalar, M: DiffusionModel<T> + ?Sized>(
    model: &M,
    control: &ControlPolicy<T>,
    settings: &SimSettings<T>,
    grid: &Grid<T>,
    index: usize,
) -> Result<PathRecord<T>> {
    let (d, dn, m) = (model.dim(), model.noise_dim(), grid.steps);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(index as u64);

    let mut states = Vec::with_capacity((m + 1) * d);
    states.extend_from_slice(&settings.start_state);
    let mut discount = vec![T::zero(); m + 1];
    let mut running = vec![T::zero(); m];
    let mut reward = vec![T::zero(); m + 1];
    let mut increments = vec![T::zero(); m * dn];

    let mut alpha = vec![T::zero(); model.control_dim()];
    let mut sigma = vec![T::zero(); d * dn];
    let mut beta = vec![T::zero(); d];
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();

    for k in 0..m {
        let t = grid.start + grid.time(k);
        let x: Vec<T> = states[k * d..(k + 1) * d].to_vec();
        control.apply(t, &x, &mut alpha);
        if !model.in_control_set(&alpha, control.level) {
            return Err(Error::Simulation(format!(
                "path {index}, step {k}: control `{}` gave {alpha:?}, outside A_{}",
                control.label, control.level
            )));
        }
        model.diffusion(&alpha, t, &x, &mut sigma);
        model.drift(&alpha, t, &x, &mut beta);
        let c = model.discount_rate(&alpha, t, &x);
        running[k] = model.running_reward(&alpha, t, &x);
        reward[k] = model.terminal_reward(t, &x);

        let dw = &mut increments[k * dn..(k + 1) * dn];
        for w in dw.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *w = sqrt_dt * T::lit(z);
        }
        for i in 0..d {
            let noise: T = (0..dn).map(|j| sigma[i * dn + j] * dw[j]).sum();
            states.push(x[i] + noise + beta[i] * dt);
        }
        discount[k + 1] = discount[k] + c * dt;

        let next = &states[(k + 1) * d..];
        if next.iter().any(|v| !v.is_finite())
            || !discount[k + 1].is_finite()
            || !running[k].is_finite()
            || !reward[k].is_finite()
        {
            return Err(Error::Simulation(format!(
                "path {index} (seed {}, stream {index}) became non-finite at step {k}, t = {t}: \
                 x = {x:?} -> {next:?}, φ = {}, f = {}, g = {}",
                settings.seed,
                discount[k + 1],
                running[k],
                reward[k]
            )));
        }
    }
    let t_end = grid.start + grid.span;
    reward[m] = model.terminal_reward(t_end, &states[m * d..]);
    if !reward[m].is_finite() {
        return Err(Error::Simulation(format!("path {index}: terminal reward is non-finite")));
    }
    Ok(PathRecord { states, discount, running, reward, increments })
}

/// Runs `work` on fixed chunks of path indices, in parallel, returning the
/// chunk results in index order (and the first error in index order).
fn over_chunks<T: Scalar, R: Send>(
    settings: &SimSettings<T>,
    work: impl Fn(Range<usize>) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let chunks: Vec<Range<usize>> = (0..settings.paths)
        .step_by(CHUNK)
        .map(|a| a..(a + CHUNK).min(settings.paths))
        .collect();
    let run = || chunks.par_iter().map(|r| work(r.clone())).collect::<Vec<_>>();
    let results = if settings.workers == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(settings.workers)
            .build()
            .map_err(|e| Error::Simulation(format!("thread pool: {e}")))?
            .install(run)
    };
    results.into_iter().collect()
}

fn moment_power<T: Scalar, M: DiffusionModel<T> + ?Sized>(model: &M, level: usize) -> T {
    let g = model.growth(level);
    g.m.max(g.m_n)
}

fn add_moments<T: Scalar>(acc: &mut [T], rec: &PathRecord<T>, dim: usize, power: T) {
    for (k, a) in acc.iter_mut().enumerate() {
        let x = &rec.states[k * dim..(k + 1) * dim];
        let norm = x.iter().map(|&v| v * v).sum::<T>().sqrt();
        *a += (T::one() + norm).powf(power);
    }
}

/// `sup_k mean_i (1 + |x_k^i|)^p` from per-chunk sums, combined in order.
fn finish_moments<T: Scalar>(chunks: impl Iterator<Item = Vec<T>>, settings: &SimSettings<T>) -> Result<T> {
    let mut total = vec![T::zero(); settings.steps + 1];
    for c in chunks {
        for (a, b) in total.iter_mut().zip(c) {
            *a += b;
        }
    }
    let n = T::from_usize_lossy(settings.paths);
    let sup = total.into_iter().map(|s| s / n).fold(T::zero(), T::max);
    if let Some(bound) = settings.moment_bound {
        if !(sup <= bound) {
            return Err(Error::Simulation(format!(
                "moment guard: sup over the grid of E(1+|x|)^p is {sup}, above the bound {bound}"
            )));
        }
    }
    Ok(sup)
}

/// All simulated paths of one control policy.
#[derive(Debug, Clone)]
pub struct PathBundle<T> {
    pub start_time: T,
    /// Length `T - s` of the simulated interval.
    pub span: T,
    pub steps: usize,
    pub dim: usize,
    pub noise_dim: usize,
    pub seed: u64,
    /// Path `i` was drawn from substream `i` of `seed`.
    pub records: Vec<PathRecord<T>>,
    /// Moment guard value `sup_k mean (1 + |x_k|)^p`.
    pub moment_sup: T,
}

impl<T: Scalar> PathBundle<T> {
    fn grid(&self) -> Grid<T> {
        Grid { start: self.start_time, span: self.span, steps: self.steps, dim: self.dim }
    }

    pub fn dt(&self) -> T {
        self.grid().dt()
    }

    /// Grid times `t_k` relative to the start time.
    pub fn times(&self) -> Vec<T> {
        let g = self.grid();
        (0..=self.steps).map(|k| g.time(k)).collect()
    }

    pub fn state(&self, path: usize, k: usize) -> &[T] {
        self.grid().state(&self.records[path], k)
    }

    pub fn stopped_payoff(&self, path: usize, stop: &StopPolicy<T>) -> T {
        self.grid().stopped(&self.records[path], stop)
    }

    pub fn randomized_payoff(&self, path: usize, r: &IntensityPolicy<T>) -> Result<T> {
        let g = self.grid();
        let rates = g.rates(&self.records[path], r)?;
        Ok(g.randomized(&self.records[path], &rates))
    }

    /// The randomized payoff rewritten by integration by parts as an
    /// integral of the running total against the stopping distribution.
    pub fn by_parts_payoff(&self, path: usize, r: &IntensityPolicy<T>) -> Result<T> {
        let g = self.grid();
        let rates = g.rates(&self.records[path], r)?;
        Ok(g.by_parts(&self.records[path], &rates))
    }

    /// `∫_0^{t_k} r_u du` at every grid point.
    pub fn accumulated_intensity(&self, path: usize, r: &IntensityPolicy<T>) -> Result<Vec<T>> {
        let g = self.grid();
        let dt = g.dt();
        let rates = g.rates(&self.records[path], r)?;
        let mut out = Vec::with_capacity(self.steps + 1);
        let mut acc = T::zero();
        out.push(acc);
        for r in rates {
            acc += r * dt;
            out.push(acc);
        }
        Ok(out)
    }
}

/// Euler–Maruyama paths of `model` under `control`.
pub fn simulate_paths<T: Scalar, M: DiffusionModel<T> + ?Sized>(
    model: &M,
    control: &ControlPolicy<T>,
    settings: &SimSettings<T>,
) -> Result<PathBundle<T>> {
    let span = settings.check(model)?;
    let grid = Grid { start: settings.start_time, span, steps: settings.steps, dim: model.dim() };
    let power = moment_power(model, control.level);
    let chunks = over_chunks(settings, |range| {
        let mut moments = vec![T::zero(); settings.steps + 1];
        let mut recs = Vec::with_capacity(range.len());
        for i in range {
            let rec = simulate_one(model, control, settings, &grid, i)?;
            add_moments(&mut moments, &rec, grid.dim, power);
            recs.push(rec);
        }
        Ok((recs, moments))
    })?;
    let mut records = Vec::with_capacity(settings.paths);
    let mut moment_chunks = Vec::with_capacity(chunks.len());
    for (recs, m) in chunks {
        records.extend(recs);
        moment_chunks.push(m);
    }
    let moment_sup = finish_moments(moment_chunks.into_iter(), settings)?;
    Ok(PathBundle {
        start_time: settings.start_time,
        span,
        steps: settings.steps,
        dim: model.dim(),
        noise_dim: model.noise_dim(),
        seed: settings.seed,
        records,
        moment_sup,
    })
}

/// One evaluated policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<T> {
    pub label: String,
    /// Intensity cap, `None` for stopping regions.
    pub cap: Option<T>,
    pub estimate: Estimate<T>,
}

/// Estimates of every stopping and intensity policy under one control, all
/// on the same simulated paths.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateTable<T> {
    pub control: String,
    pub level: usize,
    pub stopped: Vec<Candidate<T>>,
    pub randomized: Vec<Candidate<T>>,
    pub moment_sup: T,
}

/// Simulates paths under `control` once and evaluates every policy on them.
/// Paths are not retained, so memory grows with the number of policies
/// rather than with the grid.
pub fn evaluate_candidates<T: Scalar, M: DiffusionModel<T> + ?Sized>(
    model: &M,
    control: &ControlPolicy<T>,
    stops: &[StopPolicy<T>],
    intensities: &[IntensityPolicy<T>],
    settings: &SimSettings<T>,
) -> Result<CandidateTable<T>> {
    let span = settings.check(model)?;
    let grid = Grid { start: settings.start_time, span, steps: settings.steps, dim: model.dim() };
    let power = moment_power(model, control.level);
    let (ns, nr) = (stops.len(), intensities.len());
    let chunks = over_chunks(settings, |range| {
        let len = range.len();
        let mut moments = vec![T::zero(); settings.steps + 1];
        let mut stopped = vec![Vec::with_capacity(len); ns];
        let mut randomized = vec![Vec::with_capacity(len); nr];
        for i in range {
            let rec = simulate_one(model, control, settings, &grid, i)?;
            add_moments(&mut moments, &rec, grid.dim, power);
            for (out, s) in stopped.iter_mut().zip(stops) {
                out.push(grid.stopped(&rec, s));
            }
            for (out, r) in randomized.iter_mut().zip(intensities) {
                let rates = grid.rates(&rec, r).map_err(|e| Error::Simulation(format!("path {i}: {e}")))?;
                out.push(grid.randomized(&rec, &rates));
            }
        }
        Ok((stopped, randomized, moments))
    })?;

    let mut stopped = vec![Vec::with_capacity(settings.paths); ns];
    let mut randomized = vec![Vec::with_capacity(settings.paths); nr];
    let mut moment_chunks = Vec::with_capacity(chunks.len());
    for (s, r, m) in chunks {
        for (all, part) in stopped.iter_mut().zip(s) {
            all.extend(part);
        }
        for (all, part) in randomized.iter_mut().zip(r) {
            all.extend(part);
        }
        moment_chunks.push(m);
    }
    let moment_sup = finish_moments(moment_chunks.into_iter(), settings)?;
    Ok(CandidateTable {
        control: control.label.clone(),
        level: control.level,
        stopped: stops
            .iter()
            .zip(&stopped)
            .map(|(s, xs)| Candidate { label: s.label.clone(), cap: None, estimate: Estimate::from_samples(xs) })
            .collect(),
        randomized: intensities
            .iter()
            .zip(&randomized)
            .map(|(r, xs)| Candidate {
                label: r.label.clone(),
                cap: Some(r.cap),
                estimate: Estimate::from_samples(xs),
            })
            .collect(),
        moment_sup,
    })
}

/// Monte Carlo estimate of the stopped payoff.
pub fn estimate_v_stop<T: Scalar, M: DiffusionModel<T> + ?Sized>(
    model: &M,
    control: &ControlPolicy<T>,
    stop: &StopPolicy<T>,
    settings: &SimSettings<T>,
) -> Result<Estimate<T>> {
    let table = evaluate_candidates(model, control, std::slice::from_ref(stop), &[], settings)?;
    Ok(table.stopped[0].estimate)
}

/// Monte Carlo estimate of the payoff under a stopping intensity.
pub fn estimate_v_randomized<T: Scalar, M: DiffusionModel<T> + ?Sized>(
    model: &M,
    control: &ControlPolicy<T>,
    intensity: &IntensityPolicy<T>,
    settings: &SimSettings<T>,
) -> Result<Estimate<T>> {
    let table = evaluate_candidates(model, control, &[], std::slice::from_ref(intensity), settings)?;
    Ok(table.randomized[0].estimate)
}

/// Best values at one truncation level `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchRow<T> {
    pub cap: usize,
    pub randomized: Estimate<T>,
    pub randomized_label: String,
    pub stopped: Estimate<T>,
    pub stopped_label: String,
    /// Best stopped minus best randomized value.
    pub gap: T,
    pub combined_se: T,
    /// Largest moment guard value among the admitted controls.
    pub moment_sup: T,
}

fn best<'a, T: Scalar>(
    items: impl Iterator<Item = (&'a str, &'a Candidate<T>)>,
) -> Option<(String, Estimate<T>)> {
    let mut out: Option<(String, Estimate<T>)> = None;
    for (control, c) in items {
        if out.as_ref().is_none_or(|(_, e)| c.estimate.mean > e.mean) {
            out = Some((format!("{control}/{}", c.label), c.estimate));
        }
    }
    out
}

/// Best stopped and randomized values for each truncation level in `caps`.
///
/// Level `n` admits the controls declared in `A_m` for `m <= n` and the
/// intensities with cap at most `n`, so the searched families are nested
/// in `n`. Every candidate is evaluated on the same noise, which makes the
/// reported best randomized value nondecreasing along increasing caps.
pub fn value_search<T: Scalar, M: DiffusionModel<T> + ?Sized>(
    model: &M,
    families: &Families<T>,
    caps: &[usize],
    settings: &SimSettings<T>,
) -> Result<Vec<SearchRow<T>>> {
    if families.controls.is_empty() {
        return Err(Error::InvalidArgument("empty control family".into()));
    }
    if families.stops.is_empty() || families.intensities.is_empty() {
        return Err(Error::InvalidArgument("empty stopping or intensity family".into()));
    }
    if caps.is_empty() {
        return Err(Error::InvalidArgument("no caps given".into()));
    }
    let tables = families
        .controls
        .iter()
        .map(|c| evaluate_candidates(model, c, &families.stops, &families.intensities, settings))
        .collect::<Result<Vec<_>>>()?;

    caps.iter()
        .map(|&n| {
            let cap = T::from_usize_lossy(n);
            let admitted = || tables.iter().filter(move |t| t.level <= n);
            let rand = best(admitted().flat_map(|t| {
                t.randomized
                    .iter()
                    .filter(move |c| c.cap.is_some_and(|k| k <= cap))
                    .map(move |c| (t.control.as_str(), c))
            }));
            let stop = best(admitted().flat_map(|t| t.stopped.iter().map(move |c| (t.control.as_str(), c))));
            let moment_sup = admitted().map(|t| t.moment_sup).fold(T::zero(), T::max);
            match (rand, stop) {
                (Some((rl, r)), Some((sl, s))) => Ok(SearchRow {
                    cap: n,
                    moment_sup,
                    gap: s.mean - r.mean,
                    combined_se: s.combined_se(&r),
                    randomized: r,
                    randomized_label: rl,
                    stopped: s,
                    stopped_label: sl,
                }),
                _ => Err(Error::InvalidArgument(format!("empty candidate family at cap {n}"))),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{BmQuadratic, BuiltinModel, GrowthConstants};

    /// Constant coefficients in one dimension with `g = x` or `g = x²`.
    struct Affine {
        sigma: f64,
        beta: f64,
        c: f64,
        f: f64,
        g_power: i32,
        horizon: f64,
    }

    impl DiffusionModel<f64> for Affine {
        fn name(&self) -> &str {
            "affine"
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
        fn horizon(&self) -> f64 {
            self.horizon
        }
        fn diffusion(&self, _: &[f64], _: f64, _: &[f64], out: &mut [f64]) {
            out[0] = self.sigma;
        }
        fn drift(&self, _: &[f64], _: f64, _: &[f64], out: &mut [f64]) {
            out[0] = self.beta;
        }
        fn discount_rate(&self, _: &[f64], _: f64, _: &[f64]) -> f64 {
            self.c
        }
        fn running_reward(&self, _: &[f64], _: f64, _: &[f64]) -> f64 {
            self.f
        }
        fn terminal_reward(&self, _: f64, x: &[f64]) -> f64 {
            match self.g_power {
                0 => 0.0,
                p => x[0].powi(p),
            }
        }
        fn growth(&self, _: usize) -> GrowthConstants<f64> {
            GrowthConstants { k: 1.0, m: 2.0, k_n: 1.0, m_n: 0.0 }
        }
        fn in_control_set(&self, _: &[f64], _: usize) -> bool {
            true
        }
    }

    fn affine(sigma: f64, beta: f64, f: f64, g_power: i32) -> Affine {
        Affine { sigma, beta, c: 0.0, f, g_power, horizon: 1.0 }
    }

    fn settings(x: f64, steps: usize, paths: usize) -> SimSettings<f64> {
        SimSettings::new(vec![x], steps, paths, 7)
    }

    #[test]
    fn frozen_paths_stay_put() {
        let b = simulate_paths(&affine(0.0, 0.0, 0.0, 1), &ControlPolicy::uncontrolled(), &settings(0.3, 10, 20))
            .unwrap();
        assert!(b.records.iter().all(|r| r.states.iter().all(|&x| x == 0.3)));
    }

    #[test]
    fn unit_drift_is_deterministic() {
        let b = simulate_paths(&affine(0.0, 1.0, 0.0, 1), &ControlPolicy::uncontrolled(), &settings(0.5, 8, 3))
            .unwrap();
        let times = b.times();
        assert_eq!(times[8], 1.0);
        for p in 0..3 {
            for (k, t) in times.iter().enumerate() {
                assert!((b.state(p, k)[0] - (0.5 + t)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn brownian_mean_within_three_se() {
        let b = simulate_paths(&affine(1.0, 0.0, 0.0, 1), &ControlPolicy::uncontrolled(), &settings(0.2, 16, 100_000))
            .unwrap();
        let mean = b.records.iter().map(|r| r.states[16]).sum::<f64>() / 1e5;
        assert!((mean - 0.2).abs() < 3.0 * (1.0f64 / 1e5).sqrt());
    }

    #[test]
    fn trivial_payoffs_have_zero_variance() {
        let none = ControlPolicy::uncontrolled();
        let e = estimate_v_stop(&affine(0.0, 0.0, 0.0, 1), &none, &StopPolicy::at_horizon(), &settings(0.4, 10, 50))
            .unwrap();
        assert!((e.mean - 0.4).abs() < 1e-15 && e.std_err < 1e-15);

        let m = Affine { horizon: 2.0, ..affine(1.0, 0.0, 1.0, 0) };
        let mut s = settings(0.0, 40, 200);
        s.start_time = 0.5;
        let e = estimate_v_stop(&m, &none, &StopPolicy::at_horizon(), &s).unwrap();
        assert!((e.mean - 1.5).abs() < 1e-12 && e.std_err < 1e-12);
        let e = estimate_v_randomized(&m, &none, &IntensityPolicy::zero(), &s).unwrap();
        assert!((e.mean - 1.5).abs() < 1e-12 && e.std_err < 1e-12);
    }

    #[test]
    fn zero_intensity_is_european_payoff() {
        let m = affine(1.0, 0.3, 0.0, 2);
        let none = ControlPolicy::uncontrolled();
        let s = settings(0.1, 20, 500);
        let b = simulate_paths(&m, &none, &s).unwrap();
        let direct = Estimate::from_samples(&b.records.iter().map(|r| r.reward[20]).collect::<Vec<_>>());
        let e = estimate_v_randomized(&m, &none, &IntensityPolicy::zero(), &s).unwrap();
        assert_eq!(e, direct);
    }

    #[test]
    fn squared_brownian_end_value() {
        let m = BmQuadratic { sigma: 1.0, horizon: 1.0 };
        let none = ControlPolicy::uncontrolled();
        let s = settings(0.0, 50, 100_000);
        let stop = estimate_v_stop(&m, &none, &StopPolicy::at_horizon(), &s).unwrap();
        assert!((stop.mean - 1.0).abs() < 3.0 * stop.std_err, "{stop:?}");
        let rand = estimate_v_randomized(&m, &none, &IntensityPolicy::zero(), &s).unwrap();
        assert!((rand.mean - stop.mean).abs() <= 3.0 * rand.combined_se(&stop));
    }

    #[test]
    fn integration_by_parts_per_path() {
        let m = Affine { c: 0.4, ..affine(0.8, 0.2, 0.7, 2) };
        let b = simulate_paths(&m, &ControlPolicy::uncontrolled(), &settings(0.3, 64, 50)).unwrap();
        let policies = [
            IntensityPolicy::zero(),
            IntensityPolicy::constant(3.0, 3.0),
            IntensityPolicy::bang_bang("x>0.5", 40.0, |_, x: &[f64]| x[0] > 0.5),
            IntensityPolicy::feedback("smooth", 5.0, |t, x: &[f64]| 5.0 * (t * x[0]).sin().abs()),
        ];
        for r in &policies {
            for p in 0..50 {
                let lhs = b.randomized_payoff(p, r).unwrap();
                let rhs = b.by_parts_payoff(p, r).unwrap();
                assert!((lhs - rhs).abs() < 1e-8, "{}: {lhs} vs {rhs}", r.label);
            }
        }
    }

    #[test]
    fn discount_factors_in_unit_interval() {
        let m = Affine { c: 0.9, ..affine(1.0, 0.0, 0.0, 1) };
        let b = simulate_paths(&m, &ControlPolicy::uncontrolled(), &settings(0.0, 10, 30)).unwrap();
        for r in &b.records {
            assert!(r.discount.windows(2).all(|w| w[1] >= w[0]));
            assert!(r.discount.iter().all(|&p| (-p).exp() > 0.0 && (-p).exp() <= 1.0));
        }
    }

    #[test]
    fn accumulated_intensity_is_stepwise() {
        let b = simulate_paths(&affine(1.0, 0.0, 0.0, 1), &ControlPolicy::uncontrolled(), &settings(0.0, 4, 2))
            .unwrap();
        let acc = b.accumulated_intensity(0, &IntensityPolicy::constant(2.0, 2.0)).unwrap();
        assert_eq!(acc, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        let over = IntensityPolicy::feedback("over", 1.0, |_, _| 2.0);
        assert!(b.randomized_payoff(0, &over).is_err());
    }

    #[test]
    fn martingale_under_any_policy() {
        let m = affine(1.0, 0.0, 0.0, 1);
        let none = ControlPolicy::uncontrolled();
        let stops = [StopPolicy::at_horizon(), StopPolicy::when("x>0.5", |_, x: &[f64]| x[0] > 0.5)];
        let rates = [IntensityPolicy::constant(4.0, 4.0), IntensityPolicy::bang_bang("x<0", 8.0, |_, x: &[f64]| x[0] < 0.0)];
        let t = evaluate_candidates(&m, &none, &stops, &rates, &settings(0.0, 50, 20_000)).unwrap();
        for c in t.stopped.iter().chain(&t.randomized) {
            assert!(c.estimate.mean.abs() < 3.0 * c.estimate.std_err, "{}: {:?}", c.label, c.estimate);
        }
    }

    #[test]
    fn blow_up_is_reported() {
        struct Explode;
        impl DiffusionModel<f64> for Explode {
            fn name(&self) -> &str {
                "explode"
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
            fn horizon(&self) -> f64 {
                1.0
            }
            fn diffusion(&self, _: &[f64], _: f64, _: &[f64], out: &mut [f64]) {
                out[0] = 0.0;
            }
            fn drift(&self, _: &[f64], _: f64, x: &[f64], out: &mut [f64]) {
                out[0] = x[0].powi(8);
            }
            fn discount_rate(&self, _: &[f64], _: f64, _: &[f64]) -> f64 {
                0.0
            }
            fn running_reward(&self, _: &[f64], _: f64, _: &[f64]) -> f64 {
                0.0
            }
            fn terminal_reward(&self, _: f64, x: &[f64]) -> f64 {
                x[0]
            }
            fn growth(&self, _: usize) -> GrowthConstants<f64> {
                GrowthConstants { k: 1.0, m: 1.0, k_n: 1.0, m_n: 1.0 }
            }
            fn in_control_set(&self, _: &[f64], _: usize) -> bool {
                true
            }
        }
        let err = simulate_paths(&Explode, &ControlPolicy::uncontrolled(), &settings(10.0, 10, 4)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("path 0") && msg.contains("non-finite"), "{msg}");
    }

    #[test]
    fn moment_guard_aborts() {
        let mut s = settings(3.0, 5, 10);
        s.moment_bound = Some(10.0);
        // (1 + 3)^2 = 16 > 10
        let err = simulate_paths(&affine(0.0, 0.0, 0.0, 1), &ControlPolicy::uncontrolled(), &s).unwrap_err();
        assert!(err.to_string().contains("moment guard"));
        s.moment_bound = Some(16.0);
        let b = simulate_paths(&affine(0.0, 0.0, 0.0, 1), &ControlPolicy::uncontrolled(), &s).unwrap();
        assert_eq!(b.moment_sup, 16.0);
    }

    #[test]
    fn control_outside_set_is_rejected() {
        let m = BuiltinModel::<f64>::from_name("controlled-drift-1d", &Default::default()).unwrap();
        let bad = ControlPolicy::constant("too big", 1, vec![1.0]);
        assert!(simulate_paths(&m, &bad, &settings(0.0, 4, 2)).is_err());
    }

    #[test]
    fn identical_across_worker_counts() {
        let m = BmQuadratic { sigma: 1.0, horizon: 1.0 };
        let model = BuiltinModel::BmQuadratic(m);
        let fam = model.default_families(&[1, 4]);
        let mut s = settings(0.0, 20, 3000);
        let mut runs = Vec::new();
        for w in [1, 2, 5] {
            s.workers = w;
            runs.push(value_search(&model, &fam, &[1, 4], &s).unwrap());
        }
        assert_eq!(runs[0], runs[1]);
        assert_eq!(runs[0], runs[2]);
    }

    #[test]
    fn singleton_search_reproduces_estimate() {
        let model = BmQuadratic { sigma: 1.0, horizon: 1.0 };
        let none = ControlPolicy::uncontrolled();
        let fam = Families {
            controls: vec![none.clone()],
            stops: vec![StopPolicy::at_horizon()],
            intensities: vec![IntensityPolicy::zero()],
        };
        let s = settings(0.0, 10, 1000);
        let rows = value_search(&model, &fam, &[1], &s).unwrap();
        let e = estimate_v_randomized(&model, &none, &IntensityPolicy::zero(), &s).unwrap();
        assert_eq!(rows[0].randomized, e);
        assert_eq!(rows[0].gap, 0.0);
    }

    #[test]
    fn nested_constant_families_are_monotone() {
        let model = BmQuadratic { sigma: 1.0, horizon: 1.0 };
        let caps = [1, 2, 3, 4, 5];
        let fam = Families {
            controls: vec![ControlPolicy::uncontrolled()],
            stops: vec![StopPolicy::at_horizon()],
            intensities: (0..=5).map(|n| IntensityPolicy::constant(n as f64, n as f64)).collect(),
        };
        let rows = value_search(&model, &fam, &caps, &settings(0.0, 10, 2000)).unwrap();
        assert!(rows.windows(2).all(|w| w[1].randomized.mean >= w[0].randomized.mean));
    }

    #[test]
    fn empty_family_is_an_error() {
        let model = BmQuadratic { sigma: 1.0, horizon: 1.0 };
        let fam = Families { controls: vec![ControlPolicy::uncontrolled()], stops: vec![], intensities: vec![] };
        assert!(value_search(&model, &fam, &[1], &settings(0.0, 4, 10)).is_err());
        let fam = Families {
            controls: vec![ControlPolicy::uncontrolled()],
            stops: vec![StopPolicy::at_horizon()],
            intensities: vec![IntensityPolicy::constant(8.0, 8.0)],
        };
        assert!(value_search(&model, &fam, &[1], &settings(0.0, 4, 10)).is_err());
    }
}
