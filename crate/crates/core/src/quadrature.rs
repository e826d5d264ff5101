//! Adaptive Gauss–Kronrod (7/15) integration on finite intervals.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod<T: Scalar>(f: &mut impl FnMut(T) -> T, a: T, b: T) -> (T, T) {
    let half = (b - a) * T::lit(0.5);
    let mid = (a + b) * T::lit(0.5);
    let fc = f(mid);
    let mut k = fc * T::lit(WGK[7]);
    let mut g = fc * T::lit(WG[3]);
    for i in 0..7 {
        let dx = half * T::lit(XGK[i]);
        let s = f(mid - dx) + f(mid + dx);
        k += s * T::lit(WGK[i]);
        if i % 2 == 1 {
            g += s * T::lit(WG[i / 2]);
        }
    }
    (k * half, (k - g).abs() * half)
}

/// Upper limit on subintervals; past it the current estimate is returned.
const MAX_INTERVALS: usize = 2000;

/// Globally adaptive refinement: the subinterval with the largest error
/// estimate is bisected until the summed estimate meets the tolerance.
/// Unlike recursive bisection with a halved local tolerance, this cannot
/// blow up on intervals whose error is already at rounding level.
fn refine<T: Scalar>(f: &mut impl FnMut(T) -> T, a: T, b: T, rel_tol: T, abs_tol: T) -> T {
    let (v, e) = kronrod(f, a, b);
    let mut parts = vec![(a, b, v, e)];
    let mut total_err = e;
    loop {
        let value: T = parts.iter().map(|p| p.2).sum();
        let tol = abs_tol.max(rel_tol * value.abs());
        if total_err <= tol || parts.len() >= MAX_INTERVALS {
            return value;
        }
        let (k, &(lo, hi, _, err)) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).expect("finite error estimates"))
            .expect("at least one interval");
        let mid = (lo + hi) * T::lit(0.5);
        if mid <= lo || mid >= hi {
            return value;
        }
        let (l, le) = kronrod(f, lo, mid);
        let (r, re) = kronrod(f, mid, hi);
        parts[k] = (lo, mid, l, le);
        parts.push((mid, hi, r, re));
        total_err = total_err - err + le + re;
        // re-sum occasionally to keep the running error free of drift
        if parts.len() % 64 == 0 {
            total_err = parts.iter().map(|p| p.3).sum();
        }
    }
}

/// `∫_a^b f` to relative tolerance `rel_tol` (absolute floor `abs_tol`).
/// Non-finite integrand values are reported as errors.
pub fn integrate<T: Scalar>(
    mut f: impl FnMut(T) -> T,
    a: T,
    b: T,
    rel_tol: T,
    abs_tol: T,
) -> Result<T> {
    if a == b {
        return Ok(T::zero());
    }
    let mut bad = None;
    let mut guarded = |x: T| {
        let y = f(x);
        if !y.is_finite() {
            bad.get_or_insert(x);
            T::zero()
        } else {
            y
        }
    };
    let v = refine(&mut guarded, a, b, rel_tol, abs_tol);
    if let Some(x) = bad {
        return Err(Error::NonFinite(format!("integrand at t = {x}")));
    }
    Ok(v)
}

/// Integral over `[a, b]` split at the given interior breakpoints.
pub fn integrate_split<T: Scalar>(
    mut f: impl FnMut(T) -> T,
    a: T,
    b: T,
    breaks: &[T],
    rel_tol: T,
    abs_tol: T,
) -> Result<T> {
    let mut cuts: Vec<T> = breaks.iter().copied().filter(|&c| c > a && c < b).collect();
    cuts.sort_by(|x, y| x.partial_cmp(y).expect("finite breakpoints"));
    cuts.dedup();
    let mut total = T::zero();
    let mut lo = a;
    for hi in cuts.into_iter().chain(std::iter::once(b)) {
        total += integrate(&mut f, lo, hi, rel_tol, abs_tol)?;
        lo = hi;
    }
    Ok(total)
}
