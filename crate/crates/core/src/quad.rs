//! Adaptive Gauss-Kronrod (7/15) quadrature in one dimension, a nested two-dimensional variant,
//! and integration over regions whose boundaries are sign changes of given functions.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights at XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Number of scan points used to bracket boundary crossings inside an interval.
const SCAN_POINTS: usize = 32;
const BISECTION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl QuadOptions {
    pub fn new(abs_tol: f64, rel_tol: f64) -> Self {
        QuadOptions { abs_tol, rel_tol, max_intervals: 4000 }
    }

    fn target(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions::new(1e-10, 1e-10)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
}

/// One 15-point Kronrod panel with the QUADPACK error heuristic.
fn kronrod<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> QuadResult {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = fc * WGK[7];
    let mut res_g = fc * WG[3];
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = res_k * 0.5;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * half;
    res_abs *= half.abs();
    res_asc *= half.abs();
    let mut error = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (200.0 * error / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * res_abs);
    }
    if !value.is_finite() {
        error = f64::INFINITY;
    }
    QuadResult { value, error }
}

#[derive(Debug)]
struct Panel {
    a: f64,
    b: f64,
    res: QuadResult,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.res.error == other.res.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.res.error.total_cmp(&other.res.error)
    }
}

/// Integrates `f` over `[a, b]`, splitting first at the interior `breaks`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    opts: QuadOptions,
) -> Result<QuadResult> {
    if a == b {
        return Ok(QuadResult { value: 0.0, error: 0.0 });
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut points: Vec<f64> = breaks.iter().copied().filter(|&p| p > lo && p < hi).collect();
    points.push(lo);
    points.push(hi);
    points.sort_by(f64::total_cmp);
    points.dedup();

    let mut heap = BinaryHeap::new();
    let mut frozen = QuadResult { value: 0.0, error: 0.0 };
    let mut value = 0.0;
    let mut error = 0.0;
    for w in points.windows(2) {
        let res = kronrod(&mut f, w[0], w[1]);
        value += res.value;
        error += res.error;
        heap.push(Panel { a: w[0], b: w[1], res });
    }
    let mut intervals = heap.len();
    while error > opts.target(value) {
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        if intervals >= opts.max_intervals {
            heap.push(worst);
            break;
        }
        if !(mid > worst.a && mid < worst.b) {
            // too narrow to split; keep its contribution as is
            frozen.value += worst.res.value;
            frozen.error += worst.res.error;
            continue;
        }
        let left = kronrod(&mut f, worst.a, mid);
        let right = kronrod(&mut f, mid, worst.b);
        value += left.value + right.value - worst.res.value;
        error += left.error + right.error - worst.res.error;
        heap.push(Panel { a: worst.a, b: mid, res: left });
        heap.push(Panel { a: mid, b: worst.b, res: right });
        intervals += 1;
    }
    // recompute sums from scratch to shed accumulated cancellation
    let mut value_sum = frozen.value;
    let mut error_sum = frozen.error;
    for p in heap.iter() {
        value_sum += p.res.value;
        error_sum += p.res.error;
    }
    if !value_sum.is_finite() || error_sum > opts.target(value_sum) {
        return Err(Error::Quadrature { achieved: error_sum, requested: opts.target(value_sum) });
    }
    Ok(QuadResult { value: sign * value_sum, error: error_sum })
}

/// Integrates `f(x, y)` over a rectangle by nesting the one-dimensional rule.
pub fn integrate_2d<F: Fn(f64, f64) -> f64>(
    f: F,
    x: (f64, f64),
    y: (f64, f64),
    breaks_x: &[f64],
    breaks_y: &[f64],
    opts: QuadOptions,
) -> Result<QuadResult> {
    let inner_err = RefCell::new(None);
    let inner_opts = QuadOptions { abs_tol: opts.abs_tol * 0.1 / (y.1 - y.0).abs().max(1.0), ..opts };
    let mut inner_error_total = 0.0f64;
    let outer = integrate(
        |yy| match integrate(|xx| f(xx, yy), x.0, x.1, breaks_x, inner_opts) {
            Ok(r) => {
                inner_error_total = inner_error_total.max(r.error);
                r.value
            }
            Err(e) => {
                inner_err.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        },
        y.0,
        y.1,
        breaks_y,
        opts,
    );
    if let Some(e) = inner_err.into_inner() {
        return Err(e);
    }
    let mut res = outer?;
    res.error += inner_error_total * (y.1 - y.0).abs();
    Ok(res)
}

/// A region `{u : keep(u)}` whose boundary consists of sign changes of the components of
/// `boundary(u)`, together with a weight to integrate over it.
pub struct Region<'a> {
    pub weight: &'a dyn Fn(&[f64]) -> f64,
    pub boundary: &'a dyn Fn(&[f64], &mut [f64]),
    pub n_boundary: usize,
    pub keep: &'a dyn Fn(&[f64]) -> bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionIntegral {
    pub value: f64,
    pub error: f64,
    /// Set when boundary location failed and plain panel quadrature was used instead.
    pub fallback: bool,
}

/// Roots of sign changes of any boundary component along `[a, b]`, bracketed on a uniform scan
/// and refined by bisection. Returns `None` if the boundary produced non-finite values.
fn boundary_points(
    a: f64,
    b: f64,
    eval: &mut dyn FnMut(f64, &mut [f64]),
    n: usize,
) -> Option<Vec<f64>> {
    let mut pts = Vec::new();
    if n == 0 {
        return Some(pts);
    }
    let mut prev = vec![0.0; n];
    let mut cur = vec![0.0; n];
    let mut probe = vec![0.0; n];
    eval(a, &mut prev);
    if prev.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut x_prev = a;
    for i in 1..=SCAN_POINTS {
        let x = if i == SCAN_POINTS { b } else { a + (b - a) * i as f64 / SCAN_POINTS as f64 };
        eval(x, &mut cur);
        if cur.iter().any(|v| !v.is_finite()) {
            return None;
        }
        for k in 0..n {
            if cur[k] == 0.0 && i < SCAN_POINTS {
                pts.push(x);
            } else if prev[k] * cur[k] < 0.0 {
                let (mut lo, mut hi) = (x_prev, x);
                let lo_sign = prev[k].signum();
                let mut iters = 0;
                while hi - lo > BISECTION_TOL && iters < 200 {
                    let mid = 0.5 * (lo + hi);
                    eval(mid, &mut probe);
                    if !probe[k].is_finite() {
                        return None;
                    }
                    if probe[k] == 0.0 {
                        lo = mid;
                        hi = mid;
                        break;
                    }
                    if probe[k].signum() == lo_sign {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    iters += 1;
                }
                pts.push(0.5 * (lo + hi));
            }
        }
        std::mem::swap(&mut prev, &mut cur);
        x_prev = x;
    }
    Some(pts)
}

fn region_1d(
    region: &Region<'_>,
    fixed: &mut [f64],
    axis: usize,
    a: f64,
    b: f64,
    breaks: &[f64],
    opts: QuadOptions,
) -> Result<RegionIntegral> {
    let found = {
        let mut u = fixed.to_vec();
        let mut eval = |x: f64, out: &mut [f64]| {
            u[axis] = x;
            (region.boundary)(&u, out);
        };
        boundary_points(a, b, &mut eval, region.n_boundary)
    };
    let Some(mut cuts) = found else {
        // 64 equal panels of the discontinuous integrand
        let mut u = fixed.to_vec();
        let mut g = |x: f64| {
            u[axis] = x;
            if (region.keep)(&u) {
                (region.weight)(&u)
            } else {
                0.0
            }
        };
        let panels: Vec<f64> = (1..64).map(|i| a + (b - a) * i as f64 / 64.0).collect();
        let res = integrate(&mut g, a, b, &panels, opts)?;
        return Ok(RegionIntegral { value: res.value, error: res.error, fallback: true });
    };
    cuts.extend(breaks.iter().copied().filter(|&p| p > a && p < b));
    cuts.push(a);
    cuts.push(b);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut value = 0.0;
    let mut error = 0.0;
    let mut u = fixed.to_vec();
    for w in cuts.windows(2) {
        let (p, q) = (w[0], w[1]);
        if q <= p {
            continue;
        }
        u[axis] = 0.5 * (p + q);
        if !(region.keep)(&u) {
            continue;
        }
        let res = integrate(
            |x| {
                u[axis] = x;
                (region.weight)(&u)
            },
            p,
            q,
            &[],
            opts,
        )?;
        value += res.value;
        error += res.error;
    }
    Ok(RegionIntegral { value, error, fallback: false })
}

/// Integrates `region.weight` over `region ∩ [lo, hi]` in one or two dimensions.
///
/// `breaks[axis]` lists known kinks or singularities of the weight along each axis.
pub fn integrate_region(
    region: &Region<'_>,
    lo: &[f64],
    hi: &[f64],
    breaks: &[Vec<f64>],
    opts: QuadOptions,
) -> Result<RegionIntegral> {
    let no_breaks: Vec<f64> = Vec::new();
    let axis_breaks = |axis: usize| breaks.get(axis).unwrap_or(&no_breaks);
    match lo.len() {
        1 => region_1d(region, &mut [lo[0]], 0, lo[0], hi[0], axis_breaks(0), opts),
        2 => {
            let failure = RefCell::new(None);
            let mut fallback = false;
            let mut inner_error = 0.0f64;
            let inner_opts = QuadOptions { abs_tol: opts.abs_tol * 0.1, ..opts };
            let outer = integrate(
                |y| {
                    let mut fixed = [lo[0], y];
                    match region_1d(region, &mut fixed, 0, lo[0], hi[0], axis_breaks(0), inner_opts) {
                        Ok(r) => {
                            fallback |= r.fallback;
                            inner_error = inner_error.max(r.error);
                            r.value
                        }
                        Err(e) => {
                            failure.borrow_mut().get_or_insert(e);
                            f64::NAN
                        }
                    }
                },
                lo[1],
                hi[1],
                axis_breaks(1),
                opts,
            );
            if let Some(e) = failure.into_inner() {
                return Err(e);
            }
            let res = outer?;
            Ok(RegionIntegral {
                value: res.value,
                error: res.error + inner_error * (hi[1] - lo[1]),
                fallback,
            })
        }
        d => Err(Error::InvalidParameter(format!(
            "region quadrature supports one or two dimensions, got {d}"
        ))),
    }
}
