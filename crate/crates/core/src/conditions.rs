//! Margin and combined margin-and-density functionals, and power-law exponent fits.
//!
//! ```text
//! G*(t)    = mu{ 0 < gap(x) <= t }
//! G_h(t)   = int 1{ 0 < sqrt(f_h) gap <= t } f / sqrt(f_h) dlambda
//! G~_h(t)  = int 1{ 0 < f_h gap <= t } f / f_h dlambda
//! ```
//!
//! where `f_h` is the cell average `mu_a(A) / lambda(A)` of the continuous density and `gap` is
//! `|m|` for binary laws and `P_(1) - P_(2)` otherwise. For continuous parts of dimension at most
//! two everything is computed by quadrature over the cells; above that, by Monte Carlo.

use std::cell::RefCell;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::distributions::{pairwise_differences, top_two_gap, MixtureDistribution};
use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::partition::{CellUniverse, PartitionSpec};
use crate::quad::{integrate_region, QuadOptions, Region};
use crate::seeds::rng_from_seed;
use crate::stats::{weighted_line_fit, Estimate};

const QUAD_TOL: f64 = 1e-10;
const MC_DRAWS: usize = 1_000_000;
const MC_SEED: u64 = 0x434F_4E44;

/// Which cell-weighted functional to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Weighting {
    /// threshold `gap <= t`, weight `f`
    Plain,
    /// threshold `sqrt(F) gap <= t`, weight `f / sqrt(F)`
    SqrtDensity,
    /// threshold `F gap <= t`, weight `f / F`
    Density,
}

/// Cached cell averages of the continuous density for one side length `h`.
#[derive(Debug, Clone)]
pub struct ConditionProbe<'a> {
    dist: &'a MixtureDistribution,
    h: f64,
    grid: Option<PartitionSpec>,
    universe: Option<CellUniverse>,
    /// `f_h` per cell of `universe`, already including `weight_a`.
    fh: Vec<f64>,
}

impl<'a> ConditionProbe<'a> {
    pub fn new(dist: &'a MixtureDistribution, h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(invalid_param(format!("cell side h must be positive and finite, got {h}")));
        }
        let Some(dens) = dist.density() else {
            return Ok(ConditionProbe { dist, h, grid: None, universe: None, fh: Vec::new() });
        };
        let grid = PartitionSpec::new(h, dens.lower().to_vec(), dens.upper().to_vec())?;
        let universe = grid.universe()?;
        let da = dens.dim();
        let vol = h.powi(da as i32);
        let fh = if da <= 2 {
            let breaks: Vec<Vec<f64>> = (0..da).map(|a| dens.breaks(a)).collect();
            universe
                .iter()
                .map(|key| {
                    let Some((lo, hi)) = clipped_bounds(&grid, key.coords(), dens.lower(), dens.upper()) else {
                        return Ok(0.0);
                    };
                    let weight = |u: &[f64]| dist.f(u);
                    let region = Region { weight: &weight, boundary: &|_, _| {}, n_boundary: 0, keep: &|_| true };
                    let r = integrate_region(&region, &lo, &hi, &breaks, QuadOptions::new(QUAD_TOL * vol, 1e-10))?;
                    Ok(r.value / vol)
                })
                .collect::<Result<Vec<f64>>>()?
        } else {
            // histogram of draws: an unbiased estimate of every cell mass
            let mut counts = vec![0usize; universe.len()];
            let mut rng = rng_from_seed(MC_SEED);
            let mut u = vec![0.0; da];
            let mut key = vec![0i64; da];
            for _ in 0..MC_DRAWS {
                dens.sample(&mut rng, &mut u)?;
                grid.cell_key_into(&u, &mut key)?;
                if let Some(i) = universe.index_of(&key) {
                    counts[i] += 1;
                }
            }
            counts.iter().map(|&c| dist.weight_a() * c as f64 / MC_DRAWS as f64 / vol).collect()
        };
        Ok(ConditionProbe { dist, h, grid: Some(grid), universe: Some(universe), fh })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// `f_h` at subspace point `u` of the continuous component; zero outside its support.
    pub fn f_h(&self, u: &[f64]) -> Result<f64> {
        let (Some(grid), Some(universe)) = (&self.grid, &self.universe) else {
            return Ok(0.0);
        };
        let key = grid.cell_key(u)?;
        Ok(universe.index_of(key.coords()).map_or(0.0, |i| self.fh[i]))
    }

    /// `(cell lower corner, cell upper corner, f_h)` for each cell of the support grid.
    pub fn cell_averages(&self) -> Vec<(Vec<f64>, Vec<f64>, f64)> {
        let (Some(grid), Some(universe)) = (&self.grid, &self.universe) else {
            return Vec::new();
        };
        universe
            .iter()
            .zip(&self.fh)
            .map(|(k, &f)| {
                let (lo, hi) = grid.cell_bounds(k.coords());
                (lo, hi, f)
            })
            .collect()
    }

    /// `G*(t)`, including atoms whose gap lies in `(0, t]`.
    pub fn g_star(&self, t: f64) -> Result<Estimate> {
        check_t(t)?;
        let mut est = self.continuous(t, Weighting::Plain)?;
        est.value += self
            .dist
            .atoms()
            .iter()
            .filter(|a| {
                let g = top_two_gap(&a.posterior);
                g > 0.0 && g <= t
            })
            .map(|a| a.prob)
            .sum::<f64>();
        Ok(est)
    }

    pub fn g_h(&self, t: f64) -> Result<Estimate> {
        check_t(t)?;
        self.continuous(t, Weighting::SqrtDensity)
    }

    pub fn g_tilde_h(&self, t: f64) -> Result<Estimate> {
        check_t(t)?;
        self.continuous(t, Weighting::Density)
    }

    fn continuous(&self, t: f64, w: Weighting) -> Result<Estimate> {
        let (Some(dens), Some(grid), Some(universe)) = (self.dist.density(), &self.grid, &self.universe) else {
            return Ok(Estimate::exact(0.0));
        };
        if self.dist.weight_a() == 0.0 {
            return Ok(Estimate::exact(0.0));
        }
        if dens.dim() > 2 {
            return self.continuous_mc(t, w);
        }
        let da = dens.dim();
        let m = self.dist.num_classes();
        let breaks: Vec<Vec<f64>> = (0..da).map(|a| dens.breaks(a)).collect();
        let x = RefCell::new(vec![0.0; self.dist.ambient_dim()]);
        let p = RefCell::new(vec![0.0; m]);
        let gap_at = |u: &[f64]| {
            let mut x = x.borrow_mut();
            let mut p = p.borrow_mut();
            self.dist.embed(u, &mut x);
            self.dist.continuous_probs(&x, &mut p);
            top_two_gap(&p)
        };
        let mut total = 0.0;
        for (key, &fh) in universe.iter().zip(&self.fh) {
            if fh <= 0.0 {
                continue;
            }
            let Some((lo, hi)) = clipped_bounds(grid, key.coords(), dens.lower(), dens.upper()) else {
                continue;
            };
            let (tau, scale) = match w {
                Weighting::Plain => (t, 1.0),
                Weighting::SqrtDensity => (t / fh.sqrt(), 1.0 / fh.sqrt()),
                Weighting::Density => (t / fh, 1.0 / fh),
            };
            let weight = |u: &[f64]| self.dist.f(u) * scale;
            let keep = |u: &[f64]| {
                let g = gap_at(u);
                g > 0.0 && g <= tau
            };
            let boundary = |u: &[f64], out: &mut [f64]| {
                let mut x = x.borrow_mut();
                let mut p = p.borrow_mut();
                self.dist.embed(u, &mut x);
                self.dist.continuous_probs(&x, &mut p);
                out[0] = top_two_gap(&p) - tau;
                pairwise_differences(&p, &mut out[1..]);
            };
            let region = Region { weight: &weight, boundary: &boundary, n_boundary: 1 + m * (m - 1) / 2, keep: &keep };
            let vol: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
            let r = integrate_region(&region, &lo, &hi, &breaks, QuadOptions::new(QUAD_TOL * vol, 1e-10))?;
            total += r.value;
        }
        Ok(Estimate::exact(total))
    }

    fn continuous_mc(&self, t: f64, w: Weighting) -> Result<Estimate> {
        let dens = self.dist.density().expect("checked by caller");
        let mut rng = rng_from_seed(MC_SEED ^ 0x5A5A);
        let mut u = vec![0.0; dens.dim()];
        let mut x = vec![0.0; self.dist.ambient_dim()];
        let mut p = vec![0.0; self.dist.num_classes()];
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..MC_DRAWS {
            dens.sample(&mut rng, &mut u)?;
            self.dist.embed(&u, &mut x);
            self.dist.continuous_probs(&x, &mut p);
            let gap = top_two_gap(&p);
            let fh = self.f_h(&u)?;
            let v = match w {
                _ if fh <= 0.0 || gap <= 0.0 => 0.0,
                Weighting::Plain if gap <= t => 1.0,
                Weighting::SqrtDensity if fh.sqrt() * gap <= t => 1.0 / fh.sqrt(),
                Weighting::Density if fh * gap <= t => 1.0 / fh,
                _ => 0.0,
            } * self.dist.weight_a();
            s += v;
            s2 += v * v;
        }
        let n = MC_DRAWS as f64;
        let mean = s / n;
        let var = (s2 / n - mean * mean).max(0.0);
        Ok(Estimate { value: mean, std_err: (var / n).sqrt() })
    }

    /// Evaluates all three functionals over `t_grid` (in parallel) and fits their exponents.
    pub fn table(&self, t_grid: &[f64]) -> Result<ProbeTable> {
        check_grid(t_grid)?;
        let rows = t_grid
            .par_iter()
            .map(|&t| Ok([self.g_star(t)?.value, self.g_h(t)?.value, self.g_tilde_h(t)?.value]))
            .collect::<Result<Vec<[f64; 3]>>>()?;
        let column = |i: usize| rows.iter().map(|r| r[i]).collect::<Vec<f64>>();
        let (g_star, g_h, g_tilde_h) = (column(0), column(1), column(2));
        let fit = |v: &[f64]| fit_exponent(t_grid, v).ok();
        Ok(ProbeTable {
            gamma: fit(&g_star),
            gamma1: fit(&g_h),
            gamma2: fit(&g_tilde_h),
            t: t_grid.to_vec(),
            g_star,
            g_h,
            g_tilde_h,
        })
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(invalid_param(format!("threshold t must be positive and finite, got {t}")));
    }
    Ok(())
}

fn check_grid(t: &[f64]) -> Result<()> {
    if t.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(invalid_input("t grid must contain positive finite values"));
    }
    if t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid_input("t grid must be strictly increasing"));
    }
    Ok(())
}

fn clipped_bounds(grid: &PartitionSpec, key: &[i64], lower: &[f64], upper: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let (mut lo, mut hi) = grid.cell_bounds(key);
    for a in 0..lo.len() {
        lo[a] = lo[a].max(lower[a]);
        hi[a] = hi[a].min(upper[a]);
        if hi[a] <= lo[a] {
            return None;
        }
    }
    Some((lo, hi))
}

/// Fitted power law `G(t) ~ exp(intercept) t^exponent` near `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentEstimate {
    pub exponent: f64,
    /// Natural-log intercept; `exp(intercept)` estimates the constant of the condition.
    pub intercept: f64,
    pub t_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub r_squared: f64,
}

impl ExponentEstimate {
    pub fn constant(&self) -> f64 {
        self.intercept.exp()
    }
}

/// Least-squares slope of `log G` against `log t` over the smallest decade of `t` where `G` is
/// positive. If that decade holds fewer than four positive points, the four smallest positive
/// points are used.
pub fn fit_exponent(t_grid: &[f64], values: &[f64]) -> Result<ExponentEstimate> {
    if t_grid.len() != values.len() {
        return Err(invalid_input("t grid and values differ in length"));
    }
    check_grid(t_grid)?;
    let positive: Vec<(f64, f64)> = t_grid.iter().zip(values).filter(|(_, &v)| v > 0.0).map(|(&t, &v)| (t, v)).collect();
    if positive.len() < 4 {
        return Err(Error::DegenerateFit(format!(
            "need at least 4 positive values to fit an exponent, got {}",
            positive.len()
        )));
    }
    let t0 = positive[0].0;
    let mut window: Vec<(f64, f64)> = positive.iter().copied().filter(|&(t, _)| t <= 10.0 * t0 * (1.0 + 1e-12)).collect();
    if window.len() < 4 {
        window = positive[..4].to_vec();
    }
    let lx: Vec<f64> = window.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = window.iter().map(|p| p.1.ln()).collect();
    let fit = weighted_line_fit(&lx, &ly, &vec![1.0; lx.len()])
        .ok_or_else(|| Error::DegenerateFit("exponent fit is singular".into()))?;
    Ok(ExponentEstimate {
        exponent: fit.slope,
        intercept: fit.intercept,
        t_grid: t_grid.to_vec(),
        values: values.to_vec(),
        r_squared: fit.r_squared,
    })
}

/// `per_decade` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0) || !(hi > lo) || !hi.is_finite() || per_decade == 0 {
        return Err(invalid_param(format!("invalid log grid [{lo}, {hi}] with {per_decade} points per decade")));
    }
    let decades = (hi / lo).log10();
    let steps = (decades * per_decade as f64).round().max(1.0) as usize;
    Ok((0..=steps).map(|i| lo * (hi / lo).powf(i as f64 / steps as f64)).collect())
}

/// Functionals over a `t` grid together with their fitted exponents `gamma`, `gamma1`, `gamma2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTable {
    pub t: Vec<f64>,
    pub g_star: Vec<f64>,
    pub g_h: Vec<f64>,
    pub g_tilde_h: Vec<f64>,
    pub gamma: Option<ExponentEstimate>,
    pub gamma1: Option<ExponentEstimate>,
    pub gamma2: Option<ExponentEstimate>,
}

impl ProbeTable {
    /// Header `t,g_star,g_h,g_tilde_h`, one row per grid point, then `# gamma=`, `# gamma1=` and
    /// `# gamma2=` footer lines (`nan` when a fit was impossible).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,g_star,g_h,g_tilde_h\n");
        for i in 0..self.t.len() {
            let _ = writeln!(out, "{},{},{},{}", self.t[i], self.g_star[i], self.g_h[i], self.g_tilde_h[i]);
        }
        for (name, est) in [("gamma", &self.gamma), ("gamma1", &self.gamma1), ("gamma2", &self.gamma2)] {
            let v = est.as_ref().map_or(f64::NAN, |e| e.exponent);
            let _ = writeln!(out, "# {name}={v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{example1, example2, example3, Density, Posterior, Regression};

    fn uniform_half() -> MixtureDistribution {
        MixtureDistribution::builder(1, Posterior::Binary(Regression::Identity))
            .continuous(Density::uniform(vec![-1.0], vec![1.0]).unwrap(), 1.0, Vec::new())
            .build()
            .unwrap()
    }

    #[test]
    fn cell_averages() {
        let d = uniform_half();
        let p = ConditionProbe::new(&d, 0.25).unwrap();
        assert!((p.f_h(&[0.3]).unwrap() - 0.5).abs() < 1e-12);
        let d2 = example2(1.0).unwrap();
        let p2 = ConditionProbe::new(&d2, 0.5).unwrap();
        assert!((p2.f_h(&[0.25]).unwrap() - 0.25).abs() < 1e-10);
        assert_eq!(p2.f_h(&[3.0]).unwrap(), 0.0);
    }

    #[test]
    fn uniform_functionals_are_linear() {
        let d = uniform_half();
        let p = ConditionProbe::new(&d, 0.25).unwrap();
        for t in [1e-3, 1e-2, 0.1] {
            assert!((p.g_star(t).unwrap().value - t).abs() < 1e-10);
            // sqrt(1/2)|x| <= t  on mass density 1/2, weight 1/sqrt(1/2)
            assert!((p.g_h(t).unwrap().value - 2.0 * t).abs() < 1e-10);
            assert!((p.g_tilde_h(t).unwrap().value - 4.0 * t).abs() < 1e-10);
        }
    }

    #[test]
    fn spec_values() {
        let e1 = example1(1.0).unwrap();
        assert!((ConditionProbe::new(&e1, 0.1).unwrap().g_star(0.5).unwrap().value - 0.75).abs() < 1e-10);
        let e3 = example3().unwrap();
        assert!((ConditionProbe::new(&e3, 0.1).unwrap().g_star(0.25).unwrap().value - 0.25).abs() < 1e-10);
    }

    #[test]
    fn exponent_fits() {
        let t = log_grid(1e-3, 1e-1, 5).unwrap();
        let e = fit_exponent(&t, &t).unwrap();
        assert!((e.exponent - 1.0).abs() < 1e-12 && (e.r_squared - 1.0).abs() < 1e-12);
        let sq: Vec<f64> = t.iter().map(|v| 3.0 * v * v).collect();
        let e = fit_exponent(&t, &sq).unwrap();
        assert!((e.exponent - 2.0).abs() < 1e-12);
        assert!((e.constant() - 3.0).abs() < 1e-9);
        assert!(matches!(fit_exponent(&t, &vec![0.0; t.len()]), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn csv_layout() {
        let d = uniform_half();
        let p = ConditionProbe::new(&d, 0.25).unwrap();
        let tab = p.table(&log_grid(1e-3, 1e-2, 4).unwrap()).unwrap();
        let csv = tab.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,g_star,g_h,g_tilde_h");
        assert_eq!(lines.len(), 1 + 5 + 3);
        assert!(lines[6].starts_with("# gamma=") && lines[8].starts_with("# gamma2="));
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-4, 1e-1, 8).unwrap();
        assert_eq!(g.len(), 25);
        assert_eq!(g[0], 1e-4);
        assert!((g[24] - 1e-1).abs() < 1e-15);
    }
}
