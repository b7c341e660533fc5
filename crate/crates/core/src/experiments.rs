//! Rate-of-convergence sweeps: fit on `replications` fresh samples at each `n`, evaluate the
//! excess risk, average, and fit the slope of `log(mean excess)` against `log n`.

use std::fmt::Write as _;

use log::warn;
use rayon::prelude::*;

use crate::classifier::PartitionClassifier;
use crate::distributions::MixtureDistribution;
use crate::error::{invalid_param, Error, Result};
use crate::privatizer::{fit_private, NoiseMode, PrivacyParams};
use crate::risk::RiskEvaluator;
use crate::seeds::derive;
use crate::stats::{mean_and_std_err, t_critical_95, weighted_line_fit};

/// Seed streams inside one `(n, replication)` task.
const STREAM_SAMPLE: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_EVAL: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepMode {
    Observable,
    /// `alpha = +inf` runs the private pipeline without noise.
    Private { alpha: f64, noise: NoiseMode },
}

#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthRule {
    /// `h = c n^{-1/(2 + d_a)}`.
    RateOptimal,
    /// `h = c n^{-1/(2 + d)}` with the ambient dimension, for unknown `d_a`.
    RateOptimalAmbient,
    /// `h = c (n / sigma_Z^2)^{-1/(2 + 2 d_a)}`.
    RateOptimalPrivate,
    /// One `h` per entry of the `n` grid; the constant is ignored.
    Explicit(Vec<f64>),
}

impl BandwidthRule {
    /// Bandwidth for the `index`-th grid point of size `n`.
    pub fn bandwidth(&self, index: usize, n: usize, c: f64, dist: &MixtureDistribution, sigma_z: f64) -> Result<f64> {
        let nf = n as f64;
        let da = dist.intrinsic_dim() as f64;
        let h = match self {
            BandwidthRule::RateOptimal => c * nf.powf(-1.0 / (2.0 + da)),
            BandwidthRule::RateOptimalAmbient => c * nf.powf(-1.0 / (2.0 + dist.ambient_dim() as f64)),
            BandwidthRule::RateOptimalPrivate => {
                if !(sigma_z > 0.0) {
                    return Err(invalid_param(
                        "the private bandwidth rule needs a finite privacy budget; use the non-private rule or an explicit list",
                    ));
                }
                c * (nf / (sigma_z * sigma_z)).powf(-1.0 / (2.0 + 2.0 * da))
            }
            BandwidthRule::Explicit(hs) => hs[index],
        };
        if !(h > 0.0) || !h.is_finite() {
            return Err(invalid_param(format!("bandwidth rule produced h = {h} at n = {n}")));
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Exact,
    MonteCarlo(usize),
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub dist: MixtureDistribution,
    pub mode: SweepMode,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub bandwidth: BandwidthRule,
    pub bandwidth_constant: f64,
    pub eval: EvalMode,
    pub master_seed: u64,
}

impl SweepConfig {
    /// Observable sweep with the rate-optimal bandwidth, constant 1 and exact evaluation.
    pub fn new(dist: MixtureDistribution, n_grid: Vec<usize>, replications: usize, master_seed: u64) -> Self {
        SweepConfig {
            dist,
            mode: SweepMode::Observable,
            n_grid,
            replications,
            bandwidth: BandwidthRule::RateOptimal,
            bandwidth_constant: 1.0,
            eval: EvalMode::Exact,
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid.len() < 4 {
            return Err(invalid_param(format!("n_grid needs at least 4 points, got {}", self.n_grid.len())));
        }
        if self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid_param("n_grid must be positive and strictly increasing"));
        }
        if self.replications == 0 {
            return Err(invalid_param("replications must be at least 1"));
        }
        if !(self.bandwidth_constant > 0.0) || !self.bandwidth_constant.is_finite() {
            return Err(invalid_param(format!("bandwidth_constant must be positive, got {}", self.bandwidth_constant)));
        }
        if let BandwidthRule::Explicit(hs) = &self.bandwidth {
            if hs.len() != self.n_grid.len() {
                return Err(invalid_param(format!(
                    "explicit bandwidth list has {} entries for {} grid points",
                    hs.len(),
                    self.n_grid.len()
                )));
            }
        }
        if let EvalMode::MonteCarlo(0) = self.eval {
            return Err(invalid_param("Monte Carlo evaluation needs n_eval >= 1"));
        }
        self.privacy()?;
        for (i, &n) in self.n_grid.iter().enumerate() {
            self.bandwidth_at(i, n)?;
        }
        Ok(())
    }

    fn privacy(&self) -> Result<Option<PrivacyParams>> {
        match self.mode {
            SweepMode::Observable => Ok(None),
            SweepMode::Private { alpha, .. } => PrivacyParams::new(alpha).map(Some),
        }
    }

    pub fn bandwidth_at(&self, index: usize, n: usize) -> Result<f64> {
        let sigma_z = self.privacy()?.map_or(0.0, |p| p.sigma_z());
        self.bandwidth.bandwidth(index, n, self.bandwidth_constant, &self.dist, sigma_z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRow {
    pub n: usize,
    pub h: f64,
    pub mean_excess: f64,
    pub std_err: f64,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    pub fitted_slope: f64,
    pub slope_ci_halfwidth: f64,
}

impl RateTable {
    /// Table with the slope and CI filled in by [`fit_rate`], or NaN if the fit is impossible.
    pub fn from_rows(rows: Vec<RateRow>) -> Self {
        let mut t = RateTable { rows, fitted_slope: f64::NAN, slope_ci_halfwidth: f64::NAN };
        match fit_rate(&t) {
            Ok((s, ci)) => {
                t.fitted_slope = s;
                t.slope_ci_halfwidth = ci;
            }
            Err(e) => warn!("rate fit failed: {e}"),
        }
        t
    }

    /// Columns `n,h,mean_excess,std_err,replications`, then `# slope=` and `# ci=` footers.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,h,mean_excess,std_err,replications\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.n, r.h, r.mean_excess, r.std_err, r.replications);
        }
        let _ = writeln!(out, "# slope={}", self.fitted_slope);
        let _ = writeln!(out, "# ci={}", self.slope_ci_halfwidth);
        out
    }
}

/// Weighted least squares of `log(mean_excess)` on `log n`, weights `(mean / se)^2` from the
/// delta method (unit weights if any row has zero standard error). Returns the slope and the 95%
/// confidence half-width. Rows with nonpositive mean are dropped with a warning.
pub fn fit_rate(table: &RateTable) -> Result<(f64, f64)> {
    let rows: Vec<&RateRow> = table
        .rows
        .iter()
        .filter(|r| {
            let keep = r.mean_excess > 0.0 && r.mean_excess.is_finite();
            if !keep {
                warn!("dropping row n = {} with mean excess {} from the rate fit", r.n, r.mean_excess);
            }
            keep
        })
        .collect();
    if rows.len() < 4 {
        return Err(Error::DegenerateFit(format!("rate fit needs 4 rows with positive mean excess, got {}", rows.len())));
    }
    let x: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.mean_excess.ln()).collect();
    let w: Vec<f64> = if rows.iter().all(|r| r.std_err > 0.0) {
        rows.iter().map(|r| (r.mean_excess / r.std_err).powi(2)).collect()
    } else {
        vec![1.0; rows.len()]
    };
    let fit = weighted_line_fit(&x, &y, &w).ok_or_else(|| Error::DegenerateFit("rate fit is singular".into()))?;
    Ok((fit.slope, fit.slope_std_err * t_critical_95(rows.len() - 2)))
}

/// Train and evaluate one replication, returning the excess risk.
fn replicate(cfg: &SweepConfig, eval: &RiskEvaluator, index: usize, n: usize, rep: usize) -> Result<f64> {
    let seed = |stream: u64| derive(cfg.master_seed, &[n as u64, rep as u64, stream]);
    let h = cfg.bandwidth_at(index, n)?;
    let spec = cfg.dist.partition(h)?;
    let data = cfg.dist.sample(n, seed(STREAM_SAMPLE))?;
    let clf = match cfg.mode {
        SweepMode::Observable => PartitionClassifier::fit(&data, &spec)?,
        SweepMode::Private { alpha, noise } => {
            fit_private(&data, &spec, PrivacyParams::new(alpha)?, seed(STREAM_NOISE), noise)?
        }
    };
    let report = match cfg.eval {
        EvalMode::Exact => eval.exact(&clf)?,
        EvalMode::MonteCarlo(n_eval) => eval.monte_carlo(&clf, n_eval, seed(STREAM_EVAL))?,
    };
    Ok(report.excess)
}

/// Runs every `(n, replication)` task in parallel and reduces in `(n, rep)` order, so the table
/// depends only on the configuration. The first failing task (in that order) aborts the sweep;
/// the error carries the rows of all grid points completed before it.
pub fn run_sweep(cfg: &SweepConfig) -> Result<RateTable> {
    cfg.validate()?;
    let eval = RiskEvaluator::new(&cfg.dist)?;
    let tasks: Vec<(usize, usize)> =
        (0..cfg.n_grid.len()).flat_map(|i| (0..cfg.replications).map(move |r| (i, r))).collect();
    let results: Vec<Result<f64>> =
        tasks.par_iter().map(|&(i, rep)| replicate(cfg, &eval, i, cfg.n_grid[i], rep)).collect();

    let mut rows = Vec::with_capacity(cfg.n_grid.len());
    for (i, chunk) in results.chunks(cfg.replications).enumerate() {
        let n = cfg.n_grid[i];
        let mut values = Vec::with_capacity(cfg.replications);
        for (rep, r) in chunk.iter().enumerate() {
            match r {
                Ok(v) => values.push(*v),
                Err(e) => {
                    return Err(Error::SweepAborted {
                        n,
                        replication: rep,
                        partial: Box::new(RateTable { rows, fitted_slope: f64::NAN, slope_ci_halfwidth: f64::NAN }),
                        source: Box::new(e.clone()),
                    })
                }
            }
        }
        let est = mean_and_std_err(&values);
        rows.push(RateRow {
            n,
            h: cfg.bandwidth_at(i, n)?,
            mean_excess: est.value,
            std_err: est.std_err,
            replications: cfg.replications,
        });
    }
    Ok(RateTable::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::example1;

    fn synthetic(f: impl Fn(f64) -> f64) -> RateTable {
        let rows = (10..16)
            .map(|k| {
                let n = 1usize << k;
                RateRow { n, h: 0.1, mean_excess: f(n as f64), std_err: 0.0, replications: 1 }
            })
            .collect();
        RateTable { rows, fitted_slope: 0.0, slope_ci_halfwidth: 0.0 }
    }

    #[test]
    fn synthetic_slopes() {
        let (s, ci) = fit_rate(&synthetic(|n| 1.0 / n)).unwrap();
        assert!((s + 1.0).abs() < 1e-12 && ci.abs() < 1e-9);
        let (s, _) = fit_rate(&synthetic(|n| 3.0 * n.powf(-2.0 / 3.0))).unwrap();
        assert!((s + 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_rows_dropped() {
        let mut t = synthetic(|n| 1.0 / n);
        t.rows[0].mean_excess = 0.0;
        assert!(fit_rate(&t).is_ok());
        t.rows[1].mean_excess = -1.0;
        t.rows[2].mean_excess = 0.0;
        assert!(matches!(fit_rate(&t), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn config_validation() {
        let d = example1(1.0).unwrap();
        assert!(SweepConfig::new(d.clone(), vec![10, 20, 40], 1, 0).validate().is_err());
        assert!(SweepConfig::new(d.clone(), vec![10, 20, 20, 40], 1, 0).validate().is_err());
        assert!(SweepConfig::new(d.clone(), vec![10, 20, 40, 80], 0, 0).validate().is_err());
        let mut c = SweepConfig::new(d, vec![10, 20, 40, 80], 1, 0);
        assert!(c.validate().is_ok());
        c.mode = SweepMode::Private { alpha: f64::INFINITY, noise: NoiseMode::AggregateShortcut };
        c.bandwidth = BandwidthRule::RateOptimalPrivate;
        assert!(c.validate().is_err());
    }

    #[test]
    fn csv_shape_and_determinism() {
        let d = example1(1.0).unwrap();
        let cfg = SweepConfig::new(d, vec![64, 128, 256, 512], 3, 17);
        let a = run_sweep(&cfg).unwrap();
        let b = run_sweep(&cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let csv = a.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "n,h,mean_excess,std_err,replications");
        assert_eq!(lines.len(), 7);
        assert!(lines[5].starts_with("# slope=") && lines[6].starts_with("# ci="));
    }

    #[test]
    fn bandwidths() {
        let d = example1(1.0).unwrap();
        let h = BandwidthRule::RateOptimal.bandwidth(0, 1000, 1.0, &d, 0.0).unwrap();
        assert!((h - 0.1).abs() < 1e-12);
        let s = PrivacyParams::new(1.0).unwrap().sigma_z();
        let h = BandwidthRule::RateOptimalPrivate.bandwidth(0, 8 * 65536, 1.0, &d, s).unwrap();
        assert!((h - 1.0 / 16.0).abs() < 1e-12);
    }
}
