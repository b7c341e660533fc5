//! Error probability and excess risk of partition classifiers.
//!
//! The exact path integrates `(P_max(x) - P_{D(x)}(x)) f(x)` cell by cell, which for binary
//! labels is `|m(x)| 1{D(x) != D*(x)}`. The classifier is constant on each cell; inside a cell
//! the integrand has kinks where two posteriors cross, and those points are located by scanning
//! and bisection before Gauss-Kronrod quadrature of each piece. Atoms contribute point masses.

use log::warn;

use crate::classifier::PartitionClassifier;
use crate::distributions::MixtureDistribution;
use crate::error::{invalid_input, Result};
use crate::partition::{axis_key, PartitionSpec};
use crate::quad::{integrate_region, QuadOptions, Region};
use crate::seeds::rng_from_seed;

/// Per-cell absolute and relative tolerance of the exact path.
const CELL_TOL: f64 = 1e-11;

/// Draws used when the exact path is unavailable (continuous part of dimension above two).
pub const FALLBACK_MC_DRAWS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskMethod {
    Quadrature,
    MonteCarlo,
}

impl RiskMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            RiskMethod::Quadrature => "quadrature",
            RiskMethod::MonteCarlo => "monte-carlo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskReport {
    /// `L(D) = P{D(X) != Y}`.
    pub error_prob: f64,
    /// `L(D) - L*`.
    pub excess: f64,
    pub method: RiskMethod,
    /// Zero for quadrature.
    pub std_err: f64,
    /// Fresh draws used; zero for quadrature.
    pub n_eval: usize,
    /// Some cell fell back to plain panel quadrature because boundary location failed.
    pub fallback: bool,
}

/// Evaluates classifiers against one distribution, caching its Bayes risk.
#[derive(Debug, Clone)]
pub struct RiskEvaluator<'a> {
    dist: &'a MixtureDistribution,
    bayes_risk: f64,
}

impl<'a> RiskEvaluator<'a> {
    pub fn new(dist: &'a MixtureDistribution) -> Result<Self> {
        Ok(RiskEvaluator { dist, bayes_risk: dist.bayes_risk()? })
    }

    pub fn bayes_risk(&self) -> f64 {
        self.bayes_risk
    }

    pub fn dist(&self) -> &MixtureDistribution {
        self.dist
    }

    fn check(&self, clf: &PartitionClassifier) -> Result<()> {
        if clf.spec().dim() != self.dist.ambient_dim() {
            return Err(invalid_input(format!(
                "classifier dimension {} does not match distribution dimension {}",
                clf.spec().dim(),
                self.dist.ambient_dim()
            )));
        }
        if clf.labels() != self.dist.labels() {
            return Err(invalid_input("classifier and distribution use different label sets"));
        }
        Ok(())
    }

    /// Excess risk by per-cell quadrature. Falls back to Monte Carlo with
    /// [`FALLBACK_MC_DRAWS`] draws when the continuous part has dimension above two.
    pub fn exact(&self, clf: &PartitionClassifier) -> Result<RiskReport> {
        self.check(clf)?;
        let dist = self.dist;
        if dist.intrinsic_dim() > 2 {
            return self.monte_carlo(clf, FALLBACK_MC_DRAWS, 0x5249_534B);
        }
        let m = dist.num_classes();
        let mut atoms = 0.0;
        for a in dist.atoms() {
            let pred = clf.labels().class_index(clf.predict(&a.point)).unwrap_or(0);
            let best = a.posterior.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            atoms += a.prob * (best - a.posterior[pred]);
        }
        let (cont, fallback) = match dist.density() {
            Some(dens) if dist.weight_a() > 0.0 => {
                let da = dens.dim();
                let grid = PartitionSpec::new(clf.spec().h(), dens.lower().to_vec(), dens.upper().to_vec())?;
                let offset_keys = dist
                    .offset()
                    .iter()
                    .map(|&v| axis_key(v, clf.spec().h()))
                    .collect::<Result<Vec<_>>>()?;
                let breaks: Vec<Vec<f64>> = (0..da).map(|a| dens.breaks(a)).collect();
                let mut key = vec![0i64; dist.ambient_dim()];
                let mut total = 0.0;
                let mut fallback = false;
                let x = std::cell::RefCell::new(vec![0.0; dist.ambient_dim()]);
                let p = std::cell::RefCell::new(vec![0.0; m]);
                for cell in grid.universe()?.iter() {
                    let (mut lo, mut hi) = grid.cell_bounds(cell.coords());
                    let mut empty = false;
                    for a in 0..da {
                        lo[a] = lo[a].max(dens.lower()[a]);
                        hi[a] = hi[a].min(dens.upper()[a]);
                        empty |= hi[a] <= lo[a];
                    }
                    if empty {
                        continue;
                    }
                    key[..da].copy_from_slice(cell.coords());
                    key[da..].copy_from_slice(&offset_keys);
                    let pred = clf.labels().class_index(clf.predict_cell(&key)).unwrap_or(0);
                    let weight = |u: &[f64]| {
                        let mut x = x.borrow_mut();
                        let mut p = p.borrow_mut();
                        dist.embed(u, &mut x);
                        dist.continuous_probs(&x, &mut p);
                        let best = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let gap = best - p[pred];
                        if gap > 0.0 {
                            gap * dist.f(u)
                        } else {
                            0.0
                        }
                    };
                    let boundary = |u: &[f64], out: &mut [f64]| {
                        let mut x = x.borrow_mut();
                        let mut p = p.borrow_mut();
                        dist.embed(u, &mut x);
                        dist.continuous_probs(&x, &mut p);
                        crate::distributions::pairwise_differences(&p, out);
                    };
                    let region = Region { weight: &weight, boundary: &boundary, n_boundary: m * (m - 1) / 2, keep: &|_| true };
                    let r = integrate_region(&region, &lo, &hi, &breaks, QuadOptions::new(CELL_TOL, CELL_TOL))?;
                    total += r.value;
                    fallback |= r.fallback;
                }
                (total, fallback)
            }
            _ => (0.0, false),
        };
        if fallback {
            warn!("boundary location failed in some cells; used panel quadrature there");
        }
        let excess = (cont + atoms).max(0.0);
        Ok(RiskReport {
            error_prob: self.bayes_risk + excess,
            excess,
            method: RiskMethod::Quadrature,
            std_err: 0.0,
            n_eval: 0,
            fallback,
        })
    }

    /// Misclassification frequency on `n_eval` fresh draws, minus `L*`.
    pub fn monte_carlo(&self, clf: &PartitionClassifier, n_eval: usize, seed: u64) -> Result<RiskReport> {
        self.check(clf)?;
        if n_eval == 0 {
            return Err(invalid_input("Monte Carlo evaluation needs at least one draw"));
        }
        let dist = self.dist;
        let mut rng = rng_from_seed(seed);
        let mut x = vec![0.0; dist.ambient_dim()];
        let mut u = vec![0.0; dist.intrinsic_dim()];
        let mut probs = vec![0.0; dist.num_classes()];
        let labels = clf.labels();
        let mut errors = 0usize;
        for _ in 0..n_eval {
            let class = dist.draw_one(&mut rng, &mut x, &mut u, &mut probs)?;
            if clf.predict(&x) != labels.label(class) {
                errors += 1;
            }
        }
        let p = errors as f64 / n_eval as f64;
        Ok(RiskReport {
            error_prob: p,
            excess: p - self.bayes_risk,
            method: RiskMethod::MonteCarlo,
            std_err: (p * (1.0 - p) / n_eval as f64).sqrt(),
            n_eval,
            fallback: false,
        })
    }
}

/// Excess risk of `clf` under `dist` by quadrature.
pub fn excess_risk_exact(clf: &PartitionClassifier, dist: &MixtureDistribution) -> Result<RiskReport> {
    RiskEvaluator::new(dist)?.exact(clf)
}

/// Excess risk of `clf` under `dist` estimated from `n_eval` fresh draws.
pub fn excess_risk_mc(clf: &PartitionClassifier, dist: &MixtureDistribution, n_eval: usize, seed: u64) -> Result<RiskReport> {
    RiskEvaluator::new(dist)?.monte_carlo(clf, n_eval, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{example1, example3, LabelSet};
    use crate::partition::CellKey;

    fn constant_classifier(h: f64, dist: &MixtureDistribution, value: f64) -> PartitionClassifier {
        let spec = dist.partition(h).unwrap();
        let cells = spec.universe().unwrap().iter().map(|k| (k, vec![value])).collect();
        PartitionClassifier::from_cells(spec, LabelSet::Binary, cells, None, 1, true).unwrap()
    }

    #[test]
    fn always_plus_one_on_example1() {
        let d = example1(1.0).unwrap();
        let r = excess_risk_exact(&constant_classifier(0.25, &d, 1.0), &d).unwrap();
        assert!((r.excess - 1.0 / 6.0).abs() < 1e-9, "{}", r.excess);
        assert!((r.error_prob - 0.5).abs() < 1e-9);
        assert_eq!(r.method, RiskMethod::Quadrature);
    }

    #[test]
    fn bayes_partition_has_zero_excess() {
        // 0 is a cell boundary, so sign rule per cell equals the Bayes rule
        let d = example1(1.0).unwrap();
        let spec = d.partition(0.25).unwrap();
        let cells = spec
            .universe()
            .unwrap()
            .iter()
            .map(|k| {
                let v = if k.coords()[0] >= 1 { 1.0 } else { -1.0 };
                (k, vec![v])
            })
            .collect();
        let clf = PartitionClassifier::from_cells(spec, LabelSet::Binary, cells, None, 1, true).unwrap();
        let r = excess_risk_exact(&clf, &d).unwrap();
        assert!(r.excess.abs() < 1e-12);
    }

    #[test]
    fn flipped_half_cell_on_example3() {
        let d = example3().unwrap();
        let spec = d.partition(0.5).unwrap();
        let cells = spec
            .universe()
            .unwrap()
            .iter()
            .map(|k| {
                let v = match k.coords()[0] {
                    1 => -1.0,
                    c if c >= 2 => 1.0,
                    _ => -1.0,
                };
                (k, vec![v])
            })
            .collect();
        let clf = PartitionClassifier::from_cells(spec, LabelSet::Binary, cells, None, 1, true).unwrap();
        let r = excess_risk_exact(&clf, &d).unwrap();
        assert!((r.excess - 1.0 / 64.0).abs() < 1e-10, "{}", r.excess);
    }

    #[test]
    fn monte_carlo_agrees() {
        let d = example1(1.0).unwrap();
        let clf = constant_classifier(0.5, &d, 1.0);
        let ev = RiskEvaluator::new(&d).unwrap();
        let exact = ev.exact(&clf).unwrap();
        let mc = ev.monte_carlo(&clf, 200_000, 3).unwrap();
        assert!((exact.excess - mc.excess).abs() <= 4.0 * mc.std_err);
    }

    #[test]
    fn scale_invariance() {
        let d = example3().unwrap();
        let data = d.sample(300, 4).unwrap();
        let clf = PartitionClassifier::fit(&data, &d.partition(0.1).unwrap()).unwrap();
        let ev = RiskEvaluator::new(&d).unwrap();
        let a = ev.exact(&clf).unwrap();
        let b = ev.exact(&clf.scaled(7.5)).unwrap();
        assert_eq!(a.excess, b.excess);
        assert_eq!(ev.monte_carlo(&clf, 1000, 1).unwrap(), ev.monte_carlo(&clf.scaled(0.01), 1000, 1).unwrap());
    }

    #[test]
    fn deterministic_labels_give_zero_mc_error() {
        let d = MixtureDistribution::builder(
            1,
            crate::distributions::Posterior::Binary(crate::distributions::Regression::Custom(std::sync::Arc::new(
                |x: &[f64]| if x[0] > 0.0 { 1.0 } else { -1.0 },
            ))),
        )
        .continuous(crate::distributions::Density::uniform(vec![-1.0], vec![1.0]).unwrap(), 1.0, Vec::new())
        .build()
        .unwrap();
        let spec = d.partition(0.5).unwrap();
        let cells = vec![
            (CellKey::new(vec![-1]), vec![-1.0]),
            (CellKey::new(vec![0]), vec![-1.0]),
            (CellKey::new(vec![1]), vec![1.0]),
            (CellKey::new(vec![2]), vec![1.0]),
        ];
        let clf = PartitionClassifier::from_cells(spec, LabelSet::Binary, cells, None, 1, true).unwrap();
        let r = excess_risk_mc(&clf, &d, 10_000, 9).unwrap();
        assert_eq!(r.error_prob, 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let d = example1(1.0).unwrap();
        let spec = PartitionSpec::cube(0.5, 2, -1.0, 1.0).unwrap();
        let clf = PartitionClassifier::from_cells(spec, LabelSet::Binary, Vec::new(), None, 0, true).unwrap();
        assert!(excess_risk_exact(&clf, &d).is_err());
    }
}
