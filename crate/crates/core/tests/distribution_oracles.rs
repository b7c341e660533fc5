use std::sync::Arc;

use partldp_core::distributions::{bayes_decision, ClassPosterior, MixtureDistribution};
use partldp_core::risk::RiskEvaluator;
use partldp_core::{example1, example2, example3, Density, Error, LabelSet, PartitionClassifier, Posterior, Regression};

/// Composite Simpson rule with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Kolmogorov-Smirnov distance between the empirical law of `|X|` and `cdf`.
fn ks_abs(dist: &MixtureDistribution, n: usize, seed: u64, cdf: impl Fn(f64) -> f64) -> f64 {
    let data = dist.sample(n, seed).unwrap();
    let mut v: Vec<f64> = data.iter().map(|(x, _)| x[0].abs()).collect();
    v.sort_by(f64::total_cmp);
    let nf = n as f64;
    v.iter()
        .enumerate()
        .map(|(i, &t)| {
            let c = cdf(t);
            (c - i as f64 / nf).abs().max(((i + 1) as f64 / nf - c).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn sampler_ks_against_analytic_cdfs() {
    let n = 100_000;
    // 1e-3 level critical value of the one-sample KS statistic
    let crit = 1.949 / (n as f64).sqrt();
    let d1 = ks_abs(&example1(1.0).unwrap(), n, 1, |t| 2.0 * t - t * t);
    let d1b = ks_abs(&example1(2.0).unwrap(), n, 2, |t| 2.0 * 0.75 * (t - t.powi(3) / 3.0));
    let d2 = ks_abs(&example2(-0.5).unwrap(), n, 3, |t| t.sqrt());
    let d2b = ks_abs(&example2(1.0).unwrap(), n, 4, |t| t * t);
    let d3 = ks_abs(&example3().unwrap(), n, 5, |t| t * t);
    for (name, d) in [("ex1", d1), ("ex1 delta=2", d1b), ("ex2 -0.5", d2), ("ex2 1", d2b), ("ex3", d3)] {
        assert!(d < crit, "{name}: KS {d} >= {crit}");
    }
}

#[test]
fn example2_heavy_quantile() {
    let data = example2(-0.5).unwrap().sample(100_000, 6).unwrap();
    let frac = data.iter().filter(|(x, _)| x[0].abs() <= 0.25).count() as f64 / 1e5;
    let se = (0.25f64 / 1e5).sqrt();
    assert!((frac - 0.5).abs() < 4.0 * se);
}

#[test]
fn label_law_in_bins() {
    for (dist, m) in [
        (example1(1.0).unwrap(), (|x: f64| x) as fn(f64) -> f64),
        (example3().unwrap(), |x: f64| x * x.abs()),
    ] {
        let data = dist.sample(100_000, 7).unwrap();
        let f = |x: f64| dist.f(&[x]);
        for b in 0..40 {
            let lo = -1.0 + b as f64 * 0.05;
            let hi = lo + 0.05;
            let ys: Vec<f64> = data.iter().filter(|(x, _)| x[0] > lo && x[0] <= hi).map(|(_, y)| y as f64).collect();
            if ys.len() < 100 {
                continue;
            }
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            let se = ((1.0 - mean * mean).max(1e-3) / ys.len() as f64).sqrt();
            let expected = simpson(|x| m(x) * f(x), lo, hi, 200) / simpson(f, lo, hi, 200);
            assert!((mean - expected).abs() < 4.0 * se, "{}: bin {lo}: {mean} vs {expected}", dist.name());
        }
    }
}

#[test]
fn labels_align_with_sign() {
    let data = example1(1.0).unwrap().sample(100_000, 8).unwrap();
    let pos: Vec<i32> = data.iter().filter(|(x, _)| x[0] > 0.0).map(|(_, y)| y).collect();
    let p_plus = pos.iter().filter(|&&y| y == 1).count() as f64 / pos.len() as f64;
    assert!(p_plus > 0.5 && p_plus < 1.0);
    let corr: f64 = data.iter().map(|(x, y)| y as f64 * x[0].signum()).sum::<f64>();
    assert!(corr > 0.0);
    assert!(example1(1.0).unwrap().sample(0, 1).unwrap().is_empty());
}

#[test]
fn densities_normalize_by_simpson() {
    for delta in [0.5, 1.0, 2.0, 3.5] {
        let d = example1(delta).unwrap();
        let mass = simpson(|x| d.f(&[x]), -1.0, 0.0, 20_000) + simpson(|x| d.f(&[x]), 0.0, 1.0, 20_000);
        assert!((mass - 1.0).abs() < 1e-6, "example1({delta}): {mass}");
    }
    for delta in [0.0, 1.0, 2.0] {
        let d = example2(delta).unwrap();
        let mass = simpson(|x| d.f(&[x]), -1.0, 0.0, 20_000) + simpson(|x| d.f(&[x]), 0.0, 1.0, 20_000);
        assert!((mass - 1.0).abs() < 1e-6, "example2({delta}): {mass}");
    }
    let d = example3().unwrap();
    assert!((simpson(|x| d.f(&[x]), -1.0, 0.0, 2000) + simpson(|x| d.f(&[x]), 0.0, 1.0, 2000) - 1.0).abs() < 1e-9);
    assert_eq!(example1(1.0).unwrap().f(&[0.0]), 1.0);
}

#[test]
fn bayes_risk_by_simpson() {
    // L* = 1/2 - 1/2 * int |m| f
    let cases: [(MixtureDistribution, fn(f64) -> f64); 3] = [
        (example1(1.0).unwrap(), |x| x.abs()),
        (example2(0.0).unwrap(), |x| x.abs()),
        (example3().unwrap(), |x| x * x),
    ];
    for (d, m) in cases {
        let oracle = 0.5 - 0.5 * (simpson(|x| m(x) * d.f(&[x]), -1.0, 0.0, 2000) + simpson(|x| m(x) * d.f(&[x]), 0.0, 1.0, 2000));
        assert!((d.bayes_risk().unwrap() - oracle).abs() < 1e-9, "{}", d.name());
    }
}

#[test]
fn bayes_decisions() {
    let d = example1(1.0).unwrap();
    assert_eq!(bayes_decision(&d, &[0.3]), 1);
    assert_eq!(bayes_decision(&d, &[0.0]), 1);
    assert_eq!(bayes_decision(&d, &[-0.3]), -1);
    let e3 = example3().unwrap();
    assert_eq!(e3.regression(&[0.5]), Some(0.25));
    assert_eq!(e3.regression(&[-0.5]), Some(-0.25));
    let three = MixtureDistribution::builder(
        1,
        Posterior::Classes(ClassPosterior::Custom { classes: 3, f: Arc::new(|_: &[f64], p: &mut [f64]| p.copy_from_slice(&[0.2, 0.5, 0.3])) }),
    )
    .continuous(Density::uniform(vec![0.0], vec![1.0]).unwrap(), 1.0, Vec::new())
    .build()
    .unwrap();
    assert_eq!(three.labels(), LabelSet::MultiClass(3));
    assert_eq!(bayes_decision(&three, &[0.4]), 2);
    assert!((three.bayes_risk().unwrap() - 0.5).abs() < 1e-10);
}

#[test]
fn bayes_risk_bounds_any_classifier() {
    let d = example3().unwrap();
    let ev = RiskEvaluator::new(&d).unwrap();
    let spec = d.partition(0.25).unwrap();
    for pattern in 0u32..8 {
        let cells = spec
            .universe()
            .unwrap()
            .iter()
            .enumerate()
            .map(|(i, k)| (k, vec![if (pattern >> (i % 3)) & 1 == 1 { 1.0 } else { -1.0 }]))
            .collect();
        let clf = PartitionClassifier::from_cells(spec.clone(), LabelSet::Binary, cells, None, 1, true).unwrap();
        let r = ev.monte_carlo(&clf, 1_000_000, pattern as u64).unwrap();
        assert!(ev.bayes_risk() <= r.error_prob + 4.0 * r.std_err);
    }
}

#[test]
fn atoms_and_mixtures() {
    let only_atom = MixtureDistribution::builder(1, Posterior::Binary(Regression::Identity))
        .atom(vec![0.4], 1.0, vec![1.0, 0.0])
        .build()
        .unwrap();
    let data = only_atom.sample(500, 3).unwrap();
    assert!(data.iter().all(|(x, y)| x == [0.4] && y == 1));
    assert_eq!(only_atom.bayes_risk().unwrap(), 0.0);

    let mixed = MixtureDistribution::builder(2, Posterior::Binary(Regression::Linear { weights: vec![1.0, 0.0], bias: 0.0 }))
        .continuous(Density::uniform(vec![-1.0], vec![1.0]).unwrap(), 0.7, vec![0.25])
        .atom(vec![0.5, 0.5], 0.2, vec![0.9, 0.1])
        .atom(vec![-0.5, 0.9], 0.1, vec![0.3, 0.7])
        .build()
        .unwrap();
    assert_eq!(mixed.intrinsic_dim(), 1);
    let data = mixed.sample(200_000, 4).unwrap();
    let at = |p: [f64; 2]| data.iter().filter(|(x, _)| *x == p).count() as f64 / 2e5;
    assert!((at([0.5, 0.5]) - 0.2).abs() < 4.0 * (0.16f64 / 2e5).sqrt());
    assert!((at([-0.5, 0.9]) - 0.1).abs() < 4.0 * (0.09f64 / 2e5).sqrt());
    assert!(data.iter().all(|(x, _)| *x == [0.5, 0.5] || *x == [-0.5, 0.9] || x[1] == 0.25));
    // continuous part: 0.7 * (1/2 - 1/2 * 1/2); atoms: 0.2 * 0.1 + 0.1 * 0.3
    let expected = 0.7 * 0.25 + 0.02 + 0.03;
    assert!((mixed.bayes_risk().unwrap() - expected).abs() < 1e-9);
    let mc = mixed.bayes_risk_mc(1_000_000, 5).unwrap();
    assert!((mc.value - expected).abs() < 4.0 * mc.std_err);
}

#[test]
fn invalid_mixtures() {
    let post = || Posterior::Binary(Regression::Identity);
    let bad_mass = MixtureDistribution::builder(1, post())
        .continuous(Density::uniform(vec![-1.0], vec![1.0]).unwrap(), 0.5, Vec::new())
        .atom(vec![0.0], 0.3, vec![0.5, 0.5])
        .build();
    assert!(matches!(bad_mass, Err(Error::InvalidParameter(_))));
    let bad_density = Density::custom(vec![0.0], vec![1.0], 3.0, Vec::new(), |u: &[f64]| 2.0 * u[0] + 0.5).unwrap();
    let r = MixtureDistribution::builder(1, post()).continuous(bad_density, 1.0, Vec::new()).build();
    assert!(matches!(r, Err(Error::InvalidParameter(_))));
    let bad_posterior = MixtureDistribution::builder(1, Posterior::Binary(Regression::Linear { weights: vec![2.0], bias: 0.0 }))
        .continuous(Density::uniform(vec![-1.0], vec![1.0]).unwrap(), 1.0, Vec::new())
        .build();
    assert!(bad_posterior.is_err());
    let good = Density::custom(vec![0.0], vec![1.0], 2.0, Vec::new(), |u: &[f64]| 2.0 * u[0]).unwrap();
    assert!(MixtureDistribution::builder(1, post()).continuous(good, 1.0, Vec::new()).build().is_ok());
}
