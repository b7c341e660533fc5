use partldp_core::privatizer::{aggregate, laplace, privatize_record, record_seed, Mechanism};
use partldp_core::risk::RiskEvaluator;
use partldp_core::seeds::{derive, rng_from_seed};
use partldp_core::{
    example1, fit, fit_private, ldp_log_ratio, Dataset, LabelSet, NoiseMode, PartitionSpec, PrivacyParams,
};
use proptest::prelude::*;

fn spec() -> PartitionSpec {
    PartitionSpec::cube(0.25, 1, -1.0, 1.0).unwrap()
}

#[test]
fn calibration_constants() {
    for alpha in [0.1, 0.5, 1.0, 2.0, 10.0] {
        let p = PrivacyParams::new(alpha).unwrap();
        assert_eq!(p.sigma_z(), 2.0 * 2f64.sqrt() / alpha);
        assert!((p.noise_scale() - 2.0 / alpha).abs() < 1e-15);
    }
}

#[test]
fn noise_variance_is_sigma_squared() {
    let alpha = 1.0;
    let params = PrivacyParams::new(alpha).unwrap();
    let mech = Mechanism::new(spec(), LabelSet::Binary, params).unwrap();
    let n = 100_000;
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for i in 0..n {
        let z = mech.privatize(&[0.6], 1, derive(3, &[i])).unwrap();
        // coordinate 0 is the cell (-1.25, -1], never the signal cell here
        let e = z.values()[0];
        sum += e;
        sum2 += e * e;
    }
    let mean = sum / n as f64;
    let var = sum2 / n as f64 - mean * mean;
    let target = params.sigma_z().powi(2);
    assert!((var / target - 1.0).abs() < 0.03, "variance {var} vs {target}");
}

#[test]
fn laplace_inverse_cdf_moments() {
    let mut rng = rng_from_seed(5);
    let b = 0.7;
    let draws: Vec<f64> = (0..200_000).map(|_| laplace(&mut rng, b)).collect();
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let mad = draws.iter().map(|v| v.abs()).sum::<f64>() / n;
    assert!(mean.abs() < 4.0 * (2.0f64 * b * b / n).sqrt());
    // E|L| = b, Var|L| = b^2
    assert!((mad - b).abs() < 4.0 * b / n.sqrt());
}

#[test]
fn per_record_fit_equals_released_records() {
    let d = example1(1.0).unwrap();
    let data = d.sample(300, 9).unwrap();
    let params = PrivacyParams::new(0.8).unwrap();
    let mech = Mechanism::new(d.partition(0.2).unwrap(), LabelSet::Binary, params).unwrap();
    let records = data
        .iter()
        .enumerate()
        .map(|(i, (x, y))| privatize_record(x, y, mech.spec(), LabelSet::Binary, params, record_seed(41, i)).unwrap());
    let via_records = aggregate(records, mech.clone()).unwrap();
    let streamed = fit_private(&data, mech.spec(), params, 41, NoiseMode::PerRecord).unwrap();
    assert_eq!(via_records, streamed);
}

#[test]
fn zero_noise_reproduces_observable_fit() {
    let d = example1(1.0).unwrap();
    let data = d.sample(500, 10).unwrap();
    let spec = d.partition(0.1).unwrap();
    let plain = fit(&data, &spec).unwrap();
    for mode in [NoiseMode::PerRecord, NoiseMode::AggregateShortcut] {
        let private = fit_private(&data, &spec, PrivacyParams::noiseless(), 1, mode).unwrap();
        for key in spec.universe().unwrap().iter() {
            assert_eq!(private.predict_cell(key.coords()), plain.predict_cell(key.coords()));
            let expected = plain.cell_values(key.coords()).map_or(0.0, |v| v[0]);
            assert_eq!(private.cell_values(key.coords()).unwrap()[0], expected);
        }
    }
}

#[test]
fn two_classes_reduce_to_binary_without_noise() {
    let d = example1(1.0).unwrap();
    let data = d.sample(400, 12).unwrap();
    let mut two = Dataset::new(1, LabelSet::MultiClass(2));
    for (x, y) in data.iter() {
        two.push(x, if y == 1 { 1 } else { 2 }).unwrap();
    }
    let spec = d.partition(0.1).unwrap();
    let b = fit_private(&data, &spec, PrivacyParams::noiseless(), 2, NoiseMode::PerRecord).unwrap();
    let m = fit_private(&two, &spec, PrivacyParams::noiseless(), 2, NoiseMode::PerRecord).unwrap();
    for key in spec.universe().unwrap().iter() {
        let pb = b.predict_cell(key.coords());
        let pm = m.predict_cell(key.coords());
        assert_eq!(pb, if pm == 1 { 1 } else { -1 });
    }
}

/// Mean over repetitions of each aggregated cell value against the raw cell sum.
fn unbiased_check(mode: NoiseMode) {
    let d = example1(1.0).unwrap();
    let data = d.sample(60, 13).unwrap();
    let spec = d.partition(0.25).unwrap();
    let plain = fit(&data, &spec).unwrap();
    let params = PrivacyParams::new(1.0).unwrap();
    let reps = 200;
    let keys: Vec<_> = spec.universe().unwrap().iter().collect();
    let mut sums = vec![0.0; keys.len()];
    let mut sq = vec![0.0; keys.len()];
    for r in 0..reps {
        let clf = fit_private(&data, &spec, params, derive(99, &[r]), mode).unwrap();
        for (i, k) in keys.iter().enumerate() {
            let v = clf.cell_values(k.coords()).unwrap()[0];
            sums[i] += v;
            sq[i] += v * v;
        }
    }
    for (i, k) in keys.iter().enumerate() {
        let mean = sums[i] / reps as f64;
        let var = sq[i] / reps as f64 - mean * mean;
        let se = (var / reps as f64).sqrt();
        let truth = plain.cell_values(k.coords()).map_or(0.0, |v| v[0]);
        assert!((mean - truth).abs() < 4.0 * se, "{mode:?} cell {k}: {mean} vs {truth} (se {se})");
        // the sum of n Laplace(b) has variance 2 n b^2
        let target = 2.0 * 60.0 * params.noise_scale().powi(2);
        assert!((var / target - 1.0).abs() < 0.35, "{mode:?} cell {k}: variance {var} vs {target}");
    }
}

#[test]
fn aggregates_are_unbiased_per_record() {
    unbiased_check(NoiseMode::PerRecord);
}

#[test]
fn aggregates_are_unbiased_shortcut() {
    unbiased_check(NoiseMode::AggregateShortcut);
}

#[test]
fn private_smoke_and_budget_monotonicity() {
    let d = example1(1.0).unwrap();
    let ev = RiskEvaluator::new(&d).unwrap();
    let n: usize = 1 << 16;
    let p = PrivacyParams::new(1.0).unwrap();
    let h = (n as f64 / p.sigma_z().powi(2)).powf(-0.25);
    let data = d.sample(n, 14).unwrap();
    let clf = fit_private(&data, &d.partition(h).unwrap(), p, 15, NoiseMode::AggregateShortcut).unwrap();
    assert!(ev.exact(&clf).unwrap().excess < 0.15);

    let n = 4096;
    let spec = d.partition(0.1).unwrap();
    let mean_excess = |alpha: f64| {
        (0..50)
            .map(|r| {
                let data = d.sample(n, derive(16, &[r])).unwrap();
                let clf = fit_private(&data, &spec, PrivacyParams::new(alpha).unwrap(), derive(17, &[r]), NoiseMode::AggregateShortcut)
                    .unwrap();
                ev.exact(&clf).unwrap().excess
            })
            .sum::<f64>()
            / 50.0
    };
    assert!(mean_excess(0.1) > mean_excess(2.0));
}

proptest! {
    #[test]
    fn sensitivity_and_ratio_bound(xa in -1.0f64..=1.0, xb in -1.0f64..=1.0, ya in any::<bool>(), yb in any::<bool>(),
                                   classes in 2usize..5, ka in 0usize..5, kb in 0usize..5, seed in any::<u64>(),
                                   alpha in 0.05f64..5.0) {
        let params = PrivacyParams::new(alpha).unwrap();
        let bin = Mechanism::new(spec(), LabelSet::Binary, params).unwrap();
        let (ya, yb) = (if ya { 1 } else { -1 }, if yb { 1 } else { -1 });
        let sa = bin.signal_vector(&[xa], ya).unwrap();
        let sb = bin.signal_vector(&[xb], yb).unwrap();
        let l1: f64 = sa.iter().zip(&sb).map(|(a, b)| (a - b).abs()).sum();
        prop_assert!(l1 <= 2.0);
        if ya != yb {
            prop_assert_eq!(l1, 2.0);
        }
        let z = bin.privatize(&[xa], ya, seed).unwrap();
        let r = ldp_log_ratio((&[xa], ya), (&[xb], yb), &z, &bin).unwrap();
        prop_assert!(r.abs() <= alpha + 1e-9);

        let multi = Mechanism::new(spec(), LabelSet::MultiClass(classes), params).unwrap();
        let (ca, cb) = ((ka % classes) as i32 + 1, (kb % classes) as i32 + 1);
        let sa = multi.signal_vector(&[xa], ca).unwrap();
        let sb = multi.signal_vector(&[xb], cb).unwrap();
        let l1: f64 = sa.iter().zip(&sb).map(|(a, b)| (a - b).abs()).sum();
        prop_assert!(l1 <= 2.0);
        let z = multi.privatize(&[xa], ca, seed).unwrap();
        prop_assert!(multi.log_ratio((&[xa], ca), (&[xb], cb), &z).unwrap().abs() <= alpha + 1e-9);
        prop_assert_eq!(multi.log_ratio((&[xa], ca), (&[xa], ca), &z).unwrap(), 0.0);
    }
}
