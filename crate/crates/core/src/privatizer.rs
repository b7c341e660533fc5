//! Non-interactive local differential privacy by Laplace perturbation.
//!
//! Every data holder releases one noisy value per cell of the (public, finite) cell universe and,
//! in the multi-class case, per class:
//!
//! ```text
//! Z[j]    = Y 1{X in A_j} + sigma_Z eps[j]              (binary)
//! Z[j, k] = 1{Y = k} 1{X in A_j} + sigma_Z eps[j, k]   (multi-class)
//! ```
//!
//! with `eps` i.i.d. centered Laplace of unit variance and `sigma_Z = 2 sqrt(2) / alpha`. Unit
//! variance means Laplace scale `1/sqrt(2)`, so each released coordinate carries Laplace noise of
//! scale `b = sigma_Z / sqrt(2) = 2 / alpha`. Two raw records yield signal vectors at L1 distance
//! at most 2, which bounds the log density ratio of any output by `2 / b = alpha`.

use rand::distr::Open01;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::classifier::PartitionClassifier;
use crate::distributions::{Dataset, Label, LabelSet};
use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::partition::{CellUniverse, PartitionSpec};
use crate::seeds::{derive, rng_from_seed};
use crate::stats::KahanSum;

/// Privacy budget and the noise calibration it implies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyParams {
    alpha: f64,
    sigma_z: f64,
    noise_scale: f64,
}

impl PrivacyParams {
    /// `alpha = +inf` is accepted and yields the noiseless mechanism.
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || alpha.is_nan() {
            return Err(invalid_param(format!("privacy budget alpha must be positive, got {alpha}")));
        }
        if alpha.is_infinite() {
            return Ok(Self::noiseless());
        }
        let sigma_z = 2.0 * std::f64::consts::SQRT_2 / alpha;
        Ok(PrivacyParams { alpha, sigma_z, noise_scale: 2.0 / alpha })
    }

    /// The `alpha -> inf` limit: reports equal the raw indicators.
    pub fn noiseless() -> Self {
        PrivacyParams { alpha: f64::INFINITY, sigma_z: 0.0, noise_scale: 0.0 }
    }

    /// Test hook: multiplies the noise by `factor` while keeping the nominal budget.
    /// Any `factor < 1` breaks the privacy guarantee.
    pub fn with_scale_factor(self, factor: f64) -> Self {
        PrivacyParams { sigma_z: self.sigma_z * factor, noise_scale: self.noise_scale * factor, ..self }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sigma_z(&self) -> f64 {
        self.sigma_z
    }

    /// Laplace scale `b` of the noise on each released coordinate.
    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn is_noiseless(&self) -> bool {
        self.noise_scale == 0.0
    }
}

/// Centered Laplace draw of scale `b` by inversion of one uniform on `(0, 1)`.
#[inline]
pub fn laplace<R: Rng + ?Sized>(rng: &mut R, b: f64) -> f64 {
    let u: f64 = rng.sample(Open01);
    let c = u - 0.5;
    if c == 0.0 {
        return 0.0;
    }
    -b * c.signum() * (1.0 - 2.0 * c.abs()).ln()
}

/// How noise is generated when fitting from raw data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    /// Every record draws its own noise vector, exactly as the holders would.
    PerRecord,
    /// Each cell receives the sum of `n` Laplace variables in one draw, as the difference of two
    /// `Gamma(n, b)` variables. Same distribution as `PerRecord`, O(cells) cost.
    #[default]
    AggregateShortcut,
}

/// One holder's released vector, `|universe| * width` values in universe enumeration order,
/// class index fastest. `width` is 1 for binary problems and `M` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivatizedRecord {
    universe_fingerprint: u64,
    width: usize,
    z: Vec<f64>,
}

impl PrivatizedRecord {
    pub fn values(&self) -> &[f64] {
        &self.z
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Wire format: the values as consecutive little-endian `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.z.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// Decodes a record released over `mechanism`'s universe.
    pub fn from_bytes(bytes: &[u8], mechanism: &Mechanism) -> Result<Self> {
        let expected = mechanism.record_len() * 8;
        if bytes.len() != expected {
            return Err(invalid_input(format!("record has {} bytes, expected {expected}", bytes.len())));
        }
        let z = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
        Ok(PrivatizedRecord {
            universe_fingerprint: mechanism.universe.fingerprint(),
            width: mechanism.width(),
            z,
        })
    }
}

/// Public parameters shared by holders and statistician: partition, its finite universe over the
/// bounding box, the label set and the noise calibration.
#[derive(Debug, Clone)]
pub struct Mechanism {
    spec: PartitionSpec,
    universe: CellUniverse,
    labels: LabelSet,
    params: PrivacyParams,
}

impl Mechanism {
    pub fn new(spec: PartitionSpec, labels: LabelSet, params: PrivacyParams) -> Result<Self> {
        let universe = spec.universe()?;
        Ok(Mechanism { spec, universe, labels, params })
    }

    pub fn spec(&self) -> &PartitionSpec {
        &self.spec
    }

    pub fn universe(&self) -> &CellUniverse {
        &self.universe
    }

    pub fn labels(&self) -> LabelSet {
        self.labels
    }

    pub fn params(&self) -> &PrivacyParams {
        &self.params
    }

    pub fn width(&self) -> usize {
        self.labels.values_per_cell()
    }

    pub fn record_len(&self) -> usize {
        self.universe.len() * self.width()
    }

    /// Position and value of the single nonzero signal coordinate of a raw record.
    pub fn signal(&self, x: &[f64], y: Label) -> Result<(usize, f64)> {
        let key = self.spec.cell_key(x)?;
        let cell = self
            .universe
            .index_of(key.coords())
            .ok_or_else(|| invalid_input(format!("point {x:?} lies outside the cell universe")))?;
        let class = self
            .labels
            .class_index(y)
            .ok_or_else(|| invalid_input(format!("label {y} is not in {:?}", self.labels)))?;
        Ok(match self.labels {
            LabelSet::Binary => (cell, y as f64),
            LabelSet::MultiClass(_) => (cell * self.width() + class, 1.0),
        })
    }

    /// Noise-free signal vector of a raw record.
    pub fn signal_vector(&self, x: &[f64], y: Label) -> Result<Vec<f64>> {
        let (pos, v) = self.signal(x, y)?;
        let mut s = vec![0.0; self.record_len()];
        s[pos] = v;
        Ok(s)
    }

    /// The holder-side release for one raw record.
    pub fn privatize(&self, x: &[f64], y: Label, seed: u64) -> Result<PrivatizedRecord> {
        let (pos, v) = self.signal(x, y)?;
        let b = self.params.noise_scale;
        let mut rng = rng_from_seed(seed);
        let mut z = vec![0.0; self.record_len()];
        if b > 0.0 {
            for zi in z.iter_mut() {
                *zi = laplace(&mut rng, b);
            }
        }
        z[pos] += v;
        Ok(PrivatizedRecord { universe_fingerprint: self.universe.fingerprint(), width: self.width(), z })
    }

    /// Log of the mechanism's density of `z` under record `a` minus under record `b`:
    /// `(1/b) * sum_j (|z_j - s_b,j| - |z_j - s_a,j|)`.
    pub fn log_ratio(&self, a: (&[f64], Label), b: (&[f64], Label), z: &PrivatizedRecord) -> Result<f64> {
        self.check_record(z)?;
        let scale = self.params.noise_scale;
        if scale == 0.0 {
            return Err(invalid_param("the noiseless mechanism has no density"));
        }
        let (pa, va) = self.signal(a.0, a.1)?;
        let (pb, vb) = self.signal(b.0, b.1)?;
        let mut acc = 0.0;
        for (j, &zj) in z.z.iter().enumerate() {
            let sa = if j == pa { va } else { 0.0 };
            let sb = if j == pb { vb } else { 0.0 };
            acc += (zj - sb).abs() - (zj - sa).abs();
        }
        Ok(acc / scale)
    }

    fn check_record(&self, z: &PrivatizedRecord) -> Result<()> {
        if z.universe_fingerprint != self.universe.fingerprint() || z.z.len() != self.record_len() {
            return Err(invalid_input("record was released over a different cell universe"));
        }
        Ok(())
    }
}

/// Statistician-side running per-coordinate sums of released records.
#[derive(Debug, Clone)]
pub struct Aggregator {
    mechanism: Mechanism,
    sums: Vec<KahanSum>,
    n: usize,
}

impl Aggregator {
    pub fn new(mechanism: Mechanism) -> Self {
        let len = mechanism.record_len();
        Aggregator { mechanism, sums: vec![KahanSum::new(); len], n: 0 }
    }

    pub fn add(&mut self, record: &PrivatizedRecord) -> Result<()> {
        self.mechanism.check_record(record)?;
        for (s, &z) in self.sums.iter_mut().zip(&record.z) {
            s.add(z);
        }
        self.n += 1;
        Ok(())
    }

    /// Combines partial sums from another aggregator over the same universe.
    pub fn merge(&mut self, other: &Aggregator) -> Result<()> {
        if other.mechanism.universe != self.mechanism.universe || other.mechanism.labels != self.mechanism.labels {
            return Err(invalid_input("cannot merge aggregates over different universes"));
        }
        for (s, o) in self.sums.iter_mut().zip(&other.sums) {
            s.merge(o);
        }
        self.n += other.n;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Dense private classifier over the whole universe.
    pub fn finish(self) -> Result<PartitionClassifier> {
        let values: Vec<f64> = self.sums.iter().map(KahanSum::value).collect();
        dense_classifier(&self.mechanism, values, self.n)
    }
}

fn dense_classifier(mech: &Mechanism, values: Vec<f64>, n: usize) -> Result<PartitionClassifier> {
    let w = mech.width();
    let cells = mech.universe.iter().zip(values.chunks_exact(w)).map(|(k, v)| (k, v.to_vec())).collect();
    PartitionClassifier::from_cells(mech.spec.clone(), mech.labels, cells, None, n, true)
}

/// Holder-side release of one sample over the universe of `spec`.
pub fn privatize_record(
    x: &[f64],
    y: Label,
    spec: &PartitionSpec,
    labels: LabelSet,
    params: PrivacyParams,
    seed: u64,
) -> Result<PrivatizedRecord> {
    Mechanism::new(spec.clone(), labels, params)?.privatize(x, y, seed)
}

/// Aggregates released records into the private classifier `sign(nu~)` / `argmax_k nu~_k`.
pub fn aggregate<I>(records: I, mechanism: Mechanism) -> Result<PartitionClassifier>
where
    I: IntoIterator<Item = PrivatizedRecord>,
{
    let mut agg = Aggregator::new(mechanism);
    for r in records {
        agg.add(&r)?;
    }
    agg.finish()
}

/// Seed of the `i`-th holder's noise stream.
pub fn record_seed(master: u64, i: usize) -> u64 {
    derive(master, &[i as u64])
}

const SHORTCUT_STREAM: u64 = u64::MAX;

/// Privatizes every sample and aggregates, without retaining the released vectors.
///
/// In [`NoiseMode::PerRecord`] the result equals aggregating
/// `privatize(x_i, y_i, record_seed(seed, i))` over all `i`.
pub fn fit_private(
    data: &Dataset,
    spec: &PartitionSpec,
    params: PrivacyParams,
    seed: u64,
    mode: NoiseMode,
) -> Result<PartitionClassifier> {
    if data.is_empty() {
        return Err(invalid_input("cannot fit a classifier on an empty dataset"));
    }
    let mech = Mechanism::new(spec.clone(), data.labels(), params)?;
    let len = mech.record_len();
    let b = params.noise_scale;
    match mode {
        NoiseMode::PerRecord => {
            let mut sums = vec![KahanSum::new(); len];
            for (i, (x, y)) in data.iter().enumerate() {
                let (pos, v) = mech.signal(x, y)?;
                if b > 0.0 {
                    let mut rng = rng_from_seed(record_seed(seed, i));
                    for (j, s) in sums.iter_mut().enumerate() {
                        let noise = laplace(&mut rng, b);
                        s.add(if j == pos { noise + v } else { noise });
                    }
                } else {
                    sums[pos].add(v);
                }
            }
            let values = sums.iter().map(KahanSum::value).collect();
            dense_classifier(&mech, values, data.len())
        }
        NoiseMode::AggregateShortcut => {
            let mut values = vec![0.0; len];
            for (x, y) in data.iter() {
                let (pos, v) = mech.signal(x, y)?;
                values[pos] += v;
            }
            if b > 0.0 {
                let gamma = Gamma::new(data.len() as f64, b).map_err(|e| Error::Sampling(e.to_string()))?;
                let mut rng = rng_from_seed(derive(seed, &[SHORTCUT_STREAM]));
                for v in values.iter_mut() {
                    *v += gamma.sample(&mut rng) - gamma.sample(&mut rng);
                }
            }
            dense_classifier(&mech, values, data.len())
        }
    }
}

/// Log-likelihood ratio of output `z` under record `a` versus record `b`.
pub fn ldp_log_ratio(
    a: (&[f64], Label),
    b: (&[f64], Label),
    z: &PrivatizedRecord,
    mechanism: &Mechanism,
) -> Result<f64> {
    mechanism.log_ratio(a, b, z)
}

/// Outcome of an empirical LDP certificate run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateReport {
    pub alpha: f64,
    pub trials: usize,
    pub max_abs_log_ratio: f64,
    pub passed: bool,
}

/// Slack allowed on top of `alpha` for floating-point rounding.
pub const CERTIFICATE_SLACK: f64 = 1e-9;

/// Draws `trials` random record pairs uniformly over the bounding box and label set, releases `z`
/// under the first record and checks `|log ratio| <= alpha + 1e-9`.
pub fn ldp_certificate(mechanism: &Mechanism, trials: usize, seed: u64) -> Result<CertificateReport> {
    let spec = mechanism.spec();
    let labels = mechanism.labels();
    let mut rng = rng_from_seed(derive(seed, &[0xCE27]));
    let mut xa = vec![0.0; spec.dim()];
    let mut xb = vec![0.0; spec.dim()];
    let mut max_abs: f64 = 0.0;
    for t in 0..trials {
        for i in 0..spec.dim() {
            xa[i] = rng.random_range(spec.lower()[i]..=spec.upper()[i]);
            xb[i] = rng.random_range(spec.lower()[i]..=spec.upper()[i]);
        }
        let ya = labels.label(rng.random_range(0..labels.num_classes()));
        let yb = labels.label(rng.random_range(0..labels.num_classes()));
        // half the trials share x so label flips within a cell are well covered
        if t % 2 == 1 {
            xb.copy_from_slice(&xa);
        }
        let z = mechanism.privatize(&xa, ya, derive(seed, &[t as u64]))?;
        let r = mechanism.log_ratio((&xa, ya), (&xb, yb), &z)?;
        max_abs = max_abs.max(r.abs());
    }
    let alpha = mechanism.params().alpha();
    Ok(CertificateReport { alpha, trials, max_abs_log_ratio: max_abs, passed: max_abs <= alpha + CERTIFICATE_SLACK })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mech(h: f64, labels: LabelSet, params: PrivacyParams) -> Mechanism {
        Mechanism::new(PartitionSpec::cube(h, 1, 0.0, 3.0).unwrap(), labels, params).unwrap()
    }

    #[test]
    fn calibration() {
        let p = PrivacyParams::new(1.0).unwrap();
        assert_eq!(p.sigma_z(), 2.0 * 2f64.sqrt());
        assert_eq!(p.noise_scale(), 2.0);
        assert!((p.sigma_z() / 2f64.sqrt() - p.noise_scale()).abs() < 1e-15);
        assert!(PrivacyParams::new(0.0).is_err());
        assert!(PrivacyParams::new(f64::NAN).is_err());
        assert!(PrivacyParams::new(f64::INFINITY).unwrap().is_noiseless());
    }

    #[test]
    fn zero_noise_record_is_the_indicator() {
        // cells (-1,0], (0,1], (1,2], (2,3]
        let m = mech(1.0, LabelSet::Binary, PrivacyParams::noiseless());
        assert_eq!(m.universe().len(), 4);
        let z = m.privatize(&[1.5], -1, 4).unwrap();
        assert_eq!(z.values(), &[0.0, 0.0, -1.0, 0.0]);
        let m3 = mech(1.0, LabelSet::MultiClass(3), PrivacyParams::noiseless());
        let z = m3.privatize(&[2.5], 2, 4).unwrap();
        let mut expected = vec![0.0; 12];
        expected[3 * 3 + 1] = 1.0;
        assert_eq!(z.values(), &expected[..]);
    }

    #[test]
    fn outside_universe_is_rejected() {
        let m = mech(1.0, LabelSet::Binary, PrivacyParams::new(1.0).unwrap());
        assert!(matches!(m.privatize(&[7.0], 1, 0), Err(Error::InvalidInput(_))));
        assert!(m.privatize(&[1.0], 3, 0).is_err());
    }

    #[test]
    fn identical_records_have_zero_log_ratio() {
        let m = mech(0.5, LabelSet::Binary, PrivacyParams::new(1.0).unwrap());
        let z = m.privatize(&[1.2], 1, 11).unwrap();
        assert_eq!(m.log_ratio((&[1.2], 1), (&[1.2], 1), &z).unwrap(), 0.0);
    }

    #[test]
    fn label_flip_bound() {
        // per coordinate | |z + 1| - |z - 1| | <= 2, all other coordinates cancel
        let alpha = 0.7;
        let m = mech(0.5, LabelSet::Binary, PrivacyParams::new(alpha).unwrap());
        let (pos, _) = m.signal(&[1.2], 1).unwrap();
        for s in 0..200 {
            let z = m.privatize(&[1.2], 1, s).unwrap();
            let r = m.log_ratio((&[1.2], 1), (&[1.2], -1), &z).unwrap();
            let brute: f64 = z
                .values()
                .iter()
                .enumerate()
                .map(|(j, &zj)| {
                    let (sa, sb) = if j == pos { (1.0, -1.0) } else { (0.0, 0.0) };
                    ((zj - sb).abs() - (zj - sa).abs()) / m.params().noise_scale()
                })
                .sum();
            assert!((r - brute).abs() < 1e-12);
            assert!(r.abs() <= alpha + 1e-9);
        }
    }

    #[test]
    fn wire_format_roundtrip() {
        let m = mech(0.5, LabelSet::MultiClass(3), PrivacyParams::new(2.0).unwrap());
        let z = m.privatize(&[0.7], 3, 5).unwrap();
        let bytes = z.to_bytes();
        assert_eq!(bytes.len(), m.universe().len() * 3 * 8);
        assert_eq!(&bytes[..8], &z.values()[0].to_le_bytes());
        assert_eq!(PrivatizedRecord::from_bytes(&bytes, &m).unwrap(), z);
        assert!(PrivatizedRecord::from_bytes(&bytes[1..], &m).is_err());
    }

    #[test]
    fn universe_mismatch() {
        let a = mech(0.5, LabelSet::Binary, PrivacyParams::new(1.0).unwrap());
        let b = mech(0.25, LabelSet::Binary, PrivacyParams::new(1.0).unwrap());
        let z = b.privatize(&[0.7], 1, 5).unwrap();
        let mut agg = Aggregator::new(a.clone());
        assert!(matches!(agg.add(&z), Err(Error::InvalidInput(_))));
        assert!(agg.merge(&Aggregator::new(b)).is_err());
    }

    #[test]
    fn single_record_aggregate() {
        let m = mech(1.0, LabelSet::Binary, PrivacyParams::new(1.0).unwrap());
        let z = m.privatize(&[0.3], -1, 8).unwrap();
        let clf = aggregate(vec![z.clone()], m.clone()).unwrap();
        assert!(clf.is_private());
        for (i, key) in m.universe().iter().enumerate() {
            assert_eq!(clf.cell_values(key.coords()).unwrap(), &z.values()[i..i + 1]);
        }
    }

    #[test]
    fn laplace_never_infinite() {
        let mut rng = rng_from_seed(1);
        for _ in 0..100_000 {
            assert!(laplace(&mut rng, 1.0).is_finite());
        }
    }
}
