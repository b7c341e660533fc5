//! Joint models of `(X, Y)`: an absolutely continuous component living on a coordinate subspace
//! plus finitely many atoms, together with the class posteriors and the Bayes decision.

use std::fmt;
use std::sync::Arc;

use rand::distr::Open01;
use rand::{Rng, RngCore};

use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::partition::PartitionSpec;
use crate::quad::{integrate_region, QuadOptions, Region};
use crate::seeds::{rng_from_seed, SimRng};
use crate::stats::Estimate;

/// Class label: `+1`/`-1` for binary problems, `1..=M` for multi-class problems.
pub type Label = i32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSet {
    /// Labels `+1` and `-1`.
    Binary,
    /// Labels `1..=M`.
    MultiClass(usize),
}

impl LabelSet {
    pub fn num_classes(&self) -> usize {
        match *self {
            LabelSet::Binary => 2,
            LabelSet::MultiClass(m) => m,
        }
    }

    /// Values stored per cell: one signed sum for binary problems, one count per class otherwise.
    pub fn values_per_cell(&self) -> usize {
        match *self {
            LabelSet::Binary => 1,
            LabelSet::MultiClass(m) => m,
        }
    }

    /// Position of a label in the posterior vector. Binary: `+1 -> 0`, `-1 -> 1`.
    pub fn class_index(&self, y: Label) -> Option<usize> {
        match *self {
            LabelSet::Binary => match y {
                1 => Some(0),
                -1 => Some(1),
                _ => None,
            },
            LabelSet::MultiClass(m) => {
                if y >= 1 && (y as usize) <= m {
                    Some(y as usize - 1)
                } else {
                    None
                }
            }
        }
    }

    pub fn label(&self, class: usize) -> Label {
        match *self {
            LabelSet::Binary => {
                if class == 0 {
                    1
                } else {
                    -1
                }
            }
            LabelSet::MultiClass(_) => class as Label + 1,
        }
    }

    pub fn contains(&self, y: Label) -> bool {
        self.class_index(y).is_some()
    }
}

/// Index of the largest entry, ties going to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// `sign(v)` with `sign(0) = +1`.
pub fn sign(v: f64) -> Label {
    if v >= 0.0 {
        1
    } else {
        -1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub y: Label,
}

/// Samples stored contiguously: `xs` holds `len * dim` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    labels: LabelSet,
    xs: Vec<f64>,
    ys: Vec<Label>,
}

impl Dataset {
    pub fn new(dim: usize, labels: LabelSet) -> Self {
        Dataset { dim, labels, xs: Vec::new(), ys: Vec::new() }
    }

    pub fn with_capacity(dim: usize, labels: LabelSet, n: usize) -> Self {
        Dataset { dim, labels, xs: Vec::with_capacity(n * dim), ys: Vec::with_capacity(n) }
    }

    pub fn from_samples<I: IntoIterator<Item = LabeledSample>>(
        dim: usize,
        labels: LabelSet,
        samples: I,
    ) -> Result<Self> {
        let mut d = Dataset::new(dim, labels);
        for s in samples {
            d.push(&s.x, s.y)?;
        }
        Ok(d)
    }

    pub fn push(&mut self, x: &[f64], y: Label) -> Result<()> {
        if x.len() != self.dim {
            return Err(invalid_input(format!("sample has dimension {}, expected {}", x.len(), self.dim)));
        }
        if !self.labels.contains(y) {
            return Err(invalid_input(format!("label {y} is not in the label set {:?}", self.labels)));
        }
        self.xs.extend_from_slice(x);
        self.ys.push(y);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> LabelSet {
        self.labels
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> Label {
        self.ys[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], Label)> + '_ {
        self.xs.chunks_exact(self.dim.max(1)).zip(self.ys.iter().copied())
    }

    pub fn to_samples(&self) -> Vec<LabeledSample> {
        self.iter().map(|(x, y)| LabeledSample { x: x.to_vec(), y }).collect()
    }
}

type DensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Density of the continuous component with respect to Lebesgue measure on its subspace.
#[derive(Clone)]
pub enum Density {
    /// `c (1 - |u|^delta)` on `[-1, 1]`, `c = (delta + 1) / (2 delta)`.
    Hat { delta: f64, c: f64 },
    /// `c |u|^delta` on `[-1, 1]`, `c = (delta + 1) / 2`.
    Power { delta: f64, c: f64 },
    /// Constant on a box.
    Uniform { lower: Vec<f64>, upper: Vec<f64>, value: f64 },
    /// User-supplied density on a box, sampled by rejection under `envelope >= sup f`.
    Custom {
        lower: Vec<f64>,
        upper: Vec<f64>,
        envelope: f64,
        breaks: Vec<Vec<f64>>,
        f: DensityFn,
    },
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Density::Hat { delta, c } => write!(f, "Hat {{ delta: {delta}, c: {c} }}"),
            Density::Power { delta, c } => write!(f, "Power {{ delta: {delta}, c: {c} }}"),
            Density::Uniform { lower, upper, .. } => write!(f, "Uniform {{ {lower:?}, {upper:?} }}"),
            Density::Custom { lower, upper, envelope, .. } => {
                write!(f, "Custom {{ {lower:?}, {upper:?}, envelope: {envelope} }}")
            }
        }
    }
}

const UNIT_LO: [f64; 1] = [-1.0];
const UNIT_HI: [f64; 1] = [1.0];
const MAX_REJECTIONS: usize = 1_000_000;

impl Density {
    pub fn hat(delta: f64) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(invalid_param(format!("hat density needs delta > 0, got {delta}")));
        }
        Ok(Density::Hat { delta, c: (delta + 1.0) / (2.0 * delta) })
    }

    pub fn power(delta: f64) -> Result<Self> {
        if !(delta.is_finite() && delta > -1.0) {
            return Err(invalid_param(format!("power density needs delta > -1, got {delta}")));
        }
        Ok(Density::Power { delta, c: (delta + 1.0) / 2.0 })
    }

    pub fn uniform(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_box(&lower, &upper)?;
        let vol: f64 = lower.iter().zip(&upper).map(|(a, b)| b - a).product();
        Ok(Density::Uniform { lower, upper, value: 1.0 / vol })
    }

    pub fn custom<F>(lower: Vec<f64>, upper: Vec<f64>, envelope: f64, breaks: Vec<Vec<f64>>, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        check_box(&lower, &upper)?;
        if !(envelope.is_finite() && envelope > 0.0) {
            return Err(invalid_param(format!("envelope must be positive and finite, got {envelope}")));
        }
        Ok(Density::Custom { lower, upper, envelope, breaks, f: Arc::new(f) })
    }

    pub fn dim(&self) -> usize {
        self.lower().len()
    }

    pub fn lower(&self) -> &[f64] {
        match self {
            Density::Hat { .. } | Density::Power { .. } => &UNIT_LO,
            Density::Uniform { lower, .. } | Density::Custom { lower, .. } => lower,
        }
    }

    pub fn upper(&self) -> &[f64] {
        match self {
            Density::Hat { .. } | Density::Power { .. } => &UNIT_HI,
            Density::Uniform { upper, .. } | Density::Custom { upper, .. } => upper,
        }
    }

    fn inside(&self, u: &[f64]) -> bool {
        u.iter().zip(self.lower().iter().zip(self.upper())).all(|(&v, (&a, &b))| v >= a && v <= b)
    }

    /// Density value; zero outside the support. The power density is set to zero at the origin.
    pub fn eval(&self, u: &[f64]) -> f64 {
        if !self.inside(u) {
            return 0.0;
        }
        match self {
            Density::Hat { delta, c } => c * (1.0 - u[0].abs().powf(*delta)),
            Density::Power { delta, c } => {
                let a = u[0].abs();
                if a == 0.0 && *delta != 0.0 {
                    0.0
                } else {
                    c * a.powf(*delta)
                }
            }
            Density::Uniform { value, .. } => *value,
            Density::Custom { f, .. } => f(u),
        }
    }

    /// Known kinks or singularities along `axis`.
    pub fn breaks(&self, axis: usize) -> Vec<f64> {
        match self {
            Density::Hat { .. } | Density::Power { .. } => vec![0.0],
            Density::Uniform { .. } => Vec::new(),
            Density::Custom { breaks, .. } => breaks.get(axis).cloned().unwrap_or_default(),
        }
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> Result<()> {
        match self {
            Density::Hat { delta, .. } => {
                for _ in 0..MAX_REJECTIONS {
                    let u: f64 = rng.random_range(-1.0..=1.0);
                    let accept: f64 = rng.random();
                    if accept < 1.0 - u.abs().powf(*delta) {
                        out[0] = u;
                        return Ok(());
                    }
                }
                Err(Error::Sampling(format!("hat density rejected {MAX_REJECTIONS} proposals")))
            }
            Density::Power { delta, .. } => {
                // |X| has CDF t^(delta + 1)
                let v: f64 = rng.sample(Open01);
                let r = v.powf(1.0 / (delta + 1.0));
                out[0] = if rng.random::<bool>() { r } else { -r };
                Ok(())
            }
            Density::Uniform { lower, upper, .. } => {
                for (o, (a, b)) in out.iter_mut().zip(lower.iter().zip(upper)) {
                    *o = rng.random_range(*a..=*b);
                }
                Ok(())
            }
            Density::Custom { lower, upper, envelope, f, .. } => {
                for _ in 0..MAX_REJECTIONS {
                    for (o, (a, b)) in out.iter_mut().zip(lower.iter().zip(upper)) {
                        *o = rng.random_range(*a..=*b);
                    }
                    let fv = f(out);
                    if !(fv.is_finite() && fv >= 0.0) || fv > *envelope {
                        return Err(Error::Sampling(format!(
                            "density value {fv} at {out:?} is outside [0, envelope = {envelope}]"
                        )));
                    }
                    if rng.random::<f64>() * envelope < fv {
                        return Ok(());
                    }
                }
                Err(Error::Sampling(format!("custom density rejected {MAX_REJECTIONS} proposals")))
            }
        }
    }
}

fn check_box(lower: &[f64], upper: &[f64]) -> Result<()> {
    if lower.is_empty() || lower.len() != upper.len() {
        return Err(invalid_param("support box corners must be non-empty and of equal dimension"));
    }
    for (a, b) in lower.iter().zip(upper) {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(invalid_param(format!("support box needs lower < upper, got [{a}, {b}]")));
        }
    }
    Ok(())
}

type RegressionFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type ClassFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Regression function `m(x) = E[Y | X = x]` for `+1`/`-1` labels.
#[derive(Clone)]
pub enum Regression {
    /// `m(x) = x_1`.
    Identity,
    /// `m(x) = sign(x_1) x_1^2`.
    SignedSquare,
    /// `m(x) = bias + <weights, x>`.
    Linear { weights: Vec<f64>, bias: f64 },
    Custom(RegressionFn),
}

impl Regression {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Regression::Identity => x[0],
            Regression::SignedSquare => x[0] * x[0].abs(),
            Regression::Linear { weights, bias } => bias + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>(),
            Regression::Custom(f) => f(x),
        }
    }
}

/// Class posteriors `P_k(x)` for `M` classes.
#[derive(Clone)]
pub enum ClassPosterior {
    /// `P_k(x) = intercepts[k] + <slopes[k], x>`.
    Linear { intercepts: Vec<f64>, slopes: Vec<Vec<f64>> },
    Custom { classes: usize, f: ClassFn },
}

#[derive(Clone)]
pub enum Posterior {
    Binary(Regression),
    Classes(ClassPosterior),
}

impl fmt::Debug for Posterior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Posterior::Binary(Regression::Identity) => write!(f, "Binary(Identity)"),
            Posterior::Binary(Regression::SignedSquare) => write!(f, "Binary(SignedSquare)"),
            Posterior::Binary(Regression::Linear { weights, bias }) => {
                write!(f, "Binary(Linear {{ weights: {weights:?}, bias: {bias} }})")
            }
            Posterior::Binary(Regression::Custom(_)) => write!(f, "Binary(Custom)"),
            Posterior::Classes(ClassPosterior::Linear { intercepts, slopes }) => {
                write!(f, "Classes(Linear {{ intercepts: {intercepts:?}, slopes: {slopes:?} }})")
            }
            Posterior::Classes(ClassPosterior::Custom { classes, .. }) => write!(f, "Classes(Custom, M = {classes})"),
        }
    }
}

impl Posterior {
    pub fn labels(&self) -> LabelSet {
        match self {
            Posterior::Binary(_) => LabelSet::Binary,
            Posterior::Classes(ClassPosterior::Linear { intercepts, .. }) => LabelSet::MultiClass(intercepts.len()),
            Posterior::Classes(ClassPosterior::Custom { classes, .. }) => LabelSet::MultiClass(*classes),
        }
    }

    /// Fills `out` (length `M`) with the class probabilities at `x`.
    pub fn probs(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Posterior::Binary(r) => {
                let m = r.eval(x);
                out[0] = 0.5 * (1.0 + m);
                out[1] = 0.5 * (1.0 - m);
            }
            Posterior::Classes(ClassPosterior::Linear { intercepts, slopes }) => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = intercepts[k] + slopes[k].iter().zip(x).map(|(s, v)| s * v).sum::<f64>();
                }
            }
            Posterior::Classes(ClassPosterior::Custom { f, .. }) => f(x, out),
        }
    }
}

/// A point mass with its own class posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub point: Vec<f64>,
    pub prob: f64,
    pub posterior: Vec<f64>,
}

/// Joint law of `(X, Y)` with `mu = mu_a + mu_s`.
///
/// The continuous component lives on the coordinate subspace spanned by the first
/// `intrinsic_dim` axes, the remaining coordinates being fixed at `offset`. Its density with
/// respect to Lebesgue measure on that subspace is `weight_a * density`.
#[derive(Debug, Clone)]
pub struct MixtureDistribution {
    name: String,
    ambient_dim: usize,
    density: Option<Density>,
    weight_a: f64,
    offset: Vec<f64>,
    atoms: Vec<Atom>,
    posterior: Posterior,
    labels: LabelSet,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// Step-by-step construction of a [`MixtureDistribution`], validated by [`MixtureBuilder::build`].
#[derive(Debug, Clone)]
pub struct MixtureBuilder {
    name: String,
    ambient_dim: usize,
    posterior: Posterior,
    density: Option<(Density, f64, Vec<f64>)>,
    atoms: Vec<Atom>,
}

impl MixtureBuilder {
    pub fn name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Continuous component with mass `weight`, embedded with the trailing coordinates at `offset`.
    pub fn continuous(mut self, density: Density, weight: f64, offset: Vec<f64>) -> Self {
        self.density = Some((density, weight, offset));
        self
    }

    pub fn atom(mut self, point: Vec<f64>, prob: f64, posterior: Vec<f64>) -> Self {
        self.atoms.push(Atom { point, prob, posterior });
        self
    }

    pub fn build(self) -> Result<MixtureDistribution> {
        let d = self.ambient_dim;
        if d == 0 {
            return Err(invalid_param("ambient dimension must be positive"));
        }
        let labels = self.posterior.labels();
        let m = labels.num_classes();
        if m < 2 {
            return Err(invalid_param("at least two classes are required"));
        }
        let (density, weight_a, offset) = match self.density {
            Some((dens, w, off)) => {
                if !(w.is_finite() && (0.0..=1.0).contains(&w)) {
                    return Err(invalid_param(format!("continuous weight must lie in [0, 1], got {w}")));
                }
                if dens.dim() > d || dens.dim() + off.len() != d {
                    return Err(invalid_param(format!(
                        "intrinsic dimension {} plus offset length {} must equal ambient dimension {d}",
                        dens.dim(),
                        off.len()
                    )));
                }
                if off.iter().any(|v| !v.is_finite()) {
                    return Err(invalid_param("offset coordinates must be finite"));
                }
                (Some(dens), w, off)
            }
            None => (None, 0.0, Vec::new()),
        };
        let mut atom_mass = 0.0;
        for a in &self.atoms {
            if a.point.len() != d || a.point.iter().any(|v| !v.is_finite()) {
                return Err(invalid_param(format!("atom {:?} must be a finite point of dimension {d}", a.point)));
            }
            if !(a.prob.is_finite() && a.prob >= 0.0) {
                return Err(invalid_param(format!("atom probability must be nonnegative, got {}", a.prob)));
            }
            check_prob_vector(&a.posterior, m)
                .map_err(|e| invalid_param(format!("atom at {:?}: {e}", a.point)))?;
            atom_mass += a.prob;
        }
        if (atom_mass - (1.0 - weight_a)).abs() > 1e-12 {
            return Err(invalid_param(format!(
                "atom masses sum to {atom_mass}, expected 1 - weight_a = {}",
                1.0 - weight_a
            )));
        }

        let mut lower = vec![f64::INFINITY; d];
        let mut upper = vec![f64::NEG_INFINITY; d];
        if let Some(dens) = &density {
            let da = dens.dim();
            for i in 0..d {
                let (a, b) = if i < da { (dens.lower()[i], dens.upper()[i]) } else { (offset[i - da], offset[i - da]) };
                lower[i] = lower[i].min(a);
                upper[i] = upper[i].max(b);
            }
        }
        for a in &self.atoms {
            for i in 0..d {
                lower[i] = lower[i].min(a.point[i]);
                upper[i] = upper[i].max(a.point[i]);
            }
        }
        for i in 0..d {
            if !(upper[i] > lower[i]) {
                // a flat axis still needs a proper box for the partition
                lower[i] = upper[i] - 1e-9 * upper[i].abs().max(1.0);
            }
        }

        let dist = MixtureDistribution {
            name: self.name,
            ambient_dim: d,
            density,
            weight_a,
            offset,
            atoms: self.atoms,
            posterior: self.posterior,
            labels,
            lower,
            upper,
        };
        dist.validate()?;
        Ok(dist)
    }
}

fn check_prob_vector(p: &[f64], m: usize) -> std::result::Result<(), String> {
    if p.len() != m {
        return Err(format!("posterior has {} entries, expected {m}", p.len()));
    }
    if p.iter().any(|v| !(v.is_finite() && (-1e-12..=1.0 + 1e-12).contains(v))) {
        return Err(format!("posterior {p:?} has entries outside [0, 1]"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(format!("posterior {p:?} sums to {s}"));
    }
    Ok(())
}

/// Probes per axis when validating posteriors on the support.
const VALIDATION_GRID: usize = 101;

impl MixtureDistribution {
    pub fn builder(ambient_dim: usize, posterior: Posterior) -> MixtureBuilder {
        MixtureBuilder {
            name: "custom-mixture".to_string(),
            ambient_dim,
            posterior,
            density: None,
            atoms: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        let m = self.labels.num_classes();
        let mut probs = vec![0.0; m];
        let mut x = vec![0.0; self.ambient_dim];
        if let Some(dens) = &self.density {
            let da = dens.dim();
            let check = |u: &[f64], x: &mut Vec<f64>, probs: &mut Vec<f64>| -> Result<()> {
                self.embed(u, x);
                self.posterior.probs(x, probs);
                check_prob_vector(probs, m).map_err(|e| invalid_param(format!("at {x:?}: {e}")))
            };
            if da <= 2 {
                let mut u = vec![0.0; da];
                let pts = VALIDATION_GRID.pow(da as u32);
                for i in 0..pts {
                    let mut rem = i;
                    for (a, ua) in u.iter_mut().enumerate() {
                        let t = (rem % VALIDATION_GRID) as f64 / (VALIDATION_GRID - 1) as f64;
                        rem /= VALIDATION_GRID;
                        *ua = dens.lower()[a] + t * (dens.upper()[a] - dens.lower()[a]);
                    }
                    check(&u, &mut x, &mut probs)?;
                }
                let custom = matches!(dens, Density::Custom { .. });
                let mass = if custom { self.integrate_continuous(|_, f| f, 1e-9)? } else { self.weight_a };
                if (mass - self.weight_a).abs() > 1e-6 * self.weight_a.max(1e-300) && self.weight_a > 0.0 {
                    return Err(invalid_param(format!(
                        "density integrates to {} instead of 1",
                        mass / self.weight_a
                    )));
                }
            } else {
                let mut rng = rng_from_seed(0x7661_6C69_6461_7465);
                let mut u = vec![0.0; da];
                for _ in 0..10_000 {
                    for (a, ua) in u.iter_mut().enumerate() {
                        *ua = rng.random_range(dens.lower()[a]..=dens.upper()[a]);
                    }
                    check(&u, &mut x, &mut probs)?;
                }
                if let Density::Custom { lower, upper, f, .. } = dens {
                    // Monte Carlo normalization check, 5 standard errors
                    let vol: f64 = lower.iter().zip(upper).map(|(a, b)| b - a).product();
                    let n = 1_000_000;
                    let (mut s, mut s2) = (0.0, 0.0);
                    for _ in 0..n {
                        for (a, ua) in u.iter_mut().enumerate() {
                            *ua = rng.random_range(lower[a]..=upper[a]);
                        }
                        let v = f(&u) * vol;
                        s += v;
                        s2 += v * v;
                    }
                    let mean = s / n as f64;
                    let se = ((s2 / n as f64 - mean * mean).max(0.0) / n as f64).sqrt();
                    if (mean - 1.0).abs() > 5.0 * se + 1e-6 {
                        return Err(invalid_param(format!("density integrates to {mean} ± {se} instead of 1")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    /// Dimension of the continuous component (zero for purely atomic laws).
    pub fn intrinsic_dim(&self) -> usize {
        self.density.as_ref().map_or(0, Density::dim)
    }

    pub fn density(&self) -> Option<&Density> {
        self.density.as_ref()
    }

    pub fn weight_a(&self) -> f64 {
        self.weight_a
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn posterior(&self) -> &Posterior {
        &self.posterior
    }

    pub fn labels(&self) -> LabelSet {
        self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.labels.num_classes()
    }

    pub fn bbox(&self) -> (&[f64], &[f64]) {
        (&self.lower, &self.upper)
    }

    /// Ambient partition with side `h` over the support's bounding box.
    pub fn partition(&self, h: f64) -> Result<PartitionSpec> {
        PartitionSpec::new(h, self.lower.clone(), self.upper.clone())
    }

    /// Partition with side `h` of the continuous component's support, in subspace coordinates.
    pub fn intrinsic_partition(&self, h: f64) -> Result<Option<PartitionSpec>> {
        self.density
            .as_ref()
            .map(|d| PartitionSpec::new(h, d.lower().to_vec(), d.upper().to_vec()))
            .transpose()
    }

    /// Maps subspace coordinates `u` to the ambient point `x = (u, offset)`.
    pub fn embed(&self, u: &[f64], x: &mut [f64]) {
        let da = u.len();
        x[..da].copy_from_slice(u);
        x[da..].copy_from_slice(&self.offset);
    }

    /// Density `f = weight_a * density` of `mu_a` at subspace point `u`.
    pub fn f(&self, u: &[f64]) -> f64 {
        self.density.as_ref().map_or(0.0, |d| self.weight_a * d.eval(u))
    }

    /// Posteriors of the continuous component at ambient point `x`.
    pub fn continuous_probs(&self, x: &[f64], out: &mut [f64]) {
        self.posterior.probs(x, out);
    }

    /// Posteriors at `x`; an exact atom location returns that atom's posterior.
    pub fn probs(&self, x: &[f64], out: &mut [f64]) {
        if let Some(a) = self.atoms.iter().find(|a| a.point == x) {
            out.copy_from_slice(&a.posterior);
        } else {
            self.posterior.probs(x, out);
        }
    }

    /// `m(x)` for binary laws.
    pub fn regression(&self, x: &[f64]) -> Option<f64> {
        match self.labels {
            LabelSet::Binary => {
                let mut p = [0.0; 2];
                self.probs(x, &mut p);
                Some(p[0] - p[1])
            }
            LabelSet::MultiClass(_) => None,
        }
    }

    /// `|m(x)|` for binary laws, `P_(1)(x) - P_(2)(x)` otherwise.
    pub fn gap(&self, x: &[f64]) -> f64 {
        let mut p = vec![0.0; self.num_classes()];
        self.probs(x, &mut p);
        top_two_gap(&p)
    }

    pub fn bayes_decision(&self, x: &[f64]) -> Label {
        let mut p = vec![0.0; self.num_classes()];
        self.probs(x, &mut p);
        self.labels.label(argmax(&p))
    }

    /// Draws `n` i.i.d. labelled samples.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        let mut rng = rng_from_seed(seed);
        self.sample_with(&mut rng, n)
    }

    pub fn sample_with<R: RngCore + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Dataset> {
        let mut data = Dataset::with_capacity(self.ambient_dim, self.labels, n);
        let mut x = vec![0.0; self.ambient_dim];
        let mut u = vec![0.0; self.intrinsic_dim()];
        let mut probs = vec![0.0; self.num_classes()];
        for _ in 0..n {
            let class = self.draw_one(rng, &mut x, &mut u, &mut probs)?;
            data.xs.extend_from_slice(&x);
            data.ys.push(self.labels.label(class));
        }
        Ok(data)
    }

    /// Draws one `(x, class index)` pair into the buffers.
    pub(crate) fn draw_one<R: RngCore + ?Sized>(
        &self,
        rng: &mut R,
        x: &mut [f64],
        u: &mut [f64],
        probs: &mut [f64],
    ) -> Result<usize> {
        let continuous = match &self.density {
            Some(_) if self.weight_a >= 1.0 => true,
            Some(_) if self.weight_a > 0.0 => rng.random::<f64>() < self.weight_a,
            _ => false,
        };
        if continuous {
            let dens = self.density.as_ref().expect("continuous branch requires a density");
            dens.sample(rng, u)?;
            self.embed(u, x);
            self.posterior.probs(x, probs);
        } else {
            let mut v: f64 = rng.random::<f64>() * (1.0 - self.weight_a);
            let mut chosen = self.atoms.len() - 1;
            for (i, a) in self.atoms.iter().enumerate() {
                if v < a.prob {
                    chosen = i;
                    break;
                }
                v -= a.prob;
            }
            let atom = &self.atoms[chosen];
            x.copy_from_slice(&atom.point);
            probs.copy_from_slice(&atom.posterior);
        }
        let v: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if v < acc {
                return Ok(k);
            }
        }
        Ok(probs.len() - 1)
    }

    /// Integrates `g(x, f(u))` over the continuous support, where `x` is the embedded point.
    /// Boundaries of the Bayes decision are located and used as breakpoints.
    pub(crate) fn integrate_continuous<G>(&self, g: G, tol: f64) -> Result<f64>
    where
        G: Fn(&[f64], f64) -> f64,
    {
        let Some(dens) = &self.density else { return Ok(0.0) };
        if self.weight_a == 0.0 {
            return Ok(0.0);
        }
        let da = dens.dim();
        let m = self.num_classes();
        let breaks: Vec<Vec<f64>> = (0..da).map(|a| dens.breaks(a)).collect();
        let x = std::cell::RefCell::new(vec![0.0; self.ambient_dim]);
        let p = std::cell::RefCell::new(vec![0.0; m]);
        let weight = |u: &[f64]| {
            let mut x = x.borrow_mut();
            self.embed(u, &mut x);
            g(&x, self.f(u))
        };
        let boundary = |u: &[f64], out: &mut [f64]| {
            let mut x = x.borrow_mut();
            let mut p = p.borrow_mut();
            self.embed(u, &mut x);
            self.posterior.probs(&x, &mut p);
            pairwise_differences(&p, out);
        };
        let region = Region { weight: &weight, boundary: &boundary, n_boundary: m * (m - 1) / 2, keep: &|_| true };
        let res = integrate_region(&region, dens.lower(), dens.upper(), &breaks, QuadOptions::new(tol, tol))?;
        Ok(res.value)
    }

    /// `L* = P{D*(X) != Y}`: by quadrature when the continuous part has dimension at most two,
    /// otherwise by Monte Carlo with a fixed seed.
    pub fn bayes_risk(&self) -> Result<f64> {
        if self.intrinsic_dim() > 2 {
            return Ok(self.bayes_risk_mc(1_000_000, 0x4C53_5441_52)?.value);
        }
        let m = self.num_classes();
        let cont = self.integrate_continuous(
            |x, f| {
                let mut p = [0.0; 16];
                let mut v = vec![0.0; if m > 16 { m } else { 0 }];
                let probs: &mut [f64] = if m <= 16 { &mut p[..m] } else { &mut v };
                self.posterior.probs(x, probs);
                f * (1.0 - probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            },
            1e-10,
        )?;
        let atoms: f64 = self
            .atoms
            .iter()
            .map(|a| a.prob * (1.0 - a.posterior.iter().cloned().fold(f64::NEG_INFINITY, f64::max)))
            .sum();
        Ok(cont + atoms)
    }

    /// Misclassification frequency of the Bayes rule on `n` fresh draws.
    pub fn bayes_risk_mc(&self, n: usize, seed: u64) -> Result<Estimate> {
        if n == 0 {
            return Err(invalid_input("Monte Carlo evaluation needs at least one draw"));
        }
        let mut rng: SimRng = rng_from_seed(seed);
        let mut x = vec![0.0; self.ambient_dim];
        let mut u = vec![0.0; self.intrinsic_dim()];
        let mut probs = vec![0.0; self.num_classes()];
        let mut errors = 0usize;
        for _ in 0..n {
            let class = self.draw_one(&mut rng, &mut x, &mut u, &mut probs)?;
            if argmax(&probs) != class {
                errors += 1;
            }
        }
        let p = errors as f64 / n as f64;
        Ok(Estimate { value: p, std_err: (p * (1.0 - p) / n as f64).sqrt() })
    }
}

/// `P_(1) - P_(2)` of a probability vector.
pub fn top_two_gap(p: &[f64]) -> f64 {
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &v in p {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    first - second
}

/// All `P_k - P_l`, `k < l`, whose sign changes delimit where the Bayes decision switches.
pub(crate) fn pairwise_differences(p: &[f64], out: &mut [f64]) {
    let mut idx = 0;
    for k in 0..p.len() {
        for l in k + 1..p.len() {
            out[idx] = p[k] - p[l];
            idx += 1;
        }
    }
}

/// Example 1: `m(x) = x` with density `c (1 - |x|^delta)` on `[-1, 1]`.
pub fn example1(delta: f64) -> Result<MixtureDistribution> {
    MixtureDistribution::builder(1, Posterior::Binary(Regression::Identity))
        .name(format!("example1(delta={delta})"))
        .continuous(Density::hat(delta)?, 1.0, Vec::new())
        .build()
}

/// Example 2: `m(x) = x` with density `c |x|^delta` on `[-1, 1]`, unbounded at 0 when `delta < 0`.
pub fn example2(delta: f64) -> Result<MixtureDistribution> {
    MixtureDistribution::builder(1, Posterior::Binary(Regression::Identity))
        .name(format!("example2(delta={delta})"))
        .continuous(Density::power(delta)?, 1.0, Vec::new())
        .build()
}

/// Example 3: `m(x) = sign(x) x^2` with density `|x|` on `[-1, 1]`.
pub fn example3() -> Result<MixtureDistribution> {
    MixtureDistribution::builder(1, Posterior::Binary(Regression::SignedSquare))
        .name("example3")
        .continuous(Density::power(1.0)?, 1.0, Vec::new())
        .build()
}

/// Free-function entry point: `n` i.i.d. samples from `dist`.
pub fn sample(dist: &MixtureDistribution, n: usize, seed: u64) -> Result<Dataset> {
    dist.sample(n, seed)
}

pub fn bayes_decision(dist: &MixtureDistribution, x: &[f64]) -> Label {
    dist.bayes_decision(x)
}

pub fn bayes_risk(dist: &MixtureDistribution) -> Result<f64> {
    dist.bayes_risk()
}
