//! Experiment configuration files (TOML), checked strictly before anything runs.

use std::path::{Path, PathBuf};

use partldp_core::distributions::{ClassPosterior, MixtureDistribution};
use partldp_core::{
    example1, example2, example3, BandwidthRule, Density, EvalMode, NoiseMode, Posterior, Regression, SweepConfig,
    SweepMode,
};
use serde::Deserialize;

use crate::failure::Failure;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub distribution: DistributionConfig,
    pub sweep: Option<SweepSection>,
    pub probe: Option<ProbeSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DistributionConfig {
    Example1 { delta: f64 },
    Example2 { delta: f64 },
    Example3 {},
    CustomMixture(CustomMixture),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomMixture {
    pub ambient_dim: usize,
    pub name: Option<String>,
    pub posterior: PosteriorConfig,
    pub continuous: Option<ContinuousConfig>,
    #[serde(default)]
    pub atoms: Vec<AtomConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PosteriorConfig {
    /// `m(x) = x_1`
    Identity {},
    /// `m(x) = sign(x_1) x_1^2`
    SignedSquare {},
    /// `m(x) = bias + <weights, x>`
    Linear { weights: Vec<f64>, bias: f64 },
    /// `P_k(x) = intercepts[k] + <slopes[k], x>`
    LinearClasses { intercepts: Vec<f64>, slopes: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousConfig {
    pub weight: f64,
    pub density: DensityConfig,
    #[serde(default)]
    pub offset: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DensityConfig {
    Uniform { lower: Vec<f64>, upper: Vec<f64> },
    Hat { delta: f64 },
    Power { delta: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub point: Vec<f64>,
    pub prob: f64,
    pub posterior: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub n_grid: Vec<usize>,
    pub replications: usize,
    #[serde(default)]
    pub mode: ModeConfig,
    pub alpha: Option<f64>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub bandwidth: BandwidthConfig,
    #[serde(default = "one")]
    pub bandwidth_constant: f64,
    /// Explicit bandwidths, one per `n_grid` entry; requires `bandwidth = "explicit"`.
    pub h: Option<Vec<f64>>,
    #[serde(default)]
    pub eval: EvalConfig,
    pub n_eval: Option<usize>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeConfig {
    #[default]
    Observable,
    Private,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseConfig {
    PerRecord,
    #[default]
    AggregateShortcut,
}

impl From<NoiseConfig> for NoiseMode {
    fn from(n: NoiseConfig) -> Self {
        match n {
            NoiseConfig::PerRecord => NoiseMode::PerRecord,
            NoiseConfig::AggregateShortcut => NoiseMode::AggregateShortcut,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthConfig {
    #[default]
    RateOptimal,
    RateOptimalAmbient,
    RateOptimalPrivate,
    Explicit,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalConfig {
    #[default]
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    pub h: f64,
    #[serde(default = "default_t_min")]
    pub t_min: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_per_decade")]
    pub per_decade: usize,
}

fn default_t_min() -> f64 {
    1e-4
}

fn default_t_max() -> f64 {
    1e-1
}

fn default_per_decade() -> usize {
    8
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|f| f.context(format!("config {}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, Failure> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Failure::usage(one_line(&e.to_string())))?;
        cfg.check_finite(text)?;
        Ok(cfg)
    }

    /// Rejects NaN and infinite values, naming the key and its line.
    fn check_finite(&self, text: &str) -> Result<(), Failure> {
        let mut bad = Vec::new();
        let mut visit = |key: &str, v: &[f64]| {
            if v.iter().any(|x| !x.is_finite()) {
                bad.push(key.to_string());
            }
        };
        match &self.distribution {
            DistributionConfig::Example1 { delta } | DistributionConfig::Example2 { delta } => visit("delta", &[*delta]),
            DistributionConfig::Example3 {} => {}
            DistributionConfig::CustomMixture(m) => {
                match &m.posterior {
                    PosteriorConfig::Linear { weights, bias } => {
                        visit("weights", weights);
                        visit("bias", &[*bias]);
                    }
                    PosteriorConfig::LinearClasses { intercepts, slopes } => {
                        visit("intercepts", intercepts);
                        slopes.iter().for_each(|s| visit("slopes", s));
                    }
                    PosteriorConfig::Identity {} | PosteriorConfig::SignedSquare {} => {}
                }
                if let Some(c) = &m.continuous {
                    visit("weight", &[c.weight]);
                    visit("offset", &c.offset);
                    match &c.density {
                        DensityConfig::Uniform { lower, upper } => {
                            visit("lower", lower);
                            visit("upper", upper);
                        }
                        DensityConfig::Hat { delta } | DensityConfig::Power { delta } => visit("delta", &[*delta]),
                    }
                }
                for a in &m.atoms {
                    visit("point", &a.point);
                    visit("prob", &[a.prob]);
                    visit("posterior", &a.posterior);
                }
            }
        }
        if let Some(s) = &self.sweep {
            visit("bandwidth_constant", &[s.bandwidth_constant]);
            if let Some(a) = s.alpha {
                visit("alpha", &[a]);
            }
            if let Some(h) = &s.h {
                visit("h", h);
            }
        }
        if let Some(p) = &self.probe {
            visit("h", &[p.h]);
            visit("t_min", &[p.t_min]);
            visit("t_max", &[p.t_max]);
        }
        match bad.first() {
            None => Ok(()),
            Some(key) => Err(Failure::usage(format!("{}: key `{key}` must be finite", locate(text, key)))),
        }
    }

    pub fn distribution(&self) -> Result<MixtureDistribution, Failure> {
        let d = match &self.distribution {
            DistributionConfig::Example1 { delta } => example1(*delta),
            DistributionConfig::Example2 { delta } => example2(*delta),
            DistributionConfig::Example3 {} => example3(),
            DistributionConfig::CustomMixture(m) => return m.build(),
        };
        d.map_err(|e| Failure::from(e).context("distribution"))
    }

    pub fn sweep(&self, seed_override: Option<u64>) -> Result<SweepConfig, Failure> {
        let s = self.sweep.as_ref().ok_or_else(|| Failure::usage("config has no [sweep] section"))?;
        let mut cfg = SweepConfig::new(self.distribution()?, s.n_grid.clone(), s.replications, seed_override.unwrap_or(self.seed));
        cfg.mode = match s.mode {
            ModeConfig::Observable => {
                if s.alpha.is_some() {
                    return Err(Failure::usage("[sweep] key `alpha` requires mode = \"private\""));
                }
                SweepMode::Observable
            }
            ModeConfig::Private => {
                let alpha = s.alpha.ok_or_else(|| Failure::usage("[sweep] mode = \"private\" needs key `alpha`"))?;
                SweepMode::Private { alpha, noise: s.noise.into() }
            }
        };
        cfg.bandwidth = match (s.bandwidth, &s.h) {
            (BandwidthConfig::Explicit, Some(h)) => BandwidthRule::Explicit(h.clone()),
            (BandwidthConfig::Explicit, None) => {
                return Err(Failure::usage("[sweep] bandwidth = \"explicit\" needs key `h`"));
            }
            (_, Some(_)) => return Err(Failure::usage("[sweep] key `h` requires bandwidth = \"explicit\"")),
            (BandwidthConfig::RateOptimal, None) => BandwidthRule::RateOptimal,
            (BandwidthConfig::RateOptimalAmbient, None) => BandwidthRule::RateOptimalAmbient,
            (BandwidthConfig::RateOptimalPrivate, None) => BandwidthRule::RateOptimalPrivate,
        };
        cfg.bandwidth_constant = s.bandwidth_constant;
        cfg.eval = match (s.eval, s.n_eval) {
            (EvalConfig::Exact, None) => EvalMode::Exact,
            (EvalConfig::Exact, Some(_)) => {
                return Err(Failure::usage("[sweep] key `n_eval` requires eval = \"monte-carlo\""));
            }
            (EvalConfig::MonteCarlo, n) => EvalMode::MonteCarlo(n.unwrap_or(1_000_000)),
        };
        cfg.validate().map_err(|e| Failure::from(e).context("[sweep]"))?;
        Ok(cfg)
    }

    pub fn probe(&self) -> Result<&ProbeSection, Failure> {
        self.probe.as_ref().ok_or_else(|| Failure::usage("config has no [probe] section"))
    }
}

impl CustomMixture {
    fn build(&self) -> Result<MixtureDistribution, Failure> {
        let posterior = match &self.posterior {
            PosteriorConfig::Identity {} => Posterior::Binary(Regression::Identity),
            PosteriorConfig::SignedSquare {} => Posterior::Binary(Regression::SignedSquare),
            PosteriorConfig::Linear { weights, bias } => {
                Posterior::Binary(Regression::Linear { weights: weights.clone(), bias: *bias })
            }
            PosteriorConfig::LinearClasses { intercepts, slopes } => {
                Posterior::Classes(ClassPosterior::Linear { intercepts: intercepts.clone(), slopes: slopes.clone() })
            }
        };
        let mut b = MixtureDistribution::builder(self.ambient_dim, posterior);
        if let Some(name) = &self.name {
            b = b.name(name.clone());
        }
        if let Some(c) = &self.continuous {
            let density = match &c.density {
                DensityConfig::Uniform { lower, upper } => Density::uniform(lower.clone(), upper.clone()),
                DensityConfig::Hat { delta } => Density::hat(*delta),
                DensityConfig::Power { delta } => Density::power(*delta),
            }
            .map_err(|e| Failure::from(e).context("distribution.continuous.density"))?;
            b = b.continuous(density, c.weight, c.offset.clone());
        }
        for a in &self.atoms {
            b = b.atom(a.point.clone(), a.prob, a.posterior.clone());
        }
        b.build().map_err(|e| Failure::from(e).context("distribution"))
    }
}

/// `line N` of the first assignment to `key`, or `config` if the key is not found verbatim.
fn locate(text: &str, key: &str) -> String {
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map_or_else(|| "config".to_string(), |i| format!("line {}", i + 1))
}

/// TOML errors span several lines with a source excerpt; keep the location and the message.
fn one_line(msg: &str) -> String {
    let mut lines = msg.lines().filter(|l| !l.trim().is_empty());
    let head = lines.next().unwrap_or("invalid config").trim().trim_end_matches(':');
    let tail = msg.lines().rev().find(|l| !l.trim().is_empty() && !l.contains('|')).unwrap_or("").trim();
    if tail.is_empty() || tail == head {
        head.to_string()
    } else {
        format!("{head}: {tail}")
    }
}
