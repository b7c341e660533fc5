//! Subcommand bodies. Each returns `Ok` on success or a [`Failure`] carrying the exit code.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use log::info;
use partldp_core::conditions::log_grid;
use partldp_core::privatizer::{ldp_certificate, Mechanism};
use partldp_core::{
    fit_private, run_sweep, ConditionProbe, Dataset, LabelSet, NoiseMode, PartitionClassifier, PartitionSpec,
    PrivacyParams, RiskEvaluator,
};

use crate::config::ExperimentConfig;
use crate::failure::Failure;

/// Writes `text` to `out`, or to stdout when no path is given.
fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::io(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Failure::usage(format!("stdout: {e}")))
        }
    }
}

pub fn sample(config: &Path, n: usize, seed: Option<u64>, out: Option<&Path>) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config)?;
    let dist = cfg.distribution()?;
    let data = dist.sample(n, seed.unwrap_or(cfg.seed))?;
    let mut text = String::new();
    let header: Vec<String> = (1..=data.dim()).map(|i| format!("x{i}")).collect();
    let _ = writeln!(text, "{},y", header.join(","));
    for (x, y) in data.iter() {
        for v in x {
            let _ = write!(text, "{v},");
        }
        let _ = writeln!(text, "{y}");
    }
    emit(&text, out.or(cfg.output.as_deref()))
}

/// Reads a sample CSV whose header is `x1,..,xd,y`.
fn read_samples(path: &Path, dim: usize, labels: LabelSet) -> Result<Dataset, Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?.clone();
    let expected: Vec<String> = (1..=dim).map(|i| format!("x{i}")).chain(["y".to_string()]).collect();
    if headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Failure::usage(format!(
            "{}: header must be `{}` for this distribution",
            path.display(),
            expected.join(",")
        )));
    }
    let mut data = Dataset::new(dim, labels);
    let mut x = vec![0.0; dim];
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        let bad = |col: &str| Failure::usage(format!("{}: line {line}: cannot parse column {col}", path.display()));
        for (i, v) in x.iter_mut().enumerate() {
            *v = record[i].parse().map_err(|_| bad(&expected[i]))?;
        }
        let y = record[dim].parse().map_err(|_| bad("y"))?;
        data.push(&x, y).map_err(|e| Failure::from(e).context(format!("{}: line {line}", path.display())))?;
    }
    Ok(data)
}

pub struct FitRequest<'a> {
    pub config: &'a Path,
    pub data: &'a Path,
    pub h: f64,
    pub alpha: Option<f64>,
    pub per_record: bool,
    pub seed: Option<u64>,
    pub out: &'a Path,
}

pub fn fit(req: FitRequest) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(req.config)?;
    let dist = cfg.distribution()?;
    let spec = dist.partition(req.h)?;
    let data = read_samples(req.data, dist.ambient_dim(), dist.labels())?;
    let clf = match req.alpha {
        None => PartitionClassifier::fit(&data, &spec)?,
        Some(alpha) => {
            let mode = if req.per_record { NoiseMode::PerRecord } else { NoiseMode::AggregateShortcut };
            fit_private(&data, &spec, PrivacyParams::new(alpha)?, req.seed.unwrap_or(cfg.seed), mode)?
        }
    };
    info!("fitted {} cells from {} samples", clf.num_cells(), clf.n());
    std::fs::write(req.out, clf.to_bytes()).map_err(|e| Failure::io(req.out, e))
}

pub fn evaluate(config: &Path, classifier: &Path, monte_carlo: Option<usize>, seed: Option<u64>) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config)?;
    let dist = cfg.distribution()?;
    let bytes = std::fs::read(classifier).map_err(|e| Failure::io(classifier, e))?;
    let clf = PartitionClassifier::from_bytes(&bytes).map_err(|e| Failure::from(e).context(classifier.display()))?;
    let eval = RiskEvaluator::new(&dist)?;
    let report = match monte_carlo {
        None => eval.exact(&clf)?,
        Some(n) => eval.monte_carlo(&clf, n, seed.unwrap_or(cfg.seed))?,
    };
    let text = format!(
        "error_prob,excess,bayes_risk,std_err,method,n_eval\n{},{},{},{},{},{}\n",
        report.error_prob,
        report.excess,
        eval.bayes_risk(),
        report.std_err,
        report.method.as_str(),
        report.n_eval
    );
    emit(&text, None)
}

pub fn probe(config: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config)?;
    let section = cfg.probe()?;
    let dist = cfg.distribution()?;
    let grid = log_grid(section.t_min, section.t_max, section.per_decade).map_err(|e| Failure::from(e).context("[probe]"))?;
    let table = ConditionProbe::new(&dist, section.h)?.table(&grid)?;
    emit(&table.to_csv(), out.or(cfg.output.as_deref()))
}

pub fn sweep(config: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config)?;
    let sweep = cfg.sweep(seed)?;
    let table = run_sweep(&sweep)?;
    emit(&table.to_csv(), out.or(cfg.output.as_deref()))?;
    if table.fitted_slope.is_nan() {
        return Err(Failure::numeric("rate fit failed: fewer than 4 grid points with positive mean excess"));
    }
    info!("slope {:.4} +/- {:.4}", table.fitted_slope, table.slope_ci_halfwidth);
    Ok(())
}

pub struct LdpRequest {
    pub alpha: f64,
    pub trials: usize,
    pub classes: Option<usize>,
    pub h: f64,
    pub dim: usize,
    pub scale_factor: f64,
    pub seed: u64,
}

pub fn ldp_check(req: LdpRequest) -> Result<(), Failure> {
    if !(req.alpha > 0.0) || !req.alpha.is_finite() {
        return Err(Failure::usage(format!("--alpha must be positive and finite, got {}", req.alpha)));
    }
    if !(req.scale_factor > 0.0) || !req.scale_factor.is_finite() {
        return Err(Failure::usage(format!("--scale-factor must be positive, got {}", req.scale_factor)));
    }
    if req.trials == 0 || req.dim == 0 {
        return Err(Failure::usage("--trials and --dim must be at least 1"));
    }
    let labels = match req.classes {
        None => LabelSet::Binary,
        Some(m) if m >= 2 => LabelSet::MultiClass(m),
        Some(m) => return Err(Failure::usage(format!("--classes must be at least 2, got {m}"))),
    };
    let spec = PartitionSpec::cube(req.h, req.dim, -1.0, 1.0)?;
    let params = PrivacyParams::new(req.alpha)?.with_scale_factor(req.scale_factor);
    let mechanism = Mechanism::new(spec, labels, params)?;
    let report = ldp_certificate(&mechanism, req.trials, req.seed)?;
    println!(
        "max_abs_log_ratio={} alpha={} trials={} passed={}",
        report.max_abs_log_ratio, report.alpha, report.trials, report.passed
    );
    if report.passed {
        Ok(())
    } else {
        Err(Failure::check(format!(
            "max |log ratio| {} exceeds alpha {}",
            report.max_abs_log_ratio, report.alpha
        )))
    }
}
