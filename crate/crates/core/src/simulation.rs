//! Synthetic data and Monte Carlo experiments.
//!
//! Observations are `N_p(0, I)` up to the changepoint `z` and `N_p(θ, I)`
//! afterwards. Each repetition draws from its own seeded stream (see
//! [`crate::rng`]), so reports are identical for any thread count.

use std::fmt::Write as _;
use std::io::Write;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{DetectorConfig, DetectorState};
use crate::error::{invalid, Error, Result};
use crate::grid::ScaleGrid;
use crate::inference::{estimate_support, infer, select_anchor, InferenceConfig, InferenceResult};
use crate::rng::{stream_rng, with_threads, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalShape {
    /// Uniform on the union of `s`-sparse spheres of radius `ϑ`.
    SphereUniform,
    /// `θʲ ∝ 1` on the first `s` coordinates.
    Uniform,
    /// `θʲ ∝ j^{-1/2}` on the first `s` coordinates.
    InvSqrt,
    /// `θʲ ∝ j^{-1}` on the first `s` coordinates.
    Harmonic,
}

impl std::str::FromStr for SignalShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" | "sphere-uniform" => Ok(Self::SphereUniform),
            "uniform" => Ok(Self::Uniform),
            "inv-sqrt" => Ok(Self::InvSqrt),
            "harmonic" => Ok(Self::Harmonic),
            other => Err(invalid("shape", format!("unknown signal shape `{other}`"))),
        }
    }
}

impl std::fmt::Display for SignalShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::SphereUniform => "sphere-uniform",
            Self::Uniform => "uniform",
            Self::InvSqrt => "inv-sqrt",
            Self::Harmonic => "harmonic",
        })
    }
}

/// Draws a post-change mean with `s` non-zero entries and norm `vartheta`.
pub fn sample_signal<R: Rng + ?Sized>(
    p: usize,
    s: usize,
    vartheta: f64,
    shape: SignalShape,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if s == 0 || s > p {
        return Err(invalid("s", format!("sparsity must lie in 1..={p}, got {s}")));
    }
    if !(vartheta > 0.0 && vartheta.is_finite()) {
        return Err(invalid("vartheta", format!("must be positive, got {vartheta}")));
    }
    let mut theta = vec![0.0; p];
    match shape {
        SignalShape::SphereUniform => loop {
            let idx = sample_indices(rng, p, s);
            for j in idx.iter() {
                theta[j] = rng.sample(StandardNormal);
            }
            if theta.iter().any(|&v| v != 0.0) {
                break;
            }
        },
        SignalShape::Uniform => theta[..s].fill(1.0),
        SignalShape::InvSqrt => (0..s).for_each(|j| theta[j] = 1.0 / ((j + 1) as f64).sqrt()),
        SignalShape::Harmonic => (0..s).for_each(|j| theta[j] = 1.0 / (j + 1) as f64),
    }
    let norm = l2_norm(&theta);
    theta.iter_mut().for_each(|v| *v *= vartheta / norm);
    Ok(theta)
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveSupportReport {
    /// Effective sparsity `s(θ)`.
    pub s_eff: usize,
    /// Effective support `S(θ)`.
    pub support: Vec<usize>,
    /// `S_β = {j : |θʲ| ≥ b_min}`.
    pub s_beta: Vec<usize>,
}

/// Effective sparsity and support of `θ`, and the `b_min`-level support.
///
/// Scans `s = 1, 2, 4, ..., 2^{⌊log₂ p⌋}` for the first `s` whose threshold
/// set `{j : |θʲ| ≥ ‖θ‖₂/√(s·log₂(2p))}` has at least `s` members. If no
/// level qualifies the largest one is reported.
pub fn effective_support(theta: &[f64], grid: &ScaleGrid) -> Result<EffectiveSupportReport> {
    let p = theta.len();
    if p != grid.p() {
        return Err(Error::DimensionMismatch {
            expected: grid.p(),
            got: p,
        });
    }
    let norm = l2_norm(theta);
    if norm == 0.0 {
        return Err(invalid("theta", "effective support of the zero vector is undefined"));
    }
    let log2_2p = ((2 * p) as f64).log2();
    let top = p.ilog2();
    let mut chosen = (0, Vec::new());
    for k in 0..=top {
        let s = 1usize << k;
        let threshold = norm / (s as f64 * log2_2p).sqrt();
        let set: Vec<usize> = (0..p).filter(|&j| theta[j].abs() >= threshold).collect();
        let done = set.len() >= s;
        chosen = (s, set);
        if done {
            break;
        }
    }
    let b_min = grid.b_min();
    Ok(EffectiveSupportReport {
        s_eff: chosen.0,
        support: chosen.1,
        s_beta: (0..p).filter(|&j| theta[j].abs() >= b_min).collect(),
    })
}

/// Where the post-change mean of each repetition comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SignalSpec {
    /// No change: every run is a null run of length `z`.
    Null,
    Fixed(Vec<f64>),
    /// Drawn afresh per repetition (deterministic shapes give the same θ).
    Shaped {
        s: usize,
        vartheta: f64,
        shape: SignalShape,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub p: usize,
    pub z: u64,
    pub signal: SignalSpec,
    /// Runs still undeclared after `z + max_post_change` observations are
    /// censored. Defaults to 50 times a rough delay guess.
    pub max_post_change: Option<u64>,
}

impl Scenario {
    pub fn new(p: usize, z: u64, signal: SignalSpec) -> Self {
        Self {
            p,
            z,
            signal,
            max_post_change: None,
        }
    }

    fn horizon(&self, detector: &DetectorConfig) -> u64 {
        if let SignalSpec::Null = self.signal {
            return self.z;
        }
        let cap = self.max_post_change.unwrap_or_else(|| {
            let (s, vartheta) = match &self.signal {
                SignalSpec::Fixed(theta) => (theta.iter().filter(|v| **v != 0.0).count().max(1), l2_norm(theta)),
                SignalSpec::Shaped { s, vartheta, .. } => (*s, *vartheta),
                SignalSpec::Null => unreachable!(),
            };
            let log2_2p = ((2 * self.p) as f64).log2();
            let threshold = detector.t_diag.max(1.0);
            let guess = (2.0 * threshold * s as f64 * log2_2p / (vartheta * vartheta).max(1e-12)).ceil() + 1.0;
            (50.0 * guess).min(1e9) as u64
        });
        self.z + cap
    }

    fn draw_theta(&self, rng: &mut StreamRng) -> Result<Vec<f64>> {
        match &self.signal {
            SignalSpec::Null => Ok(vec![0.0; self.p]),
            SignalSpec::Fixed(theta) => {
                if theta.len() != self.p {
                    return Err(Error::DimensionMismatch {
                        expected: self.p,
                        got: theta.len(),
                    });
                }
                Ok(theta.clone())
            }
            SignalSpec::Shaped { s, vartheta, shape } => sample_signal(self.p, *s, *vartheta, *shape, rng),
        }
    }
}

/// Gaussian stream with a mean change after observation `z`.
pub struct ChangeStream<'a, R: Rng> {
    theta: &'a [f64],
    z: u64,
    t: u64,
    rng: R,
}

impl<'a, R: Rng> ChangeStream<'a, R> {
    pub fn new(theta: &'a [f64], z: u64, rng: R) -> Self {
        Self { theta, z, t: 0, rng }
    }

    /// Writes the next observation into `x`.
    pub fn fill_next(&mut self, x: &mut [f64]) {
        self.t += 1;
        let post = self.t > self.z;
        for (v, th) in x.iter_mut().zip(self.theta) {
            let noise: f64 = self.rng.sample(StandardNormal);
            *v = if post { noise + th } else { noise };
        }
    }
}

impl<R: Rng> Iterator for ChangeStream<'_, R> {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        let mut x = vec![0.0; self.theta.len()];
        self.fill_next(&mut x);
        Some(x)
    }
}

/// One simulated repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub theta: Vec<f64>,
    pub z: u64,
    /// `None` when censored.
    pub result: Option<InferenceResult>,
}

/// Runs detection and inference on one repetition's stream. Extra
/// observations after the declaration are always available.
pub fn simulate_run(
    scenario: &Scenario,
    detector: &DetectorConfig,
    inference: &InferenceConfig,
    rng: &mut StreamRng,
) -> Result<RunRecord> {
    inference.check_variant(detector.variant)?;
    let theta = scenario.draw_theta(rng)?;
    let horizon = scenario.horizon(detector);
    let mut stream = ChangeStream::new(&theta, scenario.z, rng);
    let mut state = DetectorState::new(detector);
    let mut x = vec![0.0; scenario.p];
    let mut declared = false;
    for _ in 0..horizon {
        stream.fill_next(&mut x);
        if state.step(detector, &x)?.declared {
            declared = true;
            break;
        }
    }
    let result = if declared {
        let extras: Vec<Vec<f64>> = stream.by_ref().take(inference.ell).collect();
        Some(infer(&state, detector, inference, &extras)?)
    } else {
        None
    };
    Ok(RunRecord {
        z: scenario.z,
        theta,
        result,
    })
}

/// Point estimate with standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub count: usize,
}

impl Estimate {
    pub fn proportion(hits: usize, count: usize) -> Option<Self> {
        (count > 0).then(|| {
            let p = hits as f64 / count as f64;
            Self {
                value: p,
                se: (p * (1.0 - p) / count as f64).sqrt(),
                count,
            }
        })
    }

    pub fn mean(values: &[f64]) -> Option<Self> {
        let n = values.len();
        (n > 0).then(|| {
            let mean = values.iter().sum::<f64>() / n as f64;
            let var = if n > 1 {
                values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            Self {
                value: mean,
                se: (var / n as f64).sqrt(),
                count: n,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub reps: usize,
    pub declared: usize,
    pub censored: usize,
    /// `P(z ∈ C)` over runs declaring after the change; undefined for null
    /// scenarios.
    pub coverage: Option<Estimate>,
    /// `P(z ∈ C)` over all declared runs, false alarms included.
    pub coverage_all: Option<Estimate>,
    /// Over the same runs as `coverage` (all declared runs when null).
    pub mean_ci_length: Option<Estimate>,
    /// `E(N − z)` over runs with `N > z`.
    pub mean_delay: Option<Estimate>,
    /// Fraction of all repetitions declaring at `N ≤ z`.
    pub false_alarm_rate: Estimate,
    /// `P(Ŝ ⊆ S_β)` over all declared runs.
    pub support_fp_free_rate: Option<Estimate>,
    /// `P(Ŝ ∪ {ĵ} ⊇ S(θ))` over all declared runs.
    pub support_fn_free_rate: Option<Estimate>,
}

impl ExperimentReport {
    pub fn from_records(records: &[RunRecord], grid: &ScaleGrid) -> Result<Self> {
        let reps = records.len();
        let mut declared = 0;
        let mut covered = 0;
        let mut covered_all = 0;
        let mut false_alarms = 0;
        let mut lengths = Vec::new();
        let mut delays = Vec::new();
        let mut fp_free = 0;
        let mut fn_free = 0;
        let mut support_runs = 0;
        for rec in records {
            let Some(res) = &rec.result else { continue };
            declared += 1;
            let n = res.anchor.n;
            if n <= rec.z {
                false_alarms += 1;
            } else {
                delays.push((n - rec.z) as f64);
            }
            if res.covers(rec.z) {
                covered_all += 1;
                if n > rec.z {
                    covered += 1;
                }
            }
            let null = rec.theta.iter().all(|&v| v == 0.0);
            if null || n > rec.z {
                lengths.push(res.ci_length() as f64);
            }
            if rec.theta.iter().any(|&v| v != 0.0) {
                let eff = effective_support(&rec.theta, grid)?;
                support_runs += 1;
                if res.support.iter().all(|j| eff.s_beta.binary_search(j).is_ok()) {
                    fp_free += 1;
                }
                if eff
                    .support
                    .iter()
                    .all(|j| *j == res.anchor.anchor_j || res.support.binary_search(j).is_ok())
                {
                    fn_free += 1;
                }
            }
        }
        let has_change = support_runs > 0;
        Ok(Self {
            reps,
            declared,
            censored: reps - declared,
            coverage: if has_change {
                Estimate::proportion(covered, declared - false_alarms)
            } else {
                None
            },
            coverage_all: if has_change {
                Estimate::proportion(covered_all, declared)
            } else {
                None
            },
            mean_ci_length: Estimate::mean(&lengths),
            mean_delay: Estimate::mean(&delays),
            false_alarm_rate: Estimate::proportion(false_alarms, reps).unwrap_or(Estimate {
                value: f64::NAN,
                se: f64::NAN,
                count: 0,
            }),
            support_fp_free_rate: Estimate::proportion(fp_free, support_runs),
            support_fn_free_rate: Estimate::proportion(fn_free, support_runs),
        })
    }
}

/// Repetition count, master seed and worker threads of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunPlan {
    pub reps: usize,
    pub seed: u64,
    /// 0 = rayon default.
    pub threads: usize,
}

/// All repetitions of a scenario, in repetition order.
pub fn simulate_runs(
    scenario: &Scenario,
    detector: &DetectorConfig,
    inference: &InferenceConfig,
    plan: RunPlan,
) -> Result<Vec<RunRecord>> {
    if plan.reps == 0 {
        return Err(invalid("reps", "at least one repetition is required"));
    }
    if scenario.p != detector.p() {
        return Err(Error::DimensionMismatch {
            expected: detector.p(),
            got: scenario.p,
        });
    }
    with_threads(plan.threads, || {
        (0..plan.reps)
            .into_par_iter()
            .map(|rep| simulate_run(scenario, detector, inference, &mut stream_rng(plan.seed, rep as u64)))
            .collect()
    })
}

/// Coverage, length, delay and support-recovery estimates for one scenario.
pub fn run_coverage_experiment(
    scenario: &Scenario,
    detector: &DetectorConfig,
    inference: &InferenceConfig,
    plan: RunPlan,
) -> Result<ExperimentReport> {
    let records = simulate_runs(scenario, detector, inference, plan)?;
    ExperimentReport::from_records(&records, &detector.grid)
}

/// Support-recovery rates at one value of `d1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub d1: f64,
    /// `P(Ŝ ⊆ S_β)`.
    pub fp_free: Estimate,
    /// `P(Ŝ ∪ {ĵ} ⊇ S(θ))`.
    pub fn_free: Estimate,
    pub mean_support_size: f64,
    /// Per-coordinate frequency of membership in `Ŝ ∪ {ĵ}`.
    pub selection_frequency: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocTable {
    pub reps: usize,
    pub declared: usize,
    pub points: Vec<RocPoint>,
}

/// Per-repetition outcome of a support run: for each `d1`, whether the two
/// inclusion events held and which coordinates were selected.
type SupportRun = Option<Vec<(bool, bool, Vec<usize>)>>;

/// Sweeps `d1` over the same simulated runs. The anchor and `Ξ` do not
/// depend on `d1`, so each repetition is simulated once.
pub fn run_support_experiment(
    scenario: &Scenario,
    detector: &DetectorConfig,
    inference: &InferenceConfig,
    d1_values: &[f64],
    plan: RunPlan,
) -> Result<RocTable> {
    inference.check_variant(detector.variant)?;
    if plan.reps == 0 {
        return Err(invalid("reps", "at least one repetition is required"));
    }
    if matches!(scenario.signal, SignalSpec::Null) {
        return Err(invalid("signal", "support recovery needs a non-zero change"));
    }
    if d1_values.iter().any(|d| !(*d >= 0.0)) {
        return Err(invalid("d1", "sweep values must be non-negative"));
    }
    let grid = &detector.grid;
    let runs: Vec<Result<SupportRun>> = with_threads(plan.threads, || {
        (0..plan.reps)
            .into_par_iter()
            .map(|rep| {
                let mut rng = stream_rng(plan.seed, rep as u64);
                let theta = scenario.draw_theta(&mut rng)?;
                let eff = effective_support(&theta, grid)?;
                let horizon = scenario.horizon(detector);
                let mut stream = ChangeStream::new(&theta, scenario.z, &mut rng);
                let mut state = DetectorState::new(detector);
                let mut x = vec![0.0; scenario.p];
                let mut declared = false;
                for _ in 0..horizon {
                    stream.fill_next(&mut x);
                    if state.step(detector, &x)?.declared {
                        declared = true;
                        break;
                    }
                }
                if !declared {
                    return Ok(None);
                }
                let extras: Vec<Vec<f64>> = stream.by_ref().take(inference.ell).collect();
                let (anchor, xi) = select_anchor(&state, detector, &extras, inference.ell)?;
                Ok(Some(
                    d1_values
                        .iter()
                        .map(|&d1| {
                            let est = estimate_support(&xi, &anchor, grid, d1);
                            let fp = est.support.iter().all(|j| eff.s_beta.binary_search(j).is_ok());
                            let fnf = eff
                                .support
                                .iter()
                                .all(|j| *j == anchor.anchor_j || est.support.binary_search(j).is_ok());
                            let mut selected = est.support;
                            selected.push(anchor.anchor_j);
                            (fp, fnf, selected)
                        })
                        .collect(),
                ))
            })
            .collect()
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let declared: Vec<_> = runs.iter().flatten().collect();
    let n = declared.len();
    let points = d1_values
        .iter()
        .enumerate()
        .map(|(k, &d1)| {
            let mut freq = vec![0.0; scenario.p];
            let mut fp = 0;
            let mut fnf = 0;
            let mut size = 0usize;
            for run in &declared {
                let (a, b, sel) = &run[k];
                fp += *a as usize;
                fnf += *b as usize;
                size += sel.len() - 1;
                for &j in sel {
                    freq[j] += 1.0;
                }
            }
            if n > 0 {
                freq.iter_mut().for_each(|f| *f /= n as f64);
            }
            let empty = Estimate {
                value: f64::NAN,
                se: f64::NAN,
                count: 0,
            };
            RocPoint {
                d1,
                fp_free: Estimate::proportion(fp, n).unwrap_or(empty),
                fn_free: Estimate::proportion(fnf, n).unwrap_or(empty),
                mean_support_size: if n > 0 { size as f64 / n as f64 } else { f64::NAN },
                selection_frequency: freq,
            }
        })
        .collect();
    Ok(RocTable {
        reps: plan.reps,
        declared: n,
        points,
    })
}

/// Fixed-precision rendering with six significant digits; `NA` for missing.
pub fn format_sig(v: f64) -> String {
    if !v.is_finite() {
        return "NA".to_string();
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

fn opt_pair(e: Option<Estimate>) -> (String, String) {
    match e {
        Some(e) => (format_sig(e.value), format_sig(e.se)),
        None => ("NA".into(), "NA".into()),
    }
}

/// Column names of [`write_report_csv`] after the caller's label columns.
pub const REPORT_COLUMNS: [&str; 18] = [
    "reps",
    "declared",
    "censored",
    "coverage",
    "coverage_se",
    "coverage_all",
    "coverage_all_se",
    "mean_ci_length",
    "mean_ci_length_se",
    "mean_delay",
    "mean_delay_se",
    "false_alarm_rate",
    "false_alarm_rate_se",
    "support_fp_free",
    "support_fp_free_se",
    "support_fn_free",
    "support_fn_free_se",
    "delay_runs",
];

/// Writes a header and one row: `labels` (name, value) pairs followed by the
/// report columns.
pub fn write_report_csv<W: Write>(out: W, labels: &[(&str, String)], report: &ExperimentReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<&str> = labels.iter().map(|l| l.0).chain(REPORT_COLUMNS).collect();
    w.write_record(&header)?;
    let (cov, cov_se) = opt_pair(report.coverage);
    let (cov_all, cov_all_se) = opt_pair(report.coverage_all);
    let (len, len_se) = opt_pair(report.mean_ci_length);
    let (del, del_se) = opt_pair(report.mean_delay);
    let (fa, fa_se) = opt_pair(Some(report.false_alarm_rate));
    let (fp, fp_se) = opt_pair(report.support_fp_free_rate);
    let (fnf, fn_se) = opt_pair(report.support_fn_free_rate);
    let row: Vec<String> = labels
        .iter()
        .map(|l| l.1.clone())
        .chain([
            report.reps.to_string(),
            report.declared.to_string(),
            report.censored.to_string(),
            cov,
            cov_se,
            cov_all,
            cov_all_se,
            len,
            len_se,
            del,
            del_se,
            fa,
            fa_se,
            fp,
            fp_se,
            fnf,
            fn_se,
            report.mean_delay.map_or(0, |e| e.count).to_string(),
        ])
        .collect();
    w.write_record(&row)?;
    w.flush()?;
    Ok(())
}

/// ROC rows (`d1`, rates, SEs, mean support size) and, separately, the
/// per-coordinate selection frequencies in long format.
pub fn write_roc_csv<W: Write>(out: W, labels: &[(&str, String)], table: &RocTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<&str> = labels
        .iter()
        .map(|l| l.0)
        .chain([
            "reps",
            "declared",
            "d1",
            "support_fp_free",
            "support_fp_free_se",
            "support_fn_free",
            "support_fn_free_se",
            "mean_support_size",
        ])
        .collect();
    w.write_record(&header)?;
    for pt in &table.points {
        let row: Vec<String> = labels
            .iter()
            .map(|l| l.1.clone())
            .chain([
                table.reps.to_string(),
                table.declared.to_string(),
                format_sig(pt.d1),
                format_sig(pt.fp_free.value),
                format_sig(pt.fp_free.se),
                format_sig(pt.fn_free.value),
                format_sig(pt.fn_free.se),
                format_sig(pt.mean_support_size),
            ])
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_selection_csv<W: Write>(out: W, table: &RocTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["d1", "coordinate", "frequency"])?;
    for pt in &table.points {
        for (j, f) in pt.selection_frequency.iter().enumerate() {
            w.write_record([format_sig(pt.d1), j.to_string(), format_sig(*f)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Short human-readable summary for diagnostics.
pub fn summarize(report: &ExperimentReport) -> String {
    let mut s = String::new();
    let fmt = |e: Option<Estimate>| e.map_or("NA".to_string(), |e| format!("{} ({})", format_sig(e.value), format_sig(e.se)));
    let _ = write!(
        s,
        "reps={} declared={} coverage={} length={} delay={} false_alarm={}",
        report.reps,
        report.declared,
        fmt(report.coverage),
        fmt(report.mean_ci_length),
        fmt(report.mean_delay),
        fmt(Some(report.false_alarm_rate)),
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::Variant;
    use approx::assert_relative_eq;

    #[test]
    fn deterministic_shapes() {
        let mut rng = stream_rng(0, 0);
        let th = sample_signal(3, 3, 3f64.sqrt(), SignalShape::Uniform, &mut rng).unwrap();
        for v in th {
            assert_relative_eq!(v, 1.0, max_relative = 1e-15);
        }
        let th = sample_signal(4, 2, 5f64.sqrt(), SignalShape::Harmonic, &mut rng).unwrap();
        assert_relative_eq!(th[0], 2.0, max_relative = 1e-15);
        assert_relative_eq!(th[1], 1.0, max_relative = 1e-15);
        assert_eq!(&th[2..], &[0.0, 0.0]);
        let th = sample_signal(5, 4, 1.0, SignalShape::InvSqrt, &mut rng).unwrap();
        assert_relative_eq!(th[0] / th[3], 2.0, max_relative = 1e-14);
    }

    #[test]
    fn sphere_draws() {
        let mut rng = stream_rng(3, 1);
        for s in [1, 2, 7, 20] {
            let th = sample_signal(20, s, 2.5, SignalShape::SphereUniform, &mut rng).unwrap();
            assert_eq!(th.iter().filter(|v| **v != 0.0).count(), s);
            assert_relative_eq!(l2_norm(&th), 2.5, max_relative = 1e-12);
        }
        assert!(sample_signal(5, 6, 1.0, SignalShape::Uniform, &mut rng).is_err());
        assert!(sample_signal(5, 0, 1.0, SignalShape::Uniform, &mut rng).is_err());
        assert!(sample_signal(5, 2, 0.0, SignalShape::Uniform, &mut rng).is_err());
    }

    #[test]
    fn effective_support_examples() {
        let g2 = ScaleGrid::new(2, 1.0).unwrap();
        let r = effective_support(&[1.0, 0.0], &g2).unwrap();
        assert_eq!((r.s_eff, r.support.clone()), (1, vec![0]));

        let g8 = ScaleGrid::new(8, 1.0).unwrap();
        let theta = [1.0; 8];
        // With equal entries the s = 1 threshold ‖θ‖/√(log₂16) = √8/2 > 1
        // rejects everything, s = 2 gives √8/√8 = 1 and admits all eight.
        let r = effective_support(&theta, &g8).unwrap();
        assert_eq!(r.s_eff, 2);
        assert!(effective_support(&[0.0; 8], &g8).is_err());
        assert!(effective_support(&[1.0; 3], &g8).is_err());
    }

    #[test]
    fn format_significant_digits() {
        assert_eq!(format_sig(0.962), "0.962000");
        assert_eq!(format_sig(20.1), "20.1000");
        assert_eq!(format_sig(123456.0), "123456");
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(f64::NAN), "NA");
    }

    #[test]
    fn single_rep_report_matches_run() {
        let grid = ScaleGrid::new(5, 1.0).unwrap();
        let det = DetectorConfig::new(grid.clone(), 1.0, 8.0, 30.0, Variant::Ocd).unwrap();
        let inf = InferenceConfig::with_default_d2(1.0, 0, 0.05).unwrap();
        let sc = Scenario::new(5, 40, SignalSpec::Fixed(vec![2.0, 0.0, 0.0, 0.0, 0.0]));
        let plan = RunPlan {
            reps: 1,
            seed: 9,
            threads: 1,
        };
        let report = run_coverage_experiment(&sc, &det, &inf, plan).unwrap();
        let rec = simulate_run(&sc, &det, &inf, &mut stream_rng(9, 0)).unwrap();
        let res = rec.result.unwrap();
        assert_eq!(report.declared, 1);
        assert_eq!(report.coverage.unwrap().value, res.covers(40) as u8 as f64);
        assert_eq!(report.mean_ci_length.unwrap().value, res.ci_length() as f64);
    }
}
