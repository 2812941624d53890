mod tuning;

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ocdci_core::calibration::{
    monte_carlo_thresholds, practical_preset, theoretical_preset, MonteCarloSettings, TheoreticalInputs,
    MIN_CALIBRATION_REPS,
};
use ocdci_core::ingest::{preprocess, PreprocessSpec};
use ocdci_core::inference::InferenceRecord;
use ocdci_core::monitor::{monitor, MonitorSession};
use ocdci_core::simulation::{
    run_coverage_experiment, run_support_experiment, write_report_csv, write_roc_csv, write_selection_csv, RunPlan,
    Scenario, SignalSpec,
};
use ocdci_core::{Provenance, ScaleGrid, SignalShape, TuningPreset, Variant};
use serde::Serialize;

use tuning::{Calibrator, Resolved, TuningArgs};

#[derive(Debug, Parser)]
#[command(name = "ocdci", version, about = "Online changepoint detection with confidence intervals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monitor a CSV of series and report each declared change.
    Detect(DetectArgs),
    /// Estimate coverage, interval length and delay by simulation.
    SimulateCoverage(SimulateArgs),
    /// Estimate support recovery rates over a sweep of d1 values.
    SimulateSupport(SupportArgs),
    /// Calibrate thresholds on simulated null streams and write a preset.
    Calibrate(CalibrateArgs),
    /// Write the closed-form or practical preset.
    Preset(PresetArgs),
}

#[derive(Debug, clap::Args)]
struct DetectArgs {
    /// CSV with a header row of series names; `-` reads standard input.
    #[arg(long, default_value = "-")]
    input: PathBuf,
    /// Dimension check: fails if the retained series count differs.
    #[arg(long)]
    p: Option<usize>,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Leading rows used to standardize each series.
    #[arg(long)]
    train_rows: usize,
    /// Take square roots before standardizing.
    #[arg(long)]
    sqrt: bool,
    /// Clip standardized values to [-clip, clip].
    #[arg(long)]
    clip: Option<f64>,
    /// Rows skipped after each declaration (and its extra observations).
    #[arg(long, default_value_t = 0)]
    cooldown: usize,
    /// First row fed to the detector [default: --train-rows].
    #[arg(long)]
    start_row: Option<usize>,
    /// JSON-lines output; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, clap::Args)]
struct RunArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    /// Worker threads; 0 uses all cores.
    #[arg(long, env = "OCDCI_THREADS", default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, clap::Args)]
struct ScenarioArgs {
    #[arg(long)]
    p: usize,
    /// Number of non-zero entries of the change.
    #[arg(long)]
    s: usize,
    /// ℓ₂ norm of the change.
    #[arg(long)]
    vartheta: f64,
    #[arg(long, value_enum, default_value_t = ShapeArg::Sphere)]
    shape: ShapeArg,
    /// Changepoint.
    #[arg(long, default_value_t = 1000)]
    z: u64,
    /// Runs still undeclared this many observations after z are censored.
    #[arg(long)]
    max_post_change: Option<u64>,
    /// Calibrate thresholds by simulation with this many null runs of
    /// length --gamma when no thresholds are given.
    #[arg(long)]
    calib_reps: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ShapeArg {
    Sphere,
    Uniform,
    InvSqrt,
    Harmonic,
}

impl From<ShapeArg> for SignalShape {
    fn from(s: ShapeArg) -> Self {
        match s {
            ShapeArg::Sphere => SignalShape::SphereUniform,
            ShapeArg::Uniform => SignalShape::Uniform,
            ShapeArg::InvSqrt => SignalShape::InvSqrt,
            ShapeArg::Harmonic => SignalShape::Harmonic,
        }
    }
}

#[derive(Debug, clap::Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    #[command(flatten)]
    run: RunArgs,
    /// CSV report; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct SupportArgs {
    #[command(flatten)]
    sim: SimulateArgs,
    /// Comma-separated d1 values [default: the resolved d1].
    #[arg(long, value_delimiter = ',')]
    d1_grid: Vec<f64>,
    /// Per-coordinate selection frequencies (CSV).
    #[arg(long)]
    selection_output: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct CalibrateArgs {
    #[arg(long)]
    p: usize,
    #[arg(long)]
    beta: f64,
    /// Length of each simulated null stream.
    #[arg(long)]
    gamma: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    c: f64,
    #[arg(long, value_parser = parse_variant, default_value = "ocd")]
    variant: Variant,
    #[arg(long, default_value_t = 0)]
    ell: usize,
    #[command(flatten)]
    run: RunArgs,
    /// Preset file (TOML); standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetKind {
    Theoretical,
    Practical,
}

#[derive(Debug, clap::Args)]
struct PresetArgs {
    #[arg(long)]
    p: usize,
    #[arg(long)]
    gamma: f64,
    /// Only affects `a` through (β⁻² ∨ 1) and the extra-sampling length.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = PresetKind::Theoretical)]
    kind: PresetKind,
    #[arg(long, default_value_t = 8f64.sqrt())]
    c1: f64,
    #[arg(long, default_value_t = 1.0)]
    c2: f64,
    #[arg(long, default_value_t = 1.0)]
    c3: f64,
    /// Sparsity hint; values ≥ 2 set the extra-sampling length.
    #[arg(long)]
    s_hint: Option<usize>,
    /// Multiplier for the practical d1.
    #[arg(long, default_value_t = 0.5)]
    c: f64,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: ocdci_core::Error| e.to_string())
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

#[derive(Serialize)]
struct DetectRecord<'a> {
    segment_start_row: usize,
    declaration_row: usize,
    ci_left_row: i64,
    ci_right_row: i64,
    anchor_name: &'a str,
    support_names: Vec<&'a str>,
    #[serde(flatten)]
    record: InferenceRecord,
}

fn detect(args: DetectArgs) -> Result<()> {
    let spec = PreprocessSpec::new(args.train_rows, args.sqrt, args.clip)?;
    let data = if args.input.as_os_str() == "-" {
        let mut buf = Vec::new();
        io::stdin().read_to_end(&mut buf)?;
        preprocess(buf.as_slice(), &spec)?
    } else {
        let file = File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
        preprocess(file, &spec)?
    };
    let p = data.p();
    if let Some(expected) = args.p {
        if expected != p {
            bail!("--p {expected} but the data retain {p} series after preprocessing");
        }
    }
    if p < 2 {
        bail!("need at least two series, found {p}");
    }
    let Resolved { detector, inference } = args.tuning.resolve(p, None)?;
    let session = MonitorSession {
        detector,
        inference,
        cooldown: args.cooldown,
        start_row: args.start_row.unwrap_or(args.train_rows),
    };
    let records = monitor(&data.rows, &session)?;
    let mut out = open_output(args.output.as_deref())?;
    for rec in &records {
        let result = rec.result.as_ref().expect("monitor attaches results");
        let line = DetectRecord {
            segment_start_row: rec.segment_start_row,
            declaration_row: rec.declaration_row,
            ci_left_row: rec.ci_left_row,
            ci_right_row: rec.ci_right_row,
            anchor_name: &data.names[result.anchor.anchor_j],
            support_names: result.support.iter().map(|&j| data.names[j].as_str()).collect(),
            record: InferenceRecord::new(result, &session.detector, &session.inference),
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    out.flush()?;
    log::info!("{} declaration(s)", records.len());
    Ok(())
}

fn mc_calibrator(gamma: Option<f64>, reps: usize, run: &RunArgs) -> Result<Box<Calibrator>> {
    let gamma = gamma.context("--calib-reps needs --gamma")?;
    if !(gamma >= 1.0 && gamma.fract() == 0.0) {
        bail!("--gamma must be a positive integer for calibration, got {gamma}");
    }
    let (seed, threads) = (run.seed, run.threads);
    Ok(Box::new(move |grid: &ScaleGrid, a: f64, variant: Variant| {
        let mut settings = MonteCarloSettings::new(grid.clone(), gamma as u64, a, variant, reps, seed ^ 0x5eed);
        settings.threads = threads;
        let t = monte_carlo_thresholds(&settings)?;
        log::info!("calibrated T_diag = {}, T_off = {}", t.t_diag, t.t_off);
        Ok((t.t_diag, t.t_off))
    }))
}

fn resolve_simulation(sim: &SimulateArgs) -> Result<(Resolved, Scenario, RunPlan)> {
    let sc = &sim.scenario;
    let calibrator = sc
        .calib_reps
        .map(|reps| mc_calibrator(sim.tuning.gamma, reps, &sim.run))
        .transpose()?;
    let resolved = sim.tuning.resolve(sc.p, calibrator.as_deref())?;
    let mut scenario = Scenario::new(
        sc.p,
        sc.z,
        SignalSpec::Shaped {
            s: sc.s,
            vartheta: sc.vartheta,
            shape: sc.shape.into(),
        },
    );
    scenario.max_post_change = sc.max_post_change;
    let plan = RunPlan {
        reps: sim.run.reps,
        seed: sim.run.seed,
        threads: sim.run.threads,
    };
    Ok((resolved, scenario, plan))
}

fn labels(sim: &SimulateArgs, r: &Resolved) -> Vec<(&'static str, String)> {
    let fmt = ocdci_core::simulation::format_sig;
    let sc = &sim.scenario;
    vec![
        ("p", sc.p.to_string()),
        ("s", sc.s.to_string()),
        ("vartheta", fmt(sc.vartheta)),
        ("beta", fmt(r.detector.grid.beta())),
        ("shape", SignalShape::from(sc.shape).to_string()),
        ("z", sc.z.to_string()),
        ("variant", r.detector.variant.to_string()),
        ("a", fmt(r.detector.a)),
        ("t_diag", fmt(r.detector.t_diag)),
        ("t_off", fmt(r.detector.t_off)),
        ("d1", fmt(r.inference.d1)),
        ("d2", fmt(r.inference.d2)),
        ("ell", r.inference.ell.to_string()),
        ("seed", sim.run.seed.to_string()),
    ]
}

fn simulate_coverage(sim: SimulateArgs) -> Result<()> {
    let (resolved, scenario, plan) = resolve_simulation(&sim)?;
    let report = run_coverage_experiment(&scenario, &resolved.detector, &resolved.inference, plan)?;
    log::info!("{}", ocdci_core::simulation::summarize(&report));
    let mut out = open_output(sim.output.as_deref())?;
    write_report_csv(&mut out, &labels(&sim, &resolved), &report)?;
    out.flush()?;
    Ok(())
}

fn simulate_support(args: SupportArgs) -> Result<()> {
    let sim = &args.sim;
    let (resolved, scenario, plan) = resolve_simulation(sim)?;
    let grid = if args.d1_grid.is_empty() {
        vec![resolved.inference.d1]
    } else {
        args.d1_grid.clone()
    };
    let table = run_support_experiment(&scenario, &resolved.detector, &resolved.inference, &grid, plan)?;
    let mut all = labels(sim, &resolved);
    all.retain(|(k, _)| *k != "d1" && *k != "d2");
    let mut out = open_output(sim.output.as_deref())?;
    write_roc_csv(&mut out, &all, &table)?;
    out.flush()?;
    if let Some(path) = &args.selection_output {
        let mut sel = open_output(Some(path))?;
        write_selection_csv(&mut sel, &table)?;
        sel.flush()?;
    }
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    if args.run.reps < MIN_CALIBRATION_REPS {
        bail!("--reps must be at least {MIN_CALIBRATION_REPS}");
    }
    if args.variant == Variant::Ocd && args.ell > 0 {
        bail!("--ell {} requires --variant ocd-prime", args.ell);
    }
    let grid = ScaleGrid::new(args.p, args.beta)?;
    let practical = practical_preset(args.p, args.alpha, args.c)?;
    let a = args.a.unwrap_or(practical.a);
    let mut settings = MonteCarloSettings::new(grid, args.gamma, a, args.variant, args.run.reps, args.run.seed);
    settings.threads = args.run.threads;
    let t = monte_carlo_thresholds(&settings)?;
    let preset = TuningPreset {
        a,
        t_diag: t.t_diag,
        t_off: t.t_off,
        d1: practical.d1,
        d2: practical.d2,
        ell: args.ell,
        provenance: Provenance::MonteCarlo,
        p: Some(args.p),
        gamma: Some(args.gamma as f64),
        beta: Some(args.beta),
        alpha: Some(args.alpha),
        variant: Some(args.variant),
    };
    let mut out = open_output(args.output.as_deref())?;
    out.write_all(preset.to_toml().as_bytes())?;
    out.flush()?;
    Ok(())
}

fn preset(args: PresetArgs) -> Result<()> {
    let preset = match args.kind {
        PresetKind::Theoretical => {
            let mut inputs = TheoreticalInputs::new(args.p, args.gamma, args.beta, args.alpha);
            inputs.c1 = args.c1;
            inputs.c2 = args.c2;
            inputs.c3 = args.c3;
            inputs.s_hint = args.s_hint;
            theoretical_preset(&inputs)?
        }
        PresetKind::Practical => {
            let mut p = ocdci_core::calibration::practical_with_theoretical_thresholds(
                args.p, args.gamma, args.alpha, args.c,
            )?;
            p.beta = Some(args.beta);
            p
        }
    };
    let mut out = open_output(args.output.as_deref())?;
    out.write_all(preset.to_toml().as_bytes())?;
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Detect(a) => detect(a),
        Command::SimulateCoverage(a) => simulate_coverage(a),
        Command::SimulateSupport(a) => simulate_support(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Preset(a) => preset(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
