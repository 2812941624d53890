//! Thresholds and tuning parameters.
//!
//! Three sources are supported: closed-form choices that carry the
//! theoretical guarantees, the lighter practical defaults used in simulation,
//! and thresholds calibrated by simulating null streams.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{DetectorConfig, DetectorState, Variant};
use crate::error::{invalid, Error, Result};
use crate::grid::ScaleGrid;
use crate::rng::{stream_rng, with_threads};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    Theoretical,
    Practical,
    MonteCarlo,
}

/// A complete set of tuning parameters, as stored in preset files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningPreset {
    pub a: f64,
    pub t_diag: f64,
    pub t_off: f64,
    pub d1: f64,
    pub d2: f64,
    pub ell: usize,
    pub provenance: Provenance,
    /// Context the preset was computed for, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
}

impl TuningPreset {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("preset serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let preset: Self = toml::from_str(text).map_err(|e| Error::Preset(e.to_string()))?;
        preset.validate()?;
        Ok(preset)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("t_diag", self.t_diag),
            ("t_off", self.t_off),
            ("d1", self.d1),
            ("d2", self.d2),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Preset(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.a >= 0.0) {
            return Err(Error::Preset(format!("a must be non-negative, got {}", self.a)));
        }
        Ok(())
    }
}

/// `T_diag = ln(16·p·γ·log₂(4p))`.
pub fn theoretical_t_diag(p: usize, gamma: f64) -> f64 {
    (16.0 * p as f64 * gamma * ((4 * p) as f64).log2()).ln()
}

/// `T_off = 8·ln(16·p·γ·log₂(2p))`.
pub fn theoretical_t_off(p: usize, gamma: f64) -> f64 {
    8.0 * (16.0 * p as f64 * gamma * ((2 * p) as f64).log2()).ln()
}

/// Inputs of the theoretical preset. The constants default to
/// `c1 = √8`, `c2 = 1`, `c3 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoreticalInputs {
    pub p: usize,
    pub gamma: f64,
    pub beta: f64,
    pub alpha: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Sparsity hint; values `≥ 2` switch on the extra-sampling formula.
    pub s_hint: Option<usize>,
}

impl TheoreticalInputs {
    pub fn new(p: usize, gamma: f64, beta: f64, alpha: f64) -> Self {
        Self {
            p,
            gamma,
            beta,
            alpha,
            c1: 8f64.sqrt(),
            c2: 1.0,
            c3: 1.0,
            s_hint: None,
        }
    }
}

pub fn theoretical_preset(inputs: &TheoreticalInputs) -> Result<TuningPreset> {
    let TheoreticalInputs {
        p,
        gamma,
        beta,
        alpha,
        c1,
        c2,
        c3,
        s_hint,
    } = *inputs;
    check_p(p)?;
    if !(gamma >= 1.0 && gamma.is_finite()) {
        return Err(invalid("gamma", format!("must be at least 1, got {gamma}")));
    }
    check_alpha(alpha)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid("beta", format!("must be positive, got {beta}")));
    }
    for (name, c) in [("c1", c1), ("c2", c2), ("c3", c3)] {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid(name, format!("must be positive, got {c}")));
        }
    }
    let clamp = beta.powi(-2).max(1.0);
    let a = c1 * (p as f64 * gamma * clamp / alpha).ln().sqrt();
    let d1 = c2 * a;
    let log2_2p = ((2 * p) as f64).log2();
    let ell = match s_hint {
        Some(s) if s >= 2 => (c3 * (a * a * s as f64 * log2_2p / (beta * beta) + 1.0)).ceil() as usize,
        _ => 0,
    };
    Ok(TuningPreset {
        a,
        t_diag: theoretical_t_diag(p, gamma),
        t_off: theoretical_t_off(p, gamma),
        d1,
        d2: 4.0 * d1 * d1,
        ell,
        provenance: Provenance::Theoretical,
        p: Some(p),
        gamma: Some(gamma),
        beta: Some(beta),
        alpha: Some(alpha),
        variant: Some(Variant::OcdPrime),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PracticalTuning {
    pub a: f64,
    pub d1: f64,
    pub d2: f64,
}

/// `a = √(2 ln p)`, `d1 = c·√(ln(p/α))`, `d2 = 4·d1²`.
pub fn practical_preset(p: usize, alpha: f64, c: f64) -> Result<PracticalTuning> {
    check_p(p)?;
    check_alpha(alpha)?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(invalid("c", format!("must be positive, got {c}")));
    }
    let a = (2.0 * (p as f64).ln()).sqrt();
    let d1 = c * (p as f64 / alpha).ln().sqrt();
    Ok(PracticalTuning { a, d1, d2: 4.0 * d1 * d1 })
}

/// Practical `a`, `d1`, `d2` combined with the closed-form thresholds.
pub fn practical_with_theoretical_thresholds(p: usize, gamma: f64, alpha: f64, c: f64) -> Result<TuningPreset> {
    let t = practical_preset(p, alpha, c)?;
    if !(gamma >= 1.0 && gamma.is_finite()) {
        return Err(invalid("gamma", format!("must be at least 1, got {gamma}")));
    }
    Ok(TuningPreset {
        a: t.a,
        t_diag: theoretical_t_diag(p, gamma),
        t_off: theoretical_t_off(p, gamma),
        d1: t.d1,
        d2: t.d2,
        ell: 0,
        provenance: Provenance::Practical,
        p: Some(p),
        gamma: Some(gamma),
        beta: None,
        alpha: Some(alpha),
        variant: Some(Variant::Ocd),
    })
}

fn check_p(p: usize) -> Result<()> {
    if p < 2 {
        return Err(invalid("p", format!("dimension must be at least 2, got {p}")));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Smallest per-run repetition count accepted by the calibration.
pub const MIN_CALIBRATION_REPS: usize = 50;

/// Settings for [`monte_carlo_thresholds`].
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSettings {
    pub gamma: u64,
    pub a: f64,
    pub grid: ScaleGrid,
    pub variant: Variant,
    pub reps: usize,
    pub seed: u64,
    /// Worker threads (0 = rayon default).
    pub threads: usize,
    /// Exceedance probability assigned to each statistic's run maximum.
    pub budget: f64,
}

impl MonteCarloSettings {
    pub fn new(grid: ScaleGrid, gamma: u64, a: f64, variant: Variant, reps: usize, seed: u64) -> Self {
        Self {
            gamma,
            a,
            grid,
            variant,
            reps,
            seed,
            threads: 0,
            budget: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloThresholds {
    pub t_diag: f64,
    pub t_off: f64,
    /// Per-repetition maxima in repetition order.
    pub diag_maxima: Vec<f64>,
    pub off_maxima: Vec<f64>,
}

/// Type-1 empirical quantile: the smallest sample `x` with `F̂(x) ≥ level`.
pub fn empirical_quantile(sorted: &[f64], level: f64) -> Option<f64> {
    if sorted.is_empty() || !(0.0..=1.0).contains(&level) {
        return None;
    }
    let rank = (level * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Largest diagonal and off-diagonal statistics over a stream, never stopping.
pub fn stream_maxima<I, X>(config: &DetectorConfig, stream: I) -> Result<(f64, f64)>
where
    I: IntoIterator<Item = X>,
    X: AsRef<[f64]>,
{
    let free = config.without_stopping();
    let mut state = DetectorState::new(&free);
    let (mut diag, mut off) = (0.0f64, 0.0f64);
    for x in stream {
        let out = state.step(&free, x.as_ref())?;
        diag = diag.max(out.s_diag);
        off = off.max(out.s_off);
    }
    Ok((diag, off))
}

/// Null-stream maxima over `gamma` standard Gaussian observations.
pub fn null_maxima<R: Rng>(config: &DetectorConfig, gamma: u64, rng: &mut R) -> (f64, f64) {
    let p = config.p();
    let mut x = vec![0.0; p];
    let free = config.without_stopping();
    let mut state = DetectorState::new(&free);
    let (mut diag, mut off) = (0.0f64, 0.0f64);
    for _ in 0..gamma {
        x.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let out = state.step(&free, &x).expect("dimensions match");
        diag = diag.max(out.s_diag);
        off = off.max(out.s_off);
    }
    (diag, off)
}

/// Calibrates `(T_diag, T_off)` so that each statistic's maximum over a null
/// run of length `γ` exceeds its threshold with probability `budget`
/// (empirically). Repetitions run in parallel and are merged in index order.
pub fn monte_carlo_thresholds(settings: &MonteCarloSettings) -> Result<MonteCarloThresholds> {
    if settings.reps < MIN_CALIBRATION_REPS {
        return Err(invalid(
            "reps",
            format!(
                "at least {MIN_CALIBRATION_REPS} repetitions are needed, got {}",
                settings.reps
            ),
        ));
    }
    if settings.gamma < 1 {
        return Err(invalid("gamma", "must be at least 1"));
    }
    if !(settings.budget > 0.0 && settings.budget < 1.0) {
        return Err(invalid("budget", format!("must lie in (0, 1), got {}", settings.budget)));
    }
    // Thresholds are irrelevant here; only the statistics are recorded.
    let config = DetectorConfig::new(settings.grid.clone(), settings.a, 1.0, 1.0, settings.variant)?;
    let maxima: Vec<(f64, f64)> = with_threads(settings.threads, || {
        (0..settings.reps)
            .into_par_iter()
            .map(|rep| null_maxima(&config, settings.gamma, &mut stream_rng(settings.seed, rep as u64)))
            .collect()
    });
    let (diag_maxima, off_maxima): (Vec<f64>, Vec<f64>) = maxima.into_iter().unzip();
    let level = 1.0 - settings.budget;
    let quantile = |v: &[f64]| {
        let mut sorted = v.to_vec();
        sorted.sort_by(f64::total_cmp);
        empirical_quantile(&sorted, level).expect("non-empty")
    };
    Ok(MonteCarloThresholds {
        t_diag: quantile(&diag_maxima),
        t_off: quantile(&off_maxima),
        diag_maxima,
        off_maxima,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn theoretical_thresholds_p100_gamma5000() {
        // 50-digit references: ln(16·100·5000·log₂400), 8·ln(16·100·5000·log₂200).
        assert_relative_eq!(theoretical_t_diag(100, 5000.0), 18.051_800_901_150_668, max_relative = 1e-13);
        assert_relative_eq!(theoretical_t_off(100, 5000.0), 143.430_834_498_937_87, max_relative = 1e-13);
    }

    #[test]
    fn gamma_times_e_shifts_thresholds() {
        let g = 1234.5;
        let e = std::f64::consts::E;
        assert_relative_eq!(theoretical_t_diag(30, g * e), theoretical_t_diag(30, g) + 1.0, max_relative = 1e-13);
        assert_relative_eq!(theoretical_t_off(30, g * e), theoretical_t_off(30, g) + 8.0, max_relative = 1e-13);
    }

    #[test]
    fn thresholds_monotone() {
        let mut prev = (0.0, 0.0);
        for p in [2, 3, 10, 100, 1000] {
            let cur = (theoretical_t_diag(p, 100.0), theoretical_t_off(p, 100.0));
            assert!(cur.0 > prev.0 && cur.1 > prev.1);
            prev = cur;
        }
        let mut prev = (0.0, 0.0);
        for gamma in [1.0, 2.0, 100.0, 1e6] {
            let cur = (theoretical_t_diag(50, gamma), theoretical_t_off(50, gamma));
            assert!(cur.0 > prev.0 && cur.1 > prev.1);
            prev = cur;
        }
    }

    #[test]
    fn theoretical_preset_formulas() {
        let mut inputs = TheoreticalInputs::new(100, 5000.0, 2.0, 0.05);
        let preset = theoretical_preset(&inputs).unwrap();
        let a = 8f64.sqrt() * (100.0f64 * 5000.0 / 0.05).ln().sqrt();
        assert_relative_eq!(preset.a, a, max_relative = 1e-14);
        assert_eq!(preset.d1, preset.a);
        assert_eq!(preset.d2, 4.0 * preset.d1 * preset.d1);
        assert_eq!(preset.ell, 0);
        assert_eq!(preset.provenance, Provenance::Theoretical);

        // beta ≥ 1 only enters through the clamp.
        inputs.beta = 7.0;
        assert_eq!(theoretical_preset(&inputs).unwrap().a, preset.a);
        inputs.beta = 0.5;
        assert!(theoretical_preset(&inputs).unwrap().a > preset.a);

        inputs.beta = 2.0;
        inputs.s_hint = Some(4);
        inputs.c3 = 0.5;
        let with_ell = theoretical_preset(&inputs).unwrap();
        let expect = (0.5 * (a * a * 4.0 * 200f64.log2() / 4.0 + 1.0)).ceil() as usize;
        assert_eq!(with_ell.ell, expect);

        inputs.s_hint = Some(1);
        assert_eq!(theoretical_preset(&inputs).unwrap().ell, 0);
    }

    #[test]
    fn theoretical_preset_rejects_bad_domain() {
        let ok = TheoreticalInputs::new(10, 100.0, 1.0, 0.1);
        for bad in [
            TheoreticalInputs { p: 1, ..ok },
            TheoreticalInputs { gamma: 0.5, ..ok },
            TheoreticalInputs { alpha: 1.0, ..ok },
            TheoreticalInputs { beta: 0.0, ..ok },
            TheoreticalInputs { c1: 0.0, ..ok },
        ] {
            assert!(theoretical_preset(&bad).is_err());
        }
    }

    #[test]
    fn practical_values() {
        let t = practical_preset(100, 0.05, 0.5).unwrap();
        assert_relative_eq!(t.a, 3.034_854_258_770_293, max_relative = 1e-13);
        assert_relative_eq!(t.d1, 1.378_486_711_900_234_7, max_relative = 1e-13);
        assert_relative_eq!(t.d2, 7.600_902_459_542_082, max_relative = 1e-13);
        let t2 = practical_preset(100, 0.05, 1.0).unwrap();
        assert_relative_eq!(t2.d1, 2.0 * t.d1, max_relative = 1e-15);
        assert_relative_eq!(t2.d2, 4.0 * t.d2, max_relative = 1e-15);
        let small = practical_preset(2, 0.5, 0.5).unwrap();
        assert_relative_eq!(small.d1, 0.588_705_011_257_737_3, max_relative = 1e-13);
        assert!(practical_preset(1, 0.05, 0.5).is_err());
        assert!(practical_preset(5, 0.0, 0.5).is_err());
        assert!(practical_preset(5, 0.05, -1.0).is_err());
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(empirical_quantile(&v, 0.5), Some(2.0));
        assert_eq!(empirical_quantile(&v, 0.51), Some(3.0));
        assert_eq!(empirical_quantile(&v, 0.0), Some(1.0));
        assert_eq!(empirical_quantile(&v, 1.0), Some(4.0));
        assert_eq!(empirical_quantile(&[], 0.5), None);
    }

    #[test]
    fn preset_toml_round_trip() {
        let preset = theoretical_preset(&TheoreticalInputs::new(20, 500.0, 1.0, 0.05)).unwrap();
        let text = preset.to_toml();
        assert!(text.contains("provenance = \"THEORETICAL\""));
        assert_eq!(TuningPreset::from_toml(&text).unwrap(), preset);
        assert!(TuningPreset::from_toml("a = 1.0").is_err());
        let bad = text.replace(&format!("t_off = {}", preset.t_off), "t_off = -1.0");
        assert!(TuningPreset::from_toml(&bad).is_err());
    }

    #[test]
    fn one_step_calibration_is_median_of_single_steps() {
        let grid = ScaleGrid::new(2, 1.0).unwrap();
        let mut s = MonteCarloSettings::new(grid.clone(), 1, 0.5, Variant::Ocd, 200, 11);
        let th = monte_carlo_thresholds(&s).unwrap();
        let config = DetectorConfig::new(grid, 0.5, 1.0, 1.0, Variant::Ocd).unwrap();
        let mut diag = Vec::new();
        let mut off = Vec::new();
        for rep in 0..200 {
            let mut rng = stream_rng(11, rep);
            let x: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            let (d, o) = stream_maxima(&config, [x]).unwrap();
            diag.push(d);
            off.push(o);
        }
        diag.sort_by(f64::total_cmp);
        off.sort_by(f64::total_cmp);
        assert_eq!(th.t_diag, diag[99]);
        assert_eq!(th.t_off, off[99]);

        let again = monte_carlo_thresholds(&s).unwrap();
        assert_eq!(again, th);

        s.reps = 49;
        assert!(monte_carlo_thresholds(&s).is_err());
    }
}
