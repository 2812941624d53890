//! Resolution of tuning parameters: explicit flags, then the preset file,
//! then computed defaults.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use ocdci_core::calibration::{practical_preset, theoretical_t_diag, theoretical_t_off};
use ocdci_core::{DetectorConfig, InferenceConfig, ScaleGrid, TuningPreset, Variant};

#[derive(Debug, Clone, Args)]
pub struct TuningArgs {
    /// Lower bound on the ℓ₂ norm of the mean change.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Nominal miscoverage level.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Patience; used for the closed-form thresholds.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Hard threshold in the off-diagonal statistic [default: √(2 ln p)].
    #[arg(long)]
    pub a: Option<f64>,
    /// Multiplier in d1 = c·√(ln(p/α)).
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub d1: Option<f64>,
    /// [default: 4·d1²]
    #[arg(long)]
    pub d2: Option<f64>,
    /// Post-declaration observations (ocd-prime only).
    #[arg(long)]
    pub ell: Option<usize>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub t_diag: Option<f64>,
    #[arg(long)]
    pub t_off: Option<f64>,
    /// TOML preset; explicit flags take precedence over its fields.
    #[arg(long)]
    pub preset_file: Option<PathBuf>,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: ocdci_core::Error| e.to_string())
}

pub type Calibrator = dyn Fn(&ScaleGrid, f64, Variant) -> Result<(f64, f64)>;

/// Fully resolved parameters.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub detector: DetectorConfig,
    pub inference: InferenceConfig,
}

impl TuningArgs {
    pub fn load_preset(&self) -> Result<Option<TuningPreset>> {
        self.preset_file
            .as_ref()
            .map(|path| TuningPreset::load(path).with_context(|| format!("reading preset {}", path.display())))
            .transpose()
    }

    /// `calibrate` supplies `(T_diag, T_off)` from `(grid, a, variant)` when
    /// neither flags nor the preset do; otherwise they come from `--gamma`.
    pub fn resolve(&self, p: usize, calibrate: Option<&Calibrator>) -> Result<Resolved> {
        let preset = self.load_preset()?;
        if let Some(pp) = preset.as_ref().and_then(|pr| pr.p) {
            if pp != p {
                log::warn!("preset was computed for p = {pp}, running with p = {p}");
            }
        }
        let from_preset = |f: fn(&TuningPreset) -> f64| preset.as_ref().map(f);
        let alpha = self
            .alpha
            .or(preset.as_ref().and_then(|pr| pr.alpha))
            .unwrap_or(0.05);
        let beta = self
            .beta
            .or(preset.as_ref().and_then(|pr| pr.beta))
            .context("--beta is required (or a preset file that records beta)")?;
        let c = self.c.unwrap_or(0.5);
        let practical = practical_preset(p, alpha, c)?;
        let a = self.a.or(from_preset(|pr| pr.a)).unwrap_or(practical.a);
        let d1 = match (self.d1, self.c) {
            (Some(d1), _) => d1,
            (None, Some(_)) => practical.d1,
            (None, None) => from_preset(|pr| pr.d1).unwrap_or(practical.d1),
        };
        let d2 = self
            .d2
            .or(if self.d1.is_some() || self.c.is_some() {
                None
            } else {
                from_preset(|pr| pr.d2)
            })
            .unwrap_or(4.0 * d1 * d1);
        let ell = self.ell.or(preset.as_ref().map(|pr| pr.ell)).unwrap_or(0);
        let variant = self
            .variant
            .or(preset.as_ref().and_then(|pr| pr.variant))
            .unwrap_or(if ell > 0 { Variant::OcdPrime } else { Variant::Ocd });
        if variant == Variant::Ocd && ell > 0 {
            bail!("--ell {ell} requires --variant ocd-prime");
        }
        let grid = ScaleGrid::new(p, beta)?;
        let mut t_diag = self.t_diag.or(from_preset(|pr| pr.t_diag));
        let mut t_off = self.t_off.or(from_preset(|pr| pr.t_off));
        if t_diag.is_none() || t_off.is_none() {
            let gamma = self.gamma.or(preset.as_ref().and_then(|pr| pr.gamma));
            let computed = match (calibrate, gamma) {
                (Some(f), _) => Some(f(&grid, a, variant)?),
                (None, Some(g)) => Some((theoretical_t_diag(p, g), theoretical_t_off(p, g))),
                (None, None) => None,
            };
            t_diag = t_diag.or(computed.map(|t| t.0));
            t_off = t_off.or(computed.map(|t| t.1));
        }
        let t_diag = t_diag.context("no diagonal threshold: pass --t-diag, --gamma or --preset-file")?;
        let t_off = t_off.context("no off-diagonal threshold: pass --t-off, --gamma or --preset-file")?;
        Ok(Resolved {
            detector: DetectorConfig::new(grid, a, t_diag, t_off, variant)?,
            inference: InferenceConfig::new(d1, d2, ell, alpha)?,
        })
    }
}
