//! Post-declaration inference.
//!
//! Once the detector stops at time `N`, the anchor column `(ĵ, b̂)` with the
//! largest off-diagonal aggregate is chosen, optionally after `ℓ` further
//! observations have been folded into the reduced tails. The normalised tail
//! sums of the anchor column score every other coordinate: coordinates that
//! clear the `d1` margin at the smallest grid scale form the support estimate,
//! and the largest certified scale `b̃ʲ` of each sets a per-coordinate budget
//! `t_{b̃ʲ}ʲ + d2/(b̃ʲ)²`. The interval is `[N − min budget, N]`, clamped at 0.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::detector::{argmax_main, inv_sqrt_len, off_diagonal_aggregate, Declaration, DetectorConfig, DetectorState, Variant};
use crate::error::{invalid, Error, Result};
use crate::grid::{ScaleGrid, SignedScale};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    /// Support margin.
    pub d1: f64,
    /// Interval slack; conventionally `4·d1²`.
    pub d2: f64,
    /// Post-declaration observations (`OcdPrime` only).
    pub ell: usize,
    /// Nominal miscoverage. Carried for reporting; the formulas use `d1`, `d2`.
    pub alpha: f64,
}

impl InferenceConfig {
    pub fn new(d1: f64, d2: f64, ell: usize, alpha: f64) -> Result<Self> {
        if !(d1 > 0.0 && d1.is_finite()) {
            return Err(invalid("d1", format!("must be positive, got {d1}")));
        }
        if !(d2 > 0.0 && d2.is_finite()) {
            return Err(invalid("d2", format!("must be positive, got {d2}")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid("alpha", format!("must lie in (0, 1), got {alpha}")));
        }
        Ok(Self { d1, d2, ell, alpha })
    }

    /// `d2 = 4·d1²`.
    pub fn with_default_d2(d1: f64, ell: usize, alpha: f64) -> Result<Self> {
        Self::new(d1, 4.0 * d1 * d1, ell, alpha)
    }

    /// Rejects combinations the detector variant cannot honour.
    pub fn check_variant(&self, variant: Variant) -> Result<()> {
        if variant == Variant::Ocd && self.ell > 0 {
            return Err(invalid(
                "ell",
                "post-declaration sampling requires the ocd-prime variant",
            ));
        }
        Ok(())
    }
}

/// Normalised tail sums after extra sampling, `Ξ_b^{·,j}`, and their
/// off-diagonal aggregates `Q̃_b^j`.
///
/// For `Ocd` (where `ℓ = 0`) these are the detector's `E` and `Q` at the
/// declaration time; for `OcdPrime` they are built on `(Λ, τ)` plus the sum
/// of the `ℓ` extra observations.
#[derive(Debug, Clone, PartialEq)]
pub struct XiStatistics {
    p: usize,
    ell: usize,
    values: Vec<f64>,
    lengths: Vec<u64>,
    q_tilde: Vec<f64>,
}

impl XiStatistics {
    fn column(&self, scale: SignedScale, j: usize) -> usize {
        scale.index() * self.p + j
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    /// `Ξ_b^{·,j}`.
    pub fn xi(&self, scale: SignedScale, j: usize) -> &[f64] {
        let c = self.column(scale, j);
        &self.values[c * self.p..(c + 1) * self.p]
    }

    /// Tail length behind `Ξ_b^{·,j}` including the extra observations.
    pub fn effective_length(&self, scale: SignedScale, j: usize) -> u64 {
        self.lengths[self.column(scale, j)]
    }

    /// `Q̃_b^j`; zero for scales in `B₀`.
    pub fn q_tilde(&self, scale: SignedScale, j: usize) -> f64 {
        self.q_tilde[self.column(scale, j)]
    }
}

/// Chooses the anchor pair after folding `extras` into the reduced tails.
pub fn select_anchor<X: AsRef<[f64]>>(
    state: &DetectorState,
    config: &DetectorConfig,
    extras: &[X],
    ell: usize,
) -> Result<(Declaration, XiStatistics)> {
    let declared = state.declaration().ok_or(Error::NotDeclared)?;
    if extras.len() != ell {
        return Err(Error::ExtrasLength {
            expected: ell,
            got: extras.len(),
        });
    }
    if state.variant() == Variant::Ocd && ell > 0 {
        return Err(invalid("ell", "post-declaration sampling requires the ocd-prime variant"));
    }
    let p = state.p();
    let mut extra_sum = vec![0.0; p];
    for x in extras {
        let x = x.as_ref();
        if x.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: x.len(),
            });
        }
        for (s, v) in extra_sum.iter_mut().zip(x) {
            *s += v;
        }
    }

    let a2 = config.a * config.a;
    let scales = config.grid.signed_count();
    let mut values = Vec::with_capacity(scales * p * p);
    let mut lengths = Vec::with_capacity(scales * p);
    let mut q_tilde = vec![0.0; scales * p];
    let mut raw = vec![0.0; p];
    for scale in config.grid.signed_scales() {
        for j in 0..p {
            let (col, len) = state.aggregation_column(scale, j);
            let eff = len + ell as u64;
            let inv = inv_sqrt_len(eff);
            for ((r, c), e) in raw.iter_mut().zip(col).zip(&extra_sum) {
                *r = c + e;
            }
            if scale.in_main_grid() {
                q_tilde[scale.index() * p + j] = off_diagonal_aggregate(&raw, j, inv, a2);
            }
            values.extend(raw.iter().map(|r| r * inv));
            lengths.push(eff);
        }
    }
    let (anchor_j, anchor_scale) = argmax_main(&q_tilde, p, scales);
    let xi = XiStatistics {
        p,
        ell,
        values,
        lengths,
        q_tilde,
    };
    Ok((
        Declaration {
            n: declared.n,
            anchor_j,
            anchor_scale,
        },
        xi,
    ))
}

/// Support estimate `Ŝ` with the shrunken scale `b̃ʲ` of each member.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SupportEstimate {
    /// Coordinates in increasing order; never contains the anchor.
    pub support: Vec<usize>,
    pub shrunken: BTreeMap<usize, SignedScale>,
}

/// Scores the non-anchor coordinates on the anchor column of `Ξ`.
pub fn estimate_support(xi: &XiStatistics, anchor: &Declaration, grid: &ScaleGrid, d1: f64) -> SupportEstimate {
    let column = xi.xi(anchor.anchor_scale, anchor.anchor_j);
    let root = (xi.effective_length(anchor.anchor_scale, anchor.anchor_j) as f64).sqrt();
    let mags = grid.magnitudes();
    let mut est = SupportEstimate::default();
    for (j, &v) in column.iter().enumerate() {
        if j == anchor.anchor_j || v.abs() - mags[0] * root < d1 {
            continue;
        }
        let level = (0..mags.len())
            .rev()
            .find(|&k| v.abs() - mags[k] * root >= d1)
            .expect("b_min passes");
        est.support.push(j);
        est.shrunken.insert(
            j,
            SignedScale {
                level,
                negative: v < 0.0,
            },
        );
    }
    est
}

/// `[max{⌊n − min_{j∈Ŝ}(t_{b̃ʲ}ʲ + d2/(b̃ʲ)²)⌋, 0}, n]`; `[0, n]` for empty `Ŝ`.
pub fn build_confidence_interval(
    state: &DetectorState,
    grid: &ScaleGrid,
    support: &SupportEstimate,
    d2: f64,
    n: u64,
) -> (u64, u64) {
    let budget = support
        .shrunken
        .iter()
        .map(|(&j, &scale)| {
            let b = grid.value(scale);
            state.tail_length(scale, j) as f64 + d2 / (b * b)
        })
        .fold(f64::INFINITY, f64::min);
    let left = (n as f64 - budget).floor().max(0.0);
    (left as u64, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrunkenScale {
    pub coordinate: usize,
    pub scale: SignedScale,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    /// Anchor used for inference (after extra sampling, if any).
    pub anchor: Declaration,
    pub support: Vec<usize>,
    pub shrunken_scales: Vec<ShrunkenScale>,
    pub ci_left: u64,
    pub ci_right: u64,
    /// Set when `Ŝ` is empty and the left endpoint is the trivial 0.
    pub uninformative_left: bool,
    pub extras_consumed: usize,
}

impl InferenceResult {
    pub fn ci_length(&self) -> u64 {
        self.ci_right - self.ci_left
    }

    pub fn covers(&self, z: u64) -> bool {
        (self.ci_left..=self.ci_right).contains(&z)
    }
}

/// Full inference on a declared state.
pub fn infer<X: AsRef<[f64]>>(
    state: &DetectorState,
    detector: &DetectorConfig,
    config: &InferenceConfig,
    extras: &[X],
) -> Result<InferenceResult> {
    let (anchor, xi) = select_anchor(state, detector, extras, config.ell)?;
    let est = estimate_support(&xi, &anchor, &detector.grid, config.d1);
    let (ci_left, ci_right) = build_confidence_interval(state, &detector.grid, &est, config.d2, anchor.n);
    Ok(InferenceResult {
        anchor,
        shrunken_scales: est
            .shrunken
            .iter()
            .map(|(&coordinate, &scale)| ShrunkenScale {
                coordinate,
                scale,
                value: detector.grid.value(scale),
            })
            .collect(),
        uninformative_left: est.support.is_empty(),
        support: est.support,
        ci_left,
        ci_right,
        extras_consumed: extras.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Declared {
        /// The detector's own declaration (anchor at time `N`, no extras).
        declaration: Declaration,
        result: InferenceResult,
    },
    /// The stream ended before either statistic crossed its threshold.
    NoDeclaration { observed: u64 },
}

impl RunOutcome {
    pub fn result(&self) -> Option<&InferenceResult> {
        match self {
            RunOutcome::Declared { result, .. } => Some(result),
            RunOutcome::NoDeclaration { .. } => None,
        }
    }
}

/// Runs detection on `stream` and, on declaration, reads `ℓ` further
/// observations and performs inference. The stream is left positioned right
/// after the last consumed observation.
pub fn run_ocd_ci<I, X>(stream: I, detector: &DetectorConfig, config: &InferenceConfig) -> Result<RunOutcome>
where
    I: IntoIterator<Item = X>,
    X: AsRef<[f64]>,
{
    let mut state = DetectorState::new(detector);
    run_with_state(&mut state, &mut stream.into_iter(), detector, config)
}

pub(crate) fn run_with_state<I, X>(
    state: &mut DetectorState,
    stream: &mut I,
    detector: &DetectorConfig,
    config: &InferenceConfig,
) -> Result<RunOutcome>
where
    I: Iterator<Item = X>,
    X: AsRef<[f64]>,
{
    config.check_variant(detector.variant)?;
    let declaration = loop {
        let Some(x) = stream.next() else {
            return Ok(RunOutcome::NoDeclaration { observed: state.n() });
        };
        if let Some(d) = state.step(detector, x.as_ref())?.declaration {
            break d;
        }
    };
    let mut extras = Vec::with_capacity(config.ell);
    for x in stream.by_ref().take(config.ell) {
        extras.push(x.as_ref().to_vec());
    }
    if extras.len() < config.ell {
        return Err(Error::ExtrasExhausted {
            expected: config.ell,
            got: extras.len(),
        });
    }
    let result = infer(state, detector, config, &extras)?;
    Ok(RunOutcome::Declared { declaration, result })
}

/// One-dimensional CUSUM at a fixed positive scale, tracking the residual
/// tail length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnivariateCusum {
    b: f64,
    value: f64,
    tail: u64,
}

impl UnivariateCusum {
    pub fn new(b: f64) -> Result<Self> {
        if !(b > 0.0 && b.is_finite()) {
            return Err(invalid("b", format!("must be positive, got {b}")));
        }
        Ok(Self { b, value: 0.0, tail: 0 })
    }

    /// `R ← max{R + b(x − b/2), 0}`; returns the updated `R`.
    pub fn update(&mut self, x: f64) -> f64 {
        self.value += self.b * (x - self.b / 2.0);
        self.tail += 1;
        if self.value <= 0.0 {
            self.value = 0.0;
            self.tail = 0;
        }
        self.value
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn tail(&self) -> u64 {
        self.tail
    }
}

/// Width `4·{Φ⁻¹(1 − α/4)}²/b²` of the univariate interval beyond the tail.
pub fn univariate_slack(b: f64, alpha: f64) -> Result<f64> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(invalid("b", format!("must be positive, got {b}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 4.0);
    Ok(4.0 * z * z / (b * b))
}

/// Univariate interval `[max{⌊N − tail − slack⌋, 0}, N]`.
pub fn univariate_ci(n: u64, tail: u64, b: f64, alpha: f64) -> Result<(u64, u64)> {
    if tail > n {
        return Err(invalid("tail", format!("tail {tail} exceeds N = {n}")));
    }
    let slack = univariate_slack(b, alpha)?;
    let left = (n as f64 - tail as f64 - slack).floor().max(0.0);
    Ok((left as u64, n))
}

/// One JSON line per declaration: result plus the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub n: u64,
    pub anchor_j: usize,
    pub anchor_scale: SignedScale,
    pub anchor_b: f64,
    pub support: Vec<usize>,
    pub shrunken_scales: BTreeMap<usize, f64>,
    pub ci_left: u64,
    pub ci_right: u64,
    pub uninformative_left: bool,
    pub config: ConfigEcho,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub p: usize,
    pub beta: f64,
    pub a: f64,
    pub t_diag: f64,
    pub t_off: f64,
    pub variant: Variant,
    pub d1: f64,
    pub d2: f64,
    pub ell: usize,
    pub alpha: f64,
}

impl ConfigEcho {
    pub fn new(detector: &DetectorConfig, inference: &InferenceConfig) -> Self {
        Self {
            p: detector.p(),
            beta: detector.grid.beta(),
            a: detector.a,
            t_diag: detector.t_diag,
            t_off: detector.t_off,
            variant: detector.variant,
            d1: inference.d1,
            d2: inference.d2,
            ell: inference.ell,
            alpha: inference.alpha,
        }
    }
}

impl InferenceRecord {
    pub fn new(result: &InferenceResult, detector: &DetectorConfig, inference: &InferenceConfig) -> Self {
        Self {
            n: result.anchor.n,
            anchor_j: result.anchor.anchor_j,
            anchor_scale: result.anchor.anchor_scale,
            anchor_b: detector.grid.value(result.anchor.anchor_scale),
            support: result.support.clone(),
            shrunken_scales: result.shrunken_scales.iter().map(|s| (s.coordinate, s.value)).collect(),
            ci_left: result.ci_left,
            ci_right: result.ci_right,
            uninformative_left: result.uninformative_left,
            config: ConfigEcho::new(detector, inference),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serialises")
    }
}
