//! Streaming multiscale detector.
//!
//! For every coordinate `j` and signed scale `b` the detector keeps a
//! one-sided CUSUM in the form of a residual tail length `t_b^j` and the
//! vector `A_b^{·,j}` of per-coordinate sums over that tail. The diagonal
//! statistic is the largest CUSUM value; the off-diagonal statistic
//! aggregates hard-thresholded, normalised tail sums of the *other*
//! coordinates. The `OcdPrime` variant additionally maintains reduced tails
//! `τ_b^j ∈ [t/2, 3t/4]` (restarted at dyadic tail lengths) and uses those
//! for the off-diagonal aggregate.
//!
//! State size depends only on `p`; nothing about the observation history is
//! retained beyond these fixed-size accumulators.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{ScaleGrid, SignedScale};

/// Which base detector drives the off-diagonal statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Off-diagonal statistics use the full residual tails.
    Ocd,
    /// Off-diagonal statistics use the reduced, dyadically restarted tails.
    OcdPrime,
}

impl Variant {
    fn code(self) -> u8 {
        match self {
            Variant::Ocd => 0,
            Variant::OcdPrime => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Variant::Ocd),
            1 => Some(Variant::OcdPrime),
            _ => None,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ocd" => Ok(Variant::Ocd),
            "ocd-prime" | "ocd'" => Ok(Variant::OcdPrime),
            other => Err(invalid("variant", format!("unknown variant `{other}`"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Ocd => "ocd",
            Variant::OcdPrime => "ocd-prime",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub grid: ScaleGrid,
    /// Hard threshold applied to normalised tail sums inside `Q`.
    pub a: f64,
    pub t_diag: f64,
    pub t_off: f64,
    pub variant: Variant,
}

impl DetectorConfig {
    pub fn new(grid: ScaleGrid, a: f64, t_diag: f64, t_off: f64, variant: Variant) -> Result<Self> {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(invalid("a", format!("must be finite and non-negative, got {a}")));
        }
        if !(t_diag > 0.0) {
            return Err(invalid("t_diag", format!("must be positive, got {t_diag}")));
        }
        if !(t_off > 0.0) {
            return Err(invalid("t_off", format!("must be positive, got {t_off}")));
        }
        Ok(Self {
            grid,
            a,
            t_diag,
            t_off,
            variant,
        })
    }

    /// Same configuration with thresholds that can never be crossed. Used to
    /// record null maxima during calibration.
    pub fn without_stopping(&self) -> Self {
        Self {
            t_diag: f64::INFINITY,
            t_off: f64::INFINITY,
            ..self.clone()
        }
    }

    pub fn p(&self) -> usize {
        self.grid.p()
    }
}

/// Stopping time and anchor pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Declaration {
    /// Stopping time `N` (1-based count of observations).
    pub n: u64,
    /// Anchor coordinate `ĵ` (0-based).
    pub anchor_j: usize,
    /// Anchor signed scale `b̂`, always in `B`.
    pub anchor_scale: SignedScale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub declared: bool,
    pub s_diag: f64,
    pub s_off: f64,
    pub declaration: Option<Declaration>,
}

/// Reduced-tail bookkeeping of the `OcdPrime` variant.
#[derive(Debug, Clone, PartialEq)]
struct Reduced {
    tau: Vec<u64>,
    tau_tilde: Vec<u64>,
    lambda: Vec<f64>,
    lambda_tilde: Vec<f64>,
}

impl Reduced {
    fn new(columns: usize, p: usize) -> Self {
        Self {
            tau: vec![0; columns],
            tau_tilde: vec![0; columns],
            lambda: vec![0.0; columns * p],
            lambda_tilde: vec![0.0; columns * p],
        }
    }

    /// Dyadic update for column `idx` after its tail length became `t`.
    #[inline]
    fn advance(&mut self, idx: usize, t: u64, x: &[f64]) {
        let p = x.len();
        let range = idx * p..(idx + 1) * p;
        if t.is_power_of_two() {
            self.tau[idx] = self.tau_tilde[idx] + 1;
            self.tau_tilde[idx] = 0;
            let (lam, lam_tilde) = (&mut self.lambda[range.clone()], &mut self.lambda_tilde[range]);
            for ((l, lt), &xi) in lam.iter_mut().zip(lam_tilde.iter_mut()).zip(x) {
                *l = *lt + xi;
                *lt = 0.0;
            }
        } else {
            self.tau[idx] += 1;
            self.tau_tilde[idx] += 1;
            let (lam, lam_tilde) = (&mut self.lambda[range.clone()], &mut self.lambda_tilde[range]);
            for ((l, lt), &xi) in lam.iter_mut().zip(lam_tilde.iter_mut()).zip(x) {
                *l += xi;
                *lt += xi;
            }
        }
    }

    fn clear(&mut self, idx: usize, p: usize) {
        self.tau[idx] = 0;
        self.tau_tilde[idx] = 0;
        self.lambda[idx * p..(idx + 1) * p].fill(0.0);
        self.lambda_tilde[idx * p..(idx + 1) * p].fill(0.0);
    }
}

/// All per-scale streaming statistics of one monitored stream.
///
/// Column `(scale, j)` lives at flat index `scale.index() * p + j`; the tail
/// sum vector of that column occupies `p` consecutive entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState {
    p: usize,
    scales: usize,
    variant: Variant,
    n: u64,
    t: Vec<u64>,
    sums: Vec<f64>,
    reduced: Option<Reduced>,
    /// Off-diagonal aggregates; entries for `B₀` stay zero.
    q: Vec<f64>,
    s_diag: f64,
    s_off: f64,
    declaration: Option<Declaration>,
}

impl DetectorState {
    pub fn new(config: &DetectorConfig) -> Self {
        let p = config.p();
        let scales = config.grid.signed_count();
        let columns = scales * p;
        Self {
            p,
            scales,
            variant: config.variant,
            n: 0,
            t: vec![0; columns],
            sums: vec![0.0; columns * p],
            reduced: (config.variant == Variant::OcdPrime).then(|| Reduced::new(columns, p)),
            q: vec![0.0; columns],
            s_diag: 0.0,
            s_off: 0.0,
            declaration: None,
        }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Number of observations consumed.
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn last_s_diag(&self) -> f64 {
        self.s_diag
    }

    pub fn last_s_off(&self) -> f64 {
        self.s_off
    }

    pub fn declaration(&self) -> Option<Declaration> {
        self.declaration
    }

    #[inline]
    fn column(&self, scale: SignedScale, j: usize) -> usize {
        assert!(j < self.p, "coordinate {j} out of range for p = {}", self.p);
        assert!(scale.index() < self.scales, "scale {scale} outside the grid");
        scale.index() * self.p + j
    }

    /// Residual tail length `t_b^j`.
    pub fn tail_length(&self, scale: SignedScale, j: usize) -> u64 {
        self.t[self.column(scale, j)]
    }

    /// Tail sums `A_b^{·,j}`.
    pub fn tail_sums(&self, scale: SignedScale, j: usize) -> &[f64] {
        let c = self.column(scale, j);
        &self.sums[c * self.p..(c + 1) * self.p]
    }

    /// Reduced tail length `τ_b^j` (`OcdPrime` only).
    pub fn reduced_length(&self, scale: SignedScale, j: usize) -> Option<u64> {
        let c = self.column(scale, j);
        self.reduced.as_ref().map(|r| r.tau[c])
    }

    /// Auxiliary reduced tail length `τ̃_b^j` (`OcdPrime` only).
    pub fn pending_length(&self, scale: SignedScale, j: usize) -> Option<u64> {
        let c = self.column(scale, j);
        self.reduced.as_ref().map(|r| r.tau_tilde[c])
    }

    /// Reduced tail sums `Λ_b^{·,j}` (`OcdPrime` only).
    pub fn reduced_sums(&self, scale: SignedScale, j: usize) -> Option<&[f64]> {
        let c = self.column(scale, j);
        let p = self.p;
        self.reduced.as_ref().map(|r| &r.lambda[c * p..(c + 1) * p])
    }

    /// Auxiliary reduced tail sums `Λ̃_b^{·,j}` (`OcdPrime` only).
    pub fn pending_sums(&self, scale: SignedScale, j: usize) -> Option<&[f64]> {
        let c = self.column(scale, j);
        let p = self.p;
        self.reduced.as_ref().map(|r| &r.lambda_tilde[c * p..(c + 1) * p])
    }

    /// Sums and tail length feeding the off-diagonal statistic of a column:
    /// `(A, t)` for `Ocd`, `(Λ, τ)` for `OcdPrime`.
    pub fn aggregation_column(&self, scale: SignedScale, j: usize) -> (&[f64], u64) {
        let c = self.column(scale, j);
        let p = self.p;
        match &self.reduced {
            None => (&self.sums[c * p..(c + 1) * p], self.t[c]),
            Some(r) => (&r.lambda[c * p..(c + 1) * p], r.tau[c]),
        }
    }

    /// Normalised column `E_b^{·,j}`.
    pub fn normalized_column(&self, scale: SignedScale, j: usize) -> Vec<f64> {
        let (col, len) = self.aggregation_column(scale, j);
        let inv = inv_sqrt_len(len);
        col.iter().map(|v| v * inv).collect()
    }

    /// Off-diagonal aggregate `Q_b^j` from the most recent step (`b ∈ B`).
    pub fn q(&self, scale: SignedScale, j: usize) -> f64 {
        self.q[self.column(scale, j)]
    }

    /// CUSUM value `b·A_b^{j,j} − b²·t_b^j/2` of a column.
    pub fn cusum(&self, grid: &ScaleGrid, scale: SignedScale, j: usize) -> f64 {
        let c = self.column(scale, j);
        let b = grid.value(scale);
        b * self.sums[c * self.p + j] - 0.5 * b * b * self.t[c] as f64
    }

    /// Heap bytes held by the state. Independent of the number of steps taken.
    pub fn footprint_bytes(&self) -> usize {
        let reduced = self.reduced.as_ref().map_or(0, |r| {
            (r.tau.capacity() + r.tau_tilde.capacity()) * 8
                + (r.lambda.capacity() + r.lambda_tilde.capacity()) * 8
        });
        std::mem::size_of::<Self>()
            + self.t.capacity() * 8
            + self.sums.capacity() * 8
            + self.q.capacity() * 8
            + reduced
    }

    fn check_config(&self, config: &DetectorConfig) -> Result<()> {
        if config.p() != self.p {
            return Err(Error::ConfigMismatch(format!(
                "state has p = {}, configuration has p = {}",
                self.p,
                config.p()
            )));
        }
        if config.grid.signed_count() != self.scales {
            return Err(Error::ConfigMismatch(format!(
                "state has {} signed scales, grid has {}",
                self.scales,
                config.grid.signed_count()
            )));
        }
        if config.variant != self.variant {
            return Err(Error::ConfigMismatch(format!(
                "state variant {} differs from configured {}",
                self.variant, config.variant
            )));
        }
        Ok(())
    }

    /// Consumes one observation.
    pub fn step(&mut self, config: &DetectorConfig, x: &[f64]) -> Result<StepOutcome> {
        self.check_config(config)?;
        if let Some(d) = self.declaration {
            return Err(Error::AlreadyDeclared { n: d.n });
        }
        if x.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: x.len(),
            });
        }
        self.n += 1;
        let p = self.p;
        let a2 = config.a * config.a;
        let mut s_diag = 0.0f64;
        let mut s_off = 0.0f64;

        for s in 0..self.scales {
            let scale = SignedScale::from_index(s);
            let b = config.grid.value(scale);
            let half_b2 = 0.5 * b * b;
            for j in 0..p {
                let idx = s * p + j;
                let prev = self.t[idx];
                let t = prev + 1;
                let col = &mut self.sums[idx * p..(idx + 1) * p];
                let cusum = b * (col[j] + x[j]) - half_b2 * t as f64;
                if cusum <= 0.0 {
                    // A column with zero tail length is already all zeros.
                    if prev > 0 {
                        self.t[idx] = 0;
                        col.fill(0.0);
                        if let Some(r) = self.reduced.as_mut() {
                            r.clear(idx, p);
                        }
                        self.q[idx] = 0.0;
                    }
                    continue;
                }
                self.t[idx] = t;
                for (c, &xi) in col.iter_mut().zip(x) {
                    *c += xi;
                }
                if let Some(r) = self.reduced.as_mut() {
                    r.advance(idx, t, x);
                }
                s_diag = s_diag.max(cusum);

                if scale.in_main_grid() {
                    let (agg, len) = match &self.reduced {
                        None => (&self.sums[idx * p..(idx + 1) * p], t),
                        Some(r) => (&r.lambda[idx * p..(idx + 1) * p], r.tau[idx]),
                    };
                    let q = off_diagonal_aggregate(agg, j, inv_sqrt_len(len), a2);
                    self.q[idx] = q;
                    s_off = s_off.max(q);
                }
            }
        }

        self.s_diag = s_diag;
        self.s_off = s_off;
        let declared = s_diag >= config.t_diag || s_off >= config.t_off;
        let declaration = declared.then(|| {
            let (anchor_j, anchor_scale) = argmax_main(&self.q, p, self.scales);
            Declaration {
                n: self.n,
                anchor_j,
                anchor_scale,
            }
        });
        self.declaration = declaration;
        Ok(StepOutcome {
            declared,
            s_diag,
            s_off,
            declaration,
        })
    }

    /// Returns the state to its freshly constructed form.
    pub fn reset(&mut self) {
        self.n = 0;
        self.t.fill(0);
        self.sums.fill(0.0);
        self.q.fill(0.0);
        if let Some(r) = self.reduced.as_mut() {
            r.tau.fill(0);
            r.tau_tilde.fill(0);
            r.lambda.fill(0.0);
            r.lambda_tilde.fill(0.0);
        }
        self.s_diag = 0.0;
        self.s_off = 0.0;
        self.declaration = None;
    }
}

#[inline]
pub(crate) fn inv_sqrt_len(len: u64) -> f64 {
    1.0 / (len.max(1) as f64).sqrt()
}

/// `Σ_{j'≠skip} E² 1{E² ≥ a²}` with `E = col · inv_norm`.
#[inline]
pub(crate) fn off_diagonal_aggregate(col: &[f64], skip: usize, inv_norm: f64, a2: f64) -> f64 {
    #[inline]
    fn partial(vals: &[f64], inv_norm: f64, a2: f64) -> f64 {
        // Four independent lanes so the loop vectorises.
        let mut acc = [0.0f64; 4];
        let chunks = vals.chunks_exact(4);
        let rest = chunks.remainder();
        for c in chunks {
            for k in 0..4 {
                let e = c[k] * inv_norm;
                let e2 = e * e;
                acc[k] += if e2 >= a2 { e2 } else { 0.0 };
            }
        }
        let mut total = (acc[0] + acc[1]) + (acc[2] + acc[3]);
        for &v in rest {
            let e = v * inv_norm;
            let e2 = e * e;
            if e2 >= a2 {
                total += e2;
            }
        }
        total
    }
    partial(&col[..skip], inv_norm, a2) + partial(&col[skip + 1..], inv_norm, a2)
}

/// Argmax of the off-diagonal aggregates over `[p] × B` with ties broken by
/// smallest coordinate, then smallest magnitude, then positive sign.
pub(crate) fn argmax_main(q: &[f64], p: usize, scales: usize) -> (usize, SignedScale) {
    let mut best = (0usize, SignedScale::positive(1));
    let mut best_val = f64::NEG_INFINITY;
    for j in 0..p {
        for s in 2..scales {
            let v = q[s * p + j];
            if v > best_val {
                best_val = v;
                best = (j, SignedScale::from_index(s));
            }
        }
    }
    best
}

/// Brute-force residual tail length: the smallest maximiser over
/// `h ∈ {0, ..., n}` of `Σ_{i=n−h+1}^{n} b·(x_i − b/2)`.
pub fn tail_length_oracle(xs: &[f64], b: f64) -> usize {
    let mut best_h = 0;
    let mut best = 0.0f64;
    let mut acc = 0.0f64;
    for (h, &x) in xs.iter().rev().enumerate() {
        acc += b * (x - b / 2.0);
        if acc > best {
            best = acc;
            best_h = h + 1;
        }
    }
    best_h
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"OCDCISNP";
const SNAPSHOT_VERSION: u16 = 1;

impl DetectorState {
    /// Serialises the state.
    ///
    /// Layout (little-endian): magic `OCDCISNP`, version `u16`, `p: u32`,
    /// variant `u8`, signed scale count `u32`, `n: u64`, `s_diag: f64`,
    /// `s_off: f64`, declaration flag `u8` followed, when set, by
    /// `N: u64`, `ĵ: u32`, scale level `u32`, negative flag `u8`. Then the
    /// arrays `t`, `A`, `Q` and, for `OcdPrime`, `τ`, `τ̃`, `Λ`, `Λ̃`, each
    /// as raw `u64`/`f64` bit patterns in column order.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.sums.len() * 8 * 3);
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.p as u32).to_le_bytes());
        out.push(self.variant.code());
        out.extend_from_slice(&(self.scales as u32).to_le_bytes());
        out.extend_from_slice(&self.n.to_le_bytes());
        out.extend_from_slice(&self.s_diag.to_bits().to_le_bytes());
        out.extend_from_slice(&self.s_off.to_bits().to_le_bytes());
        match self.declaration {
            None => out.push(0),
            Some(d) => {
                out.push(1);
                out.extend_from_slice(&d.n.to_le_bytes());
                out.extend_from_slice(&(d.anchor_j as u32).to_le_bytes());
                out.extend_from_slice(&(d.anchor_scale.level as u32).to_le_bytes());
                out.push(d.anchor_scale.negative as u8);
            }
        }
        let put_u64 = |out: &mut Vec<u8>, v: &[u64]| v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        let put_f64 =
            |out: &mut Vec<u8>, v: &[f64]| v.iter().for_each(|x| out.extend_from_slice(&x.to_bits().to_le_bytes()));
        put_u64(&mut out, &self.t);
        put_f64(&mut out, &self.sums);
        put_f64(&mut out, &self.q);
        if let Some(r) = &self.reduced {
            put_u64(&mut out, &r.tau);
            put_u64(&mut out, &r.tau_tilde);
            put_f64(&mut out, &r.lambda);
            put_f64(&mut out, &r.lambda_tilde);
        }
        out
    }

    /// Inverse of [`DetectorState::snapshot`].
    pub fn restore(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != SNAPSHOT_MAGIC {
            return Err(Error::Snapshot("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!("unsupported version {version}")));
        }
        let p = r.u32()? as usize;
        let variant = Variant::from_code(r.u8()?).ok_or_else(|| Error::Snapshot("unknown variant".into()))?;
        let scales = r.u32()? as usize;
        if p < 2 || scales < 6 || !scales.is_multiple_of(2) {
            return Err(Error::Snapshot(format!("inconsistent header p = {p}, scales = {scales}")));
        }
        let n = r.u64()?;
        let s_diag = f64::from_bits(r.u64()?);
        let s_off = f64::from_bits(r.u64()?);
        let declaration = match r.u8()? {
            0 => None,
            1 => {
                let n = r.u64()?;
                let anchor_j = r.u32()? as usize;
                let level = r.u32()? as usize;
                let negative = match r.u8()? {
                    0 => false,
                    1 => true,
                    _ => return Err(Error::Snapshot("bad sign flag".into())),
                };
                if anchor_j >= p || level == 0 || 2 * level >= scales {
                    return Err(Error::Snapshot("declaration out of range".into()));
                }
                Some(Declaration {
                    n,
                    anchor_j,
                    anchor_scale: SignedScale { level, negative },
                })
            }
            _ => return Err(Error::Snapshot("bad declaration flag".into())),
        };
        let columns = scales
            .checked_mul(p)
            .ok_or_else(|| Error::Snapshot("size overflow".into()))?;
        let cells = columns
            .checked_mul(p)
            .ok_or_else(|| Error::Snapshot("size overflow".into()))?;
        let per_array = if variant == Variant::OcdPrime { 2 * columns + 2 * cells } else { 0 };
        let expected = (columns + cells + columns + per_array) * 8;
        if r.remaining() != expected {
            return Err(Error::Snapshot(format!(
                "payload has {} bytes, expected {expected}",
                r.remaining()
            )));
        }
        let t = r.u64s(columns)?;
        let sums = r.f64s(cells)?;
        let q = r.f64s(columns)?;
        let reduced = if variant == Variant::OcdPrime {
            Some(Reduced {
                tau: r.u64s(columns)?,
                tau_tilde: r.u64s(columns)?,
                lambda: r.f64s(cells)?,
                lambda_tilde: r.f64s(cells)?,
            })
        } else {
            None
        };
        Ok(Self {
            p,
            scales,
            variant,
            n,
            t,
            sums,
            reduced,
            q,
            s_diag,
            s_off,
            declaration,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Snapshot("truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn u64s(&mut self, len: usize) -> Result<Vec<u64>> {
        (0..len).map(|_| self.u64()).collect()
    }

    fn f64s(&mut self, len: usize) -> Result<Vec<f64>> {
        (0..len).map(|_| self.u64().map(f64::from_bits)).collect()
    }
}
