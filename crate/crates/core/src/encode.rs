//! Spatiotemporal encoding: sampling schedules, sampling functionals,
//! frequency tagging and the microscope scan trajectory.
//!
//! An image is turned into a scalar signal `f(t)` by restricting it to a
//! time-dependent subdomain and applying a linear functional (plus a constant
//! bias `c₀` that keeps the signal separated from zero). In frequency mode all
//! strips are active at once and strip `ν` is carried by `sin²(ω_ν t)`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{apply_nonlinear, Domain, PerturbKind, PerturbParams, ScalarField};

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`, serialized as `[x0, x1, y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub const fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    pub fn from_domain(d: &Domain) -> Self {
        Self::new(d.x_min, d.x_max, d.y_min, d.y_max)
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

impl From<[f64; 4]> for Rect {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Rect> for [f64; 4] {
    fn from(r: Rect) -> Self {
        [r.x0, r.x1, r.y0, r.y1]
    }
}

/// Region sampled at one instant: a rectangle, or a single point for scanning.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Subdomain {
    Rect(Rect),
    Point(f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    /// Rectangles visited one after another, each for `period / m`.
    Sweep,
    /// Point moving along a polyline through the waypoints once per period.
    ScanLine,
    /// All strips active simultaneously, separated by carrier frequency.
    FrequencyStrips,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingSchedule {
    pub subdomains: Vec<Subdomain>,
    pub period: f64,
    pub mode: ScheduleMode,
}

impl SamplingSchedule {
    pub fn sweep(rects: Vec<Rect>, period: f64) -> Result<Self> {
        let s = Self { subdomains: rects.into_iter().map(Subdomain::Rect).collect(), period, mode: ScheduleMode::Sweep };
        s.check_shape()?;
        Ok(s)
    }

    pub fn scan_line(points: Vec<(f64, f64)>, period: f64) -> Result<Self> {
        let s = Self {
            subdomains: points.into_iter().map(|(x, y)| Subdomain::Point(x, y)).collect(),
            period,
            mode: ScheduleMode::ScanLine,
        };
        s.check_shape()?;
        Ok(s)
    }

    /// `n_rows` full-width horizontal strips followed by `n_cols` full-height
    /// vertical strips.
    pub fn frequency_strips(domain: &Domain, n_rows: usize, n_cols: usize, period: f64) -> Result<Self> {
        let mut rects = Vec::with_capacity(n_rows + n_cols);
        for r in 0..n_rows {
            let y0 = domain.y_min + domain.height() * r as f64 / n_rows as f64;
            let y1 = domain.y_min + domain.height() * (r + 1) as f64 / n_rows as f64;
            rects.push(Rect::new(domain.x_min, domain.x_max, y0, y1));
        }
        for c in 0..n_cols {
            let x0 = domain.x_min + domain.width() * c as f64 / n_cols as f64;
            let x1 = domain.x_min + domain.width() * (c + 1) as f64 / n_cols as f64;
            rects.push(Rect::new(x0, x1, domain.y_min, domain.y_max));
        }
        let s = Self {
            subdomains: rects.into_iter().map(Subdomain::Rect).collect(),
            period,
            mode: ScheduleMode::FrequencyStrips,
        };
        s.check_shape()?;
        Ok(s)
    }

    /// `rows × cols` grid of blocks, row-major from the bottom left, for
    /// frequency encoding. Unlike full-width strips, blocks separate an image
    /// from its mirror even when the image is invariant under a half turn.
    pub fn frequency_tiles(domain: &Domain, n_rows: usize, n_cols: usize, period: f64) -> Result<Self> {
        let mut rects = Vec::with_capacity(n_rows * n_cols);
        for r in 0..n_rows {
            let y0 = domain.y_min + domain.height() * r as f64 / n_rows as f64;
            let y1 = domain.y_min + domain.height() * (r + 1) as f64 / n_rows as f64;
            for c in 0..n_cols {
                let x0 = domain.x_min + domain.width() * c as f64 / n_cols as f64;
                let x1 = domain.x_min + domain.width() * (c + 1) as f64 / n_cols as f64;
                rects.push(Rect::new(x0, x1, y0, y1));
            }
        }
        let s = Self {
            subdomains: rects.into_iter().map(Subdomain::Rect).collect(),
            period,
            mode: ScheduleMode::FrequencyStrips,
        };
        s.check_shape()?;
        Ok(s)
    }

    fn check_shape(&self) -> Result<()> {
        if self.subdomains.is_empty() {
            return Err(Error::Config("sampling schedule has no subdomains".into()));
        }
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(Error::Config(format!("schedule period must be positive, got {}", self.period)));
        }
        let points = matches!(self.mode, ScheduleMode::ScanLine);
        let ok = self.subdomains.iter().all(|s| matches!(s, Subdomain::Point(..)) == points);
        if !ok {
            return Err(Error::Config(format!("{:?} schedule mixes points and rectangles", self.mode)));
        }
        Ok(())
    }

    /// Every subdomain lies inside `domain`.
    pub fn validate(&self, domain: &Domain) -> Result<()> {
        self.check_shape()?;
        for (k, s) in self.subdomains.iter().enumerate() {
            let inside = match *s {
                Subdomain::Rect(r) => {
                    r.x1 > r.x0 && r.y1 > r.y0 && domain.contains(r.x0, r.y0) && domain.contains(r.x1, r.y1)
                }
                Subdomain::Point(x, y) => domain.contains(x, y),
            };
            if !inside {
                return Err(Error::Domain(format!("subdomain {k} ({s:?}) is not inside {domain:?}")));
            }
        }
        Ok(())
    }

    /// Whether the union of rectangular subdomains covers `region`, checked on
    /// a 64×64 grid of cell midpoints.
    pub fn covers(&self, region: &Rect) -> bool {
        let n = 64;
        (0..n).all(|a| {
            let x = region.x0 + (region.x1 - region.x0) * (a as f64 + 0.5) / n as f64;
            (0..n).all(|b| {
                let y = region.y0 + (region.y1 - region.y0) * (b as f64 + 0.5) / n as f64;
                self.subdomains.iter().any(|s| matches!(s, Subdomain::Rect(r) if r.contains_point(x, y)))
            })
        })
    }

    /// Subdomain active at time `t` (sweep and scan-line modes).
    pub fn active(&self, t: f64) -> Subdomain {
        let m = self.subdomains.len();
        let phase = t.rem_euclid(self.period) / self.period;
        match self.mode {
            ScheduleMode::Sweep | ScheduleMode::FrequencyStrips => {
                let k = ((phase * m as f64).floor() as usize).min(m - 1);
                self.subdomains[k]
            }
            ScheduleMode::ScanLine => {
                if m == 1 {
                    return self.subdomains[0];
                }
                let u = phase * (m - 1) as f64;
                let k = (u.floor() as usize).min(m - 2);
                let frac = u - k as f64;
                match (self.subdomains[k], self.subdomains[k + 1]) {
                    (Subdomain::Point(x0, y0), Subdomain::Point(x1, y1)) => {
                        Subdomain::Point(x0 + frac * (x1 - x0), y0 + frac * (y1 - y0))
                    }
                    _ => unreachable!("scan-line schedules hold points only"),
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum FunctionalKind {
    /// Cell-weighted integral over the subdomain.
    StripIntegral,
    /// Integral weighted by `exp(-|x - x₀| - |y - y₀|)` around an attention point.
    ExpKernel { x0: f64, y0: f64 },
    /// Interpolated value at a point subdomain.
    ScanPoint,
    /// Spectral magnitude integrated over `[wa, wb] × [wc, wd]`. Experimental:
    /// only positively homogeneous.
    SpectralBand { wa: f64, wb: f64, wc: f64, wd: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSpec {
    pub kind: FunctionalKind,
    #[serde(default)]
    pub bias: f64,
}

impl FunctionalSpec {
    pub fn new(kind: FunctionalKind, bias: f64) -> Self {
        Self { kind, bias }
    }

    pub fn strip_integral() -> Self {
        Self::new(FunctionalKind::StripIntegral, 0.0)
    }

    pub fn with_bias(mut self, bias: f64) -> Self {
        self.bias = bias;
        self
    }

    fn check(&self) -> Result<()> {
        if !(self.bias.is_finite() && self.bias >= 0.0) {
            return Err(Error::Config(format!("bias must be finite and non-negative, got {}", self.bias)));
        }
        Ok(())
    }

    /// Lipschitz constant `D₂` of the functional on `subdomain` with respect
    /// to the sup norm.
    pub fn lipschitz(&self, subdomain: &Subdomain) -> f64 {
        match (self.kind, subdomain) {
            (FunctionalKind::ScanPoint, _) | (_, Subdomain::Point(..)) => 1.0,
            (FunctionalKind::SpectralBand { wa, wb, wc, wd }, Subdomain::Rect(r)) => {
                r.area() * (wb - wa).abs() * (wd - wc).abs()
            }
            (_, Subdomain::Rect(r)) => r.area(),
        }
    }
}

/// Range of node indices whose cells overlap `[lo, hi]` along one axis,
/// with each overlap length.
fn overlaps(field: &ScalarField, lo: f64, hi: f64, along_x: bool) -> Vec<(usize, f64)> {
    let n = if along_x { field.nx() } else { field.ny() };
    (0..n)
        .filter_map(|i| {
            let (c0, c1) = if along_x { field.cell_x(i) } else { field.cell_y(i) };
            let w = hi.min(c1) - lo.max(c0);
            (w > 0.0).then_some((i, w))
        })
        .collect()
}

/// Applies the functional to `field` restricted to `subdomain`, plus bias.
pub fn sample(field: &ScalarField, subdomain: &Subdomain, spec: &FunctionalSpec) -> Result<f64> {
    spec.check()?;
    let domain = field.domain();
    let raw = match (*subdomain, spec.kind) {
        (Subdomain::Point(x, y), _) => {
            if !domain.contains(x, y) {
                return Err(Error::Domain(format!("sample point ({x}, {y}) outside {domain:?}")));
            }
            field.sample(x, y)
        }
        (Subdomain::Rect(_), FunctionalKind::ScanPoint) => {
            return Err(Error::Config("scan-point functional needs a point subdomain".into()))
        }
        (Subdomain::Rect(r), kind) => {
            if !(domain.contains(r.x0, r.y0) && domain.contains(r.x1, r.y1)) || r.x1 < r.x0 || r.y1 < r.y0 {
                return Err(Error::Domain(format!("subdomain {r:?} outside {domain:?}")));
            }
            let xs = overlaps(field, r.x0, r.x1, true);
            let ys = overlaps(field, r.y0, r.y1, false);
            match kind {
                FunctionalKind::StripIntegral => {
                    let mut acc = 0.0;
                    for &(j, wy) in &ys {
                        let mut row = 0.0;
                        for &(i, wx) in &xs {
                            row += field.get(i, j) * wx;
                        }
                        acc += row * wy;
                    }
                    acc
                }
                FunctionalKind::ExpKernel { x0, y0 } => {
                    let mut acc = 0.0;
                    for &(j, wy) in &ys {
                        let ky = (-(field.y_at(j) - y0).abs()).exp();
                        for &(i, wx) in &xs {
                            let kx = (-(field.x_at(i) - x0).abs()).exp();
                            acc += field.get(i, j) * kx * ky * wx * wy;
                        }
                    }
                    acc
                }
                FunctionalKind::SpectralBand { wa, wb, wc, wd } => spectral_band(field, &xs, &ys, [wa, wb, wc, wd]),
                FunctionalKind::ScanPoint => unreachable!(),
            }
        }
    };
    Ok(raw + spec.bias)
}

const BAND_NODES: usize = 8;

fn spectral_band(field: &ScalarField, xs: &[(usize, f64)], ys: &[(usize, f64)], band: [f64; 4]) -> f64 {
    let [wa, wb, wc, wd] = band;
    let (hx, hy) = ((wb - wa) / BAND_NODES as f64, (wd - wc) / BAND_NODES as f64);
    let mut total = 0.0;
    for a in 0..BAND_NODES {
        let wx = wa + (a as f64 + 0.5) * hx;
        for b in 0..BAND_NODES {
            let wy = wc + (b as f64 + 0.5) * hy;
            let (mut re, mut im) = (0.0, 0.0);
            for &(j, ly) in ys {
                let y = field.y_at(j);
                for &(i, lx) in xs {
                    let phase = wx * field.x_at(i) + wy * y;
                    let v = field.get(i, j) * lx * ly;
                    re += v * phase.cos();
                    im -= v * phase.sin();
                }
            }
            total += re.hypot(im);
        }
    }
    total * (hx * hy).abs()
}

/// `θ₁ · f(F̄_t[S, θ₂])`: the perturbed image sampled on the subdomain active
/// at time `t`. Frequency schedules go through [`freq_encode`] instead.
pub fn f_series(
    field: &ScalarField,
    p: &PerturbParams,
    schedule: &SamplingSchedule,
    spec: &FunctionalSpec,
    t: f64,
) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Parameter(format!("time must be non-negative, got {t}")));
    }
    if schedule.mode == ScheduleMode::FrequencyStrips {
        return Err(Error::Config("frequency schedules are encoded by freq_encode".into()));
    }
    let perturbed = apply_nonlinear(field, p.kind, p.theta2)?;
    Ok(p.theta1 * sample(&perturbed, &schedule.active(t), spec)?)
}

/// Carrier frequencies `ω_ν`, one per strip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct FrequencyAssignment {
    pub omegas: Vec<f64>,
    /// `ω₁` when `ω_ν = ν·ω₁` for every ν, enabling the Chebyshev recurrence.
    harmonic: Option<f64>,
}

impl From<Vec<f64>> for FrequencyAssignment {
    fn from(omegas: Vec<f64>) -> Self {
        let harmonic = omegas.first().copied().filter(|&w0| {
            omegas.iter().enumerate().all(|(v, w)| (w - (v + 1) as f64 * w0).abs() <= 1e-12 * w.abs())
        });
        Self { omegas, harmonic }
    }
}

impl From<FrequencyAssignment> for Vec<f64> {
    fn from(f: FrequencyAssignment) -> Self {
        f.omegas
    }
}

impl FrequencyAssignment {
    pub fn new(omegas: Vec<f64>) -> Result<Self> {
        if omegas.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Config("carrier frequencies must be positive".into()));
        }
        let mut sorted = omegas.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("carrier frequencies must be pairwise distinct".into()));
        }
        Ok(Self::from(omegas))
    }

    /// `ω_ν = base · ν` for `ν = 1..=count`.
    pub fn linear(base: f64, count: usize) -> Result<Self> {
        Self::new((1..=count).map(|v| base * v as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    /// Carrier weights `sin²(ω_ν t)`.
    pub fn carriers(&self, t: f64, out: &mut [f64]) {
        self.for_each_carrier(t, |v, c| out[v] = c);
    }

    /// Calls `f(ν, sin²(ω_ν t))` for every carrier in order.
    #[inline]
    pub fn for_each_carrier(&self, t: f64, mut f: impl FnMut(usize, f64)) {
        match self.harmonic {
            Some(w0) => {
                // sin((ν+1)x) = 2 cos x · sin(νx) − sin((ν−1)x)
                let (s1, c1) = (w0 * t).sin_cos();
                let (mut prev, mut cur) = (0.0, s1);
                for v in 0..self.omegas.len() {
                    f(v, cur * cur);
                    let next = 2.0 * c1 * cur - prev;
                    prev = cur;
                    cur = next;
                }
            }
            None => {
                for (v, w) in self.omegas.iter().enumerate() {
                    let s = (w * t).sin();
                    f(v, s * s);
                }
            }
        }
    }

    /// `Σ_ν sin²(ω_ν t)·values[ν]`.
    #[inline]
    pub fn modulate(&self, t: f64, values: &[f64]) -> f64 {
        let mut acc = 0.0;
        self.for_each_carrier(t, |v, c| acc += c * values[v]);
        acc
    }
}

fn strip_integrals(field: &ScalarField, strips: &SamplingSchedule) -> Result<Vec<f64>> {
    let spec = FunctionalSpec::strip_integral();
    strips.subdomains.iter().map(|s| sample(field, s, &spec)).collect()
}

fn check_freq(strips: &SamplingSchedule, omegas: &FrequencyAssignment) -> Result<()> {
    if strips.mode != ScheduleMode::FrequencyStrips {
        return Err(Error::Config("freq_encode needs a frequency-strips schedule".into()));
    }
    if omegas.len() != strips.subdomains.len() {
        return Err(Error::Config(format!(
            "{} carrier frequencies for {} strips",
            omegas.len(),
            strips.subdomains.len()
        )));
    }
    Ok(())
}

/// `Σ_ν sin²(ω_ν t) · ∫_{strip ν} F̄[S, θ₂]`, uncached.
pub fn freq_encode(
    field: &ScalarField,
    theta2: f64,
    strips: &SamplingSchedule,
    omegas: &FrequencyAssignment,
    kind: PerturbKind,
    t: f64,
) -> Result<f64> {
    check_freq(strips, omegas)?;
    let integrals = strip_integrals(&apply_nonlinear(field, kind, theta2)?, strips)?;
    let mut carriers = vec![0.0; omegas.len()];
    omegas.carriers(t, &mut carriers);
    Ok(carriers.iter().zip(&integrals).map(|(c, i)| c * i).sum())
}

/// Frequency encoder that caches strip integrals per θ₂.
pub struct FrequencyEncoder {
    field: ScalarField,
    kind: PerturbKind,
    strips: SamplingSchedule,
    omegas: FrequencyAssignment,
    cache: RwLock<HashMap<u64, Arc<Vec<f64>>>>,
}

impl FrequencyEncoder {
    pub fn new(field: ScalarField, kind: PerturbKind, strips: SamplingSchedule, omegas: FrequencyAssignment) -> Result<Self> {
        check_freq(&strips, &omegas)?;
        strips.validate(field.domain())?;
        Ok(Self { field, kind, strips, omegas, cache: RwLock::new(HashMap::new()) })
    }

    pub fn integrals(&self, theta2: f64) -> Result<Arc<Vec<f64>>> {
        let key = theta2.to_bits();
        if let Some(v) = self.cache.read().expect("cache lock poisoned").get(&key) {
            return Ok(Arc::clone(v));
        }
        let v = Arc::new(strip_integrals(&apply_nonlinear(&self.field, self.kind, theta2)?, &self.strips)?);
        self.cache.write().expect("cache lock poisoned").insert(key, Arc::clone(&v));
        Ok(v)
    }

    pub fn value(&self, theta2: f64, t: f64) -> Result<f64> {
        let integrals = self.integrals(theta2)?;
        let mut carriers = vec![0.0; self.omegas.len()];
        self.omegas.carriers(t, &mut carriers);
        Ok(carriers.iter().zip(integrals.iter()).map(|(c, i)| c * i).sum())
    }

    pub fn cached_entries(&self) -> usize {
        self.cache.read().expect("cache lock poisoned").len()
    }
}

/// Complete temporal code: schedule, functional (with bias) and, for
/// frequency schedules, the carrier frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub schedule: SamplingSchedule,
    pub functional: FunctionalSpec,
    pub omegas: Option<FrequencyAssignment>,
}

impl Encoder {
    pub fn new(schedule: SamplingSchedule, functional: FunctionalSpec, omegas: Option<FrequencyAssignment>) -> Result<Self> {
        functional.check()?;
        match (schedule.mode, &omegas) {
            (ScheduleMode::FrequencyStrips, Some(w)) => {
                check_freq(&schedule, w)?;
                if functional.kind == FunctionalKind::ScanPoint {
                    return Err(Error::Config("frequency encoding needs an area functional".into()));
                }
            }
            (ScheduleMode::FrequencyStrips, None) => {
                return Err(Error::Config("frequency schedule without carrier frequencies".into()))
            }
            (_, Some(_)) => return Err(Error::Config("carrier frequencies given for a non-frequency schedule".into())),
            (ScheduleMode::ScanLine, None) if functional.kind != FunctionalKind::ScanPoint => {
                return Err(Error::Config("scan-line schedules use the scan-point functional".into()))
            }
            _ => {}
        }
        Ok(Self { schedule, functional, omegas })
    }

    pub fn bias(&self) -> f64 {
        self.functional.bias
    }

    pub fn with_bias(mut self, bias: f64) -> Result<Self> {
        self.functional.bias = bias;
        self.functional.check()?;
        Ok(self)
    }

    /// Whether the code factors through one number per subdomain.
    pub fn is_tabulable(&self) -> bool {
        self.schedule.mode != ScheduleMode::ScanLine
    }

    /// Per-subdomain functional values, bias excluded.
    pub fn responses(&self, field: &ScalarField) -> Result<Vec<f64>> {
        if !self.is_tabulable() {
            return Err(Error::Config("scan-line codes have no per-subdomain responses".into()));
        }
        let spec = FunctionalSpec { bias: 0.0, ..self.functional };
        self.schedule.subdomains.iter().map(|s| sample(field, s, &spec)).collect()
    }

    /// Signal value at `t` from precomputed responses, bias included.
    pub fn combine(&self, responses: &[f64], t: f64) -> f64 {
        match (&self.omegas, self.schedule.mode) {
            (Some(w), _) => self.functional.bias + w.modulate(t, responses),
            _ => {
                let m = self.schedule.subdomains.len();
                let phase = t.rem_euclid(self.schedule.period) / self.schedule.period;
                let k = ((phase * m as f64).floor() as usize).min(m - 1);
                responses[k] + self.functional.bias
            }
        }
    }

    /// `f(S)(t)` computed directly from the field, bias included.
    pub fn evaluate(&self, field: &ScalarField, t: f64) -> Result<f64> {
        if self.is_tabulable() {
            Ok(self.combine(&self.responses(field)?, t))
        } else {
            sample(field, &self.schedule.active(t), &self.functional)
        }
    }

    /// Sup-norm Lipschitz constant `D₂` of the whole code: the sum over strips
    /// in frequency mode (all carriers can be 1 at once), otherwise the largest
    /// single-subdomain constant.
    pub fn lipschitz(&self) -> f64 {
        let per: Vec<f64> = self.schedule.subdomains.iter().map(|s| self.functional.lipschitz(s)).collect();
        if self.omegas.is_some() {
            per.iter().sum()
        } else {
            per.iter().cloned().fold(0.0, f64::max)
        }
    }
}

/// Microscope scan trajectory: `x(t) = x_min + k_s t` on the first pass,
/// then repeated with period `(x_max − x_min)/k_s`. Passes are closed on the
/// right, so the end of a pass reaches `x_max` before wrapping.
pub fn scan_position(t: f64, x_min: f64, x_max: f64, k_s: f64) -> f64 {
    let period = (x_max - x_min) / k_s;
    let mut u = t;
    if u > period {
        u -= period * ((u / period).ceil() - 1.0);
        if u <= 0.0 {
            u += period;
        } else if u > period {
            u -= period;
        }
    }
    x_min + k_s * u
}

/// Bounds `D₃ ≤ f(t, θ₂) ≤ D₄` of a code, sampled on a time × θ₂ grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalBounds {
    pub d3: f64,
    pub d4: f64,
    /// Extra bias that would lift `D₃` to the floor, when `D₃` is not already above it.
    pub recommended_bias: Option<f64>,
}

pub const SAMPLES_PER_PERIOD: usize = 64;
pub const DEFAULT_FLOOR_FRACTION: f64 = 0.05;

/// Estimates `(D₃, D₄)` for the template under every θ₂ on the grid, with 64
/// time samples per schedule period over `horizon`.
pub fn estimate_d3_d4(
    field: &ScalarField,
    kind: PerturbKind,
    encoder: &Encoder,
    theta2_grid: &[f64],
    horizon: f64,
    floor_fraction: f64,
) -> Result<SignalBounds> {
    let period = encoder.schedule.period;
    if theta2_grid.is_empty() {
        return Err(Error::Parameter("empty theta2 grid".into()));
    }
    if !(horizon >= period) {
        return Err(Error::Parameter(format!("horizon {horizon} shorter than one period {period}")));
    }
    let n_t = ((horizon / period).ceil() as usize) * SAMPLES_PER_PERIOD;
    let times: Vec<f64> = (0..=n_t).map(|k| horizon * k as f64 / n_t as f64).collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &theta2 in theta2_grid {
        let perturbed = apply_nonlinear(field, kind, theta2)?;
        let responses = if encoder.is_tabulable() { Some(encoder.responses(&perturbed)?) } else { None };
        for &t in &times {
            let v = match &responses {
                Some(r) => encoder.combine(r, t),
                None => encoder.evaluate(&perturbed, t)?,
            };
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !hi.is_finite() || !lo.is_finite() {
        return Err(Error::Input("signal bound is not finite".into()));
    }
    let floor = floor_fraction * if hi > 0.0 { hi } else { 1.0 };
    let recommended_bias = (lo <= floor).then(|| floor - lo);
    Ok(SignalBounds { d3: lo, d4: hi, recommended_bias })
}

/// Default carrier period: `sin²(ν ω t)` repeats every `π/ω`.
pub fn carrier_period(omega_base: f64) -> f64 {
    PI / omega_base
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Domain;

    fn ones(n: usize) -> ScalarField {
        ScalarField::constant(n, n, Domain::default(), 1.0).unwrap()
    }

    #[test]
    fn zero_field_samples_zero() {
        let z = ScalarField::zeros(10, 10, Domain::default()).unwrap();
        let r = Subdomain::Rect(Rect::new(-0.5, 0.3, -1.0, 0.2));
        for spec in [
            FunctionalSpec::strip_integral(),
            FunctionalSpec::new(FunctionalKind::ExpKernel { x0: 0.1, y0: 0.0 }, 0.0),
            FunctionalSpec::new(FunctionalKind::SpectralBand { wa: 0.0, wb: 2.0, wc: 0.0, wd: 2.0 }, 0.0),
        ] {
            assert_eq!(sample(&z, &r, &spec).unwrap(), 0.0);
        }
        let p = Subdomain::Point(0.2, 0.1);
        assert_eq!(sample(&z, &p, &FunctionalSpec::new(FunctionalKind::ScanPoint, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn constant_strip_integral_is_area() {
        let r = Rect::new(-0.37, 0.41, -0.9, 0.13);
        let v = sample(&ones(23), &Subdomain::Rect(r), &FunctionalSpec::strip_integral()).unwrap();
        assert!((v - r.area()).abs() < 1e-12);
    }

    #[test]
    fn homogeneity_with_bias() {
        let f = ScalarField::from_fn(21, 21, Domain::default(), |x, y| (x + 2.0 * y).sin() + 1.0).unwrap();
        let r = Subdomain::Rect(Rect::new(-0.5, 0.5, -0.25, 0.75));
        let spec = FunctionalSpec::new(FunctionalKind::ExpKernel { x0: 0.2, y0: -0.1 }, 0.3);
        let a = sample(&f, &r, &spec).unwrap();
        let b = sample(&f.scaled(5.0), &r, &spec).unwrap();
        assert!((b - (5.0 * (a - 0.3) + 0.3)).abs() < 1e-12 * b.abs());
    }

    #[test]
    fn outside_subdomain_is_domain_error() {
        let r = Subdomain::Rect(Rect::new(0.5, 1.5, 0.0, 0.5));
        assert!(matches!(sample(&ones(5), &r, &FunctionalSpec::strip_integral()), Err(Error::Domain(_))));
        let p = Subdomain::Point(2.0, 0.0);
        assert!(matches!(
            sample(&ones(5), &p, &FunctionalSpec::new(FunctionalKind::ScanPoint, 0.0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn f_series_sweep_steps_through_areas() {
        let rects = vec![
            Rect::new(-1.0, 0.0, -1.0, 0.0),
            Rect::new(0.0, 1.0, -1.0, 0.5),
            Rect::new(-1.0, 1.0, 0.5, 1.0),
        ];
        let sched = SamplingSchedule::sweep(rects.clone(), 3.0).unwrap();
        let spec = FunctionalSpec::strip_integral();
        let field = ones(41);
        let p = PerturbParams::identity();
        for (k, r) in rects.iter().enumerate() {
            for t in [k as f64 + 0.1, k as f64 + 0.9, 3.0 + k as f64 + 0.5] {
                let v = f_series(&field, &p, &sched, &spec, t).unwrap();
                assert!((v - r.area()).abs() < 1e-12, "t = {t}");
            }
        }
        let p2 = PerturbParams::new(PerturbKind::Identity, 2.0, 0.0);
        assert!((f_series(&field, &p2, &sched, &spec, 0.5).unwrap() - 2.0).abs() < 1e-12);
        let p0 = PerturbParams::new(PerturbKind::Identity, 0.0, 0.0);
        assert_eq!(f_series(&field, &p0, &sched, &spec, 2.5).unwrap(), 0.0);
    }

    #[test]
    fn freq_encode_basics() {
        let d = Domain::default();
        let strips = SamplingSchedule::frequency_strips(&d, 2, 0, PI).unwrap();
        let field = ScalarField::from_fn(31, 31, d, |x, y| 1.0 + 0.5 * x + y).unwrap();
        let w = FrequencyAssignment::linear(1.0, 2).unwrap();
        // sin²(t) = sin²(2t) = 1 has no common solution, use ω = (1, 3) at t = π/2
        let w13 = FrequencyAssignment::new(vec![1.0, 3.0]).unwrap();
        let i1 = sample(&field, &strips.subdomains[0], &FunctionalSpec::strip_integral()).unwrap();
        let i2 = sample(&field, &strips.subdomains[1], &FunctionalSpec::strip_integral()).unwrap();
        let v = freq_encode(&field, 0.0, &strips, &w13, PerturbKind::Identity, PI / 2.0).unwrap();
        assert!((v - (i1 + i2)).abs() < 1e-12);

        let single = SamplingSchedule::frequency_strips(&d, 1, 0, PI).unwrap();
        let w1 = FrequencyAssignment::linear(2.0, 1).unwrap();
        let v = freq_encode(&field, 0.0, &single, &w1, PerturbKind::Identity, PI / 2.0).unwrap();
        assert!(v.abs() < 1e-12);

        let z = ScalarField::zeros(9, 9, d).unwrap();
        assert_eq!(freq_encode(&z, 0.3, &strips, &w, PerturbKind::Rotate, 0.7).unwrap(), 0.0);

        let bad = FrequencyAssignment::linear(1.0, 3).unwrap();
        assert!(matches!(
            freq_encode(&field, 0.0, &strips, &bad, PerturbKind::Identity, 0.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn frequency_encoder_caches_per_theta() {
        let d = Domain::default();
        let strips = SamplingSchedule::frequency_strips(&d, 3, 3, PI).unwrap();
        let field = ScalarField::from_fn(16, 16, d, |x, y| (-(x * x + 4.0 * y * y)).exp()).unwrap();
        let w = FrequencyAssignment::linear(1.0, 6).unwrap();
        let enc = FrequencyEncoder::new(field.clone(), PerturbKind::Rotate, strips.clone(), w.clone()).unwrap();
        for t in [0.0, 0.4, 1.7] {
            let a = enc.value(0.8, t).unwrap();
            let b = freq_encode(&field, 0.8, &strips, &w, PerturbKind::Rotate, t).unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(enc.cached_entries(), 1);
        enc.value(0.9, 0.0).unwrap();
        assert_eq!(enc.cached_entries(), 2);
    }

    #[test]
    fn scan_position_examples() {
        assert_eq!(scan_position(0.0, 1.0, 176.0, 1.0), 1.0);
        assert_eq!(scan_position(175.0, 1.0, 176.0, 1.0), 176.0);
        assert_eq!(scan_position(180.0, 1.0, 176.0, 1.0), 6.0);
        assert_eq!(scan_position(350.0, 1.0, 176.0, 1.0), 176.0);
        assert_eq!(scan_position(351.0, 1.0, 176.0, 1.0), 2.0);
    }

    #[test]
    fn harmonic_recurrence_matches_direct() {
        let h = FrequencyAssignment::linear(0.37, 32).unwrap();
        let mut skewed = h.omegas.clone();
        skewed[31] *= 1.0 + 1e-9;
        let direct = FrequencyAssignment::new(skewed).unwrap();
        assert!(h.harmonic.is_some() && direct.harmonic.is_none());
        let (mut a, mut b) = (vec![0.0; 32], vec![0.0; 32]);
        for t in [0.0, 1.3, 250.0, 1.0e5] {
            h.carriers(t, &mut a);
            direct.carriers(t, &mut b);
            for (v, w) in h.omegas.iter().enumerate() {
                assert!((a[v] - (w * t).sin().powi(2)).abs() < 1e-9, "t = {t}, v = {v}");
                if v < 31 {
                    assert!((a[v] - b[v]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn distinct_frequencies_required() {
        assert!(FrequencyAssignment::new(vec![1.0, 2.0, 1.0]).is_err());
        assert!(FrequencyAssignment::new(vec![1.0, -2.0]).is_err());
    }

    #[test]
    fn d3_d4_constant_field_equal_strips() {
        let d = Domain::default();
        let rects = vec![Rect::new(-1.0, 0.0, -1.0, 1.0), Rect::new(0.0, 1.0, -1.0, 1.0)];
        let enc = Encoder::new(SamplingSchedule::sweep(rects, 2.0).unwrap(), FunctionalSpec::strip_integral(), None)
            .unwrap();
        let b = estimate_d3_d4(&ones(21), PerturbKind::Identity, &enc, &[0.0], 4.0, DEFAULT_FLOOR_FRACTION).unwrap();
        assert!((b.d3 - 2.0).abs() < 1e-12 && (b.d4 - 2.0).abs() < 1e-12);
        assert_eq!(b.recommended_bias, None);

        let z = ScalarField::zeros(21, 21, d).unwrap();
        let b = estimate_d3_d4(&z, PerturbKind::Identity, &enc, &[0.0], 4.0, DEFAULT_FLOOR_FRACTION).unwrap();
        assert_eq!(b.d3, 0.0);
        assert!(b.recommended_bias.unwrap() > 0.0);
        assert!(estimate_d3_d4(&z, PerturbKind::Identity, &enc, &[0.0], 1.0, DEFAULT_FLOOR_FRACTION).is_err());
    }

    #[test]
    fn schedule_coverage_and_containment() {
        let d = Domain::default();
        let s = SamplingSchedule::frequency_strips(&d, 4, 0, 1.0).unwrap();
        assert!(s.covers(&Rect::from_domain(&d)));
        assert!(s.validate(&d).is_ok());
        let partial = SamplingSchedule::sweep(vec![Rect::new(-1.0, 0.0, -1.0, 1.0)], 1.0).unwrap();
        assert!(!partial.covers(&Rect::from_domain(&d)));
        let outside = SamplingSchedule::sweep(vec![Rect::new(-2.0, 0.0, -1.0, 1.0)], 1.0).unwrap();
        assert!(outside.validate(&d).is_err());
    }

    #[test]
    fn tiles_partition_the_domain() {
        let d = Domain::default();
        let s = SamplingSchedule::frequency_tiles(&d, 4, 4, 1.0).unwrap();
        assert_eq!(s.subdomains.len(), 16);
        assert!(s.covers(&Rect::from_domain(&d)));
        assert!(s.validate(&d).is_ok());
        let area: f64 = s.subdomains.iter().map(|r| match r {
            Subdomain::Rect(r) => r.area(),
            _ => panic!("tile is a point"),
        }).sum();
        assert!((area - d.width() * d.height()).abs() < 1e-12);
        assert_eq!(s.subdomains[0], Subdomain::Rect(Rect::new(-1.0, -0.5, -1.0, -0.5)));
        assert_eq!(s.subdomains[1], Subdomain::Rect(Rect::new(-0.5, 0.0, -1.0, -0.5)));
        assert!(SamplingSchedule::frequency_tiles(&d, 0, 4, 1.0).is_err());
    }

    #[test]
    fn scan_line_moves_continuously() {
        let s = SamplingSchedule::scan_line(vec![(-1.0, 0.0), (1.0, 0.0)], 4.0).unwrap();
        assert_eq!(s.active(1.0), Subdomain::Point(-0.5, 0.0));
        assert_eq!(s.active(5.0), Subdomain::Point(-0.5, 0.0));
    }
}
