//! Synthetic scanning-microscope scenario: a 176-pixel line profile blurred by
//! a Gaussian kernel `exp(−θ₂(ξ − x)²)` and dimmed by photobleaching, read out
//! along the scan trajectory.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adapt::MatchConstants;
use crate::encode::scan_position;
use crate::engine::{run_channels, ImageSignal, RunConfig, RunOutput, TemplateSignal, Theta1Schedule};
use crate::error::{Error, Result};
use crate::field::Interval;

pub const PROFILE_LEN: usize = 176;
pub const X_MIN: f64 = 1.0;
pub const X_MAX: f64 = 176.0;
pub const SCAN_SPEED: f64 = 1.0;
pub const DEFAULT_N_AVG: usize = 8;

/// Kernel terms beyond `θ₂(ξ − x)² > KERNEL_CUTOFF` are dropped (relative weight below 1e-17).
const KERNEL_CUTOFF: f64 = 40.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicroscopeScenario {
    /// Template intensities at pixels `ξ = 1, …, 176`.
    #[serde(default = "default_profile")]
    pub base_profile: Vec<f64>,
    #[serde(default = "unit_gain")]
    pub bleach: Theta1Schedule,
    /// True blur `θ₂`.
    pub blur: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "default_n_avg")]
    pub n_avg: usize,
}

fn unit_gain() -> Theta1Schedule {
    Theta1Schedule::constant(1.0)
}

fn default_n_avg() -> usize {
    DEFAULT_N_AVG
}

impl Default for MicroscopeScenario {
    fn default() -> Self {
        Self {
            base_profile: default_profile(),
            bleach: Theta1Schedule::constant(1.0),
            blur: 0.05,
            noise_sigma: 0.0,
            n_avg: DEFAULT_N_AVG,
        }
    }
}

impl MicroscopeScenario {
    pub fn validate(&self) -> Result<()> {
        if self.base_profile.len() != PROFILE_LEN {
            return Err(Error::Config(format!(
                "profile must have {PROFILE_LEN} samples, got {}",
                self.base_profile.len()
            )));
        }
        if self.base_profile.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("profile values must be finite".into()));
        }
        if !(self.blur.is_finite() && self.blur > 0.0) {
            return Err(Error::Config(format!("blur must be positive, got {}", self.blur)));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise_sigma must be non-negative, got {}", self.noise_sigma)));
        }
        if self.n_avg == 0 {
            return Err(Error::Config("n_avg must be at least 1".into()));
        }
        self.bleach.validate()
    }
}

/// Dim background with three bright objects of different sizes.
pub fn default_profile() -> Vec<f64> {
    let bumps = [(40.0, 6.0, 1.0), (95.0, 10.0, 0.6), (132.0, 4.0, 0.8)];
    (0..PROFILE_LEN)
        .map(|j| {
            let xi = X_MIN + j as f64;
            0.2 + bumps.iter().map(|&(c, w, a)| a * (-((xi - c) / w).powi(2)).exp()).sum::<f64>()
        })
        .collect()
}

/// Bleaching that multiplies the gain by `1 − rate` at the end of every scan
/// pass, for `passes` passes.
pub fn bleach_per_pass(initial: f64, rate: f64, passes: usize) -> Theta1Schedule {
    let period = (X_MAX - X_MIN) / SCAN_SPEED;
    let steps = (1..=passes).map(|p| [p as f64 * period, initial * (1.0 - rate).powi(p as i32)]).collect();
    Theta1Schedule { initial, steps }
}

/// `∫ exp(−θ₂(ξ − x)²) S(ξ) dξ` over `[X_MIN, X_MAX]` by the trapezoid rule on the pixel grid.
pub fn blur_response(profile: &[f64], x: f64, theta2: f64) -> f64 {
    let reach = (KERNEL_CUTOFF / theta2).sqrt();
    let last = profile.len() - 1;
    let lo = ((x - reach - X_MIN).floor().max(0.0) as usize).min(last);
    let hi = ((x + reach - X_MIN).ceil().max(0.0) as usize).min(last);
    let mut acc = 0.0;
    for (j, s) in profile.iter().enumerate().take(hi + 1).skip(lo) {
        let u = X_MIN + j as f64 - x;
        let w = if j == 0 || j == last { 0.5 } else { 1.0 };
        acc += w * (-theta2 * u * u).exp() * s;
    }
    acc
}

/// Measured line signal `θ₁(t)·f₁(x(t), θ₂)` plus pixel-held noise averaged
/// over `n_avg` trials.
pub struct MicroscopeSignal {
    scenario: MicroscopeScenario,
    seed: u64,
    table: BlurTable,
}

/// Generator for the measured series of a scenario.
pub fn synth_microscope(scn: &MicroscopeScenario, seed: u64) -> Result<MicroscopeSignal> {
    scn.validate()?;
    let table = BlurTable::new(&scn.base_profile, Interval::new(scn.blur, scn.blur), 2)?;
    Ok(MicroscopeSignal { scenario: scn.clone(), seed, table })
}

impl MicroscopeSignal {
    /// Noise-free value at time `t`.
    pub fn exact(&self, t: f64) -> f64 {
        let s = &self.scenario;
        let x = scan_position(t, X_MIN, X_MAX, SCAN_SPEED);
        s.bleach.at(t) * blur_response(&s.base_profile, x, s.blur)
    }

    /// Averaged noise for the pixel read at `t`; each pixel slot draws from its
    /// own stream, so the value does not depend on evaluation order.
    pub fn noise(&self, t: f64) -> f64 {
        let s = &self.scenario;
        if s.noise_sigma == 0.0 {
            return 0.0;
        }
        let slot = (t * SCAN_SPEED).floor().max(0.0) as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(slot);
        let sum: f64 = (0..s.n_avg).map(|_| -> f64 { StandardNormal.sample(&mut rng) }).sum();
        s.noise_sigma * sum / s.n_avg as f64
    }
}

impl ImageSignal for MicroscopeSignal {
    /// Same as `exact(t) + noise(t)` up to table interpolation.
    fn value(&self, t: f64) -> f64 {
        let x = scan_position(t, X_MIN, X_MAX, SCAN_SPEED);
        self.scenario.bleach.at(t) * self.table.value(x, self.scenario.blur) + self.noise(t)
    }
}

/// Scan-line positions per pixel in the response tables.
const TABLE_X_PER_PIXEL: usize = 8;

/// Blur response tabulated on a scan-position × θ₂ grid, interpolated bilinearly.
pub struct BlurTable {
    thetas: Interval,
    nth: usize,
    nx: usize,
    data: Vec<f64>,
}

impl BlurTable {
    pub fn new(profile: &[f64], thetas: Interval, theta_points: usize) -> Result<Self> {
        if profile.len() != PROFILE_LEN {
            return Err(Error::Config(format!("profile must have {PROFILE_LEN} samples, got {}", profile.len())));
        }
        if !(thetas.min > 0.0 && thetas.max >= thetas.min) {
            return Err(Error::Config(format!("blur range must be positive, got [{}, {}]", thetas.min, thetas.max)));
        }
        let nth = theta_points.max(2);
        let nx = (PROFILE_LEN - 1) * TABLE_X_PER_PIXEL + 1;
        let grid = thetas.grid(nth);
        let mut data = Vec::with_capacity(nx * nth);
        for i in 0..nx {
            let x = X_MIN + i as f64 / TABLE_X_PER_PIXEL as f64;
            data.extend(grid.iter().map(|&th| blur_response(profile, x, th)));
        }
        Ok(Self { thetas, nth, nx, data })
    }

    pub fn value(&self, x: f64, theta2: f64) -> f64 {
        let (i, fx) = cell((x - X_MIN) * TABLE_X_PER_PIXEL as f64, self.nx);
        let span = self.thetas.max - self.thetas.min;
        let u = if span > 0.0 { (theta2 - self.thetas.min) / span * (self.nth - 1) as f64 } else { 0.0 };
        let (j, fy) = cell(u, self.nth);
        let at = |i: usize, j: usize| self.data[i * self.nth + j];
        let lo = at(i, j) + fy * (at(i, j + 1) - at(i, j));
        let hi = at(i + 1, j) + fy * (at(i + 1, j + 1) - at(i + 1, j));
        lo + fx * (hi - lo)
    }
}

/// Lower grid index and fraction for position `u` on `n` nodes, clamped.
fn cell(u: f64, n: usize) -> (usize, f64) {
    let u = u.clamp(0.0, (n - 1) as f64);
    let i = (u.floor() as usize).min(n - 2);
    (i, u - i as f64)
}

/// Template channel using the blur model with the stored profile.
pub struct MicroscopeTemplate {
    table: BlurTable,
}

impl MicroscopeTemplate {
    pub fn new(profile: &[f64], thetas: Interval, theta_points: usize) -> Result<Self> {
        Ok(Self { table: BlurTable::new(profile, thetas, theta_points)? })
    }
}

impl TemplateSignal for MicroscopeTemplate {
    fn value(&self, t: f64, theta2: f64) -> f64 {
        self.table.value(scan_position(t, X_MIN, X_MAX, SCAN_SPEED), theta2)
    }
}

/// `D` (with `D₂ = 1` for a point readout), `D₃`, `D₄` over the blur range and
/// the scan line. `Δ` is three standard errors of the averaged noise.
pub fn microscope_constants(scn: &MicroscopeScenario, range: Interval, grid: usize) -> Result<MatchConstants> {
    scn.validate()?;
    if !(range.min > 0.0) {
        return Err(Error::Config(format!("blur range must be positive, got [{}, {}]", range.min, range.max)));
    }
    let thetas = range.grid(grid.max(2));
    let xs: Vec<f64> = (0..=2 * (PROFILE_LEN - 1)).map(|k| X_MIN + 0.5 * k as f64).collect();
    let p = &scn.base_profile;
    let (mut d3, mut d4, mut d) = (f64::INFINITY, 0.0f64, 0.0f64);
    for &x in &xs {
        let vals: Vec<f64> = thetas.iter().map(|&th| blur_response(p, x, th)).collect();
        for v in &vals {
            d3 = d3.min(*v);
            d4 = d4.max(*v);
        }
        for (k, w) in vals.windows(2).enumerate() {
            d = d.max((w[1] - w[0]).abs() / (thetas[k + 1] - thetas[k]));
        }
    }
    let delta = 3.0 * scn.noise_sigma / (scn.n_avg as f64).sqrt();
    Ok(MatchConstants { d, d2: 1.0, d3, d4, delta })
}

#[derive(Clone, Debug)]
pub struct MicroscopeRun {
    pub output: RunOutput,
    pub constants: MatchConstants,
    /// True gain at the end of the run.
    pub theta1_truth: f64,
    /// `|θ̂₁ − θ₁| / θ₁` at the end of the run.
    pub theta1_relative_error: f64,
}

/// Tracks the scenario with one template channel. `cfg.encoder` and
/// `cfg.perturbation` are not used; the scenario supplies both signals.
pub fn run_microscope(scn: &MicroscopeScenario, cfg: &RunConfig) -> Result<MicroscopeRun> {
    let constants = microscope_constants(scn, cfg.adapt.theta2_range, cfg.analysis.constants_grid)?;
    let image = synth_microscope(scn, cfg.seed)?;
    let template = MicroscopeTemplate::new(&scn.base_profile, cfg.adapt.theta2_range, cfg.analysis.table_points)?;
    let output = run_channels(&image, &[&template], &[constants], &[None], cfg)?;
    let theta1_truth = scn.bleach.at(cfg.horizon);
    let hat = output.report.templates[0].theta1_hat;
    Ok(MicroscopeRun {
        theta1_relative_error: (hat - theta1_truth).abs() / theta1_truth.abs(),
        output,
        constants,
        theta1_truth,
    })
}
