//! Two-level pipeline: adaptive template channels feeding a Hindmarsh-Rose
//! coincidence detector, integrated with a single fixed RK4 clock.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{
    adapt_rhs, check_params, deadzone, table3_epsilon, table3_gamma2_max, theta_hats, AdaptParams, AdaptState,
    MatchConstants, ValidityReport, CIRCLE_DRIFT_LIMIT,
};
use crate::detect::{
    hr_rhs_flat, sync_metrics, sync_upper_bound, HRNetState, HRParams, PairSync, DEFAULT_SYNC_THRESHOLD,
    DEFAULT_WINDOW_FRACTION,
};
use crate::encode::{
    estimate_d3_d4, Encoder, FrequencyAssignment, FunctionalKind, FunctionalSpec, Rect, SamplingSchedule,
    DEFAULT_FLOOR_FRACTION, SAMPLES_PER_PERIOD,
};
use crate::error::{Error, Result};
use crate::field::{apply_nonlinear, estimate_lipschitz_d, Domain, Interval, PerturbKind, ScalarField};
use crate::ode::Rk4;

/// Image channel signal `θ₁(t)·f₀(t)`.
pub trait ImageSignal: Send + Sync {
    fn value(&self, t: f64) -> f64;
}

/// Template channel model `fᵢ(t, θ₂)`.
pub trait TemplateSignal: Send + Sync {
    fn value(&self, t: f64, theta2: f64) -> f64;
}

/// Piecewise-constant linear gain: `initial` until the first step time, then
/// each step's value from its time on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theta1Schedule {
    pub initial: f64,
    /// `[time, value]` pairs in increasing time order.
    #[serde(default)]
    pub steps: Vec<[f64; 2]>,
}

impl Theta1Schedule {
    pub fn constant(v: f64) -> Self {
        Self { initial: v, steps: Vec::new() }
    }

    pub fn at(&self, t: f64) -> f64 {
        let k = self.steps.partition_point(|s| s[0] <= t);
        if k == 0 {
            self.initial
        } else {
            self.steps[k - 1][1]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(Error::Config("theta1 steps must have increasing times".into()));
        }
        if std::iter::once(self.initial).chain(self.steps.iter().map(|s| s[1])).any(|v| !v.is_finite()) {
            return Err(Error::Config("theta1 schedule values must be finite".into()));
        }
        Ok(())
    }
}

/// Encoded signal of a fixed (already perturbed) image.
pub struct EncodedImage {
    encoder: Encoder,
    responses: Vec<f64>,
    field: Option<ScalarField>,
    theta1: Theta1Schedule,
}

impl EncodedImage {
    pub fn new(field: &ScalarField, encoder: Encoder, theta1: Theta1Schedule) -> Result<Self> {
        theta1.validate()?;
        let (responses, field) = if encoder.is_tabulable() {
            (encoder.responses(field)?, None)
        } else {
            (Vec::new(), Some(field.clone()))
        };
        Ok(Self { encoder, responses, field, theta1 })
    }
}

impl ImageSignal for EncodedImage {
    fn value(&self, t: f64) -> f64 {
        let f = match &self.field {
            None => self.encoder.combine(&self.responses, t),
            Some(field) => self.encoder.evaluate(field, t).unwrap_or(f64::NAN),
        };
        self.theta1.at(t) * f
    }
}

/// Template model tabulated on a uniform θ₂ grid and interpolated linearly.
pub struct TabulatedTemplate {
    encoder: Encoder,
    range: Interval,
    points: usize,
    width: usize,
    table: Vec<f64>,
    fields: Vec<ScalarField>,
}

impl TabulatedTemplate {
    pub fn new(field: &ScalarField, kind: PerturbKind, encoder: Encoder, range: Interval, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::Config(format!("template table needs at least 2 points, got {points}")));
        }
        let grid = range.grid(points);
        let perturbed: Vec<ScalarField> =
            grid.par_iter().map(|&th| apply_nonlinear(field, kind, th)).collect::<Result<_>>()?;
        if encoder.is_tabulable() {
            let mut table = Vec::new();
            for p in &perturbed {
                table.extend(encoder.responses(p)?);
            }
            let width = encoder.schedule.subdomains.len();
            Ok(Self { encoder, range, points, width, table, fields: Vec::new() })
        } else {
            Ok(Self { encoder, range, points, width: 0, table: Vec::new(), fields: perturbed })
        }
    }

    fn locate(&self, theta2: f64) -> (usize, f64) {
        let u = ((theta2 - self.range.min) / self.range.width()).clamp(0.0, 1.0) * (self.points - 1) as f64;
        let i = (u.floor() as usize).min(self.points - 2);
        (i, u - i as f64)
    }
}

impl TemplateSignal for TabulatedTemplate {
    fn value(&self, t: f64, theta2: f64) -> f64 {
        let (i, w) = self.locate(theta2);
        if self.fields.is_empty() {
            let a = &self.table[i * self.width..(i + 1) * self.width];
            let b = &self.table[(i + 1) * self.width..(i + 2) * self.width];
            match &self.encoder.omegas {
                Some(om) => {
                    let mut acc = self.encoder.bias();
                    om.for_each_carrier(t, |v, c| acc += c * (a[v] + w * (b[v] - a[v])));
                    acc
                }
                None => {
                    let sched = &self.encoder.schedule;
                    let phase = t.rem_euclid(sched.period) / sched.period;
                    let k = ((phase * self.width as f64).floor() as usize).min(self.width - 1);
                    a[k] + w * (b[k] - a[k]) + self.encoder.bias()
                }
            }
        } else {
            let fa = self.encoder.evaluate(&self.fields[i], t).unwrap_or(f64::NAN);
            let fb = self.encoder.evaluate(&self.fields[i + 1], t).unwrap_or(f64::NAN);
            fa + w * (fb - fa)
        }
    }
}

/// Serializable description of the temporal code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum EncoderSpec {
    FrequencyStrips {
        rows: usize,
        cols: usize,
        omega_base: f64,
        #[serde(default = "strip_integral")]
        functional: FunctionalKind,
        #[serde(default)]
        bias: f64,
    },
    FrequencyTiles {
        rows: usize,
        cols: usize,
        omega_base: f64,
        #[serde(default = "strip_integral")]
        functional: FunctionalKind,
        #[serde(default)]
        bias: f64,
    },
    Sweep {
        rects: Vec<Rect>,
        period: f64,
        functional: FunctionalKind,
        #[serde(default)]
        bias: f64,
    },
    ScanLine {
        points: Vec<[f64; 2]>,
        period: f64,
        #[serde(default)]
        bias: f64,
    },
}

fn strip_integral() -> FunctionalKind {
    FunctionalKind::StripIntegral
}

impl EncoderSpec {
    pub fn build(&self, domain: &Domain) -> Result<Encoder> {
        let enc = match self {
            EncoderSpec::FrequencyStrips { rows, cols, omega_base, functional, bias } => {
                let sched = SamplingSchedule::frequency_strips(domain, *rows, *cols, std::f64::consts::PI / omega_base)?;
                let omegas = FrequencyAssignment::linear(*omega_base, rows + cols)?;
                Encoder::new(sched, FunctionalSpec::new(*functional, *bias), Some(omegas))?
            }
            EncoderSpec::FrequencyTiles { rows, cols, omega_base, functional, bias } => {
                let sched = SamplingSchedule::frequency_tiles(domain, *rows, *cols, std::f64::consts::PI / omega_base)?;
                let omegas = FrequencyAssignment::linear(*omega_base, rows * cols)?;
                Encoder::new(sched, FunctionalSpec::new(*functional, *bias), Some(omegas))?
            }
            EncoderSpec::Sweep { rects, period, functional, bias } => {
                Encoder::new(SamplingSchedule::sweep(rects.clone(), *period)?, FunctionalSpec::new(*functional, *bias), None)?
            }
            EncoderSpec::ScanLine { points, period, bias } => Encoder::new(
                SamplingSchedule::scan_line(points.iter().map(|p| (p[0], p[1])).collect(), *period)?,
                FunctionalSpec::new(FunctionalKind::ScanPoint, *bias),
                None,
            )?,
        };
        enc.schedule.validate(domain)?;
        Ok(enc)
    }
}

/// Ground truth applied to the image, and the model family the templates use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub model: PerturbKind,
    pub theta1: Theta1Schedule,
    pub theta2: f64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self { model: PerturbKind::Identity, theta1: Theta1Schedule::constant(1.0), theta2: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(flatten)]
    pub params: HRParams,
    /// Coupling strength γ.
    pub gamma: f64,
    /// Scale applied to the filter outputs before they drive the neurons.
    #[serde(default = "default_one")]
    pub input_gain: f64,
}

fn default_true() -> bool {
    true
}

fn default_one() -> f64 {
    1.0
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { enabled: true, params: HRParams::default(), gamma: 16.125, input_gain: 1.0 }
    }
}

/// Per-field overrides of the estimated matching constants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstantsOverride {
    pub d: Option<f64>,
    pub d2: Option<f64>,
    pub d3: Option<f64>,
    pub d4: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSpec {
    /// Fraction of the horizon over which the dead-zone residual must vanish.
    pub final_fraction: f64,
    pub sync_window_fraction: f64,
    pub sync_threshold: f64,
    /// θ₂ grid size for the template table.
    pub table_points: usize,
    /// θ₂ grid size for the constant estimates.
    pub constants_grid: usize,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            final_fraction: 0.2,
            sync_window_fraction: DEFAULT_WINDOW_FRACTION,
            sync_threshold: DEFAULT_SYNC_THRESHOLD,
            table_points: 721,
            constants_grid: 65,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub record_stride: usize,
    /// Initial search angle ψ₀ (`λ₂ = sin ψ₀`, `λ₃ = cos ψ₀`); `None` starts at `(0, 1)`.
    #[serde(default)]
    pub init_phase: Option<f64>,
    pub adapt: AdaptParams,
    #[serde(default)]
    pub hr: DetectorConfig,
    pub encoder: EncoderSpec,
    #[serde(default)]
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub constants: ConstantsOverride,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    /// Derive γ₂, γ₁ and dt from the estimated constants instead of taking
    /// the configured values.
    #[serde(default)]
    pub auto_gains: Option<AutoGains>,
}

/// `γ₂ = gamma2_fraction · γ₂max`, `γ₁ = gain_ratio · γ₂`, `dt = dt_fraction · dt_limit`.
/// With several templates the smallest `γ₂max` and largest `D₄` are used.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoGains {
    pub gamma2_fraction: f64,
    pub gain_ratio: f64,
    #[serde(default = "default_one")]
    pub dt_fraction: f64,
}

impl AutoGains {
    fn validate(&self) -> Result<()> {
        if !(self.gamma2_fraction > 0.0 && self.gamma2_fraction < 1.0) {
            return Err(Error::Config(format!("gamma2_fraction must lie in (0, 1), got {}", self.gamma2_fraction)));
        }
        if !(self.gain_ratio.is_finite() && self.gain_ratio > 0.0) {
            return Err(Error::Config(format!("gain_ratio must be positive, got {}", self.gain_ratio)));
        }
        if !(self.dt_fraction > 0.0 && self.dt_fraction <= 1.0) {
            return Err(Error::Config(format!("dt_fraction must lie in (0, 1], got {}", self.dt_fraction)));
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon > self.dt) {
            return Err(Error::Config(format!("horizon {} must exceed dt {}", self.horizon, self.dt)));
        }
        if self.record_stride == 0 {
            return Err(Error::Config("record_stride must be at least 1".into()));
        }
        let a = &self.analysis;
        if !(a.final_fraction > 0.0 && a.final_fraction <= 0.5) {
            return Err(Error::Config(format!("final_fraction must lie in (0, 0.5], got {}", a.final_fraction)));
        }
        if !(a.sync_window_fraction > 0.0 && a.sync_window_fraction <= 0.5) {
            return Err(Error::Config(format!(
                "sync_window_fraction must lie in (0, 0.5], got {}",
                a.sync_window_fraction
            )));
        }
        self.adapt.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.perturbation.theta1.validate()?;
        if let Some(g) = &self.auto_gains {
            g.validate()?;
        }
        if self.hr.enabled {
            self.hr.params.validate()?;
            if !(self.hr.gamma.is_finite() && self.hr.gamma >= 0.0) {
                return Err(Error::Config(format!("coupling gamma must be non-negative, got {}", self.hr.gamma)));
            }
        }
        Ok(())
    }

    /// Largest step allowed by `dt ≤ 0.1·min(τ, 1/(γ₁kD₄), 1)`, further limited
    /// by the coupling stiffness `(n+1)γ` of the detector.
    /// Copy with `auto_gains` applied to the given per-template constants.
    pub fn resolved(&self, constants: &[MatchConstants]) -> Result<RunConfig> {
        self.validate()?;
        let Some(g) = self.auto_gains else {
            return Ok(self.clone());
        };
        let mut out = self.clone();
        out.auto_gains = None;
        let mut g2max = f64::INFINITY;
        for c in constants {
            g2max = g2max.min(table3_gamma2_max(c, &self.adapt)?);
        }
        if !g2max.is_finite() {
            return Err(Error::Config("auto gains need at least one template".into()));
        }
        out.adapt.gamma2 = g.gamma2_fraction * g2max;
        out.adapt.gamma1 = g.gain_ratio * out.adapt.gamma2;
        let d4 = constants.iter().map(|c| c.d4).fold(0.0, f64::max);
        out.dt = g.dt_fraction * out.dt_limit(d4, constants.len() + 1);
        out.validate()?;
        Ok(out)
    }

    pub fn dt_limit(&self, d4: f64, nodes: usize) -> f64 {
        let p = &self.adapt;
        let fast = if p.gamma1 * p.k * d4 > 0.0 { 1.0 / (p.gamma1 * p.k * d4) } else { f64::INFINITY };
        let mut limit = 0.1 * p.tau.min(fast).min(1.0);
        if self.hr.enabled && self.hr.gamma > 0.0 {
            limit = limit.min(1.0 / (nodes as f64 * self.hr.gamma));
        }
        limit
    }
}

/// Recorded samples with named columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(names: Vec<String>) -> Self {
        let columns = vec![Vec::new(); names.len()];
        Self { times: Vec::new(), names, columns }
    }

    pub fn push(&mut self, t: f64, row: &[f64]) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.times.push(t);
        for (c, v) in self.columns.iter_mut().zip(row) {
            c.push(*v);
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(std::iter::once("t").chain(self.names.iter().map(String::as_str)))?;
        let mut row = Vec::with_capacity(self.names.len() + 1);
        for (k, t) in self.times.iter().enumerate() {
            row.clear();
            row.push(t.to_string());
            row.extend(self.columns.iter().map(|c| c[k].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundValues {
    pub table3_epsilon: Option<f64>,
    pub table3_gamma2_max: Option<f64>,
    pub m1: f64,
    pub sync_upper_bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    /// Largest dead-zone residual `‖e‖_ε` over the final window of recorded samples.
    pub final_window_max: f64,
    pub final_window_max_abs_error: f64,
    /// Fraction of recorded samples inside the dead zone.
    pub fraction_in_zone: f64,
    /// Last integration time (full resolution) at which the error left the dead zone.
    pub last_excursion: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateReport {
    pub index: usize,
    pub matched: bool,
    pub theta1_hat: f64,
    pub theta2_hat: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub theta2_total_variation: f64,
    pub residual: ResidualSummary,
    pub sync: Option<PairSync>,
    pub max_abs_state: f64,
    pub constants: MatchConstants,
    pub bounds: BoundValues,
    pub validity: ValidityReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub matched_any: bool,
    pub seed: u64,
    pub dt: f64,
    pub horizon: f64,
    pub final_window_start: f64,
    pub gamma: Option<f64>,
    pub gamma1: f64,
    pub gamma2: f64,
    pub templates: Vec<TemplateReport>,
}

impl MatchReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: MatchReport,
    pub trajectory: Trajectory,
}

/// Estimates `(D, D₂, D₃, D₄, Δ)` for one template, then applies overrides.
/// `Δ` compares the template with the unperturbed image under every model θ₂.
pub fn estimate_constants(
    image: &ScalarField,
    template: &ScalarField,
    kind: PerturbKind,
    encoder: &Encoder,
    range: Interval,
    grid_points: usize,
    overrides: &ConstantsOverride,
) -> Result<(MatchConstants, Option<f64>)> {
    let grid = range.grid(grid_points.max(2));
    let d = match overrides.d {
        Some(v) => v,
        None => estimate_lipschitz_d(template, kind, &grid)?,
    };
    let d2 = overrides.d2.unwrap_or_else(|| encoder.lipschitz());
    let period = encoder.schedule.period;
    let span = match &encoder.omegas {
        Some(w) => period * w.omegas.iter().cloned().fold(0.0, f64::max) / w.omegas.iter().cloned().fold(f64::INFINITY, f64::min),
        None => period,
    };
    let needs_bounds = overrides.d3.is_none() || overrides.d4.is_none();
    let (mut d3, mut d4, mut bias) = (0.0, 0.0, None);
    if needs_bounds {
        let b = estimate_d3_d4(template, kind, encoder, &grid, span, DEFAULT_FLOOR_FRACTION)?;
        d3 = b.d3;
        d4 = b.d4;
        bias = b.recommended_bias;
    }
    let d3 = overrides.d3.unwrap_or(d3);
    let d4 = overrides.d4.unwrap_or(d4);
    let delta = match overrides.delta {
        Some(v) => v,
        None => {
            let n_t = ((span / period).ceil() as usize).max(1) * SAMPLES_PER_PERIOD;
            let mut worst = 0.0f64;
            for &th in &grid {
                let a = apply_nonlinear(image, kind, th)?;
                let b = apply_nonlinear(template, kind, th)?;
                if encoder.is_tabulable() {
                    let (ra, rb) = (encoder.responses(&a)?, encoder.responses(&b)?);
                    for k in 0..=n_t {
                        let t = span * k as f64 / n_t as f64;
                        worst = worst.max((encoder.combine(&ra, t) - encoder.combine(&rb, t)).abs());
                    }
                } else {
                    for k in 0..=n_t {
                        let t = span * k as f64 / n_t as f64;
                        worst = worst.max((encoder.evaluate(&a, t)? - encoder.evaluate(&b, t)?).abs());
                    }
                }
            }
            worst
        }
    };
    Ok((MatchConstants { d, d2, d3, d4, delta }, bias))
}

/// Encoded image, template tables and constants, reusable across runs that
/// share the image, templates, encoder, perturbation and parameter ranges.
pub struct PreparedMatch {
    pub image: EncodedImage,
    pub templates: Vec<TabulatedTemplate>,
    pub constants: Vec<MatchConstants>,
    pub biases: Vec<Option<f64>>,
}

impl PreparedMatch {
    pub fn new(image: &ScalarField, templates: &[ScalarField], cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        if templates.is_empty() {
            return Err(Error::Config("at least one template is required".into()));
        }
        let encoder = cfg.encoder.build(image.domain())?;
        let pert = &cfg.perturbation;
        let measured = apply_nonlinear(image, pert.model, pert.theta2)?;
        let image_signal = EncodedImage::new(&measured, encoder.clone(), pert.theta1.clone())?;
        let mut constants = Vec::with_capacity(templates.len());
        let mut biases = Vec::with_capacity(templates.len());
        let mut tables = Vec::with_capacity(templates.len());
        for tpl in templates {
            if tpl.domain() != image.domain() {
                return Err(Error::Domain("template and image domains differ".into()));
            }
            let (c, bias) = estimate_constants(
                image,
                tpl,
                pert.model,
                &encoder,
                cfg.adapt.theta2_range,
                cfg.analysis.constants_grid,
                &cfg.constants,
            )?;
            constants.push(c);
            biases.push(bias);
            tables.push(TabulatedTemplate::new(
                tpl,
                pert.model,
                encoder.clone(),
                cfg.adapt.theta2_range,
                cfg.analysis.table_points,
            )?);
        }
        Ok(Self { image: image_signal, templates: tables, constants, biases })
    }

    /// Config with `auto_gains` resolved against these constants.
    pub fn resolve(&self, cfg: &RunConfig) -> Result<RunConfig> {
        cfg.resolved(&self.constants)
    }

    pub fn run(&self, cfg: &RunConfig) -> Result<RunOutput> {
        let cfg = self.resolve(cfg)?;
        let refs: Vec<&dyn TemplateSignal> = self.templates.iter().map(|t| t as &dyn TemplateSignal).collect();
        run_channels(&self.image, &refs, &self.constants, &self.biases, &cfg)
    }
}

/// Runs the full pipeline on an image and a list of templates.
pub fn run_match(image: &ScalarField, templates: &[ScalarField], cfg: &RunConfig) -> Result<RunOutput> {
    PreparedMatch::new(image, templates, cfg)?.run(cfg)
}

/// Integrates prepared signals. `constants[i]` and `biases[i]` describe template `i`.
pub fn run_channels(
    image: &dyn ImageSignal,
    templates: &[&dyn TemplateSignal],
    constants: &[MatchConstants],
    biases: &[Option<f64>],
    cfg: &RunConfig,
) -> Result<RunOutput> {
    let cfg = &cfg.resolved(constants)?;
    let m = templates.len();
    let p = &cfg.adapt;
    let mut validity = Vec::with_capacity(m);
    let mut failures = Vec::new();
    for (i, c) in constants.iter().enumerate() {
        let mut v = check_params(p, c);
        v.recommended_bias = biases.get(i).copied().flatten();
        if let Err(Error::Validity(msg)) = v.require() {
            failures.push(format!("template {}: {msg}", i + 1));
        }
        validity.push(v);
    }
    if !failures.is_empty() {
        return Err(Error::Validity(failures.join("; ")));
    }
    let nodes = m + 1;
    let d4 = constants.iter().map(|c| c.d4).fold(0.0, f64::max);
    let limit = cfg.dt_limit(d4, nodes);
    if cfg.dt > limit * (1.0 + 1e-12) {
        return Err(Error::Config(format!("dt {} exceeds the stability limit {limit}", cfg.dt)));
    }

    let detector = cfg.hr.enabled;
    let hr_off = 1 + 4 * m;
    let dim = hr_off + if detector { 3 * nodes } else { 0 };
    let mut y = vec![0.0; dim];
    let init = match cfg.init_phase {
        Some(psi) => AdaptState::with_phase(psi),
        None => AdaptState::default(),
    };
    for i in 0..m {
        let o = 1 + 4 * i;
        y[o + 2] = init.lambda2;
        y[o + 3] = init.lambda3;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if detector {
        let hr0 = HRNetState::random(nodes, &mut rng);
        y[hr_off..].copy_from_slice(&hr0.to_flat());
    }

    let mut names = vec!["phi0".to_string()];
    for i in 1..=m {
        for n in ["phi", "lambda1", "lambda2", "lambda3", "theta1_hat", "theta2_hat", "e", "deadzone"] {
            names.push(format!("{n}_{i}"));
        }
    }
    if detector {
        for v in ["x", "y", "z"] {
            for j in 0..nodes {
                names.push(format!("{v}_{j}"));
            }
        }
    }
    let mut traj = Trajectory::new(names);
    let mut row = vec![0.0; traj.names.len()];
    let record = |t: f64, y: &[f64], traj: &mut Trajectory, row: &mut Vec<f64>| {
        row[0] = y[0];
        for i in 0..m {
            let s = channel_state(y, i);
            let (th1, th2) = theta_hats(&s, p);
            let o = 1 + 8 * i;
            row[o..o + 8].copy_from_slice(&[
                s.phi_i,
                s.lambda1,
                s.lambda2,
                s.lambda3,
                th1,
                th2,
                s.error(),
                deadzone(s.error(), p.epsilon),
            ]);
        }
        if detector {
            row[1 + 8 * m..].copy_from_slice(&y[hr_off..]);
        }
        traj.push(t, row);
    };

    let hr = cfg.hr.clone();
    let mut phi = vec![0.0; nodes];
    let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let f0 = image.value(t);
        if !f0.is_finite() {
            return Err(Error::Evaluation { t, theta2: f64::NAN });
        }
        for (i, tpl) in templates.iter().enumerate() {
            let s = channel_state(y, i);
            let d = adapt_rhs(&s, t, f0, |t, th| tpl.value(t, th), p)?;
            if i == 0 {
                dy[0] = d.phi0;
            }
            let o = 1 + 4 * i;
            dy[o..o + 4].copy_from_slice(&[d.phi_i, d.lambda1, d.lambda2, d.lambda3]);
        }
        if detector {
            phi[0] = hr.input_gain * y[0];
            for i in 0..m {
                phi[i + 1] = hr.input_gain * y[1 + 4 * i];
            }
            hr_rhs_flat(&y[hr_off..], &hr.params, hr.gamma, &phi, &mut dy[hr_off..])?;
        }
        Ok(())
    };

    let steps = (cfg.horizon / cfg.dt).round() as usize;
    let mut rk = Rk4::new(dim);
    let mut max_abs = vec![0.0f64; m];
    let mut last_excursion: Vec<Option<f64>> = vec![None; m];
    let track = |y: &[f64], t: f64, max_abs: &mut [f64], last: &mut [Option<f64>]| {
        let hr_max = if detector { y[hr_off..].iter().fold(0.0f64, |a, v| a.max(v.abs())) } else { 0.0 };
        for i in 0..m {
            let s = channel_state(y, i);
            let local = s.to_array().iter().fold(hr_max, |a, v| a.max(v.abs()));
            max_abs[i] = max_abs[i].max(local);
            if deadzone(s.error(), p.epsilon) > 0.0 {
                last[i] = Some(t);
            }
        }
    };
    record(0.0, &y, &mut traj, &mut row);
    track(&y, 0.0, &mut max_abs, &mut last_excursion);
    for n in 0..steps {
        let t = n as f64 * cfg.dt;
        rk.step(&mut rhs, t, &mut y, cfg.dt)?;
        let t1 = (n + 1) as f64 * cfg.dt;
        for i in 0..m {
            let o = 1 + 4 * i;
            let drift = y[o + 2] * y[o + 2] + y[o + 3] * y[o + 3] - 1.0;
            if drift.abs() > CIRCLE_DRIFT_LIMIT {
                return Err(Error::Step {
                    t: t1,
                    reason: format!("search state of template {} drifted {drift:e} off the unit circle", i + 1),
                });
            }
            if p.renormalize {
                let r = y[o + 2].hypot(y[o + 3]);
                y[o + 2] /= r;
                y[o + 3] /= r;
            }
        }
        track(&y, t1, &mut max_abs, &mut last_excursion);
        if (n + 1) % cfg.record_stride == 0 || n + 1 == steps {
            record(t1, &y, &mut traj, &mut row);
        }
    }

    let report = analyze(&traj, &y, constants, validity, &max_abs, &last_excursion, cfg)?;
    Ok(RunOutput { report, trajectory: traj })
}

fn channel_state(y: &[f64], i: usize) -> AdaptState {
    let o = 1 + 4 * i;
    AdaptState { phi0: y[0], phi_i: y[o], lambda1: y[o + 1], lambda2: y[o + 2], lambda3: y[o + 3] }
}

/// Builds the report from the recorded trajectory. The matched verdict uses
/// recorded samples only, so it can be re-derived from the CSV.
fn analyze(
    traj: &Trajectory,
    y: &[f64],
    constants: &[MatchConstants],
    validity: Vec<ValidityReport>,
    max_abs: &[f64],
    last_excursion: &[Option<f64>],
    cfg: &RunConfig,
) -> Result<MatchReport> {
    let m = constants.len();
    let t_end = *traj.times.last().expect("trajectory has the initial sample");
    let start = t_end * (1.0 - cfg.analysis.final_fraction);
    let k0 = traj.times.partition_point(|&t| t < start);
    let hr_states: Option<Vec<HRNetState>> = cfg.hr.enabled.then(|| {
        let nodes = m + 1;
        (0..traj.len())
            .map(|k| {
                let col = |v: &str, j: usize| traj.column(&format!("{v}_{j}")).expect("HR column")[k];
                HRNetState {
                    x: (0..nodes).map(|j| col("x", j)).collect(),
                    y: (0..nodes).map(|j| col("y", j)).collect(),
                    z: (0..nodes).map(|j| col("z", j)).collect(),
                }
            })
            .collect()
    });
    let pairs = match &hr_states {
        Some(states) => Some(sync_metrics(
            &traj.times,
            states,
            cfg.analysis.sync_window_fraction * t_end,
            cfg.analysis.sync_threshold,
        )?),
        None => None,
    };
    let hr_bound = cfg.hr.enabled.then(|| sync_upper_bound(m, &cfg.hr.params).ok()).flatten();
    let mut reports = Vec::with_capacity(m);
    for (i, validity) in validity.into_iter().enumerate() {
        let col = |n: &str| traj.column(&format!("{n}_{}", i + 1)).expect("adapt column");
        let dz = &col("deadzone")[k0..];
        let e = &col("e")[k0..];
        let th2 = &col("theta2_hat")[k0..];
        let tv: f64 = th2.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        let all_dz = col("deadzone");
        let residual = ResidualSummary {
            final_window_max: dz.iter().cloned().fold(0.0, f64::max),
            final_window_max_abs_error: e.iter().fold(0.0f64, |a, v| a.max(v.abs())),
            fraction_in_zone: all_dz.iter().filter(|v| **v == 0.0).count() as f64 / all_dz.len() as f64,
            last_excursion: last_excursion[i],
        };
        let sync = pairs.as_ref().and_then(|ps| ps.iter().find(|s| s.i == 0 && s.j == i + 1).cloned());
        let matched = residual.final_window_max == 0.0 && sync.as_ref().map_or(true, |s| s.synchronized);
        let s = channel_state(y, i);
        let (th1, th2_final) = theta_hats(&s, &cfg.adapt);
        let c = &constants[i];
        reports.push(TemplateReport {
            index: i + 1,
            matched,
            theta1_hat: th1,
            theta2_hat: th2_final,
            lambda2: s.lambda2,
            lambda3: s.lambda3,
            theta2_total_variation: tv,
            residual,
            sync,
            max_abs_state: max_abs[i],
            constants: *c,
            bounds: BoundValues {
                table3_epsilon: table3_epsilon(c, &cfg.adapt).ok(),
                table3_gamma2_max: table3_gamma2_max(c, &cfg.adapt).ok(),
                m1: c.m1(&cfg.adapt),
                sync_upper_bound: hr_bound,
            },
            validity,
        });
    }
    Ok(MatchReport {
        matched_any: reports.iter().any(|r| r.matched),
        seed: cfg.seed,
        dt: cfg.dt,
        horizon: cfg.horizon,
        final_window_start: start,
        gamma: cfg.hr.enabled.then_some(cfg.hr.gamma),
        gamma1: cfg.adapt.gamma1,
        gamma2: cfg.adapt.gamma2,
        templates: reports,
    })
}

/// Re-derives each template's matched flag from a recorded trajectory.
pub fn matched_from_trajectory(traj: &Trajectory, templates: usize, cfg: &RunConfig) -> Result<Vec<bool>> {
    let t_end = *traj.times.last().ok_or_else(|| Error::Input("empty trajectory".into()))?;
    let k0 = traj.times.partition_point(|&t| t < t_end * (1.0 - cfg.analysis.final_fraction));
    let mut out = Vec::with_capacity(templates);
    for i in 1..=templates {
        let dz = traj.column(&format!("deadzone_{i}")).ok_or_else(|| Error::Input(format!("no deadzone_{i}")))?;
        let mut ok = dz[k0..].iter().all(|v| *v == 0.0);
        if cfg.hr.enabled {
            let w = cfg.analysis.sync_window_fraction * t_end;
            let j0 = traj.times.partition_point(|&t| t < t_end - w);
            let x0 = traj.column("x_0").ok_or_else(|| Error::Input("no x_0".into()))?;
            let xi = traj.column(&format!("x_{i}")).ok_or_else(|| Error::Input(format!("no x_{i}")))?;
            ok &= x0[j0..].iter().zip(&xi[j0..]).all(|(a, b)| (a - b).abs() < cfg.analysis.sync_threshold);
        }
        out.push(ok);
    }
    Ok(out)
}

/// Sets a numeric configuration field addressed by a dotted path.
pub fn set_numeric(cfg: &RunConfig, axis: &str, value: f64) -> Result<RunConfig> {
    let mut v = serde_json::to_value(cfg)?;
    let mut cur = &mut v;
    for part in axis.split('.') {
        cur = cur
            .get_mut(part)
            .ok_or_else(|| Error::Config(format!("unknown sweep axis '{axis}'")))?;
    }
    if !(cur.is_number() || cur.is_null()) {
        return Err(Error::Config(format!("sweep axis '{axis}' is not numeric")));
    }
    *cur = if axis == "seed" || axis == "record_stride" || axis.ends_with("table_points") || axis.ends_with("constants_grid") {
        serde_json::Value::from(value as u64)
    } else {
        serde_json::Value::from(value)
    };
    serde_json::from_value(v).map_err(|e| Error::Config(format!("sweep axis '{axis}': {e}")))
}

/// Independent runs over `values` of one numeric field, in the given order.
pub fn sweep(
    image: &ScalarField,
    templates: &[ScalarField],
    cfg: &RunConfig,
    axis: &str,
    values: &[f64],
) -> Result<Vec<Result<MatchReport>>> {
    let cfgs: Vec<RunConfig> = values.iter().map(|&v| set_numeric(cfg, axis, v)).collect::<Result<_>>()?;
    Ok(cfgs
        .par_iter()
        .map(|c| run_match(image, templates, c).map(|o| o.report))
        .collect())
}
