//! Adaptive level: temporal-integration filters, fast gain adaptation and the
//! slow harmonic search over the nonlinear parameter.
//!
//! For one template channel the state is `(φ₀, φᵢ, λ₁, λ₂, λ₃)` and
//!
//! ```text
//! φ̇₀ = −φ₀/τ + k·θ₁f₀(t, θ₂)
//! φ̇ᵢ = −φᵢ/τ + k·θ̂₁·fᵢ(t, θ̂₂)
//! λ̇₁ = (γ₁/τ)·e                    e = φ₀ − φᵢ
//! λ̇₂ =  γ₂·λ₃·‖e‖_ε
//! λ̇₃ = −γ₂·λ₂·‖e‖_ε
//! θ̂₁ = γ₁·e + λ₁
//! θ̂₂ = θ₂min + (λ₂ + 1)(θ₂max − θ₂min)/2
//! ```
//!
//! The search rotates `(λ₂, λ₃)` along the unit circle while the error is
//! outside the dead zone and freezes it once the filtered signals agree.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Interval;

/// Drift of `λ₂² + λ₃²` from 1 beyond which a run is aborted.
pub const CIRCLE_DRIFT_LIMIT: f64 = 1e-3;
pub const DEFAULT_GAIN_RATIO: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptState {
    pub phi0: f64,
    pub phi_i: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for AdaptState {
    fn default() -> Self {
        Self { phi0: 0.0, phi_i: 0.0, lambda1: 0.0, lambda2: 0.0, lambda3: 1.0 }
    }
}

impl AdaptState {
    /// Starts the search at angle `psi` on the unit circle:
    /// `λ₂ = sin ψ`, `λ₃ = cos ψ`.
    pub fn with_phase(psi: f64) -> Self {
        Self { lambda2: psi.sin(), lambda3: psi.cos(), ..Self::default() }
    }

    pub fn error(&self) -> f64 {
        self.phi0 - self.phi_i
    }

    pub fn circle_drift(&self) -> f64 {
        self.lambda2 * self.lambda2 + self.lambda3 * self.lambda3 - 1.0
    }

    /// Angle of `(λ₂, λ₃)` measured as `atan2(λ₂, λ₃)`.
    pub fn phase(&self) -> f64 {
        self.lambda2.atan2(self.lambda3)
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.phi0, self.phi_i, self.lambda1, self.lambda2, self.lambda3]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self { phi0: v[0], phi_i: v[1], lambda1: v[2], lambda2: v[3], lambda3: v[4] }
    }

    pub fn renormalize(&mut self) {
        let r = self.lambda2.hypot(self.lambda3);
        if r > 0.0 {
            self.lambda2 /= r;
            self.lambda3 /= r;
        }
    }
}

fn default_ratio() -> f64 {
    DEFAULT_GAIN_RATIO
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptParams {
    pub tau: f64,
    pub k: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub epsilon: f64,
    pub theta1_range: Interval,
    pub theta2_range: Interval,
    /// Holds θ̂₂ fixed and switches the search off.
    #[serde(default)]
    pub pin_theta2: Option<f64>,
    /// Projects `(λ₂, λ₃)` back onto the unit circle after every step.
    #[serde(default)]
    pub renormalize: bool,
    /// Smallest accepted `γ₁/γ₂`.
    #[serde(default = "default_ratio")]
    pub min_gain_ratio: f64,
}

impl AdaptParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau", self.tau), ("k", self.k), ("gamma1", self.gamma1), ("epsilon", self.epsilon)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.gamma2.is_finite() && self.gamma2 >= 0.0) {
            return Err(Error::Parameter(format!("gamma2 must be non-negative, got {}", self.gamma2)));
        }
        for (name, r) in [("theta1_range", self.theta1_range), ("theta2_range", self.theta2_range)] {
            if !(r.min.is_finite() && r.max.is_finite() && r.max > r.min) {
                return Err(Error::Parameter(format!("{name} must be a non-empty interval, got {r:?}")));
            }
        }
        if let Some(p) = self.pin_theta2 {
            if !self.theta2_range.contains(p) {
                return Err(Error::Parameter(format!("pinned theta2 {p} outside {:?}", self.theta2_range)));
            }
        }
        Ok(())
    }

    /// θ̂₂ for a given `λ₂`, clamped to the range.
    pub fn theta2_of(&self, lambda2: f64) -> f64 {
        let r = self.theta2_range;
        (r.min + (lambda2 + 1.0) * r.width() / 2.0).clamp(r.min, r.max)
    }

    /// `λ₂` that maps to `theta2`.
    pub fn lambda2_of(&self, theta2: f64) -> f64 {
        let r = self.theta2_range;
        2.0 * (theta2 - r.min) / r.width() - 1.0
    }
}

/// Constants entering the Theorem 1 conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchConstants {
    /// Lipschitz constant of the perturbation in θ₂ (sup norm).
    pub d: f64,
    /// Lipschitz constant of the sampling functional.
    pub d2: f64,
    /// Lower bound of the template signal.
    pub d3: f64,
    /// Upper bound of the template signal.
    pub d4: f64,
    /// Mismatch bound between image and template signals.
    pub delta: f64,
}

impl MatchConstants {
    /// `M₁ = Δ + k·θ₁max·D·D₂·|θ₂max − θ₂min|`.
    pub fn m1(&self, p: &AdaptParams) -> f64 {
        self.delta + p.k * p.theta1_range.max * self.d * self.d2 * p.theta2_range.width().abs()
    }

    fn ratio(&self) -> Result<f64> {
        if !(self.d3 > 0.0) {
            return Err(Error::Constants(format!("D3 must be positive, got {}", self.d3)));
        }
        Ok(self.d4 / self.d3)
    }
}

/// `max(|x| − Δ, 0)`.
pub fn deadzone(x: f64, delta: f64) -> f64 {
    (x.abs() - delta).max(0.0)
}

/// `(θ̂₁, θ̂₂)` reconstructed from the state.
pub fn theta_hats(state: &AdaptState, params: &AdaptParams) -> (f64, f64) {
    let theta1 = state.error() * params.gamma1 + state.lambda1;
    let theta2 = match params.pin_theta2 {
        Some(p) => p,
        None => params.theta2_of(state.lambda2),
    };
    (theta1, theta2)
}

/// Time derivative of the adaptive state. `f0_value` is the already formed
/// image signal `θ₁f₀(t, θ₂)`; `f_template(t, θ₂)` evaluates the template model.
pub fn adapt_rhs<F>(state: &AdaptState, t: f64, f0_value: f64, f_template: F, params: &AdaptParams) -> Result<AdaptState>
where
    F: FnOnce(f64, f64) -> f64,
{
    let (theta1, theta2) = theta_hats(state, params);
    let fi = f_template(t, theta2);
    if !fi.is_finite() {
        return Err(Error::Evaluation { t, theta2 });
    }
    let e = state.error();
    let inv_tau = 1.0 / params.tau;
    let (dl2, dl3) = if params.pin_theta2.is_some() {
        (0.0, 0.0)
    } else {
        let dz = params.gamma2 * deadzone(e, params.epsilon);
        (dz * state.lambda3, -dz * state.lambda2)
    };
    Ok(AdaptState {
        phi0: -state.phi0 * inv_tau + params.k * f0_value,
        phi_i: -state.phi_i * inv_tau + params.k * theta1 * fi,
        lambda1: params.gamma1 * inv_tau * e,
        lambda2: dl2,
        lambda3: dl3,
    })
}

/// Right-hand side of the dead-zone inequality
/// `ε > τ(Δ(1 + D₄/D₃) + (γ₂/γ₁)[θ₁max·D·D₂·D₄/D₃²·M₁·τ·(1 + D₄/D₃)·(θ₂max − θ₂min)/2])`.
pub fn table3_epsilon(c: &MatchConstants, p: &AdaptParams) -> Result<f64> {
    let r = c.ratio()?;
    let half_width = p.theta2_range.width() / 2.0;
    let bracket = p.theta1_range.max * c.d * c.d2 * c.d4 / (c.d3 * c.d3) * c.m1(p) * p.tau * (1.0 + r) * half_width;
    Ok(p.tau * (c.delta * (1.0 + r) + p.gamma2 / p.gamma1 * bracket))
}

/// Upper bound on the search gain
/// `γ₂ < (1/4τ)²·[k·θ₁max·D·D₂·(1 + D₄/D₃)·(θ₂max − θ₂min)/2]⁻¹`.
pub fn table3_gamma2_max(c: &MatchConstants, p: &AdaptParams) -> Result<f64> {
    let r = c.ratio()?;
    let bracket = p.k * p.theta1_range.max * c.d * c.d2 * (1.0 + r) * (p.theta2_range.width() / 2.0);
    if !(bracket > 0.0) {
        return Err(Error::Constants(format!("gamma2 bound undefined: bracket factor is {bracket}")));
    }
    let q = 1.0 / (4.0 * p.tau);
    Ok(q * q / bracket)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidityRow {
    pub condition: String,
    pub value: f64,
    pub bound: f64,
    pub margin: f64,
    pub pass: bool,
    /// Hard rows abort a run when they fail; soft rows are advisory.
    pub hard: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub rows: Vec<ValidityRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recommended_bias: Option<f64>,
}

impl ValidityReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn hard_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass || !r.hard)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidityRow> {
        self.rows.iter().filter(|r| !r.pass)
    }

    pub fn row(&self, condition: &str) -> Option<&ValidityRow> {
        self.rows.iter().find(|r| r.condition == condition)
    }

    /// Turns hard failures into a validity error naming every failing row.
    pub fn require(&self) -> Result<()> {
        let failed: Vec<String> = self
            .rows
            .iter()
            .filter(|r| r.hard && !r.pass)
            .map(|r| format!("{} (value {}, bound {})", r.condition, r.value, r.bound))
            .collect();
        if failed.is_empty() {
            Ok(())
        } else {
            Err(Error::Validity(failed.join("; ")))
        }
    }
}

pub const ROW_GAMMA2: &str = "gamma2 < table3_gamma2_max";
pub const ROW_EPSILON: &str = "epsilon > table3_epsilon";
pub const ROW_RATIO: &str = "gamma1/gamma2 >= min_gain_ratio";
pub const ROW_D3: &str = "D3 > 0";

/// Evaluates every Theorem 1 condition. The dead-zone row is advisory: the
/// printed bound is a worst-case sufficient condition and an ε below it is
/// exactly how a template is told apart from an unrelated image.
pub fn check_params(params: &AdaptParams, c: &MatchConstants) -> ValidityReport {
    let mut rows = Vec::with_capacity(4);
    let d3_ok = c.d3 > 0.0;
    rows.push(ValidityRow {
        condition: ROW_D3.into(),
        value: c.d3,
        bound: 0.0,
        margin: c.d3,
        pass: d3_ok,
        hard: true,
        note: (!d3_ok).then(|| "template signal touches zero; add bias to the sampling functional".into()),
    });
    if d3_ok {
        let (bound, note) = match table3_gamma2_max(c, params) {
            Ok(b) => (b, None),
            Err(e) => (f64::INFINITY, Some(e.to_string())),
        };
        rows.push(ValidityRow {
            condition: ROW_GAMMA2.into(),
            value: params.gamma2,
            bound,
            margin: bound - params.gamma2,
            pass: params.gamma2 < bound,
            hard: true,
            note,
        });
        let eps = table3_epsilon(c, params).expect("D3 checked positive");
        rows.push(ValidityRow {
            condition: ROW_EPSILON.into(),
            value: params.epsilon,
            bound: eps,
            margin: params.epsilon - eps,
            pass: params.epsilon > eps,
            hard: false,
            note: None,
        });
    }
    let ratio = if params.gamma2 > 0.0 { params.gamma1 / params.gamma2 } else { f64::INFINITY };
    rows.push(ValidityRow {
        condition: ROW_RATIO.into(),
        value: ratio,
        bound: params.min_gain_ratio,
        margin: ratio - params.min_gain_ratio,
        pass: ratio >= params.min_gain_ratio,
        hard: true,
        note: None,
    });
    ValidityReport { rows, recommended_bias: None }
}

/// The two `λ₃` values on the unit circle for a given `λ₂`.
pub fn branch_lambda3(lambda2: f64) -> Result<(f64, f64)> {
    if !(lambda2.abs() <= 1.0) {
        return Err(Error::Domain(format!("|lambda2| must be at most 1, got {lambda2}")));
    }
    let r = (1.0 - lambda2 * lambda2).sqrt();
    Ok((r, -r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn params() -> AdaptParams {
        AdaptParams {
            tau: 1.0,
            k: 1.0,
            gamma1: 10.0,
            gamma2: 0.1,
            epsilon: 0.05,
            theta1_range: Interval::new(0.5, 2.0),
            theta2_range: Interval::new(0.0, 2.0 * PI),
            pin_theta2: None,
            renormalize: false,
            min_gain_ratio: DEFAULT_GAIN_RATIO,
        }
    }

    #[test]
    fn deadzone_examples() {
        assert_eq!(deadzone(0.5, 1.0), 0.0);
        assert_eq!(deadzone(3.0, 1.0), 2.0);
        assert_eq!(deadzone(-2.5, 2.0), 0.5);
    }

    #[test]
    fn theta_hat_examples() {
        let p = params();
        let s = AdaptState { lambda2: -1.0, lambda3: 0.0, ..Default::default() };
        assert_eq!(theta_hats(&s, &p).1, 0.0);
        assert_eq!(theta_hats(&AdaptState::default(), &p).1, PI);
        let s = AdaptState { phi0: 0.1, ..Default::default() };
        assert!((theta_hats(&s, &p).0 - 1.0).abs() < 1e-15);
        let pinned = AdaptParams { pin_theta2: Some(1.25), ..p };
        assert_eq!(theta_hats(&AdaptState::default(), &pinned).1, 1.25);
    }

    #[test]
    fn theta2_clamped_on_drift() {
        let p = params();
        let s = AdaptState { lambda2: 1.0 + 1e-6, lambda3: 0.0, ..Default::default() };
        assert_eq!(theta_hats(&s, &p).1, 2.0 * PI);
    }

    #[test]
    fn dead_zone_freezes_search() {
        let p = params();
        let s = AdaptState { phi0: 0.3, phi_i: 0.3 + 0.5 * p.epsilon, ..AdaptState::with_phase(0.7) };
        let d = adapt_rhs(&s, 0.0, 1.0, |_, _| 2.0, &p).unwrap();
        assert_eq!((d.lambda2, d.lambda3), (0.0, 0.0));
        assert!((d.lambda1 - p.gamma1 * s.error()).abs() < 1e-15);
        assert!((d.phi0 - (-0.3 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn rhs_matches_formulas() {
        let p = AdaptParams { tau: 0.5, k: 2.0, ..params() };
        let s = AdaptState { phi0: 1.0, phi_i: 0.2, lambda1: 0.3, lambda2: 0.6, lambda3: 0.8 };
        let e = 0.8;
        let theta1 = p.gamma1 * e + 0.3;
        let theta2 = p.theta2_of(0.6);
        let d = adapt_rhs(&s, 1.5, 0.7, |t, th| t + th, &p).unwrap();
        assert!((d.phi0 - (-2.0 + 2.0 * 0.7)).abs() < 1e-12);
        assert!((d.phi_i - (-0.4 + 2.0 * theta1 * (1.5 + theta2))).abs() < 1e-12);
        assert!((d.lambda1 - p.gamma1 / 0.5 * e).abs() < 1e-12);
        let dz = e - p.epsilon;
        assert!((d.lambda2 - p.gamma2 * 0.8 * dz).abs() < 1e-15);
        assert!((d.lambda3 + p.gamma2 * 0.6 * dz).abs() < 1e-15);
    }

    #[test]
    fn non_finite_template_reports_time_and_theta() {
        let p = params();
        let r = adapt_rhs(&AdaptState::default(), 2.0, 1.0, |_, _| f64::NAN, &p);
        assert!(matches!(r, Err(Error::Evaluation { t, theta2 }) if t == 2.0 && theta2 == PI));
    }

    #[test]
    fn epsilon_bound_direct_substitution() {
        let p = AdaptParams { gamma2: 0.0, ..params() };
        let c = MatchConstants { d: 1.0, d2: 1.0, d3: 1.0, d4: 1.0, delta: 0.1 };
        assert!((table3_epsilon(&c, &p).unwrap() - 0.2).abs() < 1e-15);
        let c0 = MatchConstants { delta: 0.0, ..c };
        assert_eq!(table3_epsilon(&c0, &p).unwrap(), 0.0);
        let bad = MatchConstants { d3: 0.0, ..c };
        assert!(matches!(table3_epsilon(&bad, &p), Err(Error::Constants(_))));
    }

    #[test]
    fn gamma2_bound_direct_substitution() {
        let p = AdaptParams {
            tau: 0.25,
            k: 1.0,
            theta1_range: Interval::new(0.0, 1.0),
            theta2_range: Interval::new(0.0, 2.0),
            ..params()
        };
        let c = MatchConstants { d: 1.0, d2: 1.0, d3: 1.0, d4: 1.0, delta: 0.0 };
        assert!((table3_gamma2_max(&c, &p).unwrap() - 0.5).abs() < 1e-15);
        let p2 = AdaptParams { tau: 0.5, ..p.clone() };
        assert!((table3_gamma2_max(&c, &p2).unwrap() - 0.125).abs() < 1e-15);
        let flat = MatchConstants { d: 0.0, ..c };
        assert!(matches!(table3_gamma2_max(&flat, &p), Err(Error::Constants(_))));
    }

    #[test]
    fn check_params_rows() {
        let c = MatchConstants { d: 1.0, d2: 1.0, d3: 1.0, d4: 2.0, delta: 0.0 };
        let mut p = params();
        let bound = table3_gamma2_max(&c, &p).unwrap();
        p.gamma2 = 0.5 * bound;
        p.gamma1 = 100.0 * p.gamma2;
        p.epsilon = 1.01 * table3_epsilon(&c, &p).unwrap();
        let r = check_params(&p, &c);
        assert!(r.all_pass(), "{r:?}");
        assert!(r.require().is_ok());

        p.gamma2 = 2.0 * bound;
        let r = check_params(&p, &c);
        let row = r.row(ROW_GAMMA2).unwrap();
        assert!(!row.pass);
        assert!((row.margin + bound).abs() < 1e-15 * bound.max(1.0));
        assert!(matches!(r.require(), Err(Error::Validity(msg)) if msg.contains(ROW_GAMMA2)));

        let r = check_params(&p, &MatchConstants { d3: 0.0, ..c });
        assert!(!r.row(ROW_D3).unwrap().pass);
        assert!(!r.hard_pass());
    }

    #[test]
    fn soft_epsilon_row() {
        let c = MatchConstants { d: 1.0, d2: 1.0, d3: 1.0, d4: 1.0, delta: 10.0 };
        let mut p = params();
        p.gamma2 = 0.5 * table3_gamma2_max(&c, &p).unwrap();
        p.gamma1 = 100.0 * p.gamma2;
        let r = check_params(&p, &c);
        assert!(!r.row(ROW_EPSILON).unwrap().pass);
        assert!(r.hard_pass());
    }

    #[test]
    fn branches() {
        assert_eq!(branch_lambda3(0.0).unwrap(), (1.0, -1.0));
        assert_eq!(branch_lambda3(1.0).unwrap(), (0.0, -0.0));
        let (a, b) = branch_lambda3(0.6).unwrap();
        assert!((a - 0.8).abs() < 1e-15 && (b + 0.8).abs() < 1e-15);
        assert!(matches!(branch_lambda3(1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn lambda2_theta2_roundtrip() {
        let p = params();
        for th in [0.0, 1.0, PI, 6.0] {
            assert!((p.theta2_of(p.lambda2_of(th)) - th).abs() < 1e-12);
        }
    }
}
