//! Garner dot patterns: five Gaussian dots on a 3×3 lattice, with complexity
//! controlled by the order of rotational symmetry.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::AdaptParams;
use crate::encode::FunctionalKind;
use crate::engine::{
    AnalysisSpec, AutoGains, ConstantsOverride, DetectorConfig, EncoderSpec, PerturbationSpec, PreparedMatch,
    RunConfig, Theta1Schedule,
};
use crate::error::{Error, Result};
use crate::field::{Domain, Interval, PerturbKind, ScalarField};

pub const LATTICE_SPACING: f64 = 0.4;
pub const DEFAULT_DOT_WIDTH: f64 = 0.3;
pub const DOTS: usize = 5;
/// Single-linkage threshold for grouping final angles.
pub const CLUSTER_LINKAGE_DEG: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GarnerSpec {
    pub symmetry_order: u32,
    pub grid: usize,
    #[serde(default)]
    pub layout_seed: u64,
    #[serde(default = "default_width")]
    pub dot_width: f64,
}

fn default_width() -> f64 {
    DEFAULT_DOT_WIDTH
}

impl GarnerSpec {
    pub fn new(symmetry_order: u32, grid: usize) -> Self {
        Self { symmetry_order, grid, layout_seed: 0, dot_width: DEFAULT_DOT_WIDTH }
    }
}

type Cell = (i32, i32);

/// Quarter turn on lattice coordinates.
fn quarter(c: Cell) -> Cell {
    (-c.1, c.0)
}

fn rotated(set: &[Cell], turns: usize) -> Vec<Cell> {
    let mut out: Vec<Cell> = set
        .iter()
        .map(|&c| (0..turns).fold(c, |c, _| quarter(c)))
        .collect();
    out.sort();
    out
}

/// Order of the rotation group of a lattice subset: 4, 2 or 1.
fn lattice_order(set: &[Cell]) -> u32 {
    let mut base = set.to_vec();
    base.sort();
    if rotated(&base, 1) == base {
        4
    } else if rotated(&base, 2) == base {
        2
    } else {
        1
    }
}

/// Layouts of the requested order: the canonical one first, then every other
/// five-dot subset of the lattice with that order in lexicographic order.
fn layouts(order: u32) -> Vec<Vec<Cell>> {
    let canonical: Vec<Cell> = match order {
        4 => vec![(0, 0), (-1, -1), (-1, 1), (1, -1), (1, 1)],
        2 => vec![(0, 0), (-1, 1), (1, -1), (0, 1), (0, -1)],
        _ => vec![(0, 0), (-1, 1), (0, 1), (1, 0), (1, -1)],
    };
    let cells: Vec<Cell> = (-1..=1).flat_map(|y| (-1..=1).map(move |x| (x, y))).collect();
    let mut out = vec![canonical.clone()];
    let mut sorted_canonical = canonical;
    sorted_canonical.sort();
    for mask in 0u32..(1 << 9) {
        if mask.count_ones() as usize != DOTS {
            continue;
        }
        let set: Vec<Cell> = (0..9).filter(|b| mask & (1 << b) != 0).map(|b| cells[b]).collect();
        if lattice_order(&set) == order && set != sorted_canonical {
            out.push(set);
        }
    }
    out
}

/// Dot centers of the pattern in domain coordinates.
pub fn garner_dots(spec: &GarnerSpec) -> Result<Vec<(f64, f64)>> {
    if !matches!(spec.symmetry_order, 1 | 2 | 4) {
        return Err(Error::Parameter(format!("unsupported symmetry order {}", spec.symmetry_order)));
    }
    let all = layouts(spec.symmetry_order);
    let pick = &all[(spec.layout_seed % all.len() as u64) as usize];
    Ok(pick.iter().map(|&(i, j)| (i as f64 * LATTICE_SPACING, j as f64 * LATTICE_SPACING)).collect())
}

/// Pattern on `[−1, 1]²`, normalized to unit total intensity.
pub fn garner_pattern(spec: &GarnerSpec) -> Result<ScalarField> {
    if spec.grid < 8 {
        return Err(Error::Parameter(format!("grid {} too coarse for a dot pattern", spec.grid)));
    }
    if !(spec.dot_width > 0.0) {
        return Err(Error::Parameter(format!("dot width must be positive, got {}", spec.dot_width)));
    }
    let dots = garner_dots(spec)?;
    let w2 = spec.dot_width * spec.dot_width;
    let field = ScalarField::from_fn(spec.grid, spec.grid, Domain::default(), |x, y| {
        dots.iter().map(|&(cx, cy)| (-((x - cx).powi(2) + (y - cy).powi(2)) / w2).exp()).sum()
    })?;
    let total = field.integral();
    Ok(field.scaled(1.0 / total))
}

/// Rotation-matching setup used for the census: 4×4 frequency-tagged blocks,
/// gains derived from the constants, detector off (it does not feed back
/// into the search).
pub fn garner_config(rotation: f64, brightness: f64, horizon: f64) -> RunConfig {
    RunConfig {
        dt: 0.1,
        horizon,
        seed: 0,
        record_stride: 100,
        init_phase: None,
        adapt: AdaptParams {
            tau: 1.0,
            k: 1.0,
            gamma1: 1.0,
            gamma2: 0.1,
            epsilon: 0.005,
            theta1_range: Interval::new(0.5, 1.5),
            theta2_range: Interval::new(0.0, TAU),
            pin_theta2: None,
            renormalize: false,
            min_gain_ratio: 10.0,
        },
        hr: DetectorConfig { enabled: false, ..Default::default() },
        encoder: EncoderSpec::FrequencyTiles {
            rows: 4,
            cols: 4,
            omega_base: 0.05,
            functional: FunctionalKind::StripIntegral,
            bias: 10.0,
        },
        perturbation: PerturbationSpec {
            model: PerturbKind::Rotate,
            theta1: Theta1Schedule::constant(brightness),
            theta2: rotation,
        },
        constants: ConstantsOverride::default(),
        analysis: AnalysisSpec::default(),
        auto_gains: Some(AutoGains { gamma2_fraction: 0.9, gain_ratio: 10.0, dt_fraction: 1.0 }),
    }
}

/// Starting search phase of ensemble member `j` of `n`: one per stratum of
/// the circle, jittered by the member seed, so both λ₃ branches are covered.
pub fn member_phase(seed: u64, j: usize, n: usize) -> f64 {
    let u: f64 = ChaCha8Rng::seed_from_u64(seed).gen();
    TAU * (j as f64 + u) / n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub seed: u64,
    pub init_phase: f64,
    pub theta1_hat: f64,
    pub theta2_hat: f64,
    pub lambda3: f64,
    pub theta2_total_variation: f64,
    pub residual: f64,
    pub matched: bool,
    /// θ̂₂ stationary over the final window.
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleCluster {
    /// +1 for `λ₃ ≥ 0`, −1 otherwise.
    pub branch: i8,
    /// Circular mean of the member angles, in `[0, 2π)`.
    pub angle: f64,
    /// Largest member distance from `angle`, in degrees.
    pub spread_deg: f64,
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GarnerCensus {
    pub symmetry_order: u32,
    pub rotation: f64,
    pub brightness: f64,
    pub census: usize,
    pub converged_fraction: f64,
    pub clusters: Vec<AngleCluster>,
    pub members: Vec<EnsembleMember>,
}

impl GarnerCensus {
    /// Circular gaps in degrees between consecutive cluster angles of one branch.
    pub fn spacings_deg(&self, branch: i8) -> Vec<f64> {
        let mut a: Vec<f64> = self.clusters.iter().filter(|c| c.branch == branch).map(|c| c.angle).collect();
        a.sort_by(f64::total_cmp);
        if a.len() < 2 {
            return Vec::new();
        }
        (0..a.len())
            .map(|k| {
                let next = if k + 1 < a.len() { a[k + 1] } else { a[0] + TAU };
                (next - a[k]).to_degrees()
            })
            .collect()
    }
}

fn wrap(a: f64) -> f64 {
    a.rem_euclid(TAU)
}

/// Single-linkage clusters of angles on the circle: neighbours closer than
/// `linkage` (radians) join. Returns member index lists.
pub fn circular_clusters(angles: &[f64], linkage: f64) -> Vec<Vec<usize>> {
    if angles.is_empty() {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..angles.len()).collect();
    order.sort_by(|&a, &b| wrap(angles[a]).total_cmp(&wrap(angles[b])));
    let sorted: Vec<f64> = order.iter().map(|&k| wrap(angles[k])).collect();
    let n = sorted.len();
    let gap = |k: usize| if k + 1 < n { sorted[k + 1] - sorted[k] } else { sorted[0] + TAU - sorted[n - 1] };
    let Some(cut) = (0..n).find(|&k| gap(k) > linkage) else {
        return vec![order];
    };
    // start right after a gap so no cluster straddles the seam
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut current = Vec::new();
    for step in 1..=n {
        let k = (cut + step) % n;
        current.push(order[k]);
        if gap(k) > linkage {
            out.push(std::mem::take(&mut current));
        }
    }
    out
}

fn circular_mean(angles: &[f64]) -> f64 {
    let (s, c) = angles.iter().fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    wrap(s.atan2(c))
}

fn circular_distance(a: f64, b: f64) -> f64 {
    let d = wrap(a - b);
    d.min(TAU - d)
}

/// Groups converged members by branch and final angle.
pub fn census_clusters(members: &[EnsembleMember], linkage: f64) -> Vec<AngleCluster> {
    let mut out = Vec::new();
    for branch in [1i8, -1] {
        let idx: Vec<usize> = members
            .iter()
            .enumerate()
            .filter(|(_, m)| m.converged && (if m.lambda3 >= 0.0 { 1 } else { -1 }) == branch)
            .map(|(k, _)| k)
            .collect();
        let angles: Vec<f64> = idx.iter().map(|&k| members[k].theta2_hat).collect();
        for group in circular_clusters(&angles, linkage) {
            let a: Vec<f64> = group.iter().map(|&g| angles[g]).collect();
            let angle = circular_mean(&a);
            let spread = a.iter().map(|&x| circular_distance(x, angle)).fold(0.0, f64::max).to_degrees();
            out.push(AngleCluster { branch, angle, spread_deg: spread, members: group.iter().map(|&g| idx[g]).collect() });
        }
    }
    out.sort_by(|a, b| (-a.branch, a.angle).partial_cmp(&(-b.branch, b.angle)).unwrap());
    out
}

/// Runs `ensemble` members of the rotation-matching system on a Garner
/// pattern rotated by `rotation` and scaled by `brightness`, then counts the
/// distinct final attractors. `base` supplies everything except the
/// perturbation truth, the member seeds and the starting phases.
pub fn run_garner(
    spec: &GarnerSpec,
    rotation: f64,
    brightness: f64,
    ensemble: usize,
    base: &RunConfig,
) -> Result<GarnerCensus> {
    if !(0.0..TAU).contains(&rotation) {
        return Err(Error::Parameter(format!("rotation must lie in [0, 2π), got {rotation}")));
    }
    if ensemble < 2 {
        return Err(Error::Parameter(format!("ensemble needs at least 2 members, got {ensemble}")));
    }
    let pattern = garner_pattern(spec)?;
    let mut cfg = base.clone();
    cfg.perturbation =
        PerturbationSpec { model: PerturbKind::Rotate, theta1: Theta1Schedule::constant(brightness), theta2: rotation };
    let prepared = PreparedMatch::new(&pattern, std::slice::from_ref(&pattern), &cfg)?;
    let tv_limit = 1e-3 * TAU;
    let members = (0..ensemble)
        .into_par_iter()
        .map(|j| {
            let mut c = cfg.clone();
            c.seed = base.seed.wrapping_add(j as u64);
            c.init_phase = Some(member_phase(c.seed, j, ensemble));
            let out = prepared.run(&c)?;
            let r = &out.report.templates[0];
            Ok(EnsembleMember {
                seed: c.seed,
                init_phase: c.init_phase.unwrap_or(0.0),
                theta1_hat: r.theta1_hat,
                theta2_hat: wrap(r.theta2_hat),
                lambda3: r.lambda3,
                theta2_total_variation: r.theta2_total_variation,
                residual: r.residual.final_window_max,
                matched: r.matched,
                converged: r.theta2_total_variation <= tv_limit,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let clusters = census_clusters(&members, CLUSTER_LINKAGE_DEG.to_radians());
    let converged = members.iter().filter(|m| m.converged).count();
    Ok(GarnerCensus {
        symmetry_order: spec.symmetry_order,
        rotation,
        brightness,
        census: clusters.len(),
        converged_fraction: converged as f64 / ensemble as f64,
        clusters,
        members,
    })
}
