//! Detector level: a network of diffusively coupled Hindmarsh-Rose neurons.
//! Node 0 is driven by the image channel and node `i` by template channel `i`;
//! the pair synchronizes when the two drives agree.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Missing fields take the standard bursting values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HRParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub s: f64,
    pub x0: f64,
    pub eps: f64,
    /// Drive current.
    #[serde(rename = "I")]
    pub i: f64,
}

pub const DEFAULT_DRIVE: f64 = 3.25;

impl Default for HRParams {
    fn default() -> Self {
        Self { a: 1.0, b: 3.0, c: 1.0, d: 5.0, s: 4.0, x0: 1.6, eps: 0.001, i: DEFAULT_DRIVE }
    }
}

impl HRParams {
    pub fn with_drive(self, i: f64) -> Self {
        Self { i, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("a", self.a), ("b", self.b), ("c", self.c), ("d", self.d), ("eps", self.eps), ("s", self.s)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Parameter(format!("HR parameter {name} must be positive, got {v}")));
            }
        }
        if !(self.x0.is_finite() && self.i.is_finite()) {
            return Err(Error::Parameter("HR parameters x0 and I must be finite".into()));
        }
        Ok(())
    }
}

/// Per-node `(x, y, z)` of an `n + 1` node network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HRNetState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl HRNetState {
    pub fn zeros(nodes: usize) -> Self {
        Self { x: vec![0.0; nodes], y: vec![0.0; nodes], z: vec![0.0; nodes] }
    }

    /// Uniform random node states in `[−2, 2] × [−10, 2] × [0, 6]`.
    pub fn random<R: Rng>(nodes: usize, rng: &mut R) -> Self {
        let mut s = Self::zeros(nodes);
        for i in 0..nodes {
            s.x[i] = rng.gen_range(-2.0..=2.0);
            s.y[i] = rng.gen_range(-10.0..=2.0);
            s.z[i] = rng.gen_range(0.0..=6.0);
        }
        s
    }

    pub fn nodes(&self) -> usize {
        self.x.len()
    }

    /// Flat layout `[x₀..x_n, y₀..y_n, z₀..z_n]`.
    pub fn to_flat(&self) -> Vec<f64> {
        [self.x.as_slice(), &self.y, &self.z].concat()
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() % 3 != 0 {
            return Err(Error::Parameter(format!("flat HR state length {} is not a multiple of 3", v.len())));
        }
        let n = v.len() / 3;
        Ok(Self { x: v[..n].to_vec(), y: v[n..2 * n].to_vec(), z: v[2 * n..].to_vec() })
    }

    pub fn max_abs(&self) -> f64 {
        self.x.iter().chain(&self.y).chain(&self.z).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `γ` times the `(n+1) × (n+1)` matrix with ones off the diagonal and `−n` on it.
pub fn coupling_matrix(n: usize, gamma: f64) -> Vec<Vec<f64>> {
    (0..=n)
        .map(|i| (0..=n).map(|j| if i == j { -(n as f64) * gamma } else { gamma }).collect())
        .collect()
}

/// Network derivative on the flat layout. The coupling `u = Γx` is applied
/// through the `x` equations only; row `i` of `Γx` is `γ(Σⱼxⱼ − (n+1)xᵢ)`.
pub fn hr_rhs_flat(v: &[f64], p: &HRParams, gamma: f64, phi: &[f64], out: &mut [f64]) -> Result<()> {
    let nodes = phi.len();
    if v.len() != 3 * nodes || out.len() != v.len() {
        return Err(Error::Parameter(format!(
            "HR state of length {} does not fit {} drive inputs",
            v.len(),
            nodes
        )));
    }
    let (x, rest) = v.split_at(nodes);
    let (y, z) = rest.split_at(nodes);
    let sum: f64 = x.iter().sum();
    let (dx, rest) = out.split_at_mut(nodes);
    let (dy, dz) = rest.split_at_mut(nodes);
    for i in 0..nodes {
        let xi = x[i];
        let u = gamma * (sum - nodes as f64 * xi);
        dx[i] = -p.a * xi * xi * xi + p.b * xi * xi + y[i] - z[i] + p.i + u + phi[i];
        dy[i] = p.c - p.d * xi * xi - y[i];
        dz[i] = p.eps * (p.s * (xi + p.x0) - z[i]);
    }
    Ok(())
}

pub fn hr_rhs(state: &HRNetState, p: &HRParams, gamma: f64, phi: &[f64]) -> Result<HRNetState> {
    let n = state.nodes();
    if state.y.len() != n || state.z.len() != n || phi.len() != n {
        return Err(Error::Parameter(format!(
            "dimension mismatch: x {}, y {}, z {}, phi {}",
            n,
            state.y.len(),
            state.z.len(),
            phi.len()
        )));
    }
    let mut out = vec![0.0; 3 * n];
    hr_rhs_flat(&state.to_flat(), p, gamma, phi, &mut out)?;
    HRNetState::from_flat(&out)
}

/// Coupling strength above which the synchronous manifold is guaranteed to
/// attract: `(d²/2 + b²)/((n+1)·a)`.
pub fn sync_upper_bound(n: usize, p: &HRParams) -> Result<f64> {
    if !(p.a > 0.0) {
        return Err(Error::Parameter(format!("a must be positive, got {}", p.a)));
    }
    Ok((p.d * p.d / 2.0 + p.b * p.b) / ((n + 1) as f64 * p.a))
}

/// Supremum of coupling strengths at which unstable (itinerant) synchrony may
/// occur; numerically the same expression as [`sync_upper_bound`].
pub fn unstable_region_max(n: usize, p: &HRParams) -> Result<f64> {
    sync_upper_bound(n, p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSync {
    pub i: usize,
    pub j: usize,
    pub rms_x: f64,
    pub rms_y: f64,
    pub rms_z: f64,
    pub max_x: f64,
    pub max_y: f64,
    pub max_z: f64,
    /// Total time with `|xᵢ − xⱼ| < delta_thresh`.
    pub t_syn: f64,
    pub synchronized: bool,
}

pub const DEFAULT_SYNC_THRESHOLD: f64 = 0.1;
pub const DEFAULT_WINDOW_FRACTION: f64 = 0.25;

/// Pairwise synchronization errors over the final `window` of a sampled
/// trajectory. Every sample contributes to `t_syn` the time until the next one.
pub fn sync_metrics(times: &[f64], states: &[HRNetState], window: f64, delta_thresh: f64) -> Result<Vec<PairSync>> {
    if times.is_empty() || states.len() != times.len() {
        return Err(Error::Input(format!("{} times for {} states", times.len(), states.len())));
    }
    if !(window > 0.0) {
        return Err(Error::Parameter(format!("window must be positive, got {window}")));
    }
    let nodes = states[0].nodes();
    let t_end = *times.last().expect("non-empty");
    if t_end - times[0] < 2.0 * window - 1e-9 * window {
        return Err(Error::Parameter(format!(
            "trajectory of duration {} shorter than twice the window {window}",
            t_end - times[0]
        )));
    }
    let start = times.partition_point(|&t| t < t_end - window);
    let mut out = Vec::new();
    for i in 0..nodes {
        for j in i + 1..nodes {
            let (mut sx, mut sy, mut sz) = (0.0, 0.0, 0.0);
            let (mut mx, mut my, mut mz) = (0.0f64, 0.0f64, 0.0f64);
            for s in &states[start..] {
                let (ex, ey, ez) = ((s.x[i] - s.x[j]).abs(), (s.y[i] - s.y[j]).abs(), (s.z[i] - s.z[j]).abs());
                sx += ex * ex;
                sy += ey * ey;
                sz += ez * ez;
                mx = mx.max(ex);
                my = my.max(ey);
                mz = mz.max(ez);
            }
            let m = (states.len() - start) as f64;
            let mut t_syn = 0.0;
            for k in 0..times.len() - 1 {
                if (states[k].x[i] - states[k].x[j]).abs() < delta_thresh {
                    t_syn += times[k + 1] - times[k];
                }
            }
            out.push(PairSync {
                i,
                j,
                rms_x: (sx / m).sqrt(),
                rms_y: (sy / m).sqrt(),
                rms_z: (sz / m).sqrt(),
                max_x: mx,
                max_y: my,
                max_z: mz,
                t_syn,
                synchronized: mx < delta_thresh,
            });
        }
    }
    Ok(out)
}
