//! Discretized scalar images and the parameterized perturbation operators
//! `F[S, θ] = θ₁ · F̄[S, θ₂]`.
//!
//! A [`ScalarField`] stores node values on a uniform rectangular grid whose
//! first and last nodes sit on the domain boundary. Every node owns the cell
//! `[x_i - dx/2, x_i + dx/2] × [y_j - dy/2, y_j + dy/2]` clipped to the domain,
//! so boundary nodes carry half (corner nodes a quarter) of the interior cell
//! area. Sums weighted by these cells are the quadrature used everywhere an
//! integral over the image appears.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed interval `[min, max]`, serialized as a two-element array.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    /// `n` equally spaced points covering the interval, endpoints included.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![0.5 * (self.min + self.max)],
            _ => (0..n)
                .map(|i| self.min + self.width() * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(v: Interval) -> Self {
        [v.min, v.max]
    }
}

/// Rectangular image domain `Ω_x × Ω_y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for Domain {
    fn default() -> Self {
        Self::square(1.0)
    }
}

impl Domain {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let d = Self { x_min, x_max, y_min, y_max };
        d.validate()?;
        Ok(d)
    }

    /// `[-half, half]²`.
    pub const fn square(half: f64) -> Self {
        Self { x_min: -half, x_max: half, y_min: -half, y_max: half }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(Error::Domain(format!("degenerate domain {self:?}")));
        }
        Ok(())
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    fn tol(&self) -> (f64, f64) {
        (1e-9 * self.width(), 1e-9 * self.height())
    }

    /// Membership with a relative slack of 1e-9 so that points produced by
    /// floating-point rotations of boundary nodes still count as inside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (tx, ty) = self.tol();
        x >= self.x_min - tx && x <= self.x_max + tx && y >= self.y_min - ty && y <= self.y_max + ty
    }
}

/// Node values `S(x_i, y_j)` on a uniform grid, row-major in `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    nx: usize,
    ny: usize,
    domain: Domain,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(nx: usize, ny: usize, domain: Domain, values: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Parameter(format!("grid must be non-empty, got {nx}x{ny}")));
        }
        domain.validate()?;
        if values.len() != nx * ny {
            return Err(Error::Parameter(format!(
                "expected {} values for a {nx}x{ny} grid, got {}",
                nx * ny,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite field value at index {bad}")));
        }
        Ok(Self { nx, ny, domain, values })
    }

    pub fn zeros(nx: usize, ny: usize, domain: Domain) -> Result<Self> {
        Self::new(nx, ny, domain, vec![0.0; nx * ny])
    }

    pub fn constant(nx: usize, ny: usize, domain: Domain, c: f64) -> Result<Self> {
        Self::new(nx, ny, domain, vec![c; nx * ny])
    }

    /// Samples `f(x, y)` at every node.
    pub fn from_fn(nx: usize, ny: usize, domain: Domain, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut field = Self::zeros(nx, ny, domain)?;
        for j in 0..ny {
            let y = field.y_at(j);
            for i in 0..nx {
                let x = field.x_at(i);
                field.values[j * nx + i] = f(x, y);
            }
        }
        if field.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("generator produced non-finite values".into()));
        }
        Ok(field)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[j * self.nx + i] = v;
    }

    pub fn dx(&self) -> f64 {
        if self.nx > 1 {
            self.domain.width() / (self.nx - 1) as f64
        } else {
            self.domain.width()
        }
    }

    pub fn dy(&self) -> f64 {
        if self.ny > 1 {
            self.domain.height() / (self.ny - 1) as f64
        } else {
            self.domain.height()
        }
    }

    pub fn x_at(&self, i: usize) -> f64 {
        if self.nx > 1 {
            self.domain.x_min + i as f64 * self.dx()
        } else {
            self.domain.center().0
        }
    }

    pub fn y_at(&self, j: usize) -> f64 {
        if self.ny > 1 {
            self.domain.y_min + j as f64 * self.dy()
        } else {
            self.domain.center().1
        }
    }

    /// Extent `[lo, hi]` of the cell owned by node `i` along x.
    pub fn cell_x(&self, i: usize) -> (f64, f64) {
        cell_extent(self.x_at(i), self.dx(), self.domain.x_min, self.domain.x_max, self.nx)
    }

    pub fn cell_y(&self, j: usize) -> (f64, f64) {
        cell_extent(self.y_at(j), self.dy(), self.domain.y_min, self.domain.y_max, self.ny)
    }

    pub fn cell_area(&self, i: usize, j: usize) -> f64 {
        let (x0, x1) = self.cell_x(i);
        let (y0, y1) = self.cell_y(j);
        (x1 - x0) * (y1 - y0)
    }

    /// Cell-weighted sum approximating `∬ S dx dy` over the whole domain.
    pub fn integral(&self) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.ny {
            for i in 0..self.nx {
                acc += self.get(i, j) * self.cell_area(i, j);
            }
        }
        acc
    }

    /// Bilinear interpolation; zero outside the domain.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        if !self.domain.contains(x, y) {
            return 0.0;
        }
        let (i0, fx) = locate(x, self.domain.x_min, self.dx(), self.nx);
        let (j0, fy) = locate(y, self.domain.y_min, self.dy(), self.ny);
        let i1 = (i0 + 1).min(self.nx - 1);
        let j1 = (j0 + 1).min(self.ny - 1);
        let v00 = self.get(i0, j0);
        let v10 = self.get(i1, j0);
        let v01 = self.get(i0, j1);
        let v11 = self.get(i1, j1);
        let a = v00 + fx * (v10 - v00);
        let b = v01 + fx * (v11 - v01);
        a + fy * (b - a)
    }

    /// Same grid, values `g(x, y)` for every node.
    fn resample(&self, g: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = self.clone();
        for j in 0..self.ny {
            let y = self.y_at(j);
            for i in 0..self.nx {
                out.values[j * self.nx + i] = g(self.x_at(i), y);
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { values: self.values.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }

    pub fn scaled(&self, k: f64) -> Self {
        self.map(|v| k * v)
    }

    /// `a·self + b·other` on identical grids.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.check_same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(u, v)| a * u + b * v).collect();
        Ok(Self { values, ..self.clone() })
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self.values.iter().zip(&other.values).fold(0.0, |m, (u, v)| m.max((u - v).abs())))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.nx != other.nx || self.ny != other.ny || self.domain != other.domain {
            return Err(Error::Parameter("fields live on different grids".into()));
        }
        Ok(())
    }
}

fn cell_extent(center: f64, h: f64, lo: f64, hi: f64, n: usize) -> (f64, f64) {
    if n == 1 {
        return (lo, hi);
    }
    ((center - 0.5 * h).max(lo), (center + 0.5 * h).min(hi))
}

/// Lower node index and fractional offset of coordinate `v`.
fn locate(v: f64, lo: f64, h: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let u = ((v - lo) / h).clamp(0.0, (n - 1) as f64);
    let i0 = (u.floor() as usize).min(n - 2);
    (i0, (u - i0 as f64).clamp(0.0, 1.0))
}

/// Kind of nonlinear perturbation `F̄[S, θ₂]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbKind {
    TranslateX,
    ScaleX,
    Rotate,
    GaussianBlur,
    DefocusBlur,
    Identity,
}

impl PerturbKind {
    /// Whether θ₂ must be strictly positive.
    pub fn needs_positive_theta2(self) -> bool {
        matches!(self, Self::ScaleX | Self::GaussianBlur | Self::DefocusBlur)
    }
}

/// Perturbation parameters `θ = (θ₁, θ₂)` together with the model kind.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbParams {
    pub kind: PerturbKind,
    pub theta1: f64,
    pub theta2: f64,
}

impl PerturbParams {
    pub fn new(kind: PerturbKind, theta1: f64, theta2: f64) -> Self {
        Self { kind, theta1, theta2 }
    }

    pub fn identity() -> Self {
        Self::new(PerturbKind::Identity, 1.0, 0.0)
    }

    pub fn validate(&self, theta1_range: Interval, theta2_range: Interval) -> Result<()> {
        if !self.theta1.is_finite() || !self.theta2.is_finite() {
            return Err(Error::Parameter("non-finite perturbation parameter".into()));
        }
        if !theta1_range.contains(self.theta1) {
            return Err(Error::Parameter(format!(
                "theta1 = {} outside [{}, {}]",
                self.theta1, theta1_range.min, theta1_range.max
            )));
        }
        if self.kind != PerturbKind::Identity && !theta2_range.contains(self.theta2) {
            return Err(Error::Parameter(format!(
                "theta2 = {} outside [{}, {}]",
                self.theta2, theta2_range.min, theta2_range.max
            )));
        }
        if self.kind.needs_positive_theta2() && self.theta2 <= 0.0 {
            return Err(Error::Parameter(format!("{:?} requires theta2 > 0", self.kind)));
        }
        Ok(())
    }
}

fn finite_theta(theta2: f64) -> Result<()> {
    if theta2.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("non-finite theta2 = {theta2}")))
    }
}

fn positive_theta(kind: &str, theta2: f64) -> Result<()> {
    finite_theta(theta2)?;
    if theta2 <= 0.0 {
        return Err(Error::Parameter(format!("{kind} requires theta2 > 0, got {theta2}")));
    }
    Ok(())
}

/// `S(x + θ₂, y)`.
pub fn translate_x(field: &ScalarField, theta2: f64) -> Result<ScalarField> {
    finite_theta(theta2)?;
    if theta2 == 0.0 {
        return Ok(field.clone());
    }
    Ok(field.resample(|x, y| field.sample(x + theta2, y)))
}

/// `S(c_x + θ₂ (x - c_x), y)`, scaling about the domain center.
pub fn scale_x(field: &ScalarField, theta2: f64) -> Result<ScalarField> {
    positive_theta("scale-x", theta2)?;
    if theta2 == 1.0 {
        return Ok(field.clone());
    }
    let (cx, _) = field.domain().center();
    Ok(field.resample(|x, y| field.sample(cx + theta2 * (x - cx), y)))
}

/// Rotation by θ₂ about the domain center:
/// `S(x_r, y_r)` with `x_r = cos θ₂ x − sin θ₂ y`, `y_r = sin θ₂ x + cos θ₂ y`
/// in center-shifted coordinates.
pub fn rotate(field: &ScalarField, theta2: f64) -> Result<ScalarField> {
    finite_theta(theta2)?;
    let angle = theta2.rem_euclid(2.0 * PI);
    if angle == 0.0 {
        return Ok(field.clone());
    }
    let (c, s) = (angle.cos(), angle.sin());
    let (cx, cy) = field.domain().center();
    Ok(field.resample(|x, y| {
        let (u, v) = (x - cx, y - cy);
        field.sample(cx + c * u - s * v, cy + s * u + c * v)
    }))
}

/// `exp(-r²/θ₂)` drops below this before the kernel is truncated.
pub const KERNEL_CUTOFF: f64 = 1e-12;

/// Radius beyond which the unnormalized Gaussian kernel is truncated.
pub fn gaussian_radius(theta2: f64) -> f64 {
    (theta2 * (1.0 / KERNEL_CUTOFF).ln()).sqrt()
}

/// `∬ exp(-((x-ξ)² + (y-γ)²)/θ₂) S(ξ, γ) dξ dγ` by cell-weighted summation.
pub fn gaussian_blur(field: &ScalarField, theta2: f64) -> Result<ScalarField> {
    positive_theta("gaussian-blur", theta2)?;
    let r2_max = theta2 * (1.0 / KERNEL_CUTOFF).ln();
    Ok(convolve(field, gaussian_radius(theta2), |ox, oy| {
        let r2 = ox * ox + oy * oy;
        if r2 > r2_max {
            0.0
        } else {
            (-r2 / theta2).exp()
        }
    }))
}

const DISC_SUBSAMPLES: usize = 8;

/// Convolution with the normalized disc `1/(π θ₂²)` of radius θ₂. Kernel
/// weights are averaged over each cell by sub-sampling so the discrete mass
/// stays close to one even for small radii.
pub fn defocus_blur(field: &ScalarField, theta2: f64) -> Result<ScalarField> {
    positive_theta("defocus-blur", theta2)?;
    let (dx, dy) = (field.dx(), field.dy());
    let height = 1.0 / (PI * theta2 * theta2);
    let r2 = theta2 * theta2;
    let n = DISC_SUBSAMPLES;
    Ok(convolve(field, theta2 + dx.max(dy), |ox, oy| {
        let mut inside = 0usize;
        for a in 0..n {
            let sx = ox + dx * ((a as f64 + 0.5) / n as f64 - 0.5);
            for b in 0..n {
                let sy = oy + dy * ((b as f64 + 0.5) / n as f64 - 0.5);
                if sx * sx + sy * sy <= r2 {
                    inside += 1;
                }
            }
        }
        height * inside as f64 / (n * n) as f64
    }))
}

/// Direct truncated-kernel summation `out(i) = Σ_j K(x_i - ξ_j) S_j A_j`.
fn convolve(field: &ScalarField, radius: f64, kernel: impl Fn(f64, f64) -> f64) -> ScalarField {
    let (nx, ny) = (field.nx(), field.ny());
    let (dx, dy) = (field.dx(), field.dy());
    let rx = if nx > 1 { ((radius / dx).ceil() as usize).min(nx - 1) } else { 0 };
    let ry = if ny > 1 { ((radius / dy).ceil() as usize).min(ny - 1) } else { 0 };
    let kw = 2 * rx + 1;
    let mut weights = vec![0.0; kw * (2 * ry + 1)];
    for b in 0..=2 * ry {
        for a in 0..kw {
            let ox = (a as f64 - rx as f64) * if nx > 1 { dx } else { 0.0 };
            let oy = (b as f64 - ry as f64) * if ny > 1 { dy } else { 0.0 };
            weights[b * kw + a] = kernel(ox, oy);
        }
    }
    let weighted: Vec<f64> = (0..ny)
        .flat_map(|j| (0..nx).map(move |i| (i, j)))
        .map(|(i, j)| field.get(i, j) * field.cell_area(i, j))
        .collect();
    let mut out = field.clone();
    for j in 0..ny {
        let j_lo = j.saturating_sub(ry);
        let j_hi = (j + ry).min(ny - 1);
        for i in 0..nx {
            let i_lo = i.saturating_sub(rx);
            let i_hi = (i + rx).min(nx - 1);
            let mut acc = 0.0;
            for q in j_lo..=j_hi {
                let b = q + ry - j;
                let row = &weighted[q * nx..(q + 1) * nx];
                let wrow = &weights[b * kw..(b + 1) * kw];
                for p in i_lo..=i_hi {
                    acc += wrow[p + rx - i] * row[p];
                }
            }
            out.values[j * nx + i] = acc;
        }
    }
    out
}

/// `F̄[S, θ₂]` for the given kind.
pub fn apply_nonlinear(field: &ScalarField, kind: PerturbKind, theta2: f64) -> Result<ScalarField> {
    match kind {
        PerturbKind::TranslateX => translate_x(field, theta2),
        PerturbKind::ScaleX => scale_x(field, theta2),
        PerturbKind::Rotate => rotate(field, theta2),
        PerturbKind::GaussianBlur => gaussian_blur(field, theta2),
        PerturbKind::DefocusBlur => defocus_blur(field, theta2),
        PerturbKind::Identity => Ok(field.clone()),
    }
}

/// `θ₁ · F̄[S, θ₂]`.
pub fn apply_perturbation(field: &ScalarField, p: &PerturbParams) -> Result<ScalarField> {
    if !p.theta1.is_finite() {
        return Err(Error::Parameter(format!("non-finite theta1 = {}", p.theta1)));
    }
    Ok(apply_nonlinear(field, p.kind, p.theta2)?.scaled(p.theta1))
}

/// Whether the operator stencil at node `(x, y)` stays inside the domain for
/// every θ₂ on the grid. Nodes failing this see zero padding and are left out
/// of the Lipschitz estimate.
/// Angular resolution of the rotation containment check.
const ARC_STEP: f64 = std::f64::consts::PI / 720.0;

fn stencil_inside(field: &ScalarField, kind: PerturbKind, grid: &[f64], x: f64, y: f64) -> bool {
    let d = field.domain();
    let (cx, cy) = d.center();
    let (lo, hi) = grid.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
    let margin_ok = |r: f64| {
        x - r >= d.x_min - 1e-12
            && x + r <= d.x_max + 1e-12
            && (field.ny() == 1 || (y - r >= d.y_min - 1e-12 && y + r <= d.y_max + 1e-12))
    };
    match kind {
        PerturbKind::Identity => true,
        PerturbKind::TranslateX => d.contains(x + lo, y) && d.contains(x + hi, y),
        PerturbKind::ScaleX => d.contains(cx + lo * (x - cx), y) && d.contains(cx + hi * (x - cx), y),
        // The whole arc is checked, not just the grid angles, so that refining
        // the grid never drops a node.
        PerturbKind::Rotate => {
            let steps = ((hi - lo) / ARC_STEP).ceil().max(1.0) as usize;
            (0..=steps).all(|k| {
                let t = lo + (hi - lo) * k as f64 / steps as f64;
                let (c, s) = (t.cos(), t.sin());
                let (u, v) = (x - cx, y - cy);
                d.contains(cx + c * u - s * v, cy + s * u + c * v)
            })
        }
        PerturbKind::GaussianBlur => margin_ok(gaussian_radius(hi)),
        PerturbKind::DefocusBlur => margin_ok(hi),
    }
}

/// Empirical Lipschitz constant of `θ₂ ↦ F̄[S, θ₂](x, y)`: the largest
/// difference quotient over all grid pairs and interior nodes. This is a lower
/// bound of the true constant; callers apply a safety factor.
pub fn estimate_lipschitz_d(field: &ScalarField, kind: PerturbKind, theta2_grid: &[f64]) -> Result<f64> {
    if theta2_grid.len() < 2 {
        return Err(Error::Parameter("Lipschitz estimate needs at least two theta2 values".into()));
    }
    if kind == PerturbKind::Identity {
        return Ok(0.0);
    }
    let mut nodes = Vec::new();
    for j in 0..field.ny() {
        for i in 0..field.nx() {
            if stencil_inside(field, kind, theta2_grid, field.x_at(i), field.y_at(j)) {
                nodes.push(j * field.nx() + i);
            }
        }
    }
    if nodes.is_empty() {
        return Err(Error::Parameter("boundary margin excludes every node".into()));
    }
    let images = theta2_grid
        .iter()
        .map(|&t| apply_nonlinear(field, kind, t))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0.0f64;
    for a in 0..theta2_grid.len() {
        for b in a + 1..theta2_grid.len() {
            let dt = (theta2_grid[a] - theta2_grid[b]).abs();
            if dt == 0.0 {
                continue;
            }
            let (va, vb) = (images[a].values(), images[b].values());
            let diff = nodes.iter().fold(0.0f64, |m, &k| m.max((va[k] - vb[k]).abs()));
            best = best.max(diff / dt);
        }
    }
    Ok(best)
}
