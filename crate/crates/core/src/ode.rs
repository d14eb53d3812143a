//! Classical fixed-step fourth-order Runge-Kutta.

use crate::error::{Error, Result};

/// RK4 stepper owning its stage buffers, so repeated steps do not allocate.
#[derive(Clone, Debug)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self { k1: vec![0.0; dim], k2: vec![0.0; dim], k3: vec![0.0; dim], k4: vec![0.0; dim], tmp: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.k1.len()
    }

    /// Advances `y` from `t` to `t + dt` in place.
    pub fn step<F>(&mut self, rhs: &mut F, t: f64, y: &mut [f64], dt: f64) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        debug_assert_eq!(y.len(), self.dim());
        let h2 = 0.5 * dt;
        rhs(t, y, &mut self.k1)?;
        check(&self.k1, t, "k1")?;
        for i in 0..y.len() {
            self.tmp[i] = y[i] + h2 * self.k1[i];
        }
        rhs(t + h2, &self.tmp, &mut self.k2)?;
        check(&self.k2, t, "k2")?;
        for i in 0..y.len() {
            self.tmp[i] = y[i] + h2 * self.k2[i];
        }
        rhs(t + h2, &self.tmp, &mut self.k3)?;
        check(&self.k3, t, "k3")?;
        for i in 0..y.len() {
            self.tmp[i] = y[i] + dt * self.k3[i];
        }
        rhs(t + dt, &self.tmp, &mut self.k4)?;
        check(&self.k4, t, "k4")?;
        let h6 = dt / 6.0;
        for i in 0..y.len() {
            y[i] += h6 * (self.k1[i] + 2.0 * (self.k2[i] + self.k3[i]) + self.k4[i]);
        }
        check(y, t, "updated state")
    }
}

fn check(v: &[f64], t: f64, what: &str) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Step { t, reason: format!("non-finite {what} component {i}") }),
    }
}

/// One RK4 step returning the new state.
pub fn rk4_step<F>(mut rhs: F, state: &[f64], t: f64, dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
    }
    let mut y = state.to_vec();
    Rk4::new(y.len()).step(&mut rhs, t, &mut y, dt)?;
    Ok(y)
}

/// Integrates from `t0` over `steps` steps of size `dt`.
pub fn integrate<F>(mut rhs: F, y: &mut [f64], t0: f64, dt: f64, steps: usize) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let mut rk = Rk4::new(y.len());
    for n in 0..steps {
        rk.step(&mut rhs, t0 + n as f64 * dt, y, dt)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn harmonic(_t: f64, y: &[f64], d: &mut [f64]) -> Result<()> {
        d[0] = y[1];
        d[1] = -y[0];
        Ok(())
    }

    #[test]
    fn harmonic_round_trip() {
        let steps = 6283;
        let dt = 2.0 * PI / steps as f64;
        let mut y = [0.0, 1.0];
        integrate(harmonic, &mut y, 0.0, dt, steps).unwrap();
        assert!(y[0].abs() < 1e-9 && (y[1] - 1.0).abs() < 1e-9, "{y:?}");
    }

    #[test]
    fn exponential_decay() {
        let mut y = [1.0];
        integrate(
            |_, y: &[f64], d: &mut [f64]| {
                d[0] = -y[0];
                Ok(())
            },
            &mut y,
            0.0,
            1e-3,
            1000,
        )
        .unwrap();
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn zero_rhs_keeps_state() {
        let y = rk4_step(
            |_, _: &[f64], d: &mut [f64]| {
                d.fill(0.0);
                Ok(())
            },
            &[1.5, -2.0, 3.0],
            0.0,
            0.1,
        )
        .unwrap();
        assert_eq!(y, vec![1.5, -2.0, 3.0]);
    }

    #[test]
    fn non_finite_stage_is_step_error() {
        let r = rk4_step(
            |_, y: &[f64], d: &mut [f64]| {
                d[0] = 1.0 / (y[0] - 1.0);
                Ok(())
            },
            &[1.0],
            2.5,
            0.1,
        );
        assert!(matches!(r, Err(Error::Step { t, .. }) if t == 2.5));
    }

    #[test]
    fn fourth_order_convergence() {
        // y' = y cos t on [0, 2], exact e^{sin t}
        let run = |dt: f64| {
            let mut y = [1.0];
            let steps = (2.0 / dt).round() as usize;
            integrate(
                |t, y: &[f64], d: &mut [f64]| {
                    d[0] = y[0] * t.cos();
                    Ok(())
                },
                &mut y,
                0.0,
                dt,
                steps,
            )
            .unwrap();
            y[0]
        };
        let exact = 2.0f64.sin().exp();
        let e1 = (run(0.1) - exact).abs();
        let e2 = (run(0.05) - exact).abs();
        assert!(e1 / e2 > 14.0, "ratio {}", e1 / e2);
    }
}
