//! Classical fourth-order Runge–Kutta flow maps.

use super::VelocityField;
use crate::error::{Error, Result};

/// Flow map `Φ(·, t; τ)` of a field, integrated with fixed step `step`.
///
/// `tau` may be negative (backward flow). When `|tau|` is not a whole number
/// of steps the final step is shortened to land exactly on `t + tau`.
#[derive(Debug)]
pub struct FlowMapSpec<'a, F> {
    pub field: &'a F,
    pub t: f64,
    pub tau: f64,
    pub step: f64,
}

impl<F> Clone for FlowMapSpec<'_, F> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<F> Copy for FlowMapSpec<'_, F> {}

/// Where and when a trajectory left the field's domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Exit<const D: usize> {
    pub point: [f64; D],
    pub time: f64,
}

impl<'a, F> FlowMapSpec<'a, F> {
    pub fn new(field: &'a F, t: f64, tau: f64, step: f64) -> Result<Self> {
        let spec = Self { field, t, tau, step };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidFlow(format!("step must be positive, got {}", self.step)));
        }
        if !self.tau.is_finite() || !self.t.is_finite() {
            return Err(Error::InvalidFlow("t and tau must be finite".into()));
        }
        Ok(())
    }

    /// Start time and signed length of every RK4 step.
    pub fn schedule(&self) -> Vec<(f64, f64)> {
        let span = self.tau.abs();
        if span == 0.0 {
            return Vec::new();
        }
        let sign = self.tau.signum();
        let ratio = span / self.step;
        let whole = ratio.round();
        if whole >= 1.0 && (ratio - whole).abs() <= 1e-9 * whole {
            // Commensurate: equal steps that sum to tau exactly.
            let n = whole as usize;
            let h = self.tau / n as f64;
            return (0..n).map(|k| (self.t + k as f64 * h, h)).collect();
        }
        let n = ratio.floor() as usize;
        let mut steps: Vec<(f64, f64)> = (0..n).map(|k| (self.t + sign * k as f64 * self.step, sign * self.step)).collect();
        let t_last = self.t + sign * n as f64 * self.step;
        steps.push((t_last, self.t + self.tau - t_last));
        steps
    }
}

#[inline]
fn axpy<const D: usize>(z: &[f64; D], a: f64, k: &[f64; D]) -> [f64; D] {
    let mut out = *z;
    for i in 0..D {
        out[i] += a * k[i];
    }
    out
}

/// Advect `points` in place. Points leaving the domain stop where they
/// failed; their exit is reported at the matching position of the result.
/// Outputs are not wrapped into periodic fundamental domains.
pub fn advect_batch<F: VelocityField<D>, const D: usize>(
    spec: &FlowMapSpec<'_, F>,
    points: &mut [[f64; D]],
) -> Vec<Option<Exit<D>>> {
    let n = points.len();
    let mut exits: Vec<Option<Exit<D>>> = vec![None; n];
    let mut alive = vec![true; n];
    let mut k1 = vec![[0.0; D]; n];
    let mut k2 = vec![[0.0; D]; n];
    let mut k3 = vec![[0.0; D]; n];
    let mut k4 = vec![[0.0; D]; n];
    let mut stage = vec![[0.0; D]; n];
    let field = spec.field;

    let record = |alive: &[bool], exits: &mut [Option<Exit<D>>], at: &[[f64; D]], time: f64| {
        for i in 0..alive.len() {
            if !alive[i] && exits[i].is_none() {
                exits[i] = Some(Exit { point: at[i], time });
            }
        }
    };

    for (t0, h) in spec.schedule() {
        let half = 0.5 * h;
        field.velocity_batch(points, t0, &mut k1, &mut alive);
        record(&alive, &mut exits, points, t0);

        for i in 0..n {
            if alive[i] {
                stage[i] = axpy(&points[i], half, &k1[i]);
            }
        }
        field.velocity_batch(&stage, t0 + half, &mut k2, &mut alive);
        record(&alive, &mut exits, &stage, t0 + half);

        for i in 0..n {
            if alive[i] {
                stage[i] = axpy(&points[i], half, &k2[i]);
            }
        }
        field.velocity_batch(&stage, t0 + half, &mut k3, &mut alive);
        record(&alive, &mut exits, &stage, t0 + half);

        for i in 0..n {
            if alive[i] {
                stage[i] = axpy(&points[i], h, &k3[i]);
            }
        }
        field.velocity_batch(&stage, t0 + h, &mut k4, &mut alive);
        record(&alive, &mut exits, &stage, t0 + h);

        let sixth = h / 6.0;
        for i in 0..n {
            if alive[i] {
                for c in 0..D {
                    points[i][c] += sixth * (k1[i][c] + 2.0 * k2[i][c] + 2.0 * k3[i][c] + k4[i][c]);
                }
            }
        }
    }
    exits
}

/// `Φ(z, t; τ)` without wrapping periodic coordinates.
pub fn flow_map_unwrapped<F: VelocityField<D>, const D: usize>(
    spec: &FlowMapSpec<'_, F>,
    z: &[f64; D],
) -> Result<[f64; D]> {
    spec.validate()?;
    let mut pts = [*z];
    match advect_batch(spec, &mut pts)[0] {
        None => Ok(pts[0]),
        Some(exit) => Err(Error::OutOfSpatialDomain { point: exit.point.to_vec(), time: exit.time }),
    }
}

/// `Φ(z, t; τ)` with periodic axes wrapped into the fundamental domain.
pub fn flow_map<F: VelocityField<D>, const D: usize>(spec: &FlowMapSpec<'_, F>, z: &[f64; D]) -> Result<[f64; D]> {
    let mut out = flow_map_unwrapped(spec, z)?;
    spec.field.wrap(&mut out);
    Ok(out)
}

/// Central-difference Jacobian `DΦ(z, t; τ)`, `J[r][c] = ∂Φ_r/∂z_c`.
pub fn flow_jacobian<F: VelocityField<D>, const D: usize>(
    spec: &FlowMapSpec<'_, F>,
    z: &[f64; D],
    delta: f64,
) -> Result<[[f64; D]; D]> {
    spec.validate()?;
    if !(delta > 0.0) {
        return Err(Error::InvalidFlow(format!("finite-difference offset must be positive, got {delta}")));
    }
    let mut pts = Vec::with_capacity(2 * D);
    for c in 0..D {
        let mut plus = *z;
        plus[c] += delta;
        let mut minus = *z;
        minus[c] -= delta;
        pts.push(plus);
        pts.push(minus);
    }
    let exits = advect_batch(spec, &mut pts);
    if let Some(exit) = exits.into_iter().flatten().next() {
        return Err(Error::OutOfSpatialDomain { point: exit.point.to_vec(), time: exit.time });
    }
    let mut jac = [[0.0; D]; D];
    for c in 0..D {
        for r in 0..D {
            jac[r][c] = (pts[2 * c][r] - pts[2 * c + 1][r]) / (2.0 * delta);
        }
    }
    Ok(jac)
}
