//! Time-dependent velocity fields and their flow maps.

mod bickley;
mod gridded;
mod integrate;

pub use bickley::{BickleyField, BickleyParams};
pub use gridded::{GriddedField, GriddedManifest, Units};
pub use integrate::{advect_batch, flow_jacobian, flow_map, flow_map_unwrapped, Exit, FlowMapSpec};

use crate::error::Result;

/// A velocity field `f(z, t)` on a `D`-dimensional phase space.
///
/// Implementations are immutable and shared across worker threads.
pub trait VelocityField<const D: usize>: Sync {
    fn velocity(&self, z: &[f64; D], t: f64) -> Result<[f64; D]>;

    /// Evaluate at every point with `alive[i]` set, all at the same time `t`.
    /// Points that fail are marked dead; their output is left untouched.
    fn velocity_batch(&self, zs: &[[f64; D]], t: f64, out: &mut [[f64; D]], alive: &mut [bool]) {
        for ((z, o), a) in zs.iter().zip(out.iter_mut()).zip(alive.iter_mut()) {
            if *a {
                match self.velocity(z, t) {
                    Ok(v) => *o = v,
                    Err(_) => *a = false,
                }
            }
        }
    }

    /// `(origin, period)` for each periodic axis.
    fn periods(&self) -> [Option<(f64, f64)>; D];

    /// Wrap periodic coordinates into their fundamental interval.
    fn wrap(&self, z: &mut [f64; D]) {
        for (c, p) in z.iter_mut().zip(self.periods()) {
            if let Some((origin, period)) = p {
                let mut w = (*c - origin).rem_euclid(period);
                if w >= period {
                    w = 0.0;
                }
                *c = origin + w;
            }
        }
    }
}

/// Uniform flow with a fixed velocity; used for translation tests and FTLE sanity checks.
#[derive(Clone, Debug)]
pub struct ConstantField<const D: usize> {
    pub velocity: [f64; D],
    pub periods: [Option<(f64, f64)>; D],
}

impl<const D: usize> VelocityField<D> for ConstantField<D> {
    fn velocity(&self, _z: &[f64; D], _t: f64) -> Result<[f64; D]> {
        Ok(self.velocity)
    }

    fn periods(&self) -> [Option<(f64, f64)>; D] {
        self.periods
    }
}

/// Autonomous linear field `f(z) = M z`.
#[derive(Clone, Debug)]
pub struct LinearField<const D: usize> {
    pub matrix: [[f64; D]; D],
}

impl<const D: usize> LinearField<D> {
    pub fn new(matrix: [[f64; D]; D]) -> Self {
        Self { matrix }
    }
}

impl LinearField<2> {
    /// Hyperbolic saddle `(λx, −λy)`.
    pub fn saddle(lambda: f64) -> Self {
        Self::new([[lambda, 0.0], [0.0, -lambda]])
    }

    /// Rigid rotation `(−y, x)`.
    pub fn rotation() -> Self {
        Self::new([[0.0, -1.0], [1.0, 0.0]])
    }
}

impl<const D: usize> VelocityField<D> for LinearField<D> {
    fn velocity(&self, z: &[f64; D], _t: f64) -> Result<[f64; D]> {
        let mut v = [0.0; D];
        for (vi, row) in v.iter_mut().zip(&self.matrix) {
            *vi = row.iter().zip(z).map(|(a, b)| a * b).sum();
        }
        Ok(v)
    }

    fn periods(&self) -> [Option<(f64, f64)>; D] {
        [None; D]
    }
}
