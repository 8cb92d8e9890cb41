//! Quasi-periodic Bickley jet: a zonal jet with travelling Rossby waves on a
//! periodic channel, in a frame co-moving with the stationary wave.
//!
//! Stream function (lengths in Mm, time in days):
//!
//! ```text
//! Ψ(x, y, t) = c3·y − U0·L·tanh(y/L)
//!            + U0·L·sech²(y/L)·[A3·cos(k3·x) + A2·cos(k2·x − s2·t) + A1·cos(k1·x − s1·t)]
//! ```
//!
//! with `dx/dt = −∂Ψ/∂y`, `dy/dt = ∂Ψ/∂x`.

use serde::{Deserialize, Serialize};

use super::VelocityField;
use crate::error::{Error, Result};

/// Seconds per day over metres per megametre.
const MS_TO_MM_PER_DAY: f64 = 86_400.0 / 1.0e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BickleyParams {
    /// Speed scale, Mm/day.
    pub u0: f64,
    /// Jet width, Mm.
    pub l: f64,
    /// Radius setting the channel circumference `π·r_e`, Mm.
    pub r_e: f64,
    /// Phase speed of wave 2, fraction of `u0`.
    pub c2: f64,
    /// Speed of the co-moving frame, fraction of `u0`.
    pub c3: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    /// Wavenumbers, 1/Mm.
    pub k1: f64,
    pub k2: f64,
    /// Wavenumber of the stationary wave.
    pub k3: f64,
    /// Wave frequencies, 1/day.
    pub s1: f64,
    pub s2: f64,
}

/// Phase speed of wave 1 from the golden-mean relation of the original jet model.
pub(crate) fn golden_c1(c2: f64, c3: f64, k1: f64, k2: f64) -> f64 {
    c3 + 0.5 * (5f64.sqrt() - 1.0) * (k2 / k1) * (c2 - c3)
}

impl Default for BickleyParams {
    fn default() -> Self {
        let u0 = 62.66 * MS_TO_MM_PER_DAY;
        let r_e = 6.371;
        let k1 = 2.0 / r_e;
        let k2 = 4.0 / r_e;
        let k3 = 6.0 / r_e;
        let c2 = 0.205;
        let c3 = 0.700;
        let c1 = golden_c1(c2, c3, k1, k2);
        Self {
            u0,
            l: 1.770,
            r_e,
            c2,
            c3,
            a1: 0.075,
            a2: 0.4,
            a3: 0.2,
            k1,
            k2,
            k3,
            // Travelling waves seen from the frame moving at c3.
            s1: k1 * (c1 - c3) * u0,
            s2: k2 * (c2 - c3) * u0,
        }
    }
}

impl BickleyParams {
    /// Zonal period of the channel, `π·r_e`.
    pub fn circumference(&self) -> f64 {
        std::f64::consts::PI * self.r_e
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("u0", self.u0), ("l", self.l), ("r_e", self.r_e)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("bickley.{name} must be positive, got {v}")));
            }
        }
        let circ = self.circumference();
        for (name, k) in [("k1", self.k1), ("k2", self.k2), ("k3", self.k3)] {
            let turns = k * circ / std::f64::consts::TAU;
            if (turns - turns.round()).abs() > 1e-9 * turns.abs().max(1.0) {
                return Err(Error::Config(format!(
                    "bickley.{name} = {k} is not periodic on a channel of length {circ}"
                )));
            }
        }
        Ok(())
    }

    /// Stream function `Ψ(x, y, t)`.
    pub fn stream_function(&self, x: f64, y: f64, t: f64) -> f64 {
        let (u0, l) = (self.u0, self.l);
        let sech2 = 1.0 / (y / l).cosh().powi(2);
        let waves = self.a3 * (self.k3 * x).cos()
            + self.a2 * (self.k2 * x - self.s2 * t).cos()
            + self.a1 * (self.k1 * x - self.s1 * t).cos();
        self.c3 * u0 * y - u0 * l * (y / l).tanh() + u0 * l * sech2 * waves
    }
}

#[derive(Clone, Debug)]
pub struct BickleyField {
    params: BickleyParams,
}

/// Time-dependent factors shared by every point evaluated at one instant.
#[derive(Clone, Copy)]
struct Phase {
    c1: f64,
    s1: f64,
    c2: f64,
    s2: f64,
}

impl BickleyField {
    pub fn new(params: BickleyParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &BickleyParams {
        &self.params
    }

    #[inline]
    fn phase(&self, t: f64) -> Phase {
        let (s1, c1) = (self.params.s1 * t).sin_cos();
        let (s2, c2) = (self.params.s2 * t).sin_cos();
        Phase { c1, s1, c2, s2 }
    }

    #[inline]
    fn eval(&self, x: f64, y: f64, ph: Phase) -> [f64; 2] {
        let p = &self.params;
        // tanh and sech² from a single exponential.
        let e = (-2.0 * (y / p.l).abs()).exp();
        let th = (1.0 - e) / (1.0 + e);
        let th = if y < 0.0 { -th } else { th };
        let sech2 = 4.0 * e / ((1.0 + e) * (1.0 + e));

        let (sk1, ck1) = (p.k1 * x).sin_cos();
        let (sk2, ck2) = (p.k2 * x).sin_cos();
        let (sk3, ck3) = (p.k3 * x).sin_cos();
        // cos/sin of (k x − s t) by angle subtraction.
        let cw2 = ck2 * ph.c2 + sk2 * ph.s2;
        let sw2 = sk2 * ph.c2 - ck2 * ph.s2;
        let cw1 = ck1 * ph.c1 + sk1 * ph.s1;
        let sw1 = sk1 * ph.c1 - ck1 * ph.s1;

        let waves = p.a3 * ck3 + p.a2 * cw2 + p.a1 * cw1;
        let dwaves_dx = -(p.a3 * p.k3 * sk3 + p.a2 * p.k2 * sw2 + p.a1 * p.k1 * sw1);

        let u = -p.c3 * p.u0 + p.u0 * sech2 * (1.0 + 2.0 * th * waves);
        let v = p.u0 * p.l * sech2 * dwaves_dx;
        [u, v]
    }
}

impl VelocityField<2> for BickleyField {
    fn velocity(&self, z: &[f64; 2], t: f64) -> Result<[f64; 2]> {
        Ok(self.eval(z[0], z[1], self.phase(t)))
    }

    fn velocity_batch(&self, zs: &[[f64; 2]], t: f64, out: &mut [[f64; 2]], alive: &mut [bool]) {
        let ph = self.phase(t);
        for ((z, o), a) in zs.iter().zip(out.iter_mut()).zip(alive.iter()) {
            if *a {
                *o = self.eval(z[0], z[1], ph);
            }
        }
    }

    fn periods(&self) -> [Option<(f64, f64)>; 2] {
        [Some((0.0, self.params.circumference())), None]
    }
}
