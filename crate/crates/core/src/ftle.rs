//! Finite-time Lyapunov exponents, `Λ = ln σ_max(DΦ) / |τ|`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowfield::{flow_jacobian, FlowMapSpec, VelocityField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

/// Regular lattice of evaluation points `origin + k·spacing`, axis 0 fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointLattice {
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
    pub counts: Vec<usize>,
}

impl PointLattice {
    /// `counts[a]` points spanning `[lo[a], hi[a]]` inclusive.
    pub fn spanning(lo: &[f64], hi: &[f64], counts: &[usize]) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != counts.len() {
            return Err(Error::LengthMismatch { expected: lo.len(), got: counts.len() });
        }
        let spacing = (0..lo.len())
            .map(|a| match counts[a] {
                0 => Err(Error::InvalidGrid(format!("axis {a} has no points"))),
                1 => Ok(0.0),
                c => Ok((hi[a] - lo[a]) / (c - 1) as f64),
            })
            .collect::<Result<_>>()?;
        Ok(Self { origin: lo.to_vec(), spacing, counts: counts.to_vec() })
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        let mut rest = index;
        (0..self.counts.len())
            .map(|a| {
                let k = rest % self.counts[a];
                rest /= self.counts[a];
                self.origin[a] + k as f64 * self.spacing[a]
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FtleField {
    pub lattice: PointLattice,
    /// `None` where a finite-difference trajectory left the domain.
    pub values: Vec<Option<f64>>,
    pub direction: Direction,
    pub t: f64,
    /// Positive flow duration; the backward field integrates over `−tau`.
    pub tau: f64,
}

impl FtleField {
    /// Range of the finite values.
    pub fn range(&self) -> Option<(f64, f64)> {
        self.values.iter().flatten().fold(None, |acc, &v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }
}

/// Largest singular value of a small square matrix.
pub fn max_singular_value<const D: usize>(j: &[[f64; D]; D]) -> f64 {
    let m = DMatrix::from_fn(D, D, |r, c| j[r][c]);
    m.singular_values().max()
}

/// FTLE at every point of `lattice`.
///
/// `tau` is the flow duration (its sign is ignored; `direction` chooses it).
pub fn ftle_field<F: VelocityField<D>, const D: usize>(
    field: &F,
    lattice: &PointLattice,
    t: f64,
    tau: f64,
    direction: Direction,
    delta: f64,
    step: f64,
) -> Result<FtleField> {
    if lattice.counts.len() != D {
        return Err(Error::LengthMismatch { expected: D, got: lattice.counts.len() });
    }
    let span = tau.abs();
    if !(span > 0.0) || !span.is_finite() {
        return Err(Error::InvalidFlow(format!("FTLE needs a nonzero flow time, got {tau}")));
    }
    let signed = match direction {
        Direction::Forward => span,
        Direction::Backward => -span,
    };
    let spec = FlowMapSpec::new(field, t, signed, step)?;
    let values = (0..lattice.len())
        .into_par_iter()
        .map(|k| {
            let p = lattice.point(k);
            let z: [f64; D] = std::array::from_fn(|a| p[a]);
            match flow_jacobian(&spec, &z, delta) {
                Ok(jac) => Ok(Some(max_singular_value(&jac).ln() / span)),
                Err(Error::OutOfSpatialDomain { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let failed = values.iter().filter(|v| v.is_none()).count();
    if failed > 0 {
        log::warn!("{failed} of {} FTLE points left the domain", values.len());
    }
    Ok(FtleField { lattice: lattice.clone(), values, direction, t, tau: span })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowfield::{BickleyField, BickleyParams, ConstantField, LinearField};

    #[test]
    fn constant_field_has_zero_exponent() {
        let f = ConstantField { velocity: [0.3, -0.1], periods: [None, None] };
        let lat = PointLattice::spanning(&[0.0, 0.0], &[1.0, 1.0], &[5, 5]).unwrap();
        let ftle = ftle_field(&f, &lat, 0.0, 2.0, Direction::Forward, 1e-3, 0.1).unwrap();
        assert!(ftle.values.iter().all(|v| v.unwrap().abs() <= 1e-10));
    }

    #[test]
    fn saddle_exponent_matches_rate_both_ways() {
        let f = LinearField::saddle(0.5);
        let lat = PointLattice::spanning(&[-1.0, -1.0], &[1.0, 1.0], &[7, 7]).unwrap();
        for dir in [Direction::Forward, Direction::Backward] {
            let ftle = ftle_field(&f, &lat, 0.0, 4.0, dir, 1e-4, 0.01).unwrap();
            for v in &ftle.values {
                assert!((v.unwrap() - 0.5).abs() <= 1e-3, "{dir:?} {v:?}");
            }
        }
    }

    #[test]
    fn zero_duration_is_rejected() {
        let f = LinearField::saddle(0.5);
        let lat = PointLattice::spanning(&[0.0, 0.0], &[1.0, 1.0], &[2, 2]).unwrap();
        assert!(ftle_field(&f, &lat, 0.0, 0.0, Direction::Forward, 1e-4, 0.1).is_err());
    }

    #[test]
    fn lattice_points_are_axis0_fastest() {
        let lat = PointLattice::spanning(&[0.0, 10.0], &[1.0, 12.0], &[3, 2]).unwrap();
        assert_eq!(lat.point(1), vec![0.5, 10.0]);
        assert_eq!(lat.point(3), vec![0.0, 12.0]);
    }

    #[test]
    fn halving_delta_barely_moves_bickley_ftle() {
        let f = BickleyField::new(BickleyParams::default()).unwrap();
        let lat = PointLattice::spanning(&[0.5, -2.0], &[19.0, 2.0], &[10, 10]).unwrap();
        let a = ftle_field(&f, &lat, 20.0, 10.0, Direction::Forward, 2e-6, 0.02).unwrap();
        let b = ftle_field(&f, &lat, 20.0, 10.0, Direction::Forward, 1e-6, 0.02).unwrap();
        for (u, v) in a.values.iter().zip(&b.values) {
            assert!((u.unwrap() - v.unwrap()).abs() < 1e-3);
        }
    }
}
