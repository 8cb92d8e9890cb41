//! Velocity snapshots on a rectilinear grid, interpolated multilinearly in
//! space and affinely in time.

use serde::{Deserialize, Serialize};

use super::VelocityField;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Units {
    /// Unit of each spatial axis, e.g. `["deg", "deg", "hPa"]`.
    pub axes: Vec<String>,
    pub time: String,
    pub velocity: String,
}

/// On-disk description of a gridded field (`manifest.json`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GriddedManifest {
    /// Node coordinates per axis, strictly increasing.
    pub axes: Vec<Vec<f64>>,
    pub periodic: Vec<bool>,
    /// Period of each periodic axis. Defaults to `N·Δ` for uniformly spaced nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periods: Option<Vec<Option<f64>>>,
    /// Snapshot times, strictly increasing.
    pub times: Vec<f64>,
    pub units: Units,
    pub components: usize,
}

#[derive(Clone, Debug)]
struct Axis {
    nodes: Vec<f64>,
    period: Option<f64>,
    /// Node spacing when uniform, for O(1) cell lookup.
    uniform: Option<f64>,
}

impl Axis {
    fn new(nodes: Vec<f64>, period: Option<f64>) -> Self {
        let n = nodes.len();
        let uniform = if n >= 2 {
            let h = (nodes[n - 1] - nodes[0]) / (n - 1) as f64;
            let ok = nodes.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-12 * h.abs().max(1.0));
            ok.then_some(h)
        } else {
            None
        };
        Self { nodes, period, uniform }
    }

    /// Cell `(i0, i1, w)` with `c = (1−w)·x[i0] + w·x[i1]`.
    #[inline]
    fn cell(&self, c: f64) -> Option<(usize, usize, f64)> {
        let n = self.nodes.len();
        let first = self.nodes[0];
        let last = self.nodes[n - 1];
        if let Some(period) = self.period {
            let mut c = first + (c - first).rem_euclid(period);
            if c >= first + period {
                c = first;
            }
            if c >= last {
                // Wrap-around cell between the last node and the first node + period.
                let w = (c - last) / (first + period - last);
                return Some((n - 1, 0, w));
            }
            return Some(self.interior(c));
        }
        if !(c >= first && c <= last) {
            return None;
        }
        if n == 1 {
            return Some((0, 0, 0.0));
        }
        Some(self.interior(c))
    }

    #[inline]
    fn interior(&self, c: f64) -> (usize, usize, f64) {
        let n = self.nodes.len();
        let mut i = match self.uniform {
            Some(h) => ((c - self.nodes[0]) / h).floor() as isize,
            None => self.nodes.partition_point(|&x| x <= c) as isize - 1,
        };
        i = i.clamp(0, n as isize - 2);
        let mut i = i as usize;
        // Uniform lookup may be one cell off after rounding.
        while i > 0 && c < self.nodes[i] {
            i -= 1;
        }
        while i + 2 < n && c >= self.nodes[i + 1] {
            i += 1;
        }
        let w = (c - self.nodes[i]) / (self.nodes[i + 1] - self.nodes[i]);
        (i, i + 1, w)
    }
}

/// Gridded velocity field in `D` dimensions with `D` velocity components.
///
/// Snapshot values are stored `[component][axis D−1]…[axis 0]` with axis 0
/// varying fastest.
#[derive(Clone, Debug)]
pub struct GriddedField<const D: usize> {
    manifest: GriddedManifest,
    axes: Vec<Axis>,
    strides: [usize; D],
    nodes_per_component: usize,
    snapshots: Vec<Vec<f64>>,
}

impl<const D: usize> GriddedField<D> {
    pub fn new(manifest: GriddedManifest, snapshots: Vec<Vec<f64>>) -> Result<Self> {
        if manifest.axes.len() != D || manifest.periodic.len() != D {
            return Err(Error::ManifestInvalid(format!(
                "expected {D} axes and periodic flags, got {} and {}",
                manifest.axes.len(),
                manifest.periodic.len()
            )));
        }
        if manifest.components != D {
            return Err(Error::ManifestInvalid(format!(
                "expected {D} velocity components, got {}",
                manifest.components
            )));
        }
        if manifest.units.axes.len() != D {
            return Err(Error::ManifestInvalid("one unit per axis required".into()));
        }
        for (axis, nodes) in manifest.axes.iter().enumerate() {
            if nodes.is_empty() {
                return Err(Error::ManifestInvalid(format!("axis {axis} has no nodes")));
            }
            if nodes.windows(2).any(|w| !(w[1] > w[0])) || nodes.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonMonotoneAxis { axis });
            }
        }
        if manifest.times.is_empty() {
            return Err(Error::ManifestInvalid("no snapshot times".into()));
        }
        if manifest.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::ManifestInvalid("snapshot times not strictly increasing".into()));
        }
        if snapshots.len() != manifest.times.len() {
            return Err(Error::ManifestInvalid(format!(
                "{} snapshot arrays for {} times",
                snapshots.len(),
                manifest.times.len()
            )));
        }

        let mut axes = Vec::with_capacity(D);
        for a in 0..D {
            let nodes = manifest.axes[a].clone();
            let explicit = manifest.periods.as_ref().and_then(|p| p.get(a).copied().flatten());
            let period = if manifest.periodic[a] {
                let p = match explicit {
                    Some(p) => p,
                    None => {
                        let n = nodes.len();
                        if n < 2 {
                            return Err(Error::ManifestInvalid(format!("periodic axis {a} needs two nodes")));
                        }
                        (nodes[n - 1] - nodes[0]) * n as f64 / (n - 1) as f64
                    }
                };
                if !(p > nodes[nodes.len() - 1] - nodes[0]) {
                    return Err(Error::ManifestInvalid(format!("period of axis {a} shorter than its node span")));
                }
                Some(p)
            } else {
                None
            };
            axes.push(Axis::new(nodes, period));
        }

        let mut strides = [0usize; D];
        let mut s = 1;
        for a in 0..D {
            strides[a] = s;
            s *= axes[a].nodes.len();
        }
        let nodes_per_component = s;
        let expected = nodes_per_component * D;
        for snap in &snapshots {
            if snap.len() != expected {
                return Err(Error::SizeMismatch { path: "<memory>".into(), expected, found: snap.len() });
            }
        }
        Ok(Self { manifest, axes, strides, nodes_per_component, snapshots })
    }

    /// Sample `velocity(z, t)` of another field onto the grid nodes at each time.
    pub fn sample_from<F: VelocityField<D>>(manifest: GriddedManifest, source: &F) -> Result<Self> {
        let counts: Vec<usize> = manifest.axes.iter().map(Vec::len).collect();
        let total: usize = counts.iter().product();
        let mut snapshots = Vec::with_capacity(manifest.times.len());
        for &t in &manifest.times {
            let mut data = vec![0.0; total * D];
            for flat in 0..total {
                let mut z = [0.0; D];
                let mut rest = flat;
                for a in 0..D {
                    z[a] = manifest.axes[a][rest % counts[a]];
                    rest /= counts[a];
                }
                let v = source.velocity(&z, t)?;
                for c in 0..D {
                    data[c * total + flat] = v[c];
                }
            }
            snapshots.push(data);
        }
        Self::new(manifest, snapshots)
    }

    pub fn manifest(&self) -> &GriddedManifest {
        &self.manifest
    }

    pub fn snapshots(&self) -> &[Vec<f64>] {
        &self.snapshots
    }

    fn time_bracket(&self, t: f64) -> Result<(usize, usize, f64)> {
        let times = &self.manifest.times;
        let (first, last) = (times[0], times[times.len() - 1]);
        if !(t >= first && t <= last) {
            return Err(Error::OutOfTemporalRange { t, first, last });
        }
        if times.len() == 1 {
            return Ok((0, 0, 0.0));
        }
        let k = (times.partition_point(|&s| s <= t).max(1) - 1).min(times.len() - 2);
        let w = (t - times[k]) / (times[k + 1] - times[k]);
        Ok((k, k + 1, w))
    }

    #[inline]
    fn spatial(&self, snap: &[f64], cells: &[(usize, usize, f64); D]) -> [f64; D] {
        let mut out = [0.0; D];
        for corner in 0..(1usize << D) {
            let mut weight = 1.0;
            let mut offset = 0;
            for a in 0..D {
                let (i0, i1, w) = cells[a];
                if corner >> a & 1 == 1 {
                    weight *= w;
                    offset += i1 * self.strides[a];
                } else {
                    weight *= 1.0 - w;
                    offset += i0 * self.strides[a];
                }
            }
            if weight == 0.0 {
                continue;
            }
            for (c, o) in out.iter_mut().enumerate() {
                *o += weight * snap[c * self.nodes_per_component + offset];
            }
        }
        out
    }
}

impl<const D: usize> VelocityField<D> for GriddedField<D> {
    fn velocity(&self, z: &[f64; D], t: f64) -> Result<[f64; D]> {
        let (k0, k1, wt) = self.time_bracket(t)?;
        let mut cells = [(0, 0, 0.0); D];
        for a in 0..D {
            cells[a] = self.axes[a]
                .cell(z[a])
                .ok_or_else(|| Error::OutOfSpatialDomain { point: z.to_vec(), time: t })?;
        }
        let v0 = self.spatial(&self.snapshots[k0], &cells);
        if wt == 0.0 {
            return Ok(v0);
        }
        let v1 = self.spatial(&self.snapshots[k1], &cells);
        let mut v = [0.0; D];
        for c in 0..D {
            v[c] = (1.0 - wt) * v0[c] + wt * v1[c];
        }
        Ok(v)
    }

    fn periods(&self) -> [Option<(f64, f64)>; D] {
        let mut p = [None; D];
        for a in 0..D {
            p[a] = self.axes[a].period.map(|period| (self.axes[a].nodes[0], period));
        }
        p
    }
}
