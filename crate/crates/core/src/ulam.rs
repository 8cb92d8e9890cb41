//! Ulam discretisation of the transfer operator between the boxes of X and
//! the boxes covering its image Y.
//!
//! `P[i][j]` is the fraction of the sample points of box `B_i` whose images
//! land in `C_j`. The reference measure `p` lives on X and its push-forward
//! `q = pP` on Y.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boxgrid::{order_key, BoxGrid, MultiIndex};
use crate::error::{Error, Result};
use crate::flowfield::{advect_batch, FlowMapSpec, VelocityField};
use crate::sparse::Csr;

/// Rows must sum to one within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// How box areas enter an area-weighted measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AreaModel {
    /// Product of the box edges on the two horizontal axes.
    Planar { horizontal: [usize; 2] },
    /// Longitude/latitude in degrees on the unit sphere.
    SphericalDegrees { lon_axis: usize, lat_axis: usize },
}

impl Default for AreaModel {
    fn default() -> Self {
        AreaModel::Planar { horizontal: [0, 1] }
    }
}

/// Per-box values given inline or as a file with one value per line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weights {
    Inline(Vec<f64>),
    File(PathBuf),
}

impl Weights {
    pub fn load(&self) -> Result<Vec<f64>> {
        match self {
            Weights::Inline(v) => Ok(v.clone()),
            Weights::File(path) => crate::dataio::read_weights(path),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasureSpec {
    /// Normalised volume: every box carries `1/m`.
    Uniform,
    /// `p_i ∝ Pr_i^(5/7) · a_i` with `Pr_i` the pressure at the box centre.
    PressureWeighted {
        pressures: Weights,
        #[serde(default)]
        area: AreaModel,
    },
    /// Layer mass in pressure coordinates: `p_i ∝ a_i · Δp_i`, with `Δp_i`
    /// the box extent along `height_axis`.
    AreaHeight {
        #[serde(default)]
        area: AreaModel,
        height_axis: usize,
    },
    /// Arbitrary nonnegative weights, one per box in dense index order.
    FromFile { path: PathBuf },
}

/// Exponent of the pressure weighting, `R/c_p` for dry air.
pub const PRESSURE_EXPONENT: f64 = 5.0 / 7.0;

fn box_area(grid: &BoxGrid, index: usize, model: &AreaModel) -> Result<f64> {
    let (lo, hi) = grid.bounds(index);
    let dim = grid.dim();
    match *model {
        AreaModel::Planar { horizontal: [a, b] } => {
            if a >= dim || b >= dim || a == b {
                return Err(Error::Config(format!("planar area axes {a},{b} invalid for {dim}-d grid")));
            }
            Ok((hi[a] - lo[a]) * (hi[b] - lo[b]))
        }
        AreaModel::SphericalDegrees { lon_axis, lat_axis } => {
            if lon_axis >= dim || lat_axis >= dim || lon_axis == lat_axis {
                return Err(Error::Config("spherical area axes invalid".into()));
            }
            let dlon = (hi[lon_axis] - lo[lon_axis]).to_radians();
            let s = hi[lat_axis].to_radians().sin() - lo[lat_axis].to_radians().sin();
            Ok(dlon * s)
        }
    }
}

/// Reference probability vector on the boxes of `grid`.
pub fn reference_measure(spec: &MeasureSpec, grid: &BoxGrid) -> Result<Vec<f64>> {
    let m = grid.len();
    let raw: Vec<f64> = match spec {
        MeasureSpec::Uniform => vec![1.0; m],
        MeasureSpec::PressureWeighted { pressures, area } => {
            let pr = pressures.load()?;
            if pr.len() != m {
                return Err(Error::LengthMismatch { expected: m, got: pr.len() });
            }
            let mut w = Vec::with_capacity(m);
            for (i, &p) in pr.iter().enumerate() {
                if !(p >= 0.0) {
                    return Err(Error::NegativeWeight { index: i, value: p });
                }
                w.push(p.powf(PRESSURE_EXPONENT) * box_area(grid, i, area)?);
            }
            w
        }
        MeasureSpec::AreaHeight { area, height_axis } => {
            if *height_axis >= grid.dim() {
                return Err(Error::Config(format!("height axis {height_axis} out of range")));
            }
            (0..m)
                .map(|i| {
                    let (lo, hi) = grid.bounds(i);
                    Ok(box_area(grid, i, area)? * (hi[*height_axis] - lo[*height_axis]))
                })
                .collect::<Result<_>>()?
        }
        MeasureSpec::FromFile { path } => {
            let w = crate::dataio::read_weights(path)?;
            if w.len() != m {
                return Err(Error::LengthMismatch { expected: m, got: w.len() });
            }
            w
        }
    };
    normalize_weights(raw)
}

/// Neumaier summation; exact to a few ulps however many terms there are.
pub fn compensated_sum(v: &[f64]) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for &x in v {
        let t = sum + x;
        carry += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + carry
}

/// Validate nonnegative weights and scale them to sum to one.
pub fn normalize_weights(raw: Vec<f64>) -> Result<Vec<f64>> {
    for (i, &w) in raw.iter().enumerate() {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::NegativeWeight { index: i, value: w });
        }
    }
    let total = compensated_sum(&raw);
    if !(total > 0.0) {
        return Err(Error::MeasureDegenerate("all weights are zero".into()));
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleScheme {
    /// Cell centres of a per-box sub-lattice.
    #[default]
    Lattice,
    /// Independent uniform draws from a generator keyed by `(seed, box)`.
    Random { seed: u64 },
}

/// Largest per-axis count ratio accepted for a sub-lattice before falling
/// back to a shifted Halton sequence.
const MAX_LATTICE_ASPECT: usize = 4;

/// Per-axis sub-lattice counts with product `q`, as equal as possible.
/// Ties go to the lexicographically smallest count vector, so surplus points
/// land on the last axes.
pub fn lattice_counts(q: usize, dim: usize) -> Option<Vec<usize>> {
    fn rec(rest: usize, left: usize, cur: &mut Vec<usize>, best: &mut Option<(usize, usize, Vec<usize>)>) {
        if left == 1 {
            cur.push(rest);
            let (mn, mx) = (cur.iter().min().copied().unwrap(), cur.iter().max().copied().unwrap());
            // Compare max/min ratios exactly as fractions.
            let better = match best {
                None => true,
                Some((bmx, bmn, bv)) => {
                    let lhs = mx * *bmn;
                    let rhs = *bmx * mn;
                    lhs < rhs || (lhs == rhs && *cur < *bv)
                }
            };
            if better {
                *best = Some((mx, mn, cur.clone()));
            }
            cur.pop();
            return;
        }
        for f in 1..=rest {
            if rest.is_multiple_of(f) {
                cur.push(f);
                rec(rest / f, left - 1, cur, best);
                cur.pop();
            }
        }
    }
    if q == 0 || dim == 0 {
        return None;
    }
    let mut best = None;
    rec(q, dim, &mut Vec::with_capacity(dim), &mut best);
    let (mx, mn, counts) = best?;
    (mx <= MAX_LATTICE_ASPECT * mn).then_some(counts)
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// `q` points inside the box `[lo, hi)`.
///
/// The lattice scheme puts points at the cell centres of a sub-lattice
/// (see [`lattice_counts`]); when `q` has no acceptable factorisation the
/// points come from a Halton sequence with a random shift keyed by `box_index`.
pub fn sample_points<const D: usize>(
    lo: &[f64],
    hi: &[f64],
    q: usize,
    scheme: SampleScheme,
    box_index: usize,
) -> Result<Vec<[f64; D]>> {
    if q == 0 {
        return Err(Error::Config("at least one sample per box required".into()));
    }
    if lo.len() != D || hi.len() != D {
        return Err(Error::LengthMismatch { expected: D, got: lo.len() });
    }
    let mut pts = Vec::with_capacity(q);
    match scheme {
        SampleScheme::Lattice => match lattice_counts(q, D) {
            Some(counts) => {
                for flat in 0..q {
                    let mut z = [0.0; D];
                    let mut rest = flat;
                    for a in 0..D {
                        let k = rest % counts[a];
                        rest /= counts[a];
                        z[a] = lo[a] + (hi[a] - lo[a]) * (k as f64 + 0.5) / counts[a] as f64;
                    }
                    pts.push(z);
                }
            }
            None => {
                const BASES: [u64; 3] = [2, 3, 5];
                let mut rng = ChaCha8Rng::seed_from_u64(box_index as u64);
                let shift: [f64; D] = std::array::from_fn(|_| rng.gen::<f64>());
                for r in 0..q {
                    let mut z = [0.0; D];
                    for a in 0..D {
                        let u = (radical_inverse(r as u64 + 1, BASES[a]) + shift[a]).fract();
                        z[a] = lo[a] + (hi[a] - lo[a]) * u;
                    }
                    pts.push(z);
                }
            }
        },
        SampleScheme::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(box_index as u64);
            for _ in 0..q {
                pts.push(std::array::from_fn(|a| lo[a] + (hi[a] - lo[a]) * rng.gen::<f64>()));
            }
        }
    }
    Ok(pts)
}

/// Box geometry behind a transition matrix built by Ulam's method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub source: BoxGrid,
    /// Dense source-grid index of each retained row.
    pub source_boxes: Vec<usize>,
    /// Image covering; its dense indices are the matrix columns.
    pub image: BoxGrid,
}

/// Row-stochastic transition matrix with its measure pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionSystem {
    pub matrix: Csr<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Raw landing counts and retained samples per row, when built from samples.
    pub counts: Option<Csr<u32>>,
    pub row_samples: Option<Vec<u32>>,
    pub geometry: Option<Geometry>,
    pub samples_per_box: usize,
    /// Fraction of advected samples that left the field's domain.
    pub lost_mass: f64,
    /// Reference mass of boxes dropped because no sample survived.
    pub pruned_mass: f64,
}

impl TransitionSystem {
    /// Wrap a row-stochastic matrix and a positive reference vector.
    /// `p` is normalised; columns that receive no mass are removed.
    pub fn new(matrix: Csr<f64>, p: Vec<f64>) -> Result<Self> {
        if p.len() != matrix.nrows() {
            return Err(Error::LengthMismatch { expected: matrix.nrows(), got: p.len() });
        }
        if let Some((i, &v)) = p.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(Error::MeasureDegenerate(format!("p[{i}] = {v} is not positive")));
        }
        for (r, s) in matrix.row_sums().into_iter().enumerate() {
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidGrid(format!("row {r} sums to {s}")));
            }
        }
        if matrix.triplets().any(|(_, _, v)| v < 0.0) {
            return Err(Error::InvalidGrid("negative transition probability".into()));
        }
        let p = normalize_weights(p)?;
        let q = matrix.left_mul(&p);
        let mut sys = Self {
            matrix,
            p,
            q,
            counts: None,
            row_samples: None,
            geometry: None,
            samples_per_box: 0,
            lost_mass: 0.0,
            pruned_mass: 0.0,
        };
        sys.prune_columns()?;
        Ok(sys)
    }

    pub fn from_dense(rows: &[Vec<f64>], p: Vec<f64>) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        let sparse = rows
            .iter()
            .map(|r| r.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(j, &v)| (j, v)).collect())
            .collect();
        Self::new(Csr::from_rows(ncols, sparse)?, p)
    }

    pub fn m(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n(&self) -> usize {
        self.matrix.ncols()
    }

    fn prune_columns(&mut self) -> Result<()> {
        if self.q.iter().all(|&v| v > 0.0) {
            return Ok(());
        }
        let mut remap = vec![usize::MAX; self.n()];
        let mut next = 0;
        for (j, &v) in self.q.iter().enumerate() {
            if v > 0.0 {
                remap[j] = next;
                next += 1;
            }
        }
        let rows = (0..self.m())
            .map(|r| self.matrix.row(r).filter(|&(c, _)| remap[c] != usize::MAX).map(|(c, v)| (remap[c], v)).collect())
            .collect();
        self.matrix = Csr::from_rows(next, rows)?;
        self.q.retain(|&v| v > 0.0);
        if let Some(g) = &mut self.geometry {
            let keep: Vec<usize> = remap.iter().enumerate().filter(|(_, &r)| r != usize::MAX).map(|(j, _)| j).collect();
            g.image = g.image.restrict(&keep)?;
        }
        Ok(())
    }

    /// Largest deviation of a row sum from one.
    pub fn max_row_sum_error(&self) -> f64 {
        self.matrix.row_sums().iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Largest entrywise deviation of `q` from `pP`.
    pub fn max_pushforward_error(&self) -> f64 {
        let pp = self.matrix.left_mul(&self.p);
        pp.iter().zip(&self.q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UlamOptions {
    pub samples_per_box: usize,
    #[serde(default)]
    pub scheme: SampleScheme,
}

/// Landing counts of one source box.
struct BoxImages {
    cells: Vec<(MultiIndex, u32)>,
    retained: u32,
}

/// Advect `Q` samples from every box of `grid` and assemble `P`, `p`, `q`.
///
/// Runs on the current rayon pool. Every box is processed independently and
/// results are merged in box order, so the counts do not depend on the
/// number of workers.
pub fn build_transition_system<F: VelocityField<D>, const D: usize>(
    flow: &FlowMapSpec<'_, F>,
    grid: &BoxGrid,
    measure: &MeasureSpec,
    opts: &UlamOptions,
) -> Result<TransitionSystem> {
    flow.validate()?;
    if grid.dim() != D {
        return Err(Error::LengthMismatch { expected: D, got: grid.dim() });
    }
    let q_samples = opts.samples_per_box;
    if q_samples == 0 || q_samples > u32::MAX as usize {
        return Err(Error::Config(format!("samples per box {q_samples} out of range")));
    }
    let p_full = reference_measure(measure, grid)?;
    let active: Vec<usize> = (0..grid.len()).filter(|&i| p_full[i] > 0.0).collect();
    let lattice = &grid.lattice;

    let images: Vec<BoxImages> = active
        .par_iter()
        .map(|&i| -> Result<BoxImages> {
            let (lo, hi) = grid.bounds(i);
            let mut pts = sample_points::<D>(&lo, &hi, q_samples, opts.scheme, i)?;
            let exits = advect_batch(flow, &mut pts);
            let mut keys: Vec<MultiIndex> = pts
                .iter()
                .zip(&exits)
                .filter(|(_, e)| e.is_none())
                .filter_map(|(z, _)| lattice.multi_index(z))
                .collect();
            let retained = keys.len() as u32;
            keys.sort_unstable_by_key(order_key);
            let mut cells: Vec<(MultiIndex, u32)> = Vec::new();
            for k in keys {
                match cells.last_mut() {
                    Some((last, c)) if *last == k => *c += 1,
                    _ => cells.push((k, 1)),
                }
            }
            Ok(BoxImages { cells, retained })
        })
        .collect::<Result<_>>()?;

    let total_samples = (active.len() * q_samples) as f64;
    let lost: u64 = images.iter().map(|b| (q_samples as u32 - b.retained) as u64).sum();
    let lost_mass = if total_samples > 0.0 { lost as f64 / total_samples } else { 0.0 };

    let occupied: Vec<MultiIndex> = images.iter().flat_map(|b| b.cells.iter().map(|(k, _)| *k)).collect();
    let image = BoxGrid::from_occupied(lattice.clone(), occupied)?;
    if image.is_empty() {
        return Err(Error::AllMassLost);
    }

    let mut count_rows = Vec::new();
    let mut prob_rows = Vec::new();
    let mut row_samples = Vec::new();
    let mut source_boxes = Vec::new();
    let mut p = Vec::new();
    let mut pruned_mass = 0.0;
    for (&i, b) in active.iter().zip(&images) {
        if b.retained == 0 {
            pruned_mass += p_full[i];
            continue;
        }
        let mut row: Vec<(usize, u32)> = b
            .cells
            .iter()
            .map(|(k, c)| (image.index_of(k).expect("image covers every landing cell"), *c))
            .collect();
        row.sort_unstable_by_key(|&(j, _)| j);
        let denom = b.retained as f64;
        prob_rows.push(row.iter().map(|&(j, c)| (j, c as f64 / denom)).collect());
        count_rows.push(row);
        row_samples.push(b.retained);
        source_boxes.push(i);
        p.push(p_full[i]);
    }
    if p.is_empty() {
        return Err(Error::MeasureDegenerate("no box retained any sample".into()));
    }
    let n = image.len();
    let matrix = Csr::from_rows(n, prob_rows)?;
    let counts = Csr::from_rows(n, count_rows)?;
    let p = normalize_weights(p)?;
    let q = matrix.left_mul(&p);
    let mut sys = TransitionSystem {
        matrix,
        p,
        q,
        counts: Some(counts),
        row_samples: Some(row_samples),
        geometry: Some(Geometry { source: grid.clone(), source_boxes, image }),
        samples_per_box: q_samples,
        lost_mass,
        pruned_mass,
    };
    sys.prune_columns()?;
    Ok(sys)
}
