//! Box partitions of rectangular 2D/3D domains.
//!
//! A [`Lattice`] fixes the box geometry (origin, edge lengths, periodic axes).
//! A [`BoxGrid`] is a lattice plus the set of boxes that belong to it: either
//! the full rectangle (the initial domain X) or a sparse list of occupied
//! multi-indices (the image covering Y).
//!
//! Boxes are half-open `[lo, hi)` on every axis and dense indices run with
//! axis 0 fastest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

/// Integer lattice coordinates of a box. Unused trailing axes are zero.
pub type MultiIndex = [i64; MAX_DIM];

const COMMENSURATE_RTOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub dim: usize,
    pub origin: Vec<f64>,
    pub box_size: Vec<f64>,
    pub periodic: Vec<bool>,
    /// Boxes per period along each periodic axis, `None` otherwise.
    pub period_counts: Vec<Option<i64>>,
}

impl Lattice {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > MAX_DIM {
            return Err(Error::InvalidGrid(format!("dimension {} not in 1..={MAX_DIM}", self.dim)));
        }
        for v in [self.origin.len(), self.box_size.len(), self.periodic.len(), self.period_counts.len()] {
            if v != self.dim {
                return Err(Error::LengthMismatch { expected: self.dim, got: v });
            }
        }
        for (axis, &h) in self.box_size.iter().enumerate() {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidGrid(format!("box size {h} on axis {axis} must be positive")));
            }
            match (self.periodic[axis], self.period_counts[axis]) {
                (true, Some(c)) if c > 0 => {}
                (false, None) => {}
                _ => return Err(Error::InvalidGrid(format!("period of axis {axis} inconsistent"))),
            }
        }
        Ok(())
    }

    /// Lower edge of lattice cell `k` on `axis`.
    #[inline]
    pub fn lower(&self, axis: usize, k: i64) -> f64 {
        self.origin[axis] + k as f64 * self.box_size[axis]
    }

    pub fn period(&self, axis: usize) -> Option<f64> {
        self.period_counts[axis].map(|c| c as f64 * self.box_size[axis])
    }

    /// Wrap periodic coordinates into the fundamental domain `[origin, origin + period)`.
    pub fn wrap(&self, z: &mut [f64]) {
        for axis in 0..self.dim {
            if let Some(period) = self.period(axis) {
                let o = self.origin[axis];
                let mut w = (z[axis] - o).rem_euclid(period);
                if w >= period {
                    w = 0.0;
                }
                z[axis] = o + w;
            }
        }
    }

    /// Lattice cell containing `z`, after wrapping periodic axes. `None` for
    /// non-finite input.
    pub fn multi_index(&self, z: &[f64]) -> Option<MultiIndex> {
        let mut key = [0i64; MAX_DIM];
        for axis in 0..self.dim {
            let mut c = z[axis];
            if !c.is_finite() {
                return None;
            }
            if let Some(period) = self.period(axis) {
                let o = self.origin[axis];
                let mut w = (c - o).rem_euclid(period);
                if w >= period {
                    w = 0.0;
                }
                c = o + w;
            }
            let s = (c - self.origin[axis]) / self.box_size[axis];
            let mut k = s.floor() as i64;
            // Fix up rounding so membership agrees with `lower` exactly.
            if c < self.lower(axis, k) {
                k -= 1;
            } else if c >= self.lower(axis, k + 1) {
                k += 1;
            }
            if let Some(pc) = self.period_counts[axis] {
                k = k.rem_euclid(pc);
            }
            key[axis] = k;
        }
        Some(key)
    }

    pub fn box_volume(&self) -> f64 {
        self.box_size.iter().product()
    }

    pub fn center_of(&self, key: &MultiIndex) -> Vec<f64> {
        (0..self.dim).map(|a| self.lower(a, key[a]) + 0.5 * self.box_size[a]).collect()
    }

    pub fn bounds_of(&self, key: &MultiIndex) -> (Vec<f64>, Vec<f64>) {
        let lo = (0..self.dim).map(|a| self.lower(a, key[a])).collect();
        let hi = (0..self.dim).map(|a| self.lower(a, key[a] + 1)).collect();
        (lo, hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Full rectangle of `counts[a]` boxes per axis starting at the lattice origin.
    Full { counts: Vec<usize> },
    /// Explicit occupied cells, sorted with axis 0 fastest.
    Sparse { occupied: Vec<MultiIndex> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxGrid {
    pub lattice: Lattice,
    pub layout: Layout,
}

/// Sort key ordering multi-indices with axis 0 fastest.
#[inline]
pub(crate) fn order_key(k: &MultiIndex) -> [i64; MAX_DIM] {
    [k[2], k[1], k[0]]
}

impl BoxGrid {
    /// Full grid over `[lo, hi)` with the given box edge lengths.
    pub fn build(lo: &[f64], hi: &[f64], box_size: &[f64], periodic: &[bool]) -> Result<Self> {
        let dim = lo.len();
        if hi.len() != dim || box_size.len() != dim || periodic.len() != dim {
            return Err(Error::LengthMismatch { expected: dim, got: hi.len().min(box_size.len()).min(periodic.len()) });
        }
        let mut counts = Vec::with_capacity(dim);
        for axis in 0..dim {
            let extent = hi[axis] - lo[axis];
            if !(extent > 0.0) || !(box_size[axis] > 0.0) {
                return Err(Error::InvalidGrid(format!("axis {axis}: empty extent or box size")));
            }
            let ratio = extent / box_size[axis];
            let rounded = ratio.round();
            if rounded < 1.0 || (ratio - rounded).abs() > COMMENSURATE_RTOL * rounded.max(1.0) {
                return Err(Error::NonCommensurate { axis, extent, box_size: box_size[axis] });
            }
            counts.push(rounded as usize);
        }
        Self::from_counts(lo, hi, &counts, periodic)
    }

    /// Full grid over `[lo, hi)` with `counts[a]` boxes along each axis.
    pub fn from_counts(lo: &[f64], hi: &[f64], counts: &[usize], periodic: &[bool]) -> Result<Self> {
        let dim = lo.len();
        if hi.len() != dim || counts.len() != dim || periodic.len() != dim {
            return Err(Error::LengthMismatch { expected: dim, got: counts.len() });
        }
        if counts.contains(&0) {
            return Err(Error::InvalidGrid("zero boxes along an axis".into()));
        }
        let lattice = Lattice {
            dim,
            origin: lo.to_vec(),
            box_size: (0..dim).map(|a| (hi[a] - lo[a]) / counts[a] as f64).collect(),
            periodic: periodic.to_vec(),
            period_counts: (0..dim).map(|a| periodic[a].then_some(counts[a] as i64)).collect(),
        };
        lattice.validate()?;
        Ok(Self { lattice, layout: Layout::Full { counts: counts.to_vec() } })
    }

    /// Sparse grid consisting of exactly the given cells (duplicates removed).
    pub fn from_occupied(lattice: Lattice, mut occupied: Vec<MultiIndex>) -> Result<Self> {
        lattice.validate()?;
        for k in occupied.iter_mut() {
            for a in 0..lattice.dim {
                if let Some(pc) = lattice.period_counts[a] {
                    k[a] = k[a].rem_euclid(pc);
                }
            }
            for v in k.iter_mut().skip(lattice.dim) {
                *v = 0;
            }
        }
        occupied.sort_unstable_by_key(order_key);
        occupied.dedup();
        Ok(Self { lattice, layout: Layout::Sparse { occupied } })
    }

    /// Sparse grid of the lattice cells holding at least one of `points`,
    /// anchored to `lattice`.
    pub fn cover_points<'a, I>(points: I, lattice: &Lattice) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let occupied = points.into_iter().filter_map(|z| lattice.multi_index(z)).collect();
        Self::from_occupied(lattice.clone(), occupied)
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim
    }

    pub fn len(&self) -> usize {
        match &self.layout {
            Layout::Full { counts } => counts.iter().product(),
            Layout::Sparse { occupied } => occupied.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Dense index of the cell with lattice coordinates `key`, if it belongs to the grid.
    pub fn index_of(&self, key: &MultiIndex) -> Option<usize> {
        match &self.layout {
            Layout::Full { counts } => {
                let mut idx = 0usize;
                let mut stride = 1usize;
                for (a, &c) in counts.iter().enumerate() {
                    let k = key[a];
                    if k < 0 || k as usize >= c {
                        return None;
                    }
                    idx += k as usize * stride;
                    stride *= c;
                }
                Some(idx)
            }
            Layout::Sparse { occupied } => {
                let target = order_key(key);
                occupied.binary_search_by_key(&target, order_key).ok()
            }
        }
    }

    pub fn multi_index_of(&self, index: usize) -> MultiIndex {
        match &self.layout {
            Layout::Full { counts } => {
                let mut key = [0i64; MAX_DIM];
                let mut rest = index;
                for (a, &c) in counts.iter().enumerate() {
                    key[a] = (rest % c) as i64;
                    rest /= c;
                }
                key
            }
            Layout::Sparse { occupied } => occupied[index],
        }
    }

    /// Dense index of the box containing `z`, or `None` when `z` lies outside.
    pub fn locate(&self, z: &[f64]) -> Option<usize> {
        self.lattice.multi_index(z).and_then(|k| self.index_of(&k))
    }

    pub fn center(&self, index: usize) -> Vec<f64> {
        self.lattice.center_of(&self.multi_index_of(index))
    }

    pub fn bounds(&self, index: usize) -> (Vec<f64>, Vec<f64>) {
        self.lattice.bounds_of(&self.multi_index_of(index))
    }

    pub fn restrict(&self, keep: &[usize]) -> Result<Self> {
        let occupied = keep.iter().map(|&i| self.multi_index_of(i)).collect();
        Self::from_occupied(self.lattice.clone(), occupied)
    }
}

/// A union of boxes of one grid, held as sorted dense indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxSet {
    universe: usize,
    indices: Vec<usize>,
}

impl BoxSet {
    pub fn new(universe: usize, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&last) = indices.last() {
            if last >= universe {
                return Err(Error::InvalidGrid(format!("box index {last} outside 0..{universe}")));
            }
        }
        Ok(Self { universe, indices })
    }

    pub fn from_mask(mask: &[bool]) -> Self {
        let indices = mask.iter().enumerate().filter_map(|(i, &b)| b.then_some(i)).collect();
        Self { universe: mask.len(), indices }
    }

    pub fn empty(universe: usize) -> Self {
        Self { universe, indices: Vec::new() }
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.universe];
        for &i in &self.indices {
            m[i] = true;
        }
        m
    }

    pub fn complement(&self) -> Self {
        let mask = self.mask();
        Self::from_mask(&mask.iter().map(|b| !b).collect::<Vec<_>>())
    }

    /// Total weight of the set under `weights`.
    pub fn mass(&self, weights: &[f64]) -> f64 {
        self.indices.iter().map(|&i| weights[i]).sum()
    }
}
