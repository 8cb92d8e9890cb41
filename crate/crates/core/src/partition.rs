//! Coherent pairs from thresholded singular vectors, coherence ratios, and an
//! exhaustive oracle for the binary problem.
//!
//! Thresholds follow `X1 = {x > b}`, `Y1 = {y > c}`. A threshold of `+∞`
//! selects nothing and `−∞` selects everything.
//!
//! Each `b` is scored by `min(ρ̃(X1,Y1), ρ̃(X2,Y2))`. Scoring `ρ̃(X1,Y1)`
//! alone is maximised by `X1` = all boxes but one.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boxgrid::BoxSet;
use crate::error::{Error, Result};
use crate::flowfield::{advect_batch, FlowMapSpec, VelocityField};
use crate::ulam::{Geometry, TransitionSystem};

/// `ρ̃(X, Y) = Σ_{i∈X, j∈Y} p_i P_ij / μ(X)`.
pub fn coherence_ratio_discrete(ts: &TransitionSystem, x_set: &BoxSet, y_set: &BoxSet) -> Result<f64> {
    check_universe(x_set, ts.m())?;
    check_universe(y_set, ts.n())?;
    let mu = x_set.mass(&ts.p);
    if !(mu > 0.0) {
        return Err(Error::ZeroMassSet);
    }
    let in_y = y_set.mask();
    let inner: f64 = x_set
        .indices()
        .iter()
        .map(|&i| ts.p[i] * ts.matrix.row(i).filter(|&(j, _)| in_y[j]).map(|(_, v)| v).sum::<f64>())
        .sum();
    Ok(inner / mu)
}

fn check_universe(set: &BoxSet, len: usize) -> Result<()> {
    if set.universe() != len {
        return Err(Error::LengthMismatch { expected: len, got: set.universe() });
    }
    Ok(())
}

/// Threshold `c` making `ν({y > c})` closest to `μ({x > b})`; ties go to the
/// smaller `c`.
pub fn eta(b: f64, x: &[f64], y: &[f64], p: &[f64], q: &[f64]) -> f64 {
    let target: f64 = x.iter().zip(p).filter(|(v, _)| **v > b).map(|(_, w)| w).sum();
    // `c = max y` selects nothing, like the `+∞` sentinel that stands for it.
    let top = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut cands: Vec<f64> = y.iter().copied().filter(|&v| v < top).collect();
    cands.push(f64::INFINITY);
    cands.push(f64::NEG_INFINITY);
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let mut best = (f64::INFINITY, f64::INFINITY);
    for &c in &cands {
        let nu: f64 = y.iter().zip(q).filter(|(v, _)| **v > c).map(|(_, w)| w).sum();
        let gap = (target - nu).abs();
        // Ascending scan: strict improvement keeps the smaller c on ties.
        if gap < best.0 {
            best = (gap, c);
        }
    }
    best.1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchEnd {
    Positive,
    Negative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherentPartition {
    pub x1: BoxSet,
    pub x2: BoxSet,
    pub y1: BoxSet,
    pub y2: BoxSet,
    pub b_star: f64,
    pub c_star: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub mass_x1: f64,
    pub mass_y1: f64,
    pub search_end: SearchEnd,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PartitionOptions {
    /// Restrict `μ(X1)` to `[½ − δ, ½ + δ]`.
    #[serde(default)]
    pub window: Option<f64>,
}

/// Candidates scoring within this of the sweep's best are rescored exactly.
const RESCORE_GAP: f64 = 1e-9;
const RESCORE_MAX: usize = 64;

/// Values grouped by equality, in sweep order.
struct Groups {
    values: Vec<f64>,
    members: Vec<Vec<usize>>,
    rank: Vec<usize>,
}

fn groups(v: &[f64], descending: bool) -> Groups {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| {
        let o = v[a].total_cmp(&v[b]);
        if descending {
            o.reverse()
        } else {
            o
        }
    });
    let mut values: Vec<f64> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut rank = vec![0; v.len()];
    for i in order {
        if values.last() != Some(&v[i]) {
            values.push(v[i]);
            members.push(Vec::new());
        }
        members.last_mut().unwrap().push(i);
        rank[i] = values.len() - 1;
    }
    Groups { values, members, rank }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    /// Leading x-groups in the swept set.
    k: usize,
    /// Leading y-groups in the swept set.
    l: usize,
    score: f64,
    mass_x1: f64,
    b: f64,
}

struct Sweep {
    end: SearchEnd,
    xg: Groups,
    yg: Groups,
    candidates: Vec<Candidate>,
}

impl Sweep {
    fn run(ts: &TransitionSystem, x: &[f64], y: &[f64], end: SearchEnd, opts: &PartitionOptions) -> Self {
        let desc = end == SearchEnd::Positive;
        let xg = groups(x, desc);
        let yg = groups(y, desc);
        let csc = ts.matrix.transpose();
        let total: f64 = ts.p.iter().sum();
        let nu_prefix: Vec<f64> = std::iter::once(0.0)
            .chain(yg.members.iter().scan(0.0, |acc, g| {
                *acc += g.iter().map(|&j| ts.q[j]).sum::<f64>();
                Some(*acc)
            }))
            .collect();
        let ylen = yg.values.len();
        let (mut mu, mut inner, mut l) = (0.0, 0.0, 0usize);
        let mut candidates = Vec::new();
        for k in 1..xg.values.len() {
            for &i in &xg.members[k - 1] {
                mu += ts.p[i];
                inner += ts.p[i] * ts.matrix.row(i).filter(|&(j, _)| yg.rank[j] < l).map(|(_, v)| v).sum::<f64>();
            }
            // The optimal l is nondecreasing in the swept mass.
            loop {
                if l == ylen {
                    break;
                }
                let (now, next) = ((mu - nu_prefix[l]).abs(), (mu - nu_prefix[l + 1]).abs());
                let advance = if desc { next <= now } else { next < now };
                if !advance {
                    break;
                }
                for &j in &yg.members[l] {
                    inner += csc.row(j).filter(|&(i, _)| xg.rank[i] < k).map(|(i, v)| ts.p[i] * v).sum::<f64>();
                }
                l += 1;
            }
            let nu = nu_prefix[l];
            let rho_s = inner / mu;
            let rho_c = if total - mu > 0.0 { (total - mu - nu + inner) / (total - mu) } else { 0.0 };
            let mass_x1 = if desc { mu } else { total - mu };
            if let Some(d) = opts.window {
                if (mass_x1 - 0.5).abs() > d {
                    continue;
                }
            }
            let b = if desc { xg.values[k] } else { xg.values[k - 1] };
            candidates.push(Candidate { k, l, score: rho_s.min(rho_c), mass_x1, b });
        }
        Self { end, xg, yg, candidates }
    }

    fn sets(&self, c: &Candidate, m: usize, n: usize) -> (BoxSet, BoxSet, f64) {
        let mut xs = vec![false; m];
        for g in &self.xg.members[..c.k] {
            for &i in g {
                xs[i] = true;
            }
        }
        let mut ys = vec![false; n];
        for g in &self.yg.members[..c.l] {
            for &j in g {
                ys[j] = true;
            }
        }
        let ylen = self.yg.values.len();
        let c_thr = match self.end {
            SearchEnd::Positive if c.l == 0 => f64::INFINITY,
            SearchEnd::Positive if c.l == ylen => f64::NEG_INFINITY,
            SearchEnd::Positive => self.yg.values[c.l],
            SearchEnd::Negative if c.l == 0 => f64::NEG_INFINITY,
            SearchEnd::Negative if c.l == ylen => f64::INFINITY,
            SearchEnd::Negative => self.yg.values[c.l - 1],
        };
        if self.end == SearchEnd::Negative {
            xs.iter_mut().for_each(|v| *v = !*v);
            ys.iter_mut().for_each(|v| *v = !*v);
        }
        (BoxSet::from_mask(&xs), BoxSet::from_mask(&ys), c_thr)
    }
}

/// Order for choosing among scored candidates: higher score, then `μ(X1)`
/// closer to ½, then smaller `b`.
fn preference(a: (f64, f64, f64), b: (f64, f64, f64)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then((a.1 - 0.5).abs().total_cmp(&(b.1 - 0.5).abs()))
        .then(a.2.total_cmp(&b.2))
}

fn best_of(ts: &TransitionSystem, sweep: &Sweep) -> Result<Option<CoherentPartition>> {
    let Some(top) = sweep.candidates.iter().map(|c| c.score).max_by(f64::total_cmp) else {
        return Ok(None);
    };
    let mut near: Vec<&Candidate> = sweep.candidates.iter().filter(|c| c.score >= top - RESCORE_GAP).collect();
    near.sort_by(|a, b| preference((a.score, a.mass_x1, a.b), (b.score, b.mass_x1, b.b)));
    near.truncate(RESCORE_MAX);
    let mut best: Option<CoherentPartition> = None;
    for c in near {
        let (x1, y1, c_star) = sweep.sets(c, ts.m(), ts.n());
        let (x2, y2) = (x1.complement(), y1.complement());
        let rho1 = coherence_ratio_discrete(ts, &x1, &y1)?;
        let rho2 = coherence_ratio_discrete(ts, &x2, &y2)?;
        let cand = CoherentPartition {
            mass_x1: x1.mass(&ts.p),
            mass_y1: y1.mass(&ts.q),
            x1,
            x2,
            y1,
            y2,
            b_star: c.b,
            c_star,
            rho1,
            rho2,
            search_end: sweep.end,
        };
        let better = match &best {
            None => true,
            Some(cur) => preference(score_key(&cand), score_key(cur)) == Ordering::Less,
        };
        if better {
            best = Some(cand);
        }
    }
    Ok(best)
}

fn score_key(c: &CoherentPartition) -> (f64, f64, f64) {
    (c.rho1.min(c.rho2), c.mass_x1, c.b_star)
}

/// Threshold `x` and `y` into a coherent pair.
///
/// Sweeps `X1 = {x > b}` over the distinct entries of `x` with `c = η(b)`,
/// once from each end of the vectors, and keeps the better end (positive on
/// ties). The reported ratios are recomputed from the final sets.
pub fn extract_coherent_pair(
    ts: &TransitionSystem,
    x: &[f64],
    y: &[f64],
    opts: &PartitionOptions,
) -> Result<CoherentPartition> {
    if x.len() != ts.m() {
        return Err(Error::LengthMismatch { expected: ts.m(), got: x.len() });
    }
    if y.len() != ts.n() {
        return Err(Error::LengthMismatch { expected: ts.n(), got: y.len() });
    }
    if x.iter().all(|v| *v == x[0]) {
        return Err(Error::DegenerateVector);
    }
    let (pos, neg) = rayon::join(
        || Sweep::run(ts, x, y, SearchEnd::Positive, opts),
        || Sweep::run(ts, x, y, SearchEnd::Negative, opts),
    );
    let pos = best_of(ts, &pos)?;
    let neg = best_of(ts, &neg)?;
    match (pos, neg) {
        (Some(a), Some(b)) => {
            let (sa, sb) = (a.rho1.min(a.rho2), b.rho1.min(b.rho2));
            Ok(if sb > sa { b } else { a })
        }
        (Some(a), None) | (None, Some(a)) => Ok(a),
        (None, None) => Err(Error::NoBalancedSplit),
    }
}

/// Fraction of fresh samples from `x_set` whose images land in `y_set`.
///
/// Samples are drawn box by box in proportion to `p` and uniformly inside each
/// box. Samples that leave the domain count as misses.
pub fn coherence_ratio_pointwise<F: VelocityField<D>, const D: usize>(
    flow: &FlowMapSpec<'_, F>,
    geometry: &Geometry,
    p: &[f64],
    x_set: &BoxSet,
    y_set: &BoxSet,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    const CHUNK: usize = 4096;
    flow.validate()?;
    check_universe(x_set, geometry.source_boxes.len())?;
    check_universe(y_set, geometry.image.len())?;
    if p.len() != geometry.source_boxes.len() {
        return Err(Error::LengthMismatch { expected: geometry.source_boxes.len(), got: p.len() });
    }
    if x_set.is_empty() || !(x_set.mass(p) > 0.0) {
        return Err(Error::ZeroMassSet);
    }
    let rows = x_set.indices();
    let cumulative: Vec<f64> = rows
        .iter()
        .scan(0.0, |acc, &i| {
            *acc += p[i];
            Some(*acc)
        })
        .collect();
    let total = *cumulative.last().unwrap();
    let in_y = y_set.mask();
    let lattice = &geometry.image.lattice;
    let chunks = samples.div_ceil(CHUNK);
    let (hits, kept): (usize, usize) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(samples - c * CHUNK);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut pts: Vec<[f64; D]> = Vec::with_capacity(len);
            for _ in 0..len {
                let u = rng.gen::<f64>() * total;
                let r = cumulative.partition_point(|&v| v <= u).min(rows.len() - 1);
                let (lo, hi) = geometry.source.bounds(geometry.source_boxes[rows[r]]);
                pts.push(std::array::from_fn(|a| lo[a] + (hi[a] - lo[a]) * rng.gen::<f64>()));
            }
            let exits = advect_batch(flow, &mut pts);
            let mut hits = 0;
            let mut kept = 0;
            for (z, e) in pts.iter().zip(&exits) {
                if e.is_some() {
                    continue;
                }
                kept += 1;
                let landed = lattice.multi_index(z).and_then(|k| geometry.image.index_of(&k));
                if landed.is_some_and(|j| in_y[j]) {
                    hits += 1;
                }
            }
            (hits, kept)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if kept == 0 {
        return Err(Error::AllMassLost);
    }
    Ok(hits as f64 / samples as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceTolerance {
    pub epsilon: f64,
}

impl BalanceTolerance {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::Config(format!("balance tolerance must be nonnegative, got {epsilon}")));
        }
        Ok(Self { epsilon })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryOptimum {
    /// `⟨xL, y⟩_q`.
    pub objective: f64,
    /// Entries `±1`, with `x[0] = +1`.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub rho1: f64,
    pub rho2: f64,
    pub mass_x1: f64,
    pub mass_y1: f64,
}

/// Largest side accepted by [`brute_force_partition`].
pub const BRUTE_FORCE_LIMIT: usize = 22;

/// Maximise `⟨xL, y⟩_q` over sign vectors with `|⟨x,1⟩_p|, |⟨y,1⟩_q| ≤ ε`
/// by enumeration.
pub fn brute_force_partition(ts: &TransitionSystem, eps: BalanceTolerance) -> Result<BinaryOptimum> {
    let (m, n) = (ts.m(), ts.n());
    if m > BRUTE_FORCE_LIMIT || n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge { m, n, limit: BRUTE_FORCE_LIMIT });
    }
    let sign = |bits: u32, k: usize| if bits >> k & 1 == 1 { -1.0 } else { 1.0 };
    let ys: Vec<u32> = (0..1u32 << n)
        .filter(|&bits| (0..n).map(|j| sign(bits, j) * ts.q[j]).sum::<f64>().abs() <= eps.epsilon)
        .collect();
    if ys.is_empty() {
        return Err(Error::NoBalancedSplit);
    }
    // x and −x give the same objective with −y; fix x[0] = +1.
    let xs = (0..1u32 << (m - 1)).map(|b| b << 1);
    let mut best: Option<(f64, u32, u32)> = None;
    let mut g = vec![0.0; n];
    for xb in xs {
        if (0..m).map(|i| sign(xb, i) * ts.p[i]).sum::<f64>().abs() > eps.epsilon {
            continue;
        }
        g.iter_mut().for_each(|v| *v = 0.0);
        for (i, j, v) in ts.matrix.triplets() {
            g[j] += sign(xb, i) * ts.p[i] * v;
        }
        for &yb in &ys {
            let obj: f64 = (0..n).map(|j| sign(yb, j) * g[j]).sum();
            if best.is_none_or(|(b, _, _)| obj > b) {
                best = Some((obj, xb, yb));
            }
        }
    }
    let (objective, xb, yb) = best.ok_or(Error::NoBalancedSplit)?;
    let x: Vec<f64> = (0..m).map(|i| sign(xb, i)).collect();
    let y: Vec<f64> = (0..n).map(|j| sign(yb, j)).collect();
    let x1 = BoxSet::from_mask(&x.iter().map(|v| *v > 0.0).collect::<Vec<_>>());
    let y1 = BoxSet::from_mask(&y.iter().map(|v| *v > 0.0).collect::<Vec<_>>());
    let rho = |a: &BoxSet, b: &BoxSet| coherence_ratio_discrete(ts, a, b).unwrap_or(0.0);
    Ok(BinaryOptimum {
        objective,
        rho1: rho(&x1, &y1),
        rho2: rho(&x1.complement(), &y1.complement()),
        mass_x1: x1.mass(&ts.p),
        mass_y1: y1.mass(&ts.q),
        x,
        y,
    })
}
