//! Second singular triplet of `A = Π_p^{1/2} P Π_q^{-1/2}`.
//!
//! Vectors are row vectors: `A` maps X-vectors to Y-vectors by `v ↦ vA`.
//! The leading pair `(√p, √q)` with `σ₁ = 1` is known in closed form and is
//! projected out exactly; the remaining top eigenpair of `AAᵀ` is found by
//! Lanczos with full reorthogonalisation and explicit restarts.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ulam::TransitionSystem;

/// Tolerance on the leading-pair identities.
pub const LEADING_PAIR_TOL: f64 = 1e-10;

const KRYLOV_MAX: usize = 160;
const CHECK_EVERY: usize = 8;
const START_SEED: u64 = 0x5eed_2c0d;

/// Matrix-free view of `A` over a transition system.
#[derive(Clone, Debug)]
pub struct WeightedOperator<'a> {
    ts: &'a TransitionSystem,
    sqrt_p: Vec<f64>,
    sqrt_q: Vec<f64>,
    inv_sqrt_q: Vec<f64>,
}

impl<'a> WeightedOperator<'a> {
    pub fn new(ts: &'a TransitionSystem) -> Result<Self> {
        let (m, n) = (ts.m(), ts.n());
        if ts.p.len() != m {
            return Err(Error::LengthMismatch { expected: m, got: ts.p.len() });
        }
        if ts.q.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: ts.q.len() });
        }
        if let Some(v) = ts.p.iter().chain(&ts.q).find(|v| !(**v > 0.0)) {
            return Err(Error::MeasureDegenerate(format!("nonpositive weight {v}")));
        }
        let sqrt_q: Vec<f64> = ts.q.iter().map(|v| v.sqrt()).collect();
        Ok(Self {
            ts,
            sqrt_p: ts.p.iter().map(|v| v.sqrt()).collect(),
            inv_sqrt_q: sqrt_q.iter().map(|v| 1.0 / v).collect(),
            sqrt_q,
        })
    }

    pub fn system(&self) -> &TransitionSystem {
        self.ts
    }

    pub fn m(&self) -> usize {
        self.ts.m()
    }

    pub fn n(&self) -> usize {
        self.ts.n()
    }

    pub fn sqrt_p(&self) -> &[f64] {
        &self.sqrt_p
    }

    pub fn sqrt_q(&self) -> &[f64] {
        &self.sqrt_q
    }

    /// `vA`, a vector on Y.
    pub fn apply_a(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.m() {
            return Err(Error::LengthMismatch { expected: self.m(), got: v.len() });
        }
        Ok(self.apply_a_unchecked(v))
    }

    /// `wAᵀ`, a vector on X.
    pub fn apply_at(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.n() {
            return Err(Error::LengthMismatch { expected: self.n(), got: w.len() });
        }
        Ok(self.apply_at_unchecked(w))
    }

    fn apply_a_unchecked(&self, v: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = v.iter().zip(&self.sqrt_p).map(|(a, b)| a * b).collect();
        let mut out = self.ts.matrix.left_mul(&scaled);
        for (o, s) in out.iter_mut().zip(&self.inv_sqrt_q) {
            *o *= s;
        }
        out
    }

    fn apply_at_unchecked(&self, w: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = w.iter().zip(&self.inv_sqrt_q).map(|(a, b)| a * b).collect();
        let mut out = self.ts.matrix.right_mul(&scaled);
        for (o, s) in out.iter_mut().zip(&self.sqrt_p) {
            *o *= s;
        }
        out
    }

    fn normal(&self, v: &[f64]) -> Vec<f64> {
        self.apply_at_unchecked(&self.apply_a_unchecked(v))
    }

    /// Dense copy of `A`, for oracles on small systems.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.m(), self.n());
        for (i, j, v) in self.ts.matrix.triplets() {
            a[(i, j)] = self.sqrt_p[i] * v * self.inv_sqrt_q[j];
        }
        a
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 10_000 }
    }
}

/// Second singular pair in `p`/`q`-weighted form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceVectors {
    pub sigma2: f64,
    /// On X-boxes, `‖x‖_p = 1`, `⟨x,1⟩_p = 0`.
    pub x: Vec<f64>,
    /// On Y-boxes, `‖y‖_q = 1`, `⟨y,1⟩_q = 0`; all zeros when `σ₂ = 0` and n = 1.
    pub y: Vec<f64>,
    /// `‖x̂AAᵀ − σ₂²x̂‖₂` of the unweighted vector.
    pub residual: f64,
    /// Matrix-vector products with `AAᵀ`.
    pub iterations: usize,
    /// Connected components of the support graph of `P`.
    pub components: usize,
    /// The next Ritz value is within tolerance of `σ₂`, so `x` and `y` are not unique.
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeadingPairReport {
    /// `‖√p A − √q‖₂`
    pub forward: f64,
    /// `‖√q Aᵀ − √p‖₂`
    pub adjoint: f64,
    pub passed: bool,
}

/// Check that `(√p, √q)` is a singular pair of `A` with value one.
pub fn check_leading_pair(op: &WeightedOperator<'_>) -> LeadingPairReport {
    let fwd = op.apply_a_unchecked(&op.sqrt_p);
    let adj = op.apply_at_unchecked(&op.sqrt_q);
    let forward = dist(&fwd, &op.sqrt_q);
    let adjoint = dist(&adj, &op.sqrt_p);
    LeadingPairReport { forward, adjoint, passed: forward <= LEADING_PAIR_TOL && adjoint <= LEADING_PAIR_TOL }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Orthogonalise `w` against unit vectors `basis`, twice.
fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = dot(w, b);
            axpy(w, -c, b);
        }
    }
}

/// Orthogonalise against both sets, repeating while a pass still removes
/// most of the vector. Returns the remaining norm.
fn orthogonalize_all(w: &mut [f64], locked: &[Vec<f64>], basis: &[Vec<f64>]) -> f64 {
    let mut before = norm(w);
    for _ in 0..4 {
        orthogonalize(w, locked);
        orthogonalize(w, basis);
        let after = norm(w);
        if after > 0.5 * before {
            return after;
        }
        before = after;
    }
    norm(w)
}

/// Bipartite components of the support of `P`: X-box `i` is node `i`,
/// Y-box `j` is node `m + j`. Returns the component label of each node.
fn support_components(ts: &TransitionSystem) -> (Vec<usize>, usize) {
    let (m, n) = (ts.m(), ts.n());
    let mut parent: Vec<usize> = (0..m + n).collect();
    fn find(parent: &mut [usize], mut a: usize) -> usize {
        while parent[a] != a {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        a
    }
    for (i, j, _) in ts.matrix.triplets() {
        let (ra, rb) = (find(&mut parent, i), find(&mut parent, m + j));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut label = vec![usize::MAX; m + n];
    let mut next = 0;
    let mut roots = vec![usize::MAX; m + n];
    for a in 0..m + n {
        let r = find(&mut parent, a);
        if roots[r] == usize::MAX {
            roots[r] = next;
            next += 1;
        }
        label[a] = roots[r];
    }
    (label, next)
}

struct Eigenpair {
    value: f64,
    vector: Vec<f64>,
    residual: f64,
    next_value: Option<f64>,
    matvecs: usize,
}

/// Top eigenpair of the symmetric operator `apply` restricted to the
/// orthogonal complement of the unit vectors `locked`.
fn lanczos_top(
    dim: usize,
    apply: impl Fn(&[f64]) -> Vec<f64>,
    locked: &[Vec<f64>],
    opts: &SolverOptions,
) -> Result<Eigenpair> {
    let free = dim - locked.len();
    let kmax = free.min(KRYLOV_MAX);
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    let mut start: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut matvecs = 0;
    let mut last_residual = f64::INFINITY;

    loop {
        orthogonalize(&mut start, locked);
        let s = norm(&start);
        if s == 0.0 {
            return Err(Error::NoConvergence { iterations: matvecs, residual: last_residual });
        }
        start.iter_mut().for_each(|v| *v /= s);

        let mut basis: Vec<Vec<f64>> = vec![start.clone()];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let (s_vec, next) = loop {
            let k = basis.len() - 1;
            let mut w = apply(&basis[k]);
            matvecs += 1;
            let scale = norm(&w);
            let a = dot(&w, &basis[k]);
            alpha.push(a);
            let b = orthogonalize_all(&mut w, locked, &basis);
            let size = alpha.len();
            // The Krylov space is invariant: continue from a fresh direction.
            let breakdown = b <= 1e-12 * scale.max(1e-300) && size < kmax;
            let out_of_budget = matvecs >= opts.max_iter;
            if size == kmax || out_of_budget || (!breakdown && size.is_multiple_of(CHECK_EVERY)) {
                let (_, s_vec, next) = tridiagonal_top(&alpha, &beta);
                let estimate = b * s_vec[size - 1].abs();
                if estimate <= opts.tol || size == kmax || out_of_budget {
                    break (s_vec, next);
                }
            }
            if breakdown {
                w = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let r = orthogonalize_all(&mut w, locked, &basis);
                if r == 0.0 {
                    let (_, s_vec, next) = tridiagonal_top(&alpha, &beta);
                    break (s_vec, next);
                }
                w.iter_mut().for_each(|v| *v /= r);
                beta.push(0.0);
                basis.push(w);
                continue;
            }
            beta.push(b);
            w.iter_mut().for_each(|v| *v /= b);
            basis.push(w);
        };
        let mut ritz = vec![0.0; dim];
        for (c, v) in s_vec.iter().zip(&basis) {
            axpy(&mut ritz, *c, v);
        }
        orthogonalize(&mut ritz, locked);
        let r = norm(&ritz);
        ritz.iter_mut().for_each(|v| *v /= r);
        let mut res = apply(&ritz);
        matvecs += 1;
        let value = dot(&res, &ritz);
        axpy(&mut res, -value, &ritz);
        orthogonalize(&mut res, locked);
        let residual = norm(&res);
        last_residual = residual;
        if residual <= opts.tol {
            return Ok(Eigenpair { value: value.max(0.0), vector: ritz, residual, next_value: next, matvecs });
        }
        if matvecs >= opts.max_iter {
            return Err(Error::NoConvergence { iterations: matvecs, residual });
        }
        start = ritz;
    }
}

/// Largest eigenvalue of the Lanczos tridiagonal matrix, its eigenvector and
/// the next eigenvalue below it.
fn tridiagonal_top(alpha: &[f64], beta: &[f64]) -> (f64, Vec<f64>, Option<f64>) {
    let k = alpha.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = order[0];
    let vec = eig.eigenvectors.column(top).iter().copied().collect();
    (eig.eigenvalues[top], vec, order.get(1).map(|&i| eig.eigenvalues[i]))
}

/// `σ₂` with weighted singular vectors `x`, `y`.
///
/// If the support graph of `P` is disconnected the computation runs on the
/// component with the most X-boxes (ties to larger mass); entries outside it
/// are zero and the vectors stay normalised in the full `p`/`q` norms.
pub fn second_singular_triplet(ts: &TransitionSystem, opts: &SolverOptions) -> Result<CoherenceVectors> {
    let (m, n) = (ts.m(), ts.n());
    if m < 2 {
        return Err(Error::TooSmall { m, n });
    }
    let (label, count) = support_components(ts);
    if count == 1 {
        let mut cv = solve_connected(ts, opts)?;
        cv.components = 1;
        return Ok(cv);
    }
    let mut x_boxes = vec![0usize; count];
    let mut mass = vec![0.0; count];
    for i in 0..m {
        x_boxes[label[i]] += 1;
        mass[label[i]] += ts.p[i];
    }
    let best = (0..count)
        .max_by(|&a, &b| x_boxes[a].cmp(&x_boxes[b]).then(mass[a].total_cmp(&mass[b])).then(b.cmp(&a)))
        .expect("at least one component");
    log::warn!("support of P has {count} components; solving on the largest ({} of {m} X-boxes)", x_boxes[best]);
    let rows: Vec<usize> = (0..m).filter(|&i| label[i] == best).collect();
    let cols: Vec<usize> = (0..n).filter(|&j| label[m + j] == best).collect();
    if rows.len() < 2 {
        return Err(Error::TooSmall { m: rows.len(), n: cols.len() });
    }
    let mut col_pos = vec![usize::MAX; n];
    for (k, &j) in cols.iter().enumerate() {
        col_pos[j] = k;
    }
    let sub_rows = rows.iter().map(|&i| ts.matrix.row(i).map(|(j, v)| (col_pos[j], v)).collect()).collect();
    let sub = TransitionSystem::new(
        crate::sparse::Csr::from_rows(cols.len(), sub_rows)?,
        rows.iter().map(|&i| ts.p[i]).collect(),
    )?;
    let c = mass[best];
    let scale = 1.0 / c.sqrt();
    let inner = solve_connected(&sub, opts)?;
    let mut x = vec![0.0; m];
    for (k, &i) in rows.iter().enumerate() {
        x[i] = inner.x[k] * scale;
    }
    let mut y = vec![0.0; n];
    for (k, &j) in cols.iter().enumerate() {
        y[j] = inner.y[k] * scale;
    }
    Ok(CoherenceVectors { x, y, components: count, ..inner })
}

fn solve_connected(ts: &TransitionSystem, opts: &SolverOptions) -> Result<CoherenceVectors> {
    let op = WeightedOperator::new(ts)?;
    let m = op.m();
    let report = check_leading_pair(&op);
    if !report.passed {
        log::warn!("leading pair residuals {:.3e} / {:.3e} exceed tolerance", report.forward, report.adjoint);
    }
    let locked = vec![op.sqrt_p.clone()];
    let pair = lanczos_top(m, |v| op.normal(v), &locked, opts)?;
    let sigma2 = pair.value.sqrt();
    let mut xh = pair.vector;
    let lead = xh.iter().enumerate().fold(0, |best, (i, v)| if v.abs() > xh[best].abs() { i } else { best });
    if xh[lead] < 0.0 {
        xh.iter_mut().for_each(|v| *v = -*v);
    }
    let mut yh = op.apply_a_unchecked(&xh);
    let yn = norm(&yh);
    if yn > 1e-300 && sigma2 > 0.0 {
        yh.iter_mut().for_each(|v| *v /= yn);
    } else {
        yh = fallback_unit(&op.sqrt_q);
    }
    // Remove the roundoff component along √q so the constraint holds tightly.
    let c = dot(&yh, &op.sqrt_q);
    axpy(&mut yh, -c, &op.sqrt_q);
    let yn = norm(&yh);
    if yn > 0.0 {
        yh.iter_mut().for_each(|v| *v /= yn);
    }
    let degenerate = pair.next_value.is_some_and(|next| (pair.value - next).abs() <= opts.tol.sqrt() * 1e-2);
    if degenerate {
        log::warn!("second singular value is nearly repeated; vectors are not unique");
    }
    let x = xh.iter().zip(&op.sqrt_p).map(|(a, s)| a / s).collect();
    let y = yh.iter().zip(&op.sqrt_q).map(|(a, s)| a / s).collect();
    Ok(CoherenceVectors { sigma2, x, y, residual: pair.residual, iterations: pair.matvecs, components: 1, degenerate })
}

/// A unit vector orthogonal to the unit vector `u`, or zeros if none exists.
fn fallback_unit(u: &[f64]) -> Vec<f64> {
    let n = u.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let k = u.iter().enumerate().fold(0, |best, (i, v)| if v.abs() < u[best].abs() { i } else { best });
    let mut e = vec![0.0; n];
    e[k] = 1.0;
    let c = dot(&e, u);
    axpy(&mut e, -c, u);
    let s = norm(&e);
    e.iter_mut().for_each(|v| *v /= s);
    e
}

/// Largest singular value of `A` without deflation. Diagnostics only.
pub fn leading_singular_value(ts: &TransitionSystem, opts: &SolverOptions) -> Result<f64> {
    let op = WeightedOperator::new(ts)?;
    let pair = lanczos_top(op.m(), |v| op.normal(v), &[], opts)?;
    Ok(pair.value.sqrt())
}

/// `⟨x,1⟩_p`.
pub fn weighted_mean(x: &[f64], w: &[f64]) -> f64 {
    dot(x, w)
}

/// `‖x‖_w`.
pub fn weighted_norm(x: &[f64], w: &[f64]) -> f64 {
    x.iter().zip(w).map(|(a, b)| b * a * a).sum::<f64>().sqrt()
}

/// `⟨xL, y⟩_q = Σ_ij x_i p_i P_ij y_j`.
pub fn bilinear(ts: &TransitionSystem, x: &[f64], y: &[f64]) -> f64 {
    ts.matrix.triplets().map(|(i, j, v)| x[i] * ts.p[i] * v * y[j]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::Csr;

    pub(crate) fn random_system(rng: &mut ChaCha8Rng, m: usize, n: usize) -> TransitionSystem {
        // A band guarantees every column is hit and the support is connected.
        let rows = (0..m)
            .map(|i| {
                let mut w: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.3) { rng.gen::<f64>() } else { 0.0 }).collect();
                w[i * n / m] += 0.5;
                w[(i * n / m + 1) % n] += 0.5;
                let s: f64 = w.iter().sum();
                w.into_iter().enumerate().filter(|(_, v)| *v > 0.0).map(|(j, v)| (j, v / s)).collect()
            })
            .collect();
        let p = (0..m).map(|_| rng.gen_range(0.1..1.0)).collect();
        TransitionSystem::new(Csr::from_rows(n, rows).unwrap(), p).unwrap()
    }

    fn oracle(ts: &TransitionSystem) -> (f64, Vec<f64>) {
        let op = WeightedOperator::new(ts).unwrap();
        let svd = op.to_dense().svd(true, false);
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let k = order[1];
        let u = svd.u.unwrap();
        (svd.singular_values[k], u.column(k).iter().copied().collect())
    }

    fn eps_system(eps: f64) -> TransitionSystem {
        TransitionSystem::from_dense(&[vec![1.0 - eps, eps], vec![eps, 1.0 - eps]], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn leading_pair_maps_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ts = random_system(&mut rng, 5, 7);
        let op = WeightedOperator::new(&ts).unwrap();
        let r = check_leading_pair(&op);
        assert!(r.passed, "{r:?}");
        assert_eq!(op.apply_a(&[0.0; 5]).unwrap(), vec![0.0; 7]);
        assert!(matches!(op.apply_a(&[0.0; 4]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn corrupted_q_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ts = random_system(&mut rng, 5, 7);
        ts.q[0] *= 1.5;
        let op = WeightedOperator::new(&ts).unwrap();
        assert!(!check_leading_pair(&op).passed);
    }

    #[test]
    fn matvecs_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ts = random_system(&mut rng, 5, 7);
        let op = WeightedOperator::new(&ts).unwrap();
        let a = op.to_dense();
        let v: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dv = a.transpose() * nalgebra::DVector::from_vec(v.clone());
        let dw = &a * nalgebra::DVector::from_vec(w.clone());
        for (x, y) in op.apply_a(&v).unwrap().iter().zip(dv.iter()) {
            assert!((x - y).abs() < 1e-13);
        }
        for (x, y) in op.apply_at(&w).unwrap().iter().zip(dw.iter()) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn two_state_closed_form() {
        let ts = eps_system(0.05);
        let cv = second_singular_triplet(&ts, &SolverOptions::default()).unwrap();
        assert!((cv.sigma2 - 0.9).abs() < 1e-12);
        assert!((cv.x[0] - 1.0).abs() < 1e-12 && (cv.x[1] + 1.0).abs() < 1e-12);
        assert!((cv.y[0] - 1.0).abs() < 1e-12 && (cv.y[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_mixing_has_zero_sigma2() {
        let row = vec![0.2, 0.3, 0.5];
        let ts = TransitionSystem::from_dense(&[row.clone(), row.clone(), row], vec![1.0, 2.0, 3.0]).unwrap();
        let cv = second_singular_triplet(&ts, &SolverOptions::default()).unwrap();
        assert!(cv.sigma2 < 1e-7, "{}", cv.sigma2);
        assert!(weighted_mean(&cv.y, &ts.q).abs() < 1e-12);
        assert!((weighted_norm(&cv.y, &ts.q) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn agrees_with_dense_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let m = rng.gen_range(2..40);
            let n = rng.gen_range(2..40);
            let ts = random_system(&mut rng, m, n);
            let cv = second_singular_triplet(&ts, &SolverOptions::default()).unwrap();
            let (s, u) = oracle(&ts);
            assert!((cv.sigma2 - s).abs() <= 1e-8, "{} vs {s}", cv.sigma2);
            let xh: Vec<f64> = cv.x.iter().zip(&ts.p).map(|(x, p)| x * p.sqrt()).collect();
            assert!(dot(&xh, &u).abs() >= 1.0 - 1e-6);
            assert!(weighted_mean(&cv.x, &ts.p).abs() <= 1e-8);
            assert!(weighted_mean(&cv.y, &ts.q).abs() <= 1e-8);
            assert!((weighted_norm(&cv.x, &ts.p) - 1.0).abs() <= 1e-10);
            assert!((weighted_norm(&cv.y, &ts.q) - 1.0).abs() <= 1e-10);
            assert!((bilinear(&ts, &cv.x, &cv.y) - cv.sigma2).abs() < 1e-9);
        }
    }

    #[test]
    fn wide_staircase_systems_converge() {
        // Few rows against many columns exhaust the Krylov space quickly,
        // which is where orthogonality is easiest to lose.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..12 {
            let m = rng.gen_range(20..45);
            let n = rng.gen_range(150..200);
            let rows = (0..m)
                .map(|i| {
                    let mut w = vec![0.0; n];
                    for v in &mut w[i * n / m..=((i + 1) * n / m).min(n - 1)] {
                        *v = rng.gen_range(0.1..1.0);
                    }
                    for _ in 0..rng.gen_range(0..=6) {
                        w[rng.gen_range(0..n)] += rng.gen::<f64>();
                    }
                    let s: f64 = w.iter().sum();
                    w.into_iter().enumerate().filter(|(_, v)| *v > 0.0).map(|(j, v)| (j, v / s)).collect()
                })
                .collect();
            let p = (0..m).map(|_| rng.gen_range(0.05..1.0)).collect();
            let ts = TransitionSystem::new(Csr::from_rows(n, rows).unwrap(), p).unwrap();
            let cv = second_singular_triplet(&ts, &SolverOptions::default()).unwrap();
            let (s, _) = oracle(&ts);
            assert!((cv.sigma2 - s).abs() <= 1e-8, "m={m} n={n}: {} vs {s}", cv.sigma2);
        }
    }

    #[test]
    fn y_is_proportional_to_x_l() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ts = random_system(&mut rng, 30, 25);
        let cv = second_singular_triplet(&ts, &SolverOptions::default()).unwrap();
        let xl: Vec<f64> = ts.matrix.left_mul(&cv.x.iter().zip(&ts.p).map(|(x, p)| x * p).collect::<Vec<_>>())
            .iter()
            .zip(&ts.q)
            .map(|(v, q)| v / q)
            .collect();
        let s = weighted_norm(&xl, &ts.q);
        for (a, b) in xl.iter().zip(&cv.y) {
            assert!((a / s - b).abs() < 1e-6);
        }
    }

    #[test]
    fn undeflated_leading_value_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ts = random_system(&mut rng, 40, 50);
        let s1 = leading_singular_value(&ts, &SolverOptions::default()).unwrap();
        assert!((s1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn disconnected_support_uses_largest_component() {
        // Boxes {0,1} mix among Y {0,1}; box 2 maps to Y 2 alone.
        let ts = TransitionSystem::from_dense(
            &[vec![0.9, 0.1, 0.0], vec![0.2, 0.8, 0.0], vec![0.0, 0.0, 1.0]],
            vec![1.0, 1.0, 1.0],
        )
        .unwrap();
        let cv = second_singular_triplet(&ts, &SolverOptions::default()).unwrap();
        assert_eq!(cv.components, 2);
        assert_eq!(cv.x[2], 0.0);
        assert_eq!(cv.y[2], 0.0);
        assert!((weighted_norm(&cv.x, &ts.p) - 1.0).abs() < 1e-12);
        assert!(weighted_mean(&cv.x, &ts.p).abs() < 1e-12);
    }

    #[test]
    fn single_box_is_too_small() {
        let ts = TransitionSystem::from_dense(&[vec![0.5, 0.5]], vec![1.0]).unwrap();
        assert!(matches!(second_singular_triplet(&ts, &SolverOptions::default()), Err(Error::TooSmall { .. })));
    }
}
