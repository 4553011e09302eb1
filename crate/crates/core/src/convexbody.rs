//! Convex body averages as zonotopes, exact membership by linear
//! feasibility, and maximum-volume inscribed (John) ellipsoids.

use crate::dyadic::{CubeId, MeasuredTree};
use crate::error::{Error, Result};
use crate::function::LeafFunction;
use crate::linalg::{dot, norm, symmetrize};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// {Σ t_j g_j : |t_j| ≤ 1}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Zonotope {
    d: usize,
    gens: Vec<f64>,
}

impl Zonotope {
    /// Zero generators are dropped.
    pub fn new(d: usize, generators: &[Vec<f64>]) -> Result<Self> {
        let mut gens = Vec::with_capacity(generators.len() * d);
        for g in generators {
            if g.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: g.len(),
                });
            }
            if g.iter().any(|x| *x != 0.0) {
                gens.extend_from_slice(g);
            }
        }
        Ok(Zonotope { d, gens })
    }

    pub fn empty(d: usize) -> Self {
        Zonotope {
            d,
            gens: Vec::new(),
        }
    }

    pub(crate) fn push_scaled(&mut self, g: &[f64], c: f64) {
        if c != 0.0 && g.iter().any(|x| *x != 0.0) {
            self.gens.extend(g.iter().map(|x| x * c));
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.gens.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.gens.is_empty()
    }

    pub fn generator(&self, j: usize) -> &[f64] {
        &self.gens[j * self.d..(j + 1) * self.d]
    }

    pub fn generators(&self) -> impl Iterator<Item = &[f64]> {
        self.gens.chunks_exact(self.d)
    }

    pub fn scaled(&self, c: f64) -> Zonotope {
        if c == 0.0 {
            return Zonotope::empty(self.d);
        }
        Zonotope {
            d: self.d,
            gens: self.gens.iter().map(|x| x * c.abs()).collect(),
        }
    }

    /// Minkowski sum: concatenation of generator lists.
    pub fn minkowski_sum(&self, other: &Zonotope) -> Result<Zonotope> {
        if self.d != other.d {
            return Err(Error::Dimension {
                expected: self.d,
                got: other.d,
            });
        }
        let mut gens = self.gens.clone();
        gens.extend_from_slice(&other.gens);
        Ok(Zonotope { d: self.d, gens })
    }

    /// h(u) = Σ_j |g_j·u|.
    pub fn support(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.d {
            return Err(Error::Dimension {
                expected: self.d,
                got: u.len(),
            });
        }
        if u.iter().all(|x| *x == 0.0) {
            return Err(Error::Invalid("support in the zero direction".into()));
        }
        Ok(self.support_unchecked(u))
    }

    pub(crate) fn support_unchecked(&self, u: &[f64]) -> f64 {
        self.generators().map(|g| dot(g, u).abs()).sum()
    }

    /// Σ_j |g_j|, an upper bound for the radius.
    pub fn radius_bound(&self) -> f64 {
        self.generators().map(norm).sum()
    }

    pub fn member(&self, v: &[f64]) -> Result<Membership> {
        if v.len() != self.d {
            return Err(Error::Dimension {
                expected: self.d,
                got: v.len(),
            });
        }
        Ok(box_feasibility(&self.gens, self.d, v))
    }

    /// Vertex in direction `u`: Σ sign(g_j·u) g_j.
    pub fn vertex(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for g in self.generators() {
            let s = dot(g, u).signum();
            for (o, x) in out.iter_mut().zip(g) {
                *o += s * x;
            }
        }
        out
    }
}

/// ⟨⟨f⟩⟩_Q with generators f(x)μ(x)/μ(Q) over the leaves x of Q.
pub fn convex_body_avg(tree: &MeasuredTree, f: &LeafFunction, q: &CubeId) -> Zonotope {
    let mass = tree.leaf_masses();
    let mq = tree.mu(q);
    let mut z = Zonotope::empty(f.d());
    for x in tree.leaf_range(q) {
        z.push_scaled(f.at(x), mass[x] / mq);
    }
    z
}

/// v ∈ Σ c_i Z_i.
pub fn member_combination(v: &[f64], parts: &[(f64, &Zonotope)]) -> Result<Membership> {
    let d = v.len();
    let mut total = Zonotope::empty(d);
    for (c, z) in parts {
        if z.d != d {
            return Err(Error::Dimension {
                expected: d,
                got: z.d,
            });
        }
        if *c < 0.0 {
            return Err(Error::Invalid("negative Minkowski coefficient".into()));
        }
        for g in z.generators() {
            total.push_scaled(g, *c);
        }
    }
    total.member(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub member: bool,
    /// Euclidean norm of v − Σ t_j g_j at the best coefficients found.
    pub residual: f64,
    pub tolerance: f64,
    /// A direction u with v·u > h(u) when v is not a member.
    pub separating: Option<Vec<f64>>,
}

/// Residual tolerance for membership: 1e-9·(|v| + Σ|g_j|). For bodies of unit
/// size this is 1e-9·(1 + |v|); the body term keeps the test scale-free.
fn membership_tolerance(gens: &[f64], d: usize, v: &[f64]) -> f64 {
    let body: f64 = gens.chunks_exact(d).map(norm).sum();
    1e-9 * (norm(v) + body)
}

/// Phase-one bounded-variable simplex for {t ∈ [−1,1]^m : G t = v}.
///
/// Columns are the generators; one artificial per row absorbs the residual.
/// The basis has at most `d` columns, so it is refactored every iteration.
fn box_feasibility(gens: &[f64], d: usize, v: &[f64]) -> Membership {
    let m = gens.len() / d;
    let tolerance = membership_tolerance(gens, d, v);
    let vnorm = norm(v);
    if vnorm <= tolerance {
        return Membership {
            member: true,
            residual: vnorm,
            tolerance,
            separating: None,
        };
    }
    if m == 0 {
        return Membership {
            member: false,
            residual: vnorm,
            tolerance,
            separating: Some(v.to_vec()),
        };
    }
    let scale = gens.iter().chain(v).fold(0.0f64, |a, x| a.max(x.abs()));
    let g: Vec<f64> = gens.iter().map(|x| x / scale).collect();
    let b: Vec<f64> = v.iter().map(|x| x / scale).collect();
    let col = |j: usize| &g[j * d..(j + 1) * d];

    // status of structural variables: value at lower (−1), upper (+1) or basic
    #[derive(Clone, Copy, PartialEq)]
    enum St {
        Lo,
        Up,
        Basic,
    }
    let mut status = vec![St::Lo; m];
    let mut tval = vec![-1.0; m];
    let mut r0 = b.clone();
    for j in 0..m {
        for i in 0..d {
            r0[i] += col(j)[i];
        }
    }
    let sign: Vec<f64> = r0
        .iter()
        .map(|r| if *r >= 0.0 { 1.0 } else { -1.0 })
        .collect();
    // basis entries: Ok(j) structural, Err(i) artificial for row i
    let mut basis: Vec<std::result::Result<usize, usize>> = (0..d).map(Err).collect();
    let column = |e: std::result::Result<usize, usize>| -> Vec<f64> {
        match e {
            Ok(j) => col(j).to_vec(),
            Err(i) => {
                let mut c = vec![0.0; d];
                c[i] = sign[i];
                c
            }
        }
    };
    let eps = 1e-12;
    let max_iter = 50 * (m + d) + 100;
    let mut degenerate_run = 0usize;
    let mut xb = vec![0.0; d];
    let mut y = vec![0.0; d];
    for _ in 0..max_iter {
        let mut bm = DMatrix::zeros(d, d);
        for (c, e) in basis.iter().enumerate() {
            for (i, x) in column(*e).into_iter().enumerate() {
                bm[(i, c)] = x;
            }
        }
        let lu = bm.clone().lu();
        let mut rhs = DVector::from_column_slice(&b);
        for j in 0..m {
            if status[j] != St::Basic {
                for i in 0..d {
                    rhs[i] -= col(j)[i] * tval[j];
                }
            }
        }
        let Some(sol) = lu.solve(&rhs) else { break };
        xb.copy_from_slice(sol.as_slice());
        for (c, e) in basis.iter().enumerate() {
            if let Ok(j) = e {
                tval[*j] = xb[c];
            }
        }
        let obj: f64 = basis
            .iter()
            .zip(&xb)
            .filter(|(e, _)| e.is_err())
            .map(|(_, x)| *x)
            .sum();
        let cb =
            DVector::from_iterator(d, basis.iter().map(|e| if e.is_err() { 1.0 } else { 0.0 }));
        let Some(dual) = bm.transpose().lu().solve(&cb) else {
            break;
        };
        y.copy_from_slice(dual.as_slice());
        if obj <= 1e-15 {
            break;
        }
        // pricing
        let bland = degenerate_run > 2 * d + 5;
        let mut enter: Option<(usize, f64, f64)> = None;
        for j in 0..m {
            let dj = -dot(&y, col(j));
            let dir = match status[j] {
                St::Lo if dj < -eps => 1.0,
                St::Up if dj > eps => -1.0,
                _ => continue,
            };
            let score = dj.abs();
            if bland {
                enter = Some((j, dir, score));
                break;
            }
            if enter.map_or(true, |(_, _, s)| score > s) {
                enter = Some((j, dir, score));
            }
        }
        let Some((q, dir, _)) = enter else { break };
        let Some(w) = lu.solve(&DVector::from_column_slice(col(q))) else {
            break;
        };
        // entering moves by θ·dir; basic c moves by −θ·dir·w_c
        let mut theta = 2.0;
        let mut leave: Option<(usize, f64)> = None;
        for (c, e) in basis.iter().enumerate() {
            let rate = -dir * w[c];
            let (lo, hi) = if e.is_err() {
                (0.0, f64::INFINITY)
            } else {
                (-1.0, 1.0)
            };
            let room = if rate > 1e-14 {
                (hi - xb[c]) / rate
            } else if rate < -1e-14 {
                (xb[c] - lo) / -rate
            } else {
                continue;
            };
            let room = room.max(0.0);
            let better = match leave {
                None => room < theta,
                Some((lc, _)) => {
                    room < theta - 1e-15
                        || (room <= theta + 1e-15 && e.is_err() && basis[lc].is_ok())
                }
            };
            if better {
                theta = room;
                leave = Some((c, if rate > 0.0 { hi } else { lo }));
            }
        }
        degenerate_run = if theta <= 1e-15 {
            degenerate_run + 1
        } else {
            0
        };
        match leave {
            None => {
                tval[q] = -tval[q];
                status[q] = if status[q] == St::Lo { St::Up } else { St::Lo };
            }
            Some((c, bound)) => {
                if let Ok(j) = basis[c] {
                    tval[j] = bound;
                    status[j] = if bound > 0.0 { St::Up } else { St::Lo };
                }
                status[q] = St::Basic;
                basis[c] = Ok(q);
            }
        }
    }
    // residual at the clamped coefficients, in original units
    let mut res = v.to_vec();
    for j in 0..m {
        let t = tval[j].clamp(-1.0, 1.0);
        for i in 0..d {
            res[i] -= gens[j * d + i] * t;
        }
    }
    let residual = norm(&res);
    let member = residual <= tolerance;
    let separating = if member {
        None
    } else {
        let h: f64 = gens.chunks_exact(d).map(|g| dot(g, &y).abs()).sum();
        if dot(v, &y) > h && y.iter().any(|x| *x != 0.0) {
            Some(y.clone())
        } else {
            None
        }
    };
    Membership {
        member,
        residual,
        tolerance,
        separating,
    }
}

/// {Σ x_j α_j e_j : Σ x_j² ≤ 1}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub basis: Vec<Vec<f64>>,
    pub semi_axes: Vec<f64>,
}

impl Ellipsoid {
    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    /// h_ℰ(u) = (Σ α_j² (e_j·u)²)^{1/2}.
    pub fn support(&self, u: &[f64]) -> f64 {
        self.basis
            .iter()
            .zip(&self.semi_axes)
            .map(|(e, a)| (a * dot(e, u)).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Σ x_j α_j e_j.
    pub fn point(&self, x: &[f64]) -> Vec<f64> {
        let d = self.basis.first().map_or(0, |e| e.len());
        let mut out = vec![0.0; d];
        for ((e, a), c) in self.basis.iter().zip(&self.semi_axes).zip(x) {
            for (o, ei) in out.iter_mut().zip(e) {
                *o += c * a * ei;
            }
        }
        out
    }

    /// Gauge of `v` with respect to ℰ; infinite off the carrier.
    pub fn gauge(&self, v: &[f64]) -> f64 {
        let mut s = 0.0;
        let mut proj = vec![0.0; v.len()];
        for (e, a) in self.basis.iter().zip(&self.semi_axes) {
            let c = dot(e, v);
            s += (c / a).powi(2);
            for (p, ei) in proj.iter_mut().zip(e) {
                *p += c * ei;
            }
        }
        let off: f64 = v
            .iter()
            .zip(&proj)
            .map(|(x, p)| (x - p).powi(2))
            .sum::<f64>()
            .sqrt();
        if off > 1e-9 * norm(v).max(1e-300) {
            return f64::INFINITY;
        }
        s.sqrt()
    }
}

/// Carrier subspace of the generators: orthonormal basis of their span.
pub fn carrier(z: &Zonotope) -> Vec<Vec<f64>> {
    let d = z.d;
    if z.is_empty() {
        return Vec::new();
    }
    // SVD of the generator matrix keeps small singular values accurate
    let g = DMatrix::from_column_slice(d, z.len(), &z.gens);
    let svd = g.svd(true, false);
    let u = svd.u.expect("left singular vectors");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|a, b| {
        svd.singular_values[*b]
            .partial_cmp(&svd.singular_values[*a])
            .unwrap()
    });
    order
        .into_iter()
        .filter(|&i| svd.singular_values[i] > 1e-10 * smax)
        .map(|i| u.column(i).iter().cloned().collect())
        .collect()
}

/// Maximum-volume inscribed ellipsoid within the carrier, to relative
/// volume tolerance `tol`.
pub fn john_ellipsoid(z: &Zonotope, tol: f64) -> Ellipsoid {
    let basis = carrier(z);
    let r = basis.len();
    if r == 0 {
        return Ellipsoid {
            basis,
            semi_axes: Vec::new(),
        };
    }
    let proj: Vec<Vec<f64>> = z
        .generators()
        .map(|g| basis.iter().map(|e| dot(e, g)).collect())
        .collect();
    let proj = merge_parallel(proj);
    if r == 1 {
        let a: f64 = proj.iter().map(|g| g[0].abs()).sum();
        return Ellipsoid {
            basis,
            semi_axes: vec![a],
        };
    }
    let normals = facet_normals(&proj, r);
    let supports: Vec<f64> = normals
        .iter()
        .map(|n| proj.iter().map(|g| dot(g, n).abs()).sum())
        .collect();
    let b = inscribed_ellipsoid(&normals, &supports, r, tol);
    let eig = SymmetricEigen::new(b);
    let mut out_basis = Vec::with_capacity(r);
    let mut axes = Vec::with_capacity(r);
    for c in 0..r {
        let v = eig.eigenvectors.column(c);
        let mut e = vec![0.0; z.d];
        for (k, bk) in basis.iter().enumerate() {
            for (o, x) in e.iter_mut().zip(bk) {
                *o += v[k] * x;
            }
        }
        let nrm = norm(&e);
        e.iter_mut().for_each(|x| *x /= nrm);
        out_basis.push(e);
        axes.push(eig.eigenvalues[c].max(0.0));
    }
    Ellipsoid {
        basis: out_basis,
        semi_axes: axes,
    }
}

/// Merges generators along the same line (their segments add up).
fn merge_parallel(gens: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut keyed: Vec<(Vec<f64>, f64)> = Vec::new();
    'outer: for g in gens {
        let len = norm(&g);
        if len == 0.0 {
            continue;
        }
        let lead = g.iter().position(|x| x.abs() > 1e-12 * len).unwrap_or(0);
        let s = if g[lead] < 0.0 { -1.0 } else { 1.0 };
        let dir: Vec<f64> = g.iter().map(|x| s * x / len).collect();
        for (kd, kl) in keyed.iter_mut() {
            if kd.iter().zip(&dir).all(|(a, b)| (a - b).abs() < 1e-12) {
                *kl += len;
                continue 'outer;
            }
        }
        keyed.push((dir, len));
    }
    keyed
        .into_iter()
        .map(|(d, l)| d.into_iter().map(|x| x * l).collect())
        .collect()
}

const MAX_NORMALS: usize = 200_000;

/// Unit normals of the facets of the zonotope: vectors orthogonal to
/// r−1 linearly independent generators.
fn facet_normals(gens: &[Vec<f64>], r: usize) -> Vec<Vec<f64>> {
    let m = gens.len();
    let k = r - 1;
    let mut out = Vec::new();
    let push = |idx: &[usize], out: &mut Vec<Vec<f64>>| {
        let rows: Vec<&[f64]> = idx.iter().map(|&i| gens[i].as_slice()).collect();
        let n = generalized_cross(&rows, r);
        let len = norm(&n);
        let scale: f64 = rows.iter().map(|g| norm(g)).product();
        if len > 1e-10 * scale {
            out.push(n.into_iter().map(|x| x / len).collect());
        }
    };
    let total = binomial(m, k);
    if total <= MAX_NORMALS as f64 {
        let mut idx: Vec<usize> = (0..k).collect();
        if k > m {
            return out;
        }
        loop {
            push(&idx, &mut out);
            let mut i = k;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if idx[i] < m - k + i {
                    idx[i] += 1;
                    for j in i + 1..k {
                        idx[j] = idx[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    } else {
        let mut rng = crate::seed::rng(0x5eed);
        for _ in 0..MAX_NORMALS {
            let mut idx: Vec<usize> = Vec::with_capacity(k);
            while idx.len() < k {
                let c = rng.gen_range(0..m);
                if !idx.contains(&c) {
                    idx.push(c);
                }
            }
            push(&idx, &mut out);
        }
        out
    }
}

fn binomial(m: usize, k: usize) -> f64 {
    if k > m {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64)
}

/// Vector orthogonal to the given r−1 rows in ℝ^r (cofactor expansion).
fn generalized_cross(rows: &[&[f64]], r: usize) -> Vec<f64> {
    (0..r)
        .map(|i| {
            let minor =
                DMatrix::from_fn(r - 1, r - 1, |a, b| rows[a][if b < i { b } else { b + 1 }]);
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            sign * minor.determinant()
        })
        .collect()
}

/// max log det B over symmetric B ≻ 0 with |B n_k| ≤ b_k.
///
/// For a symmetric body the inscribed John ellipsoid is the polar of the
/// minimum-volume ellipsoid enclosing the polar points ±n_k / b_k. A coarse
/// Khachiyan run (Todd–Yildirim away steps) on those points finds the nearly
/// active constraints; a barrier Newton solve on that set, with cutting planes
/// for anything it misses, gives the tight answer. The result is scaled so
/// that every constraint holds.
fn inscribed_ellipsoid(normals: &[Vec<f64>], supports: &[f64], r: usize, tol: f64) -> DMatrix<f64> {
    let ratio = |b: &DMatrix<f64>, k: usize| {
        let n = DVector::from_column_slice(&normals[k]);
        (b * n).norm() / supports[k]
    };
    let (mut b, mut active) = polar_core(normals, supports, r, 1e-3);
    let coarse = 1e-3f64.max(tol);
    let mut gap = coarse;
    for _round in 0..200 {
        b = barrier_solve(normals, supports, &active, b, r, gap);
        let mut viol: Vec<(usize, f64)> = (0..normals.len())
            .map(|k| (k, ratio(&b, k)))
            .filter(|(_, q)| *q > 1.0 + 1e-10)
            .collect();
        if viol.is_empty() {
            if gap <= tol {
                break;
            }
            gap = tol;
            continue;
        }
        viol.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let worst = viol[0].1;
        for (k, _) in viol.into_iter().take(8 * r) {
            if !active.contains(&k) {
                active.push(k);
            }
        }
        // restart strictly inside the enlarged set
        b *= 0.95 / worst;
    }
    let worst = (0..normals.len()).map(|k| ratio(&b, k)).fold(0.0, f64::max);
    if worst > 1.0 {
        b /= worst;
    }
    b
}

/// Coarse minimum-volume enclosing ellipsoid of the polar points, returned as
/// a strictly inscribed start B together with the constraints that are nearly
/// active for it.
fn polar_core(
    normals: &[Vec<f64>],
    supports: &[f64],
    r: usize,
    eps: f64,
) -> (DMatrix<f64>, Vec<usize>) {
    let pts: Vec<DVector<f64>> = normals
        .iter()
        .zip(supports)
        .map(|(n, b)| DVector::from_iterator(r, n.iter().map(|x| x / b)))
        .collect();
    let npts = pts.len();
    let rf = r as f64;
    // start on the longest point along each axis, as in Kumar–Yildirim
    let mut u = vec![0.0; npts];
    for axis in 0..r {
        let j = (0..npts).fold(0, |a, i| {
            if pts[i][axis].abs() > pts[a][axis].abs() {
                i
            } else {
                a
            }
        });
        u[j] = 1.0;
    }
    let build = |u: &[f64]| {
        let mut m = DMatrix::<f64>::zeros(r, r);
        for (p, w) in pts.iter().zip(u) {
            if *w > 0.0 {
                m.ger(*w, p, p, 1.0);
            }
        }
        m
    };
    let total: f64 = u.iter().sum();
    u.iter_mut().for_each(|x| *x /= total);
    let mut m = build(&u);
    if m.clone().cholesky().is_none() {
        u = vec![1.0 / npts as f64; npts];
        m = build(&u);
    }
    let mut minv = m
        .clone()
        .try_inverse()
        .expect("polar points span the carrier");
    let mut kappa: Vec<f64> = pts.iter().map(|p| p.dot(&(&minv * p))).collect();
    for iter in 1..=20_000usize {
        let (jp, kp) =
            kappa
                .iter()
                .enumerate()
                .fold((0, f64::MIN), |a, (i, &k)| if k > a.1 { (i, k) } else { a });
        let (jm, km) = kappa
            .iter()
            .enumerate()
            .filter(|(i, _)| u[*i] > 0.0)
            .fold((0, f64::MAX), |a, (i, &k)| if k < a.1 { (i, k) } else { a });
        let up = kp / rf - 1.0;
        let down = 1.0 - km / rf;
        if up <= eps && down <= eps {
            break;
        }
        let (j, mut alpha) = if up >= down {
            (jp, (kp - rf) / (rf * (kp - 1.0)))
        } else {
            (jm, (km - rf) / (rf * (km - 1.0)))
        };
        // an away step may not drive the weight negative
        alpha = alpha.max(-u[j] / (1.0 - u[j]));
        let beta = alpha / (1.0 - alpha);
        let w = &minv * &pts[j];
        let denom = 1.0 + beta * kappa[j];
        for (k, p) in kappa.iter_mut().zip(&pts) {
            let c = w.dot(p);
            *k = (*k - beta * c * c / denom) / (1.0 - alpha);
        }
        minv = (&minv - (&w * w.transpose()) * (beta / denom)) / (1.0 - alpha);
        u.iter_mut().for_each(|x| *x *= 1.0 - alpha);
        u[j] += alpha;
        if u[j] < 1e-14 {
            u[j] = 0.0;
        }
        if iter % 500 == 0 {
            m = build(&u);
            minv = m.clone().try_inverse().expect("weights keep full rank");
            for (k, p) in kappa.iter_mut().zip(&pts) {
                *k = p.dot(&(&minv * p));
            }
        }
    }
    m = build(&u);
    minv = m.clone().try_inverse().expect("weights keep full rank");
    for (k, p) in kappa.iter_mut().zip(&pts) {
        *k = p.dot(&(&minv * p));
    }
    let kmax = kappa.iter().cloned().fold(0.0, f64::max);
    // {x : xᵀ (κ M) x ≤ 1} is inscribed; B = 0.99 (κ M)^{-1/2}
    let eig = SymmetricEigen::new(m * kmax);
    let inv_sqrt = eig.eigenvalues.map(|l| 0.99 / l.sqrt());
    let mut b =
        &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
    symmetrize(&mut b);
    let mut order: Vec<usize> = (0..npts).collect();
    order.sort_by(|a, c| kappa[*c].partial_cmp(&kappa[*a]).unwrap());
    let mut active: Vec<usize> = (0..npts).filter(|&i| u[i] > 0.0).collect();
    for &i in order.iter().take(4 * r) {
        if !active.contains(&i) {
            active.push(i);
        }
    }
    (b, active)
}

/// Interior-point (log-barrier, Newton) solve over the symmetric matrices.
fn barrier_solve(
    normals: &[Vec<f64>],
    supports: &[f64],
    active: &[usize],
    start: DMatrix<f64>,
    r: usize,
    tol: f64,
) -> DMatrix<f64> {
    let params: Vec<(usize, usize)> = (0..r).flat_map(|i| (i..r).map(move |j| (i, j))).collect();
    let p = params.len();
    let basis_mat = |a: usize| {
        let (i, j) = params[a];
        let mut e = DMatrix::<f64>::zeros(r, r);
        e[(i, j)] = 1.0;
        e[(j, i)] = 1.0;
        e
    };
    let e_mats: Vec<DMatrix<f64>> = (0..p).map(basis_mat).collect();
    let feasible = |b: &DMatrix<f64>| -> bool {
        if b.clone().cholesky().is_none() {
            return false;
        }
        active.iter().all(|&k| {
            let u = b * DVector::from_column_slice(&normals[k]);
            u.norm_squared() < supports[k] * supports[k]
        })
    };
    let value = |b: &DMatrix<f64>, tau: f64| -> f64 {
        let ld = b
            .clone()
            .cholesky()
            .map(|c| 2.0 * c.l().diagonal().map(|x| x.ln()).sum())
            .unwrap();
        let mut v = -tau * ld;
        for &k in active {
            let u = b * DVector::from_column_slice(&normals[k]);
            v -= (supports[k] * supports[k] - u.norm_squared()).ln();
        }
        v
    };
    let mut b = start;
    if !feasible(&b) {
        let worst = active
            .iter()
            .map(|&k| (&b * DVector::from_column_slice(&normals[k])).norm() / supports[k])
            .fold(0.0, f64::max);
        b *= 0.5 / worst.max(1e-300);
    }
    // m/τ bounds the log-det gap
    let gap_target = (tol * 1e-3).max(1e-13);
    let mut tau = 1.0;
    loop {
        for _newton in 0..100 {
            let binv = b.clone().try_inverse().unwrap();
            let mut grad = DVector::<f64>::zeros(p);
            let mut hess = DMatrix::<f64>::zeros(p, p);
            let be: Vec<DMatrix<f64>> = e_mats.iter().map(|e| &binv * e).collect();
            for a in 0..p {
                grad[a] = -tau * be[a].trace();
                for c in a..p {
                    let h = tau * (&be[a] * &be[c]).trace();
                    hess[(a, c)] = h;
                    hess[(c, a)] = h;
                }
            }
            for &k in active {
                let n = DVector::from_column_slice(&normals[k]);
                let u = &b * &n;
                let c = supports[k] * supports[k] - u.norm_squared();
                let vs: Vec<DVector<f64>> = e_mats.iter().map(|e| e * &n).collect();
                let uv: Vec<f64> = vs.iter().map(|v| u.dot(v)).collect();
                for a in 0..p {
                    grad[a] += 2.0 * uv[a] / c;
                    for cc in a..p {
                        let h = 4.0 * uv[a] * uv[cc] / (c * c) + 2.0 * vs[a].dot(&vs[cc]) / c;
                        hess[(a, cc)] += h;
                        if cc != a {
                            hess[(cc, a)] += h;
                        }
                    }
                }
            }
            let Some(step) = hess.clone().cholesky().map(|ch| ch.solve(&(-&grad))) else {
                break;
            };
            let decrement = -grad.dot(&step);
            if decrement < 1e-20 {
                break;
            }
            let mut delta = DMatrix::<f64>::zeros(r, r);
            for a in 0..p {
                delta += &e_mats[a] * step[a];
            }
            let f0 = value(&b, tau);
            let mut s = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let cand = &b + &delta * s;
                if feasible(&cand) && value(&cand, tau) <= f0 - 0.25 * s * decrement {
                    b = cand;
                    moved = true;
                    break;
                }
                s *= 0.5;
            }
            if !moved || decrement < 1e-14 {
                break;
            }
        }
        if active.len() as f64 / tau < gap_target {
            break;
        }
        tau *= 8.0;
    }
    b
}

/// Largest gauge, with respect to ℰ, over vertices of Z reached by
/// fixed-point ascent from `starts` random directions.
pub fn outer_factor(z: &Zonotope, e: &Ellipsoid, starts: usize, rng: &mut impl Rng) -> f64 {
    let d = z.d;
    let mut best: f64 = 0.0;
    for s in 0..starts.max(1) {
        let mut u: Vec<f64> = if s < d {
            (0..d).map(|i| if i == s { 1.0 } else { 0.0 }).collect()
        } else {
            (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        for _ in 0..50 {
            let v = z.vertex(&u);
            best = best.max(e.gauge(&v));
            // ascent direction for the gauge: ℰ-dual of v
            let mut next = vec![0.0; d];
            for (b, a) in e.basis.iter().zip(&e.semi_axes) {
                let c = dot(b, &v) / (a * a);
                for (o, x) in next.iter_mut().zip(b) {
                    *o += c * x;
                }
            }
            if next
                .iter()
                .zip(&u)
                .all(|(a, b)| (a - b).abs() <= 1e-14 * norm(&next))
            {
                break;
            }
            u = next;
        }
    }
    best
}

/// Orthonormal basis of ℝ^d whose first `rank` vectors are the John axes of `z`.
pub fn john_basis(z: &Zonotope, tol: f64) -> (Vec<Vec<f64>>, Ellipsoid) {
    let e = john_ellipsoid(z, tol);
    let mut basis = e.basis.clone();
    for i in 0..z.d {
        if basis.len() == z.d {
            break;
        }
        let mut v: Vec<f64> = (0..z.d).map(|k| if k == i { 1.0 } else { 0.0 }).collect();
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &v);
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= c * y;
                }
            }
        }
        let n = norm(&v);
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    (basis, e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::MeasurePreset;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn zono(d: usize, gens: &[&[f64]]) -> Zonotope {
        Zonotope::new(d, &gens.iter().map(|g| g.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn segment_membership() {
        let z = zono(2, &[&[1.0, 2.0]]);
        assert!(z.member(&[0.0, 0.0]).unwrap().member);
        assert!(z.member(&[1.0, 2.0]).unwrap().member);
        let out = z.member(&[1.001, 2.002]).unwrap();
        assert!(!out.member);
        let u = out.separating.unwrap();
        assert!(dot(&[1.001, 2.002], &u) > z.support(&u).unwrap());
        assert!(!z.member(&[1.0, 1.0]).unwrap().member);
    }

    #[test]
    fn square_from_two_leaves() {
        let t = MeasuredTree::build(1, 1, &MeasurePreset::Lebesgue).unwrap();
        let f = LeafFunction::new(2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let z = convex_body_avg(&t, &f, &t.root());
        assert_eq!(z.len(), 2);
        assert!(z.member(&[0.5, 0.5]).unwrap().member);
        assert!(z.member(&[-0.5, 0.5]).unwrap().member);
        assert!(!z.member(&[0.51, 0.51]).unwrap().member);
        let u = [1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()];
        let vertices = [[0.5, 0.5], [0.5, -0.5], [-0.5, 0.5], [-0.5, -0.5]];
        let brute = vertices.iter().map(|v| dot(v, &u)).fold(f64::MIN, f64::max);
        assert!((z.support(&u).unwrap() - brute).abs() < 1e-15);
    }

    #[test]
    fn scalar_body_is_interval_of_mean_abs() {
        let t = MeasuredTree::from_morton(1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let f = LeafFunction::scalar(vec![1.0, -2.0, 0.5, 3.0]);
        let z = convex_body_avg(&t, &f, &t.root());
        let mean_abs = (1.0 + 4.0 + 1.5 + 12.0) / 10.0;
        assert!((z.support(&[1.0]).unwrap() - mean_abs).abs() < 1e-15);
        assert!(z.member(&[mean_abs]).unwrap().member);
        assert!(!z.member(&[mean_abs * 1.0001]).unwrap().member);
    }

    #[test]
    fn constant_function_gives_segment() {
        let t = MeasuredTree::build(1, 3, &MeasurePreset::Lebesgue).unwrap();
        let f = LeafFunction::from_fn(8, 2, |_, i| [3.0, -1.0][i]);
        let z = convex_body_avg(&t, &f, &t.root());
        let e = john_ellipsoid(&z, 1e-6);
        assert_eq!(e.rank(), 1);
        assert!((e.semi_axes[0] - 10f64.sqrt()).abs() < 1e-12);
        assert!(z.member(&[3.0, -1.0]).unwrap().member);
        assert!(!z.member(&[3.0, -0.99]).unwrap().member);
    }

    #[test]
    fn zero_body() {
        let z = Zonotope::new(3, &[vec![0.0; 3]]).unwrap();
        assert!(z.is_empty());
        assert_eq!(john_ellipsoid(&z, 1e-6).rank(), 0);
        assert!(z.member(&[0.0; 3]).unwrap().member);
        assert!(z.support(&[0.0; 3]).is_err());
    }

    #[test]
    fn cube_john_is_unit_ball() {
        for d in 2..=4 {
            let gens: Vec<Vec<f64>> = (0..d)
                .map(|i| (0..d).map(|k| if k == i { 1.0 } else { 0.0 }).collect())
                .collect();
            let z = Zonotope::new(d, &gens).unwrap();
            let e = john_ellipsoid(&z, 1e-9);
            for a in &e.semi_axes {
                assert!((a - 1.0).abs() < 1e-6, "{:?}", e.semi_axes);
            }
            let diag = vec![1.0; d];
            assert!((e.gauge(&diag) - (d as f64).sqrt()).abs() < 1e-5);
        }
    }

    #[test]
    fn hexagon_inscribed_disk_matches_brute_force() {
        let s = 3f64.sqrt() / 2.0;
        let z = zono(2, &[&[1.0, 0.0], &[-0.5, s], &[-0.5, -s]]);
        let e = john_ellipsoid(&z, 1e-9);
        // brute force: largest disk radius with support ≤ h(u) over a fine circle grid
        let mut rad = f64::INFINITY;
        for k in 0..100_000 {
            let th = std::f64::consts::PI * k as f64 / 100_000.0;
            rad = rad.min(z.support(&[th.cos(), th.sin()]).unwrap());
        }
        for a in &e.semi_axes {
            assert!((a - rad).abs() < 1e-6, "{a} vs {rad}");
        }
        assert!((rad - 3f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn combination_membership() {
        let a = zono(2, &[&[1.0, 0.0]]);
        let b = zono(2, &[&[0.0, 1.0]]);
        assert!(
            member_combination(&[2.0, 3.0], &[(2.0, &a), (3.0, &b)])
                .unwrap()
                .member
        );
        assert!(
            !member_combination(&[2.1, 3.0], &[(2.0, &a), (3.0, &b)])
                .unwrap()
                .member
        );
        assert!(member_combination(&[1.0], &[(1.0, &a)]).is_err());
    }

    fn arb_zonotope() -> impl Strategy<Value = Zonotope> {
        (1usize..=4, 1usize..=12).prop_flat_map(|(d, m)| {
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), m)
                .prop_map(move |g| Zonotope::new(d, &g).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn membership_consistent_with_support(z in arb_zonotope(), seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let d = z.d();
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let res = z.member(&v).unwrap();
            if res.member {
                for _ in 0..200 {
                    let u: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    prop_assert!(dot(&v, &u) <= z.support_unchecked(&u) + 1e-9 * (1.0 + norm(&v)));
                }
            } else {
                let found = res.separating.is_some() || (0..2000).any(|_| {
                    let u: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    dot(&v, &u) > z.support_unchecked(&u)
                });
                prop_assert!(found);
            }
        }

        #[test]
        fn john_sandwich(z in arb_zonotope(), seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let e = john_ellipsoid(&z, 1e-7);
            let r = e.rank();
            prop_assume!(r > 0);
            for _ in 0..50 {
                let x: Vec<f64> = (0..r).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let n = norm(&x);
                let p = e.point(&x.iter().map(|c| c / n).collect::<Vec<_>>());
                prop_assert!(z.member(&p).unwrap().member);
            }
            let outer = outer_factor(&z, &e, 40, &mut rng);
            prop_assert!(outer <= (r as f64).sqrt() * (1.0 + 1e-5), "outer {} r {}", outer, r);
        }

        #[test]
        fn minkowski_sum_is_commutative_on_support(a in arb_zonotope(), seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let d = a.d();
            let b = Zonotope::new(d, &[ (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>() ]).unwrap();
            let ab = a.minkowski_sum(&b).unwrap();
            let ba = b.minkowski_sum(&a).unwrap();
            let u: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            prop_assume!(norm(&u) > 0.0);
            let s1 = ab.support(&u).unwrap();
            let s2 = ba.support(&u).unwrap();
            prop_assert!((s1 - s2).abs() <= 1e-12 * s1.max(1.0));
            prop_assert!((s1 - a.support(&u).unwrap() - b.support(&u).unwrap()).abs() <= 1e-12 * s1.max(1.0));
        }
    }
}
