//! Matrix weights on the leaves of a tree: reducing operators, A_p-type
//! characteristics, weighted operator norms and the necessity experiment.

use crate::dyadic::{CubeId, MeasuredTree};
use crate::error::{Error, Result};
use crate::function::LeafFunction;
use crate::haar::HaarSystem;
use crate::linalg::{matrix_power, max_eigenvalue, spectral_norm, symmetrize};
use crate::shifts::{apply_multiplier, apply_shift, HaarShift, MartingaleMultiplier};
use crate::sparse::SparseFamily;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::sync::Arc;

/// Symmetric positive-definite d×d matrix per leaf, row-major, leaf-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixWeight {
    d: usize,
    values: Vec<f64>,
}

/// On-disk form: `{d, matrices}` with one row-major matrix per leaf.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixWeightFile {
    pub d: usize,
    pub matrices: Vec<Vec<f64>>,
}

impl MatrixWeight {
    /// Validates symmetry to 1e-12 and λ_min > 1e-10·trace at every leaf.
    pub fn new(d: usize, values: Vec<f64>) -> Result<Self> {
        if d == 0 || values.len() % (d * d) != 0 {
            return Err(Error::Invalid(format!(
                "{} entries do not form {d}×{d} blocks",
                values.len()
            )));
        }
        let w = MatrixWeight { d, values };
        for x in 0..w.num_leaves() {
            let m = w.at(x);
            let scale = m.amax().max(f64::MIN_POSITIVE);
            for i in 0..d {
                for j in 0..i {
                    if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                        return Err(Error::Invalid(format!(
                            "weight at leaf {x} is not symmetric"
                        )));
                    }
                }
            }
            let tr = m.trace();
            let lmin = crate::linalg::min_eigenvalue(&m);
            if !(tr > 0.0) || !(lmin > 1e-10 * tr) {
                return Err(Error::Invalid(format!(
                    "weight at leaf {x} is not positive definite"
                )));
            }
        }
        Ok(w)
    }

    pub fn identity(leaves: usize, d: usize) -> Self {
        Self::from_fn(leaves, d, |_| DMatrix::identity(d, d))
    }

    /// Unchecked constructor from a per-leaf closure (symmetrized).
    pub fn from_fn(leaves: usize, d: usize, mut f: impl FnMut(usize) -> DMatrix<f64>) -> Self {
        let mut values = Vec::with_capacity(leaves * d * d);
        for x in 0..leaves {
            let mut m = f(x);
            symmetrize(&mut m);
            for i in 0..d {
                for j in 0..d {
                    values.push(m[(i, j)]);
                }
            }
        }
        MatrixWeight { d, values }
    }

    pub fn scalar(w: &[f64]) -> Result<Self> {
        MatrixWeight::new(1, w.to_vec())
    }

    pub fn from_file(file: &MatrixWeightFile) -> Result<Self> {
        let mut values = Vec::new();
        for m in &file.matrices {
            if m.len() != file.d * file.d {
                return Err(Error::Dimension {
                    expected: file.d * file.d,
                    got: m.len(),
                });
            }
            values.extend_from_slice(m);
        }
        MatrixWeight::new(file.d, values)
    }

    pub fn to_file(&self) -> MatrixWeightFile {
        let dd = self.d * self.d;
        MatrixWeightFile {
            d: self.d,
            matrices: self.values.chunks(dd).map(|c| c.to_vec()).collect(),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_leaves(&self) -> usize {
        self.values.len() / (self.d * self.d)
    }

    pub fn at(&self, x: usize) -> DMatrix<f64> {
        let dd = self.d * self.d;
        DMatrix::from_row_slice(self.d, self.d, &self.values[x * dd..(x + 1) * dd])
    }

    pub fn check_tree(&self, tree: &MeasuredTree) -> Result<()> {
        if self.num_leaves() != tree.num_leaves() {
            return Err(Error::Structure(format!(
                "weight has {} leaves, tree has {}",
                self.num_leaves(),
                tree.num_leaves()
            )));
        }
        Ok(())
    }

    /// W^α leafwise.
    pub fn power(&self, alpha: f64) -> Result<Vec<DMatrix<f64>>> {
        (0..self.num_leaves())
            .map(|x| matrix_power(&self.at(x), alpha))
            .collect()
    }

    /// The weight W^α as a new weight.
    pub fn powered(&self, alpha: f64) -> Result<MatrixWeight> {
        let pw = self.power(alpha)?;
        Ok(MatrixWeight::from_fn(pw.len(), self.d, |x| pw[x].clone()))
    }

    /// V = W^{-p'/p}, the dual weight.
    pub fn dual(&self, p: f64) -> Result<MatrixWeight> {
        self.powered(-conjugate(p) / p)
    }

    /// ⟨W⟩_Q.
    pub fn average(&self, tree: &MeasuredTree, q: &CubeId) -> DMatrix<f64> {
        let mass = tree.leaf_masses();
        let mut acc = DMatrix::zeros(self.d, self.d);
        for x in tree.leaf_range(q) {
            acc += self.at(x) * mass[x];
        }
        acc / tree.mu(q)
    }

    /// Multiplies W by `factor` on the leaves of `q`.
    pub fn spiked(&self, tree: &MeasuredTree, q: &CubeId, factor: f64) -> MatrixWeight {
        let r = tree.leaf_range(q);
        MatrixWeight::from_fn(self.num_leaves(), self.d, |x| {
            if r.contains(&x) {
                self.at(x) * factor
            } else {
                self.at(x)
            }
        })
    }
}

pub fn conjugate(p: f64) -> f64 {
    p / (p - 1.0)
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::Range(format!("exponent p = {p} must lie in (1, ∞)")));
    }
    Ok(())
}

/// Random weight generators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeightPreset {
    /// Q·diag(e^u)·Qᵀ per leaf, u uniform in [−½ log κ, ½ log κ].
    Independent { kappa_max: f64 },
    /// exp(Σ_{Q ∋ x} S_Q) with random symmetric S_Q of entry size `step`,
    /// eigenvalues of the logarithm clamped to [−½ log κ, ½ log κ].
    PathSmooth { kappa_max: f64, step: f64 },
}

fn random_orthogonal(d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    a.qr().q()
}

pub fn random_weight(
    tree: &MeasuredTree,
    d: usize,
    preset: &WeightPreset,
    rng: &mut impl Rng,
) -> MatrixWeight {
    let leaves = tree.num_leaves();
    match *preset {
        WeightPreset::Independent { kappa_max } => {
            let h = 0.5 * kappa_max.max(1.0).ln();
            MatrixWeight::from_fn(leaves, d, |_| {
                let q = random_orthogonal(d, rng);
                let diag = DVector::from_fn(d, |_, _| {
                    if h > 0.0 {
                        rng.gen_range(-h..=h).exp()
                    } else {
                        1.0
                    }
                });
                &q * DMatrix::from_diagonal(&diag) * q.transpose()
            })
        }
        WeightPreset::PathSmooth { kappa_max, step } => {
            let h = 0.5 * kappa_max.max(1.0).ln();
            let logs: Vec<DMatrix<f64>> = (0..tree.num_cubes())
                .map(|_| {
                    let mut s = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-step..=step));
                    symmetrize(&mut s);
                    s
                })
                .collect();
            MatrixWeight::from_fn(leaves, d, |x| {
                let mut l = DMatrix::zeros(d, d);
                for level in 0..=tree.depth() {
                    l += &logs[tree.index(&tree.leaf_ancestor(x, level))];
                }
                let eig = SymmetricEigen::new(l);
                let ev = eig.eigenvalues.map(|v| v.clamp(-h, h).exp());
                &eig.eigenvectors * DMatrix::from_diagonal(&ev) * eig.eigenvectors.transpose()
            })
        }
    }
}

/// Deterministic quasi-uniform unit vectors (half sphere suffices for
/// symmetric quantities, but the full set is returned).
pub fn sphere_directions(d: usize, n: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0]],
        2 => (0..n)
            .map(|k| {
                let a = std::f64::consts::PI * k as f64 / n as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|k| {
                    let z = 1.0 - (k as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let th = golden * k as f64;
                    vec![r * th.cos(), r * th.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut rng = crate::seed::rng(0x5eed_d1ec + d as u64);
            (0..n)
                .map(|_| {
                    let v: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();
                    let nv = crate::linalg::norm(&v);
                    v.into_iter().map(|x| x / nv).collect()
                })
                .collect()
        }
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let v: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

/// Coordinate hill climbing on the sphere for `steps` rounds.
fn polish(mut u: Vec<f64>, steps: usize, h: impl Fn(&[f64]) -> f64) -> (Vec<f64>, f64) {
    let d = u.len();
    let mut best = h(&u);
    let mut delta = 0.05;
    for _ in 0..steps {
        let mut improved = false;
        for i in 0..d {
            for sgn in [1.0, -1.0] {
                let mut v = u.clone();
                v[i] += sgn * delta;
                let nv = crate::linalg::norm(&v);
                v.iter_mut().for_each(|x| *x /= nv);
                let val = h(&v);
                if val > best {
                    best = val;
                    u = v;
                    improved = true;
                }
            }
        }
        if !improved {
            delta *= 0.5;
        }
    }
    (u, best)
}

/// The norm e ↦ (Σ_x w_x (eᵀ M_x e)^{p/2})^{1/p} with weights w summing to one.
struct NormBall {
    d: usize,
    p: f64,
    m: Vec<f64>,
    w: Vec<f64>,
}

impl NormBall {
    fn new(mats: &[&DMatrix<f64>], w: Vec<f64>, p: f64) -> Self {
        let d = mats[0].nrows();
        let mut m = Vec::with_capacity(mats.len() * d * d);
        for a in mats {
            for i in 0..d {
                for j in 0..d {
                    m.push(a[(i, j)]);
                }
            }
        }
        NormBall { d, p, m, w }
    }

    fn quad(&self, x: usize, v: &[f64], mv: &mut [f64]) -> f64 {
        let d = self.d;
        let blk = &self.m[x * d * d..(x + 1) * d * d];
        let mut q = 0.0;
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                s += blk[i * d + j] * v[j];
            }
            mv[i] = s;
            q += s * v[i];
        }
        q.max(0.0)
    }

    fn phi(&self, v: &[f64]) -> f64 {
        let mut mv = vec![0.0; self.d];
        (0..self.w.len())
            .map(|x| self.w[x] * self.quad(x, v, &mut mv).powf(0.5 * self.p))
            .sum()
    }

    fn rho(&self, v: &[f64]) -> f64 {
        self.phi(v).powf(1.0 / self.p)
    }

    /// φ(v), ∇φ(v), ∇²φ(v).
    fn derivatives(&self, v: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let (d, p) = (self.d, self.p);
        let mut mv = vec![0.0; d];
        let mut phi = 0.0;
        let mut g = vec![0.0; d];
        let mut h = vec![0.0; d * d];
        for x in 0..self.w.len() {
            let q = self.quad(x, v, &mut mv);
            if q <= 0.0 {
                continue;
            }
            let wx = self.w[x];
            let a = q.powf(0.5 * p - 1.0);
            phi += wx * a * q;
            let blk = &self.m[x * d * d..(x + 1) * d * d];
            for i in 0..d {
                g[i] += wx * p * a * mv[i];
                for j in 0..d {
                    h[i * d + j] +=
                        wx * p * (a * blk[i * d + j] + (p - 2.0) * a / q * mv[i] * mv[j]);
                }
            }
        }
        (phi, g, h)
    }
}

fn sym_basis(d: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..d {
        for j in i..d {
            out.push((i, j));
        }
    }
    out
}

fn sym_from(theta: &[f64], basis: &[(usize, usize)], d: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(d, d);
    for (t, &(i, j)) in theta.iter().zip(basis) {
        a[(i, j)] = *t;
        a[(j, i)] = *t;
    }
    a
}

/// E_k u for the symmetric basis element k.
fn basis_apply(k: (usize, usize), u: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    let (i, j) = k;
    out[i] += u[j];
    if i != j {
        out[j] += u[i];
    }
    out
}

/// Barrier objective t·(−log det A) − Σ_u log(1 − φ(A u)); `None` when infeasible.
fn barrier_value(ball: &NormBall, a: &DMatrix<f64>, dirs: &[Vec<f64>], t: f64) -> Option<f64> {
    let chol = a.clone().cholesky()?;
    let logdet: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let mut val = -t * logdet;
    for u in dirs {
        let v = (a * DVector::from_column_slice(u)).data.as_vec().clone();
        let s = 1.0 - ball.phi(&v);
        if !(s > 0.0) {
            return None;
        }
        val -= s.ln();
    }
    Some(val)
}

/// Maximal-volume ellipsoid {A u : |u| ≤ 1} with φ(A u) ≤ 1 on `dirs`, by a
/// barrier path starting at parameter `t0`.
fn inscribed_on_directions(
    ball: &NormBall,
    dirs: &[Vec<f64>],
    start: DMatrix<f64>,
    t0: f64,
) -> DMatrix<f64> {
    let d = ball.d;
    let basis = sym_basis(d);
    let k = basis.len();
    let e_mats: Vec<DMatrix<f64>> = (0..k).map(|r| sym_from(&unit(k, r), &basis, d)).collect();
    let eu: Vec<Vec<Vec<f64>>> = dirs
        .iter()
        .map(|u| basis.iter().map(|&b| basis_apply(b, u, d)).collect())
        .collect();
    let mut a = start;
    let mut t = t0;
    let t_end = 1e6 * dirs.len() as f64;
    loop {
        for _ in 0..60 {
            let ainv = a.clone().try_inverse().expect("positive definite iterate");
            let be: Vec<DMatrix<f64>> = e_mats.iter().map(|e| &ainv * e).collect();
            let mut grad = DVector::<f64>::zeros(k);
            let mut hess = DMatrix::<f64>::zeros(k, k);
            for r in 0..k {
                grad[r] -= t * be[r].trace();
                for c in r..k {
                    let v = t * (&be[r] * &be[c]).trace();
                    hess[(r, c)] += v;
                    if c != r {
                        hess[(c, r)] += v;
                    }
                }
            }
            for (u, eu) in dirs.iter().zip(&eu) {
                let v = (&a * DVector::from_column_slice(u)).data.as_vec().clone();
                let (phi, g, h) = ball.derivatives(&v);
                let s = 1.0 - phi;
                let dc: Vec<f64> = eu.iter().map(|e| crate::linalg::dot(&g, e)).collect();
                for r in 0..k {
                    grad[r] += dc[r] / s;
                    for c in r..k {
                        let mut quad = 0.0;
                        for i in 0..d {
                            let ri = eu[r][i];
                            if ri == 0.0 {
                                continue;
                            }
                            for j in 0..d {
                                quad += ri * h[i * d + j] * eu[c][j];
                            }
                        }
                        let v = quad / s + dc[r] * dc[c] / (s * s);
                        hess[(r, c)] += v;
                        if c != r {
                            hess[(c, r)] += v;
                        }
                    }
                }
            }
            let step = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => -&grad,
            };
            let decrement = -grad.dot(&step);
            if decrement < 1e-10 {
                break;
            }
            let f0 = barrier_value(ball, &a, dirs, t).expect("feasible iterate");
            let theta0: Vec<f64> = basis.iter().map(|&(i, j)| a[(i, j)]).collect();
            let mut alpha = 1.0;
            let mut moved = false;
            while alpha > 1e-10 {
                let th: Vec<f64> = theta0
                    .iter()
                    .zip(step.iter())
                    .map(|(x, s)| x + alpha * s)
                    .collect();
                let cand = sym_from(&th, &basis, d);
                if let Some(f1) = barrier_value(ball, &cand, dirs, t) {
                    if f1 <= f0 - 0.25 * alpha * decrement {
                        a = cand;
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if t >= t_end {
            break;
        }
        t = (t * 16.0).min(t_end);
    }
    a
}

fn unit(k: usize, r: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[r] = 1.0;
    v
}

/// A with {A u : |u| ≤ 1} ⊂ {ρ ≤ 1} of (near) maximal volume, by cutting planes
/// on sphere samples followed by an exact rescale into the body.
fn john_matrix(ball: &NormBall) -> DMatrix<f64> {
    let d = ball.d;
    let (n0, dense) = match d {
        2 => (36, 720),
        3 => (150, 3000),
        _ => (16 * d * d, 400 * d * d),
    };
    let mut dirs = sphere_directions(d, n0);
    let check = sphere_directions(d, dense);
    let smax = check.iter().map(|u| ball.rho(u)).fold(0.0, f64::max);
    let mut a = DMatrix::identity(d, d) / (2.0 * smax);
    let mut t0 = 1.0;
    let image = |a: &DMatrix<f64>, u: &[f64]| -> Vec<f64> {
        (a * DVector::from_column_slice(u)).data.as_vec().clone()
    };
    for _ in 0..12 {
        a = inscribed_on_directions(ball, &dirs, a, t0);
        let mut scored: Vec<(f64, usize)> = check
            .iter()
            .enumerate()
            .map(|(i, u)| (ball.rho(&image(&a, u)), i))
            .collect();
        scored.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
        let mut worst: f64 = 0.0;
        for &(_, i) in scored.iter().take(8) {
            let (u, val) = polish(check[i].clone(), 30, |u| ball.rho(&image(&a, u)));
            worst = worst.max(val);
            if val > 1.0 + 1e-4 {
                dirs.push(u);
            }
        }
        if worst <= 1.0 + 1e-4 {
            break;
        }
        a /= worst * (1.0 + 1e-3);
        t0 = 1e3;
    }
    let worst = check
        .iter()
        .map(|u| ball.rho(&image(&a, u)))
        .fold(0.0, f64::max);
    let worst = dirs
        .iter()
        .map(|u| ball.rho(&image(&a, u)))
        .fold(worst, f64::max);
    if worst > 1.0 {
        a /= worst;
    }
    a
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducingOperator {
    pub cube: CubeId,
    pub p: f64,
    pub d: usize,
    /// Row-major symmetric positive-definite matrix.
    pub matrix: Vec<f64>,
    /// max/min over sampled unit e of |𝒲e| / (⨏_Q |W^{1/p}e|^p)^{1/p}.
    pub comparability: f64,
    pub exact: bool,
}

impl ReducingOperator {
    pub fn mat(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.d, self.d, &self.matrix)
    }
}

fn flat(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Reducing operator for the weight whose leafwise p-th roots are `roots`
/// (so the norm is e ↦ (⨏_Q |roots(x) e|^p)^{1/p}).
fn reducing_from_roots(
    tree: &MeasuredTree,
    roots: &[DMatrix<f64>],
    p: f64,
    q: &CubeId,
) -> ReducingOperator {
    let d = roots[0].nrows();
    let mass = tree.leaf_masses();
    let mu = tree.mu(q);
    let r = tree.leaf_range(q);
    let grams: Vec<DMatrix<f64>> = r
        .clone()
        .map(|x| roots[x].transpose() * &roots[x])
        .collect();
    if d == 1 {
        let avg: f64 = r
            .clone()
            .map(|x| roots[x][(0, 0)].abs().powf(p) * mass[x])
            .sum::<f64>()
            / mu;
        let m = DMatrix::from_element(1, 1, avg.powf(1.0 / p));
        return ReducingOperator {
            cube: *q,
            p,
            d,
            matrix: flat(&m),
            comparability: 1.0,
            exact: true,
        };
    }
    if (p - 2.0).abs() < 1e-15 {
        let mut avg = DMatrix::zeros(d, d);
        for (g, x) in grams.iter().zip(r.clone()) {
            avg += g * mass[x];
        }
        avg /= mu;
        let m = matrix_power(&avg, 0.5).expect("average of positive-definite matrices");
        return ReducingOperator {
            cube: *q,
            p,
            d,
            matrix: flat(&m),
            comparability: 1.0,
            exact: true,
        };
    }
    let refs: Vec<&DMatrix<f64>> = grams.iter().collect();
    let w: Vec<f64> = r.clone().map(|x| mass[x] / mu).collect();
    let ball = NormBall::new(&refs, w, p);
    let a = john_matrix(&ball);
    let mut m = a
        .try_inverse()
        .expect("inscribed ellipsoid is nondegenerate");
    symmetrize(&mut m);
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for e in sphere_directions(d, 1024) {
        let me = &m * DVector::from_column_slice(&e);
        let ratio = me.norm() / ball.rho(&e);
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    ReducingOperator {
        cube: *q,
        p,
        d,
        matrix: flat(&m),
        comparability: hi / lo,
        exact: false,
    }
}

/// 𝒲_{p,Q}: |𝒲e| comparable to (⨏_Q |W^{1/p}e|^p)^{1/p}. Exact for p = 2 and d = 1.
pub fn reducing_operator(
    tree: &MeasuredTree,
    w: &MatrixWeight,
    p: f64,
    q: &CubeId,
) -> Result<ReducingOperator> {
    check_p(p)?;
    w.check_tree(tree)?;
    tree.validate(q)?;
    let roots = w.power(1.0 / p)?;
    Ok(reducing_from_roots(tree, &roots, p, q))
}

/// Reducing operators of W at p and of V = W^{-p'/p} at p' for every cube.
pub struct ReducingTable {
    pub w_ops: Vec<DMatrix<f64>>,
    pub v_ops: Vec<DMatrix<f64>>,
    pub max_comparability: f64,
}

pub fn reducing_table(tree: &MeasuredTree, w: &MatrixWeight, p: f64) -> Result<ReducingTable> {
    check_p(p)?;
    w.check_tree(tree)?;
    let pp = conjugate(p);
    let wr = w.power(1.0 / p)?;
    let vr = w.power(-1.0 / p)?;
    let mut w_ops = Vec::with_capacity(tree.num_cubes());
    let mut v_ops = Vec::with_capacity(tree.num_cubes());
    let mut comp: f64 = 1.0;
    for q in tree.cubes() {
        let a = reducing_from_roots(tree, &wr, p, &q);
        let b = reducing_from_roots(tree, &vr, pp, &q);
        comp = comp.max(a.comparability).max(b.comparability);
        w_ops.push(a.mat());
        v_ops.push(b.mat());
    }
    Ok(ReducingTable {
        w_ops,
        v_ops,
        max_comparability: comp,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ApVariant {
    Ap,
    ApN { n: u32 },
    Apb,
    ApInftySc,
    TwoWeight,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub p: f64,
    pub value: f64,
    /// Maximizing cube (one entry) or pair (Q, R).
    pub argmax: Vec<CubeId>,
    pub variant: ApVariant,
    /// sup c_p^b(I, J)|𝒲_I 𝒱_J|^p over the same pair set, when computed.
    pub reducing_value: Option<f64>,
    /// Lower bound from sampled directions rather than an exact maximum.
    pub sampled: bool,
}

/// |W(x)^{1/p} V(y)^{1/p'}|^{p'} for all leaf pairs.
struct PairNorms {
    n: usize,
    vals: Vec<f64>,
    p: f64,
}

impl PairNorms {
    fn new(w_root: &[DMatrix<f64>], v_root: &[DMatrix<f64>], p: f64) -> Self {
        let n = w_root.len();
        let pp = conjugate(p);
        let mut vals = vec![0.0; n * n];
        for x in 0..n {
            for y in 0..n {
                vals[x * n + y] = spectral_norm(&(&w_root[x] * &v_root[y])).powf(pp);
            }
        }
        PairNorms { n, vals, p }
    }

    /// ⨏_Q (⨏_R |W(x)^{1/p}V(y)^{1/p'}|^{p'} dμ(y))^{p/p'} dμ(x).
    fn pair(&self, tree: &MeasuredTree, q: &CubeId, r: &CubeId) -> f64 {
        let mass = tree.leaf_masses();
        let pp = conjugate(self.p);
        let rr = tree.leaf_range(r);
        let mut outer = 0.0;
        for x in tree.leaf_range(q) {
            let row = &self.vals[x * self.n..(x + 1) * self.n];
            let inner: f64 = rr.clone().map(|y| row[y] * mass[y]).sum::<f64>() / tree.mu(r);
            outer += inner.powf(self.p / pp) * mass[x];
        }
        outer / tree.mu(q)
    }
}

/// c_p^b(Q, R): 1 when Q = R, otherwise m(Q)^{p/2} m(R)^{p/2} / (μ(R) μ(Q)^{p−1}).
pub fn cpb(hs: &HaarSystem, p: f64, q: &CubeId, r: &CubeId) -> f64 {
    if q == r {
        return 1.0;
    }
    let tree = hs.tree();
    (hs.m(q) * hs.m(r)).powf(0.5 * p) / (tree.mu(r) * tree.mu(q).powf(p - 1.0))
}

/// [W, V]_{A_p}: exact maximum of the double average over all cubes.
pub fn two_weight_ap(
    tree: &MeasuredTree,
    w: &MatrixWeight,
    v: &MatrixWeight,
    p: f64,
) -> Result<ApReport> {
    check_p(p)?;
    w.check_tree(tree)?;
    v.check_tree(tree)?;
    let pn = PairNorms::new(&w.power(1.0 / p)?, &v.power(1.0 / conjugate(p))?, p);
    let (value, q) = tree.cubes().map(|q| (pn.pair(tree, &q, &q), q)).fold(
        (f64::NEG_INFINITY, tree.root()),
        |a, b| if b.0 > a.0 { b } else { a },
    );
    Ok(ApReport {
        p,
        value,
        argmax: vec![q],
        variant: ApVariant::TwoWeight,
        reducing_value: None,
        sampled: false,
    })
}

/// [W]_{A_p} = [W, W^{-p'/p}]_{A_p}.
pub fn ap_constant(tree: &MeasuredTree, w: &MatrixWeight, p: f64) -> Result<ApReport> {
    check_p(p)?;
    w.check_tree(tree)?;
    let pn = PairNorms::new(&w.power(1.0 / p)?, &w.power(-1.0 / p)?, p);
    let (value, q) = tree.cubes().map(|q| (pn.pair(tree, &q, &q), q)).fold(
        (f64::NEG_INFINITY, tree.root()),
        |a, b| if b.0 > a.0 { b } else { a },
    );
    let reducing_value = if p == 2.0 || w.d() == 1 {
        let table = reducing_table(tree, w, p)?;
        Some(
            tree.cubes()
                .map(|q| {
                    let i = tree.index(&q);
                    spectral_norm(&(&table.w_ops[i] * &table.v_ops[i])).powf(p)
                })
                .fold(0.0, f64::max),
        )
    } else {
        None
    };
    Ok(ApReport {
        p,
        value,
        argmax: vec![q],
        variant: ApVariant::Ap,
        reducing_value,
        sampled: false,
    })
}

/// Ordered pairs (Q, R) with dist(Q, R) ≤ reach.
pub fn pairs_within(tree: &MeasuredTree, reach: u32) -> Vec<(CubeId, CubeId)> {
    let mut out = BTreeSet::new();
    for q in tree.cubes() {
        for a in 0..=reach.min(q.level) {
            let anc = tree.ancestor(&q, a).expect("a ≤ level");
            for b in 0..=(reach - a).min(tree.depth() - anc.level) {
                for r in tree.descendants_at(&anc, b).expect("within depth") {
                    if tree.dyadic_distance(&q, &r).expect("valid") <= reach {
                        out.insert((q, r));
                    }
                }
            }
        }
    }
    out.into_iter().collect()
}

/// Pairs with R ∈ ch(Q̂) ∪ ch(Q⁽²⁾) or Q ∈ ch(R⁽²⁾); the root pairs with itself.
pub fn apb_pairs(tree: &MeasuredTree) -> Vec<(CubeId, CubeId)> {
    let mut out = BTreeSet::new();
    for q in tree.cubes() {
        if q.level == 0 {
            out.insert((q, q));
        }
        for a in 1..=2u32.min(q.level) {
            let anc = tree.ancestor(&q, a).expect("a ≤ level");
            for r in tree.children(&anc) {
                out.insert((q, r));
                out.insert((r, q));
            }
        }
    }
    out.into_iter().collect()
}

fn pair_sup(
    hs: &HaarSystem,
    w: &MatrixWeight,
    p: f64,
    pairs: &[(CubeId, CubeId)],
    variant: ApVariant,
    with_reducing: bool,
) -> Result<ApReport> {
    check_p(p)?;
    let tree = hs.tree();
    w.check_tree(tree)?;
    if pairs.is_empty() {
        return Err(Error::Invalid("pair range is empty".into()));
    }
    let pn = PairNorms::new(&w.power(1.0 / p)?, &w.power(-1.0 / p)?, p);
    let mut best = (f64::NEG_INFINITY, pairs[0]);
    for (q, r) in pairs {
        let c = cpb(hs, p, q, r);
        if c == 0.0 {
            best = if best.0 < 0.0 { (0.0, (*q, *r)) } else { best };
            continue;
        }
        let v = c * pn.pair(tree, q, r);
        if v > best.0 {
            best = (v, (*q, *r));
        }
    }
    let reducing_value = if with_reducing {
        let table = reducing_table(tree, w, p)?;
        Some(
            pairs
                .iter()
                .map(|(q, r)| {
                    let c = cpb(hs, p, q, r);
                    c * spectral_norm(&(&table.w_ops[tree.index(q)] * &table.v_ops[tree.index(r)]))
                        .powf(p)
                })
                .fold(0.0, f64::max),
        )
    } else {
        None
    };
    Ok(ApReport {
        p,
        value: best.0,
        argmax: vec![best.1 .0, best.1 .1],
        variant,
        reducing_value,
        sampled: false,
    })
}

/// [W]_{A_p^N}: maximum of c_p^b(Q,R)·(double average over Q × R) over dist(Q,R) ≤ N+2.
pub fn apn_constant(hs: &HaarSystem, w: &MatrixWeight, p: f64, n: u32) -> Result<ApReport> {
    let tree = hs.tree();
    if tree.depth() == 0 {
        return Err(Error::Invalid(
            "pair range is empty on a single-cube tree".into(),
        ));
    }
    let pairs = pairs_within(tree, n + 2);
    pair_sup(
        hs,
        w,
        p,
        &pairs,
        ApVariant::ApN { n },
        p == 2.0 || w.d() == 1,
    )
}

/// Same as `apn_constant` with the reducing-operator variant forced on.
pub fn apn_constant_with_reducing(
    hs: &HaarSystem,
    w: &MatrixWeight,
    p: f64,
    n: u32,
) -> Result<ApReport> {
    let pairs = pairs_within(hs.tree(), n + 2);
    pair_sup(hs, w, p, &pairs, ApVariant::ApN { n }, true)
}

/// [W]_{A_p^b} over the restricted pair set.
pub fn apb_constant(hs: &HaarSystem, w: &MatrixWeight, p: f64) -> Result<ApReport> {
    let pairs = apb_pairs(hs.tree());
    pair_sup(hs, w, p, &pairs, ApVariant::Apb, p == 2.0 || w.d() == 1)
}

/// Fujii–Wilson constant sup_Q (1/w(Q)) ∫_Q M_Q(w 1_Q) dμ with its maximizing cube.
pub fn fujii_wilson(tree: &MeasuredTree, w: &[f64]) -> (f64, CubeId) {
    let mass = tree.leaf_masses();
    let mut integral = vec![0.0; tree.num_cubes()];
    for level in (0..=tree.depth()).rev() {
        for q in tree.level_cubes(level) {
            let v = if tree.is_leaf(&q) {
                let x = tree.leaf_range(&q).start;
                w[x] * mass[x]
            } else {
                tree.children(&q)
                    .iter()
                    .map(|c| integral[tree.index(c)])
                    .sum()
            };
            integral[tree.index(&q)] = v;
        }
    }
    let avg = |q: &CubeId| integral[tree.index(q)] / tree.mu(q);
    let mut best = (f64::NEG_INFINITY, tree.root());
    for q in tree.cubes() {
        let wq = integral[tree.index(&q)];
        if wq <= 0.0 {
            continue;
        }
        let mut sum = 0.0;
        let mut stack = vec![(q, avg(&q))];
        while let Some((r, m)) = stack.pop() {
            if tree.is_leaf(&r) {
                sum += m * tree.mu(&r);
            } else {
                for c in tree.children(&r) {
                    let mc = m.max(avg(&c));
                    stack.push((c, mc));
                }
            }
        }
        let v = sum / wq;
        if v > best.0 {
            best = (v, q);
        }
    }
    best
}

/// sup_e [|W^{1/p}e|^p]_{A_∞} over `n_dirs` sphere samples plus 20 polishing
/// steps from the best sample. Exact when d = 1.
pub fn ap_infty_sc(
    tree: &MeasuredTree,
    w: &MatrixWeight,
    p: f64,
    n_dirs: usize,
) -> Result<ApReport> {
    check_p(p)?;
    w.check_tree(tree)?;
    let grams = w.power(2.0 / p)?;
    let eval = |e: &[f64]| -> (f64, CubeId) {
        let ev = DVector::from_column_slice(e);
        let scalar: Vec<f64> = grams
            .iter()
            .map(|g| ev.dot(&(g * &ev)).max(0.0).powf(0.5 * p))
            .collect();
        fujii_wilson(tree, &scalar)
    };
    let dirs = sphere_directions(w.d(), n_dirs.max(1));
    let mut best = (f64::NEG_INFINITY, tree.root(), dirs[0].clone());
    for e in &dirs {
        let (v, q) = eval(e);
        if v > best.0 {
            best = (v, q, e.clone());
        }
    }
    if w.d() > 1 {
        let (u, v) = polish(best.2.clone(), 20, |e| eval(e).0);
        if v > best.0 {
            best = (v, eval(&u).1, u);
        }
    }
    Ok(ApReport {
        p,
        value: best.0,
        argmax: vec![best.1],
        variant: ApVariant::ApInftySc,
        reducing_value: None,
        sampled: w.d() > 1,
    })
}

/// Operators whose weighted norms are computed.
#[derive(Clone, Copy, Debug)]
pub enum WeightedOperator<'a> {
    Shift(&'a HaarShift),
    Multiplier(&'a MartingaleMultiplier),
    /// 𝔼_Q f = ⟨f⟩_Q 1_Q.
    Expectation(CubeId),
}

/// Scalar leaf matrix of the operator (it acts componentwise on ℝ^d values).
pub fn operator_matrix(tree: &MeasuredTree, op: &WeightedOperator<'_>) -> Result<DMatrix<f64>> {
    let n = tree.num_leaves();
    if let WeightedOperator::Expectation(q) = op {
        tree.validate(q)?;
        let mass = tree.leaf_masses();
        let r = tree.leaf_range(q);
        return Ok(DMatrix::from_fn(n, n, |x, y| {
            if r.contains(&x) && r.contains(&y) {
                mass[y] / tree.mu(q)
            } else {
                0.0
            }
        }));
    }
    let mut m = DMatrix::zeros(n, n);
    for y in 0..n {
        let mut e = LeafFunction::zeros(n, 1);
        e.at_mut(y)[0] = 1.0;
        let col = match op {
            WeightedOperator::Shift(t) => apply_shift(t, &e)?,
            WeightedOperator::Multiplier(s) => apply_multiplier(tree, s, &e)?,
            WeightedOperator::Expectation(_) => unreachable!(),
        };
        for x in 0..n {
            m[(x, y)] = col.at(x)[0];
        }
    }
    Ok(m)
}

fn block_matrix(
    tree: &MeasuredTree,
    t: &DMatrix<f64>,
    left: &[DMatrix<f64>],
    right: &[DMatrix<f64>],
) -> DMatrix<f64> {
    let n = tree.num_leaves();
    let d = left[0].nrows();
    let mass = tree.leaf_masses();
    let mut b = DMatrix::zeros(n * d, n * d);
    for x in 0..n {
        for y in 0..n {
            let c = t[(x, y)];
            if c == 0.0 {
                continue;
            }
            let blk = (&left[x] * &right[y]) * (c * (mass[x] / mass[y]).sqrt());
            b.view_mut((x * d, y * d), (d, d)).copy_from(&blk);
        }
    }
    b
}

/// ‖T‖_{L²(W) → L²(V)} exactly: the spectral norm of V^{1/2} T W^{-1/2} in
/// μ-normalized coordinates.
pub fn two_weight_norm_l2(
    tree: &MeasuredTree,
    op: &WeightedOperator<'_>,
    w: &MatrixWeight,
    v: &MatrixWeight,
) -> Result<f64> {
    w.check_tree(tree)?;
    v.check_tree(tree)?;
    if w.d() != v.d() {
        return Err(Error::Dimension {
            expected: w.d(),
            got: v.d(),
        });
    }
    let t = operator_matrix(tree, op)?;
    let b = block_matrix(tree, &t, &v.power(0.5)?, &w.power(-0.5)?);
    let g = b.transpose() * &b;
    Ok(max_eigenvalue(&g).max(0.0).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    /// Exact for p = 2; otherwise a lower bound from the best start.
    pub exact: bool,
    pub starts: usize,
}

/// ‖T‖_{L^p(W)}: exact eigen-solve at p = 2, nonlinear power iteration
/// lower bound otherwise.
pub fn weighted_operator_norm(
    tree: &MeasuredTree,
    op: &WeightedOperator<'_>,
    w: &MatrixWeight,
    p: f64,
    starts: usize,
    rng: &mut impl Rng,
) -> Result<NormEstimate> {
    check_p(p)?;
    if p == 2.0 {
        let value = two_weight_norm_l2(tree, op, w, w)?;
        return Ok(NormEstimate {
            value,
            exact: true,
            starts: 0,
        });
    }
    w.check_tree(tree)?;
    let t = operator_matrix(tree, op)?;
    let n = tree.num_leaves();
    let d = w.d();
    let mass = tree.leaf_masses();
    // B acts on g = W^{1/p} f with unweighted block entries
    let wp = w.power(1.0 / p)?;
    let wm = w.power(-1.0 / p)?;
    let mut b = DMatrix::zeros(n * d, n * d);
    for x in 0..n {
        for y in 0..n {
            let c = t[(x, y)];
            if c != 0.0 {
                b.view_mut((x * d, y * d), (d, d))
                    .copy_from(&((&wp[x] * &wm[y]) * c));
            }
        }
    }
    let bt = b.transpose();
    let pp = conjugate(p);
    let lp = |g: &DVector<f64>| -> f64 {
        (0..n)
            .map(|x| g.rows(x * d, d).norm().powf(p) * mass[x])
            .sum::<f64>()
            .powf(1.0 / p)
    };
    let mut best: f64 = 0.0;
    let starts = starts.max(1);
    for s in 0..starts {
        let mut g = if s == 0 {
            DVector::from_element(n * d, 1.0)
        } else {
            DVector::from_fn(n * d, |_, _| rng.gen_range(-1.0..1.0))
        };
        for _ in 0..200 {
            let ng = lp(&g);
            if ng == 0.0 {
                break;
            }
            g /= ng;
            let y = &b * &g;
            let ratio = lp(&y);
            let improved = ratio > best * (1.0 + 1e-12);
            best = best.max(ratio);
            if ratio == 0.0 {
                break;
            }
            // z = Bᵀ(μ |y|^{p−2} y), then g = |z/μ|^{p'−2} z/μ
            let mut u = DVector::zeros(n * d);
            for x in 0..n {
                let yx = y.rows(x * d, d);
                let nx = yx.norm();
                if nx > 0.0 {
                    u.rows_mut(x * d, d)
                        .copy_from(&(yx * (mass[x] * nx.powf(p - 2.0))));
                }
            }
            let z = &bt * &u;
            let mut next = DVector::zeros(n * d);
            for x in 0..n {
                let zx = z.rows(x * d, d) / mass[x];
                let nx = zx.norm();
                if nx > 0.0 {
                    next.rows_mut(x * d, d)
                        .copy_from(&(&zx * nx.powf(pp - 2.0)));
                }
            }
            let change = (&next / lp(&next).max(f64::MIN_POSITIVE) - &g).amax();
            g = next;
            if change < 1e-12 && !improved {
                break;
            }
        }
    }
    Ok(NormEstimate {
        value: best,
        exact: false,
        starts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectationBand {
    pub cube: CubeId,
    /// ‖𝔼_Q‖²_{L²(W)} from the eigen-solve.
    pub norm_sq: f64,
    /// |⟨W⟩_Q^{1/2}⟨W^{-1}⟩_Q^{1/2}|², the rank-one closed form.
    pub closed_form_sq: f64,
    /// ⨏_Q ⨏_Q |W(x)^{1/2} W(y)^{-1/2}|² dμ dμ.
    pub ap_term: f64,
}

pub fn expectation_band(
    tree: &MeasuredTree,
    w: &MatrixWeight,
    q: &CubeId,
) -> Result<ExpectationBand> {
    let norm = two_weight_norm_l2(tree, &WeightedOperator::Expectation(*q), w, w)?;
    let a = w.average(tree, q);
    let inv = w.powered(-1.0)?;
    let b = inv.average(tree, q);
    let closed = spectral_norm(&(matrix_power(&a, 0.5)? * matrix_power(&b, 0.5)?)).powi(2);
    let pn = PairNorms::new(&w.power(0.5)?, &w.power(-0.5)?, 2.0);
    Ok(ExpectationBand {
        cube: *q,
        norm_sq: norm * norm,
        closed_form_sq: closed,
        ap_term: pn.pair(tree, q, q),
    })
}

/// S^W_{p'} g(x) = (Σ_{Q∈𝒮} ⟨|𝒲_Q^{-1} W^{1/p}| |g|⟩_Q^{p'} 1_Q(x))^{1/p'}.
pub fn square_function(
    tree: &MeasuredTree,
    family: &SparseFamily,
    w: &MatrixWeight,
    p: f64,
    g: &LeafFunction,
) -> Result<LeafFunction> {
    check_p(p)?;
    w.check_tree(tree)?;
    g.check_tree(tree)?;
    if g.d() != w.d() {
        return Err(Error::Dimension {
            expected: w.d(),
            got: g.d(),
        });
    }
    let pp = conjugate(p);
    let roots = w.power(1.0 / p)?;
    let mass = tree.leaf_masses();
    let mut acc = vec![0.0; tree.num_leaves()];
    for q in &family.cubes {
        let red = reducing_from_roots(tree, &roots, p, q);
        let inv = red
            .mat()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular reducing operator".into()))?;
        let avg: f64 = tree
            .leaf_range(q)
            .map(|x| spectral_norm(&(&inv * &roots[x])) * crate::linalg::norm(g.at(x)) * mass[x])
            .sum::<f64>()
            / tree.mu(q);
        let term = avg.powf(pp);
        for x in tree.leaf_range(q) {
            acc[x] += term;
        }
    }
    Ok(LeafFunction::scalar(
        acc.into_iter().map(|v| v.powf(1.0 / pp)).collect(),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NecessityReport {
    pub j: CubeId,
    pub k: CubeId,
    pub p: f64,
    /// c_p^b(J, K)·|𝒲_J 𝒱_K|^p.
    pub lhs: f64,
    /// Norm of T f = ⟨f, h_K̂⟩ h_Ĵ on L^p(W) (exact at p = 2).
    pub shift_norm: f64,
    pub exact: bool,
    /// |(∫h_Ĵ² W)^{1/2} (∫h_K̂² W^{-1})^{1/2}| at p = 2.
    pub closed_form: Option<f64>,
    /// max(1, shift_norm): every shift class contains the Haar projection,
    /// whose weighted norm is at least one.
    pub c_bound: f64,
    /// lhs / c_bound^{3p}.
    pub ratio: f64,
}

/// Rank-one necessity test for a pair with dist(J, K) ≤ N + 2. For n ≥ 2 the
/// caller supplies `nd_floor`, and the Haar system must satisfy
/// |α_R| ≥ nd_floor·√m(R̂)/μ(R) on the relevant cubes.
#[allow(clippy::too_many_arguments)]
pub fn necessity_experiment(
    hs: &Arc<HaarSystem>,
    w: &MatrixWeight,
    p: f64,
    n: u32,
    j: &CubeId,
    k: &CubeId,
    nd_floor: Option<f64>,
    rng: &mut impl Rng,
) -> Result<NecessityReport> {
    check_p(p)?;
    let tree = hs.tree();
    w.check_tree(tree)?;
    let dist = tree.dyadic_distance(j, k)?;
    if dist > n + 2 {
        return Err(Error::Invalid(format!(
            "dist({j}, {k}) = {dist} exceeds N + 2 = {}",
            n + 2
        )));
    }
    let (jh, kh) = match (tree.parent(j), tree.parent(k)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Invalid("J and K must have parents".into())),
    };
    if tree.n() > 1 {
        let floor = nd_floor.ok_or_else(|| {
            Error::Invalid("n ≥ 2 requires a non-degeneracy floor for the Haar coefficients".into())
        })?;
        for (r, rh) in [(j, &jh), (k, &kh)] {
            let a = hs.alphas(rh)[r.offset(tree.n()) as usize].abs();
            if a < floor * hs.m(rh).sqrt() / tree.mu(r) {
                return Err(Error::Invalid(format!("Haar system is degenerate at {r}")));
            }
        }
    }
    let l = tree.common_ancestor(&jh, &kh);
    let s = kh.level - l.level;
    let t = jh.level - l.level;
    let mut shift = HaarShift::new(hs.clone(), s, t);
    shift.set(&l, &kh, &jh, 1.0)?;
    let est = weighted_operator_norm(tree, &WeightedOperator::Shift(&shift), w, p, 16, rng)?;
    let closed_form = if p == 2.0 {
        let mass = tree.leaf_masses();
        let inv = w.powered(-1.0)?;
        let mut a = DMatrix::zeros(w.d(), w.d());
        let mut b = DMatrix::zeros(w.d(), w.d());
        for x in 0..tree.num_leaves() {
            let (hj, hk) = (hs.value_at(&jh, x), hs.value_at(&kh, x));
            a += w.at(x) * (hj * hj * mass[x]);
            b += inv.at(x) * (hk * hk * mass[x]);
        }
        let (a, b) = (psd_sqrt(&a), psd_sqrt(&b));
        Some(spectral_norm(&(a * b)))
    } else {
        None
    };
    let pp = conjugate(p);
    let wj = reducing_from_roots(tree, &w.power(1.0 / p)?, p, j).mat();
    let vk = reducing_from_roots(tree, &w.power(-1.0 / p)?, pp, k).mat();
    let lhs = cpb(hs, p, j, k) * spectral_norm(&(wj * vk)).powf(p);
    let c_bound = est.value.max(1.0);
    Ok(NecessityReport {
        j: *j,
        k: *k,
        p,
        lhs,
        shift_norm: est.value,
        exact: est.exact,
        closed_form,
        c_bound,
        ratio: lhs / c_bound.powf(3.0 * p),
    })
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let ev = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&ev) * eig.eigenvectors.transpose()
}

/// [W]_{A_p}^{1/p} / [W^{-p'/p}]_{A_{p'}}^{1/p'}.
pub fn duality_ratio(tree: &MeasuredTree, w: &MatrixWeight, p: f64) -> Result<f64> {
    let a = ap_constant(tree, w, p)?.value;
    let pp = conjugate(p);
    let b = ap_constant(tree, &w.dual(p)?, pp)?.value;
    Ok(a.powf(1.0 / p) / b.powf(1.0 / pp))
}
