//! Carleson embeddings with a variable weight per cube: compatibility,
//! testing and embedding constants, and the expanding-sum inequality.

use crate::dyadic::{CubeId, MeasuredTree};
use crate::error::{Error, Result};
use crate::linalg::{max_eigenvalue, spectral_norm};
use crate::weights::{conjugate, reducing_table, MatrixWeight};
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A positive scalar weight w_Q on the leaves of every cube Q.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightFamily {
    /// Dense cube index → values on the leaves of that cube, in leaf order.
    pub per_cube: Vec<Vec<f64>>,
    /// Whether ⟨w_Q⟩_Q = 1 has been imposed.
    pub normalized: bool,
}

impl WeightFamily {
    pub fn new(tree: &MeasuredTree, per_cube: Vec<Vec<f64>>) -> Result<Self> {
        if per_cube.len() != tree.num_cubes() {
            return Err(Error::Dimension {
                expected: tree.num_cubes(),
                got: per_cube.len(),
            });
        }
        for q in tree.cubes() {
            let v = &per_cube[tree.index(&q)];
            if v.len() != tree.leaf_range(&q).len() {
                return Err(Error::Dimension {
                    expected: tree.leaf_range(&q).len(),
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(Error::Invalid(format!(
                    "w_Q must be positive and finite on {q}"
                )));
            }
        }
        Ok(WeightFamily {
            per_cube,
            normalized: false,
        })
    }

    pub fn from_fn(tree: &MeasuredTree, mut f: impl FnMut(&CubeId, usize) -> f64) -> Result<Self> {
        let mut per_cube = vec![Vec::new(); tree.num_cubes()];
        for q in tree.cubes() {
            per_cube[tree.index(&q)] = tree.leaf_range(&q).map(|x| f(&q, x)).collect();
        }
        WeightFamily::new(tree, per_cube)
    }

    /// w_Q = w for every Q.
    pub fn constant(tree: &MeasuredTree, w: &[f64]) -> Result<Self> {
        if w.len() != tree.num_leaves() {
            return Err(Error::Dimension {
                expected: tree.num_leaves(),
                got: w.len(),
            });
        }
        WeightFamily::from_fn(tree, |_, x| w[x])
    }

    /// w_Q = |𝒲_Q^{-1} W^{1/p}|^p on Q.
    pub fn from_matrix_weight(tree: &MeasuredTree, w: &MatrixWeight, p: f64) -> Result<Self> {
        let table = reducing_table(tree, w, p)?;
        let roots = w.power(1.0 / p)?;
        let inv: Vec<DMatrix<f64>> = table
            .w_ops
            .iter()
            .map(|m| {
                m.clone()
                    .try_inverse()
                    .ok_or_else(|| Error::Numerical("singular reducing operator".into()))
            })
            .collect::<Result<_>>()?;
        WeightFamily::from_fn(tree, |q, x| {
            spectral_norm(&(&inv[tree.index(q)] * &roots[x])).powf(p)
        })
    }

    /// Independent log-normal-like factors per (Q, x) on top of `base`.
    pub fn adversarial(
        tree: &MeasuredTree,
        base: &[f64],
        spread: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        WeightFamily::from_fn(tree, |_, x| {
            base[x] * (spread * rng.gen_range(-1.0..1.0)).exp()
        })
    }

    pub fn get(&self, tree: &MeasuredTree, q: &CubeId) -> &[f64] {
        &self.per_cube[tree.index(q)]
    }

    /// ⟨w_P⟩_Q for Q ⊆ P.
    pub fn avg(&self, tree: &MeasuredTree, p: &CubeId, q: &CubeId) -> f64 {
        let mass = tree.leaf_masses();
        let off = tree.leaf_range(p).start;
        let wp = self.get(tree, p);
        tree.leaf_range(q)
            .map(|x| wp[x - off] * mass[x])
            .sum::<f64>()
            / tree.mu(q)
    }

    /// w_Q / ⟨w_Q⟩_Q.
    pub fn normalize(&self, tree: &MeasuredTree) -> WeightFamily {
        let per_cube = tree
            .cubes()
            .map(|q| {
                let a = self.avg(tree, &q, &q);
                self.get(tree, &q).iter().map(|v| v / a).collect()
            })
            .collect();
        WeightFamily {
            per_cube,
            normalized: true,
        }
    }

    /// w_Q ↦ c_Q w_Q.
    pub fn rescale(&self, tree: &MeasuredTree, c: &[f64]) -> WeightFamily {
        let per_cube = tree
            .cubes()
            .map(|q| {
                let s = c[tree.index(&q)];
                self.get(tree, &q).iter().map(|v| v * s).collect()
            })
            .collect();
        WeightFamily {
            per_cube,
            normalized: false,
        }
    }
}

/// Nonnegative coefficients α_Q in dense cube order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlesonData {
    pub alpha: Vec<f64>,
}

impl CarlesonData {
    /// Negative entries are rejected: the embedding constants are one-sided.
    pub fn new(tree: &MeasuredTree, alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() != tree.num_cubes() {
            return Err(Error::Dimension {
                expected: tree.num_cubes(),
                got: alpha.len(),
            });
        }
        if alpha.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::Invalid("α_Q must be finite and nonnegative".into()));
        }
        Ok(CarlesonData { alpha })
    }

    pub fn zeros(tree: &MeasuredTree) -> Self {
        CarlesonData {
            alpha: vec![0.0; tree.num_cubes()],
        }
    }

    /// α_Q = μ(Q) on a random subfamily where each cube is kept with probability `density`.
    pub fn random_sparse(tree: &MeasuredTree, density: f64, rng: &mut impl Rng) -> Self {
        let alpha = tree
            .cubes()
            .map(|q| {
                if rng.gen_bool(density) {
                    tree.mu(&q)
                } else {
                    0.0
                }
            })
            .collect();
        CarlesonData { alpha }
    }

    /// α_Q = u_Q μ(Q) with u_Q uniform in [0, 1).
    pub fn random_dense(tree: &MeasuredTree, rng: &mut impl Rng) -> Self {
        let alpha = tree
            .cubes()
            .map(|q| rng.gen_range(0.0..1.0) * tree.mu(&q))
            .collect();
        CarlesonData { alpha }
    }
}

/// A = max over Q ⊆ P of ‖w_P / w_Q‖_{L^∞(Q)} ⟨w_Q⟩_Q / ⟨w_P⟩_Q, with the maximizing (Q, P).
pub fn compatibility_constant(tree: &MeasuredTree, fam: &WeightFamily) -> (f64, (CubeId, CubeId)) {
    let root = tree.root();
    let mut best = (1.0, (root, root));
    for p in tree.cubes() {
        let wp = fam.get(tree, &p);
        let off_p = tree.leaf_range(&p).start;
        for level in p.level..=tree.depth() {
            for q in tree
                .descendants_at(&p, level - p.level)
                .expect("within depth")
            {
                let wq = fam.get(tree, &q);
                let off_q = tree.leaf_range(&q).start;
                let sup = tree
                    .leaf_range(&q)
                    .map(|x| wp[x - off_p] / wq[x - off_q])
                    .fold(0.0, f64::max);
                let v = sup * fam.avg(tree, &q, &q) / fam.avg(tree, &p, &q);
                if v > best.0 {
                    best = (v, (q, p));
                }
            }
        }
    }
    best
}

/// C₂ = max_P (1/(μ(P)⟨w_P⟩_P)) Σ_{Q ⊆ P} ⟨w_P⟩_Q ⟨w_Q⟩_Q^{p−1} α_Q.
pub fn testing_constant_c2(
    tree: &MeasuredTree,
    fam: &WeightFamily,
    data: &CarlesonData,
    p: f64,
) -> Result<f64> {
    check_p(p)?;
    let own: Vec<f64> = tree
        .cubes()
        .map(|q| fam.avg(tree, &q, &q).powf(p - 1.0))
        .collect();
    let mut best: f64 = 0.0;
    for big in tree.cubes() {
        let mut s = 0.0;
        for level in big.level..=tree.depth() {
            for q in tree
                .descendants_at(&big, level - big.level)
                .expect("within depth")
            {
                let a = data.alpha[tree.index(&q)];
                if a != 0.0 {
                    s += fam.avg(tree, &big, &q) * own[tree.index(&q)] * a;
                }
            }
        }
        best = best.max(s / (tree.mu(&big) * fam.avg(tree, &big, &big)));
    }
    Ok(best)
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::Range(format!("exponent p = {p} must lie in (1, ∞)")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum C1Method {
    /// Generalized symmetric eigenproblem; p = 2 only.
    Exact,
    /// Nonnegative power iteration from `starts` starts; a lower bound.
    Ascent { starts: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C1Estimate {
    pub value: f64,
    pub method: C1Method,
}

/// Rows Q of the averaging map f ↦ ⟨w_Q^{1/p'} f⟩_Q.
fn averaging_rows(tree: &MeasuredTree, fam: &WeightFamily, p: f64) -> Vec<(CubeId, Vec<f64>)> {
    let pp = conjugate(p);
    let mass = tree.leaf_masses();
    tree.cubes()
        .map(|q| {
            let r = tree.leaf_range(&q);
            let w = fam.get(tree, &q);
            let row = r
                .clone()
                .map(|x| w[x - r.start].powf(1.0 / pp) * mass[x] / tree.mu(&q))
                .collect();
            (q, row)
        })
        .collect()
}

/// Best C₁ in Σ_Q ⟨w_Q^{1/p'} f⟩_Q^p α_Q ≤ C₁ ‖f‖_p^p.
pub fn embedding_constant_c1(
    tree: &MeasuredTree,
    fam: &WeightFamily,
    data: &CarlesonData,
    p: f64,
    method: C1Method,
) -> Result<C1Estimate> {
    check_p(p)?;
    let rows = averaging_rows(tree, fam, p);
    let n = tree.num_leaves();
    let mass = tree.leaf_masses();
    match method {
        C1Method::Exact => {
            if p != 2.0 {
                return Err(Error::Invalid("the exact C₁ oracle needs p = 2".into()));
            }
            // largest eigenvalue of D^{-1/2} Mᵀ diag(α) M D^{-1/2}
            let mut g = DMatrix::<f64>::zeros(n, n);
            for (q, row) in &rows {
                let a = data.alpha[tree.index(q)];
                if a == 0.0 {
                    continue;
                }
                let r = tree.leaf_range(q);
                for (i, x) in r.clone().enumerate() {
                    for (j, y) in r.clone().enumerate() {
                        g[(x, y)] += a * row[i] * row[j] / (mass[x] * mass[y]).sqrt();
                    }
                }
            }
            Ok(C1Estimate {
                value: max_eigenvalue(&g).max(0.0),
                method,
            })
        }
        C1Method::Ascent { starts, seed } => {
            let mut rng = crate::seed::rng(seed);
            let functional = |f: &[f64]| -> (f64, Vec<f64>) {
                let mut vals = Vec::with_capacity(rows.len());
                let mut total = 0.0;
                for (q, row) in &rows {
                    let r = tree.leaf_range(q);
                    let y: f64 = row.iter().zip(&f[r]).map(|(m, v)| m * v).sum();
                    total += data.alpha[tree.index(q)] * y.powf(p);
                    vals.push(y);
                }
                (total, vals)
            };
            let norm_p =
                |f: &[f64]| -> f64 { f.iter().zip(mass).map(|(v, m)| v.powf(p) * m).sum::<f64>() };
            let mut best: f64 = 0.0;
            for s in 0..starts.max(1) {
                let mut f: Vec<f64> = (0..n)
                    .map(|_| {
                        if s == 0 {
                            1.0
                        } else {
                            rng.gen_range(0.0..1.0) + 1e-3
                        }
                    })
                    .collect();
                for _ in 0..500 {
                    let nf = norm_p(&f);
                    if nf <= 0.0 {
                        break;
                    }
                    let scale = nf.powf(-1.0 / p);
                    f.iter_mut().for_each(|v| *v *= scale);
                    let (val, ys) = functional(&f);
                    let improved = val > best * (1.0 + 1e-13);
                    best = best.max(val);
                    let mut grad = vec![0.0; n];
                    for ((q, row), y) in rows.iter().zip(&ys) {
                        let a = data.alpha[tree.index(q)];
                        if a == 0.0 || *y <= 0.0 {
                            continue;
                        }
                        let c = a * y.powf(p - 1.0);
                        for (m, x) in row.iter().zip(tree.leaf_range(q)) {
                            grad[x] += c * m;
                        }
                    }
                    let next: Vec<f64> = (0..n)
                        .map(|x| (grad[x] / mass[x]).max(0.0).powf(1.0 / (p - 1.0)))
                        .collect();
                    let nn = norm_p(&next);
                    if nn <= 0.0 {
                        break;
                    }
                    let ns = nn.powf(-1.0 / p);
                    let change = next
                        .iter()
                        .zip(&f)
                        .map(|(a, b)| (a * ns - b).abs())
                        .fold(0.0, f64::max);
                    f = next;
                    if change < 1e-13 && !improved {
                        break;
                    }
                }
            }
            Ok(C1Estimate {
                value: best,
                method,
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub p: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    pub c1_method: C1Method,
    /// A^{-(p−1)} C₂ ≤ C₁ (1 + 1e-9).
    pub lower_ok: bool,
    /// C₁ / (A^{1+1/p'} C₂).
    pub upper_ratio: f64,
}

/// Both sides of the two-sided embedding bound. The exact oracle is used at
/// p = 2; otherwise an ascent lower bound, so `lower_ok = false` there may be
/// ascent slack rather than a violation.
pub fn verify_embedding_bounds(
    tree: &MeasuredTree,
    fam: &WeightFamily,
    data: &CarlesonData,
    p: f64,
    seed: u64,
) -> Result<EmbeddingReport> {
    let (a, _) = compatibility_constant(tree, fam);
    let c2 = testing_constant_c2(tree, fam, data, p)?;
    let method = if p == 2.0 {
        C1Method::Exact
    } else {
        C1Method::Ascent { starts: 8, seed }
    };
    let c1 = embedding_constant_c1(tree, fam, data, p, method)?.value;
    let lower = a.powf(-(p - 1.0)) * c2;
    let upper = a.powf(1.0 + 1.0 / conjugate(p)) * c2;
    Ok(EmbeddingReport {
        p,
        a,
        c2,
        c1,
        c1_method: method,
        lower_ok: lower <= c1 * (1.0 + 1e-9) + 1e-300,
        upper_ratio: if upper > 0.0 { c1 / upper } else { 0.0 },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalCarleson {
    /// max_P (1/w(P)) Σ_{Q ⊆ P} ⟨w⟩_Q^p α_Q.
    pub testing: f64,
    /// Best constant in Σ_Q ⟨g w⟩_Q^p α_Q ≤ C ‖g‖^p_{L^p(w)}; exact at p = 2 only.
    pub embedding: Option<f64>,
}

/// The single-weight Carleson embedding, written in the L^p(w) form.
pub fn classical_carleson(
    tree: &MeasuredTree,
    w: &[f64],
    data: &CarlesonData,
    p: f64,
) -> Result<ClassicalCarleson> {
    check_p(p)?;
    let mass = tree.leaf_masses();
    let wavg: Vec<f64> = tree
        .cubes()
        .map(|q| tree.leaf_range(&q).map(|x| w[x] * mass[x]).sum::<f64>() / tree.mu(&q))
        .collect();
    let mut testing: f64 = 0.0;
    for big in tree.cubes() {
        let mut s = 0.0;
        for q in tree.cubes().filter(|q| tree.contains(&big, q)) {
            s += wavg[tree.index(&q)].powf(p) * data.alpha[tree.index(&q)];
        }
        testing = testing.max(s / (wavg[tree.index(&big)] * tree.mu(&big)));
    }
    let embedding = if p == 2.0 {
        let n = tree.num_leaves();
        // g ↦ ⟨g w⟩_Q on L²(w): symmetrize with (w μ)^{1/2}
        let mut g = DMatrix::<f64>::zeros(n, n);
        for q in tree.cubes() {
            let a = data.alpha[tree.index(&q)];
            if a == 0.0 {
                continue;
            }
            let mq = tree.mu(&q);
            let r = tree.leaf_range(&q);
            for x in r.clone() {
                let cx = w[x] * mass[x] / mq / (w[x] * mass[x]).sqrt();
                for y in r.clone() {
                    let cy = w[y] * mass[y] / mq / (w[y] * mass[y]).sqrt();
                    g[(x, y)] += a * cx * cy;
                }
            }
        }
        Some(max_eigenvalue(&g).max(0.0))
    } else {
        None
    };
    Ok(ClassicalCarleson { testing, embedding })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpandingSum {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

/// (Σ a_i)^p against (m+1) Σ_{i₁..i_m} a_{i₁}⋯a_{i_m} (Σ_{j ≤ min i} a_j)^γ with
/// m = ⌊p⌋, γ = p − m, by brute force over at most 12 terms.
pub fn expanding_sum_check(a: &[f64], p: f64) -> Result<ExpandingSum> {
    check_p(p)?;
    if a.len() > 12 {
        return Err(Error::Range(format!(
            "{} terms exceed the brute-force limit of 12",
            a.len()
        )));
    }
    if a.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Invalid("terms must be nonnegative".into()));
    }
    let m = p.floor() as usize;
    let gamma = p - m as f64;
    let n = a.len();
    if (n as f64).powi(m as i32) > 1e7 {
        return Err(Error::Range("brute-force expansion too large".into()));
    }
    let prefix: Vec<f64> = a
        .iter()
        .scan(0.0, |s, v| {
            *s += v;
            Some(*s)
        })
        .collect();
    let lhs = a.iter().sum::<f64>().powf(p);
    let mut rhs = 0.0;
    if n > 0 {
        let mut idx = vec![0usize; m];
        loop {
            let prod: f64 = idx.iter().map(|&i| a[i]).product();
            if prod != 0.0 {
                let lo = *idx.iter().min().expect("m ≥ 1");
                rhs += prod * prefix[lo].powf(gamma);
            }
            let mut k = 0;
            while k < m {
                idx[k] += 1;
                if idx[k] < n {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == m {
                break;
            }
        }
    }
    rhs *= (m + 1) as f64;
    Ok(ExpandingSum {
        lhs,
        rhs,
        ok: lhs <= rhs * (1.0 + 1e-12),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::MeasurePreset;
    use crate::weights::{random_weight, WeightPreset};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> crate::seed::Rng {
        crate::seed::Rng::seed_from_u64(seed)
    }

    fn tree(depth: u32, seed: u64) -> MeasuredTree {
        MeasuredTree::build(
            1,
            depth,
            &MeasurePreset::RandomBalanced { bound: 4.0, seed },
        )
        .unwrap()
    }

    fn random_w(n: usize, r: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| (r.gen_range(-2.0..2.0f64)).exp()).collect()
    }

    #[test]
    fn constant_family_has_unit_compatibility() {
        let t = tree(4, 1);
        let w = random_w(16, &mut rng(1));
        let fam = WeightFamily::constant(&t, &w).unwrap();
        assert!((compatibility_constant(&t, &fam).0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_leaf_compatibility() {
        let t = MeasuredTree::build(1, 1, &MeasurePreset::Lebesgue).unwrap();
        // w_root = (1, 9); w_leaf = 1 on both leaves
        let fam = WeightFamily::new(&t, vec![vec![1.0, 9.0], vec![1.0], vec![1.0]]).unwrap();
        // Q = right leaf, P = root: sup 9 · 1 / 9 = 1; Q = left leaf: 1 · 1 / 1 = 1
        assert!((compatibility_constant(&t, &fam).0 - 1.0).abs() < 1e-12);
        let fam = WeightFamily::new(&t, vec![vec![1.0, 9.0], vec![1.0], vec![2.0]]).unwrap();
        // right leaf: (9/2) · 2 / 9 = 1 still; the family is scale invariant leafwise
        assert!((compatibility_constant(&t, &fam).0 - 1.0).abs() < 1e-12);
        let t2 = MeasuredTree::build(1, 2, &MeasurePreset::Lebesgue).unwrap();
        // w_P spikes on a leaf where w_Q is flat: Q = left half (leaves 0, 1), P = root
        let mut per = vec![vec![]; 7];
        per[t2.index(&t2.root())] = vec![1.0, 9.0, 1.0, 1.0];
        for q in t2.cubes().filter(|q| q.level > 0) {
            per[t2.index(&q)] = vec![1.0; t2.leaf_range(&q).len()];
        }
        let fam = WeightFamily::new(&t2, per).unwrap();
        // Q = left half: sup 9 · 1 / 5 = 1.8; leaf 1: 9 · 1 / 9 = 1
        assert!((compatibility_constant(&t2, &fam).0 - 1.8).abs() < 1e-12);
    }

    #[test]
    fn c2_examples() {
        let t = MeasuredTree::build(1, 3, &MeasurePreset::Lebesgue).unwrap();
        let ones = WeightFamily::constant(&t, &[1.0; 8]).unwrap();
        assert_eq!(
            testing_constant_c2(&t, &ones, &CarlesonData::zeros(&t), 2.0).unwrap(),
            0.0
        );
        // α_Q = μ(Q) on the disjoint level-2 cubes
        let alpha = t
            .cubes()
            .map(|q| if q.level == 2 { t.mu(&q) } else { 0.0 })
            .collect();
        let data = CarlesonData::new(&t, alpha).unwrap();
        for p in [1.5, 2.0, 3.0] {
            assert!((testing_constant_c2(&t, &ones, &data, p).unwrap() - 1.0).abs() < 1e-12);
        }
        // single α at the root: ⟨w⟩^{p−1} α / μ
        let w = [1.0, 2.0, 3.0, 4.0, 1.0, 1.0, 1.0, 1.0];
        let fam = WeightFamily::constant(&t, &w).unwrap();
        let mut alpha = vec![0.0; t.num_cubes()];
        alpha[0] = 0.7;
        let data = CarlesonData::new(&t, alpha).unwrap();
        let wr = 14.0 / 8.0;
        let c2 = testing_constant_c2(&t, &fam, &data, 3.0).unwrap();
        assert!((c2 - wr * wr * 0.7).abs() < 1e-12);
        assert!(CarlesonData::new(&t, vec![-1.0; 15]).is_err());
    }

    #[test]
    fn c1_root_only_equals_c2() {
        let t = MeasuredTree::from_morton(1, 1, vec![2.5, 1.5]).unwrap();
        let fam = WeightFamily::constant(&t, &[1.0, 1.0]).unwrap();
        let data = CarlesonData::new(&t, vec![0.8, 0.0, 0.0]).unwrap();
        let c1 = embedding_constant_c1(&t, &fam, &data, 2.0, C1Method::Exact)
            .unwrap()
            .value;
        let c2 = testing_constant_c2(&t, &fam, &data, 2.0).unwrap();
        assert!((c1 - c2).abs() < 1e-12);
        assert!(embedding_constant_c1(&t, &fam, &data, 3.0, C1Method::Exact).is_err());
    }

    #[test]
    fn classical_full_tree_ratio() {
        for depth in 2..=6 {
            let t = MeasuredTree::build(1, depth, &MeasurePreset::Lebesgue).unwrap();
            let fam = WeightFamily::constant(&t, &vec![1.0; t.num_leaves()]).unwrap();
            let data = CarlesonData::new(&t, t.cubes().map(|q| t.mu(&q)).collect()).unwrap();
            let r = verify_embedding_bounds(&t, &fam, &data, 2.0, 0).unwrap();
            let ratio = r.c1 / r.c2;
            assert!((1.0 - 1e-12..=4.0).contains(&ratio), "{ratio}");
            assert!(r.lower_ok && r.upper_ratio <= 4.0);
        }
    }

    #[test]
    fn ascent_calibrates_against_exact() {
        for seed in 0..5 {
            let t = tree(5, seed);
            let mut r = rng(seed);
            let fam = WeightFamily::adversarial(&t, &random_w(32, &mut r), 1.0, &mut r).unwrap();
            let data = CarlesonData::random_dense(&t, &mut r);
            let exact = embedding_constant_c1(&t, &fam, &data, 2.0, C1Method::Exact)
                .unwrap()
                .value;
            let asc =
                embedding_constant_c1(&t, &fam, &data, 2.0, C1Method::Ascent { starts: 4, seed })
                    .unwrap()
                    .value;
            assert!(asc <= exact * (1.0 + 1e-9));
            assert!(asc >= 0.99 * exact);
        }
    }

    #[test]
    fn constant_family_matches_classical() {
        for seed in 0..5 {
            let t = tree(5, seed);
            let mut r = rng(seed + 100);
            let w = random_w(32, &mut r);
            let fam = WeightFamily::constant(&t, &w).unwrap();
            let data = CarlesonData::random_sparse(&t, 0.3, &mut r);
            for p in [1.5, 2.0, 3.0] {
                let cl = classical_carleson(&t, &w, &data, p).unwrap();
                let c2 = testing_constant_c2(&t, &fam, &data, p).unwrap();
                assert!((c2 - cl.testing).abs() <= 1e-10 * cl.testing.max(1e-300));
                if p == 2.0 {
                    let c1 = embedding_constant_c1(&t, &fam, &data, p, C1Method::Exact)
                        .unwrap()
                        .value;
                    let e = cl.embedding.unwrap();
                    assert!((c1 - e).abs() <= 1e-10 * e);
                }
            }
        }
    }

    #[test]
    fn matrix_weight_family_bounds() {
        let t = tree(4, 7);
        let w = random_weight(
            &t,
            2,
            &WeightPreset::Independent { kappa_max: 100.0 },
            &mut rng(7),
        );
        let fam = WeightFamily::from_matrix_weight(&t, &w, 2.0).unwrap();
        let (a, _) = compatibility_constant(&t, &fam);
        assert!(a >= 1.0);
        let data = CarlesonData::random_sparse(&t, 0.5, &mut rng(8));
        let r = verify_embedding_bounds(&t, &fam, &data, 2.0, 0).unwrap();
        assert!(r.lower_ok);
    }

    #[test]
    fn expanding_sum_examples() {
        let r = expanding_sum_check(&[1.0, 1.0], 2.0).unwrap();
        assert_eq!((r.lhs, r.rhs), (4.0, 12.0));
        let r = expanding_sum_check(&[3.0], 2.5).unwrap();
        assert!((r.lhs - 3f64.powf(2.5)).abs() < 1e-12);
        assert!((r.rhs - 3.0 * 3f64.powf(2.5)).abs() < 1e-9);
        assert!(r.ok);
        assert!(expanding_sum_check(&[1.0; 13], 2.0).is_err());
        assert!(expanding_sum_check(&[1.0, -1.0], 2.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn expanding_sum_holds(a in proptest::collection::vec(0.0f64..10.0, 1..=12), k in 0usize..4) {
            let p = [1.5, 2.0, 2.7, 3.0][k];
            prop_assert!(expanding_sum_check(&a, p).unwrap().ok);
        }

        #[test]
        fn scale_invariance(seed in any::<u64>()) {
            let t = tree(4, seed);
            let mut r = rng(seed);
            let fam = WeightFamily::adversarial(&t, &random_w(16, &mut r), 0.8, &mut r).unwrap();
            let data = CarlesonData::random_dense(&t, &mut r);
            let c: Vec<f64> = (0..t.num_cubes()).map(|_| r.gen_range(0.1..10.0)).collect();
            let p = 2.0;
            let scaled = fam.rescale(&t, &c);
            // α_Q absorbs c_Q^{p−1}
            let alpha2 = CarlesonData::new(&t, data.alpha.iter().zip(&c).map(|(a, c)| a / c.powf(p - 1.0)).collect()).unwrap();
            let r1 = verify_embedding_bounds(&t, &fam, &data, p, 0).unwrap();
            let r2 = verify_embedding_bounds(&t, &scaled, &alpha2, p, 0).unwrap();
            prop_assert!((r1.a - r2.a).abs() <= 1e-10 * r1.a);
            prop_assert!((r1.c1 - r2.c1).abs() <= 1e-10 * r1.c1);
            prop_assert!((r1.c2 - r2.c2).abs() <= 1e-10 * r1.c2);
        }

        #[test]
        fn monotone_in_alpha(seed in any::<u64>()) {
            let t = tree(4, seed);
            let mut r = rng(seed);
            let fam = WeightFamily::adversarial(&t, &random_w(16, &mut r), 0.5, &mut r).unwrap();
            let data = CarlesonData::random_dense(&t, &mut r);
            let mut bigger = data.clone();
            let i = r.gen_range(0..t.num_cubes());
            bigger.alpha[i] += r.gen_range(0.0..1.0);
            let c2a = testing_constant_c2(&t, &fam, &data, 2.0).unwrap();
            let c2b = testing_constant_c2(&t, &fam, &bigger, 2.0).unwrap();
            prop_assert!(c2b >= c2a * (1.0 - 1e-12));
            let c1a = embedding_constant_c1(&t, &fam, &data, 2.0, C1Method::Exact).unwrap().value;
            let c1b = embedding_constant_c1(&t, &fam, &bigger, 2.0, C1Method::Exact).unwrap().value;
            prop_assert!(c1b >= c1a * (1.0 - 1e-10));
        }
    }
}
