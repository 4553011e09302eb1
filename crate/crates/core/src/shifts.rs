//! Haar shifts of complexity (s,t), martingale multipliers, kernel size
//! checks, residue splitting, the nonhomogeneous Calderón–Zygmund
//! decomposition and empirical weak-(1,1) constants.

use crate::dyadic::{CubeId, MeasuredTree};
use crate::error::{Error, Result};
pub use crate::function::LeafFunction;
use crate::haar::HaarSystem;
use crate::linalg::norm;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

/// One coefficient c^Q_{J,K}, as stored in shift files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftEntry {
    #[serde(rename = "Q")]
    pub q: CubeId,
    #[serde(rename = "J")]
    pub j: CubeId,
    #[serde(rename = "K")]
    pub k: CubeId,
    pub c: f64,
}

/// T f = Σ_Q Σ_{J ∈ 𝒟_s(Q), K ∈ 𝒟_t(Q)} c^Q_{J,K} ⟨f, h_J⟩ h_K.
#[derive(Clone, Debug)]
pub struct HaarShift {
    s: u32,
    t: u32,
    /// Keyed by dense cube indices (Q, J, K).
    coeffs: BTreeMap<(usize, usize, usize), f64>,
    haar: Arc<HaarSystem>,
}

impl HaarShift {
    pub fn new(haar: Arc<HaarSystem>, s: u32, t: u32) -> Self {
        HaarShift {
            s,
            t,
            coeffs: BTreeMap::new(),
            haar,
        }
    }

    /// Shift with every structurally valid coefficient equal to `c`, restricted
    /// to pairs where both h_J and h_K are nonzero.
    pub fn constant(haar: Arc<HaarSystem>, s: u32, t: u32, c: f64) -> Result<Self> {
        let mut sh = HaarShift::new(haar, s, t);
        let keys = sh.valid_keys();
        for (q, j, k) in keys {
            sh.set(&q, &j, &k, c)?;
        }
        Ok(sh)
    }

    pub fn from_entries(
        haar: Arc<HaarSystem>,
        s: u32,
        t: u32,
        entries: &[ShiftEntry],
    ) -> Result<Self> {
        let mut sh = HaarShift::new(haar, s, t);
        for e in entries {
            sh.set(&e.q, &e.j, &e.k, e.c)?;
        }
        Ok(sh)
    }

    /// Reads a JSON list of {Q, J, K, c}. The complexity is taken from the
    /// entries, or `default` when the list is empty.
    pub fn from_json(haar: Arc<HaarSystem>, json: &str, default: (u32, u32)) -> Result<Self> {
        let entries: Vec<ShiftEntry> =
            serde_json::from_str(json).map_err(|e| Error::Invalid(format!("shift file: {e}")))?;
        let (s, t) = match entries.first() {
            Some(e) if e.j.level >= e.q.level && e.k.level >= e.q.level => {
                (e.j.level - e.q.level, e.k.level - e.q.level)
            }
            Some(_) => return Err(Error::Structure("J and K must lie below Q".into())),
            None => default,
        };
        HaarShift::from_entries(haar, s, t, &entries)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries()).expect("entries serialize")
    }

    pub fn s(&self) -> u32 {
        self.s
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn haar(&self) -> &HaarSystem {
        &self.haar
    }

    pub fn haar_arc(&self) -> &Arc<HaarSystem> {
        &self.haar
    }

    pub fn tree(&self) -> &MeasuredTree {
        self.haar.tree()
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Sets c^Q_{J,K}; zero removes the entry.
    pub fn set(&mut self, q: &CubeId, j: &CubeId, k: &CubeId, c: f64) -> Result<()> {
        let tree = self.haar.tree();
        for cube in [q, j, k] {
            tree.validate(cube)?;
        }
        if j.level != q.level + self.s || k.level != q.level + self.t {
            return Err(Error::Structure(format!(
                "({j}, {k}) are not at generations ({}, {}) below {q}",
                self.s, self.t
            )));
        }
        if !tree.contains(q, j) || !tree.contains(q, k) {
            return Err(Error::Structure(format!(
                "({j}, {k}) do not lie inside {q}"
            )));
        }
        if !c.is_finite() || c.abs() > 1.0 {
            return Err(Error::Range(format!("|c| = {} exceeds 1", c.abs())));
        }
        let key = (tree.index(q), tree.index(j), tree.index(k));
        if c == 0.0 {
            self.coeffs.remove(&key);
        } else {
            self.coeffs.insert(key, c);
        }
        Ok(())
    }

    pub fn get(&self, q: &CubeId, j: &CubeId, k: &CubeId) -> f64 {
        let tree = self.haar.tree();
        self.coeffs
            .get(&(tree.index(q), tree.index(j), tree.index(k)))
            .copied()
            .unwrap_or(0.0)
    }

    /// (Q, J, K) with Q + max(s,t) above the leaves, so that h_J and h_K can be nonzero.
    pub fn valid_keys(&self) -> Vec<(CubeId, CubeId, CubeId)> {
        let tree = self.haar.tree();
        let mut out = Vec::new();
        let reach = self.s.max(self.t);
        if reach + 1 > tree.depth() {
            return out;
        }
        for level in 0..tree.depth() - reach {
            for q in tree.level_cubes(level) {
                let js = tree.descendants_at(&q, self.s).expect("depth checked");
                let ks = tree.descendants_at(&q, self.t).expect("depth checked");
                for j in js.iter().filter(|j| self.haar.is_nonzero(j)) {
                    for k in ks.iter().filter(|k| self.haar.is_nonzero(k)) {
                        out.push((q, *j, *k));
                    }
                }
            }
        }
        out
    }

    pub fn entries(&self) -> Vec<ShiftEntry> {
        let tree = self.haar.tree();
        self.coeffs
            .iter()
            .map(|(&(q, j, k), &c)| ShiftEntry {
                q: tree.cube_at(q),
                j: tree.cube_at(j),
                k: tree.cube_at(k),
                c,
            })
            .collect()
    }

    /// Raw entries by dense index.
    pub fn coefficients(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        self.coeffs.iter().map(|(&(q, j, k), &c)| (q, j, k, c))
    }

    /// T* with the roles of J and K exchanged.
    pub fn adjoint(&self) -> HaarShift {
        let coeffs = self
            .coeffs
            .iter()
            .map(|(&(q, j, k), &c)| ((q, k, j), c))
            .collect();
        HaarShift {
            s: self.t,
            t: self.s,
            coeffs,
            haar: self.haar.clone(),
        }
    }

    /// Largest |c^Q_{J,K}|.
    pub fn sup_coefficient(&self) -> f64 {
        self.coeffs.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    /// Smallest |c^Q_{J,K}| over the valid keys; zero when any key is missing.
    pub fn inf_coefficient(&self) -> f64 {
        let tree = self.haar.tree();
        self.valid_keys()
            .iter()
            .map(|(q, j, k)| {
                self.coeffs
                    .get(&(tree.index(q), tree.index(j), tree.index(k)))
                    .map_or(0.0, |c| c.abs())
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Rescales the coefficients of each Q so that ‖K_Q‖_∞ ≤ c/μ(Q).
    pub fn normalize_l1(&mut self, c: f64) {
        let tree = self.haar.tree_arc().clone();
        let norms = kernel_sup_norms(self);
        for (q, k) in norms {
            let target = c / tree.mu(&q);
            if k > target {
                let factor = target / k;
                let qi = tree.index(&q);
                for ((kq, _, _), v) in self.coeffs.iter_mut() {
                    if *kq == qi {
                        *v *= factor;
                    }
                }
            }
        }
    }

    /// Same shift restricted to the cubes Q selected by `keep`.
    pub fn filter_cubes(&self, mut keep: impl FnMut(&CubeId) -> bool) -> HaarShift {
        let tree = self.haar.tree();
        let coeffs = self
            .coeffs
            .iter()
            .filter(|(&(q, _, _), _)| keep(&tree.cube_at(q)))
            .map(|(k, c)| (*k, *c))
            .collect();
        HaarShift {
            s: self.s,
            t: self.t,
            coeffs,
            haar: self.haar.clone(),
        }
    }
}

/// Coefficient distribution for [`random_shift`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CoefficientLaw {
    /// Uniform in [−1, 1].
    Uniform,
    /// Uniform magnitude in [δ, 1] with a random sign, so inf |c| ≥ δ.
    NonDegenerate { delta: f64 },
    /// ±1 with equal probability.
    Signs,
}

pub fn random_shift(
    haar: Arc<HaarSystem>,
    s: u32,
    t: u32,
    law: CoefficientLaw,
    rng: &mut impl Rng,
) -> Result<HaarShift> {
    if let CoefficientLaw::NonDegenerate { delta } = law {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::Range(format!("floor δ = {delta} outside (0, 1]")));
        }
    }
    let mut sh = HaarShift::new(haar, s, t);
    for (q, j, k) in sh.valid_keys() {
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let c = match law {
            CoefficientLaw::Uniform => rng.gen_range(-1.0..=1.0),
            CoefficientLaw::NonDegenerate { delta } => sign * rng.gen_range(delta..=1.0),
            CoefficientLaw::Signs => sign,
        };
        sh.set(&q, &j, &k, c)?;
    }
    Ok(sh)
}

/// ⟨f, h_Q⟩ for every cube, `d` entries per cube in dense order.
pub fn haar_coefficients(hs: &HaarSystem, f: &LeafFunction) -> Result<Vec<f64>> {
    let tree = hs.tree();
    f.check_tree(tree)?;
    let d = f.d();
    let integrals = cube_integrals(tree, f);
    let k = tree.num_children();
    let mut out = vec![0.0; tree.num_cubes() * d];
    for q in tree.cubes().filter(|q| !tree.is_leaf(q)) {
        let qi = tree.index(&q);
        let a = hs.alphas_idx(qi);
        if a.iter().all(|x| *x == 0.0) {
            continue;
        }
        for (o, child) in tree.children(&q).iter().enumerate().take(k) {
            let ci = tree.index(child);
            for i in 0..d {
                out[qi * d + i] += a[o] * integrals[ci * d + i];
            }
        }
    }
    Ok(out)
}

/// ∫_Q f dμ for every cube, `d` entries per cube.
pub fn cube_integrals(tree: &MeasuredTree, f: &LeafFunction) -> Vec<f64> {
    let d = f.d();
    let mut out = vec![0.0; tree.num_cubes() * d];
    let mass = tree.leaf_masses();
    let base = tree.index(&tree.leaf_cube(0));
    for x in 0..tree.num_leaves() {
        for i in 0..d {
            out[(base + x) * d + i] = f.at(x)[i] * mass[x];
        }
    }
    for level in (0..tree.depth()).rev() {
        for q in tree.level_cubes(level) {
            let qi = tree.index(&q);
            for c in tree.children(&q) {
                let ci = tree.index(&c);
                for i in 0..d {
                    out[qi * d + i] += out[ci * d + i];
                }
            }
        }
    }
    out
}

/// ⟨f⟩_Q for every cube.
pub fn cube_averages(tree: &MeasuredTree, f: &LeafFunction) -> Vec<f64> {
    let d = f.d();
    let mut out = cube_integrals(tree, f);
    for (qi, m) in tree.mu_all().iter().enumerate() {
        for i in 0..d {
            out[qi * d + i] /= m;
        }
    }
    out
}

/// Σ_K b_K h_K evaluated leafwise from per-cube coefficients.
pub fn synthesize(hs: &HaarSystem, coeffs: &[f64], d: usize) -> LeafFunction {
    let tree = hs.tree();
    let mut acc = vec![0.0; tree.num_cubes() * d];
    for level in 0..tree.depth() {
        for q in tree.level_cubes(level) {
            let qi = tree.index(&q);
            let a = hs.alphas_idx(qi);
            for (o, c) in tree.children(&q).iter().enumerate() {
                let ci = tree.index(c);
                for i in 0..d {
                    acc[ci * d + i] = acc[qi * d + i] + a[o] * coeffs[qi * d + i];
                }
            }
        }
    }
    let base = tree.index(&tree.leaf_cube(0));
    LeafFunction::new(d, acc[base * d..].to_vec()).expect("finite synthesis")
}

/// Output coefficients b_K = Σ c^Q_{J,K} ⟨f, h_J⟩.
pub fn shift_output_coefficients(t: &HaarShift, a: &[f64], d: usize) -> Vec<f64> {
    let mut b = vec![0.0; t.tree().num_cubes() * d];
    for (_, j, k, c) in t.coefficients() {
        for i in 0..d {
            b[k * d + i] += c * a[j * d + i];
        }
    }
    b
}

/// Tf, componentwise on vector-valued f.
pub fn apply_shift(t: &HaarShift, f: &LeafFunction) -> Result<LeafFunction> {
    let a = haar_coefficients(&t.haar, f)?;
    let b = shift_output_coefficients(t, &a, f.d());
    Ok(synthesize(&t.haar, &b, f.d()))
}

/// σ_Q ∈ {±1} for each non-leaf cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleMultiplier {
    /// Dense cube order; entries for leaves are ignored.
    pub sigma: Vec<i8>,
}

impl MartingaleMultiplier {
    pub fn new(tree: &MeasuredTree, sigma: Vec<i8>) -> Result<Self> {
        if sigma.len() != tree.num_cubes() {
            return Err(Error::Dimension {
                expected: tree.num_cubes(),
                got: sigma.len(),
            });
        }
        if sigma.iter().any(|s| *s != 1 && *s != -1) {
            return Err(Error::Invalid("σ values must be ±1".into()));
        }
        Ok(MartingaleMultiplier { sigma })
    }

    pub fn constant(tree: &MeasuredTree, s: i8) -> Result<Self> {
        MartingaleMultiplier::new(tree, vec![s; tree.num_cubes()])
    }

    pub fn random(tree: &MeasuredTree, rng: &mut impl Rng) -> Self {
        let sigma = (0..tree.num_cubes())
            .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
            .collect();
        MartingaleMultiplier { sigma }
    }
}

/// T_σ f = Σ_Q σ_Q Δ_Q f.
pub fn apply_multiplier(
    tree: &MeasuredTree,
    sigma: &MartingaleMultiplier,
    f: &LeafFunction,
) -> Result<LeafFunction> {
    f.check_tree(tree)?;
    if sigma.sigma.len() != tree.num_cubes() {
        return Err(Error::Structure("multiplier built for another tree".into()));
    }
    let d = f.d();
    let avg = cube_averages(tree, f);
    let mut acc = vec![0.0; tree.num_cubes() * d];
    for level in 0..tree.depth() {
        for q in tree.level_cubes(level) {
            let qi = tree.index(&q);
            let s = sigma.sigma[qi] as f64;
            for c in tree.children(&q) {
                let ci = tree.index(&c);
                for i in 0..d {
                    acc[ci * d + i] = acc[qi * d + i] + s * (avg[ci * d + i] - avg[qi * d + i]);
                }
            }
        }
    }
    let base = tree.index(&tree.leaf_cube(0));
    LeafFunction::new(d, acc[base * d..].to_vec())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L1NormalizedReport {
    /// max_Q ‖K_Q‖_∞ μ(Q) ≤ c.
    pub verdict: bool,
    pub worst_cube: Option<CubeId>,
    /// max_Q ‖K_Q‖_∞ μ(Q).
    pub achieved: f64,
}

/// ‖K_Q‖_∞ for K_Q(x,y) = Σ c^Q_{J,K} h_J(y) h_K(x), per cube Q with coefficients.
pub fn kernel_sup_norms(t: &HaarShift) -> BTreeMap<CubeId, f64> {
    let tree = t.tree();
    let hs = t.haar();
    let k_children = tree.num_children();
    let mut by_q: BTreeMap<usize, Vec<(usize, usize, f64)>> = BTreeMap::new();
    for (q, j, k, c) in t.coefficients() {
        by_q.entry(q).or_default().push((j, k, c));
    }
    let mut out = BTreeMap::new();
    for (qi, entries) in by_q {
        // K_Q is constant on (child of J) × (child of K) cells
        let mut ks: Vec<usize> = entries.iter().map(|e| e.1).collect();
        ks.sort_unstable();
        ks.dedup();
        let mut js: Vec<usize> = entries.iter().map(|e| e.0).collect();
        js.sort_unstable();
        js.dedup();
        let mut best: f64 = 0.0;
        for &j in &js {
            let aj = hs.alphas_idx(j);
            for hy in aj.iter().take(k_children) {
                if *hy == 0.0 {
                    continue;
                }
                // w_K(y) = Σ_J c h_J(y) restricted to this J cell
                for &k in &ks {
                    let w: f64 = entries
                        .iter()
                        .filter(|e| e.0 == j && e.1 == k)
                        .map(|e| e.2 * hy)
                        .sum();
                    if w == 0.0 {
                        continue;
                    }
                    let ak = hs.alphas_idx(k);
                    let amax = ak.iter().fold(0.0f64, |a, x| a.max(x.abs()));
                    best = best.max(w.abs() * amax);
                }
            }
        }
        out.insert(tree.cube_at(qi), best);
    }
    out
}

pub fn is_l1_normalized(t: &HaarShift, c: f64) -> L1NormalizedReport {
    let tree = t.tree();
    let mut achieved: f64 = 0.0;
    let mut worst = None;
    for (q, k) in kernel_sup_norms(t) {
        let v = k * tree.mu(&q);
        if v > achieved {
            achieved = v;
            worst = Some(q);
        }
    }
    L1NormalizedReport {
        verdict: achieved <= c * (1.0 + 1e-12),
        worst_cube: worst,
        achieved,
    }
}

/// Splits T by the level of Q modulo t+1; entry k holds the cubes with level ≡ k.
pub fn t_separated_split(t: &HaarShift) -> Vec<HaarShift> {
    let period = t.t + 1;
    (0..period)
        .map(|k| t.filter_cubes(|q| q.level % period == k))
        .collect()
}

/// One piece b_k = f·1_{Q_k} − ⟨f·1_{Q_k}⟩_{Q̂_k} 1_{Q̂_k}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BadPart {
    pub cube: CubeId,
    /// Q̂_k: the parent, or the root itself when Q_k is the root.
    pub parent: CubeId,
    /// ⟨f·1_{Q_k}⟩_{Q̂_k}.
    pub mean: f64,
    /// ‖b_k‖_{L¹(μ)}.
    pub l1: f64,
    /// |∫ b_k dμ| relative to ∫_{Q_k}|f| dμ.
    pub mean_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CzDecomposition {
    pub lambda: f64,
    pub stopping_cubes: Vec<CubeId>,
    pub g: LeafFunction,
    pub b: LeafFunction,
    pub b_parts: Vec<BadPart>,
    /// ‖g‖_p^p / (λ^{p−1}‖f‖₁) for p = 2 and p = 4.
    pub g_lp_ratio: [f64; 2],
    /// ‖g‖_{BMO(μ)} / λ with the oscillation taken around ⟨g⟩_{Q̂}.
    pub g_bmo_ratio: f64,
    /// Σ_k ‖b_k‖₁ / ‖f‖₁.
    pub kappa: f64,
    /// max |f − (g + b)| over leaves.
    pub reconstruction_error: f64,
}

impl CzDecomposition {
    /// b_k as a full leaf function.
    pub fn b_part(&self, tree: &MeasuredTree, f: &LeafFunction, k: usize) -> LeafFunction {
        let part = &self.b_parts[k];
        let mut out = LeafFunction::zeros(tree.num_leaves(), 1);
        for x in tree.leaf_range(&part.parent) {
            out.at_mut(x)[0] = -part.mean;
        }
        for x in tree.leaf_range(&part.cube) {
            out.at_mut(x)[0] += f.at(x)[0];
        }
        out
    }
}

pub fn cz_decompose(tree: &MeasuredTree, f: &LeafFunction, lambda: f64) -> Result<CzDecomposition> {
    if !(lambda > 0.0) {
        return Err(Error::Range(format!("λ = {lambda} must be positive")));
    }
    if f.d() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: f.d(),
        });
    }
    f.check_tree(tree)?;
    let abs = LeafFunction::scalar(f.values().iter().map(|v| v.abs()).collect());
    let abs_avg = cube_averages(tree, &abs);
    let integrals = cube_integrals(tree, f);
    let abs_int = cube_integrals(tree, &abs);
    // maximal cubes with ⟨|f|⟩_Q > λ, found top-down
    let mut stopping = Vec::new();
    let mut stack = vec![tree.root()];
    while let Some(q) = stack.pop() {
        if abs_avg[tree.index(&q)] > lambda {
            stopping.push(q);
        } else {
            stack.extend(tree.children(&q));
        }
    }
    stopping.sort();
    let mass = tree.leaf_masses();
    let mut b = LeafFunction::zeros(tree.num_leaves(), 1);
    let mut parts = Vec::with_capacity(stopping.len());
    for q in &stopping {
        let parent = tree.parent(q).unwrap_or(*q);
        let mean = integrals[tree.index(q)] / tree.mu(&parent);
        let mut l1 = 0.0;
        let mut total = 0.0;
        for x in tree.leaf_range(&parent) {
            let inside = tree.leaf_range(q).contains(&x);
            let v = if inside { f.at(x)[0] } else { 0.0 } - mean;
            b.at_mut(x)[0] += v;
            l1 += v.abs() * mass[x];
            total += v * mass[x];
        }
        let scale = abs_int[tree.index(q)].max(f64::MIN_POSITIVE);
        parts.push(BadPart {
            cube: *q,
            parent,
            mean,
            l1,
            mean_error: total.abs() / scale,
        });
    }
    let g = f.combine(1.0, &b, -1.0);
    let reconstruction_error = (0..tree.num_leaves())
        .map(|x| (f.at(x)[0] - (g.at(x)[0] + b.at(x)[0])).abs())
        .fold(0.0, f64::max);
    let f1 = f.l1_norm(tree);
    let ratio = |p: f64| {
        if f1 == 0.0 {
            0.0
        } else {
            g.lp_norm(tree, p).powf(p) / (lambda.powf(p - 1.0) * f1)
        }
    };
    let g_lp_ratio = [ratio(2.0), ratio(4.0)];
    let g_bmo_ratio = bmo_norm(tree, &g) / lambda;
    let kappa = if f1 == 0.0 {
        0.0
    } else {
        parts.iter().map(|p| p.l1).sum::<f64>() / f1
    };
    Ok(CzDecomposition {
        lambda,
        stopping_cubes: stopping,
        g,
        b,
        b_parts: parts,
        g_lp_ratio,
        g_bmo_ratio,
        kappa,
        reconstruction_error,
    })
}

/// sup_Q (1/μ(Q)) ∫_Q |g − ⟨g⟩_{Q̂}| dμ, with Q̂ = Q at the root.
pub fn bmo_norm(tree: &MeasuredTree, g: &LeafFunction) -> f64 {
    let avg = cube_averages(tree, g);
    let mass = tree.leaf_masses();
    let mut best: f64 = 0.0;
    for q in tree.cubes() {
        let parent = tree.parent(&q).unwrap_or(q);
        let c = avg[tree.index(&parent)];
        let s: f64 = tree
            .leaf_range(&q)
            .map(|x| (g.at(x)[0] - c).abs() * mass[x])
            .sum();
        best = best.max(s / tree.mu(&q));
    }
    best
}

/// Operator tested by [`weak_type_experiment`].
#[derive(Clone, Copy, Debug)]
pub enum WeakOperator<'a> {
    Shift(&'a HaarShift),
    Multiplier(&'a MartingaleMultiplier),
}

impl WeakOperator<'_> {
    pub fn apply(&self, tree: &MeasuredTree, f: &LeafFunction) -> Result<LeafFunction> {
        match self {
            WeakOperator::Shift(t) => apply_shift(t, f),
            WeakOperator::Multiplier(s) => apply_multiplier(tree, s, f),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakTypeReport {
    /// Max over trials and the λ grid of λ·μ{|Tf| > λ}/‖f‖₁.
    pub constant: f64,
    pub per_trial: Vec<f64>,
    pub worst_trial: usize,
}

/// Random test input: a few leaf spikes of unit L¹ mass plus a small
/// function constant on the cubes of generation 2.
pub fn random_test_function(tree: &MeasuredTree, d: usize, rng: &mut impl Rng) -> LeafFunction {
    let n = tree.num_leaves();
    let mass = tree.leaf_masses();
    let mut f = LeafFunction::zeros(n, d);
    let spikes = rng.gen_range(1..=3);
    for _ in 0..spikes {
        let x = rng.gen_range(0..n);
        for i in 0..d {
            f.at_mut(x)[i] += rng.gen_range(-1.0..1.0) / mass[x];
        }
    }
    let level = tree.depth().min(2);
    let smooth: Vec<f64> = (0..tree.level_cubes(level).count() * d)
        .map(|_| 0.1 * rng.gen_range(-1.0..1.0))
        .collect();
    for x in 0..n {
        let c = tree.leaf_ancestor(x, level).code as usize;
        for i in 0..d {
            f.at_mut(x)[i] += smooth[c * d + i] / tree.mu(&tree.root());
        }
    }
    f
}

/// λ·μ{|h| > λ}/‖f‖₁ maximized over a logarithmic λ-grid on
/// [10⁻³‖f‖₁/μ(Q₀), 10³·max|f|] with `per_decade` points per decade.
pub fn weak_ratio(
    tree: &MeasuredTree,
    f: &LeafFunction,
    h: &LeafFunction,
    per_decade: usize,
) -> f64 {
    let f1 = f.l1_norm(tree);
    if f1 == 0.0 {
        return 0.0;
    }
    let lo = 1e-3 * f1 / tree.mu(&tree.root());
    let hi = 1e3 * f.max_abs();
    let mass = tree.leaf_masses();
    let mut vals: Vec<(f64, f64)> = (0..tree.num_leaves())
        .map(|x| (norm(h.at(x)), mass[x]))
        .collect();
    vals.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let steps = ((hi / lo).log10() * per_decade as f64).ceil().max(1.0) as usize;
    let mut best: f64 = 0.0;
    for s in 0..=steps {
        let lambda = lo * (hi / lo).powf(s as f64 / steps as f64);
        let level: f64 = vals.iter().take_while(|v| v.0 > lambda).map(|v| v.1).sum();
        best = best.max(lambda * level / f1);
    }
    best
}

pub fn weak_type_experiment(
    tree: &MeasuredTree,
    op: WeakOperator<'_>,
    d: usize,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<WeakTypeReport> {
    if trials == 0 {
        return Err(Error::Range("trials must be ≥ 1".into()));
    }
    let mut per_trial = Vec::with_capacity(trials);
    for _ in 0..trials {
        let f = random_test_function(tree, d, rng);
        let h = op.apply(tree, &f)?;
        per_trial.push(weak_ratio(tree, &f, &h, 20));
    }
    let (worst_trial, constant) = per_trial
        .iter()
        .cloned()
        .enumerate()
        .fold((0, 0.0), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    Ok(WeakTypeReport {
        constant,
        per_trial,
        worst_trial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::MeasurePreset;
    use crate::haar::{build_haar_1d, build_haar_nd, SplitSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn system(n: usize, depth: u32, preset: MeasurePreset) -> Arc<HaarSystem> {
        let tree = Arc::new(MeasuredTree::build(n, depth, &preset).unwrap());
        Arc::new(build_haar_nd(tree, &SplitSpec::default()).unwrap())
    }

    fn rand_fn(tree: &MeasuredTree, d: usize, seed: u64) -> LeafFunction {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        LeafFunction::from_fn(tree.num_leaves(), d, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// Slow reference: Σ_Q Σ c ⟨f, h_J⟩ h_K with explicit leaf sums.
    fn brute_shift(t: &HaarShift, f: &LeafFunction) -> LeafFunction {
        let tree = t.tree();
        let hs = t.haar();
        let mass = tree.leaf_masses();
        let mut out = LeafFunction::zeros(tree.num_leaves(), f.d());
        for e in t.entries() {
            for i in 0..f.d() {
                let pair: f64 = tree
                    .leaf_range(&e.j)
                    .map(|y| f.at(y)[i] * hs.value_at(&e.j, y) * mass[y])
                    .sum();
                for x in tree.leaf_range(&e.k) {
                    out.at_mut(x)[i] += e.c * pair * hs.value_at(&e.k, x);
                }
            }
        }
        out
    }

    fn max_diff(a: &LeafFunction, b: &LeafFunction) -> f64 {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_shift_gives_zero() {
        let hs = system(1, 4, MeasurePreset::Lebesgue);
        let t = HaarShift::new(hs.clone(), 1, 0);
        let f = rand_fn(hs.tree(), 2, 1);
        assert!(apply_shift(&t, &f).unwrap().max_abs() == 0.0);
        let rep = is_l1_normalized(&t, 1e-9);
        assert!(rep.verdict && rep.worst_cube.is_none());
    }

    #[test]
    fn identity_multiplier_projects_out_the_mean() {
        let hs = system(
            1,
            5,
            MeasurePreset::RandomBalanced {
                bound: 4.0,
                seed: 3,
            },
        );
        let tree = hs.tree();
        let t = HaarShift::constant(hs.clone(), 0, 0, 1.0).unwrap();
        let f = rand_fn(tree, 1, 2);
        let tf = apply_shift(&t, &f).unwrap();
        let mean = f.average(tree, &tree.root())[0];
        for x in 0..tree.num_leaves() {
            assert!((tf.at(x)[0] - (f.at(x)[0] - mean)).abs() < 1e-12);
        }
    }

    #[test]
    fn vector_action_is_componentwise() {
        let hs = system(
            2,
            3,
            MeasurePreset::RandomBalanced {
                bound: 4.0,
                seed: 9,
            },
        );
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let t = random_shift(hs.clone(), 1, 1, CoefficientLaw::Uniform, &mut rng).unwrap();
        let f = rand_fn(hs.tree(), 2, 5);
        let tf = apply_shift(&t, &f).unwrap();
        for i in 0..2 {
            let ti = apply_shift(&t, &f.component(i)).unwrap();
            assert_eq!(tf.component(i), ti);
        }
        assert!(max_diff(&tf, &brute_shift(&t, &f)) < 1e-12);
    }

    #[test]
    fn multiplier_examples() {
        let tree = MeasuredTree::build(1, 5, &MeasurePreset::CantorLike { ratio: 0.3 }).unwrap();
        let f = rand_fn(&tree, 1, 11);
        let mean = f.average(&tree, &tree.root())[0];
        let plus = apply_multiplier(
            &tree,
            &MartingaleMultiplier::constant(&tree, 1).unwrap(),
            &f,
        )
        .unwrap();
        let minus = apply_multiplier(
            &tree,
            &MartingaleMultiplier::constant(&tree, -1).unwrap(),
            &f,
        )
        .unwrap();
        for x in 0..tree.num_leaves() {
            assert!((plus.at(x)[0] - (f.at(x)[0] - mean)).abs() < 1e-12);
            assert!((minus.at(x)[0] - (mean - f.at(x)[0])).abs() < 1e-12);
        }
        let c = LeafFunction::scalar(vec![2.5; tree.num_leaves()]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let s = MartingaleMultiplier::random(&tree, &mut rng);
        assert!(apply_multiplier(&tree, &s, &c).unwrap().max_abs() < 1e-13);
        assert!(MartingaleMultiplier::new(&tree, vec![0; tree.num_cubes()]).is_err());
    }

    #[test]
    fn l1_normalized_lebesgue_haar_multiplier() {
        let hs = system(1, 5, MeasurePreset::Lebesgue);
        let t = HaarShift::constant(hs.clone(), 0, 0, 1.0).unwrap();
        for (q, k) in kernel_sup_norms(&t) {
            assert!((k - 1.0 / hs.tree().mu(&q)).abs() < 1e-12 / hs.tree().mu(&q));
        }
        let rep = is_l1_normalized(&t, 1.0);
        assert!(rep.verdict);
        assert!((rep.achieved - 1.0).abs() < 1e-12);
    }

    #[test]
    fn l1_normalized_fails_on_imbalanced_measure() {
        let tree = Arc::new(
            MeasuredTree::build(1, 6, &MeasurePreset::ExponentialImbalanced { ratio: 8.0 })
                .unwrap(),
        );
        let hs = Arc::new(build_haar_1d(tree.clone()).unwrap());
        let t = HaarShift::constant(hs.clone(), 0, 0, 1.0).unwrap();
        let rep = is_l1_normalized(&t, 10.0);
        assert!(!rep.verdict, "achieved {}", rep.achieved);
        let q = rep.worst_cube.unwrap();
        // h_Q² peaks at 1/μ(light child) ≫ 1/μ(Q)
        let light = tree
            .children(&q)
            .iter()
            .map(|c| tree.mu(c))
            .fold(f64::INFINITY, f64::min);
        assert!(rep.achieved > 0.5 * tree.mu(&q) / light);
    }

    #[test]
    fn kernel_norm_matches_leaf_brute_force() {
        let hs = system(
            2,
            3,
            MeasurePreset::RandomBalanced {
                bound: 4.0,
                seed: 21,
            },
        );
        let tree = hs.tree();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let t = random_shift(hs.clone(), 1, 0, CoefficientLaw::Uniform, &mut rng).unwrap();
        for (q, k) in kernel_sup_norms(&t) {
            let mut brute: f64 = 0.0;
            for x in tree.leaf_range(&q) {
                for y in tree.leaf_range(&q) {
                    let v: f64 = t
                        .entries()
                        .iter()
                        .filter(|e| e.q == q)
                        .map(|e| e.c * hs.value_at(&e.j, y) * hs.value_at(&e.k, x))
                        .sum();
                    brute = brute.max(v.abs());
                }
            }
            assert!(
                (k - brute).abs() <= 1e-12 * brute.max(1.0),
                "{q}: {k} vs {brute}"
            );
        }
    }

    #[test]
    fn separated_split_examples() {
        let hs = system(1, 5, MeasurePreset::Lebesgue);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let t0 = random_shift(hs.clone(), 1, 0, CoefficientLaw::Uniform, &mut rng).unwrap();
        let parts = t_separated_split(&t0);
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].entries(), t0.entries());
        let t1 = random_shift(hs.clone(), 0, 1, CoefficientLaw::Uniform, &mut rng).unwrap();
        let parts = t_separated_split(&t1);
        assert_eq!(parts.len(), 2);
        for (k, p) in parts.iter().enumerate() {
            assert!(p.entries().iter().all(|e| e.q.level % 2 == k as u32));
        }
        let mut merged: Vec<ShiftEntry> = parts.iter().flat_map(|p| p.entries()).collect();
        merged.sort_by(|a, b| (a.q, a.j, a.k).cmp(&(b.q, b.j, b.k)));
        assert_eq!(merged, t1.entries());
        let one = t1.filter_cubes(|q| q.level == 2);
        let nonzero = t_separated_split(&one)
            .iter()
            .filter(|p| !p.is_empty())
            .count();
        assert_eq!(nonzero, 1);
    }

    #[test]
    fn coefficient_validation() {
        let hs = system(1, 3, MeasurePreset::Lebesgue);
        let mut t = HaarShift::new(hs.clone(), 1, 0);
        let q = CubeId::ROOT;
        assert!(t.set(&q, &CubeId::new(1, 0), &q, 1.5).is_err());
        assert!(t.set(&q, &CubeId::new(2, 0), &q, 0.5).is_err());
        assert!(t
            .set(
                &CubeId::new(1, 1),
                &CubeId::new(2, 0),
                &CubeId::new(1, 1),
                0.5
            )
            .is_err());
        t.set(&q, &CubeId::new(1, 1), &q, -0.5).unwrap();
        let back = HaarShift::from_json(hs.clone(), &t.to_json(), (0, 0)).unwrap();
        assert_eq!((back.s(), back.t()), (1, 0));
        assert_eq!(back.entries(), t.entries());
    }

    #[test]
    fn cz_no_stopping() {
        let tree = MeasuredTree::build(1, 4, &MeasurePreset::Lebesgue).unwrap();
        let f = rand_fn(&tree, 1, 3);
        let cz = cz_decompose(&tree, &f, 2.0).unwrap();
        assert!(cz.stopping_cubes.is_empty());
        assert_eq!(cz.g, f);
        assert!(cz.b.max_abs() == 0.0);
        assert!(cz_decompose(&tree, &f, 0.0).is_err());
    }

    #[test]
    fn cz_single_spike_stops_on_chain() {
        let tree = MeasuredTree::build(
            1,
            6,
            &MeasurePreset::RandomBalanced {
                bound: 4.0,
                seed: 5,
            },
        )
        .unwrap();
        let x = 37;
        let mass = tree.leaf_masses();
        let mut f = LeafFunction::zeros(tree.num_leaves(), 1);
        f.at_mut(x)[0] = 100.0 / mass[x];
        let lambda = 150.0;
        let cz = cz_decompose(&tree, &f, lambda).unwrap();
        assert_eq!(cz.stopping_cubes.len(), 1);
        let q = cz.stopping_cubes[0];
        assert!(tree.leaf_range(&q).contains(&x));
        // maximal: its parent no longer exceeds λ
        assert!(100.0 / tree.mu(&q) > lambda);
        if let Some(p) = tree.parent(&q) {
            assert!(100.0 / tree.mu(&p) <= lambda);
        }
        assert!(cz.b_parts[0].mean_error < 1e-14);
        let b0 = cz.b_part(&tree, &f, 0);
        let integral: f64 = (0..tree.num_leaves()).map(|y| b0.at(y)[0] * mass[y]).sum();
        assert!(integral.abs() < 1e-12 * 100.0);
    }

    #[test]
    fn cz_two_spikes_two_cubes() {
        let tree = MeasuredTree::build(1, 6, &MeasurePreset::Lebesgue).unwrap();
        let mut f = LeafFunction::zeros(64, 1);
        f.at_mut(3)[0] = 64.0;
        f.at_mut(60)[0] = -64.0;
        let cz = cz_decompose(&tree, &f, 4.0).unwrap();
        assert_eq!(cz.stopping_cubes.len(), 2);
        let (a, b) = (cz.stopping_cubes[0], cz.stopping_cubes[1]);
        assert!(!tree.contains(&a, &b) && !tree.contains(&b, &a));
        assert!(cz.reconstruction_error == 0.0);
    }

    #[test]
    fn weak_type_zero_and_lebesgue_stability() {
        let hs = system(1, 4, MeasurePreset::Lebesgue);
        let tree = hs.tree();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let z = HaarShift::new(hs.clone(), 0, 0);
        let rep = weak_type_experiment(tree, WeakOperator::Shift(&z), 1, 3, &mut rng).unwrap();
        assert_eq!(rep.constant, 0.0);
        let mut consts = Vec::new();
        for depth in [4, 8] {
            let hs = system(1, depth, MeasurePreset::Lebesgue);
            let t = HaarShift::constant(hs.clone(), 0, 0, 1.0).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
            let rep =
                weak_type_experiment(hs.tree(), WeakOperator::Shift(&t), 1, 20, &mut rng).unwrap();
            consts.push(rep.constant);
        }
        assert!(consts.iter().all(|c| *c > 0.0 && *c < 10.0), "{consts:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn shift_linearity_and_adjoint(seed in any::<u64>(), s in 0u32..2, t in 0u32..2, a in -2.0f64..2.0) {
            let hs = system(1, 5, MeasurePreset::RandomBalanced { bound: 4.0, seed });
            let tree = hs.tree();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let sh = random_shift(hs.clone(), s, t, CoefficientLaw::Uniform, &mut rng).unwrap();
            let f = rand_fn(tree, 2, seed ^ 1);
            let g = rand_fn(tree, 2, seed ^ 2);
            let lhs = apply_shift(&sh, &f.combine(a, &g, 1.0)).unwrap();
            let rhs = apply_shift(&sh, &f).unwrap().combine(a, &apply_shift(&sh, &g).unwrap(), 1.0);
            let scale = lhs.max_abs().max(1.0);
            prop_assert!(max_diff(&lhs, &rhs) <= 1e-12 * scale);
            let left = apply_shift(&sh, &f).unwrap().inner(tree, &g);
            let right = f.inner(tree, &apply_shift(&sh.adjoint(), &g).unwrap());
            prop_assert!((left - right).abs() <= 1e-11 * (left.abs() + 1.0));
        }

        #[test]
        fn split_sums_to_shift(seed in any::<u64>(), t in 0u32..3) {
            let hs = system(1, 6, MeasurePreset::Lebesgue);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let sh = random_shift(hs.clone(), 1, t, CoefficientLaw::NonDegenerate { delta: 0.5 }, &mut rng).unwrap();
            let parts = t_separated_split(&sh);
            prop_assert_eq!(parts.len() as u32, t + 1);
            let total: usize = parts.iter().map(|p| p.len()).sum();
            prop_assert_eq!(total, sh.len());
            for p in &parts {
                for e in p.entries() {
                    prop_assert_eq!(sh.get(&e.q, &e.j, &e.k), e.c);
                }
            }
        }

        #[test]
        fn cz_invariants(seed in any::<u64>(), lambda in 0.05f64..5.0) {
            let tree = MeasuredTree::build(1, 6, &MeasurePreset::RandomBalanced { bound: 4.0, seed }).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let f = random_test_function(&tree, 1, &mut rng);
            let cz = cz_decompose(&tree, &f, lambda).unwrap();
            let scale = f.max_abs().max(1.0);
            prop_assert!(cz.reconstruction_error <= 4.0 * f64::EPSILON * scale);
            let abs = LeafFunction::scalar(f.values().iter().map(|v| v.abs()).collect());
            for (i, q) in cz.stopping_cubes.iter().enumerate() {
                prop_assert!(abs.average(&tree, q)[0] > lambda);
                prop_assert!(cz.b_parts[i].mean_error < 1e-12);
                for r in &cz.stopping_cubes[i + 1..] {
                    prop_assert!(!tree.contains(q, r) && !tree.contains(r, q));
                }
            }
        }
    }
}
