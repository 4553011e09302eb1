//! Stopping-time constructions of sparse families for Haar shifts and
//! martingale multipliers, with leafwise convex body domination
//! certificates, sparseness checks and (modified) sparse forms.

use crate::convexbody::{john_basis, Zonotope};
use crate::dyadic::{CubeId, MeasuredTree};
use crate::error::{Error, Result};
use crate::function::LeafFunction;
use crate::haar::{check_balanced, HaarSystem};
use crate::linalg::dot;
use crate::shifts::{
    apply_multiplier, apply_shift, cube_averages, haar_coefficients, is_l1_normalized,
    shift_output_coefficients, HaarShift, MartingaleMultiplier,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseFamily {
    pub cubes: BTreeSet<CubeId>,
    /// Claimed sparseness parameter.
    pub eta: f64,
    /// Optional witnesses E_Q as leaf lists.
    pub disjoint_sets: Option<BTreeMap<CubeId, Vec<usize>>>,
}

impl SparseFamily {
    pub fn new(cubes: impl IntoIterator<Item = CubeId>) -> Self {
        SparseFamily {
            cubes: cubes.into_iter().collect(),
            eta: 0.0,
            disjoint_sets: None,
        }
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn contains(&self, q: &CubeId) -> bool {
        self.cubes.contains(q)
    }

    /// ∪_{Q ∈ 𝒮} 𝒟^t(Q): every descendant at most `t` generations down.
    pub fn enlarge(&self, tree: &MeasuredTree, t: u32) -> SparseFamily {
        let mut out = BTreeSet::new();
        for q in &self.cubes {
            for l in 0..=t.min(tree.depth() - q.level) {
                out.extend(tree.descendants_at(q, l).expect("level within depth"));
            }
        }
        SparseFamily {
            cubes: out,
            eta: 0.0,
            disjoint_sets: None,
        }
    }

    /// Checks E_Q ⊂ Q, pairwise disjointness and μ(E_Q) ≥ η μ(Q).
    pub fn check_disjoint_sets(&self, tree: &MeasuredTree) -> Result<()> {
        let Some(sets) = &self.disjoint_sets else {
            return Ok(());
        };
        let mass = tree.leaf_masses();
        let mut used = vec![false; tree.num_leaves()];
        for (q, leaves) in sets {
            let r = tree.leaf_range(q);
            let mut m = 0.0;
            for &x in leaves {
                if !r.contains(&x) {
                    return Err(Error::Structure(format!(
                        "leaf {x} of E_Q lies outside {q}"
                    )));
                }
                if used[x] {
                    return Err(Error::Structure(format!("leaf {x} claimed twice")));
                }
                used[x] = true;
                m += mass[x];
            }
            if m < self.eta * tree.mu(q) * (1.0 - 1e-12) {
                return Err(Error::Structure(format!("μ(E_Q) < η μ(Q) at {q}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsenessReport {
    /// Fractional bottom-up allocation; equals 1/λ.
    pub eta_achieved: f64,
    /// Integral allocation E_Q = Q minus the smaller family members.
    pub eta_integral: f64,
    pub lambda_carleson: f64,
}

/// λ = max_P Σ_{Q ∈ 𝒮, Q ⊆ P} μ(Q)/μ(P), and the sparseness parameters it implies.
///
/// The fractional allocation lets each Q take the share η μ(Q) from the mass
/// of Q not yet used by smaller members; it succeeds exactly when η ≤ 1/λ.
/// The integral allocation works with whole leaves.
pub fn verify_sparseness(tree: &MeasuredTree, family: &SparseFamily) -> SparsenessReport {
    if family.is_empty() {
        return SparsenessReport {
            eta_achieved: 1.0,
            eta_integral: 1.0,
            lambda_carleson: 0.0,
        };
    }
    let mut packed = vec![0.0; tree.num_cubes()];
    for level in (0..=tree.depth()).rev() {
        for q in tree.level_cubes(level) {
            let qi = tree.index(&q);
            let mut s: f64 = tree
                .children(&q)
                .iter()
                .map(|c| packed[tree.index(c)])
                .sum();
            if family.contains(&q) {
                s += tree.mu(&q);
            }
            packed[qi] = s;
        }
    }
    let lambda = tree
        .cubes()
        .map(|q| packed[tree.index(&q)] / tree.mu(&q))
        .fold(0.0, f64::max);
    let eta_fractional = fractional_eta(tree, family, 1.0 / lambda);
    let mass = tree.leaf_masses();
    let mut claimed = vec![false; tree.num_leaves()];
    let mut eta_integral = f64::INFINITY;
    let mut ordered: Vec<&CubeId> = family.cubes.iter().collect();
    ordered.sort_by(|a, b| b.level.cmp(&a.level));
    for q in ordered {
        let mut m = 0.0;
        for x in tree.leaf_range(q) {
            if !claimed[x] {
                claimed[x] = true;
                m += mass[x];
            }
        }
        eta_integral = eta_integral.min(m / tree.mu(q));
    }
    SparsenessReport {
        eta_achieved: eta_fractional,
        eta_integral,
        lambda_carleson: lambda,
    }
}

/// Largest η ≤ `target` for which the fractional greedy succeeds (checked, not assumed).
fn fractional_eta(tree: &MeasuredTree, family: &SparseFamily, target: f64) -> f64 {
    // free[q] = mass inside q not yet allocated to members strictly inside q
    let mut free = vec![0.0; tree.num_cubes()];
    let mut worst = f64::INFINITY;
    for level in (0..=tree.depth()).rev() {
        for q in tree.level_cubes(level) {
            let qi = tree.index(&q);
            let mut avail = if tree.is_leaf(&q) {
                tree.mu(&q)
            } else {
                tree.children(&q).iter().map(|c| free[tree.index(c)]).sum()
            };
            if family.contains(&q) {
                let want = target * tree.mu(&q);
                worst = worst.min(avail / tree.mu(&q));
                avail = (avail - want).max(0.0);
            }
            free[qi] = avail;
        }
    }
    target.min(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CertificateMode {
    Plain,
    /// Adds the pair term over J, K ∈ 𝒮 with dist(J, K) ≤ n + 2.
    Modified {
        n: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafVerdict {
    pub leaf: usize,
    pub member: bool,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominationCertificate {
    pub shift_id: String,
    pub f_id: String,
    #[serde(rename = "C")]
    pub c: f64,
    pub family: SparseFamily,
    pub mode: CertificateMode,
    pub per_leaf: Vec<LeafVerdict>,
    pub worst_leaf: Option<usize>,
    pub leaves_failing: usize,
    pub worst_residual: f64,
    /// Pairs (J, K) contributing to the modified term.
    pub modified_pairs: Vec<(CubeId, CubeId)>,
}

impl DominationCertificate {
    pub fn passed(&self) -> bool {
        self.leaves_failing == 0
    }
}

/// Pairs (J, K) ∈ 𝒮 × 𝒮 with dist(J, K) ≤ n + 2.
pub fn modified_pairs(tree: &MeasuredTree, family: &SparseFamily, n: u32) -> Vec<(CubeId, CubeId)> {
    let reach = n + 2;
    let mut out = BTreeSet::new();
    for k in &family.cubes {
        for a in 0..=reach.min(k.level) {
            let p = tree.ancestor(k, a).expect("a ≤ level");
            for b in 0..=(reach - a).min(tree.depth() - p.level) {
                for j in tree.descendants_at(&p, b).expect("within depth") {
                    if family.contains(&j) && tree.dyadic_distance(&j, k).expect("valid") <= reach {
                        out.insert((j, *k));
                    }
                }
            }
        }
    }
    out.into_iter().collect()
}

/// Checks Tf(x) ∈ C Σ_{Q∈𝒮∋x} ⟨⟨f⟩⟩_Q [+ C Σ_{pairs, K∋x} ⟨⟨f⟩⟩_J √m(J)√m(K)/μ(K)]
/// at every leaf x of Q₀. `m` is indexed by dense cube index.
pub fn certify(
    tree: &MeasuredTree,
    m: &[f64],
    tf: &LeafFunction,
    f: &LeafFunction,
    q0: &CubeId,
    family: &SparseFamily,
    mode: CertificateMode,
    c: f64,
) -> DominationCertificate {
    let d = f.d();
    let mass = tree.leaf_masses();
    let pairs = match mode {
        CertificateMode::Plain => Vec::new(),
        CertificateMode::Modified { n } => modified_pairs(tree, family, n),
    };
    // per K: list of (J, coefficient on ⟨⟨f⟩⟩_J generators)
    let mut by_k: HashMap<CubeId, Vec<(CubeId, f64)>> = HashMap::new();
    for (j, k) in &pairs {
        let w = (m[tree.index(j)] * m[tree.index(k)]).sqrt() / tree.mu(k);
        if w > 0.0 {
            by_k.entry(*k).or_default().push((*j, w));
        }
    }
    let mut per_leaf = Vec::new();
    let mut coef = vec![0.0; tree.num_cubes()];
    for x in tree.leaf_range(q0) {
        coef.iter_mut().for_each(|v| *v = 0.0);
        for level in q0.level..=tree.depth() {
            let q = tree.leaf_ancestor(x, level);
            if family.contains(&q) {
                coef[tree.index(&q)] += 1.0;
            }
            if let Some(list) = by_k.get(&q) {
                for (j, w) in list {
                    coef[tree.index(j)] += w;
                }
            }
        }
        // generator for leaf y: f(y) μ(y) Σ_{J ∋ y} coef_J / μ(J)
        let mut z = Zonotope::empty(d);
        for y in tree.leaf_range(q0) {
            let mut w = 0.0;
            for level in q0.level..=tree.depth() {
                let j = tree.leaf_ancestor(y, level);
                let cj = coef[tree.index(&j)];
                if cj != 0.0 {
                    w += cj / tree.mu(&j);
                }
            }
            if w > 0.0 {
                z.push_scaled(f.at(y), c * w * mass[y]);
            }
        }
        let v = tf.at(x);
        let res = z.member(v).expect("dimensions agree");
        per_leaf.push(LeafVerdict {
            leaf: x,
            member: res.member,
            residual: res.residual,
        });
    }
    let leaves_failing = per_leaf.iter().filter(|l| !l.member).count();
    let worst = per_leaf
        .iter()
        .max_by(|a, b| a.residual.partial_cmp(&b.residual).unwrap())
        .map(|l| (l.leaf, l.residual));
    DominationCertificate {
        shift_id: String::new(),
        f_id: String::new(),
        c,
        family: family.clone(),
        mode,
        per_leaf,
        worst_leaf: worst.map(|w| w.0),
        leaves_failing,
        worst_residual: worst.map_or(0.0, |w| w.1),
        modified_pairs: pairs,
    }
}

/// How the stopping constant is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CChoice {
    /// C = 1, 2, 4, … until every generation satisfies the ½ measure bound and
    /// the certificate passes.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseOptions {
    pub c: CChoice,
    /// Bound passed to `check_balanced` in the balanced regime.
    pub balance_bound: f64,
    /// Declared constant for the L¹-normalization precondition; `None` records
    /// the achieved value without enforcing it.
    pub l1_bound: Option<f64>,
    pub max_doublings: u32,
    pub john_tol: f64,
}

impl Default for SparseOptions {
    fn default() -> Self {
        SparseOptions {
            c: CChoice::Auto,
            balance_bound: 8.0,
            l1_bound: None,
            max_doublings: 40,
            john_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    #[serde(rename = "C")]
    pub c: f64,
    pub max_fraction: f64,
    pub certificate_passed: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseBuild {
    pub family: SparseFamily,
    /// Stopping cubes before enlargement.
    pub base_family: SparseFamily,
    pub certificate: DominationCertificate,
    /// Largest Σ_{J∈ℬ(Q')} μ(J)/μ(Q') over Q' in each stopping generation.
    pub generation_fractions: Vec<f64>,
    #[serde(rename = "C")]
    pub c: f64,
    /// Smallest C tried that meets the ½ bound at every generation.
    pub c_half: Option<f64>,
    pub attempts: Vec<Attempt>,
    pub sparseness: SparsenessReport,
    /// max_Q ‖K_Q‖_∞ μ(Q) for shift builds.
    pub l1_constant: Option<f64>,
}

struct Stopping {
    base: Vec<CubeId>,
    fractions: Vec<f64>,
}

/// Generation-by-generation maximal stopping cubes below `q0`.
fn stopping_family(
    tree: &MeasuredTree,
    q0: &CubeId,
    mut stop: impl FnMut(&CubeId, &CubeId) -> bool,
) -> Stopping {
    let mut base = vec![*q0];
    let mut fractions = Vec::new();
    let mut current = vec![*q0];
    while !current.is_empty() {
        let mut next = Vec::new();
        let mut worst: f64 = 0.0;
        for qp in &current {
            let mut selected = Vec::new();
            let mut stack: Vec<CubeId> = tree.children(qp).into_iter().rev().collect();
            while let Some(j) = stack.pop() {
                if stop(qp, &j) {
                    selected.push(j);
                } else {
                    stack.extend(tree.children(&j).into_iter().rev());
                }
            }
            let frac: f64 = selected.iter().map(|j| tree.mu(j)).sum::<f64>() / tree.mu(qp);
            worst = worst.max(frac);
            next.extend(selected);
        }
        if next.is_empty() && current.iter().all(|q| tree.is_leaf(q)) {
            fractions.push(worst);
            break;
        }
        fractions.push(worst);
        base.extend(next.iter().cloned());
        current = next;
    }
    Stopping { base, fractions }
}

/// v ∈ C·Z, with a cheap support test before the LP.
fn in_scaled(z: &Zonotope, v: &[f64], c: f64) -> bool {
    if v.iter().all(|x| *x == 0.0) {
        return true;
    }
    let scaled: Vec<f64> = v.iter().map(|x| x / c).collect();
    let h = z.support_unchecked(&scaled);
    let reach = dot(&scaled, &scaled);
    if reach > h * (1.0 + 1e-9) + 1e-300 {
        return false;
    }
    z.member(&scaled).expect("dimensions agree").member
}

struct BodyCache {
    bodies: HashMap<CubeId, Zonotope>,
}

impl BodyCache {
    fn get(&mut self, tree: &MeasuredTree, f: &LeafFunction, q: &CubeId) -> &Zonotope {
        self.bodies
            .entry(*q)
            .or_insert_with(|| crate::convexbody::convex_body_avg(tree, f, q))
    }
}

fn check_support(tree: &MeasuredTree, f: &LeafFunction, q0: &CubeId) -> Result<()> {
    f.check_tree(tree)?;
    tree.validate(q0)?;
    let r = tree.leaf_range(q0);
    if (0..tree.num_leaves()).any(|x| !r.contains(&x) && f.at(x).iter().any(|v| *v != 0.0)) {
        return Err(Error::Invalid(format!("f is not supported in {q0}")));
    }
    Ok(())
}

/// Partial sums Σ_{Q: J ⊊ Q ⊆ Q', Q ≡ J mod (t+1)} T_Q f on J.
struct ShiftPartials<'a> {
    hs: &'a HaarSystem,
    t: u32,
    b: Vec<f64>,
    d: usize,
}

impl ShiftPartials<'_> {
    fn value(&self, qp: &CubeId, j: &CubeId) -> Vec<f64> {
        let tree = self.hs.tree();
        let n = tree.n();
        let period = self.t + 1;
        let mut out = vec![0.0; self.d];
        let mut level = j.level;
        while level >= qp.level + period {
            level -= period;
            // Q at `level`; K at level + t; J sits inside one child of K, so T_Q f is constant on J
            let k = tree
                .ancestor(j, j.level - (level + self.t))
                .expect("ancestor");
            let child = tree
                .ancestor(j, j.level - (level + self.t + 1))
                .expect("ancestor");
            debug_assert!(j.level >= level + self.t + 1);
            let a = self.hs.alphas(&k)[child.offset(n) as usize];
            let ki = tree.index(&k);
            for i in 0..self.d {
                out[i] += self.b[ki * self.d + i] * a;
            }
        }
        out
    }
}

fn shift_partials<'a>(t: &'a HaarShift, f: &LeafFunction) -> Result<ShiftPartials<'a>> {
    let a = haar_coefficients(t.haar(), f)?;
    let b = shift_output_coefficients(t, &a, f.d());
    Ok(ShiftPartials {
        hs: t.haar(),
        t: t.t(),
        b,
        d: f.d(),
    })
}

enum Regime<'a> {
    Balanced,
    L1 {
        john: HashMap<CubeId, (Vec<Vec<f64>>, Vec<f64>)>,
        tol: f64,
        f: &'a LeafFunction,
    },
}

fn run_auto(
    opts: &SparseOptions,
    mut attempt: impl FnMut(f64) -> (Stopping, SparseFamily, Option<DominationCertificate>),
    mut certify_at: impl FnMut(f64, &SparseFamily) -> DominationCertificate,
) -> (
    f64,
    Option<f64>,
    Vec<Attempt>,
    Stopping,
    SparseFamily,
    DominationCertificate,
) {
    let cs: Vec<f64> = match opts.c {
        CChoice::Fixed(c) => vec![c],
        CChoice::Auto => (0..=opts.max_doublings)
            .map(|k| 2f64.powi(k as i32))
            .collect(),
    };
    let mut attempts = Vec::new();
    let mut c_half = None;
    let mut last = None;
    for (idx, &c) in cs.iter().enumerate() {
        let (stopping, family, _) = attempt(c);
        let max_fraction = stopping.fractions.iter().cloned().fold(0.0, f64::max);
        let half_ok = max_fraction <= 0.5 + 1e-12;
        if half_ok && c_half.is_none() {
            c_half = Some(c);
        }
        let final_try = idx + 1 == cs.len();
        if half_ok || final_try {
            let cert = certify_at(c, &family);
            let passed = cert.passed();
            attempts.push(Attempt {
                c,
                max_fraction,
                certificate_passed: Some(passed),
            });
            if (half_ok && passed) || final_try {
                return (c, c_half, attempts, stopping, family, cert);
            }
            last = Some((c, stopping, family, cert));
        } else {
            attempts.push(Attempt {
                c,
                max_fraction,
                certificate_passed: None,
            });
        }
    }
    let (c, stopping, family, cert) = last.expect("at least one attempt");
    (c, c_half, attempts, stopping, family, cert)
}

#[allow(clippy::too_many_arguments)]
fn build_shift(
    t: &HaarShift,
    f: &LeafFunction,
    q0: &CubeId,
    opts: &SparseOptions,
    mut regime: Regime<'_>,
    enlarge: bool,
    mode: CertificateMode,
) -> Result<SparseBuild> {
    let tree = t.tree();
    check_support(tree, f, q0)?;
    let partials = shift_partials(t, f)?;
    let avg = cube_averages(tree, f);
    let d = f.d();
    let tf = apply_shift(t, f)?;
    let mut cache = BodyCache {
        bodies: HashMap::new(),
    };
    let m = t.haar().m_all().to_vec();
    let stop_at = |c: f64, cache: &mut BodyCache, regime: &mut Regime<'_>| {
        let mut stop = |qp: &CubeId, j: &CubeId| -> bool {
            let z = cache.get(tree, f, qp).clone();
            let p = partials.value(qp, j);
            if !in_scaled(&z, &p, c) {
                return true;
            }
            match regime {
                Regime::Balanced => {
                    let ji = tree.index(j);
                    !in_scaled(&z, &avg[ji * d..(ji + 1) * d], c)
                }
                Regime::L1 { john, tol, f } => {
                    let (basis, abs_q) = john.entry(*qp).or_insert_with(|| {
                        let (basis, _) = john_basis(&z, *tol);
                        let abs_q = basis.iter().map(|e| abs_average(tree, f, e, qp)).collect();
                        (basis, abs_q)
                    });
                    basis.iter().zip(abs_q.iter()).any(|(e, aq)| {
                        abs_average(tree, f, e, j) > c / d as f64 * aq * (1.0 + 1e-12)
                    })
                }
            }
        };
        stopping_family(tree, q0, &mut stop)
    };
    let (c, c_half, attempts, stopping, family, cert) = run_auto(
        opts,
        |c| {
            let stopping = stop_at(c, &mut cache, &mut regime);
            let base = SparseFamily::new(stopping.base.iter().cloned());
            let family = if enlarge {
                base.enlarge(tree, t.t())
            } else {
                base
            };
            (stopping, family, None)
        },
        |c, family| certify(tree, &m, &tf, f, q0, family, mode, c),
    );
    let base_family = SparseFamily::new(stopping.base.iter().cloned());
    let sparseness = verify_sparseness(tree, &family);
    let mut family = family;
    family.eta = sparseness.eta_achieved;
    let mut cert = cert;
    cert.family.eta = sparseness.eta_achieved;
    Ok(SparseBuild {
        family,
        base_family,
        certificate: cert,
        generation_fractions: stopping.fractions,
        c,
        c_half,
        attempts,
        sparseness,
        l1_constant: Some(is_l1_normalized(t, f64::INFINITY).achieved),
    })
}

/// ⟨|f·e|⟩_Q.
fn abs_average(tree: &MeasuredTree, f: &LeafFunction, e: &[f64], q: &CubeId) -> f64 {
    let mass = tree.leaf_masses();
    tree.leaf_range(q)
        .map(|x| dot(f.at(x), e).abs() * mass[x])
        .sum::<f64>()
        / tree.mu(q)
}

/// Balanced regime: stopping on partial sums and on averages, enlargement by
/// 𝒟^t, and the modified certificate with N = s + t.
pub fn build_sparse_balanced(
    t: &HaarShift,
    f: &LeafFunction,
    q0: &CubeId,
    opts: &SparseOptions,
) -> Result<SparseBuild> {
    let report = check_balanced(t.haar(), opts.balance_bound)?;
    if !report.is_balanced {
        return Err(Error::Invalid(format!(
            "Haar system is not balanced at bound {} (Ξ00 = {:.3}, ratios in [{:.3}, {:.3}])",
            opts.balance_bound, report.xi00, report.ratio_min, report.ratio_max
        )));
    }
    let mode = CertificateMode::Modified { n: t.s() + t.t() };
    build_shift(t, f, q0, opts, Regime::Balanced, true, mode)
}

/// L¹-normalized regime: stopping on partial sums and on component averages in
/// the John basis of ⟨⟨f⟩⟩_{Q'}, plain certificate.
pub fn build_sparse_l1(
    t: &HaarShift,
    f: &LeafFunction,
    q0: &CubeId,
    opts: &SparseOptions,
) -> Result<SparseBuild> {
    if let Some(c) = opts.l1_bound {
        let rep = is_l1_normalized(t, c);
        if !rep.verdict {
            return Err(Error::Invalid(format!(
                "shift is not L¹ normalized at c = {c} (achieved {:.4})",
                rep.achieved
            )));
        }
    }
    let regime = Regime::L1 {
        john: HashMap::new(),
        tol: opts.john_tol,
        f,
    };
    build_shift(t, f, q0, opts, regime, false, CertificateMode::Plain)
}

/// Martingale multiplier: stopping on partial sums Σ σ_Q Δ_Q f and on averages.
pub fn build_sparse_multiplier(
    tree: &MeasuredTree,
    sigma: &MartingaleMultiplier,
    f: &LeafFunction,
    q0: &CubeId,
    opts: &SparseOptions,
) -> Result<SparseBuild> {
    check_support(tree, f, q0)?;
    let d = f.d();
    let avg = cube_averages(tree, f);
    let tf = apply_multiplier(tree, sigma, f)?;
    let m = vec![0.0; tree.num_cubes()];
    let mut cache = BodyCache {
        bodies: HashMap::new(),
    };
    let partial = |qp: &CubeId, j: &CubeId| -> Vec<f64> {
        let mut out = vec![0.0; d];
        for level in qp.level..j.level {
            let q = tree.ancestor(j, j.level - level).expect("ancestor");
            let ch = tree.ancestor(j, j.level - level - 1).expect("ancestor");
            let (qi, ci) = (tree.index(&q), tree.index(&ch));
            let s = sigma.sigma[qi] as f64;
            for i in 0..d {
                out[i] += s * (avg[ci * d + i] - avg[qi * d + i]);
            }
        }
        out
    };
    let (c, c_half, attempts, stopping, family, cert) = run_auto(
        opts,
        |c| {
            let mut stop = |qp: &CubeId, j: &CubeId| -> bool {
                let z = cache.get(tree, f, qp).clone();
                let ji = tree.index(j);
                !in_scaled(&z, &partial(qp, j), c) || !in_scaled(&z, &avg[ji * d..(ji + 1) * d], c)
            };
            let stopping = stopping_family(tree, q0, &mut stop);
            let family = SparseFamily::new(stopping.base.iter().cloned());
            (stopping, family, None)
        },
        |c, family| certify(tree, &m, &tf, f, q0, family, CertificateMode::Plain, c),
    );
    let sparseness = verify_sparseness(tree, &family);
    let mut family = family;
    family.eta = sparseness.eta_achieved;
    let mut cert = cert;
    cert.family.eta = sparseness.eta_achieved;
    Ok(SparseBuild {
        base_family: family.clone(),
        family,
        certificate: cert,
        generation_fractions: stopping.fractions,
        c,
        c_half,
        attempts,
        sparseness,
        l1_constant: None,
    })
}

fn check_pair(f: &LeafFunction, g: &LeafFunction) -> Result<()> {
    if f.d() != g.d() {
        return Err(Error::Dimension {
            expected: f.d(),
            got: g.d(),
        });
    }
    if f.num_leaves() != g.num_leaves() {
        return Err(Error::Structure("f and g live on different trees".into()));
    }
    Ok(())
}

/// Σ_{x ∈ A, y ∈ B} |f(x)·g(y)| μ(x)μ(y).
fn pair_sum(
    tree: &MeasuredTree,
    f: &LeafFunction,
    a: &CubeId,
    g: &LeafFunction,
    b: &CubeId,
) -> f64 {
    let mass = tree.leaf_masses();
    let mut s = 0.0;
    for x in tree.leaf_range(a) {
        let fx = f.at(x);
        let mut inner = 0.0;
        for y in tree.leaf_range(b) {
            inner += dot(fx, g.at(y)).abs() * mass[y];
        }
        s += inner * mass[x];
    }
    s
}

/// 𝒜_𝒮(f, g) = Σ_Q μ(Q) ⨏_Q ⨏_Q |f(x)·g(y)|.
pub fn sparse_form(
    tree: &MeasuredTree,
    family: &SparseFamily,
    f: &LeafFunction,
    g: &LeafFunction,
) -> Result<f64> {
    check_pair(f, g)?;
    Ok(family
        .cubes
        .iter()
        .map(|q| pair_sum(tree, f, q, g, q) / tree.mu(q))
        .sum())
}

/// 𝒜^N_𝒮(f, g) = Σ_{dist(J,K) ≤ N+2} ⨏_J ⨏_K |f(x)·g(y)| √m(J)√m(K).
pub fn modified_sparse_form(
    tree: &MeasuredTree,
    family: &SparseFamily,
    n: u32,
    m: &[f64],
    f: &LeafFunction,
    g: &LeafFunction,
) -> Result<f64> {
    check_pair(f, g)?;
    if m.len() != tree.num_cubes() {
        return Err(Error::Dimension {
            expected: tree.num_cubes(),
            got: m.len(),
        });
    }
    let mut total = 0.0;
    for (j, k) in modified_pairs(tree, family, n) {
        let w = (m[tree.index(&j)] * m[tree.index(&k)]).sqrt();
        if w > 0.0 {
            total += pair_sum(tree, f, &j, g, &k) / (tree.mu(&j) * tree.mu(&k)) * w;
        }
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointwiseFormReport {
    /// ∫ |ℒ_𝒮 f(y)·g(y)| dμ(y), summing support functions.
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn pointwise_form_check(
    tree: &MeasuredTree,
    family: &SparseFamily,
    f: &LeafFunction,
    g: &LeafFunction,
) -> Result<PointwiseFormReport> {
    check_pair(f, g)?;
    let mass = tree.leaf_masses();
    let mut lhs = 0.0;
    let mut scale = 0.0;
    for q in &family.cubes {
        let z = crate::convexbody::convex_body_avg(tree, f, q);
        for y in tree.leaf_range(q) {
            let gy = g.at(y);
            if gy.iter().all(|v| *v == 0.0) {
                continue;
            }
            let h = z.support_unchecked(gy);
            lhs += h * mass[y];
            scale += h.abs() * mass[y];
        }
    }
    let rhs = sparse_form(tree, family, f, g)?;
    let holds = lhs <= rhs + 1e-9 * scale.max(rhs).max(1e-300);
    Ok(PointwiseFormReport { lhs, rhs, holds })
}

/// μ{x ∈ Q₀ : h(x) ∉ λ⟨⟨f⟩⟩_{Q₀}}.
pub fn escape_measure(
    tree: &MeasuredTree,
    h: &LeafFunction,
    f: &LeafFunction,
    q0: &CubeId,
    lambda: f64,
) -> f64 {
    let z = crate::convexbody::convex_body_avg(tree, f, q0);
    let mass = tree.leaf_masses();
    tree.leaf_range(q0)
        .filter(|&x| !in_scaled(&z, h.at(x), lambda))
        .map(|x| mass[x])
        .sum()
}
