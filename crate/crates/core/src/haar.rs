//! Generalized Haar systems with one two-valued function per cube.
//!
//! `m(Q)` is stored as ‖h_Q‖²_{L¹(μ)}. In one dimension this equals
//! 4·μ(I₊)μ(I₋)/μ(I); see [`m_1d`] for the product form.

use crate::dyadic::{CubeId, MeasuredTree};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Which children of each cube form the positive group G₊.
#[derive(Clone, Debug, PartialEq)]
pub enum SplitSpec {
    /// G₊ = children with offset 1 along `axis`.
    HalfSpace { axis: usize },
    /// One bitmask of children per non-leaf cube, in dense cube order.
    Explicit(Vec<u64>),
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::HalfSpace { axis: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HaarFunction {
    pub cube: CubeId,
    /// Value on each child, indexed by child offset.
    pub alphas: Vec<f64>,
    pub m: f64,
}

#[derive(Clone, Debug)]
pub struct HaarSystem {
    tree: Arc<MeasuredTree>,
    alphas: Vec<f64>,
    m: Vec<f64>,
    linf: Vec<f64>,
}

/// μ(I₊)μ(I₋)/μ(I) in one dimension.
pub fn m_1d(tree: &MeasuredTree, q: &CubeId) -> f64 {
    let ch = tree.children(q);
    tree.mu(&ch[0]) * tree.mu(&ch[1]) / tree.mu(q)
}

pub fn build_haar_1d(tree: Arc<MeasuredTree>) -> Result<HaarSystem> {
    if tree.n() != 1 {
        return Err(Error::Invalid("build_haar_1d needs n = 1".into()));
    }
    build_haar_nd(tree, &SplitSpec::default())
}

pub fn build_haar_nd(tree: Arc<MeasuredTree>, split: &SplitSpec) -> Result<HaarSystem> {
    let n = tree.n();
    let k = tree.num_children();
    let full = (1u64 << k) - 1;
    let eps = 1e-14 * tree.mu(&tree.root());
    let inner = tree.num_cubes() - tree.num_leaves();
    if let SplitSpec::HalfSpace { axis } = split {
        if *axis >= n {
            return Err(Error::Invalid(format!(
                "split axis {axis} out of range for n = {n}"
            )));
        }
    }
    if let SplitSpec::Explicit(masks) = split {
        if masks.len() != inner {
            return Err(Error::Dimension {
                expected: inner,
                got: masks.len(),
            });
        }
    }
    let mut alphas = vec![0.0; tree.num_cubes() * k];
    let mut m = vec![0.0; tree.num_cubes()];
    let mut linf = vec![0.0; tree.num_cubes()];
    for idx in 0..inner {
        let q = tree.cube_at(idx);
        let mask = match split {
            SplitSpec::HalfSpace { axis } => (0..k as u64)
                .filter(|o| o >> axis & 1 == 1)
                .fold(0u64, |a, o| a | 1 << o),
            SplitSpec::Explicit(masks) => masks[idx],
        };
        if mask & full == 0 || mask & full == full || mask & !full != 0 {
            return Err(Error::Invalid(format!(
                "empty group in the bipartition of {q}"
            )));
        }
        let children = tree.children(&q);
        let (mut mp, mut mm) = (0.0, 0.0);
        for (o, c) in children.iter().enumerate() {
            if mask >> o & 1 == 1 {
                mp += tree.mu(c);
            } else {
                mm += tree.mu(c);
            }
        }
        let total = tree.mu(&q);
        let cp = (mm / (mp * total)).sqrt();
        let cm = (mp / (mm * total)).sqrt();
        if !(cp.max(cm) <= 1.0 / eps) {
            continue;
        }
        for o in 0..k {
            alphas[idx * k + o] = if mask >> o & 1 == 1 { cp } else { -cm };
        }
        let l1 = cp * mp + cm * mm;
        m[idx] = l1 * l1;
        linf[idx] = cp.max(cm);
    }
    Ok(HaarSystem {
        tree,
        alphas,
        m,
        linf,
    })
}

impl HaarSystem {
    pub fn tree(&self) -> &MeasuredTree {
        &self.tree
    }

    pub fn tree_arc(&self) -> &Arc<MeasuredTree> {
        &self.tree
    }

    /// Child values of h_Q by child offset (all zero for leaves and degenerate cubes).
    #[inline]
    pub fn alphas(&self, q: &CubeId) -> &[f64] {
        let k = self.tree.num_children();
        let i = self.tree.index(q);
        &self.alphas[i * k..(i + 1) * k]
    }

    #[inline]
    pub fn alphas_idx(&self, idx: usize) -> &[f64] {
        let k = self.tree.num_children();
        &self.alphas[idx * k..(idx + 1) * k]
    }

    pub fn m(&self, q: &CubeId) -> f64 {
        self.m[self.tree.index(q)]
    }

    pub fn m_all(&self) -> &[f64] {
        &self.m
    }

    pub fn is_nonzero(&self, q: &CubeId) -> bool {
        self.m(q) > 0.0
    }

    pub fn linf(&self, q: &CubeId) -> f64 {
        self.linf[self.tree.index(q)]
    }

    pub fn l1(&self, q: &CubeId) -> f64 {
        self.m(q).sqrt()
    }

    pub fn function(&self, q: &CubeId) -> HaarFunction {
        HaarFunction {
            cube: *q,
            alphas: self.alphas(q).to_vec(),
            m: self.m(q),
        }
    }

    pub fn functions(&self) -> Vec<HaarFunction> {
        self.tree
            .cubes()
            .filter(|q| !self.tree.is_leaf(q))
            .map(|q| self.function(&q))
            .collect()
    }

    /// h_Q at a leaf (zero outside Q).
    pub fn value_at(&self, q: &CubeId, leaf: usize) -> f64 {
        if self.tree.is_leaf(q) || !self.tree.leaf_range(q).contains(&leaf) {
            return 0.0;
        }
        let child = self.tree.leaf_ancestor(leaf, q.level + 1);
        self.alphas(q)[child.offset(self.tree.n()) as usize]
    }

    /// Leaf values of h_Q over the leaves of Q.
    pub fn leaf_values(&self, q: &CubeId) -> Vec<f64> {
        self.tree
            .leaf_range(q)
            .map(|x| self.value_at(q, x))
            .collect()
    }

    /// Largest |⟨h_Q, h_R⟩ − δ_QR| over all nonzero pairs.
    pub fn gram_deviation(&self) -> f64 {
        let t = &*self.tree;
        let cubes: Vec<CubeId> = t.cubes().filter(|q| self.is_nonzero(q)).collect();
        let mass = t.leaf_masses();
        let rows: Vec<(std::ops::Range<usize>, Vec<f64>)> = cubes
            .iter()
            .map(|q| (t.leaf_range(q), self.leaf_values(q)))
            .collect();
        let mut worst: f64 = 0.0;
        for (a, (ra, va)) in rows.iter().enumerate() {
            for (rb, vb) in rows.iter().skip(a) {
                let lo = ra.start.max(rb.start);
                let hi = ra.end.min(rb.end);
                let mut s = 0.0;
                for x in lo..hi {
                    s += va[x - ra.start] * vb[x - rb.start] * mass[x];
                }
                let target = if ra == rb { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }

    /// ⟨f, h_Q⟩ from the integrals ∫_R f dμ over the children R of Q.
    pub fn pair_with_child_integrals(&self, q: &CubeId, child_integrals: &[f64]) -> f64 {
        self.alphas(q)
            .iter()
            .zip(child_integrals)
            .map(|(a, i)| a * i)
            .sum()
    }
}

/// Ξ[ℋ,s,t] = max over Q and J ∈ 𝒟_s(Q), K ∈ 𝒟_t(Q) of ‖h_J‖_∞‖h_K‖₁.
pub fn xi(hs: &HaarSystem, s: u32, t: u32) -> Result<f64> {
    let tree = hs.tree();
    let depth = tree.depth();
    if s + t + 1 > depth {
        return Err(Error::Range(format!(
            "Ξ[{s},{t}] needs depth ≥ {}",
            s + t + 1
        )));
    }
    let top = depth - 1 - s.max(t);
    let mut best: f64 = 0.0;
    for level in 0..=top {
        for q in tree.level_cubes(level) {
            let a = tree
                .descendants_at(&q, s)?
                .iter()
                .map(|j| hs.linf(j))
                .fold(0.0, f64::max);
            let b = tree
                .descendants_at(&q, t)?
                .iter()
                .map(|k| hs.l1(k))
                .fold(0.0, f64::max);
            best = best.max(a * b);
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalancedReport {
    pub xi00: f64,
    pub xi10: f64,
    pub xi01: f64,
    /// Extremes of m(Q)/m(Q̂) over cubes where both functions are nonzero.
    pub ratio_max: f64,
    pub ratio_min: f64,
    /// Extremes of m(Q)/min_{R ∈ ch(Q)} μ(R) over nonzero Q.
    pub child_ratio_min: f64,
    pub child_ratio_max: f64,
    pub bound: f64,
    pub is_standard: bool,
    pub is_balanced: bool,
}

/// Achieved constants plus verdicts at the caller's bound: standard means
/// Ξ[0,0] ≤ bound, balanced means standard and every ratio in [1/bound, bound].
pub fn check_balanced(hs: &HaarSystem, bound: f64) -> Result<BalancedReport> {
    let tree = hs.tree();
    let (xi10, xi01) = if tree.depth() >= 2 {
        (xi(hs, 1, 0)?, xi(hs, 0, 1)?)
    } else {
        (f64::NAN, f64::NAN)
    };
    let xi00 = xi(hs, 0, 0)?;
    let mut ratio_max: f64 = 0.0;
    let mut ratio_min = f64::INFINITY;
    let mut child_min = f64::INFINITY;
    let mut child_max: f64 = 0.0;
    for q in tree.cubes().filter(|q| hs.is_nonzero(q)) {
        let least = tree
            .children(&q)
            .iter()
            .map(|c| tree.mu(c))
            .fold(f64::INFINITY, f64::min);
        child_min = child_min.min(hs.m(&q) / least);
        child_max = child_max.max(hs.m(&q) / least);
        if let Some(p) = tree.parent(&q) {
            if hs.is_nonzero(&p) {
                let r = hs.m(&q) / hs.m(&p);
                ratio_max = ratio_max.max(r);
                ratio_min = ratio_min.min(r);
            }
        }
    }
    let slack = 1.0 + 1e-12;
    let is_standard = xi00 <= bound * slack;
    let is_balanced = is_standard
        && (ratio_min == f64::INFINITY
            || (ratio_min * slack >= 1.0 / bound && ratio_max <= bound * slack));
    Ok(BalancedReport {
        xi00,
        xi10,
        xi01,
        ratio_max,
        ratio_min,
        child_ratio_min: child_min,
        child_ratio_max: child_max,
        bound,
        is_standard,
        is_balanced,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::MeasurePreset;
    use proptest::prelude::*;

    fn tree(n: usize, l: u32, p: MeasurePreset) -> Arc<MeasuredTree> {
        Arc::new(MeasuredTree::build(n, l, &p).unwrap())
    }

    #[test]
    fn lebesgue_1d_values() {
        let t = tree(1, 5, MeasurePreset::Lebesgue);
        let hs = build_haar_1d(t.clone()).unwrap();
        for q in t.cubes().filter(|q| !t.is_leaf(q)) {
            let size = 0.5f64.powi(q.level as i32);
            assert!((m_1d(&t, &q) - size / 4.0).abs() < 1e-15);
            // ‖h‖₁ = √|I|, so m = |I|
            assert!((hs.m(&q) - size).abs() < 1e-14);
            let a = hs.alphas(&q);
            assert!(
                (a[1] - size.powf(-0.5)).abs() < 1e-12 && (a[0] + size.powf(-0.5)).abs() < 1e-12
            );
        }
        assert!((xi(&hs, 0, 0).unwrap() - 1.0).abs() < 1e-12);
        let rep = check_balanced(&hs, 2.0).unwrap();
        assert!((rep.ratio_max - 0.5).abs() < 1e-14 && (rep.ratio_min - 0.5).abs() < 1e-14);
        assert!(rep.is_balanced);
    }

    #[test]
    fn one_three_split() {
        let t = Arc::new(MeasuredTree::from_morton(1, 1, vec![1.0, 3.0]).unwrap());
        let hs = build_haar_1d(t.clone()).unwrap();
        assert!((m_1d(&t, &t.root()) - 0.75).abs() < 1e-15);
        let a = hs.alphas(&t.root());
        assert!((a[0] + 3f64.sqrt() / 2.0).abs() < 1e-14);
        assert!((a[1] - 1.0 / (2.0 * 3f64.sqrt())).abs() < 1e-14);
        let norm2 = a[0] * a[0] * 1.0 + a[1] * a[1] * 3.0;
        assert!((norm2 - 1.0).abs() < 1e-14);
        assert!((hs.m(&t.root()) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn two_dimensional_lebesgue() {
        let t = tree(2, 3, MeasurePreset::Lebesgue);
        let hs = build_haar_nd(t.clone(), &SplitSpec::default()).unwrap();
        for q in t.cubes().filter(|q| !t.is_leaf(q)) {
            let v = 1.0 / t.mu(&q).sqrt();
            for (o, a) in hs.alphas(&q).iter().enumerate() {
                let sign = if o & 1 == 1 { 1.0 } else { -1.0 };
                assert!((a - sign * v).abs() < 1e-12);
            }
        }
        assert!(hs.gram_deviation() < 1e-12);
    }

    #[test]
    fn empty_group_rejected() {
        let t = tree(2, 1, MeasurePreset::Lebesgue);
        assert!(build_haar_nd(t.clone(), &SplitSpec::Explicit(vec![0b1111])).is_err());
        assert!(build_haar_nd(t.clone(), &SplitSpec::Explicit(vec![0])).is_err());
        assert!(build_haar_nd(t, &SplitSpec::Explicit(vec![0b0110])).is_ok());
    }

    #[test]
    fn lonely_heavy_child_gives_small_m() {
        let eps = 1e-6;
        let t = Arc::new(MeasuredTree::from_morton(2, 1, vec![eps, eps, 1.0, eps]).unwrap());
        let hs = build_haar_nd(t.clone(), &SplitSpec::Explicit(vec![0b0100])).unwrap();
        let q = t.root();
        assert!(hs.m(&q) < 1e-4);
        let prod = hs.linf(&q) * hs.m(&q).sqrt();
        assert!(prod >= 1.0 && prod < 2.0 + 1e-9);
    }

    #[test]
    fn degenerate_cube_gets_zero_function() {
        let t = Arc::new(MeasuredTree::from_morton(1, 2, vec![1e-40, 1.0, 1.0, 1.0]).unwrap());
        let hs = build_haar_1d(t.clone()).unwrap();
        let q = CubeId::new(1, 0);
        assert!(!hs.is_nonzero(&q));
        assert!(hs.alphas(&q).iter().all(|&a| a == 0.0));
        assert!(hs.is_nonzero(&t.root()));
        assert!(hs.gram_deviation() < 1e-12);
    }

    #[test]
    fn xi_range_error() {
        let t = tree(1, 2, MeasurePreset::Lebesgue);
        let hs = build_haar_1d(t).unwrap();
        assert!(xi(&hs, 1, 1).is_err());
        assert!(xi(&hs, 1, 0).is_ok());
    }

    #[test]
    fn exponential_imbalance_is_not_balanced() {
        let t = tree(1, 4, MeasurePreset::ExponentialImbalanced { ratio: 100.0 });
        let hs = build_haar_1d(t).unwrap();
        assert!(!check_balanced(&hs, 10.0).unwrap().is_balanced);
    }

    #[test]
    fn random_balanced_meets_its_bound() {
        for seed in 0..20 {
            for bound in [2.0, 3.0, 4.0, 8.0] {
                let t = tree(1, 7, MeasurePreset::RandomBalanced { bound, seed });
                let hs = build_haar_1d(t).unwrap();
                let rep = check_balanced(&hs, bound.max(2.0)).unwrap();
                assert!(rep.ratio_min >= 1.0 / bound * (1.0 - 1e-12), "{rep:?}");
                assert!(rep.ratio_max <= bound * (1.0 + 1e-12), "{rep:?}");
            }
        }
    }

    fn arb_system() -> impl Strategy<Value = HaarSystem> {
        (1usize..=2, 1u32..=4, any::<u64>()).prop_flat_map(|(n, l, seed)| {
            let leaves = 1usize << (n as u32 * l);
            prop::collection::vec(-6.0f64..2.0, leaves).prop_map(move |logs| {
                let masses: Vec<f64> = logs.iter().map(|x| 10f64.powf(*x)).collect();
                let t = Arc::new(MeasuredTree::from_morton(n, l, masses).unwrap());
                let axis = (seed % n as u64) as usize;
                build_haar_nd(t, &SplitSpec::HalfSpace { axis }).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn haar_invariants(hs in arb_system()) {
            let t = hs.tree();
            prop_assert!(hs.gram_deviation() < 1e-9);
            let xi00 = xi(&hs, 0, 0).unwrap();
            for q in t.cubes().filter(|q| hs.is_nonzero(q)) {
                let a = hs.alphas(&q);
                let ch = t.children(&q);
                let mean: f64 = a.iter().zip(&ch).map(|(x, c)| x * t.mu(c)).sum();
                let l1: f64 = a.iter().zip(&ch).map(|(x, c)| x.abs() * t.mu(c)).sum();
                prop_assert!(mean.abs() < 1e-12 * l1.max(1.0) * 10.0);
                prop_assert!(hs.m(&q) <= t.mu(&q));
                let prod = hs.linf(&q) * hs.m(&q).sqrt();
                prop_assert!(prod >= 1.0 - 1e-12 && prod <= xi00 * (1.0 + 1e-12));
            }
        }

        #[test]
        fn chain_bounds(hs in arb_system()) {
            let t = hs.tree();
            prop_assume!(t.depth() >= 2);
            let x10 = xi(&hs, 1, 0).unwrap();
            let x01 = xi(&hs, 0, 1).unwrap();
            for q in t.cubes().filter(|q| hs.is_nonzero(q)) {
                if let Some(p) = t.parent(&q) {
                    if hs.is_nonzero(&p) {
                        let r = (hs.m(&p) / hs.m(&q)).sqrt();
                        prop_assert!(1.0 / x01 <= r * (1.0 + 1e-12));
                        prop_assert!(r <= x10 * (1.0 + 1e-12));
                    }
                }
            }
        }
    }
}
