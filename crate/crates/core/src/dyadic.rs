//! Finite dyadic lattices over a root cube in ℝⁿ.
//!
//! Cubes are addressed by level and a Morton (bit-interleaved) code of their
//! index vector. With that ordering the leaves below any cube form one
//! contiguous range, which is what every reduction in this crate iterates
//! over. External files use lexicographic leaf order; conversion happens at
//! the boundary.

use crate::error::{Error, Result};
use crate::seed;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::Range;

/// A dyadic cube: `level` generations below the root, `code` is the Morton
/// code of its index vector (bit `b*n + j` is bit `b` of coordinate `j`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CubeId {
    pub level: u32,
    pub code: u64,
}

impl CubeId {
    pub const ROOT: CubeId = CubeId { level: 0, code: 0 };

    pub fn new(level: u32, code: u64) -> Self {
        CubeId { level, code }
    }

    /// Builds a cube from its index vector.
    pub fn from_index(level: u32, index: &[u64]) -> Result<Self> {
        let n = index.len();
        let mut code = 0u64;
        for (j, &c) in index.iter().enumerate() {
            if level < 64 && c >> level != 0 {
                return Err(Error::Range(format!(
                    "index {c} out of range at level {level}"
                )));
            }
            for b in 0..level as usize {
                code |= ((c >> b) & 1) << (b * n + j);
            }
        }
        Ok(CubeId { level, code })
    }

    /// Index vector of the cube in an `n`-dimensional lattice.
    pub fn index(&self, n: usize) -> Vec<u64> {
        let mut out = vec![0u64; n];
        for (j, c) in out.iter_mut().enumerate() {
            for b in 0..self.level as usize {
                *c |= ((self.code >> (b * n + j)) & 1) << b;
            }
        }
        out
    }

    pub fn parent(&self, n: usize) -> Option<CubeId> {
        (self.level > 0).then(|| CubeId {
            level: self.level - 1,
            code: self.code >> n,
        })
    }

    /// Child with the given offset; bit `j` of `offset` is the offset along coordinate `j`.
    pub fn child(&self, n: usize, offset: u64) -> CubeId {
        CubeId {
            level: self.level + 1,
            code: (self.code << n) | offset,
        }
    }

    /// Offset of this cube inside its parent.
    pub fn offset(&self, n: usize) -> u64 {
        self.code & ((1u64 << n) - 1)
    }

    /// True when `other` is this cube or one of its descendants.
    pub fn contains(&self, other: &CubeId, n: usize) -> bool {
        other.level >= self.level
            && other.code >> (n as u32 * (other.level - self.level)) == self.code
    }
}

impl fmt::Display for CubeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}#{}", self.level, self.code)
    }
}

/// How leaf masses are generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MeasurePreset {
    Lebesgue,
    /// In 1D, consecutive ratios m(I)/m(Î) are drawn log-uniformly inside
    /// `[1/bound, bound]`. In higher dimension child weights are drawn
    /// log-uniformly with spread `bound`.
    RandomBalanced {
        bound: f64,
        seed: u64,
    },
    /// Multiplicative cascade: child 0 of every cube takes the fraction
    /// `ratio`, the remaining children share the rest equally.
    CantorLike {
        ratio: f64,
    },
    /// Leaf number `i` in lexicographic order gets mass proportional to `ratio^i`.
    ExponentialImbalanced {
        ratio: f64,
    },
    /// Leaf masses in lexicographic order.
    Explicit {
        leaf_masses: Vec<f64>,
    },
}

impl MeasurePreset {
    /// Parses `lebesgue`, `random-balanced:bound=4,seed=1`, `cantor-like:ratio=0.1`,
    /// `exponential-imbalanced:ratio=4`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (kind, args) = spec.split_once(':').unwrap_or((spec, ""));
        let mut bound = 4.0;
        let mut ratio = None;
        let mut seed = 0u64;
        for kv in args.split(',').filter(|s| !s.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("expected key=value, got '{kv}'")))?;
            let num: f64 = v
                .parse()
                .map_err(|_| Error::Invalid(format!("bad number '{v}'")))?;
            match k {
                "bound" => bound = num,
                "ratio" => ratio = Some(num),
                "seed" => seed = num as u64,
                _ => return Err(Error::Invalid(format!("unknown preset parameter '{k}'"))),
            }
        }
        match kind {
            "lebesgue" => Ok(MeasurePreset::Lebesgue),
            "random-balanced" => Ok(MeasurePreset::RandomBalanced { bound, seed }),
            "cantor-like" => Ok(MeasurePreset::CantorLike {
                ratio: ratio.unwrap_or(0.1),
            }),
            "exponential-imbalanced" => Ok(MeasurePreset::ExponentialImbalanced {
                ratio: ratio.unwrap_or(4.0),
            }),
            _ => Err(Error::Invalid(format!("unknown measure preset '{kind}'"))),
        }
    }
}

/// On-disk measure: `{n, L, leaf_masses}` with lexicographic leaf order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasureFile {
    pub n: usize,
    #[serde(rename = "L")]
    pub depth: u32,
    pub leaf_masses: Vec<f64>,
}

/// A dyadic tree of fixed depth with strictly positive leaf masses and
/// aggregated cube measures.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasuredTree {
    n: usize,
    depth: u32,
    offsets: Vec<usize>,
    mu: Vec<f64>,
}

impl MeasuredTree {
    /// Tree from leaf masses given in Morton order.
    pub fn from_morton(n: usize, depth: u32, leaf_masses: Vec<f64>) -> Result<Self> {
        if n == 0 || depth == 0 {
            return Err(Error::Invalid(
                "dimension and depth must be positive".into(),
            ));
        }
        if n as u32 * depth > 40 {
            return Err(Error::Range(format!(
                "lattice with n={n}, L={depth} is too large"
            )));
        }
        let leaves = 1usize << (n as u32 * depth);
        if leaf_masses.len() != leaves {
            return Err(Error::Dimension {
                expected: leaves,
                got: leaf_masses.len(),
            });
        }
        for (i, &m) in leaf_masses.iter().enumerate() {
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::NonpositiveMass {
                    cube: CubeId::new(depth, i as u64),
                    mass: m,
                });
            }
        }
        let mut offsets = Vec::with_capacity(depth as usize + 2);
        let mut acc = 0usize;
        for l in 0..=depth {
            offsets.push(acc);
            acc += 1usize << (n as u32 * l);
        }
        offsets.push(acc);
        let mut mu = vec![0.0; acc];
        mu[offsets[depth as usize]..].copy_from_slice(&leaf_masses);
        let k = 1usize << n;
        for l in (0..depth as usize).rev() {
            for c in 0..(1usize << (n * l)) {
                let first = offsets[l + 1] + c * k;
                let mut s = 0.0;
                for r in 0..k {
                    s += mu[first + r];
                }
                mu[offsets[l] + c] = s;
            }
        }
        Ok(MeasuredTree {
            n,
            depth,
            offsets,
            mu,
        })
    }

    /// The same measure seen at a coarser depth: leaves are the level-`depth` cubes.
    pub fn coarsen(&self, depth: u32) -> Result<Self> {
        if depth == 0 || depth > self.depth {
            return Err(Error::Range(format!(
                "coarse depth {depth} outside 1..={}",
                self.depth
            )));
        }
        let l = depth as usize;
        let masses = self.mu[self.offsets[l]..self.offsets[l + 1]].to_vec();
        Self::from_morton(self.n, depth, masses)
    }

    /// Tree from leaf masses given in lexicographic order of the level-L index.
    pub fn from_lexicographic(n: usize, depth: u32, leaf_masses: &[f64]) -> Result<Self> {
        let leaves = 1usize.checked_shl(n as u32 * depth).unwrap_or(0);
        if leaf_masses.len() != leaves {
            return Err(Error::Dimension {
                expected: leaves,
                got: leaf_masses.len(),
            });
        }
        let mut morton = vec![0.0; leaves];
        for (lex, &m) in leaf_masses.iter().enumerate() {
            let code = lex_to_morton(n, depth, lex as u64);
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::NonpositiveMass {
                    cube: CubeId::new(depth, code),
                    mass: m,
                });
            }
            morton[code as usize] = m;
        }
        Self::from_morton(n, depth, morton)
    }

    pub fn build(n: usize, depth: u32, preset: &MeasurePreset) -> Result<Self> {
        if n == 0 || depth == 0 {
            return Err(Error::Invalid(
                "dimension and depth must be positive".into(),
            ));
        }
        let leaves = 1usize << (n as u32 * depth);
        match preset {
            MeasurePreset::Lebesgue => {
                Self::from_morton(n, depth, vec![1.0 / leaves as f64; leaves])
            }
            MeasurePreset::Explicit { leaf_masses } => {
                Self::from_lexicographic(n, depth, leaf_masses)
            }
            MeasurePreset::ExponentialImbalanced { ratio } => {
                if !(*ratio > 0.0) {
                    return Err(Error::Invalid("ratio must be positive".into()));
                }
                let top = (leaves - 1) as f64;
                let lex: Vec<f64> = (0..leaves).map(|i| ratio.powf(i as f64 - top)).collect();
                Self::from_lexicographic(n, depth, &lex)
            }
            MeasurePreset::CantorLike { ratio } => {
                if !(*ratio > 0.0 && *ratio < 1.0) {
                    return Err(Error::Invalid("cantor ratio must lie in (0,1)".into()));
                }
                let k = 1usize << n;
                let rest = (1.0 - ratio) / (k - 1) as f64;
                Self::cascade(n, depth, |_, _| {
                    (0..k).map(|c| if c == 0 { *ratio } else { rest }).collect()
                })
            }
            MeasurePreset::RandomBalanced { bound, seed } => {
                if n == 1 {
                    Self::random_balanced_1d(depth, *bound, *seed)
                } else {
                    if !(*bound >= 1.0) {
                        return Err(Error::Invalid("bound must be at least 1".into()));
                    }
                    let mut rng = seed::rng(*seed);
                    let lb = bound.ln();
                    let k = 1usize << n;
                    Self::cascade(n, depth, |_, _| {
                        let w: Vec<f64> = (0..k).map(|_| (rng.gen_range(-lb..=lb)).exp()).collect();
                        let s: f64 = w.iter().sum();
                        w.into_iter().map(|x| x / s).collect()
                    })
                }
            }
        }
    }

    /// Top-down multiplicative construction; `split(level, code)` returns
    /// the fractions handed to the children of a cube.
    fn cascade(n: usize, depth: u32, mut split: impl FnMut(u32, u64) -> Vec<f64>) -> Result<Self> {
        let mut masses = vec![1.0];
        for l in 0..depth {
            let mut next = Vec::with_capacity(masses.len() << n);
            for (c, &m) in masses.iter().enumerate() {
                for frac in split(l, c as u64) {
                    next.push(m * frac);
                }
            }
            masses = next;
        }
        Self::from_morton(n, depth, masses)
    }

    /// Chooses each split so that m(I)/m(Î) (1D convention μ₊μ₋/μ) is
    /// log-uniform in the feasible part of `[1/bound, bound]`. Splits are
    /// kept inside `[1 − bound/4, bound/4]` so the children always have a
    /// feasible range themselves.
    fn random_balanced_1d(depth: u32, bound: f64, seed: u64) -> Result<Self> {
        if !(bound >= 2.0) {
            return Err(Error::Invalid(
                "1D balanced ratios below 2 are infeasible even for Lebesgue measure".into(),
            ));
        }
        let mut rng = seed::rng(seed);
        let q_min = if bound >= 4.0 {
            0.0
        } else {
            (1.0 - bound / 4.0) * (bound / 4.0)
        };
        // q = a(1−a) for the split fraction a; m = q μ.
        let split_from_q = |q: f64, rng: &mut seed::Rng| {
            let a = 0.5 * (1.0 - (1.0 - 4.0 * q).max(0.0).sqrt());
            if rng.gen_bool(0.5) {
                a
            } else {
                1.0 - a
            }
        };
        let q_root = rng.gen_range(q_min.max(0.16)..=0.25);
        let a_root = split_from_q(q_root, &mut rng);
        // (mass, m of this cube) for the current level
        let mut level: Vec<(f64, f64)> = vec![(1.0, q_root)];
        let mut fracs = vec![a_root];
        for l in 0..depth {
            let mut next = Vec::with_capacity(level.len() * 2);
            let mut next_fracs = Vec::with_capacity(level.len() * 2);
            for (&(mass, m_parent), &a) in level.iter().zip(&fracs) {
                for child_mass in [mass * (1.0 - a), mass * a] {
                    if l + 1 == depth {
                        next.push((child_mass, 0.0));
                        continue;
                    }
                    let lo = (q_min * child_mass / m_parent).max(1.0 / bound);
                    let hi = (0.25 * child_mass / m_parent).min(bound);
                    if !(lo <= hi) {
                        return Err(Error::Numerical(
                            "balanced generator ran out of room".into(),
                        ));
                    }
                    let r = if hi > lo {
                        rng.gen_range(lo.ln()..=hi.ln()).exp()
                    } else {
                        lo
                    };
                    let q = (r * m_parent / child_mass).min(0.25);
                    next_fracs.push(split_from_q(q, &mut rng));
                    next.push((child_mass, q * child_mass));
                }
            }
            level = next;
            fracs = next_fracs;
        }
        Self::from_morton(1, depth, level.into_iter().map(|(m, _)| m).collect())
    }

    pub fn to_file(&self) -> MeasureFile {
        let leaves = self.num_leaves();
        let mut lex = vec![0.0; leaves];
        for (code, &m) in self.leaf_masses().iter().enumerate() {
            lex[morton_to_lex(self.n, self.depth, code as u64) as usize] = m;
        }
        MeasureFile {
            n: self.n,
            depth: self.depth,
            leaf_masses: lex,
        }
    }

    pub fn from_file(file: &MeasureFile) -> Result<Self> {
        Self::from_lexicographic(file.n, file.depth, &file.leaf_masses)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn num_children(&self) -> usize {
        1 << self.n
    }

    pub fn num_leaves(&self) -> usize {
        1 << (self.n as u32 * self.depth)
    }

    pub fn num_cubes(&self) -> usize {
        self.mu.len()
    }

    pub fn root(&self) -> CubeId {
        CubeId::ROOT
    }

    pub fn validate(&self, q: &CubeId) -> Result<()> {
        if q.level > self.depth || (q.level > 0 && q.code >> (self.n as u32 * q.level) != 0) {
            return Err(Error::Structure(format!(
                "cube {q} does not belong to this tree"
            )));
        }
        Ok(())
    }

    /// Dense position of a cube; cubes are laid out level by level in code order.
    #[inline]
    pub fn index(&self, q: &CubeId) -> usize {
        self.offsets[q.level as usize] + q.code as usize
    }

    pub fn cube_at(&self, idx: usize) -> CubeId {
        let level = self.offsets.partition_point(|&o| o <= idx) - 1;
        CubeId::new(level as u32, (idx - self.offsets[level]) as u64)
    }

    #[inline]
    pub fn mu(&self, q: &CubeId) -> f64 {
        self.mu[self.index(q)]
    }

    pub fn mu_all(&self) -> &[f64] {
        &self.mu
    }

    /// Leaf masses in Morton order.
    pub fn leaf_masses(&self) -> &[f64] {
        &self.mu[self.offsets[self.depth as usize]..self.offsets[self.depth as usize + 1]]
    }

    pub fn is_leaf(&self, q: &CubeId) -> bool {
        q.level == self.depth
    }

    /// Leaves of `q`, as a range of Morton leaf numbers.
    #[inline]
    pub fn leaf_range(&self, q: &CubeId) -> Range<usize> {
        let shift = self.n as u32 * (self.depth - q.level);
        let start = (q.code as usize) << shift;
        start..start + (1usize << shift)
    }

    pub fn leaf_cube(&self, leaf: usize) -> CubeId {
        CubeId::new(self.depth, leaf as u64)
    }

    /// The ancestor of `leaf` at `level`.
    pub fn leaf_ancestor(&self, leaf: usize, level: u32) -> CubeId {
        CubeId::new(
            level,
            (leaf as u64) >> (self.n as u32 * (self.depth - level)),
        )
    }

    pub fn children(&self, q: &CubeId) -> Vec<CubeId> {
        if self.is_leaf(q) {
            return Vec::new();
        }
        (0..self.num_children() as u64)
            .map(|o| q.child(self.n, o))
            .collect()
    }

    pub fn parent(&self, q: &CubeId) -> Option<CubeId> {
        q.parent(self.n)
    }

    /// Q^{(k)}; `ancestor(q, 0) == q`.
    pub fn ancestor(&self, q: &CubeId, k: u32) -> Result<CubeId> {
        if k > q.level {
            return Err(Error::Range(format!(
                "cube {q} has no ancestor {k} levels up"
            )));
        }
        Ok(CubeId::new(q.level - k, q.code >> (self.n as u32 * k)))
    }

    /// 𝒟_s(Q): the 2^{sn} descendants exactly `s` generations below `q`.
    pub fn descendants_at(&self, q: &CubeId, s: u32) -> Result<Vec<CubeId>> {
        if q.level + s > self.depth {
            return Err(Error::Range(format!(
                "level {} exceeds depth {}",
                q.level + s,
                self.depth
            )));
        }
        let shift = self.n as u32 * s;
        let base = q.code << shift;
        Ok((0..1u64 << shift)
            .map(|c| CubeId::new(q.level + s, base | c))
            .collect())
    }

    pub fn level_cubes(&self, level: u32) -> impl Iterator<Item = CubeId> {
        (0..1u64 << (self.n as u32 * level)).map(move |c| CubeId::new(level, c))
    }

    /// All cubes, level by level.
    pub fn cubes(&self) -> impl Iterator<Item = CubeId> + '_ {
        (0..=self.depth).flat_map(move |l| self.level_cubes(l))
    }

    pub fn contains(&self, q: &CubeId, r: &CubeId) -> bool {
        q.contains(r, self.n)
    }

    /// Minimal common ancestor of two cubes.
    pub fn common_ancestor(&self, a: &CubeId, b: &CubeId) -> CubeId {
        let n = self.n as u32;
        let level = a.level.min(b.level);
        let mut ca = a.code >> (n * (a.level - level));
        let mut cb = b.code >> (n * (b.level - level));
        let mut l = level;
        while ca != cb {
            ca >>= n;
            cb >>= n;
            l -= 1;
        }
        CubeId::new(l, ca)
    }

    /// s + t where the minimal common ancestor P has J ∈ 𝒟_s(P), K ∈ 𝒟_t(P).
    pub fn dyadic_distance(&self, j: &CubeId, k: &CubeId) -> Result<u32> {
        self.validate(j)?;
        self.validate(k)?;
        let p = self.common_ancestor(j, k);
        Ok((j.level - p.level) + (k.level - p.level))
    }
}

fn lex_to_morton(n: usize, depth: u32, lex: u64) -> u64 {
    // lexicographic: coordinate 0 is the most significant digit in base 2^depth
    let mut index = vec![0u64; n];
    let mask = (1u64 << depth) - 1;
    for j in (0..n).rev() {
        index[j] = (lex >> (depth as usize * (n - 1 - j))) & mask;
    }
    CubeId::from_index(depth, &index)
        .expect("index in range")
        .code
}

fn morton_to_lex(n: usize, depth: u32, code: u64) -> u64 {
    let index = CubeId::new(depth, code).index(n);
    index.iter().fold(0u64, |acc, &c| (acc << depth) | c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lebesgue_presets() {
        let t = MeasuredTree::build(1, 1, &MeasurePreset::Lebesgue).unwrap();
        assert_eq!(t.leaf_masses(), &[0.5, 0.5]);
        assert_eq!(t.mu(&t.root()), 1.0);
        let t = MeasuredTree::build(2, 1, &MeasurePreset::Lebesgue).unwrap();
        assert_eq!(t.leaf_masses(), &[0.25; 4]);
    }

    #[test]
    fn exponential_preset_is_geometric() {
        let t = MeasuredTree::build(1, 2, &MeasurePreset::ExponentialImbalanced { ratio: 4.0 })
            .unwrap();
        let unit = t.leaf_masses()[0];
        let scaled: Vec<f64> = t.leaf_masses().iter().map(|m| m / unit).collect();
        assert_eq!(scaled, vec![1.0, 4.0, 16.0, 64.0]);
        assert!((t.mu(&t.root()) - 85.0 * unit).abs() < 1e-15);
    }

    #[test]
    fn explicit_rejects_nonpositive_mass() {
        let err = MeasuredTree::build(
            1,
            2,
            &MeasurePreset::Explicit {
                leaf_masses: vec![1.0, 2.0, 0.0, 1.0],
            },
        )
        .unwrap_err();
        assert_eq!(
            err,
            Error::NonpositiveMass {
                cube: CubeId::new(2, 2),
                mass: 0.0
            }
        );
    }

    #[test]
    fn lexicographic_roundtrip_2d() {
        let lex: Vec<f64> = (1..=16).map(|i| i as f64).collect();
        let t = MeasuredTree::from_lexicographic(2, 2, &lex).unwrap();
        assert_eq!(t.to_file().leaf_masses, lex);
        // leaf with index (row 1, col 2) is lexicographic number 1*4+2
        let q = CubeId::from_index(2, &[1, 2]).unwrap();
        assert_eq!(t.mu(&q), 7.0);
        // cube (0,1) at level 1 holds index rows {0,1}, cols {2,3}
        let p = CubeId::from_index(1, &[0, 1]).unwrap();
        assert_eq!(t.mu(&p), 3.0 + 4.0 + 7.0 + 8.0);
    }

    #[test]
    fn distance_examples() {
        let t = MeasuredTree::build(1, 4, &MeasurePreset::Lebesgue).unwrap();
        let q = CubeId::new(2, 1);
        assert_eq!(t.dyadic_distance(&q, &q).unwrap(), 0);
        assert_eq!(t.dyadic_distance(&q, &t.parent(&q).unwrap()).unwrap(), 1);
        assert_eq!(t.dyadic_distance(&q, &CubeId::new(2, 0)).unwrap(), 2);
        assert!(t.dyadic_distance(&q, &CubeId::new(5, 0)).is_err());
        assert!(t.dyadic_distance(&q, &CubeId::new(2, 9)).is_err());
    }

    #[test]
    fn navigation_examples() {
        let t = MeasuredTree::build(1, 3, &MeasurePreset::Lebesgue).unwrap();
        assert_eq!(t.descendants_at(&t.root(), 0).unwrap(), vec![t.root()]);
        assert_eq!(t.descendants_at(&t.root(), 2).unwrap().len(), 4);
        assert_eq!(t.ancestor(&CubeId::new(3, 5), 3).unwrap(), t.root());
        assert!(t.ancestor(&CubeId::new(1, 1), 2).is_err());
        assert!(t.descendants_at(&CubeId::new(2, 0), 2).is_err());
        let t2 = MeasuredTree::build(2, 2, &MeasurePreset::Lebesgue).unwrap();
        assert_eq!(t2.descendants_at(&t2.root(), 2).unwrap().len(), 16);
    }

    #[test]
    fn random_balanced_is_deterministic() {
        let p = MeasurePreset::RandomBalanced {
            bound: 4.0,
            seed: 11,
        };
        let a = MeasuredTree::build(1, 6, &p).unwrap();
        let b = MeasuredTree::build(1, 6, &p).unwrap();
        assert_eq!(a, b);
        assert!(MeasuredTree::build(
            1,
            3,
            &MeasurePreset::RandomBalanced {
                bound: 1.5,
                seed: 0
            }
        )
        .is_err());
    }

    #[test]
    fn preset_parsing() {
        assert_eq!(
            MeasurePreset::parse("lebesgue").unwrap(),
            MeasurePreset::Lebesgue
        );
        assert_eq!(
            MeasurePreset::parse("random-balanced:bound=3,seed=9").unwrap(),
            MeasurePreset::RandomBalanced {
                bound: 3.0,
                seed: 9
            }
        );
        assert!(MeasurePreset::parse("gaussian").is_err());
    }

    fn arb_tree() -> impl Strategy<Value = MeasuredTree> {
        (1usize..=2, 1u32..=4).prop_flat_map(|(n, l)| {
            let leaves = 1usize << (n as u32 * l);
            prop::collection::vec(1e-3f64..10.0, leaves)
                .prop_map(move |m| MeasuredTree::from_morton(n, l, m).unwrap())
        })
    }

    proptest! {
        #[test]
        fn additivity_is_exact(t in arb_tree()) {
            for q in t.cubes().filter(|q| !t.is_leaf(q)) {
                let s = t.children(&q).iter().fold(0.0, |acc, c| acc + t.mu(c));
                prop_assert_eq!(s, t.mu(&q));
            }
            let total: f64 = t.leaf_masses().iter().sum();
            prop_assert!((total - t.mu(&t.root())).abs() <= 1e-12 * total);
        }

        #[test]
        fn distance_symmetric_and_chain_triangle(t in arb_tree(), a in 0usize..1000, b in 0usize..1000) {
            let j = t.cube_at(a % t.num_cubes());
            let k = t.cube_at(b % t.num_cubes());
            let d = t.dyadic_distance(&j, &k).unwrap();
            prop_assert_eq!(d, t.dyadic_distance(&k, &j).unwrap());
            prop_assert_eq!(d == 0, j == k);
            let mut p = t.common_ancestor(&j, &k);
            loop {
                let via = t.dyadic_distance(&j, &p).unwrap() + t.dyadic_distance(&p, &k).unwrap();
                prop_assert!(d <= via);
                match t.parent(&p) { Some(q) => p = q, None => break }
            }
        }

        #[test]
        fn leaf_ranges_nest(t in arb_tree(), a in 0usize..1000) {
            let q = t.cube_at(a % t.num_cubes());
            let r = t.leaf_range(&q);
            let s: f64 = t.leaf_masses()[r.clone()].iter().sum();
            prop_assert!((s - t.mu(&q)).abs() <= 1e-12 * t.mu(&q));
            for c in t.children(&q) {
                let rc = t.leaf_range(&c);
                prop_assert!(rc.start >= r.start && rc.end <= r.end);
            }
            prop_assert_eq!(t.cube_at(t.index(&q)), q);
            let idx = q.index(t.n());
            prop_assert_eq!(CubeId::from_index(q.level, &idx).unwrap(), q);
        }
    }
}
